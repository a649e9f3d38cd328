"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to watch the lines live; the
statistical criteria take a few minutes each. All seeds are pinned, so every
run is deterministic.
"""

import json
import math
import os
import sys

import numpy as np
import pytest
from scipy import stats as scistats

from bestarm import (
    BatchMode,
    BatchPolicy,
    BudgetPolicy,
    ConfidencePolicy,
    EvaluationRequest,
    EventKind,
    Gaussian,
    ModelStats,
    SubprocessEvaluator,
    SyntheticEvaluator,
    bts,
    complexity_h,
    estimate_pi,
    make_model_ids,
    nonadaptive_fixed_budget,
    nonadaptive_fixed_confidence,
    posterior_from_stats,
    sequential_halving,
    stats_update,
    ttts,
)
from bestarm.cli import CampaignConfig, main, run_campaign
from bestarm.evaluators import ArmSpec

ECHO_CHILD = os.path.join(os.path.dirname(__file__), "echo_child.py")

FIG_MEANS = [0.65, 0.69, 0.69, 0.70, 0.71]

# An 8-candidate sentiment-model-style selection problem: three close
# contenders, one mid-pack baseline, four clearly worse reduced variants.
# Calibrated so the non-adaptive fixed-confidence baseline at delta=0.1 needs
# roughly twice the evaluations top-two Thompson sampling does (pilot: 223 vs 113).
EIGHT_ARM_MEANS = [0.670, 0.664, 0.660, 0.636, 0.624, 0.618, 0.610, 0.600]
EIGHT_ARM_SD = 0.015

# 12-arm fixed-budget problem; sd calibrated by pilot runs so the equal-split
# baseline at budget 204 selects correctly ~85% of the time.
FB_MEANS = [0.71, 0.70, 0.69, 0.69, 0.68, 0.68, 0.67, 0.67, 0.66, 0.66, 0.65, 0.65]
FB_SD = 0.027
FB_BUDGET = 204

# Monte-Carlo rounds per belief update in the heavy statistical criteria.
# The criteria do not pin it; 1e4 keeps the pi standard error below 0.005
# (0.0022 at the tightest 0.95 threshold) at a tenth of the default's cost.
MC_HEAVY = 10_000
MC_MEDIUM = 5_000


def report(name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


def gaussian_problem(means, sd, seed):
    models = make_model_ids([f"m{i}" for i in range(len(means))])
    arms = tuple(
        ArmSpec(model=m, dist=Gaussian(mean=mu, sd=sd)) for m, mu in zip(models, means)
    )
    return models, SyntheticEvaluator(arms, campaign_seed=seed)


def test_criterion_1_posterior_calibration():
    # 10 observations of a known Gaussian; the central 90% credible interval
    # must cover the true mean at a rate in [0.88, 0.96] over 1e4 replications.
    true_mean, true_sd, n_obs, reps = 0.7, 0.05, 10, 10_000
    rng = np.random.default_rng(2718)
    quantile = scistats.t.ppf(0.95, n_obs - 2)
    covered = 0
    for _ in range(reps):
        stats = ModelStats()
        for x in rng.normal(true_mean, true_sd, size=n_obs):
            stats = stats_update(stats, float(x))
        p = posterior_from_stats(stats)
        half = quantile * p.scale
        covered += p.center - half <= true_mean <= p.center + half
    coverage = covered / reps
    report(
        "criterion-1 posterior-calibration",
        0.88 <= coverage <= 0.96,
        f"coverage={coverage:.4f}, required [0.88, 0.96]",
    )


def test_criterion_2_pi_symmetry():
    # Five identical (degenerate) synthetic arms: the variance floor makes
    # all posteriors equal, so each arm must win ~1/5 of the MC rounds.
    models, evaluator = gaussian_problem([0.7] * 5, 1e-12, seed=99)
    stats = {m.index: ModelStats() for m in models}
    seq = 0
    for _ in range(3):
        for m in models:
            req = EvaluationRequest(model=m, split_seed=0, model_seed=0, sequence=seq)
            seq += 1
            stats[m.index] = stats_update(stats[m.index], evaluator.evaluate(req).score)
    belief = estimate_pi([stats[i] for i in range(5)], 100_000, np.random.default_rng(99))
    worst = max(abs(p - 0.2) for p in belief.pi)
    report(
        "criterion-2 pi-symmetry",
        worst <= 0.01,
        f"max |pi - 1/5| = {worst:.5f}, required <= 0.01",
    )


@pytest.mark.parametrize("delta", [0.05, 0.1, 0.2])
def test_criterion_3_ttts_confidence_guarantee(delta):
    reps = 500
    base = int(delta * 1_000_000)
    correct = 0
    for i in range(reps):
        models, evaluator = gaussian_problem(FIG_MEANS, 0.01, seed=base + i)
        result = ttts(
            models, ConfidencePolicy(delta=delta), evaluator, campaign_seed=base + i,
            mc_samples=MC_HEAVY,
        )
        correct += result.chosen.index == 4
    proportion = correct / reps
    bound = (1 - delta) - 3 * math.sqrt(delta * (1 - delta) / reps)
    report(
        f"criterion-3 ttts-confidence delta={delta}",
        proportion >= bound,
        f"correct={proportion:.4f}, required >= {bound:.4f}",
    )


def test_criterion_4_ttts_beats_nonadaptive():
    # Table-2-style comparison on the 8-arm problem, 500 paired replications.
    reps = 500
    ttts_totals, base_totals = [], []
    for i in range(reps):
        models, evaluator = gaussian_problem(EIGHT_ARM_MEANS, EIGHT_ARM_SD, seed=i)
        ttts_totals.append(
            ttts(models, ConfidencePolicy(delta=0.1), evaluator, campaign_seed=i,
                 mc_samples=MC_MEDIUM).total_evals
        )
        models, evaluator = gaussian_problem(EIGHT_ARM_MEANS, EIGHT_ARM_SD, seed=i)
        base_totals.append(
            nonadaptive_fixed_confidence(
                models, ConfidencePolicy(delta=0.1), evaluator, campaign_seed=i,
                mc_samples=MC_MEDIUM,
            ).total_evals
        )
    mean_ttts = np.mean(ttts_totals)
    mean_base = np.mean(base_totals)
    ratio = mean_ttts / mean_base
    report(
        "criterion-4 ttts-efficiency",
        ratio <= 0.7,
        f"ttts mean={mean_ttts:.1f}, baseline mean={mean_base:.1f}, "
        f"ratio={ratio:.3f}, required <= 0.7",
    )


def test_criterion_5_sh_beats_nonadaptive():
    reps = 10_000
    sh_correct = na_correct = 0
    for i in range(reps):
        models, evaluator = gaussian_problem(FB_MEANS, FB_SD, seed=i)
        sh_correct += (
            sequential_halving(models, BudgetPolicy(FB_BUDGET), evaluator, campaign_seed=i)
            .chosen.index == 0
        )
        models, evaluator = gaussian_problem(FB_MEANS, FB_SD, seed=100_000 + i)
        na_correct += (
            nonadaptive_fixed_budget(
                models, BudgetPolicy(FB_BUDGET), evaluator, campaign_seed=100_000 + i
            ).chosen.index == 0
        )
    sh_rate = sh_correct / reps
    na_rate = na_correct / reps
    calibrated = 0.78 <= na_rate <= 0.92
    gap_ok = sh_rate - na_rate >= 0.08
    report(
        "criterion-5 sh-beats-nonadaptive",
        calibrated and gap_ok,
        f"sh={sh_rate:.4f}, nonadaptive={na_rate:.4f} (calibration target ~0.85), "
        f"gap={sh_rate - na_rate:+.4f}, required >= +0.08",
    )


def test_criterion_6_sh_schedule_golden():
    def run(seed):
        models, evaluator = gaussian_problem([0.60, 0.70, 0.65, 0.55], 0.01, seed=seed)
        return sequential_halving(models, BudgetPolicy(16), evaluator, campaign_seed=seed)

    result = run(6)
    rounds = [e for e in result.trace if e.kind is EventKind.ROUND_STARTED]
    schedule = [(len(r.payload["survivors"]), r.payload["evals_per_model"]) for r in rounds]
    deterministic = run(6).trace == result.trace
    ok = (
        schedule == [(4, 2), (2, 4)]
        and result.total_evals == 16
        and sorted(result.eval_counts) == [2, 2, 6, 6]
        and deterministic
    )
    report(
        "criterion-6 sh-schedule-golden",
        ok,
        f"schedule={schedule}, total={result.total_evals}, "
        f"counts={sorted(result.eval_counts)}, deterministic={deterministic}",
    )


def test_criterion_7_bts_batch_degradation():
    reps = 500
    totals = {"ttts": [], "bts4": [], "bts8": []}
    for i in range(reps):
        seed = 40_000 + i
        models, evaluator = gaussian_problem(EIGHT_ARM_MEANS, EIGHT_ARM_SD, seed=seed)
        totals["ttts"].append(
            ttts(models, ConfidencePolicy(delta=0.2), evaluator, campaign_seed=seed,
                 mc_samples=MC_MEDIUM).total_evals
        )
        for label, size in (("bts4", 4), ("bts8", 8)):
            models, evaluator = gaussian_problem(EIGHT_ARM_MEANS, EIGHT_ARM_SD, seed=seed)
            totals[label].append(
                bts(models, ConfidencePolicy(delta=0.2),
                    BatchPolicy(size, BatchMode.SYNCHRONOUS), evaluator,
                    campaign_seed=seed, mc_samples=MC_MEDIUM).total_evals
            )
    m_ttts = np.mean(totals["ttts"])
    m_bts4 = np.mean(totals["bts4"])
    m_bts8 = np.mean(totals["bts8"])
    report(
        "criterion-7 bts-batch-degradation",
        m_ttts <= m_bts4 <= m_bts8,
        f"mean evals: ttts={m_ttts:.1f} <= bts4={m_bts4:.1f} <= bts8={m_bts8:.1f} required",
    )


def test_criterion_8_complexity_diagnostic():
    h = complexity_h(FIG_MEANS)
    # independent hand summation: 1/0.0036 + 2/0.0004 + 1/0.0001
    expected = 1 / 0.0036 + 2 / 0.0004 + 1 / 0.0001
    ok = abs(h - 15277.78) <= 0.01 + abs(expected - 15277.78)
    report(
        "criterion-8 complexity-h",
        abs(h - expected) < 1e-8 and ok,
        f"H={h:.2f}, hand summation={expected:.2f}, required 15277.78 +/- 0.01",
    )


def test_criterion_9_subprocess_protocol_conformance(tmp_path):
    names = ["tdlstm", "ian"]
    models = make_model_ids(names)
    evaluator = SubprocessEvaluator(
        [sys.executable, ECHO_CHILD, "--reorder", "--delay-ms", "1", "--max-in-flight", "8"],
        names,
    )
    total = 1000
    try:
        results = {}
        submitted = collected = 0
        while collected < total:
            while submitted < total and submitted - collected < evaluator.max_in_flight:
                evaluator.submit(
                    EvaluationRequest(
                        model=models[submitted % 2], split_seed=submitted,
                        model_seed=submitted, sequence=submitted,
                    )
                )
                submitted += 1
            score = evaluator.collect()
            results[score.request.sequence] = score.score
            collected += 1
    finally:
        evaluator.close()
    expected = {seq: ((seq * 2654435761) % 2**32) / 2**32 for seq in range(total)}
    mismatches = sum(1 for seq in range(total) if results.get(seq) != expected[seq])

    trace_path = tmp_path / "partial.jsonl"
    cmd = f"{sys.executable} {ECHO_CHILD} --crash-after 4 --const-score 0.5"
    code = main(
        ["fc", "--delta", "0.05", "--exec", cmd, "--models", "a,b",
         "--trace", str(trace_path), "--mc-samples", "1000"]
    )
    lines = [json.loads(l) for l in trace_path.read_text().splitlines()]
    flushed = len(lines) >= 1 and "config" in lines[0]
    report(
        "criterion-9 subprocess-protocol",
        mismatches == 0 and len(results) == total and code == 1 and flushed,
        f"matched={len(results) - mismatches}/{total}, crash exit={code}, "
        f"partial trace lines={len(lines)}",
    )


def test_criterion_10_reproducibility(tmp_path):
    arms = [
        {"name": f"m{i}", "family": "gaussian", "mean": mu, "sd": 0.01}
        for i, mu in enumerate(FIG_MEANS)
    ]
    arms_path = tmp_path / "arms.json"
    arms_path.write_text(json.dumps(arms))
    csv_path = tmp_path / "scores.csv"
    rng = np.random.default_rng(5)
    rows = ["model,score"]
    for name, mu in (("a", 0.6), ("b", 0.7)):
        rows += [f"{name},{rng.normal(mu, 0.02):.6f}" for _ in range(30)]
    csv_path.write_text("\n".join(rows) + "\n")

    campaigns = {
        "synthetic-fc": {
            "mode": {"kind": "fc", "delta": 0.1},
            "evaluator": {"kind": "synthetic", "arms_file": str(arms_path)},
            "campaign_seed": 42,
            "mc_samples": 4000,
        },
        "synthetic-fb": {
            "mode": {"kind": "fb", "budget": 30},
            "evaluator": {"kind": "synthetic", "arms_file": str(arms_path)},
            "campaign_seed": 42,
        },
        "replay-fc-batch-async": {
            "mode": {"kind": "fc-batch", "delta": 0.2, "batch_size": 3, "sync": False},
            "evaluator": {"kind": "replay", "csv_file": str(csv_path), "exhaustion": "resample"},
            "campaign_seed": 7,
            "mc_samples": 4000,
        },
    }
    identical = {}
    for label, data in campaigns.items():
        blobs = []
        for run in range(2):
            path = tmp_path / f"{label}-{run}.jsonl"
            config = CampaignConfig.from_dict({**data, "trace_path": str(path)})
            run_campaign(config)
            blobs.append(path.read_bytes())
        identical[label] = blobs[0] == blobs[1]
    report(
        "criterion-10 reproducibility",
        all(identical.values()),
        f"byte-identical traces: {identical}",
    )
