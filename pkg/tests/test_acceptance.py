"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import math
import warnings

import numpy as np
import pytest
from scipy import stats

from commest import rates
from commest.asr import one_step_error, run_asr
from commest.core import Distribution, ProtocolConfig, SharedRandomness, make_instance, sample
from commest.harness import Sweep, budget_audit, estimate_risk, fit_to_csv, run_protocol, scaling_slope


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


AUDIT_MATRIX = [
    ProtocolConfig(256, 64, 4, 3, protocol="ar"),
    ProtocolConfig(257, 16, 8, 5, protocol="ar"),
    ProtocolConfig(64, 8, 3, 3, protocol="asr"),
    ProtocolConfig(96, 4, 7, 3, protocol="asr"),
    ProtocolConfig(512, 2, 100, 4, protocol="asr"),
    ProtocolConfig(512, 2, 100, 4, protocol="asr_tv"),
    ProtocolConfig(300, 64, 16, 8, protocol="compress"),
    ProtocolConfig(64, 13, 6656, 13, protocol="threshold"),
    ProtocolConfig(64, 1024, 256, 8, p=3.0, const_scale=1 / 2000, protocol="threshold"),
    ProtocolConfig(1024, 1, 8, 3, protocol="hash"),
    ProtocolConfig(33, 1, 5, 1, protocol="hash"),
    ProtocolConfig(64, 4, 8, 7, protocol="plugin"),
    ProtocolConfig(200, 32, 2, 1, protocol="onebit"),
    ProtocolConfig(10, 3, 4, 2, protocol="uniform"),
]


@pytest.mark.filterwarnings("ignore:ASR case")
def test_budget_audit_matrix(report):
    runs = violations = 0
    for cfg in AUDIT_MATRIX:
        for family in ("uniform", "zipf(1)", "point", "dirichlet"):
            truth = make_instance(family, cfg.k, seed=1)
            for t in range(5):
                root = SharedRandomness(cfg.m * 7 + t).derive(family)
                samples = sample(truth, cfg.m, cfg.n, root.stream("samples"))
                _, transcript = run_protocol(cfg, samples, root.derive("protocol"))
                result = budget_audit(transcript, cfg)
                runs += 1
                violations += len(result.violations)
    report(1, violations == 0, f"{runs} runs over {len(AUDIT_MATRIX)} configs, {violations} budget violations")


def test_hash_unbiased(report):
    truth = make_instance("zipf(1)", 8)
    rep = estimate_risk("hash", truth, ProtocolConfig(16, 1, 8, 3), trials=100_000, seed=0, track_estimates=True)
    mean, se = rep.estimate_bias()
    z = np.abs(mean - truth.probs) / se
    report(2, bool(np.all(z <= 3)), f"max |bias|/SE over 8 symbols = {z.max():.2f} (limit 3)")


def test_hash_rate_in_m(report):
    base = ProtocolConfig(256, 1, 8, 3, p=2.0, protocol="hash")
    fit = scaling_slope(None, base, Sweep("m", tuple(2**e for e in range(8, 13))), trials=400, seed=0)
    ok = abs(fit.slope + 1) <= 0.15
    report("3a", ok, f"hash risk vs m slope {fit.slope:.3f} +/- {fit.slope_se:.3f} (target -1 +/- 0.15)")


def test_hash_rate_in_l(report):
    # point mass: the collision term k/(m 2^l) is not masked by the sampling floor 1/m
    base = ProtocolConfig(4096, 1, 8, 1, p=2.0, protocol="hash")
    sweep = Sweep("l", (1, 2, 3, 4, 5), axis=lambda c: 2.0**c.l)
    fit = scaling_slope(None, base, sweep, trials=2000, seed=0, family="point")
    ok = abs(fit.slope + 1) <= 0.25
    report("3b", ok, f"hash risk vs 2^l slope {fit.slope:.3f} +/- {fit.slope_se:.3f} on a point mass (target -1 +/- 0.25)")


def _exact_plugin_risk(total, q):
    j = np.arange(total + 1)
    return float(np.sum(stats.binom.pmf(j, total, q) * 2 * (j / total - q) ** 2))


def test_plugin_exact_oracle(report):
    worst = 0.0
    for total in range(1, 13):
        for q in (0.1, 0.3, 0.5):
            cfg = ProtocolConfig(total, 1, 2, 1, protocol="plugin")
            rep = estimate_risk(None, Distribution([q, 1 - q]), cfg, trials=10_000, seed=total * 10 + int(q * 10))
            gap = abs(rep.mean_loss - _exact_plugin_risk(total, q))
            if rep.std_error == 0:
                # one sample at q = 1/2: the loss is the constant 1/2
                worst = max(worst, 0.0 if gap < 1e-12 else math.inf)
            else:
                worst = max(worst, gap / rep.std_error)
    report(4, worst <= 3, f"36 (samples, q) points, max |MC - exact|/SE = {worst:.2f} (limit 3)")


def _level_truth(truth, level_k, size):
    k = truth.size
    for j in range(k):
        if -(-k // size**j) == level_k:
            return np.bincount(np.arange(k) // size**j, weights=truth, minlength=level_k)
    raise AssertionError("no aggregation matches the level alphabet")


def _random_step(rng):
    sizes = rng.integers(1, 6, size=rng.integers(1, 6))
    alpha = rng.choice([0.05, 0.5, 1.0, 5.0])
    truth = rng.dirichlet(np.full(sizes.sum(), alpha))
    block_est = rng.dirichlet(np.full(sizes.size, alpha)) * rng.uniform(0.2, 1.0)
    cond = np.concatenate([rng.dirichlet(np.full(s, alpha)) for s in sizes])
    return truth, block_est, cond, np.repeat(np.arange(sizes.size), sizes)


def test_one_step_error_bound(report):
    rng = np.random.default_rng(0)
    failures = checks = 0
    for _ in range(10_000):
        step = _random_step(rng)
        for p in (2.0, 3.0, 4.0):
            lhs, rhs = one_step_error(*step, p)
            failures += lhs > rhs * (1 + 1e-12) + 1e-15
        lhs, rhs = one_step_error(*step, 1.0, tv=True)
        failures += lhs > rhs + 1e-12
        checks += 4

    configs = [(7, 4, 3, 96), (40, 4, 3, 256), (100, 2, 4, 512), (300, 1, 4, 1024)]
    live = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for run in range(1000):
            k, n, l, m = configs[run % len(configs)]
            uniform_alloc = run % 2 == 1
            truth = make_instance("dirichlet(0.5)" if run % 3 else "zipf(1)", k, seed=run)
            root = SharedRandomness(run)
            samples = sample(truth, m, n, root.stream("samples"))
            trace = []
            run_asr(ProtocolConfig(m, n, k, l), samples, root.derive("protocol"), uniform_alloc, trace)
            for sub in trace:
                part = sub.partition
                level = _level_truth(truth.probs, part.k, 2**l - 1)
                args = (level, sub.block_estimate, sub.conditional, part.block_of)
                if uniform_alloc:
                    lhs, rhs = one_step_error(*args, 1.0, tv=True)
                    failures += lhs > rhs + 1e-12
                    checks += 1
                else:
                    for p in (2.0, 3.0, 4.0):
                        lhs, rhs = one_step_error(*args, p)
                        failures += lhs > rhs * (1 + 1e-12) + 1e-15
                        checks += 1
                live += 1
    report(5, failures == 0, f"{checks} inequality checks ({live} live refinement steps), {failures} violations")


def test_onebit_mse_scaling(report):
    base = ProtocolConfig(250, 32, 2, 1, protocol="onebit")
    grid = tuple({"m": a, "n": b} for a in (250, 500, 1000) for b in (32, 128, 512))
    sweep = Sweep("m*n", grid, axis=lambda c: c.m * c.n)
    fit = scaling_slope(None, base, sweep, trials=400, seed=0, family=Distribution([0.3, 0.7]))
    ok = abs(fit.slope + 1) <= 0.2
    report(6, ok, f"one-bit MSE vs m'n slope {fit.slope:.3f} +/- {fit.slope_se:.3f} (target -1 +/- 0.2)")


def test_ar_risk_scaling(report):
    base = ProtocolConfig(512, 256, 4, 4, p=2.0, protocol="ar")
    fit = scaling_slope(None, base, Sweep("m", tuple(2**e for e in range(9, 14))), trials=200, seed=0)
    ok = abs(fit.slope + 1) <= 0.25
    report(7, ok, f"AR risk vs m slope {fit.slope:.3f} +/- {fit.slope_se:.3f} (target -1 +/- 0.25)")


def tight_budget(cfg):
    """Solve ``l = ceil(log2(8 m l))`` and set ``k = 8 m l``, ``n = l``."""
    l = 1
    while (nxt := math.ceil(math.log2(8 * cfg.m * l))) != l:
        l = nxt
    return cfg.replace(l=l, k=8 * cfg.m * l, n=max(cfg.n, l))


THRESHOLD_SWEEP = Sweep("m", tuple(2**e for e in range(6, 11)), axis=lambda c: c.m * c.l, derive=tight_budget)


def test_threshold_scaling(report):
    fit = scaling_slope("threshold", ProtocolConfig(64, 1, 2, 1, p=2.0), THRESHOLD_SWEEP, trials=200, seed=0)
    ok = abs(fit.slope + 1) <= 0.3 and set(fit.regimes) == {"tight-budget"}
    report(8, ok, f"thresholding risk vs ml slope {fit.slope:.3f} +/- {fit.slope_se:.3f} (target -1 +/- 0.3)")


def test_elbow(report):
    below = rates.classify_regime(100, 10, 8, math.inf, 1.5).upper_rate != rates.classify_regime(100, 10, 16, math.inf, 1.5).upper_rate
    above = rates.classify_regime(100, 10, 8, math.inf, 3.0).upper_rate == rates.classify_regime(100, 10, 16, math.inf, 3.0).upper_rate
    report(9, below and above, f"central rate depends on k at p=1.5: {below}; independent of k at p=3: {above}")


def test_worker_determinism(report):
    hash_base = ProtocolConfig(256, 1, 8, 3, protocol="hash")
    hash_sweep = Sweep("m", tuple(2**e for e in range(8, 13)))
    thr_base = ProtocolConfig(64, 1, 2, 1, protocol="threshold")
    same = True
    for base, sweep in ((hash_base, hash_sweep), (thr_base, THRESHOLD_SWEEP)):
        one = fit_to_csv(scaling_slope(None, base, sweep, trials=60, seed=5, workers=1))
        two = fit_to_csv(scaling_slope(None, base, sweep, trials=60, seed=5, workers=2))
        same &= one == two
    report(10, same, "sweep CSVs byte-identical for workers=1 and workers=2")
