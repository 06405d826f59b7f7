"""Monte Carlo risk estimation, worst-case search, scaling fits and budget audits."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from . import rates
from .ar import run_ar
from .asr import run_asr
from .compress import run_compress_refine, run_threshold, transmit_samples
from .core import (
    Distribution,
    Family,
    MessageRows,
    ProtocolConfig,
    SampleMatrix,
    SharedRandomness,
    Transcript,
    clip_to_unit,
    lp_loss,
    make_instance,
    make_two_point,
    sample,
)
from .hashproto import run_hash
from .onebit import OneBitTask, run_onebit

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 400
DEFAULT_FAMILIES = ("uniform", "zipf(1)", "point", "sparse(2)", "dirichlet")


class ProtocolFailure(RuntimeError):
    """One or more Monte Carlo trials raised; ``failures`` lists ``(trial, message)``."""

    def __init__(self, failures):
        self.failures = list(failures)
        head = "; ".join(f"trial {t}: {msg}" for t, msg in self.failures[:3])
        super().__init__(f"{len(self.failures)} trial(s) failed: {head}")


class RegimeCrossingError(ValueError):
    pass


def _onebit_protocol(config: ProtocolConfig, samples: SampleMatrix, stream: SharedRandomness):
    if samples.k != 2:
        raise ValueError("the one-bit protocol estimates a binary distribution (k=2)")
    counts = (samples.rows == 0).sum(axis=1)
    result = run_onebit(OneBitTask(samples.n, counts, stream.derive("onebit")))
    bits = np.zeros((samples.m, config.l), dtype=bool)
    bits[:, 0] = result.bits
    return np.array([result.estimate, 1.0 - result.estimate]), Transcript.from_bits(bits)


def _plugin_protocol(config, samples, stream):
    estimate, bits = transmit_samples(samples, config.l)
    return estimate, Transcript.from_bits(bits)


def _uniform_protocol(config, samples, stream):
    return np.full(config.k, 1.0 / config.k), Transcript.from_bits(np.zeros((config.m, config.l), dtype=bool))


def _threshold_protocol(config, samples, stream):
    variant = "p_le2" if config.p <= 2 else "p_gt2"
    return run_threshold(config, samples, variant, stream)


RUNNERS: dict[str, Callable] = {
    "ar": run_ar,
    "asr": run_asr,
    "asr_tv": lambda c, s, r: run_asr(c, s, r, uniform_alloc=True),
    "compress": run_compress_refine,
    "threshold": _threshold_protocol,
    "threshold_le2": lambda c, s, r: run_threshold(c, s, "p_le2", r),
    "threshold_gt2": lambda c, s, r: run_threshold(c, s, "p_gt2", r),
    "hash": run_hash,
    "plugin": _plugin_protocol,
    "onebit": _onebit_protocol,
    "uniform": _uniform_protocol,
}


def run_protocol(config: ProtocolConfig, samples: SampleMatrix, stream: SharedRandomness):
    """Dispatch on ``config.protocol``; returns the raw estimate and the transcript."""
    return RUNNERS[config.protocol](config, samples, stream)


@dataclass(frozen=True)
class AuditResult:
    passed: bool
    violations: tuple
    total_bits: int

    def __bool__(self):
        return self.passed


def budget_audit(transcript: Transcript, config: ProtocolConfig) -> AuditResult:
    """Check for exactly ``m`` messages of exactly ``l`` bits produced in encoder order."""
    violations = []
    count = len(transcript.messages)
    if count < config.m:
        violations.append(f"missing encoder(s): got {count} messages, expected {config.m}")
    elif count > config.m:
        violations.append(f"extra messages: got {count}, expected {config.m}")
    if isinstance(transcript.messages, MessageRows):
        lengths = np.full(count, transcript.messages.matrix.shape[1])
    else:
        lengths = np.array([len(msg) for msg in transcript.messages], dtype=np.int64)
    for i in np.flatnonzero(lengths != config.l):
        violations.append(f"encoder {i}: message has {lengths[i]} bits, expected {config.l}")
    ledger = np.asarray(transcript.ledger, dtype=np.int64)
    shared = min(ledger.size, count)
    for i in np.flatnonzero(ledger[:shared] != lengths[:shared]):
        violations.append(f"encoder {i}: ledger records {ledger[i]} bits, message has {lengths[i]}")
    if tuple(transcript.order) != tuple(range(count)):
        violations.append(f"production order {tuple(transcript.order)[:10]}... is not 0..{count - 1}")
    total = int(lengths.sum())
    return AuditResult(not violations, tuple(violations), total)


@dataclass(frozen=True)
class RiskReport:
    """Monte Carlo estimate of the expected loss of one protocol on one instance.

    ``losses`` are evaluated on the clipped estimate, ``raw_losses`` on the
    decoder's raw output.
    """

    config: ProtocolConfig
    instance: str
    trials: int
    mean_loss: float
    std_error: float
    audit_passed: bool
    losses: tuple = field(repr=False)
    raw_losses: tuple = field(repr=False)
    audit_failures: tuple = field(default=(), repr=False)
    estimates: np.ndarray | None = field(default=None, repr=False, compare=False)

    def estimate_bias(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-symbol mean raw estimate and its standard error (needs ``track_estimates``)."""
        if self.estimates is None:
            raise ValueError("estimates were not tracked for this report")
        est = self.estimates
        return est.mean(axis=0), est.std(axis=0, ddof=1) / math.sqrt(est.shape[0])


def _trial_batch(args):
    config, probs, seed, indices, track = args
    truth = Distribution(np.asarray(probs))
    out = []
    for t in indices:
        root = SharedRandomness(seed).derive("trial", t)
        try:
            samples = sample(truth, config.m, config.n, root.stream("samples"))
            raw, transcript = run_protocol(config, samples, root.derive("protocol"))
            raw = np.asarray(raw, dtype=float)
            audit = budget_audit(transcript, config)
            loss = lp_loss(clip_to_unit(raw), truth, config.p)
            out.append((t, loss, lp_loss(raw, truth, config.p), audit.violations, None, raw if track else None))
        except Exception as exc:  # noqa: BLE001 - surfaced as ProtocolFailure below
            out.append((t, math.nan, math.nan, (), f"{type(exc).__name__}: {exc}", None))
    return out


def _batches(trials: int, workers: int) -> list[range]:
    size = max(1, -(-trials // max(1, 4 * workers)))
    return [range(i, min(trials, i + size)) for i in range(0, trials, size)]


def _mean_and_se(values: Sequence[float]) -> tuple[float, float]:
    count = len(values)
    mean = math.fsum(values) / count
    var = math.fsum((v - mean) ** 2 for v in values) / (count - 1)
    return mean, math.sqrt(var / count)


def estimate_risk(
    protocol: str | None,
    instance: Distribution,
    config: ProtocolConfig,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
    workers: int = 1,
    label: str | None = None,
    track_estimates: bool = False,
) -> RiskReport:
    """Mean and standard error of the clipped ``l_p`` loss over independent trials.

    Every trial draws its samples and protocol randomness from streams keyed
    by ``(seed, trial)``, so the report is the same for any ``workers``.
    With ``track_estimates`` the raw per-trial estimates are kept as a
    ``trials x k`` array.
    """
    if trials < 2:
        raise ValueError("need at least two trials for a standard error")
    if protocol is not None:
        config = config.replace(protocol=protocol)
    if instance.k != config.k:
        raise ValueError(f"instance has {instance.k} symbols, config has k={config.k}")
    seed = config.seed if seed is None else int(seed)
    jobs = [(config, tuple(instance.probs), seed, batch, track_estimates) for batch in _batches(trials, workers)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [row for chunk in pool.map(_trial_batch, jobs) for row in chunk]
    else:
        results = [row for job in jobs for row in _trial_batch(job)]
    results.sort(key=lambda row: row[0])
    failures = [(row[0], row[4]) for row in results if row[4] is not None]
    if failures:
        raise ProtocolFailure(failures)
    losses = tuple(row[1] for row in results)
    raw = tuple(row[2] for row in results)
    audit_failures = tuple((row[0], row[3]) for row in results if row[3])
    estimates = np.vstack([row[5] for row in results]) if track_estimates else None
    mean, se = _mean_and_se(losses)
    return RiskReport(
        config,
        label or _describe(instance),
        trials,
        mean,
        se,
        not audit_failures,
        losses,
        raw,
        audit_failures,
        estimates,
    )


def _describe(instance: Distribution) -> str:
    digest = hashlib.sha1(np.asarray(instance.probs).tobytes()).hexdigest()[:10]
    return f"custom[k={instance.k},{digest}]"


def two_point_epsilon(m: int, n: int) -> float:
    return (100.0 * m * n) ** -0.5


def family_instances(families, config: ProtocolConfig, seed: int, include_two_point: bool = True):
    """``(descriptor, Distribution)`` pairs for the family list plus the two-point pair."""
    out = [(str(Family.parse(f)), make_instance(f, config.k, seed)) for f in families]
    if include_two_point and config.k >= 2:
        eps = two_point_epsilon(config.m, config.n)
        out.append((f"two_point({eps:.6g},1)", make_two_point(eps, config.k, 1)))
        out.append((f"two_point({eps:.6g},2)", make_two_point(eps, config.k, 2)))
    return out


def worst_case_risk(
    protocol: str | None,
    families: Sequence,
    config: ProtocolConfig,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
    workers: int = 1,
    include_two_point: bool = True,
) -> tuple[str, RiskReport, list[RiskReport]]:
    """Largest Monte Carlo risk over a finite instance family.

    Returns the worst descriptor, its report and the reports for every
    candidate in family order.
    """
    if not families:
        raise ValueError("instance family list is empty")
    seed = config.seed if seed is None else int(seed)
    reports = [
        estimate_risk(protocol, dist, config, trials, seed, workers, label=name)
        for name, dist in family_instances(families, config, seed, include_two_point)
    ]
    worst = max(reports, key=lambda r: r.mean_loss)
    return worst.instance, worst, reports


@dataclass(frozen=True)
class Sweep:
    """A parameter sweep.

    ``grid`` entries are values for ``param`` or mappings of several config
    fields.  ``derive`` post-processes each config (e.g. to recompute a
    dependent parameter) and ``axis`` maps a config to the regression
    abscissa (default: the swept field).
    """

    param: str
    grid: tuple
    axis: Callable[[ProtocolConfig], float] | None = None
    derive: Callable[[ProtocolConfig], ProtocolConfig] | None = None

    def configs(self, base: ProtocolConfig) -> list[ProtocolConfig]:
        out = []
        for value in self.grid:
            changes = dict(value) if isinstance(value, Mapping) else {self.param: value}
            cfg = base.replace(**changes)
            out.append(self.derive(cfg) if self.derive else cfg)
        return out

    def x(self, config: ProtocolConfig) -> float:
        return float(self.axis(config) if self.axis else getattr(config, self.param))


@dataclass(frozen=True)
class ScalingFit:
    param: str
    grid: tuple
    mean_losses: tuple
    std_errors: tuple
    slope: float
    slope_se: float
    intercept: float
    regimes: tuple
    predicted: tuple
    reports: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.grid) < 4:
            raise ValueError("a scaling fit needs at least four grid points")
        if any(b < a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be sorted in increasing order")
        if len(set(self.grid)) < 4:
            raise ValueError("a scaling fit needs at least four distinct abscissae")


def fit_loglog(xs, ys) -> tuple[float, float, float]:
    """OLS of ``log y`` on ``log x``; returns slope, its standard error and intercept."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive data")
    res = stats.linregress(np.log(xs), np.log(ys))
    return float(res.slope), float(res.stderr), float(res.intercept)


def scaling_slope(
    protocol: str | None,
    base: ProtocolConfig,
    sweep: Sweep,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
    family="uniform",
    workers: int = 1,
    check_regime: bool = True,
) -> ScalingFit:
    """Fit the log-log slope of Monte Carlo risk against the swept parameter.

    ``family`` is an instance family rebuilt at every grid point's ``k`` or a
    fixed :class:`Distribution`.  Grid points must share one regime of
    :func:`rates.classify_regime` unless ``check_regime`` is false.
    """
    if protocol is not None:
        base = base.replace(protocol=protocol)
    seed = base.seed if seed is None else int(seed)
    configs = sorted(sweep.configs(base), key=sweep.x)
    predictions = [rates.classify_regime(c.m, c.n, c.k, c.l, c.p) for c in configs]
    labels = [pred.regime for pred in predictions]
    if check_regime and len(set(labels)) > 1:
        first = labels[0]
        bad = [(sweep.x(c), lab) for c, lab in zip(configs, labels) if lab != first]
        raise RegimeCrossingError(f"sweep leaves the {first!r} regime at {bad}")
    root = SharedRandomness(seed)
    reports = []
    for i, cfg in enumerate(configs):
        if isinstance(family, Distribution):
            instance, name = family, _describe(family)
        else:
            instance, name = make_instance(family, cfg.k, seed), str(Family.parse(family))
        point_seed = root.key64("point", i)
        reports.append(estimate_risk(None, instance, cfg, trials, point_seed, workers, label=name))
        logger.info("%s=%s mean_loss=%.4g", sweep.param, sweep.x(cfg), reports[-1].mean_loss)
    xs = [sweep.x(c) for c in configs]
    means = [r.mean_loss for r in reports]
    slope, slope_se, intercept = fit_loglog(xs, means)
    return ScalingFit(
        sweep.param,
        tuple(xs),
        tuple(means),
        tuple(r.std_error for r in reports),
        slope,
        slope_se,
        intercept,
        tuple(labels),
        tuple(pred.upper_rate for pred in predictions),
        tuple(reports),
    )


CSV_HEADER = ("value", "mean_loss", "std_error", "predicted_rate", "regime")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def fit_to_csv(fit: ScalingFit) -> str:
    lines = [",".join(CSV_HEADER)]
    for x, mean, se, pred, regime in zip(fit.grid, fit.mean_losses, fit.std_errors, fit.predicted, fit.regimes):
        lines.append(",".join((_fmt(x), _fmt(mean), _fmt(se), _fmt(pred), regime)))
    return "\n".join(lines) + "\n"


def reports_to_csv(values: Sequence[float], reports: Sequence[RiskReport]) -> str:
    lines = [",".join(CSV_HEADER)]
    for x, rep in zip(values, reports):
        c = rep.config
        pred = rates.classify_regime(c.m, c.n, c.k, c.l, c.p)
        lines.append(",".join((_fmt(x), _fmt(rep.mean_loss), _fmt(rep.std_error), _fmt(pred.upper_rate), pred.regime)))
    return "\n".join(lines) + "\n"


def content_hash(payload) -> str:
    """Git blob hash of the canonical JSON encoding of ``payload``."""
    data = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def run_manifest(config: ProtocolConfig, seed: int, extra: Mapping | None = None, results: Mapping | None = None) -> dict:
    """Run description whose ``content_hash`` covers the inputs only, never ``results``."""
    inputs = {"config": config.as_dict(), "seed": int(seed), **(dict(extra) if extra else {})}
    manifest = {**inputs, "content_hash": content_hash(inputs)}
    if results:
        manifest["results"] = dict(results)
    return manifest
