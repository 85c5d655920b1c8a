"""
Statistical primitives and the bootstrap generalizability harnesses.

mean_regression_test: refit a mean model on fresh training draws, average
its predictions over fresh test draws, t-test the bootstrap estimates
against the known causal target.

dist_regression_test: refit a distributional model, pool outcome samples
at x0 over test rows and bootstraps, and compare the pool with the known
causal margin (KS or Cramer-von Mises).
"""
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Union
import logging
import math

import numpy as np
from scipy import stats
from scipy.special import gammaln, kv

from config import DEFAULT_N_Y, MAX_REDRAW_ATTEMPTS, RUN_DEFAULTS, TREATMENT_LEVELS, settings
from services.errors import CapabilityError, InputError, ParameterError, TestError
from services.frugal import DomainSpec, FrugalSpec, sample_test_domain, sample_training_domain, true_ate, true_marginal_mean
from services.margins import Margin
from services.models import ModelSpec, fit
from services.seeding import bootstrap_seed, derive_seed, make_rng

logger = logging.getLogger(__name__)

_DEGENERATE_SD = 1e-12
_SERIES_TOL = 1e-12
_CVM_MAX_TERMS = 1000
# P(W^2 > 10) is below 1e-20 in the limit law
_CVM_TAIL_CUTOFF = 10.0
_POOL_STREAM = (1 << 64) - 1

DEPENDENCE_NOTE = (
    "pooled samples share fitted models within a bootstrap; the one-sample test assumes independent draws"
)

CdfLike = Union[Margin, Callable[[np.ndarray], np.ndarray]]


class StatResult(NamedTuple):
    statistic: float
    p_value: float
    degenerate: bool = False


def _clean(samples: Sequence[float], minimum: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if np.isnan(x).any():
        raise InputError("samples contain NaN")
    if x.size < minimum:
        raise InputError(f"need at least {minimum} samples, got {x.size}")
    return x


def _evaluate_cdf(cdf: CdfLike, x: np.ndarray) -> np.ndarray:
    values = cdf.cdf(x) if isinstance(cdf, Margin) else cdf(x)
    return np.asarray(values, dtype=float)


def t_test_one_sample(samples: Sequence[float], target: float) -> StatResult:
    """
    Two-sided one-sample Student t test

    Returns:
        StatResult(t, p, degenerate). Zero-spread samples give p=1 when the
        mean equals the target and p=0 otherwise, flagged degenerate.
    """
    x = _clean(samples, 2)
    n = x.size
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    gap = mean - float(target)

    if sd < _DEGENERATE_SD:
        if abs(gap) < _DEGENERATE_SD:
            return StatResult(0.0, 1.0, True)
        return StatResult(math.copysign(math.inf, gap), 0.0, True)

    t = gap / (sd / math.sqrt(n))
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 1)))
    return StatResult(float(t), p)


def ks_test_one_sample(samples: Sequence[float], cdf: CdfLike) -> StatResult:
    """One-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value"""
    x = np.sort(_clean(samples, 1))
    n = x.size
    f = _evaluate_cdf(cdf, x)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    p = float(np.clip(stats.kstwobign.sf(math.sqrt(n) * d), 0.0, 1.0))
    return StatResult(d, p)


def cvm_limit_cdf(w2: float) -> float:
    """CDF of the limiting Cramer-von Mises distribution"""
    if w2 <= 0.0:
        return 0.0
    if w2 >= _CVM_TAIL_CUTOFF:
        return 1.0

    total = 0.0
    for j in range(_CVM_MAX_TERMS):
        y = 4 * j + 1
        q = y * y / (16.0 * w2)
        coef = math.exp(gammaln(j + 0.5) - gammaln(j + 1.0)) / (math.pi ** 1.5 * math.sqrt(w2))
        term = coef * math.sqrt(y) * math.exp(-q) * kv(0.25, q)
        total += term
        if abs(term) < _SERIES_TOL:
            break
    return min(max(total, 0.0), 1.0)


def cvm_test_one_sample(samples: Sequence[float], cdf: CdfLike) -> StatResult:
    """One-sample Cramer-von Mises test with the asymptotic p-value"""
    x = np.sort(_clean(samples, 2))
    n = x.size
    f = _evaluate_cdf(cdf, x)
    i = np.arange(1, n + 1)
    w2 = float(1.0 / (12 * n) + np.sum((f - (2 * i - 1) / (2.0 * n)) ** 2))
    return StatResult(w2, float(np.clip(1.0 - cvm_limit_cdf(w2), 0.0, 1.0)))


def _uniform_cdf(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def pvalue_uniformity_check(ps: Sequence[float]) -> StatResult:
    """KS test of p-values against U(0, 1)"""
    p = np.asarray(ps, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise InputError("p-values must lie in [0, 1]")
    return ks_test_one_sample(p, _uniform_cdf)


@dataclass
class TestConfig:
    """Sizes and target of one generalizability test"""

    __test__ = False

    n_bootstrap: int = RUN_DEFAULTS["synthetic"]["n_bootstrap"]
    n_train: int = RUN_DEFAULTS["synthetic"]["n_train"]
    n_test: int = RUN_DEFAULTS["synthetic"]["n_test"]
    n_y: int = DEFAULT_N_Y
    target: str = "mu"
    x0: int = 1
    dist_test: str = "ks"
    pooled_cap: int = field(default_factory=lambda: settings.POOLED_SAMPLE_CAP)

    def __post_init__(self):
        if self.n_bootstrap < 2:
            raise ParameterError("n_bootstrap must be at least 2")
        for name in ("n_train", "n_test", "n_y", "pooled_cap"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be at least 1")
        if self.target not in ("mu", "ate"):
            raise ParameterError(f"Unknown target '{self.target}'")
        if self.x0 not in TREATMENT_LEVELS:
            raise ParameterError(f"x0 must be one of {TREATMENT_LEVELS}, got {self.x0}")
        if self.dist_test not in ("ks", "cvm"):
            raise ParameterError(f"Unknown distribution test '{self.dist_test}'")


@dataclass
class TestReport:
    """Outcome of one harness run"""

    __test__ = False

    test_kind: str
    target: str
    p_value: float
    statistic: float
    reference: float
    master_seed: int
    bootstrap_seeds: List[int]
    bootstrap_estimates: List[float] = field(default_factory=list)
    pooled_summary: Dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False
    out_of_support: int = 0
    redraws: int = 0
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class _BootstrapOutcome:
    index: int
    seed: int
    out_of_support: int
    redraws: int
    estimate: float = float("nan")
    samples: Optional[np.ndarray] = None


def _bootstrap(job) -> _BootstrapOutcome:
    """One bootstrap round; redraws when the test sample has no rows at x0"""
    kind, spec, train_domain, model, cfg, master_seed, b = job
    needs_x0 = kind == "distributional" or cfg.target == "mu"

    for attempt in range(MAX_REDRAW_ATTEMPTS):
        seed = bootstrap_seed(master_seed, b, attempt)
        rng = make_rng(seed)
        train = sample_training_domain(spec, train_domain, cfg.n_train, rng, seed)
        test = sample_test_domain(spec, cfg.n_test, rng, seed)
        at_x0 = test.x == cfg.x0
        if needs_x0 and not at_x0.any():
            logger.warning(f"Bootstrap {b}: no test rows at x0={cfg.x0}; redrawing (attempt {attempt + 1})")
            continue

        predictor = fit(model, train, spec)
        try:
            outcome = _BootstrapOutcome(b, seed, train.out_of_support, attempt)
            if kind == "distributional":
                outcome.samples = np.concatenate(
                    [predictor.predict_dist(cfg.x0, z, cfg.n_y, rng) for z in test.z[at_x0]]
                )
            elif cfg.target == "mu":
                outcome.estimate = float(np.mean(predictor.predict_mean_batch(cfg.x0, test.z[at_x0])))
            else:
                effect = predictor.predict_mean_batch(1, test.z) - predictor.predict_mean_batch(0, test.z)
                outcome.estimate = float(np.mean(effect))
        finally:
            predictor.close()
        return outcome

    raise TestError(f"bootstrap {b}: no test rows at x0={cfg.x0} after {MAX_REDRAW_ATTEMPTS} attempts")


def _run_bootstraps(kind, spec, train_domain, model, cfg, master_seed, workers) -> List[_BootstrapOutcome]:
    jobs = [(kind, spec, train_domain, model, cfg, master_seed, b) for b in range(1, cfg.n_bootstrap + 1)]
    if workers <= 1 or len(jobs) == 1:
        return [_bootstrap(job) for job in jobs]

    workers = min(workers, len(jobs))
    with Pool(processes=workers) as pool:
        # map keeps bootstrap order regardless of completion order
        return pool.map(_bootstrap, jobs, chunksize=math.ceil(len(jobs) / workers))


def _merge_reservoir(pool: np.ndarray, seen: int, chunk: np.ndarray, cap: int, rng: np.random.Generator):
    """Uniform cap-sized subsample of (items seen so far) + chunk"""
    total = seen + chunk.size
    if total <= cap:
        return np.concatenate([pool, chunk]), total
    from_chunk = int(rng.hypergeometric(chunk.size, seen, cap))
    keep_old = pool[rng.choice(pool.size, cap - from_chunk, replace=False)] if pool.size else pool
    keep_new = chunk[rng.choice(chunk.size, from_chunk, replace=False)]
    return np.concatenate([keep_old, keep_new]), total


def mean_regression_test(
    spec: FrugalSpec,
    train_domain: DomainSpec,
    model: ModelSpec,
    cfg: TestConfig,
    master_seed: int,
    workers: int = 1,
) -> TestReport:
    """
    Bootstrap generalizability test of a mean regression model

    Args:
        spec: Test-domain frugal spec
        train_domain: Past of the training domain
        model: Model entry (needs mean capability)
        cfg: Test sizes and target
        master_seed: Seed the bootstrap seeds are derived from
        workers: Worker processes for the bootstrap loop

    Returns:
        TestReport with one estimate per bootstrap
    """
    if not model.supports("mean"):
        raise CapabilityError(f"model '{model.name}' has no mean capability")

    reference = true_marginal_mean(spec, cfg.x0) if cfg.target == "mu" else true_ate(spec)
    outcomes = _run_bootstraps("mean", spec, train_domain, model, cfg, master_seed, workers)
    estimates = [o.estimate for o in outcomes]
    result = t_test_one_sample(estimates, reference)

    report = TestReport(
        test_kind="mean",
        target=cfg.target,
        p_value=result.p_value,
        statistic=result.statistic,
        reference=reference,
        master_seed=int(master_seed),
        bootstrap_seeds=[o.seed for o in outcomes],
        bootstrap_estimates=estimates,
        degenerate=result.degenerate,
        out_of_support=sum(o.out_of_support for o in outcomes),
        redraws=sum(o.redraws for o in outcomes),
    )
    if result.degenerate:
        report.notes.append("bootstrap estimates have zero spread")
    logger.debug(f"Mean test '{model.name}': p={report.p_value:.4g}, t={report.statistic:.4g}")
    return report


def dist_regression_test(
    spec: FrugalSpec,
    train_domain: DomainSpec,
    model: ModelSpec,
    cfg: TestConfig,
    master_seed: int,
    workers: int = 1,
) -> TestReport:
    """
    Bootstrap generalizability test of a distributional regression model

    Outcome samples at x0 are pooled over test rows and bootstraps and
    compared with spec.causal_margins[x0]. Pools larger than cfg.pooled_cap
    are reservoir-subsampled.
    """
    if not model.supports("distributional"):
        raise CapabilityError(f"model '{model.name}' has no distributional capability")

    margin = spec.causal_margins[cfg.x0]
    outcomes = _run_bootstraps("distributional", spec, train_domain, model, cfg, master_seed, workers)

    rng = make_rng(derive_seed(master_seed, _POOL_STREAM))
    pooled = np.empty(0)
    seen = 0
    for o in outcomes:
        pooled, seen = _merge_reservoir(pooled, seen, o.samples, cfg.pooled_cap, rng)

    notes = [DEPENDENCE_NOTE]
    if seen > cfg.pooled_cap:
        logger.warning(f"Pooled {seen} samples; subsampled to {cfg.pooled_cap}")
        notes.append(f"pooled sample subsampled from {seen} to {cfg.pooled_cap}")

    test = ks_test_one_sample if cfg.dist_test == "ks" else cvm_test_one_sample
    result = test(pooled, margin)

    return TestReport(
        test_kind="distributional",
        target=cfg.target,
        p_value=result.p_value,
        statistic=result.statistic,
        reference=true_marginal_mean(spec, cfg.x0),
        master_seed=int(master_seed),
        bootstrap_seeds=[o.seed for o in outcomes],
        pooled_summary={
            "test": cfg.dist_test,
            "x0": cfg.x0,
            "count_total": seen,
            "count_used": int(pooled.size),
            "subsampled": seen > cfg.pooled_cap,
            "mean": float(pooled.mean()),
            "sd": float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
        },
        out_of_support=sum(o.out_of_support for o in outcomes),
        redraws=sum(o.redraws for o in outcomes),
        notes=notes,
    )
