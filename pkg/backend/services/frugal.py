"""
Frugal parameterization of a test and a training domain.

The test domain is described by its past (covariate margins, covariate
copula, propensity), a marginal causal law per treatment arm and a joint
Gaussian copula over (Z, Y(x)). The training domain only swaps the past;
its outcomes are drawn from the same conditional outcome distribution,
which is anchored to the TEST covariate CDFs.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import json
import logging

import numpy as np
import pandas as pd
from scipy import special

from config import MIN_ARM_ROWS, PROPENSITY_CLIP, RANK_CLAMP, RIDGE_JITTER, TREATMENT_LEVELS
from services.copula import (
    ConditionalCopulaParams,
    CorrelationMatrix,
    clamp_ranks,
    conditional_copula_params,
    conditional_copula_sample,
    fit_gauss_copula,
    gauss_copula_sample,
    validate_correlation,
)
from services.errors import FitError, RangeError, SpecError, UnsupportedShiftError
from services.margins import Margin, distributional_transform, fit_margin, pseudo_observations

logger = logging.getLogger(__name__)

_LOGISTIC_MAX_ITER = 100
_LOGISTIC_TOL = 1e-10
_BLOCK_MARGIN = 1e-6


@dataclass(frozen=True)
class PropensityModel:
    """P(X=1 | Z): constant, or logistic in the covariates."""

    kind: str = "constant"
    p: float = 0.5
    intercept: float = 0.0
    weights: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "constant":
            if not 0.0 < self.p < 1.0:
                raise SpecError(f"constant propensity must lie in (0, 1), got {self.p}")
        elif self.kind != "logistic":
            raise SpecError(f"Unknown propensity kind '{self.kind}'")

    @classmethod
    def constant(cls, p: float) -> "PropensityModel":
        return cls(kind="constant", p=float(p))

    @classmethod
    def logistic(cls, intercept: float, weights: Sequence[float]) -> "PropensityModel":
        return cls(kind="logistic", intercept=float(intercept), weights=tuple(float(w) for w in weights))

    def probability(self, z: np.ndarray) -> np.ndarray:
        """Treatment probabilities, clipped for positivity"""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if self.kind == "constant":
            p = np.full(z.shape[0], self.p)
        else:
            if len(self.weights) != z.shape[1]:
                raise SpecError(f"logistic propensity has {len(self.weights)} weights for {z.shape[1]} covariates")
            p = special.expit(self.intercept + z @ np.asarray(self.weights))
        return np.clip(p, *PROPENSITY_CLIP)

    def sample(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = self.probability(z)
        return (rng.random(len(p)) < p).astype(int)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "p": self.p}
        return {"kind": "logistic", "intercept": self.intercept, "weights": list(self.weights)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PropensityModel":
        if data.get("kind") == "logistic":
            return cls.logistic(data.get("intercept", 0.0), data.get("weights", []))
        return cls.constant(data.get("p", 0.5))


@dataclass(frozen=True)
class DomainSpec:
    """The past of one domain: covariate margins, covariate copula, propensity."""

    covariate_margins: Tuple[Margin, ...]
    covariate_copula: CorrelationMatrix
    propensity: PropensityModel = field(default_factory=PropensityModel)
    covariate_names: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariate_margins", tuple(self.covariate_margins))
        if not self.covariate_margins:
            raise SpecError("a domain needs at least one covariate")
        if self.covariate_copula.dim != self.dim:
            raise SpecError(
                f"covariate copula is {self.covariate_copula.dim}-dimensional for {self.dim} covariates"
            )
        if self.propensity.kind == "logistic" and len(self.propensity.weights) != self.dim:
            raise SpecError(f"logistic propensity has {len(self.propensity.weights)} weights for {self.dim} covariates")
        names = tuple(self.covariate_names) or tuple(f"z{d + 1}" for d in range(self.dim))
        if len(names) != self.dim:
            raise SpecError(f"{len(names)} covariate names for {self.dim} covariates")
        object.__setattr__(self, "covariate_names", names)

    @property
    def dim(self) -> int:
        return len(self.covariate_margins)

    def index_of(self, covariate: Union[int, str]) -> int:
        if isinstance(covariate, str):
            if covariate not in self.covariate_names:
                raise SpecError(f"Unknown covariate '{covariate}'")
            return self.covariate_names.index(covariate)
        if not 0 <= covariate < self.dim:
            raise SpecError(f"covariate index {covariate} out of range for {self.dim} covariates")
        return int(covariate)

    def sample_covariates(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = gauss_copula_sample(self.covariate_copula, n, rng)
        return np.column_stack([m.quantile(u[:, d]) for d, m in enumerate(self.covariate_margins)])


@dataclass(frozen=True)
class FrugalSpec:
    """Test past + per-arm causal margins + joint copula over (Z, Y(x))."""

    test_domain: DomainSpec
    causal_margins: Dict[int, Margin]
    joint_copulas: Dict[int, CorrelationMatrix]
    discrete_covariate_flags: Tuple[bool, ...] = ()
    conditional_params: Dict[int, ConditionalCopulaParams] = field(init=False, repr=False)

    def __post_init__(self):
        dim = self.test_domain.dim
        for x in TREATMENT_LEVELS:
            if x not in self.causal_margins:
                raise SpecError(f"no causal margin for treatment level {x}")
            if x not in self.joint_copulas:
                raise SpecError(f"no joint copula for treatment level {x}")
            joint = self.joint_copulas[x]
            if joint.dim != dim + 1:
                raise SpecError(f"joint copula for arm {x} is {joint.dim}-dimensional, expected {dim + 1}")
            if not joint.submatrix(range(dim)).allclose(self.test_domain.covariate_copula, atol=1e-6):
                raise SpecError(f"covariate block of the arm-{x} joint copula differs from the test covariate copula")

        flags = tuple(bool(f) for f in self.discrete_covariate_flags)
        if not flags:
            flags = tuple(m.family == "bernoulli" for m in self.test_domain.covariate_margins)
        if len(flags) != dim:
            raise SpecError(f"{len(flags)} discrete flags for {dim} covariates")
        object.__setattr__(self, "discrete_covariate_flags", flags)
        object.__setattr__(
            self,
            "conditional_params",
            {x: conditional_copula_params(self.joint_copulas[x], dim) for x in TREATMENT_LEVELS},
        )

    @classmethod
    def build(
        cls,
        test_domain: DomainSpec,
        causal_margins: Dict[int, Margin],
        joint_copula: Union[CorrelationMatrix, Dict[int, CorrelationMatrix]],
        discrete_covariate_flags: Sequence[bool] = (),
    ) -> "FrugalSpec":
        """Build a spec whose test covariate copula is the joint copula's covariate block."""
        joints = joint_copula if isinstance(joint_copula, dict) else {x: joint_copula for x in TREATMENT_LEVELS}
        first = joints[TREATMENT_LEVELS[0]]
        block = first.submatrix(range(test_domain.dim))
        domain = replace(test_domain, covariate_copula=block)
        aligned = {x: _with_covariate_block(joints[x], block) for x in TREATMENT_LEVELS}
        return cls(domain, dict(causal_margins), aligned, tuple(discrete_covariate_flags))

    @property
    def dim(self) -> int:
        return self.test_domain.dim

    @property
    def shared_copula(self) -> bool:
        a, b = (self.joint_copulas[x] for x in TREATMENT_LEVELS)
        return a is b or a.allclose(b, atol=0.0)


@dataclass
class Dataset:
    """Rows of (z, x, y) drawn from one domain."""

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    domain_tag: str
    seed: Optional[int] = None
    covariate_names: Tuple[str, ...] = ()
    out_of_support: int = 0

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        self.x = np.asarray(self.x, dtype=int).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        if not (self.z.shape[0] == len(self.x) == len(self.y)):
            raise SpecError("dataset columns have different lengths")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.y))):
            raise SpecError("dataset contains missing or non-finite entries")
        if self.domain_tag not in ("train", "test"):
            raise SpecError(f"Unknown domain tag '{self.domain_tag}'")
        if not self.covariate_names:
            self.covariate_names = tuple(f"z{d + 1}" for d in range(self.z.shape[1]))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    def arm(self, x: int) -> "Dataset":
        mask = self.x == x
        return Dataset(self.z[mask], self.x[mask], self.y[mask], self.domain_tag, self.seed, self.covariate_names)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.z, columns=list(self.covariate_names))
        frame["x"] = self.x
        frame["y"] = self.y
        return frame

    def to_table(self) -> "StudyTable":
        return StudyTable(self.to_frame(), list(self.covariate_names), "x", "y")


@dataclass
class StudyTable:
    """A typed table with declared column roles."""

    frame: pd.DataFrame
    covariates: List[str]
    treatment: str
    outcome: str
    discrete: List[str] = field(default_factory=list)
    trial: Optional[str] = None

    def z(self) -> np.ndarray:
        return self.frame[self.covariates].to_numpy(dtype=float)

    def x(self) -> np.ndarray:
        return self.frame[self.treatment].to_numpy(dtype=int)

    def y(self) -> np.ndarray:
        return self.frame[self.outcome].to_numpy(dtype=float)

    def select(self, mask) -> "StudyTable":
        return replace(self, frame=self.frame.loc[mask].reset_index(drop=True))


@dataclass(frozen=True)
class ShiftSpec:
    """One modification of a domain's past."""

    kind: str
    covariate: Optional[Union[int, str]] = None
    factor: float = 1.0
    margin: Optional[Margin] = None
    propensity: Optional[PropensityModel] = None
    apply_to: str = "train"


@dataclass
class FitOptions:
    """Options for estimating a FrugalSpec (or a domain past) from data"""

    causal_family: str = "gamma"
    propensity: str = "logistic"
    per_arm_copula: bool = False
    weighting: str = "none"
    discrete: Optional[List[str]] = None
    min_arm_rows: int = MIN_ARM_ROWS


def _with_covariate_block(joint: CorrelationMatrix, block: CorrelationMatrix) -> CorrelationMatrix:
    """Swap in a covariate block; the outcome row shrinks when the result would not be PSD"""
    dim = block.dim
    if joint.submatrix(range(dim)).allclose(block, atol=1e-12):
        return joint
    matrix = joint.matrix.copy()
    matrix[:dim, :dim] = block.matrix
    cross = matrix[:dim, dim].copy()
    reach = float(cross @ np.linalg.pinv(block.matrix) @ cross)
    if reach > 1.0 - _BLOCK_MARGIN:
        shrink = np.sqrt((1.0 - _BLOCK_MARGIN) / reach)
        logger.warning(f"Shrinking covariate-outcome correlations by {shrink:.4f} to keep the joint copula PSD")
        matrix[:dim, dim] = cross * shrink
        matrix[dim, :dim] = cross * shrink
    return validate_correlation(matrix)


# Sampling


def _quantiles(margins: Sequence[Margin], u: np.ndarray) -> np.ndarray:
    return np.column_stack([m.quantile(u[:, d]) for d, m in enumerate(margins)])


def _outcomes(spec: FrugalSpec, x: np.ndarray, u_y: np.ndarray) -> np.ndarray:
    y = np.empty(len(x))
    for arm in TREATMENT_LEVELS:
        mask = x == arm
        if mask.any():
            y[mask] = spec.causal_margins[arm].quantile(u_y[mask])
    return y


def _outcome_ranks(spec: FrugalSpec, x: np.ndarray, u_z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u_y = np.empty(len(x))
    for arm in TREATMENT_LEVELS:
        mask = x == arm
        u_y[mask] = conditional_copula_sample(spec.conditional_params[arm], u_z[mask], rng)
    return u_y


def covariate_ranks(spec: FrugalSpec, z: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """
    Ranks of covariate values under the TEST margins

    Discrete covariates go through the distributional transform with a fresh
    uniform per row. Values outside a test margin's support are clamped and
    counted.

    Returns:
        (ranks n x D, number of rows with at least one out-of-support value)
    """
    z = np.atleast_2d(z)
    ranks = np.empty_like(z, dtype=float)
    outside = np.zeros(z.shape[0], dtype=bool)

    for d, margin in enumerate(spec.test_domain.covariate_margins):
        lo, hi = margin.support()
        outside |= (z[:, d] < lo) | (z[:, d] > hi)
        if spec.discrete_covariate_flags[d]:
            ranks[:, d] = clamp_ranks(distributional_transform(margin, z[:, d], rng.random(z.shape[0])))
        elif margin.family == "empirical":
            ranks[:, d] = np.clip(margin.cdf(z[:, d]), 1.0 / (margin.n + 1), margin.n / (margin.n + 1.0))
        else:
            ranks[:, d] = clamp_ranks(margin.cdf(z[:, d]))

    return ranks, int(outside.sum())


def sample_test_domain(spec: FrugalSpec, n: int, rng: np.random.Generator, seed: Optional[int] = None) -> Dataset:
    """
    Draw n rows from the test domain

    Args:
        spec: FrugalSpec to sample from
        n: Number of rows
        rng: Caller-owned generator
        seed: Seed recorded on the dataset

    Returns:
        Dataset whose Y(x) marginal law is spec.causal_margins[x]
    """
    if n < 1:
        raise RangeError("sample size must be at least 1")
    domain = spec.test_domain
    dim = spec.dim

    if spec.shared_copula:
        u = gauss_copula_sample(spec.joint_copulas[TREATMENT_LEVELS[0]], n, rng)
        u_z, u_y = u[:, :dim], u[:, dim]
        z = _quantiles(domain.covariate_margins, u_z)
        x = domain.propensity.sample(z, rng)
    else:
        u_z = gauss_copula_sample(domain.covariate_copula, n, rng)
        z = _quantiles(domain.covariate_margins, u_z)
        x = domain.propensity.sample(z, rng)
        u_y = _outcome_ranks(spec, x, u_z, rng)

    return Dataset(z, x, _outcomes(spec, x, u_y), "test", seed, domain.covariate_names)


def sample_training_domain(
    spec: FrugalSpec,
    train_domain: DomainSpec,
    n: int,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> Dataset:
    """
    Draw n rows from the training domain

    Covariates and treatment come from the training past; outcome ranks are
    drawn from the test-domain conditional copula evaluated at the test-margin
    ranks of the training covariates.

    Returns:
        Dataset with out_of_support set to the clamped-row tally
    """
    if n < 1:
        raise RangeError("sample size must be at least 1")
    if train_domain.dim != spec.dim:
        raise SpecError(f"training domain has {train_domain.dim} covariates, spec has {spec.dim}")

    z = train_domain.sample_covariates(n, rng)
    x = train_domain.propensity.sample(z, rng)
    ranks, outside = covariate_ranks(spec, z, rng)
    if outside:
        logger.warning(f"{outside} of {n} training rows fall outside the test covariate support; ranks clamped")
    u_y = _outcome_ranks(spec, x, ranks, rng)

    return Dataset(z, x, _outcomes(spec, x, u_y), "train", seed, train_domain.covariate_names, outside)


def sample_conditional_outcomes(
    spec: FrugalSpec,
    z_star: Sequence[float],
    x: int,
    n: int,
    rng: np.random.Generator,
    domain: str = "test",
) -> np.ndarray:
    """
    Draw n outcomes of Y(x) at a fixed covariate vector

    ``domain="test"`` conditions the full joint copula of arm x on the test
    ranks of z*; ``domain="train"`` goes through the training sampler's rank
    path. Both target the same conditional outcome distribution.
    """
    z = np.tile(np.asarray(z_star, dtype=float), (n, 1))
    if z.shape[1] != spec.dim:
        raise SpecError(f"z* has {z.shape[1]} entries, spec has {spec.dim} covariates")
    arms = np.full(n, int(x))

    if domain == "train":
        ranks, _ = covariate_ranks(spec, z, rng)
        u_y = _outcome_ranks(spec, arms, ranks, rng)
    elif domain == "test":
        params = conditional_copula_params(spec.joint_copulas[int(x)], spec.dim)
        ranks, _ = covariate_ranks(spec, z, rng)
        u_y = conditional_copula_sample(params, ranks, rng)
    else:
        raise SpecError(f"Unknown domain '{domain}'")

    return spec.causal_margins[int(x)].quantile(u_y)


def true_marginal_mean(spec: FrugalSpec, x: int) -> float:
    """E[Y(x)] under the test domain"""
    if x not in spec.causal_margins:
        raise SpecError(f"no causal margin for treatment level {x}")
    return spec.causal_margins[x].mean()


def true_ate(spec: FrugalSpec) -> float:
    return true_marginal_mean(spec, 1) - true_marginal_mean(spec, 0)


# Estimation


def fit_propensity(z: np.ndarray, x: np.ndarray, kind: str = "logistic") -> PropensityModel:
    """
    Fit P(X=1 | Z)

    Args:
        z: n x D covariates
        x: Binary treatment
        kind: constant, or logistic (Newton-Raphson / IRLS)

    Returns:
        PropensityModel
    """
    x = np.asarray(x, dtype=float)
    treated = float(x.mean())
    if not 0.0 < treated < 1.0:
        raise FitError("propensity fit needs both treated and control rows")

    if kind == "constant":
        return PropensityModel.constant(treated)
    if kind != "logistic":
        raise FitError(f"Unknown propensity kind '{kind}'")

    design = np.column_stack([np.ones(len(x)), np.atleast_2d(z)])
    beta = np.zeros(design.shape[1])
    beta[0] = np.log(treated / (1.0 - treated))

    for iteration in range(_LOGISTIC_MAX_ITER):
        p = special.expit(design @ beta)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        gradient = design.T @ (x - p)
        hessian = design.T @ (design * w[:, None]) + RIDGE_JITTER * np.eye(design.shape[1])
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError as e:
            raise FitError(f"logistic propensity fit failed: {e}") from e
        beta = beta + step
        if np.max(np.abs(step)) < _LOGISTIC_TOL:
            break
    else:
        logger.warning("logistic propensity fit did not converge; treatment may be separable")

    return PropensityModel.logistic(beta[0], beta[1:])


def _discrete_columns(table: StudyTable, options: FitOptions) -> List[str]:
    if options.discrete is not None:
        return list(options.discrete)
    if table.discrete:
        return list(table.discrete)
    binary = []
    for name in table.covariates:
        values = table.frame[name].to_numpy(dtype=float)
        if np.all((values == 0.0) | (values == 1.0)):
            binary.append(name)
    return binary


def fit_domain_from_data(table: StudyTable, options: Optional[FitOptions] = None) -> DomainSpec:
    """
    Estimate a domain's past: empirical covariate margins, Gaussian covariate
    copula, propensity model.
    """
    options = options or FitOptions()
    z = table.z()
    if z.shape[0] < 3:
        raise FitError("domain fit needs at least 3 rows")

    margins = tuple(Margin.empirical(z[:, d]) for d in range(z.shape[1]))
    copula = fit_gauss_copula(pseudo_observations(z))
    propensity = fit_propensity(z, table.x(), options.propensity)
    return DomainSpec(margins, copula, propensity, tuple(table.covariates))


def fit_frugal_from_data(table: Union[StudyTable, Dataset], options: Optional[FitOptions] = None) -> FrugalSpec:
    """
    Estimate a FrugalSpec from a test-domain table

    Args:
        table: StudyTable (or Dataset) with covariates, binary treatment and outcome
        options: Fit options (causal family, propensity kind, copula split, weighting)

    Returns:
        FrugalSpec with empirical covariate margins, per-arm causal margins,
        Gaussian joint copula(s) and a propensity model
    """
    options = options or FitOptions()
    if isinstance(table, Dataset):
        table = table.to_table()

    x = table.x()
    y = table.y()
    if not np.all((x == 0) | (x == 1)):
        raise FitError("treatment must be binary")
    for arm in TREATMENT_LEVELS:
        count = int(np.sum(x == arm))
        if count < options.min_arm_rows:
            raise FitError(f"arm {arm} has {count} rows; at least {options.min_arm_rows} are needed")

    if options.causal_family == "gamma":
        bad = np.flatnonzero(y <= 0.0)
        if bad.size:
            raise FitError(f"gamma causal margin needs positive outcomes; offending rows {bad[:10].tolist()}")

    domain = fit_domain_from_data(table, options)
    discrete = set(_discrete_columns(table, options))
    flags = tuple(name in discrete for name in table.covariates)

    weights = None
    if options.weighting == "ipw":
        e = domain.propensity.probability(table.z())
        weights = np.where(x == 1, 1.0 / e, 1.0 / (1.0 - e))
    elif options.weighting != "none":
        raise FitError(f"Unknown weighting '{options.weighting}'")

    causal = {}
    for arm in TREATMENT_LEVELS:
        mask = x == arm
        causal[arm] = fit_margin(options.causal_family, y[mask], None if weights is None else weights[mask])

    z = table.z()
    arm_obs = {arm: pseudo_observations(np.column_stack([z[x == arm], y[x == arm]])) for arm in TREATMENT_LEVELS}
    if options.per_arm_copula:
        joints = {arm: fit_gauss_copula(arm_obs[arm]) for arm in TREATMENT_LEVELS}
    else:
        shared = fit_gauss_copula(np.vstack([arm_obs[arm] for arm in TREATMENT_LEVELS]))
        joints = {arm: shared for arm in TREATMENT_LEVELS}

    aligned = {arm: _with_covariate_block(joints[arm], domain.covariate_copula) for arm in TREATMENT_LEVELS}
    if not options.per_arm_copula:
        aligned = {arm: aligned[TREATMENT_LEVELS[0]] for arm in TREATMENT_LEVELS}

    logger.info(
        f"Fitted frugal spec on {len(y)} rows, {domain.dim} covariates "
        f"({sum(flags)} discrete), causal family {options.causal_family}"
    )
    return FrugalSpec(domain, causal, aligned, flags)


# Shifts


def apply_shift(domain: DomainSpec, shift: ShiftSpec) -> DomainSpec:
    """
    Apply a shift to a domain's past; the copula is left untouched

    Supported kinds: ``scale`` (multiply a covariate by a positive factor),
    ``replace_margin`` and ``replace_propensity``.
    """
    if shift.kind == "replace_propensity":
        if shift.propensity is None:
            raise UnsupportedShiftError("replace_propensity needs a propensity model")
        return replace(domain, propensity=shift.propensity)

    if shift.covariate is None:
        raise UnsupportedShiftError(f"{shift.kind} shift needs a target covariate")
    index = domain.index_of(shift.covariate)
    margins = list(domain.covariate_margins)
    margin = margins[index]

    if shift.kind == "replace_margin":
        if shift.margin is None:
            raise UnsupportedShiftError("replace_margin needs a margin")
        margins[index] = shift.margin
    elif shift.kind == "scale":
        c = float(shift.factor)
        if not c > 0.0:
            raise UnsupportedShiftError(f"scale factor must be positive, got {c}")
        if margin.family == "bernoulli":
            raise UnsupportedShiftError(f"cannot scale bernoulli covariate '{domain.covariate_names[index]}'")
        if c == 1.0:
            return domain
        if margin.family == "empirical":
            margins[index] = Margin.empirical(margin.values * c)
        elif margin.family == "gamma":
            shape, rate = margin.params
            margins[index] = Margin.gamma(shape, rate / c)
        else:
            mean, sd = margin.params
            margins[index] = Margin.normal(c * mean, c * sd)
    else:
        raise UnsupportedShiftError(f"Unknown shift kind '{shift.kind}'")

    return replace(domain, covariate_margins=tuple(margins))


# JSON documents


def domain_to_dict(domain: DomainSpec) -> Dict[str, Any]:
    return {
        "covariates": [
            {"name": name, "margin": margin.to_dict()}
            for name, margin in zip(domain.covariate_names, domain.covariate_margins)
        ],
        "covariate_correlation": domain.covariate_copula.to_list(),
        "propensity": domain.propensity.to_dict(),
    }


def domain_from_dict(data: Dict[str, Any]) -> DomainSpec:
    covariates = data["covariates"]
    return DomainSpec(
        tuple(Margin.from_dict(c["margin"]) for c in covariates),
        validate_correlation(data["covariate_correlation"]),
        PropensityModel.from_dict(data.get("propensity", {})),
        tuple(c["name"] for c in covariates),
    )


def frugal_spec_to_dict(spec: FrugalSpec) -> Dict[str, Any]:
    """Convert a spec to its JSON document form (correlations are Pearson)"""
    if spec.shared_copula:
        joint: Any = spec.joint_copulas[TREATMENT_LEVELS[0]].to_list()
    else:
        joint = {str(x): spec.joint_copulas[x].to_list() for x in TREATMENT_LEVELS}
    return {
        "test_domain": domain_to_dict(spec.test_domain),
        "causal_margins": {str(x): spec.causal_margins[x].to_dict() for x in TREATMENT_LEVELS},
        "joint_correlation": joint,
        "discrete_covariates": list(spec.discrete_covariate_flags),
    }


def frugal_spec_from_dict(data: Dict[str, Any]) -> FrugalSpec:
    domain = domain_from_dict(data["test_domain"])
    causal = {int(x): Margin.from_dict(m) for x, m in data["causal_margins"].items()}
    joint = data["joint_correlation"]
    if isinstance(joint, dict):
        joints = {int(x): validate_correlation(m) for x, m in joint.items()}
    else:
        shared = validate_correlation(joint)
        joints = {x: shared for x in TREATMENT_LEVELS}
    return FrugalSpec(domain, causal, joints, tuple(data.get("discrete_covariates", ())))


def save_spec(path: Union[str, Path], spec: FrugalSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(frugal_spec_to_dict(spec), f, indent=2)
    return path


def load_spec(path: Union[str, Path]) -> FrugalSpec:
    with open(path, "r", encoding="utf-8") as f:
        return frugal_spec_from_dict(json.load(f))
