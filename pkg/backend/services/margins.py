"""
Univariate margins: parametric families, empirical CDFs and the
generalized distributional transform used to move between data and
copula rank space.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy import special

from services.errors import FitError, ParameterError, RangeError

logger = logging.getLogger(__name__)

FAMILIES = ("normal", "gamma", "bernoulli", "empirical")
DISCRETE_FAMILIES = ("bernoulli", "empirical")

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Newton iterations for the gamma shape equation
_GAMMA_MAX_ITER = 100
_GAMMA_TOL = 1e-12


def _as_output(values: np.ndarray, scalar: bool):
    return float(values) if scalar else values


@dataclass(frozen=True, eq=False)
class Margin:
    """A univariate distribution exposing cdf, quantile, density and sampler.

    Parameters by family:
      normal:    (mean, sd)          sd > 0
      gamma:     (shape, rate)       shape > 0, rate > 0
      bernoulli: (p,)                0 <= p <= 1
      empirical: sorted sample values, stored in ``values``
    """

    family: str
    params: Tuple[float, ...] = ()
    values: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"Unknown margin family '{self.family}'")

        if self.family == "normal":
            mean, sd = self._unpack(2)
            if not np.isfinite(mean) or not sd > 0:
                raise ParameterError(f"normal margin needs finite mean and sd > 0, got ({mean}, {sd})")
        elif self.family == "gamma":
            shape, rate = self._unpack(2)
            if not shape > 0 or not rate > 0:
                raise ParameterError(f"gamma margin needs shape > 0 and rate > 0, got ({shape}, {rate})")
        elif self.family == "bernoulli":
            (p,) = self._unpack(1)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"bernoulli margin needs p in [0, 1], got {p}")
        else:
            if self.values is None or len(self.values) == 0:
                raise ParameterError("empirical margin needs at least one sample value")
            values = np.sort(np.asarray(self.values, dtype=float))
            if not np.all(np.isfinite(values)):
                raise ParameterError("empirical margin values must be finite")
            values.setflags(write=False)
            object.__setattr__(self, "values", values)

    def _unpack(self, count: int) -> Tuple[float, ...]:
        if len(self.params) != count:
            raise ParameterError(f"{self.family} margin takes {count} parameter(s), got {len(self.params)}")
        return tuple(float(p) for p in self.params)

    # Constructors

    @classmethod
    def normal(cls, mean: float, sd: float) -> "Margin":
        return cls("normal", (float(mean), float(sd)))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "Margin":
        return cls("gamma", (float(shape), float(rate)))

    @classmethod
    def bernoulli(cls, p: float) -> "Margin":
        return cls("bernoulli", (float(p),))

    @classmethod
    def empirical(cls, samples: ArrayLike) -> "Margin":
        return cls("empirical", (), np.asarray(samples, dtype=float))

    @property
    def is_discrete(self) -> bool:
        return self.family in DISCRETE_FAMILIES

    @property
    def n(self) -> int:
        """Sample size behind an empirical margin (0 for parametric families)."""
        return 0 if self.values is None else len(self.values)

    # Distribution functions

    def cdf(self, x: ArrayLike):
        """Right-continuous F(x). Empirical margins use rank/(n+1)."""
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)

        if self.family == "normal":
            mean, sd = self.params
            out = special.ndtr((x - mean) / sd)
        elif self.family == "gamma":
            shape, rate = self.params
            out = special.gammainc(shape, rate * np.maximum(x, 0.0))
        elif self.family == "bernoulli":
            (p,) = self.params
            out = np.where(x < 0.0, 0.0, np.where(x < 1.0, 1.0 - p, 1.0))
        else:
            out = np.searchsorted(self.values, x, side="right") / (self.n + 1.0)

        return _as_output(np.asarray(out, dtype=float), scalar)

    def cdf_left(self, x: ArrayLike):
        """Left limit F(x-); equals cdf for continuous families."""
        if not self.is_discrete:
            return self.cdf(x)

        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)
        if self.family == "bernoulli":
            (p,) = self.params
            out = np.where(x <= 0.0, 0.0, np.where(x <= 1.0, 1.0 - p, 1.0))
        else:
            out = np.searchsorted(self.values, x, side="left") / (self.n + 1.0)

        return _as_output(np.asarray(out, dtype=float), scalar)

    def quantile(self, u: ArrayLike):
        """Generalized inverse inf{x : F(x) >= u}."""
        scalar = np.ndim(u) == 0
        u = np.asarray(u, dtype=float)

        if self.is_discrete:
            if np.any((u < 0.0) | (u > 1.0)) or np.any(np.isnan(u)):
                raise RangeError(f"{self.family} quantile needs u in [0, 1]")
        elif np.any((u <= 0.0) | (u >= 1.0)) or np.any(np.isnan(u)):
            raise RangeError(f"{self.family} quantile needs u in (0, 1)")

        if self.family == "normal":
            mean, sd = self.params
            out = mean + sd * special.ndtri(u)
        elif self.family == "gamma":
            shape, rate = self.params
            out = special.gammaincinv(shape, u) / rate
        elif self.family == "bernoulli":
            (p,) = self.params
            out = np.where(u <= 1.0 - p, 0.0, 1.0)
        else:
            # smallest i with i/(n+1) >= u, kept inside the stored sample
            idx = np.ceil(u * (self.n + 1) - 1e-9).astype(int)
            idx = np.clip(idx, 1, self.n) - 1
            out = self.values[idx]

        return _as_output(np.asarray(out, dtype=float), scalar)

    def pdf(self, x: ArrayLike):
        """Density for continuous families, probability mass for discrete ones."""
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)

        if self.family == "normal":
            mean, sd = self.params
            out = np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))
        elif self.family == "gamma":
            shape, rate = self.params
            safe = np.where(x > 0.0, x, 1.0)
            log_pdf = shape * np.log(rate) + (shape - 1.0) * np.log(safe) - rate * safe - special.gammaln(shape)
            out = np.where(x > 0.0, np.exp(log_pdf), 0.0)
        elif self.family == "bernoulli":
            (p,) = self.params
            out = np.where(x == 1.0, p, np.where(x == 0.0, 1.0 - p, 0.0))
        else:
            left = np.searchsorted(self.values, x, side="left")
            right = np.searchsorted(self.values, x, side="right")
            out = (right - left) / float(self.n)

        return _as_output(np.asarray(out, dtype=float), scalar)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n values directly from the margin."""
        if self.family == "normal":
            mean, sd = self.params
            return rng.normal(mean, sd, size=n)
        if self.family == "gamma":
            shape, rate = self.params
            return rng.gamma(shape, 1.0 / rate, size=n)
        if self.family == "bernoulli":
            (p,) = self.params
            return (rng.random(n) < p).astype(float)
        return rng.choice(self.values, size=n, replace=True)

    def mean(self) -> float:
        if self.family == "normal":
            return float(self.params[0])
        if self.family == "gamma":
            shape, rate = self.params
            return float(shape / rate)
        if self.family == "bernoulli":
            return float(self.params[0])
        return float(np.mean(self.values))

    def support(self) -> Tuple[float, float]:
        """Closed interval outside of which the margin puts no mass."""
        if self.family == "normal":
            return (-np.inf, np.inf)
        if self.family == "gamma":
            return (0.0, np.inf)
        if self.family == "bernoulli":
            return (0.0, 1.0)
        return (float(self.values[0]), float(self.values[-1]))

    # Serialization

    def to_dict(self) -> Dict[str, Any]:
        """Convert margin to its JSON document form"""
        if self.family == "normal":
            return {"family": "normal", "mean": self.params[0], "sd": self.params[1]}
        if self.family == "gamma":
            return {"family": "gamma", "shape": self.params[0], "rate": self.params[1]}
        if self.family == "bernoulli":
            return {"family": "bernoulli", "p": self.params[0]}
        return {"family": "empirical", "values": [float(v) for v in self.values]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Margin":
        family = data.get("family")
        try:
            if family == "normal":
                return cls.normal(data["mean"], data["sd"])
            if family == "gamma":
                return cls.gamma(data["shape"], data["rate"])
            if family == "bernoulli":
                return cls.bernoulli(data["p"])
            if family == "empirical":
                return cls.empirical(data["values"])
        except KeyError as e:
            raise ParameterError(f"{family} margin document is missing {e}") from e
        raise ParameterError(f"Unknown margin family '{family}'")

    def __repr__(self) -> str:
        if self.family == "empirical":
            return f"Margin(family='empirical', n={self.n})"
        return f"Margin(family='{self.family}', params={self.params})"


def margin_cdf(m: Margin, x: ArrayLike):
    """F_m(x); empirical margins return rank/(n+1)."""
    if np.any(~np.isfinite(np.asarray(x, dtype=float))):
        raise RangeError("margin_cdf needs finite x")
    return m.cdf(x)


def margin_quantile(m: Margin, u: ArrayLike):
    """Generalized inverse F^-1(u) = inf{x : F(x) >= u}."""
    return m.quantile(u)


def distributional_transform(m: Margin, x: ArrayLike, v: ArrayLike):
    """Randomized rank U = F(x-) + v * (F(x) - F(x-)).

    For continuous margins the jump is zero and v is ignored.

    Args:
        m: Margin whose CDF defines the ranks
        x: Observed value(s)
        v: Uniform randomization in [0, 1], same shape as x

    Returns:
        Rank value(s) in [0, 1]
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any((v_arr < 0.0) | (v_arr > 1.0)):
        raise RangeError("distributional_transform needs v in [0, 1]")

    upper = m.cdf(x)
    if not m.is_discrete:
        return upper

    lower = m.cdf_left(x)
    out = np.asarray(lower) + v_arr * (np.asarray(upper) - np.asarray(lower))
    return float(out) if np.ndim(out) == 0 else out


def pseudo_observations(samples: ArrayLike) -> np.ndarray:
    """Column-wise rank/(n+1) transform (average ranks for ties)."""
    from scipy.stats import rankdata

    data = np.asarray(samples, dtype=float)
    if data.ndim == 1:
        return rankdata(data) / (len(data) + 1.0)
    return rankdata(data, axis=0) / (data.shape[0] + 1.0)


def _weighted_moments(x: np.ndarray, w: np.ndarray) -> Tuple[float, float]:
    total = w.sum()
    mean = float(np.sum(w * x) / total)
    # reliability-weight correction so unit weights give the ddof=1 variance
    denom = total - np.sum(w ** 2) / total
    var = float(np.sum(w * (x - mean) ** 2) / denom) if denom > 0 else 0.0
    return mean, var


def _fit_gamma(x: np.ndarray, w: np.ndarray) -> Margin:
    mean, var = _weighted_moments(x, w)
    if var <= 0.0:
        raise FitError("gamma fit needs samples with nonzero variance")

    # shape equation: log k - digamma(k) = log(mean) - mean(log x)
    s = np.log(mean) - float(np.sum(w * np.log(x)) / w.sum())
    if s <= 0.0:
        raise FitError("gamma fit is degenerate (log-mean gap is not positive)")

    k = mean ** 2 / var
    for _ in range(_GAMMA_MAX_ITER):
        f = np.log(k) - special.digamma(k) - s
        f_prime = 1.0 / k - special.polygamma(1, k)
        step = f / f_prime
        k_next = k - step
        if k_next <= 0.0:
            k_next = k / 2.0
        if abs(k_next - k) <= _GAMMA_TOL * k:
            k = k_next
            break
        k = k_next
    else:
        logger.warning(f"gamma shape Newton iterations did not converge (k={k:.6g})")

    return Margin.gamma(k, k / mean)


def fit_margin(family: str, samples: ArrayLike, weights: Optional[ArrayLike] = None) -> Margin:
    """
    Fit a margin of the given family to samples

    Args:
        family: normal, gamma, bernoulli or empirical
        samples: Observed values
        weights: Optional nonnegative per-sample weights (not for empirical)

    Returns:
        Fitted Margin
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise FitError(f"cannot fit a {family} margin to an empty sample")
    if not np.all(np.isfinite(x)):
        raise FitError(f"cannot fit a {family} margin to non-finite samples")
    if family not in FAMILIES:
        raise FitError(f"Unknown margin family '{family}'")

    if weights is None:
        w = np.ones_like(x)
    else:
        if family == "empirical":
            raise FitError("weighted fits are not supported for empirical margins")
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape or np.any(w < 0.0) or w.sum() <= 0.0:
            raise FitError("weights must be nonnegative, match the samples and not all be zero")

    if family == "empirical":
        return Margin.empirical(x)

    if family == "bernoulli":
        if not np.all((x == 0.0) | (x == 1.0)):
            raise FitError("bernoulli fit needs 0/1 samples")
        return Margin.bernoulli(float(np.sum(w * x) / w.sum()))

    if family == "normal":
        mean, var = _weighted_moments(x, w)
        if var <= 0.0:
            raise FitError("normal fit needs samples with nonzero variance")
        return Margin.normal(mean, np.sqrt(var))

    bad = np.flatnonzero(x <= 0.0)
    if bad.size:
        raise FitError(f"gamma fit needs positive samples; offending positions {bad[:10].tolist()}")
    return _fit_gamma(x, w)
