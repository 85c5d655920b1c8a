"""
Models under test: built-in S/T learners, a Gaussian distributional
regression, an oracle that knows the true conditional outcome law, and
external regressors reached through the plugin protocol.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple
import logging

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.linalg import solve_triangular
from scipy.spatial import cKDTree
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from config import RIDGE_JITTER, TREATMENT_LEVELS
from services.copula import clamp_ranks, conditional_copula_sample, normal_scores
from services.errors import CapabilityError, FitError, ParameterError, ShapeError, SpecError
from services.frugal import Dataset, FrugalSpec, covariate_ranks
from services.margins import distributional_transform
from services.plugin_client import PluginClient, run_plugin_roundtrip

logger = logging.getLogger(__name__)

KINDS = ("s_linear", "t_linear", "s_knn", "t_knn", "gaussian_linear_dist", "plugin", "oracle")
CAPABILITIES = ("mean", "distributional", "both")

DEFAULT_CAPABILITY = {
    "s_linear": "mean",
    "t_linear": "mean",
    "s_knn": "mean",
    "t_knn": "mean",
    "gaussian_linear_dist": "both",
    "plugin": "both",
    "oracle": "both",
}

_QR_RANK_TOL = 1e-10
_HERMITE_NODES = 40
_LEGENDRE_NODES = 16
_SOBOL_LOG2_POINTS = 10


def step_grid(k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Deterministic quadrature over the distributional-transform uniforms of k
    discrete covariates and the standard normal copula residual

    Up to one discrete covariate: Gauss-Legendre steps crossed with
    Gauss-Hermite residual nodes. Two or more: one unscrambled Sobol set over
    steps and residual together.

    Returns:
        (steps P x k in (0, 1), residual nodes P x R, weights P x R summing to 1)
    """
    nodes, weights = hermegauss(_HERMITE_NODES)
    weights = weights / np.sqrt(2.0 * np.pi)
    if k == 0:
        return np.zeros((1, 0)), nodes[None, :], weights[None, :]
    if k == 1:
        steps, step_weights = leggauss(_LEGENDRE_NODES)
        steps, step_weights = 0.5 * (steps + 1.0), 0.5 * step_weights
        return steps[:, None], np.tile(nodes, (steps.size, 1)), np.outer(step_weights, weights)
    n = 2**_SOBOL_LOG2_POINTS
    points = qmc.Sobol(d=k + 1, scramble=False).random_base2(_SOBOL_LOG2_POINTS) + 0.5 / n
    return points[:, :k], ndtri(points[:, k:]), np.full((n, 1), 1.0 / n)


@dataclass
class ModelSpec:
    """A named model entry in an experiment roster"""

    name: str
    kind: str
    hyperparams: Dict[str, Any] = field(default_factory=dict)
    capability: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"Unknown model kind '{self.kind}'")
        if self.capability is None:
            self.capability = DEFAULT_CAPABILITY[self.kind]
        if self.capability not in CAPABILITIES:
            raise ParameterError(f"Unknown capability '{self.capability}'")
        if self.kind in ("s_linear", "t_linear", "s_knn", "t_knn") and self.capability != "mean":
            raise ParameterError(f"{self.kind} only supports mean prediction")
        if self.kind.endswith("_knn"):
            k = self.hyperparams.setdefault("k", 5)
            if not isinstance(k, int) or k < 1:
                raise ParameterError(f"k must be a positive integer, got {k!r}")
        if self.kind == "plugin" and not self.hyperparams.get("command"):
            raise ParameterError(f"plugin model '{self.name}' needs a command")

    def supports(self, test_kind: str) -> bool:
        """test_kind is "mean" or "distributional" """
        return self.capability in ("both", test_kind)


class Predictor(ABC):
    """Fitted model; read-only after fit"""

    def __init__(self, capability: str, dim: int):
        self.capability = capability
        self.dim = dim

    def _check(self, need: str, z: np.ndarray) -> np.ndarray:
        if self.capability not in ("both", need):
            raise CapabilityError(f"predictor with capability '{self.capability}' cannot produce {need} predictions")
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.dim:
            raise ShapeError(f"predictor was fitted on {self.dim} covariates, got {z.shape[1]}")
        return z

    def predict_mean(self, x: int, z) -> float:
        return float(self.predict_mean_batch(x, np.atleast_2d(z))[0])

    def predict_mean_batch(self, x, z) -> np.ndarray:
        """Point predictions f(x, z) for every row of z; x is a level or a per-row array"""
        z = self._check("mean", z)
        x = np.broadcast_to(np.asarray(x, dtype=int), (z.shape[0],))
        return self._mean(x, z)

    def predict_dist(self, x: int, z, n_y: int, rng: np.random.Generator) -> np.ndarray:
        z = self._check("distributional", z)
        if n_y < 1:
            raise ParameterError("n_y must be at least 1")
        return self._dist(int(x), z[0], int(n_y), rng)

    @abstractmethod
    def _mean(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        ...

    def _dist(self, x: int, z: np.ndarray, n_y: int, rng: np.random.Generator) -> np.ndarray:
        raise CapabilityError("predictor has no distributional output")

    def close(self):
        pass


def least_squares(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Least-squares coefficients via QR; ridge-regularized normal equations
    when the design is rank deficient
    """
    n, p = design.shape
    if n >= p:
        q, r = np.linalg.qr(design)
        diag = np.abs(np.diag(r))
        if diag.min() > _QR_RANK_TOL * max(diag.max(), 1.0):
            return solve_triangular(r, q.T @ y)

    logger.warning(f"Rank-deficient design ({n} rows, {p} columns); applying ridge jitter {RIDGE_JITTER}")
    gram = design.T @ design + RIDGE_JITTER * np.eye(p)
    try:
        coef = np.linalg.solve(gram, design.T @ y)
    except np.linalg.LinAlgError as e:
        raise FitError(f"singular design matrix: {e}") from e
    if not np.all(np.isfinite(coef)):
        raise FitError("singular design matrix: non-finite coefficients")
    return coef


def _arm_rows(data: Dataset, kind: str) -> Dict[int, np.ndarray]:
    masks = {arm: data.x == arm for arm in TREATMENT_LEVELS}
    for arm, mask in masks.items():
        if not mask.any():
            raise FitError(f"{kind} needs both treatment arms; arm {arm} is empty")
    return masks


class SLinearPredictor(Predictor):
    """y ~ (1, z, x); coefficients ordered (intercept, z..., x)"""

    def __init__(self, coef: np.ndarray, dim: int, sigma2: Optional[float] = None):
        super().__init__("mean" if sigma2 is None else "both", dim)
        self.coef = coef
        self.sigma2 = sigma2

    @classmethod
    def fit(cls, data: Dataset, distributional: bool = False) -> "SLinearPredictor":
        design = np.column_stack([np.ones(len(data)), data.z, data.x])
        coef = least_squares(design, data.y)
        sigma2 = None
        if distributional:
            rss = float(np.sum((data.y - design @ coef) ** 2))
            dof = len(data) - design.shape[1]
            sigma2 = rss / dof if dof > 0 else rss / len(data)
        return cls(coef, data.dim, sigma2)

    def _mean(self, x, z):
        return self.coef[0] + z @ self.coef[1:-1] + self.coef[-1] * x

    def _dist(self, x, z, n_y, rng):
        center = float(self._mean(np.array([x]), z[None, :])[0])
        return center + np.sqrt(self.sigma2) * rng.standard_normal(n_y)


class TLinearPredictor(Predictor):
    """Per-arm y ~ (1, z)"""

    def __init__(self, coefs: Dict[int, np.ndarray], dim: int):
        super().__init__("mean", dim)
        self.coefs = coefs

    @classmethod
    def fit(cls, data: Dataset) -> "TLinearPredictor":
        coefs = {}
        for arm, mask in _arm_rows(data, "t_linear").items():
            design = np.column_stack([np.ones(int(mask.sum())), data.z[mask]])
            coefs[arm] = least_squares(design, data.y[mask])
        return cls(coefs, data.dim)

    def _mean(self, x, z):
        out = np.empty(z.shape[0])
        for arm, coef in self.coefs.items():
            mask = x == arm
            out[mask] = coef[0] + z[mask] @ coef[1:]
        return out


class KnnPredictor(Predictor):
    """Average outcome of the k nearest standardized training points"""

    def __init__(self, trees, outcomes, center, scale, k: int, single: bool, dim: int):
        super().__init__("mean", dim)
        self.trees = trees
        self.outcomes = outcomes
        self.center = center
        self.scale = scale
        self.k = k
        self.single = single

    @staticmethod
    def _standardizer(features: np.ndarray):
        center = features.mean(axis=0)
        scale = features.std(axis=0)
        scale[scale == 0.0] = 1.0
        return center, scale

    @classmethod
    def fit(cls, data: Dataset, k: int, single: bool) -> "KnnPredictor":
        if single:
            features = np.column_stack([data.z, data.x])
            center, scale = cls._standardizer(features)
            trees = {None: cKDTree((features - center) / scale)}
            outcomes = {None: data.y.copy()}
        else:
            masks = _arm_rows(data, "t_knn")
            center, scale = cls._standardizer(data.z)
            trees = {arm: cKDTree((data.z[mask] - center) / scale) for arm, mask in masks.items()}
            outcomes = {arm: data.y[mask] for arm, mask in masks.items()}
        return cls(trees, outcomes, center, scale, k, single, data.dim)

    def _query(self, key, points: np.ndarray) -> np.ndarray:
        ys = self.outcomes[key]
        k = min(self.k, len(ys))
        _, idx = self.trees[key].query(points, k=k)
        idx = np.asarray(idx).reshape(points.shape[0], k)
        return ys[idx].mean(axis=1)

    def _mean(self, x, z):
        if self.single:
            return self._query(None, (np.column_stack([z, x]) - self.center) / self.scale)
        out = np.empty(z.shape[0])
        for arm in self.trees:
            mask = x == arm
            if mask.any():
                out[mask] = self._query(arm, (z[mask] - self.center) / self.scale)
        return out


class OraclePredictor(Predictor):
    """
    Knows the spec's conditional outcome distribution

    The conditional mean integrates the causal quantile over the conditional
    Gaussian copula and, for discrete covariates, over the position v inside
    each CDF step, the same uniform the samplers draw. The grid comes from
    step_grid; with no discrete covariates it is plain Gauss-Hermite (exact
    for normal causal margins). An optional constant bias is added to every
    output, or only to the arm named by bias_arm.
    """

    def __init__(self, spec: FrugalSpec, bias: float = 0.0, capability: str = "both", bias_arm: Optional[int] = None):
        super().__init__(capability, spec.dim)
        self.spec = spec
        self.bias = float(bias)
        self.bias_arm = bias_arm
        self._discrete = np.flatnonzero(spec.discrete_covariate_flags).tolist()
        self._steps, self._nodes, self._weights = step_grid(len(self._discrete))

    def _bias(self, x):
        if self.bias_arm is None:
            return self.bias
        return self.bias * (np.asarray(x) == self.bias_arm)

    def _ranks(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        ranks = np.empty_like(z)
        step = dict(zip(self._discrete, v))
        for d, margin in enumerate(self.spec.test_domain.covariate_margins):
            if d in step:
                ranks[:, d] = distributional_transform(margin, z[:, d], np.full(z.shape[0], step[d]))
            elif margin.family == "empirical":
                ranks[:, d] = np.clip(margin.cdf(z[:, d]), 1.0 / (margin.n + 1), margin.n / (margin.n + 1.0))
            else:
                ranks[:, d] = margin.cdf(z[:, d])
        return clamp_ranks(ranks)

    def _mean_at(self, x, z, v, nodes, weights):
        scores = normal_scores(self._ranks(z, v))
        out = np.empty(z.shape[0])
        for arm in TREATMENT_LEVELS:
            mask = x == arm
            if not mask.any():
                continue
            params = self.spec.conditional_params[arm]
            center = scores[mask] @ params.coefficients
            spread = np.sqrt(params.residual_var)
            eta = center[:, None] + spread * nodes[None, :]
            u = clamp_ranks(ndtr(eta))
            values = self.spec.causal_margins[arm].quantile(u)
            out[mask] = values @ weights
        return out

    def _mean(self, x, z):
        out = np.zeros(z.shape[0])
        for v, nodes, weights in zip(self._steps, self._nodes, self._weights):
            out += self._mean_at(x, z, v, nodes, weights)
        return out + self._bias(x)

    def _dist(self, x, z, n_y, rng):
        rows = np.tile(z, (n_y, 1))
        ranks, _ = covariate_ranks(self.spec, rows, rng)
        u = conditional_copula_sample(self.spec.conditional_params[x], ranks, rng)
        return np.atleast_1d(self.spec.causal_margins[x].quantile(u)) + self._bias(x)


class PluginPredictor(Predictor):
    """Predictor backed by a running plugin process"""

    def __init__(self, client: PluginClient, capability: str, dim: int):
        super().__init__(capability, dim)
        self.client = client

    @classmethod
    def fit(cls, spec: ModelSpec, data: Dataset) -> "PluginPredictor":
        hp = spec.hyperparams
        client = PluginClient(hp["command"], env=hp.get("env"), timeout=hp.get("timeout"), cwd=hp.get("cwd"))
        try:
            client.start()
            offered = set(client.handshake())
            wanted = {"mean", "distributional"} if spec.capability == "both" else {spec.capability}
            granted = wanted & offered
            if not granted:
                raise CapabilityError(f"plugin '{spec.name}' offers {sorted(offered)}, needs {sorted(wanted)}")
            capability = "both" if len(granted) == 2 else granted.pop()

            columns = list(data.covariate_names) + ["x", "y"]
            rows = [
                [float(v) for v in z_row] + [int(x), float(y)]
                for z_row, x, y in zip(data.z, data.x, data.y)
            ]
            client.fit(columns, rows, "x", "y")
        except Exception:
            client.kill()
            raise
        return cls(client, capability, data.dim)

    def _mean(self, x, z):
        return np.array([self.client.predict_mean(int(xi), zi) for xi, zi in zip(x, z)])

    def _dist(self, x, z, n_y, rng):
        seed = int(rng.integers(0, 2**63 - 1))
        return self.client.predict_dist(x, z, n_y, seed)

    def close(self):
        self.client.close()


def fit(spec: ModelSpec, data: Dataset, frugal_spec: Optional[FrugalSpec] = None) -> Predictor:
    """
    Fit a model on a training dataset

    Args:
        spec: Model entry
        data: Training rows
        frugal_spec: Generating spec; required by the oracle

    Returns:
        Fitted Predictor
    """
    if len(data) == 0:
        raise FitError("cannot fit on an empty dataset")

    kind = spec.kind
    if kind == "s_linear":
        return SLinearPredictor.fit(data)
    if kind == "gaussian_linear_dist":
        return SLinearPredictor.fit(data, distributional=True)
    if kind == "t_linear":
        return TLinearPredictor.fit(data)
    if kind in ("s_knn", "t_knn"):
        return KnnPredictor.fit(data, spec.hyperparams["k"], single=kind == "s_knn")
    if kind == "oracle":
        if frugal_spec is None:
            raise SpecError("the oracle model needs the generating frugal spec")
        hp = spec.hyperparams
        return OraclePredictor(frugal_spec, hp.get("bias", 0.0), spec.capability, hp.get("bias_arm"))
    return PluginPredictor.fit(spec, data)


def predict_mean(p: Predictor, x: int, z) -> float:
    return p.predict_mean(x, z)


def predict_dist(p: Predictor, x: int, z, n_y: int, rng: np.random.Generator) -> np.ndarray:
    return p.predict_dist(x, z, n_y, rng)


def plugin_roundtrip(spec: ModelSpec) -> str:
    """Run the fixed conformance exchange against a plugin model; returns the transcript"""
    if spec.kind != "plugin":
        raise ParameterError(f"model '{spec.name}' is not a plugin")
    hp = spec.hyperparams
    return run_plugin_roundtrip(hp["command"], env=hp.get("env"), timeout=hp.get("timeout"), cwd=hp.get("cwd"))
