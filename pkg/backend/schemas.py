"""
Experiment configuration documents (JSON), validated with pydantic
"""
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import DEFAULT_ITERATIONS
from services.margins import Margin


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NormalMarginConfig(StrictModel):
    family: Literal["normal"]
    mean: float = 0.0
    sd: float = Field(1.0, gt=0)


class GammaMarginConfig(StrictModel):
    family: Literal["gamma"]
    shape: float = Field(gt=0)
    rate: float = Field(1.0, gt=0)


class BernoulliMarginConfig(StrictModel):
    family: Literal["bernoulli"]
    p: float = Field(ge=0, le=1)


class EmpiricalMarginConfig(StrictModel):
    family: Literal["empirical"]
    values: List[float] = Field(min_length=1)


MarginConfig = Annotated[
    Union[NormalMarginConfig, GammaMarginConfig, BernoulliMarginConfig, EmpiricalMarginConfig],
    Field(discriminator="family"),
]


def to_margin(config: MarginConfig) -> Margin:
    return Margin.from_dict(config.model_dump())


class PropensityConfig(StrictModel):
    """constant: P(X=1)=p; logistic: expit(intercept + sum of named weights * z)"""

    kind: Literal["constant", "logistic"] = "constant"
    p: float = Field(0.5, gt=0, lt=1)
    intercept: float = 0.0
    weights: Dict[str, float] = Field(default_factory=dict)


class CovariateConfig(StrictModel):
    name: str
    test: MarginConfig
    train: Optional[MarginConfig] = None
    discrete: Optional[bool] = None


class SyntheticSpecConfig(StrictModel):
    """A frugal spec given parametrically; dependence entries are Spearman correlations"""

    covariates: List[CovariateConfig] = Field(min_length=1)
    causal_margins: Dict[Literal["0", "1"], MarginConfig]
    covariate_spearman: Optional[List[List[float]]] = None
    outcome_spearman: Optional[Union[List[float], Dict[Literal["0", "1"], List[float]]]] = None
    joint_spearman: Optional[Union[List[List[float]], Dict[Literal["0", "1"], List[List[float]]]]] = None
    propensity: PropensityConfig = Field(default_factory=PropensityConfig)
    train_propensity: Optional[PropensityConfig] = None

    @model_validator(mode="after")
    def check_shapes(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        if set(self.causal_margins) != {"0", "1"}:
            raise ValueError("causal_margins needs entries for '0' and '1'")
        if self.joint_spearman is not None and self.outcome_spearman is not None:
            raise ValueError("give either joint_spearman or outcome_spearman, not both")

        dim = len(self.covariates)
        if self.covariate_spearman is not None:
            _check_square(self.covariate_spearman, dim, "covariate_spearman")
        if isinstance(self.outcome_spearman, list):
            _check_length(self.outcome_spearman, dim, "outcome_spearman")
        elif isinstance(self.outcome_spearman, dict):
            for arm, row in self.outcome_spearman.items():
                _check_length(row, dim, f"outcome_spearman[{arm}]")
        if isinstance(self.joint_spearman, list):
            _check_square(self.joint_spearman, dim + 1, "joint_spearman")
        elif isinstance(self.joint_spearman, dict):
            for arm, matrix in self.joint_spearman.items():
                _check_square(matrix, dim + 1, f"joint_spearman[{arm}]")
        return self


def _check_square(matrix: List[List[float]], size: int, name: str):
    if len(matrix) != size or any(len(row) != size for row in matrix):
        raise ValueError(f"{name} must be {size}x{size}")


def _check_length(row: List[float], size: int, name: str):
    if len(row) != size:
        raise ValueError(f"{name} needs {size} entries")


class FitConfig(StrictModel):
    causal_family: Literal["gamma", "normal"] = "gamma"
    propensity: Literal["logistic", "constant"] = "logistic"
    per_arm_copula: bool = False
    weighting: Literal["none", "ipw"] = "none"


class SourceConfig(StrictModel):
    """CSV study data for semi-synthetic runs"""

    path: str
    train_path: Optional[str] = None
    covariates: Optional[List[str]] = None
    treatment: str = "treatment"
    outcome: str = "y_factual"
    discrete: Optional[List[str]] = None
    trial_column: Optional[str] = None
    fit: FitConfig = Field(default_factory=FitConfig)


class ShiftConfig(StrictModel):
    kind: Literal["scale", "replace_margin", "replace_propensity"]
    covariate: Optional[str] = None
    factor: float = Field(1.0, gt=0)
    margin: Optional[MarginConfig] = None
    propensity: Optional[PropensityConfig] = None
    apply_to: Literal["train", "test"] = "train"

    @model_validator(mode="after")
    def check_fields(self):
        if self.kind in ("scale", "replace_margin") and not self.covariate:
            raise ValueError(f"{self.kind} shift needs a covariate")
        if self.kind == "replace_margin" and self.margin is None:
            raise ValueError("replace_margin shift needs a margin")
        if self.kind == "replace_propensity" and self.propensity is None:
            raise ValueError("replace_propensity shift needs a propensity")
        return self


class ModelConfig(StrictModel):
    name: str
    kind: Literal["s_linear", "t_linear", "s_knn", "t_knn", "gaussian_linear_dist", "plugin", "oracle"]
    hyperparams: Dict[str, Any] = Field(default_factory=dict)
    capability: Optional[Literal["mean", "distributional", "both"]] = None


class TestsConfig(StrictModel):
    """Harness sizes; unset sizes take the mode's defaults"""

    n_bootstrap: Optional[int] = Field(None, ge=2)
    n_train: Optional[int] = Field(None, ge=1)
    n_test: Optional[int] = Field(None, ge=1)
    n_y: Optional[int] = Field(None, ge=1)
    target: Literal["mu", "ate"] = "mu"
    x0: Literal[0, 1] = 1
    dist_test: Literal["ks", "cvm"] = "ks"
    pooled_cap: Optional[int] = Field(None, ge=1)


class ExperimentConfig(StrictModel):
    name: str = "experiment"
    mode: Literal["synthetic", "semi_synthetic"]
    spec: Optional[SyntheticSpecConfig] = None
    source: Optional[SourceConfig] = None
    shifts: List[ShiftConfig] = Field(default_factory=list)
    models: List[ModelConfig] = Field(min_length=1)
    tests: TestsConfig = Field(default_factory=TestsConfig)
    iterations: int = Field(DEFAULT_ITERATIONS, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_mode(self):
        if self.mode == "synthetic" and self.spec is None:
            raise ValueError("synthetic mode needs a 'spec'")
        if self.mode == "semi_synthetic" and self.source is None:
            raise ValueError("semi_synthetic mode needs a 'source'")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")
        return self
