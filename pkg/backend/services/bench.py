"""
Experiment orchestration: config loading, CSV ingestion, the iteration
loop over (model, test kind) jobs, and result files.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union
import hashlib
import json
import logging
import time

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import (
    REPORT_JSON,
    RESULTS_COLUMNS,
    RESULTS_CSV,
    RUN_DEFAULTS,
    DEFAULT_N_Y,
    SUMMARY_TXT,
    TREATMENT_LEVELS,
    settings,
)
from schemas import ExperimentConfig, PropensityConfig, ShiftConfig, SyntheticSpecConfig, to_margin
from services.copula import correlation_from_spearman
from services.errors import ConfigError, FrugalBenchError, IngestionError, SpecError
from services.frugal import (
    DomainSpec,
    FitOptions,
    FrugalSpec,
    PropensityModel,
    ShiftSpec,
    StudyTable,
    apply_shift,
    fit_domain_from_data,
    fit_frugal_from_data,
)
from services.hyptest import TestConfig, dist_regression_test, mean_regression_test
from services.models import ModelSpec
from services.seeding import iteration_seed

logger = logging.getLogger(__name__)

NA_TOKENS = {"", "na", "nan", "n/a", "null", "none"}
PASS_THRESHOLD = 0.05
TEST_KINDS = ("mean", "distributional")


# Configuration


def _validation_problems(exc: ValidationError) -> List[str]:
    problems = []
    for err in exc.errors():
        pointer = "/" + "/".join(str(part) for part in err["loc"])
        if err["type"] == "extra_forbidden":
            problems.append(f"unknown field '{err['loc'][-1]}' at {pointer}")
        else:
            problems.append(f"{pointer}: {err['msg']}")
    return problems


def _resolve(base_dir: Path, value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    path = Path(value).expanduser()
    return str(path if path.is_absolute() else (base_dir / path).resolve())


def parse_config(data: Dict[str, Any], base_dir: Union[str, Path] = ".") -> ExperimentConfig:
    """
    Validate a config document and resolve its relative paths against base_dir

    Raises:
        ConfigError: schema violations (JSON-pointer paths), unknown fields,
            missing files or specs that cannot be built
    """
    base_dir = Path(base_dir).resolve()
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("invalid experiment config", _validation_problems(e)) from e

    updates: Dict[str, Any] = {}
    if cfg.output_dir is not None:
        updates["output_dir"] = _resolve(base_dir, cfg.output_dir)
    if cfg.source is not None:
        updates["source"] = cfg.source.model_copy(
            update={"path": _resolve(base_dir, cfg.source.path), "train_path": _resolve(base_dir, cfg.source.train_path)}
        )
    models = []
    for m in cfg.models:
        if m.kind == "plugin":
            hp = dict(m.hyperparams)
            hp["cwd"] = _resolve(base_dir, hp.get("cwd", "."))
            m = m.model_copy(update={"hyperparams": hp})
        models.append(m)
    updates["models"] = models
    cfg = cfg.model_copy(update=updates)

    problems = []
    if cfg.source is not None:
        for key in ("path", "train_path"):
            value = getattr(cfg.source, key)
            if value is not None and not Path(value).is_file():
                problems.append(f"/source/{key}: file not found: {value}")
    for i, m in enumerate(cfg.models):
        try:
            to_model_spec(m)
        except FrugalBenchError as e:
            problems.append(f"/models/{i}: {e}")
    if cfg.spec is not None and not problems:
        try:
            build_synthetic(cfg.spec, cfg.shifts)
        except FrugalBenchError as e:
            problems.append(f"/spec: {e}")
    if problems:
        raise ConfigError("invalid experiment config", problems)
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load and validate an experiment config file

    Args:
        path: JSON config file; relative paths inside resolve against its directory

    Returns:
        ExperimentConfig
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}", [str(e)]) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON", [f"line {e.lineno}: {e.msg}"]) from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object", ["/: expected object"])
    return parse_config(data, path.parent)


def config_digest(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form"""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def to_model_spec(config) -> ModelSpec:
    return ModelSpec(config.name, config.kind, dict(config.hyperparams), config.capability)


def harness_config(cfg: ExperimentConfig) -> TestConfig:
    defaults = RUN_DEFAULTS[cfg.mode]
    t = cfg.tests
    kwargs = dict(
        n_bootstrap=t.n_bootstrap or defaults["n_bootstrap"],
        n_train=t.n_train or defaults["n_train"],
        n_test=t.n_test or defaults["n_test"],
        n_y=t.n_y or DEFAULT_N_Y,
        target=t.target,
        x0=t.x0,
        dist_test=t.dist_test,
    )
    if t.pooled_cap is not None:
        kwargs["pooled_cap"] = t.pooled_cap
    return TestConfig(**kwargs)


# Spec construction


def _propensity(config: PropensityConfig, names: Sequence[str]) -> PropensityModel:
    if config.kind == "constant":
        return PropensityModel.constant(config.p)
    unknown = sorted(set(config.weights) - set(names))
    if unknown:
        raise SpecError(f"propensity weights name unknown covariates {unknown}")
    return PropensityModel.logistic(config.intercept, [config.weights.get(n, 0.0) for n in names])


def _shift_spec(config: ShiftConfig, names: Sequence[str]) -> ShiftSpec:
    return ShiftSpec(
        kind=config.kind,
        covariate=config.covariate,
        factor=config.factor,
        margin=to_margin(config.margin) if config.margin is not None else None,
        propensity=_propensity(config.propensity, names) if config.propensity is not None else None,
        apply_to=config.apply_to,
    )


def apply_shifts(
    spec: FrugalSpec, train_domain: DomainSpec, shifts: Iterable[ShiftConfig]
) -> Tuple[FrugalSpec, DomainSpec]:
    """Apply configured shifts in order to the training or the test past"""
    names = spec.test_domain.covariate_names
    for config in shifts:
        shift = _shift_spec(config, names)
        if shift.apply_to == "test":
            spec = replace(spec, test_domain=apply_shift(spec.test_domain, shift))
        else:
            train_domain = apply_shift(train_domain, shift)
    return spec, train_domain


def _joint_spearman(config: SyntheticSpecConfig, covariate_s: np.ndarray) -> Dict[int, np.ndarray]:
    dim = covariate_s.shape[0]
    if isinstance(config.joint_spearman, list):
        shared = np.asarray(config.joint_spearman, dtype=float)
        return {x: shared for x in TREATMENT_LEVELS}
    if isinstance(config.joint_spearman, dict):
        return {int(x): np.asarray(m, dtype=float) for x, m in config.joint_spearman.items()}

    rows = config.outcome_spearman
    if rows is None or isinstance(rows, list):
        row = np.zeros(dim) if rows is None else np.asarray(rows, dtype=float)
        rows = {x: row for x in TREATMENT_LEVELS}
    else:
        rows = {int(x): np.asarray(r, dtype=float) for x, r in rows.items()}

    joints = {}
    for x in TREATMENT_LEVELS:
        joint = np.eye(dim + 1)
        joint[:dim, :dim] = covariate_s
        joint[:dim, dim] = rows[x]
        joint[dim, :dim] = rows[x]
        joints[x] = joint
    return joints


def build_synthetic(
    config: SyntheticSpecConfig, shifts: Iterable[ShiftConfig] = ()
) -> Tuple[FrugalSpec, DomainSpec]:
    """
    Build the test-domain FrugalSpec and the training past from a parametric spec

    Returns:
        (spec, train_domain) with the configured shifts applied
    """
    names = tuple(c.name for c in config.covariates)
    dim = len(names)
    covariate_s = np.asarray(config.covariate_spearman, dtype=float) if config.covariate_spearman else np.eye(dim)

    test_margins = tuple(to_margin(c.test) for c in config.covariates)
    train_margins = tuple(to_margin(c.train or c.test) for c in config.covariates)
    flags = tuple(
        c.discrete if c.discrete is not None else m.family == "bernoulli"
        for c, m in zip(config.covariates, test_margins)
    )
    causal = {int(x): to_margin(m) for x, m in config.causal_margins.items()}

    joint_s = _joint_spearman(config, covariate_s)
    if all(np.array_equal(joint_s[x], joint_s[0]) for x in TREATMENT_LEVELS):
        shared = correlation_from_spearman(joint_s[0])
        joints: Any = shared
    else:
        joints = {x: correlation_from_spearman(joint_s[x]) for x in TREATMENT_LEVELS}

    test_domain = DomainSpec(
        test_margins, correlation_from_spearman(covariate_s), _propensity(config.propensity, names), names
    )
    spec = FrugalSpec.build(test_domain, causal, joints, flags)
    train_domain = DomainSpec(
        train_margins,
        spec.test_domain.covariate_copula,
        _propensity(config.train_propensity or config.propensity, names),
        names,
    )
    return apply_shifts(spec, train_domain, shifts)


# Ingestion


@dataclass
class ColumnRoles:
    """Column roles for a study CSV; covariates default to every other column"""

    covariates: Optional[List[str]] = None
    treatment: str = "treatment"
    outcome: str = "y_factual"
    discrete: Optional[List[str]] = None
    trial: Optional[str] = None

    @classmethod
    def from_source(cls, source) -> "ColumnRoles":
        return cls(source.covariates, source.treatment, source.outcome, source.discrete, source.trial_column)


def ingest_csv(path: Union[str, Path], roles: Optional[ColumnRoles] = None) -> StudyTable:
    """
    Read a study CSV into a typed table

    Row coordinates in errors are 1-based file lines (the header is line 1).

    Args:
        path: CSV with a header row
        roles: Column roles

    Returns:
        StudyTable with float covariates/outcome and an integer treatment
    """
    roles = roles or ColumnRoles()
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise IngestionError(f"{path} has no header row") from e
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}") from e

    reserved = {roles.treatment, roles.outcome} | ({roles.trial} if roles.trial else set())
    covariates = list(roles.covariates) if roles.covariates else [c for c in raw.columns if c not in reserved]
    discrete = list(roles.discrete or [])
    needed = covariates + [roles.treatment, roles.outcome] + ([roles.trial] if roles.trial else [])
    for column in needed + discrete:
        if column not in raw.columns:
            raise IngestionError("declared column missing from header", column=column)
    if not covariates:
        raise IngestionError("no covariate columns")
    for column in discrete:
        if column not in covariates:
            raise IngestionError("discrete column is not a covariate", column=column)

    frame = pd.DataFrame(index=raw.index)
    for column in needed:
        cells = raw[column].str.strip()
        missing = cells.str.lower().isin(NA_TOKENS).to_numpy()
        if missing.any():
            raise IngestionError("missing value", row=int(np.argmax(missing)) + 2, column=column)
        values = pd.to_numeric(cells, errors="coerce")
        bad = values.isna().to_numpy()
        if bad.any():
            i = int(np.argmax(bad))
            raise IngestionError(f"non-numeric value '{cells.iloc[i]}'", row=i + 2, column=column)
        frame[column] = values.astype(float)

    for column in [roles.treatment] + discrete:
        non_binary = ~frame[column].isin([0.0, 1.0]).to_numpy()
        if non_binary.any():
            i = int(np.argmax(non_binary))
            raise IngestionError(
                f"binary column holds {frame[column].iloc[i]:g}", row=i + 2, column=column
            )
    frame[roles.treatment] = frame[roles.treatment].astype(int)

    logger.info(f"Ingested {len(frame)} rows from {path}: {len(covariates)} covariates, "
                f"{int(frame[roles.treatment].sum())} treated")
    for column in needed:
        col = frame[column]
        logger.info(f"  {column}: mean={col.mean():.4g} sd={col.std():.4g} min={col.min():.4g} max={col.max():.4g}")

    return StudyTable(frame, covariates, roles.treatment, roles.outcome, discrete, roles.trial)


# Results


@dataclass
class ResultsTable:
    """One row per (iteration, model, test kind), in a fixed column order"""

    frame: pd.DataFrame
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: List[Dict[str, Any]], metadata: Optional[Dict[str, Any]] = None) -> "ResultsTable":
        frame = pd.DataFrame(rows, columns=RESULTS_COLUMNS)
        frame["error"] = frame["error"].fillna("")
        frame = frame.sort_values(["iteration", "model", "test_kind"], kind="mergesort").reset_index(drop=True)
        return cls(frame, dict(metadata or {}))

    def __len__(self) -> int:
        return len(self.frame)

    def to_csv_text(self) -> str:
        out = self.frame.copy()
        for column in ("p_value", "statistic"):
            out[column] = [repr(float(v)) if pd.notna(v) else "" for v in self.frame[column]]
        return out.to_csv(index=False, lineterminator="\n")

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.to_csv_text(), encoding="utf-8")
        return path

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "ResultsTable":
        frame = pd.read_csv(path, keep_default_na=False, na_values={"p_value": [""], "statistic": [""]})
        return cls(frame)

    def pass_rates(self, threshold: float = PASS_THRESHOLD) -> List[Dict[str, Any]]:
        """Per (model, test kind): share of error-free iterations with p > threshold"""
        summary = []
        for (model, kind), group in self.frame.groupby(["model", "test_kind"], sort=True):
            ok = group[group["error"].astype(str) == ""]
            passed = int((ok["p_value"].astype(float) > threshold).sum())
            summary.append({
                "model": model,
                "test_kind": kind,
                "trials": int(len(ok)),
                "errors": int(len(group) - len(ok)),
                "passed": passed,
                "percent": 100.0 * passed / len(ok) if len(ok) else float("nan"),
            })
        return summary


def _result_row(iteration: int, model: str, kind: str, target: str, seed: int, report=None, error: str = ""):
    return {
        "iteration": iteration,
        "model": model,
        "test_kind": kind,
        "target": target,
        "p_value": report.p_value if report else float("nan"),
        "statistic": report.statistic if report else float("nan"),
        "degenerate": bool(report.degenerate) if report else False,
        "seed": seed,
        "out_of_support": report.out_of_support if report else 0,
        "error": error,
    }


# Orchestration


class SpecProvider:
    """Hands out (test spec, training past) per iteration"""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._cache: Dict[Any, Tuple[FrugalSpec, DomainSpec]] = {}
        self._table: Optional[StudyTable] = None
        self._train_table: Optional[StudyTable] = None
        self._trials: List[Any] = []

        if cfg.mode == "semi_synthetic":
            source = cfg.source
            roles = ColumnRoles.from_source(source)
            self._table = ingest_csv(source.path, roles)
            if source.train_path:
                self._train_table = ingest_csv(source.train_path, replace(roles, trial=None))
            if source.trial_column:
                self._trials = sorted(self._table.frame[source.trial_column].unique().tolist())
            fit = source.fit
            self.options = FitOptions(
                causal_family=fit.causal_family,
                propensity=fit.propensity,
                per_arm_copula=fit.per_arm_copula,
                weighting=fit.weighting,
                discrete=source.discrete,
            )

    def trial_for(self, iteration: int):
        if not self._trials:
            return None
        return self._trials[(iteration - 1) % len(self._trials)]

    def for_iteration(self, iteration: int) -> Tuple[FrugalSpec, DomainSpec]:
        key = self.trial_for(iteration)
        if key in self._cache:
            return self._cache[key]

        if self.cfg.mode == "synthetic":
            result = build_synthetic(self.cfg.spec, self.cfg.shifts)
        else:
            table = self._table
            if key is not None:
                table = table.select(table.frame[table.trial] == key)
                logger.info(f"Iteration {iteration}: fitting on trial {key} ({len(table.frame)} rows)")
            spec = fit_frugal_from_data(table, self.options)
            if self._train_table is not None:
                train_domain = fit_domain_from_data(self._train_table, self.options)
            else:
                train_domain = spec.test_domain
            result = apply_shifts(spec, train_domain, self.cfg.shifts)

        self._cache[key] = result
        return result


def select_models(cfg: ExperimentConfig, names: Optional[Sequence[str]]) -> ExperimentConfig:
    """Restrict the roster to the named models"""
    if not names:
        return cfg
    known = {m.name for m in cfg.models}
    unknown = [n for n in names if n not in known]
    if unknown:
        raise ConfigError("unknown models requested", [f"/models: no model named '{n}'" for n in unknown])
    return cfg.model_copy(update={"models": [m for m in cfg.models if m.name in set(names)]})


def run_experiment(
    cfg: ExperimentConfig,
    workers: Optional[int] = None,
    output_dir: Optional[Union[str, Path]] = None,
    write: bool = True,
) -> ResultsTable:
    """
    Run every (iteration, model, test kind) job of an experiment

    Failures inside a job become error rows; the run continues.

    Args:
        cfg: Validated config
        workers: Bootstrap worker processes (defaults to FRUGAL_BENCH_WORKERS)
        output_dir: Overrides cfg.output_dir
        write: Write results.csv, summary.txt and report.json

    Returns:
        ResultsTable sorted by iteration, model, test kind
    """
    workers = workers or settings.WORKERS
    digest = config_digest(cfg)
    tests = harness_config(cfg)
    models = [to_model_spec(m) for m in cfg.models]
    started = time.perf_counter()
    logger.info(f"Run '{cfg.name}' ({cfg.mode}) started: {cfg.iterations} iterations, "
                f"{len(models)} models, digest {digest[:12]}")

    provider = SpecProvider(cfg)
    rows = []
    for t in range(1, cfg.iterations + 1):
        seed = iteration_seed(cfg.master_seed, t)
        jobs = [(m, kind) for m in models for kind in TEST_KINDS if m.supports(kind)]
        try:
            spec, train_domain = provider.for_iteration(t)
        except Exception as e:
            logger.error(f"Iteration {t}: spec construction failed: {e}")
            rows.extend(_result_row(t, m.name, kind, tests.target, seed, error=_error_text(e)) for m, kind in jobs)
            continue

        for model, kind in jobs:
            harness = mean_regression_test if kind == "mean" else dist_regression_test
            try:
                report = harness(spec, train_domain, model, tests, seed, workers)
                rows.append(_result_row(t, model.name, kind, tests.target, seed, report))
            except Exception as e:
                logger.error(f"Iteration {t}, model '{model.name}', {kind} test failed: {e}")
                rows.append(_result_row(t, model.name, kind, tests.target, seed, error=_error_text(e)))
        logger.debug(f"Iteration {t}/{cfg.iterations} done")

    elapsed = time.perf_counter() - started
    table = ResultsTable.from_rows(rows, {
        "name": cfg.name,
        "config_digest": digest,
        "wall_clock_seconds": elapsed,
        "workers": workers,
    })
    logger.info(f"Run '{cfg.name}' finished in {elapsed:.1f}s with {len(table)} rows")

    if write:
        target = Path(output_dir or cfg.output_dir or settings.RESULTS_DIR / cfg.name)
        write_outputs(table, cfg, target)
    return table


def _error_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ").strip()


def format_summary(table: ResultsTable, cfg: ExperimentConfig) -> str:
    meta = table.metadata
    elapsed = meta.get("wall_clock_seconds", float("nan"))
    lines = [
        f"frugal-bench summary: {cfg.name}",
        f"config digest: {meta.get('config_digest', config_digest(cfg))}",
        f"mode: {cfg.mode}, iterations: {cfg.iterations}, master seed: {cfg.master_seed}",
        f"wall clock: {elapsed:.2f} s total, {elapsed / cfg.iterations:.3f} s per iteration",
        "",
        f"Percentage of p > {PASS_THRESHOLD}",
        f"{'model':<28}{'test':<16}{'pass':>8}{'trials':>8}{'errors':>8}",
    ]
    for entry in table.pass_rates():
        lines.append(
            f"{entry['model']:<28}{entry['test_kind']:<16}{entry['percent']:>7.1f}%"
            f"{entry['trials']:>8}{entry['errors']:>8}"
        )
    return "\n".join(lines) + "\n"


def write_outputs(table: ResultsTable, cfg: ExperimentConfig, output_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write results.csv, summary.txt and report.json"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    paths = {
        "results": table.to_csv(output_dir / RESULTS_CSV),
        "summary": output_dir / SUMMARY_TXT,
        "report": output_dir / REPORT_JSON,
    }
    paths["summary"].write_text(format_summary(table, cfg), encoding="utf-8")

    report = {
        "name": cfg.name,
        "mode": cfg.mode,
        "config_digest": table.metadata.get("config_digest", config_digest(cfg)),
        "config": cfg.model_dump(mode="json"),
        "rows": len(table),
        "errors": int((table.frame["error"] != "").sum()),
        "summary": [
            {**entry, "percent": None if np.isnan(entry["percent"]) else entry["percent"]}
            for entry in table.pass_rates()
        ],
        "wall_clock_seconds": table.metadata.get("wall_clock_seconds"),
        "workers": table.metadata.get("workers"),
    }
    with open(paths["report"], "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, default=str)

    table.metadata["output_dir"] = str(output_dir)
    logger.info(f"Wrote {RESULTS_CSV}, {SUMMARY_TXT}, {REPORT_JSON} to {output_dir}")
    return paths
