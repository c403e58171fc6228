"""Replicated experiment runner: estimation grids, statistics, reports.

A run is a grid over particle counts and replicate ids.  Each replicate
gets its own derived master seed, so cells are independent and the whole
grid is reproducible from the config alone; re-running a config produces
byte-identical raw rows.  Wall times are measured per run but are kept
out of the serialized raw-row section so that byte-reproducibility holds;
they surface only in the aggregates.

Statistics included: per-cell moments with bias/RMSE against a model's
exact oracle where one exists, log-log slope fits for rate checks,
paired same-seed comparisons against the lumped single-sequence
baseline, and a normality battery (skewness, excess kurtosis,
Anderson-Darling) for the central-limit behavior of the mass estimates.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from time import perf_counter
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .engine import EngineOptions, build_lumped_model, dac_smc, dac_smc_adaptive
from .errors import DacError, DegenerateFit, InsufficientRows, InvalidData, NoOracle
from .models import (
    DEFAULT_DATA,
    PHI_NAMES,
    discrete_toy,
    gaussian_tree,
    load_schools_csv,
    oracle_eval,
    run_partial,
    schools_model,
    simulate_data,
    timevarying_model,
)
from .particles import TestFunction, target_estimates
from .rng import substream_seed

__all__ = [
    "RAW_SCHEMA", "AGGREGATE_SCHEMA", "UNBIASED_BAND_SE", "PAIRED_BAND_SE",
    "ExperimentConfig", "ReplicateRow", "PhiAggregate", "CellAggregate",
    "EstimateReport", "PairedCell", "ComparisonTable", "GofDiagnostics",
    "build_model", "test_functions", "run_experiment", "aggregate_cells",
    "slope_fit", "paired_compare", "gof_tests", "write_report",
]

RAW_SCHEMA = "dacsmc-raw-v1"
AGGREGATE_SCHEMA = "dacsmc-aggregates-v1"

# statistical bands used by the shipped checks; recorded in every report
UNBIASED_BAND_SE = 4.0
PAIRED_BAND_SE = 3.0


# ---------------------------------------------------------------------------
# test function registry

def _phi_coord0(paths):
    return paths[:, 0]


def _phi_last(paths):
    return paths[:, -1]


def _phi_mean(paths):
    return paths.mean(axis=1)


_PHI_EVALUATORS = {"coord0": _phi_coord0, "last": _phi_last, "mean": _phi_mean}


def test_functions(names: Sequence[str], node: int) -> tuple:
    """Materialize registered test functions against a node's path space."""
    out = []
    for name in names:
        try:
            evaluator = _PHI_EVALUATORS[name]
        except KeyError:
            raise DacError(
                f"unknown test function {name!r}; registered: "
                f"{sorted(_PHI_EVALUATORS)}") from None
        out.append(TestFunction(name=name, node=node, evaluator=evaluator))
    return tuple(out)


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment grid."""

    model: str
    model_params: Mapping = field(default_factory=dict)
    ns: tuple = (256,)
    replicates: int = 100
    seed: int = 0
    strategy: str = "generic"
    ess_threshold: float | None = None
    per_node_n: Mapping | None = None
    phis: tuple = PHI_NAMES
    baseline: str = "none"
    parallel_children: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "phis", tuple(str(p) for p in self.phis))
        if self.per_node_n is not None:
            object.__setattr__(self, "per_node_n",
                               {int(k): int(v) for k, v in self.per_node_n.items()})
        if self.replicates < 2:
            raise DacError("need at least 2 replicates for variance statistics")
        if not self.ns:
            raise DacError("need at least one particle count")
        if any(n < 1 for n in self.ns):
            raise DacError("particle counts must be >= 1")
        if any(b >= a for b, a in zip(self.ns, self.ns[1:])):
            raise DacError("particle counts must be strictly increasing")
        if self.baseline not in ("none", "asmc"):
            raise DacError(f"unknown baseline {self.baseline!r}")
        for name in self.phis:
            if name not in _PHI_EVALUATORS:
                raise DacError(f"unknown test function {name!r}")
        # the engine options constructor validates strategy and threshold
        EngineOptions(strategy=self.strategy, n=self.ns[0],
                      ess_threshold=self.ess_threshold, seed=self.seed)


_MODEL_DEFAULTS = {
    "discrete_toy": {"depth": 1, "branching": 2, "alphabet": 4, "seed": 0},
    "gaussian_tree": {"depth": 2, "branching": 2},
    "schools": {},
    "timevarying": {"horizon": 4, "n_leaves": 2},
}


def build_model(name: str, params: Mapping):
    """Resolve a model id plus parameters into a built model.

    Unspecified parameters fall back to per-model defaults, so every
    bundled model can be launched from the command line with no config.
    """
    if name not in _MODEL_DEFAULTS:
        raise DacError(f"unknown model {name!r}; available: {sorted(_MODEL_DEFAULTS)}")
    params = {**_MODEL_DEFAULTS[name], **dict(params)}
    try:
        if name == "discrete_toy":
            return discrete_toy(**params)
        if name == "gaussian_tree":
            return gaussian_tree(**params)
        if name == "schools":
            if "csv" in params:
                return schools_model(load_schools_csv(params["csv"]))
            return schools_model(params.get("data", DEFAULT_DATA))
        horizon = int(params.pop("horizon"))
        n_leaves = int(params.pop("n_leaves"))
        if "y" in params:
            data = np.asarray(params["y"], dtype=float)
        else:
            data = simulate_data(horizon, n_leaves, int(params.get("data_seed", 0)))
        return timevarying_model(horizon, n_leaves, data,
                                 variant=params.get("variant", "nested"))
    except TypeError as exc:
        raise DacError(f"invalid parameters for model {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# rows and aggregates

@dataclass(frozen=True)
class ReplicateRow:
    """One engine run.  ``wall_time`` never enters the serialized raw rows."""

    n: int
    replicate: int
    ok: bool
    error: str
    log_z: float
    mu: Mapping
    node_mass: Mapping
    node_ess: Mapping
    wall_time: float


@dataclass(frozen=True)
class PhiAggregate:
    mean: float
    variance: float
    bias: float
    rmse: float


@dataclass(frozen=True)
class CellAggregate:
    n: int
    count_ok: int
    count_failed: int
    mean_log_z: float
    var_log_z: float
    mean_z: float
    var_z: float
    se_z: float
    bias_z: float
    rmse_z: float
    mean_wall_time: float
    phi: Mapping


def _run_once(model, config: ExperimentConfig, phis, n: int, replicate: int,
              partial: bool) -> ReplicateRow:
    opts = EngineOptions(
        strategy=config.strategy, n=n, per_node_n=config.per_node_n,
        ess_threshold=config.ess_threshold,
        seed=substream_seed(config.seed, replicate),
        parallel_children=config.parallel_children)
    trace: list = []
    start = perf_counter()
    try:
        if partial:
            cloud = run_partial(model, opts, trace)
        elif config.ess_threshold is not None:
            cloud = dac_smc_adaptive(model, opts=opts, trace=trace)
        else:
            cloud = dac_smc(model, opts=opts, trace=trace)
        estimates = target_estimates(cloud, model, phis)
    except DacError as exc:
        return ReplicateRow(
            n=n, replicate=replicate, ok=False,
            error=f"{type(exc).__name__}: {exc}", log_z=float("nan"),
            mu={phi.name: float("nan") for phi in phis},
            node_mass={}, node_ess={}, wall_time=perf_counter() - start)
    wall = perf_counter() - start
    return ReplicateRow(
        n=n, replicate=replicate, ok=True, error="",
        log_z=float(estimates.log_z),
        mu={phi.name: float(m) for phi, m in zip(phis, estimates.mu)},
        node_mass={rec.node: float(rec.log_mass) for rec in trace},
        node_ess={rec.node: float(rec.ess) for rec in trace},
        wall_time=wall)


def aggregate_cells(rows: Sequence[ReplicateRow], phi_names: Sequence[str],
                    oracle_log_z: float | None,
                    oracle_mu: Mapping | None) -> tuple:
    """Fold raw rows into per-N aggregates (successes only)."""
    nan = float("nan")
    cells = []
    for n in sorted({row.n for row in rows}):
        cell_rows = [row for row in rows if row.n == n]
        ok_rows = [row for row in cell_rows if row.ok]
        count_ok, count_failed = len(ok_rows), len(cell_rows) - len(ok_rows)
        mean_log_z = var_log_z = mean_z = var_z = se_z = nan
        bias_z = rmse_z = mean_wall = nan
        phi_stats = {name: PhiAggregate(nan, nan, nan, nan) for name in phi_names}
        if count_ok >= 1:
            log_zs = np.array([row.log_z for row in ok_rows])
            zs = np.exp(log_zs)
            mean_log_z = float(log_zs.mean())
            mean_z = float(zs.mean())
            mean_wall = float(np.mean([row.wall_time for row in ok_rows]))
            if count_ok >= 2:
                var_log_z = float(log_zs.var(ddof=1))
                var_z = float(zs.var(ddof=1))
                se_z = math.sqrt(var_z / count_ok)
            if oracle_log_z is not None:
                z_true = math.exp(oracle_log_z)
                bias_z = mean_z - z_true
                rmse_z = float(np.sqrt(np.mean((zs - z_true) ** 2)))
            for name in phi_names:
                vals = np.array([row.mu[name] for row in ok_rows])
                good = vals[np.isfinite(vals)]
                if good.size == 0:
                    continue
                p_mean = float(good.mean())
                p_var = float(good.var(ddof=1)) if good.size >= 2 else nan
                p_bias = p_rmse = nan
                if oracle_mu is not None and name in oracle_mu:
                    p_bias = p_mean - oracle_mu[name]
                    p_rmse = float(np.sqrt(np.mean((good - oracle_mu[name]) ** 2)))
                phi_stats[name] = PhiAggregate(p_mean, p_var, p_bias, p_rmse)
        cells.append(CellAggregate(
            n=n, count_ok=count_ok, count_failed=count_failed,
            mean_log_z=mean_log_z, var_log_z=var_log_z, mean_z=mean_z,
            var_z=var_z, se_z=se_z, bias_z=bias_z, rmse_z=rmse_z,
            mean_wall_time=mean_wall, phi=phi_stats))
    return tuple(cells)


def _fit_report_slopes(cells: Sequence[CellAggregate]) -> dict:
    slopes = {}
    for label, pick in (("bias_z", lambda c: abs(c.bias_z)),
                        ("rmse_z", lambda c: c.rmse_z)):
        points = []
        for cell in cells:
            value = pick(cell)
            if np.isfinite(value) and value > 0:
                points.append((math.log(cell.n), math.log(value)))
        if len(points) >= 3:
            try:
                slopes[label] = slope_fit(points)
            except DegenerateFit:
                pass
    return slopes


# ---------------------------------------------------------------------------
# reports

def _fmt(value) -> str:
    return repr(float(value))


def _sanitize(text: str) -> str:
    return text.replace(",", ";").replace("\n", " ").replace("\r", " ")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass(frozen=True)
class EstimateReport:
    """Raw rows plus the aggregates folded from them (both carried)."""

    config: ExperimentConfig
    phi_names: tuple
    oracle_log_z: float | None
    oracle_mu: Mapping | None
    rows: tuple
    cells: tuple
    slopes: Mapping

    @property
    def all_ok(self) -> bool:
        return all(row.ok for row in self.rows)

    def raw_csv(self) -> str:
        """Byte-reproducible raw-row section (deterministic columns only)."""
        nodes = sorted({u for row in self.rows for u in row.node_mass})
        header = (["n", "replicate", "status", "error", "log_z"]
                  + [f"mu_{name}" for name in self.phi_names]
                  + [f"zmass_{u}" for u in nodes]
                  + [f"ess_{u}" for u in nodes])
        lines = [f"# schema: {RAW_SCHEMA}", ",".join(header)]
        nan = float("nan")
        for row in self.rows:
            fields = [str(row.n), str(row.replicate),
                      "ok" if row.ok else "failed", _sanitize(row.error),
                      _fmt(row.log_z)]
            fields += [_fmt(row.mu.get(name, nan)) for name in self.phi_names]
            fields += [_fmt(row.node_mass.get(u, nan)) for u in nodes]
            fields += [_fmt(row.node_ess.get(u, nan)) for u in nodes]
            lines.append(",".join(fields))
        return "\n".join(lines) + "\n"

    def aggregates_json(self) -> str:
        doc = {
            "schema": AGGREGATE_SCHEMA,
            "config": _jsonable(dataclasses.asdict(self.config)),
            "oracle": None if self.oracle_log_z is None else {
                "log_z": self.oracle_log_z,
                "mu": _jsonable(self.oracle_mu or {}),
            },
            "cells": [_jsonable(dataclasses.asdict(cell)) for cell in self.cells],
            "slopes": {k: {"slope": s, "stderr": e}
                       for k, (s, e) in self.slopes.items()},
            "failures": sum(0 if row.ok else 1 for row in self.rows),
            "thresholds": {"unbiased_band_se": UNBIASED_BAND_SE,
                           "paired_band_se": PAIRED_BAND_SE},
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def run_experiment(config: ExperimentConfig) -> EstimateReport:
    """Run the full (N, replicate) grid described by ``config``.

    Replicate ``r`` uses the derived master seed for scope ``(seed, r)``
    at every N, so cells are deterministic and replicates independent.
    Engine failures abort only their own run and are recorded as failure
    rows; aggregates are computed over the successes.
    """
    model = build_model(config.model, config.model_params)
    root = model.tree.root
    phis = test_functions(config.phis, root)
    try:
        oracle_log_z, oracle_mus = oracle_eval(model, root, phis)
        oracle_mu = {name: float(m) for name, m in zip(config.phis, oracle_mus)}
    except NoOracle:
        oracle_log_z, oracle_mu = None, None
    partial = model.meta.get("variant") == "partial"

    rows = []
    for n in config.ns:
        for replicate in range(config.replicates):
            rows.append(_run_once(model, config, phis, n, replicate, partial))
    rows.sort(key=lambda row: (row.n, row.replicate))
    cells = aggregate_cells(rows, config.phis, oracle_log_z, oracle_mu)
    slopes = _fit_report_slopes(cells) if oracle_log_z is not None else {}
    return EstimateReport(
        config=config, phi_names=config.phis, oracle_log_z=oracle_log_z,
        oracle_mu=oracle_mu, rows=tuple(rows), cells=cells, slopes=slopes)


# ---------------------------------------------------------------------------
# statistics

def slope_fit(points: Sequence) -> tuple:
    """Ordinary least squares slope and its standard error."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise DegenerateFit(f"need at least 3 points, got {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateFit("non-finite point in slope fit")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx <= 0.0:
        raise DegenerateFit("zero spread in abscissae")
    slope = float(dx @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * dx
    sigma2 = float(resid @ resid) / (len(pts) - 2)
    return slope, math.sqrt(sigma2 / sxx)


@dataclass(frozen=True)
class PairedCell:
    n: int
    count: int
    var_dac: float
    var_asmc: float
    difference: float
    se_difference: float
    dac_not_worse: bool


@dataclass(frozen=True)
class ComparisonTable:
    config: ExperimentConfig
    cells: tuple
    rows: tuple  # (n, replicate, ok, z_dac, z_asmc)

    @property
    def all_ok(self) -> bool:
        return all(row[2] for row in self.rows)

    def raw_csv(self) -> str:
        lines = [f"# schema: {RAW_SCHEMA}", "n,replicate,status,z_dac,z_asmc"]
        for n, replicate, ok, z_dac, z_asmc in self.rows:
            lines.append(",".join([str(n), str(replicate),
                                   "ok" if ok else "failed",
                                   _fmt(z_dac), _fmt(z_asmc)]))
        return "\n".join(lines) + "\n"

    def cells_json(self) -> str:
        doc = {
            "schema": AGGREGATE_SCHEMA,
            "config": _jsonable(dataclasses.asdict(self.config)),
            "cells": [_jsonable(dataclasses.asdict(cell)) for cell in self.cells],
            "failures": sum(0 if row[2] else 1 for row in self.rows),
            "thresholds": {"paired_band_se": PAIRED_BAND_SE},
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def paired_compare(config: ExperimentConfig) -> ComparisonTable:
    """Same-seed engine-vs-baseline variance comparison per N.

    Each replicate runs both the tree engine and the lumped
    single-sequence baseline from the same derived seed.  The variance
    difference carries a standard error computed from per-replicate
    influence values, and the verdict flags whether the tree engine's
    variance is within the banded bound of the baseline's.
    """
    if config.per_node_n is not None:
        raise DacError("the paired comparison needs one uniform particle count")
    model = build_model(config.model, config.model_params)
    line_model = build_lumped_model(model)
    nan = float("nan")

    raw = []
    for n in config.ns:
        for replicate in range(config.replicates):
            opts = EngineOptions(
                strategy=config.strategy, n=n,
                ess_threshold=config.ess_threshold,
                seed=substream_seed(config.seed, replicate),
                parallel_children=config.parallel_children)
            line_opts = dataclasses.replace(
                opts, strategy="generic", ess_threshold=None)
            try:
                if config.ess_threshold is not None:
                    cloud = dac_smc_adaptive(model, opts=opts)
                else:
                    cloud = dac_smc(model, opts=opts)
                z_dac = math.exp(target_estimates(cloud, model, ()).log_z)
                base = dac_smc(line_model, opts=line_opts)
                z_asmc = math.exp(target_estimates(base, line_model, ()).log_z)
                raw.append((n, replicate, True, z_dac, z_asmc))
            except DacError:
                raw.append((n, replicate, False, nan, nan))

    cells = []
    for n in config.ns:
        pairs = [(zd, za) for (m, _, ok, zd, za) in raw if m == n and ok]
        count = len(pairs)
        if count < 2:
            cells.append(PairedCell(n, count, nan, nan, nan, nan, False))
            continue
        z_dac = np.array([p[0] for p in pairs])
        z_asmc = np.array([p[1] for p in pairs])
        var_dac = float(z_dac.var(ddof=1))
        var_asmc = float(z_asmc.var(ddof=1))
        influence = (z_dac - z_dac.mean()) ** 2 - (z_asmc - z_asmc.mean()) ** 2
        se = (count / (count - 1)) * float(influence.std(ddof=1)) / math.sqrt(count)
        difference = var_dac - var_asmc
        cells.append(PairedCell(
            n=n, count=count, var_dac=var_dac, var_asmc=var_asmc,
            difference=difference, se_difference=se,
            dac_not_worse=bool(difference <= PAIRED_BAND_SE * se)))
    return ComparisonTable(config=config, cells=tuple(cells), rows=tuple(raw))


@dataclass(frozen=True)
class GofDiagnostics:
    count: int
    skewness: float
    excess_kurtosis: float
    ad_statistic: float
    p_value: float
    degenerate: bool


def _ad_pvalue(adjusted: float) -> float:
    # case-3 (estimated mean and variance) p-value for the adjusted statistic
    if adjusted >= 0.6:
        return float(np.exp(1.2937 - 5.709 * adjusted + 0.0186 * adjusted ** 2))
    if adjusted >= 0.34:
        return float(np.exp(0.9177 - 4.279 * adjusted - 1.38 * adjusted ** 2))
    if adjusted >= 0.2:
        return float(1.0 - np.exp(-8.318 + 42.796 * adjusted - 59.938 * adjusted ** 2))
    return float(1.0 - np.exp(-13.436 + 101.14 * adjusted - 223.73 * adjusted ** 2))


def gof_tests(rows: Sequence[float]) -> GofDiagnostics:
    """Normality battery over one cell's mass estimates.

    Standardizes with the sample mean and deviation, then reports
    skewness, excess kurtosis, and the Anderson-Darling statistic with a
    p-value adjusted for the estimated parameters.  Constant input is
    flagged degenerate rather than tested.
    """
    values = np.asarray(list(rows), dtype=float)
    if values.size < 500:
        raise InsufficientRows(f"need >= 500 rows, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise InvalidData("non-finite value in goodness-of-fit rows")
    count = int(values.size)
    sd = float(values.std(ddof=1))
    nan = float("nan")
    if sd == 0.0:
        return GofDiagnostics(count=count, skewness=nan, excess_kurtosis=nan,
                              ad_statistic=nan, p_value=nan, degenerate=True)
    standardized = (values - values.mean()) / sd
    statistic = float(scipy_stats.anderson(values, "norm").statistic)
    adjusted = statistic * (1.0 + 0.75 / count + 2.25 / count ** 2)
    return GofDiagnostics(
        count=count,
        skewness=float(scipy_stats.skew(standardized)),
        excess_kurtosis=float(scipy_stats.kurtosis(standardized)),
        ad_statistic=statistic,
        p_value=_ad_pvalue(adjusted),
        degenerate=False)


def write_report(report, path: str, fmt: str) -> None:
    """Serialize a report: ``csv`` emits raw rows, ``json`` the aggregates."""
    if fmt == "csv":
        text = report.raw_csv()
    elif fmt == "json":
        text = (report.aggregates_json() if hasattr(report, "aggregates_json")
                else report.cells_json())
    else:
        raise DacError(f"unknown format {fmt!r}")
    if path in ("-", ""):
        print(text, end="")
    else:
        with open(path, "w") as handle:
            handle.write(text)
