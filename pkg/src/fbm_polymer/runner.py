"""
Experiment runner for fbm-polymer.

Loads a declarative run configuration, applies flag and environment
overrides, dispatches one subcommand, and writes deterministic CSV or
JSON-lines artifacts in which every row carries the seed and the
configuration digest.
"""

import argparse
import csv
import io
import json
import logging
import math
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import AliasChoices, BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from . import bounds, circle, estimators, polymer, residue
from .environment import EnvConfig, as_hurst, sample_env
from .errors import ArtifactError, ConfigError, InvariantViolation, PolymerError
from .records import BoundReport, EstimateRecord, ReplicaMap, digest_of
from .streams import StreamKey
from .walk import ENUMERATION_LIMIT, skeleton_count

logger = logging.getLogger(__name__)

Subcommand = Literal[
    "sample-field",
    "partition",
    "estimate-U",
    "lyapunov",
    "superadd",
    "concentration",
    "bounds",
    "residue",
    "circle",
    "lower-bound",
]

Row = Dict[str, Any]

# Fields that change where or how results are written, never what they are.
OUTPUT_FIELDS = {"out", "format", "workers", "append", "plot_data"}

PLOT_COLUMNS = {
    "lyapunov": ("t", "U_hat_over_t", "se"),
    "bounds": ("name", "param", "bound", "empirical"),
    "generic": ("t", "value", "se", "bound"),
}

PARTITION_TOLERANCE = 1e-12

DEFAULT_DECOMPOSITION_CASES: Tuple[Tuple[int, float, float], ...] = (
    (2, 2.25, 2.75),
    (2, 2.0, 3.0),
    (2, 2.5, 2.6),
    (3, 3.0, 4.0),
    (3, 3.1, 3.9),
    (4, 4.0, 4.5),
    (4, 4.5, 5.0),
    (5, 5.2, 5.8),
    (6, 6.0, 7.0),
    (8, 8.25, 8.5),
)


class RunSettings(BaseSettings):
    """Environment overrides for a run."""

    model_config = SettingsConfigDict(env_prefix="FBM_POLYMER_", env_file=".env", extra="ignore")

    seed: Optional[int] = Field(
        default=None,
        ge=0,
        description="Root seed; overrides the config file, not --seed",
    )
    log_level: str = Field(
        default="INFO",
        description="Logging level of the runner",
    )


class RunConfig(BaseModel):
    """Declarative description of one run."""

    subcommand: Subcommand
    hurst: float = Field(default=0.5, gt=0.0, lt=1.0, description="Hurst parameter H")
    kappa: float = Field(default=1.0, gt=0.0, description="Jump rate of the walk")
    dimension: int = Field(default=1, ge=1, description="Lattice dimension d")
    t: Optional[float] = Field(default=None, gt=0.0, description="Horizon")
    t_grid: Optional[List[float]] = Field(default=None, description="Horizons of a trace")
    hurst_grid: List[float] = Field(default=[0.3, 0.5, 0.75], description="Hurst values of scans")
    h_grid: float = Field(
        default=0.125,
        gt=0.0,
        validation_alias=AliasChoices("h_grid", "grid_step"),
        description="Time grid step",
    )
    box_radius: Optional[int] = Field(default=None, ge=0, description="Site box radius of sample-field")
    cap: Optional[int] = Field(default=None, ge=0, description="Jump cap of the partition cross-check")
    env_replicas: int = Field(default=32, ge=1, description="Environment replicas")
    seed: int = Field(default=0, ge=0, le=2**64 - 1, description="Root seed")
    m_values: List[int] = Field(default=[1, 2, 3, 4], description="First-return sizes of lower-bound")
    n_values: List[int] = Field(default=[2, 3, 4, 5, 6], description="Horizons of the superadd pairs")
    residue_n: List[int] = Field(default=[4, 8, 16, 32], description="n values of the residue scan")
    residue_times: List[float] = Field(
        default=[0.5, 1.0, 1.5, 2.0, 2.5, 3.0], description="(t, s) grid of the isometry check"
    )
    decomposition_cases: List[Tuple[int, float, float]] = Field(
        default=list(DEFAULT_DECOMPOSITION_CASES), description="(l, t1, t2) cases of the decomposition check"
    )
    kernel_coefficients: List[float] = Field(default=[0.0, 1.0], description="Fourier coefficients of Q")
    mc_samples: int = Field(default=100_000, ge=2, description="Monte Carlo samples of the bounds checks")
    out: Optional[str] = Field(default=None, description="Artifact path")
    format: Literal["csv", "json"] = "csv"
    workers: Optional[int] = Field(default=None, ge=1, description="Worker processes")
    zero_field: bool = False
    append: bool = False
    plot_data: Optional[str] = Field(default=None, description="Tidy plot-data path")

    @model_validator(mode="after")
    def _check_subcommand(self) -> "RunConfig":
        if self.kappa * self.h_grid > 0.2:
            raise ValueError(f"kappa * h_grid = {self.kappa * self.h_grid:.4f} exceeds 0.2; lower h_grid")
        check = _PRECONDITIONS.get(self.subcommand)
        if check:
            check(self)
        return self

    @property
    def output_path(self) -> Path:
        return Path(self.out or f"{self.subcommand}.{self.format}")

    @property
    def worker_count(self) -> int:
        return self.workers or os.cpu_count() or 1

    def params(self) -> estimators.PolymerParams:
        return estimators.PolymerParams(
            hurst=self.hurst,
            kappa=self.kappa,
            dimension=self.dimension,
            grid_step=self.h_grid,
            zero_field=self.zero_field,
        )

    def digest(self) -> str:
        """Digest of everything that determines the results."""
        return digest_of(self.model_dump(mode="json", exclude=OUTPUT_FIELDS))


def _on_grid(value: float, step: float) -> bool:
    ratio = value / step
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio)


def _need_t(config: RunConfig) -> float:
    if config.t is None:
        raise ValueError(f"{config.subcommand} needs t")
    if not _on_grid(config.t, config.h_grid):
        raise ValueError(f"t={config.t} is not a multiple of h_grid={config.h_grid}")
    return config.t


def _need_grid(config: RunConfig) -> List[float]:
    grid = config.t_grid
    if not grid or len(grid) < 2:
        raise ValueError(f"{config.subcommand} needs a t_grid of at least two horizons")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("t_grid must be strictly increasing")
    if grid[0] <= 0 or grid[-1] > estimators.MAX_DESK_HORIZON:
        raise ValueError(f"t_grid must lie in (0, {estimators.MAX_DESK_HORIZON}]")
    off = [t for t in grid if not _on_grid(t, config.h_grid)]
    if off:
        raise ValueError(f"t_grid values {off} are not multiples of h_grid={config.h_grid}")
    return grid


def _check_partition(config: RunConfig) -> None:
    cells = int(round(_need_t(config) / config.h_grid))
    if skeleton_count(cells, config.dimension) > ENUMERATION_LIMIT:
        raise ValueError(f"partition enumerates (2d+1)^m paths; m={cells} is too large, lower t")


def _check_estimate(config: RunConfig) -> None:
    _need_t(config)
    if config.env_replicas < 2:
        raise ValueError("estimate-U needs env_replicas >= 2")


def _check_superadd(config: RunConfig) -> None:
    if not config.n_values or min(config.n_values) < 2:
        raise ValueError("superadd needs n_values >= 2")
    if 2 * max(config.n_values) + 1 > estimators.MAX_DESK_HORIZON:
        raise ValueError(f"superadd needs 2 max(n_values) + 1 <= {estimators.MAX_DESK_HORIZON}")


def _check_concentration(config: RunConfig) -> None:
    t = _need_t(config)
    if t != int(t) or t < 2:
        raise ValueError("concentration needs an integer t >= 2")
    if config.env_replicas < 200:
        raise ValueError("concentration needs env_replicas >= 200")


def _check_circle(config: RunConfig) -> None:
    _need_grid(config)
    if config.hurst <= 0.5:
        raise ValueError("circle needs hurst > 0.5")
    if config.dimension != 1:
        raise ValueError("circle runs on Z; set dimension = 1")
    if not config.kernel_coefficients or min(config.kernel_coefficients) < 0:
        raise ValueError("kernel_coefficients must be a non-empty list of nonnegative numbers")


def _check_lower_bound(config: RunConfig) -> None:
    if not config.m_values or min(config.m_values) < 1:
        raise ValueError("lower-bound needs m_values >= 1")
    for m in config.m_values:
        horizon = bounds.lower_bound_horizon(m, config.dimension, config.kappa)
        if not _on_grid(horizon, config.h_grid):
            raise ValueError(f"T = 2md/kappa = {horizon} is not a multiple of h_grid={config.h_grid}")


def _check_scan_grid(config: RunConfig) -> None:
    if not config.hurst_grid or any(not 0 < h < 1 for h in config.hurst_grid):
        raise ValueError("hurst_grid values must lie in (0, 1)")


def _check_bounds(config: RunConfig) -> None:
    _check_scan_grid(config)
    if config.t is not None:
        _need_t(config)


_PRECONDITIONS: Dict[str, Callable[[RunConfig], Any]] = {
    "sample-field": _need_t,
    "partition": _check_partition,
    "estimate-U": _check_estimate,
    "lyapunov": _need_grid,
    "superadd": _check_superadd,
    "concentration": _check_concentration,
    "bounds": _check_bounds,
    "residue": _check_scan_grid,
    "circle": _check_circle,
    "lower-bound": _check_lower_bound,
}


class RunOutcome(BaseModel):
    """What a run produced."""

    path: str
    rows: int
    violations: List[str] = Field(default_factory=list)
    plot_path: Optional[str] = None


class HandlerResult(BaseModel):
    rows: List[Row]
    plot_kind: str = "generic"
    violations: List[str] = Field(default_factory=list)


def _report_row(report: BoundReport) -> Row:
    return {
        "name": report.name,
        "param": json.dumps(report.params, sort_keys=True),
        "bound": report.bound_value,
        "empirical": report.empirical_value,
        "satisfied": report.satisfied,
        "margin": report.margin,
    }


def _reports_result(checked: Sequence[BoundReport], reported: Sequence[BoundReport] = ()) -> HandlerResult:
    """Rows for reports; only the checked ones can fail the run."""
    violations = [report.name for report in checked if not report.satisfied]
    rows = [_report_row(report) for report in [*checked, *reported]]
    return HandlerResult(rows=rows, plot_kind="bounds", violations=violations)


def _sample_field(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    env_config = EnvConfig(
        hurst=config.hurst,
        dimension=config.dimension,
        box_radius=config.box_radius or 0,
        t_max=config.t,
        grid_step=config.h_grid,
        seed=config.seed,
    )
    env = sample_env(env_config, stream, zero_field=config.zero_field)
    rows = []
    for site in env_config.sites():
        values = env.at(site)
        for k, value in enumerate(values):
            rows.append({"site": json.dumps(list(site)), "cell": k, "t": k * config.h_grid, "value": float(value)})
    return HandlerResult(rows=rows)


def _partition_case(
    config: EnvConfig, kappa: float, cap: int, zero_field: bool, stream: StreamKey
) -> List[Tuple[Optional[int], float, float]]:
    env = sample_env(config, stream, zero_field=zero_field)
    out = []
    for budget in (None, cap):
        dp = polymer.dp_partition(env, kappa, budget)
        oracle = polymer.brute_force_partition(env, kappa, budget)
        out.append((budget, dp.log_u, oracle.log_u))
    return out


def _partition(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    cells = int(round(config.t / config.h_grid))
    env_config = EnvConfig(
        hurst=config.hurst,
        dimension=config.dimension,
        box_radius=cells,
        t_max=config.t,
        grid_step=config.h_grid,
        seed=config.seed,
    )
    cap = config.cap if config.cap is not None else cells // 2
    worker = partial(_partition_case, env_config, config.kappa, cap, config.zero_field)
    rows, violations = [], []
    for index, cases in enumerate(mapper(worker, stream.replicas(config.env_replicas))):
        for budget, log_dp, log_enum in cases:
            u = math.exp(log_enum)
            diff = abs(math.exp(log_dp) - u)
            if diff > PARTITION_TOLERANCE * max(1.0, u):
                violations.append(f"partition replica {index} cap {budget}")
            rows.append(
                {
                    "replica": index,
                    "cap": "" if budget is None else budget,
                    "log_u_dp": log_dp,
                    "log_u_enum": log_enum,
                    "abs_diff": diff,
                }
            )
    worst = max((row["abs_diff"] for row in rows), default=0.0)
    logger.info(f"DP vs enumeration: max |diff| {worst:.3e} over {len(rows)} cases")
    return HandlerResult(rows=rows, violations=violations)


def _estimate(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    params = config.params()
    logs = estimators.replica_logs([config.t], params, config.env_replicas, stream, mapper)[float(config.t)]
    violations = []
    if np.any(logs[:, 0] > logs[:, 1]):
        violations.append("truncation-monotonicity")
    rows = []
    for truncated, column in ((True, 0), (False, 1)):
        record = EstimateRecord.from_samples(
            logs[:, column], seed=stream.seed, config_digest=config.digest()
        )
        bound: Any = ""
        if truncated and params.hurst.rough:
            bound = bounds.u_hat_linear_bound(config.t, config.kappa, params.hurst)
            if record.value > bound:
                violations.append("u-hat-linear-bound")
        rows.append(
            {
                "t": config.t,
                "truncated": truncated,
                "value": record.value,
                "se": record.std_error,
                "replicas": record.replicas,
                "bound": bound,
            }
        )
    return HandlerResult(rows=rows, violations=violations)


def _lyapunov(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    trace = estimators.lyapunov_trace(config.t_grid, config.params(), config.env_replicas, stream, mapper)
    rows: List[Row] = []
    for t, record, total, normalized in zip(trace.t_grid, trace.records, trace.u_hat, trace.normalized()):
        rows.append(
            {
                "kind": "trace",
                "t": t,
                "U_hat_over_t": record.value,
                "se": record.std_error,
                "U_hat": total.value,
                "normalized": "" if normalized is None else normalized,
            }
        )
    rows.append(
        {
            "kind": "fit",
            "slope": trace.slope,
            "intercept": trace.intercept,
            "slope_se": trace.slope_se,
            "ci_low": trace.slope_ci[0],
            "ci_high": trace.slope_ci[1],
            "method": trace.method,
        }
    )
    return HandlerResult(rows=rows, plot_kind="lyapunov")


def _superadd(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    pairs = [(n, m) for n in config.n_values for m in config.n_values]
    scan = estimators.superadditivity_scan(pairs, config.params(), config.env_replicas, stream, mapper)
    rows: List[Row] = [
        {
            "kind": "defect",
            "n": item.n,
            "m": item.m,
            "t": item.n + item.m + 1,
            "value": item.defect.value,
            "se": item.defect.std_error,
            "normalized": item.normalized,
            "normalized_se": item.normalized_se,
        }
        for item in scan.defects
    ]
    rows.append({"kind": "fit", "c_hat": scan.c_hat})
    return HandlerResult(rows=rows)


def _concentration(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    n = int(config.t)
    params = config.params()
    check = estimators.concentration_check(n, params, config.env_replicas, stream, mapper=mapper)
    profile = estimators.concentration_profile(n, params, config.env_replicas, stream, mapper=mapper)
    return _reports_result([], [check, *profile])


def _bounds(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    horizon = config.t or 2.0
    checked: List[BoundReport] = []
    reported: List[BoundReport] = []
    for lam in (0.5, 1.0, 2.0, 4.0):
        for n in range(math.floor(lam) + 1, 13):
            checked.append(bounds.poisson_tail_report(lam, n))
    for m in range(1, 7):
        expected = bounds.first_return_count(m)
        counted = bounds.count_first_returns(m)
        checked.append(
            BoundReport.compare(name="first-return-count", bound=0.0, empirical=abs(expected - counted), params={"m": m})
        )
    for d in (1, 2):
        for m in range(1, 9):
            checked.append(bounds.stirling_report(m, d, config.kappa))
    paths = min(config.mc_samples, 10_000)
    for index, h in enumerate(config.hurst_grid):
        checked.append(
            bounds.variance_envelope_report(
                horizon, config.kappa, h, config.dimension, paths, stream.child("envelope", index)
            )
        )
    reported.append(bounds.emax_report(1.0, config.mc_samples, stream.child("emax")))
    reported.append(bounds.gaussian_max_report(1.0, 16, config.mc_samples // 16, stream.child("gaussian-max")))
    for index, h in enumerate(config.hurst_grid):
        params = config.params().model_copy(update={"hurst": as_hurst(h)})
        (point,) = estimators.gap_trace([horizon], params, config.env_replicas, stream.child("gap", index), mapper)
        reported.append(
            BoundReport.compare(
                name="truncation-gap",
                bound=point.bound,
                empirical=point.gap.value,
                params={"t": horizon, "hurst": h},
                slack=3.0 * point.gap.std_error,
            )
        )
    return _reports_result(checked, reported)


def _residue(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    checked: List[BoundReport] = []
    reported: List[BoundReport] = []
    maxima: List[Row] = []
    for h in config.hurst_grid:
        checked.append(residue.isometry_report(config.residue_times, h))
        for l, t1, t2 in config.decomposition_cases:
            checked.append(residue.decomposition_variance_check(l, t1, t2, h))
        scan = residue.lipschitz_ratio_scan(config.residue_n, h)
        for n, (ratio1, ratio2) in scan.max_by_n.items():
            maxima.append(
                {
                    "name": "lipschitz-max",
                    "param": json.dumps({"hurst": h, "n": n}, sort_keys=True),
                    "empirical": max(ratio1, ratio2),
                    "max_ratio1": ratio1,
                    "max_ratio2": ratio2,
                }
            )
        reported.append(
            BoundReport.compare(
                name="lipschitz-refinement",
                bound=0.05,
                empirical=scan.refinement_change,
                params={"hurst": h, "n_grid": list(config.residue_n)},
            )
        )
    result = _reports_result(checked, reported)
    result.rows.extend(maxima)
    return result


def _circle(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    kernel = circle.PeriodicKernel.from_fourier(config.kernel_coefficients)
    sites = np.concatenate([np.arange(-8.0, 9.0), np.linspace(0.0, 2 * math.pi, 25)])
    validity = circle.validate_kernel(kernel, sites)
    growth = circle.circle_linear_growth(
        kernel,
        config.hurst,
        config.kappa,
        config.t_grid,
        config.env_replicas,
        stream,
        grid_step=config.h_grid,
        zero_field=config.zero_field,
        mapper=mapper,
    )
    rows: List[Row] = []
    for t, record, normalized, annealed in zip(
        growth.trace.t_grid, growth.trace.records, growth.normalized, growth.annealed
    ):
        rows.append(
            {
                "kind": "trace",
                "t": t,
                "value": record.value,
                "se": record.std_error,
                "bound": annealed.bound_value,
                "normalized": "" if normalized is None else normalized,
            }
        )
    rows.append({"kind": "fit", "lambda_hat": growth.lambda_hat, **_report_row(growth.trend)})
    rows.append({"kind": "kernel", **_report_row(validity)})
    violations = [] if validity.satisfied else [validity.name]
    return HandlerResult(rows=rows, violations=violations)


def _lower_bound(config: RunConfig, stream: StreamKey, mapper: ReplicaMap) -> HandlerResult:
    rows = []
    for m in config.m_values:
        record = bounds.lower_bound_experiment(
            m,
            config.hurst,
            config.kappa,
            config.dimension,
            config.env_replicas,
            stream.child("m", m),
            grid_step=config.h_grid,
            zero_field=config.zero_field,
            mapper=mapper,
        )
        rows.append(
            {
                "m": m,
                "t": bounds.lower_bound_horizon(m, config.dimension, config.kappa),
                "value": record.value,
                "se": record.std_error,
                "bound": bounds.lower_bound_envelope(m, config.hurst, config.kappa, config.dimension),
            }
        )
    return HandlerResult(rows=rows)


HANDLERS: Dict[str, Callable[[RunConfig, StreamKey, ReplicaMap], HandlerResult]] = {
    "sample-field": _sample_field,
    "partition": _partition,
    "estimate-U": _estimate,
    "lyapunov": _lyapunov,
    "superadd": _superadd,
    "concentration": _concentration,
    "bounds": _bounds,
    "residue": _residue,
    "circle": _circle,
    "lower-bound": _lower_bound,
}


@contextmanager
def replica_mapper(workers: int) -> Iterator[ReplicaMap]:
    """
    Ordered map over replica tasks.

    A single worker uses the builtin map; more workers use a spawn-context
    process pool whose map returns results in submission order.
    """
    if workers <= 1:
        yield map
        return
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
        yield pool.map


def _cell(value: Any) -> Any:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict, tuple)):
        return json.dumps(value, sort_keys=True)
    return value


def _fieldnames(rows: Sequence[Row]) -> List[str]:
    names: Dict[str, None] = {}
    for row in rows:
        names.update(dict.fromkeys(row))
    return list(names)


def render_rows(rows: Sequence[Row], fmt: str, fieldnames: Optional[List[str]] = None) -> str:
    """CSV (RFC 4180, CRLF) or JSON lines text for rows."""
    if fmt == "json":
        return "".join(json.dumps(row, allow_nan=True) + "\n" for row in rows)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames or _fieldnames(rows), lineterminator="\r\n", restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _cell(value) for key, value in row.items()})
    return buffer.getvalue()


def read_rows(path: Path, fmt: str) -> Tuple[List[str], List[Row]]:
    """
    Rows of an existing artifact.

    Raises:
        ArtifactError: If the file cannot be parsed
    """
    try:
        text = path.read_text(encoding="utf-8")
        if fmt == "json":
            rows = [json.loads(line) for line in text.splitlines() if line.strip()]
            return _fieldnames(rows), rows
        reader = csv.DictReader(io.StringIO(text, newline=""))
        rows = list(reader)
        return list(reader.fieldnames or []), rows
    except (OSError, ValueError) as e:
        raise ArtifactError(f"cannot read artifact {path}: {e}") from e


def write_artifact(path: Path, rows: Sequence[Row], fmt: str, append: bool = False) -> int:
    """
    Write rows through a .partial file and an atomic rename.

    Raises:
        ArtifactError: If appending to a file with a different digest or
            a different column set
    """
    rows = list(rows)
    fieldnames = _fieldnames(rows)
    text = render_rows(rows, fmt, fieldnames)
    if append and path.exists():
        existing_names, previous = read_rows(path, fmt)
        digests = {str(row.get("digest")) for row in previous + rows}
        if len(digests) > 1:
            raise ArtifactError(f"refusing to append: {path} holds rows of another configuration digest")
        if fmt == "csv" and existing_names != fieldnames:
            raise ArtifactError(f"refusing to append: {path} has columns {existing_names}")
        old = path.read_bytes().decode("utf-8")
        if fmt == "csv":
            text = text.split("\r\n", 1)[1]
        text = old + text
    path.parent.mkdir(parents=True, exist_ok=True)
    partial_path = path.with_name(path.name + ".partial")
    with open(partial_path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    os.replace(partial_path, path)
    return len(rows)


def emit_plot_data(rows: Sequence[Row], kind: str, path: Path) -> Path:
    """
    Tidy columnar CSV for plotting tools.

    lyapunov rows give (t, U_hat_over_t, se), bounds rows give
    (name, param, bound, empirical), everything else (t, value, se, bound).
    Rows without the first column are skipped; no rows gives a header-only
    file.
    """
    columns = PLOT_COLUMNS.get(kind, PLOT_COLUMNS["generic"])
    selected = [
        {column: row.get(column, "") for column in columns}
        for row in rows
        if row.get(columns[0], "") != ""
    ]
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\r\n")
    writer.writeheader()
    for row in selected:
        writer.writerow({key: _cell(value) for key, value in row.items()})
    path.parent.mkdir(parents=True, exist_ok=True)
    partial_path = path.with_name(path.name + ".partial")
    partial_path.write_text(buffer.getvalue(), encoding="utf-8", newline="")
    os.replace(partial_path, path)
    return path


def run(config: RunConfig) -> RunOutcome:
    """
    Execute one subcommand and write its artifact.

    Raises:
        InvariantViolation: After writing the artifact, if a checked
            property failed
        PolymerError: For failures during computation (no artifact written)
    """
    digest = config.digest()
    stream = StreamKey(seed=config.seed)
    logger.info(f"Running {config.subcommand} (seed {config.seed}, digest {digest[:12]})")
    with replica_mapper(config.worker_count) as mapper:
        result = HANDLERS[config.subcommand](config, stream, mapper)
    rows = [{"digest": digest, "seed": config.seed, **row} for row in result.rows]
    path = config.output_path
    count = write_artifact(path, rows, config.format, append=config.append)
    logger.info(f"Wrote {count} rows to {path}")
    plot_path = None
    if config.plot_data:
        plot_path = str(emit_plot_data(result.rows, result.plot_kind, Path(config.plot_data)))
    outcome = RunOutcome(path=str(path), rows=count, violations=result.violations, plot_path=plot_path)
    if result.violations:
        raise InvariantViolation(
            f"{len(result.violations)} checks failed, first: {result.violations[0]}",
            report_name=result.violations[0],
        )
    return outcome


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbm-polymer",
        description="Anderson polymer in a fractional Brownian environment: experiments and checks",
    )
    parser.add_argument("subcommand", choices=list(HANDLERS), help="Experiment to run")
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="Root seed (overrides FBM_POLYMER_SEED and the config)")
    parser.add_argument("--out", help="Artifact path")
    parser.add_argument("--format", choices=["csv", "json"], help="Artifact format")
    parser.add_argument("--workers", type=int, help="Worker processes (results do not depend on it)")
    parser.add_argument("--zero-field", action="store_true", default=None, help="Use the identically-zero field")
    parser.add_argument("--append", action="store_true", default=None, help="Append to an existing artifact")
    parser.add_argument("--plot-data", help="Also write tidy plot data to this path")
    parser.add_argument("--hurst", type=float, help="Hurst parameter")
    parser.add_argument("--kappa", type=float, help="Jump rate")
    parser.add_argument("--t", type=float, help="Horizon")
    parser.add_argument("--t-grid", type=float, nargs="+", help="Horizons of a trace")
    parser.add_argument("--h-grid", type=float, help="Time grid step")
    parser.add_argument("--env-replicas", type=int, help="Environment replicas")
    return parser


def load_config(args: argparse.Namespace, settings: RunSettings) -> RunConfig:
    """
    Merge the config file, environment and flags into a RunConfig.

    Raises:
        ConfigError: For unreadable files or invalid values
    """
    data: Dict[str, Any] = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
    data["subcommand"] = args.subcommand
    if settings.seed is not None:
        data["seed"] = settings.seed
    flags = {
        "seed": args.seed,
        "out": args.out,
        "format": args.format,
        "workers": args.workers,
        "zero_field": args.zero_field,
        "append": args.append,
        "plot_data": args.plot_data,
        "hurst": args.hurst,
        "kappa": args.kappa,
        "t": args.t,
        "t_grid": args.t_grid,
        "h_grid": args.h_grid,
        "env_replicas": args.env_replicas,
    }
    data.update({key: value for key, value in flags.items() if value is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}" for error in e.errors()
        )
        raise ConfigError(f"invalid {args.subcommand} configuration: {problems}") from e


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command-line entry point; returns the exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = RunSettings()
    except ValidationError as e:
        print(f"Configuration error: invalid FBM_POLYMER_ environment: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args, settings)
        outcome = run(config)
        logger.info(f"{config.subcommand} finished: {outcome.rows} rows in {outcome.path}")
        return 0
    except ConfigError as e:
        logger.error(str(e))
        print(f"Configuration error: {e}", file=sys.stderr)
        return 2
    except InvariantViolation as e:
        logger.error(f"Invariant violated: {e}")
        return 1
    except PolymerError as e:
        logger.error(f"Run failed: {e}")
        return 1
    except KeyboardInterrupt:
        print("\nRun interrupted by user", file=sys.stderr)
        return 130
