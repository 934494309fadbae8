"""
Statistical layer over the exact solvers.

Environment replicas are the unit of work: replica i at every horizon uses
the stream key root.child(i), and its field on [0, t] is the restriction of
its field on any longer horizon, so estimates at different t are built from
the same environments. Every per-replica value is reduced in replica order.
"""

import logging
import math
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from .bounds import truncation_gap_bound, variance_upper
from .environment import EnvConfig, Hurst, grid_cells, sample_env
from .errors import DomainError
from .polymer import dp_partition_pair
from .records import BoundReport, EstimateRecord, ReplicaMap, digest_of
from .streams import StreamKey
from .walk import TruncationSpec, jump_cap, jump_probability

logger = logging.getLogger(__name__)

MAX_DESK_HORIZON = 32.0
CONFIDENCE = 0.95


class PolymerParams(BaseModel):
    """Model parameters shared by every estimator."""

    model_config = ConfigDict(frozen=True)

    hurst: Hurst
    kappa: float = Field(gt=0.0)
    dimension: int = Field(default=1, ge=1)
    grid_step: float = Field(default=0.125, gt=0.0)
    zero_field: bool = False

    @field_validator("hurst", mode="before")
    @classmethod
    def _coerce_hurst(cls, value):
        if isinstance(value, (int, float)):
            return {"h": float(value)}
        return value

    @property
    def truncation(self) -> TruncationSpec:
        return TruncationSpec(hurst=self.hurst, kappa=self.kappa)

    def cap(self, t: float) -> int:
        return jump_cap(t, self.truncation)

    def env_config(self, t: float, box_radius: int, seed: int) -> EnvConfig:
        grid_cells(t, self.grid_step)
        return EnvConfig(
            hurst=self.hurst,
            dimension=self.dimension,
            box_radius=box_radius,
            t_max=t,
            grid_step=self.grid_step,
            seed=seed,
        )

    def cells(self, t: float) -> int:
        return grid_cells(t, self.grid_step)

    def digest(self, **extra) -> str:
        payload = self.model_dump(mode="json")
        payload.update(extra)
        return digest_of(payload)


def _replica_task(params: PolymerParams, task: Tuple[float, StreamKey]) -> Tuple[float, float]:
    t, stream = task
    cells = params.cells(t)
    config = params.env_config(t, box_radius=cells, seed=stream.seed)
    env = sample_env(config, stream, zero_field=params.zero_field)
    truncated, full = dp_partition_pair(env, params.kappa, params.cap(t))
    return truncated.log_u, full.log_u


def replica_logs(
    t_values: Sequence[float],
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    mapper: Optional[ReplicaMap] = None,
) -> Dict[float, np.ndarray]:
    """
    Per-replica (log u_hat, log u) at each horizon.

    Returns:
        Mapping t -> array (env_replicas, 2); column 0 is truncated and
        never exceeds column 1
    """
    if env_replicas < 1:
        raise DomainError(f"env_replicas must be >= 1, got {env_replicas}")
    jump_probability(params.kappa, params.grid_step)
    horizons = list(dict.fromkeys(float(t) for t in t_values))
    for t in horizons:
        grid_cells(t, params.grid_step)
    keys = stream.replicas(env_replicas)
    tasks = [(t, key) for t in horizons for key in keys]
    run = mapper or map
    values = np.array(list(run(partial(_replica_task, params), tasks)), dtype=float)
    values = values.reshape(len(horizons), env_replicas, 2)
    logger.debug(f"Solved {len(tasks)} replica tasks over {len(horizons)} horizons")
    return {t: values[i] for i, t in enumerate(horizons)}


def estimate_U(
    t: float,
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    truncated: bool = True,
    mapper: Optional[ReplicaMap] = None,
) -> EstimateRecord:
    """
    Estimate U(t) = E log u(t), or U_hat(t) when truncated.

    Args:
        t: Horizon on the grid
        params: Model parameters
        env_replicas: Number of environments (>= 2)
        stream: Root stream key
        truncated: Apply the jump cap jump_cap(t)
        mapper: Ordered map over replica tasks

    Returns:
        EstimateRecord of the mean log partition function
    """
    if env_replicas < 2:
        raise DomainError(f"estimate_U needs env_replicas >= 2, got {env_replicas}")
    logs = replica_logs([t], params, env_replicas, stream, mapper)[float(t)]
    column = 0 if truncated else 1
    digest = params.digest(op="estimate_U", t=t, truncated=truncated)
    return EstimateRecord.from_samples(logs[:, column], seed=stream.seed, config_digest=digest)


def weighted_slope(
    x: Sequence[float],
    y: Sequence[float],
    std_errors: Sequence[float],
) -> Tuple[float, float, float, str]:
    """
    Straight-line fit y = a + b x.

    Weighted least squares with known variances when every standard error is
    positive, ordinary least squares otherwise.

    Returns:
        (slope, intercept, slope standard error, method name)
    """
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    errors = np.asarray(std_errors, dtype=float)
    if xs.size < 2:
        raise DomainError("a slope needs at least two points")
    design = np.column_stack([np.ones_like(xs), xs])
    if np.all(errors > 0):
        weights = 1.0 / errors
        coef, *_ = np.linalg.lstsq(design * weights[:, None], ys * weights, rcond=None)
        covariance = np.linalg.inv((design * weights[:, None] ** 2).T @ design)
        return float(coef[1]), float(coef[0]), float(math.sqrt(covariance[1, 1])), "wls"
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    residuals = ys - design @ coef
    slope_se = 0.0
    if xs.size > 2:
        scale = float(residuals @ residuals) / (xs.size - 2)
        slope_se = math.sqrt(scale * np.linalg.inv(design.T @ design)[1, 1])
    return float(coef[1]), float(coef[0]), slope_se, "ols"


class LyapunovTrace(BaseModel):
    """Per-horizon estimates of U_hat(t)/t and the fitted growth rate."""

    t_grid: List[float]
    records: List[EstimateRecord]
    u_hat: List[EstimateRecord]
    slope: float
    intercept: float
    slope_se: float
    slope_ci: Tuple[float, float]
    method: str

    @field_validator("t_grid")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("t grid must be strictly increasing")
        return value

    def normalized(self) -> List[Optional[float]]:
        """U_hat(t) / (t sqrt(log t)) where t > 1, else None."""
        return [
            record.value / (t * math.sqrt(math.log(t))) if t > 1 else None
            for t, record in zip(self.t_grid, self.u_hat)
        ]


def _check_grid(t_grid: Sequence[float]) -> List[float]:
    grid = [float(t) for t in t_grid]
    if len(grid) < 2:
        raise DomainError("a trace needs at least two horizons")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("t grid must be strictly increasing")
    if grid[0] <= 0 or grid[-1] > MAX_DESK_HORIZON:
        raise DomainError(f"t grid must lie in (0, {MAX_DESK_HORIZON}]")
    return grid


def trace_from_samples(
    grid: Sequence[float],
    samples: Sequence[np.ndarray],
    seed: int,
    digest: str,
) -> LyapunovTrace:
    """Build a trace from per-replica log partition functions at each t."""
    u_hat = [EstimateRecord.from_samples(values, seed=seed, config_digest=digest) for values in samples]
    records = [record.scaled(1.0 / t) for t, record in zip(grid, u_hat)]
    slope, intercept, slope_se, method = weighted_slope(
        grid, [r.value for r in u_hat], [r.std_error for r in u_hat]
    )
    z = float(stats.norm.ppf(0.5 + CONFIDENCE / 2))
    return LyapunovTrace(
        t_grid=list(grid),
        records=records,
        u_hat=u_hat,
        slope=slope,
        intercept=intercept,
        slope_se=slope_se,
        slope_ci=(slope - z * slope_se, slope + z * slope_se),
        method=method,
    )


def lyapunov_trace(
    t_grid: Sequence[float],
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    mapper: Optional[ReplicaMap] = None,
) -> LyapunovTrace:
    """
    Truncated free-energy trace with a fitted slope.

    The slope of U_hat(t) against t is fitted by weighted least squares with
    the replica standard errors as per-point uncertainties.
    """
    grid = _check_grid(t_grid)
    logs = replica_logs(grid, params, env_replicas, stream, mapper)
    digest = params.digest(op="lyapunov", t_grid=grid)
    trace = trace_from_samples(grid, [logs[t][:, 0] for t in grid], stream.seed, digest)
    logger.info(f"Lyapunov slope {trace.slope:.5f} +- {trace.slope_se:.5f} ({trace.method})")
    return trace


class SuperadditivityDefect(BaseModel):
    """D = U_hat(n+m+1) - U_hat(n) - U_hat(m) and its normalized form."""

    n: int
    m: int
    defect: EstimateRecord
    normalized: float
    normalized_se: float


def _defect_from_logs(
    n: int,
    m: int,
    logs: Dict[float, np.ndarray],
    params: PolymerParams,
    seed: int,
) -> SuperadditivityDefect:
    samples = logs[float(n + m + 1)][:, 0] - logs[float(n)][:, 0] - logs[float(m)][:, 0]
    record = EstimateRecord.from_samples(
        samples, seed=seed, config_digest=params.digest(op="superadditivity", n=n, m=m)
    )
    scale = (n + m) ** params.hurst.h * math.sqrt(math.log(n + m))
    return SuperadditivityDefect(
        n=n,
        m=m,
        defect=record,
        normalized=record.value / scale,
        normalized_se=record.std_error / scale,
    )


def _check_pair(n: int, m: int) -> None:
    if n < 2 or m < 2:
        raise DomainError(f"superadditivity needs n, m >= 2, got {n}, {m}")
    if n + m + 1 > MAX_DESK_HORIZON:
        raise DomainError(f"n + m + 1 must not exceed {MAX_DESK_HORIZON}")


def superadditivity_defect(
    n: int,
    m: int,
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    mapper: Optional[ReplicaMap] = None,
) -> SuperadditivityDefect:
    """Super-additivity defect from paired replicas."""
    _check_pair(n, m)
    logs = replica_logs([n, m, n + m + 1], params, env_replicas, stream, mapper)
    return _defect_from_logs(n, m, logs, params, stream.seed)


class SuperadditivityScan(BaseModel):
    """Defects over a set of (n, m) pairs and the fitted constant."""

    defects: List[SuperadditivityDefect]
    c_hat: float
    min_by_total: Dict[int, float]


def superadditivity_scan(
    pairs: Sequence[Tuple[int, int]],
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    mapper: Optional[ReplicaMap] = None,
) -> SuperadditivityScan:
    """
    Defects for every pair from one shared replica table.

    c_hat is the smallest constant with normalized defect >= -c_hat on
    every pair.
    """
    for n, m in pairs:
        _check_pair(n, m)
    horizons = sorted({float(x) for n, m in pairs for x in (n, m, n + m + 1)})
    logs = replica_logs(horizons, params, env_replicas, stream, mapper)
    defects = [_defect_from_logs(n, m, logs, params, stream.seed) for n, m in pairs]
    min_by_total: Dict[int, float] = {}
    for item in defects:
        total = item.n + item.m
        min_by_total[total] = min(min_by_total.get(total, math.inf), item.normalized)
    c_hat = max(0.0, -min(item.normalized for item in defects)) if defects else 0.0
    return SuperadditivityScan(defects=defects, c_hat=c_hat, min_by_total=dict(sorted(min_by_total.items())))


class FeketeReport(BaseModel):
    """Trend diagnostics for an almost super-additive sequence."""

    ratios: List[float]
    running_max: List[float]
    running_min: List[float]
    eps_ratios: List[float]
    dyadic_partial_sums: List[float]
    condition_i: bool
    condition_ii: bool
    superadditivity_violations: int
    diverges: bool
    limit_estimate: Optional[float]


def fekete_limit_diagnostic(values: Sequence[float], eps: Sequence[float]) -> FeketeReport:
    """
    Diagnose the limit of f(n)/n for f almost super-additive relative to eps.

    Args:
        values: f(1..N)
        eps: eps(1..N)

    Returns:
        FeketeReport with the ratio sequence, its running extremes, the
        two summability diagnostics, and a limit estimate (None when the
        dyadic ratios keep growing without decay)
    """
    f = np.asarray(values, dtype=float)
    e = np.asarray(eps, dtype=float)
    if f.size == 0 or f.size != e.size:
        raise DomainError("values and eps must be non-empty and of equal length")
    count = f.size
    n = np.arange(1, count + 1, dtype=float)
    ratios = f / n
    eps_ratios = e / n

    half = count // 2
    if half >= 1:
        condition_i = bool(eps_ratios[half:].max() <= eps_ratios[:half].max() + 1e-12)
    else:
        condition_i = True

    dyadic = [2**k for k in range(count.bit_length()) if 2**k <= count]
    increments = [e[j - 1] / j for j in dyadic]
    partial_sums = list(np.cumsum(increments))
    nonzero = [x for x in increments if x > 0]
    condition_ii = len(nonzero) < 2 or nonzero[-1] <= 0.5 * nonzero[0]

    violations = 0
    for a in range(1, count + 1):
        for b in range(1, count + 1 - a):
            if f[a - 1] + f[b - 1] - e[a + b - 1] - f[a + b - 1] > 1e-9 * max(1.0, abs(f[a + b - 1])):
                violations += 1

    dyadic_ratios = [ratios[j - 1] for j in dyadic]
    steps = np.diff(dyadic_ratios)
    diverges = False
    limit: Optional[float] = float(ratios[-1])
    if steps.size >= 2:
        last, previous = steps[-1], steps[-2]
        if last > 1e-12 and previous > 1e-12 and last >= 0.9 * previous:
            diverges = True
            limit = None
        elif abs(last - previous) > 1e-15 and abs(last) > 1e-15:
            limit = float(dyadic_ratios[-1] - last**2 / (last - previous))
        else:
            limit = float(dyadic_ratios[-1])

    return FeketeReport(
        ratios=ratios.tolist(),
        running_max=np.maximum.accumulate(ratios).tolist(),
        running_min=np.minimum.accumulate(ratios).tolist(),
        eps_ratios=eps_ratios.tolist(),
        dyadic_partial_sums=[float(x) for x in partial_sums],
        condition_i=condition_i,
        condition_ii=bool(condition_ii),
        superadditivity_violations=violations,
        diverges=diverges,
        limit_estimate=limit,
    )


def concentration_threshold(n: int, hurst: Hurst) -> float:
    """2 n^H sqrt(log n)."""
    return 2.0 * n**hurst.h * math.sqrt(math.log(n))


def _exceedance(samples: np.ndarray, threshold: float) -> float:
    return float(np.mean(np.abs(samples - samples.mean()) > threshold))


def concentration_check(
    n: int,
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    threshold_scale: float = 1.0,
    mapper: Optional[ReplicaMap] = None,
    samples: Optional[np.ndarray] = None,
) -> BoundReport:
    """
    Empirical tail of |log u_hat(n) - pooled mean| against 2 n^-2.

    The allowance is three binomial standard errors of the bound.

    Args:
        n: Integer horizon >= 2
        params: Model parameters
        env_replicas: Number of environments (>= 200)
        stream: Root stream key
        threshold_scale: Multiplier on the 2 n^H sqrt(log n) threshold
        mapper: Ordered map over replica tasks
        samples: Precomputed per-replica log u_hat(n)
    """
    if n < 2:
        raise DomainError(f"concentration_check needs n >= 2, got {n}")
    if env_replicas < 200:
        raise DomainError(f"concentration_check needs env_replicas >= 200, got {env_replicas}")
    if samples is None:
        samples = replica_logs([n], params, env_replicas, stream, mapper)[float(n)][:, 0]
    threshold = threshold_scale * concentration_threshold(n, params.hurst)
    frequency = _exceedance(samples, threshold)
    bound = 2.0 / n**2
    slack = 3.0 * math.sqrt(bound * (1.0 - bound) / samples.size)
    return BoundReport.compare(
        name="concentration",
        bound=bound,
        empirical=frequency,
        params={"n": n, "hurst": params.hurst.h, "kappa": params.kappa, "replicas": int(samples.size)},
        slack=slack,
        details={"threshold": threshold, "pooled_mean": float(samples.mean())},
    )


def concentration_profile(
    n: int,
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    scales: Sequence[float] = (0.25, 0.5, 1.0, 2.0),
    mapper: Optional[ReplicaMap] = None,
) -> List[BoundReport]:
    """
    Exceedance across thresholds against the Gaussian concentration bound.

    The bound at threshold c is 2 exp(-c^2 / (2 sigma^2)) with sigma^2 the
    largest action variance over paths allowed by the jump cap.
    """
    if n < 2:
        raise DomainError(f"concentration_profile needs n >= 2, got {n}")
    samples = replica_logs([n], params, env_replicas, stream, mapper)[float(n)][:, 0]
    jumps = min(params.cap(n), params.cells(n))
    sigma2 = variance_upper(float(n), jumps, params.hurst)
    reports = []
    for scale in scales:
        threshold = scale * concentration_threshold(n, params.hurst)
        bound = min(1.0, 2.0 * math.exp(-(threshold**2) / (2.0 * sigma2)))
        slack = 3.0 * math.sqrt(max(bound * (1.0 - bound), 1.0 / samples.size) / samples.size)
        reports.append(
            BoundReport.compare(
                name="concentration-profile",
                bound=bound,
                empirical=_exceedance(samples, threshold),
                params={"n": n, "scale": scale, "hurst": params.hurst.h},
                slack=slack,
                details={"threshold": threshold, "sigma2": sigma2},
            )
        )
    return reports


def _sandwich_constant(t: float, n: int, table: Dict[float, np.ndarray]) -> Tuple[float, Dict[str, float]]:
    below = float(table[float(n)][:, 0].mean())
    middle = float(table[float(t)][:, 0].mean())
    above = float(table[float(n + 1)][:, 0].mean())
    left = 0.0 if t == n else (below - middle) / math.sqrt(math.log(n))
    right = (middle - above) / math.sqrt(math.log(t))
    constant = max(0.0, left, right)
    return constant, {"u_hat_n": below, "u_hat_t": middle, "u_hat_n1": above}


def quantization_sandwich(
    t: float,
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    k_limit: float = 10.0,
    mapper: Optional[ReplicaMap] = None,
) -> BoundReport:
    """
    Smallest K with U_hat(n) - K sqrt(log n) <= U_hat(t) <= U_hat(n+1) + K sqrt(log t).

    Reported against k_limit; n = floor(t) >= 2.
    """
    n = math.floor(t)
    if n < 2:
        raise DomainError(f"quantization_sandwich needs floor(t) >= 2, got t={t}")
    table = replica_logs([n, t, n + 1], params, env_replicas, stream, mapper)
    constant, details = _sandwich_constant(t, n, table)
    return BoundReport.compare(
        name="quantization-sandwich",
        bound=k_limit,
        empirical=constant,
        params={"t": t, "hurst": params.hurst.h, "kappa": params.kappa},
        details=details,
    )


def fit_quantization_constant(
    t_values: Sequence[float],
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    k_limit: float = 10.0,
    mapper: Optional[ReplicaMap] = None,
) -> BoundReport:
    """One K for a whole grid of horizons (the maximum of the per-t constants)."""
    horizons = set()
    for t in t_values:
        n = math.floor(t)
        if n < 2:
            raise DomainError(f"quantization needs floor(t) >= 2, got t={t}")
        horizons.update({float(n), float(t), float(n + 1)})
    table = replica_logs(sorted(horizons), params, env_replicas, stream, mapper)
    constants = {str(t): _sandwich_constant(t, math.floor(t), table)[0] for t in t_values}
    return BoundReport.compare(
        name="quantization-constant",
        bound=k_limit,
        empirical=max(constants.values()),
        params={"hurst": params.hurst.h, "kappa": params.kappa},
        details=constants,
    )


class GapPoint(BaseModel):
    """Estimated U(t) - U_hat(t) with its analytic bound."""

    t: float
    gap: EstimateRecord
    bound: float


def gap_trace(
    t_values: Sequence[float],
    params: PolymerParams,
    env_replicas: int,
    stream: StreamKey,
    mapper: Optional[ReplicaMap] = None,
) -> List[GapPoint]:
    """Paired per-replica log u - log u_hat at each horizon (never negative)."""
    table = replica_logs(t_values, params, env_replicas, stream, mapper)
    points = []
    for t in t_values:
        logs = table[float(t)]
        record = EstimateRecord.from_samples(
            logs[:, 1] - logs[:, 0], seed=stream.seed, config_digest=params.digest(op="gap", t=t)
        )
        points.append(GapPoint(t=float(t), gap=record, bound=truncation_gap_bound(t, params.kappa, params.hurst)))
    return points
