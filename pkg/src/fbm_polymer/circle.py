"""
Walk on Z in a field with 2pi-periodic spatial covariance.

E(B^x_t B^y_s) = R_H(t, s) Q(x, y): the field is Gaussian with covariance
(time Gram) x Q and is sampled through the two square roots. The walk
still lives on Z; only the covariance is periodic.
"""

import logging
import math
from functools import lru_cache, partial
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import linalg, stats

from .environment import (
    EnvConfig,
    EnvField,
    HurstLike,
    as_hurst,
    factorize,
    grid_cells,
    site_innovations,
    time_factor,
)
from .errors import DomainError
from .estimators import MAX_DESK_HORIZON, LyapunovTrace, trace_from_samples, weighted_slope
from .polymer import dp_partition
from .records import BoundReport, ReplicaMap, digest_of
from .streams import StreamKey
from .walk import jump_probability

logger = logging.getLogger(__name__)

PERIOD = 2.0 * math.pi
HOLDER_TOLERANCE = 1e-12
PERIODICITY_TOLERANCE = 1e-12
EIGEN_TOLERANCE = 1e-9
CONFIDENCE_Z = float(stats.norm.ppf(0.975))


class PeriodicKernel(BaseModel):
    """
    Spatial covariance Q with period 2pi in both arguments.

    A "fourier" kernel is Q(x, y) = sum_j a_j cos(j (x - y)) with a_j >= 0,
    which is positive semidefinite by construction. A "diagonal" kernel is
    the identity on integer sites.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["fourier", "diagonal"] = "fourier"
    coefficients: Tuple[float, ...] = (0.0, 1.0)
    alpha: float = Field(default=2.0, gt=0.0)
    holder_constant: float = Field(default=0.5, ge=0.0)

    @field_validator("coefficients")
    @classmethod
    def _nonnegative(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(a < 0 or not math.isfinite(a) for a in value):
            raise ValueError("Fourier coefficients must be finite and nonnegative")
        return value

    @classmethod
    def cosine(cls) -> "PeriodicKernel":
        """Q(x, y) = cos(x - y); Hoelder with alpha 2, C 1/2."""
        return cls(kind="fourier", coefficients=(0.0, 1.0), alpha=2.0, holder_constant=0.5)

    @classmethod
    def constant(cls) -> "PeriodicKernel":
        """Q = 1; the Hoelder left side vanishes."""
        return cls(kind="fourier", coefficients=(1.0,), alpha=1.0, holder_constant=0.0)

    @classmethod
    def diagonal(cls) -> "PeriodicKernel":
        return cls(kind="diagonal", coefficients=(), alpha=1.0, holder_constant=1.0)

    @classmethod
    def from_fourier(cls, coefficients: Sequence[float]) -> "PeriodicKernel":
        """Kernel from a coefficient list a_0, a_1, ...; C = (1/2) sum j^2 a_j."""
        coeffs = tuple(float(a) for a in coefficients)
        if not coeffs:
            raise DomainError("a Fourier kernel needs at least one coefficient")
        constant = 0.5 * sum(j * j * a for j, a in enumerate(coeffs))
        return cls(kind="fourier", coefficients=coeffs, alpha=2.0, holder_constant=constant)

    @property
    def sup(self) -> float:
        """sup Q."""
        if self.kind == "diagonal":
            return 1.0
        return float(sum(self.coefficients))

    def _of_lag(self, lag: np.ndarray) -> np.ndarray:
        wrapped = np.mod(lag, PERIOD)
        if self.kind == "diagonal":
            near = np.minimum(wrapped, PERIOD - wrapped) < 1e-9
            return near.astype(float)
        out = np.zeros_like(wrapped, dtype=float)
        for j, a in enumerate(self.coefficients):
            if a:
                out += a * np.cos(j * wrapped)
        return out

    def evaluate(self, x: float, y: float) -> float:
        return float(self._of_lag(np.asarray(x - y, dtype=float)))

    def matrix(self, xs: Sequence[float], ys: Optional[Sequence[float]] = None) -> np.ndarray:
        """Q on a product of site sets."""
        left = np.asarray(xs, dtype=float)
        right = left if ys is None else np.asarray(ys, dtype=float)
        return self._of_lag(left[:, None] - right[None, :])


def validate_kernel(q: PeriodicKernel, site_grid: Sequence[float]) -> BoundReport:
    """
    Check periodicity, positive semidefiniteness and the Hoelder condition.

    |Q(x, y) - Q(x, x)/2 - Q(y, y)/2| <= C |x - y|^alpha is checked on every
    pair of the grid. Violations are reported, never raised.

    Returns:
        BoundReport with empirical = worst violation (0 when all hold)
    """
    sites = np.asarray(site_grid, dtype=float)
    if sites.size == 0:
        raise DomainError("validate_kernel needs a non-empty site grid")
    gram = q.matrix(sites)
    diagonal = np.diag(gram)
    lhs = np.abs(gram - 0.5 * diagonal[:, None] - 0.5 * diagonal[None, :])
    rhs = q.holder_constant * np.abs(sites[:, None] - sites[None, :]) ** q.alpha
    holder = float((lhs - rhs).max())
    periodicity = max(
        float(np.abs(q.matrix(sites + PERIOD, sites) - gram).max()),
        float(np.abs(q.matrix(sites, sites + PERIOD) - gram).max()),
    )
    min_eigenvalue = float(linalg.eigvalsh(gram).min())
    worst = max(
        0.0,
        holder - HOLDER_TOLERANCE,
        periodicity - PERIODICITY_TOLERANCE,
        -min_eigenvalue - EIGEN_TOLERANCE,
    )
    return BoundReport.compare(
        name="periodic-kernel",
        bound=0.0,
        empirical=worst,
        params={"kind": q.kind, "coefficients": list(q.coefficients), "alpha": q.alpha, "C": q.holder_constant},
        details={"holder_excess": holder, "periodicity_error": periodicity, "min_eigenvalue": min_eigenvalue},
    )


@lru_cache(maxsize=32)
def spatial_factor(q: PeriodicKernel, box_radius: int) -> np.ndarray:
    """Cached square root of Q on the integer sites -r..r (read-only)."""
    sites = np.arange(-box_radius, box_radius + 1, dtype=float)
    factor = factorize(q.matrix(sites))
    factor.setflags(write=False)
    return factor


def sample_circle_env(
    q: PeriodicKernel,
    config: EnvConfig,
    stream: Optional[StreamKey] = None,
    zero_field: bool = False,
) -> EnvField:
    """
    Draw a field with covariance (time Gram) x Q.

    The per-site time-correlated rows are the ones sample_env would draw;
    mixing them with the square root of Q gives the spatial correlation, so
    the diagonal kernel reproduces sample_env exactly.

    Raises:
        DomainError: If the lattice is not one-dimensional
        FactorizationError: If Q or the time Gram cannot be factorized
    """
    if config.dimension != 1:
        raise DomainError(f"the periodic field lives on Z, got d={config.dimension}")
    if zero_field:
        return EnvField.zeros(config)
    key = stream if stream is not None else StreamKey(seed=config.seed)
    rows = site_innovations(config, key, time_factor(config.hurst.h, config.cells, config.grid_step))
    mixed = spatial_factor(q, config.box_radius) @ rows
    return EnvField(config=config, increments=mixed)


class CircleGrowth(BaseModel):
    """Trace of (1/t) E log u_c(t) with its boundedness diagnostics."""

    trace: LyapunovTrace
    trend: BoundReport
    lambda_hat: float
    normalized: List[Optional[float]]
    annealed: List[BoundReport]


def _circle_replica(
    q: PeriodicKernel,
    hurst: float,
    kappa: float,
    grid_step: float,
    zero_field: bool,
    task: Tuple[float, StreamKey],
) -> float:
    t, stream = task
    cells = grid_cells(t, grid_step)
    config = EnvConfig(hurst=hurst, box_radius=cells, t_max=t, grid_step=grid_step, seed=stream.seed)
    env = sample_circle_env(q, config, stream, zero_field=zero_field)
    return dp_partition(env, kappa).log_u


def circle_linear_growth(
    q: PeriodicKernel,
    hurst: HurstLike,
    kappa: float,
    t_grid: Sequence[float],
    env_replicas: int,
    stream: StreamKey,
    grid_step: float = 0.125,
    zero_field: bool = False,
    mapper: Optional[ReplicaMap] = None,
) -> CircleGrowth:
    """
    Check that log u_c(t) grows at most linearly.

    Args:
        q: Spatial kernel
        hurst: Hurst parameter, H > 1/2
        kappa: Jump rate
        t_grid: Strictly increasing horizons within the desk guard
        env_replicas: Number of environments (>= 2)
        stream: Root stream key
        grid_step: Time grid step
        zero_field: Use the identically-zero field
        mapper: Ordered map over replica tasks

    Returns:
        CircleGrowth; trend is satisfied when the slope of (1/t) log u_c
        over the last half of the grid is not significantly positive
    """
    h = as_hurst(hurst)
    if h.rough:
        raise DomainError(f"circle_linear_growth needs H > 1/2, got {h.h}")
    if env_replicas < 2:
        raise DomainError(f"circle_linear_growth needs env_replicas >= 2, got {env_replicas}")
    grid = [float(t) for t in t_grid]
    if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])) or grid[-1] > MAX_DESK_HORIZON:
        raise DomainError(f"t grid must be strictly increasing, of length >= 2 and within {MAX_DESK_HORIZON}")
    jump_probability(kappa, grid_step)
    for t in grid:
        grid_cells(t, grid_step)
    keys = stream.replicas(env_replicas)
    tasks = [(t, key) for t in grid for key in keys]
    worker = partial(_circle_replica, q, h.h, kappa, grid_step, zero_field)
    run = mapper or map
    values = np.array(list(run(worker, tasks)), dtype=float).reshape(len(grid), env_replicas)
    digest = digest_of(
        {"op": "circle", "kernel": q.model_dump(), "hurst": h.h, "kappa": kappa, "t_grid": grid, "grid_step": grid_step}
    )
    trace = trace_from_samples(grid, list(values), stream.seed, digest)

    tail = len(grid) // 2
    tail_t = grid[tail:] if len(grid) - tail >= 2 else grid
    tail_records = trace.records[len(grid) - len(tail_t):]
    slope, _, slope_se, method = weighted_slope(
        tail_t, [r.value for r in tail_records], [r.std_error for r in tail_records]
    )
    trend = BoundReport.compare(
        name="circle-trend",
        bound=0.0,
        empirical=slope - CONFIDENCE_Z * slope_se,
        params={"hurst": h.h, "kappa": kappa},
        details={"slope": slope, "slope_se": slope_se, "method": method, "t_tail": tail_t},
    )
    annealed = [
        BoundReport.compare(
            name="circle-annealed",
            bound=0.5 * q.sup * t ** (2 * h.h - 1),
            empirical=record.value,
            params={"t": t},
            slack=3.0 * record.std_error,
        )
        for t, record in zip(grid, trace.records)
    ]
    lambda_hat = max(r.value + 2.0 * r.std_error for r in trace.records)
    logger.info(f"Circle trace: lambda_hat {lambda_hat:.5f}, tail slope {slope:.5f} +- {slope_se:.5f}")
    return CircleGrowth(
        trace=trace,
        trend=trend,
        lambda_hat=lambda_hat,
        normalized=trace.normalized(),
        annealed=annealed,
    )
