"""
Continuous-time simple symmetric random walk on Z^d.

Path sampling, the per-site regrouping of a path into occupation
intervals, the jump-count truncation and the exhaustive enumeration of the
grid-discretized walk (at most one jump per cell).
"""

import itertools
import json
import logging
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from .environment import Hurst
from .errors import DomainError, EnumerationLimitError, GridError
from .streams import StreamKey

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10**7
MAX_JUMP_PROBABILITY = 0.2

Site = Tuple[int, ...]
Skeleton = Tuple[int, ...]


def origin(dimension: int) -> Site:
    return (0,) * dimension


def move_vector(move: int, dimension: int) -> Site:
    """
    Displacement of a grid move.

    Move 0 stays; move j in 1..2d steps along axis (j-1)//2, in the
    positive direction when (j-1) is even.
    """
    if move == 0:
        return origin(dimension)
    axis, parity = divmod(move - 1, 2)
    delta = [0] * dimension
    delta[axis] = 1 if parity == 0 else -1
    return tuple(delta)


def move_table(dimension: int) -> np.ndarray:
    """Array (2d+1, d) of move displacements."""
    return np.array([move_vector(move, dimension) for move in range(2 * dimension + 1)], dtype=int)


class WalkPath(BaseModel):
    """Piecewise-constant lattice trajectory over [0, horizon]."""

    model_config = ConfigDict(frozen=True)

    horizon: float = Field(gt=0.0)
    jump_times: Tuple[float, ...] = ()
    sites: Tuple[Site, ...]

    @model_validator(mode="after")
    def _check_path(self) -> "WalkPath":
        if len(self.sites) != len(self.jump_times) + 1:
            raise ValueError("a path needs exactly one more site than jumps")
        start = self.sites[0]
        if any(x != 0 for x in start):
            raise ValueError(f"path must start at the origin, got {start}")
        dimension = len(start)
        if dimension == 0:
            raise ValueError("sites need at least one coordinate")
        previous = 0.0
        for t in self.jump_times:
            if not (previous < t < self.horizon):
                raise ValueError(f"jump times must increase strictly inside (0, {self.horizon})")
            previous = t
        for before, after in zip(self.sites, self.sites[1:]):
            if len(after) != dimension:
                raise ValueError("all sites must share one dimension")
            if sum(abs(a - b) for a, b in zip(before, after)) != 1:
                raise ValueError(f"consecutive sites {before} -> {after} are not one unit step apart")
        return self

    @property
    def dimension(self) -> int:
        return len(self.sites[0])

    @property
    def jump_count(self) -> int:
        return len(self.jump_times)

    def breakpoints(self) -> List[float]:
        """0, the jump times, and the horizon."""
        return [0.0, *self.jump_times, self.horizon]


class SegmentList(BaseModel):
    """Occupation intervals of a path grouped by site."""

    model_config = ConfigDict(frozen=True)

    horizon: float
    by_site: Dict[Site, Tuple[Tuple[float, float], ...]]

    def total_length(self) -> float:
        return math.fsum(end - start for spans in self.by_site.values() for start, end in spans)


class TruncationSpec(BaseModel):
    """Parameters of the jump-count truncation."""

    model_config = ConfigDict(frozen=True)

    hurst: Hurst
    kappa: float = Field(gt=0.0)

    @field_validator("hurst", mode="before")
    @classmethod
    def _coerce_hurst(cls, value):
        if isinstance(value, (int, float)):
            return {"h": float(value)}
        return value

    @computed_field
    @property
    def rho(self) -> float:
        """rho = max{e^6, 1/kappa}."""
        return max(math.exp(6.0), 1.0 / self.kappa)


def jump_cap(t: float, spec: TruncationSpec) -> int:
    """
    Jump budget of the truncated partition function at time t.

    Returns:
        floor(t^2) when H > 1/2, floor(rho * kappa * t) otherwise

    Raises:
        DomainError: If t is not positive
    """
    if t <= 0:
        raise DomainError(f"jump_cap needs t > 0, got {t}")
    if not spec.hurst.rough:
        return math.floor(t * t)
    return math.floor(spec.rho * spec.kappa * t)


def sample_path(kappa: float, t: float, d: int, stream: StreamKey) -> WalkPath:
    """
    Sample a continuous-time walk path.

    Args:
        kappa: Total jump rate
        t: Horizon
        d: Lattice dimension
        stream: Stream key of this path

    Returns:
        WalkPath with Poisson(kappa t) jumps at uniform order statistics
    """
    if kappa <= 0 or t <= 0 or d < 1:
        raise DomainError(f"sample_path needs kappa > 0, t > 0, d >= 1 (got {kappa}, {t}, {d})")
    rng = stream.generator()
    count = int(rng.poisson(kappa * t))
    times = np.sort(rng.uniform(0.0, t, size=count))
    moves = rng.integers(1, 2 * d + 1, size=count)
    sites = [origin(d)]
    for move in moves:
        step = move_vector(int(move), d)
        sites.append(tuple(a + b for a, b in zip(sites[-1], step)))
    return WalkPath(horizon=t, jump_times=tuple(float(x) for x in times), sites=tuple(sites))


def segments(path: WalkPath) -> SegmentList:
    """Regroup a path into per-site occupation intervals, ascending in time."""
    by_site: Dict[Site, List[Tuple[float, float]]] = {}
    edges = path.breakpoints()
    for site, start, end in zip(path.sites, edges[:-1], edges[1:]):
        by_site.setdefault(site, []).append((start, end))
    return SegmentList(
        horizon=path.horizon,
        by_site={site: tuple(spans) for site, spans in by_site.items()},
    )


def skeleton_count(m: int, d: int) -> int:
    return (2 * d + 1) ** m


def check_enumeration(m: int, d: int, limit: int = ENUMERATION_LIMIT) -> None:
    """
    Raises:
        EnumerationLimitError: If (2d+1)^m exceeds the limit
    """
    count = skeleton_count(m, d)
    if count > limit:
        raise EnumerationLimitError(f"(2d+1)^m = {count} grid paths exceeds the limit {limit}")


def enumerate_grid_paths(m: int, d: int, p_jump: float) -> Iterator[Tuple[Skeleton, float]]:
    """
    Every grid decision sequence with its probability.

    Args:
        m: Number of cells
        d: Lattice dimension
        p_jump: Probability of a jump in one cell

    Yields:
        (moves, probability) with one move per cell (see move_vector)

    Raises:
        DomainError: If p_jump is outside [0, 1]
        EnumerationLimitError: If (2d+1)^m > 10^7
    """
    if not 0.0 <= p_jump <= 1.0:
        raise DomainError(f"p_jump must lie in [0, 1], got {p_jump}")
    check_enumeration(m, d)
    stay = 1.0 - p_jump
    step = p_jump / (2 * d)
    for moves in itertools.product(range(2 * d + 1), repeat=m):
        jumps = sum(1 for move in moves if move)
        yield moves, stay ** (m - jumps) * step**jumps


def path_from_skeleton(moves: Sequence[int], grid_step: float, d: int = 1) -> WalkPath:
    """
    Continuous-time path of a grid decision sequence.

    The move of cell k is a jump at time k * grid_step; cell 0 must stay
    because a jump at time 0 is not a valid jump time.

    Raises:
        GridError: If the first cell holds a jump
    """
    if not moves:
        raise DomainError("a skeleton needs at least one cell")
    if moves[0] != 0:
        raise GridError("a jump in cell 0 would sit at time 0")
    times: List[float] = []
    sites = [origin(d)]
    for k, move in enumerate(moves):
        if move:
            times.append(k * grid_step)
            step = move_vector(int(move), d)
            sites.append(tuple(a + b for a, b in zip(sites[-1], step)))
    return WalkPath(horizon=len(moves) * grid_step, jump_times=tuple(times), sites=tuple(sites))


class PathRecord(BaseModel):
    """JSON-lines form of a path: horizon, jump times and site deltas."""

    horizon: float
    jump_times: List[float]
    deltas: List[List[int]]


def path_to_json_line(path: WalkPath) -> str:
    """Serialize a path to one JSON line."""
    deltas = [
        [b - a for a, b in zip(before, after)]
        for before, after in zip(path.sites, path.sites[1:])
    ]
    record = PathRecord(horizon=path.horizon, jump_times=list(path.jump_times), deltas=deltas)
    return json.dumps(record.model_dump(), sort_keys=True)


def path_from_json_line(line: str, dimension: Optional[int] = None) -> WalkPath:
    """Rebuild a path from path_to_json_line output."""
    record = PathRecord.model_validate_json(line)
    if dimension is None:
        dimension = len(record.deltas[0]) if record.deltas else 1
    sites = [origin(dimension)]
    for delta in record.deltas:
        sites.append(tuple(a + b for a, b in zip(sites[-1], delta)))
    return WalkPath(horizon=record.horizon, jump_times=tuple(record.jump_times), sites=tuple(sites))


def jump_probability(kappa: float, grid_step: float) -> float:
    """
    Per-cell jump probability kappa * grid_step of the grid walk.

    Raises:
        DomainError: If it exceeds 0.2 or kappa is not positive
    """
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    p = kappa * grid_step
    if p > MAX_JUMP_PROBABILITY:
        raise DomainError(
            f"kappa * grid_step = {p:.4f} exceeds {MAX_JUMP_PROBABILITY}; refine the grid"
        )
    return p
