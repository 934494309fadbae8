"""
Polymer action and exact partition-function solvers.

The partition function of the grid-discretized model is
E^X[exp(sum_k dB^{X_k}_k) 1{jumps <= cap}] where the walk decides at the
start of every cell whether to stay (probability 1 - p) or to step to one
of its 2d neighbours (p / 2d each), then collects the increment of the
occupied site over that cell. All accumulation happens in the log domain.
"""

import itertools
import logging
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import logsumexp

from .environment import EnvField, HurstLike, as_hurst, increment_gram
from .errors import BoxTooSmallError, DomainError, GridError
from .records import EstimateRecord, digest_of
from .streams import StreamKey
from .walk import (
    ENUMERATION_LIMIT,
    WalkPath,
    check_enumeration,
    jump_probability,
    move_table,
    sample_path,
    segments,
)

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 16


class PathAction(BaseModel):
    """Environment integral along one path."""

    model_config = ConfigDict(frozen=True)

    value: float

    @field_validator("value")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("path action must be finite")
        return value


class PartitionValue(BaseModel):
    """Partition function value with its logarithm."""

    model_config = ConfigDict(frozen=True)

    u: float = Field(ge=0.0)
    log_u: float
    truncated: bool = False

    @classmethod
    def from_log(cls, log_u: float, truncated: bool) -> "PartitionValue":
        u = math.exp(log_u) if log_u < 709.0 else math.inf
        return cls(u=u, log_u=float(log_u), truncated=truncated)


def path_action(path: WalkPath, env: EnvField) -> PathAction:
    """
    Sum of environment increments along a grid-aligned path.

    Args:
        path: Walk path whose jump times and horizon lie on the env grid
        env: Environment realization

    Returns:
        PathAction with the sum over segments of the occupied-site increments

    Raises:
        GridError: For off-grid jump times, a horizon beyond t_max, or a
            site outside the box
    """
    if path.dimension != env.config.dimension:
        raise GridError(f"path dimension {path.dimension} differs from env dimension {env.config.dimension}")
    edges = [env.cell_of(t) for t in path.breakpoints()]
    total = 0.0
    for site, start, end in zip(path.sites, edges[:-1], edges[1:]):
        total += float(np.sum(env.at(site)[start:end]))
    return PathAction(value=total)


def path_variance(path: WalkPath, hurst: HurstLike) -> float:
    """
    Exact variance of the path action.

    Cross-site covariances vanish, so the variance is the sum over sites of
    the full increment Gram of that site's occupation intervals.
    """
    h = as_hurst(hurst)
    total = 0.0
    for spans in segments(path).by_site.values():
        total += float(increment_gram(list(spans), h).sum())
    return total


def _shift(values: np.ndarray, axis: int, sign: int) -> np.ndarray:
    """Move every entry one step along an axis, filling with -inf."""
    out = np.full_like(values, -np.inf)
    source = [slice(None)] * values.ndim
    target = [slice(None)] * values.ndim
    if sign > 0:
        target[axis], source[axis] = slice(1, None), slice(None, -1)
    else:
        target[axis], source[axis] = slice(None, -1), slice(1, None)
    out[tuple(target)] = values[tuple(source)]
    return out


def _neighbour_mass(values: np.ndarray, dimension: int) -> np.ndarray:
    """Log of the summed mass arriving from the 2d neighbours (last d axes)."""
    first_site_axis = values.ndim - dimension
    total = np.full_like(values, -np.inf)
    for axis in range(first_site_axis, values.ndim):
        for sign in (1, -1):
            total = np.logaddexp(total, _shift(values, axis, sign))
    return total


def _central_block(env: EnvField, radius: int) -> np.ndarray:
    box = env.config.box_radius
    window = slice(box - radius, box + radius + 1)
    return env.increments[(window,) * env.config.dimension + (slice(None),)]


def _require_box(env: EnvField, radius: int) -> None:
    if env.config.box_radius < radius:
        raise BoxTooSmallError(
            f"box radius {env.config.box_radius} cannot hold the {radius} sites reachable by the walk",
            required_radius=radius,
        )


def _site_dp(block: np.ndarray, p: float, dimension: int) -> np.ndarray:
    """Forward recursion over cells; returns log weights per site at the end."""
    cells = block.shape[-1]
    log_stay, log_step = math.log1p(-p), math.log(p / (2 * dimension))
    weights = np.full(block.shape[:-1], -np.inf)
    weights[(block.shape[0] // 2,) * dimension] = 0.0
    for k in range(cells):
        moved = _neighbour_mass(weights, dimension)
        weights = np.logaddexp(weights + log_stay, moved + log_step) + block[..., k]
    return weights


def _jump_dp(block: np.ndarray, p: float, dimension: int, slots: int, overflow: bool) -> np.ndarray:
    """
    Jump-resolved recursion.

    Returns log weights of shape (slots [+1], sites...) where slot j holds
    paths with exactly j jumps and the optional last slot collects paths
    with more than slots - 1 jumps.
    """
    cells = block.shape[-1]
    log_stay, log_step = math.log1p(-p), math.log(p / (2 * dimension))
    depth = slots + 1 if overflow else slots
    weights = np.full((depth,) + block.shape[:-1], -np.inf)
    weights[(0,) + (block.shape[0] // 2,) * dimension] = 0.0
    for k in range(cells):
        moved = _neighbour_mass(weights, dimension) + log_step
        updated = weights + log_stay
        updated[1:slots] = np.logaddexp(updated[1:slots], moved[: slots - 1])
        if overflow:
            spill = np.logaddexp(moved[slots - 1], moved[slots])
            updated[slots] = np.logaddexp(updated[slots], spill)
        weights = updated + block[..., k]
    return weights


def _effective_cap(cap: Optional[int], cells: int) -> Optional[int]:
    if cap is None or cap >= cells:
        return None
    if cap < 0:
        raise DomainError(f"jump cap must be non-negative, got {cap}")
    return cap


def dp_partition(env: EnvField, kappa: float, cap: Optional[int] = None) -> PartitionValue:
    """
    Exact partition function of the grid walk by dynamic programming.

    Args:
        env: Environment realization
        kappa: Jump rate; p_jump = kappa * grid_step must be <= 0.2
        cap: Optional jump budget; paths with more jumps are dropped

    Returns:
        PartitionValue flagged truncated when a cap was requested

    Raises:
        DomainError: If p_jump exceeds 0.2
        BoxTooSmallError: If box_radius < min(cap, m)
    """
    p = jump_probability(kappa, env.grid_step)
    cells = env.cells
    dimension = env.config.dimension
    effective = _effective_cap(cap, cells)
    reach = cells if effective is None else effective
    _require_box(env, reach)
    block = _central_block(env, reach)
    if effective is None:
        log_u = float(logsumexp(_site_dp(block, p, dimension)))
    else:
        log_u = float(logsumexp(_jump_dp(block, p, dimension, effective + 1, overflow=False)))
    return PartitionValue.from_log(log_u, truncated=cap is not None)


def dp_partition_pair(env: EnvField, kappa: float, cap: Optional[int]) -> Tuple[PartitionValue, PartitionValue]:
    """
    Truncated and untruncated partition functions from one pass.

    The untruncated value adds the overflow mass to the truncated one, so
    u_hat <= u holds exactly in floating point.

    Raises:
        BoxTooSmallError: If box_radius < m
    """
    p = jump_probability(kappa, env.grid_step)
    cells = env.cells
    dimension = env.config.dimension
    _require_box(env, cells)
    block = _central_block(env, cells)
    effective = _effective_cap(cap, cells)
    if effective is None:
        log_u = float(logsumexp(_site_dp(block, p, dimension)))
        return PartitionValue.from_log(log_u, cap is not None), PartitionValue.from_log(log_u, False)
    weights = _jump_dp(block, p, dimension, effective + 1, overflow=True)
    log_hat = float(logsumexp(weights[: effective + 1]))
    log_over = float(logsumexp(weights[effective + 1]))
    log_u = float(np.logaddexp(log_hat, log_over))
    return PartitionValue.from_log(log_hat, True), PartitionValue.from_log(log_u, False)


def cap_profile(env: EnvField, kappa: float, caps: Sequence[int]) -> List[PartitionValue]:
    """
    Truncated partition functions for several caps from one pass.

    Values are cumulative log-sums over the exact-jump-count slots, so they
    are nondecreasing in the cap.
    """
    if not caps:
        return []
    p = jump_probability(kappa, env.grid_step)
    cells = env.cells
    dimension = env.config.dimension
    top = min(max(caps), cells)
    _require_box(env, top)
    block = _central_block(env, top)
    weights = _jump_dp(block, p, dimension, top + 1, overflow=False)
    per_count = logsumexp(weights.reshape(top + 1, -1), axis=1)
    cumulative = np.logaddexp.accumulate(per_count)
    return [PartitionValue.from_log(float(cumulative[min(cap, top)]), True) for cap in caps]


def _skeleton_chunks(m: int, d: int) -> Iterator[np.ndarray]:
    moves = itertools.product(range(2 * d + 1), repeat=m)
    while True:
        chunk = list(itertools.islice(moves, CHUNK_SIZE))
        if not chunk:
            return
        yield np.array(chunk, dtype=np.int64).reshape(len(chunk), m)


def brute_force_partition(env: EnvField, kappa: float, cap: Optional[int] = None) -> PartitionValue:
    """
    Exhaustive sum over every grid path (the enumeration oracle).

    Raises:
        EnumerationLimitError: If (2d+1)^m exceeds 10^7
        BoxTooSmallError: If box_radius < min(cap, m)
    """
    p = jump_probability(kappa, env.grid_step)
    m = env.cells
    d = env.config.dimension
    check_enumeration(m, d, ENUMERATION_LIMIT)
    reach = m if cap is None else min(cap, m)
    _require_box(env, reach)
    table = move_table(d)
    radius = env.config.box_radius
    log_stay, log_step = math.log1p(-p), math.log(p / (2 * d))
    cell_index = np.arange(m)[None, :]
    terms = []
    for moves in _skeleton_chunks(m, d):
        jumps = np.count_nonzero(moves, axis=1)
        if cap is not None:
            keep = jumps <= cap
            moves, jumps = moves[keep], jumps[keep]
        if moves.shape[0] == 0:
            continue
        positions = np.cumsum(table[moves], axis=1) + radius
        index = tuple(positions[..., axis] for axis in range(d)) + (np.broadcast_to(cell_index, moves.shape),)
        action = env.increments[index].sum(axis=1)
        terms.append((m - jumps) * log_stay + jumps * log_step + action)
    log_u = float(logsumexp(np.concatenate(terms)))
    return PartitionValue.from_log(log_u, truncated=cap is not None)


def annealed_mean(
    kappa: float,
    t: float,
    hurst: HurstLike,
    d: int,
    replicas: int,
    stream: StreamKey,
) -> EstimateRecord:
    """
    Monte Carlo of E u(t) with the environment integrated out.

    Averages exp(path_variance / 2) over sampled continuous-time paths.
    """
    if replicas < 1:
        raise DomainError(f"annealed_mean needs replicas >= 1, got {replicas}")
    h = as_hurst(hurst)
    values = [
        math.exp(0.5 * path_variance(sample_path(kappa, t, d, key), h))
        for key in stream.replicas(replicas)
    ]
    digest = digest_of({"op": "annealed_mean", "kappa": kappa, "t": t, "hurst": h.h, "d": d})
    return EstimateRecord.from_samples(values, seed=stream.seed, config_digest=digest)
