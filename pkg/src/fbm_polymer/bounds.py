"""
Closed-form bounds and combinatorial constructions.

Poisson tails, path-variance envelopes, the linear upper bound on the
truncated free energy for H <= 1/2, first-return counting, the expected
maximum of Gaussian pairs, Poisson point masses against their Stirling
bound, and the first-return lower-bound experiment.
"""

import itertools
import logging
import math
from functools import lru_cache, partial
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .environment import EnvConfig, HurstLike, as_hurst, grid_cells, sample_env
from .errors import DomainError, EnumerationLimitError
from .polymer import path_variance
from .records import BoundReport, EstimateRecord, ReplicaMap, digest_of
from .streams import StreamKey
from .walk import jump_probability, sample_path

logger = logging.getLogger(__name__)

FIRST_RETURN_BRUTE_LIMIT = 10
CLASS_ENUMERATION_LIMIT = 10**6
LOWER_BOUND_STATE_LIMIT = 10**6


def _rho(kappa: float) -> float:
    return max(math.exp(6.0), 1.0 / kappa)


def poisson_tail_bound(lam: float, n: int) -> float:
    """
    Tail bound P(N >= n) <= e^-lam (e lam / n)^n for N ~ Poisson(lam).

    Raises:
        DomainError: Unless lam > 0 and n > lam
    """
    if lam <= 0 or n <= lam:
        raise DomainError(f"poisson_tail_bound needs 0 < lam < n, got lam={lam}, n={n}")
    return math.exp(-lam + n * (1.0 + math.log(lam) - math.log(n)))


def poisson_tail_exact(lam: float, n: int) -> float:
    """Exact P(N >= n) for N ~ Poisson(lam)."""
    return float(stats.poisson.sf(n - 1, lam))


def poisson_tail_report(lam: float, n: int) -> BoundReport:
    return BoundReport.compare(
        name="poisson-tail",
        bound=poisson_tail_bound(lam, n),
        empirical=poisson_tail_exact(lam, n),
        params={"lambda": lam, "n": n},
    )


def variance_upper(t: float, n_jumps: int, hurst: HurstLike) -> float:
    """
    Largest action variance over paths with n_jumps jumps on [0, t].

    t^2H for H > 1/2 (the path that never moves), (N+1)^(1-2H) t^2H for
    H <= 1/2 (N+1 equal stays on distinct sites).
    """
    if t <= 0 or n_jumps < 0:
        raise DomainError(f"variance_upper needs t > 0 and n_jumps >= 0, got {t}, {n_jumps}")
    h = as_hurst(hurst).h
    if h > 0.5:
        return t ** (2 * h)
    return (n_jumps + 1) ** (1 - 2 * h) * t ** (2 * h)


def u_hat_linear_bound(T: float, kappa: float, hurst: HurstLike) -> float:
    """
    Linear upper bound (rho T + 1) / 2 on the truncated free energy.

    Raises:
        DomainError: If H > 1/2
    """
    h = as_hurst(hurst)
    if not h.rough:
        raise DomainError(f"the linear bound holds for H <= 1/2 only, got H={h.h}")
    if T <= 0 or kappa <= 0:
        raise DomainError(f"u_hat_linear_bound needs T > 0 and kappa > 0, got {T}, {kappa}")
    return 0.5 * (_rho(kappa) * T + 1.0)


def truncation_gap_bound(t: float, kappa: float, hurst: HurstLike) -> float:
    """
    Upper bound on U(t) - U_hat(t).

    2 e^{-t^2} e^{2 t^{2H}} for H > 1/2 (valid once t >= kappa e^2);
    (32/31) exp{(rho kappa)^{1-2H} t - kappa t / 2 + e^2 kappa t / 2 - 5 rho kappa t / 2}
    for H <= 1/2.
    """
    if t <= 0 or kappa <= 0:
        raise DomainError(f"truncation_gap_bound needs t > 0 and kappa > 0, got {t}, {kappa}")
    h = as_hurst(hurst).h
    if h > 0.5:
        return 2.0 * math.exp(-t * t + 2.0 * t ** (2 * h))
    rk = _rho(kappa) * kappa
    exponent = rk ** (1 - 2 * h) * t - kappa * t / 2 + math.e**2 * kappa * t / 2 - 5 * rk * t / 2
    return 32.0 / 31.0 * math.exp(exponent)


def first_return_count(m: int) -> int:
    """
    Number of +-1 walks of length 2m whose first return to 0 is at step 2m.

    Exact integer C(2m, m) / (2m - 1).
    """
    if m < 1:
        raise DomainError(f"first_return_count needs m >= 1, got {m}")
    return math.comb(2 * m, m) // (2 * m - 1)


@lru_cache(maxsize=16)
def first_return_sign_paths(m: int) -> Tuple[Tuple[int, ...], ...]:
    """All +-1 sequences of length 2m with first return to 0 at the end."""
    if m < 1:
        raise DomainError(f"first return paths need m >= 1, got {m}")
    if m > FIRST_RETURN_BRUTE_LIMIT:
        raise EnumerationLimitError(f"first-return enumeration is limited to m <= {FIRST_RETURN_BRUTE_LIMIT}")
    found = []

    def extend(prefix: List[int], position: int) -> None:
        if len(prefix) == 2 * m:
            if position == 0:
                found.append(tuple(prefix))
            return
        remaining = 2 * m - len(prefix)
        for sign in (1, -1):
            nxt = position + sign
            if abs(nxt) > remaining - 1:
                continue
            if nxt == 0 and remaining > 1:
                continue
            prefix.append(sign)
            extend(prefix, nxt)
            prefix.pop()

    extend([], 0)
    return tuple(found)


def count_first_returns(m: int) -> int:
    """Brute-force count over all 2^(2m) sign sequences."""
    if m > FIRST_RETURN_BRUTE_LIMIT:
        raise EnumerationLimitError(f"brute-force first-return count is limited to m <= {FIRST_RETURN_BRUTE_LIMIT}")
    total = 0
    for signs in itertools.product((1, -1), repeat=2 * m):
        running = np.cumsum(signs)
        if running[-1] == 0 and np.all(running[:-1] != 0):
            total += 1
    return total


def first_return_class_size(m: int, d: int) -> int:
    """|D| = (2md)! / (m!^(2d) (2m-1)^d)."""
    if m < 1 or d < 1:
        raise DomainError(f"first_return_class_size needs m, d >= 1, got {m}, {d}")
    return math.factorial(2 * m * d) // (math.factorial(m) ** (2 * d) * (2 * m - 1) ** d)


def _interleavings(counts: List[int]) -> Iterable[Tuple[int, ...]]:
    if sum(counts) == 0:
        yield ()
        return
    for axis, left in enumerate(counts):
        if left:
            counts[axis] -= 1
            for rest in _interleavings(counts):
                yield (axis,) + rest
            counts[axis] += 1


def first_return_class(m: int, d: int) -> List[Tuple[int, ...]]:
    """
    Enumerate the skeleton class D as move sequences of length 2md.

    Every coordinate makes exactly 2m unit steps and first returns to 0 on
    its last one. Moves follow the walk encoding (1 + 2 axis for +, 2 + 2 axis
    for -).
    """
    size = first_return_class_size(m, d)
    if size > CLASS_ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"|D| = {size} exceeds the limit {CLASS_ENUMERATION_LIMIT}")
    signs = first_return_sign_paths(m)
    skeletons = []
    for order in _interleavings([2 * m] * d):
        for choice in itertools.product(signs, repeat=d):
            cursor = [0] * d
            moves = []
            for axis in order:
                sign = choice[axis][cursor[axis]]
                cursor[axis] += 1
                moves.append(1 + 2 * axis if sign > 0 else 2 + 2 * axis)
            skeletons.append(tuple(moves))
    return skeletons


def emax_two_gaussians(sigma: float) -> float:
    """E max{Y1, Y2} = sigma / sqrt(pi) for iid N(0, sigma^2) variables."""
    if sigma <= 0:
        raise DomainError(f"emax_two_gaussians needs sigma > 0, got {sigma}")
    return sigma / math.sqrt(math.pi)


def gaussian_max_bound(sigma: float, count: int) -> float:
    """E max of count centred Gaussians with variance <= sigma^2 is <= sigma sqrt(2 log count)."""
    if sigma < 0 or count < 1:
        raise DomainError(f"gaussian_max_bound needs sigma >= 0 and count >= 1, got {sigma}, {count}")
    return sigma * math.sqrt(2.0 * math.log(count))


def stirling_pm(m: int, d: int, kappa: float) -> Tuple[float, float]:
    """
    Poisson mass at 2md with mean 2md, and its Stirling lower bound.

    With T = 2md / kappa the Poisson mean kappa T equals 2md, so kappa only
    fixes T.

    Returns:
        (exact e^-N N^N / N!, 1 / (2 e sqrt(pi m d))) with N = 2md
    """
    if m < 1 or d < 1 or kappa <= 0:
        raise DomainError(f"stirling_pm needs m, d >= 1 and kappa > 0, got {m}, {d}, {kappa}")
    n = 2 * m * d
    exact = math.exp(-n + n * math.log(n) - float(gammaln(n + 1)))
    return exact, 1.0 / (2.0 * math.e * math.sqrt(math.pi * m * d))


def lower_bound_horizon(m: int, d: int, kappa: float) -> float:
    """T = 2md / kappa."""
    return 2 * m * d / kappa


def lower_bound_envelope(m: int, hurst: HurstLike, kappa: float, d: int) -> float:
    """
    Analytic lower envelope of the first-return bound.

    (1/T)[log p_m + log(|D| / (2d)^(2md+1)) + E sigma / sqrt(pi)] with the
    mean pair spread E sigma bounded below by (2md-1)/(2md+1) T^H for
    H <= 1/2 and (2md-1)^(1/2-H) (2md-1)/(2md+1) T^H for H > 1/2.
    """
    h = as_hurst(hurst).h
    n = 2 * m * d
    horizon = lower_bound_horizon(m, d, kappa)
    exact, _ = stirling_pm(m, d, kappa)
    spread = (n - 1) / (n + 1) * horizon**h
    if h > 0.5:
        spread *= (n - 1) ** (0.5 - h)
    log_class = math.log(first_return_class_size(m, d)) - (n + 1) * math.log(2 * d)
    return (math.log(exact) + log_class + emax_two_gaussians(spread)) / horizon


def _first_return_log_sum(block: np.ndarray, m: int, d: int) -> float:
    """
    Log of the sum of exp(action) over first-return skeletons and jump cells.

    State per coordinate: steps taken j in 0..2m and position x in -m..m.
    Jumps may only occur in cells 1..M-1 (at most one per cell).
    """
    span = 2 * m + 1
    cells = block.shape[-1]
    shape = (span,) * d + (span,) * d
    weights = np.full(shape, -np.inf)
    weights[(0,) * d + (m,) * d] = 0.0
    steps = np.arange(span)[:, None]
    positions = np.arange(span)[None, :] - m
    allowed_axis = np.where((steps == 0) | (steps == 2 * m), positions == 0, positions != 0)
    allowed = np.ones(shape, dtype=bool)
    for axis in range(d):
        view = [1] * (2 * d)
        view[axis], view[d + axis] = span, span
        allowed &= allowed_axis.reshape(view)
    # environment value of state = increment at site x (site axes are the last d)
    centre = block.shape[0] // 2
    window = slice(centre - m, centre + m + 1)
    local = block[(window,) * d + (slice(None),)]
    for k in range(cells):
        if k > 0:
            moved = np.full(shape, -np.inf)
            for axis in range(d):
                for sign in (1, -1):
                    source = [slice(None)] * (2 * d)
                    target = [slice(None)] * (2 * d)
                    target[axis], source[axis] = slice(1, None), slice(None, -1)
                    if sign > 0:
                        target[d + axis], source[d + axis] = slice(1, None), slice(None, -1)
                    else:
                        target[d + axis], source[d + axis] = slice(None, -1), slice(1, None)
                    shifted = np.full(shape, -np.inf)
                    shifted[tuple(target)] = weights[tuple(source)]
                    moved = np.logaddexp(moved, shifted)
            weights = np.logaddexp(weights, moved)
            weights = np.where(allowed, weights, -np.inf)
        weights = weights + local[..., k]
    return float(weights[(2 * m,) * d + (m,) * d])


def _lower_bound_replica(
    m: int,
    d: int,
    config: EnvConfig,
    zero_field: bool,
    stream: StreamKey,
) -> float:
    env = sample_env(config, stream, zero_field=zero_field)
    return _first_return_log_sum(env.increments, m, d)


def lower_bound_experiment(
    m: int,
    hurst: HurstLike,
    kappa: float,
    d: int,
    env_replicas: int,
    stream: StreamKey,
    grid_step: float = 0.125,
    zero_field: bool = False,
    mapper: Optional[ReplicaMap] = None,
) -> EstimateRecord:
    """
    Estimate (1/T) E log E^X[e^S 1{skeleton in D}] at T = 2md / kappa.

    The walk makes exactly 2md jumps (Poisson mass p_m), directions are
    uniform over (2d)^(2md) sequences restricted to D, and the jump times
    are the uniformly chosen sets of 2md distinct grid cells among 1..M-1.

    Args:
        m: Returns per coordinate (each coordinate makes 2m jumps)
        hurst: Hurst parameter
        kappa: Jump rate
        d: Lattice dimension
        env_replicas: Number of environment realizations
        stream: Root stream key
        grid_step: Time grid step; T must be a multiple of it
        zero_field: Use the identically-zero environment
        mapper: Ordered map over replicas (builtin map by default)

    Returns:
        EstimateRecord of the lower bound on the Lyapunov exponent
    """
    if m < 1 or d < 1 or env_replicas < 1:
        raise DomainError(f"lower_bound_experiment needs m, d, env_replicas >= 1, got {m}, {d}, {env_replicas}")
    jump_probability(kappa, grid_step)
    if (2 * m + 1) ** (2 * d) > LOWER_BOUND_STATE_LIMIT:
        raise EnumerationLimitError(f"first-return state space (2m+1)^(2d) is too large for m={m}, d={d}")
    h = as_hurst(hurst)
    horizon = lower_bound_horizon(m, d, kappa)
    grid_cells(horizon, grid_step)
    config = EnvConfig(hurst=h, dimension=d, box_radius=m, t_max=horizon, grid_step=grid_step, seed=stream.seed)
    cells = config.cells
    jumps = 2 * m * d
    exact, _ = stirling_pm(m, d, kappa)
    log_placements = math.lgamma(cells) - math.lgamma(jumps + 1) - math.lgamma(cells - jumps)
    offset = math.log(exact) - jumps * math.log(2 * d) - log_placements
    run = mapper or map
    worker = partial(_lower_bound_replica, m, d, config, zero_field)
    sums = list(run(worker, stream.replicas(env_replicas)))
    samples = [(offset + value) / horizon for value in sums]
    digest = digest_of(
        {"op": "lower_bound", "m": m, "d": d, "hurst": h.h, "kappa": kappa, "grid_step": grid_step, "zero_field": zero_field}
    )
    logger.info(f"Lower bound m={m}, d={d}: {np.mean(samples):.5f} over {env_replicas} envs")
    return EstimateRecord.from_samples(samples, seed=stream.seed, config_digest=digest)


def stirling_report(m: int, d: int, kappa: float) -> BoundReport:
    exact, lower = stirling_pm(m, d, kappa)
    # exact >= lower, reported as -exact <= -lower
    return BoundReport.compare(
        name="stirling-pm",
        bound=-lower,
        empirical=-exact,
        params={"m": m, "d": d},
        details={"exact": exact, "lower": lower},
    )


def variance_envelope_report(
    t: float,
    kappa: float,
    hurst: HurstLike,
    d: int,
    paths: int,
    stream: StreamKey,
) -> BoundReport:
    """Worst path_variance - variance_upper over sampled paths."""
    h = as_hurst(hurst)
    worst = -math.inf
    for key in stream.replicas(paths):
        path = sample_path(kappa, t, d, key)
        excess = path_variance(path, h) - variance_upper(t, path.jump_count, h)
        worst = max(worst, excess)
    return BoundReport.compare(
        name="variance-envelope",
        bound=0.0,
        empirical=worst,
        params={"t": t, "kappa": kappa, "hurst": h.h, "d": d, "paths": paths},
        slack=1e-9,
    )


def emax_report(sigma: float, pairs: int, stream: StreamKey) -> BoundReport:
    """Monte Carlo of E max{Y1, Y2} against sigma / sqrt(pi), within 3 SE."""
    rng = stream.generator()
    draws = rng.normal(0.0, sigma, size=(pairs, 2)).max(axis=1)
    mean = float(draws.mean())
    std_error = float(draws.std(ddof=1) / math.sqrt(pairs))
    target = emax_two_gaussians(sigma)
    return BoundReport.compare(
        name="emax-two-gaussians",
        bound=3.0 * std_error,
        empirical=abs(mean - target),
        params={"sigma": sigma, "pairs": pairs},
        details={"estimate": mean, "target": target, "std_error": std_error},
    )


def gaussian_max_report(sigma: float, count: int, samples: int, stream: StreamKey) -> BoundReport:
    """Monte Carlo of E max of count iid N(0, sigma^2) against sigma sqrt(2 log count)."""
    if samples < 2:
        raise DomainError(f"gaussian_max_report needs samples >= 2, got {samples}")
    rng = stream.generator()
    draws = rng.normal(0.0, sigma, size=(samples, count)).max(axis=1)
    std_error = float(draws.std(ddof=1) / math.sqrt(samples))
    return BoundReport.compare(
        name="gaussian-max",
        bound=gaussian_max_bound(sigma, count),
        empirical=float(draws.mean()),
        params={"sigma": sigma, "count": count, "samples": samples},
        slack=3.0 * std_error,
    )
