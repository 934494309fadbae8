"""
Volterra kernel and the residue process.

Fractional Brownian motion is B_t = int_0^t K_H(t, s) dW_s for a standard
Brownian motion W. This module evaluates K_H, checks the isometry
int K_H(t, r) K_H(s, r) dr = R_H(t, s), computes the covariance of the
residue process Y_{n,k}(u) = int_0^n (u - s)^{H-3/2} (u/s)^{H-1/2} dW_s
that carries the history before n into a later window, and verifies the
split of an increment into a residue part and an innovation part.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate, special

from .environment import HurstLike, as_hurst, r_h
from .errors import DomainError, QuadratureError
from .records import BoundReport, EstimateRecord, digest_of
from .streams import StreamKey

logger = logging.getLogger(__name__)

QUAD_TOLERANCE = 1e-8
QUAD_LIMIT = 200
MIN_SEPARATION = 1e-3
DECOMPOSITION_TOLERANCE = 1e-5

# (a, b) offsets of the scanned pairs (u, v) = (n + k + a, n + k + b).
DEFAULT_OFFSETS: Tuple[Tuple[float, float], ...] = (
    (0.0, 0.25),
    (0.25, 0.5),
    (0.5, 0.75),
    (0.75, 1.0),
    (0.0, 1.0),
)


def kernel_constant(hurst: HurstLike) -> float:
    """
    Normalization of K_H.

    Returns:
        sqrt(H(2H-1) / B(2-2H, H-1/2)) for H > 1/2,
        sqrt(2H / ((1-2H) B(1-2H, H+1/2))) for H < 1/2 and 1 at H = 1/2
    """
    h = as_hurst(hurst).h
    if h > 0.5:
        return math.sqrt(h * (2 * h - 1) / special.beta(2 - 2 * h, h - 0.5))
    if h < 0.5:
        return math.sqrt(2 * h / ((1 - 2 * h) * special.beta(1 - 2 * h, h + 0.5)))
    return 1.0


def _integrate(func: Callable[[float], float], a: float, b: float, **kwargs) -> Tuple[float, float]:
    """
    Adaptive quadrature with a convergence check.

    Raises:
        QuadratureError: If QUADPACK flags a problem and the error estimate
            exceeds the tolerance
    """
    result = integrate.quad(
        func, a, b, full_output=1, limit=QUAD_LIMIT, epsabs=1e-12, epsrel=1e-10, **kwargs
    )
    value, error = float(result[0]), float(result[1])
    if len(result) > 3 and error > QUAD_TOLERANCE * max(1.0, abs(value)):
        raise QuadratureError(
            f"quadrature on [{a}, {b}] did not converge: {result[3]}",
            error_estimate=error,
        )
    return value, error


class KernelEval(BaseModel):
    """One evaluation of K_H(t, s)."""

    model_config = ConfigDict(frozen=True)

    t: float
    s: float = Field(gt=0.0)
    value: float
    quadrature_error: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _check(self) -> "KernelEval":
        if not self.s < self.t:
            raise ValueError(f"kernel needs s < t, got s={self.s}, t={self.t}")
        if not math.isfinite(self.value):
            raise ValueError("kernel value must be finite")
        return self


def volterra_kernel(t: float, s: float, hurst: HurstLike) -> KernelEval:
    """
    K_H(t, s) by adaptive quadrature.

    The integrals are computed with QUADPACK's algebraic-singularity
    weight, which absorbs the (u - s)^a factor at the lower endpoint.

    Args:
        t: Upper time
        s: Lower time, 0 < s < t
        hurst: Hurst parameter

    Returns:
        KernelEval with the value and the quadrature error estimate

    Raises:
        DomainError: If not 0 < s < t
        QuadratureError: If the quadrature does not converge
    """
    if not 0.0 < s < t:
        raise DomainError(f"volterra_kernel needs 0 < s < t, got s={s}, t={t}")
    h = as_hurst(hurst).h
    if h == 0.5:
        return KernelEval(t=t, s=s, value=1.0, quadrature_error=0.0)
    constant = kernel_constant(h)
    if h > 0.5:
        integral, error = _integrate(lambda u: u ** (h - 0.5), s, t, weight="alg", wvar=(h - 1.5, 0.0))
        scale = constant * s ** (0.5 - h)
        return KernelEval(t=t, s=s, value=scale * integral, quadrature_error=abs(scale) * error)
    integral, error = _integrate(lambda u: u ** (h - 1.5), s, t, weight="alg", wvar=(h - 0.5, 0.0))
    first = (t / s) ** (h - 0.5) * (t - s) ** (h - 0.5)
    second = (h - 0.5) * s ** (0.5 - h) * integral
    return KernelEval(
        t=t,
        s=s,
        value=constant * (first - second),
        quadrature_error=constant * abs(h - 0.5) * s ** (0.5 - h) * error,
    )


def kernel_value(t: float, s: float, h: float) -> float:
    """
    K_H(t, s) from its incomplete beta / hypergeometric closed form.

    Zero outside 0 < s < t. Used inside the outer isometry integrals.
    """
    if not 0.0 < s < t:
        return 0.0
    if h == 0.5:
        return 1.0
    constant = kernel_constant(h)
    if h > 0.5:
        z = 1.0 - s / t
        tail = z ** (h - 0.5) / (h - 0.5) * special.hyp2f1(h - 0.5, 2 * h, h + 0.5, z)
        return constant * s ** (h - 0.5) * tail
    a, b = 1 - 2 * h, h + 0.5
    tail = special.beta(a, b) * (1.0 - special.betainc(a, b, s / t))
    first = (t / s) ** (h - 0.5) * (t - s) ** (h - 0.5)
    return constant * (first - (h - 0.5) * s ** (h - 0.5) * tail)


def isometry_integral(t: float, s: float, hurst: HurstLike) -> float:
    """
    int_0^{min(t, s)} K_H(t, r) K_H(s, r) dr.

    Equals R_H(t, s) when the kernel is normalized correctly.
    """
    if t <= 0 or s <= 0:
        raise DomainError(f"isometry_integral needs t, s > 0, got {t}, {s}")
    h = as_hurst(hurst).h
    upper = min(t, s)
    if h == 0.5:
        return upper
    integrand = lambda r: kernel_value(t, r, h) * kernel_value(s, r, h)  # noqa: E731
    middle = upper / 2
    left, _ = _integrate(integrand, 0.0, middle)
    right, _ = _integrate(integrand, middle, upper)
    return left + right


def isometry_report(times: Sequence[float], hurst: HurstLike) -> BoundReport:
    """Worst relative error of the isometry against r_h on a (t, s) grid."""
    h = as_hurst(hurst)
    worst = 0.0
    for t in times:
        for s in times:
            target = r_h(t, s, h)
            worst = max(worst, abs(isometry_integral(t, s, h) - target) / max(abs(target), 1e-300))
    return BoundReport.compare(
        name="kernel-isometry",
        bound=DECOMPOSITION_TOLERANCE,
        empirical=worst,
        params={"hurst": h.h, "grid": list(times)},
    )


class YCovQuery(BaseModel):
    """A pair of times (u, v) in the window [n + k, n + k + 1]."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    k: int = Field(ge=1)
    u: float
    v: float

    @model_validator(mode="after")
    def _in_window(self) -> "YCovQuery":
        low, high = self.n + self.k, self.n + self.k + 1
        for name, value in (("u", self.u), ("v", self.v)):
            if not low <= value <= high:
                raise ValueError(f"{name}={value} is outside the window [{low}, {high}]")
        return self


def _y_weight(u: float, s: float, h: float) -> float:
    # s^{1/2-H} is split off into the quadrature weight
    return (u - s) ** (h - 1.5) * u ** (h - 0.5)


def _y_integral(func: Callable[[float], float], n: int, h: float) -> Tuple[float, float]:
    # the weight s^{1-2H} carries the s -> 0 behaviour
    return _integrate(func, 0.0, float(n), weight="alg", wvar=(1.0 - 2.0 * h, 0.0))


def y_cov(query: YCovQuery, hurst: HurstLike) -> float:
    """
    E[Y(u) Y(v)] by the Ito isometry.

    Raises:
        QuadratureError: If the quadrature does not converge
    """
    h = as_hurst(hurst).h
    value, _ = _y_integral(lambda s: _y_weight(query.u, s, h) * _y_weight(query.v, s, h), query.n, h)
    return value


def y_increment_moment(query: YCovQuery, hurst: HurstLike) -> Tuple[float, float]:
    """
    E[(Y(u) - Y(v))^2] from the squared kernel difference.

    Returns:
        (value, quadrature error estimate)
    """
    h = as_hurst(hurst).h
    return _y_integral(lambda s: (_y_weight(query.u, s, h) - _y_weight(query.v, s, h)) ** 2, query.n, h)


def y_gram(n: int, k: int, points: Sequence[float], hurst: HurstLike) -> np.ndarray:
    """Covariance matrix of Y_{n,k} at the given window points."""
    size = len(points)
    gram = np.empty((size, size))
    for i in range(size):
        for j in range(i, size):
            value = y_cov(YCovQuery(n=n, k=k, u=points[i], v=points[j]), hurst)
            gram[i, j] = gram[j, i] = value
    return gram


def y_cov_monte_carlo(
    query: YCovQuery,
    hurst: HurstLike,
    paths: int,
    stream: StreamKey,
    fine_steps: int = 4096,
    chunk: int = 512,
) -> EstimateRecord:
    """
    Discretized-integral oracle for y_cov.

    Simulates W on a uniform grid of [0, n] and forms Y(u), Y(v) by the
    midpoint rule.
    """
    if paths < 2:
        raise DomainError(f"y_cov_monte_carlo needs paths >= 2, got {paths}")
    h = as_hurst(hurst).h
    step = query.n / fine_steps
    mids = (np.arange(fine_steps) + 0.5) * step
    weight_u = (query.u - mids) ** (h - 1.5) * (query.u / mids) ** (h - 0.5)
    weight_v = (query.v - mids) ** (h - 1.5) * (query.v / mids) ** (h - 0.5)
    rng = stream.generator()
    products: List[np.ndarray] = []
    remaining = paths
    while remaining:
        size = min(chunk, remaining)
        increments = rng.standard_normal((size, fine_steps)) * math.sqrt(step)
        products.append((increments @ weight_u) * (increments @ weight_v))
        remaining -= size
    digest = digest_of({"op": "y_cov_mc", **query.model_dump(), "hurst": h, "fine_steps": fine_steps})
    return EstimateRecord.from_samples(np.concatenate(products), seed=stream.seed, config_digest=digest)


class LipschitzRow(BaseModel):
    """One scanned pair with both bound ratios."""

    n: int
    k: int
    u: float
    v: float
    hurst: float
    ratio1: Optional[float]
    ratio2: float
    quadrature_error: float


class LipschitzScan(BaseModel):
    """Maxima of the increment and variance ratios over a scan."""

    rows: List[LipschitzRow]
    max_ratio1: float
    max_ratio2: float
    max_by_n: Dict[int, Tuple[float, float]]
    refinement_change: float

    @field_validator("max_by_n")
    @classmethod
    def _sorted(cls, value: Dict[int, Tuple[float, float]]) -> Dict[int, Tuple[float, float]]:
        return dict(sorted(value.items()))


def _variance_scale(n: int, k: int, h: float) -> float:
    return (1 + k / n) ** (2 * h - 1) * k ** (2 * h - 2)


def lipschitz_ratio_scan(
    n_grid: Sequence[int],
    hurst: HurstLike,
    k_grid: Optional[Sequence[int]] = None,
    offsets: Sequence[Tuple[float, float]] = DEFAULT_OFFSETS,
) -> LipschitzScan:
    """
    Scan the increment and variance bounds of Y_{n,k}.

    ratio1 = E[(Y(u) - Y(v))^2] / ((1 + k/n)^{2H-1} k^{2H-4} (u - v)^2)
    ratio2 = E[Y(u)^2] / ((1 + k/n)^{2H-1} k^{2H-2})

    Args:
        n_grid: Values of n
        hurst: Hurst parameter
        k_grid: Values of k (default 1..n for each n); k > n is skipped
        offsets: (a, b) pairs placing u, v inside the window

    Returns:
        LipschitzScan with every row, the overall maxima, the maxima per n
        and the relative change of the maximum between the last two n
    """
    h = as_hurst(hurst).h
    rows: List[LipschitzRow] = []
    max_by_n: Dict[int, Tuple[float, float]] = {}
    for n in n_grid:
        ks = range(1, n + 1) if k_grid is None else [k for k in k_grid if 1 <= k <= n]
        best1, best2 = 0.0, 0.0
        variances: Dict[float, Tuple[float, float]] = {}
        for k in ks:
            scale = _variance_scale(n, k, h)
            variances.clear()
            for a, b in offsets:
                u, v = n + k + a, n + k + b
                query = YCovQuery(n=n, k=k, u=u, v=v)
                if u not in variances:
                    variances[u] = _y_integral(lambda s: _y_weight(u, s, h) ** 2, n, h)
                variance, error = variances[u]
                ratio1 = None
                if abs(u - v) >= MIN_SEPARATION:
                    moment, moment_error = y_increment_moment(query, h)
                    error += moment_error
                    ratio1 = moment / (scale * k ** -2 * (u - v) ** 2)
                    best1 = max(best1, ratio1)
                ratio2 = variance / scale
                best2 = max(best2, ratio2)
                rows.append(
                    LipschitzRow(n=n, k=k, u=u, v=v, hurst=h, ratio1=ratio1, ratio2=ratio2, quadrature_error=error)
                )
        max_by_n[n] = (best1, best2)
        logger.debug(f"Lipschitz scan n={n}: max ratio1 {best1:.4f}, max ratio2 {best2:.4f}")

    ordered = sorted(max_by_n)
    change = 0.0
    if len(ordered) >= 2:
        last, previous = max_by_n[ordered[-1]], max_by_n[ordered[-2]]
        changes = [abs(a - b) / b for a, b in zip(last, previous) if b > 0]
        change = max(changes, default=0.0)
    return LipschitzScan(
        rows=rows,
        max_ratio1=max((x[0] for x in max_by_n.values()), default=0.0),
        max_ratio2=max((x[1] for x in max_by_n.values()), default=0.0),
        max_by_n=max_by_n,
        refinement_change=change,
    )


def _squared_difference(t2: float, t1: float, h: float) -> Callable[[float], float]:
    return lambda s: (kernel_value(t2, s, h) - kernel_value(t1, s, h)) ** 2


def decomposition_variance_check(l: int, t1: float, t2: float, hurst: HurstLike) -> BoundReport:
    """
    Check Var(B_t2 - B_t1) = Var(residue) + Var(innovation).

    The residue is the part of the increment driven by W on [0, l - 1],
    the innovation the part driven by W on [l - 1, t2]. The two are
    independent, so their variances add up to (t2 - t1)^{2H}.

    Args:
        l: Integer >= 2
        t1: Lower time, l <= t1 < t2
        t2: Upper time, t2 <= l + 1
        hurst: Hurst parameter

    Returns:
        BoundReport with empirical = |lhs - residue - innovation| against 1e-5

    Raises:
        DomainError: If the times are out of range
        QuadratureError: If a quadrature does not converge
    """
    if l < 2 or not (l <= t1 < t2 <= l + 1):
        raise DomainError(f"decomposition needs l >= 2 and l <= t1 < t2 <= l + 1, got {l}, {t1}, {t2}")
    h = as_hurst(hurst).h
    lhs = (t2 - t1) ** (2 * h)
    difference = _squared_difference(t2, t1, h)
    if h == 0.5:
        residue, innovation = 0.0, t2 - t1
    else:
        residue, _ = _integrate(difference, 0.0, float(l - 1))
        shared, _ = _integrate(difference, float(l - 1), t1)
        fresh, _ = _integrate(lambda s: kernel_value(t2, s, h) ** 2, t1, t2)
        innovation = shared + fresh
    gap = lhs - residue - innovation
    return BoundReport.compare(
        name="decomposition",
        bound=DECOMPOSITION_TOLERANCE,
        empirical=abs(gap),
        params={"l": l, "t1": t1, "t2": t2, "hurst": h},
        details={"lhs": lhs, "residue": residue, "innovation": innovation},
    )
