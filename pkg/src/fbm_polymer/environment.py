"""
Fractional Brownian environment.

Covariance algebra of fractional Brownian motion and exact sampling of the
space-time field {B^x} on a finite site box and a uniform time grid. Sites
are independent; per site the grid increments are drawn from the exact
increment Gram matrix through a dense square-root factorization.
"""

import itertools
import json
import logging
from functools import lru_cache
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg

from .errors import ArtifactError, DomainError, FactorizationError, GridError
from .records import digest_of
from .streams import MAX_SEED, StreamKey, site_key

logger = logging.getLogger(__name__)

GRID_TOLERANCE = 1e-9
DIAGONAL_JITTER = 1e-12
PSD_TOLERANCE = 1e-9

# Dense symmetric PSD matrix of increment covariances.
IncrementGram = np.ndarray

Site = Tuple[int, ...]


class Hurst(BaseModel):
    """Hurst parameter of the fractional Brownian motion."""

    model_config = ConfigDict(frozen=True)

    h: float = Field(gt=0.0, lt=1.0)

    @property
    def rough(self) -> bool:
        """True in the regime h <= 1/2."""
        return self.h <= 0.5

    @property
    def brownian(self) -> bool:
        return self.h == 0.5


HurstLike = Union[Hurst, float]


def as_hurst(value: HurstLike) -> Hurst:
    """Coerce a float or Hurst into a Hurst."""
    if isinstance(value, Hurst):
        return value
    try:
        return Hurst(h=float(value))
    except ValueError as e:
        raise DomainError(f"Hurst parameter must lie in (0, 1), got {value}") from e


class EnvConfig(BaseModel):
    """Site box and time grid of one environment realization."""

    model_config = ConfigDict(frozen=True)

    hurst: Hurst
    dimension: int = Field(default=1, ge=1)
    box_radius: int = Field(ge=0)
    t_max: float = Field(gt=0.0)
    grid_step: float = Field(gt=0.0)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)

    @field_validator("hurst", mode="before")
    @classmethod
    def _coerce_hurst(cls, value: Any) -> Any:
        if isinstance(value, (int, float)):
            return {"h": float(value)}
        return value

    @model_validator(mode="after")
    def _check_grid(self) -> "EnvConfig":
        ratio = self.t_max / self.grid_step
        if round(ratio) < 1 or abs(ratio - round(ratio)) > GRID_TOLERANCE * max(1.0, ratio):
            raise ValueError(
                f"t_max={self.t_max} is not a positive integer multiple of grid_step={self.grid_step}"
            )
        return self

    @property
    def cells(self) -> int:
        """Number of grid cells m = t_max / grid_step."""
        return int(round(self.t_max / self.grid_step))

    @property
    def side(self) -> int:
        return 2 * self.box_radius + 1

    @property
    def site_count(self) -> int:
        return self.side**self.dimension

    @property
    def shape(self) -> Tuple[int, ...]:
        """Array shape of the field: one axis per coordinate, then time."""
        return (self.side,) * self.dimension + (self.cells,)

    def sites(self) -> Iterator[Site]:
        """Iterate over the box sites in array order."""
        span = range(-self.box_radius, self.box_radius + 1)
        return itertools.product(span, repeat=self.dimension)

    def digest(self) -> str:
        """Configuration digest used to validate cached fields."""
        return digest_of(self.model_dump(mode="json"))


def grid_cells(t: float, grid_step: float) -> int:
    """
    Number of grid cells in [0, t].

    Raises:
        DomainError: If grid_step is not positive
        GridError: If t is not a positive integer multiple of grid_step
    """
    if grid_step <= 0:
        raise DomainError(f"grid_step must be positive, got {grid_step}")
    ratio = t / grid_step
    cells = int(round(ratio))
    if cells < 1 or abs(ratio - cells) > GRID_TOLERANCE * max(1.0, abs(ratio)):
        raise GridError(f"horizon {t} is not a positive integer multiple of grid_step {grid_step}")
    return cells


def r_h(t: float, s: float, hurst: HurstLike) -> float:
    """
    Covariance R_H(t, s) of fractional Brownian motion.

    Args:
        t: First time, t >= 0
        s: Second time, s >= 0
        hurst: Hurst parameter

    Returns:
        1/2 (t^2H + s^2H - |t - s|^2H)

    Raises:
        DomainError: If t or s is negative
    """
    if t < 0 or s < 0:
        raise DomainError(f"r_h needs non-negative times, got t={t}, s={s}")
    two_h = 2.0 * as_hurst(hurst).h
    return 0.5 * (t**two_h + s**two_h - abs(t - s) ** two_h)


def _r_h_grid(t: np.ndarray, s: np.ndarray, h: float) -> np.ndarray:
    two_h = 2.0 * h
    return 0.5 * (np.power(t, two_h) + np.power(s, two_h) - np.power(np.abs(t - s), two_h))


def increment_cov(a: float, b: float, c: float, d: float, hurst: HurstLike) -> float:
    """
    Covariance of the increments B_b - B_a and B_d - B_c.

    Raises:
        DomainError: If an interval is unordered or starts before 0
    """
    if not (0 <= a <= b and 0 <= c <= d):
        raise DomainError(f"intervals must satisfy 0 <= start <= end, got [{a}, {b}], [{c}, {d}]")
    return r_h(b, d, hurst) - r_h(b, c, hurst) - r_h(a, d, hurst) + r_h(a, c, hurst)


def increment_gram(intervals: Sequence[Tuple[float, float]], hurst: HurstLike) -> IncrementGram:
    """
    Gram matrix of increments over a list of intervals.

    Args:
        intervals: Ordered (start, end) pairs; duplicates allowed
        hurst: Hurst parameter

    Returns:
        Symmetric PSD matrix with entries increment_cov pairwise

    Raises:
        DomainError: For an empty list or an unordered interval
    """
    if len(intervals) == 0:
        raise DomainError("increment_gram needs at least one interval")
    bounds = np.asarray(intervals, dtype=float).reshape(-1, 2)
    starts, ends = bounds[:, 0], bounds[:, 1]
    if np.any(starts < 0) or np.any(ends < starts):
        raise DomainError("increment_gram intervals must satisfy 0 <= start <= end")
    h = as_hurst(hurst).h
    gram = (
        _r_h_grid(ends[:, None], ends[None, :], h)
        - _r_h_grid(ends[:, None], starts[None, :], h)
        - _r_h_grid(starts[:, None], ends[None, :], h)
        + _r_h_grid(starts[:, None], starts[None, :], h)
    )
    return 0.5 * (gram + gram.T)


def factorize(gram: np.ndarray, tolerance: float = PSD_TOLERANCE) -> np.ndarray:
    """
    Square root F of a PSD matrix with F @ F.T == gram.

    Tries a lower Cholesky factor, then once more with a 1e-12 diagonal
    jitter, then the symmetric eigen square root for singular matrices.

    Raises:
        FactorizationError: If the matrix has an eigenvalue below -tolerance
    """
    matrix = np.asarray(gram, dtype=float)
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        pass
    try:
        factor = linalg.cholesky(matrix + DIAGONAL_JITTER * np.eye(matrix.shape[0]), lower=True)
        logger.warning(f"Cholesky needed a {DIAGONAL_JITTER} diagonal jitter (n={matrix.shape[0]})")
        return factor
    except linalg.LinAlgError:
        pass
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    smallest = float(eigenvalues.min())
    if smallest < -tolerance * max(1.0, float(eigenvalues.max())):
        raise FactorizationError(
            f"matrix is not positive semidefinite (min eigenvalue {smallest:.3e})",
            min_eigenvalue=smallest,
        )
    logger.warning(f"Using eigen square root for a singular matrix (min eigenvalue {smallest:.3e})")
    roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * roots) @ eigenvectors.T


@lru_cache(maxsize=64)
def time_factor(h: float, cells: int, grid_step: float) -> np.ndarray:
    """Cached square root of the grid-cell increment Gram (read-only)."""
    edges = np.arange(cells + 1, dtype=float) * grid_step
    gram = increment_gram(np.column_stack([edges[:-1], edges[1:]]), h)
    factor = factorize(gram)
    factor.setflags(write=False)
    return factor


class EnvField(BaseModel):
    """A frozen realization of the environment on a box and time grid."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    config: EnvConfig
    increments: np.ndarray

    @field_validator("increments", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=float)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _check_shape(self) -> "EnvField":
        if self.increments.shape != self.config.shape:
            raise ValueError(
                f"increments shape {self.increments.shape} does not match config shape {self.config.shape}"
            )
        return self

    @classmethod
    def zeros(cls, config: EnvConfig) -> "EnvField":
        """The identically-zero environment."""
        return cls(config=config, increments=np.zeros(config.shape))

    @property
    def cells(self) -> int:
        return self.config.cells

    @property
    def grid_step(self) -> float:
        return self.config.grid_step

    def index_of(self, site: Sequence[int]) -> Tuple[int, ...]:
        """
        Array index of a site.

        Raises:
            GridError: If the site lies outside the box
        """
        radius = self.config.box_radius
        if len(site) != self.config.dimension:
            raise GridError(f"site {tuple(site)} has wrong dimension for d={self.config.dimension}")
        if any(abs(int(x)) > radius for x in site):
            raise GridError(f"site {tuple(site)} is outside the box of radius {radius}")
        return tuple(int(x) + radius for x in site)

    def at(self, site: Sequence[int]) -> np.ndarray:
        """The m grid increments of one site."""
        return self.increments[self.index_of(site)]

    def cell_of(self, t: float) -> int:
        """
        Grid index of a time that must lie on the grid.

        Raises:
            GridError: For off-grid times or times beyond t_max
        """
        ratio = t / self.grid_step
        k = int(round(ratio))
        if abs(ratio - k) > GRID_TOLERANCE * max(1.0, abs(ratio)):
            raise GridError(f"time {t} is not on the grid of step {self.grid_step}")
        if k < 0 or k > self.cells:
            raise GridError(f"time {t} is outside [0, {self.config.t_max}]")
        return k

    def restrict(self, box_radius: int) -> "EnvField":
        """The field on the sub-box of the given radius."""
        radius = self.config.box_radius
        if box_radius > radius:
            raise GridError(f"cannot restrict radius {radius} to larger radius {box_radius}")
        window = slice(radius - box_radius, radius + box_radius + 1)
        index = (window,) * self.config.dimension + (slice(None),)
        return EnvField(
            config=self.config.model_copy(update={"box_radius": box_radius}),
            increments=self.increments[index],
        )

    def to_json(self) -> str:
        """Self-describing JSON blob with config, digest and increments."""
        payload: Dict[str, Any] = {
            "config": self.config.model_dump(mode="json"),
            "digest": self.config.digest(),
            "increments": self.increments.tolist(),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "EnvField":
        """
        Rebuild a field from to_json output.

        Raises:
            ArtifactError: If the blob is malformed or its digest does not match
        """
        try:
            payload = json.loads(blob)
            config = EnvConfig.model_validate(payload["config"])
            field = cls(config=config, increments=payload["increments"])
        except (KeyError, TypeError, ValueError) as e:
            raise ArtifactError(f"unreadable environment blob: {e}") from e
        if payload.get("digest") != config.digest():
            raise ArtifactError("environment blob digest does not match its config")
        return field


def site_innovations(config: EnvConfig, stream: StreamKey, factor: np.ndarray) -> np.ndarray:
    """
    Per-site grid increments drawn from their own sub-streams.

    Site x uses stream.child("site", *site_key(x)), so a site's increments do
    not depend on the box they were sampled in.
    """
    cells = config.cells
    out = np.empty((config.site_count, cells))
    for row, site in enumerate(config.sites()):
        noise = stream.child("site", *site_key(site)).generator().standard_normal(cells)
        out[row] = factor @ noise
    return out


def sample_env(
    config: EnvConfig,
    stream: Optional[StreamKey] = None,
    zero_field: bool = False,
) -> EnvField:
    """
    Draw one environment realization.

    Args:
        config: Box and grid description
        stream: Replica stream; defaults to StreamKey(seed=config.seed)
        zero_field: Return the identically-zero field instead of sampling

    Returns:
        EnvField whose per-site increments have Gram increment_gram of the cells

    Raises:
        FactorizationError: If the time Gram cannot be factorized
    """
    if zero_field:
        return EnvField.zeros(config)
    key = stream if stream is not None else StreamKey(seed=config.seed)
    factor = time_factor(config.hurst.h, config.cells, config.grid_step)
    values = site_innovations(config, key, factor)
    logger.debug(f"Sampled {config.site_count} sites x {config.cells} cells for stream {key.path}")
    return EnvField(config=config, increments=values.reshape(config.shape))


def cell_intervals(cells: int, grid_step: float) -> List[Tuple[float, float]]:
    """The (start, end) pairs of the grid cells."""
    return [(k * grid_step, (k + 1) * grid_step) for k in range(cells)]


def empirical_gram(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample second-moment matrix and its entrywise standard errors.

    Args:
        samples: Array (replicas, m) of centred increment vectors

    Returns:
        (mean of outer products, standard error of each entry)
    """
    data = np.asarray(samples, dtype=float)
    count = data.shape[0]
    mean = data.T @ data / count
    squares = data * data
    second = squares.T @ squares / count
    variance = np.clip(second - mean * mean, 0.0, None) * count / (count - 1)
    return mean, np.sqrt(variance / count)
