"""
Result records shared by the estimator and bound layers.

EstimateRecord carries a Monte Carlo mean with its standard error and the
provenance needed to reproduce it; BoundReport pairs an analytic bound with
the empirical quantity it must dominate.
"""

import hashlib
import json
import math
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

# Ordered map over replica tasks: builtin map or an executor.map.
ReplicaMap = Callable[[Callable[..., Any], Iterable[Any]], Iterable[Any]]


def digest_of(payload: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a mapping."""
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


class EstimateRecord(BaseModel):
    """Monte Carlo estimate with provenance."""

    model_config = ConfigDict(frozen=True)

    value: float
    std_error: float = Field(ge=0.0)
    replicas: int = Field(ge=1)
    seed: int = Field(ge=0)
    config_digest: str

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[float],
        seed: int,
        config_digest: str,
    ) -> "EstimateRecord":
        """
        Summarize replica samples.

        The mean is numpy's pairwise sum over the samples in replica order,
        so the value does not depend on which worker produced which sample.

        Args:
            samples: One value per replica, in replica order
            seed: Root seed of the run
            config_digest: Digest of the configuration that produced them

        Returns:
            EstimateRecord with std_error = sample std / sqrt(replicas)
        """
        data = np.asarray(samples, dtype=float)
        if data.size == 0:
            raise ValueError("cannot summarize an empty sample")
        std_error = 0.0
        if data.size > 1:
            std_error = float(np.std(data, ddof=1) / math.sqrt(data.size))
        return cls(
            value=float(np.mean(data)),
            std_error=std_error,
            replicas=int(data.size),
            seed=seed,
            config_digest=config_digest,
        )

    def scaled(self, factor: float) -> "EstimateRecord":
        """Record of factor * value."""
        return self.model_copy(
            update={"value": self.value * factor, "std_error": self.std_error * abs(factor)}
        )


class BoundReport(BaseModel):
    """An analytic bound next to the empirical value it must dominate."""

    name: str
    params: Dict[str, Any] = Field(default_factory=dict)
    bound_value: float
    empirical_value: float
    satisfied: bool
    margin: float
    details: Dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def compare(
        cls,
        name: str,
        bound: float,
        empirical: float,
        params: Optional[Dict[str, Any]] = None,
        slack: float = 0.0,
        details: Optional[Dict[str, Any]] = None,
    ) -> "BoundReport":
        """
        Build a report; satisfied iff empirical <= bound + slack.

        Args:
            name: Report name
            bound: Analytic bound value
            empirical: Measured value
            params: Parameters the report was computed for
            slack: Statistical allowance added to the bound
            details: Extra diagnostics

        Returns:
            BoundReport with margin = bound + slack - empirical
        """
        margin = bound + slack - empirical
        extra = dict(details or {})
        if slack:
            extra.setdefault("slack", slack)
        return cls(
            name=name,
            params=dict(params or {}),
            bound_value=bound,
            empirical_value=empirical,
            satisfied=bool(margin >= 0.0),
            margin=margin,
            details=extra,
        )
