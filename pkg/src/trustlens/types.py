"""Core domain types exchanged between modules and the CLI.

All types are immutable after construction and safe to share across
concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class Box:
    """Axis geometry of a 3D box: center (x, y, z) m, size (l, w, h) m, yaw rad."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    class_id: int = field(default=0, kw_only=True)

    def __post_init__(self):
        if len(self.center) != 3 or len(self.size) != 3:
            raise SchemaError("box center and size must be 3-vectors")
        if any(not math.isfinite(v) for v in (*self.center, *self.size, self.yaw)):
            raise SchemaError("box parameters must be finite")
        if any(s <= 0 for s in self.size):
            raise SchemaError(f"box size must be strictly positive, got {self.size}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))


@dataclass(frozen=True)
class Detection(Box):
    """A scored detection."""

    score: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.score <= 1.0:
            raise SchemaError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class UncertainDetection(Detection):
    """Detection with per-axis log-variances and yaw log-concentration.

    kappa = exp(-u_theta) is the von-Mises concentration of the yaw estimate.
    """

    u_x: float = 0.0
    u_y: float = 0.0
    u_z: float = 0.0
    u_theta: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if any(not math.isfinite(v) for v in (self.u_x, self.u_y, self.u_z, self.u_theta)):
            raise SchemaError("uncertainty parameters must be finite")

    @property
    def kappa(self) -> float:
        return math.exp(-self.u_theta)

    @property
    def sigmas(self) -> tuple[float, float, float]:
        """Per-axis standard deviations in meters."""
        return (
            math.exp(0.5 * self.u_x),
            math.exp(0.5 * self.u_y),
            math.exp(0.5 * self.u_z),
        )


@dataclass(frozen=True)
class Scene:
    """Ground-truth world: square origin-centered BEV region plus objects."""

    extent: float  # full side length in meters
    objects: tuple[Box, ...]
    seed: int

    def __post_init__(self):
        if self.extent <= 0:
            raise SchemaError(f"scene extent must be positive, got {self.extent}")
        object.__setattr__(self, "objects", tuple(self.objects))
        half = self.extent / 2.0
        for i, obj in enumerate(self.objects):
            if abs(obj.center[0]) > half or abs(obj.center[1]) > half:
                raise SchemaError(
                    f"object {i} center {obj.center[:2]} outside extent {self.extent}"
                )


@dataclass(frozen=True)
class SelectionConfig:
    """Query filtering: keep the top_k highest-scoring queries, then require
    score >= tau.  top_k larger than the stack's query count is clamped."""

    top_k: int = 32
    tau: float = 0.3

    def __post_init__(self):
        if self.top_k < 1:
            raise SchemaError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.tau <= 1.0:
            raise SchemaError(f"tau must lie in [0, 1], got {self.tau}")


class AttentionStack:
    """Per-layer, per-head cross-attention weights plus query scores.

    values has shape (L, H, Q, S) float32; every (layer, head, query) row is
    a softmax distribution over source tokens.  Arrays are frozen read-only.
    """

    def __init__(self, values: np.ndarray, query_scores: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.float32)
        query_scores = np.ascontiguousarray(query_scores, dtype=np.float32)
        if values.ndim != 4:
            raise SchemaError(f"attention values must be 4D (L,H,Q,S), got {values.shape}")
        if query_scores.shape != (values.shape[2],):
            raise SchemaError(
                f"query_scores shape {query_scores.shape} does not match Q={values.shape[2]}"
            )
        values.flags.writeable = False
        query_scores.flags.writeable = False
        self.values = values
        self.query_scores = query_scores

    @property
    def layers(self) -> int:
        return self.values.shape[0]

    @property
    def heads(self) -> int:
        return self.values.shape[1]

    @property
    def queries(self) -> int:
        return self.values.shape[2]

    @property
    def tokens(self) -> int:
        return self.values.shape[3]

    def validate(self, atol: float = 1e-5) -> None:
        """Check non-negativity and unit row sums (raises SchemaError)."""
        if not np.isfinite(self.values).all():
            raise SchemaError("attention weights contain non-finite values")
        if (self.values < 0).any():
            raise SchemaError("attention weights must be non-negative")
        if self.queries > 0 and self.tokens > 0:
            sums = self.values.sum(axis=3, dtype=np.float64)
            worst = float(np.abs(sums - 1.0).max(initial=0.0))
            if worst > atol:
                raise SchemaError(f"attention rows must sum to 1 (worst deviation {worst:.2e})")
        if not np.isfinite(self.query_scores).all():
            raise SchemaError("query scores contain non-finite values")
        if ((self.query_scores < 0) | (self.query_scores > 1)).any():
            raise SchemaError("query scores must lie in [0, 1]")

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttentionStack):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.query_scores, other.query_scores)
        )
