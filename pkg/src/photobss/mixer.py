"""Instantaneous 2x2 mixing of the SOI and the interference."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, ShapeError


@dataclass(frozen=True)
class MixingMatrix:
    a11: float = 1.0
    a12: float = 0.5
    a21: float = 0.5
    a22: float = 1.0
    near_singular_det: float = 1e-3

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise InvalidSpecError(f"mixing matrix entries must be finite: {self.as_array().tolist()}")

    @classmethod
    def from_array(cls, a, **kw):
        a = np.asarray(a, dtype=float)
        return cls(a[0, 0], a[0, 1], a[1, 0], a[1, 1], **kw)

    def as_array(self):
        return np.array([[self.a11, self.a12], [self.a21, self.a22]], dtype=float)

    @property
    def det(self):
        return self.a11 * self.a22 - self.a12 * self.a21

    @property
    def near_singular(self):
        return abs(self.det) < self.near_singular_det


def check_same_grid(a, b):
    if len(a) != len(b):
        raise ShapeError(f"length mismatch: {len(a)} vs {len(b)}")
    if not np.isclose(a.dt, b.dt, rtol=1e-12, atol=0):
        raise ShapeError(f"sample period mismatch: {a.dt} vs {b.dt}")


def mix(s_soi, s_int, a):
    """Return ``(x1, x2)`` with ``x = A @ [s_soi, s_int]`` applied sample by sample."""
    check_same_grid(s_soi, s_int)
    s, n = s_soi.samples, s_int.samples
    x1 = a.a11 * s + a.a12 * n
    x2 = a.a21 * s + a.a22 * n
    return s_soi.with_samples(x1, "x1"), s_soi.with_samples(x2, "x2")
