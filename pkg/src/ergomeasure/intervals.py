"""Vectorized double-precision interval arithmetic with outward rounding.

Each operation computes the endpoints in round-to-nearest and then widens
them by one ulp with ``nextafter``, which encloses the exact result of the
operation on the enclosed reals. ``sin`` and ``cos`` are additionally
widened by a few ulps of 1 to absorb libm error.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

_TWO_PI = 2.0 * np.pi
_TRIG_SLACK = 4.0 * np.finfo(float).eps


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


def fraction_bounds(value: Fraction) -> tuple[float, float]:
    """Return floats ``lo <= value <= hi`` that are as tight as possible."""
    f = float(value)
    fv = Fraction(f)
    if fv == value:
        return f, f
    if fv > value:
        return float(np.nextafter(f, -np.inf)), f
    return f, float(np.nextafter(f, np.inf))


PI_LO, PI_HI = 3.141592653589793, float(np.nextafter(3.141592653589793, np.inf))


class Interval:
    """Array of closed intervals ``[lo, hi]``.

    Parameters
    ----------
    lo, hi : array_like
        Lower and upper endpoints. Broadcast against each other.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        self.lo, self.hi = np.broadcast_arrays(lo, hi)

    @classmethod
    def point(cls, x) -> "Interval":
        return cls(x, x)

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def mag(self) -> np.ndarray:
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def __repr__(self) -> str:
        return f"Interval(lo={self.lo!r}, hi={self.hi!r})"

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other: "Interval") -> "Interval":
        with np.errstate(invalid="ignore"):
            p = np.stack(
                [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi]
            )
        # 0 * inf only arises from unbounded inputs; treat it as 0
        p = np.where(np.isnan(p), 0.0, p)
        return Interval(_down(p.min(axis=0)), _up(p.max(axis=0)))

    def intersect(self, other: "Interval") -> "Interval":
        return Interval(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def hull(self, other: "Interval") -> "Interval":
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def sin(self) -> "Interval":
        return _periodic_extremes(self, np.sin, peak=0.5 * np.pi)

    def cos(self) -> "Interval":
        return _periodic_extremes(self, np.cos, peak=0.0)


def _periodic_extremes(x: Interval, fn, peak: float) -> Interval:
    """Enclose ``fn`` over ``x`` for fn in {sin, cos} with maximum at ``peak``."""
    lo, hi = x.lo, x.hi
    with np.errstate(invalid="ignore"):
        a, b = fn(lo), fn(hi)
    out_lo = np.minimum(a, b) - _TRIG_SLACK
    out_hi = np.maximum(a, b) + _TRIG_SLACK
    # widen the test range slightly so extremes at an endpoint are never missed
    pad = 8.0 * np.finfo(float).eps * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    lo_p, hi_p = lo - pad, hi + pad
    with np.errstate(invalid="ignore"):
        k_max = np.ceil((lo_p - peak) / _TWO_PI)
        has_max = peak + k_max * _TWO_PI <= hi_p
        k_min = np.ceil((lo_p - peak - np.pi) / _TWO_PI)
        has_min = peak + np.pi + k_min * _TWO_PI <= hi_p
    full = ~np.isfinite(lo) | ~np.isfinite(hi) | (hi - lo >= _TWO_PI)
    out_hi = np.where(has_max | full, 1.0, np.minimum(out_hi, 1.0))
    out_lo = np.where(has_min | full, -1.0, np.maximum(out_lo, -1.0))
    return Interval(out_lo, out_hi)
