"""Number handling for the two arithmetic modes.

Exact mode works in :class:`fractions.Fraction` so every equality the
solvers promise is a bit-exact comparison. Float mode uses binary floats and a
relative tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

DEFAULT_FLOAT_TOL = 1e-9


def parse_number(x, exact=True):
    """Read ``x`` (int, float, Fraction or a string such as ``"3/7"``, ``"0.1"``).

    In exact mode floats are read through their decimal repr, so ``0.1``
    becomes ``1/10`` rather than the nearest binary fraction.
    """
    if isinstance(x, bool):
        raise TypeError("booleans are not numbers here")
    if exact:
        if isinstance(x, float):
            if not math.isfinite(x):
                raise ValueError(f"non-finite value {x!r}")
            return Fraction(repr(x))
        return Fraction(x)
    if isinstance(x, str):
        return float(Fraction(x))
    return float(x)


def is_exact(x) -> bool:
    return isinstance(x, Rational)


def format_number(x):
    """JSON-friendly rendering: ``"p/q"`` strings for fractions, floats as is."""
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, int):
        return str(x)
    return x


def sqrt_exact(x: Fraction):
    """Square root of a nonnegative rational, or None if it is irrational."""
    x = Fraction(x)
    if x < 0:
        raise ValueError("negative argument")
    n, d = x.numerator, x.denominator
    rn, rd = math.isqrt(n), math.isqrt(d)
    if rn * rn == n and rd * rd == d:
        return Fraction(rn, rd)
    return None


@dataclass(frozen=True)
class EqMode:
    """Equality policy for comparisons between engine outputs."""

    exact: bool = True
    tol: float = DEFAULT_FLOAT_TOL

    def __post_init__(self):
        if not self.exact and not self.tol > 0:
            raise ValueError("float mode needs a tolerance > 0")

    @classmethod
    def for_values(cls, *values, tol=DEFAULT_FLOAT_TOL):
        if all(is_exact(v) for v in values):
            return cls(True)
        return cls(False, tol)

    def eq(self, a, b) -> bool:
        if self.exact:
            return a == b
        return math.isclose(a, b, rel_tol=self.tol, abs_tol=self.tol)

    def le(self, a, b) -> bool:
        return a <= b or (not self.exact and self.eq(a, b))

    def lt(self, a, b) -> bool:
        return a < b and not (not self.exact and self.eq(a, b))

    def label(self):
        return "exact" if self.exact else f"float(tol={self.tol:g})"
