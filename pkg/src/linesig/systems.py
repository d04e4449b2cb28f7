"""Canonical example systems used throughout demos and tests."""

from __future__ import annotations

from .expr import parse
from .geometry import vector_field

__all__ = [
    "identity_fields",
    "heisenberg_fields",
    "engel_fields",
    "heisenberg_straightening",
]


def identity_fields(n: int) -> tuple:
    """The elliptic system V_i = d/dx_i (the solution is x0 + driver)."""
    return tuple(
        vector_field(*["1" if i == j else "0" for j in range(n)]) for i in range(n)
    )


def heisenberg_fields() -> tuple:
    """V1 = d/dx - y d/dz and V2 = d/dy + x d/dz on R^3.

    Their bracket is the constant field 2 d/dz, so {V1, V2, [V1, V2]} is a
    global frame and the third solution coordinate is the Levy area of the
    first two driver coordinates.
    """
    v1 = vector_field("1", "0", "-y")
    v2 = vector_field("0", "1", "x")
    return v1, v2


def engel_fields() -> tuple:
    """A step-three pair on R^4 with growth vector (2, 3, 4)."""
    v1 = vector_field("1", "0", "0", "0")
    v2 = vector_field("0", "1", "x1", "x3")
    return v1, v2


def heisenberg_straightening() -> dict:
    """Coordinate change (u, v, w) = (y, x, z - x*y) sending V2 to d/du.

    Returns the forward substitution map {new index -> expression in the old
    coordinates}, suitable for composing functions written in straightened
    coordinates back onto R^3.
    """
    return {1: parse("y"), 2: parse("x"), 3: parse("z - x*y")}
