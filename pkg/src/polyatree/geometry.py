"""Elementary regions and recursive binary partition schemes.

The state space is either the unit cube ``[0,1]^p`` (Lebesgue measure) or the
binary table ``{1,2}^p`` (counting measure).  Regions are always reached from
the root by a finite sequence of binary splits:

* continuous regions are axis-aligned dyadic rectangles, coded per dimension
  by ``(depth, index)`` with the interval ``[index*2^-depth, (index+1)*2^-depth)``;
* discrete regions are table slices, coded per dimension by a state in
  ``{UNSET, 1, 2}``.

Three split schemes are provided: the full dyadic scheme (any of the ``p``
coordinates may be bisected), the cycling scheme (coordinates are bisected in
a fixed rotating order, one choice per region), and the binary-table scheme
(any still-unset coordinate of a table slice may be fixed).

All functions here are pure and all region objects are immutable, so they may
be used freely from concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "CONTINUOUS",
    "DISCRETE",
    "UNSET",
    "Region",
    "PartitionScheme",
    "full_dyadic",
    "cycling",
    "binary_table",
    "root_region",
    "num_splits",
    "split",
    "split_dimension",
    "measure",
    "log_measure",
    "diameter",
    "locate",
    "canonical_key",
]

CONTINUOUS = "continuous"
DISCRETE = "discrete"

#: Discrete dimension not fixed yet.
UNSET = 0

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class Region:
    """One elementary region of a recursive binary partition.

    Parameters
    ----------
    kind : str
        ``"continuous"`` or ``"discrete"``.
    coords : tuple
        Continuous: one ``(depth, index)`` pair per dimension.  Discrete: one
        state per dimension, ``0`` meaning unset, otherwise ``1`` or ``2``.
    """

    kind: str
    coords: tuple

    def __post_init__(self):
        if self.kind == CONTINUOUS:
            for depth, index in self.coords:
                if depth < 0 or not 0 <= index < (1 << depth):
                    raise ValueError(f"invalid dyadic code ({depth}, {index})")
        elif self.kind == DISCRETE:
            for state in self.coords:
                if state not in (UNSET, 1, 2):
                    raise ValueError(f"invalid table state {state}")
        else:
            raise ValueError(f"unknown region kind {self.kind!r}")

    @property
    def p(self) -> int:
        return len(self.coords)

    @property
    def level(self) -> int:
        """Number of splits applied to reach this region from the root."""
        if self.kind == CONTINUOUS:
            return sum(depth for depth, _ in self.coords)
        return sum(1 for state in self.coords if state != UNSET)

    def bounds(self) -> tuple[tuple[float, float], ...]:
        """Per-dimension ``[lo, hi)`` interval of a continuous region."""
        if self.kind != CONTINUOUS:
            raise ValueError("bounds are defined for continuous regions only")
        return tuple(
            (math.ldexp(index, -depth), math.ldexp(index + 1, -depth))
            for depth, index in self.coords
        )

    def contains(self, x: Sequence[float]) -> bool:
        """Membership under the left-closed/right-open convention.

        The interval abutting 1 is closed on the right so that membership is
        total on the unit cube.
        """
        if len(x) != self.p:
            raise ValueError("point dimension does not match region")
        if self.kind == DISCRETE:
            return all(s == UNSET or s == xi for s, xi in zip(self.coords, x))
        for (lo, hi), xi in zip(self.bounds(), x):
            if xi < lo:
                return False
            if xi >= hi and not (hi == 1.0 and xi == 1.0):
                return False
        return True


@dataclass(frozen=True)
class PartitionScheme:
    """A rule enumerating the legal binary splits of every region.

    ``variant`` is one of ``"full-dyadic"``, ``"cycling"``, ``"binary-table"``
    and ``p`` is the dimension count.  Every split produces exactly two
    children.
    """

    variant: str
    p: int

    def __post_init__(self):
        if self.variant not in ("full-dyadic", "cycling", "binary-table"):
            raise ValueError(f"unknown scheme variant {self.variant!r}")
        if self.p < 1:
            raise ValueError("dimension count must be >= 1")

    @property
    def kind(self) -> str:
        """Region kind this scheme partitions."""
        return DISCRETE if self.variant == "binary-table" else CONTINUOUS


def full_dyadic(p: int) -> PartitionScheme:
    """Continuous scheme: each of the p coordinates may be bisected."""
    return PartitionScheme("full-dyadic", p)


def cycling(p: int) -> PartitionScheme:
    """Continuous scheme with a single allowed split per region: the
    coordinate bisected at level k is ``(k mod p) + 1``."""
    return PartitionScheme("cycling", p)


def binary_table(p: int) -> PartitionScheme:
    """Discrete scheme on the 2^p table: fix any still-unset coordinate."""
    return PartitionScheme("binary-table", p)


def root_region(scheme: PartitionScheme) -> Region:
    if scheme.kind == CONTINUOUS:
        return Region(CONTINUOUS, ((0, 0),) * scheme.p)
    return Region(DISCRETE, (UNSET,) * scheme.p)


def _check_region(scheme: PartitionScheme, region: Region) -> None:
    if region.kind != scheme.kind or region.p != scheme.p:
        raise ValueError(
            f"region (kind={region.kind}, p={region.p}) does not belong to "
            f"scheme (variant={scheme.variant}, p={scheme.p})"
        )


def _unset_dims(region: Region) -> list[int]:
    return [d for d, state in enumerate(region.coords) if state == UNSET]


def num_splits(scheme: PartitionScheme, region: Region) -> int:
    """Number M(A) of legal ways to split ``region`` under ``scheme``."""
    _check_region(scheme, region)
    if scheme.variant == "full-dyadic":
        return scheme.p
    if scheme.variant == "cycling":
        return 1
    return len(_unset_dims(region))


def split_dimension(scheme: PartitionScheme, region: Region, j: int) -> int:
    """0-based coordinate bisected (or fixed) by split ``j`` (1-based)."""
    m = num_splits(scheme, region)
    if not 1 <= j <= m:
        raise ValueError(f"split index {j} out of range 1..{m}")
    if scheme.variant == "full-dyadic":
        return j - 1
    if scheme.variant == "cycling":
        return region.level % scheme.p
    return _unset_dims(region)[j - 1]


def split(scheme: PartitionScheme, region: Region, j: int) -> tuple[Region, Region]:
    """Materialize the two children of ``region`` under split ``j``.

    Continuous children halve the coordinate's interval exactly; discrete
    children fix the coordinate to 1 and 2 respectively.  The children are
    disjoint, their union is the parent, and each has ``level + 1``.
    """
    dim = split_dimension(scheme, region, j)
    coords = list(region.coords)
    if region.kind == CONTINUOUS:
        depth, index = coords[dim]
        coords[dim] = (depth + 1, 2 * index)
        left = Region(CONTINUOUS, tuple(coords))
        coords[dim] = (depth + 1, 2 * index + 1)
        right = Region(CONTINUOUS, tuple(coords))
    else:
        coords[dim] = 1
        left = Region(DISCRETE, tuple(coords))
        coords[dim] = 2
        right = Region(DISCRETE, tuple(coords))
    return left, right


def measure(region: Region) -> float:
    """Exact region measure: Lebesgue volume (continuous) or cell count.

    The value is a product of exact powers of two, so no floating-point
    cancellation occurs.
    """
    if region.kind == CONTINUOUS:
        return math.ldexp(1.0, -region.level)
    return float(1 << (region.p - region.level))


def log_measure(region: Region) -> float:
    """log measure, computed as a multiple of log 2 for exactness."""
    if region.kind == CONTINUOUS:
        return -region.level * _LN2
    return (region.p - region.level) * _LN2


def diameter(region: Region) -> float:
    """Euclidean diameter of a continuous region."""
    return math.sqrt(sum((hi - lo) ** 2 for lo, hi in region.bounds()))


def locate(scheme: PartitionScheme, region: Region, j: int, x: Sequence[float]) -> int:
    """Child index (1 or 2) of the child of split ``j`` containing ``x``.

    Midpoint ties go right under the left-closed/right-open convention.
    """
    _check_region(scheme, region)
    if not region.contains(x):
        raise ValueError("point lies outside the region")
    dim = split_dimension(scheme, region, j)
    if region.kind == DISCRETE:
        return 1 if x[dim] == 1 else 2
    depth, index = region.coords[dim]
    mid = math.ldexp(2 * index + 1, -(depth + 1))
    return 1 if x[dim] < mid else 2


def canonical_key(region: Region):
    """Hashable key injective over regions, merging split orders.

    Region identity is the rectangle (or table slice) itself, not the split
    path, so full-dyadic split orders that reach the same rectangle share a
    key.
    """
    return (region.kind[0], region.coords)


def descend(scheme: PartitionScheme, steps: Iterable[tuple[int, int]]) -> Region:
    """Apply ``(split j, child c)`` steps from the root; handy in tests."""
    region = root_region(scheme)
    for j, c in steps:
        region = split(scheme, region, j)[c - 1]
    return region
