"""Reference data generators, exact L1 metrics, and a rational oracle.

The generators reproduce four benchmark targets on the unit interval/square:

* ``spiky-uniforms``: 0.5 U(0.23, 0.232) + 0.5 U(0.233, 0.235);
* ``beta-mixture``: 0.7 Beta(40, 60) + 0.3 Beta(2000, 1000);
* ``uniform-semibeta-2d``: weight 0.35 uniform on [0.78, 0.80] x [0.2, 0.8]
  plus weight 0.65 with X ~ U(0.25, 0.4) and Y ~ Beta(100, 120);
* ``bivariate-normal-2d``: N((0.6, 0.4), 0.1^2 I) truncated to the unit
  square by rejection, density renormalized by the truncated mass.

``custom`` mixes uniform boxes and exists mainly so tests can build targets
with dyadic edges.  All sampling uses per-generator Philox streams keyed by
BLAKE2b of the generator name and seed, so datasets are reproducible.

``l1_distance`` integrates |estimate - truth|: exactly by common refinement
in 1D (with CDF evaluation between sign changes for the smooth mixture), by
fixed-seed Monte Carlo with a reported standard error in 2D.

``brute_force_phi`` is an independent oracle for the marginal recursion on
small binary tables: it enumerates every stopped tree topology explicitly
and accumulates prior weight times likelihood in exact rational arithmetic,
using Gamma(m + 1/2) = (2m)! sqrt(pi) / (4^m m!) so every Beta ratio is
rational.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import roots_legendre
from scipy.stats import beta as beta_dist
from scipy.stats import norm as norm_dist

from .estimator import PiecewiseDensity

__all__ = [
    "GeneratorSpec",
    "KNOWN_GENERATORS",
    "dim",
    "generate",
    "generate_info",
    "true_density",
    "true_cdf",
    "density_breakpoints",
    "l1_distance",
    "dirichlet_ratio_fraction",
    "brute_force_phi",
]

KNOWN_GENERATORS = (
    "spiky-uniforms",
    "beta-mixture",
    "uniform-semibeta-2d",
    "bivariate-normal-2d",
    "custom",
)

_BN_MEAN = (0.6, 0.4)
_BN_SD = 0.1

#: Transposed center occasionally quoted for this benchmark; we pin (0.6, 0.4).
BN_CENTER_NOTE = (
    "bivariate normal benchmark center fixed to (0.6, 0.4); the transposed "
    "variant (0.4, 0.6) is intentionally not used"
)


@dataclass(frozen=True)
class GeneratorSpec:
    """A named benchmark target plus seed (and boxes, for ``custom``).

    ``pieces`` applies to ``custom`` only: a tuple of ``(weight, lo, hi)``
    axis-aligned uniform boxes with weights summing to 1.
    """

    name: str
    seed: int = 0
    pieces: Optional[tuple] = None

    def __post_init__(self):
        if self.name not in KNOWN_GENERATORS:
            raise ValueError(f"unknown generator {self.name!r}")
        if self.name == "custom":
            if not self.pieces:
                raise ValueError("custom generator needs mixture pieces")
            total = math.fsum(w for w, _, _ in self.pieces)
            if abs(total - 1.0) > 1e-12:
                raise ValueError("custom mixture weights must sum to 1")
        elif self.pieces is not None:
            raise ValueError("pieces apply to the custom generator only")


def dim(spec: GeneratorSpec) -> int:
    if spec.name in ("spiky-uniforms", "beta-mixture"):
        return 1
    if spec.name == "custom":
        return len(spec.pieces[0][1])
    return 2


def _rng(spec: GeneratorSpec, purpose: str = "datagen") -> np.random.Generator:
    payload = repr((purpose, spec.name, spec.seed)).encode()
    digest = hashlib.blake2b(payload, digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=np.frombuffer(digest, np.uint64)))


def generate(spec: GeneratorSpec, n: int) -> np.ndarray:
    """n i.i.d. draws from the named mixture, shape (n, p)."""
    return generate_info(spec, n)[0]


def generate_info(spec: GeneratorSpec, n: int) -> tuple[np.ndarray, dict]:
    """Like :func:`generate` but also returns generation metadata."""
    if n < 1:
        raise ValueError("sample size must be >= 1")
    rng = _rng(spec)
    info: dict = {"generator": spec.name, "seed": spec.seed, "n": n}
    if spec.name == "spiky-uniforms":
        first = rng.random(n) < 0.5
        a = rng.uniform(0.23, 0.232, n)
        b = rng.uniform(0.233, 0.235, n)
        return np.where(first, a, b).reshape(-1, 1), info
    if spec.name == "beta-mixture":
        first = rng.random(n) < 0.7
        a = rng.beta(40, 60, n)
        b = rng.beta(2000, 1000, n)
        return np.where(first, a, b).reshape(-1, 1), info
    if spec.name == "uniform-semibeta-2d":
        first = rng.random(n) < 0.35
        ax = rng.uniform(0.78, 0.80, n)
        ay = rng.uniform(0.2, 0.8, n)
        bx = rng.uniform(0.25, 0.4, n)
        by = rng.beta(100, 120, n)
        x = np.where(first, ax, bx)
        y = np.where(first, ay, by)
        return np.column_stack([x, y]), info
    if spec.name == "bivariate-normal-2d":
        out = np.empty((n, 2))
        filled = 0
        rejected = 0
        while filled < n:
            batch = rng.normal(_BN_MEAN, _BN_SD, size=(max(n - filled, 64), 2))
            ok = ((batch >= 0.0) & (batch <= 1.0)).all(axis=1)
            rejected += int((~ok).sum())
            take = batch[ok][: n - filled]
            out[filled : filled + take.shape[0]] = take
            filled += take.shape[0]
        info["rejected"] = rejected
        info["note"] = BN_CENTER_NOTE
        return out, info
    # custom uniform boxes
    pieces = spec.pieces
    weights = np.array([w for w, _, _ in pieces])
    choice = rng.choice(len(pieces), size=n, p=weights / weights.sum())
    p = len(pieces[0][1])
    u = rng.random((n, p))
    lo = np.array([piece[1] for piece in pieces])[choice]
    hi = np.array([piece[2] for piece in pieces])[choice]
    return lo + u * (hi - lo), info


@lru_cache(maxsize=8)
def _bn_truncation_mass() -> float:
    """Mass of the benchmark normal inside the unit square, by 2D
    Gauss-Legendre quadrature (64x64 nodes, accurate far past 1e-10)."""
    nodes, weights = roots_legendre(64)
    x = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    px = norm_dist.pdf(x, _BN_MEAN[0], _BN_SD)
    py = norm_dist.pdf(x, _BN_MEAN[1], _BN_SD)
    return float((w * px).sum() * (w * py).sum())


def _in_box(x: np.ndarray, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
    """Half-open box membership, closed on faces that touch 1."""
    inside = np.ones(x.shape[0], dtype=bool)
    for d, (a, b) in enumerate(zip(lo, hi)):
        upper = x[:, d] <= b if b == 1.0 else x[:, d] < b
        inside &= (x[:, d] >= a) & upper
    return inside


def true_density(spec: GeneratorSpec, x: np.ndarray) -> np.ndarray:
    """Exact mixture density at points ``x`` (shape (m, p) or (m,) in 1D)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim(spec) == 1 else x.reshape(1, -1)
    if x.shape[1] != dim(spec):
        raise ValueError("point dimension does not match the generator")
    if ((x < 0.0) | (x > 1.0)).any():
        raise ValueError("points must lie in the unit cube")
    if spec.name == "spiky-uniforms":
        xi = x[:, 0]
        out = np.zeros(x.shape[0])
        out[(xi >= 0.23) & (xi < 0.232)] = 0.5 / 0.002
        out[(xi >= 0.233) & (xi < 0.235)] = 0.5 / 0.002
        return out
    if spec.name == "beta-mixture":
        xi = x[:, 0]
        return 0.7 * beta_dist.pdf(xi, 40, 60) + 0.3 * beta_dist.pdf(xi, 2000, 1000)
    if spec.name == "uniform-semibeta-2d":
        out = np.zeros(x.shape[0])
        out[_in_box(x, (0.78, 0.2), (0.80, 0.8))] += 0.35 / 0.012
        strip = _in_box(x[:, :1], (0.25,), (0.4,))
        out[strip] += (0.65 / 0.15) * beta_dist.pdf(x[strip, 1], 100, 120)
        return out
    if spec.name == "bivariate-normal-2d":
        z = _bn_truncation_mass()
        return (
            norm_dist.pdf(x[:, 0], _BN_MEAN[0], _BN_SD)
            * norm_dist.pdf(x[:, 1], _BN_MEAN[1], _BN_SD)
            / z
        )
    out = np.zeros(x.shape[0])
    for w, lo, hi in spec.pieces:
        vol = math.prod(b - a for a, b in zip(lo, hi))
        out[_in_box(x, lo, hi)] += w / vol
    return out


def true_cdf(spec: GeneratorSpec, x: np.ndarray) -> np.ndarray:
    """CDF of a one-dimensional generator (used by the exact L1 routine)."""
    if dim(spec) != 1:
        raise ValueError("cdf provided for 1D generators only")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if spec.name == "beta-mixture":
        return 0.7 * beta_dist.cdf(x, 40, 60) + 0.3 * beta_dist.cdf(x, 2000, 1000)
    out = np.zeros(x.shape)
    for w, (a,), (b,) in _uniform_pieces(spec):
        out += w * np.clip((x - a) / (b - a), 0.0, 1.0)
    return out


def _uniform_pieces(spec: GeneratorSpec):
    if spec.name == "spiky-uniforms":
        return ((0.5, (0.23,), (0.232,)), (0.5, (0.233,), (0.235,)))
    if spec.name == "custom":
        return spec.pieces
    raise ValueError(f"{spec.name} is not a piecewise-uniform generator")


def density_breakpoints(spec: GeneratorSpec) -> np.ndarray:
    """1D points where the true density is discontinuous."""
    if dim(spec) != 1:
        raise ValueError("breakpoints apply to 1D generators")
    if spec.name == "beta-mixture":
        return np.array([])  # smooth on (0, 1)
    edges = set()
    for _, (a,), (b,) in _uniform_pieces(spec):
        edges.update((a, b))
    return np.array(sorted(edges))


@lru_cache(maxsize=8)
def _beta_mixture_turning_points() -> tuple[float, ...]:
    """Stationary points of the smooth mixture density, for exact L1 pieces.

    The density is piecewise monotone between consecutive turning points, so
    a level crossing inside a monotone piece is bracketed by its endpoints.
    """

    def dpdf(x: float) -> float:
        total = 0.0
        for w, a, b in ((0.7, 40.0, 60.0), (0.3, 2000.0, 1000.0)):
            pdf = beta_dist.pdf(x, a, b)
            if pdf > 0.0:
                total += w * pdf * ((a - 1.0) / x - (b - 1.0) / (1.0 - x))
        return total

    grid = np.linspace(1e-9, 1.0 - 1e-9, 8193)
    signs = np.array([dpdf(t) for t in grid])
    roots = []
    for t0, v0, t1, v1 in zip(grid[:-1], signs[:-1], grid[1:], signs[1:]):
        if v0 == 0.0:
            roots.append(float(t0))
        elif (v0 < 0) != (v1 < 0):
            roots.append(float(brentq(dpdf, t0, t1, xtol=1e-15, rtol=8.9e-16)))
    return tuple(roots)


def _segment_abs_integral(
    spec: GeneratorSpec, lo: float, hi: float, c: float, smooth: bool
) -> float:
    """Exact integral of |truth - c| over [lo, hi] (c constant)."""
    if hi <= lo:
        return 0.0
    if not smooth:
        g = float(true_density(spec, np.array([[(lo + hi) / 2]]))[0])
        return abs(g - c) * (hi - lo)

    def h(t: float) -> float:
        return float(true_density(spec, np.array([[t]]))[0]) - c

    pieces = [lo]
    for t in _beta_mixture_turning_points():
        if lo < t < hi:
            pieces.append(t)
    pieces.append(hi)
    cuts = [lo]
    for t0, t1 in zip(pieces, pieces[1:]):
        v0, v1 = h(t0), h(t1)
        if v0 == 0.0 or (v0 < 0) != (v1 < 0):
            root = t0 if v0 == 0.0 else brentq(h, t0, t1, xtol=1e-15, rtol=8.9e-16)
            if cuts[-1] < root < hi:
                cuts.append(root)
    cuts.append(hi)
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        dg = float(true_cdf(spec, np.array([b]))[0] - true_cdf(spec, np.array([a]))[0])
        total += abs(dg - c * (b - a))
    return total


def l1_distance(
    f: PiecewiseDensity,
    spec: GeneratorSpec,
    mc_points: int = 1_000_000,
) -> tuple[float, Optional[float]]:
    """Integrated absolute error of ``f`` against the generator's density.

    1D: exact, by refining the leaf partition with the truth's breakpoints
    (CDF differences between sign changes handle the smooth mixture).
    2D: Monte Carlo over ``mc_points`` fixed-seed uniforms; the second item
    of the return value is the standard error (None in the exact case).
    """
    p = dim(spec)
    if f.leaves[0].region.p != p or f.kind != "continuous":
        raise ValueError("density and generator dimensions do not match")
    if p == 1:
        lows, vals = f._eval_1d
        edges = np.concatenate([lows, [1.0], density_breakpoints(spec)])
        edges = np.unique(np.clip(edges, 0.0, 1.0))
        smooth = spec.name == "beta-mixture"
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            c = float(vals[np.searchsorted(lows, (lo + hi) / 2, side="right") - 1])
            total += _segment_abs_integral(spec, lo, hi, c, smooth)
        return total, None
    if p != 2:
        raise ValueError("l1_distance supports p = 1 or 2")
    payload = repr(("l1mc", spec.name, spec.seed)).encode()
    digest = hashlib.blake2b(payload, digest_size=16).digest()
    rng = np.random.Generator(np.random.Philox(key=np.frombuffer(digest, np.uint64)))
    pts = rng.random((mc_points, 2))
    gaps = np.abs(f.evaluate(pts) - true_density(spec, pts))
    return float(gaps.mean()), float(gaps.std(ddof=1) / math.sqrt(mc_points))


# ---------------------------------------------------------------------------
# Exact rational oracle on small binary tables.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def dirichlet_ratio_fraction(n1: int, n2: int) -> Fraction:
    """Exact D(n + 1/2)/D(1/2) for a binary split with Jeffreys weights.

    Using Gamma(m + 1/2) = (2m)! sqrt(pi) / (4^m m!), the ratio reduces to
    (2 n1)! (2 n2)! / (4^(n1+n2) n1! n2! (n1+n2)!).
    """
    if n1 < 0 or n2 < 0:
        raise ValueError("counts must be nonnegative")
    num = math.factorial(2 * n1) * math.factorial(2 * n2)
    den = 4 ** (n1 + n2) * math.factorial(n1) * math.factorial(n2)
    den *= math.factorial(n1 + n2)
    return Fraction(num, den)


def _topologies(states: tuple) -> Iterator:
    """All stopped tree topologies of a table slice (cells are atoms)."""
    unset = [d for d, s in enumerate(states) if s == 0]
    if not unset:
        yield ("cell",)
        return
    yield ("stop",)
    for d in unset:
        left = states[:d] + (1,) + states[d + 1 :]
        right = states[:d] + (2,) + states[d + 1 :]
        for lt in _topologies(left):
            for rt in _topologies(right):
                yield ("split", d, lt, rt)


def _topology_value(
    topo: tuple, states: tuple, pts: np.ndarray, rho: Fraction
) -> Fraction:
    """Prior weight times exact likelihood of the data for one topology."""
    m = sum(1 for s in states if s == 0)
    n = pts.shape[0]
    if topo[0] == "cell":
        return Fraction(1)
    if topo[0] == "stop":
        return rho * Fraction(1, (2**m) ** n)
    _, d, left_topo, right_topo = topo
    mask = pts[:, d] == 1
    left = states[:d] + (1,) + states[d + 1 :]
    right = states[:d] + (2,) + states[d + 1 :]
    n1 = int(mask.sum())
    n2 = n - n1
    return (
        (1 - rho)
        * Fraction(1, m)
        * dirichlet_ratio_fraction(n1, n2)
        * _topology_value(left_topo, left, pts[mask], rho)
        * _topology_value(right_topo, right, pts[~mask], rho)
    )


def brute_force_phi(points: np.ndarray, rho=Fraction(1, 2)) -> Fraction:
    """Exact Phi for a binary table with Jeffreys weights and constant rho.

    Enumerates every stopped tree topology of the table and sums prior
    weight times likelihood in rational arithmetic; an independent check of
    the floating-point recursion.  Tractable bounds: p <= 3, n <= 5.
    """
    pts = np.asarray(points, dtype=int)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 1)
    if pts.ndim != 2:
        raise ValueError("points must be a (n, p) array")
    n, p = pts.shape
    if p > 3 or p < 1:
        raise ValueError("oracle bounds exceeded: p must be in 1..3")
    if n > 5:
        raise ValueError("oracle bounds exceeded: n must be <= 5")
    if pts.size and not np.isin(pts, (1, 2)).all():
        raise ValueError("table data must take values 1 or 2")
    rho = Fraction(rho)
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    states = (0,) * p
    return sum(
        (_topology_value(topo, states, pts, rho) for topo in _topologies(states)),
        start=Fraction(0),
    )
