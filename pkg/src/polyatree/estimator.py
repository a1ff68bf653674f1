"""Density estimation from the posterior tree.

Three estimators are provided.

* :func:`mean_density_dichotomous` computes the posterior mean density for
  schemes with a unique split per region (the cycling scheme, or the full
  dyadic scheme in one dimension) via the two-sequence induction

      a_i = mu(A_i)/mu(A_{i-1}) * a_{i-1} + alpha_i/(alpha_i+alpha_i') * rho_i * b_{i-1}
      b_i = alpha_i/(alpha_i+alpha_i') * (1 - rho_i) * b_{i-1}

  started from ``a_0 = rho(root | data)``, ``b_0 = 1 - a_0``, with all
  quantities taken from the posterior.  ``a_i + b_i`` is the posterior mean
  mass of A_i, so the emitted leaf density is ``(a_i + b_i)/mu(A_i)``.

* :func:`hmap_tree` learns a representative partition top-down: stop when the
  posterior stopping probability exceeds 1/2 (ties stop), otherwise split in
  the direction with the highest posterior selection probability (ties to the
  lowest index).  :func:`conditional_mean_density` then turns the fixed tree
  into a piecewise-constant estimate whose leaf masses are products of Beta
  posterior means along the path.

* :func:`hutter_point_density` evaluates the posterior mean at a point as the
  ratio of the root marginals with and without the point appended to the
  data.  The base table is cached and only the regions containing the query
  point are recomputed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np

from .geometry import (
    CONTINUOUS,
    Region,
    canonical_key,
    log_measure,
    measure,
    num_splits,
    root_region,
    split,
    split_dimension,
)
from .marginal import (
    DataIndex,
    NumericalFault,
    Posterior,
    RecursionLimits,
    log_dirichlet_ratio,
    terminal_depth,
)
from .prior import PriorSpec, assignment_weights

__all__ = [
    "PieceLeaf",
    "PiecewiseDensity",
    "TreeNode",
    "TreeTopology",
    "mean_density_dichotomous",
    "depth_mass_sums",
    "hmap_tree",
    "conditional_mean_density",
    "HutterDensity",
    "hutter_point_density",
    "grid_average",
]

STOP_POSTERIOR = "posterior"
STOP_PRECISION = "precision"
STOP_QUERY_DEPTH = "query-depth"
STOP_EMPTY = "empty"


@dataclass(frozen=True)
class PieceLeaf:
    region: Region
    density: float
    reason: str


@dataclass(frozen=True)
class PiecewiseDensity:
    """A piecewise-constant density on a finite stopped partition.

    Leaves partition the state space; each carries one nonnegative density
    value.  ``normalization_error`` should be at the rounding scale; it is
    asserted (at 1e-8) by the test suite rather than the constructor.
    """

    leaves: tuple[PieceLeaf, ...]

    def __post_init__(self):
        for leaf in self.leaves:
            if leaf.density < 0:
                raise NumericalFault("negative density value")

    @property
    def kind(self) -> str:
        return self.leaves[0].region.kind

    def masses(self) -> np.ndarray:
        return np.array([lf.density * measure(lf.region) for lf in self.leaves])

    def total_mass(self) -> float:
        return float(math.fsum(self.masses().tolist()))

    def normalization_error(self) -> float:
        return abs(self.total_mass() - 1.0)

    @cached_property
    def _eval_1d(self):
        pairs = sorted(
            ((lf.region.bounds()[0][0], lf.density) for lf in self.leaves)
        )
        lows = np.array([p[0] for p in pairs])
        vals = np.array([p[1] for p in pairs])
        return lows, vals

    @cached_property
    def _eval_nd(self):
        groups: dict = {}
        for lf in self.leaves:
            depths = tuple(d for d, _ in lf.region.coords)
            idx = tuple(i for _, i in lf.region.coords)
            groups.setdefault(depths, {})[idx] = lf.density
        return groups

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Density at points ``x`` (shape ``(m, p)`` or ``(m,)`` in 1D)."""
        x = np.asarray(x, dtype=float)
        if self.kind != CONTINUOUS:
            return self._evaluate_discrete(x)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        p = self.leaves[0].region.p
        if x.shape[1] != p:
            raise ValueError("point dimension does not match the density")
        if p == 1:
            lows, vals = self._eval_1d
            pos = np.searchsorted(lows, x[:, 0], side="right") - 1
            if (pos < 0).any():
                raise ValueError("point outside the unit cube")
            return vals[pos]
        out = np.full(x.shape[0], np.nan)
        todo = np.ones(x.shape[0], dtype=bool)
        for depths, cells in self._eval_nd.items():
            if not todo.any():
                break
            codes = []
            for d, depth in enumerate(depths):
                c = np.floor(np.ldexp(x[:, d], depth))
                np.minimum(c, (1 << depth) - 1, out=c)
                codes.append(c.astype(np.int64))
            keys = list(cells)
            key_arr = np.array(keys, dtype=np.int64)
            val_arr = np.array([cells[k] for k in keys])
            # Pack per-dim cell codes into one integer for a vector lookup.
            packed = np.zeros(x.shape[0], dtype=np.int64)
            packed_keys = np.zeros(len(keys), dtype=np.int64)
            for d, depth in enumerate(depths):
                packed = (packed << (depth + 1)) | codes[d]
                packed_keys = (packed_keys << (depth + 1)) | key_arr[:, d]
            order = np.argsort(packed_keys)
            packed_keys = packed_keys[order]
            val_arr = val_arr[order]
            pos = np.searchsorted(packed_keys, packed)
            pos = np.clip(pos, 0, len(keys) - 1)
            hit = todo & (packed_keys[pos] == packed)
            out[hit] = val_arr[pos[hit]]
            todo &= ~hit
        if todo.any():
            raise ValueError("some points match no leaf of the partition")
        return out

    def _evaluate_discrete(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 1:
            x = x.reshape(1, -1)
        out = np.empty(x.shape[0])
        for i, xi in enumerate(x):
            for lf in self.leaves:
                if lf.region.contains(tuple(xi)):
                    out[i] = lf.density
                    break
            else:
                raise ValueError("point matches no leaf")
        return out

    def to_json_dict(self) -> dict:
        return {
            "format_version": 1,
            "kind": self.kind,
            "leaves": [
                {
                    "region": _region_doc(lf.region),
                    "density": lf.density,
                    "reason": lf.reason,
                }
                for lf in self.leaves
            ],
        }


def _region_doc(region: Region) -> dict:
    if region.kind == CONTINUOUS:
        return {
            "kind": region.kind,
            "dims": [{"depth": d, "index": i} for d, i in region.coords],
            "bounds": [[lo, hi] for lo, hi in region.bounds()],
        }
    return {"kind": region.kind, "states": list(region.coords)}


# ---------------------------------------------------------------------------
# Posterior mean through the a/b induction (unique-split schemes).
# ---------------------------------------------------------------------------


def _require_unique_split(spec: PriorSpec) -> None:
    scheme = spec.scheme
    if scheme.variant == "cycling":
        return
    if scheme.variant == "full-dyadic" and scheme.p == 1:
        return
    raise ValueError(
        "the inductive posterior mean needs a unique split per region "
        "(cycling scheme, or full dyadic with p = 1); use the hmap "
        "estimator for multi-split schemes"
    )


def mean_density_dichotomous(
    data: np.ndarray | DataIndex,
    spec: PriorSpec,
    limits: Optional[RecursionLimits] = None,
    query_depth: Optional[int] = None,
    posterior: Optional[Posterior] = None,
) -> PiecewiseDensity:
    """Posterior mean density down to ``query_depth`` (default: the depth at
    which the precision threshold forces stops).

    Branches end early at forced-stop regions and below empty regions (the
    posterior mean is exactly uniform there when the two assignment weights
    are equal, so truncation is lossless).
    """
    _require_unique_split(spec)
    post = posterior if posterior is not None else Posterior(data, spec, limits)
    limits = post.limits
    if query_depth is None:
        query_depth = terminal_depth(limits)
    if query_depth < 0:
        raise ValueError("query_depth must be nonnegative")
    scheme = spec.scheme
    leaves: list[PieceLeaf] = []

    def leaf_reason(region: Region, n: int, a1: float, a2: float) -> Optional[str]:
        if post.forced_stop(region):
            return STOP_PRECISION
        if region.level >= query_depth:
            return STOP_QUERY_DEPTH
        if n == 0 and a1 == a2:
            return STOP_EMPTY
        return None

    def descend(region: Region, idx: np.ndarray, a: float, b: float) -> None:
        a1, a2 = assignment_weights(spec, region, 1)
        reason = leaf_reason(region, idx.size, a1, a2)
        if reason is not None:
            leaves.append(PieceLeaf(region, (a + b) / measure(region), reason))
            return
        idx_l, idx_r = post.data.partition(region, 1, idx)
        left, right = split(scheme, region, 1)
        pa1 = idx_l.size + a1
        pa2 = idx_r.size + a2
        total = pa1 + pa2
        for child, idx_c, pa in ((left, idx_l, pa1), (right, idx_r, pa2)):
            theta = pa / total
            vol = measure(child) / measure(region)
            ca1, ca2 = assignment_weights(spec, child, 1)
            reason_c = leaf_reason(child, idx_c.size, ca1, ca2)
            if reason_c is not None:
                mass = vol * a + theta * b
                leaves.append(PieceLeaf(child, mass / measure(child), reason_c))
            else:
                rho_c = post.rho(child)
                descend(child, idx_c, vol * a + theta * rho_c * b, theta * (1 - rho_c) * b)

    root = post.root
    a0 = post.rho(root)
    idx0 = post.data.root_indices()
    wa1, wa2 = assignment_weights(spec, root, 1)
    reason0 = leaf_reason(root, idx0.size, wa1, wa2)
    if reason0 is not None:
        leaves.append(PieceLeaf(root, 1.0 / measure(root), reason0))
    else:
        descend(root, idx0, a0, 1.0 - a0)
    return PiecewiseDensity(tuple(leaves))


def depth_mass_sums(
    data: np.ndarray | DataIndex,
    spec: PriorSpec,
    limits: Optional[RecursionLimits] = None,
    max_depth: int = 12,
) -> np.ndarray:
    """Sum of posterior mean masses ``a_k + b_k`` over all regions at each
    depth ``k <= max_depth`` (full expansion, no truncation).

    Each entry must equal 1: the regions at a fixed depth partition the
    space, so their mean masses telescope.
    """
    _require_unique_split(spec)
    post = Posterior(data, spec, limits)
    scheme = spec.scheme
    sums = np.zeros(max_depth + 1)
    sums[0] = 1.0

    def descend(region: Region, idx: np.ndarray, a: float, b: float) -> None:
        if region.level >= max_depth:
            return
        a1, a2 = assignment_weights(spec, region, 1)
        idx_l, idx_r = post.data.partition(region, 1, idx)
        pa1 = idx_l.size + a1
        pa2 = idx_r.size + a2
        total = pa1 + pa2
        for child, idx_c, pa in ((split(scheme, region, 1)[0], idx_l, pa1),
                                 (split(scheme, region, 1)[1], idx_r, pa2)):
            theta = pa / total
            vol = measure(child) / measure(region)
            rho_c = post.rho(child)
            a_c = vol * a + theta * rho_c * b
            b_c = theta * (1 - rho_c) * b
            sums[child.level] += a_c + b_c
            descend(child, idx_c, a_c, b_c)

    a0 = post.rho(post.root)
    descend(post.root, post.data.root_indices(), a0, 1.0 - a0)
    return sums


# ---------------------------------------------------------------------------
# Hierarchical MAP tree and its conditional mean.
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    """One node of a learned topology.

    Internal nodes carry the chosen split (1-based among available splits),
    the bisected coordinate, the posterior Beta weights of that split and the
    child counts.  Leaves carry a stop reason.
    """

    region: Region
    n: int
    post_rho: float
    split: Optional[int] = None
    split_dim: Optional[int] = None
    post_alpha: Optional[tuple[float, float]] = None
    counts: Optional[tuple[int, int]] = None
    stop_reason: Optional[str] = None
    children: Optional[tuple["TreeNode", "TreeNode"]] = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass
class TreeTopology:
    """A fixed stopped partition learned from the posterior."""

    root: TreeNode
    spec: PriorSpec
    data_fingerprint: bytes

    def leaves(self) -> Iterator[TreeNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            else:
                stack.extend(reversed(node.children))

    def leaf_count(self) -> int:
        return sum(1 for _ in self.leaves())

    def leaf_for(self, x: Sequence[float]) -> TreeNode:
        node = self.root
        if not node.region.contains(x):
            raise ValueError("point outside the root region")
        while not node.is_leaf:
            left, right = node.children
            node = left if left.region.contains(x) else right
        return node

    def to_json_dict(self) -> dict:
        def encode(node: TreeNode) -> dict:
            doc = {
                "region": _region_doc(node.region),
                "n": node.n,
                "post_rho": node.post_rho,
            }
            if node.is_leaf:
                doc["stop_reason"] = node.stop_reason
            else:
                doc["split"] = node.split
                doc["split_dim"] = node.split_dim
                doc["post_alpha"] = list(node.post_alpha)
                doc["counts"] = list(node.counts)
                doc["children"] = [encode(c) for c in node.children]
            return doc

        return {"format_version": 1, "kind": "tree", "root": encode(self.root)}


def hmap_tree(
    data: np.ndarray | DataIndex,
    spec: PriorSpec,
    limits: Optional[RecursionLimits] = None,
    posterior: Optional[Posterior] = None,
) -> TreeTopology:
    """Top-down hierarchical MAP topology.

    A region becomes a leaf when the posterior stopping probability is
    >= 1/2 (exact ties stop, preferring simpler trees), when no split is
    available, or when the precision threshold or level cap forces a stop.
    Otherwise both children of the posterior-preferred split are built;
    selection ties break to the lowest split index.  The construction is
    deterministic given data and prior.
    """
    post = posterior if posterior is not None else Posterior(data, spec, limits)
    scheme = spec.scheme

    def build(region: Region, idx: np.ndarray) -> TreeNode:
        n = int(idx.size)
        if post.forced_stop(region):
            return TreeNode(region, n, post.rho(region), stop_reason=STOP_PRECISION)
        params = post.params(region)
        if params.lam.size == 0:  # single table cell: nothing left to split
            return TreeNode(region, n, params.rho, stop_reason=STOP_POSTERIOR)
        if params.rho >= 0.5:
            return TreeNode(region, n, params.rho, stop_reason=STOP_POSTERIOR)
        j = 1 + int(np.argmax(params.lam))
        idx_l, idx_r = post.data.partition(region, j, idx)
        left, right = split(scheme, region, j)
        return TreeNode(
            region,
            n,
            params.rho,
            split=j,
            split_dim=split_dimension(scheme, region, j),
            post_alpha=params.alpha[j - 1],
            counts=params.counts[j - 1],
            children=(build(left, idx_l), build(right, idx_r)),
        )

    root_node = build(post.root, post.data.root_indices())
    return TreeTopology(root_node, spec, post.data.fingerprint())


def conditional_mean_density(
    tree: TreeTopology, posterior: Optional[Posterior] = None
) -> PiecewiseDensity:
    """Piecewise-constant mean density conditional on a fixed topology.

    Leaf masses are products of Beta posterior means along the path, and the
    density is uniform inside each leaf.  Parent mass equals the sum of the
    child masses exactly by construction.
    """
    if posterior is not None and posterior.data.fingerprint() != tree.data_fingerprint:
        raise ValueError("tree was built from different data than the posterior")

    leaves: list[PieceLeaf] = []

    def walk(node: TreeNode, mass: float) -> None:
        if node.is_leaf:
            leaves.append(
                PieceLeaf(node.region, mass / measure(node.region), node.stop_reason)
            )
            return
        a1, a2 = node.post_alpha
        total = a1 + a2
        walk(node.children[0], mass * (a1 / total))
        walk(node.children[1], mass * (a2 / total))

    walk(tree.root, 1.0)
    return PiecewiseDensity(tuple(leaves))


# ---------------------------------------------------------------------------
# Point-density ratio estimator.
# ---------------------------------------------------------------------------


class HutterDensity:
    """Posterior mean density via the marginal ratio with an appended point.

    The ratio ``Phi(root | data + x) / Phi(root | data)`` equals the
    posterior predictive, i.e. posterior mean, density at x.  The base table
    is computed once; each query rebuilds only the regions containing x (the
    sibling off-branch regions are served from the memo table).
    """

    def __init__(
        self,
        data: np.ndarray | DataIndex,
        spec: PriorSpec,
        limits: Optional[RecursionLimits] = None,
        posterior: Optional[Posterior] = None,
    ):
        self.post = posterior if posterior is not None else Posterior(data, spec, limits)
        self.spec = self.post.spec
        self.scheme = self.spec.scheme
        self.limits = self.post.limits
        self.log_phi_base = self.post.log_phi()
        rec = self.post._recursion
        self._log_rho = rec.log_rho
        self._log_1mrho = rec.log_1mrho
        self._jeffreys = rec.jeffreys
        self._base = rec

    def at(self, x: Sequence[float]) -> float:
        root = self.post.root
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))
        if not root.contains(x):
            raise ValueError("query point outside the state space")
        memo: dict = {}

        def plus(region: Region, idx: np.ndarray) -> float:
            key = canonical_key(region)
            if key in memo:
                return memo[key]
            n_eff = idx.size + 1
            m = num_splits(self.scheme, region)
            if m == 0:
                value = 0.0
            elif self.limits.terminal_shortcut and n_eff == 1 and self._jeffreys:
                value = -log_measure(region)
            elif self._base.forced_stop(region):
                value = -n_eff * log_measure(region)
            else:
                terms = [self._log_rho - n_eff * log_measure(region)]
                log_lam = -math.log(m)
                for j in range(1, m + 1):
                    idx_l, idx_r = self.post.data.partition(region, j, idx)
                    left, right = split(self.scheme, region, j)
                    weights = assignment_weights(self.spec, region, j)
                    if left.contains(x):
                        counts = (idx_l.size + 1, idx_r.size)
                        branch = plus(left, idx_l)
                        other = self._base.log_phi(right, idx_r)
                    else:
                        counts = (idx_l.size, idx_r.size + 1)
                        branch = plus(right, idx_r)
                        other = self._base.log_phi(left, idx_l)
                    dr = log_dirichlet_ratio(counts, weights)
                    terms.append(self._log_1mrho + log_lam + dr + branch + other)
                value = _logsumexp_list(terms)
            memo[key] = value
            return value

        result = math.exp(plus(root, self.post.data.root_indices()) - self.log_phi_base)
        if not math.isfinite(result) or result < 0:
            raise NumericalFault("non-finite point density")
        return result

    def on_grid(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs.reshape(-1, 1)
        return np.array([self.at(row) for row in xs])


def _logsumexp_list(terms: list[float]) -> float:
    m = max(terms)
    if m == float("-inf"):
        return m
    return m + math.log(math.fsum(math.exp(t - m) for t in terms))


def hutter_point_density(
    x: Sequence[float],
    data: np.ndarray | DataIndex,
    spec: PriorSpec,
    limits: Optional[RecursionLimits] = None,
    evaluator: Optional[HutterDensity] = None,
) -> float:
    """Posterior mean density at one point; see :class:`HutterDensity`.

    Pass (or keep) an evaluator when querying many points so the base table
    is shared across queries.
    """
    if evaluator is None:
        evaluator = HutterDensity(data, spec, limits)
    return evaluator.at(x)


# ---------------------------------------------------------------------------
# Grid rasterization (cell-averaged piecewise densities).
# ---------------------------------------------------------------------------


def grid_average(density: PiecewiseDensity, cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-averaged density on a uniform grid with ``cells`` per dimension.

    Returns ``(edges, values)`` where edges has ``cells + 1`` entries per
    dimension and values has shape ``(cells,)`` in 1D or ``(cells, cells)``
    in 2D.  Averages are exact mass overlaps, so the grid integrates to the
    same total as the density.
    """
    if density.kind != CONTINUOUS:
        raise ValueError("grids apply to continuous densities only")
    p = density.leaves[0].region.p
    if p not in (1, 2):
        raise ValueError("grid export supports p = 1 or 2")
    edges = np.linspace(0.0, 1.0, cells + 1)
    if p == 1:
        mass = np.zeros(cells)
        for lf in density.leaves:
            (lo, hi), = lf.region.bounds()
            _add_overlap_1d(mass, edges, lo, hi, lf.density)
        return edges, mass * cells
    mass = np.zeros((cells, cells))
    for lf in density.leaves:
        (x_lo, x_hi), (y_lo, y_hi) = lf.region.bounds()
        wx = _overlap_vector(edges, x_lo, x_hi)
        wy = _overlap_vector(edges, y_lo, y_hi)
        mass += lf.density * np.outer(wx, wy)
    return edges, mass * cells * cells


def _overlap_vector(edges: np.ndarray, lo: float, hi: float) -> np.ndarray:
    overlap = np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo)
    return np.clip(overlap, 0.0, None)


def _add_overlap_1d(
    mass: np.ndarray, edges: np.ndarray, lo: float, hi: float, value: float
) -> None:
    mass += value * _overlap_vector(edges, lo, hi)
