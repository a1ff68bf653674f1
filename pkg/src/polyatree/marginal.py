"""Exact posterior computation: the log-Phi recursion and its byproducts.

``Phi(A)`` is the expected conditional likelihood of the data falling in
region A under the tree prior induced on A.  It satisfies the recursion

    Phi(A) = rho * Phi0(A)
           + (1 - rho) * sum_j lambda_j * [D(n^j + alpha^j) / D(alpha^j)]
                         * Phi(A_1^j) * Phi(A_2^j)

where ``Phi0(A) = mu(A)^(-n(A))`` is the uniform likelihood, ``n^j`` are the
child counts of split j and ``D(t) = Gamma(t1)Gamma(t2)/Gamma(t1+t2)`` is the
Dirichlet normalizer.  Everything is carried in log space with log-sum-exp;
the raw products of Beta ratios underflow past a few hundred observations.

Terminal regions, checked in this order, cut the recursion off exactly:

T1  no observations: Phi = 1.
T2  a single table cell: Phi = 1.
T3  exactly one observation under the self-similar Jeffreys weights with the
    uniform selection rule and constant rho: Phi = 1/mu(A).  (For a table
    slice with M splittable coordinates this reads Phi = 2^-M.)  The value is
    the exact limit of the recursion and also equals every finite truncation
    under the default cutoff, so the shortcut is lossless.
T4  forced stop: region measure below the precision threshold, or level at
    the safety cap.  The region is treated as uniform inside, Phi = Phi0.

Memoization is keyed by the canonical region key, so overlapping full-dyadic
split orders share work.  Only regions expanded through the full recursion
are stored; terminal values are O(1) to recompute.

The posterior is again a tree prior of the same family; per region its
parameters are ``rho(A|x) = rho(A) Phi0(A) / Phi(A)``, selection
probabilities proportional to the per-split terms above, and Dirichlet
weights ``n^j + alpha^j``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    CONTINUOUS,
    DISCRETE,
    UNSET,
    PartitionScheme,
    Region,
    canonical_key,
    log_measure,
    measure,
    num_splits,
    root_region,
    split,
    split_dimension,
)
from .prior import PriorSpec, assignment_weights

__all__ = [
    "NumericalFault",
    "RecursionLimits",
    "default_limits",
    "terminal_depth",
    "DataIndex",
    "PhiRecord",
    "PhiTable",
    "PosteriorParams",
    "log_phi0",
    "log_dirichlet_ratio",
    "compute_log_phi",
    "posterior_params",
    "Posterior",
    "verify_table_consistency",
]

_LN2 = math.log(2.0)
_NEG_INF = float("-inf")


class NumericalFault(ArithmeticError):
    """A non-finite or out-of-range intermediate value.

    Raised instead of silently clamping; posterior probabilities may only be
    clipped against rounding at the 1e-12 scale.
    """


@dataclass(frozen=True)
class RecursionLimits:
    """Numerical stopping controls for the recursion.

    ``precision_threshold`` is the minimum region measure before a forced
    stop; ``max_level`` is a safety cap on the split count.  ``cutoff``
    selects what a forced stop contributes: ``"uniform"`` (the default)
    treats the region as uniform inside, contributing Phi0, which is
    consistent with the stopped-region semantics and makes single-point
    truncations exact.  ``"stop-mass"`` keeps only the immediate-stop term
    rho*Phi0, i.e. restricts to trees fully stopped above the cutoff; it is
    a diagnostic mode whose single-point truncation error decays like
    (1-rho)^level, useful for convergence checks.  ``terminal_shortcut``
    disables T3 when False (again for diagnostics).
    """

    precision_threshold: float
    max_level: int = 64
    terminal_shortcut: bool = True
    cutoff: str = "uniform"

    def __post_init__(self):
        if not self.precision_threshold > 0:
            raise ValueError("precision threshold must be positive")
        if self.max_level < 0:
            raise ValueError("max_level must be nonnegative")
        if self.cutoff not in ("uniform", "stop-mass"):
            raise ValueError(f"unknown cutoff rule {self.cutoff!r}")


def default_limits(p: int) -> RecursionLimits:
    """Defaults used throughout: threshold 1e-6 in 1D, 1e-4 otherwise."""
    return RecursionLimits(precision_threshold=1e-6 if p == 1 else 1e-4)


def terminal_depth(limits: RecursionLimits) -> int:
    """Smallest level at which a unit-cube region is force-stopped."""
    if limits.precision_threshold > 1.0:
        return 0
    level = math.floor(math.log2(1.0 / limits.precision_threshold)) + 1
    # Guard against log2 landing exactly on a power of two boundary.
    while math.ldexp(1.0, -(level - 1)) < limits.precision_threshold:
        level -= 1
    while not math.ldexp(1.0, -level) < limits.precision_threshold:
        level += 1
    return min(level, limits.max_level)


class DataIndex:
    """A dataset plus lazy per-region index bookkeeping.

    Points are recursively routed into subregions by partitioning index
    arrays, so each explored branch costs O(n) per level rather than a full
    rescan.  Counts satisfy ``n(A) = n(A_1^j) + n(A_2^j)`` for every split by
    construction.
    """

    def __init__(self, points: np.ndarray, scheme: PartitionScheme):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or (points.size and points.shape[1] != scheme.p):
            raise ValueError(f"points must have shape (n, {scheme.p})")
        if points.size == 0:
            points = points.reshape(0, scheme.p)
        if scheme.kind == DISCRETE:
            if points.size and not np.isin(points, (1.0, 2.0)).all():
                raise ValueError("table data must take values 1 or 2")
        elif points.size and not ((points >= 0.0) & (points <= 1.0)).all():
            raise ValueError("continuous data must lie in the unit cube; rescale first")
        self.scheme = scheme
        self.points = points
        self.n_total = points.shape[0]
        self._digest: Optional[bytes] = None

    def root_indices(self) -> np.ndarray:
        return np.arange(self.n_total)

    def partition(
        self, region: Region, j: int, idx: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Split the index array of ``region`` between the children of split j."""
        dim = split_dimension(self.scheme, region, j)
        xs = self.points[idx, dim]
        if region.kind == DISCRETE:
            in_left = xs == 1.0
        else:
            depth, index = region.coords[dim]
            mid = math.ldexp(2 * index + 1, -(depth + 1))
            in_left = xs < mid
        return idx[in_left], idx[~in_left]

    def indices_in(self, region: Region) -> np.ndarray:
        """Indices of all points inside ``region`` (fresh O(n p) scan)."""
        mask = np.ones(self.n_total, dtype=bool)
        if region.kind == DISCRETE:
            for d, state in enumerate(region.coords):
                if state != UNSET:
                    mask &= self.points[:, d] == float(state)
        else:
            for d, (depth, index) in enumerate(region.coords):
                if depth == 0:
                    continue
                scaled = np.floor(np.ldexp(self.points[:, d], depth))
                np.minimum(scaled, (1 << depth) - 1, out=scaled)  # x == 1.0
                mask &= scaled == index
        return np.nonzero(mask)[0]

    def fingerprint(self) -> bytes:
        """Content digest; identifies the dataset in table/tree bindings."""
        if self._digest is None:
            payload = np.ascontiguousarray(self.points).tobytes()
            self._digest = hashlib.blake2b(payload, digest_size=16).digest()
        return self._digest


def log_phi0(region: Region, n_count: int) -> float:
    """Log uniform likelihood of n points in the region: -n log mu(A)."""
    if n_count == 0:
        return 0.0
    return -n_count * log_measure(region)


@lru_cache(maxsize=100_000)
def _log_dirichlet_ratio_cached(n1: int, n2: int, a1: float, a2: float) -> float:
    return (
        math.lgamma(n1 + a1)
        + math.lgamma(n2 + a2)
        - math.lgamma(n1 + n2 + a1 + a2)
        - (math.lgamma(a1) + math.lgamma(a2) - math.lgamma(a1 + a2))
    )


def log_dirichlet_ratio(
    n: tuple[int, int], alpha: tuple[float, float]
) -> float:
    """log D(n + alpha) - log D(alpha) for a binary split, via log-gamma."""
    n1, n2 = int(n[0]), int(n[1])
    a1, a2 = float(alpha[0]), float(alpha[1])
    if n1 < 0 or n2 < 0:
        raise ValueError("counts must be nonnegative")
    if not (a1 > 0 and a2 > 0):
        raise ValueError("weights must be positive")
    return _log_dirichlet_ratio_cached(n1, n2, a1, a2)


def _logsumexp(terms: Sequence[float]) -> float:
    m = max(terms)
    if m == _NEG_INF:
        return _NEG_INF
    return m + math.log(math.fsum(math.exp(t - m) for t in terms))


@dataclass
class PhiRecord:
    """Stored state for one region expanded through the full recursion.

    ``split_scores[j]`` is the complete log term of split j+1 in the
    recursion: log(1-rho) + log lambda_j + log D-ratio + log Phi of both
    children, so that ``log_phi = logsumexp(stop_score, *split_scores)``.
    """

    region: Region
    log_phi: float
    log_phi0: float
    n: int
    stop_score: float
    split_scores: tuple[float, ...]
    split_counts: tuple[tuple[int, int], ...]


class PhiTable:
    """Memo table of expanded regions, keyed by canonical region key.

    Behaves as a concurrent map with insert-if-absent semantics: values are
    pure functions of the region, so racing writers can only store identical
    records, and single-threaded results are bit-identical to concurrent
    ones.  The table is bound to the (data, prior, limits) triple of its
    first computation and refuses mixing.
    """

    def __init__(self):
        self.records: dict = {}
        self.context: Optional[tuple] = None

    def bind(self, data: DataIndex, spec: PriorSpec, limits: RecursionLimits) -> None:
        ctx = (data.fingerprint(), spec, limits)
        if self.context is None:
            self.context = ctx
        elif self.context != ctx:
            raise ValueError("PhiTable is bound to a different data/prior/limits triple")

    def get(self, region: Region) -> Optional[PhiRecord]:
        return self.records.get(canonical_key(region))

    def __len__(self) -> int:
        return len(self.records)

    def to_json_dict(
        self, data: DataIndex, spec: PriorSpec, include_params: bool = True
    ) -> dict:
        """Export entries (sorted by key) with their posterior parameters."""
        entries = []
        for key in sorted(self.records):
            rec = self.records[key]
            entry = {
                "region": _region_json(rec.region),
                "log_phi": rec.log_phi,
                "log_phi0": rec.log_phi0,
                "n": rec.n,
            }
            if include_params:
                params = posterior_params(rec.region, self, data, spec)
                entry["post_rho"] = params.rho
                entry["post_lambda"] = list(map(float, params.lam))
                entry["post_alpha"] = [list(a) for a in params.alpha]
            entries.append(entry)
        return {"format_version": 1, "entries": entries}


def _region_json(region: Region) -> dict:
    doc: dict = {"kind": region.kind, "level": region.level}
    if region.kind == CONTINUOUS:
        doc["dims"] = [{"depth": d, "index": i} for d, i in region.coords]
        doc["bounds"] = [[lo, hi] for lo, hi in region.bounds()]
    else:
        doc["states"] = list(region.coords)
    return doc


class _Recursion:
    """One compute pass; holds the shared pieces of the recursion."""

    def __init__(
        self,
        data: DataIndex,
        spec: PriorSpec,
        limits: RecursionLimits,
        table: PhiTable,
    ):
        if data.scheme != spec.scheme:
            raise ValueError("data and prior use different schemes")
        table.bind(data, spec, limits)
        self.data = data
        self.spec = spec
        self.limits = limits
        self.table = table
        self.scheme = spec.scheme
        self.jeffreys = spec.effective_jeffreys()
        self.log_rho = math.log(spec.rho) if spec.rho > 0 else _NEG_INF
        self.log_1mrho = math.log1p(-spec.rho) if spec.rho < 1 else _NEG_INF

    def forced_stop(self, region: Region) -> bool:
        return (
            region.level >= self.limits.max_level
            or measure(region) < self.limits.precision_threshold
        )

    def log_phi(self, region: Region, idx: np.ndarray) -> float:
        rec = self.table.get(region)
        if rec is not None:
            return rec.log_phi
        n = idx.size
        if n == 0:  # T1: empty region
            return 0.0
        m = num_splits(self.scheme, region)
        if m == 0:  # T2: single table cell
            return 0.0
        if self.limits.terminal_shortcut and n == 1 and self.jeffreys:
            # T3: exact closed form for a lone observation.
            return -log_measure(region)
        if self.forced_stop(region):  # T4
            lp0 = log_phi0(region, n)
            if self.limits.cutoff == "stop-mass":
                return self.log_rho + lp0
            return lp0
        if region.level > self.limits.max_level:
            raise NumericalFault("recursion descended past max_level")
        return self.expand(region, idx, n, m)

    def expand(self, region: Region, idx: np.ndarray, n: int, m: int) -> float:
        lp0 = log_phi0(region, n)
        stop_score = self.log_rho + lp0 if self.spec.rho > 0 else _NEG_INF
        log_lam = -math.log(m)
        scores = []
        counts = []
        for j in range(1, m + 1):
            idx_l, idx_r = self.data.partition(region, j, idx)
            left, right = split(self.scheme, region, j)
            weights = assignment_weights(self.spec, region, j)
            dr = log_dirichlet_ratio((idx_l.size, idx_r.size), weights)
            score = (
                self.log_1mrho
                + log_lam
                + dr
                + self.log_phi(left, idx_l)
                + self.log_phi(right, idx_r)
            )
            scores.append(score)
            counts.append((int(idx_l.size), int(idx_r.size)))
        value = _logsumexp([stop_score, *scores])
        if not math.isfinite(value):
            raise NumericalFault(f"non-finite log Phi at region {region}")
        record = PhiRecord(
            region=region,
            log_phi=value,
            log_phi0=lp0,
            n=n,
            stop_score=stop_score,
            split_scores=tuple(scores),
            split_counts=tuple(counts),
        )
        self.table.records.setdefault(canonical_key(region), record)
        return value


def compute_log_phi(
    region: Region,
    data: DataIndex,
    spec: PriorSpec,
    limits: RecursionLimits,
    table: PhiTable,
) -> float:
    """log Phi(A) via the memoized recursion; populates ``table``."""
    rec = _Recursion(data, spec, limits, table)
    return rec.log_phi(region, data.indices_in(region))


@dataclass(frozen=True)
class PosteriorParams:
    """Posterior tree parameters at one region.

    ``lam`` is empty for single table cells; ``alpha[j]`` is the pair
    ``(n1 + alpha1, n2 + alpha2)`` of split j+1.
    """

    rho: float
    lam: np.ndarray
    alpha: tuple[tuple[float, float], ...]
    counts: tuple[tuple[int, int], ...]
    log_phi: float
    log_phi0: float


def _clamp_unit(value: float, tol: float = 1e-12) -> float:
    """Clip a probability into [0, 1], tolerating only rounding noise."""
    if value < -tol or value > 1.0 + tol:
        raise NumericalFault(f"probability {value!r} outside [0,1] beyond rounding")
    return min(1.0, max(0.0, value))


def _softmax(scores: Sequence[float]) -> np.ndarray:
    arr = np.asarray(scores, dtype=float)
    arr = np.exp(arr - arr.max())
    return arr / arr.sum()


def posterior_params(
    region: Region,
    table: PhiTable,
    data: DataIndex,
    spec: PriorSpec,
) -> PosteriorParams:
    """Posterior (rho, lambda, alpha) at ``region``.

    Uses the stored record when the region was expanded; terminal regions
    are reconstituted on demand from their closed forms.  With no data the
    posterior equals the prior exactly.
    """
    if table.context is None:
        raise ValueError("compute_log_phi has not been run on this table")
    limits: RecursionLimits = table.context[2]
    rec = _Recursion(data, spec, limits, table)
    stored = table.get(region)
    if stored is None:
        idx = data.indices_in(region)
        lphi = rec.log_phi(region, idx)
        stored = table.get(region)
        if stored is None:
            return _params_from_scratch(rec, region, idx, lphi)
    post_rho = _clamp_unit(spec.rho * math.exp(stored.log_phi0 - stored.log_phi))
    lam = _softmax(stored.split_scores) if stored.split_scores else np.empty(0)
    alpha = _post_alpha(rec, region, stored.split_counts)
    return PosteriorParams(
        rho=post_rho,
        lam=lam,
        alpha=alpha,
        counts=stored.split_counts,
        log_phi=stored.log_phi,
        log_phi0=stored.log_phi0,
    )


def _post_alpha(
    rec: _Recursion, region: Region, counts: Sequence[tuple[int, int]]
) -> tuple[tuple[float, float], ...]:
    out = []
    for j, (n1, n2) in enumerate(counts, start=1):
        a1, a2 = assignment_weights(rec.spec, region, j)
        out.append((n1 + a1, n2 + a2))
    return tuple(out)


def _params_from_scratch(
    rec: _Recursion, region: Region, idx: np.ndarray, lphi: float
) -> PosteriorParams:
    """Posterior parameters of a region the recursion never expanded."""
    n = idx.size
    lp0 = log_phi0(region, n)
    post_rho = _clamp_unit(rec.spec.rho * math.exp(lp0 - lphi))
    m = num_splits(rec.scheme, region)
    if m == 0:
        return PosteriorParams(post_rho, np.empty(0), (), (), lphi, lp0)
    scores = []
    counts = []
    for j in range(1, m + 1):
        idx_l, idx_r = rec.data.partition(region, j, idx)
        left, right = split(rec.scheme, region, j)
        weights = assignment_weights(rec.spec, region, j)
        dr = log_dirichlet_ratio((idx_l.size, idx_r.size), weights)
        scores.append(dr + rec.log_phi(left, idx_l) + rec.log_phi(right, idx_r))
        counts.append((int(idx_l.size), int(idx_r.size)))
    return PosteriorParams(
        rho=post_rho,
        lam=_softmax(scores),
        alpha=_post_alpha(rec, region, counts),
        counts=tuple(counts),
        log_phi=lphi,
        log_phi0=lp0,
    )


class Posterior:
    """Convenience bundle: dataset + prior + limits sharing one Phi table.

    This is the object the estimators and the posterior sampler consume; all
    values are memoized, so repeated queries are cheap.
    """

    def __init__(
        self,
        points: np.ndarray | DataIndex,
        spec: PriorSpec,
        limits: Optional[RecursionLimits] = None,
    ):
        self.spec = spec
        self.data = (
            points
            if isinstance(points, DataIndex)
            else DataIndex(points, spec.scheme)
        )
        self.limits = limits if limits is not None else default_limits(spec.scheme.p)
        self.table = PhiTable()
        self.root = root_region(spec.scheme)
        self._params_cache: dict = {}
        self._recursion = _Recursion(self.data, spec, self.limits, self.table)

    def log_phi(self, region: Optional[Region] = None) -> float:
        region = self.root if region is None else region
        rec = self.table.get(region)
        if rec is not None:
            return rec.log_phi
        return self._recursion.log_phi(region, self.data.indices_in(region))

    def params(self, region: Optional[Region] = None) -> PosteriorParams:
        region = self.root if region is None else region
        key = canonical_key(region)
        cached = self._params_cache.get(key)
        if cached is None:
            self.log_phi(region)
            cached = posterior_params(region, self.table, self.data, self.spec)
            self._params_cache[key] = cached
        return cached

    def rho(self, region: Optional[Region] = None) -> float:
        """Posterior stopping probability only (cheaper than full params)."""
        region = self.root if region is None else region
        stored = self.table.get(region)
        if stored is not None:
            return _clamp_unit(
                self.spec.rho * math.exp(stored.log_phi0 - stored.log_phi)
            )
        idx = self.data.indices_in(region)
        lphi = self._recursion.log_phi(region, idx)
        lp0 = log_phi0(region, idx.size)
        return _clamp_unit(self.spec.rho * math.exp(lp0 - lphi))

    def forced_stop(self, region: Region) -> bool:
        return self._recursion.forced_stop(region)


def verify_table_consistency(
    table: PhiTable, data: DataIndex, spec: PriorSpec
) -> float:
    """Recompute every stored entry from its children; return the max gap.

    For each expanded region the right-hand side of the recursion is rebuilt
    from freshly partitioned counts, fresh weights and the children's log-Phi
    values (memoized or closed-form), then compared against the stored value.
    """
    if table.context is None:
        raise ValueError("table holds no computation")
    limits: RecursionLimits = table.context[2]
    rec = _Recursion(data, spec, limits, table)
    worst = 0.0
    for key in list(table.records):
        stored = table.records[key]
        region = stored.region
        idx = data.indices_in(region)
        m = num_splits(spec.scheme, region)
        lp0 = log_phi0(region, idx.size)
        stop_score = rec.log_rho + lp0 if spec.rho > 0 else _NEG_INF
        scores = [stop_score]
        for j in range(1, m + 1):
            idx_l, idx_r = data.partition(region, j, idx)
            left, right = split(spec.scheme, region, j)
            weights = assignment_weights(spec, region, j)
            dr = log_dirichlet_ratio((idx_l.size, idx_r.size), weights)
            scores.append(
                rec.log_1mrho
                - math.log(m)
                + dr
                + rec.log_phi(left, idx_l)
                + rec.log_phi(right, idx_r)
            )
        worst = max(worst, abs(_logsumexp(scores) - stored.log_phi))
    return worst
