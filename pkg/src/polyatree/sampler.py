"""Random recursive partition draws from the prior or the posterior.

A draw follows the generative construction: per region draw a Bernoulli
stopping flag with probability rho(A); if unstopped pick one of the M(A)
splits from the selection probabilities, draw a Beta(alpha1, alpha2) share
``theta``, push mass ``theta`` / ``1 - theta`` into the children and recurse.
Regions still alive at ``max_depth`` are force-stopped with their current
mass; every leaf is uniform inside.

Reproducibility.  Each region consumes its own random stream: a Philox4x64
generator keyed by the first 128 bits of ``BLAKE2b(seed | draw index |
canonical region key)``.  Streams therefore do not depend on traversal
order, so sibling subtrees may be sampled concurrently (or in any order)
with bit-identical results.  Draw order within a region is fixed: stopping
uniform, then split choice, then the Beta share.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import (
    PartitionScheme,
    Region,
    canonical_key,
    measure,
    num_splits,
    root_region,
    split,
)
from .marginal import Posterior
from .prior import PriorSpec, assignment_weights, selection_probs

__all__ = [
    "DrawLeaf",
    "RandomMeasureDraw",
    "sample_measure",
    "unstopped_mass_curve",
]


@dataclass(frozen=True)
class DrawLeaf:
    """One stopped region of a draw; ``stopped`` is False for forced stops."""

    region: Region
    mass: float
    stopped: bool


@dataclass
class RandomMeasureDraw:
    """A sampled measure: a stopped partition with uniform mass inside leaves.

    ``alive_mass[k]`` is the mass still splitting after k levels; index 0 is
    always 1.  ``depth`` is the deepest leaf level reached.
    """

    leaves: list[DrawLeaf]
    depth: int
    seed: int
    draw_index: int
    max_depth: int
    alive_mass: np.ndarray

    def total_mass(self) -> float:
        return math.fsum(leaf.mass for leaf in self.leaves)

    def density_at(self, x: Sequence[float]) -> float:
        for leaf in self.leaves:
            if leaf.region.contains(x):
                return leaf.mass / measure(leaf.region)
        raise ValueError("point outside the partition")

    def mass_of(self, region: Region) -> float:
        """Mass the draw assigns to a region of the same dyadic system."""
        total = 0.0
        target_level = region.level
        for leaf in self.leaves:
            if leaf.region.level >= target_level:
                if _nested_in(leaf.region, region):
                    total += leaf.mass
            elif _nested_in(region, leaf.region):
                # Leaf is coarser: uniform inside, pro-rate by volume.
                total += leaf.mass * measure(region) / measure(leaf.region)
        return total

    def to_json_dict(self) -> dict:
        return {
            "format_version": 1,
            "seed": self.seed,
            "draw_index": self.draw_index,
            "max_depth": self.max_depth,
            "depth_reached": self.depth,
            "leaves": [
                {
                    "region": _region_doc(leaf.region),
                    "mass": leaf.mass,
                    "stopped": leaf.stopped,
                }
                for leaf in self.leaves
            ],
        }


def _region_doc(region: Region) -> dict:
    if region.kind == "continuous":
        return {
            "kind": region.kind,
            "dims": [{"depth": d, "index": i} for d, i in region.coords],
            "bounds": [[lo, hi] for lo, hi in region.bounds()],
        }
    return {"kind": region.kind, "states": list(region.coords)}


def _nested_in(inner: Region, outer: Region) -> bool:
    if inner.kind != outer.kind:
        return False
    if inner.kind == "discrete":
        return all(o == 0 or o == i for i, o in zip(inner.coords, outer.coords))
    for (di, ii), (do, io) in zip(inner.coords, outer.coords):
        if di < do or (ii >> (di - do)) != io:
            return False
    return True


def _region_rng(seed: int, draw_index: int, region: Region) -> np.random.Generator:
    payload = repr((seed, draw_index, canonical_key(region))).encode()
    digest = hashlib.blake2b(payload, digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _PriorSource:
    def __init__(self, spec: PriorSpec):
        self.spec = spec
        self.scheme = spec.scheme

    def rho(self, region: Region) -> float:
        return self.spec.rho

    def lam(self, region: Region) -> np.ndarray:
        return selection_probs(self.spec, region)

    def alpha(self, region: Region, j: int) -> tuple[float, float]:
        return assignment_weights(self.spec, region, j)


class _PosteriorSource:
    def __init__(self, posterior: Posterior):
        self.posterior = posterior
        self.scheme = posterior.spec.scheme

    def rho(self, region: Region) -> float:
        return self.posterior.params(region).rho

    def lam(self, region: Region) -> np.ndarray:
        return self.posterior.params(region).lam

    def alpha(self, region: Region, j: int) -> tuple[float, float]:
        return self.posterior.params(region).alpha[j - 1]


def _make_source(params_source: Union[PriorSpec, Posterior]):
    if isinstance(params_source, PriorSpec):
        return _PriorSource(params_source)
    if isinstance(params_source, Posterior):
        return _PosteriorSource(params_source)
    raise TypeError("params_source must be a PriorSpec or a Posterior")


def sample_measure(
    params_source: Union[PriorSpec, Posterior],
    scheme: Optional[PartitionScheme] = None,
    max_depth: int = 16,
    seed: int = 0,
    draw_index: int = 0,
) -> RandomMeasureDraw:
    """Draw one random measure from the prior or posterior construction."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    source = _make_source(params_source)
    if scheme is not None and scheme != source.scheme:
        raise ValueError("scheme does not match the parameter source")
    scheme = source.scheme

    leaves: list[DrawLeaf] = []
    alive = np.zeros(max_depth + 1)
    alive[0] = 1.0
    depth_reached = 0

    def go(region: Region, mass: float) -> None:
        nonlocal depth_reached
        level = region.level
        depth_reached = max(depth_reached, level)
        if num_splits(scheme, region) == 0:
            leaves.append(DrawLeaf(region, mass, True))
            return
        if level >= max_depth:
            leaves.append(DrawLeaf(region, mass, False))
            return
        rng = _region_rng(seed, draw_index, region)
        if rng.random() < source.rho(region):
            leaves.append(DrawLeaf(region, mass, True))
            return
        alive[level + 1] += mass
        lam = source.lam(region)
        j = 1 + int(rng.choice(lam.size, p=lam))
        a1, a2 = source.alpha(region, j)
        theta = rng.beta(a1, a2)
        left, right = split(scheme, region, j)
        mass_left = mass * theta
        go(left, mass_left)
        go(right, mass - mass_left)

    go(root_region(scheme), 1.0)
    return RandomMeasureDraw(
        leaves=leaves,
        depth=depth_reached,
        seed=int(seed),
        draw_index=draw_index,
        max_depth=max_depth,
        alive_mass=alive,
    )


def unstopped_mass_curve(
    params_source: Union[PriorSpec, Posterior],
    scheme: Optional[PartitionScheme] = None,
    depths: Sequence[int] = tuple(range(1, 9)),
    n_draws: int = 1000,
    seed: int = 0,
) -> list[tuple[int, float, float]]:
    """Monte Carlo mean (and standard error) of the still-splitting mass.

    Returns ``(k, mean, se)`` per requested depth; the mass alive at depth k
    decays like ``(1 - rho)^k`` in expectation.
    """
    if n_draws < 100:
        raise ValueError("n_draws must be at least 100")
    depths = sorted(set(int(k) for k in depths))
    if not depths or depths[0] < 1:
        raise ValueError("depths must be positive")
    max_depth = depths[-1]
    samples = np.empty((n_draws, len(depths)))
    for i in range(n_draws):
        draw = sample_measure(
            params_source, scheme, max_depth=max_depth, seed=seed, draw_index=i
        )
        samples[i] = draw.alive_mass[depths]
    means = samples.mean(axis=0)
    ses = samples.std(axis=0, ddof=1) / math.sqrt(n_draws)
    return [(k, float(m), float(s)) for k, m, s in zip(depths, means, ses)]
