"""Prior parameter rules for adaptive Polya trees with optional stopping.

A prior is specified by three ingredients per region A:

* a stopping probability ``rho(A)`` — here a single global constant
  (independent stopping rule);
* selection probabilities ``lambda(A)`` over the M(A) available splits —
  here always uniform, ``1/M(A)``;
* assignment weights ``alpha(A, j)`` — Beta pseudo-counts splitting the
  region's mass between the two children.

Three assignment rules are supported.  ``ConstantHalf`` is the Jeffreys
choice (1/2, 1/2) at every region.  ``TauScaled(tau)`` uses
``tau^k * mu(child)/mu(root)`` at level k; with ``tau = 2`` and the
equal-volume binary splits used by every scheme here it reduces exactly to
``ConstantHalf``.  ``QuadraticDepth`` is the never-stopping baseline with
pseudo-counts equal to the squared child level; it exists only to drive the
classical Polya tree comparison estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .geometry import (
    PartitionScheme,
    Region,
    log_measure,
    measure,
    num_splits,
    root_region,
    split,
)

__all__ = [
    "ConstantHalf",
    "TauScaled",
    "QuadraticDepth",
    "AlphaRule",
    "PriorSpec",
    "standard_polya_tree",
    "stopping_prob",
    "selection_probs",
    "assignment_weights",
    "prior_to_dict",
    "prior_from_dict",
]


@dataclass(frozen=True)
class ConstantHalf:
    """Beta(1/2, 1/2) pseudo-counts at every region."""


@dataclass(frozen=True)
class TauScaled:
    """Pseudo-counts ``tau^k * mu(child)/mu(root)`` for a level-k parent."""

    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class QuadraticDepth:
    """Baseline rule: both pseudo-counts equal ``max(1, child_level^2)``.

    The floor keeps the root split proper; the rule is only used with the
    never-stopping baseline prior.
    """


AlphaRule = Union[ConstantHalf, TauScaled, QuadraticDepth]


@dataclass(frozen=True)
class PriorSpec:
    """Full prior specification tied to a partition scheme.

    ``rho`` must lie in (0, 1) for the adaptive prior proper.  The endpoints
    are additionally accepted for two degenerate diagnostics: ``rho = 1``
    stops immediately (uniform measure), and ``rho = 0`` is required by the
    ``QuadraticDepth`` baseline, which never stops.  The selection rule is
    always uniform over available splits.
    """

    scheme: PartitionScheme
    rho: float = 0.5
    alpha_rule: AlphaRule = field(default_factory=ConstantHalf)
    lambda_rule: str = "uniform"

    def __post_init__(self):
        if self.lambda_rule != "uniform":
            raise ValueError("only the uniform selection rule is supported")
        if isinstance(self.alpha_rule, QuadraticDepth):
            if self.rho != 0.0:
                raise ValueError("the quadratic-depth baseline requires rho = 0")
        elif not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1] for a stopping prior")

    @property
    def is_baseline(self) -> bool:
        return isinstance(self.alpha_rule, QuadraticDepth)

    def effective_jeffreys(self) -> bool:
        """True when the assignment weights are exactly (1/2, 1/2) everywhere.

        Holds for ``ConstantHalf`` and, because all three schemes halve the
        measure at every split, for ``TauScaled(2)``.
        """
        if isinstance(self.alpha_rule, ConstantHalf):
            return True
        return isinstance(self.alpha_rule, TauScaled) and self.alpha_rule.tau == 2.0


def standard_polya_tree(scheme: PartitionScheme) -> PriorSpec:
    """The never-stopping baseline with quadratically increasing pseudo-counts."""
    return PriorSpec(scheme=scheme, rho=0.0, alpha_rule=QuadraticDepth())


def stopping_prob(spec: PriorSpec, region: Region) -> float:
    """Stopping probability rho(A); constant under the independent rule."""
    num_splits(spec.scheme, region)  # validates region against scheme
    return spec.rho


def selection_probs(spec: PriorSpec, region: Region) -> np.ndarray:
    """Uniform selection probabilities over the M(A) available splits."""
    m = num_splits(spec.scheme, region)
    if m == 0:
        raise ValueError("region has no available splits")
    return np.full(m, 1.0 / m)


def assignment_weights(spec: PriorSpec, region: Region, j: int) -> tuple[float, float]:
    """Beta pseudo-counts (alpha1, alpha2) for split ``j`` of ``region``."""
    rule = spec.alpha_rule
    if isinstance(rule, ConstantHalf):
        num_splits(spec.scheme, region)
        return (0.5, 0.5)
    if isinstance(rule, QuadraticDepth):
        num_splits(spec.scheme, region)
        a = float(max(1, (region.level + 1) ** 2))
        return (a, a)
    left, right = split(spec.scheme, region, j)
    root_measure = measure(root_region(spec.scheme))
    scale = rule.tau ** region.level / root_measure
    return (scale * measure(left), scale * measure(right))


_ALPHA_TAGS = {"constant-half": ConstantHalf, "quadratic-depth": QuadraticDepth}


def prior_to_dict(spec: PriorSpec) -> dict:
    """Serialize a prior to the flat form used by config documents."""
    if isinstance(spec.alpha_rule, TauScaled):
        alpha = {"rule": "tau-scaled", "tau": spec.alpha_rule.tau}
    elif isinstance(spec.alpha_rule, QuadraticDepth):
        alpha = {"rule": "quadratic-depth"}
    else:
        alpha = {"rule": "constant-half"}
    return {
        "scheme": spec.scheme.variant,
        "dim": spec.scheme.p,
        "rho": spec.rho,
        "lambda_rule": spec.lambda_rule,
        "alpha": alpha,
    }


def prior_from_dict(doc: dict) -> PriorSpec:
    """Inverse of :func:`prior_to_dict`; raises ValueError on bad fields."""
    scheme = PartitionScheme(doc["scheme"], int(doc["dim"]))
    alpha_doc = doc.get("alpha", {"rule": "constant-half"})
    rule_name = alpha_doc["rule"]
    if rule_name == "tau-scaled":
        rule: AlphaRule = TauScaled(float(alpha_doc["tau"]))
    elif rule_name in _ALPHA_TAGS:
        rule = _ALPHA_TAGS[rule_name]()
    else:
        raise ValueError(f"unknown assignment rule {rule_name!r}")
    return PriorSpec(
        scheme=scheme,
        rho=float(doc.get("rho", 0.5)),
        alpha_rule=rule,
        lambda_rule=doc.get("lambda_rule", "uniform"),
    )
