import numpy as np
import pytest

from polyatree.evalsuite import GeneratorSpec, generate


@pytest.fixture(scope="session")
def spiky_500():
    return generate(GeneratorSpec("spiky-uniforms", seed=11), 500)


@pytest.fixture(scope="session")
def spiky_2500():
    return generate(GeneratorSpec("spiky-uniforms", seed=0), 2500)


def tree_interval_edges(tree):
    """Sorted distinct leaf interval endpoints of a 1D topology."""
    edges = set()
    for leaf in tree.leaves():
        lo, hi = leaf.region.bounds()[0]
        edges.update((lo, hi))
    return np.array(sorted(edges))
