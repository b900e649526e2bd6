import numpy as np
import pytest

from graphmtl.graph import build_coupling
from graphmtl.losses import LossModel, estimate_constants
from graphmtl.objective import corollary2_params
from graphmtl.synthdata import TaskSpec, generate_world


@pytest.fixture(scope="session")
def small_world():
    """Connected 8-machine regression world shared by solver tests."""
    world = generate_world(
        TaskSpec(d=6, m=8, C=2, n=30, dev_size=200, test_size=200, knn_k=4, seed=3)
    )
    assert world.connected
    return world


@pytest.fixture(scope="session")
def small_setup(small_world):
    """(model, world, graph, consts, hp, coupling) bundle for the small world."""
    model = LossModel("squared")
    consts = estimate_constants(model, small_world.train, B_eff=2 * small_world.true_b)
    hp = corollary2_params(
        consts.lipschitz,
        small_world.true_b,
        small_world.true_s,
        small_world.spec.m,
        small_world.spec.n,
        small_world.graph,
    )
    coupling = build_coupling(small_world.graph, hp.kappa)
    return model, small_world, small_world.graph, consts, hp, coupling


def rng_of(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
