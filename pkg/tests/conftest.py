import numpy as np
import pytest

import qebsdej as q


@pytest.fixture(scope="session")
def gamma_model():
    return q.make_model("gamma", theta=1.0, beta=1.0)


@pytest.fixture(scope="session")
def stable_model():
    return q.make_model("stable", theta=1.0, alpha=0.5)


@pytest.fixture(scope="session")
def gamma_quad(gamma_model):
    return q.build_quadrature(gamma_model, 4.0, 10)


@pytest.fixture(scope="session")
def two_node_quad():
    # hand-built two-node measure with total mass 2 (weights 1.5, 0.5)
    return q.MarkQuadrature(np.array([1.0, 2.0]), np.array([1.5, 0.5]), 1.0,
                            np.array([1.0, 2.0]))


@pytest.fixture(scope="session")
def small_ensemble(gamma_model, gamma_quad):
    tg = np.linspace(0.0, 1.0, 21)
    return q.simulate_forward(gamma_model, gamma_quad, "brownian_jumps", tg,
                              20000, seed=101)


def probe_fields(rng, quad, n, spread=1.0):
    return rng.uniform(-spread, spread, (n, quad.n_nodes))
