import numpy as np
import pytest

from fidsel.demo import demo_scenario, solve_demo_policy
from fidsel.policy import discretize_observations
from fidsel.workload import Action, EmissionChannel, WorkloadModel


def random_model(k: int, rng: np.random.Generator, scale: float = 5.0) -> WorkloadModel:
    """Random valid K-state model with all-Gaussian channels."""
    trans = {a: rng.dirichlet(np.ones(k), size=k) for a in (Action.N, Action.H)}
    emis = {
        a: [
            tuple(
                EmissionChannel.gaussian(float(rng.normal(scale=scale)), float(0.5 + rng.random()))
                for _ in range(3)
            )
            for _ in range(k)
        ]
        for a in (Action.N, Action.H)
    }
    return WorkloadModel(k, trans, emis, rng.dirichlet(np.ones(k)))


def tight_model() -> WorkloadModel:
    """Small-support model so discretized joints stay tiny and fast."""
    g = EmissionChannel.gaussian
    pm = EmissionChannel.point_mass
    trans = {
        Action.N: np.array([[0.8, 0.2], [0.3, 0.7]]),
        Action.H: np.array([[0.9, 0.1], [0.5, 0.5]]),
    }
    emis = {
        Action.N: [
            (g(0.8, 0.05), pm(0.0), g(400.0, 30.0)),
            (g(0.5, 0.05), g(1.0, 0.4), g(700.0, 40.0)),
        ],
        Action.H: [
            (g(0.9, 0.04), pm(0.0), g(450.0, 30.0)),
            (g(0.7, 0.05), g(0.5, 0.3), g(650.0, 40.0)),
        ],
    }
    return WorkloadModel(2, trans, emis, np.array([0.6, 0.4]))


@pytest.fixture(scope="session")
def scenario():
    return demo_scenario()


@pytest.fixture(scope="session")
def demo_table(scenario):
    return discretize_observations(scenario.model, scenario.channel_steps)


@pytest.fixture(scope="session")
def policy2(scenario):
    return solve_demo_policy(2, scenario)


@pytest.fixture(scope="session")
def policy3(scenario):
    return solve_demo_policy(3, scenario)


@pytest.fixture()
def small_model():
    return tight_model()


@pytest.fixture()
def small_table(small_model):
    return discretize_observations(small_model)
