"""Shared fixtures: reference models and cached absorber constructions."""

from __future__ import annotations

import numpy as np
import pytest

from qmcpatterns.absorber import joint_parametric, optimize_completion, purify
from qmcpatterns.core import stationary_state
from qmcpatterns.fisher import localize_joint
from qmcpatterns.models import paper_qubit_model, random_qubit_model

THETA_REF = 0.2

# random reference chain with a fast-mixing joint dynamics; used where the
# finite-size mode asymptotics need to be visible at n <= 16
FAST_SEED = 0
FAST_THETA = 0.13


@pytest.fixture(scope="session")
def model():
    return paper_qubit_model()


@pytest.fixture(scope="session")
def fast_model():
    return random_qubit_model(FAST_SEED, theta_ref=FAST_THETA)


@pytest.fixture(scope="session")
def gap_rotation(model):
    kraus = model.kraus_at(THETA_REF)
    return optimize_completion(kraus, purify(stationary_state(kraus)))


@pytest.fixture(scope="session")
def joint_gs(model):
    return joint_parametric(model, THETA_REF, "gram-schmidt")


@pytest.fixture(scope="session")
def joint_polar(model):
    return joint_parametric(model, THETA_REF, "polar")


@pytest.fixture(scope="session")
def joint_gap(model, gap_rotation):
    return joint_parametric(model, THETA_REF, gap_rotation)


@pytest.fixture(scope="session")
def local_gap(joint_gap):
    return localize_joint(joint_gap)


@pytest.fixture(scope="session")
def local_polar(joint_polar):
    return localize_joint(joint_polar)


@pytest.fixture(scope="session")
def local_gs(joint_gs):
    return localize_joint(joint_gs)


@pytest.fixture(scope="session")
def fast_joint(fast_model):
    return joint_parametric(fast_model, FAST_THETA, "gram-schmidt")


@pytest.fixture(scope="session")
def fast_local(fast_joint):
    return localize_joint(fast_joint)


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))
