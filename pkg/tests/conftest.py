from pathlib import Path

import numpy as np
import pytest

import mfmlmc as m

# persistent reference cache so repeated pytest runs skip regeneration
REFCACHE = Path(__file__).resolve().parent.parent / ".refcache"


@pytest.fixture(scope="session")
def refcache_dir():
    REFCACHE.mkdir(exist_ok=True)
    return REFCACHE


@pytest.fixture(scope="session")
def linear_params():
    return m.LinearModelParams()  # a=-1/2, b=4/5, sigma^2=1/2


@pytest.fixture(scope="session")
def linear_model(linear_params):
    return m.make_linear_model(linear_params)


@pytest.fixture(scope="session")
def rotator_model():
    return m.make_rotator_model(m.RotatorModelParams())


@pytest.fixture(scope="session")
def pic_model():
    return m.make_pic_model(m.GridSpec(20.0, 1.0))


def frozen_state_model():
    """alpha == 0 and beta == 0: paths never move; coupling is exact."""
    return m.ModelSpec(
        state_dim=1, noise_dim=1, meanfield_dim=1, payoff_dim=1,
        terminal_time=1.0, base_dt=0.25,
        drift=lambda x, t, r: np.zeros_like(x),
        diffusion=lambda x, t, r: np.zeros(np.shape(x) + (1,)),
        meanfield_fn=lambda x: np.asarray(x, dtype=float),
        payoff_fn=lambda x: np.asarray(x, dtype=float),
        initial_sampler=lambda rng: np.array([rng.standard_normal()]),
        zero_diffusion=True, name="frozen")


def additive_noise_model(c=0.7):
    """alpha == 0, beta == c: fine and coarse members share every
    increment sum, so they agree at all shared times."""
    return m.ModelSpec(
        state_dim=1, noise_dim=1, meanfield_dim=1, payoff_dim=1,
        terminal_time=1.0, base_dt=0.25,
        drift=lambda x, t, r: np.zeros_like(x),
        diffusion=lambda x, t, r: np.broadcast_to(c, np.shape(x) + (1,)),
        meanfield_fn=lambda x: np.asarray(x, dtype=float),
        payoff_fn=lambda x: np.asarray(x, dtype=float),
        initial_sampler=lambda rng: np.array([rng.standard_normal()]),
        name="additive")


def oracle_second_moment(params, t):
    mean, var = m.linear_exact_moments(params, t)
    return mean * mean + var
