"""Mean-field model interface and the built-in example systems.

A model bundles the drift, diffusion, mean-field functional and payoff of a
McKean-Vlasov system

    dX = alpha(X, t, E[R(X)]) dt + beta(X, t, E[R(X)]) dW,  X_0 ~ initial law

together with its dimensions and simulation horizon.  All four callables are
pure and vectorized: they accept arrays whose trailing axis is the state (or
mean-field) dimension and broadcast over any leading sample axes, so a single
d-vector works as well as an (N, d) ensemble.  All randomness flows through
``initial_sampler`` and the Brownian increments supplied by the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .pic import GridSpec, _bracket, deposit_density, interpolate_field, solve_field


@dataclass(frozen=True)
class ModelSpec:
    """One McKean-Vlasov system, ready for the particle engine.

    Attributes
    ----------
    state_dim, noise_dim : int
        Dimensions of the state X and the driving Brownian motion W.
    meanfield_dim, payoff_dim : int
        Output dimensions of the mean-field functional R and the payoff P.
    terminal_time : float
        Simulation horizon T.
    base_dt : float
        Level-0 time step; terminal_time/base_dt must be a whole number.
    drift : callable (states (..., d), t, meanfield (gamma,)) -> (..., d)
    diffusion : callable (states (..., d), t, meanfield (gamma,)) -> (..., d, D)
    meanfield_fn : callable (states (..., d)) -> (..., gamma)
    payoff_fn : callable (states (..., d)) -> (..., eta)
    initial_sampler : callable (numpy Generator) -> (d,) array
    zero_diffusion : bool
        True when the diffusion is identically zero, letting the stepper skip
        Brownian draws entirely.
    ensemble_meanfield : callable (states (N, d)) -> (gamma,), optional
        Direct sample mean of R, for models where forming the per-sample
        values densely is wasteful (the PIC deposit).  When present the
        engine records the mean field through it, at every level runner, so
        the output stays bit-identical across runners.
    name, param_tag : str
        Identity used in reference-cache keys and CSV metadata.
    """

    state_dim: int
    noise_dim: int
    meanfield_dim: int
    payoff_dim: int
    terminal_time: float
    base_dt: float
    drift: Callable
    diffusion: Callable
    meanfield_fn: Callable
    payoff_fn: Callable
    initial_sampler: Callable
    zero_diffusion: bool = False
    ensemble_meanfield: Callable | None = None
    name: str = "custom"
    param_tag: str = ""

    def __post_init__(self):
        for attr in ("state_dim", "noise_dim", "meanfield_dim", "payoff_dim"):
            if getattr(self, attr) < 1:
                raise ValueError(f"{attr} must be a positive integer")
        if self.terminal_time <= 0 or self.base_dt <= 0:
            raise ValueError("terminal_time and base_dt must be positive")
        self.steps_for(self.base_dt)  # validates integrality

    def steps_for(self, dt: float) -> int:
        """Number of steps of size dt covering [0, T]; dt must divide T."""
        ratio = self.terminal_time / dt
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"terminal_time/dt = {ratio} is not a positive integer")
        return int(n)


@dataclass(frozen=True)
class LinearModelParams:
    """dX = (a X + b E[X]) dt + sigma dW with normal initial data.

    The moment oracle needs a != 0; a < 0 additionally gives a stationary
    variance limit.  Any sigma >= 0 is admissible for simulation.
    """

    a: float = -0.5
    b: float = 0.8
    sigma: float = math.sqrt(0.5)
    init_mean: float = 1.0
    init_var: float = 0.25


@dataclass(frozen=True)
class RotatorModelParams:
    """Plane rotator in a heat bath: coupling K, temperature tau."""

    coupling: float = 1.0
    temperature: float = 0.125
    init_mean: float = math.pi / 2
    init_var: float = 3 * math.pi / 4


def make_linear_model(params: LinearModelParams, terminal_time: float = 1.0,
                      base_dt: float = 0.25) -> ModelSpec:
    """Scalar linear model: R(x) = x, P(x) = x^2, constant diffusion."""
    if params.sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if params.init_var < 0:
        raise ValueError("init_var must be nonnegative")
    a, b, sigma = params.a, params.b, params.sigma
    init_std = math.sqrt(params.init_var)

    def drift(x, t, r):
        return a * x + b * np.asarray(r)[..., 0:1]

    def diffusion(x, t, r):
        return np.broadcast_to(sigma, np.shape(x) + (1,))

    def meanfield_fn(x):
        return np.asarray(x, dtype=float)

    def payoff_fn(x):
        return np.square(x)

    def initial_sampler(rng):
        return np.array([params.init_mean + init_std * rng.standard_normal()])

    return ModelSpec(
        state_dim=1, noise_dim=1, meanfield_dim=1, payoff_dim=1,
        terminal_time=terminal_time, base_dt=base_dt,
        drift=drift, diffusion=diffusion,
        meanfield_fn=meanfield_fn, payoff_fn=payoff_fn,
        initial_sampler=initial_sampler,
        zero_diffusion=(sigma == 0.0),
        name="linear",
        param_tag=(f"a={a!r},b={b!r},sigma={sigma!r},"
                   f"m0={params.init_mean!r},v0={params.init_var!r}"),
    )


def linear_exact_moments(params: LinearModelParams, t: float):
    """Exact (mean, variance) of the linear model at time t.

    mean(t) = m0 exp((a+b) t)
    var(t)  = (v0 + sigma^2/(2a)) exp(2 a t) - sigma^2/(2a)
    """
    if params.a == 0:
        raise ValueError("moment oracle undefined for a = 0")
    if t < 0:
        raise ValueError("t must be nonnegative")
    a, b = params.a, params.b
    s2_2a = params.sigma**2 / (2 * a)
    mean = params.init_mean * math.exp((a + b) * t)
    var = (params.init_var + s2_2a) * math.exp(2 * a * t) - s2_2a
    return mean, var


def make_rotator_model(params: RotatorModelParams, terminal_time: float = 5.0,
                       base_dt: float | None = None) -> ModelSpec:
    """Plane-rotator model: R(x) = (sin x, cos x), P(x) = sin x."""
    if params.temperature <= 0:
        raise ValueError("temperature must be positive")
    if base_dt is None:
        base_dt = terminal_time
    k = params.coupling
    noise = math.sqrt(2 * params.temperature)
    init_std = math.sqrt(params.init_var)

    def drift(x, t, r):
        r = np.asarray(r)
        return k * (r[..., 0:1] * np.cos(x) - r[..., 1:2] * np.sin(x)) - np.sin(x)

    def diffusion(x, t, r):
        return np.broadcast_to(noise, np.shape(x) + (1,))

    def meanfield_fn(x):
        return np.concatenate([np.sin(x), np.cos(x)], axis=-1)

    def payoff_fn(x):
        return np.sin(x)

    def initial_sampler(rng):
        return np.array([params.init_mean + init_std * rng.standard_normal()])

    return ModelSpec(
        state_dim=1, noise_dim=1, meanfield_dim=2, payoff_dim=1,
        terminal_time=terminal_time, base_dt=base_dt,
        drift=drift, diffusion=diffusion,
        meanfield_fn=meanfield_fn, payoff_fn=payoff_fn,
        initial_sampler=initial_sampler,
        name="rotator",
        param_tag=(f"K={k!r},tau={params.temperature!r},"
                   f"m0={params.init_mean!r},v0={params.init_var!r}"),
    )


def make_pic_model(grid: GridSpec, init_x_mean: float = 10.0, init_x_var: float = 6.0,
                   terminal_time: float = 12.0, base_dt: float = 1.0 / 3.0) -> ModelSpec:
    """Electrostatic PIC model on a periodic grid.

    State is (position, velocity); the mean field is the deposited density at
    the grid nodes, the drift is (v, E(x)) with E from the spectral Poisson
    solve, and the payoff equals the density itself.  The diffusion is
    identically zero: randomness enters only through the initial data.
    """
    init_x_std = math.sqrt(init_x_var)
    n = grid.n_cells

    def meanfield_fn(state):
        state = np.asarray(state, dtype=float)
        batched = state.ndim > 1
        flat = state.reshape(-1, 2)
        i0, i1, frac = _bracket(flat[:, 0], grid)
        out = np.zeros((flat.shape[0], n))
        rows = np.arange(flat.shape[0])
        out[rows, i0] = (1.0 - frac) / grid.cell_size
        out[rows, i1] += frac / grid.cell_size
        return out.reshape(state.shape[:-1] + (n,)) if batched else out[0]

    def drift(state, t, rho):
        state = np.asarray(state, dtype=float)
        e_nodes = solve_field(np.asarray(rho), grid)
        e_at = interpolate_field(e_nodes, state[..., 0], grid)
        return np.stack([state[..., 1], e_at], axis=-1)

    def diffusion(state, t, rho):
        return np.zeros(np.shape(state) + (1,))

    def initial_sampler(rng):
        x = (init_x_mean + init_x_std * rng.standard_normal()) % grid.domain_length
        v = rng.standard_normal()
        return np.array([x, v])

    def ensemble_meanfield(states):
        return deposit_density(states[:, 0], grid)

    return ModelSpec(
        state_dim=2, noise_dim=1, meanfield_dim=n, payoff_dim=n,
        terminal_time=terminal_time, base_dt=base_dt,
        drift=drift, diffusion=diffusion,
        meanfield_fn=meanfield_fn, payoff_fn=meanfield_fn,
        initial_sampler=initial_sampler,
        zero_diffusion=True,
        ensemble_meanfield=ensemble_meanfield,
        name="pic",
        param_tag=(f"L={grid.domain_length!r},h={grid.cell_size!r},"
                   f"xm={init_x_mean!r},xv={init_x_var!r}"),
    )
