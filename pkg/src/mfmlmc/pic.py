"""Grid machinery for the electrostatic particle-in-cell model.

One periodic spatial dimension: tent-function charge deposition, a spectral
solve of -phi'' = rho - rho0, and piecewise-linear field interpolation back
to particle positions.  Dimensionless units throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with nodes x_i = i*h, i = 0 .. n_cells-1."""

    domain_length: float
    cell_size: float
    n_cells: int = field(init=False)

    def __post_init__(self):
        if self.domain_length <= 0 or self.cell_size <= 0:
            raise ValueError("domain_length and cell_size must be positive")
        ratio = self.domain_length / self.cell_size
        n = round(ratio)
        if abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"domain_length/cell_size = {ratio} is not an integer"
            )
        if n < 4:
            raise ValueError("grid needs at least 4 cells")
        object.__setattr__(self, "n_cells", int(n))

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.cell_size


def _bracket(position, grid: GridSpec):
    """Left node index, right node index and right-hand weight fraction."""
    u = np.asarray(position, dtype=float) % grid.domain_length / grid.cell_size
    left = np.floor(u)
    frac = u - left
    i0 = left.astype(np.int64) % grid.n_cells
    i1 = (i0 + 1) % grid.n_cells
    return i0, i1, frac


def deposit(position: float, grid: GridSpec):
    """Tent-kernel charge contribution of a single particle.

    Returns (node_indices, weights): the two bracketing nodes with weights
    S((x - x_i)/h)/h, which sum to 1/h so that ensemble-averaged densities
    integrate to one.  Positions are reduced modulo the domain length.
    """
    i0, i1, frac = _bracket(position, grid)
    h = grid.cell_size
    indices = np.array([i0, i1], dtype=np.int64)
    weights = np.array([(1.0 - frac) / h, frac / h])
    return indices, weights


def deposit_density(positions: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Sample-mean density rho(x_i) of an ensemble of positions."""
    positions = np.asarray(positions, dtype=float)
    i0, i1, frac = _bracket(positions, grid)
    h = grid.cell_size
    rho = np.bincount(i0, weights=(1.0 - frac) / h, minlength=grid.n_cells)
    rho += np.bincount(i1, weights=frac / h, minlength=grid.n_cells)
    return rho / positions.size


def solve_field(rho: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Electric field E(x_i) = -phi'(x_i) for -phi'' = rho - mean(rho).

    Spectral solve on the periodic grid: phi_hat_k = rho_hat_k / k^2 for
    wavenumbers k = 2*pi*m/L with m != 0, zero mode dropped, and the Nyquist
    mode of the derivative zeroed.
    """
    rho = np.asarray(rho, dtype=float)
    n = grid.n_cells
    rho_hat = np.fft.rfft(rho - rho.mean())
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=grid.cell_size)
    k[0] = 1.0  # zero mode removed below; avoid 0/0
    e_hat = -1j * k * rho_hat / k**2
    e_hat[0] = 0.0
    if n % 2 == 0:
        e_hat[-1] = 0.0
    return np.fft.irfft(e_hat, n)


def interpolate_field(e_nodes: np.ndarray, position, grid: GridSpec):
    """Piecewise-linear, periodic interpolation of nodal values."""
    e_nodes = np.asarray(e_nodes, dtype=float)
    i0, i1, frac = _bracket(position, grid)
    return (1.0 - frac) * e_nodes[i0] + frac * e_nodes[i1]
