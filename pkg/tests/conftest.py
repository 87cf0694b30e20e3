"""Shared fixtures: models, grids, and cached evolutions.

Everything returned by the cached factories is immutable (frozen
dataclasses holding write-locked arrays), so sharing across tests is safe.
"""
from __future__ import annotations

import functools

import numpy as np
import pytest

from artifact import fpe
from artifact.grid import DensityField, Grid1D
from artifact.models import build_model

DESK_L = 12.0
DESK_N = 1200


def gaussian_field(grid: Grid1D, mean: float, var: float,
                   mass: float = 1.0, time: float = 0.0) -> DensityField:
    x = grid.cell_centers
    vals = np.exp(-0.5 * (x - mean) ** 2 / var)
    vals *= mass / (np.sum(vals) * grid.dx)
    return DensityField(grid, vals, time=time)


def sandwiched_field(model, grid: Grid1D, level: float,
                     wiggle: float = 0.5, wavenumber: float = 1.0,
                     mass: float | None = None) -> DensityField:
    """Stationary profile wiggled in g-coordinates (finite F and I for
    every family, below saturation by construction)."""
    x = grid.cell_centers
    arg = level + wiggle * np.cos(wavenumber * x) - model.phi.value(x)
    cap = model.derived.g_inv_max
    if np.isfinite(cap):
        arg = np.minimum(arg, cap - 1e-9)
    vals = np.asarray(model.derived.g_inv(arg), dtype=float)
    if mass is not None:
        vals *= mass / (np.sum(vals) * grid.dx)
    return DensityField(grid, vals, time=0.0)


@functools.lru_cache(maxsize=None)
def cached_model(family: str, key: float | None = None):
    if family == "bose":
        return build_model("bose", {"gamma": key})
    if family == "power":
        return build_model("power", {"alpha": key})
    return build_model(family)


@functools.lru_cache(maxsize=None)
def cached_curve(family: str, key: float | None, n_cells: int,
                 t_end: float, n_snapshots: int, L: float = DESK_L):
    """(model, curve) for the family's test initial density."""
    model = cached_model(family, key)
    grid = Grid1D(L=L, n_cells=n_cells)
    if family == "linear":
        init = gaussian_field(grid, 2.0, 1.0)
    elif family == "power":
        init = sandwiched_field(model, grid, -6.0)
    else:
        init = sandwiched_field(model, grid, -0.6)
    curve = fpe.evolve(model, init, t_end,
                       snapshot_times=np.linspace(0.0, t_end, n_snapshots))
    return model, curve


@pytest.fixture(scope="session")
def linear_model():
    return cached_model("linear")


@pytest.fixture(scope="session")
def fd_model():
    return cached_model("fermi-dirac")


@pytest.fixture(scope="session")
def all_models():
    return {
        "linear": cached_model("linear"),
        "fermi-dirac": cached_model("fermi-dirac"),
        "bose(1)": cached_model("bose", 1.0),
        "bose(3)": cached_model("bose", 3.0),
        "power(1)": cached_model("power", 1.0),
        "power(2)": cached_model("power", 2.0),
    }


@pytest.fixture(scope="session")
def grid_small():
    return Grid1D(L=12.0, n_cells=300)


@pytest.fixture(scope="session")
def grid_medium():
    return Grid1D(L=12.0, n_cells=600)
