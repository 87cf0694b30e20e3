"""Compactly supported bumps, tilted evolutions, and the slope inequality."""
from __future__ import annotations

import numpy as np
import pytest

from artifact import NumericalError, fpe
from artifact.functionals import dissipation, free_energy
from artifact.grid import Grid1D
from artifact.perturbation import (
    BumpField,
    perturbed_curve,
    perturbed_dissipation_residual,
    perturbed_model,
    slope_comparison,
    slope_report_to_csv,
)
from conftest import cached_curve, cached_model, gaussian_field, sandwiched_field


# ------------------------------------------------------------- bump field

def test_bump_compact_support_and_smoothness():
    b = BumpField(center=1.0, radius=0.5, amplitude=0.3)
    x = np.array([0.49999, 0.5, 1.0, 1.5, 1.50001, 3.0])
    v = b.value(x)
    assert v[0] == 0.0 and v[1] == 0.0 and v[4] == 0.0 and v[5] == 0.0
    assert v[2] == pytest.approx(0.3 * np.exp(-1.0))
    assert b.grad(np.array([0.5]))[0] == 0.0
    assert b.lap(np.array([1.5]))[0] == 0.0


def test_bump_derivatives_match_finite_differences():
    b = BumpField(center=-0.5, radius=1.2, amplitude=0.7)
    x = np.linspace(-1.6, 0.6, 41)
    eps = 1e-6
    num_grad = (b.value(x + eps) - b.value(x - eps)) / (2 * eps)
    assert np.allclose(b.grad(x), num_grad, rtol=1e-5, atol=1e-8)
    num_lap = (b.grad(x + eps) - b.grad(x - eps)) / (2 * eps)
    assert np.allclose(b.lap(x), num_lap, rtol=1e-4, atol=1e-6)


def test_bump_validation():
    with pytest.raises(ValueError):
        BumpField(center=0.0, radius=0.0, amplitude=1.0)
    with pytest.raises(ValueError):
        BumpField(center=0.0, radius=-1.0, amplitude=1.0)


def test_grad_bound_covers_the_supremum():
    b = BumpField(center=0.3, radius=0.9, amplitude=-0.4)
    x = np.linspace(-0.7, 1.3, 20001)
    assert np.max(np.abs(b.grad(x))) <= b.grad_bound() + 1e-12


# --------------------------------------------------------- tilted dynamics

def test_perturbed_model_tilts_the_potential(linear_model):
    b = BumpField(center=0.0, radius=1.0, amplitude=0.5)
    tilted = perturbed_model(linear_model, b)
    x = np.linspace(-2.0, 2.0, 11)
    assert np.allclose(tilted.phi.value(x),
                       linear_model.phi.value(x) + b.value(x))
    assert tilted.phi.growth_C >= linear_model.phi.growth_C


def test_zero_amplitude_reproduces_evolution_bitwise(linear_model):
    grid = Grid1D(L=12.0, n_cells=200)
    init = gaussian_field(grid, 2.0, 1.0)
    plain = fpe.evolve(linear_model, init, 0.2, snapshot_times=[0.0, 0.2])
    tilted = perturbed_curve(linear_model,
                             BumpField(center=0.0, radius=1.0, amplitude=0.0),
                             init, 0.2, snapshot_times=[0.0, 0.2])
    assert np.array_equal(plain.fields[-1].values, tilted.fields[-1].values)


@pytest.mark.parametrize("family,key,level", [
    ("linear", None, None), ("fermi-dirac", None, -0.6)])
def test_perturbed_identity_residual_small(family, key, level):
    model = cached_model(family, key)
    grid = Grid1D(L=12.0, n_cells=600)
    init = (gaussian_field(grid, 2.0, 1.0) if family == "linear"
            else sandwiched_field(model, grid, level))
    bump = BumpField(center=1.0, radius=1.5, amplitude=0.4)
    curve = perturbed_curve(model, bump, init, 0.5,
                            snapshot_times=np.linspace(0.0, 0.5, 11))
    resid = perturbed_dissipation_residual(model, bump, curve)
    scale = max(dissipation(model, f) for f in curve.fields)
    assert np.max(np.abs(resid[1:-1])) <= 0.02 * scale


def test_perturbed_residual_needs_three_snapshots(linear_model):
    grid = Grid1D(L=12.0, n_cells=200)
    init = gaussian_field(grid, 2.0, 1.0)
    bump = BumpField(center=0.0, radius=1.0, amplitude=0.1)
    curve = perturbed_curve(linear_model, bump, init, 0.1,
                            snapshot_times=[0.0, 0.1])
    with pytest.raises(ValueError):
        perturbed_dissipation_residual(linear_model, bump, curve)


# ------------------------------------------------------- slope comparison

def test_slope_comparison_bounds_hold(fd_model, grid_medium):
    p = sandwiched_field(fd_model, grid_medium, -0.6)
    rng = np.random.default_rng(11)
    bumps = [BumpField(center=float(rng.uniform(-3, 3)),
                       radius=float(rng.uniform(0.5, 2.0)),
                       amplitude=float(rng.uniform(-0.5, 0.5)))
             for _ in range(5)]
    report = slope_comparison(fd_model, p, bumps)
    assert np.all(report.gap >= -1e-10)
    assert report.lhs.shape == (5,)


def test_slope_comparison_zero_bump_is_equality(linear_model, grid_medium):
    p = gaussian_field(grid_medium, 2.0, 1.0)
    report = slope_comparison(
        linear_model, p,
        [BumpField(center=0.0, radius=1.0, amplitude=0.0)])
    assert report.gap[0] == 0.0


def test_slope_comparison_rejects_empty_and_degenerate(linear_model,
                                                       grid_medium):
    p = gaussian_field(grid_medium, 2.0, 1.0)
    with pytest.raises(ValueError):
        slope_comparison(linear_model, p, [])


def test_slope_report_csv(fd_model, grid_medium):
    p = sandwiched_field(fd_model, grid_medium, -0.6)
    report = slope_comparison(
        fd_model, p, [BumpField(center=0.5, radius=1.0, amplitude=0.2)])
    text = slope_report_to_csv(report, header_lines=["scale=test"])
    lines = text.strip().splitlines()
    assert lines[0] == "# scale=test"
    assert lines[1] == "center,radius,amplitude,lhs,rhs,gap"
    vals = [float(v) for v in lines[2].split(",")]
    assert vals[0] == 0.5 and len(vals) == 6
