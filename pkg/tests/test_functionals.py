"""Energy, entropy, dissipation, trajectory rates, and the energy report."""
from __future__ import annotations

import math

import numpy as np
import pytest

from artifact import fpe
from artifact.functionals import (
    EnergyReport,
    discretized_stationary,
    dissipation,
    energy_report,
    free_energy,
    log_gradient_energy,
    rate_D_field,
    rate_D_generic,
    rate_D_pointwise,
    rate_D_specialized,
    relative_entropy,
    relative_fisher,
    report_to_csv,
    second_moment_check,
    wh_gradient,
    wh_gradient_norm2,
)
from artifact.grid import DensityField, Grid1D
from artifact.models import build_model, generalized_entropy
from conftest import cached_curve, cached_model, gaussian_field, sandwiched_field

# frozen point oracle for the trajectory rate at
# (p, p_x, p_xx, x) = (0.37, -0.21, 0.145, 1.3), quadratic well
RATE_STATE = (0.37, -0.21, 0.145, 1.3)
RATE_VALUES = {
    ("linear", None): 7.7165084002921791e-01,
    ("fermi-dirac", None): 1.7484606068434752e+00,
    ("bose", 1.0): -2.8087778597413848e-02,
    ("bose", 3.0): 5.9577886829123172e-01,
    ("power", 1.0): 6.0976618296481777e-01,
    ("power", 2.0): 2.5782448983193005e+00,
}


# --------------------------------------------------------- scalar oracles

def test_free_energy_gaussian_oracle(grid_medium, linear_model):
    p = gaussian_field(grid_medium, 0.0, 1.0)
    assert free_energy(linear_model, p) == pytest.approx(
        -1.9189385332046727, abs=1e-10)


def test_generalized_entropy_gaussian_oracle(grid_medium, linear_model):
    p = gaussian_field(grid_medium, 0.0, 1.0)
    assert generalized_entropy(linear_model, p) == pytest.approx(
        1.4189385332046727, abs=1e-10)


def test_generalized_entropy_refuses_degenerate_kit(grid_medium):
    m = build_model("power", {"alpha": 1.0})
    p = gaussian_field(grid_medium, 0.0, 1.0)
    with pytest.raises(ValueError):
        generalized_entropy(m, p)


def test_dissipation_gaussian_oracle(grid_medium, linear_model):
    p = gaussian_field(grid_medium, 2.0, 1.0)
    assert dissipation(linear_model, p) == pytest.approx(4.0, abs=1e-10)


def test_relative_entropy_gaussian_oracle(grid_medium, linear_model):
    p = gaussian_field(grid_medium, 2.0, 1.0)
    q = gaussian_field(grid_medium, 0.0, 1.0)
    assert relative_entropy(linear_model, p, q) == pytest.approx(
        2.0, abs=1e-10)
    with pytest.raises(ValueError):
        relative_entropy(linear_model, p,
                         gaussian_field(grid_medium, 0.0, 1.0, mass=2.0))


def test_free_energy_infinite_with_vacuum_for_power(grid_medium):
    m = build_model("power", {"alpha": 2.0})
    vals = np.zeros(grid_medium.n_cells)
    vals[200:400] = 1.0
    vals /= np.sum(vals) * grid_medium.dx
    p = DensityField(grid_medium, vals)
    assert free_energy(m, p) == math.inf


def test_relative_fisher_against_exact_reference(grid_medium, linear_model):
    # ln q + Phi is constant for the sampled continuum Gaussian, so the
    # modified Fisher information equals the dissipation to rounding
    p = gaussian_field(grid_medium, 2.0, 1.0)
    q = gaussian_field(grid_medium, 0.0, 1.0)
    assert relative_fisher(linear_model, p, q) == pytest.approx(
        dissipation(linear_model, p), rel=1e-12)


def test_relative_fisher_against_scheme_reference(grid_medium, linear_model):
    # the scheme fixed point differs from the continuum profile by O(dx^2)
    p = gaussian_field(grid_medium, 2.0, 1.0)
    p_inf = discretized_stationary(linear_model, grid_medium, 1.0)
    got = relative_fisher(linear_model, p, p_inf)
    assert got == pytest.approx(dissipation(linear_model, p), rel=1e-2)


# -------------------------------------------------------- trajectory rates

@pytest.mark.parametrize("family,key", sorted(RATE_VALUES, key=str))
def test_rate_pointwise_frozen_oracle(family, key):
    model = cached_model(family, key)
    got = rate_D_pointwise(model, *RATE_STATE)
    assert float(got) == pytest.approx(RATE_VALUES[(family, key)], rel=1e-12)


@pytest.mark.parametrize("family,key", [("fermi-dirac", None), ("bose", 1.0),
                                        ("bose", 3.0), ("power", 1.0),
                                        ("power", 2.0)])
def test_rate_specialized_matches_pointwise(family, key):
    model = cached_model(family, key)
    rng = np.random.default_rng(42)
    hi = 0.9 if family == "fermi-dirac" else 3.0
    p = rng.uniform(0.05, hi, size=50)
    px = rng.normal(0.0, 0.5, size=50)
    pxx = rng.normal(0.0, 0.5, size=50)
    x = rng.uniform(-3.0, 3.0, size=50)
    spec = rate_D_specialized(model, p, px, pxx, x)
    gen = rate_D_pointwise(model, p, px, pxx, x)
    rel = np.max(np.abs(spec - gen) / np.maximum(np.abs(gen), 1e-300))
    assert rel <= 1e-8


def test_rate_specialized_refuses_families_without_closed_form():
    with pytest.raises(ValueError):
        rate_D_specialized(cached_model("linear", None), *RATE_STATE)


def test_rate_field_average_is_minus_dissipation(grid_medium):
    # exact on the real line; light tails keep the wall bracket negligible,
    # leaving only O(dx^2) stencil error in the quadrature
    for family, key in (("linear", None), ("fermi-dirac", None)):
        model = cached_model(family, key)
        p = (gaussian_field(grid_medium, 2.0, 1.0) if family == "linear"
             else sandwiched_field(model, grid_medium, -0.6))
        D = rate_D_field(model, p)
        avg = grid_medium.integrate(D * p.values)
        i_val = dissipation(model, p)
        assert abs(avg + i_val) <= 5e-3 * max(i_val, 1e-30)


def test_rate_generic_along_curve_matches_field():
    model, curve = cached_curve("fermi-dirac", None, 300, 0.5, 6)
    field = curve.fields[2]
    D_field = rate_D_field(model, field)
    for j in (60, 150, 240):
        got = rate_D_generic(model, curve, 2, j)
        assert got == pytest.approx(float(D_field[j]), rel=1e-12)


# ------------------------------------------------------- descent duality

def test_wh_gradient_matches_negative_rhs(grid_medium, linear_model):
    p = gaussian_field(grid_medium, 2.0, 1.0)
    resid = wh_gradient(linear_model, p) + fpe.rhs(linear_model, p)
    assert np.max(np.abs(resid)) <= 5e-2  # O(dx^2) at this resolution


def test_wh_gradient_zero_at_sampled_continuum_profile(grid_medium,
                                                       linear_model):
    # g(p) + Phi is constant at the centers of the sampled profile, so the
    # mimetic descent field vanishes to rounding there
    p_inf = gaussian_field(grid_medium, 0.0, 1.0)
    assert np.max(np.abs(wh_gradient(linear_model, p_inf))) <= 1e-11


def test_wh_gradient_small_at_scheme_fixed_point(grid_medium, linear_model):
    # the scheme fixed point zeroes the hybrid flux instead; the mimetic
    # descent field there is only O(dx^2)
    p_inf = discretized_stationary(linear_model, grid_medium, 1.0)
    assert np.max(np.abs(wh_gradient(linear_model, p_inf))) <= 1e-2


def test_metric_norm_equals_dissipation(grid_medium, fd_model):
    p = sandwiched_field(fd_model, grid_medium, -0.6)
    assert wh_gradient_norm2(fd_model, p) == pytest.approx(
        dissipation(fd_model, p), abs=1e-14)


def test_manual_quadrature_matches_dissipation(grid_medium, fd_model):
    # independent evaluation of int |grad(g(p)+Phi)|^2 h(p) dx
    p = sandwiched_field(fd_model, grid_medium, -0.6)
    x = grid_medium.cell_centers
    s = np.log(p.values / (1.0 - p.values)) + 0.5 * x * x
    grad = grid_medium.gradient(s)
    manual = grid_medium.integrate(grad * grad * p.values * (1 - p.values))
    assert manual == pytest.approx(dissipation(fd_model, p), rel=1e-12)


# ------------------------------------------------- moments and stationary

def test_second_moment_envelope_oracle(grid_medium, linear_model):
    # envelope at t=1 from m2(0)=5 equals 6 e^2 - 1 for the quadratic well
    p = gaussian_field(grid_medium, 2.0, 1.0)
    curve = fpe.evolve(linear_model, p, 1.0, snapshot_times=[0.0, 0.5, 1.0])
    moments, bound, ok = second_moment_check(linear_model, curve)
    assert ok
    assert moments[0] == pytest.approx(5.0, rel=1e-6)
    assert bound[-1] == pytest.approx(6.0 * math.e**2 - 1.0, rel=1e-10)
    assert np.all(np.diff(moments) < 0.0)  # OU from m2 > m2_inf contracts


def test_second_moment_check_rejects_unknown_objects(linear_model):
    with pytest.raises(ValueError):
        second_moment_check(linear_model, object())


def test_discretized_stationary_errors(grid_small, fd_model):
    with pytest.raises(ValueError):
        discretized_stationary(fd_model, grid_small, -1.0)
    with pytest.raises(ValueError):
        # saturation 1 on [-12, 12] caps the mass at 24
        discretized_stationary(fd_model, grid_small, 25.0)


def test_discretized_stationary_converges_to_continuum():
    # the scheme fixed point approaches g_inv(c - Phi) at second order
    model = cached_model("fermi-dirac", None)
    from artifact.models import stationary_density
    prof = stationary_density(model, 1.0, (-12.0, 12.0))
    errs = []
    for n in (150, 300, 600):
        g = Grid1D(L=12.0, n_cells=n)
        p = discretized_stationary(model, g, 1.0)
        errs.append(np.max(np.abs(p.values - prof.density(g.cell_centers))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), (errs, orders)


# ----------------------------------------------------------- energy report

def test_energy_report_columns_and_identity():
    model, curve = cached_curve("linear", None, 600, 1.0, 21)
    rep = energy_report(model, curve)
    n = curve.times.size
    for col in (rep.F, rep.H_g, rep.I, rep.dFdt_numeric, rep.residual):
        assert col.shape == (n,)
    assert np.all(rep.H_g >= -1e-8)
    assert np.all(rep.I >= 0.0)
    # interior residual small relative to the dissipation scale
    assert np.max(np.abs(rep.residual[1:-1])) <= 0.02 * np.max(rep.I)


def test_energy_report_validates_columns():
    t = np.linspace(0.0, 1.0, 5)
    z = np.zeros(5)
    with pytest.raises(ValueError):
        EnergyReport(times=t, F=z, H_g=np.full(5, -1.0), I=z,
                     dFdt_numeric=z, residual=z)
    with pytest.raises(ValueError):
        EnergyReport(times=t, F=z, H_g=z, I=np.full(5, -1.0),
                     dFdt_numeric=z, residual=z)
    with pytest.raises(ValueError):
        EnergyReport(times=t, F=np.zeros(4), H_g=z, I=z,
                     dFdt_numeric=z, residual=z)


def test_report_to_csv_parses_cleanly():
    model, curve = cached_curve("linear", None, 300, 0.5, 6)
    rep = energy_report(model, curve)
    text = report_to_csv(rep, header_lines=["run=unit"])
    assert "np.float64" not in text
    lines = [ln for ln in text.strip().splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    assert header[:4] == ["time", "free_energy", "relative_entropy",
                          "dissipation"]
    parsed = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert parsed.shape == (6, len(header))
    assert np.allclose(parsed[:, 0], curve.times)


def test_log_gradient_energy_finite():
    model, curve = cached_curve("linear", None, 300, 0.5, 6)
    val = log_gradient_energy(curve)
    assert math.isfinite(val) and val > 0.0
