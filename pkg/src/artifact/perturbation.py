"""Compactly supported potential perturbations and the identities they probe.

A smooth bump added to the confining potential tilts the evolution; the
free energy of the tilted curve then dissipates at the original rate plus
a cross term coupling the descent field to the bump's gradient. Comparing
the weighted inner product of the two fields against the descent field's
norm (a Cauchy-Schwarz bound, tight exactly when the tilted field is a
positive multiple of the original) is the mechanism that identifies the
evolution as the steepest-descent flow of the free energy.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from artifact import NumericalError, fpe
from artifact.functionals import (_slope_field, _time_slopes,
                                  _weighted_slope_inner, dissipation,
                                  free_energy)
from artifact.grid import DensityField
from artifact.models import MobilityModel, with_extra_potential

# a bump profile exp(-1/q) underflows to exactly 0.0 long before q reaches
# this floor, so masking at it changes no value and avoids inf * 0
_EDGE_FLOOR = 1e-8


@dataclass(frozen=True)
class BumpField:
    """Smooth bump amplitude * exp(-1 / (1 - ((x - center)/radius)^2)).

    The profile and all its derivatives vanish identically outside
    |x - center| < radius, so adding it to a potential never changes the
    far-field growth. value/grad/lap are vectorized over ndarrays.
    """

    center: float
    radius: float
    amplitude: float

    def __post_init__(self):
        if not (self.radius > 0.0 and np.isfinite(self.radius)):
            raise ValueError("bump radius must be positive and finite")
        if not (np.isfinite(self.center) and np.isfinite(self.amplitude)):
            raise ValueError("bump center and amplitude must be finite")

    def _pieces(self, x):
        x = np.asarray(x, dtype=float)
        s = (x - self.center) / self.radius
        q = 1.0 - s * s
        inside = q > _EDGE_FLOOR
        q_safe = np.where(inside, q, 1.0)
        core = np.where(inside, np.exp(-1.0 / q_safe), 0.0)
        return s, q_safe, core

    def value(self, x):
        _, _, core = self._pieces(x)
        return self.amplitude * core

    def grad(self, x):
        s, q, core = self._pieces(x)
        return self.amplitude * core * (-2.0 * s) / (q * q) / self.radius

    def lap(self, x):
        s, q, core = self._pieces(x)
        s2 = s * s
        inner = (-2.0 * (1.0 + 3.0 * s2) * q + 4.0 * s2) / (q ** 4)
        return self.amplitude * core * inner / (self.radius * self.radius)

    def grad_bound(self) -> float:
        """Numerical supremum of |grad| over the support."""
        s = np.linspace(-1.0 + 1e-9, 1.0 - 1e-9, 20001)
        x = self.center + s * self.radius
        return float(np.max(np.abs(self.grad(x))))


def perturbed_model(model: MobilityModel, beta: BumpField) -> MobilityModel:
    """The same mobility/diffusion pair confined by potential + bump."""
    tilted = with_extra_potential(
        model.phi, beta.value, beta.grad, beta.lap,
        growth_C=model.phi.growth_C + beta.grad_bound())
    return replace(model, phi=tilted)


def perturbed_curve(model: MobilityModel, beta: BumpField,
                    p_t0: DensityField, t_end: float,
                    **evolve_kwargs) -> "fpe.DensityCurve":
    """Evolve p_t0 under the bump-tilted potential.

    A zero-amplitude bump reproduces the unperturbed evolution bitwise:
    the added value/gradient terms are exact floating-point zeros, so
    every step size and flux is unchanged.
    """
    return fpe.evolve(perturbed_model(model, beta), p_t0, t_end,
                      **evolve_kwargs)


def perturbed_dissipation_residual(model: MobilityModel, beta: BumpField,
                                   curve) -> np.ndarray:
    """Residuals of the tilted dissipation identity along a curve.

    For a curve evolved under potential + bump, the free energy built
    from the ORIGINAL potential obeys
        dF/dt = -I(p) - int <grad(g(p) + potential), grad(bump)> h(p) dx,
    so residual[k] = dFdt_numeric[k] + I(p_k) + cross(p_k) should vanish
    up to the discretization error of the stencils. A zero bump reduces
    this to the unperturbed identity residual.
    """
    t = curve.times
    if t.size < 3:
        raise ValueError("need at least three snapshots for centered slopes")
    beta_vals = beta.value(curve.grid.cell_centers)
    F = np.array([free_energy(model, f) for f in curve.fields])
    I_vals = np.array([dissipation(model, f) for f in curve.fields])
    cross = np.array([
        _weighted_slope_inner(model, f, _slope_field(model, f), beta_vals)
        for f in curve.fields])
    return _time_slopes(t, F) + I_vals + cross


@dataclass(frozen=True, eq=False)
class SlopeReport:
    """Cauchy-Schwarz comparison rows, one per tested bump."""

    centers: np.ndarray
    radii: np.ndarray
    amplitudes: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    gap: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.centers.size
        for name in ("radii", "amplitudes", "lhs", "rhs"):
            if getattr(self, name).size != n:
                raise ValueError("report columns must share one length")
        object.__setattr__(self, "gap", self.rhs - self.lhs)


def slope_comparison(model: MobilityModel, p: DensityField,
                     betas) -> SlopeReport:
    """Weighted Cauchy-Schwarz test of the descent field against bumps.

    With S = g(p) + potential and T = S + bump, computes
        lhs = <grad S, grad T>_h / ||grad T||_h   and   rhs = ||grad S||_h
    in the metric weight h(p). Checks lhs <= rhs + 1e-10 for every bump
    and that equality (within 1e-8 relative) occurs exactly when grad T
    is a positive multiple of grad S. Raises ValueError when some
    ||grad T||_h vanishes, NumericalError when a check fails.
    """
    betas = list(betas)
    if not betas:
        raise ValueError("need at least one bump to compare")
    x = p.grid.cell_centers
    slope = _slope_field(model, p)
    aa = _weighted_slope_inner(model, p, slope, slope)
    rhs_val = float(np.sqrt(max(aa, 0.0)))
    lhs = np.empty(len(betas))
    for i, beta in enumerate(betas):
        beta_vals = beta.value(x)
        if not np.any(beta_vals):
            lhs[i] = rhs_val
            posmul = True
        else:
            tilted = slope + beta_vals
            ab = _weighted_slope_inner(model, p, slope, tilted)
            cc = _weighted_slope_inner(model, p, tilted, tilted)
            if cc <= 1e-30 * max(aa, 1.0):
                raise ValueError(
                    f"bump {i} makes the tilted slope field degenerate")
            lhs[i] = ab / np.sqrt(cc)
            if aa <= 1e-30:
                posmul = cc <= 1e-30
            else:
                lam = ab / aa
                resid2 = max(cc - 2.0 * lam * ab + lam * lam * aa, 0.0)
                posmul = lam > 0.0 and resid2 <= 1e-16 * cc
        if lhs[i] > rhs_val + 1e-10:
            raise NumericalError(
                f"slope comparison violated for bump {i}: "
                f"{lhs[i]:.15g} > {rhs_val:.15g}")
        equal = abs(lhs[i] - rhs_val) <= 1e-8 * max(1.0, rhs_val)
        if equal != posmul:
            raise NumericalError(
                f"equality case mismatch for bump {i}: near-equality "
                f"{equal} but positive-multiple {posmul}")
    return SlopeReport(
        centers=np.array([b.center for b in betas], dtype=float),
        radii=np.array([b.radius for b in betas], dtype=float),
        amplitudes=np.array([b.amplitude for b in betas], dtype=float),
        lhs=lhs,
        rhs=np.full(len(betas), rhs_val),
    )


def slope_report_to_csv(report: SlopeReport, header_lines=()) -> str:
    out = io.StringIO()
    for line in header_lines:
        out.write(f"# {line}\n")
    out.write("center,radius,amplitude,lhs,rhs,gap\n")
    for row in zip(report.centers, report.radii, report.amplitudes,
                   report.lhs, report.rhs, report.gap):
        out.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return out.getvalue()
