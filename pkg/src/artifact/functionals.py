"""Energies, dissipations, and trajectory rates evaluated on grid densities.

The central objects are the free energy F(p) = int(eta(p) + Phi p) dx, the
relative entropy H_g (free-energy gap to a reference), the dissipation
I(p) = int |grad(g(p) + Phi)|^2 b(p) p dx, and the pointwise rate D whose
density-weighted average reproduces -I along solutions. The descent field
of F in the mobility-weighted transport geometry and the Gronwall
second-moment envelope live here as well.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from artifact.grid import DensityField, Grid1D, fmt_float
from artifact.models import MobilityModel

__all__ = [
    "EnergyReport",
    "free_energy",
    "relative_entropy",
    "dissipation",
    "relative_fisher",
    "rate_D_generic",
    "rate_D_field",
    "rate_D_pointwise",
    "rate_D_specialized",
    "wh_gradient",
    "wh_gradient_norm2",
    "log_gradient_energy",
    "second_moment_check",
    "energy_report",
    "report_to_csv",
    "discretized_stationary",
]

# weight below this fraction of its own peak is treated as vacuum when
# squaring gradients of g(p), which diverge where the density vanishes
_WEIGHT_REL_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class EnergyReport:
    """Time series of the scalar functionals along one density curve."""

    times: np.ndarray
    F: np.ndarray
    H_g: np.ndarray
    I: np.ndarray
    dFdt_numeric: np.ndarray
    residual: np.ndarray
    metric_deriv: np.ndarray | None = None

    def __post_init__(self):
        cols = [self.times, self.F, self.H_g, self.I, self.dFdt_numeric,
                self.residual]
        if self.metric_deriv is not None:
            cols.append(self.metric_deriv)
        n = self.times.size
        if any(np.asarray(c).shape != (n,) for c in cols):
            raise ValueError("all report columns must match the time axis")
        if np.any(np.asarray(self.H_g) < -1e-8):
            raise ValueError("relative entropy fell below -1e-8")
        if np.any(np.asarray(self.I) < 0.0):
            raise ValueError("dissipation must be non-negative")


def free_energy(model: MobilityModel, p: DensityField) -> float:
    """Midpoint quadrature of eta(p) + Phi*p over the grid.

    eta(0) follows the vanishing-limit convention where that limit is
    finite; for vacuum-degenerate mobilities the integrand diverges at
    empty cells and the result is +inf.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        eta_vals = model.derived.eta(p.values)
    pot = model.phi.value(p.grid.cell_centers)
    return p.grid.integrate(eta_vals + pot * p.values)


def _require_compatible(p: DensityField, q: DensityField) -> None:
    if p.grid.n_cells != q.grid.n_cells or p.grid.L != q.grid.L:
        raise ValueError("densities live on different grids")
    if abs(p.mass - q.mass) > 1e-6:
        raise ValueError(f"mass mismatch: {p.mass!r} vs {q.mass!r}")


def relative_entropy(model: MobilityModel, p: DensityField,
                     p_ref: DensityField) -> float:
    """Free-energy gap F(p) - F(p_ref); non-negative when p_ref minimizes F."""
    _require_compatible(p, p_ref)
    return free_energy(model, p) - free_energy(model, p_ref)


def _weighted_slope_inner(model: MobilityModel, p: DensityField,
                          slope_a: np.ndarray,
                          slope_b: np.ndarray) -> float:
    """int <grad(slope_a), grad(slope_b)> h(p) dx with the vacuum convention.

    Cells where the metric weight h(p) is negligible relative to its peak
    contribute nothing; gradients that blow up there (g is singular at
    vacuum) are discarded before they can poison the quadrature.
    """
    grid = p.grid
    h = model.derived.h(p.values)
    with np.errstate(invalid="ignore", over="ignore"):
        grad_a = grid.gradient(slope_a)
        grad_b = grad_a if slope_b is slope_a else grid.gradient(slope_b)
        w = grad_a * grad_b * h
    w[~np.isfinite(w)] = 0.0
    scale = float(np.max(h)) if h.size else 0.0
    w[h < _WEIGHT_REL_FLOOR * scale] = 0.0
    return grid.integrate(w)


def _weighted_slope_energy(model: MobilityModel, p: DensityField,
                           slope_vals: np.ndarray) -> float:
    return _weighted_slope_inner(model, p, slope_vals, slope_vals)


def _slope_field(model: MobilityModel, p: DensityField) -> np.ndarray:
    # g diverges at vacuum; the consumer masks those cells by weight
    with np.errstate(divide="ignore", invalid="ignore"):
        g_vals = model.derived.g(p.values)
    return g_vals + model.phi.value(p.grid.cell_centers)


def dissipation(model: MobilityModel, p: DensityField) -> float:
    """Energy dissipation I(p) = int |grad(g(p) + Phi)|^2 b(p) p dx."""
    return _weighted_slope_energy(model, p, _slope_field(model, p))


def wh_gradient_norm2(model: MobilityModel, p: DensityField) -> float:
    """Squared metric norm of the energy's descent field: equals I(p)."""
    return _weighted_slope_energy(model, p, _slope_field(model, p))


def relative_fisher(model: MobilityModel, p: DensityField,
                    p_ref: DensityField) -> float:
    """Modified Fisher information int |grad(g(p) - g(q))|^2 h(p) dx.

    With the stationary profile as reference this equals dissipation(p),
    because g(q) + Phi is constant there.
    """
    _require_compatible(p, p_ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = model.derived.g(p.values) - model.derived.g(p_ref.values)
    return _weighted_slope_energy(model, p, diff)


def rate_D_pointwise(model: MobilityModel, p, px, pxx, x):
    """Trajectory rate D from a local density state (p, grad p, lap p, x).

    Composes the model's scalar derivatives by the chain rule:
      D = phi'(p) * div(grad(Phi) b(p) p + grad(f(p)))
          + lap(theta) * f(p)/p - <grad(theta), grad(Phi)> b(p)
    with theta = phi(p) + Phi. Vectorized; valid where p > 0, non-finite
    where it is not.
    """
    p = np.asarray(p, dtype=float)
    px = np.asarray(px, dtype=float)
    pxx = np.asarray(pxx, dtype=float)
    x = np.asarray(x, dtype=float)
    d = model.derived
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        bp = model.b(p)
        bprime = model.b_prime(p)
        fp = model.f_prime(p)
        fpp = model.f_second(p)
        phi1 = d.phi_prime(p)
        phi2 = d.phi_second(p)
        pot_g = model.phi.grad(x)
        pot_l = model.phi.lap(x)
        # div(grad(Phi) b p + grad f) expanded by the chain rule
        div_term = (pot_l * bp * p + pot_g * (bprime * p + bp) * px
                    + fpp * px * px + fp * pxx)
        theta_x = phi1 * px + pot_g
        theta_lap = phi2 * px * px + phi1 * pxx + pot_l
        out = (phi1 * div_term + theta_lap * (model.f(p) / p)
               - theta_x * pot_g * bp)
    return out


def rate_D_field(model: MobilityModel, field: DensityField) -> np.ndarray:
    """Pointwise trajectory rate D on every cell of one snapshot.

    Density derivatives come from grid calculus; vacuum cells produce
    non-finite entries that the caller must mask.
    """
    grid = field.grid
    p = field.values
    return rate_D_pointwise(model, p, grid.gradient(p), grid.laplacian(p),
                            grid.cell_centers)


def rate_D_generic(model: MobilityModel, curve, t_index: int,
                   x_index: int) -> float:
    """Rate D at one snapshot cell of a density curve."""
    fields = curve.fields
    if not 0 <= t_index < len(fields):
        raise ValueError(f"snapshot index {t_index} out of range")
    field = fields[t_index]
    if not 0 <= x_index < field.grid.n_cells:
        raise ValueError(f"cell index {x_index} out of range")
    return float(rate_D_field(model, field)[x_index])


def rate_D_specialized(model: MobilityModel, p, px, pxx, x):
    """Closed-form rate D for the nonlinear builtin families.

    Hand-coded per-family algebra for the default quadratic well; agrees
    with rate_D_field/rate_D_generic wherever p > 0. Vectorized over
    ndarray inputs. Raises ValueError for families without a closed form
    here (linear, custom).
    """
    p = np.asarray(p, dtype=float)
    px = np.asarray(px, dtype=float)
    pxx = np.asarray(pxx, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(p <= 0.0):
        raise ValueError("the closed forms require strictly positive density")

    if model.family == "fermi-dirac":
        out = (np.log1p(-p) * (1.0 - 1.0 / p + x * px / p
                               - 2.0 * pxx / p**2 + 2.0 * px**2 / p**3)
               + px**2 / (p**2 * (1.0 - p))
               - x**2 * (1.0 - p) + 1.0)
    elif model.family == "bose":
        gam = model.params["gamma"]
        # antiderivative of gam*ln(s) - ln(1 + s^gam), recovered from eta
        big_a = gam * model.derived.eta(p) - p * np.log(2.0)
        lead = gam * np.log(p) - np.log1p(p**gam)
        out = (lead * (2.0 * pxx / (gam * p) + (1.0 + p**gam) / gam
                       + x * px * p**(gam - 1.0)
                       - 2.0 * px**2 / (gam * p**2))
               + big_a * (-2.0 * pxx / (gam * p**2)
                          - (1.0 + p**gam) / (gam * p)
                          - x * px * p**(gam - 2.0)
                          + 2.0 * px**2 / (gam * p**3))
               + px**2 / p**2 - p**(gam - 2.0) * px**2 / (1.0 + p**gam)
               + 1.0 - x**2 * (1.0 + p**gam))
    elif model.family == "power":
        al = model.params["alpha"]
        if al == 1.0:
            out = (np.log(p) * (1.0 + x * px / p + 2.0 * pxx / p**2
                                - 2.0 * px**2 / p**3)
                   + px**2 / p**3 + 1.0 - x**2 * p)
        else:
            out = (1.0 / (1.0 - al) + al * x * px / ((1.0 - al) * p)
                   + 2.0 * pxx / ((1.0 - al) * p**(al + 1.0))
                   - (al + 1.0) * px**2 / ((1.0 - al) * p**(al + 2.0))
                   + 1.0 - x**2 * p**al)
    else:
        raise ValueError(
            f"no closed-form rate for the {model.family!r} family")
    if out.ndim == 0:
        return float(out)
    return out


def wh_gradient(model: MobilityModel, p: DensityField) -> np.ndarray:
    """Metric gradient of the free energy: -div(h(p) grad(g(p) + Phi)).

    Mimetic face discretization with zero boundary fluxes, so the result
    is exactly zero at a discretized stationary profile and equals
    -fpe.rhs up to the spatial truncation error elsewhere.
    """
    grid = p.grid
    s = _slope_field(model, p)
    h_face = model.derived.h(0.5 * (p.values[:-1] + p.values[1:]))
    with np.errstate(invalid="ignore", over="ignore"):
        face = h_face * (s[1:] - s[:-1]) / grid.dx
    scale = float(np.max(np.abs(h_face))) if h_face.size else 0.0
    face[~np.isfinite(face)] = 0.0
    face[h_face < _WEIGHT_REL_FLOOR * scale] = 0.0
    flux = np.zeros(grid.n_cells + 1)
    flux[1:-1] = face
    return -grid.face_divergence(flux)


def log_gradient_energy(curve) -> float:
    """Time-integrated logarithmic-gradient energy of a curve.

    Trapezoid in time of int |grad p|^2 / p dx per snapshot; a finiteness
    diagnostic for the regularity of the evolution.
    """
    if len(curve.fields) < 2:
        raise ValueError("need at least two snapshots")
    grid = curve.grid
    vals = []
    for f in curve.fields:
        gp = grid.gradient(f.values)
        vals.append(grid.integrate(grid.masked_ratio(gp * gp, f.values)))
    q = np.array(vals)
    t = curve.times
    return float(np.sum(0.5 * (q[1:] + q[:-1]) * np.diff(t)))


def _gronwall_envelope(model: MobilityModel, phi0: float,
                       tau: np.ndarray) -> np.ndarray:
    """Moment bound phi0 + s*t + a*int_0^t (phi0 + s*u) e^{a(t-u)} du."""
    pot = model.phi
    if pot.growth_R > 0.0:
        xs = np.linspace(-pot.growth_R, pot.growth_R, 501)
        m_r = float(np.max(np.abs(xs * pot.grad(xs))))
    else:
        m_r = 0.0
    b0, b1 = model.b_bounds
    gamma1 = model.f_slope_bounds[1]
    s = 2.0 * m_r * b1 + 2.0 * model.dim * gamma1
    a = 2.0 * b0 * pot.growth_C
    out = np.empty_like(tau)
    for k, t in enumerate(tau):
        val = phi0 + s * t
        if a > 0.0 and t > 0.0:
            integral, _ = quad(lambda u: (phi0 + s * u) * np.exp(a * (t - u)),
                               0.0, t, limit=200)
            val += a * integral
        out[k] = val
    return out


def second_moment_check(model: MobilityModel, obj):
    """Second moments of a curve or ensemble against the Gronwall envelope.

    Returns (moments, bound, ok). The envelope uses the recorded potential
    growth constants, the mobility bounds, and the diffusion slope bound;
    its linear-in-time part is evaluated directly and the exponential
    memory term by quadrature.
    """
    if not hasattr(obj, "times"):
        raise ValueError("expected a density curve or a particle ensemble")
    times = np.asarray(obj.times, dtype=float)
    if hasattr(obj, "fields"):
        grid = obj.grid
        x2 = grid.cell_centers**2
        moments = np.array([grid.integrate(x2 * f.values) / f.mass
                            for f in obj.fields])
    elif hasattr(obj, "positions"):
        moments = np.mean(np.asarray(obj.positions, dtype=float)**2, axis=0)
    else:
        raise ValueError("expected a density curve or a particle ensemble")
    tau = times - times[0]
    bound = _gronwall_envelope(model, float(moments[0]), tau)
    ok = bool(np.all(moments <= bound + 1e-9 * np.maximum(1.0, np.abs(bound))))
    return moments, bound, ok


def _face_flux_scalar(model: MobilityModel, dx: float, x_face: float,
                      pl: float, pr: float) -> float:
    # mirror of the solver's hybrid face flux, specialized to one face
    pm = 0.5 * (pl + pr)
    u = float(-model.phi.grad(x_face)) * float(model.b(pm))
    fp = float(model.f_prime(pm))
    peclet = abs(u) * dx / (2.0 * max(fp, 1e-300))
    if peclet <= 1.0:
        p_face = pm
    else:
        p_face = pl if u > 0.0 else pr
    return u * p_face - (float(model.f(pr)) - float(model.f(pl))) / dx


def _zero_flux_neighbor(model: MobilityModel, dx: float, x_face: float,
                        known: float, cap: float, forward: bool) -> float:
    """Cell value that zeroes the scheme flux against a known neighbor."""
    if known <= 0.0:
        return 0.0
    if forward:
        G = lambda v: _face_flux_scalar(model, dx, x_face, known, v)
    else:
        G = lambda v: -_face_flux_scalar(model, dx, x_face, v, known)
    hi = min(max(known, 1e-300), cap)
    while G(hi) > 0.0:
        nxt = min(hi * 2.0, cap)
        if nxt == hi:
            raise ValueError(
                "zero-flux profile would cross the saturation level")
        hi = nxt
    if G(hi) == 0.0:
        return hi
    return float(brentq(G, 0.0, hi, xtol=1e-300, rtol=8.9e-16))


def _march_zero_flux(model: MobilityModel, grid: Grid1D, center_value: float,
                     i0: int, cap: float) -> np.ndarray:
    faces = grid.cell_faces
    p = np.zeros(grid.n_cells)
    p[i0] = center_value
    for i in range(i0, grid.n_cells - 1):
        p[i + 1] = _zero_flux_neighbor(model, grid.dx, float(faces[i + 1]),
                                       p[i], cap, forward=True)
    for i in range(i0, 0, -1):
        p[i - 1] = _zero_flux_neighbor(model, grid.dx, float(faces[i]),
                                       p[i], cap, forward=False)
    return p


def discretized_stationary(model: MobilityModel, grid: Grid1D,
                           mass: float) -> DensityField:
    """The solver's own zero-flux profile of the requested mass.

    Marches outward from the potential minimum, zeroing the discrete face
    flux exactly; the result is a machine-precision fixed point of the
    evolution scheme (unlike a sampled continuum profile, which drifts by
    the truncation error). Raises ValueError when no profile of that mass
    fits under the saturation level.
    """
    if mass <= 0.0 or not np.isfinite(mass):
        raise ValueError("mass must be positive and finite")
    i0 = int(np.argmin(model.phi.value(grid.cell_centers)))
    cap = model.saturation if model.saturation is not None else 1e12

    def total(log_s: float) -> float:
        vals = _march_zero_flux(model, grid, math.exp(log_s), i0, cap)
        return float(np.sum(vals) * grid.dx)

    lo = math.log(min(mass / (2.0 * grid.L), 0.5 * cap))
    while total(lo) > mass:
        lo -= 3.0
    hi = lo
    cap_log = math.log(cap * (1.0 - 1e-12))
    while total(hi) < mass:
        if hi >= cap_log:
            raise ValueError(
                "requested mass exceeds what fits under the saturation "
                "level on this grid")
        hi = min(hi + 3.0, cap_log)
    root = brentq(lambda r: total(r) - mass, lo, hi, rtol=8.9e-16)
    vals = _march_zero_flux(model, grid, math.exp(root), i0, cap)
    return DensityField(grid, vals, time=0.0)


def _time_slopes(t: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Centered differences at interior times, one-sided at the ends."""
    dF = np.empty_like(F)
    dF[1:-1] = (F[2:] - F[:-2]) / (t[2:] - t[:-2])
    dF[0] = (F[1] - F[0]) / (t[1] - t[0])
    dF[-1] = (F[-1] - F[-2]) / (t[-1] - t[-2])
    return dF


def energy_report(model: MobilityModel, curve, p_ref: DensityField | None = None,
                  metric_deriv: np.ndarray | None = None) -> EnergyReport:
    """Evaluate F, H_g, I, numeric dF/dt, and the identity residual.

    The reference for H_g defaults to the stationary profile of the same
    mass on the curve's grid. dFdt_numeric uses centered differences at
    interior snapshot times and one-sided differences at the ends;
    residual = dFdt_numeric + I vanishes along exact solutions.
    """
    t = curve.times
    if t.size < 3:
        raise ValueError("need at least three snapshots for centered slopes")
    if p_ref is None:
        p_ref = discretized_stationary(model, curve.grid,
                                       curve.fields[0].mass)
    f_ref = free_energy(model, p_ref)
    F = np.array([free_energy(model, f) for f in curve.fields])
    I_vals = np.array([dissipation(model, f) for f in curve.fields])
    dF = _time_slopes(t, F)
    return EnergyReport(
        times=t.copy(),
        F=F,
        H_g=F - f_ref,
        I=I_vals,
        dFdt_numeric=dF,
        residual=dF + I_vals,
        metric_deriv=None if metric_deriv is None
        else np.asarray(metric_deriv, dtype=float),
    )


def report_to_csv(report: EnergyReport, header_lines=()) -> str:
    """Serialize a report; column order matches the type declaration."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    cols = ["time", "free_energy", "relative_entropy", "dissipation",
            "dFdt_numeric", "residual"]
    arrays = [report.times, report.F, report.H_g, report.I,
              report.dFdt_numeric, report.residual]
    if report.metric_deriv is not None:
        cols.append("metric_deriv")
        arrays.append(report.metric_deriv)
    buf.write(",".join(cols) + "\n")
    for row in zip(*arrays):
        buf.write(",".join(fmt_float(v) for v in row) + "\n")
    return buf.getvalue()
