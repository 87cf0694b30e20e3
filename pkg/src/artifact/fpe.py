"""Explicit finite-volume solver for the mobility drift-diffusion equation

    dp/dt = div(grad(potential) * b(p) * p) + lap(f(p))

on a no-flux interval. The face flux combines a mobility-weighted advective
part with central nonlinear diffusion; faces whose advective cell Peclet
number exceeds 1 fall back to donor-cell upwinding so the update stays
monotone in the far tails. Mass is conserved to roundoff by construction
and positivity holds under the CFL bound enforced by stable_dt.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from artifact import NumericalError
from artifact.grid import DensityField, Grid1D, field_to_csv, fmt_float
from artifact.models import MobilityModel

__all__ = ["FpeState", "DensityCurve", "rhs", "stable_dt", "evolve",
           "curve_to_dir"]


@dataclass(frozen=True, eq=False)
class FpeState:
    model: MobilityModel
    field: DensityField
    step_count: int = 0
    cfl_safety: float = 0.45


@dataclass(frozen=True, eq=False)
class DensityCurve:
    """Snapshots of one evolution, on one shared grid."""

    times: np.ndarray
    fields: tuple[DensityField, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(self.fields) != t.size or t.size == 0:
            raise ValueError("times and snapshots must align")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("snapshot times must increase strictly")
        g0 = self.fields[0].grid
        if any(f.grid is not g0 and (f.grid.L != g0.L or f.grid.n_cells != g0.n_cells)
               for f in self.fields):
            raise ValueError("snapshots must share one grid")
        object.__setattr__(self, "times", t)
        t.setflags(write=False)

    @property
    def grid(self) -> Grid1D:
        return self.fields[0].grid

    def bracket(self, t: float) -> tuple[int, int, float]:
        """Indices (k0, k1) and weight w with t = (1-w) t_{k0} + w t_{k1}."""
        t = float(t)
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"time {t} outside the recorded range")
        k1 = int(np.searchsorted(ts, t, side="left"))
        if k1 == 0:
            return 0, 0, 0.0
        if k1 >= ts.size:
            return ts.size - 1, ts.size - 1, 0.0
        k0 = k1 - 1
        w = (t - ts[k0]) / (ts[k1] - ts[k0])
        return k0, k1, float(w)


def _face_flux(model: MobilityModel, grid: Grid1D, p: np.ndarray,
               drift_faces: np.ndarray) -> np.ndarray:
    """Fluxes at the n_cells - 1 interior faces."""
    p_lo, p_hi = p[:-1], p[1:]
    p_mid = 0.5 * (p_lo + p_hi)
    u = drift_faces * model.b(p_mid)
    fp = model.f_prime(p_mid)
    peclet = np.abs(u) * grid.dx / (2.0 * np.maximum(fp, 1e-300))
    upwind = np.where(u > 0.0, p_lo, p_hi)
    p_face = np.where(peclet <= 1.0, p_mid, upwind)
    return u * p_face - (model.f(p_hi) - model.f(p_lo)) / grid.dx


def rhs(model: MobilityModel, field: DensityField) -> np.ndarray:
    """Discrete right-hand side of the evolution at one field.

    Returns the cellwise time derivative. Raises NumericalError if the
    flux assembly produces non-finite values.
    """
    grid = field.grid
    x_face = grid.cell_faces[1:-1]
    drift_faces = -model.phi.grad(x_face)
    flux = np.zeros(grid.n_cells + 1)
    flux[1:-1] = _face_flux(model, grid, field.values, drift_faces)
    if not np.all(np.isfinite(flux)):
        raise NumericalError("non-finite flux: time step too large or "
                             "density out of the model's range")
    return -grid.face_divergence(flux)


def stable_dt(model: MobilityModel, field: DensityField,
              cfl_safety: float = 0.45) -> float:
    """Largest safe explicit step: diffusive and advective CFL bounds."""
    if not 0.0 < cfl_safety <= 1.0:
        raise ValueError("cfl_safety must lie in (0, 1]")
    grid = field.grid
    p = field.values
    fp_max = float(np.max(model.f_prime(p)))
    diff_limit = grid.dx**2 / (2.0 * max(fp_max, 1e-300))
    x_face = grid.cell_faces[1:-1]
    p_mid = 0.5 * (p[:-1] + p[1:])
    u_max = float(np.max(np.abs(model.phi.grad(x_face) * model.b(p_mid))))
    adv_limit = grid.dx / u_max if u_max > 0.0 else np.inf
    return cfl_safety * min(diff_limit, adv_limit)


def evolve(model: MobilityModel, init: DensityField, t_end: float,
           snapshot_times=None, cfl_safety: float = 0.45,
           max_steps: int = 200_000_000) -> DensityCurve:
    """March the density from init.time to t_end with adaptive steps.

    Steps land exactly on every requested snapshot time. Each accepted
    step conserves mass to roundoff; a genuinely negative cell value
    aborts with NumericalError (negative values within one roundoff ulp
    of zero are flushed to zero).
    """
    t0 = init.time
    if t_end <= t0:
        raise ValueError("t_end must exceed the initial time")
    if snapshot_times is None:
        targets = np.array([t_end])
    else:
        targets = np.unique(np.asarray(snapshot_times, dtype=float))
        if targets.size and (targets[0] < t0 - 1e-12 or targets[-1] > t_end + 1e-12):
            raise ValueError("snapshot times must lie inside [t0, t_end]")
        targets = targets[targets > t0 + 1e-14]
        if targets.size == 0 or abs(targets[-1] - t_end) > 1e-12:
            targets = np.append(targets, t_end)

    grid = init.grid
    x_face = grid.cell_faces[1:-1]
    drift_faces = -model.phi.grad(x_face)
    p = init.values.copy()
    t = t0
    steps = 0
    out_times = [t0]
    out_fields = [init]
    flux = np.zeros(grid.n_cells + 1)
    floor = -1e-13

    for target in targets:
        while t < target - 1e-14:
            fp_max = float(np.max(model.f_prime(p)))
            diff_limit = grid.dx**2 / (2.0 * max(fp_max, 1e-300))
            u_max = float(np.max(np.abs(drift_faces * model.b(0.5 * (p[:-1] + p[1:])))))
            adv_limit = grid.dx / u_max if u_max > 0.0 else np.inf
            dt = min(cfl_safety * min(diff_limit, adv_limit), target - t)
            flux[1:-1] = _face_flux(model, grid, p, drift_faces)
            if not np.all(np.isfinite(flux)):
                raise NumericalError(
                    f"non-finite flux at t={t:.6g} after {steps} steps")
            p = p - (dt / grid.dx) * (flux[1:] - flux[:-1])
            t += dt
            steps += 1
            pmin = float(np.min(p))
            if pmin < floor * max(1.0, float(np.max(p))):
                i = int(np.argmin(p))
                raise NumericalError(
                    f"positivity lost at t={t:.6g}, cell {i} "
                    f"(x={grid.cell_centers[i]:.4g}, value={pmin:.3e})")
            if pmin < 0.0:
                np.maximum(p, 0.0, out=p)
            if steps > max_steps:
                raise NumericalError("step budget exhausted")
        t = target
        out_times.append(t)
        out_fields.append(DensityField(grid, p.copy(), time=t))

    return DensityCurve(np.array(out_times), tuple(out_fields))


def curve_to_dir(curve: DensityCurve, out_dir: str,
                 header_extra: str = "") -> None:
    """Write snapshots as CSV files plus an index listing the times."""
    os.makedirs(out_dir, exist_ok=True)
    lines = ["snapshot,time"]
    for k, f in enumerate(curve.fields):
        name = f"snapshot_{k:04d}.csv"
        with open(os.path.join(out_dir, name), "w") as fh:
            if header_extra:
                fh.write(f"# {header_extra}\n")
            fh.write(field_to_csv(f))
        lines.append(f"{name},{fmt_float(f.time)}")
    with open(os.path.join(out_dir, "index.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
