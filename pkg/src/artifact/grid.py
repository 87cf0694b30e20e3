"""Uniform 1-D cell-centered grids with discrete calculus and quadrature.

Cells cover [-L, L] with centers at -L + (i + 1/2) dx. Gradients and
Laplacians are second-order central stencils with one-sided second-order
closures at the boundary cells; face divergences consume n_cells + 1 face
values whose first and last entries must vanish (no flux through the
walls), which makes the midpoint quadrature of any divergence exactly zero.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Grid1D", "DensityField", "field_to_csv", "field_from_csv"]

# ratios p'/p use this relative floor: below it the quotient is defined as 0
RATIO_REL_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Uniform grid on [-L, L] with n_cells cells."""

    L: float
    n_cells: int
    dx: float = field(init=False)
    cell_centers: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.L <= 0 or self.n_cells < 4:
            raise ValueError("grid needs L > 0 and at least 4 cells")
        dx = 2.0 * self.L / self.n_cells
        centers = -self.L + (np.arange(self.n_cells) + 0.5) * dx
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "cell_centers", centers)
        self.cell_centers.setflags(write=False)

    @property
    def cell_faces(self) -> np.ndarray:
        return -self.L + np.arange(self.n_cells + 1) * self.dx

    def gradient(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n_cells,):
            raise ValueError("field size does not match the grid")
        out = np.empty_like(v)
        out[1:-1] = (v[2:] - v[:-2]) / (2.0 * self.dx)
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * self.dx)
        out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * self.dx)
        return out

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n_cells,):
            raise ValueError("field size does not match the grid")
        out = np.empty_like(v)
        dx2 = self.dx * self.dx
        out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx2
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / dx2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / dx2
        return out

    def face_divergence(self, face_flux: np.ndarray) -> np.ndarray:
        j = np.asarray(face_flux, dtype=float)
        if j.shape != (self.n_cells + 1,):
            raise ValueError("face vector needs n_cells + 1 entries")
        if j[0] != 0.0 or j[-1] != 0.0:
            raise ValueError("boundary faces must carry zero flux")
        return (j[1:] - j[:-1]) / self.dx

    def integrate(self, values: np.ndarray) -> float:
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n_cells,):
            raise ValueError("field size does not match the grid")
        return float(np.sum(v) * self.dx)

    def masked_ratio(self, numer: np.ndarray, denom: np.ndarray) -> np.ndarray:
        """numer/denom with the vacuum convention: 0 where denom is
        negligible relative to its own peak."""
        numer = np.asarray(numer, dtype=float)
        denom = np.asarray(denom, dtype=float)
        scale = float(np.max(np.abs(denom))) if denom.size else 0.0
        active = np.abs(denom) > RATIO_REL_FLOOR * scale
        out = np.zeros_like(numer)
        np.divide(numer, denom, out=out, where=active)
        return out


@dataclass(frozen=True, eq=False)
class DensityField:
    """Non-negative density values at cell centers, tagged with a time."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_cells,):
            raise ValueError("field size does not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        if np.any(v < 0.0):
            raise ValueError("density values must be non-negative")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.values)

    def is_probability(self, tol: float = 1e-8) -> bool:
        return abs(self.mass - 1.0) <= tol

    def with_values(self, values: np.ndarray, time: float | None = None) -> "DensityField":
        return DensityField(self.grid, values,
                            self.time if time is None else time)


def fmt_float(v) -> str:
    """Shortest decimal string that round-trips the value exactly."""
    return repr(float(v))


def field_to_csv(f: DensityField) -> str:
    buf = io.StringIO()
    buf.write(f"# time={fmt_float(f.time)} L={fmt_float(f.grid.L)} "
              f"n_cells={f.grid.n_cells}\n")
    buf.write("x,value\n")
    for x, v in zip(f.grid.cell_centers, f.values):
        buf.write(f"{fmt_float(x)},{fmt_float(v)}\n")
    return buf.getvalue()


def field_from_csv(text: str) -> DensityField:
    lines = text.strip().splitlines()
    header = lines[0].lstrip("# ").split()
    meta = dict(kv.split("=") for kv in header)
    grid = Grid1D(L=float(meta["L"]), n_cells=int(meta["n_cells"]))
    rows = [line.split(",") for line in lines[2:]]
    values = np.array([float(r[1]) for r in rows])
    return DensityField(grid, values, time=float(meta["time"]))
