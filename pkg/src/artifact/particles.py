"""Monte-Carlo layer: the mobility SDE, per-path energies, branched rates.

Trajectories follow dX = -grad(Phi)(X) b(p(t,X)) dt + sqrt(2 f(p)/p) dW,
with the density p supplied either by an already-solved grid curve
(the default, so the nonlinearity is closed deterministically) or by a
Gaussian kernel estimate over the evolving cloud itself.

Every trajectory owns a counter-based random stream derived from
(master_seed, trajectory index, branch index), so reruns are bit-identical
no matter how the work is batched. Stream layout per trajectory: one
uniform draw for the initial position, then one standard normal per step.
Branch index 0 is the main path; conditional branches use indices >= 1.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from artifact import NumericalError
from artifact.fpe import DensityCurve
from artifact.functionals import rate_D_pointwise
from artifact.grid import DensityField, fmt_float
from artifact.models import MobilityModel

__all__ = [
    "ParticleEnsemble",
    "TrajectoryEnergyPath",
    "KdeConfig",
    "KdeDensity",
    "ConditionalRates",
    "simulate",
    "kde_density",
    "trajectory_energy",
    "martingale_test",
    "conditional_rate_estimate",
    "ensemble_to_csv",
    "energy_paths_to_csv",
]

_DENSITY_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Positions of n trajectories at every step time."""

    n: int
    times: np.ndarray
    positions: np.ndarray
    master_seed: int
    density_mode: str
    stream_ids: np.ndarray

    def __post_init__(self):
        if self.positions.shape != (self.n, self.times.size):
            raise ValueError("positions must be n x len(times)")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.density_mode not in ("PdeCoupled", "Kde"):
            raise ValueError(f"unknown density mode {self.density_mode!r}")


@dataclass(frozen=True, eq=False)
class TrajectoryEnergyPath:
    """Energy bookkeeping along one trajectory.

    martingale_residual = theta - theta[0] - D_integral by construction,
    so its first entry is exactly zero.
    """

    times: np.ndarray
    positions: np.ndarray
    theta: np.ndarray
    D_integral: np.ndarray
    martingale_residual: np.ndarray


@dataclass(frozen=True)
class KdeConfig:
    """Self-consistent particle mode: density estimated from the cloud."""

    init: DensityField
    bandwidth_rule: str | float = "silverman"


@dataclass(frozen=True, eq=False)
class KdeDensity:
    """Gaussian-kernel density with analytic first two derivatives."""

    points: np.ndarray
    bandwidth: float

    def _z(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., None] - self.points) / self.bandwidth

    def density(self, x):
        z = self._z(x)
        k = np.exp(-0.5 * z * z)
        norm = self.points.size * self.bandwidth * np.sqrt(2.0 * np.pi)
        return np.sum(k, axis=-1) / norm

    def grad(self, x):
        z = self._z(x)
        k = np.exp(-0.5 * z * z)
        norm = self.points.size * self.bandwidth**2 * np.sqrt(2.0 * np.pi)
        return np.sum(-z * k, axis=-1) / norm

    def lap(self, x):
        z = self._z(x)
        k = np.exp(-0.5 * z * z)
        norm = self.points.size * self.bandwidth**3 * np.sqrt(2.0 * np.pi)
        return np.sum((z * z - 1.0) * k, axis=-1) / norm


@dataclass(frozen=True, eq=False)
class ConditionalRates:
    """Branched Monte-Carlo estimates of the conditional energy slope."""

    path_indices: np.ndarray
    horizons: np.ndarray
    rates: np.ndarray         # paths x horizons
    std_errors: np.ndarray    # paths x horizons
    extrapolated: np.ndarray  # paths
    error_bars: np.ndarray    # paths
    D_reference: np.ndarray   # paths


def _trajectory_generator(master_seed: int, traj: int, branch: int):
    seq = np.random.SeedSequence(master_seed, spawn_key=(traj, branch))
    return np.random.Generator(np.random.Philox(seq))


def _inverse_cdf_setup(init: DensityField):
    grid = init.grid
    faces = grid.cell_faces
    cdf = np.zeros(grid.n_cells + 1)
    np.cumsum(init.values * grid.dx, out=cdf[1:])
    total = cdf[-1]
    if total <= 0.0:
        raise ValueError("initial density carries no mass")
    return cdf / total, faces


class _CurveLookup:
    """Snapshot caches with linear interpolation in space and time."""

    def __init__(self, curve: DensityCurve, derivatives: bool = False):
        self.curve = curve
        grid = curve.grid
        self.centers = grid.cell_centers
        self.values = np.stack([f.values for f in curve.fields])
        if derivatives:
            self.grads = np.stack([grid.gradient(f.values)
                                   for f in curve.fields])
            self.laps = np.stack([grid.laplacian(f.values)
                                  for f in curve.fields])

    def _lerp(self, rows: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
        k0, k1, w = self.curve.bracket(t)
        lo = np.interp(x, self.centers, rows[k0])
        if k1 == k0 or w == 0.0:
            return lo
        return (1.0 - w) * lo + w * np.interp(x, self.centers, rows[k1])

    def density(self, t: float, x: np.ndarray) -> np.ndarray:
        return self._lerp(self.values, t, x)

    def state(self, t: float, x: np.ndarray):
        return (self._lerp(self.values, t, x),
                self._lerp(self.grads, t, x),
                self._lerp(self.laps, t, x))


def _theta_values(model: MobilityModel, p: np.ndarray,
                  x: np.ndarray) -> np.ndarray:
    """theta = phi(p) + Phi(x), with the density floored away from 0."""
    safe = np.maximum(p, _DENSITY_FLOOR)
    return model.derived.phi_small(safe) + model.phi.value(x)


def _noise_block(master_seed: int, n: int, n_steps: int):
    """Per-trajectory initial uniforms and normal increments."""
    u0 = np.empty(n)
    normals = np.empty((n, n_steps))
    for i in range(n):
        gen = _trajectory_generator(master_seed, i, 0)
        u0[i] = gen.uniform()
        normals[i] = gen.standard_normal(n_steps)
    return u0, normals


def _silverman_bandwidth(points: np.ndarray, rule) -> float:
    if isinstance(rule, (int, float)):
        if rule <= 0.0:
            raise ValueError("bandwidth must be positive")
        return float(rule)
    if rule != "silverman":
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    sigma = float(np.std(points, ddof=1))
    if sigma <= 0.0:
        raise ValueError("degenerate cloud: zero sample variance")
    return 1.06 * sigma * points.size ** (-0.2)


def kde_density(positions: np.ndarray, bandwidth_rule="silverman") -> KdeDensity:
    """Gaussian KDE over a sample cloud, with gradient and Laplacian."""
    pts = np.asarray(positions, dtype=float).ravel()
    if pts.size < 2:
        raise ValueError("need at least two sample points")
    return KdeDensity(points=pts.copy(),
                      bandwidth=_silverman_bandwidth(pts, bandwidth_rule))


def _em_drift_diffusion(model: MobilityModel, p_hat: np.ndarray,
                        x: np.ndarray):
    safe = np.maximum(p_hat, _DENSITY_FLOOR)
    drift = -model.phi.grad(x) * model.b(p_hat)
    sigma = np.sqrt(2.0 * model.f(safe) / safe)
    return drift, sigma


def simulate(model: MobilityModel, density_provider, n: int, t_end: float,
             dt: float, master_seed: int) -> ParticleEnsemble:
    """Euler-Maruyama ensemble of the mobility SDE.

    density_provider is either a DensityCurve covering [0, t_end]
    (PdeCoupled mode) or a KdeConfig (self-consistent Kde mode). Initial
    positions are drawn by inverse-CDF from the provider's initial
    density, one uniform per trajectory from its own stream.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    if dt <= 0.0 or t_end <= 0.0:
        raise ValueError("dt and t_end must be positive")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be an integer number of steps")

    if isinstance(density_provider, DensityCurve):
        mode = "PdeCoupled"
        curve = density_provider
        if curve.times[0] > 1e-12 or curve.times[-1] < t_end - 1e-9:
            raise ValueError("density curve must cover [0, t_end]")
        lookup = _CurveLookup(curve)
        init = curve.fields[0]
    elif isinstance(density_provider, KdeConfig):
        mode = "Kde"
        lookup = None
        init = density_provider.init
    else:
        raise ValueError("density_provider must be a DensityCurve or KdeConfig")

    cdf, faces = _inverse_cdf_setup(init)
    u0, normals = _noise_block(master_seed, n, n_steps)
    x = np.interp(u0, cdf, faces)
    out = np.empty((n, n_steps + 1))
    out[:, 0] = x
    root_dt = np.sqrt(dt)
    for k in range(n_steps):
        t = k * dt
        if mode == "PdeCoupled":
            p_hat = lookup.density(t, x)
        else:
            kde = kde_density(x, density_provider.bandwidth_rule)
            p_hat = kde.density(x)
            if np.any(p_hat <= 0.0):
                raise NumericalError(
                    "kernel estimate underflowed to zero at a particle; "
                    "bandwidth too small for this cloud")
        drift, sigma = _em_drift_diffusion(model, p_hat, x)
        x = x + drift * dt + sigma * root_dt * normals[:, k]
        if not np.all(np.isfinite(x)):
            bad = int(np.argmin(np.isfinite(x)))
            raise NumericalError(
                f"trajectory {bad} left the finite range at t={t + dt:.6g}")
        out[:, k + 1] = x
    times = dt * np.arange(n_steps + 1)
    ids = np.zeros((n, 2), dtype=np.int64)
    ids[:, 0] = np.arange(n)
    return ParticleEnsemble(n=n, times=times, positions=out,
                            master_seed=int(master_seed), density_mode=mode,
                            stream_ids=ids)


def trajectory_energy(ensemble: ParticleEnsemble, model: MobilityModel,
                      density_provider, record_every: int = 1):
    """Per-trajectory energy paths theta, cumulative D, and residual.

    The running integral of D is accumulated by the trapezoid rule at the
    full step resolution; theta and the integral are recorded every
    record_every steps (first and last step always included). The density
    and its derivatives come from the grid curve.
    """
    if not isinstance(density_provider, DensityCurve):
        raise ValueError("trajectory energies need a DensityCurve provider")
    curve = density_provider
    times = ensemble.times
    if curve.times[0] > times[0] + 1e-12 or curve.times[-1] < times[-1] - 1e-9:
        raise ValueError("density curve must cover the ensemble times")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    lookup = _CurveLookup(curve, derivatives=True)
    n, n_times = ensemble.positions.shape
    rec = list(range(0, n_times, record_every))
    if rec[-1] != n_times - 1:
        rec.append(n_times - 1)
    rec_pos = {k: j for j, k in enumerate(rec)}

    theta_rec = np.empty((n, len(rec)))
    cum_rec = np.empty((n, len(rec)))
    pos_rec = np.empty((n, len(rec)))
    cum = np.zeros(n)
    prev_d = None
    for k in range(n_times):
        t = float(times[k])
        x = ensemble.positions[:, k]
        p, px, pxx = lookup.state(t, x)
        theta_k = _theta_values(model, p, x)
        d_k = rate_D_pointwise(model, np.maximum(p, _DENSITY_FLOOR), px, pxx, x)
        if k > 0:
            cum = cum + 0.5 * (prev_d + d_k) * (times[k] - times[k - 1])
        prev_d = d_k
        if k in rec_pos:
            j = rec_pos[k]
            theta_rec[:, j] = theta_k
            cum_rec[:, j] = cum
            pos_rec[:, j] = x
    rec_times = times[rec]
    paths = []
    for i in range(n):
        theta_i = theta_rec[i]
        cum_i = cum_rec[i]
        paths.append(TrajectoryEnergyPath(
            times=rec_times.copy(),
            positions=pos_rec[i].copy(),
            theta=theta_i.copy(),
            D_integral=cum_i.copy(),
            martingale_residual=theta_i - theta_i[0] - cum_i,
        ))
    return paths


def martingale_test(paths):
    """Zero-mean test of the residual theta - theta0 - int D ds.

    Returns (mean_residual, variance, ok): at every recorded time the
    ensemble mean must stay within four standard errors of zero.
    """
    if len(paths) < 100:
        raise ValueError("need at least 100 paths for the zero-mean test")
    res = np.stack([p.martingale_residual for p in paths])
    mean = res.mean(axis=0)
    var = res.var(axis=0, ddof=1)
    se = np.sqrt(var / res.shape[0])
    ok = bool(np.all(np.abs(mean) <= 4.0 * se + 1e-12))
    return mean, var, ok


def conditional_rate_estimate(ensemble: ParticleEnsemble,
                              model: MobilityModel, density_provider,
                              t0: float, horizons, n_branches: int = 256,
                              path_indices=None) -> ConditionalRates:
    """Branched estimate of the conditional energy slope at (t0, X(t0)).

    From each selected trajectory's state at t0, n_branches sub-paths run
    forward with fresh noise streams (branch ids >= 1); the mean increment
    of theta over each horizon estimates the conditional slope, and a
    two-point extrapolation of the smallest horizons estimates its limit,
    to be compared against the pointwise rate D at (t0, X(t0)). Error bars
    combine three standard errors of the extrapolation with the spread
    between the two smallest-horizon rates.
    """
    if not isinstance(density_provider, DensityCurve):
        raise ValueError("conditional rates need a DensityCurve provider")
    if n_branches < 30:
        raise ValueError("insufficient branches: need at least 30")
    horizons = np.asarray(horizons, dtype=float)
    if horizons.size < 2 or np.any(np.diff(horizons) >= 0.0):
        raise ValueError("need at least two strictly decreasing horizons")
    times = ensemble.times
    dt = float(times[1] - times[0])
    k0 = int(round((t0 - times[0]) / dt))
    if not 0 <= k0 < times.size or abs(times[k0] - t0) > 1e-9:
        raise ValueError("t0 must coincide with an ensemble step time")
    steps = np.round(horizons / dt).astype(int)
    if np.any(np.abs(steps * dt - horizons) > 1e-9) or np.any(steps < 1):
        raise ValueError("horizons must be positive multiples of the step")
    if t0 + horizons[0] > times[-1] + 1e-9:
        raise ValueError("largest horizon runs past the ensemble end")
    if density_provider.times[-1] < t0 + horizons[0] - 1e-9:
        raise ValueError("density curve must cover t0 + max horizon")

    if path_indices is None:
        path_indices = np.arange(ensemble.n)
    path_indices = np.asarray(path_indices, dtype=int)
    lookup = _CurveLookup(density_provider, derivatives=True)
    n_max = int(steps[0])
    checkpoints = {int(s): j for j, s in enumerate(steps)}
    root_dt = np.sqrt(dt)

    rates = np.empty((path_indices.size, horizons.size))
    ses = np.empty_like(rates)
    d_ref = np.empty(path_indices.size)
    for row, i in enumerate(path_indices):
        x0 = float(ensemble.positions[i, k0])
        p0, px0, pxx0 = lookup.state(t0, np.array([x0]))
        theta0 = float(_theta_values(model, p0, np.array([x0]))[0])
        d_ref[row] = float(rate_D_pointwise(
            model, max(float(p0[0]), _DENSITY_FLOOR), float(px0[0]),
            float(pxx0[0]), x0))
        noise = np.empty((n_branches, n_max))
        for b in range(n_branches):
            gen = _trajectory_generator(ensemble.master_seed, int(i), b + 1)
            noise[b] = gen.standard_normal(n_max)
        y = np.full(n_branches, x0)
        for k in range(n_max):
            t = t0 + k * dt
            p_hat = lookup.density(t, y)
            drift, sigma = _em_drift_diffusion(model, p_hat, y)
            y = y + drift * dt + sigma * root_dt * noise[:, k]
            j = checkpoints.get(k + 1)
            if j is not None:
                th = _theta_values(model, lookup.density(t0 + (k + 1) * dt, y), y)
                incr = (th - theta0) / horizons[j]
                rates[row, j] = incr.mean()
                ses[row, j] = incr.std(ddof=1) / np.sqrt(n_branches)

    h1, h0 = horizons[-2], horizons[-1]
    r1, r0 = rates[:, -2], rates[:, -1]
    extrap = (h1 * r0 - h0 * r1) / (h1 - h0)
    se_extrap = np.sqrt((h1 * ses[:, -1])**2 + (h0 * ses[:, -2])**2) / (h1 - h0)
    bars = 3.0 * se_extrap + np.abs(r1 - r0)
    return ConditionalRates(
        path_indices=path_indices.copy(),
        horizons=horizons.copy(),
        rates=rates,
        std_errors=ses,
        extrapolated=extrap,
        error_bars=bars,
        D_reference=d_ref,
    )


def ensemble_to_csv(ensemble: ParticleEnsemble, header_lines=()) -> str:
    """Long-format positions: path_id, t, x."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(f"# master_seed={ensemble.master_seed} "
              f"mode={ensemble.density_mode}\n")
    buf.write("path_id,t,x\n")
    for i in range(ensemble.n):
        for t, x in zip(ensemble.times, ensemble.positions[i]):
            buf.write(f"{i},{fmt_float(t)},{fmt_float(x)}\n")
    return buf.getvalue()


def energy_paths_to_csv(paths, header_lines=()) -> str:
    """Long-format energy paths: path_id, t, x, theta, D_integral, residual."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write("path_id,t,x,theta,D_integral,residual\n")
    for i, p in enumerate(paths):
        for t, x, th, di, r in zip(p.times, p.positions, p.theta,
                                   p.D_integral, p.martingale_residual):
            buf.write(",".join([str(i), fmt_float(t), fmt_float(x),
                                fmt_float(th), fmt_float(di),
                                fmt_float(r)]) + "\n")
    return buf.getvalue()
