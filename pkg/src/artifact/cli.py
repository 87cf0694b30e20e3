"""Command-line interface: experiment orchestration and artifact emission.

Subcommands operate on a JSON configuration (defaults, overridable with
--config and repeated --set key.path=value flags) and write delimited
output plus rendered figures into the output directory. Every emitted
file carries a header recording the tool version, a hash of the resolved
configuration, and the master seed where randomness is involved.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from artifact import NumericalError, __version__, fpe, transport
from artifact.functionals import (dissipation, discretized_stationary,
                                  energy_report, rate_D_field,
                                  rate_D_specialized, report_to_csv,
                                  second_moment_check, wh_gradient,
                                  wh_gradient_norm2)
from artifact.grid import DensityField, Grid1D, fmt_float
from artifact.models import MobilityModel, build_model
from artifact.particles import (KdeConfig, conditional_rate_estimate,
                                energy_paths_to_csv, ensemble_to_csv,
                                martingale_test, simulate, trajectory_energy)
from artifact.perturbation import (BumpField, slope_comparison,
                                   slope_report_to_csv)

DEFAULT_CONFIG = {
    "model": {"family": "linear", "gamma": 1.0, "alpha": 1.0},
    "grid": {"L": 12.0, "n_cells": 1200},
    "initial": {"kind": "gaussian", "mean": 2.0, "variance": 1.0,
                "mass": 1.0, "level": -0.6, "wiggle": 0.5,
                "wavenumber": 1.0},
    "time": {"t_end": 2.0, "snapshots": 41},
    "particles": {"n": 500, "dt": 0.002, "master_seed": 12345,
                  "mode": "PdeCoupled", "record_every": 10},
    "transport": {"n_time": 12, "primal_tol": 1e-6,
                  "constraint_tol": 1e-8, "max_iters": 4000},
    "metric": {"t0": 0.25, "deltas": [0.04, 0.02]},
    "wh": {"p0": {"kind": "gaussian", "mean": 0.0, "variance": 1.0,
                  "mass": 1.0},
           "p1": {"kind": "gaussian", "mean": 2.0, "variance": 1.0,
                  "mass": 1.0}},
    "output_dir": "out",
}

# the saturating family needs an initial density sandwiched between two
# stationary envelopes; the mean-20 Gaussian start matches the crowd-free
# families' far-from-equilibrium experiments
FIG_PRESETS = {
    "fig1": {"model": {"family": "fermi-dirac"},
             "initial": {"kind": "sandwiched"},
             "style": "trajectories"},
    "fig2": {"model": {"family": "fermi-dirac"},
             "initial": {"kind": "sandwiched"},
             "style": "mean-fit"},
    "fig3": {"model": {"family": "bose", "gamma": 1.0},
             "grid": {"L": 30.0, "n_cells": 3000},
             "initial": {"kind": "gaussian", "mean": 20.0, "variance": 1.0},
             "time": {"t_end": 3.0, "snapshots": 61},
             "style": "trajectories"},
    "fig4": {"model": {"family": "bose", "gamma": 1.0},
             "grid": {"L": 30.0, "n_cells": 3000},
             "initial": {"kind": "gaussian", "mean": 20.0, "variance": 1.0},
             "time": {"t_end": 3.0, "snapshots": 61},
             "style": "mean-fit"},
    "fig5": {"model": {"family": "bose", "gamma": 3.0},
             "grid": {"L": 30.0, "n_cells": 3000},
             "initial": {"kind": "gaussian", "mean": 20.0, "variance": 1.0},
             "time": {"t_end": 3.0, "snapshots": 61},
             "style": "trajectories"},
    "fig6": {"model": {"family": "bose", "gamma": 3.0},
             "grid": {"L": 30.0, "n_cells": 3000},
             "initial": {"kind": "gaussian", "mean": 20.0, "variance": 1.0},
             "time": {"t_end": 3.0, "snapshots": 61},
             "style": "mean-fit"},
    "fig7": {"model": {"family": "power", "alpha": 1.0},
             "grid": {"L": 30.0, "n_cells": 3000},
             "initial": {"kind": "gaussian", "mean": 20.0, "variance": 1.0},
             "time": {"t_end": 10.0, "snapshots": 101},
             "particles": {"record_every": 25},
             "style": "trajectories"},
    "fig8": {"model": {"family": "power", "alpha": 2.0},
             "grid": {"L": 30.0, "n_cells": 3000},
             "initial": {"kind": "gaussian", "mean": 20.0, "variance": 1.0},
             "time": {"t_end": 10.0, "snapshots": 101},
             "particles": {"record_every": 25},
             "style": "trajectories"},
}


# ---------------------------------------------------------------- config

def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def _apply_set(cfg: dict, expr: str) -> None:
    if "=" not in expr:
        raise ValueError(f"--set expects KEY=VALUE, got {expr!r}")
    path, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.split(".")
    node = cfg
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


def resolve_config(config_path: str | None, sets, preset: dict | None = None,
                   output_dir: str | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if preset:
        cfg = _deep_merge(cfg, preset)
    if config_path:
        with open(config_path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        cfg = _deep_merge(cfg, loaded)
    cfg = json.loads(json.dumps(cfg))
    for expr in sets or ():
        _apply_set(cfg, expr)
    if output_dir:
        cfg["output_dir"] = output_dir
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _header(cfg: dict, seeded: bool = False):
    lines = [f"version={__version__}", f"config_hash={config_hash(cfg)}"]
    if seeded:
        lines.append(f"master_seed={cfg['particles']['master_seed']}")
    return lines


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _emit_config(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------- constructors

def build_model_from_config(cfg: dict) -> MobilityModel:
    spec = cfg["model"]
    family = spec["family"]
    if family == "bose":
        return build_model("bose", {"gamma": float(spec.get("gamma", 1.0))})
    if family == "power":
        return build_model("power", {"alpha": float(spec.get("alpha", 1.0))})
    if family in ("linear", "fermi-dirac"):
        return build_model(family)
    raise ValueError(f"config model family {family!r} is not available "
                     "from the command line")


def build_grid_from_config(cfg: dict) -> Grid1D:
    g = cfg["grid"]
    return Grid1D(L=float(g["L"]), n_cells=int(g["n_cells"]))


def build_initial(spec: dict, grid: Grid1D,
                  model: MobilityModel) -> DensityField:
    kind = spec.get("kind", "gaussian")
    x = grid.cell_centers
    if kind == "gaussian":
        mean = float(spec.get("mean", 0.0))
        var = float(spec.get("variance", 1.0))
        mass = float(spec.get("mass", 1.0))
        if var <= 0.0 or mass <= 0.0:
            raise ValueError("gaussian initial needs positive variance "
                             "and mass")
        vals = np.exp(-((x - mean) ** 2) / (2.0 * var))
        vals *= mass / (np.sum(vals) * grid.dx)
        if model.saturation is not None and vals.max() >= model.saturation:
            raise ValueError("gaussian initial exceeds the saturation "
                             "level; lower the mass or widen the variance")
        return DensityField(grid, vals, time=0.0)
    if kind == "stationary":
        mass = float(spec.get("mass", 1.0))
        return discretized_stationary(model, grid, mass)
    if kind == "sandwiched":
        level = float(spec.get("level", -0.6))
        wiggle = float(spec.get("wiggle", 0.5))
        wavenumber = float(spec.get("wavenumber", 1.0))
        # spatially wobbling level: the result lies between the stationary
        # envelopes at levels level -/+ wiggle for every family
        arg = level + wiggle * np.cos(wavenumber * x) - model.phi.value(x)
        top = model.derived.g_inv_max
        if np.any(arg >= top):
            raise ValueError("sandwiched level too high for this family")
        vals = model.derived.g_inv(arg)
        return DensityField(grid, vals, time=0.0)
    raise ValueError(f"unknown initial density kind {spec.get('kind')!r}")


def _snapshot_times(cfg: dict) -> np.ndarray:
    t_end = float(cfg["time"]["t_end"])
    count = int(cfg["time"]["snapshots"])
    if t_end <= 0.0 or count < 2:
        raise ValueError("time.t_end must be positive and time.snapshots "
                         "at least 2")
    return np.linspace(0.0, t_end, count)


def _evolve_from_config(cfg: dict, extra_times=()):
    model = build_model_from_config(cfg)
    grid = build_grid_from_config(cfg)
    init = build_initial(cfg["initial"], grid, model)
    snaps = np.union1d(_snapshot_times(cfg), np.asarray(extra_times))
    curve = fpe.evolve(model, init, float(snaps[-1]), snapshot_times=snaps)
    return model, grid, init, curve


# ---------------------------------------------------------- subcommands

def _cmd_fpe_solve(cfg: dict) -> int:
    out = cfg["output_dir"]
    _emit_config(cfg, out)
    model, _, init, curve = _evolve_from_config(cfg)
    fpe.curve_to_dir(curve, os.path.join(out, "curve"),
                     header_extra=" ".join(_header(cfg)))
    drift = max(float(np.max(np.abs(f.values - init.values)))
                for f in curve.fields)
    print(f"wrote {len(curve.fields)} snapshots to {out}/curve "
          f"(mass {curve.fields[-1].mass:.12f}, max drift from "
          f"initial {drift:.3e})")
    return 0


def _cmd_energy_report(cfg: dict) -> int:
    out = cfg["output_dir"]
    _emit_config(cfg, out)
    model, _, _, curve = _evolve_from_config(cfg)
    report = energy_report(model, curve)
    _write(os.path.join(out, "energy_report.csv"),
           report_to_csv(report, header_lines=_header(cfg)))
    worst = float(np.max(np.abs(report.residual[1:-1])))
    scale = float(np.max(report.I))
    print(f"wrote {out}/energy_report.csv  (max interior "
          f"|dF/dt + I| = {worst:.3e}, max I = {scale:.3e})")
    return 0


def _particle_run(cfg: dict):
    pcfg = cfg["particles"]
    model, grid, init, curve = _evolve_from_config(cfg)
    mode = pcfg.get("mode", "PdeCoupled")
    if mode == "PdeCoupled":
        provider = curve
    elif mode == "Kde":
        provider = KdeConfig(init=init)
    else:
        raise ValueError(f"unknown particle mode {mode!r}")
    ens = simulate(model, provider, int(pcfg["n"]),
                   float(cfg["time"]["t_end"]), float(pcfg["dt"]),
                   int(pcfg["master_seed"]))
    paths = trajectory_energy(ens, model, provider,
                              record_every=int(pcfg.get("record_every", 10)))
    return model, curve, ens, paths


def _cmd_particles(cfg: dict) -> int:
    out = cfg["output_dir"]
    _emit_config(cfg, out)
    model, curve, ens, paths = _particle_run(cfg)
    hdr = _header(cfg, seeded=True)
    _write(os.path.join(out, "ensemble.csv"),
           ensemble_to_csv(ens, header_lines=hdr))
    _write(os.path.join(out, "energy_paths.csv"),
           energy_paths_to_csv(paths, header_lines=hdr))
    msg = ""
    if ens.n >= 100:
        mean, _, ok = martingale_test(paths)
        msg = (f"; martingale zero-mean test "
               f"{'passed' if ok else 'FAILED'} "
               f"(max |mean residual| = {np.max(np.abs(mean)):.3e})")
    print(f"wrote {out}/ensemble.csv and {out}/energy_paths.csv "
          f"({ens.n} paths){msg}")
    return 0


def _cmd_metric_derivative(cfg: dict) -> int:
    out = cfg["output_dir"]
    _emit_config(cfg, out)
    t0 = float(cfg["metric"]["t0"])
    deltas = [float(d) for d in cfg["metric"]["deltas"]]
    model, _, _, curve = _evolve_from_config(
        cfg, extra_times=[t0] + [t0 + d for d in deltas])
    estimates, limit_check = transport.metric_derivative(
        model, curve, t0, deltas, **_transport_kwargs(cfg))
    lines = _header(cfg) + [f"t0={fmt_float(t0)}",
                            f"limit_check={fmt_float(limit_check)}"]
    body = "".join(f"{fmt_float(d)},{fmt_float(e)}\n"
                   for d, e in zip(deltas, estimates))
    _write(os.path.join(out, "metric_derivative.csv"),
           "".join(f"# {h}\n" for h in lines) + "delta,estimate\n" + body)
    print(f"wrote {out}/metric_derivative.csv  (relative gap to the "
          f"dissipation root: {limit_check:.4f})")
    return 0


def _transport_kwargs(cfg: dict) -> dict:
    t = cfg["transport"]
    return {"n_time": int(t["n_time"]),
            "primal_tol": float(t["primal_tol"]),
            "constraint_tol": float(t["constraint_tol"]),
            "max_iters": int(t["max_iters"])}


def _cmd_wh_distance(cfg: dict) -> int:
    out = cfg["output_dir"]
    _emit_config(cfg, out)
    model = build_model_from_config(cfg)
    grid = build_grid_from_config(cfg)
    p0 = build_initial(cfg["wh"]["p0"], grid, model)
    p1 = build_initial(cfg["wh"]["p1"], grid, model)
    problem = transport.TransportProblem(model=model, p0=p0, p1=p1,
                                         **_transport_kwargs(cfg))
    distance, sol = transport.wh_distance(problem)
    rows = {"distance": distance, "action": sol.action,
            "iterations": sol.iterations,
            "converged": int(sol.converged),
            "continuity_residual": sol.continuity_residual,
            "consensus_residual": sol.consensus_residual}
    text = "".join(f"# {h}\n" for h in _header(cfg))
    text += ",".join(rows) + "\n" + ",".join(
        str(v) if isinstance(v, int) else fmt_float(v)
        for v in rows.values())
    _write(os.path.join(out, "wh_distance.csv"), text + "\n")
    print(f"wrote {out}/wh_distance.csv  (distance {distance:.6f}, "
          f"{sol.iterations} iterations, converged={sol.converged})")
    return 0


# -------------------------------------------------------------- figures

def _float_literal(v: float) -> str:
    """Python source literal for a float; repr(nan/inf) would not parse."""
    v = float(v)
    if math.isfinite(v):
        return repr(v)
    return f'float("{v!r}")'


def log_linear_fit(times: np.ndarray, values: np.ndarray):
    """Least-squares line through (t, ln y) on the positive part of y.

    Returns (slope, r_squared, n_used). r_squared is nan when fewer than
    three positive values are available.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values) & (values > 0.0)
    if int(keep.sum()) < 3:
        return math.nan, math.nan, int(keep.sum())
    t, y = times[keep], np.log(values[keep])
    slope, intercept = np.polyfit(t, y, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else math.nan
    return float(slope), float(r2), int(keep.sum())


def mc_mean_energy(paths):
    """Ensemble mean and standard error of theta(t) - theta(0)."""
    delta = np.stack([p.theta - p.theta[0] for p in paths])
    mean = delta.mean(axis=0)
    se = delta.std(axis=0, ddof=1) / math.sqrt(delta.shape[0])
    return paths[0].times, mean, se


def decay_fit_quantity(report=None, mc_times=None, mc_mean=None):
    """The positive decaying series the exponential-rate fit runs on.

    With a PDE energy report available the series is the energy above the
    stationary profile. Without one (vacuum makes the entropy integral
    infinite) it is the Monte-Carlo mean energy above its final value,
    truncated where the remaining drop falls below 5% of the total, so
    that the plateau does not dominate the fit.
    """
    if report is not None:
        return report.times, report.H_g
    span = mc_mean[0] - mc_mean[-1]
    y = mc_mean - mc_mean[-1]
    keep = y >= 0.05 * span
    return mc_times[keep], y[keep]


_PLOT_SCRIPT = '''\
"""Regenerate {png_name} from the CSV files next to this script."""
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
STYLE = {style!r}
FAMILY_LABEL = {label!r}
FIT_SLOPE = {fit_slope}
FIT_R2 = {fit_r2}


def load_csv(name):
    # genfromtxt(names=True) would take the first "#" header line as the
    # column names, so strip the comment lines before parsing.
    with open(os.path.join(HERE, name)) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return np.genfromtxt(lines, delimiter=",", names=True)


mean = load_csv("mean_energy.csv")
fig, ax = plt.subplots(figsize=(7, 4.5))
if STYLE == "trajectories":
    rows = load_csv("trajectories.csv")
    for pid in np.unique(rows["path_id"]):
        sel = rows["path_id"] == pid
        t, theta = rows["t"][sel], rows["theta"][sel]
        ax.plot(t, theta - theta[0], color="steelblue", alpha=0.08, lw=0.5)
    ax.plot(mean["time"], mean["mc_mean"], color="black", lw=2.0,
            label="ensemble mean")
    if "pde_mean" in (mean.dtype.names or ()):
        ax.plot(mean["time"], mean["pde_mean"], color="crimson", ls="--",
                lw=1.5, label="density-functional mean")
    ax.set_ylabel("per-trajectory energy change")
else:
    fit = load_csv("decay_fit.csv")
    ax.semilogy(fit["time"], fit["value"], "o", ms=3.5,
                label="energy above stationary")
    if np.isfinite(FIT_SLOPE):
        ax.semilogy(fit["time"], np.exp(fit["log_fit"]),
                    color="crimson", lw=1.5,
                    label=f"exponential fit (rate {{-FIT_SLOPE:.2f}})")
    ax.set_ylabel("energy above stationary")
ax.set_xlabel("t")
ax.set_title(f"{{FAMILY_LABEL}}  (fit R^2 = {{FIT_R2:.4f}})")
ax.legend(loc="best")
fig.tight_layout()
fig.savefig(os.path.join(HERE, {png_name!r}), dpi=150)
print("wrote", os.path.join(HERE, {png_name!r}))
'''


def _family_label(cfg: dict) -> str:
    spec = cfg["model"]
    fam = spec["family"]
    if fam == "bose":
        return f"crowding mobility, exponent {float(spec['gamma']):g}"
    if fam == "power":
        return f"degenerate mobility, exponent {float(spec['alpha']):g}"
    if fam == "fermi-dirac":
        return "saturating mobility"
    return "constant mobility"


def _render_figure(out_dir: str, png_name: str, style: str, label: str,
                   paths, mc, pde_mean, fit_data, fit_slope, fit_r2) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    times, mean, _ = mc
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if style == "trajectories":
        for p in paths:
            ax.plot(p.times, p.theta - p.theta[0], color="steelblue",
                    alpha=0.08, lw=0.5)
        ax.plot(times, mean, color="black", lw=2.0, label="ensemble mean")
        if pde_mean is not None:
            ax.plot(pde_mean[0], pde_mean[1], color="crimson", ls="--",
                    lw=1.5, label="density-functional mean")
        ax.set_ylabel("per-trajectory energy change")
    else:
        ft, fy, flog = fit_data
        ax.semilogy(ft, fy, "o", ms=3.5, label="energy above stationary")
        if math.isfinite(fit_slope):
            ax.semilogy(ft, np.exp(flog), color="crimson", lw=1.5,
                        label=f"exponential fit (rate {-fit_slope:.2f})")
        ax.set_ylabel("energy above stationary")
    ax.set_xlabel("t")
    ax.set_title(f"{label}  (fit R^2 = {fit_r2:.4f})")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, png_name), dpi=150)
    plt.close(fig)


def _cmd_reproduce(cfg: dict, fig_name: str) -> int:
    out = os.path.join(cfg["output_dir"], fig_name)
    cfg = dict(cfg, output_dir=out)
    _emit_config(cfg, out)
    style = cfg.get("style", "trajectories")
    hdr = _header(cfg, seeded=True)

    model, curve, ens, paths = _particle_run(cfg)
    times, mean, se = mc_mean_energy(paths)

    report = None
    pde_mean = None
    if model.entropy_kit_finite:
        report = energy_report(model, curve)
        _write(os.path.join(out, "pde_energy.csv"),
               report_to_csv(report, header_lines=hdr))
        pde_mean = (report.times, report.F - report.F[0])
    else:
        lines = "".join(f"# {h}\n" for h in hdr)
        rows = "".join(
            f"{fmt_float(t)},{fmt_float(dissipation(model, f))}\n"
            for t, f in zip(curve.times, curve.fields))
        _write(os.path.join(out, "dissipation.csv"),
               lines + "time,dissipation\n" + rows)

    fit_t, fit_y = decay_fit_quantity(report=report, mc_times=times,
                                      mc_mean=mean)
    fit_slope, fit_r2, n_used = log_linear_fit(fit_t, fit_y)
    keep = np.isfinite(fit_y) & (fit_y > 0.0)
    fit_log = (fit_slope * fit_t[keep]
               + (np.mean(np.log(fit_y[keep])
                          - fit_slope * fit_t[keep]) if n_used >= 3
                  else 0.0))

    _write(os.path.join(out, "trajectories.csv"),
           energy_paths_to_csv(paths, header_lines=hdr))
    mean_hdr = hdr + [f"fit_slope={fmt_float(fit_slope)}",
                      f"fit_r2={fmt_float(fit_r2)}",
                      f"fit_points={n_used}"]
    cols = "time,mc_mean,mc_se" + ("" if pde_mean is None else ",pde_mean")
    body_rows = []
    pde_at = (np.interp(times, pde_mean[0], pde_mean[1])
              if pde_mean is not None else None)
    for k, t in enumerate(times):
        row = f"{fmt_float(t)},{fmt_float(mean[k])},{fmt_float(se[k])}"
        if pde_at is not None:
            row += f",{fmt_float(pde_at[k])}"
        body_rows.append(row + "\n")
    _write(os.path.join(out, "mean_energy.csv"),
           "".join(f"# {h}\n" for h in mean_hdr) + cols + "\n"
           + "".join(body_rows))
    _write(os.path.join(out, "decay_fit.csv"),
           "".join(f"# {h}\n" for h in mean_hdr) + "time,value,log_fit\n"
           + "".join(f"{fmt_float(t)},{fmt_float(y)},{fmt_float(lf)}\n"
                     for t, y, lf in zip(fit_t[keep], fit_y[keep], fit_log)))

    png_name = f"{fig_name}.png"
    _render_figure(out, png_name, style, _family_label(cfg), paths,
                   (times, mean, se), pde_mean,
                   (fit_t[keep], fit_y[keep], fit_log), fit_slope, fit_r2)
    _write(os.path.join(out, f"plot_{fig_name}.py"),
           _PLOT_SCRIPT.format(png_name=png_name, style=style,
                               label=_family_label(cfg),
                               fit_slope=_float_literal(fit_slope),
                               fit_r2=_float_literal(fit_r2)))
    print(f"wrote {out}/: trajectories.csv, mean_energy.csv, decay_fit.csv,"
          f" {png_name}, plot_{fig_name}.py  (fit R^2 = {fit_r2:.4f})")
    return 0


# --------------------------------------------------------------- verify

def _gaussian_on(grid: Grid1D, mean: float, var: float,
                 mass: float = 1.0) -> DensityField:
    x = grid.cell_centers
    vals = np.exp(-((x - mean) ** 2) / (2.0 * var))
    vals *= mass / (np.sum(vals) * grid.dx)
    return DensityField(grid, vals, time=0.0)


def _verify_checks(cfg: dict):
    """Yield (name, value_text, ok) rows for the invariant battery."""
    checks = []

    grid = Grid1D(L=12.0, n_cells=600)
    snaps = np.linspace(0.0, 1.5, 31)
    battery = [
        ("linear", build_model("linear"),
         {"kind": "gaussian", "mean": 2.0, "variance": 1.0, "mass": 1.0}),
        ("fermi-dirac", build_model("fermi-dirac"),
         {"kind": "sandwiched", "level": -0.6, "wiggle": 0.5,
          "wavenumber": 1.0}),
        ("bose(1)", build_model("bose", {"gamma": 1.0}),
         {"kind": "gaussian", "mean": 2.0, "variance": 1.0, "mass": 1.0}),
        ("power(1)", build_model("power", {"alpha": 1.0}),
         {"kind": "sandwiched", "level": -6.0, "wiggle": 1.0,
          "wavenumber": 1.0}),
    ]
    curves = {}
    reports = {}
    for name, model, init_spec in battery:
        init = build_initial(init_spec, grid, model)
        curve = fpe.evolve(model, init, 1.5, snapshot_times=snaps)
        curves[name] = (model, curve)
        reports[name] = energy_report(model, curve)
        worst = float(np.max(np.abs(reports[name].residual[1:-1])))
        scale = float(np.max(reports[name].I))
        checks.append((f"dissipation identity [{name}]",
                       f"max|dF/dt+I| = {worst:.2e} vs 2% of {scale:.2e}",
                       worst <= 0.02 * scale))
        drift = max(abs(f.mass - init.mass) for f in curve.fields)
        pos = min(float(f.values.min()) for f in curve.fields)
        checks.append((f"mass/positivity [{name}]",
                       f"mass drift {drift:.1e}, min value {pos:.1e}",
                       drift <= 1e-10 and pos >= 0.0))
        hg_min = float(np.min(reports[name].H_g))
        checks.append((f"energy above stationary [{name}]",
                       f"min H = {hg_min:.2e}", hg_min >= -1e-8))

    model, curve = curves["linear"]
    rep = reports["linear"]
    idx = [np.argmin(np.abs(rep.times - t))
           for t in (0.2, 0.5, 0.8, 1.1, 1.4)]
    t_s = rep.times[idx]
    m_t = 2.0 * np.exp(-t_s)
    H_exact = 0.5 * m_t ** 2
    I_exact = m_t ** 2
    F_exact = H_exact - 0.5 * math.log(2.0 * math.pi) - 1.0
    errs = [float(np.max(np.abs(rep.H_g[idx] - H_exact) / H_exact)),
            float(np.max(np.abs(rep.I[idx] - I_exact) / I_exact)),
            float(np.max(np.abs(rep.F[idx] - F_exact) / np.abs(F_exact)))]
    checks.append(("closed forms [linear gaussian]",
                   f"max rel err H/I/F = {max(errs):.2e}",
                   max(errs) <= 0.01))
    decay_ok = bool(np.all(rep.H_g[1:] <= np.exp(-2.0 * rep.times[1:])
                           * rep.H_g[0] * 1.01))
    checks.append(("exponential entropy decay [linear]",
                   "H(t) <= exp(-2t) H(0) + 1%", decay_ok))

    sups = []
    for n in (150, 300, 600):
        g = Grid1D(L=12.0, n_cells=n)
        p = _gaussian_on(g, 2.0, 1.0)
        resid = wh_gradient(model, p) + fpe.rhs(model, p)
        sups.append(float(np.max(np.abs(resid))))
    slopes = np.log2(np.array(sups[:-1]) / np.array(sups[1:]))
    checks.append(("descent-field duality [linear]",
                   f"refinement slopes {slopes.round(2).tolist()}",
                   bool(np.all(slopes >= 1.9))))
    p_chk = _gaussian_on(grid, 2.0, 1.0)
    gap = abs(wh_gradient_norm2(model, p_chk) - dissipation(model, p_chk))
    checks.append(("metric norm equals dissipation",
                   f"gap = {gap:.2e}", gap <= 1e-10))

    inst = [build_model("fermi-dirac"), build_model("bose", {"gamma": 1.0}),
            build_model("bose", {"gamma": 3.0}),
            build_model("power", {"alpha": 1.0}),
            build_model("power", {"alpha": 2.0})]
    worst_rel = 0.0
    p_probe = build_initial({"kind": "sandwiched", "level": -1.2,
                             "wiggle": 0.4, "wavenumber": 1.3},
                            Grid1D(L=6.0, n_cells=240),
                            build_model("linear"))
    for m in inst:
        vals = np.clip(p_probe.values, 1e-12,
                       None if m.saturation is None
                       else m.saturation * 0.95)
        fld = DensityField(p_probe.grid, vals, time=0.0)
        sel = slice(40, 200, 8)
        gen = rate_D_field(m, fld)[sel]
        x = fld.grid.cell_centers
        gx = fld.grid.gradient(vals)
        gxx = fld.grid.laplacian(vals)
        spec = rate_D_specialized(m, vals[sel], gx[sel], gxx[sel], x[sel])
        worst_rel = max(worst_rel, float(np.max(
            np.abs(gen - spec) / np.maximum(np.abs(spec), 1e-300))))
    checks.append(("pointwise rate: closed forms vs generic",
                   f"max rel gap = {worst_rel:.2e}", worst_rel <= 1e-8))

    g14 = Grid1D(L=14.0, n_cells=600)
    p0 = _gaussian_on(g14, 0.0, 1.0)
    p1 = _gaussian_on(g14, 2.0, 1.0)
    dist, sol = transport.wh_distance(transport.TransportProblem(
        model=model, p0=p0, p1=p1, n_time=12, primal_tol=1e-4))
    oracle = transport.w2_quantile_oracle(p0, p1)
    rel = abs(dist - oracle) / oracle
    checks.append(("transport distance vs quantile oracle",
                   f"{dist:.5f} vs {oracle:.5f} (rel {rel:.1e}, "
                   f"converged={sol.converged})",
                   sol.converged and rel <= 0.02))

    t0, deltas = 0.25, [0.04, 0.02]
    g_md = Grid1D(L=12.0, n_cells=400)
    curve_md = fpe.evolve(model, _gaussian_on(g_md, 2.0, 1.0),
                          t0 + deltas[0],
                          snapshot_times=[t0] + [t0 + d for d in deltas])
    _, limit_check = transport.metric_derivative(
        model, curve_md, t0, deltas, n_time=12, primal_tol=1e-4)
    checks.append(("metric derivative limit [linear]",
                   f"relative gap = {limit_check:.4f}",
                   limit_check <= 0.05))

    lin_curve = fpe.evolve(model, _gaussian_on(g14, 2.0, 1.0), 1.0,
                           snapshot_times=np.linspace(0.0, 1.0, 21))
    ens = simulate(model, lin_curve, 2000, 1.0, 0.002, 920)
    paths = trajectory_energy(ens, model, lin_curve, record_every=25)
    _, _, ok_lin = martingale_test(paths)
    checks.append(("martingale zero-mean [linear, 2000 paths]",
                   "4 standard-error band", ok_lin))
    fd_model, fd_curve = curves["fermi-dirac"]
    ens_fd = simulate(fd_model, fd_curve, 500, 1.5, 0.003, 921)
    paths_fd = trajectory_energy(ens_fd, fd_model, fd_curve, record_every=25)
    _, _, ok_fd = martingale_test(paths_fd)
    checks.append(("martingale zero-mean [saturating, 500 paths]",
                   "4 standard-error band", ok_fd))

    rates = conditional_rate_estimate(ens, model, lin_curve, 0.5,
                                      [0.04, 0.02], n_branches=128,
                                      path_indices=range(10))
    hits = int(np.sum(np.abs(rates.extrapolated - rates.D_reference)
                      <= rates.error_bars))
    checks.append(("branched conditional rates [linear]",
                   f"{hits}/10 inside error bars", hits >= 9))

    moments, bound, ok_m = second_moment_check(model, ens)
    checks.append(("second-moment envelope [linear particles]",
                   f"max moment {moments.max():.2f} vs bound "
                   f"{bound[np.argmax(moments)]:.2f}", ok_m))

    lo = build_initial({"kind": "sandwiched", "level": -1.0, "wiggle": 0.3,
                        "wavenumber": 1.0}, grid, fd_model)
    hi = build_initial({"kind": "sandwiched", "level": -0.4, "wiggle": 0.3,
                        "wavenumber": 1.0}, grid, fd_model)
    c_lo = fpe.evolve(fd_model, lo, 0.5, snapshot_times=[0.25, 0.5])
    c_hi = fpe.evolve(fd_model, hi, 0.5, snapshot_times=[0.25, 0.5])
    order_gap = max(float(np.max(a.values - b.values))
                    for a, b in zip(c_lo.fields, c_hi.fields))
    sat = max(float(np.max(f.values)) for f in c_hi.fields)
    checks.append(("comparison principle + saturation [saturating]",
                   f"max order violation {order_gap:.1e}, "
                   f"max value {sat:.6f}",
                   order_gap <= 1e-12 and sat < 1.0))

    rng = np.random.default_rng(5)
    snap = curves["fermi-dirac"][1].fields[10]
    bumps = [BumpField(center=float(rng.uniform(-3, 3)),
                       radius=float(rng.uniform(0.5, 2.0)),
                       amplitude=float(rng.uniform(-0.5, 0.5)))
             for _ in range(5)]
    try:
        slope_comparison(fd_model, snap, bumps)
        checks.append(("slope comparison sweep [saturating]",
                       "5 bumps, all bounds hold", True))
    except NumericalError as err:
        checks.append(("slope comparison sweep [saturating]",
                       str(err), False))

    ens_a = simulate(model, lin_curve, 200, 0.5, 0.002, 31415)
    ens_b = simulate(model, lin_curve, 200, 0.5, 0.002, 31415)
    ens_c = simulate(model, lin_curve, 200, 0.5, 0.002, 31416)
    same = np.array_equal(ens_a.positions, ens_b.positions)
    diff = not np.array_equal(ens_a.positions, ens_c.positions)
    checks.append(("bit-identical reruns under fixed seed",
                   f"rerun equal {same}, reseeded differs {diff}",
                   same and diff))
    return checks


def _cmd_verify(cfg: dict) -> int:
    checks = _verify_checks(cfg)
    width = max(len(name) for name, _, _ in checks)
    failures = 0
    for name, value, ok in checks:
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"{status}  {name:<{width}}  {value}")
    total = len(checks)
    print(f"{total - failures}/{total} checks passed")
    if failures:
        raise NumericalError(f"{failures} verification check(s) failed")
    return 0


# ----------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a configuration entry "
                             "(dotted path, JSON value)")
    common.add_argument("--output-dir", help="directory for emitted files")
    parser = argparse.ArgumentParser(
        prog="artifact",
        description="Mobility-driven diffusion toolkit: solve the density "
                    "equation, simulate trajectory ensembles, evaluate "
                    "energy functionals, and measure transport distances.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fpe-solve", parents=[common],
                   help="evolve the density and write snapshots")
    sub.add_parser("energy-report", parents=[common],
                   help="energy, entropy, dissipation, identity residual")
    sub.add_parser("particles", parents=[common],
                   help="trajectory ensemble with energy decomposition")
    sub.add_parser("metric-derivative", parents=[common],
                   help="transport-distance difference quotients")
    sub.add_parser("wh-distance", parents=[common],
                   help="modified transport distance between two densities")
    rep = sub.add_parser("reproduce", parents=[common],
                         help="rerun a bundled experiment")
    rep.add_argument("figure", choices=sorted(FIG_PRESETS),
                     help="which bundled experiment to rerun")
    sub.add_parser("verify", parents=[common],
                   help="run the invariant battery and print a table")
    return parser


_HANDLERS = {
    "fpe-solve": _cmd_fpe_solve,
    "energy-report": _cmd_energy_report,
    "particles": _cmd_particles,
    "metric-derivative": _cmd_metric_derivative,
    "wh-distance": _cmd_wh_distance,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        preset = FIG_PRESETS[args.figure] if args.command == "reproduce" \
            else None
        cfg = resolve_config(args.config, args.set, preset=preset,
                             output_dir=args.output_dir)
        if args.command == "reproduce":
            return _cmd_reproduce(cfg, args.figure)
        return _HANDLERS[args.command](cfg)
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (NumericalError, RuntimeError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
