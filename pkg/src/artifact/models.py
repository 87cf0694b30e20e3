"""Mobility models for drift-diffusion flows with density-dependent mobility.

A model bundles the mobility b, the diffusion nonlinearity f, and the
confining potential, together with the scalar functions derived from them:
the chemical potential g (antiderivative slope f'/(s b)), its antiderivative
eta, the per-mass energy phi = eta/u, the metric weight h(r) = r b(r), and
the entropy weight psi = h/f'. Stationary densities are inversions
g(p) = -potential + c with c fixed by a mass constraint.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq
from scipy.special import expit, gammaln

__all__ = [
    "Potential",
    "DerivedFunctions",
    "MobilityModel",
    "StationaryDensity",
    "build_model",
    "eval_derived",
    "stationary_density",
    "critical_mass",
    "generalized_entropy",
    "quadratic_potential",
    "with_extra_potential",
]

_GL_NODES, _GL_WEIGHTS = leggauss(64)


@dataclass(frozen=True)
class Potential:
    """Confining potential with analytic gradient and Laplacian.

    growth_C, growth_R record the linear-growth envelope of the gradient:
    |grad(x)| <= growth_C * |x| for |x| > growth_R.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    lap: Callable[[np.ndarray], np.ndarray]
    growth_C: float
    growth_R: float


def quadratic_potential() -> Potential:
    """The default well x^2/2 (gradient x, Laplacian 1)."""
    return Potential(
        value=lambda x: 0.5 * np.asarray(x, dtype=float) ** 2,
        grad=lambda x: np.asarray(x, dtype=float),
        lap=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        growth_C=1.0,
        growth_R=0.0,
    )


def with_extra_potential(pot: Potential, extra_value, extra_grad, extra_lap,
                         growth_C: float | None = None) -> Potential:
    """Potential whose value/gradient/Laplacian are pointwise sums."""
    return Potential(
        value=lambda x: pot.value(x) + extra_value(x),
        grad=lambda x: pot.grad(x) + extra_grad(x),
        lap=lambda x: pot.lap(x) + extra_lap(x),
        growth_C=pot.growth_C if growth_C is None else growth_C,
        growth_R=pot.growth_R,
    )


@dataclass(frozen=True)
class DerivedFunctions:
    """Scalar functions derived from (b, f): all vectorized over ndarrays.

    g is strictly increasing wherever b and f' are positive; eta is the
    antiderivative of g with the per-family base convention; phi_small(u)
    = eta(u)/u; h(r) = r*b(r); psi(s) = s*b(s)/f'(s). phi_prime and
    phi_second are the first two derivatives of phi_small, used by the
    pointwise trajectory-rate formulas. g_inv inverts g on its range.
    """

    g: Callable
    eta: Callable
    phi_small: Callable
    h: Callable
    psi: Callable
    g_prime: Callable
    phi_prime: Callable
    phi_second: Callable
    g_inv: Callable
    g_inv_max: float  # supremum of the domain of g_inv (inf if unbounded)
    eta_at_one: float


@dataclass(frozen=True)
class MobilityModel:
    """Immutable bundle of mobility, diffusion, potential, and metadata."""

    name: str
    family: str
    params: dict
    b: Callable
    b_prime: Callable
    f: Callable
    f_prime: Callable
    f_second: Callable
    phi: Potential
    derived: DerivedFunctions
    b_bounds: tuple[float, float]
    f_slope_bounds: tuple[float, float]
    g_base_point: float
    dim: int = 1
    h_concave: bool = False
    saturation: float | None = None
    unbounded_below: bool = False
    entropy_kit_finite: bool = True


@dataclass(frozen=True)
class StationaryDensity:
    """Inversion g(p) = -potential + c normalized to the requested mass."""

    c: float
    mass: float
    density: Callable
    closed_form_tag: str
    domain: tuple[float, float]
    heavy_tails: bool = False
    tail_mass: float = 0.0


def _probe_range(saturation: float | None) -> np.ndarray:
    hi = saturation * (1.0 - 1e-9) if saturation is not None else 10.0
    return np.geomspace(1e-6, hi, 200)


def _gl_integral_zero_to(r, integrand):
    """Vectorized 64-point Gauss-Legendre value of int_0^r integrand(s) ds."""
    r = np.asarray(r, dtype=float)
    t = 0.5 * (_GL_NODES + 1.0)           # nodes on (0, 1)
    s = r[..., None] * t                  # shape (..., 64)
    vals = integrand(s)
    return r * 0.5 * np.sum(vals * _GL_WEIGHTS, axis=-1)


def _linear_derived() -> DerivedFunctions:
    def eta(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0.0, r * np.log(np.maximum(r, 1e-320)) - r, 0.0)
        return out

    return DerivedFunctions(
        g=lambda s: np.log(s),
        eta=eta,
        phi_small=lambda u: np.log(u) - 1.0,
        h=lambda r: np.asarray(r, dtype=float),
        psi=lambda s: np.asarray(s, dtype=float),
        g_prime=lambda s: 1.0 / np.asarray(s, dtype=float),
        phi_prime=lambda u: 1.0 / np.asarray(u, dtype=float),
        phi_second=lambda u: -1.0 / np.asarray(u, dtype=float) ** 2,
        g_inv=lambda y: np.exp(y),
        g_inv_max=math.inf,
        eta_at_one=-1.0,
    )


def _fermi_dirac_derived() -> DerivedFunctions:
    def eta(r):
        r = np.asarray(r, dtype=float)
        rs = np.clip(r, 1e-320, 1.0 - 1e-16)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = r * np.log(rs) + (1.0 - r) * np.log1p(-rs)
        return np.where((r > 0.0) & (r < 1.0), v, 0.0)

    def phi_prime(u):
        u = np.asarray(u, dtype=float)
        return -np.log1p(-u) / u**2

    def phi_second(u):
        u = np.asarray(u, dtype=float)
        return 1.0 / (u**2 * (1.0 - u)) + 2.0 * np.log1p(-u) / u**3

    return DerivedFunctions(
        g=lambda s: np.log(s) - np.log1p(-np.asarray(s, dtype=float)),
        eta=eta,
        phi_small=lambda u: eta(u) / np.asarray(u, dtype=float),
        h=lambda r: r * (1.0 - np.asarray(r, dtype=float)),
        psi=lambda s: s * (1.0 - np.asarray(s, dtype=float)),
        g_prime=lambda s: 1.0 / (s * (1.0 - np.asarray(s, dtype=float))),
        phi_prime=phi_prime,
        phi_second=phi_second,
        g_inv=lambda y: expit(np.asarray(y, dtype=float)),
        g_inv_max=math.inf,
        eta_at_one=0.0,
    )


def _bose_derived(gamma: float) -> DerivedFunctions:
    ln2 = math.log(2.0)

    def soft(r):
        # int_0^r ln(1 + s^gamma) ds, smooth at 0
        return _gl_integral_zero_to(r, lambda s: np.log1p(s**gamma))

    def volume(r):
        # int_0^r ds / (1 + s^gamma)
        if gamma == 1.0:
            return np.log1p(np.asarray(r, dtype=float))
        return _gl_integral_zero_to(r, lambda s: 1.0 / (1.0 + s**gamma))

    def eta(r):
        r = np.asarray(r, dtype=float)
        rs = np.maximum(r, 1e-320)
        with np.errstate(divide="ignore", invalid="ignore"):
            a_val = gamma * (r * np.log(rs) - r) - soft(r)
        v = a_val / gamma + r * ln2 / gamma
        return np.where(r > 0.0, v, 0.0)

    def g(s):
        s = np.asarray(s, dtype=float)
        return np.log(s) - np.log1p(s**gamma) / gamma + ln2 / gamma

    def g_inv(y):
        y = np.asarray(y, dtype=float)
        e = np.exp(gamma * np.minimum(y, ln2 / gamma - 1e-15))
        return (e / (2.0 - e)) ** (1.0 / gamma)

    def phi_prime(u):
        u = np.asarray(u, dtype=float)
        return volume(u) / u**2

    def phi_second(u):
        u = np.asarray(u, dtype=float)
        return 1.0 / (u**2 * (1.0 + u**gamma)) - 2.0 * volume(u) / u**3

    eta_one = float(eta(np.array(1.0)))
    return DerivedFunctions(
        g=g,
        eta=eta,
        phi_small=lambda u: eta(u) / np.asarray(u, dtype=float),
        h=lambda r: r * (1.0 + np.asarray(r, dtype=float) ** gamma),
        psi=lambda s: s * (1.0 + np.asarray(s, dtype=float) ** gamma),
        g_prime=lambda s: 1.0 / (s * (1.0 + np.asarray(s, dtype=float) ** gamma)),
        phi_prime=phi_prime,
        phi_second=phi_second,
        g_inv=g_inv,
        g_inv_max=ln2 / gamma,
        eta_at_one=eta_one,
    )


def _power_derived(alpha: float) -> DerivedFunctions:
    if alpha == 1.0:
        def g_log(s):
            s = np.asarray(s, dtype=float)
            # vacuum cells give -inf; every integrand built on g carries
            # a mobility weight that vanishes at vacuum first
            with np.errstate(divide="ignore"):
                return 1.0 - 1.0 / s

        def g_prime_log(s):
            s = np.asarray(s, dtype=float)
            with np.errstate(divide="ignore"):
                return 1.0 / s ** 2

        return DerivedFunctions(
            g=g_log,
            eta=lambda r: np.asarray(r, dtype=float) - 1.0 - np.log(r),
            phi_small=lambda u: (u - 1.0 - np.log(u)) / np.asarray(u, dtype=float),
            h=lambda r: np.asarray(r, dtype=float) ** 2,
            psi=lambda s: np.asarray(s, dtype=float) ** 2,
            g_prime=g_prime_log,
            phi_prime=lambda u: np.log(u) / np.asarray(u, dtype=float) ** 2,
            phi_second=lambda u: (1.0 - 2.0 * np.log(u)) / np.asarray(u, dtype=float) ** 3,
            g_inv=lambda y: 1.0 / (1.0 - np.asarray(y, dtype=float)),
            g_inv_max=1.0,
            eta_at_one=0.0,
        )

    a = alpha

    def eta(r):
        r = np.asarray(r, dtype=float)
        return -r ** (1.0 - a) / (a * (1.0 - a)) + r / a

    def g(s):
        s = np.asarray(s, dtype=float)
        # vacuum cells give -inf; every integrand built on g carries a
        # mobility weight that vanishes at vacuum first
        with np.errstate(divide="ignore", over="ignore"):
            return -(s ** (-a) - 1.0) / a

    def g_prime(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            return s ** (-a - 1.0)

    return DerivedFunctions(
        g=g,
        eta=eta,
        phi_small=lambda u: eta(u) / np.asarray(u, dtype=float),
        h=lambda r: np.asarray(r, dtype=float) ** (a + 1.0),
        psi=lambda s: np.asarray(s, dtype=float) ** (a + 1.0),
        g_prime=g_prime,
        phi_prime=lambda u: np.asarray(u, dtype=float) ** (-a - 1.0) / (1.0 - a),
        phi_second=lambda u: -(a + 1.0) * np.asarray(u, dtype=float) ** (-a - 2.0) / (1.0 - a),
        g_inv=lambda y: (1.0 - a * np.asarray(y, dtype=float)) ** (-1.0 / a),
        g_inv_max=1.0 / a,
        eta_at_one=float(eta(np.array(1.0))),
    )


def _quadrature_derived(b, f_prime, base_point: float) -> DerivedFunctions:
    """Fallback for user-supplied coefficient callables.

    g and eta come from adaptive quadrature of their defining integrals;
    the inverse of g is a bracketed root-find. Slower than the closed
    forms and intended for small probe workloads.
    """

    def g_scalar(s: float) -> float:
        val, _ = quad(lambda w: f_prime(w) / (w * b(w)), base_point, s,
                      limit=200, epsabs=1e-10)
        return val

    g_vec = np.vectorize(g_scalar, otypes=[float])

    def eta_scalar(r: float) -> float:
        if r == 0.0:
            return 0.0
        val, _ = quad(g_scalar, 1.0, r, limit=200, epsabs=1e-10)
        return val

    eta_vec = np.vectorize(eta_scalar, otypes=[float])

    def g_inv_scalar(y: float) -> float:
        lo, hi = 1e-12, 1.0
        while g_scalar(hi) < y and hi < 1e12:
            hi *= 4.0
        while g_scalar(lo) > y and lo > 1e-300:
            lo *= 0.25
        return brentq(lambda s: g_scalar(s) - y, lo, hi, xtol=1e-14)

    def g_prime(s):
        s = np.asarray(s, dtype=float)
        return f_prime(s) / (s * b(s))

    def phi_prime(u):
        u = np.asarray(u, dtype=float)
        return (g_vec(u) * u - eta_vec(u)) / u**2

    def phi_second(u):
        u = np.asarray(u, dtype=float)
        return g_prime(u) / u - 2.0 * (g_vec(u) * u - eta_vec(u)) / u**3

    return DerivedFunctions(
        g=g_vec,
        eta=eta_vec,
        phi_small=lambda u: eta_vec(u) / np.asarray(u, dtype=float),
        h=lambda r: r * b(np.asarray(r, dtype=float)),
        psi=lambda s: s * b(s) / f_prime(np.asarray(s, dtype=float)),
        g_prime=g_prime,
        phi_prime=phi_prime,
        phi_second=phi_second,
        g_inv=np.vectorize(g_inv_scalar, otypes=[float]),
        g_inv_max=math.inf,
        eta_at_one=0.0,
    )


def build_model(family: str, params: dict | None = None,
                potential: Potential | None = None,
                dim: int = 1) -> MobilityModel:
    """Construct a model from a named coefficient family.

    Families: "linear" (b = 1), "fermi-dirac" (b = 1 - p, saturating),
    "bose" (b = 1 + p^gamma, gamma >= 1), "power" (b = p^alpha,
    alpha >= 1, degenerate at vacuum), "custom" (callables supplied in
    params). The diffusion nonlinearity is f(p) = p for all builtins.

    Raises ValueError for unknown families or out-of-range parameters.
    """
    params = dict(params or {})
    pot = potential if potential is not None else quadratic_potential()
    ident = lambda s: np.asarray(s, dtype=float)
    one = lambda s: np.ones_like(np.asarray(s, dtype=float))
    zero = lambda s: np.zeros_like(np.asarray(s, dtype=float))

    if family == "linear":
        model = MobilityModel(
            name="linear", family=family, params=params,
            b=one, b_prime=zero, f=ident, f_prime=one, f_second=zero,
            phi=pot, derived=_linear_derived(),
            b_bounds=(1.0, 1.0), f_slope_bounds=(1.0, 1.0),
            g_base_point=1.0, dim=dim, h_concave=True,
        )
    elif family == "fermi-dirac":
        model = MobilityModel(
            name="fermi-dirac", family=family, params=params,
            b=lambda s: 1.0 - np.asarray(s, dtype=float),
            b_prime=lambda s: -np.ones_like(np.asarray(s, dtype=float)),
            f=ident, f_prime=one, f_second=zero,
            phi=pot, derived=_fermi_dirac_derived(),
            b_bounds=(0.0, 1.0), f_slope_bounds=(1.0, 1.0),
            g_base_point=0.5, dim=dim, h_concave=True, saturation=1.0,
        )
    elif family == "bose":
        gamma = float(params.get("gamma", 1.0))
        if gamma < 1.0:
            raise ValueError(f"bose mobility requires gamma >= 1, got {gamma}")
        model = MobilityModel(
            name=f"bose-gamma{gamma:g}", family=family,
            params={"gamma": gamma},
            b=lambda s: 1.0 + np.asarray(s, dtype=float) ** gamma,
            b_prime=lambda s: gamma * np.asarray(s, dtype=float) ** (gamma - 1.0),
            f=ident, f_prime=one, f_second=zero,
            phi=pot, derived=_bose_derived(gamma),
            b_bounds=(1.0, 1.0 + 10.0**gamma), f_slope_bounds=(1.0, 1.0),
            g_base_point=1.0, dim=dim, h_concave=False,
        )
    elif family == "power":
        alpha = float(params.get("alpha", 1.0))
        if alpha < 1.0:
            raise ValueError(f"power mobility requires alpha >= 1, got {alpha}")
        model = MobilityModel(
            name=f"power-alpha{alpha:g}", family=family,
            params={"alpha": alpha},
            b=lambda s: np.asarray(s, dtype=float) ** alpha,
            b_prime=lambda s: alpha * np.asarray(s, dtype=float) ** (alpha - 1.0),
            f=ident, f_prime=one, f_second=zero,
            phi=pot, derived=_power_derived(alpha),
            b_bounds=(0.0, 10.0**alpha), f_slope_bounds=(1.0, 1.0),
            g_base_point=1.0, dim=dim, h_concave=False,
            unbounded_below=True, entropy_kit_finite=False,
        )
    elif family == "custom":
        required = ("b", "b_prime", "f", "f_prime", "f_second")
        missing = [k for k in required if k not in params]
        if missing:
            raise ValueError(f"custom family needs callables {missing}")
        base = float(params.get("g_base_point", 1.0))
        probe = _probe_range(params.get("saturation"))
        b_lo = float(np.min(params["b"](probe)))
        b_hi = float(np.max(params["b"](probe)))
        fp = params["f_prime"](probe)
        model = MobilityModel(
            name=str(params.get("name", "custom")), family=family,
            params={}, b=params["b"], b_prime=params["b_prime"],
            f=params["f"], f_prime=params["f_prime"],
            f_second=params["f_second"], phi=pot,
            derived=_quadrature_derived(params["b"], params["f_prime"], base),
            b_bounds=(b_lo, b_hi),
            f_slope_bounds=(float(np.min(fp)), float(np.max(fp))),
            g_base_point=base, dim=dim,
            h_concave=bool(params.get("h_concave", False)),
            saturation=params.get("saturation"),
            unbounded_below=b_lo < 1e-12,
        )
    else:
        raise ValueError(f"unknown model family {family!r}")

    _validate(model)
    return model


def _validate(model: MobilityModel) -> None:
    if float(model.f(np.array(0.0))) != 0.0:
        raise ValueError("diffusion nonlinearity must vanish at zero density")
    probe = _probe_range(model.saturation)
    bvals = model.b(probe)
    lo, hi = model.b_bounds
    if np.any(bvals < lo - 1e-12) or np.any(bvals > hi + 1e-12):
        raise ValueError("mobility leaves its recorded bounds on the probe range")
    g1, g2 = model.f_slope_bounds
    fp = model.f_prime(probe)
    if np.any(fp < g1 - 1e-12) or np.any(fp > g2 + 1e-12):
        raise ValueError("diffusion slope leaves its recorded bounds")
    xs = np.linspace(-10.0, 10.0, 101)
    if np.any(model.phi.value(xs) < -1e-12):
        raise ValueError("potential must be non-negative")
    gv = model.derived.g(probe)
    if np.any(np.diff(gv) <= 0.0):
        raise ValueError("derived g must be strictly increasing on the probe range")


def eval_derived(model: MobilityModel, which: str, s) -> float | np.ndarray:
    """Evaluate one derived scalar function by name.

    which is one of "g", "eta", "phi", "h", "psi". Evaluation at a
    singular point without a finite limit raises ValueError.
    """
    d = model.derived
    table = {"g": d.g, "eta": d.eta, "phi": d.phi_small, "h": d.h, "psi": d.psi}
    if which not in table:
        raise ValueError(f"unknown derived function {which!r}")
    arr = np.asarray(s, dtype=float)
    if which in ("g", "phi") and np.any(arr <= 0.0):
        raise ValueError(f"{which} has no finite value at zero density")
    if which == "eta" and np.any(arr < 0.0):
        raise ValueError("eta is defined for non-negative arguments")
    if (model.saturation is not None and which in ("g", "phi")
            and np.any(arr >= model.saturation)):
        raise ValueError(f"{which} diverges at the saturation density")
    out = table[which](arr)
    if np.isscalar(s) or np.ndim(s) == 0:
        return float(out)
    return out


def stationary_density(model: MobilityModel, mass: float,
                       domain: tuple[float, float]) -> StationaryDensity:
    """Zero-flux steady profile on a finite interval with prescribed mass.

    Solves |integral of g_inv(-potential + c) - mass| < 1e-10 for c by
    bracketed bisection; the mass map is increasing in c because g_inv is.
    Raises ValueError when the requested mass is unattainable (saturating
    mobility on a too-small interval, or a condensation regime where the
    admissible-c mass supremum is finite and below the target).
    """
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    x_lo, x_hi = float(domain[0]), float(domain[1])
    if x_hi <= x_lo:
        raise ValueError("empty domain")
    d = model.derived

    # the admissible window for c: g_inv must stay inside its domain at the
    # potential minimum (0 for the builtin well)
    xs = np.linspace(x_lo, x_hi, 2001)
    phi_on_box = model.phi.value(xs)
    phi_min = float(np.min(phi_on_box))
    x_min = float(xs[int(np.argmin(phi_on_box))])
    # near the admissible cap the profile peaks sharply at the minimum;
    # give quad that abscissa so the spike is never stepped over
    spike = [x_min] if x_lo < x_min < x_hi else None

    def box_mass(c: float) -> float:
        with warnings.catch_warnings():
            # probing c near the admissible cap makes the profile nearly
            # singular at the minimum; quad's divergence heuristic fires
            # there even though the root search never leaves the regular
            # regime
            warnings.simplefilter("ignore", IntegrationWarning)
            val, _ = quad(lambda x: float(d.g_inv(-model.phi.value(np.array(x)) + c)),
                          x_lo, x_hi, limit=400, points=spike)
        return val
    c_cap = d.g_inv_max + phi_min
    lo = phi_min - 60.0
    while box_mass(lo) > mass and lo > phi_min - 1e6:
        lo -= 60.0
    if math.isfinite(c_cap):
        # approach the cap geometrically from a safe distance: the mass is
        # increasing in c, and jumping straight to the cap can put quad on
        # a (near-)divergent profile for nothing
        gap = 1.0 if c_cap - 1.0 > lo else 0.5 * (c_cap - lo)
        hi = c_cap - gap
        m_hi = box_mass(hi)
        while m_hi < mass and gap > 1e-9 * max(1.0, abs(c_cap)):
            gap *= 0.5
            hi = c_cap - gap
            m_hi = box_mass(hi)
        if m_hi < mass:
            raise ValueError(
                "condensation regime: no regular stationary density carries "
                f"mass {mass:g} (admissible supremum ~ {m_hi:g})")
    else:
        hi = phi_min + 1.0
        m_hi = box_mass(hi)
        while m_hi < mass:
            if model.saturation is not None:
                cap = model.saturation * (x_hi - x_lo)
                if mass > cap:
                    raise ValueError(
                        f"saturating mobility cannot exceed mass {cap:g} "
                        "on this interval")
            hi += 10.0
            m_hi = box_mass(hi)
            if hi > phi_min + 1e4:
                raise ValueError("stationary normalization bracket failure")
    c = brentq(lambda cc: box_mass(cc) - mass, lo, hi, xtol=1e-13,
               rtol=8.9e-16)

    def density(x):
        x = np.asarray(x, dtype=float)
        y = -model.phi.value(x) + c
        return d.g_inv(np.minimum(y, d.g_inv_max - 1e-15)
                       if math.isfinite(d.g_inv_max) else y)

    tags = {"linear": "gaussian", "fermi-dirac": "fermi-dirac",
            "bose": "bose-einstein", "custom": "numeric-inverse"}
    if model.family == "power":
        tag = "power-alpha1" if model.params.get("alpha") == 1.0 else "power-alphagt1"
    else:
        tag = tags[model.family]
    heavy = model.family == "power"
    span = x_hi - x_lo
    tail, _ = quad(lambda x: float(density(x)), x_hi, x_hi + 10.0 * span,
                   limit=200)
    tail2, _ = quad(lambda x: float(density(x)), x_lo - 10.0 * span, x_lo,
                    limit=200)
    return StationaryDensity(c=c, mass=mass, density=density,
                             closed_form_tag=tag, domain=(x_lo, x_hi),
                             heavy_tails=heavy, tail_mass=tail + tail2)


def critical_mass(model: MobilityModel, dim: int | None = None) -> float:
    """Mass of the marginal stationary profile for super-linear mobility.

    Only defined for the bose family. Returns math.inf when the profile's
    origin singularity exponent 2/gamma reaches the dimension (detected
    analytically); otherwise computes the radial integral with the origin
    singularity removed by substitution.
    """
    if model.family != "bose":
        raise ValueError("critical mass is defined for the bose family only")
    gamma = model.params["gamma"]
    d = model.dim if dim is None else int(dim)
    if 2.0 / gamma >= d:
        return math.inf
    surface = 2.0 * math.pi ** (d / 2.0) / math.exp(gammaln(d / 2.0))

    def radial(r):
        with np.errstate(over="ignore"):
            e = np.expm1(gamma * r * r / 2.0)
        return np.where(np.isfinite(e), e, np.inf) ** (-1.0 / gamma) * r ** (d - 1)

    # substitute r = t^k near the origin so the integrand vanishes linearly
    k = 2.0 / (d - 2.0 / gamma)
    inner, _ = quad(lambda t: float(radial(t**k)) * k * t ** (k - 1.0),
                    0.0, 1.0, limit=400)
    outer, _ = quad(lambda r: float(radial(r)), 1.0, np.inf, limit=400)
    return surface * (inner + outer)


def generalized_entropy(model: MobilityModel, p_field) -> float:
    """Entropy built on the weight psi; finite only when int_0^1 g converges.

    Computed as eta(1) * mass - integral of eta(p): the direct form of the
    psi-weighted construction after collapsing its telescoping terms.
    Raises ValueError for mobilities whose kit normalization diverges
    (vacuum-degenerate families).
    """
    if not model.entropy_kit_finite:
        raise ValueError(
            "entropy kit normalization diverges for this mobility; use free "
            "energy differences instead")
    values = p_field.values
    eta_vals = model.derived.eta(values)
    mass = p_field.grid.integrate(values)
    return model.derived.eta_at_one * mass - p_field.grid.integrate(eta_vals)
