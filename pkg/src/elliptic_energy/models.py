"""Coefficient sets for the coupled transport-energy system.

Two concrete models are provided:

* the stationary thermistor (electric potential + Joule-heated energy
  variable, written in the heat-conductivity primitive variable), and
* the non-isothermal Nernst-Planck system (entropic ion variables,
  electrostatic potential, temperature) whose energy source is the
  electric power density of the free current.

Both reduce to the same abstract shape: a positive leading coefficient,
a lower-order flux, a zero-order datum per equation, and a dissipation
density with quadratic gradient growth feeding the energy equation.
Growth certificates sample the ellipticity window and the quadratic
bound at runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fem import ContractError, Field
from .mesh import Mesh, boundary_edge_elements, boundary_normals


class ModelError(ValueError):
    """Inadmissible constitutive data (e.g. non-positive conductivity)."""


class StateConstraintError(ValueError):
    """Coefficient evaluation requested outside the admissible state set."""


class CertificateError(ValueError):
    """Growth certification found a non-elliptic or unbounded sample."""


# ---------------------------------------------------------------------------
# Scalar constitutive functions


@dataclass(frozen=True)
class ScalarFn:
    """Scalar constitutive function with optional closed-form primitive.

    primitive is the antiderivative vanishing at zero; inverse_primitive
    inverts it.  Registry-built functions carry both where they exist,
    which keeps coefficient evaluation cheap inside the iteration.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    params: dict = field(default_factory=dict)
    primitive: Callable[[np.ndarray], np.ndarray] | None = None
    inverse_primitive: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, t):
        return self.fn(np.asarray(t, dtype=float))


def _constant(value: float) -> ScalarFn:
    return ScalarFn(
        fn=lambda t: np.full_like(np.asarray(t, dtype=float), value),
        name="constant", params={"value": value},
        primitive=lambda t: value * np.asarray(t, dtype=float),
        inverse_primitive=lambda u: np.asarray(u, dtype=float) / value,
    )


def _affine(intercept: float, slope: float) -> ScalarFn:
    if slope == 0.0:
        return _constant(intercept)

    def inv(u):
        u = np.asarray(u, dtype=float)
        disc = intercept * intercept + 2.0 * slope * u
        return (np.sqrt(disc) - intercept) / slope

    return ScalarFn(
        fn=lambda t: intercept + slope * np.asarray(t, dtype=float),
        name="affine", params={"intercept": intercept, "slope": slope},
        primitive=lambda t: intercept * np.asarray(t, dtype=float)
        + 0.5 * slope * np.asarray(t, dtype=float) ** 2,
        inverse_primitive=inv,
    )


def _tanh_bounded(base: float, amplitude: float, center: float = 0.0,
                  width: float = 1.0) -> ScalarFn:
    def prim(t):
        t = np.asarray(t, dtype=float)
        lc = np.logaddexp((t - center) / width, -(t - center) / width)
        lc0 = np.logaddexp(-center / width, center / width)
        return base * t + amplitude * width * (lc - lc0)

    return ScalarFn(
        fn=lambda t: base + amplitude * np.tanh(
            (np.asarray(t, dtype=float) - center) / width),
        name="tanh_bounded",
        params={"base": base, "amplitude": amplitude,
                "center": center, "width": width},
        primitive=prim,
    )


def _exp_mobility(scale: float = 1.0, rate: float = 1.0) -> ScalarFn:
    if rate == 0.0:
        return _constant(scale)
    return ScalarFn(
        fn=lambda t: scale * np.exp(rate * np.asarray(t, dtype=float)),
        name="exp_mobility", params={"scale": scale, "rate": rate},
        primitive=lambda t: scale / rate * np.expm1(
            rate * np.asarray(t, dtype=float)),
        inverse_primitive=lambda u: np.log1p(
            rate * np.asarray(u, dtype=float) / scale) / rate,
    )


REGISTRY: dict[str, Callable[..., ScalarFn]] = {
    "constant": _constant,
    "affine": _affine,
    "tanh_bounded": _tanh_bounded,
    "exp_mobility": _exp_mobility,
}


def registry_fn(name: str, **params) -> ScalarFn:
    if name not in REGISTRY:
        raise ModelError(f"unknown coefficient function {name!r}; "
                         f"known: {sorted(REGISTRY)}")
    return REGISTRY[name](**params)


# ---------------------------------------------------------------------------
# Heat-conductivity primitive (one-variable substitution for the energy eq.)


def _adaptive_simpson(f, a: float, b: float, tol: float = 1e-12) -> float:
    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(lo, mid, flo, flm, fmid)
        right = simpson(mid, hi, fmid, frm, fhi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, mid, flo, flm, fmid, left, eps / 2.0, depth - 1)
                + recurse(mid, hi, fmid, frm, fhi, right, eps / 2.0, depth - 1))

    if a == b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, 48)


def _check_positive(kappa, lo: float, hi: float) -> None:
    ts = np.linspace(lo, hi, 33)
    vals = np.asarray([float(kappa(t)) for t in ts])
    if np.any(vals <= 0.0) or not np.all(np.isfinite(vals)):
        t_bad = ts[int(np.argmin(vals))]
        raise ModelError(
            f"heat conductivity must be strictly positive; sampled "
            f"{vals.min():g} at {t_bad:g}")


def kirchhoff(kappa: ScalarFn | Callable, T):
    """Primitive of the heat conductivity vanishing at zero, u = k(T).

    Uses the closed-form antiderivative when the function carries one,
    otherwise adaptive Simpson quadrature to 1e-12.
    """
    T_arr = np.asarray(T, dtype=float)
    if isinstance(kappa, ScalarFn) and kappa.primitive is not None:
        out = kappa.primitive(T_arr)
    else:
        span = float(np.max(np.abs(T_arr))) if T_arr.size else 0.0
        _check_positive(kappa, min(0.0, -span), max(0.0, span))
        out = np.vectorize(
            lambda t: _adaptive_simpson(lambda s: float(kappa(s)), 0.0, t))(T_arr)
    if np.isscalar(T) or np.ndim(T) == 0:
        return float(out)
    return out


def kirchhoff_inverse(kappa: ScalarFn | Callable, u):
    """Invert the conductivity primitive, T = k^{-1}(u), to 1e-12.

    Closed form where available; otherwise safeguarded Newton (the
    derivative of the primitive is the conductivity itself).
    """
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if isinstance(kappa, ScalarFn) and kappa.inverse_primitive is not None:
        out = kappa.inverse_primitive(u_arr)
    else:
        # bracket [lo, hi] with k(lo) <= u <= k(hi), then Newton
        span = max(1.0, float(np.max(np.abs(u_arr)))) if u_arr.size else 1.0
        lo, hi = -span, span
        for _ in range(200):
            klo, khi = kirchhoff(kappa, lo), kirchhoff(kappa, hi)
            if klo <= u_arr.min() and khi >= u_arr.max():
                break
            lo *= 2.0
            hi *= 2.0
        else:
            raise ModelError("conductivity primitive failed to bracket the data")
        _check_positive(kappa, lo, hi)
        T = u_arr / max(float(kappa(0.0)), 1e-30)
        T = np.clip(T, lo, hi)
        los = np.full_like(u_arr, lo)
        his = np.full_like(u_arr, hi)
        for _ in range(200):
            r = kirchhoff(kappa, T) - u_arr
            if np.max(np.abs(r)) <= 1e-12 * (1.0 + np.max(np.abs(u_arr))):
                break
            los = np.where(r < 0.0, T, los)
            his = np.where(r > 0.0, T, his)
            step = r / np.asarray(kappa(T), dtype=float)
            T_new = T - step
            outside = (T_new <= los) | (T_new >= his)
            T = np.where(outside, 0.5 * (los + his), T_new)
        out = T
    if np.isscalar(u) or np.ndim(u) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# The abstract coefficient set


StateArray = np.ndarray  # (m, n_components) frozen states
GradArray = np.ndarray   # (m, n_components, 2) frozen gradients


@dataclass(frozen=True)
class CoefficientSet:
    """Frozen-coefficient interface of one coupled system.

    Components are ordered (transport..., energy); the last transport
    component is the electrostatic potential whose fresh gradient feeds
    the drift terms of the preceding equations.
    """

    n_transport: int
    component_names: tuple[str, ...]
    diffusivity: Callable[[int, np.ndarray, StateArray], np.ndarray]
    drift: Callable[[int, np.ndarray, StateArray, np.ndarray], np.ndarray]
    zero_order: Callable[[int, np.ndarray, StateArray], np.ndarray]
    dissipation: Callable[[np.ndarray, StateArray, GradArray], np.ndarray]
    admissible: Callable[[StateArray], np.ndarray]
    state_floor: float = -math.inf   # lower bound on the energy component

    @property
    def n_components(self) -> int:
        return self.n_transport + 1


def require_admissible(coeffs: CoefficientSet, fields: Sequence[Field]) -> None:
    """Raise StateConstraintError naming the first offending node."""
    W = np.column_stack([f.values for f in fields])
    ok = coeffs.admissible(W)
    if not np.all(ok):
        node = int(np.argmin(ok))
        raise StateConstraintError(
            f"state constraint violated at node {node}: state {W[node].tolist()}")


# ---------------------------------------------------------------------------
# Thermistor


@dataclass(frozen=True)
class ThermistorParams:
    """Electro-thermal conductor with temperature-dependent coefficients.

    sigma        : electrical conductivity as a function of temperature
    kappa        : heat conductivity as a function of temperature
    heat_source  : volumetric source density h(x, y)
    phi_boundary : Dirichlet data for the electric potential
    temp_boundary: Dirichlet data for the temperature (transformed
                   internally through the conductivity primitive)
    temp_range   : range on which positivity of sigma, kappa is checked
    """

    sigma: ScalarFn
    kappa: ScalarFn
    heat_source: Callable[[float, float], float] | float = 0.0
    phi_boundary: Callable[[float, float], float] = lambda x, y: 0.0
    temp_boundary: Callable[[float, float], float] = lambda x, y: 0.0
    temp_range: tuple[float, float] = (0.0, 10.0)

    def source_at(self, xc: np.ndarray) -> np.ndarray:
        if callable(self.heat_source):
            return np.array([self.heat_source(float(x), float(y))
                             for x, y in xc])
        return np.full(len(xc), float(self.heat_source))

    def boundary_values(self) -> list[Callable[[float, float], float]]:
        kap = self.kappa
        tb = self.temp_boundary
        return [self.phi_boundary,
                lambda x, y: float(kirchhoff(kap, tb(x, y)))]


def thermistor_coefficients(p: ThermistorParams) -> CoefficientSet:
    """Coefficient set of the transformed thermistor system.

    The energy unknown is the conductivity primitive of the temperature,
    so its leading coefficient is one, and the potential equation sees
    the conductivity evaluated at the back-transformed state.
    """
    lo, hi = p.temp_range
    _check_positive(p.kappa, lo, hi)
    _check_positive(p.sigma, lo, hi)

    def sigma_hat(u: np.ndarray) -> np.ndarray:
        return np.asarray(p.sigma(kirchhoff_inverse(p.kappa, u)), dtype=float)

    def diffusivity(i, xc, W):
        if i == 0:
            return sigma_hat(W[:, 1])
        return np.ones(len(xc))

    def drift(i, xc, W, grad_pot):
        return np.zeros((len(xc), 2))

    def zero_order(i, xc, W):
        if i == 1:
            return -p.source_at(xc)
        return np.zeros(len(xc))

    def dissipation(xc, W, G):
        g = G[:, 0, :]
        return sigma_hat(W[:, 1]) * np.einsum("md,md->m", g, g)

    return CoefficientSet(
        n_transport=1,
        component_names=("potential", "energy"),
        diffusivity=diffusivity,
        drift=drift,
        zero_order=zero_order,
        dissipation=dissipation,
        admissible=lambda W: np.ones(W.shape[0], dtype=bool),
    )


# ---------------------------------------------------------------------------
# Non-isothermal Nernst-Planck


@dataclass(frozen=True)
class NernstPlanckParams:
    """Electrolyte with ion species in entropic variables.

    charges            : charge number per species
    diffusivity_factors: temperature factor of each species mobility
    permittivity       : state function of the full (m, N+1) state array
    heat_conductivity  : state function of the full state array
    ion_boundary       : Dirichlet data per species
    phi_boundary       : Dirichlet data for the potential
    temp_boundary      : Dirichlet data for the temperature
    gibbs_reference    : optional reference Gibbs energy per species
                         (zero by default, making the mobility the pure
                         exponential of the entropic variable)
    u_min              : hard floor for temperature evaluations
    """

    charges: tuple[float, ...]
    diffusivity_factors: tuple[ScalarFn, ...]
    permittivity: Callable[[StateArray], np.ndarray]
    heat_conductivity: Callable[[StateArray], np.ndarray]
    ion_boundary: tuple[Callable[[float, float], float], ...]
    phi_boundary: Callable[[float, float], float]
    temp_boundary: Callable[[float, float], float]
    gibbs_reference: tuple[ScalarFn, ...] | None = None
    u_min: float = 1e-8

    @property
    def n_species(self) -> int:
        return len(self.charges)

    def boundary_values(self) -> list[Callable[[float, float], float]]:
        return [*self.ion_boundary, self.phi_boundary, self.temp_boundary]


def state_fn_constant(value: float) -> Callable[[StateArray], np.ndarray]:
    return lambda W: np.full(W.shape[0], float(value))


def state_fn_of_temperature(fn: ScalarFn) -> Callable[[StateArray], np.ndarray]:
    return lambda W: np.asarray(fn(W[:, -1]), dtype=float)


def np_coefficients(p: NernstPlanckParams) -> CoefficientSet:
    """Coefficient set of the Nernst-Planck system.

    Component order: species 0..N-2, potential, temperature.  Species
    mobilities are the exponential of the entropic variable times the
    temperature factor; the drift of each species is its mobility times
    charge over temperature times the frozen potential gradient; the
    dissipation is the electric power of the free current.
    """
    ns = p.n_species
    n_t = ns + 1
    names = tuple(f"species_{i}" for i in range(ns)) + ("potential", "temperature")

    def check_state(W: StateArray, what: str) -> np.ndarray:
        u = W[:, -1]
        if np.any(u <= p.u_min):
            e = int(np.argmin(u))
            raise StateConstraintError(
                f"{what}: temperature {u[e]:.6g} at element {e} is at or "
                f"below the floor {p.u_min:g}")
        return u

    def mobility(i: int, W: StateArray) -> np.ndarray:
        u = W[:, -1]
        rho = W[:, i]
        if p.gibbs_reference is not None:
            rho = rho - np.asarray(p.gibbs_reference[i](u), dtype=float) / u
        return np.asarray(p.diffusivity_factors[i](u), dtype=float) * np.exp(rho)

    def diffusivity(i, xc, W):
        check_state(W, "coefficient evaluation")
        if i < ns:
            return mobility(i, W)
        if i == ns:
            return np.asarray(p.permittivity(W), dtype=float)
        return np.asarray(p.heat_conductivity(W), dtype=float)

    def drift(i, xc, W, grad_pot):
        if i < ns:
            u = check_state(W, "drift evaluation")
            m = mobility(i, W)
            return (m * p.charges[i] / u)[:, None] * grad_pot
        return np.zeros((len(xc), 2))

    def zero_order(i, xc, W):
        return np.zeros(len(xc))

    def dissipation(xc, W, G):
        u = check_state(W, "dissipation evaluation")
        grad_pot = G[:, ns, :]
        out = np.zeros(W.shape[0])
        for i in range(ns):
            m = mobility(i, W)
            force = G[:, i, :] + (p.charges[i] / u)[:, None] * grad_pot
            out += p.charges[i] * m * np.einsum("md,md->m", force, grad_pot)
        return out

    return CoefficientSet(
        n_transport=n_t,
        component_names=names,
        diffusivity=diffusivity,
        drift=drift,
        zero_order=zero_order,
        dissipation=dissipation,
        admissible=lambda W: W[:, -1] > p.u_min,
        state_floor=p.u_min,
    )


# ---------------------------------------------------------------------------
# Dissipation density and the entropy balance check


def dissipation_density(coeffs: CoefficientSet, fields: Sequence[Field]) -> np.ndarray:
    """Signed per-element dissipation from centroid states and exact
    element gradients; take the absolute value for the measure mass."""
    require_admissible(coeffs, fields)
    mesh = fields[0].mesh
    xc = mesh.centroids()
    W = np.column_stack([f.element_means() for f in fields])
    G = np.stack([f.element_gradients() for f in fields], axis=1)
    return coeffs.dissipation(xc, W, G)


def entropy_residual(p: NernstPlanckParams, fields: Sequence[Field]) -> float:
    """Relative defect of the stationary entropy balance.

    The divergence identity for the entropy flux (heat flux over
    temperature minus entropic flux of each species) is tested against
    the constant-one function: boundary outflux minus bulk production,
    relative to the production magnitude.  Quadrature-limited, so it
    shrinks under refinement; exactly zero in equilibrium.
    """
    mesh = fields[0].mesh
    ns = p.n_species
    W = np.column_stack([f.element_means() for f in fields])
    G = np.stack([f.element_gradients() for f in fields], axis=1)
    u = W[:, -1]
    if np.any(u <= p.u_min):
        e = int(np.argmin(u))
        raise StateConstraintError(
            f"entropy balance: temperature {u[e]:.6g} at element {e} below floor")

    coeffs = np_coefficients(p)
    grad_pot = G[:, ns, :]
    grad_u = G[:, ns + 1, :]
    kappa = np.asarray(p.heat_conductivity(W), dtype=float)
    heat_flux = -kappa[:, None] * grad_u

    entropy_flux = heat_flux / u[:, None]
    production = kappa * np.einsum("md,md->m", grad_u, grad_u) / u ** 2
    for i in range(ns):
        m = coeffs.diffusivity(i, mesh.centroids(), W)
        force = G[:, i, :] + (p.charges[i] / u)[:, None] * grad_pot
        j = -m[:, None] * force
        entropy_flux -= j * W[:, i][:, None]
        production += np.einsum("md,md->m", j, j) / m

    areas = np.abs(mesh.areas())
    bulk = float((areas * production).sum())

    normals, lengths = boundary_normals(mesh)
    adjacent = boundary_edge_elements(mesh)
    outflux = float(np.sum(lengths * np.einsum(
        "ed,ed->e", entropy_flux[adjacent], normals)))

    scale = abs(bulk)
    gap = abs(outflux - bulk)
    if scale < 1e-300:
        return gap
    return gap / scale


def entropy_production_density(p: NernstPlanckParams,
                               fields: Sequence[Field]) -> np.ndarray:
    """Per-element squared-flux part of the entropy production (always
    nonnegative by construction)."""
    mesh = fields[0].mesh
    ns = p.n_species
    W = np.column_stack([f.element_means() for f in fields])
    G = np.stack([f.element_gradients() for f in fields], axis=1)
    u = W[:, -1]
    coeffs = np_coefficients(p)
    grad_pot = G[:, ns, :]
    out = np.zeros(W.shape[0])
    for i in range(ns):
        m = coeffs.diffusivity(i, mesh.centroids(), W)
        force = G[:, i, :] + (p.charges[i] / u)[:, None] * grad_pot
        j = -m[:, None] * force
        out += np.einsum("md,md->m", j, j) / m
    return out


# ---------------------------------------------------------------------------
# Growth certificates


@dataclass(frozen=True)
class GrowthCertificate:
    """Sampled ellipticity window and quadratic-growth bound.

    nu, mu are per-equation leading-coefficient bounds; omega is the
    sampled supremum of dissipation over the squared transport-gradient
    mass (reported per transport equation); ratio_bound is the largest
    omega over nu across the transport rows.
    """

    nu: tuple[float, ...]
    mu: tuple[float, ...]
    omega: tuple[float, ...]
    ratio_bound: float
    samples: int
    box: tuple[tuple[float, float], ...]


def certify_growth(coeffs: CoefficientSet,
                   box: Sequence[tuple[float, float]],
                   samples: int = 2000,
                   seed: int = 0,
                   gradient_scale: float = 1.0) -> GrowthCertificate:
    """Monte-Carlo plus corner sampling of the structural bounds.

    Samples the leading coefficients over the state box (corners
    included, so monotone registry functions attain their range) and
    the ratio of |dissipation| to the squared transport-gradient mass
    over random and axis-aligned gradients.
    """
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    nc = coeffs.n_components
    if len(box) != nc:
        raise ContractError(f"box must give a range per component ({nc})")
    if samples < 1000:
        raise ContractError("certification needs at least 1000 samples")

    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    states = lo + (hi - lo) * rng.random((samples, nc))
    corners = np.array(np.meshgrid(*[(l, h) for l, h in box],
                                   indexing="ij")).reshape(nc, -1).T
    states = np.vstack([states, corners])
    xs = rng.random((states.shape[0], 2))

    if not np.all(coeffs.admissible(states)):
        raise ContractError("sampling box leaves the admissible state set")

    nu, mu = [], []
    for i in range(nc):
        vals = np.asarray(coeffs.diffusivity(i, xs, states), dtype=float)
        worst = int(np.argmin(vals))
        if vals[worst] <= 0.0 or not np.all(np.isfinite(vals)):
            raise CertificateError(
                f"equation {i}: leading coefficient {vals[worst]:.6g} at "
                f"state {states[worst].tolist()}")
        nu.append(float(vals.min()))
        mu.append(float(vals.max()))

    n_t = coeffs.n_transport
    ratio = 0.0
    # random gradients plus per-component axis gradients at every state
    z_rand = rng.standard_normal((states.shape[0], nc, 2)) * gradient_scale
    z_sets = [z_rand]
    for i in range(n_t):
        z_axis = np.zeros((states.shape[0], nc, 2))
        z_axis[:, i, 0] = gradient_scale
        z_sets.append(z_axis)
    for Z in z_sets:
        dissip = np.abs(np.asarray(coeffs.dissipation(xs, states, Z), dtype=float))
        denom = np.einsum("mid,mid->m", Z[:, :n_t, :], Z[:, :n_t, :])
        degenerate = denom < 1e-30
        if np.any(degenerate & (dissip > 1e-30)):
            bad = int(np.argmax(degenerate & (dissip > 1e-30)))
            raise CertificateError(
                f"dissipation {dissip[bad]:.6g} with vanishing transport "
                f"gradients at state {states[bad].tolist()}")
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(degenerate, 0.0, dissip / denom)
        ratio = max(ratio, float(r.max()))

    omega = tuple(ratio for _ in range(n_t))
    ratio_bound = max(ratio / nu[i] for i in range(n_t))
    return GrowthCertificate(tuple(nu), tuple(mu), omega, ratio_bound,
                             states.shape[0], box)
