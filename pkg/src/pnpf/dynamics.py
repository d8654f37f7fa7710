"""Reformulated electro-thermal dynamics and IMEX time stepping.

The evolved unknowns are the species density perturbations n_i around
constant levels delta_i, the temperature perturbation theta around 1 and
the total charge m = sum_i z_i rho_i, all stored as rfft spectra on a
periodic grid.  The potential phi, the solvent velocity u0 and the
pressure P0 are slaved quantities: phi solves -eps lap(phi) = m, u0
solves the forced Stokes balance after Leray projection, and P0 is the
zero-mean pressure representative (computed for output only, it feeds
nothing back).

The right-hand sides split into a constant-coefficient linear part,
diagonalized per Fourier mode by :func:`linear_symbol`, and remainder
terms assembled pointwise in physical space by :func:`nonlinear_terms`.
The temperature remainder involves the variable heat capacity through
the factor 1/(a + sum_i k_B c_i n_i); :func:`temperature_rhs_direct`
evaluates the same rate without the linear/nonlinear split, and the test
suite holds the two routes together on random fields.  The charge m is
evolved redundantly (its equation carries a zero-order damping term that
the species equations lack individually); the drift of m away from
sum_i z_i n_i is tracked by :func:`charge_consistency_residual`, never
silently corrected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from .admissibility import dissipation_coefficients
from .model import ParameterError, derived_constants

__all__ = [
    "DegenerateStateError",
    "State",
    "FlowFields",
    "LinearSymbol",
    "StabilityScan",
    "Trajectory",
    "solve_potential",
    "solve_solvent_flow",
    "solvent_flow_closed_form",
    "species_velocities",
    "flow_fields",
    "nonlinear_terms",
    "NonlinearTerms",
    "temperature_rhs_direct",
    "linear_symbol",
    "spectral_stability_scan",
    "IMEXStepper",
    "step",
    "charge_consistency_residual",
    "random_state",
    "simulate",
]

#: a run aborts as unstable when the energy exceeds this multiple of E(0)
BLOWUP_FACTOR = 1e3


class DegenerateStateError(RuntimeError):
    """A pointwise denominator of the dynamics lost positivity.

    Attributes
    ----------
    field : str
        Name of the offending quantity (e.g. ``'rho[1]'``).
    point : tuple of int
        Grid multi-index where the minimum is attained.
    value : float
        The nonpositive value found there.
    """

    def __init__(self, field, point, value):
        point = tuple(int(p) for p in point)
        value = float(value)
        super().__init__(
            f"{field} must stay positive but reaches {value:.6g} "
            f"at grid point {point}"
        )
        self.field = field
        self.point = point
        self.value = value


def _require_pointwise_positive(name, values):
    worst = int(np.argmin(values))
    if values.flat[worst] <= 0.0:
        raise DegenerateStateError(
            name, np.unravel_index(worst, values.shape), values.flat[worst]
        )


@dataclass
class State:
    """Spectral state (n_1..n_N, theta, m) at time t.

    ``n`` carries a leading species axis; all arrays share the grid's
    spectral shape.  Means of every field stay zero along the flow; the
    charge field additionally matches sum_i z_i n_i up to scheme error
    (tracked by :func:`charge_consistency_residual`).
    """

    n: np.ndarray
    theta: np.ndarray
    m: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=complex)
        self.theta = np.asarray(self.theta, dtype=complex)
        self.m = np.asarray(self.m, dtype=complex)
        self.t = float(self.t)
        if self.n.ndim < 2:
            raise ParameterError("n must have a leading species axis")
        if self.n.shape[1:] != self.theta.shape or self.theta.shape != self.m.shape:
            raise ParameterError(
                f"inconsistent field shapes: n {self.n.shape}, "
                f"theta {self.theta.shape}, m {self.m.shape}"
            )

    @property
    def n_species(self):
        return self.n.shape[0]

    @classmethod
    def zeros(cls, grid, n_species, t=0.0):
        shape = grid.spectral_shape
        return cls(
            n=np.zeros((n_species,) + shape, dtype=complex),
            theta=np.zeros(shape, dtype=complex),
            m=np.zeros(shape, dtype=complex),
            t=t,
        )

    def copy(self):
        return State(n=self.n.copy(), theta=self.theta.copy(), m=self.m.copy(), t=self.t)


@dataclass(frozen=True)
class FlowFields:
    """Slaved elliptic fields of a state.

    ``phi`` solves -eps lap(phi) = m with zero mean; ``u0`` is the
    divergence-free, zero-mean solvent velocity; ``P0`` the zero-mean
    pressure representative and ``u`` the per-species velocities, both
    None unless requested.  All spectral-layout arrays.
    """

    phi: np.ndarray
    u0: np.ndarray
    P0: np.ndarray | None = None
    u: np.ndarray | None = None


def _p2s(grid, phys, use_dealias):
    """Physical product back to spectrum, truncated unless disabled."""
    fh = grid.to_spectral(phys)
    return spectral.dealias(grid, fh) if use_dealias else fh


def _to_physical_vec(grid, vh):
    return np.stack([grid.to_physical(vh[ax]) for ax in range(vh.shape[0])])


def _zero_mode(grid):
    return (0,) * grid.dim


def solve_potential(grid, m, eps):
    """Zero-mean potential phi with -eps lap(phi) = m.

    Raises :class:`~pnpf.model.ParameterError` when m carries a mean,
    since the periodic problem is only solvable on mean-free charges.
    """
    try:
        return spectral.inverse_neg_laplacian(grid, m) / float(eps)
    except ValueError:
        raise ParameterError(
            "the charge m must be mean free: -eps lap(phi) = m has no "
            "periodic solution otherwise"
        ) from None


def _charge_force(grid, m, phi, use_dealias):
    """Spectrum of the electric forcing m grad(phi), formed pointwise."""
    m_phys = grid.to_physical(m)
    grad_phi = _to_physical_vec(grid, spectral.gradient(grid, phi))
    return np.stack(
        [_p2s(grid, m_phys * grad_phi[ax], use_dealias) for ax in range(grid.dim)]
    )


def _solvent_velocity(grid, force, lambda0):
    proj = spectral.leray_project(grid, force)
    # the continuous forcing is mean free (it integrates to a boundary
    # term); drop the quadrature roundoff so the inversion stays clean
    proj[(slice(None),) + _zero_mode(grid)] = 0.0
    return -spectral.inverse_neg_laplacian(grid, proj) / float(lambda0)


def solve_solvent_flow(grid, state, coeffs, eq, dealias=True):
    """Solvent velocity and pressure from the forced Stokes balance.

    The balance lambda0 lap(u0) = grad(P0) + k_B sum_i grad(rho_i T)
    + m grad(phi) determines u0 after Leray projection (the gradient
    terms project away) and P0 from its divergence:

        u0 = -(1/lambda0) (-lap)^(-1) P[m grad(phi)],
        P0 = -k_B sum_i (n_i + delta_i theta + n_i theta)
             + (-lap)^(-1) div(m grad(phi)),

    both with the zero-mean representative.  Products are dealiased
    unless ``dealias`` is false.  Returns (u0, P0).
    """
    phi = solve_potential(grid, state.m, coeffs.eps)
    force = _charge_force(grid, state.m, phi, dealias)
    u0 = _solvent_velocity(grid, force, coeffs.lambda0)

    theta_phys = grid.to_physical(state.theta)
    gas = np.zeros(grid.spectral_shape, dtype=complex)
    for i in range(state.n_species):
        gas += state.n[i]
        gas += _p2s(grid, grid.to_physical(state.n[i]) * theta_phys, dealias)
    gas += float(np.sum(eq.delta)) * state.theta
    P0 = -coeffs.k_B * gas + spectral.inverse_neg_laplacian(
        grid, spectral.divergence(grid, force)
    )
    P0[_zero_mode(grid)] = 0.0
    return u0, P0


def solvent_flow_closed_form(grid, state, coeffs, eq, dealias=True):
    """Solvent velocity assembled species by species.

    Independent route to the same field as :func:`solve_solvent_flow`:
    with psi = (-lap)^(-1)(sum_j z_j rho_j) built from the densities
    (not from the stored charge m),

        u0 = -(-lap)^(-1) sum_i P[(z_i/(eps lambda0)) rho_i grad(psi)],

    each species product formed and projected separately.  Used to pin
    the reformulated solve against the original balance.
    """
    charge = np.tensordot(coeffs.z, state.n, axes=(0, 0))
    charge[_zero_mode(grid)] += float(np.sum(coeffs.z * eq.delta)) * float(
        grid.modes
    ) ** grid.dim
    psi = spectral.inverse_neg_laplacian(grid, charge)
    grad_psi = _to_physical_vec(grid, spectral.gradient(grid, psi))

    accum = np.zeros((grid.dim,) + grid.spectral_shape, dtype=complex)
    for i in range(state.n_species):
        rho = eq.delta[i] + grid.to_physical(state.n[i])
        term = np.stack(
            [_p2s(grid, rho * grad_psi[ax], dealias) for ax in range(grid.dim)]
        )
        accum += (coeffs.z[i] / (coeffs.eps * coeffs.lambda0)) * spectral.leray_project(
            grid, term
        )
    accum[(slice(None),) + _zero_mode(grid)] = 0.0
    return -spectral.inverse_neg_laplacian(grid, accum)


def species_velocities(grid, state, flow, coeffs, eq, dealias=True):
    """Per-species velocities from the pointwise drag balance.

    Each species satisfies nu_i rho_i (u_i - u0) = -k_B grad(rho_i T)
    - z_i rho_i grad(phi), so

        u_i = u0 - [k_B/(nu_i rho_i)] grad(rho_i T) - (z_i/nu_i) grad(phi)

    evaluated pointwise.  Densities must be positive everywhere; the
    first failing grid point is reported otherwise.  Returns an array
    with leading (species, component) axes.
    """
    theta_phys = grid.to_physical(state.theta)
    grad_phi = _to_physical_vec(grid, spectral.gradient(grid, flow.phi))
    u0_phys = _to_physical_vec(grid, flow.u0)
    out = np.empty((state.n_species, grid.dim) + grid.spectral_shape, dtype=complex)
    for i in range(state.n_species):
        rho = eq.delta[i] + grid.to_physical(state.n[i])
        _require_pointwise_positive(f"rho[{i}]", rho)
        rho_T = _p2s(grid, rho * (1.0 + theta_phys), dealias)
        grad_rho_T = _to_physical_vec(grid, spectral.gradient(grid, rho_T))
        for ax in range(grid.dim):
            vel = (
                u0_phys[ax]
                - (coeffs.k_B / coeffs.nu[i]) * grad_rho_T[ax] / rho
                - (coeffs.z[i] / coeffs.nu[i]) * grad_phi[ax]
            )
            out[i, ax] = grid.to_spectral(vel)
    return out


def flow_fields(grid, state, coeffs, eq, with_species=False, dealias=True):
    """Assemble all slaved fields of a state into :class:`FlowFields`."""
    phi = solve_potential(grid, state.m, coeffs.eps)
    u0, P0 = solve_solvent_flow(grid, state, coeffs, eq, dealias=dealias)
    flow = FlowFields(phi=phi, u0=u0, P0=P0)
    if with_species:
        u = species_velocities(grid, state, flow, coeffs, eq, dealias=dealias)
        flow = FlowFields(phi=phi, u0=u0, P0=P0, u=u)
    return flow


def _light_flow(grid, state, coeffs, dealias):
    """phi and u0 only, skipping the pressure (stepper hot path)."""
    phi = solve_potential(grid, state.m, coeffs.eps)
    force = _charge_force(grid, state.m, phi, dealias)
    return FlowFields(phi=phi, u0=_solvent_velocity(grid, force, coeffs.lambda0))


@dataclass(frozen=True)
class NonlinearTerms:
    """Remainder spectra of the four evolution equations.

    ``R_theta`` is the raw temperature remainder; the stepper divides by
    the constant heat capacity a when forming the rate.
    """

    R_n: np.ndarray
    R_u0: np.ndarray
    R_m: np.ndarray
    R_theta: np.ndarray


def nonlinear_terms(grid, state, flow, coeffs, eq, dealias=True):
    """Remainder terms of the perturbation equations.

    All products are formed pointwise in physical space and the results
    truncated to the 2/3 band unless ``dealias`` is false (the untruncated
    route exists so that algebraically identical regroupings can be
    compared at roundoff level).  With rho_i = delta_i + n_i, T = 1+theta:

    * species:  R_n_i = -u0.grad(n_i) + (k_B/nu_i) lap(n_i theta)
      - (z_i/(eps nu_i)) n_i m + (z_i/nu_i) grad(n_i).grad(phi);
    * solvent:  R_u0 = k_B sum_i grad(n_i theta) + m grad(phi);
    * charge:   R_m = -u0.grad(m) + k_B sum_i (z_i/nu_i) lap(n_i theta)
      - (1/eps) sum_i (z_i^2/nu_i) n_i m + sum_i (z_i^2/nu_i)
      grad(n_i).grad(phi);
    * temperature: R_theta = -a u0.grad(theta) + a Rstar/F - (F - a)/F *
      [b lap(theta) + sum_i (k_B^2/nu_i) lap(n_i) - (1/eps) sum_i
      (k_B z_i delta_i/nu_i) m], where F = a + sum_i k_B c_i n_i is the
      pointwise heat capacity and Rstar collects the advective heating,
      Joule heating lambda0 |grad u0|^2, the frictional heating
      |k_B grad(rho_i T) + z_i rho_i grad(phi)|^2 / (nu_i rho_i) and the
      remaining quadratic flux couplings term by term.

    The charge entering the frictional heating is scaled by
    ``coeffs.charge_force_factor`` (default 1).  Positivity of rho_i and
    of F is checked pointwise and violations raise
    :class:`DegenerateStateError`.
    """
    n_sp = state.n_species
    z, nu, delta, k_B = coeffs.z, coeffs.nu, eq.delta, coeffs.k_B
    eps = coeffs.eps
    dc = derived_constants(coeffs, eq)
    a, b = dc.a, dc.b

    n_phys = np.stack([grid.to_physical(state.n[i]) for i in range(n_sp)])
    theta_phys = grid.to_physical(state.theta)
    m_phys = grid.to_physical(state.m)
    u0_phys = _to_physical_vec(grid, flow.u0)
    grad_phi = _to_physical_vec(grid, spectral.gradient(grid, flow.phi))
    grad_theta = _to_physical_vec(grid, spectral.gradient(grid, state.theta))
    grad_m = _to_physical_vec(grid, spectral.gradient(grid, state.m))
    grad_n = [
        _to_physical_vec(grid, spectral.gradient(grid, state.n[i]))
        for i in range(n_sp)
    ]

    F_phys = a + k_B * np.tensordot(coeffs.c, n_phys, axes=(0, 0))
    _require_pointwise_positive("heat capacity a + k_B sum c_i n_i", F_phys)
    rho_phys = [delta[i] + n_phys[i] for i in range(n_sp)]
    for i in range(n_sp):
        _require_pointwise_positive(f"rho[{i}]", rho_phys[i])

    # shared per-species products
    ntheta_hat = [
        _p2s(grid, n_phys[i] * theta_phys, dealias) for i in range(n_sp)
    ]
    lap_ntheta = [spectral.laplacian(grid, ntheta_hat[i]) for i in range(n_sp)]
    nm_hat = [_p2s(grid, n_phys[i] * m_phys, dealias) for i in range(n_sp)]
    gradn_gradphi_hat = [
        _p2s(grid, np.einsum("a...,a...->...", grad_n[i], grad_phi), dealias)
        for i in range(n_sp)
    ]

    R_n = np.empty_like(state.n)
    for i in range(n_sp):
        adv = np.einsum("a...,a...->...", u0_phys, grad_n[i])
        R_n[i] = (
            -_p2s(grid, adv, dealias)
            + (k_B / nu[i]) * lap_ntheta[i]
            - (z[i] / (eps * nu[i])) * nm_hat[i]
            + (z[i] / nu[i]) * gradn_gradphi_hat[i]
        )

    R_u0 = _charge_force(grid, state.m, flow.phi, dealias)
    for i in range(n_sp):
        R_u0 += k_B * spectral.gradient(grid, ntheta_hat[i])

    adv_m = np.einsum("a...,a...->...", u0_phys, grad_m)
    R_m = -_p2s(grid, adv_m, dealias)
    for i in range(n_sp):
        R_m += (
            k_B * (z[i] / nu[i]) * lap_ntheta[i]
            - (z[i] ** 2 / (eps * nu[i])) * nm_hat[i]
            + (z[i] ** 2 / nu[i]) * gradn_gradphi_hat[i]
        )

    # temperature remainder: the f(n)-corrected bracket and the source
    brk = b * spectral.laplacian(grid, state.theta)
    for i in range(n_sp):
        brk += (k_B**2 / nu[i]) * spectral.laplacian(grid, state.n[i])
        brk -= (k_B * z[i] * delta[i] / (eps * nu[i])) * state.m
    brk_phys = grid.to_physical(brk)

    zf = coeffs.charge_force_factor * z
    rstar = np.zeros(grid.shape)
    for i in range(n_sp):
        # grad and lap of the full flux density rho_i T - delta_i
        flux_hat = state.n[i] + delta[i] * state.theta + ntheta_hat[i]
        g_i = _to_physical_vec(grid, spectral.gradient(grid, flux_hat))
        lap_flux = grid.to_physical(spectral.laplacian(grid, flux_hat))
        gn_gi = np.einsum("a...,a...->...", grad_n[i], g_i)
        gi_gtheta = np.einsum("a...,a...->...", g_i, grad_theta)
        gphi_gtheta = np.einsum("a...,a...->...", grad_phi, grad_theta)
        force_sq = np.zeros(grid.shape)
        for ax in range(grid.dim):
            force_sq += (k_B * g_i[ax] + zf[i] * rho_phys[i] * grad_phi[ax]) ** 2
        rstar += (
            (k_B**2 * coeffs.c[i] / nu[i]) * gi_gtheta
            + (k_B * coeffs.c[i] * z[i] / nu[i]) * rho_phys[i] * gphi_gtheta
            + (k_B**2 / nu[i]) * grid.to_physical(lap_ntheta[i])
            - (k_B * z[i] / (eps * nu[i])) * n_phys[i] * m_phys
            - (k_B**2 / nu[i]) * gn_gi / rho_phys[i]
            + (k_B**2 / nu[i]) * lap_flux * theta_phys
            - (k_B * z[i] / (eps * nu[i])) * rho_phys[i] * m_phys * theta_phys
            - (k_B**2 / nu[i]) * theta_phys * gn_gi / rho_phys[i]
            + force_sq / (nu[i] * rho_phys[i])
        )
    grad_u0_sq = np.zeros(grid.shape)
    for ax in range(grid.dim):
        comp = _to_physical_vec(grid, spectral.gradient(grid, flow.u0[ax]))
        grad_u0_sq += np.einsum("a...,a...->...", comp, comp)
    rstar += coeffs.lambda0 * grad_u0_sq

    adv_theta = np.einsum("a...,a...->...", u0_phys, grad_theta)
    correction = (F_phys - a) / F_phys
    R_theta = (
        -a * _p2s(grid, adv_theta, dealias)
        + _p2s(grid, a * rstar / F_phys, dealias)
        - _p2s(grid, correction * brk_phys, dealias)
    )
    return NonlinearTerms(R_n=R_n, R_u0=R_u0, R_m=R_m, R_theta=R_theta)


def temperature_rhs_direct(grid, state, flow, coeffs, eq, dealias=True):
    """Temperature rate evaluated without the linear/nonlinear split.

    Works directly on rho_i = delta_i + n_i and T = 1 + theta:

        F dT/dt = k lap(T) - F u0.grad(T)
                  + sum_i (k_B^2 c_i/nu_i) grad(rho_i T).grad(T)
                  + sum_i (k_B c_i z_i/nu_i) rho_i grad(phi).grad(T)
                  + lambda0 |grad u0|^2
                  + sum_i |k_B grad(rho_i T) + z_i rho_i grad(phi)|^2
                    / (nu_i rho_i)
                  + sum_i [(k_B^2/nu_i) lap(rho_i T)
                           - (k_B^2/(nu_i rho_i)) grad(rho_i).grad(rho_i T)
                           - (k_B z_i/(eps nu_i)) rho_i m] T

    with F = sum over solvent and species of k_B c_i rho_i.  Returns the
    spectrum of dtheta/dt.  This is the cross-check oracle for the split
    evaluation in :func:`nonlinear_terms`; the two agree pointwise up to
    roundoff when both run with ``dealias=False``.
    """
    n_sp = state.n_species
    z, nu, k_B, eps = coeffs.z, coeffs.nu, coeffs.k_B, coeffs.eps

    n_phys = np.stack([grid.to_physical(state.n[i]) for i in range(n_sp)])
    theta_phys = grid.to_physical(state.theta)
    m_phys = grid.to_physical(state.m)
    T_phys = 1.0 + theta_phys
    u0_phys = _to_physical_vec(grid, flow.u0)
    grad_phi = _to_physical_vec(grid, spectral.gradient(grid, flow.phi))
    grad_theta = _to_physical_vec(grid, spectral.gradient(grid, state.theta))

    F_phys = k_B * coeffs.c0 * coeffs.rho0 + np.zeros(grid.shape)
    rho_phys = []
    for i in range(n_sp):
        rho = eq.delta[i] + n_phys[i]
        rho_phys.append(rho)
        F_phys = F_phys + k_B * coeffs.c[i] * rho
    _require_pointwise_positive("heat capacity sum k_B c_i rho_i", F_phys)
    for i in range(n_sp):
        _require_pointwise_positive(f"rho[{i}]", rho_phys[i])

    rhs = grid.to_physical(coeffs.k * spectral.laplacian(grid, state.theta))
    rhs -= F_phys * np.einsum("a...,a...->...", u0_phys, grad_theta)

    zf = coeffs.charge_force_factor * z
    for i in range(n_sp):
        rhoT_hat = _p2s(grid, rho_phys[i] * T_phys, dealias)
        grad_rhoT = _to_physical_vec(grid, spectral.gradient(grid, rhoT_hat))
        lap_rhoT = grid.to_physical(spectral.laplacian(grid, rhoT_hat))
        grad_n_i = _to_physical_vec(grid, spectral.gradient(grid, state.n[i]))
        rhs += (k_B**2 * coeffs.c[i] / nu[i]) * np.einsum(
            "a...,a...->...", grad_rhoT, grad_theta
        )
        rhs += (k_B * coeffs.c[i] * z[i] / nu[i]) * rho_phys[i] * np.einsum(
            "a...,a...->...", grad_phi, grad_theta
        )
        force_sq = np.zeros(grid.shape)
        for ax in range(grid.dim):
            force_sq += (k_B * grad_rhoT[ax] + zf[i] * rho_phys[i] * grad_phi[ax]) ** 2
        rhs += force_sq / (nu[i] * rho_phys[i])
        rhs += (
            (k_B**2 / nu[i]) * lap_rhoT
            - (k_B**2 / nu[i])
            * np.einsum("a...,a...->...", grad_n_i, grad_rhoT)
            / rho_phys[i]
            - (k_B * z[i] / (eps * nu[i])) * rho_phys[i] * m_phys
        ) * T_phys

    grad_u0_sq = np.zeros(grid.shape)
    for ax in range(grid.dim):
        comp = _to_physical_vec(grid, spectral.gradient(grid, flow.u0[ax]))
        grad_u0_sq += np.einsum("a...,a...->...", comp, comp)
    rhs += coeffs.lambda0 * grad_u0_sq

    return _p2s(grid, rhs / F_phys, dealias)


@dataclass(frozen=True)
class LinearSymbol:
    """Constant-coefficient part of the dynamics at one wavenumber.

    ``A`` acts on the stacked mode vector (n_1..n_N, theta, m); the
    potential is eliminated through lap(phi) = -m/eps, which leaves a
    wavenumber-independent coupling in the m column.
    """

    xi_sq: float
    A: np.ndarray


def _symbol_batch(coeffs, eq, xi_sq):
    """Stacked symbol matrices, one (N+2) x (N+2) block per |xi|^2."""
    xi_sq = np.asarray(xi_sq, dtype=float).ravel()
    n = coeffs.n_species
    z, nu, delta, k_B = coeffs.z, coeffs.nu, eq.delta, coeffs.k_B
    dc = derived_constants(coeffs, eq)
    a, b, nu_bar = dc.a, dc.b, dc.nu_harm
    S = float(np.sum(z * delta / nu))
    Q = float(np.sum(z**2 * delta / nu))

    A = np.zeros((xi_sq.size, n + 2, n + 2))
    idx = np.arange(n)
    A[:, idx, idx] = -np.outer(xi_sq, k_B / nu)
    A[:, :n, n] = -np.outer(xi_sq, k_B * delta / nu)
    A[:, :n, n + 1] = -(z * delta / (coeffs.eps * nu))[None, :]
    A[:, n, :n] = -np.outer(xi_sq, k_B**2 / (a * nu))
    A[:, n, n] = -(b / a) * xi_sq
    A[:, n, n + 1] = -k_B * S / (a * coeffs.eps)
    A[:, n + 1, :n] = -np.outer(xi_sq, k_B * (1.0 / nu - 1.0 / nu_bar) * z)
    A[:, n + 1, n] = -k_B * S * xi_sq
    A[:, n + 1, n + 1] = -(k_B / nu_bar) * xi_sq - Q / coeffs.eps
    return A


def linear_symbol(coeffs, eq, xi_sq):
    """Symbol of the linearized dynamics at squared wavenumber xi_sq.

    Rows follow the evolution of (n_1..n_N, theta, m) with the potential
    eliminated; defined for xi_sq = 0 as well, where only the m column
    survives and the spectrum is {0 (N+1 times), -Q/eps} with
    Q = sum_i z_i^2 delta_i / nu_i.
    """
    xi_sq = float(xi_sq)
    if not np.isfinite(xi_sq) or xi_sq < 0:
        raise ParameterError(f"xi_sq must be finite and nonnegative, got {xi_sq}")
    return LinearSymbol(xi_sq=xi_sq, A=_symbol_batch(coeffs, eq, [xi_sq])[0])


@dataclass(frozen=True)
class StabilityScan:
    """Worst eigenvalue real part of the symbol over a wavenumber grid."""

    max_real_part: float
    xi_sq_at_max: float
    xi_sq: np.ndarray
    real_parts: np.ndarray


def spectral_stability_scan(coeffs, eq, xi_grid):
    """Dense eigenvalue sweep of the linear symbol.

    Evaluates the symbol on every |xi|^2 in ``xi_grid``, computes all
    eigenvalues with a dense solver and returns the maximum real part
    together with its location and the per-point maxima.
    """
    xi = np.asarray(list(xi_grid), dtype=float).ravel()
    if xi.size == 0:
        raise ParameterError("xi_grid must contain at least one value")
    if not np.all(np.isfinite(xi)) or np.any(xi < 0):
        raise ParameterError("xi_grid entries must be finite and nonnegative")
    A = _symbol_batch(coeffs, eq, xi)
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as err:
        raise RuntimeError(f"symbol eigenvalue solve failed: {err}") from err
    real_parts = ev.real.max(axis=1)
    k = int(np.argmax(real_parts))
    return StabilityScan(
        max_real_part=float(real_parts[k]),
        xi_sq_at_max=float(xi[k]),
        xi_sq=xi,
        real_parts=real_parts,
    )


def _stack(state):
    return np.concatenate([state.n, state.theta[None], state.m[None]], axis=0)


def _unstack(y, t):
    return State(n=y[:-2], theta=y[-2], m=y[-1], t=t)


class IMEXStepper:
    """Fixed-step integrator: exact per-mode linear solve, explicit rest.

    ``imex1`` advances with (I - dt A)^(-1) applied to the state plus the
    explicit remainder (first order).  ``imex2`` takes an imex1 half step
    to the midpoint, evaluates the remainder there, and closes with the
    trapezoidal linear update (second order).  Propagators are built once
    per (grid, coefficients, dt, scheme); the mean of m is re-zeroed
    after every step to keep roundoff out of the elliptic solves.
    """

    def __init__(self, grid, coeffs, eq, dt, scheme="imex1", dealias=True):
        if scheme not in ("imex1", "imex2"):
            raise ParameterError(f"scheme must be 'imex1' or 'imex2', got {scheme!r}")
        dt = float(dt)
        if not np.isfinite(dt) or dt <= 0:
            raise ParameterError(f"dt must be positive, got {dt}")
        self.grid = grid
        self.coeffs = coeffs
        self.eq = eq
        self.dt = dt
        self.scheme = scheme
        self.dealias = bool(dealias)
        self._a = derived_constants(coeffs, eq).a

        A = _symbol_batch(coeffs, eq, grid.xi_sq.ravel())
        eye = np.eye(coeffs.n_species + 2)
        try:
            if scheme == "imex1":
                self._full = np.linalg.inv(eye - dt * A)
            else:
                self._half = np.linalg.inv(eye - 0.5 * dt * A)
                self._trap = self._half @ (eye + 0.5 * dt * A)
        except np.linalg.LinAlgError as err:
            raise ParameterError(
                f"implicit update singular at dt={dt:g}; the symbol has an "
                f"eigenvalue at 1/dt"
            ) from err

    def _remainder(self, state):
        """Stacked nonlinear rates (R_n, R_theta/a, R_m) as (N+2, modes)."""
        flow = _light_flow(self.grid, state, self.coeffs, self.dealias)
        R = nonlinear_terms(
            self.grid, state, flow, self.coeffs, self.eq, dealias=self.dealias
        )
        stacked = np.concatenate(
            [R.R_n, (R.R_theta / self._a)[None], R.R_m[None]], axis=0
        )
        return stacked.reshape(stacked.shape[0], -1)

    def _apply(self, prop, vec):
        return np.einsum("kij,jk->ik", prop, vec)

    def step(self, state):
        y = _stack(state)
        shape = y.shape
        yf = y.reshape(shape[0], -1)
        R = self._remainder(state)
        if self.scheme == "imex1":
            out = self._apply(self._full, yf + self.dt * R)
        else:
            mid = self._apply(self._half, yf + 0.5 * self.dt * R)
            mid_state = _unstack(mid.reshape(shape), state.t + 0.5 * self.dt)
            R_mid = self._remainder(mid_state)
            out = self._apply(self._trap, yf) + self.dt * self._apply(
                self._half, R_mid
            )
        out = out.reshape(shape)
        out[-1].flat[0] = 0.0
        return _unstack(out.copy(), state.t + self.dt)


def step(grid, state, dt, coeffs, eq, scheme="imex1", dealias=True):
    """Advance one time step (convenience wrapper building a stepper)."""
    return IMEXStepper(grid, coeffs, eq, dt, scheme=scheme, dealias=dealias).step(state)


def charge_consistency_residual(grid, state, coeffs):
    """L2 distance between the evolved charge and sum_i z_i n_i."""
    mismatch = state.m - np.tensordot(coeffs.z, state.n, axes=(0, 0))
    return float(np.sqrt(spectral.sobolev_norm_sq(grid, mismatch, 0)))


def random_state(grid, coeffs, s=2, amplitude=1e-2, band=None, seed=0):
    """Band-limited random initial perturbation of prescribed size.

    Species and temperature spectra are drawn independently (zero mean,
    support inside ``band``, defaulting to the dealias cutoff), the
    charge is initialized consistently as m = sum_i z_i n_i, and all
    fields are scaled jointly so the combined H^s norm over (n, theta,
    m) equals ``amplitude``.  Deterministic in ``seed``; an existing
    generator may be passed instead.
    """
    amplitude = float(amplitude)
    if not np.isfinite(amplitude) or amplitude <= 0:
        raise ParameterError(f"amplitude must be positive, got {amplitude}")
    rng = np.random.default_rng(seed)
    n = np.stack(
        [
            grid.to_spectral(grid.random_field(rng, band=band))
            for _ in range(coeffs.n_species)
        ]
    )
    theta = grid.to_spectral(grid.random_field(rng, band=band))
    m = np.tensordot(coeffs.z, n, axes=(0, 0))
    total_sq = (
        sum(spectral.sobolev_norm_sq(grid, n[i], s) for i in range(coeffs.n_species))
        + spectral.sobolev_norm_sq(grid, theta, s)
        + spectral.sobolev_norm_sq(grid, m, s)
    )
    scale = amplitude / np.sqrt(total_sq)
    return State(n=scale * n, theta=scale * theta, m=scale * m, t=0.0)


@dataclass
class Trajectory:
    """Outcome of a simulation run.

    ``status`` is 'completed', 'blowup' (energy passed BLOWUP_FACTOR
    times its initial value) or 'degenerate' (a pointwise denominator
    lost positivity; ``state`` then holds the last good step).  ``rows``
    stacks one monitor record per output time, columns as named.
    """

    status: str
    state: State
    rows: np.ndarray
    columns: tuple
    initial_energy: float
    max_symbol_real: float
    monitor_path: str | None = None
    detail: str = ""


def simulate(
    grid,
    init,
    coeffs,
    eq,
    cert,
    t_end,
    dt,
    output_every=10,
    s=2,
    scheme="imex2",
    max_initial_energy=1.0,
    monitor_path=None,
    dealias=True,
    blowup_factor=BLOWUP_FACTOR,
):
    """Integrate a small perturbation near a certified equilibrium.

    The certificate is re-validated up front (an inadmissible one is
    refused), as is the smallness of the initial energy.  The run
    records a monitor row every ``output_every`` steps (and at t = 0 and
    the final time): time, energy, dissipation, a finite-difference
    energy rate, the charge consistency residual, field maxima and the
    cached worst symbol real part over the grid's wavenumbers.  Aborts
    flag blow-up (energy beyond ``blowup_factor`` times its initial
    value) or degeneracy in the returned :class:`Trajectory` instead of
    raising.  When ``monitor_path`` is set the rows are also written as
    CSV.
    """
    from . import diagnostics

    t_end = float(t_end)
    if not np.isfinite(t_end) or t_end <= 0:
        raise ParameterError(f"t_end must be positive, got {t_end}")
    output_every = int(output_every)
    if output_every < 1:
        raise ParameterError(f"output_every must be at least 1, got {output_every}")
    dcoef = dissipation_coefficients(coeffs, eq, cert)  # refuses uncertified setups

    energy_0 = diagnostics.energy(grid, init, coeffs, eq, cert, s=s)
    if energy_0 > max_initial_energy:
        raise ParameterError(
            f"initial energy {energy_0:.6g} exceeds the configured bound "
            f"{max_initial_energy:.6g}"
        )
    scan = spectral_stability_scan(coeffs, eq, np.unique(grid.xi_sq))
    stepper = IMEXStepper(grid, coeffs, eq, dt, scheme=scheme, dealias=dealias)
    n_steps = int(round(t_end / stepper.dt))

    rows = []

    def record(state, energy, prev):
        flow = _light_flow(grid, state, coeffs, dealias)
        diss = diagnostics.dissipation(grid, state, flow, dcoef, s=s)
        if prev is None:
            rate = np.nan
        else:
            prev_t, prev_e = prev
            rate = (energy - prev_e) / (state.t - prev_t)
        max_n = max(
            float(np.max(np.abs(grid.to_physical(state.n[i]))))
            for i in range(state.n_species)
        )
        max_theta = float(np.max(np.abs(grid.to_physical(state.theta))))
        rows.append(
            (
                state.t,
                energy,
                diss,
                rate,
                charge_consistency_residual(grid, state, coeffs),
                max_n,
                max_theta,
                scan.max_real_part,
            )
        )
        return state.t, energy

    status = "completed"
    detail = ""
    state = init
    last = record(state, energy_0, None)
    for k in range(1, n_steps + 1):
        try:
            advanced = stepper.step(state)
        except DegenerateStateError as err:
            status = "degenerate"
            detail = str(err)
            break
        state = advanced
        energy = diagnostics.energy(grid, state, coeffs, eq, cert, s=s)
        if energy > blowup_factor * energy_0:
            status = "blowup"
            detail = (
                f"energy {energy:.6g} at t={state.t:.6g} exceeds "
                f"{blowup_factor:g} x initial"
            )
            last = record(state, energy, last)
            break
        if k % output_every == 0 or k == n_steps:
            last = record(state, energy, last)

    table = np.asarray(rows, dtype=float)
    if monitor_path is not None:
        diagnostics.write_monitor(monitor_path, table)
    return Trajectory(
        status=status,
        state=state,
        rows=table,
        columns=diagnostics.MONITOR_COLUMNS,
        initial_energy=energy_0,
        max_symbol_real=scan.max_real_part,
        monitor_path=None if monitor_path is None else str(monitor_path),
        detail=detail,
    )
