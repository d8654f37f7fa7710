"""Energy and dissipation functionals, decay audits and monitor I/O.

The certified Lyapunov functional weights the potential gradient, the
species perturbations, the temperature and the charge with the
certificate's multipliers; its dissipation counterpart carries the
derived coefficients of :func:`pnpf.admissibility.dissipation_coefficients`
plus the raw solvent term.  Both are plain weighted Sobolev sums over
the stored spectra, so they are quadratic forms: additive over disjoint
Fourier supports and homogeneous of degree two under state scaling.

The module also checks the three integration-by-parts cancellations that
make the solvent coupling energy-neutral, audits monitor tables for
monotone decay, and owns the CSV format written by
:func:`pnpf.dynamics.simulate`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import dynamics, spectral
from .model import ParameterError, derived_constants

__all__ = [
    "EnergyReport",
    "DecayAudit",
    "MONITOR_COLUMNS",
    "energy",
    "dissipation",
    "energy_report",
    "cancellation_tests",
    "decay_audit",
    "write_monitor",
    "read_monitor",
]

#: column order of the monitor table, one row per recorded time
MONITOR_COLUMNS = (
    "t",
    "energy",
    "dissipation",
    "energy_rate",
    "charge_residual",
    "max_abs_n",
    "max_abs_theta",
    "max_symbol_real",
)


def energy(grid, state, coeffs, eq, cert, s=2, flow=None):
    """Certified energy of a state in the H^s scale.

    chi_phi eps |grad phi|^2 + sum_i chi_i |n_i|^2 + a chi_theta
    |theta|^2 + chi_m |m|^2, each in the exact multi-index H^s norm.
    The potential enters only through its gradient (its own mean is
    gauge); it is taken from ``flow`` when given, else solved from m.
    """
    phi = flow.phi if flow is not None else dynamics.solve_potential(
        grid, state.m, coeffs.eps
    )
    a = derived_constants(coeffs, eq).a
    total = cert.chi_phi * coeffs.eps * spectral.sobolev_norm_sq(
        grid, spectral.gradient(grid, phi), s
    )
    for i in range(state.n_species):
        total += cert.chi[i] * spectral.sobolev_norm_sq(grid, state.n[i], s)
    total += a * cert.chi_theta * spectral.sobolev_norm_sq(grid, state.theta, s)
    total += cert.chi_m * spectral.sobolev_norm_sq(grid, state.m, s)
    return float(total)


def dissipation(grid, state, flow, dcoef, s=2):
    """Dissipation functional under derived coefficients.

    sum_i d_i |grad n_i|^2 + d_theta |grad theta|^2 + d_m |grad m|^2
    + d_m_tilde |m|^2 + d_phi |grad phi|^2 + d_phi_tilde |lap phi|^2
    + |grad u0|^2, all in H^s.  Positive weights (admissible input)
    make this nonnegative.
    """
    total = 0.0
    for i in range(state.n_species):
        total += dcoef.d[i] * spectral.sobolev_norm_sq(
            grid, spectral.gradient(grid, state.n[i]), s
        )
    total += dcoef.d_theta * spectral.sobolev_norm_sq(
        grid, spectral.gradient(grid, state.theta), s
    )
    total += dcoef.d_m * spectral.sobolev_norm_sq(
        grid, spectral.gradient(grid, state.m), s
    )
    total += dcoef.d_m_tilde * spectral.sobolev_norm_sq(grid, state.m, s)
    total += dcoef.d_phi * spectral.sobolev_norm_sq(
        grid, spectral.gradient(grid, flow.phi), s
    )
    total += dcoef.d_phi_tilde * spectral.sobolev_norm_sq(
        grid, spectral.laplacian(grid, flow.phi), s
    )
    grad_u0 = np.stack(
        [spectral.gradient(grid, flow.u0[ax]) for ax in range(grid.dim)]
    )
    total += spectral.sobolev_norm_sq(grid, grad_u0, s)
    return float(total)


def _cell_volume(grid):
    return (grid.length / grid.modes) ** grid.dim


def _integral(grid, phys):
    return float(np.sum(phys)) * _cell_volume(grid)


def cancellation_tests(grid, state, flow, coeffs):
    """Relative residuals of the three solvent cancellation identities.

    With phi and the divergence-free u0 of ``flow`` and quadrature on
    the grid, the following combinations vanish identically for
    band-limited fields:

    (i)   -(1/lambda0) <m grad phi, u0> + (eps/lambda0)
          <grad phi x grad phi, grad u0>;
    (ii)  <u0 . grad lap phi, phi> - <grad phi x grad phi, grad u0>;
    (iii) <n_i lap phi + grad n_i . grad phi, phi> + <n_i, |grad phi|^2>
          per species (the worst one is reported).

    The sign pairing in (i) and (ii) is the one that cancels exactly for
    divergence-free u0; the opposite choice differs by twice the term.
    Each residual is normalized by the larger of its two pairings (zero
    when both vanish), so admissibility plays no role and anything above
    roundoff signals an inconsistent flow.  Returns (r1, r2, r3).
    """
    phi_p = grid.to_physical(flow.phi)
    grad_phi = np.stack(
        [grid.to_physical(v) for v in spectral.gradient(grid, flow.phi)]
    )
    u0_p = np.stack([grid.to_physical(v) for v in flow.u0])
    m_p = grid.to_physical(state.m)
    lap_phi_hat = spectral.laplacian(grid, flow.phi)

    grad_u0 = np.stack(
        [
            [grid.to_physical(v) for v in spectral.gradient(grid, flow.u0[ax])]
            for ax in range(grid.dim)
        ]
    )  # grad_u0[a, b] = d_b u0_a
    pair_tensor = 0.0
    for a in range(grid.dim):
        for b in range(grid.dim):
            pair_tensor += _integral(grid, grad_phi[a] * grad_phi[b] * grad_u0[a, b])

    def relative(lhs, rhs):
        scale = max(abs(lhs), abs(rhs))
        return abs(lhs + rhs) / scale if scale > 0 else 0.0

    pair_force = _integral(
        grid, m_p * np.einsum("a...,a...->...", grad_phi, u0_p)
    )
    r1 = relative(-pair_force / coeffs.lambda0, coeffs.eps * pair_tensor / coeffs.lambda0)

    grad_lap_phi = np.stack(
        [grid.to_physical(v) for v in spectral.gradient(grid, lap_phi_hat)]
    )
    pair_adv = _integral(
        grid, phi_p * np.einsum("a...,a...->...", u0_p, grad_lap_phi)
    )
    r2 = relative(pair_adv, -pair_tensor)

    lap_phi_p = grid.to_physical(lap_phi_hat)
    grad_phi_sq = np.einsum("a...,a...->...", grad_phi, grad_phi)
    r3 = 0.0
    for i in range(state.n_species):
        n_p = grid.to_physical(state.n[i])
        grad_n = np.stack(
            [grid.to_physical(v) for v in spectral.gradient(grid, state.n[i])]
        )
        div_pair = _integral(
            grid,
            phi_p
            * (n_p * lap_phi_p + np.einsum("a...,a...->...", grad_n, grad_phi)),
        )
        weight_pair = _integral(grid, n_p * grad_phi_sq)
        r3 = max(r3, relative(div_pair, weight_pair))
    return r1, r2, r3


@dataclass(frozen=True)
class EnergyReport:
    """One fully evaluated monitor record of a state.

    ``energy_rate`` is whatever finite-difference estimate the caller
    supplies (nan when unavailable); everything else is computed from
    the state and flow directly.
    """

    t: float
    energy: float
    dissipation: float
    energy_rate: float
    charge_residual: float
    cancellation_residuals: tuple


def energy_report(grid, state, flow, coeffs, eq, cert, s=2, energy_rate=np.nan):
    """Bundle energy, dissipation, consistency and cancellations."""
    from .admissibility import dissipation_coefficients

    dcoef = dissipation_coefficients(coeffs, eq, cert)
    return EnergyReport(
        t=state.t,
        energy=energy(grid, state, coeffs, eq, cert, s=s, flow=flow),
        dissipation=dissipation(grid, state, flow, dcoef, s=s),
        energy_rate=float(energy_rate),
        charge_residual=dynamics.charge_consistency_residual(grid, state, coeffs),
        cancellation_residuals=cancellation_tests(grid, state, flow, coeffs),
    )


@dataclass(frozen=True)
class DecayAudit:
    """Verdict of a monotone-decay check over monitor rows.

    ``passed`` requires every recorded energy step to be nonincreasing
    within tolerance.  ``rate_ratio_median``/``rate_ratio_worst``
    compare the centered-difference energy rate against the recorded
    dissipation (-dE/dt over D; at least 1 when the decay inequality
    holds with the dissipation as lower bound, nan where D vanishes).
    ``dissipation_integral`` is the trapezoidal time integral of D.
    """

    passed: bool
    max_growth: float
    initial_energy: float
    final_energy: float
    dissipation_integral: float
    rate_ratio_median: float
    rate_ratio_worst: float
    n_rows: int


#: relative slack on each monitor step before decay counts as violated
DECAY_RTOL = 1e-8
#: absolute slack for energies at roundoff level
DECAY_ATOL = 1e-12


def decay_audit(trajectory):
    """Audit recorded energies for monotone decay.

    Accepts a :class:`pnpf.dynamics.Trajectory`, a bare monitor array or
    a path to a monitor CSV.  Requires at least three rows.  The energy
    rate is re-estimated from the (t, energy) columns by centered
    differences (one-sided at the endpoints) rather than trusting the
    recorded backward-difference column.
    """
    if isinstance(trajectory, (str, os.PathLike)):
        rows = read_monitor(trajectory)
    elif isinstance(trajectory, np.ndarray):
        rows = trajectory
    else:
        rows = trajectory.rows
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != len(MONITOR_COLUMNS):
        raise ParameterError(
            f"monitor table must have {len(MONITOR_COLUMNS)} columns, "
            f"got shape {rows.shape}"
        )
    if rows.shape[0] < 3:
        raise ParameterError(
            f"decay audit needs at least 3 monitor rows, got {rows.shape[0]}"
        )
    t = rows[:, 0]
    e = rows[:, 1]
    d = rows[:, 2]

    growth = (e[1:] - e[:-1] * (1.0 + DECAY_RTOL) - DECAY_ATOL).max()
    passed = bool(growth <= 0.0)
    rate = np.gradient(e, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(d > 0, -rate / d, np.nan)
    finite = ratios[np.isfinite(ratios)]
    return DecayAudit(
        passed=passed,
        max_growth=float(growth),
        initial_energy=float(e[0]),
        final_energy=float(e[-1]),
        dissipation_integral=float(np.trapezoid(d, t)),
        rate_ratio_median=float(np.median(finite)) if finite.size else np.nan,
        rate_ratio_worst=float(finite.min()) if finite.size else np.nan,
        n_rows=int(rows.shape[0]),
    )


def write_monitor(path, rows):
    """Write a monitor table as CSV with headers, full double precision.

    The %.17g format round-trips every float exactly, so identical rows
    produce byte-identical files.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != len(MONITOR_COLUMNS):
        raise ParameterError(
            f"monitor table must have {len(MONITOR_COLUMNS)} columns, "
            f"got shape {rows.shape}"
        )
    with open(path, "w", newline="") as fh:
        fh.write(",".join(MONITOR_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_monitor(path):
    """Read a monitor CSV back into an array, checking the header."""
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header.split(",") != list(MONITOR_COLUMNS):
            raise ParameterError(
                f"unrecognized monitor header {header!r} in {path}"
            )
        body = [line for line in fh if line.strip()]
    rows = np.array(
        [[float(v) for v in line.strip().split(",")] for line in body], dtype=float
    )
    return rows.reshape(-1, len(MONITOR_COLUMNS))
