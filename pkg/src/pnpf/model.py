"""Physical parameterization of the multi-species electrokinetic model.

A model instance consists of N ionic species with charge numbers z_i and
drag coefficients nu_i, immersed in a solvent with viscosity lambda0 and
heat conductivity k, coupled through a dielectric constant eps.  The
thermal sector carries a Boltzmann-like constant k_B, solvent reference
density rho0 and heat capacity c0, and per-species heat capacities c_i.

Constant states (rho_i, u0, T) = (delta_i, 0, 1) are equilibria whenever
the delta_i are positive and electro-neutral (sum z_i delta_i = 0).  The
linearized energy estimates additionally require a smallness condition on
the spread of the drag coefficients around their harmonic mean,

    max_i (1 - nu_i / nu_harm)^2 < 1/2,

which this module exposes as a checkable report together with the derived
constants of the temperature and charge equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParameterError",
    "PhysicalCoefficients",
    "EquilibriumState",
    "DerivedConstants",
    "GlobalAssumptionsReport",
    "harmonic_mean",
    "check_global_assumptions",
    "derived_constants",
    "electroneutrality_residual",
    "make_equilibrium",
]

#: relative tolerance for the electro-neutrality constraint sum(z*delta) = 0
NEUTRALITY_RTOL = 1e-12

#: admissibility threshold for the drag-spread smallness condition
DEVIATION_LIMIT = 0.5


class ParameterError(ValueError):
    """Invalid physical coefficients or equilibrium data."""


def _as_float_vector(name, value, n=None):
    # always copy: several callers freeze the result in place
    arr = np.atleast_1d(np.array(value, dtype=float))
    if arr.ndim != 1:
        raise ParameterError(f"{name} must be a 1-d sequence, got shape {arr.shape}")
    if n is not None and arr.size != n:
        raise ParameterError(f"{name} must have length {n}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def _require_positive(name, value):
    if not np.all(np.asarray(value) > 0):
        raise ParameterError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class PhysicalCoefficients:
    """Coefficient set for the N-species model.

    Parameters
    ----------
    z : array_like, shape (N,)
        Charge numbers, sorted nondecreasing, no zeros, and with at least
        one negative and one positive entry.
    k_B : float
        Thermal (Boltzmann-like) constant.
    nu : array_like, shape (N,)
        Per-species drag coefficients.
    k : float
        Heat conductivity.
    eps : float
        Dielectric constant.
    lambda0 : float
        Solvent viscosity.
    rho0, c0 : float
        Solvent reference density and heat capacity.
    c : array_like, shape (N,)
        Per-species heat capacities.
    charge_force_factor : float, optional
        Multiplier on the electric force term inside the per-species
        frictional heating.  The model statement carries a stray symbol at
        that position; the standard reading is 1 and that is the default.
    """

    z: np.ndarray
    k_B: float
    nu: np.ndarray
    k: float
    eps: float
    lambda0: float
    rho0: float
    c0: float
    c: np.ndarray
    charge_force_factor: float = 1.0

    def __post_init__(self):
        z = _as_float_vector("z", self.z)
        if z.size < 2:
            raise ParameterError(f"need at least two species, got {z.size}")
        if np.any(z == 0):
            raise ParameterError("charge numbers must be nonzero")
        if np.any(np.diff(z) < 0):
            raise ParameterError(f"charge numbers must be sorted nondecreasing, got {z}")
        if not (np.any(z < 0) and np.any(z > 0)):
            raise ParameterError(f"need both negative and positive charges, got {z}")
        nu = _as_float_vector("nu", self.nu, z.size)
        c = _as_float_vector("c", self.c, z.size)
        _require_positive("nu", nu)
        _require_positive("c", c)
        for name in ("k_B", "k", "eps", "lambda0", "rho0", "c0"):
            val = getattr(self, name)
            if not np.isfinite(val):
                raise ParameterError(f"{name} must be finite, got {val}")
            _require_positive(name, val)
        if not np.isfinite(self.charge_force_factor):
            raise ParameterError("charge_force_factor must be finite")
        z.flags.writeable = False
        nu.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "c", c)

    @property
    def n_species(self):
        return self.z.size

    @property
    def nu_harm(self):
        """Harmonic mean of the drag coefficients."""
        return harmonic_mean(self.nu)

    def deviations(self):
        """Per-species squared relative deviation (1 - nu_i/nu_harm)^2."""
        return (1.0 - self.nu / self.nu_harm) ** 2


@dataclass(frozen=True)
class EquilibriumState:
    """Constant equilibrium densities delta_i (positive, electro-neutral).

    Use :func:`make_equilibrium` to build a validated instance; the raw
    constructor only checks positivity because neutrality depends on the
    charge numbers.
    """

    delta: np.ndarray

    def __post_init__(self):
        delta = _as_float_vector("delta", self.delta)
        _require_positive("delta", delta)
        delta.flags.writeable = False
        object.__setattr__(self, "delta", delta)


def harmonic_mean(nu):
    """N / sum(1/nu_i) for a vector of positive rates."""
    nu = _as_float_vector("nu", nu)
    _require_positive("nu", nu)
    return nu.size / np.sum(1.0 / nu)


def electroneutrality_residual(z, delta):
    """Signed net charge sum(z_i * delta_i) of a candidate equilibrium."""
    z = _as_float_vector("z", z)
    delta = _as_float_vector("delta", delta, z.size)
    return float(np.sum(z * delta))


def make_equilibrium(coeffs, delta):
    """Validate and wrap equilibrium densities for a coefficient set.

    Raises :class:`ParameterError` if any density is nonpositive or the net
    charge exceeds the relative neutrality tolerance
    |sum z_i delta_i| <= 1e-12 * max_i |z_i delta_i|.
    """
    eq = EquilibriumState(delta)
    if eq.delta.size != coeffs.n_species:
        raise ParameterError(
            f"delta has length {eq.delta.size}, expected {coeffs.n_species}"
        )
    residual = electroneutrality_residual(coeffs.z, eq.delta)
    scale = np.max(np.abs(coeffs.z * eq.delta))
    if abs(residual) > NEUTRALITY_RTOL * scale:
        raise ParameterError(
            f"equilibrium is not electro-neutral: sum(z*delta) = {residual:.3e} "
            f"exceeds {NEUTRALITY_RTOL:g} * {scale:.3e}"
        )
    return eq


@dataclass(frozen=True)
class DerivedConstants:
    """Secondary constants entering the reduced evolution equations.

    ``a``
        Effective heat capacity at equilibrium,
        a = k_B c0 rho0 + sum_i k_B c_i delta_i.
    ``b``
        Effective heat conductivity, b = k + sum_i k_B^2 delta_i / nu_i.
    ``nu_harm``
        Harmonic mean of the drag coefficients.
    ``max_deviation``
        max_i (1 - nu_i/nu_harm)^2, the quantity bounded by 1/2 in the
        global smallness assumption.
    """

    a: float
    b: float
    nu_harm: float
    max_deviation: float


def derived_constants(coeffs, eq):
    """Compute :class:`DerivedConstants` for a coefficient set and equilibrium."""
    delta = eq.delta
    if delta.size != coeffs.n_species:
        raise ParameterError(
            f"delta has length {delta.size}, expected {coeffs.n_species}"
        )
    a = coeffs.k_B * coeffs.c0 * coeffs.rho0 + np.sum(coeffs.k_B * coeffs.c * delta)
    b = coeffs.k + np.sum(coeffs.k_B**2 * delta / coeffs.nu)
    return DerivedConstants(
        a=float(a),
        b=float(b),
        nu_harm=float(coeffs.nu_harm),
        max_deviation=float(np.max(coeffs.deviations())),
    )


@dataclass(frozen=True)
class GlobalAssumptionsReport:
    """Outcome of the global admissibility checks on a coefficient set.

    ``deviations`` holds the per-species values (1 - nu_i/nu_harm)^2; the
    key smallness assumption requires their maximum below 1/2 and
    ``key_margin`` is 1/2 minus that maximum.  ``charge_signs_ok`` and
    ``positivity_ok`` re-verify the structural constraints (mixed charge
    signs; strictly positive transport coefficients); their margins are the
    smallest |z_i| and the smallest coefficient value.
    """

    charge_signs_ok: bool
    charge_margin: float
    positivity_ok: bool
    positivity_margin: float
    key_assumption_ok: bool
    key_margin: float
    deviations: np.ndarray = field(repr=False)

    @property
    def passed(self):
        return self.charge_signs_ok and self.positivity_ok and self.key_assumption_ok


def check_global_assumptions(coeffs):
    """Evaluate the three global assumptions for a coefficient set.

    The structural checks (mixed charge signs, positive coefficients) are
    enforced at construction time already, so on a live
    :class:`PhysicalCoefficients` they re-verify as true; the substantive
    check is the drag-spread smallness max_i (1 - nu_i/nu_harm)^2 < 1/2.

    Note on reference values: for the aqueous NaCl pair
    nu = (1.334, 2.032) (units of 1e-9 s^-1 scale) the directly computed
    deviations are about 0.0295 and 0.0685.  A commonly quoted reference
    figure gives 0.043 for both species; the direct evaluation does not
    reproduce that symmetric value, so this module reports the computed
    per-species deviations and leaves the quoted figure to the
    documentation.  The pass/fail conclusion is unaffected (both are
    well below 1/2).
    """
    z = coeffs.z
    signs_ok = bool(np.any(z < 0) and np.any(z > 0) and np.all(z != 0))
    charge_margin = float(np.min(np.abs(z)))
    positive_values = np.concatenate(
        [
            coeffs.nu,
            coeffs.c,
            [coeffs.k_B, coeffs.k, coeffs.eps, coeffs.lambda0, coeffs.rho0, coeffs.c0],
        ]
    )
    positivity_ok = bool(np.all(positive_values > 0))
    positivity_margin = float(np.min(positive_values))
    deviations = coeffs.deviations()
    max_dev = float(np.max(deviations))
    key_margin = DEVIATION_LIMIT - max_dev
    return GlobalAssumptionsReport(
        charge_signs_ok=signs_ok,
        charge_margin=charge_margin,
        positivity_ok=positivity_ok,
        positivity_margin=positivity_margin,
        key_assumption_ok=key_margin > 0,
        key_margin=key_margin,
        deviations=deviations,
    )
