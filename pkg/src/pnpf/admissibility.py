"""Dissipativity certificates for constant equilibria.

The linearized energy estimate around a constant state closes when a tuple
of strictly positive weights (chi_i per species, chi_m, chi_theta, chi_phi)
and Cauchy-splitting constants (the eta family) satisfies four
inequalities, called H1 to H4 below.  Their left-hand sides double as the
dissipation coefficients of the decay functional: H1's margin multiplies
the temperature gradient, H3's the potential gradient, and H4_i's the
species gradients.

This module provides

* an evaluator computing all margins (absolute and normalized),
* the dissipation coefficients implied by an admissible certificate,
* a constructive recipe that builds a certificate from three tuning
  parameters (kappa, eps0, lambda) whenever the equilibrium densities lie
  in an explicit window,
* a rejection sampler for equilibria inside that window, and
* a generic randomized search used as a fallback when the recipe's window
  or its chi_theta interval is empty.

Throughout, nu denotes the harmonic mean of the drag coefficients, and

    S = sum_i z_i delta_i / nu_i,      Q = sum_i z_i^2 delta_i / nu_i.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linprog, minimize

from .model import (
    ParameterError,
    derived_constants,
    check_global_assumptions,
    make_equilibrium,
)

__all__ = [
    "Certificate",
    "AdmissibilityReport",
    "DissipationCoefficients",
    "CertificateError",
    "evaluate_H_conditions",
    "dissipation_coefficients",
    "claim_window",
    "construct_certificate",
    "sample_equilibria",
    "search_certificate",
]

#: relative threshold below which S = sum z_i delta_i / nu_i counts as zero
CHARGE_SUM_RTOL = 1e-14

#: relative threshold below which (1/nu_i - 1/nu)^2 counts as zero
DEVIATION_RTOL = 1e-28


class CertificateError(RuntimeError):
    """A certificate construction or search step failed.

    Attributes
    ----------
    stage : str
        Which step failed: 'window', 'chi_theta_interval', 'chi_m',
        'verify', 'sampling', 'search', or 'dissipation'.
    report : AdmissibilityReport or None
        Margins of the best or offending candidate, when one exists.
    detail : dict
        Stage-specific numbers (violated bounds, interval endpoints,
        acceptance rates).
    """

    def __init__(self, stage, message, report=None, detail=None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.report = report
        self.detail = dict(detail or {})


def _positive_vector(name, value, n):
    arr = np.atleast_1d(np.array(value, dtype=float))
    if arr.shape != (n,):
        raise ParameterError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or not np.all(arr > 0):
        raise ParameterError(f"{name} must be finite and strictly positive")
    arr.flags.writeable = False
    return arr


def _positive_scalar(name, value):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be finite and strictly positive, got {value}")
    return value


@dataclass(frozen=True)
class Certificate:
    """Positive weights and splitting constants witnessing H1 to H4.

    ``chi``, ``eta``, ``eta_prime`` and ``eta_phi_i`` are per-species
    vectors; the rest are scalars.  Every entry must be strictly positive;
    nothing else is assumed at construction (the inequalities themselves
    are checked by :func:`evaluate_H_conditions`).
    """

    chi: np.ndarray
    chi_m: float
    chi_theta: float
    chi_phi: float
    eta: np.ndarray
    eta_prime: np.ndarray
    eta_phi_i: np.ndarray
    eta_phi: float
    eta_m: float
    eta_m_prime: float
    eta_theta: float
    eta_theta_prime: float

    def __post_init__(self):
        n = np.atleast_1d(np.asarray(self.chi)).size
        object.__setattr__(self, "chi", _positive_vector("chi", self.chi, n))
        object.__setattr__(self, "eta", _positive_vector("eta", self.eta, n))
        object.__setattr__(
            self, "eta_prime", _positive_vector("eta_prime", self.eta_prime, n)
        )
        object.__setattr__(
            self, "eta_phi_i", _positive_vector("eta_phi_i", self.eta_phi_i, n)
        )
        for name in (
            "chi_m",
            "chi_theta",
            "chi_phi",
            "eta_phi",
            "eta_m",
            "eta_m_prime",
            "eta_theta",
            "eta_theta_prime",
        ):
            object.__setattr__(self, name, _positive_scalar(name, getattr(self, name)))

    @property
    def n_species(self):
        return self.chi.size

    def to_config(self):
        """Flat mapping of plain values, suitable for the config format."""
        out = {}
        for name in ("chi", "eta", "eta_prime", "eta_phi_i"):
            out[name] = [float(v) for v in getattr(self, name)]
        for name in (
            "chi_m",
            "chi_theta",
            "chi_phi",
            "eta_phi",
            "eta_m",
            "eta_m_prime",
            "eta_theta",
            "eta_theta_prime",
        ):
            out[name] = float(getattr(self, name))
        return out

    @classmethod
    def from_config(cls, mapping):
        """Rebuild a certificate from :meth:`to_config` output."""
        try:
            return cls(**{k: mapping[k] for k in (
                "chi", "chi_m", "chi_theta", "chi_phi", "eta", "eta_prime",
                "eta_phi_i", "eta_phi", "eta_m", "eta_m_prime", "eta_theta",
                "eta_theta_prime")})
        except KeyError as missing:
            raise ParameterError(f"certificate config is missing {missing}") from None


@dataclass(frozen=True)
class AdmissibilityReport:
    """Margins of the four certificate inequalities.

    Absolute margins are the inequality left-hand sides; normalized ones
    divide by the largest single term in the corresponding inequality, so
    they are comparable across parameter scales.  ``admissible`` is true
    exactly when every absolute margin is positive.
    """

    h1_margin: float
    h2_margin: float
    h3_margin: float
    h4_margins: np.ndarray
    h1_normalized: float
    h2_normalized: float
    h3_normalized: float
    h4_normalized: np.ndarray
    admissible: bool

    @property
    def min_normalized(self):
        """Worst normalized margin (the search objective)."""
        return min(
            self.h1_normalized,
            self.h2_normalized,
            self.h3_normalized,
            float(np.min(self.h4_normalized)),
        )

    def first_violation(self):
        """Name of the first failing inequality, or None."""
        if self.h1_margin <= 0:
            return "H1"
        if self.h2_margin <= 0:
            return "H2"
        if self.h3_margin <= 0:
            return "H3"
        bad = np.nonzero(self.h4_margins <= 0)[0]
        if bad.size:
            return f"H4[{bad[0]}]"
        return None


@dataclass(frozen=True)
class DissipationCoefficients:
    """Coefficients of the dissipation functional.

    ``d`` weights the species gradients, ``d_theta`` the temperature
    gradient, ``d_m``/``d_m_tilde`` the charge gradient and the charge
    itself, ``d_phi``/``d_phi_tilde`` the potential gradient and its
    Laplacian.  All are strictly positive for an admissible certificate.
    """

    d: np.ndarray
    d_theta: float
    d_m: float
    d_m_tilde: float
    d_phi: float
    d_phi_tilde: float


def _charge_sums(coeffs, eq):
    S = float(np.sum(coeffs.z * eq.delta / coeffs.nu))
    Q = float(np.sum(coeffs.z**2 * eq.delta / coeffs.nu))
    return S, Q


def evaluate_H_conditions(coeffs, eq, cert):
    """Evaluate the margins of H1 to H4 for a certificate.

    H1:  chi_theta (1 - eta_theta - eta_theta') b
         - chi_m (k_B nu / (4 eta_m')) S^2
         - sum_i chi_i k_B delta_i^2 / (4 eta_i nu_i)
         - chi_phi (k_B^2 / (4 eta_phi)) S^2            > 0
    H2:  1 - eta_m - eta_m'                             > 0
    H3:  chi_phi (Q - sum_i eta_phi_i - eta_phi)
         - chi_theta (k_B^2 / (4 eta_theta' b)) S^2
         - sum_i chi_i z_i^2 delta_i^2 / (4 eta_i' k_B nu_i)  > 0
    H4_i: chi_i (1 - eta_i - eta_i') k_B / nu_i
         - chi_theta N k_B^4 / (4 eta_theta b nu_i)
         - chi_m (k_B nu z_i^2 / (4 eta_m)) (1/nu_i - 1/nu)^2
         - chi_phi (k_B^2 z_i^2 / (4 eta_phi_i)) (1/nu_i - 1/nu)^2  > 0
    """
    if cert.n_species != coeffs.n_species:
        raise ParameterError(
            f"certificate covers {cert.n_species} species, "
            f"coefficients have {coeffs.n_species}"
        )
    dc = derived_constants(coeffs, eq)
    z, nu, delta, k_B = coeffs.z, coeffs.nu, eq.delta, coeffs.k_B
    n = coeffs.n_species
    nu_bar, b = dc.nu_harm, dc.b
    S, Q = _charge_sums(coeffs, eq)
    invdev = (1.0 / nu - 1.0 / nu_bar) ** 2

    h1_terms = np.array([
        cert.chi_theta * (1 - cert.eta_theta - cert.eta_theta_prime) * b,
        cert.chi_m * (k_B * nu_bar / (4 * cert.eta_m_prime)) * S**2,
        float(np.sum(cert.chi * k_B * delta**2 / (4 * cert.eta * nu))),
        cert.chi_phi * (k_B**2 / (4 * cert.eta_phi)) * S**2,
    ])
    h1 = h1_terms[0] - h1_terms[1] - h1_terms[2] - h1_terms[3]

    h2 = 1.0 - cert.eta_m - cert.eta_m_prime
    h2_scale = max(1.0, cert.eta_m, cert.eta_m_prime)

    h3_terms = np.array([
        cert.chi_phi * (Q - float(np.sum(cert.eta_phi_i)) - cert.eta_phi),
        cert.chi_theta * (k_B**2 / (4 * cert.eta_theta_prime * b)) * S**2,
        float(np.sum(cert.chi * z**2 * delta**2 / (4 * cert.eta_prime * k_B * nu))),
    ])
    h3 = h3_terms[0] - h3_terms[1] - h3_terms[2]

    h4_terms = np.stack([
        cert.chi * (1 - cert.eta - cert.eta_prime) * k_B / nu,
        np.full(n, cert.chi_theta * n * k_B**4 / (4 * cert.eta_theta * b)) / nu,
        cert.chi_m * (k_B * nu_bar * z**2 / (4 * cert.eta_m)) * invdev,
        cert.chi_phi * (k_B**2 * z**2 / (4 * cert.eta_phi_i)) * invdev,
    ])
    h4 = h4_terms[0] - h4_terms[1] - h4_terms[2] - h4_terms[3]

    h4_scale = np.max(np.abs(h4_terms), axis=0)
    h4_arr = np.asarray(h4, dtype=float)
    h4_arr.flags.writeable = False
    h4_norm = h4_arr / h4_scale
    h4_norm.flags.writeable = False
    return AdmissibilityReport(
        h1_margin=float(h1),
        h2_margin=float(h2),
        h3_margin=float(h3),
        h4_margins=h4_arr,
        h1_normalized=float(h1 / np.max(np.abs(h1_terms))),
        h2_normalized=float(h2 / h2_scale),
        h3_normalized=float(h3 / np.max(np.abs(h3_terms))),
        h4_normalized=h4_norm,
        admissible=bool(h1 > 0 and h2 > 0 and h3 > 0 and np.all(h4 > 0)),
    )


def dissipation_coefficients(coeffs, eq, cert):
    """Dissipation-functional coefficients of an admissible certificate.

    The gradient coefficients coincide with the inequality margins
    (d_i = H4_i, d_theta = H1, d_phi = H3); the remaining ones are

        d_m       = chi_m (1 - eta_m - eta_m') k_B / nu
        d_m_tilde = (chi_m / eps) Q
        d_phi_tilde = chi_phi k_B eps / nu

    Raises :class:`CertificateError` (stage 'dissipation', report attached)
    when the certificate is not admissible.
    """
    report = evaluate_H_conditions(coeffs, eq, cert)
    if not report.admissible:
        raise CertificateError(
            "dissipation",
            f"certificate is not admissible (first violated: {report.first_violation()})",
            report=report,
        )
    dc = derived_constants(coeffs, eq)
    _, Q = _charge_sums(coeffs, eq)
    return DissipationCoefficients(
        d=report.h4_margins,
        d_theta=report.h1_margin,
        d_m=cert.chi_m * (1 - cert.eta_m - cert.eta_m_prime) * coeffs.k_B / dc.nu_harm,
        d_m_tilde=(cert.chi_m / coeffs.eps) * Q,
        d_phi=report.h3_margin,
        d_phi_tilde=cert.chi_phi * coeffs.k_B * coeffs.eps / dc.nu_harm,
    )


def _validate_tuning(kappa, eps0, lam):
    kappa = float(kappa)
    eps0 = float(eps0)
    lam = float(lam)
    if not (np.isfinite(kappa) and kappa > 0):
        raise ParameterError(f"kappa must be positive, got {kappa}")
    if not (0.0 < eps0 < 1.0):
        raise ParameterError(f"eps0 must lie in (0, 1), got {eps0}")
    if not (lam < 1.0 and 2.0 * lam * eps0 > 1.0):
        raise ParameterError(
            f"lambda must lie in (1/(2 eps0), 1): got lambda={lam}, eps0={eps0}"
        )
    return kappa, eps0, lam


def claim_window(coeffs, kappa, eps0, lam):
    """Per-species density window of the constructive recipe.

    Returns (lo, hi) with lo scalar and hi per species:

        lo   = (1 / (2 lambda eps0))^(1/kappa)
        hi_i = min(1, (1 - lambda) eps0 / (1 - nu_i/nu)^2)^(1/kappa)

    Densities strictly inside (lo, hi_i) admit the constructive
    certificate whenever the chi_theta interval below is also nonempty.
    """
    kappa, eps0, lam = _validate_tuning(kappa, eps0, lam)
    dev = coeffs.deviations()
    lo = (1.0 / (2.0 * lam * eps0)) ** (1.0 / kappa)
    with np.errstate(divide="ignore"):
        cap = np.where(dev > 0, (1.0 - lam) * eps0 / np.where(dev > 0, dev, 1.0), np.inf)
    hi = np.minimum(1.0, cap) ** (1.0 / kappa)
    return lo, hi


def construct_certificate(coeffs, eq, kappa, eps0, lam):
    """Build a certificate by the explicit recipe.

    The splitting constants are fixed (eta_m = eta_m' = 1/4,
    eta_theta = eta_theta' = 1/3, eta_i = 1 - eps0,
    eta_i' = delta_i^(-kappa)/2, eta_phi_i = z_i^2 delta_i/(4 nu_i),
    eta_phi = sum_i eta_phi_i, chi_phi = 1) and the remaining weights come
    from explicit intervals:

    * chi_i is the fixed midpoint
      [k_B (1-nu_i/nu)^2/(eps0 - eta_i') + k_B delta_i^(-kappa)] / (2 delta_i),
    * chi_theta is the midpoint of the interval
      ( C3 max_i delta_i , min_i min{A1_i, A2_i}/delta_i ), and
    * chi_m is half of min{C1, C2} from the H1/H4 quotients (1 when both
      are vacuous because S = 0 and all nu_i coincide).

    The construction is then re-checked with
    :func:`evaluate_H_conditions`; on any failure a
    :class:`CertificateError` names the violated bound or interval.
    """
    kappa, eps0, lam = _validate_tuning(kappa, eps0, lam)
    assumptions = check_global_assumptions(coeffs)
    if not assumptions.passed:
        raise ParameterError(
            f"coefficient set violates the global assumptions "
            f"(key margin {assumptions.key_margin:.3g})"
        )
    eq = make_equilibrium(coeffs, eq.delta)

    z, nu, delta, k_B, k = coeffs.z, coeffs.nu, eq.delta, coeffs.k_B, coeffs.k
    n = coeffs.n_species
    dc = derived_constants(coeffs, eq)
    nu_bar, b = dc.nu_harm, dc.b
    dev = coeffs.deviations()

    lo, hi = claim_window(coeffs, kappa, eps0, lam)
    for i in range(n):
        if not (lo < delta[i] < hi[i]):
            raise CertificateError(
                "window",
                f"delta[{i}] = {delta[i]:.6g} outside the density window "
                f"({lo:.6g}, {hi[i]:.6g})",
                detail={"species": i, "lo": lo, "hi": float(hi[i]),
                        "delta": float(delta[i])},
            )

    eta = np.full(n, 1.0 - eps0)
    eta_prime = 0.5 * delta ** (-kappa)
    eta_phi_i = z**2 * delta / (4.0 * nu)
    eta_phi = float(np.sum(eta_phi_i))
    chi_phi = 1.0
    # inside the window eps0 - eta_i' > eps0 (1 - lambda) > 0
    chi = 0.5 * (k_B * dev / (eps0 - eta_prime) + k_B * delta ** (-kappa)) / delta

    c3 = np.max(
        n * k_B**2 / (8.0 * k * nu * (1.0 - eps0))
        * (dev / (eps0 * (1.0 - lam)) + 2.0 * lam * eps0)
        + n * k_B**2 / (k * nu)
    )
    a1 = 2.0 * b / (3.0 * n * k_B**2) \
        - (2.0 * b * delta**kappa / (3.0 * n * k_B**3)) * chi * delta
    a2 = (4.0 * b * (eps0 - eta_prime) / (3.0 * n * k_B**3)) * chi * delta \
        - 4.0 * b * dev / (3.0 * n * k_B**2)
    lower = float(c3 * np.max(delta))
    upper = float(np.min(np.minimum(a1, a2) / delta))
    if not lower < upper:
        raise CertificateError(
            "chi_theta_interval",
            f"empty chi_theta interval ({lower:.6g}, {upper:.6g})",
            detail={"lower": lower, "upper": upper,
                    "a1": a1.tolist(), "a2": a2.tolist(), "c3": float(c3)},
        )
    chi_theta = 0.5 * (lower + upper)

    S, _ = _charge_sums(coeffs, eq)
    invdev = (1.0 / nu - 1.0 / nu_bar) ** 2
    s_zero = abs(S) <= CHARGE_SUM_RTOL * float(np.sum(np.abs(z) * delta / nu))
    dev_zero = invdev <= DEVIATION_RTOL / nu_bar**2
    if s_zero:
        c1 = np.inf
    else:
        c1 = (
            chi_theta * (1.0 / 3.0) * b
            - float(np.sum(chi * k_B * delta**2 / (4.0 * eta * nu)))
            - chi_phi * k_B**2 / (4.0 * eta_phi) * S**2
        ) / (k_B * nu_bar * S**2)
    active = ~dev_zero
    if not np.any(active):
        c2 = np.inf
    else:
        num = (
            chi * (1.0 - eta - eta_prime) * k_B / nu
            - chi_theta * n * k_B**4 / ((4.0 / 3.0) * b * nu)
            - chi_phi * k_B**2 * z**2 / (4.0 * eta_phi_i) * invdev
        )
        c2 = float(np.min(num[active] / (k_B * nu_bar * z**2 * invdev)[active]))
    if np.isinf(c1) and np.isinf(c2):
        chi_m = 1.0
    else:
        c_min = min(c1, c2)
        if not c_min > 0:
            raise CertificateError(
                "chi_m",
                f"nonpositive chi_m bound min{{C1, C2}} = {c_min:.6g}",
                detail={"c1": float(c1), "c2": float(c2)},
            )
        chi_m = 0.5 * c_min

    cert = Certificate(
        chi=chi,
        chi_m=chi_m,
        chi_theta=chi_theta,
        chi_phi=chi_phi,
        eta=eta,
        eta_prime=eta_prime,
        eta_phi_i=eta_phi_i,
        eta_phi=eta_phi,
        eta_m=0.25,
        eta_m_prime=0.25,
        eta_theta=1.0 / 3.0,
        eta_theta_prime=1.0 / 3.0,
    )
    report = evaluate_H_conditions(coeffs, eq, cert)
    if not report.admissible:
        raise CertificateError(
            "verify",
            "constructed certificate fails re-evaluation "
            f"(first violated: {report.first_violation()})",
            report=report,
        )
    return cert


def sample_equilibria(coeffs, kappa, eps0, lam, count, seed):
    """Rejection-sample electro-neutral equilibria inside the window.

    Species 2..N are drawn uniformly in their windows and the first
    density is solved from neutrality; a draw is accepted when the solved
    density lands inside its own window.  The attempt budget is 1000 per
    requested sample; exhausting it raises :class:`CertificateError` with
    the observed acceptance rate.
    """
    count = int(count)
    if count < 1:
        raise ParameterError(f"count must be at least 1, got {count}")
    lo, hi = claim_window(coeffs, kappa, eps0, lam)
    for i in range(coeffs.n_species):
        if not lo < hi[i]:
            raise CertificateError(
                "window",
                f"empty density window for species {i}: "
                f"({lo:.6g}, {hi[i]:.6g})",
                detail={"species": i, "lo": lo, "hi": float(hi[i])},
            )
    rng = np.random.default_rng(seed)
    z = coeffs.z
    budget = 1000 * count
    accepted = []
    attempts = 0
    while len(accepted) < count and attempts < budget:
        attempts += 1
        rest = rng.uniform(lo, hi[1:])
        first = -float(np.sum(z[1:] * rest)) / z[0]
        if lo < first < hi[0]:
            accepted.append(
                make_equilibrium(coeffs, np.concatenate([[first], rest]))
            )
    if len(accepted) < count:
        raise CertificateError(
            "sampling",
            f"accepted {len(accepted)}/{count} equilibria in {attempts} attempts "
            f"(acceptance rate {len(accepted) / attempts:.3g})",
            detail={"accepted": len(accepted), "attempts": attempts},
        )
    return accepted


#: recipe tuning grid tried by search_certificate before perturbation
SEARCH_KAPPAS = (0.05, 0.1, 0.2, 0.4)
SEARCH_EPS0 = (0.9, 0.95, 0.99)
SEARCH_LAMBDA_FRACTIONS = (0.5, 0.25, 0.75)


def _balanced_seed(coeffs, eq, tau):
    """Heuristic certificate ansatz used when the recipe grid fails.

    ``tau`` in (0, 1/2) trades headroom between the inequalities: the
    primed splittings are tau and the unprimed ones 1/2 - tau, so the H4
    heads keep the fixed factor 1/2 while small tau shrinks the H3
    species terms.  The chi weights spend half the H3 headroom, chi_theta
    is the geometric mean of its H1 floor and H4/H3 ceiling, and chi_m is
    fitted last exactly as in the constructive recipe.  Returns None when
    the ansatz is infeasible at this tau.
    """
    z, nu, delta, k_B = coeffs.z, coeffs.nu, eq.delta, coeffs.k_B
    n = coeffs.n_species
    dc = derived_constants(coeffs, eq)
    nu_bar, b = dc.nu_harm, dc.b
    S, Q = _charge_sums(coeffs, eq)
    invdev = (1.0 / nu - 1.0 / nu_bar) ** 2

    eta = np.full(n, 0.5 - tau)
    eta_prime = np.full(n, tau)
    eta_phi_i = tau * z**2 * delta / (4.0 * nu)
    eta_phi = float(np.sum(eta_phi_i))
    head3 = Q - float(np.sum(eta_phi_i)) - eta_phi  # = Q (1 - tau/2)
    # spend half the H3 headroom on the species terms, evenly
    chi = head3 / (2.0 * n) * (4.0 * tau * k_B * nu) / (z**2 * delta**2)

    floor = (2.0 / b) * (
        float(np.sum(chi * k_B * delta**2 / (4.0 * eta * nu)))
        + k_B**2 / (4.0 * eta_phi) * S**2
    )
    ceiling_terms = (
        chi * 0.5 * k_B / nu - k_B**2 * z**2 / (4.0 * eta_phi_i) * invdev
    ) * (4.0 * (0.5 - tau) * b * nu) / (n * k_B**4)
    ceiling = float(np.min(ceiling_terms))
    if S != 0.0:
        # reserve the other half of the H3 headroom for the S^2 term
        ceiling = min(ceiling, (head3 / 2.0) * (4.0 * tau * b) / (k_B**2 * S**2))
    if not 0 < floor < ceiling:
        return None
    chi_theta = float(np.sqrt(floor * ceiling))

    c1 = np.inf
    if S != 0.0:
        c1 = (
            chi_theta * 0.5 * b
            - float(np.sum(chi * k_B * delta**2 / (4.0 * eta * nu)))
            - k_B**2 / (4.0 * eta_phi) * S**2
        ) / (k_B * nu_bar * S**2)
    active = invdev > 0
    c2 = np.inf
    if np.any(active):
        num = (
            chi * 0.5 * k_B / nu
            - chi_theta * n * k_B**4 / (4.0 * (0.5 - tau) * b * nu)
            - k_B**2 * z**2 / (4.0 * eta_phi_i) * invdev
        )
        c2 = float(np.min(num[active] / (k_B * nu_bar * z**2 * invdev)[active]))
    c_min = min(c1, c2)
    if np.isinf(c_min):
        chi_m = 1.0
    elif c_min > 0:
        chi_m = 0.5 * c_min
    else:
        return None
    return Certificate(
        chi=chi, chi_m=chi_m, chi_theta=chi_theta, chi_phi=1.0,
        eta=eta, eta_prime=eta_prime, eta_phi_i=eta_phi_i, eta_phi=eta_phi,
        eta_m=0.25, eta_m_prime=0.25, eta_theta=0.5 - tau,
        eta_theta_prime=tau,
    )


def _lp_candidate(coeffs, eq, eta, eta_prime, eta_phi_i, eta_phi,
                  eta_theta, eta_theta_prime, eta_m=0.25, eta_m_prime=0.25):
    """Best chi weights for frozen splitting constants, by linear program.

    With every eta fixed, H1, H3 and H4 are linear in
    (chi_1..chi_N, chi_m, chi_theta) once chi_phi is pinned to 1, so
    maximizing the smallest absolute margin is a small LP.  Returns the
    optimal margin and the corresponding Certificate (margin -inf and
    None when the LP itself fails); the certificate witnesses
    admissibility exactly when the margin is positive.
    """
    z, nu, delta, k_B = coeffs.z, coeffs.nu, eq.delta, coeffs.k_B
    n = coeffs.n_species
    dc = derived_constants(coeffs, eq)
    nu_bar, b = dc.nu_harm, dc.b
    S, Q = _charge_sums(coeffs, eq)
    invdev = (1.0 / nu - 1.0 / nu_bar) ** 2

    # variables x = (chi_1..chi_N, chi_m, chi_theta, t); maximize t
    a1 = (1.0 - eta_theta - eta_theta_prime) * b
    b1 = (k_B * nu_bar / (4.0 * eta_m_prime)) * S**2
    c1 = k_B * delta**2 / (4.0 * eta * nu)
    d1 = k_B**2 / (4.0 * eta_phi) * S**2
    e3 = Q - float(np.sum(eta_phi_i)) - eta_phi
    f3 = k_B**2 * S**2 / (4.0 * eta_theta_prime * b)
    g3 = z**2 * delta**2 / (4.0 * eta_prime * k_B * nu)
    h4 = (1.0 - eta - eta_prime) * k_B / nu
    i4 = n * k_B**4 / (4.0 * eta_theta * b * nu)
    j4 = (k_B * nu_bar * z**2 / (4.0 * eta_m)) * invdev
    k4 = k_B**2 * z**2 / (4.0 * eta_phi_i) * invdev

    rows, rhs = [], []
    rows.append(np.concatenate([c1, [b1, -a1, 1.0]]))  # t <= H1
    rhs.append(-d1)
    rows.append(np.concatenate([g3, [0.0, f3, 1.0]]))  # t <= H3
    rhs.append(e3)
    for i in range(n):
        row = np.zeros(n + 3)
        row[i] = -h4[i]
        row[n] = j4[i]
        row[n + 1] = i4[i]
        row[n + 2] = 1.0
        rows.append(row)  # t <= H4_i
        rhs.append(-k4[i])
    bounds = [(1e-9, 1e9)] * (n + 2) + [(None, None)]
    cost = np.zeros(n + 3)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds,
                  method="highs")
    if not res.success:
        return -np.inf, None
    x = res.x
    cert = Certificate(
        chi=x[:n], chi_m=x[n], chi_theta=x[n + 1], chi_phi=1.0,
        eta=eta, eta_prime=eta_prime, eta_phi_i=eta_phi_i, eta_phi=eta_phi,
        eta_m=eta_m, eta_m_prime=eta_m_prime, eta_theta=eta_theta,
        eta_theta_prime=eta_theta_prime,
    )
    return float(x[-1]), cert


def _neutral_seed(coeffs, eq):
    n = coeffs.n_species
    quarter = np.full(n, 0.25)
    eta_phi_i = coeffs.z**2 * eq.delta / (4.0 * coeffs.nu)
    return Certificate(
        chi=np.ones(n), chi_m=1.0, chi_theta=1.0, chi_phi=1.0,
        eta=quarter, eta_prime=quarter, eta_phi_i=eta_phi_i,
        eta_phi=float(np.sum(eta_phi_i)), eta_m=0.25, eta_m_prime=0.25,
        eta_theta=0.25, eta_theta_prime=0.25,
    )


def _perturb(cert, slot, index, factor):
    value = getattr(cert, slot)
    if index is None:
        return replace(cert, **{slot: value * factor})
    new = np.array(value)
    new[index] *= factor
    return replace(cert, **{slot: new})


_SCALAR_SLOTS = ("chi_m", "chi_theta", "chi_phi", "eta_phi", "eta_m",
                 "eta_m_prime", "eta_theta", "eta_theta_prime")


def _cert_to_log(cert):
    parts = [np.log(cert.chi), np.log(cert.eta), np.log(cert.eta_prime),
             np.log(cert.eta_phi_i)]
    parts.append(np.log([getattr(cert, name) for name in _SCALAR_SLOTS]))
    return np.concatenate(parts)


def _cert_from_log(x, n):
    e = np.exp(np.clip(x, -300.0, 300.0))
    scalars = dict(zip(_SCALAR_SLOTS, e[4 * n:]))
    return Certificate(chi=e[:n], eta=e[n:2 * n], eta_prime=e[2 * n:3 * n],
                       eta_phi_i=e[3 * n:4 * n], **scalars)


def search_certificate(coeffs, eq, budget=2000, seed=0):
    """Find an admissible certificate without window assumptions.

    Three stages, all counted against ``budget`` evaluations of
    :func:`evaluate_H_conditions`:

    1. the constructive recipe over a small (kappa, eps0, lambda) grid,
    2. a balanced heuristic ansatz swept over its splitting scale, plus an
       all-ones fallback,
    3. exact chi optimization by linear programming over a grid of frozen
       splitting constants (H1/H3/H4 are linear in the chi weights),
    4. derivative-free polish (Nelder-Mead on the log-parameters) of the
       best candidates, which can move the splitting constants jointly,
    5. coordinate-wise multiplicative hill climbing, maximizing the
       minimum normalized margin (ties broken by the sum of normalized
       margins, so plateau moves still make progress).

    Returns the first certificate whose margins are all positive.  Raises
    :class:`CertificateError` (stage 'search') carrying the best report
    when the budget is exhausted.
    """
    eq = make_equilibrium(coeffs, eq.delta)
    budget = int(budget)
    rng = np.random.default_rng(seed)
    evaluations = 0
    best_report = None  # (score, report), for the failure message
    incumbent = None  # (score key, cert), climbable candidates only

    def score_key(report):
        margins = np.concatenate([
            [report.h1_normalized, report.h2_normalized, report.h3_normalized],
            report.h4_normalized,
        ])
        return (float(np.min(margins)), float(np.sum(margins)))

    def consider(cert):
        nonlocal evaluations, best_report, incumbent
        evaluations += 1
        report = evaluate_H_conditions(coeffs, eq, cert)
        key = score_key(report)
        if best_report is None or key[0] > best_report[0]:
            best_report = (key[0], report)
        if incumbent is None or key > incumbent[0]:
            incumbent = (key, cert)
        return report

    for kappa in SEARCH_KAPPAS:
        for eps0 in SEARCH_EPS0:
            lam_lo = 1.0 / (2.0 * eps0)
            for frac in SEARCH_LAMBDA_FRACTIONS:
                if evaluations >= budget:
                    break
                lam = lam_lo + frac * (1.0 - lam_lo)
                try:
                    cert = construct_certificate(coeffs, eq, kappa, eps0, lam)
                except CertificateError as failed:
                    evaluations += 1
                    if failed.report is not None:
                        score = failed.report.min_normalized
                        if best_report is None or score > best_report[0]:
                            best_report = (score, failed.report)
                    continue
                if consider(cert).admissible:
                    return cert

    seeds = [_balanced_seed(coeffs, eq, tau)
             for tau in (0.25, 0.1, 0.05, 0.02, 0.01, 0.004)]
    seeds.append(_neutral_seed(coeffs, eq))
    scored_seeds = []
    for seed_cert in seeds:
        if seed_cert is None or evaluations >= budget:
            continue
        report = consider(seed_cert)
        if report.admissible:
            return seed_cert
        scored_seeds.append((report.min_normalized, seed_cert))

    if incumbent is None and evaluations < budget:
        consider(_neutral_seed(coeffs, eq))

    found = None

    class _Feasible(Exception):
        pass

    def objective(x):
        nonlocal found
        if evaluations >= budget:
            raise _Feasible
        cert = _cert_from_log(x, n)
        report = consider(cert)
        if report.admissible:
            found = cert
            raise _Feasible
        return -report.min_normalized

    n = coeffs.n_species
    _, q_sum = _charge_sums(coeffs, eq)
    phi_shape = coeffs.z**2 * eq.delta / (4.0 * coeffs.nu)

    def lp_cell(params):
        # params = (eta_i, eta_i', eta_theta, eta_theta', gamma, beta_1..beta_N)
        nonlocal evaluations
        evaluations += 1  # the LP solve itself
        ei, eip, et, etp, gamma = params[:5]
        beta = np.asarray(params[5:])
        return _lp_candidate(
            coeffs, eq,
            eta=np.full(n, ei), eta_prime=np.full(n, eip),
            eta_phi_i=beta * phi_shape, eta_phi=gamma * q_sum,
            eta_theta=et, eta_theta_prime=etp,
        )

    splits = ((0.45, 0.05), (0.3, 0.2), (0.25, 0.25), (0.4, 0.1), (0.15, 0.35))
    best_cell = None  # (t, params)
    for ei, eip in splits:
        for et, etp in splits:
            for beta in (1.0, 0.4, 0.15):
                for gamma in (0.05, 0.15, 0.3):
                    if evaluations >= budget:
                        break
                    params = (ei, eip, et, etp, gamma) + (beta,) * n
                    t, candidate = lp_cell(params)
                    if best_cell is None or t > best_cell[0]:
                        best_cell = (t, params)
                    if t > 0 and consider(candidate).admissible:
                        return candidate

    if best_cell is not None and np.isfinite(best_cell[0]) and evaluations < budget:
        # refine the splitting constants around the best LP cell; the LP
        # keeps the chi weights exactly optimal at every trial point
        def eta_objective(u):
            if evaluations >= budget:
                raise _Feasible
            t, candidate = lp_cell(np.exp(u))
            if t > 0 and candidate is not None:
                if consider(candidate).admissible:
                    nonlocal found
                    found = candidate
                    raise _Feasible
            return -t

        try:
            minimize(eta_objective, np.log(best_cell[1]), method="Nelder-Mead",
                     options={"maxfev": max(1, (budget - evaluations) // 3),
                              "adaptive": True, "xatol": 1e-9, "fatol": 1e-12})
        except _Feasible:
            if found is not None:
                return found

    starts = []
    if incumbent is not None:
        starts.append(incumbent[1])
    for _, seed_cert in sorted(scored_seeds, key=lambda t: -t[0]):
        if all(seed_cert is not s for s in starts):
            starts.append(seed_cert)
    for start in starts[:5]:
        if evaluations >= budget:
            break
        try:
            minimize(objective, _cert_to_log(start), method="Nelder-Mead",
                     options={"maxfev": max(1, (budget - evaluations) // 3),
                              "adaptive": True, "xatol": 1e-8, "fatol": 1e-10})
        except _Feasible:
            if found is not None:
                return found

    slots = [("chi", i) for i in range(coeffs.n_species)]
    slots += [("eta", i) for i in range(coeffs.n_species)]
    slots += [("eta_prime", i) for i in range(coeffs.n_species)]
    slots += [("eta_phi_i", i) for i in range(coeffs.n_species)]
    slots += [(name, None) for name in (
        "chi_m", "chi_theta", "chi_phi", "eta_phi", "eta_m", "eta_m_prime",
        "eta_theta", "eta_theta_prime")]
    factors = (0.5, 0.8, 0.9, 1.1, 1.25, 2.0)
    while evaluations < budget and incumbent is not None:
        slot, index = slots[rng.integers(len(slots))]
        factor = factors[rng.integers(len(factors))]
        candidate = _perturb(incumbent[1], slot, index, factor)
        if consider(candidate).admissible:
            return candidate

    best_score = best_report[0] if best_report else float("-inf")
    raise CertificateError(
        "search",
        f"budget of {budget} evaluations exhausted "
        f"(best normalized margin {best_score:.6g})",
        report=best_report[1] if best_report else None,
        detail={"evaluations": evaluations, "best_score": float(best_score)},
    )
