import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnpf.model import (
    ParameterError,
    PhysicalCoefficients,
    electroneutrality_residual,
    make_equilibrium,
)
from pnpf.admissibility import (
    Certificate,
    CertificateError,
    claim_window,
    construct_certificate,
    dissipation_coefficients,
    evaluate_H_conditions,
    sample_equilibria,
    search_certificate,
)


def coeffs_with(z=(-1.0, 1.0), k_B=1.0, nu=(1.0, 1.0), k=1.0, eps=1.0,
                lambda0=1.0, rho0=1.0, c0=1.0, c=(1.0, 1.0), **kw):
    return PhysicalCoefficients(z=np.asarray(z), k_B=k_B, nu=np.asarray(nu),
                                k=k, eps=eps, lambda0=lambda0, rho0=rho0,
                                c0=c0, c=np.asarray(c), **kw)


# midpoint of the admissible lambda range (1/(2 eps0), 1) for eps0 = 0.95
LAM_MID = (1.0 / (2.0 * 0.95) + 1.0) / 2.0

# drag coefficients of a salt-like pair used in the asymmetric cases
NU_SALT = (1.334, 2.032)


def unit_certificate(n=2, **overrides):
    base = dict(
        chi=np.ones(n), chi_m=1.0, chi_theta=1.0, chi_phi=1.0,
        eta=np.full(n, 0.25), eta_prime=np.full(n, 0.25),
        eta_phi_i=np.full(n, 0.1), eta_phi=0.2,
        eta_m=0.25, eta_m_prime=0.25,
        eta_theta=1.0 / 3.0, eta_theta_prime=1.0 / 3.0,
    )
    base.update(overrides)
    return Certificate(**base)


class TestCertificate:
    def test_rejects_nonpositive_weight(self):
        with pytest.raises(ParameterError, match="chi_m"):
            unit_certificate(chi_m=0.0)
        with pytest.raises(ParameterError, match="chi"):
            unit_certificate(chi=np.array([1.0, -1.0]))

    def test_rejects_wrong_vector_length(self):
        with pytest.raises(ParameterError, match="eta_prime"):
            unit_certificate(eta_prime=np.ones(3))

    def test_config_round_trip_is_exact(self):
        cert = unit_certificate(chi=np.array([0.1, 7.25]), chi_theta=1e-3)
        back = Certificate.from_config(cert.to_config())
        assert np.array_equal(back.chi, cert.chi)
        assert back.chi_theta == cert.chi_theta
        assert np.array_equal(back.eta_phi_i, cert.eta_phi_i)
        assert back.eta_m_prime == cert.eta_m_prime

    def test_from_config_names_missing_key(self):
        cfg = unit_certificate().to_config()
        del cfg["eta_phi"]
        with pytest.raises(ParameterError, match="eta_phi"):
            Certificate.from_config(cfg)


class TestEvaluator:
    def test_h2_is_half_for_quarter_splits(self):
        # 1 - 1/4 - 1/4, independent of every other entry
        co = coeffs_with()
        eq = make_equilibrium(co, [0.3, 0.3])
        for scale in (1.0, 17.0, 1e-4):
            cert = unit_certificate(chi=scale * np.ones(2), chi_theta=scale)
            rep = evaluate_H_conditions(co, eq, cert)
            assert rep.h2_margin == 0.5

    def test_margins_independent_of_chi_m_when_drag_is_uniform(self):
        # with equal drags the mean-deviation factors vanish and a neutral
        # state kills the charge-weighted sum, so chi_m decouples entirely
        co = coeffs_with()
        eq = make_equilibrium(co, [0.4, 0.4])
        base = unit_certificate()
        rep_a = evaluate_H_conditions(co, eq, base)
        rep_b = evaluate_H_conditions(co, eq, unit_certificate(chi_m=1e6))
        assert rep_a.h1_margin == rep_b.h1_margin
        assert rep_a.h3_margin == rep_b.h3_margin
        assert np.array_equal(rep_a.h4_margins, rep_b.h4_margins)

    def test_first_violation_names_the_failing_inequality(self):
        co = coeffs_with()
        eq = make_equilibrium(co, [0.4, 0.4])
        rep = evaluate_H_conditions(co, eq, unit_certificate(eta_m=0.6, eta_m_prime=0.6))
        assert rep.h2_margin < 0
        assert rep.first_violation() == "H2"
        small = make_equilibrium(co, [0.05, 0.05])
        good = construct_certificate(co, small, kappa=0.05, eps0=0.95, lam=LAM_MID)
        assert evaluate_H_conditions(co, small, good).first_violation() is None

    @given(scale=st.floats(min_value=1e-3, max_value=1e3),
           delta=st.floats(min_value=0.05, max_value=0.95))
    @settings(max_examples=40, deadline=None)
    def test_joint_weight_scaling_scales_margins(self, scale, delta):
        # every inequality is jointly homogeneous of degree one in
        # (chi, chi_m, chi_theta, chi_phi), so normalized margins and the
        # admissibility verdict cannot depend on a common positive factor
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [delta, delta])
        cert = unit_certificate(eta_phi_i=np.array([0.05, 0.08]), eta_phi=0.13)
        scaled = Certificate.from_config({
            **cert.to_config(),
            "chi": [scale * v for v in cert.chi],
            "chi_m": scale * cert.chi_m,
            "chi_theta": scale * cert.chi_theta,
            "chi_phi": scale * cert.chi_phi,
        })
        rep = evaluate_H_conditions(co, eq, cert)
        rep_s = evaluate_H_conditions(co, eq, scaled)
        np.testing.assert_allclose(rep_s.h1_margin, scale * rep.h1_margin, rtol=1e-12)
        np.testing.assert_allclose(rep_s.h3_margin, scale * rep.h3_margin, rtol=1e-12)
        np.testing.assert_allclose(rep_s.h4_margins, scale * rep.h4_margins, rtol=1e-12)
        np.testing.assert_allclose(rep_s.h1_normalized, rep.h1_normalized, rtol=1e-12)
        assert rep_s.admissible == rep.admissible


class TestWindow:
    def test_lower_edge_value(self):
        co = coeffs_with()
        lo, hi = claim_window(co, 0.3, 0.95, LAM_MID)
        # (1 / (2 * LAM_MID * 0.95)) ** (1 / 0.3)
        np.testing.assert_allclose(lo, 0.28980552392675901, rtol=1e-14)
        assert hi.shape == (2,)

    def test_uniform_drag_caps_at_one(self):
        co = coeffs_with()
        _, hi = claim_window(co, 0.25, 0.9, 0.9)
        np.testing.assert_array_equal(hi, [1.0, 1.0])

    def test_drag_spread_shrinks_the_upper_edge(self):
        co = coeffs_with(nu=(1.0, 2.2))
        lo, hi = claim_window(co, 0.3, 0.95, LAM_MID)
        assert hi[0] == 1.0
        assert hi[1] < lo  # window for the fast species is empty

    def test_lower_edge_below_one(self):
        for kappa, eps0, lam in [(0.05, 0.95, LAM_MID), (0.4, 0.99, 0.99),
                                 (1.0, 0.6, 0.95)]:
            lo, _ = claim_window(coeffs_with(), kappa, eps0, lam)
            assert 0.0 < lo < 1.0

    def test_rejects_bad_tuning(self):
        co = coeffs_with()
        with pytest.raises(ParameterError, match="kappa"):
            claim_window(co, 0.0, 0.95, LAM_MID)
        with pytest.raises(ParameterError, match="eps0"):
            claim_window(co, 0.3, 1.0, LAM_MID)
        with pytest.raises(ParameterError, match="lambda"):
            claim_window(co, 0.3, 0.95, 0.5)  # below 1/(2*0.95)
        with pytest.raises(ParameterError, match="lambda"):
            claim_window(co, 0.3, 0.95, 1.0)


class TestConstruct:
    def test_frozen_small_density_case(self):
        # hand-checked reference: uniform unit drags, delta = 0.05 on both
        # species, kappa = 0.05, eps0 = 0.95.  With zero drag deviations
        # chi_i = 0.5 * delta**(-kappa) / delta and both chi_m quotients
        # are vacuous, so chi_m falls back to 1.
        co = coeffs_with()
        eq = make_equilibrium(co, [0.05, 0.05])
        cert = construct_certificate(co, eq, kappa=0.05, eps0=0.95, lam=LAM_MID)
        np.testing.assert_allclose(cert.chi, 11.615863496415422, rtol=1e-13)
        np.testing.assert_allclose(cert.chi_theta, 1.8037572305165059, rtol=1e-13)
        assert cert.chi_m == 1.0
        assert cert.chi_phi == 1.0
        np.testing.assert_allclose(cert.eta_prime, 0.58079317482077109, rtol=1e-13)
        np.testing.assert_allclose(cert.eta_phi_i, [0.0125, 0.0125], rtol=1e-14)
        rep = evaluate_H_conditions(co, eq, cert)
        assert rep.admissible
        np.testing.assert_allclose(rep.h1_margin, 0.37098106377900042, rtol=1e-13)
        np.testing.assert_allclose(rep.h2_margin, 0.5, rtol=1e-15)
        np.testing.assert_allclose(rep.h3_margin, 0.025, rtol=1e-13)
        np.testing.assert_allclose(rep.h4_margins, 1.8289871325225087, rtol=1e-13)

    def test_recipe_splitting_constants(self):
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [0.05, 0.05])
        cert = construct_certificate(co, eq, kappa=0.05, eps0=0.9, lam=0.8)
        assert cert.eta_m == 0.25 and cert.eta_m_prime == 0.25
        assert cert.eta_theta == pytest.approx(1 / 3)
        assert cert.eta_theta_prime == pytest.approx(1 / 3)
        np.testing.assert_allclose(cert.eta, 1.0 - 0.9)
        np.testing.assert_allclose(cert.eta_prime, 0.5 * 0.05 ** -0.05)
        np.testing.assert_allclose(
            cert.eta_phi_i, co.z**2 * eq.delta / (4.0 * co.nu))
        assert cert.eta_phi == pytest.approx(float(np.sum(cert.eta_phi_i)))

    def test_asymmetric_drag_fits_chi_m(self):
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [0.05, 0.05])
        cert = construct_certificate(co, eq, kappa=0.05, eps0=0.95, lam=LAM_MID)
        np.testing.assert_allclose(cert.chi_m, 14.192530611222761, rtol=1e-12)
        assert evaluate_H_conditions(co, eq, cert).admissible

    def test_density_outside_window_fails_with_location(self):
        co = coeffs_with()
        eq = make_equilibrium(co, [0.05, 0.05])
        with pytest.raises(CertificateError) as err:
            construct_certificate(co, eq, kappa=0.3, eps0=0.95, lam=LAM_MID)
        assert err.value.stage == "window"
        assert err.value.detail["lo"] > 0.05

    def test_empty_chi_theta_interval_is_reported(self):
        # inside the window at kappa = 0.3 the two upper bounds cross and
        # the interval closes; the error carries both endpoints
        co = coeffs_with()
        eq = make_equilibrium(co, [0.3, 0.3])
        with pytest.raises(CertificateError) as err:
            construct_certificate(co, eq, kappa=0.3, eps0=0.95, lam=LAM_MID)
        assert err.value.stage == "chi_theta_interval"
        assert err.value.detail["lower"] >= err.value.detail["upper"]

    def test_rejects_assumption_violating_coefficients(self):
        co = coeffs_with(nu=(1.0, 10.0))
        eq_delta = [0.05, 0.05]
        with pytest.raises(ParameterError, match="global assumptions"):
            construct_certificate(
                co, make_equilibrium(coeffs_with(), eq_delta),
                kappa=0.05, eps0=0.95, lam=LAM_MID)

    def test_rejects_charged_state(self):
        co = coeffs_with()
        with pytest.raises(ParameterError, match="neutral"):
            make_equilibrium(co, [0.05, 0.06])


class TestDissipation:
    def test_gradient_coefficients_equal_margins(self):
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [0.05, 0.05])
        cert = construct_certificate(co, eq, kappa=0.05, eps0=0.95, lam=LAM_MID)
        rep = evaluate_H_conditions(co, eq, cert)
        dis = dissipation_coefficients(co, eq, cert)
        np.testing.assert_array_equal(dis.d, rep.h4_margins)
        assert dis.d_theta == rep.h1_margin
        assert dis.d_phi == rep.h3_margin

    def test_charge_zero_order_coefficient(self):
        # chi_m / eps times sum z_i^2 delta_i / nu_i = 1 * (0.5 + 0.5);
        # with uniform drags chi_m decouples from all four inequalities,
        # so pinning it to 1 on a found certificate keeps admissibility
        co = coeffs_with()
        eq = make_equilibrium(co, [0.5, 0.5])
        base = search_certificate(co, eq, budget=2000, seed=0)
        cert = Certificate.from_config({**base.to_config(), "chi_m": 1.0})
        dis = dissipation_coefficients(co, eq, cert)
        np.testing.assert_allclose(dis.d_m_tilde, 1.0, rtol=1e-14)

    def test_potential_zero_order_coefficient(self):
        # chi_phi k_B eps / nu with both drags equal to 2
        co = coeffs_with(nu=(2.0, 2.0))
        eq = make_equilibrium(co, [0.5, 0.5])
        cert = search_certificate(co, eq, budget=2000, seed=0)
        assert cert.chi_phi == 1.0
        dis = dissipation_coefficients(co, eq, cert)
        np.testing.assert_allclose(dis.d_phi_tilde, 0.5, rtol=1e-14)

    def test_charge_gradient_coefficient(self):
        co = coeffs_with()
        eq = make_equilibrium(co, [0.4, 0.4])
        base = search_certificate(co, eq, budget=2000, seed=0)
        cert = Certificate.from_config({
            **base.to_config(), "chi_m": 3.0, "eta_m": 0.25, "eta_m_prime": 0.25})
        dis = dissipation_coefficients(co, eq, cert)
        # chi_m (1 - 1/4 - 1/4) k_B / nu
        np.testing.assert_allclose(dis.d_m, 1.5, rtol=1e-14)

    def test_all_coefficients_positive(self):
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [0.2, 0.2])
        cert = search_certificate(co, eq, budget=2000, seed=0)
        dis = dissipation_coefficients(co, eq, cert)
        assert np.all(dis.d > 0)
        for v in (dis.d_theta, dis.d_m, dis.d_m_tilde, dis.d_phi, dis.d_phi_tilde):
            assert v > 0

    def test_refuses_inadmissible_certificate(self):
        co = coeffs_with()
        eq = make_equilibrium(co, [0.4, 0.4])
        bad = unit_certificate(eta_m=0.9)
        with pytest.raises(CertificateError) as err:
            dissipation_coefficients(co, eq, bad)
        assert err.value.stage == "dissipation"
        assert err.value.report is not None
        assert err.value.report.first_violation() == "H2"


class TestSampler:
    def test_count_window_and_neutrality(self):
        co = coeffs_with()
        eqs = sample_equilibria(co, kappa=0.3, eps0=0.95, lam=LAM_MID,
                                count=12, seed=3)
        lo, hi = claim_window(co, 0.3, 0.95, LAM_MID)
        assert len(eqs) == 12
        for eq in eqs:
            assert np.all(eq.delta > lo) and np.all(eq.delta < hi)
            assert abs(electroneutrality_residual(co.z, eq.delta)) < 1e-12

    def test_deterministic_in_seed(self):
        co = coeffs_with(nu=NU_SALT)
        a = sample_equilibria(co, kappa=0.3, eps0=0.95, lam=LAM_MID, count=5, seed=9)
        b = sample_equilibria(co, kappa=0.3, eps0=0.95, lam=LAM_MID, count=5, seed=9)
        c = sample_equilibria(co, kappa=0.3, eps0=0.95, lam=LAM_MID, count=5, seed=10)
        assert all(np.array_equal(x.delta, y.delta) for x, y in zip(a, b))
        assert any(not np.array_equal(x.delta, y.delta) for x, y in zip(a, c))

    def test_empty_window_is_rejected_up_front(self):
        co = coeffs_with(nu=(1.0, 2.2))
        with pytest.raises(CertificateError) as err:
            sample_equilibria(co, kappa=0.3, eps0=0.95, lam=LAM_MID,
                              count=4, seed=0)
        assert err.value.stage == "window"

    def test_samples_are_certifiable(self):
        # the recipe itself cannot close the chi_theta interval this deep
        # into the window, so the randomized search is the fallback route
        co = coeffs_with()
        eqs = sample_equilibria(co, kappa=0.3, eps0=0.95, lam=LAM_MID,
                                count=6, seed=42)
        for eq in eqs:
            try:
                cert = construct_certificate(co, eq, kappa=0.3, eps0=0.95,
                                             lam=LAM_MID)
            except CertificateError:
                cert = search_certificate(co, eq, budget=2000, seed=0)
            assert evaluate_H_conditions(co, eq, cert).admissible


class TestSearch:
    def test_finds_certificate_where_recipe_fails(self):
        co = coeffs_with()
        eq = make_equilibrium(co, [0.6, 0.6])
        with pytest.raises(CertificateError):
            construct_certificate(co, eq, kappa=0.3, eps0=0.95, lam=LAM_MID)
        cert = search_certificate(co, eq, budget=2000, seed=0)
        assert evaluate_H_conditions(co, eq, cert).admissible

    def test_asymmetric_drag_mid_density(self):
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [0.6, 0.6])
        cert = search_certificate(co, eq, budget=4000, seed=0)
        assert evaluate_H_conditions(co, eq, cert).admissible

    def test_three_species(self):
        co = coeffs_with(z=(-2.0, 1.0, 1.0), nu=(1.0, 1.5, 0.8), c=(1, 1, 1))
        eq = make_equilibrium(co, [0.2, 0.25, 0.15])
        cert = search_certificate(co, eq, budget=4000, seed=0)
        assert evaluate_H_conditions(co, eq, cert).admissible

    def test_deterministic_in_seed_and_budget(self):
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [0.6, 0.6])
        a = search_certificate(co, eq, budget=4000, seed=5)
        b = search_certificate(co, eq, budget=4000, seed=5)
        assert np.array_equal(a.chi, b.chi)
        assert a.chi_theta == b.chi_theta and a.chi_m == b.chi_m
        assert np.array_equal(a.eta_phi_i, b.eta_phi_i)

    def test_failure_carries_best_candidate_diagnostics(self):
        # far outside the certifiable region for this drag pair; the
        # search must stop at its budget and report how close it got
        co = coeffs_with(nu=NU_SALT)
        eq = make_equilibrium(co, [0.9, 0.9])
        with pytest.raises(CertificateError) as err:
            search_certificate(co, eq, budget=1500, seed=0)
        assert err.value.stage == "search"
        assert err.value.detail["evaluations"] > 0
        assert err.value.detail["best_score"] < 0
