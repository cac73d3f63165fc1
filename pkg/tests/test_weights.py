import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from udham import weights as W


FAMILIES = [W.gevrey(1), W.gevrey(2), W.gevrey_log(1, 1), W.gevrey_log(1.5, 2),
            W.exp_log(), W.exp_sqrt()]


def sp_of(fam, L=512):
    return W.ScaleProfile(W.build_sequence(fam, L))


class TestBuild:
    def test_gevrey1_is_analytic(self):
        ws = W.build_sequence(W.gevrey(1), 10)
        assert np.allclose(ws.values, [math.factorial(l) for l in range(11)])
        assert np.allclose(ws.mu, np.arange(1, 11))
        assert np.allclose(ws.bigN, 1.0)
        assert np.allclose(ws.nu, 1.0)

    def test_gevrey2_values(self):
        ws = W.build_sequence(W.gevrey(2), 5)
        assert np.allclose(ws.values, [1, 1, 4, 36, 576, 14400])

    def test_gevrey_log_normalized(self):
        # mu_0 = (0+1)^a (ln e)^b = 1 resolves the (M_{a,b})_0 = 0 anomaly
        ws = W.build_sequence(W.gevrey_log(1, 1), 8)
        assert ws.values[0] == 1.0 and ws.values[1] == 1.0
        assert np.isclose(ws.mu[1], 2.0 * math.log(math.e + 1.0))

    def test_derived_sequence_identities(self):
        for fam in FAMILIES:
            ws = W.build_sequence(fam, 256)
            l = np.arange(len(ws.log_mu))
            assert np.allclose(ws.log_mu, ws.log_nu + np.log1p(l), rtol=1e-12)
            assert np.allclose(ws.log_M[1:], np.cumsum(ws.log_mu), rtol=1e-12)

    def test_invalid_parameters(self):
        with pytest.raises(W.ParameterError):
            W.build_sequence(W.gevrey(0.5), 16)
        with pytest.raises(W.ParameterError):
            W.build_sequence(W.gevrey(1), 1)
        with pytest.raises(W.ParameterError):
            W.gevrey_log(1, -0.5) and W.build_sequence(W.gevrey_log(1, -0.5), 16)

    def test_log_space_survives_wild_growth(self):
        ws = W.build_sequence(W.exp_log(), 2048)
        assert np.all(np.isfinite(ws.log_M))
        assert not np.isfinite(ws.values[-1])  # linear space overflows, logs do not


class TestConditions:
    def test_h1_exact_for_builtins(self):
        for fam in FAMILIES:
            rep = W.check_conditions(W.build_sequence(fam, 512))
            assert rep.h1_pass, fam.tag

    def test_h1_failure_located(self):
        # M_2 < 1 means nu_1 < nu_0 = 1
        ws = W.from_values([1.0, 1.0, 0.5, 0.25])
        rep = W.check_conditions(ws)
        assert not rep.h1_pass
        assert rep.h1_first_violation == 1

    def test_h1_implies_factorial_floor(self):
        for fam in FAMILIES:
            ws = W.build_sequence(fam, 256)
            assert np.all(ws.log_N >= -1e-10)  # N_l >= 1 <=> M_l >= l!

    def test_known_h3_verdicts(self):
        assert W.check_conditions(W.build_sequence(W.gevrey(1), 64)).known_verdicts["H3"] is False
        assert W.check_conditions(W.build_sequence(W.gevrey(2), 64)).known_verdicts["H3"] is True
        assert W.check_conditions(W.build_sequence(W.gevrey_log(1, 2), 64)).known_verdicts["H3"] is True
        assert W.check_conditions(W.build_sequence(W.exp_sqrt(), 64)).known_verdicts["MG"] is False

    def test_h3_partial_sum_matches_direct(self):
        ws = W.build_sequence(W.gevrey(2), 512)
        direct = sum(1.0 / (l + 1) ** 2 for l in range(512))
        assert np.isclose(W.check_conditions(ws).h3_partial_sum, direct, rtol=1e-10)

    def test_mg_value_nondecreasing_in_horizon(self):
        ws = W.build_sequence(W.exp_sqrt(), 512)
        v1 = W.check_conditions(ws, mg_horizon=128).mg_value
        v2 = W.check_conditions(ws, mg_horizon=256).mg_value
        assert v2 >= v1 - 1e-12

    def test_product_lemma_scans(self):
        # Banach-algebra constant: never above 4 pi^2/3 for H1 families
        for fam in FAMILIES:
            ws = W.build_sequence(fam, 320)
            assert W.product_lemma_scan(ws, 300) <= W.C_NORM + 1e-9, fam.tag
            assert W.composition_lemma_scan(ws, 300) <= W.C_NORM + 1e-9, fam.tag

    def test_nj_nk_lemma_scans(self):
        # H1 pass implies N_j N_k <= N_{j+k} and N_j N_k <= N_{j+k-1} (j,k >= 1)
        for fam in FAMILIES:
            ws = W.build_sequence(fam, 200)
            logN = ws.log_N
            J = np.arange(1, 100)
            for j in J:
                k = np.arange(1, 100)
                assert np.all(logN[j] + logN[k] <= logN[j + k] + 1e-10)
                assert np.all(logN[j] + logN[k] <= logN[j + k - 1] + 1e-10)

    def test_mg_mu_bound(self):
        for fam in [W.gevrey(1), W.gevrey(2), W.gevrey_log(1.5, 1)]:
            assert W.mg_mu_bound_scan(W.build_sequence(fam, 400)), fam.tag


class TestCauchy:
    def test_sigma_bar_analytic(self):
        sp = sp_of(W.gevrey(1))
        assert np.isclose(sp.sigma_bar, math.log(2.0))
        assert not sp.sigma_bar_capped
        assert sp.cauchy_c(sp.sigma_bar).value == pytest.approx(1.0)

    def test_sigma_bar_capped_for_steep_mu(self):
        # mu_1 = 4 for Gevrey-2, so the true C = 1 threshold 2 ln 2 exceeds 1
        sp = sp_of(W.gevrey(2))
        assert sp.sigma_bar_capped
        assert sp.sigma_bar == W.SIGMA_BAR_CAP

    def test_known_values_m1(self):
        sp = sp_of(W.gevrey(1))
        r = sp.cauchy_c(0.8)
        assert r.value == pytest.approx(1.0) and r.argmax == 0
        r = sp.cauchy_c(0.1)
        assert r.value == pytest.approx(10.0 * math.exp(-0.9), rel=1e-12)
        assert r.argmax == 9 and r.certified

    def test_lower_bound_e_sigma(self):
        for fam in FAMILIES:
            sp = sp_of(fam)
            for sigma in [0.01, 0.05, 0.2, 0.5, 0.9]:
                assert sp.cauchy_c(sigma).value >= 1.0 / (math.e * sigma) - 1e-12

    def test_monotone_nonincreasing(self):
        sp = sp_of(W.gevrey(2), 2048)
        sigmas = np.linspace(1e-3, sp.sigma_bar, 60)
        vals = [sp.cauchy_c(float(s)).value for s in sigmas]
        assert np.all(np.diff(vals) <= 1e-9)

    def test_inverse_roundtrip(self):
        sp = sp_of(W.gevrey(2), 4096)
        for y in [1.5, 10.0, 1e3, 1e6]:
            s = sp.cauchy_c_inv(y)
            assert sp.cauchy_c(s).value == pytest.approx(y, rel=1e-10)

    def test_inverse_at_one_is_sigma_bar(self):
        for fam in FAMILIES:
            sp = sp_of(fam)
            assert sp.cauchy_c_inv(1.0) == sp.sigma_bar

    def test_inverse_domain_error(self):
        with pytest.raises(W.ParameterError):
            sp_of(W.gevrey(1)).cauchy_c_inv(0.5)

    def test_expsqrt_inverse_log_asymptotics(self):
        # C^-1(y) ~ 1/(4 ln y)
        sp = sp_of(W.exp_sqrt(), 1 << 16)
        prods = [sp.cauchy_c_inv(y) * 4.0 * math.log(y) for y in [1e3, 1e5, 1e8]]
        assert max(prods) < 1.05 and min(prods) > 0.9

    @given(st.floats(min_value=0.01, max_value=0.6))
    @settings(max_examples=25, deadline=None)
    def test_c_brute_force_agrees(self, sigma):
        sp = sp_of(W.gevrey(1.5), 256)
        l = np.arange(256)
        brute = np.max(np.exp(sp.ws.log_mu - sigma * l))
        assert sp.cauchy_c(sigma).value == pytest.approx(float(brute), rel=1e-12)


class TestOmega:
    def test_zero_below_one(self):
        for fam in FAMILIES:
            sp = sp_of(fam)
            assert sp.omega(0.5).value == 0.0
            assert sp.omega(1.0).value == 0.0

    def test_known_value_m1(self):
        sp = sp_of(W.gevrey(1))
        r = sp.omega(math.e)
        assert r.value == pytest.approx(2.0 - math.log(2.0), rel=1e-12)
        assert r.argmax == 2

    def test_argmax_formula_vs_brute_force(self):
        rng = np.random.default_rng(7)
        for fam in FAMILIES:
            sp = sp_of(fam, 512)
            ys = np.exp(rng.uniform(0.0, 6.0, size=100))
            for y in ys:
                assert sp.omega(float(y)).value == pytest.approx(
                    sp.omega_brute(float(y)), rel=1e-12, abs=1e-12)

    def test_strictly_increasing(self):
        sp = sp_of(W.gevrey(2), 2048)
        ys = np.logspace(0.01, 5, 40)
        vals = [sp.omega_value(float(y)) for y in ys]
        assert np.all(np.diff(vals) > 0)

    def test_horizon_error_carries_partial(self):
        sp = sp_of(W.gevrey(1), 64)
        with pytest.raises(W.HorizonError) as exc:
            sp.omega(1e6)
        assert exc.value.partial > 0


class TestAsymptotics:
    @pytest.mark.parametrize("alpha,L", [(1, 4_000_000), (1.5, 200_000), (2, 8192)])
    def test_gevrey_slopes(self, alpha, L):
        sp = W.ScaleProfile(W.build_sequence(W.gevrey(alpha), L))
        ys = np.logspace(2, 6, 17)
        lom = np.log([sp.omega_value(float(y)) for y in ys])
        lci = np.log([sp.cauchy_c_inv(float(y)) for y in ys])
        lo = np.log(ys)
        # top-decade chord of the window: the asymptotic regime estimator
        s_om = (lom[-1] - lom[-5]) / (lo[-1] - lo[-5])
        s_ci = (lci[-1] - lci[-5]) / (lo[-1] - lo[-5])
        assert abs(s_om * alpha - 1.0) < 0.03
        assert abs(-s_ci * alpha - 1.0) < 0.03

    def test_matching_gevrey(self):
        sp = W.ScaleProfile(W.build_sequence(W.gevrey(1.5), 700_000))
        rep = sp.matching_report(np.logspace(4, 8, 9))
        assert 0.9 <= rep["min"] and rep["max"] <= 1.1

    def test_not_matching_expsqrt(self):
        sp = W.ScaleProfile(W.build_sequence(W.exp_sqrt(), 1 << 16))
        rep = sp.matching_report(np.logspace(3, 7, 9))
        # C^-1 ~ 1/ln y while 1/Omega decays polynomially: ratio drifts from 1
        assert rep["min"] < 0.75

    def test_not_matching_explog(self):
        sp = W.ScaleProfile(W.build_sequence(W.exp_log(), 1 << 15))
        rep = sp.matching_report(np.logspace(3, 6, 7))
        assert not (0.9 <= rep["min"] and rep["max"] <= 1.1)


@given(st.lists(st.floats(min_value=0.1, max_value=3.0), min_size=3, max_size=30))
@settings(max_examples=40, deadline=None)
def test_custom_sequences_roundtrip(log_mu_tail):
    log_mu = np.concatenate(([0.0], np.array(log_mu_tail)))
    ws = W.from_log_mu(log_mu)
    assert np.isclose(ws.log_M[-1], np.sum(log_mu))
    l = np.arange(len(log_mu))
    assert np.allclose(np.exp(ws.log_mu), (l + 1) * np.exp(ws.log_nu), rtol=1e-12)
