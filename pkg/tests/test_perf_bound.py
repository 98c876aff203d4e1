import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_tube_mpc import perf_bound as pb
from adaptive_tube_mpc.errors import GammaNonpositive, InvalidEpsilon
from adaptive_tube_mpc.estimator import c1
from adaptive_tube_mpc.geometry import spectral_norm
from adaptive_tube_mpc.harness.config import prepare
from adaptive_tube_mpc.harness.simulate import v_infinity_upper
from adaptive_tube_mpc.model import ConstraintSet

from helpers import lqr_regime_config
from oracles import finite_horizon_riccati


def make_inputs(**kw):
    d = dict(N=3, mu=0.1, c_Q=1.0, c_R=1.0, c_A=0.8, c_B=0.5, c_cl=0.6, c_f=10.0, c_theta=2.0,
             c3=5.0, lam_min_Q=1.0, a_norm=0.9, dub=(4.0, 4.0, 4.0), theta_err_norm=0.3)
    d.update(kw)
    return pb.BoundInputs(**d)


class TestConstants:
    def test_c2_values(self):
        assert pb.c2(4, 1.0) == 4.0
        assert pb.c2(0, 0.3) == pytest.approx(0.0)
        # (1 - 0.25^2) / 0.75 - 1
        assert pb.c2(1, 0.25) == pytest.approx(0.25)
        assert pb.c2(2, 0.25) == pytest.approx(0.25 + 0.0625)

    @given(st.integers(0, 20), st.floats(0.0, 3.0))
    @settings(max_examples=60, deadline=None)
    def test_c2_is_power_sum(self, l, c):
        assert pb.c2(l, c) == pytest.approx(sum(c ** i for i in range(1, l + 1)), rel=1e-7, abs=1e-9)

    def test_c3_edge_cases(self):
        assert pb.c3(1, 0.5, 3.0, 7.0) == pytest.approx(pb.c2(1, 0.5) * 7.0)
        assert pb.c3(6, 0.0, 3.0, 7.0) == 0.0

    def test_c3_on_example_by_naive_sum(self, example_cfg, example_bound_inputs):
        cfg = example_cfg
        ccl = example_bound_inputs.c_cl
        Qbar = spectral_norm(cfg.Q + cfg.K.T @ cfg.R @ cfg.K)
        total = 0.0
        for l in range(1, cfg.N):
            total += sum(ccl ** i for i in range(1, l + 1)) * Qbar
        total += sum(ccl ** i for i in range(1, cfg.N + 1)) * spectral_norm(cfg.P)
        assert example_bound_inputs.c3 == pytest.approx(total, rel=1e-12)

    def test_gamma(self):
        assert pb.gamma(0.25, 2.0, np.eye(2)) == pytest.approx(0.5)
        assert pb.gamma(1e-12, 2.0, np.eye(2)) == pytest.approx(1.0)
        assert pb.gamma(0.5, 2.0, np.eye(2)) == pytest.approx(0.0)
        assert pb.gamma(0.6, 2.0, np.eye(2)) < 0
        with pytest.raises(InvalidEpsilon):
            pb.gamma(0.0, 2.0, np.eye(2))

    def test_model_constants_match_vertex_norms(self, example_cfg, example_bound_inputs):
        sys, K = example_cfg.system, example_cfg.K
        rng = np.random.default_rng(0)
        for t in rng.uniform(0, 0.75, size=(200, 3)):
            A, B = sys.assemble(t)
            assert spectral_norm(A) ** 2 <= example_bound_inputs.c_A + 1e-12
            assert spectral_norm(B) ** 2 <= example_bound_inputs.c_B + 1e-12
            assert spectral_norm(A + B @ K) ** 2 <= example_bound_inputs.c_cl + 1e-12


class TestDeltaU:
    def test_example_input_interval(self, example_cfg):
        dub = pb.delta_u_bound(example_cfg.constraints, ubar=[[0.0]] * 3)
        assert dub.per_step == pytest.approx([36.0] * 3)
        assert dub.uniform == pytest.approx(144.0)

    def test_center_at_vertex(self, example_cfg):
        dub = pb.delta_u_bound(example_cfg.constraints, ubar=[[6.0]])
        assert dub.per_step[0] == pytest.approx(144.0)

    def test_per_step_length_check(self):
        with pytest.raises(ValueError):
            pb.DeltaUBound([1.0], 4.0).values(3, use_per_step=True)

    def test_two_inputs(self):
        zc = ConstraintSet.from_boxes([-1], [1], [-1, -2], [1, 2])
        assert pb.delta_u_bound(zc).uniform == pytest.approx(4 + 16)


class TestCTheta:
    def test_lqr_regime_matches_riccati(self, example_cfg):
        cfg = lqr_regime_config(example_cfg)
        prep = prepare(cfg)
        A, B = cfg.system.assemble(cfg.theta_star)
        S = finite_horizon_riccati(A, B, cfg.Q, cfg.R, cfg.P, cfg.N)
        est = pb.estimate_c_theta(cfg.system, cfg.constraints, cfg.cost, prep.tube, cfg.theta_star,
                                  prep.theta_vertices, bisect_iters=4)
        ratio = est / spectral_norm(S)
        assert 1.0 / 1.2 <= ratio <= 1.2 + 1e-9
        # at the edge of the feasible region constraints bind; inside, V_N is exactly quadratic
        inner = pb.estimate_c_theta(cfg.system, cfg.constraints, cfg.cost, prep.tube, cfg.theta_star,
                                    prep.theta_vertices, bisect_iters=4, scales=(0.1, 0.2))
        halved = pb.estimate_c_theta(cfg.system, cfg.constraints, cfg.cost, prep.tube, cfg.theta_star,
                                     prep.theta_vertices, bisect_iters=4, scales=(0.05, 0.1))
        assert halved == pytest.approx(inner, rel=1e-6)

    def test_example_value(self, example_bound_inputs):
        assert np.isfinite(example_bound_inputs.c_theta) and example_bound_inputs.c_theta > 0


class TestValueBound:
    def test_unit_weights(self):
        assert pb.prop1_terms(make_inputs(), 1.0, 1.0).c_V == pytest.approx(4.0)

    def test_zero_deviation_and_error(self):
        t = pb.prop1_terms(make_inputs(dub=(0.0, 0.0, 0.0)), 0.5, 0.5)
        assert t.rhs(3.0, 0.0) == pytest.approx(t.c_V * 3.0 + t.c_f)

    def test_terms_by_hand(self):
        inp = make_inputs()
        e1, e2 = 0.5, 2.0
        t = pb.prop1_terms(inp, e1, e2)
        geom = 0 * 4 + 1 * 4 + (1 + 0.8) * 4
        assert t.delta_bar1 == pytest.approx((1 + e1) * (1 + 1 / e2) * 1.0 * 0.5 * geom)
        assert t.delta_bar2 == pytest.approx((1 + 1 / e2) * 1.0 * 12.0)
        c1sq = sum(c1(l, 0.9) ** 2 for l in range(3))
        assert t.d_theta_coeff == pytest.approx(c1sq / 0.1 ** 2 * (1 + 1 / e1))

    def test_mu_exponent_flag(self):
        t2 = pb.prop1_terms(make_inputs(), 1.0, 1.0)
        t1 = pb.prop1_terms(make_inputs(dtheta_mu_exponent=1), 1.0, 1.0)
        assert t2.d_theta_coeff == pytest.approx(t1.d_theta_coeff / 0.1)
        with pytest.raises(ValueError):
            make_inputs(dtheta_mu_exponent=3)

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(InvalidEpsilon):
            pb.prop1_terms(make_inputs(), 0.0, 1.0)

    def test_example_terms_finite(self, example_cfg, example_prep):
        cfg = example_cfg
        t = pb.prop1_bound(cfg.system, cfg.cost, example_prep.tube, cfg.theta_hat0, 0.5, 0.5, example_prep.mu,
                           pb.delta_u_bound(cfg.constraints))
        assert all(np.isfinite([t.c_V, t.delta_bar, t.d_theta_coeff, t.c_f]))
        assert t.c_f == pytest.approx(example_prep.c_f)


    def test_holds_along_simulated_trajectories(self, example_cfg, example_prep, example_log,
                                                  truth_direction_runs):
        cfg, prep = example_cfg, example_prep
        dub = pb.delta_u_bound(cfg.constraints)
        farthest = max(truth_direction_runs, key=lambda r: r.theta_err_norm).log
        checked = 0
        for log in (example_log, farthest):
            for x, th, vn in zip(log.states, log.estimates, log.values_VN):
                err = float(np.linalg.norm(cfg.theta_star - th))
                terms = pb.prop1_bound(cfg.system, cfg.cost, prep.tube, th, 0.5, 0.5, prep.mu, dub)
                v_up = v_infinity_upper(cfg, prep, x0=x)
                assert vn <= terms.rhs(v_up, err)
                checked += 1
        assert checked >= 20


class TestClosedLoopBound:
    def test_zero_error_zero_a(self):
        r = pb.thm1_bound(make_inputs(theta_err_norm=0.0), 0.5, 0.5, 0.1)
        assert r.a_of_theta0 == 0.0

    @pytest.mark.parametrize("t", [0.5, 2.0, 10.0])
    def test_a_is_quadratic(self, t):
        inp = make_inputs()
        g = 1 - 0.1 * inp.c_theta / inp.lam_min_Q
        base = pb.a_function(inp, 0.5, 0.1, g, 0.3)
        assert pb.a_function(inp, 0.5, 0.1, g, 0.3 * t) == pytest.approx(t * t * base, rel=1e-10)

    def test_small_eps3_recovers_value_bound(self):
        inp = make_inputs()
        r = pb.thm1_bound(inp, 0.5, 0.5, 1e-12)
        p1 = pb.prop1_terms(inp, 0.5, 0.5)
        assert r.gamma == pytest.approx(1.0)
        assert r.alpha_V == pytest.approx(p1.c_V)
        assert r.alpha_f == pytest.approx(inp.c_f)

    def test_gamma_nonpositive_rejected(self):
        inp = make_inputs()
        with pytest.raises(GammaNonpositive):
            pb.thm1_bound(inp, 0.5, 0.5, 0.5)
        good = pb.thm1_bound(inp, 0.5, 0.5, 0.1)
        with pytest.raises(GammaNonpositive):
            pb.BoundReport(**_report_fields(good, gamma=0.0))

    def test_total_bound_composition(self):
        r = pb.thm1_bound(make_inputs(), 0.5, 0.5, 0.1)
        assert r.total_bound(2.0) == pytest.approx(r.alpha_V * 2 + r.alpha_f + r.alpha_Delta + r.a_of_theta0)


class TestMonotonicity:
    EPS = (0.5, 0.5, 0.1)

    @given(st.floats(0.0, 9.0), st.floats(0.0, 9.0))
    @settings(max_examples=60, deadline=None)
    def test_alphas_nonincreasing_in_gamma(self, c_lo, c_hi):
        c_lo, c_hi = sorted((c_lo, c_hi))
        # larger c_theta means smaller gamma at fixed eps3
        hi_gamma = pb.thm1_bound(make_inputs(c_theta=c_lo), *self.EPS)
        lo_gamma = pb.thm1_bound(make_inputs(c_theta=c_hi), *self.EPS)
        assert hi_gamma.gamma >= lo_gamma.gamma
        for name in ("alpha_V", "alpha_Delta", "alpha_f"):
            assert getattr(hi_gamma, name) <= getattr(lo_gamma, name) * (1 + 1e-12)

    @given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 100.0))
    @settings(max_examples=60, deadline=None)
    def test_total_nondecreasing_in_error(self, e_lo, e_hi, v_inf):
        e_lo, e_hi = sorted((e_lo, e_hi))
        assert (pb.thm1_bound(make_inputs(), *self.EPS, theta_err_norm=e_lo).total_bound(v_inf)
                <= pb.thm1_bound(make_inputs(), *self.EPS, theta_err_norm=e_hi).total_bound(v_inf) * (1 + 1e-12))

    @given(st.integers(0, 2), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
    @settings(max_examples=60, deadline=None)
    def test_total_nondecreasing_in_each_dub_entry(self, idx, lo, hi):
        lo, hi = sorted((lo, hi))
        base = [4.0, 4.0, 4.0]
        small, big = list(base), list(base)
        small[idx], big[idx] = lo, hi
        t_small = pb.thm1_bound(make_inputs(dub=tuple(small)), *self.EPS).total_bound(3.0)
        t_big = pb.thm1_bound(make_inputs(dub=tuple(big)), *self.EPS).total_bound(3.0)
        assert t_small <= t_big * (1 + 1e-12)

    @given(st.floats(0.0, 100.0), st.floats(0.0, 100.0))
    @settings(max_examples=60, deadline=None)
    def test_total_nondecreasing_in_c_f(self, lo, hi):
        lo, hi = sorted((lo, hi))
        t_lo = pb.thm1_bound(make_inputs(c_f=lo), *self.EPS).total_bound(3.0)
        t_hi = pb.thm1_bound(make_inputs(c_f=hi), *self.EPS).total_bound(3.0)
        assert t_lo <= t_hi * (1 + 1e-12)


def _report_fields(report, **override):
    d = report.as_dict()
    d.pop("slope")
    d.pop("intercept")
    d.update(override)
    return d


class TestEpsilonSearch:
    def test_degenerate_case_hits_lower_edge(self):
        inp = make_inputs(dub=(0.0, 0.0, 0.0), theta_err_norm=0.0)
        eps = pb.optimize_epsilons(inp)
        for e in eps:
            assert e == pytest.approx(pb.EPS_GRID[0], rel=1e-3)

    def test_beats_random_restarts(self):
        inp = make_inputs()
        eps = pb.optimize_epsilons(inp)
        best = pb.epsilon_objective(inp, eps)
        rng = np.random.default_rng(0)
        tried = 0
        while tried < 100:
            trial = np.exp(rng.uniform(np.log(1e-4), np.log(1e2), size=3))
            val = pb.epsilon_objective(inp, trial)
            if np.isfinite(val):
                tried += 1
                assert best <= val + 1e-9
        assert pb.gamma(eps[2], inp.c_theta, np.eye(1)) > 0

    def test_example_weights_keep_gamma_positive(self, example_bound_inputs):
        eps = pb.optimize_epsilons(example_bound_inputs)
        assert pb.thm1_bound(example_bound_inputs, *eps).gamma > 0
