import math

import numpy as np
import pytest

import pdmp_avgctl as pa
from pdmp_avgctl.operators import build_policy_path, cum_rate, kernel_matrix, op_G, op_H, op_L, op_calL

from toy_models import renewal_doc, swap_cycle_doc


def path_for(model, state_index=0, policy=None, fill=32):
    policy = policy if policy is not None else pa.FeedbackPolicy.lowest_feasible(model)
    return build_policy_path(model, policy, state_index, fill=fill)


@pytest.fixture(scope="module")
def trivial_rate2(tmp_path_factory):
    doc = swap_cycle_doc(lam=(2.0, 2.0))
    return pa.model_from_dict(doc)


@pytest.fixture(scope="module")
def drift_rate_linear():
    # unit drift on [0, 1), jump rate equal to the position
    doc = renewal_doc()
    n = len(doc["grid"]["points"])
    doc["rates"]["lambda"] = [[x] for x in doc["grid"]["points"]] + [[1.0]]
    return pa.model_from_dict(doc)


@pytest.fixture(scope="module")
def drift_rate_one():
    doc = renewal_doc()
    n = len(doc["grid"]["points"])
    doc["rates"]["lambda"] = [[1.0]] * (n + 1)
    doc["constants"]["K_lambda"] = 3.0
    return pa.model_from_dict(doc)


class TestCumRate:
    def test_zero_time(self, trivial_rate2):
        assert cum_rate(path_for(trivial_rate2), 0.0) == 0.0

    def test_constant_rate(self, trivial_rate2):
        path = path_for(trivial_rate2)
        assert cum_rate(path, 3.0) == pytest.approx(6.0, abs=1e-10)

    def test_linear_rate_along_drift(self, drift_rate_linear):
        path = path_for(drift_rate_linear, state_index=0)
        # integral of s over [0, 1]
        assert cum_rate(path, 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_monotone_in_t(self, drift_rate_linear):
        path = path_for(drift_rate_linear, state_index=0)
        ts = np.linspace(0.0, path.end_time, 40)
        vals = [cum_rate(path, t) for t in ts]
        assert np.all(np.diff(vals) >= -1e-15)

    def test_out_of_range_rejected(self, trivial_rate2):
        path = path_for(trivial_rate2)
        with pytest.raises(ValueError):
            cum_rate(path, path.end_time * 1.5)


class TestOpL:
    def test_zero_integrand(self, trivial_rate2):
        v = np.zeros((2, 1))
        assert op_L(0.0, v, path_for(trivial_rate2)) == 0.0

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_trivial_flow_closed_form(self, trivial_rate2, alpha):
        v = np.ones((2, 1))
        got = op_L(alpha, v, path_for(trivial_rate2))
        assert got == pytest.approx(1.0 / (alpha + 2.0), abs=1e-8)

    def test_no_rate_reduces_to_transit_time(self):
        model = pa.model_from_dict(renewal_doc())
        v = np.ones((model.n_states, 1))
        got = op_L(0.0, v, path_for(model, state_index=4))  # x = 0.25
        assert got == pytest.approx(0.75, abs=1e-10)

    def test_linearity(self, drift_rate_one):
        rng = np.random.default_rng(3)
        path = path_for(drift_rate_one, state_index=2)
        v1 = rng.uniform(0.0, 2.0, size=(drift_rate_one.n_states, 1))
        v2 = rng.uniform(0.0, 2.0, size=(drift_rate_one.n_states, 1))
        a, b = 1.7, -0.4
        combo = op_L(0.0, a * v1 + b * v2, path)
        parts = a * op_L(0.0, v1, path) + b * op_L(0.0, v2, path)
        assert combo == pytest.approx(parts, rel=1e-12)


class TestOpCalL:
    def test_trivial_flow(self, trivial_rate2):
        assert op_calL(0.0, path_for(trivial_rate2)) == pytest.approx(0.5, abs=1e-8)

    def test_zero_rate_is_transit_time(self):
        model = pa.model_from_dict(renewal_doc())
        assert op_calL(0.0, path_for(model, state_index=8)) == pytest.approx(0.5, abs=1e-12)

    def test_bounded_by_k_lambda(self, models, workspaces):
        for name, model in models.items():
            rng = np.random.default_rng(11)
            for _ in range(3):
                policy = pa.FeedbackPolicy.random_feasible(model, rng)
                for j in range(model.n_states):
                    path = build_policy_path(model, policy, j, workspace=workspaces[name])
                    for alpha in (0.0, -model.constants.c):
                        val = op_calL(alpha, path)
                        assert 0.0 < val <= model.constants.K_lambda + 1e-9, (name, j, alpha)

    def test_alpha_below_minus_c_rejected(self, trivial_rate2):
        with pytest.raises(ValueError):
            op_calL(-trivial_rate2.constants.c - 0.1, path_for(trivial_rate2))


class TestOpH:
    def test_trivial_flow_gives_zero(self, trivial_rate2):
        w = np.full((0, 1), 9.9)
        assert op_H(0.0, w, path_for(trivial_rate2)) == 0.0

    def test_zero_rate_boundary_weight(self):
        model = pa.model_from_dict(renewal_doc())
        w = np.full((1, 1), 3.0)
        assert op_H(0.0, w, path_for(model, state_index=4)) == pytest.approx(3.0, abs=1e-12)

    def test_unit_rate_discounts_by_survival(self, drift_rate_one):
        w = np.full((1, 1), 3.0)
        got = op_H(0.0, w, path_for(drift_rate_one, state_index=4))
        assert got == pytest.approx(3.0 * math.exp(-0.75), abs=1e-8)


class TestOpG:
    def test_mass_identity(self, models, workspaces):
        for name, model in models.items():
            ones = np.ones(model.n_states)
            rng = np.random.default_rng(5)
            policy = pa.FeedbackPolicy.random_feasible(model, rng)
            for j in range(model.n_states):
                path = build_policy_path(model, policy, j, workspace=workspaces[name])
                assert op_G(0.0, ones, path) == pytest.approx(1.0, abs=1e-6), (name, j)

    def test_point_mass_kernel_returns_h_at_target(self, trivial_rate2):
        h = np.array([4.0, -2.5])
        got = op_G(0.0, h, path_for(trivial_rate2, state_index=0))
        assert got == pytest.approx(h[1], abs=1e-9)

    def test_zero_h(self, trivial_rate2):
        assert op_G(0.0, np.zeros(2), path_for(trivial_rate2)) == 0.0

    def test_monotone_in_h(self, models, workspaces):
        rng = np.random.default_rng(17)
        for name in ("ctmdp_3state", "drift_boundary_64"):
            model = models[name]
            policy = pa.FeedbackPolicy.lowest_feasible(model)
            h1 = rng.uniform(-1.0, 1.0, model.n_states)
            h2 = h1 + rng.uniform(0.0, 1.0, model.n_states)
            for j in range(0, model.n_states, 7):
                path = build_policy_path(model, policy, j, workspace=workspaces[name])
                assert op_G(0.0, h1, path) <= op_G(0.0, h2, path) + 1e-12

    def test_linearity_in_h(self, models, workspaces):
        rng = np.random.default_rng(23)
        model = models["decay_flow_16"]
        policy = pa.FeedbackPolicy.lowest_feasible(model)
        path = build_policy_path(model, policy, 3, workspace=workspaces["decay_flow_16"])
        h1 = rng.normal(size=model.n_states)
        h2 = rng.normal(size=model.n_states)
        combo = op_G(0.0, 0.3 * h1 + 1.9 * h2, path)
        parts = 0.3 * op_G(0.0, h1, path) + 1.9 * op_G(0.0, h2, path)
        assert combo == pytest.approx(parts, rel=1e-10)


class TestKernelMatrix:
    def test_swap_kernel_is_antidiagonal(self, trivial_rate2):
        km = kernel_matrix(trivial_rate2, pa.FeedbackPolicy.lowest_feasible(trivial_rate2))
        assert np.allclose(km.matrix, [[0.0, 1.0], [1.0, 0.0]], atol=1e-9)

    def test_rows_sum_to_one_at_alpha_zero(self, models, workspaces):
        rng = np.random.default_rng(29)
        for name, model in models.items():
            for _ in range(3):
                policy = pa.FeedbackPolicy.random_feasible(model, rng)
                km = kernel_matrix(model, policy, workspace=workspaces[name])
                assert np.max(np.abs(km.row_sums - 1.0)) <= 1e-6, name

    def test_discounting_shrinks_rows(self, models, workspaces):
        for name, model in models.items():
            policy = pa.FeedbackPolicy.lowest_feasible(model)
            km = kernel_matrix(model, policy, alpha=model.constants.c, workspace=workspaces[name])
            assert np.all(km.row_sums <= 1.0 + 1e-9), name

    def test_matches_op_g_on_unit_vectors(self, trivial_rate2):
        model = trivial_rate2
        policy = pa.FeedbackPolicy.lowest_feasible(model)
        km = kernel_matrix(model, policy, fill=32)
        for j in range(model.n_states):
            path = path_for(model, state_index=j)
            for z in range(model.n_states):
                e = np.zeros(model.n_states)
                e[z] = 1.0
                assert km.matrix[j, z] == pytest.approx(op_G(0.0, e, path), abs=1e-12)


class TestBoundChain:
    def test_flow_costs_bounded_by_growth_envelope(self, models, workspaces):
        rng = np.random.default_rng(31)
        for name, model in models.items():
            c = model.constants
            envelope = c.M * (1.0 + c.b * c.K_lambda) / c.c * model.lyapunov_g
            for _ in range(3):
                policy = pa.FeedbackPolicy.random_feasible(model, rng)
                _, _, cost, _ = workspaces[name].assemble(policy, 0.0)
                assert np.all(cost >= -1e-12), name
                assert np.all(cost <= envelope + 1e-9), name


class TestTabulatedFlowModels:
    def test_unit_velocity_table_matches_affine_twin(self):
        doc = renewal_doc()
        doc["flow"] = {"kind": "tabulated1d", "velocity": [1.0] * 16}
        m_tab = pa.model_from_dict(doc)
        m_aff = pa.model_from_dict(renewal_doc())
        policy = pa.FeedbackPolicy.lowest_feasible(m_tab)
        ev_tab = pa.evaluate_policy(m_tab, policy)
        ev_aff = pa.evaluate_policy(m_aff, policy)
        assert ev_tab.rho == pytest.approx(ev_aff.rho, abs=1e-12)
        assert np.max(np.abs(ev_tab.h - ev_aff.h)) <= 1e-12

    def test_varying_velocity_solves_and_validates(self):
        doc = renewal_doc()
        doc["flow"] = {"kind": "tabulated1d",
                       "velocity": [1.0 + 0.5 * x for x in doc["grid"]["points"]]}
        doc["rates"]["lambda"] = [[0.4]] * 17
        model = pa.model_from_dict(doc)
        assert pa.validate_model(model) == []
        result, policy, trace = pa.run_pia(model, pa.FeedbackPolicy.lowest_feasible(model))
        assert trace.status == "converged"
        assert pa.residual(model, policy, result) <= 1e-8
        verdict = pa.mc_validate(model, policy, result.rho, 0, 3000.0, 8, seed=11)
        assert verdict.passed


class TestPolicyPath:
    def test_node_actions_feasible(self, models, workspaces):
        rng = np.random.default_rng(37)
        for name, model in models.items():
            policy = pa.FeedbackPolicy.random_feasible(model, rng)
            mask = model.feasible_mask
            for j in range(model.n_states):
                path = build_policy_path(model, policy, j, workspace=workspaces[name])
                anchors = workspaces[name].geometry[j].seg_anchor
                assert np.all(mask[anchors, path.interval_actions])

    def test_tail_bound_covers_the_neglected_integral(self, trivial_rate2):
        # truncate a constant-rate line early and compare the left-out mass
        # against the advertised bound
        doc = swap_cycle_doc(lam=(2.0, 2.0))
        doc["flow"] = {"kind": "trivial", "t_max": 1.0}
        model = pa.model_from_dict(doc)
        policy = pa.FeedbackPolicy.lowest_feasible(model)
        path = build_policy_path(model, policy, 0, fill=64)
        v = np.ones((2, 1))
        exact_tail = 0.5 - op_L(0.0, v, path)  # full integral is 1/lambda
        bound = path.flow_integral_tail_bound(0.0, 1.0)
        assert 0.0 < exact_tail <= bound * (1.0 + 1e-9)

    def test_truncation_weight_negligible_on_bundled(self, models, workspaces):
        for name, model in models.items():
            policy = pa.FeedbackPolicy.lowest_feasible(model)
            for j in range(model.n_states):
                path = build_policy_path(model, policy, j, workspace=workspaces[name])
                assert path.tail_weight(0.0) <= 1e-12, (name, j)
