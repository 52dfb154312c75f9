"""Asymptotic 1D network model: leading solve, correctors, wall corrector,
reconstruction and residuals."""

import numpy as np
import pytest

from tubenet import asym1d as a1
from tubenet import stokes2d, tubegraph as tg
from tubenet.errors import OrderUnsupported, SolvabilityViolation, UncoveredPoint
from tubenet.transport2d import TransportParams
from conftest import EPS, straight_spec, y_spec


def tparams(kappa=1.0, beta=0.0):
    return TransportParams(kappa=kappa, beta=beta, epsilon=EPS)


class TestMeanVelocity:
    def test_reference_profile(self):
        assert a1.mean_velocity(1.0, 1.0) == pytest.approx(1.0 / 6.0)
        # closed form verified against numerical quadrature of the profile
        theta, amp = 0.7, 2.3
        z = np.linspace(-theta / 2, theta / 2, 20001)
        quad = np.trapezoid(amp * (theta**2 / 4 - z**2), z)
        assert a1.mean_velocity(theta, amp) == pytest.approx(quad, rel=1e-8)

    def test_vanishing_cases(self):
        assert a1.mean_velocity(1e-9, 1.0) == pytest.approx(0.0, abs=1e-20)
        assert a1.mean_velocity(0.8, 0.0) == 0.0

    def test_invalid_theta(self):
        with pytest.raises(ValueError):
            a1.mean_velocity(0.0, 1.0)


class TestLeadingSolve:
    def test_linear_oracle(self, straight_graph):
        flow = stokes2d.solve_network_flow(straight_graph, {"in": 0.0, "out": 0.0})
        sol = a1.solve_leading(straight_graph, flow, tparams(), n_per_edge=64)
        grid = sol.grids["e1"]
        assert np.max(np.abs(sol.values("e1") - (1.0 - 0.5 * grid))) <= 1e-10

    @pytest.mark.parametrize("kappa,beta", [(1.0, -0.3), (0.2, 0.4), (0.05, -1.0)])
    def test_characteristic_equation_oracle(self, straight_graph, unit_flow, kappa, beta):
        sol = a1.solve_leading(straight_graph, unit_flow, tparams(kappa, beta), n_per_edge=128)
        v = unit_flow.flux["e1"] / EPS
        roots = np.roots([kappa, -v, 2.0 * beta])
        a_mat = np.array([[1.0, 1.0], [np.exp(roots[0]), np.exp(roots[1])]])
        ab = np.linalg.solve(a_mat, [1.0, 0.5])
        grid = sol.grids["e1"]
        exact = (ab[0] * np.exp(roots[0] * grid) + ab[1] * np.exp(roots[1] * grid)).real
        assert np.max(np.abs(sol.values("e1") - exact)) <= 1e-8

    def test_symmetric_y_constant_state(self, y_graph):
        spec = y_spec(q_in=0.7, q_a=0.7, q_b=0.7)
        graph = tg.build_graph(spec)
        flow = stokes2d.solve_network_flow(graph, {"in": 0.0, "outA": 0.0, "outB": 0.0})
        sol = a1.solve_leading(graph, flow, tparams(), n_per_edge=64)
        for eid in ("e1", "e2", "e3"):
            assert np.max(np.abs(sol.values(eid) - 0.7)) <= 1e-12
        assert abs(sol.kirchhoff_residual()["O"]) <= 1e-10

    def test_kirchhoff_residual_with_flow(self, y_graph, y_flow):
        sol = a1.solve_leading(y_graph, y_flow, tparams(0.5, -0.4), n_per_edge=256)
        assert abs(sol.kirchhoff_residual()["O"]) <= 1e-10

    def test_total_flux_balance_follows(self, y_graph, y_flow):
        """Sum Q = 0 plus value continuity plus diffusive Kirchhoff imply the
        total (diffusive + convective) nodal balance; assert both."""
        params = tparams(0.5, -0.4)
        sol = a1.solve_leading(y_graph, y_flow, params, n_per_edge=256)
        node = "O"
        diff = sol.kirchhoff_residual()[node]
        total = 0.0
        for eid in y_graph.incident(node):
            e = y_graph.edge(eid)
            away = 1.0 if e.a == node else -1.0
            vmean = y_flow.flux[eid] / EPS * away  # away-oriented mean velocity
            total += (
                -params.kappa * e.theta * sol.end_derivative(eid, node)
                + vmean * sol.node_value(node)
            )
        assert abs(diff) <= 1e-10
        assert abs(total) <= 1e-10

    def test_orientation_flip_invariance(self, unit_flow):
        spec = straight_spec()
        graph = tg.build_graph(spec)
        sol = a1.solve_leading(graph, unit_flow, tparams(0.3, -0.4), n_per_edge=200)

        flipped_spec = straight_spec()
        flipped_spec["edges"][0]["from"] = "out"
        flipped_spec["edges"][0]["to"] = "in"
        graph_f = tg.build_graph(flipped_spec)
        flow_f = stokes2d.solve_network_flow(graph_f, {"in": EPS / 6.0, "out": -EPS / 6.0})
        sol_f = a1.solve_leading(graph_f, flow_f, tparams(0.3, -0.4), n_per_edge=200)

        # same physical values at mirrored grid points
        assert np.max(np.abs(sol.values("e1") - sol_f.values("e1")[::-1])) <= 1e-12
        # away-oriented end derivatives agree (the sign flip is internal)
        for nid in ("in", "out"):
            d1 = sol.end_derivative("e1", nid)
            d2 = sol_f.end_derivative("e1", nid)
            assert d1 == pytest.approx(d2, abs=1e-12 * max(1.0, abs(d1)))


class TestCorrectors:
    @pytest.fixture(scope="class")
    def recursion(self, straight_graph, unit_flow):
        params = tparams(1.0, -0.4)
        sol = a1.solve_leading(straight_graph, unit_flow, params, n_per_edge=256)
        corr, sol = a1.corrector_recursion(sol, params, k=3)
        return corr, sol, params

    def test_first_two_profiles_vanish(self, recursion):
        corr, _sol, _p = recursion
        assert np.max(np.abs(corr[0].coefs["e1"])) == 0.0
        assert np.max(np.abs(corr[1].coefs["e1"])) == 0.0

    def test_structural_degrees(self, recursion):
        corr, _sol, _p = recursion
        assert corr[2].degree == 4
        assert corr[3].degree == 6
        assert corr[2].coefs["e1"].shape[1] == 5
        assert corr[3].coefs["e1"].shape[1] == 7
        # the order-2 profile genuinely realizes its top degree
        assert np.max(np.abs(corr[2].coefs["e1"][:, 4])) > 0.0

    def test_zero_mean_exact(self, recursion):
        corr, _sol, _p = recursion
        for j in (2, 3):
            assert np.max(np.abs(corr[j].mean("e1"))) <= 1e-12

    def test_order_cap(self, recursion):
        _corr, sol, params = recursion
        with pytest.raises(OrderUnsupported):
            a1.corrector_recursion(sol, params, k=4)

    def test_solvability_check_fires_on_inconsistent_data(self, straight_graph, unit_flow):
        params = tparams(1.0, -0.4)
        sol = a1.solve_leading(straight_graph, unit_flow, params, n_per_edge=128)
        # corrupt the leading profile: the transverse Neumann data no longer match
        sol.orders[0]["e1"] = np.sin(3.0 * sol.grids["e1"])
        with pytest.raises(SolvabilityViolation):
            a1.corrector_recursion(sol, params, k=2)


class TestWallCorrector:
    def test_zero_trace(self):
        coef = a1.wall_corrector(np.zeros(4), np.zeros(4), kappa=1.0, beta=1.0)
        assert np.max(np.abs(coef)) == 0.0

    def test_neumann_identity_exact(self):
        # symbolic (exact rational) proof of the basis identities
        assert a1.wall_corrector_symbolic_identity()
        # numeric residual at machine level for arbitrary data
        rng = np.random.default_rng(11)
        top = rng.standard_normal(9)
        bot = rng.standard_normal(9)
        coef = a1.wall_corrector(top, bot, kappa=0.7, beta=-0.4)
        r_top, r_bot = a1.wall_corrector_identity_residual(coef, top, bot, 0.7, -0.4)
        assert r_top <= 1e-15 and r_bot <= 1e-15
        # dyadic-rational data keep the numeric identity exact as well
        coef = a1.wall_corrector(np.ones(3), np.ones(3), kappa=1.0, beta=1.0)
        r_top, r_bot = a1.wall_corrector_identity_residual(coef, np.ones(3), np.ones(3), 1.0, 1.0)
        assert r_top == 0.0 and r_bot == 0.0

    def test_unit_trace_derivative(self):
        coef = a1.wall_corrector(np.ones(1), np.ones(1), kappa=1.0, beta=1.0)
        dcoef = coef[0, 1:] * np.arange(1, 4)
        top_flux = dcoef @ (0.5 ** np.arange(3))
        assert top_flux == pytest.approx(1.0)  # kappa d/dxi2 = beta c_k at +1/2

    def test_symmetric_traces_give_even_profile(self):
        # direct computation from the cubic: equal wall traces produce an
        # even polynomial (beta/kappa)(xi^2 - 1/4)
        coef = a1.wall_corrector(np.ones(3), np.ones(3), kappa=1.0, beta=1.0)
        assert np.max(np.abs(coef[:, 1])) == 0.0
        assert np.max(np.abs(coef[:, 3])) == 0.0
        assert coef[0, 0] == pytest.approx(-0.25)
        assert coef[0, 2] == pytest.approx(1.0)


class TestReconstruction:
    def test_leading_only_matches_cbar(self, straight_graph, straight_domain, unit_flow):
        params = tparams(1.0, -0.4)
        sol = a1.solve_leading(straight_graph, unit_flow, params, n_per_edge=256)
        corr, sol = a1.corrector_recursion(sol, params, k=0)
        ans = a1.build_ansatz(sol, corr, params)
        pts = np.column_stack([np.linspace(0.05, 0.95, 11), np.full(11, 0.01)])
        vals = a1.evaluate_ansatz(ans, straight_domain, pts)
        expected = sol.interp("e1", pts[:, 0])
        # the eps^(k+2) wall corrector is the only transverse content at k=0
        assert np.max(np.abs(vals - expected)) <= EPS**2 * 0.5

    def test_uncovered_point(self, straight_graph, straight_domain, unit_flow):
        params = tparams()
        sol = a1.solve_leading(straight_graph, unit_flow, params, n_per_edge=64)
        corr, sol = a1.corrector_recursion(sol, params, k=0)
        ans = a1.build_ansatz(sol, corr, params)
        with pytest.raises(UncoveredPoint):
            a1.evaluate_ansatz(ans, straight_domain, np.array([[0.5, 1.0]]))

    def test_residual_trivial_case(self, straight_graph, straight_domain):
        flow = stokes2d.solve_network_flow(straight_graph, {"in": 0.0, "out": 0.0})
        params = tparams(1.0, 0.0)
        sol = a1.solve_leading(straight_graph, flow, params, n_per_edge=128)
        corr, sol = a1.corrector_recursion(sol, params, k=0)
        ans = a1.build_ansatz(sol, corr, params)
        res = a1.ansatz_residual(ans, straight_domain, params)
        assert res["interior_l2"] <= 1e-8
        assert res["wall_robin_sup"] <= 1e-12

    def test_residual_decreases_with_order(self, straight_graph, straight_domain, unit_flow):
        # monotonicity of the regular expansion itself (no wall corrector:
        # its interior contribution jumps with the order-k wall traces)
        params = tparams(1.0, -0.4)
        res = {}
        for k in (0, 1, 2):
            sol = a1.solve_leading(straight_graph, unit_flow, params, n_per_edge=256)
            corr, sol = a1.corrector_recursion(sol, params, k=k)
            ans = a1.build_ansatz(sol, corr, params, include_wall_corrector=False)
            res[k] = a1.ansatz_residual(ans, straight_domain, params)["interior_l2"]
        assert res[1] <= res[0] + 1e-12      # ties allowed (cbar_1 = 0 here)
        assert res[2] < 0.1 * res[0]         # the order-2 profile pays off

    def test_normalized_residual_bounded_in_eps(self):
        prev = None
        for eps in (0.1, 0.05, 0.025):
            spec = straight_spec(epsilon=eps)
            graph = tg.build_graph(spec)
            flow = stokes2d.solve_network_flow(graph, {"in": eps / 6.0, "out": -eps / 6.0})
            params = TransportParams(kappa=1.0, beta=-0.4, epsilon=eps)
            sol = a1.solve_leading(graph, flow, params, n_per_edge=256)
            corr, sol = a1.corrector_recursion(sol, params, k=2)
            ans = a1.build_ansatz(sol, corr, params)
            domain = tg.instantiate_domain(graph)
            r = a1.ansatz_residual(ans, domain, params)
            normalized = r["interior_l2"] / eps**2
            if prev is not None:
                assert normalized <= 1.2 * prev
            prev = normalized

    def test_wall_robin_defect_high_order(self):
        """Wall Robin residual of the k=2 reconstruction scales beyond
        eps^(k+1.5): with the corrector weight used here it is exactly the
        vanishing self-term, far below c * eps^(k+2)."""
        for eps in (0.1, 0.05):
            spec = straight_spec(epsilon=eps)
            graph = tg.build_graph(spec)
            flow = stokes2d.solve_network_flow(graph, {"in": eps / 6.0, "out": -eps / 6.0})
            params = TransportParams(kappa=1.0, beta=-0.4, epsilon=eps)
            sol = a1.solve_leading(graph, flow, params, n_per_edge=256)
            corr, sol = a1.corrector_recursion(sol, params, k=2)
            ans = a1.build_ansatz(sol, corr, params)
            domain = tg.instantiate_domain(graph)
            r = a1.ansatz_residual(ans, domain, params)
            assert r["wall_robin_sup"] <= eps**4
