"""2D convection-diffusion-sorption reference solver."""

import warnings

import numpy as np
import pytest

from tubenet import mapdd, stokes2d, transport2d as t2
from tubenet import tubegraph as tg
from tubenet.errors import OutsideChannel, PecletWarning
from tubenet.femcore.domainmesh import mesh_domain
from tubenet.femcore.fields import Field
from tubenet.femcore.mesh import structured_rectangle
from conftest import EPS, straight_spec


@pytest.fixture(scope="module")
def channel_velocity(straight_graph, straight_domain, unit_flow):
    return mapdd.analytic_network_velocity(straight_graph, straight_domain, unit_flow)


def params_for(graph, domain, kappa=1.0, beta=0.0):
    return t2.transport_params_from_graph(graph, domain, kappa=kappa, beta=beta)


class TestSolveTransport:
    def test_pure_diffusion_linear_exact(self, straight_mesh, straight_graph, straight_domain):
        params = params_for(straight_graph, straight_domain)
        zero_v = lambda pts: np.zeros((len(np.atleast_2d(pts)), 2))
        sol = t2.solve_transport(
            straight_mesh, params, zero_v, {"port:in": 1.0, "port:out": 0.5}
        )
        coords = straight_mesh.p2_coordinates()
        exact = 1.0 - 0.5 * coords[:, 0]
        assert np.max(np.abs(sol.concentration.values - exact)) <= 1e-11

    def test_dirichlet_values_exact(self, straight_mesh, straight_graph, straight_domain,
                                    channel_velocity):
        params = params_for(straight_graph, straight_domain, kappa=0.5, beta=-0.4)
        sol = t2.solve_transport(
            straight_mesh, params, channel_velocity, {"port:in": 1.0, "port:out": 0.5}
        )
        for tag, q in (("port:in", 1.0), ("port:out", 0.5)):
            dofs = straight_mesh.boundary_p2_dofs(lambda t, tag=tag: t == tag)
            assert np.max(np.abs(sol.concentration.values[dofs] - q)) == 0.0

    def test_maximum_principle_surrogate(self, straight_mesh, straight_graph,
                                         straight_domain, channel_velocity):
        params = params_for(straight_graph, straight_domain, kappa=0.2)
        sol = t2.solve_transport(
            straight_mesh, params, channel_velocity, {"port:in": 1.0, "port:out": 0.5}
        )
        vals = sol.concentration.values
        assert vals.min() >= 0.5 - 1e-8 and vals.max() <= 1.0 + 1e-8

    def test_peclet_warning(self, straight_mesh, straight_graph, straight_domain,
                            channel_velocity):
        params = params_for(straight_graph, straight_domain, kappa=1e-4)
        with pytest.warns(PecletWarning):
            t2.solve_transport(
                straight_mesh, params, channel_velocity, {"port:in": 1.0, "port:out": 0.5}
            )

    def test_visible_2d_structure_at_small_kappa(self, straight_mesh, straight_graph,
                                                 straight_domain, channel_velocity, unit_flow):
        """The 1D-vs-2D discrepancy at kappa=0.01 exceeds the kappa=1 one."""
        from tubenet import asym1d

        ch = straight_domain.channels["e1"]
        samples = np.linspace(ch.s0, ch.s1, 81)
        discs = {}
        for kappa in (0.01, 1.0):
            params = params_for(straight_graph, straight_domain, kappa=kappa, beta=-0.4)
            sol = t2.solve_transport(
                straight_mesh, params, channel_velocity, {"port:in": 1.0, "port:out": 0.5}
            )
            cbar2d = t2.cross_section_average(sol.concentration, ch, samples)
            sol1d = asym1d.solve_leading(straight_graph, unit_flow, params)
            discs[kappa] = np.max(np.abs(cbar2d - sol1d.interp("e1", samples)))
        assert discs[0.01] > discs[1.0]
        assert discs[1.0] <= 0.02 * 0.5  # within 2% of the range


class TestCrossSectionAverage:
    def test_constant_field(self, straight_mesh, straight_domain):
        ch = straight_domain.channels["e1"]
        field = Field(straight_mesh, "P2", np.full(straight_mesh.n_p2, 3.0))
        vals = t2.cross_section_average(field, ch, [0.2, 0.5, 0.9])
        assert np.max(np.abs(vals - 3.0)) <= 1e-12

    def test_linear_in_x1(self, straight_mesh, straight_domain):
        ch = straight_domain.channels["e1"]
        coords = straight_mesh.p2_coordinates()
        field = Field(straight_mesh, "P2", 2.0 * coords[:, 0] - 0.7)
        s = np.linspace(0.1, 0.9, 7)
        vals = t2.cross_section_average(field, ch, s)
        assert np.max(np.abs(vals - (2.0 * s - 0.7))) <= 1e-10

    def test_odd_transverse_field(self, straight_mesh, straight_domain):
        ch = straight_domain.channels["e1"]
        coords = straight_mesh.p2_coordinates()
        field = Field(straight_mesh, "P2", coords[:, 1])
        vals = t2.cross_section_average(field, ch, [0.33])
        assert abs(vals[0]) <= 1e-14

    def test_outside_channel(self, straight_mesh, straight_domain):
        ch = straight_domain.channels["e1"]
        field = Field(straight_mesh, "P2", np.zeros(straight_mesh.n_p2))
        with pytest.raises(OutsideChannel):
            t2.cross_section_average(field, ch, [1.2])


class TestFluxDensity:
    def test_constant_no_velocity(self, straight_mesh, straight_graph, straight_domain):
        params = params_for(straight_graph, straight_domain)
        zero_v = lambda pts: np.zeros((len(np.atleast_2d(pts)), 2))
        sol = t2.TransportSolution(
            concentration=Field(straight_mesh, "P2", np.full(straight_mesh.n_p2, 2.0)),
            params=params, velocity=zero_v, max_cell_peclet=0.0,
            system=None, port_tags=(),
        )
        _pts, flux = t2.total_flux_density(sol)
        assert np.max(np.abs(flux)) <= 1e-10

    def test_convective_only(self, straight_mesh, straight_graph, straight_domain,
                             channel_velocity):
        params = params_for(straight_graph, straight_domain)
        sol = t2.TransportSolution(
            concentration=Field(straight_mesh, "P2", np.ones(straight_mesh.n_p2)),
            params=params, velocity=channel_velocity, max_cell_peclet=0.0,
            system=None, port_tags=(),
        )
        pts, flux = t2.total_flux_density(sol)
        expected = channel_velocity(pts)
        assert np.max(np.abs(flux - expected)) <= 1e-10


class TestConservation:
    def test_audit_with_sorption_and_source(self, straight_graph, straight_domain,
                                            channel_velocity):
        mesh = mesh_domain(straight_domain, EPS / 4.0)

        def g(s):
            s = np.asarray(s, dtype=float)
            # smooth source vanishing near the segment ends
            return np.where((s > 0.2) & (s < 0.8), np.sin(np.pi * (s - 0.2) / 0.6) ** 2, 0.0)

        params = t2.transport_params_from_graph(
            straight_graph, straight_domain, kappa=0.8, beta=-0.4, sources={"e1": g}
        )
        sol = t2.solve_transport(
            mesh, params, channel_velocity, {"port:in": 1.0, "port:out": 0.5}
        )
        report = t2.conservation_report(sol)
        assert report["relative_defect"] <= 1e-6

    def test_robin_sign_removes_mass(self, straight_mesh, straight_graph,
                                     straight_domain, channel_velocity):
        params = params_for(straight_graph, straight_domain, kappa=1.0, beta=-0.5)
        sol = t2.solve_transport(
            straight_mesh, params, channel_velocity, {"port:in": 1.0, "port:out": 0.5}
        )
        assert t2.wall_sorption_integral(sol) <= 0.0


class TestManufacturedConvergence:
    def test_third_order_p2(self):
        """Convection-diffusion with a manufactured solution on a thin rectangle."""

        def exact(p):
            return np.sin(np.pi * p[:, 0]) * np.cos(2.0 * np.pi * p[:, 1] / 0.2)

        def velocity(p):
            p = np.atleast_2d(p)
            return np.column_stack([0.25 - (p[:, 1] / 0.1) ** 2 * 0.25, np.zeros(len(p))])

        def rhs(p):
            x, y = p[:, 0], p[:, 1]
            c = exact(p)
            lap = -(np.pi**2) * c - (2.0 * np.pi / 0.2) ** 2 * c
            dcdx = np.pi * np.cos(np.pi * x) * np.cos(2.0 * np.pi * y / 0.2)
            vx = 0.25 - (y / 0.1) ** 2 * 0.25
            return -lap + vx * dcdx

        errs = []
        hs = [0.05, 0.025, 0.0125]
        for h in hs:
            mesh = structured_rectangle(0.0, 1.0, -0.1, 0.1, h=h, tags=("d", "d", "d", "d"))
            from tubenet.femcore.assembly import assemble
            from tubenet.femcore.solve import solve_sparse

            system = assemble(mesh, "P2", diffusion=1.0, convection=velocity, load=rhs)
            coords = mesh.p2_coordinates()
            for d in mesh.boundary_p2_dofs(lambda t: True):
                system.fix(int(d), float(exact(coords[[d]])[0]))
            x = solve_sparse(system)
            field = Field(mesh, "P2", x)
            pts = np.random.default_rng(2).random((300, 2)) * [0.96, 0.18] + [0.02, -0.09]
            errs.append(np.sqrt(np.mean((field.evaluate(pts) - exact(pts)) ** 2)))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert abs(slope - 3.0) <= 0.3
