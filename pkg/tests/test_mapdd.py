"""MAPDD hybrid solver: consistency oracles, composite velocity, error report."""

import numpy as np
import pytest

from tubenet import asym1d, mapdd, stokes2d, transport2d as t2
from tubenet import tubegraph as tg
from tubenet.femcore.domainmesh import mesh_domain
from conftest import EPS, straight_spec

H = EPS / 4.0


def stenosis_graph(k_amp=-0.5, v_amp=0.0, m_amp=0.0):
    spec = straight_spec(
        stenoses=({"s": 0.5, "k_amp": k_amp, "v_amp": v_amp, "m_amp": m_amp, "radius": 1.4},)
    )
    return tg.build_graph(spec)


@pytest.fixture(scope="module")
def featureless():
    """Channel with a geometric zoom zone but unperturbed physics."""
    graph = stenosis_graph(k_amp=0.0)
    domain = tg.instantiate_domain(graph)
    return graph, domain


class TestConsistencyOracles:
    def test_exact_subspace_pure_diffusion(self, featureless):
        graph, domain = featureless
        flow = stokes2d.solve_network_flow(graph, {"in": 0.0, "out": 0.0})
        params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=0.0)
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        mesh = mesh_domain(domain, H)
        ref = t2.solve_transport(mesh, params, vel, {"port:in": 1.0, "port:out": 0.5})
        errs = {}
        for K in (0.5, 1.0):
            dec = mapdd.attach_flow(tg.decompose_mapdd(graph, K), flow)
            hyb = mapdd.solve_mapdd_transport(dec, params, vel, {"in": 1.0, "out": 0.5}, h=H)
            rep = mapdd.mapdd_error_report(hyb, ref)
            errs[K] = rep
            assert rep["l2_relative"] <= 1e-10
            assert rep["h1_relative"] <= 1e-10
        # nestedness: enlarging the zoom cannot spoil exact-subspace cases
        assert errs[1.0]["h1_relative"] <= 1e-10

    def test_hybrid_average_matches_pure_1d(self, featureless):
        graph, domain = featureless
        flow = stokes2d.solve_network_flow(graph, {"in": 0.0, "out": 0.0})
        params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=0.0)
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
        hyb = mapdd.solve_mapdd_transport(dec, params, vel, {"in": 1.0, "out": 0.5}, h=H)
        sol1d = asym1d.solve_leading(graph, flow, params, n_per_edge=256)
        samples = np.linspace(0.02, 0.98, 49)
        diff = hyb.channel_average("e1", samples) - sol1d.interp("e1", samples)
        assert np.max(np.abs(diff)) <= 1e-8

    def test_zero_data_zero_solution(self, featureless):
        graph, domain = featureless
        flow = stokes2d.solve_network_flow(graph, {"in": 0.0, "out": 0.0})
        params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=0.0)
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
        hyb = mapdd.solve_mapdd_transport(dec, params, vel, {"in": 0.0, "out": 0.0}, h=H)
        for _zid, fld in hyb.zones.items():
            assert np.max(np.abs(fld.values)) <= 1e-12
        for _i, (_seg, _grid, vals) in hyb.segments.items():
            assert np.max(np.abs(vals)) <= 1e-12


class TestStenosisFidelity:
    def test_h1_error_and_monotone_k(self):
        graph = stenosis_graph()
        domain = tg.instantiate_domain(graph)
        q = EPS / 6.0
        flow = stokes2d.solve_network_flow(graph, {"in": q, "out": -q})
        params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=-0.4)
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        mesh = mesh_domain(domain, H)
        ref = t2.solve_transport(mesh, params, vel, {"port:in": 1.0, "port:out": 0.5})
        h1 = []
        for K in (0.5, 1.0, 2.0):
            dec = mapdd.attach_flow(tg.decompose_mapdd(graph, K), flow)
            hyb = mapdd.solve_mapdd_transport(dec, params, vel, {"in": 1.0, "out": 0.5}, h=H)
            rep = mapdd.mapdd_error_report(hyb, ref)
            h1.append(rep["h1_relative"])
        assert h1[1] <= 0.02
        assert h1[0] >= h1[1] >= h1[2]

    def test_cut_lines_fully_constrained(self):
        graph = stenosis_graph()
        flow = stokes2d.solve_network_flow(graph, {"in": 0.0, "out": 0.0})
        dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
        domain = dec.domain
        params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=0.0)
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        hyb = mapdd.solve_mapdd_transport(dec, params, vel, {"in": 1.0, "out": 0.5}, h=H)
        # single-valuedness on cut lines: the 2D trace equals the 1D endpoint
        for zone in dec.zones:
            fld = hyb.zones[zone.id]
            for cid in zone.cut_ids:
                cut = dec.cuts[cid]
                seg_vals = [
                    np.interp(cut.s, grid, vals)
                    for _seg, grid, vals in hyb.segments.values()
                    if _seg.edge_id == cut.edge_id and (
                        abs(_seg.s0 - cut.s) < 1e-9 or abs(_seg.s1 - cut.s) < 1e-9
                    )
                ]
                dofs = fld.mesh.boundary_p2_dofs(lambda t, c=cid: t == f"cut:{c}")
                trace = fld.values[dofs]
                assert np.max(np.abs(trace - seg_vals[0])) <= 1e-12


class TestCompositeVelocity:
    def test_straight_channel_equals_poiseuille(self, featureless):
        graph, domain = featureless
        q = EPS / 6.0
        flow = stokes2d.solve_network_flow(graph, {"in": q, "out": -q})
        dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
        visc = stokes2d.ViscosityField(mu=1.0, epsilon=EPS)
        comp = mapdd.CompositeVelocity(dec, flow, visc, h=H)
        rng = np.random.default_rng(4)
        pts = np.column_stack([rng.random(60), (rng.random(60) - 0.5) * EPS * 0.98])
        got = comp(pts)
        expected = np.column_stack([flow.profile_velocity("e1", pts[:, 1]), np.zeros(60)])
        assert np.max(np.abs(got - expected)) <= 1e-9 * np.max(np.abs(expected))

    def test_cut_fluxes_match_network(self, y_graph, y_flow):
        dec = mapdd.attach_flow(tg.decompose_mapdd(y_graph, 1.0), y_flow)
        visc = stokes2d.ViscosityField(mu=1.0, epsilon=EPS)
        comp = mapdd.CompositeVelocity(dec, y_flow, visc, h=0.7 * EPS / 4.0)
        (zone,) = [z for z in dec.zones if z.kind == "node"]
        fld = comp.zone_fields[zone.id]
        for (eid, _s0, _s1), cid in zip(zone.intervals, zone.cut_ids):
            cut = dec.cuts[cid]
            ch = dec.domain.channels[eid]
            flux = stokes2d.flux_through_cut(
                fld, ch.point(cut.s, 0.0), ch.d, ch.width
            )
            assert flux == pytest.approx(y_flow.flux[eid], abs=1e-8 * abs(y_flow.flux[eid]))

    def test_zero_flow_zero_velocity(self, featureless):
        graph, domain = featureless
        flow = stokes2d.solve_network_flow(graph, {"in": 0.0, "out": 0.0})
        dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
        visc = stokes2d.ViscosityField(mu=1.0, epsilon=EPS)
        comp = mapdd.CompositeVelocity(dec, flow, visc, h=H)
        pts = np.array([[0.5, 0.0], [0.2, 0.01], [0.9, -0.02]])
        assert np.max(np.abs(comp(pts))) <= 1e-12


class TestErrorReport:
    def test_self_comparison_zero(self, featureless):
        # a transversally-constant reference is representable exactly in the
        # hybrid space, so sampling it back gives zero error
        graph, domain = featureless
        flow = stokes2d.solve_network_flow(graph, {"in": 0.0, "out": 0.0})
        params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=0.0)
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        mesh = mesh_domain(domain, H)
        ref = t2.solve_transport(mesh, params, vel, {"port:in": 1.0, "port:out": 0.5})
        rep = mapdd.mapdd_error_report(_hybrid_from_reference(ref, graph, flow, params), ref)
        assert rep["l2_relative"] <= 1e-10
        assert rep["h1_relative"] <= 1e-8

    def test_setup_mismatch(self):
        graph = stenosis_graph()
        domain = tg.instantiate_domain(graph)
        q = EPS / 6.0
        flow = stokes2d.solve_network_flow(graph, {"in": q, "out": -q})
        params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=-0.4)
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
        hyb = mapdd.solve_mapdd_transport(dec, params, vel, {"in": 1.0, "out": 0.5}, h=H)
        other = t2.TransportParams(kappa=1.0, beta=-0.4, epsilon=2 * EPS)
        mesh = mesh_domain(domain, H)
        fake_ref = t2.TransportSolution(
            concentration=hyb.zones[0], params=other, velocity=vel,
            max_cell_peclet=0.0, system=None, port_tags=(),
        )
        from tubenet.errors import SetupMismatch

        with pytest.raises(SetupMismatch):
            mapdd.mapdd_error_report(hyb, fake_ref)


def _hybrid_from_reference(ref, graph, flow, params):
    """A 'hybrid' whose zones/segments sample the reference itself."""
    dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
    zones = {}
    from tubenet.femcore.domainmesh import mesh_zoom_zone
    from tubenet.femcore.fields import Field

    for zone in dec.zones:
        mesh = mesh_zoom_zone(dec, zone, H)
        zones[zone.id] = Field(mesh, "P2", ref.concentration.evaluate(mesh.p2_coordinates()))
    segments = {}
    for i, seg in enumerate(dec.skeleton):
        grid = np.linspace(seg.s0, seg.s1, 121)
        ch = dec.domain.channels[seg.edge_id]
        vals = t2.cross_section_average(ref.concentration, ch, grid)
        segments[i] = (seg, grid, vals)
    return mapdd.HybridSolution(
        decomposition=dec, zones=zones, segments=segments, dof_count=1,
        dof_full_equivalent=0, timings={"assemble": 0.0, "solve": 0.0},
        velocity=None, params=params, max_cell_peclet=0.0,
    )
