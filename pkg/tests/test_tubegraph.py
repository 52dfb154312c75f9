"""Graph validation, domain instantiation and the MAPDD partition."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubenet import tubegraph as tg
from tubenet.errors import (
    DisconnectedGraph,
    GraphSpecError,
    InvalidDeadNode,
    NonSolitaryPort,
    StenosisTooCloseToNode,
    ThicknessOutOfRange,
    ZoomOverlap,
)
from conftest import EPS, straight_spec, y_spec


class TestBuildGraph:
    def test_straight_channel_valid(self, straight_graph):
        assert len(straight_graph.edges) == 1
        assert straight_graph.epsilon == EPS
        assert {n.kind for n in straight_graph.nodes} == {"entrance_exit"}

    def test_bifurcation_valid(self, y_graph):
        assert y_graph.degree("O") == 3
        assert len(y_graph.ports()) == 3

    def test_stenosis_too_close(self):
        spec = straight_spec(stenoses=({"s": EPS, "k_amp": -0.5},))
        with pytest.raises(StenosisTooCloseToNode):
            tg.build_graph(spec)

    def test_thickness_out_of_range(self):
        spec = straight_spec()
        spec["edges"][0]["theta"] = 1.5
        with pytest.raises(ThicknessOutOfRange):
            tg.build_graph(spec)

    def test_disconnected(self):
        spec = y_spec()
        spec["nodes"].append({"id": "lone", "x": 5.0, "y": 5.0, "kind": "bifurcation"})
        with pytest.raises(DisconnectedGraph):
            tg.build_graph(spec)

    def test_non_solitary_port(self):
        spec = y_spec()
        spec["nodes"][1]["kind"] = "entrance_exit"
        spec["nodes"][1]["q"] = 1.0
        with pytest.raises(NonSolitaryPort):
            tg.build_graph(spec)

    def test_dead_node_must_be_collinear(self):
        spec = {
            "epsilon": 0.02,
            "nodes": [
                {"id": "a", "x": 0.0, "y": 0.0, "kind": "entrance_exit", "q": 1.0},
                {"id": "m", "x": 0.5, "y": 0.2, "kind": "dead"},
                {"id": "b", "x": 1.0, "y": 0.0, "kind": "entrance_exit", "q": 0.0},
            ],
            "edges": [
                {"id": "e1", "from": "a", "to": "m", "theta": 1.0},
                {"id": "e2", "from": "m", "to": "b", "theta": 1.0},
            ],
        }
        with pytest.raises(InvalidDeadNode):
            tg.build_graph(spec)

    def test_dead_node_collinear_ok(self):
        spec = {
            "epsilon": 0.02,
            "nodes": [
                {"id": "a", "x": 0.0, "y": 0.0, "kind": "entrance_exit", "q": 1.0},
                {"id": "m", "x": 0.5, "y": 0.0, "kind": "dead"},
                {"id": "b", "x": 1.0, "y": 0.0, "kind": "entrance_exit", "q": 0.0},
            ],
            "edges": [
                {"id": "e1", "from": "a", "to": "m", "theta": 1.0},
                {"id": "e2", "from": "m", "to": "b", "theta": 1.0},
            ],
        }
        graph = tg.build_graph(spec)
        dom = tg.instantiate_domain(graph)
        assert "m" not in dom.junctions  # seamless continuation

    def test_unknown_keys_rejected(self):
        spec = straight_spec()
        spec["extra"] = 1
        with pytest.raises(GraphSpecError):
            tg.build_graph(spec)
        spec = straight_spec()
        spec["nodes"][0]["colour"] = "red"
        with pytest.raises(GraphSpecError):
            tg.build_graph(spec)

    def test_epsilon_bounds(self):
        spec = straight_spec()
        spec["epsilon"] = 0.0
        with pytest.raises(GraphSpecError):
            tg.build_graph(spec)

    def test_edge_too_short(self):
        spec = straight_spec(epsilon=0.2)
        with pytest.raises(GraphSpecError):
            tg.build_graph(spec)


class TestDomain:
    def test_straight_channel_rectangle(self, straight_domain):
        ch = straight_domain.channels["e1"]
        assert ch.s0 == 0.0 and ch.s1 == 1.0
        assert ch.width == pytest.approx(EPS)
        tags = {t for _pts, tags in straight_domain.boundary_loops for t in tags}
        assert tags == {"wall", "port:in", "port:out"}

    def test_y_structure(self, y_domain):
        assert len(y_domain.channels) == 3
        assert set(y_domain.junctions) == {"O"}
        (pts, tags), = y_domain.boundary_loops
        # walk of a 3-edge tree: 6 channel walls + 3 junction hops + 3 ports
        assert len(tags) == 12
        assert sorted(set(tags)) == ["port:in", "port:outA", "port:outB", "wall"]

    def test_area_additivity(self, straight_domain, y_domain):
        for dom in (straight_domain, y_domain):
            assert abs(dom.area - dom.parts_area) <= 1e-12 * dom.parts_area

    def test_deterministic(self):
        d1 = tg.instantiate_domain(tg.build_graph(y_spec()))
        d2 = tg.instantiate_domain(tg.build_graph(y_spec()))
        assert np.array_equal(d1.junctions["O"].polygon, d2.junctions["O"].polygon)
        for eid in d1.channels:
            assert d1.channels[eid].s0 == d2.channels[eid].s0

    def test_scaling_halves_transverse_only(self):
        d1 = tg.instantiate_domain(tg.build_graph(y_spec(epsilon=EPS)))
        d2 = tg.instantiate_domain(tg.build_graph(y_spec(epsilon=EPS / 2.0)))
        for eid in d1.channels:
            assert d2.channels[eid].width == pytest.approx(d1.channels[eid].width / 2.0)
            assert d2.channels[eid].length == d1.channels[eid].length
        for eid, t1 in d1.junctions["O"].trims.items():
            assert d2.junctions["O"].trims[eid] == pytest.approx(t1 / 2.0)

    @settings(max_examples=15, deadline=None)
    @given(
        eps=st.floats(0.01, 0.09),
        th2=st.floats(0.3, 1.0),
        th3=st.floats(0.3, 1.0),
    )
    def test_area_additivity_property(self, eps, th2, th3):
        dom = tg.instantiate_domain(
            tg.build_graph(y_spec(epsilon=eps, thetas=(1.0, th2, th3)))
        )
        assert abs(dom.area - dom.parts_area) <= 1e-11 * dom.parts_area


class TestMapdd:
    def spec(self):
        return straight_spec(stenoses=({"s": 0.5, "k_amp": -0.5, "radius": 1.4},))

    def test_delta_formula_and_zones(self):
        graph = tg.build_graph(self.spec())
        dec = tg.decompose_mapdd(graph, K=1.0)
        delta = 1.0 * EPS * abs(math.log(EPS))
        assert dec.delta == pytest.approx(0.14979, rel=1e-3)
        (zone,) = dec.zones
        assert zone.intervals == (("e1", 0.5 - delta, 0.5 + delta),)
        assert len(dec.skeleton) == 2

    def test_k_too_large_overlaps(self):
        graph = tg.build_graph(self.spec())
        with pytest.raises(ZoomOverlap):
            tg.decompose_mapdd(graph, K=6.0)  # delta ~ 0.899 exceeds the channel

    def test_k_zero_rejected(self):
        graph = tg.build_graph(self.spec())
        with pytest.raises(ZoomOverlap):
            tg.decompose_mapdd(graph, K=0.0)

    def test_delta_must_cover_support(self):
        graph = tg.build_graph(self.spec())
        # radius 1.4 -> support 1.4*eps = 0.07 > delta(K=0.4) = 0.0599
        with pytest.raises(ZoomOverlap):
            tg.decompose_mapdd(graph, K=0.4)

    def test_coverage_by_point_sampling(self):
        graph = tg.build_graph(self.spec())
        dec = tg.decompose_mapdd(graph, K=1.0)
        ch = dec.domain.channels["e1"]
        samples = np.linspace(ch.s0 + 1e-9, ch.s1 - 1e-9, 997)
        for s in samples:
            in_zoom = sum(
                1
                for z in dec.zones
                for (eid, a, b) in z.intervals
                if eid == "e1" and a - 1e-12 <= s <= b + 1e-12
            )
            in_skel = sum(
                1 for seg in dec.skeleton if seg.s0 - 1e-12 <= s <= seg.s1 + 1e-12
            )
            assert in_zoom + in_skel >= 1
            assert in_zoom <= 1

    def test_node_zooms_on_bifurcation(self, y_graph):
        dec = tg.decompose_mapdd(y_graph, K=1.0)
        kinds = sorted(z.kind for z in dec.zones)
        assert kinds == ["node"]
        assert len(dec.skeleton) == 3
        for seg in dec.skeleton:
            assert ("port" in (seg.end0[0], seg.end1[0])) and (
                "cut" in (seg.end0[0], seg.end1[0])
            )

    def test_include_ports(self, y_graph):
        dec = tg.decompose_mapdd(y_graph, K=1.0, include_ports=True)
        kinds = sorted(z.kind for z in dec.zones)
        assert kinds == ["node", "port", "port", "port"]
