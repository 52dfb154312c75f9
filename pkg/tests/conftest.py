"""Shared fixtures: small graphs, domains and meshes reused across modules."""

import math

import numpy as np
import pytest

from tubenet import stokes2d
from tubenet import tubegraph as tg
from tubenet.femcore.domainmesh import mesh_domain

EPS = 0.05


def straight_spec(epsilon=EPS, q0=1.0, q1=0.5, stenoses=()):
    return {
        "epsilon": epsilon,
        "nodes": [
            {"id": "in", "x": 0.0, "y": 0.0, "kind": "entrance_exit", "q": q0},
            {"id": "out", "x": 1.0, "y": 0.0, "kind": "entrance_exit", "q": q1},
        ],
        "edges": [
            {"id": "e1", "from": "in", "to": "out", "theta": 1.0, "stenoses": list(stenoses)}
        ],
    }


def y_spec(epsilon=EPS, q_in=1.0, q_a=0.5, q_b=0.5, thetas=(1.0, 0.7, 0.7)):
    c = math.cos(math.pi / 4.0)
    return {
        "epsilon": epsilon,
        "nodes": [
            {"id": "in", "x": -1.0, "y": 0.0, "kind": "entrance_exit", "q": q_in},
            {"id": "O", "x": 0.0, "y": 0.0, "kind": "bifurcation"},
            {"id": "outA", "x": c, "y": -c, "kind": "entrance_exit", "q": q_a},
            {"id": "outB", "x": c, "y": c, "kind": "entrance_exit", "q": q_b},
        ],
        "edges": [
            {"id": "e1", "from": "in", "to": "O", "theta": thetas[0]},
            {"id": "e2", "from": "O", "to": "outA", "theta": thetas[1]},
            {"id": "e3", "from": "O", "to": "outB", "theta": thetas[2]},
        ],
    }


@pytest.fixture(scope="session")
def straight_graph():
    return tg.build_graph(straight_spec())


@pytest.fixture(scope="session")
def straight_domain(straight_graph):
    return tg.instantiate_domain(straight_graph)


@pytest.fixture(scope="session")
def straight_mesh(straight_domain):
    return mesh_domain(straight_domain, EPS / 4.0)


@pytest.fixture(scope="session")
def unit_flow(straight_graph):
    q = EPS / 6.0
    return stokes2d.solve_network_flow(straight_graph, {"in": q, "out": -q})


@pytest.fixture(scope="session")
def y_graph():
    return tg.build_graph(y_spec())


@pytest.fixture(scope="session")
def y_domain(y_graph):
    return tg.instantiate_domain(y_graph)


@pytest.fixture(scope="session")
def y_mesh(y_domain):
    return mesh_domain(y_domain, 0.7 * EPS / 4.0)


@pytest.fixture(scope="session")
def y_flow(y_graph):
    q = EPS / 6.0
    return stokes2d.solve_network_flow(
        y_graph, {"in": q}, port_pressures={"outA": 0.0, "outB": 0.0}
    )
