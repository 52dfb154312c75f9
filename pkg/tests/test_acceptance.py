"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line with its measured quantities at the stated tolerance.

Conventions fixed here (documented in the README):
  - the sorption coefficient enters the wall condition K dc/dn = eps*beta*c
    with beta = -0.4 in the comparison studies (absorbing walls);
  - the bifurcation geometry is the documented default (inlet theta 1,
    two 45-degree arms theta 0.7, eps = 0.1, inflow 5*eps/6).
"""

import math
import time

import numpy as np
import pytest

from tubenet import asym1d, blcells, mapdd, stokes2d, transport2d as t2
from tubenet import tubegraph as tg
from tubenet.femcore import elements
from tubenet.femcore.domainmesh import mesh_domain
from tubenet.harness import config as hc, experiments as he
from tubenet.tubegraph import StenosisMarker
from conftest import straight_spec


def _verdict(num, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}"
    print(line)
    assert ok, line


def test_criterion_1_poiseuille_exactness(tmp_path):
    t0 = time.perf_counter()
    eps = 0.05
    graph = tg.build_graph(straight_spec(epsilon=eps))
    domain = tg.instantiate_domain(graph)
    mesh = mesh_domain(domain, eps / 4.0)
    q = eps / 6.0
    visc = stokes2d.ViscosityField(mu=1.0, epsilon=eps)
    sol = stokes2d.solve_stokes(mesh, visc, {"port:in": q, "port:out": -q})
    c1 = -12.0 * q / eps**3
    prof = stokes2d.poiseuille_profile(c1, 1.0, eps)
    coords = mesh.p2_coordinates()
    u_exact = np.column_stack([prof.velocity(coords[:, 1]), np.zeros(len(coords))])
    err = float(np.max(np.abs(sol.velocity.values - u_exact)) / np.max(np.abs(u_exact)))
    dt = time.perf_counter() - t0
    _verdict(1, err <= 1e-8 and dt < 10.0,
             f"Poiseuille rel Linf error {err:.2e} (<= 1e-8), runtime {dt:.1f}s (< 10)")


def test_criterion_2_fig7_reproduction(tmp_path):
    t0 = time.perf_counter()
    cfg = hc.load_config(hc.default_straight_channel(), out=str(tmp_path / "straight"))
    report = he.run_straight_channel(cfg)
    rows = {r["kappa"]: r["max_discrepancy"] for r in report["rows"]}
    big_kappa_ok = all(rows[k] <= 0.02 for k in cfg.kappas if k >= 0.1)
    ordering_ok = rows[0.01] > rows[0.1]
    monotone_ok = all(
        rows[a] >= rows[b] - 1e-12
        for a, b in zip(cfg.kappas[:-1], cfg.kappas[1:])
    )
    dt = time.perf_counter() - t0
    _verdict(
        2,
        big_kappa_ok and ordering_ok and monotone_ok and dt < 300.0,
        f"2D-vs-1D discrepancies {['%.4f' % rows[k] for k in cfg.kappas]} over "
        f"kappa {list(cfg.kappas)}: <= 2% for kappa >= 0.1, kappa=0.01 exceeds "
        f"kappa=0.1 ({rows[0.01]:.4f} > {rows[0.1]:.4f}), monotone; "
        f"runtime {dt:.0f}s (< 300)",
    )


def test_criterion_3_eps_convergence(tmp_path):
    t0 = time.perf_counter()
    cfg = hc.load_config(hc.default_convergence(eps_sweep=(0.1, 0.05, 0.025)),
                         out=str(tmp_path / "conv"))
    report = he.run_convergence(cfg)
    dt = time.perf_counter() - t0
    _verdict(
        3,
        report["slope"] >= 0.8 and dt < 600.0,
        f"||avg(c_2D) - cbar_0||_L2 slope {report['slope']:.2f} (>= 0.8) over "
        f"eps {report['eps_sweep']}, errors {['%.2e' % e for e in report['errors']]}; "
        f"runtime {dt:.0f}s (< 600)",
    )


def test_criterion_4_corrector_structure():
    t0 = time.perf_counter()
    eps = 0.05
    graph = tg.build_graph(straight_spec(epsilon=eps))
    q = eps / 6.0
    flow = stokes2d.solve_network_flow(graph, {"in": q, "out": -q})
    params = t2.TransportParams(kappa=1.0, beta=-0.4, epsilon=eps)
    sol = asym1d.solve_leading(graph, flow, params, n_per_edge=256)
    corr, sol = asym1d.corrector_recursion(sol, params, k=3)

    zero01 = max(np.max(np.abs(corr[0].coefs["e1"])), np.max(np.abs(corr[1].coefs["e1"]))) == 0.0
    degrees = corr[2].degree == 4 and corr[3].degree == 6
    top2 = np.max(np.abs(corr[2].coefs["e1"][:, 4])) > 0.0
    means = max(np.max(np.abs(corr[j].mean("e1"))) for j in (2, 3)) <= 1e-12
    symbolic = asym1d.wall_corrector_symbolic_identity()
    dt = time.perf_counter() - t0
    _verdict(
        4,
        zero01 and degrees and top2 and means and symbolic and dt < 5.0,
        f"ctilde_0 = ctilde_1 = 0 exactly; deg ctilde_2 = {corr[2].degree}, "
        f"deg ctilde_3 = {corr[3].degree}; transverse means <= 1e-12; wall-corrector "
        f"Neumann identity exact in rational arithmetic; runtime {dt:.2f}s",
    )


def test_criterion_5_cell_problem_suite():
    t0 = time.perf_counter()
    timings = {}
    zero_s = lambda pts: np.zeros(len(np.atleast_2d(pts)))
    zero_v = lambda pts: np.zeros((len(np.atleast_2d(pts)), 2))

    strip = blcells.build_strip(L=12.0, h=1.0 / 16.0)
    strip2l = blcells.build_strip(L=24.0, h=1.0 / 16.0)
    strip_fine = blcells.build_strip(L=12.0, h=1.0 / 32.0)
    traces = blcells.RegularTraces(0.75, 0.75, -0.5, -0.5)

    # zero-perturbation cells return 0
    zmax = 0.0
    for order in (0, 1):
        res = blcells.solve_transport_strip_cell(zero_s, zero_v, order, traces, strip)
        zmax = max(zmax, float(np.max(np.abs(res.fields["layer"].values))))
    rs0 = blcells.solve_stokes_stenosis_cell(zero_s, 1.0, -2.0, strip, check_truncation=False)
    zmax = max(zmax, rs0.details["u_max"], abs(rs0.c_plus))
    jdom = blcells.build_junction_cell(
        tg.build_graph(hc.default_bifurcation()["geometry"]), "O", L=12.0, h=1.0 / 12.0
    )
    rj0 = blcells.solve_junction_cell(jdom, {b: (0.4, 0.0) for b in jdom.branch_ids})
    zmax = max(zmax, float(np.max(np.abs(rj0.fields["layer"].values))))
    tq = time.perf_counter()
    d1 = 0.7
    share = -d1 * jdom.thetas["e1"] / (jdom.thetas["e2"] + jdom.thetas["e3"])
    rj = blcells.solve_junction_cell(
        jdom, {"e1": (0.4, d1), "e2": (0.4, share), "e3": (0.4, share)}
    )
    timings["junction"] = time.perf_counter() - tq

    # perturbed cells: truncation-doubling and refinement stability
    kbar = StenosisMarker(s=0.0, k_amp=-0.6, radius=1.4).diffusivity_bump
    mbar = StenosisMarker(s=0.0, m_amp=1.5, radius=1.4).viscosity_bump

    tq = time.perf_counter()
    r1 = blcells.solve_transport_strip_cell(kbar, zero_v, 1, traces, strip)
    timings["transport L=12"] = time.perf_counter() - tq
    tq = time.perf_counter()
    r1_2l = blcells.solve_transport_strip_cell(kbar, zero_v, 1, traces, strip2l)
    timings["transport L=24"] = time.perf_counter() - tq
    tq = time.perf_counter()
    r1_f = blcells.solve_transport_strip_cell(kbar, zero_v, 1, traces, strip_fine)
    timings["transport fine"] = time.perf_counter() - tq
    q_l = abs(r1_2l.q_tilde - r1.q_tilde) / abs(r1.q_tilde)
    q_h = abs(r1_f.q_tilde - r1.q_tilde) / abs(r1.q_tilde)

    tq = time.perf_counter()
    rs = blcells.solve_stokes_stenosis_cell(mbar, 1.0, -2.0, strip)
    timings["stokes L=12"] = time.perf_counter() - tq
    tq = time.perf_counter()
    rs_2l = blcells.solve_stokes_stenosis_cell(mbar, 1.0, -2.0, strip2l)
    timings["stokes L=24"] = time.perf_counter() - tq
    tq = time.perf_counter()
    rs_f = blcells.solve_stokes_stenosis_cell(
        mbar, 1.0, -2.0, blcells.build_strip(L=12.0, h=1.0 / 32.0)
    )
    timings["stokes fine"] = time.perf_counter() - tq
    c_l = abs(rs_2l.c_plus - rs.c_plus) / abs(rs.c_plus)
    c_h = abs(rs_f.c_plus - rs.c_plus) / abs(rs.c_plus)

    rates_ok = r1.decay_rate > 0.0 and rs.decay_rate > 0.0 and rj.decay_rate > 0.0
    per_solve_ok = max(timings.values()) < 60.0
    ok = (
        zmax <= 1e-10
        and q_l < 1e-6 and c_l < 1e-6
        and q_h < 0.01 and c_h < 0.01
        and rates_ok and per_solve_ok
    )
    _verdict(
        5,
        ok,
        f"zero-perturbation cells {zmax:.1e} (<= 1e-10); L->2L changes q~ {q_l:.1e}, "
        f"c+ {c_l:.1e} (< 1e-6); refinement changes q~ {q_h:.1e}, c+ {c_h:.1e} (< 1%); "
        f"decay rates {r1.decay_rate:.2f}/{rs.decay_rate:.2f}/{rj.decay_rate:.2f} > 0; "
        f"slowest solve {max(timings.values()):.1f}s (< 60)",
    )


def test_criterion_6_mapdd_fidelity(tmp_path):
    t0 = time.perf_counter()
    cfg = hc.load_config(hc.default_mapdd_stenosis(), out=str(tmp_path / "mapdd"))
    result = he.run_mapdd_sweep(cfg)
    h1 = {row["K"]: row["h1_relative"] for row in result["sweep"]}

    # DOF reduction at eps = 0.02
    cfg_small = hc.load_config(hc.default_mapdd_stenosis(epsilon=0.02))
    graph = tg.build_graph(cfg_small.geometry)
    domain = tg.instantiate_domain(graph)
    q = 0.02 / 6.0
    flow = stokes2d.solve_network_flow(graph, {"in": q, "out": -q})
    params = t2.transport_params_from_graph(graph, domain, kappa=1.0, beta=-0.4)
    vel = mapdd.analytic_network_velocity(graph, domain, flow)
    mesh = mesh_domain(domain, 0.02 / 4.0)
    ref = t2.solve_transport(mesh, params, vel, {"port:in": 1.0, "port:out": 0.5})
    dec = mapdd.attach_flow(tg.decompose_mapdd(graph, 1.0), flow)
    hyb = mapdd.solve_mapdd_transport(dec, params, vel, {"in": 1.0, "out": 0.5}, h=0.02 / 4.0)
    rep = mapdd.mapdd_error_report(hyb, ref)
    dt = time.perf_counter() - t0
    ok = (
        h1[1.0] <= 0.02
        and result["monotone"]
        and rep["dof_ratio"] < 0.5
        and dt < 300.0
    )
    _verdict(
        6,
        ok,
        f"broken-H1 vs full 2D at K=1: {h1[1.0]:.4f} (<= 2%); errors over K "
        f"{[round(h1[k], 4) for k in (0.5, 1.0, 2.0)]} non-increasing; DOF ratio at "
        f"eps=0.02: {rep['dof_ratio']:.3f} (< 0.5); runtime {dt:.0f}s (< 300)",
    )


def test_criterion_7_bifurcation_physics(tmp_path):
    t0 = time.perf_counter()
    cfg = hc.load_config(hc.default_bifurcation(), out=str(tmp_path / "bif"))
    report = he.run_bifurcation(cfg)
    discs = [r["max_discrepancy_1d"] for r in report["rows"]]
    kappas = [r["kappa"] for r in report["rows"]]
    r2_ok = all(f["r_squared"] >= 0.99 for f in report["arm_pressure_fits"].values())
    flux_ok = report["junction_flux_residual"] <= 1e-10
    decreasing = discs[0] > discs[1] > discs[2]
    crossing = discs[0] > 0.03 > discs[2]
    dt = time.perf_counter() - t0
    _verdict(
        7,
        r2_ok and flux_ok and decreasing and crossing and dt < 600.0,
        f"junction flux residual {report['junction_flux_residual']:.1e} (<= 1e-10); "
        f"arm pressure fits R^2 >= 0.99; 1D-vs-2D discrepancies {np.round(discs, 4)} "
        f"strictly decreasing over kappa {kappas} and crossing the 3% band; "
        f"runtime {dt:.0f}s (< 600)",
    )


def test_criterion_8_fictitious_domain():
    t0 = time.perf_counter()
    eps = 0.05
    graph = tg.build_graph(straight_spec(epsilon=eps))
    domain = tg.instantiate_domain(graph)
    mesh = mesh_domain(domain, eps / 6.0)
    block = np.array(
        [[0.4, -eps / 2], [0.6, -eps / 2], [0.6, -eps / 6], [0.4, -eps / 6]]
    )
    visc = stokes2d.ViscosityField(mu=1.0, epsilon=eps, fictitious=((block, 1e6),))
    q = eps / 6.0
    sol = stokes2d.solve_stokes(mesh, visc, {"port:in": q, "port:out": -q})
    inside = stokes2d.mean_speed_in_polygon(sol.velocity, block)
    channel = stokes2d.mean_speed_in_polygon(
        sol.velocity,
        np.array([[0.0, -eps / 2], [0.25, -eps / 2], [0.25, eps / 2], [0.0, eps / 2]]),
    )
    ratio = inside / channel
    dt = time.perf_counter() - t0
    _verdict(
        8,
        ratio <= 1e-3 and dt < 60.0,
        f"mean speed in the omega=1e6 inclusion / channel mean = {ratio:.1e} "
        f"(<= 1e-3); runtime {dt:.1f}s (< 60)",
    )


def test_criterion_9_solver_invariant_suites(straight_graph, straight_domain,
                                             straight_mesh, unit_flow, y_graph, y_flow):
    t0 = time.perf_counter()
    # femcore: quadrature exactness, partition of unity, P2 patch test
    qp, qw = elements.tri_quadrature()
    quad_err = max(
        abs(0.5 * float(qw @ (qp[:, 0] ** a * qp[:, 1] ** b))
            - math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2))
        for a in range(6) for b in range(6 - a)
    )
    rng = np.random.default_rng(9)
    pts = rng.random((64, 2)) * 0.5
    pou = max(
        float(np.max(np.abs(elements.p1_basis(pts).sum(axis=1) - 1.0))),
        float(np.max(np.abs(elements.p2_basis(pts).sum(axis=1) - 1.0))),
    )
    from tubenet.femcore.fields import Field
    coords = straight_mesh.p2_coordinates()
    quad_field = Field(straight_mesh, "P2",
                       1.0 + 2.0 * coords[:, 0] - coords[:, 1] + 3.0 * coords[:, 0] ** 2)
    probe = np.column_stack([rng.random(30) * 0.9 + 0.05, (rng.random(30) - 0.5) * 0.04])
    patch = float(np.max(np.abs(
        quad_field.evaluate(probe)
        - (1.0 + 2.0 * probe[:, 0] - probe[:, 1] + 3.0 * probe[:, 0] ** 2)
    )))

    # transport conservation audit
    vel = mapdd.analytic_network_velocity(straight_graph, straight_domain, unit_flow)
    params = t2.transport_params_from_graph(straight_graph, straight_domain,
                                            kappa=0.5, beta=-0.4)
    tsol = t2.solve_transport(straight_mesh, params, vel,
                              {"port:in": 1.0, "port:out": 0.5})
    conservation = t2.conservation_report(tsol)["relative_defect"]

    # Kirchhoff residual of the 1D solve on the bifurcation
    params_y = t2.TransportParams(kappa=0.5, beta=-0.4, epsilon=y_graph.epsilon)
    sol1d = asym1d.solve_leading(y_graph, y_flow, params_y, n_per_edge=256)
    kirchhoff = max(abs(v) for v in sol1d.kirchhoff_residual().values())

    dt = time.perf_counter() - t0
    ok = (
        quad_err <= 1e-14 and pou <= 1e-12 and patch <= 1e-12
        and conservation <= 1e-6 and kirchhoff <= 1e-10 and dt < 60.0
    )
    _verdict(
        9,
        ok,
        f"quadrature {quad_err:.1e} (<= 1e-14), partition of unity {pou:.1e} "
        f"(<= 1e-12), P2 patch {patch:.1e} (<= 1e-12), conservation defect "
        f"{conservation:.1e} (<= 1e-6), Kirchhoff residual {kirchhoff:.1e} "
        f"(<= 1e-10); total {dt:.1f}s (< 60)",
    )
