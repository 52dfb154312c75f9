"""Scenario runners reproducing the comparison studies.

Every runner writes deterministic CSV artifacts plus a report.json and a
manifest with content hashes into the configured output directory, and
returns the report dict.  A report carries ``pass`` so the CLI can exit 2 on
tolerance breaches without raising.
"""

import json
import math
import os
import time

import numpy as np

from tubenet import asym1d, blcells, mapdd, stokes2d, transport2d
from tubenet import tubegraph as tg
from tubenet.errors import SlopeUndefined, TubenetError
from tubenet.femcore.domainmesh import mesh_domain
from tubenet.femcore.fields import write_csv
from tubenet.femcore.mesh import save_mesh
from tubenet.harness.manifest import write_manifest

SAMPLE_MARGIN_EPS = 0.0  # cross-average stations span the whole trimmed channel


def _default_h(graph):
    theta_min = min(e.theta for e in graph.edges)
    return theta_min * graph.epsilon / 4.0


def _setup(config):
    graph = tg.build_graph(config.geometry)
    domain = tg.instantiate_domain(graph)
    inflow = dict(config.inflow)
    if not inflow:
        inflow = {n.id: n.inflow for n in graph.ports() if n.inflow}
    pressures = {p: 0.0 for p in config.pressure_ports}
    flow = stokes2d.solve_network_flow(graph, inflow, mu=config.mu, port_pressures=pressures)
    h = config.h or _default_h(graph)
    return graph, domain, flow, h


def _port_values(config, graph):
    vals = {n.id: n.q for n in graph.ports()}
    vals.update(config.port_values)
    return vals


def _port_influx(graph, flow, nid):
    eid = graph.incident(nid)[0]
    e = graph.edge(eid)
    return flow.flux[eid] * (1.0 if e.a == nid else -1.0)


def _stokes_port_data(graph, flow):
    return {f"port:{n.id}": _port_influx(graph, flow, n.id) for n in graph.ports()}


def _samples(domain, edge_id, n, eps):
    ch = domain.channels[edge_id]
    margin = SAMPLE_MARGIN_EPS * eps
    return np.linspace(ch.s0 + margin, ch.s1 - margin, n)


def _ensure_out(config, fallback):
    out = config.out or fallback
    os.makedirs(out, exist_ok=True)
    return out


def _write_report(outdir, report):
    with open(os.path.join(outdir, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=float)
        f.write("\n")


def run_straight_channel(config):
    """2D Stokes + transport vs the 1D leading model over the kappa sweep.

    Emits per-kappa profile CSVs (x1, cbar_2d, cbar_1d), field CSVs for the
    concentration and total flux density, velocity/pressure/streamfunction
    exports, report.json and a hashed manifest.
    """
    t_start = time.perf_counter()
    outdir = _ensure_out(config, "out_straight")
    graph, domain, flow, h = _setup(config)
    eps = graph.epsilon
    mesh = mesh_domain(domain, h)
    edge = graph.edges[0]
    port_vals = _port_values(config, graph)

    visc = stokes2d.viscosity_from_graph(graph, domain, config.mu)
    stokes_sol = stokes2d.solve_stokes(mesh, visc, _stokes_port_data(graph, flow))
    # Poiseuille deviation (the channel flow is exactly representable)
    prof = flow.profile_velocity(edge.id, mesh.p2_coordinates()[:, 1] - 0.0)
    ch = domain.channels[edge.id]
    t_coord = (mesh.p2_coordinates() - ch.origin) @ ch.n
    u_exact = np.outer(flow.profile_velocity(edge.id, t_coord), ch.d)
    scale = max(np.max(np.abs(u_exact)), 1e-300)
    poiseuille_linf = float(np.max(np.abs(stokes_sol.velocity.values - u_exact)) / scale)

    artifacts = []
    stokes_sol.export_velocity_csv(os.path.join(outdir, "velocity.csv"))
    stokes_sol.export_pressure_csv(os.path.join(outdir, "pressure.csv"))
    artifacts += ["velocity.csv", "pressure.csv"]
    psi = stokes2d.streamfunction(stokes_sol)
    psi.export_csv(os.path.join(outdir, "psi.csv"), header="x,y,psi")
    artifacts.append("psi.csv")

    samples = _samples(domain, edge.id, config.n_samples, eps)
    rows = []
    crange = abs(port_vals[edge.a] - port_vals[edge.b]) or 1.0
    for kappa in config.kappas:
        params = transport2d.transport_params_from_graph(
            graph, domain, kappa=kappa, beta=config.beta
        )
        tsol = transport2d.solve_transport(
            mesh, params, stokes_sol.velocity,
            {f"port:{n.id}": port_vals[n.id] for n in graph.ports()},
            warn_peclet=not config.allow_peclet,
        )
        cbar2d = transport2d.cross_section_average(tsol.concentration, ch, samples)
        sol1d = asym1d.solve_leading(graph, flow, params, n_per_edge=config.n_per_edge)
        cbar1d = sol1d.interp(edge.id, samples)

        tag = _fmt(kappa)
        write_csv(
            os.path.join(outdir, f"profile_{tag}.csv"),
            "x1,cbar_2d,cbar_1d",
            [samples, cbar2d, cbar1d],
        )
        artifacts.append(f"profile_{tag}.csv")
        tsol.export_csv(os.path.join(outdir, f"concentration_{tag}.csv"))
        transport2d.export_flux_csv(tsol, os.path.join(outdir, f"flux_{tag}.csv"))
        artifacts += [f"concentration_{tag}.csv", f"flux_{tag}.csv"]

        maxdisc = float(np.max(np.abs(cbar2d - cbar1d)) / crange)
        l2disc = float(
            np.sqrt(np.trapezoid((cbar2d - cbar1d) ** 2, samples) / (samples[-1] - samples[0]))
            / crange
        )
        rows.append(
            {
                "kappa": kappa,
                "max_discrepancy": maxdisc,
                "l2_discrepancy": l2disc,
                "within_band": maxdisc <= config.band,
                "cell_peclet": tsol.max_cell_peclet,
            }
        )

    report = {
        "scenario": "straight",
        "poiseuille_rel_linf": poiseuille_linf,
        "divergence_l2": stokes_sol.divergence_l2,
        "port_fluxes": stokes_sol.port_fluxes,
        "band": config.band,
        "rows": rows,
        "pass": all(r["within_band"] for r in rows if r["kappa"] >= 0.1),
        "runtime_s": time.perf_counter() - t_start,
    }
    _write_report(outdir, report)
    artifacts.append("report.json")
    write_manifest(outdir, "straight", _echo(config), artifacts)
    return report


def run_bifurcation(config):
    """Stokes kinematics, pressure and streamfunction on the one-bundle tube
    structure, plus 1D and MAPDD vs 2D transport comparisons per kappa."""
    t_start = time.perf_counter()
    outdir = _ensure_out(config, "out_bifurcation")
    graph, domain, flow, h = _setup(config)
    eps = graph.epsilon
    mesh = mesh_domain(domain, h)
    port_vals = _port_values(config, graph)
    artifacts = []

    visc = stokes2d.viscosity_from_graph(graph, domain, config.mu)
    stokes_sol = stokes2d.solve_stokes(mesh, visc, _stokes_port_data(graph, flow))
    stokes_sol.export_velocity_csv(os.path.join(outdir, "velocity.csv"))
    stokes_sol.export_pressure_csv(os.path.join(outdir, "pressure.csv"))
    psi = stokes2d.streamfunction(stokes_sol)
    psi.export_csv(os.path.join(outdir, "psi.csv"), header="x,y,psi")
    artifacts += ["velocity.csv", "pressure.csv", "psi.csv"]
    with open(os.path.join(outdir, "port_fluxes.json"), "w") as f:
        json.dump(
            {"stokes": stokes_sol.port_fluxes, "network": flow.flux,
             "kirchhoff_residual": flow.kirchhoff_residual()},
            f, indent=2, sort_keys=True, default=float,
        )
    artifacts.append("port_fluxes.json")

    # per-arm pressure fits on the arm interiors
    arm_fits = {}
    for e in graph.edges:
        ch = domain.channels[e.id]
        s = np.linspace(ch.s0 + 2.0 * eps, ch.s1 - 2.0 * eps, 41)
        pts = np.array([ch.point(x, 0.0) for x in s])
        pvals = stokes_sol.pressure.evaluate(pts)
        coef = np.polyfit(s, pvals, 1)
        fit = np.polyval(coef, s)
        ss_res = float(np.sum((pvals - fit) ** 2))
        ss_tot = float(np.sum((pvals - pvals.mean()) ** 2))
        rsq = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        arm_fits[e.id] = {"gradient": float(coef[0]), "r_squared": rsq,
                          "network_gradient": flow.c1[e.id]}
        write_csv(
            os.path.join(outdir, f"pressure_arm_{e.id}.csv"),
            "x1,p,p_fit",
            [s, pvals, fit],
        )
        artifacts.append(f"pressure_arm_{e.id}.csv")

    # transport comparisons
    dec = mapdd.attach_flow(tg.decompose_mapdd(graph, config.K_mapdd), flow)
    comp_vel = mapdd.CompositeVelocity(dec, flow, visc, h=h)
    rows = []
    crange = max(abs(port_vals[a.id] - port_vals[b.id])
                 for a in graph.ports() for b in graph.ports()) or 1.0
    for kappa in config.kappas:
        params = transport2d.transport_params_from_graph(
            graph, domain, kappa=kappa, beta=config.beta
        )
        tsol = transport2d.solve_transport(
            mesh, params, stokes_sol.velocity,
            {f"port:{n.id}": port_vals[n.id] for n in graph.ports()},
            warn_peclet=not config.allow_peclet,
        )
        sol1d = asym1d.solve_leading(graph, flow, params, n_per_edge=config.n_per_edge)
        hyb = mapdd.solve_mapdd_transport(
            dec, params, comp_vel, port_vals, h=h
        )
        tag = _fmt(kappa)
        disc1d = 0.0
        disc_h = 0.0
        for e in graph.edges:
            ch = domain.channels[e.id]
            samples = _samples(domain, e.id, config.n_samples, eps)
            cbar2d = transport2d.cross_section_average(tsol.concentration, ch, samples)
            cbar1d = sol1d.interp(e.id, samples)
            cbarh = hyb.channel_average(e.id, samples)
            write_csv(
                os.path.join(outdir, f"profile_{e.id}_{tag}.csv"),
                "x1,cbar_2d,cbar_1d,cbar_mapdd",
                [samples, cbar2d, cbar1d, cbarh],
            )
            artifacts.append(f"profile_{e.id}_{tag}.csv")
            disc1d = max(disc1d, float(np.max(np.abs(cbar2d - cbar1d)) / crange))
            disc_h = max(disc_h, float(np.max(np.abs(cbar2d - cbarh)) / crange))
        tsol.export_csv(os.path.join(outdir, f"concentration_{tag}.csv"))
        transport2d.export_flux_csv(tsol, os.path.join(outdir, f"flux_{tag}.csv"))
        artifacts += [f"concentration_{tag}.csv", f"flux_{tag}.csv"]
        rows.append(
            {
                "kappa": kappa,
                "max_discrepancy_1d": disc1d,
                "max_discrepancy_mapdd": disc_h,
                "within_band": disc1d <= config.band_bifurcation,
                "cell_peclet": tsol.max_cell_peclet,
            }
        )

    kres = flow.kirchhoff_residual()
    report = {
        "scenario": "bifurcation",
        "arm_pressure_fits": arm_fits,
        "junction_flux_residual": max(abs(v) for v in kres.values()),
        "band": config.band_bifurcation,
        "rows": rows,
        "pass": all(f["r_squared"] >= 0.99 for f in arm_fits.values()),
        "runtime_s": time.perf_counter() - t_start,
    }
    _write_report(outdir, report)
    artifacts.append("report.json")
    write_manifest(outdir, "bifurcation", _echo(config), artifacts)
    return report


def run_convergence(config):
    """Observed order of ||avg(c_2D) - cbar_0|| as eps shrinks, plus the
    MAPDD error trend over the K sweep (when a stenosis is configured)."""
    t_start = time.perf_counter()
    outdir = _ensure_out(config, "out_convergence")
    if len(config.eps_sweep) < 2:
        raise SlopeUndefined("eps sweep needs at least two points for a slope")
    kappa = config.kappas[0]
    errs = []
    artifacts = []
    for eps in config.eps_sweep:
        geometry = json.loads(json.dumps(config.geometry))
        geometry["epsilon"] = eps
        graph = tg.build_graph(geometry)
        domain = tg.instantiate_domain(graph)
        inflow = {"in": eps / 6.0, "out": -eps / 6.0}
        if set(inflow) - {n.id for n in graph.ports()}:
            inflow = {n.id: math.copysign(eps / 6.0, n.inflow or 1.0) for n in graph.ports()}
        flow = stokes2d.solve_network_flow(graph, inflow, mu=config.mu)
        h = _default_h(graph)
        mesh = mesh_domain(domain, h)
        params = transport2d.transport_params_from_graph(
            graph, domain, kappa=kappa, beta=config.beta
        )
        vel = mapdd.analytic_network_velocity(graph, domain, flow)
        port_vals = _port_values(config, graph)
        tsol = transport2d.solve_transport(
            mesh, params, vel,
            {f"port:{n.id}": port_vals[n.id] for n in graph.ports()},
            warn_peclet=not config.allow_peclet,
        )
        sol1d = asym1d.solve_leading(graph, flow, params, n_per_edge=config.n_per_edge)
        edge = graph.edges[0]
        ch = domain.channels[edge.id]
        samples = _samples(domain, edge.id, config.n_samples, eps)
        cbar2d = transport2d.cross_section_average(tsol.concentration, ch, samples)
        cbar1d = sol1d.interp(edge.id, samples)
        err = float(np.sqrt(np.trapezoid((cbar2d - cbar1d) ** 2, samples)))
        errs.append(err)
        write_csv(
            os.path.join(outdir, f"profile_eps_{_fmt(eps)}.csv"),
            "x1,cbar_2d,cbar_1d",
            [samples, cbar2d, cbar1d],
        )
        artifacts.append(f"profile_eps_{_fmt(eps)}.csv")

    # err ~ C eps^p: p is the slope of log err vs log eps
    slope = float(np.polyfit(np.log(np.asarray(config.eps_sweep)), np.log(np.asarray(errs)), 1)[0])

    report = {
        "scenario": "convergence",
        "eps_sweep": list(config.eps_sweep),
        "errors": errs,
        "slope": slope,
        "pass": slope >= 0.8,
        "runtime_s": time.perf_counter() - t_start,
    }

    if config.K_sweep and any(e.stenoses for e in tg.build_graph(config.geometry).edges):
        report["mapdd"] = run_mapdd_sweep(config, outdir, artifacts)
        report["pass"] = report["pass"] and report["mapdd"]["monotone"]

    _write_report(outdir, report)
    artifacts.append("report.json")
    write_manifest(outdir, "convergence", _echo(config), artifacts)
    return report


def run_mapdd_sweep(config, outdir=None, artifacts=None):
    """Hybrid-vs-reference errors over the K sweep on the configured geometry."""
    graph, domain, flow, h = _setup(config)
    kappa = config.kappas[0]
    params = transport2d.transport_params_from_graph(
        graph, domain, kappa=kappa, beta=config.beta
    )
    vel = mapdd.analytic_network_velocity(graph, domain, flow)
    port_vals = _port_values(config, graph)
    mesh = mesh_domain(domain, h)
    ref = transport2d.solve_transport(
        mesh, params, vel,
        {f"port:{n.id}": port_vals[n.id] for n in graph.ports()},
        warn_peclet=not config.allow_peclet,
    )
    sweep = []
    for K in (config.K_sweep or (config.K_mapdd,)):
        dec = mapdd.attach_flow(tg.decompose_mapdd(graph, K), flow)
        hyb = mapdd.solve_mapdd_transport(dec, params, vel, port_vals, h=h)
        rep = mapdd.mapdd_error_report(hyb, ref)
        sweep.append({"K": K, **{k: rep[k] for k in
                                 ("l2_relative", "h1_relative", "dof_hybrid", "dof_full",
                                  "dof_ratio", "t_hybrid")}})
    h1s = [row["h1_relative"] for row in sweep]
    result = {
        "kappa": kappa,
        "sweep": sweep,
        "monotone": all(a >= b - 1e-12 for a, b in zip(h1s[:-1], h1s[1:])),
    }
    if outdir is not None:
        with open(os.path.join(outdir, "mapdd_sweep.json"), "w") as f:
            json.dump(result, f, indent=2, sort_keys=True, default=float)
        if artifacts is not None:
            artifacts.append("mapdd_sweep.json")
    return result


def run_cells(config):
    """Solve the cell-problem suite for the configured geometry and write
    JSON reports (q_tilde, decay rate, c_plus, g_j, sensitivity) plus fields."""
    t_start = time.perf_counter()
    outdir = _ensure_out(config, "out_cells")
    graph = tg.build_graph(config.geometry)
    artifacts = []
    reports = {}

    strip = blcells.build_strip(L=config.L_cell, h=config.h_cell)
    marker = next((m for e in graph.edges for m in e.stenoses), None)
    zerov = lambda pts: np.zeros((len(np.atleast_2d(pts)), 2))
    if marker is not None:
        if marker.m_amp != 0.0:
            res = blcells.solve_stokes_stenosis_cell(
                marker.viscosity_bump, config.mu, -2.0 * config.mu, strip
            )
            reports["stokes_stenosis"] = {
                "c_plus": res.c_plus,
                "decay_rate": res.decay_rate,
                "sensitivity": res.sensitivity,
                "divergence_l2": res.details["divergence_l2"],
            }
            res.fields["velocity"].export_csv(
                os.path.join(outdir, "cell_stokes_velocity.csv")
            )
            artifacts.append("cell_stokes_velocity.csv")
        traces = blcells.RegularTraces(
            value_minus=0.75, value_plus=0.75, dvalue_minus=-0.5, dvalue_plus=-0.5
        )
        res1 = blcells.solve_transport_strip_cell(
            marker.diffusivity_bump, zerov, 1, traces, strip, kappa=config.kappas[0]
        )
        reports["transport_strip_j1"] = {
            "q_tilde": res1.q_tilde,
            "g_j": res1.g_jump,
            "decay_rate": res1.decay_rate,
            "sensitivity": res1.sensitivity,
            "cell_constant": res1.details["cell_constant"],
        }
        res1.fields["layer"].export_csv(os.path.join(outdir, "cell_strip_layer.csv"))
        artifacts.append("cell_strip_layer.csv")

    bif = next((n for n in graph.nodes if n.kind == "bifurcation"), None)
    if bif is not None:
        jd = blcells.build_junction_cell(graph, bif.id, L=config.L_cell, h=config.h_cell)
        thetas = jd.thetas
        ids = jd.branch_ids
        d0 = 0.5
        share = -d0 * thetas[ids[0]] / sum(thetas[b] for b in ids[1:])
        data = {ids[0]: (1.0, d0)}
        for b in ids[1:]:
            data[b] = (1.0, share / thetas[b] * 1.0)
        # rescale to satisfy Kirchhoff exactly
        total = sum(thetas[b] * data[b][1] for b in ids)
        data[ids[0]] = (1.0, data[ids[0]][1] - total / thetas[ids[0]])
        res = blcells.solve_junction_cell(jd, data, kappa=config.kappas[0])
        reports["junction"] = {
            "q_tilde": res.q_tilde,
            "decay_rate": res.decay_rate,
            "sensitivity": res.sensitivity,
        }
        res.fields["layer"].export_csv(os.path.join(outdir, "cell_junction_layer.csv"))
        artifacts.append("cell_junction_layer.csv")

    port = graph.ports()[0]
    pres = blcells.solve_port_cell(q_s=port.q, port_value=port.q - 1.0, L=config.L_cell)
    reports["port"] = {
        "sup": pres.details["sup"],
        "q_tilde": pres.q_tilde,
        "decay_rate": pres.decay_rate,
    }
    write_csv(
        os.path.join(outdir, "cell_port_profile.csv"),
        "xi1,u0",
        [pres.details["xi1"], pres.details["values"]],
    )
    artifacts.append("cell_port_profile.csv")

    report = {
        "scenario": "cells",
        "reports": reports,
        "pass": True,
        "runtime_s": time.perf_counter() - t_start,
    }
    _write_report(outdir, report)
    artifacts.append("report.json")
    write_manifest(outdir, "cells", _echo(config), artifacts)
    return report


def export_mesh(config):
    outdir = _ensure_out(config, "out_mesh")
    graph = tg.build_graph(config.geometry)
    domain = tg.instantiate_domain(graph)
    mesh = mesh_domain(domain, config.h or _default_h(graph))
    path = os.path.join(outdir, "mesh.txt")
    save_mesh(mesh, path)
    write_manifest(outdir, "export-mesh", _echo(config), ["mesh.txt"])
    return {"scenario": "export-mesh", "pass": True, "path": path,
            "vertices": mesh.n_vertices, "triangles": mesh.n_triangles}


def _fmt(x):
    return f"{x:g}".replace(".", "p").replace("-", "m")


def _echo(config):
    out = dict(config.__dict__)
    out.pop("geometry", None)
    out["geometry_epsilon"] = config.geometry.get("epsilon")
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in out.items()}
