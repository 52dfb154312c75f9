"""Figure rendering from run manifests.

Four figure kinds mirror the study plots: FieldMap (concentration color map
with total-flux arrows), ProfileComparison (full 2D cross-averages vs dashed
1D curves per diffusivity), PressureArms (per-arm pressure with linear fits),
and Streamlines (streamfunction contours).  Rendering is deterministic: the
Agg backend, a pinned SVG hash salt, and stripped date metadata make repeated
runs byte-identical for identical inputs.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "figviz"

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np


class SchemaMismatch(Exception):
    """Artifact exists but does not match the documented CSV schema."""


class MissingArtifact(Exception):
    """Referenced artifact is absent from the manifest directory."""


KINDS = ("FieldMap", "ProfileComparison", "PressureArms", "Streamlines")


@dataclass
class PlotSpec:
    manifest: str
    kind: str
    options: dict = field(default_factory=dict)

    @classmethod
    def load(cls, source):
        if isinstance(source, (str, os.PathLike)):
            with open(source) as f:
                source = json.load(f)
        spec = cls(
            manifest=source["manifest"],
            kind=source["kind"],
            options=dict(source.get("options", {})),
        )
        if spec.kind not in KINDS:
            raise SchemaMismatch(f"unknown figure kind {spec.kind!r}; expected one of {KINDS}")
        return spec


def _read_csv(path, expected_prefix):
    if not os.path.exists(path):
        raise MissingArtifact(f"artifact not found: {path}")
    with open(path) as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        cols = [c.strip() for c in header]
        if cols[: len(expected_prefix)] != list(expected_prefix):
            raise SchemaMismatch(
                f"{path}: header {cols} does not start with {list(expected_prefix)}"
            )
        rows = [[float(x) for x in row] for row in reader if row]
    if not rows:
        raise SchemaMismatch(f"{path}: no data rows")
    return cols, np.asarray(rows)


def _artifact_paths(spec):
    path = spec.manifest
    if not os.path.exists(path):
        raise MissingArtifact(f"manifest not found: {path}")
    with open(path) as f:
        manifest = json.load(f)
    base = os.path.dirname(path)
    return base, [a["path"] for a in manifest.get("artifacts", [])]


def _select(names, prefix, suffix=".csv"):
    return sorted(n for n in names if n.startswith(prefix) and n.endswith(suffix))


def _masked_triangulation(x, y):
    """Delaunay triangulation of scattered nodes with sliver/hull masking,
    so thin multi-branch domains render without bridging the gaps."""
    tri = mtri.Triangulation(x, y)
    pts = np.column_stack([x, y])
    a, b, c = (pts[tri.triangles[:, k]] for k in range(3))
    lengths = np.maximum(
        np.linalg.norm(a - b, axis=1),
        np.maximum(np.linalg.norm(b - c, axis=1), np.linalg.norm(c - a, axis=1)),
    )
    cutoff = 3.0 * np.median(lengths)
    tri.set_mask(lengths > cutoff)
    return tri


def render(spec):
    """Render one figure from a PlotSpec (dict, JSON path or PlotSpec).

    Writes <output>.png and <output>.svg; returns their paths.
    """
    if not isinstance(spec, PlotSpec):
        spec = PlotSpec.load(spec)
    base, names = _artifact_paths(spec)
    out_base = spec.options.get("output", spec.kind.lower())
    if not os.path.isabs(out_base):
        out_base = os.path.join(base, out_base)

    fig, ax = plt.subplots(figsize=spec.options.get("figsize", (7.0, 4.5)))
    if spec.kind == "FieldMap":
        _render_field_map(spec, base, names, fig, ax)
    elif spec.kind == "ProfileComparison":
        _render_profiles(spec, base, names, fig, ax)
    elif spec.kind == "PressureArms":
        _render_pressure_arms(spec, base, names, fig, ax)
    elif spec.kind == "Streamlines":
        _render_streamlines(spec, base, names, fig, ax)
    if spec.options.get("title"):
        ax.set_title(spec.options["title"])
    fig.tight_layout()
    png = out_base + ".png"
    svg = out_base + ".svg"
    fig.savefig(png, dpi=150, metadata={"Software": "figviz"})
    fig.savefig(svg, metadata={"Date": None})
    plt.close(fig)
    return png, svg


def _render_field_map(spec, base, names, fig, ax):
    conc = _select(names, "concentration_")
    if not conc:
        raise MissingArtifact("no concentration_*.csv artifacts in the manifest")
    pick = spec.options.get("kappa_tag")
    name = next((n for n in conc if pick and pick in n), conc[0])
    _cols, data = _read_csv(os.path.join(base, name), ("x", "y", "c"))
    tri = _masked_triangulation(data[:, 0], data[:, 1])
    cmap = spec.options.get("colormap", "viridis")
    tp = ax.tripcolor(tri, data[:, 2], shading="gouraud", cmap=cmap)
    fig.colorbar(tp, ax=ax, label="concentration")

    flux_name = name.replace("concentration_", "flux_")
    if flux_name in names:
        _fcols, flux = _read_csv(os.path.join(base, flux_name), ("x", "y", "fx", "fy"))
        stride = max(1, int(spec.options.get("arrow_stride", max(1, len(flux) // 400))))
        sub = flux[::stride]
        ax.quiver(sub[:, 0], sub[:, 1], sub[:, 2], sub[:, 3],
                  color="black", width=0.002, scale_units="xy", angles="xy")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")


def _render_profiles(spec, base, names, fig, ax):
    profiles = _select(names, "profile_")
    if not profiles:
        raise MissingArtifact("no profile_*.csv artifacts in the manifest")
    cmap = plt.get_cmap(spec.options.get("colormap", "tab10"))
    for i, name in enumerate(profiles):
        cols, data = _read_csv(os.path.join(base, name), ("x1", "cbar_2d", "cbar_1d"))
        color = cmap(i % 10)
        label = name[len("profile_"): -len(".csv")].replace("p", ".").replace("m", "-")
        ax.plot(data[:, 0], data[:, 1], "-", color=color, lw=1.6, label=label)
        ax.plot(data[:, 0], data[:, 2], "--", color=color, lw=1.2)
        if len(cols) > 3 and cols[3] == "cbar_mapdd":
            ax.plot(data[:, 0], data[:, 3], ":", color=color, lw=1.2)
    ax.set_xlabel("x1")
    ax.set_ylabel("cross-averaged concentration")
    ax.legend(fontsize=8, title="sweep (full: 2D, dashed: 1D)")


def _render_pressure_arms(spec, base, names, fig, ax):
    arms = _select(names, "pressure_arm_")
    if not arms:
        raise MissingArtifact("no pressure_arm_*.csv artifacts in the manifest")
    cmap = plt.get_cmap(spec.options.get("colormap", "tab10"))
    for i, name in enumerate(arms):
        _cols, data = _read_csv(os.path.join(base, name), ("x1", "p", "p_fit"))
        color = cmap(i % 10)
        arm = name[len("pressure_arm_"): -len(".csv")]
        ax.plot(data[:, 0], data[:, 1], "-", color=color, lw=1.6, label=f"arm {arm}")
        ax.plot(data[:, 0], data[:, 2], "--", color=color, lw=1.0)
    ax.set_xlabel("arc length along the arm")
    ax.set_ylabel("pressure")
    ax.legend(fontsize=8, title="full: FEM, dashed: linear fit")


def _render_streamlines(spec, base, names, fig, ax):
    if "psi.csv" not in names:
        raise MissingArtifact("psi.csv not in the manifest")
    _cols, data = _read_csv(os.path.join(base, "psi.csv"), ("x", "y", "psi"))
    tri = _masked_triangulation(data[:, 0], data[:, 1])
    levels = int(spec.options.get("levels", 21))
    cs = ax.tricontour(tri, data[:, 2], levels=levels,
                       cmap=spec.options.get("colormap", "viridis"), linewidths=1.0)
    fig.colorbar(cs, ax=ax, label="streamfunction")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
