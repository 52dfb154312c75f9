"""Offline rendering of tubenet run artifacts into publication-style figures.

Reads only the documented CSV/JSON interfaces (manifest, profile/field/flux/
pressure/streamfunction CSVs); never touches solver internals.
"""

from figviz.render import MissingArtifact, PlotSpec, SchemaMismatch, render

__all__ = ["MissingArtifact", "PlotSpec", "SchemaMismatch", "render"]
