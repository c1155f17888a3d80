"""Offline figure generation from cdslab CSV/JSONL outputs.

Four figure kinds cover the experiment files: trajectory overlays,
error-vs-gap log-log plots with the fitted slope, target-spread bars,
and ablation bars. Every number shown is read from the input files;
nothing is recomputed.
"""

from cdslab_plots.figures import FigureSpec, SchemaError, render_figure

__all__ = ["FigureSpec", "SchemaError", "render_figure"]
