"""Figure rendering for the four documented input schemas.

Inputs are the CSV/JSONL files the experiment runner writes. Values are
carried as the strings read from disk and converted only for plotting,
so annotations echo the files byte-for-byte. A missing column or an
unsupported schema version raises SchemaError naming the offender.
"""

import csv
import json
from dataclasses import dataclass

from matplotlib.figure import Figure

SCHEMA_VERSION = 1

_CSV_COLUMNS = {
    "theorem-scan": ("delta", "median_error", "floored_error", "floor",
                     "slope"),
    "variance": ("snapshot_iter", "samples", "sds_std", "cds_std", "ratio"),
    "ablation": ("arm", "median_error"),
}
_TRAJECTORY_KEYS = ("run", "t", "state")

KINDS = ("trajectories", "theorem-scan", "variance", "ablation")


class SchemaError(ValueError):
    """An input file does not match its documented schema."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request.

    Attributes:
        kind: One of KINDS.
        inputs: Input file paths; only "trajectories" accepts several.
        out_path: Image file to write.
        title: Optional figure title; defaults per kind.
        labels: Optional legend labels, one per input file.
    """

    kind: str
    inputs: tuple[str, ...]
    out_path: str
    title: str | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise SchemaError("at least one input file is required")
        if self.kind != "trajectories" and len(self.inputs) != 1:
            raise SchemaError(f"{self.kind} takes exactly one input file")
        if self.labels is not None and len(self.labels) != len(self.inputs):
            raise SchemaError("labels must match input files one to one")


def read_csv_columns(path: str, required: tuple[str, ...]) -> dict[str, list[str]]:
    """Read a CSV into string columns, checking the required header.

    Args:
        path: CSV file path.
        required: Column names that must be present.

    Returns:
        Mapping of column name to cell strings, in row order.

    Raises:
        SchemaError: A required column is missing from the header.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        for column in required:
            if column not in names:
                raise SchemaError(f"{path}: missing column {column}")
        rows = list(reader)
    return {name: [row[name] for row in rows] for name in names}


def read_trajectories(path: str) -> list[dict]:
    """Read trajectory records, checking schema version and keys.

    Args:
        path: JSONL file path.

    Returns:
        Parsed records in file order.

    Raises:
        SchemaError: Wrong schema_version or a missing record key.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            version = record.get("schema_version")
            if version != SCHEMA_VERSION:
                raise SchemaError(
                    f"{path}:{number}: schema_version {version!r}, "
                    f"this reader understands {SCHEMA_VERSION}"
                )
            for key in _TRAJECTORY_KEYS:
                if key not in record:
                    raise SchemaError(f"{path}:{number}: missing column {key}")
            records.append(record)
    return records


def _new_axes(title: str):
    fig = Figure(figsize=(6.4, 4.8), dpi=100)
    ax = fig.add_subplot()
    ax.set_title(title)
    return fig, ax


def _render_trajectories(spec: FigureSpec):
    fig, ax = _new_axes(spec.title or "sampler trajectories")
    total_runs = 0
    for index, path in enumerate(spec.inputs):
        records = read_trajectories(path)
        by_run: dict = {}
        for record in records:
            by_run.setdefault(record["run"], []).append(record)
        label_base = spec.labels[index] if spec.labels else None
        for run, points in sorted(by_run.items()):
            times = [p["t"] for p in points]
            coords = [p["state"][0] for p in points]
            label = label_base if run == min(by_run) and label_base else None
            ax.plot(times, coords, linewidth=1.0, alpha=0.8, label=label)
        total_runs += len(by_run)
    ax.set_xlabel("t")
    ax.set_ylabel("first state coordinate")
    ax.invert_xaxis()
    if spec.labels:
        ax.legend()
    return fig, {"kind": spec.kind, "files": len(spec.inputs),
                 "runs": total_runs}


def _render_theorem_scan(spec: FigureSpec):
    columns = read_csv_columns(spec.inputs[0], _CSV_COLUMNS["theorem-scan"])
    deltas = [float(v) for v in columns["delta"]]
    medians = [float(v) for v in columns["median_error"]]
    floored = [float(v) for v in columns["floored_error"]]
    slope = columns["slope"][0]
    fig, ax = _new_axes(spec.title or "final error vs step gap")
    ax.loglog(deltas, medians, "o-", label="median error")
    ax.loglog(deltas, floored, "s--", label="floor subtracted")
    ax.set_xlabel("gap fraction")
    ax.set_ylabel("final error")
    ax.legend()
    ax.annotate(f"slope = {slope}", xy=(0.05, 0.05),
                xycoords="axes fraction")
    return fig, {"kind": spec.kind, "points": len(deltas),
                 "slope": float(slope)}


def _render_variance(spec: FigureSpec):
    columns = read_csv_columns(spec.inputs[0], _CSV_COLUMNS["variance"])
    sds = float(columns["sds_std"][0])
    cds = float(columns["cds_std"][0])
    ratio = columns["ratio"][0]
    fig, ax = _new_axes(spec.title or "target spread")
    ax.bar(["baseline target", "consistency target"], [sds, cds],
           color=["#888888", "#3465a4"])
    ax.set_ylabel("std over redraws")
    ax.annotate(f"ratio = {ratio}", xy=(0.55, 0.9), xycoords="axes fraction")
    return fig, {"kind": spec.kind, "sds_std": sds, "cds_std": cds,
                 "ratio": float(ratio)}


def _render_ablation(spec: FigureSpec):
    columns = read_csv_columns(spec.inputs[0], _CSV_COLUMNS["ablation"])
    arms = columns["arm"]
    medians = [float(v) for v in columns["median_error"]]
    fig, ax = _new_axes(spec.title or "ablation arms")
    ax.bar(arms, medians, color="#3465a4")
    ax.set_ylabel("median final error")
    ax.tick_params(axis="x", labelrotation=20)
    return fig, {"kind": spec.kind, "arms": arms,
                 "medians": dict(zip(arms, medians))}


_RENDERERS = {
    "trajectories": _render_trajectories,
    "theorem-scan": _render_theorem_scan,
    "variance": _render_variance,
    "ablation": _render_ablation,
}


def render_figure(spec: FigureSpec) -> dict:
    """Render one figure and return what was annotated on it.

    Args:
        spec: Figure request.

    Returns:
        Annotation values drawn on the figure, straight from the inputs.

    Raises:
        SchemaError: An input does not match its documented schema.
        OSError: An input is missing or the output cannot be written.
    """
    fig, annotations = _RENDERERS[spec.kind](spec)
    fig.savefig(spec.out_path)
    return annotations


__all__ = [
    "FigureSpec",
    "KINDS",
    "SCHEMA_VERSION",
    "SchemaError",
    "read_csv_columns",
    "read_trajectories",
    "render_figure",
]
