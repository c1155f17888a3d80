"""Deterministic CSV, JSONL, and manifest writers.

All floats are rendered with 17 significant digits so identical runs
produce byte-identical files and every value round-trips to the same
double. Records must be finite; JSON has no representation for NaN or
infinities.
"""

import hashlib
import json
import os

import numpy as np

from cdslab.errors import InputError

SCHEMA_VERSION = 1


def fmt_float(x: float) -> str:
    """Render one finite float with 17 significant digits."""
    x = float(x)
    if not np.isfinite(x):
        raise InputError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def _json_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if v is None:
        return "null"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(item) for item in v) + "]"
    raise InputError(f"cannot serialize value of type {type(v).__name__}")


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, str):
        if "," in v or "\n" in v or '"' in v:
            raise InputError(f"CSV cell needs quoting, refusing: {v!r}")
        return v
    raise InputError(f"cannot render CSV cell of type {type(v).__name__}")


def write_csv(path: str, header: list[str], rows) -> None:
    """Write a comma-separated file with a fixed header and LF endings.

    Args:
        path: Output file path.
        header: Column names.
        rows: Iterable of row tuples/lists matching the header length.
    """
    lines = [",".join(header)]
    for row in rows:
        cells = [_cell(v) for v in row]
        if len(cells) != len(header):
            raise InputError(
                f"row has {len(cells)} cells, header has {len(header)}"
            )
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_jsonl(path: str, records, schema_version: int = SCHEMA_VERSION) -> None:
    """Write one JSON object per line, each carrying a schema_version field.

    Key order follows each record's own ordering, after schema_version.

    Args:
        path: Output file path.
        records: Iterable of flat dicts with scalar, string, or numeric
            array values.
        schema_version: Version stamp for downstream readers.
    """
    lines = []
    for rec in records:
        pairs = [f'"schema_version": {int(schema_version)}']
        pairs += [f"{json.dumps(str(k))}: {_json_value(v)}" for k, v in rec.items()]
        lines.append("{" + ", ".join(pairs) + "}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def write_json(path: str, payload: dict) -> None:
    """Write one JSON document with deterministic layout and float format."""
    def render(v, indent):
        pad = "  " * indent
        if isinstance(v, dict):
            if not v:
                return "{}"
            inner = ",\n".join(
                f'{pad}  {json.dumps(str(k))}: {render(val, indent + 1)}'
                for k, val in v.items()
            )
            return "{\n" + inner + "\n" + pad + "}"
        if isinstance(v, (list, tuple, np.ndarray)):
            return "[" + ", ".join(_json_value(item) for item in v) + "]"
        return _json_value(v)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render(payload, 0) + "\n")


def sha256_file(path: str) -> str:
    """Hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, command: str, seed: int, config_sha256: str,
                   files: list[str]) -> str:
    """Record what a run produced: config hash, seed, and file digests.

    Args:
        out_dir: Directory holding the produced files.
        command: Subcommand that produced them.
        seed: Global seed of the run.
        config_sha256: Digest of the config file driving the run.
        files: File names inside out_dir, in production order.

    Returns:
        Path of the written manifest.json.
    """
    entries = []
    for name in files:
        full = os.path.join(out_dir, name)
        entries.append({
            "name": name,
            "sha256": sha256_file(full),
            "bytes": os.path.getsize(full),
        })
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": int(seed),
        "config_sha256": config_sha256,
        "files": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return path


__all__ = [
    "SCHEMA_VERSION",
    "fmt_float",
    "write_csv",
    "write_jsonl",
    "write_json",
    "sha256_file",
    "write_manifest",
]
