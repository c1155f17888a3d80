"""Command-line entry point: subcommands, config parsing, and outputs.

One executable drives every experiment from a TOML config file. All
randomness derives from the config's global seed through named
substreams, all floats are written with 17 significant digits, and each
run ends with a manifest.json recording the config hash and the digests
of every produced file.

Exit codes: 0 success, 1 configuration, 2 numerical, 3 divergence,
4 input/output.
"""

import argparse
import os
import re
import sys

import numpy as np

try:
    import tomllib as _toml
except ImportError:
    import tomli as _toml

from cdslab.distill import DistillRunConfig, run_distill
from cdslab.errors import ConfigError, DivergenceError, NumericalError, ScanError
from cdslab.harness import (
    ablation_suite,
    guidance_variance_compare,
    sds_sde_equivalence,
    theorem1_scan,
)
from cdslab.mixture import Component, GaussianMixture, as_denoiser, sample_data
from cdslab.mlp import init_mlp, save_denoiser, train
from cdslab.rng import named_stream
from cdslab.runio import sha256_file, write_csv, write_json, write_jsonl, write_manifest
from cdslab.samplers import ancestral_batch, ode_batch
from cdslab.scene import SceneTask, TaskOracle, draw_separated_modes, make_task
from cdslab.schedule import NoiseSchedule, ScheduleParams, sigma

_KNOWN_KEYS = {
    "": {"seed", "schedule", "data", "scene", "distill", "output"},
    "schedule": {"horizon", "t_min", "t_max", "delta", "cap_delta", "iters",
                 "cfg_start", "cfg_end"},
    "data": {"components"},
    "data.components": {"weight", "mean", "scale", "label"},
    "scene": {"seed", "views", "d_img", "d_scene", "modes", "labels", "scale"},
    "distill": {"loss", "lambda_mode", "lr", "optimizer", "poses_per_iter",
                "label", "noise_mode", "t2_mode", "init_scale"},
    "output": {"dir"},
}

_SCHEDULE_DEFAULTS = {"horizon": 10.0, "t_min": 0.1, "t_max": 0.7, "delta": 0.1,
                      "cap_delta": 0.2, "iters": 2000}
_NEEDS_DATA = {"sample", "train-denoiser", "equivalence-check"}
_NEEDS_SCENE = {"distill", "theorem-scan", "variance-compare", "ablate"}


class RunConfig:
    """Validated configuration shared by every subcommand.

    Attributes:
        seed: Global seed.
        out_dir: Output directory.
        sched: Noise schedule (horizon).
        schedule: Iteration-time schedule parameters.
        cfg_pair: Optional (w_start, w_end) guidance anneal.
        data: Mixture from [data], or None if the section is absent.
        task: Scene task from [scene], or None if the section is absent.
        distill_kw: Keyword arguments for DistillRunConfig.
        path: Config file path.
        sha256: Digest of the config file bytes.
    """

    def __init__(self, seed, out_dir, sched, schedule, cfg_pair, data, task,
                 distill_kw, path, sha256):
        self.seed = seed
        self.out_dir = out_dir
        self.sched = sched
        self.schedule = schedule
        self.cfg_pair = cfg_pair
        self.data = data
        self.task = task
        self.distill_kw = distill_kw
        self.path = path
        self.sha256 = sha256

    def distill_config(self, loss: str | None = None) -> DistillRunConfig:
        kw = dict(self.distill_kw)
        if loss is not None:
            kw["loss"] = loss
        return DistillRunConfig(schedule=self.schedule, cfg=self.cfg_pair,
                                seed=self.seed, **kw)


def _line_hint(text: str, section: str, key: str) -> str:
    """Best-effort line number of a key, searched below its section header."""
    lines = text.splitlines()
    start = 0
    if section:
        pattern = re.compile(rf"^\s*\[+\s*{re.escape(section)}\s*\]")
        for i, line in enumerate(lines):
            if pattern.match(line):
                start = i + 1
                break
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i in range(start, len(lines)):
        if pattern.match(lines[i]):
            return f" (line {i + 1})"
    return ""


def _check_keys(table: dict, section: str, text: str, errors: list) -> None:
    for key in table:
        if key not in _KNOWN_KEYS[section if section else ""]:
            where = f"[{section}] " if section else ""
            errors.append(
                f"unknown key {where}{key}{_line_hint(text, section, key)}"
            )


def _get(table: dict, key: str, kind, default, section: str, errors: list):
    """Typed lookup with default; records an error instead of raising."""
    if key not in table:
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        errors.append(f"[{section}] {key} must be an integer, got {value!r}")
        return default
    if not isinstance(value, kind):
        errors.append(
            f"[{section}] {key} must be {kind.__name__}, got {type(value).__name__}"
        )
        return default
    return value


def _build_data(table: dict, text: str, errors: list) -> GaussianMixture | None:
    _check_keys(table, "data", text, errors)
    raw = table.get("components")
    if raw is None:
        errors.append("[data] needs a components array")
        return None
    if not isinstance(raw, list) or not raw:
        errors.append("[data] components must be a nonempty array of tables")
        return None
    comps = []
    for idx, entry in enumerate(raw):
        if not isinstance(entry, dict):
            errors.append(f"[data] components[{idx}] must be a table")
            continue
        for key in entry:
            if key not in _KNOWN_KEYS["data.components"]:
                errors.append(f"unknown key [data] components[{idx}].{key}")
        try:
            mean = np.asarray(entry.get("mean", []), dtype=np.float64)
        except (TypeError, ValueError):
            errors.append(f"[data] components[{idx}].mean must be a number array")
            continue
        comps.append(Component(
            weight=float(entry.get("weight", 1.0 / len(raw))),
            mean=np.atleast_1d(mean),
            scale=float(entry.get("scale", 1.0)),
            label=int(entry.get("label", 0)),
        ))
    if errors or not comps:
        return None
    try:
        return GaussianMixture(tuple(comps))
    except (ConfigError, TypeError, ValueError) as exc:
        errors.append(f"[data] invalid mixture: {exc}")
        return None


def _build_scene(table: dict, global_seed: int, text: str,
                 errors: list) -> SceneTask | None:
    _check_keys(table, "scene", text, errors)
    seed = _get(table, "seed", int, global_seed, "scene", errors)
    views = _get(table, "views", int, 4, "scene", errors)
    d_img = _get(table, "d_img", int, 8, "scene", errors)
    d_scene = _get(table, "d_scene", int, 16, "scene", errors)
    scale = _get(table, "scale", float, 0.3, "scene", errors)
    modes = table.get("modes")
    labels = table.get("labels")
    if errors:
        return None
    try:
        if modes is None:
            modes_arr = draw_separated_modes(seed, 3, d_scene, spread=2.0,
                                             min_separation=6.0)
        else:
            modes_arr = np.asarray(modes, dtype=np.float64)
            if modes_arr.ndim != 2 or modes_arr.shape[1] != d_scene:
                errors.append(
                    f"[scene] modes must be rows of length d_scene={d_scene}"
                    f"{_line_hint(text, 'scene', 'modes')}"
                )
                return None
        return make_task(seed, views, d_img, modes_arr, labels=labels, scale=scale)
    except (ConfigError, ValueError, TypeError) as exc:
        errors.append(f"[scene] {exc}")
        return None


def parse_config(path: str) -> RunConfig:
    """Load and validate a config file, collecting every error at once.

    Args:
        path: TOML config file path.

    Returns:
        The validated RunConfig with documented defaults filled in.

    Raises:
        ConfigError: One message per validation problem, each naming the
            offending key (with a line hint where possible).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    text = blob.decode("utf-8", errors="replace")
    try:
        raw = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc

    errors: list[str] = []
    _check_keys(raw, "", text, errors)
    seed = _get(raw, "seed", int, 0, "", errors)

    sched_tbl = raw.get("schedule", {})
    _check_keys(sched_tbl, "schedule", text, errors)
    sch = {
        key: _get(sched_tbl, key, int if key == "iters" else float,
                  default, "schedule", errors)
        for key, default in _SCHEDULE_DEFAULTS.items()
    }
    cfg_start = _get(sched_tbl, "cfg_start", float, None, "schedule", errors)
    cfg_end = _get(sched_tbl, "cfg_end", float, None, "schedule", errors)
    if (cfg_start is None) != (cfg_end is None):
        errors.append("[schedule] cfg_start and cfg_end must be given together")
    cfg_pair = (cfg_start, cfg_end) if cfg_start is not None and cfg_end is not None \
        else None

    sched = None
    schedule = None
    try:
        sched = NoiseSchedule(horizon=sch["horizon"])
    except ConfigError as exc:
        errors.append(f"[schedule] {exc}")
    try:
        schedule = ScheduleParams(t_min=sch["t_min"], t_max=sch["t_max"],
                                  delta=sch["delta"], cap_delta=sch["cap_delta"],
                                  iters=sch["iters"])
    except ConfigError as exc:
        errors.append(f"[schedule] {exc}")

    data = None
    if "data" in raw:
        if isinstance(raw["data"], dict):
            data = _build_data(raw["data"], text, errors)
        else:
            errors.append("[data] must be a section")
    task = None
    if "scene" in raw:
        if isinstance(raw["scene"], dict):
            task = _build_scene(raw["scene"], seed, text, errors)
        else:
            errors.append("[scene] must be a section")

    dist_tbl = raw.get("distill", {})
    _check_keys(dist_tbl, "distill", text, errors)
    distill_kw = {
        "loss": _get(dist_tbl, "loss", str, "cds", "distill", errors),
        "lambda_mode": _get(dist_tbl, "lambda_mode", str, "unit", "distill", errors),
        "lr": _get(dist_tbl, "lr", float, 0.02, "distill", errors),
        "optimizer": _get(dist_tbl, "optimizer", str, "adam", "distill", errors),
        "poses_per_iter": _get(dist_tbl, "poses_per_iter", int, 4, "distill", errors),
        "label": _get(dist_tbl, "label", int, None, "distill", errors),
        "noise_mode": _get(dist_tbl, "noise_mode", str, "fixed", "distill", errors),
        "t2_mode": _get(dist_tbl, "t2_mode", str, "annealed", "distill", errors),
        "init_scale": _get(dist_tbl, "init_scale", float, 0.1, "distill", errors),
    }

    out_tbl = raw.get("output", {})
    _check_keys(out_tbl, "output", text, errors)
    out_dir = _get(out_tbl, "dir", str, "out", "output", errors)

    if schedule is not None and sched is not None:
        try:
            DistillRunConfig(schedule=schedule, cfg=cfg_pair, seed=seed, **distill_kw)
        except ConfigError as exc:
            errors.append(f"[distill] {exc}")

    if errors:
        raise ConfigError("\n".join(errors))
    return RunConfig(seed=seed, out_dir=out_dir, sched=sched, schedule=schedule,
                     cfg_pair=cfg_pair, data=data, task=task,
                     distill_kw=distill_kw, path=path, sha256=sha256_file(path))


def _trajectory_records(kept: dict, sched: NoiseSchedule) -> list[dict]:
    records = []
    times = kept["times"]
    n_kept = kept["states"].shape[1]
    for run in range(n_kept):
        for i, t in enumerate(times):
            records.append({
                "run": run,
                "iter": i,
                "t": float(t),
                "sigma": float(sigma(sched, float(t))),
                "state": kept["states"][i, run],
                "denoised": kept["denoised"][i, run],
            })
    return records


def _cmd_sample(args, rc: RunConfig) -> list[str]:
    gmm = rc.data
    denoiser = as_denoiser(gmm, rc.sched)
    keep = min(args.traj, args.runs)
    if args.mode == "sde":
        rng = named_stream(rc.seed, "ancestral")
        endpoints, kept = ancestral_batch(denoiser, gmm.dim, args.runs, args.steps,
                                          rc.sched, rng, keep_first=keep)
    else:
        xt_rng = named_stream(rc.seed, "x_T")
        x0 = sample_data(gmm, xt_rng, n=args.runs)
        sig_T = float(sigma(rc.sched, rc.sched.horizon))
        x_T = x0 + sig_T * xt_rng.standard_normal((args.runs, gmm.dim))
        endpoints, kept = ode_batch(denoiser, x_T, args.steps, rc.sched,
                                    keep_first=keep)
    write_jsonl(os.path.join(rc.out_dir, "trajectories.jsonl"),
                _trajectory_records(kept, rc.sched) if kept else [])
    header = ["run"] + [f"x{i}" for i in range(gmm.dim)]
    rows = [[k, *endpoints[k]] for k in range(args.runs)]
    write_csv(os.path.join(rc.out_dir, "endpoints.csv"), header, rows)
    return ["trajectories.jsonl", "endpoints.csv"]


def _cmd_distill(args, rc: RunConfig) -> list[str]:
    config = rc.distill_config(loss=args.loss)
    oracle = TaskOracle(rc.task, rc.sched)
    log = run_distill(config, rc.task, oracle, sched=rc.sched)
    write_jsonl(os.path.join(rc.out_dir, "runlog.jsonl"), log.records)
    # wall_time stays off disk: outputs must be functions of the config.
    write_json(os.path.join(rc.out_dir, "summary.json"), {
        "schema_version": 1,
        "final_theta": log.final_theta,
        "mode_index": log.final_mode_index,
        "final_distance": log.final_distance,
    })
    return ["runlog.jsonl", "summary.json"]


def _cmd_train_denoiser(args, rc: RunConfig) -> list[str]:
    gmm = rc.data
    widths = tuple(int(w) for w in args.widths.split(","))
    net = init_mlp(gmm.dim, hidden=widths, rng=named_stream(rc.seed, "mlp_init"))
    trained, losses = train(net, gmm, args.steps, args.batch, args.lr,
                            named_stream(rc.seed, "train"), sched=rc.sched)
    save_denoiser(trained, os.path.join(rc.out_dir, "denoiser.json"))
    write_csv(os.path.join(rc.out_dir, "losses.csv"), ["step", "loss"],
              [[i, float(v)] for i, v in enumerate(losses)])
    return ["denoiser.json", "losses.csv"]


def _cmd_equivalence(args, rc: RunConfig) -> list[str]:
    gmm = rc.data
    denoiser = as_denoiser(gmm, rc.sched)
    rows = []
    for k in range(args.seeds):
        dev = sds_sde_equivalence(denoiser, gmm.dim, args.steps, rc.seed + k,
                                  rc.sched)
        rows.append([rc.seed + k, dev])
    write_csv(os.path.join(rc.out_dir, "equivalence.csv"),
              ["seed", "max_deviation"], rows)
    return ["equivalence.csv"]


def _cmd_theorem_scan(args, rc: RunConfig) -> list[str]:
    deltas = [float(v) for v in args.deltas.split(",")]
    oracle = TaskOracle(rc.task, rc.sched)
    result = theorem1_scan(rc.distill_config(), rc.task, oracle, deltas,
                           args.seeds, sched=rc.sched)
    write_csv(os.path.join(rc.out_dir, "scan_runs.csv"),
              ["delta", "seed", "final_error"],
              [[r["delta"], r["seed"], r["final_error"]] for r in result.runs])
    write_csv(os.path.join(rc.out_dir, "scan_summary.csv"),
              ["delta", "median_error", "floored_error", "floor", "slope"],
              [[d, e, f, result.floor, result.slope]
               for d, e, f in zip(result.deltas, result.errors,
                                  result.floored_errors)])
    return ["scan_runs.csv", "scan_summary.csv"]


def _cmd_variance(args, rc: RunConfig) -> list[str]:
    config = rc.distill_config()
    snapshot = args.snapshot_iter if args.snapshot_iter is not None \
        else config.schedule.iters // 2
    oracle = TaskOracle(rc.task, rc.sched)
    log = run_distill(config, rc.task, oracle, sched=rc.sched,
                      snapshot_iter=snapshot)
    theta = log.snapshot_theta if log.snapshot_theta is not None else log.final_theta
    sds_std, cds_std, ratio = guidance_variance_compare(
        theta, rc.task, oracle, config, args.samples,
        sched=rc.sched, snapshot_iter=snapshot)
    write_csv(os.path.join(rc.out_dir, "variance.csv"),
              ["snapshot_iter", "samples", "sds_std", "cds_std", "ratio"],
              [[snapshot, args.samples, sds_std, cds_std, ratio]])
    return ["variance.csv"]


def _cmd_ablate(args, rc: RunConfig) -> list[str]:
    oracle = TaskOracle(rc.task, rc.sched)
    result = ablation_suite(rc.task, oracle, rc.distill_config(),
                            n_seeds=args.seeds, sched=rc.sched)
    write_csv(os.path.join(rc.out_dir, "ablation.csv"),
              ["arm", "seed", "final_error"],
              [[r["arm"], r["seed"], r["final_error"]] for r in result.rows])
    write_csv(os.path.join(rc.out_dir, "ablation_summary.csv"),
              ["arm", "median_error"],
              [[arm, result.medians[arm]] for arm in result.arms])
    return ["ablation.csv", "ablation_summary.csv"]


_HANDLERS = {
    "sample": _cmd_sample,
    "distill": _cmd_distill,
    "train-denoiser": _cmd_train_denoiser,
    "equivalence-check": _cmd_equivalence,
    "theorem-scan": _cmd_theorem_scan,
    "variance-compare": _cmd_variance,
    "ablate": _cmd_ablate,
}


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as config errors."""

    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdslab", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--out", default=None, help="override [output] dir")

    p = sub.add_parser("sample", help="generate with the SDE or ODE sampler")
    common(p)
    p.add_argument("--mode", choices=("sde", "ode"), default="sde")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--traj", type=int, default=8,
                   help="full trajectories to keep in trajectories.jsonl")

    p = sub.add_parser("distill", help="run one distillation loop")
    common(p)
    p.add_argument("--loss", choices=("sds", "cds"), default=None)

    p = sub.add_parser("train-denoiser", help="train the MLP denoiser")
    common(p)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--widths", default="64,64", help="hidden widths, comma-separated")

    p = sub.add_parser("equivalence-check",
                       help="ancestral vs idealized-distillation deviation")
    common(p)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--seeds", type=int, default=5)

    p = sub.add_parser("theorem-scan", help="error vs step-gap scan")
    common(p)
    p.add_argument("--deltas", default="0.05,0.1,0.2,0.4",
                   help="gap fractions, comma-separated")
    p.add_argument("--seeds", type=int, default=5)

    p = sub.add_parser("variance-compare", help="target-spread comparison")
    common(p)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--snapshot-iter", type=int, default=None)

    p = sub.add_parser("ablate", help="schedule/noise ablation arms")
    common(p)
    p.add_argument("--seeds", type=int, default=5)
    return parser


def _exit_code_for(exc: BaseException) -> int:
    """Map an error to the documented exit code."""
    if isinstance(exc, ConfigError):
        return 1
    if isinstance(exc, NumericalError):
        return 2
    if isinstance(exc, (DivergenceError, ScanError)):
        return 3
    if isinstance(exc, OSError):
        return 4
    raise exc


def dispatch(argv) -> int:
    """Parse arguments, run one subcommand, and write the manifest.

    Args:
        argv: Arguments after the program name.

    Returns:
        Exit status per the documented code table.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError(f"a subcommand is required\n{parser.format_usage()}")
        rc = parse_config(args.config)
        if args.out is not None:
            rc.out_dir = args.out
        if args.command in _NEEDS_DATA and rc.data is None:
            raise ConfigError(f"{args.command} needs a [data] section")
        if args.command in _NEEDS_SCENE and rc.task is None:
            raise ConfigError(f"{args.command} needs a [scene] section")
        os.makedirs(rc.out_dir, exist_ok=True)
        files = _HANDLERS[args.command](args, rc)
        write_manifest(rc.out_dir, args.command, rc.seed, rc.sha256, files)
        return 0
    except Exception as exc:  # mapped to documented exit codes
        code = _exit_code_for(exc)
        message = str(exc).replace("\n", "; ")
        print(f"error[{code}]: {message}", file=sys.stderr)
        return code


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


__all__ = ["RunConfig", "parse_config", "build_parser", "dispatch", "main"]


if __name__ == "__main__":
    main()
