"""Release checklist: one test per quantitative acceptance check.

Run `pytest tests/test_acceptance.py -v` for one pass/fail line per
check. Thresholds are asserted verbatim; no check is weakened to pass.
"""

import json
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cdslab import (
    Component,
    FixedNoise,
    GaussianMixture,
    NoiseSchedule,
    TaskOracle,
    as_denoiser,
    cds_step,
    default_recovery_config,
    default_recovery_task,
    gaussian_ode_oracle,
    lambda_of,
    make_task,
    ode_sample,
    render,
    render_vjp,
    run_distill,
    sds_sde_equivalence,
    single_gaussian,
)
from cdslab.cli import dispatch
from cdslab.harness import ablation_suite, guidance_variance_compare, theorem1_scan
from cdslab.mlp import MlpDenoiser, dsm_loss_and_grad, init_mlp
from cdslab.rng import named_stream
from cdslab.runio import sha256_file
from cdslab.samplers import ancestral_batch
from cdslab.scene import mode_distance
from cdslab.schedule import sigma

SCHED = NoiseSchedule()
FIXTURES = Path(__file__).parent / "fixtures"

GAUSS_CONFIG = """\
seed = 5
[schedule]
iters = 30
[data]
components = [
  { weight = 1.0, mean = [0.0], scale = 1.0, label = 0 },
]
"""

SCENE_CONFIG = """\
seed = 2
[schedule]
iters = 40
[scene]
views = 2
d_img = 2
d_scene = 3
scale = 0.1
modes = [[2.0, 0.0, 0.0], [-2.0, 1.0, 0.0]]
[distill]
poses_per_iter = 2
lr = 0.05
"""


def two_mode() -> GaussianMixture:
    return GaussianMixture((
        Component(weight=0.3, mean=np.array([-5.0]), scale=0.5, label=0),
        Component(weight=0.7, mean=np.array([5.0]), scale=0.5, label=1),
    ))


@pytest.fixture(scope="module")
def recovery_runs():
    """Five full consistency-distillation runs on the reference task."""
    task = default_recovery_task(seed=0)
    oracle = TaskOracle(task, SCHED)
    logs = [run_distill(default_recovery_config(seed=k), task, oracle)
            for k in range(5)]
    return task, logs


def test_criterion_01_ode_endpoints_match_oracle_at_first_order():
    """512-step endpoints within 1e-2 relative of the closed form, and
    halving the step count grows the worst error by at least 1.6x."""
    dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
    rng = named_stream(0, "x_T")
    sig_T = float(sigma(SCHED, SCHED.horizon))
    starts = np.sqrt(1.0 + sig_T**2) * rng.standard_normal((20, 1))
    worst = {}
    for steps in (512, 256):
        errs = []
        for x_T in starts:
            end = ode_sample(dn, x_T, steps, SCHED).states[-1]
            exact = gaussian_ode_oracle(x_T, SCHED.horizon, np.zeros(1), 1.0,
                                        SCHED)
            errs.append(np.linalg.norm(end - exact)
                        / max(np.linalg.norm(exact), 1e-12))
        worst[steps] = max(errs)
    assert worst[512] <= 1e-2
    assert worst[256] >= 1.6 * worst[512]


def test_criterion_02_sde_marginals_match_the_mixture():
    """10^4 ancestral runs at 64 steps: basin frequencies within 0.03 of
    the weights and per-basin endpoint std within 0.05 of the scale."""
    gmm = two_mode()
    dn = as_denoiser(gmm, SCHED)
    rng = named_stream(0, "ancestral")
    endpoints, _ = ancestral_batch(dn, 1, 10_000, 64, SCHED, rng)
    left = endpoints[:, 0] < 0.0
    freq_left = float(np.mean(left))
    std_left = float(np.std(endpoints[left, 0]))
    std_right = float(np.std(endpoints[~left, 0]))
    assert abs(freq_left - 0.3) <= 0.03
    assert abs(std_left - 0.5) <= 0.05
    assert abs(std_right - 0.5) <= 0.05


def test_criterion_03_baseline_gradient_flow_reproduces_the_sampler():
    """Idealized baseline-distillation updates retrace ancestral sampling
    to 1e-12 over 64 steps for 5 seeds."""
    dn = as_denoiser(two_mode(), SCHED)
    for seed in range(5):
        assert sds_sde_equivalence(dn, 1, 64, seed) <= 1e-12


def test_criterion_04_consistency_step_hand_trace():
    """Scene value 2, noise levels 1 and 0.5, zero perturbation, standard
    Gaussian data: the step loss equals 0.04 to 1e-12 (unit weighting)."""
    task = make_task(seed=0, n_views=1, d_img=1,
                     modes=np.array([[0.0]]), scale=1.0)
    dn = as_denoiser(task.view_data[0], SCHED)
    loss, _, _ = cds_step(np.array([2.0]), task.views[0], dn,
                          FixedNoise(np.zeros(1)), 1.0, 0.5, SCHED,
                          lam_mode="unit")
    assert abs(loss - 0.04) <= 1e-12


def test_criterion_05_multiview_recovery_reaches_a_mode(recovery_runs):
    """Median final mode distance over 5 seeds at most 0.1 x scale, with
    one consistent nearest mode across every view."""
    task, logs = recovery_runs
    median = float(np.median([log.final_distance for log in logs]))
    assert median <= 0.1 * task.scale
    for log in logs:
        per_view_nearest = []
        for view in task.views:
            image = render(log.final_theta, view)
            dists = [np.linalg.norm(image - render(mu, view))
                     for mu in task.modes]
            per_view_nearest.append(int(np.argmin(dists)))
        assert len(set(per_view_nearest)) == 1
        assert per_view_nearest[0] == log.final_mode_index


def test_criterion_06_error_shrinks_with_the_step_gap():
    """Gap fractions {0.05, 0.1, 0.2, 0.4}, 5 seeds each: median errors
    monotone nonincreasing within one IQR, and the smallest gap's error
    at most half the largest gap's."""
    task = default_recovery_task(seed=0)
    oracle = TaskOracle(task, SCHED)
    base = default_recovery_config(seed=0)
    # The largest gap must fit under the horizon: t_max + 0.4 <= 1.
    base = replace(base, schedule=replace(base.schedule, t_max=0.6))
    result = theorem1_scan(base, task, oracle, [0.05, 0.1, 0.2, 0.4], 5)
    by_delta = {d: np.array([r["final_error"] for r in result.runs
                             if r["delta"] == d])
                for d in result.deltas}
    medians = dict(zip(result.deltas, result.errors))
    for small, large in zip(result.deltas, result.deltas[1:]):
        iqr = float(np.percentile(by_delta[large], 75)
                    - np.percentile(by_delta[large], 25))
        assert medians[small] <= medians[large] + iqr
    assert medians[0.05] <= 0.5 * medians[0.4]


def test_criterion_07_consistency_targets_spread_less():
    """At a mid-run snapshot with 256 samples, the consistency target's
    std is under half the baseline target's std."""
    task = default_recovery_task(seed=0)
    oracle = TaskOracle(task, SCHED)
    config = default_recovery_config(seed=0)
    mid = config.schedule.iters // 2
    log = run_distill(config, task, oracle, snapshot_iter=mid)
    sds_std, cds_std, ratio = guidance_variance_compare(
        log.snapshot_theta, task, oracle, config, 256, snapshot_iter=mid
    )
    assert sds_std > 0.0
    assert ratio < 0.5


def test_criterion_08_fixed_noise_beats_resampled_noise():
    """Median final error of the full method (fixed noise) at most the
    resampled-noise arm's, over 5 shared seeds."""
    task = default_recovery_task(seed=0)
    oracle = TaskOracle(task, SCHED)
    result = ablation_suite(task, oracle, default_recovery_config(seed=0),
                            n_seeds=5)
    assert result.medians["full"] <= result.medians["resampled-noise"]


def test_criterion_09_gradient_suites():
    """Adjoint identity to 1e-10; consistency-step gradient within 1e-6
    of finite differences over 20 random setups; trainer gradient within
    1e-4 of finite differences."""
    rng = named_stream(9, "acceptance-gradients")

    task = make_task(seed=3, n_views=3, d_img=5,
                     modes=rng.standard_normal((2, 8)) * 3.0, scale=0.5)
    for _ in range(50):
        view = task.views[int(rng.integers(0, 3))]
        u = rng.standard_normal(8)
        v = rng.standard_normal(5)
        lhs = float(render(u, view) @ v)
        rhs = float(u @ render_vjp(view, v))
        assert abs(lhs - rhs) <= 1e-10

    for k in range(20):
        d_scene = int(rng.integers(3, 7))
        d_img = int(rng.integers(2, min(d_scene, 4)))
        modes = rng.standard_normal((int(rng.integers(1, 4)), d_scene)) * 3.0
        sub = make_task(seed=k, n_views=2, d_img=d_img, modes=modes,
                        scale=float(rng.uniform(0.2, 1.0)))
        view = sub.views[int(rng.integers(0, 2))]
        dn = as_denoiser(sub.view_data[view.pose_id], SCHED)
        theta = rng.standard_normal(d_scene) * 2.0
        t2 = float(rng.uniform(0.2, 5.0))
        t1 = t2 + float(rng.uniform(0.3, 2.0))
        lam_mode = "unit" if k % 2 else "inv-sigma-sq"
        loss, grad, diag = cds_step(theta, view, dn,
                                    FixedNoise(rng.standard_normal(d_img)),
                                    t1, t2, SCHED, lam_mode=lam_mode)
        lam = lambda_of(lam_mode, t2, SCHED)
        held = (diag["x_hat_0"] - view.matrix @ theta) - diag["teacher"]

        def frozen_loss(th):
            resid = view.matrix @ th + held
            return lam * float(resid @ resid)

        h = 1e-6
        fd = np.empty(d_scene)
        for c in range(d_scene):
            e = np.zeros(d_scene)
            e[c] = h
            fd[c] = (frozen_loss(theta + e) - frozen_loss(theta - e)) / (2 * h)
        assert np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-12) \
            <= 1e-6

    net = init_mlp(1, hidden=(5,), rng=rng)
    x0 = rng.standard_normal((3, 1))
    t = rng.uniform(0.5, 5.0, size=3)
    eps = rng.standard_normal((3, 1))
    _, grad = dsm_loss_and_grad(net, x0, t, eps, SCHED)
    h = 1e-6
    fd = np.empty_like(grad)
    for c in range(net.params.size):
        plus = net.params.copy()
        plus[c] += h
        minus = net.params.copy()
        minus[c] -= h
        lp, _ = dsm_loss_and_grad(MlpDenoiser(widths=net.widths, params=plus),
                                  x0, t, eps, SCHED)
        lm, _ = dsm_loss_and_grad(MlpDenoiser(widths=net.widths, params=minus),
                                  x0, t, eps, SCHED)
        fd[c] = (lp - lm) / (2.0 * h)
    assert np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-12) <= 1e-4


def test_criterion_10_every_subcommand_is_byte_deterministic(tmp_path):
    """Running any subcommand twice with one config produces
    byte-identical CSV/JSONL outputs."""
    cases = [
        ("sample-sde", GAUSS_CONFIG,
         ["sample", "--mode", "sde", "--steps", "16", "--runs", "6",
          "--traj", "2"]),
        ("sample-ode", GAUSS_CONFIG,
         ["sample", "--mode", "ode", "--steps", "16", "--runs", "6",
          "--traj", "2"]),
        ("distill", SCENE_CONFIG, ["distill"]),
        ("train-denoiser", GAUSS_CONFIG,
         ["train-denoiser", "--steps", "25", "--batch", "16",
          "--widths", "8,8"]),
        ("equivalence-check", GAUSS_CONFIG,
         ["equivalence-check", "--steps", "16", "--seeds", "2"]),
        ("theorem-scan", SCENE_CONFIG,
         ["theorem-scan", "--deltas", "0.05,0.1,0.2", "--seeds", "1"]),
        ("variance-compare", SCENE_CONFIG,
         ["variance-compare", "--samples", "16", "--snapshot-iter", "20"]),
        ("ablate", SCENE_CONFIG, ["ablate", "--seeds", "1"]),
    ]
    for name, body, argv in cases:
        config = tmp_path / f"{name}.toml"
        config.write_text(body, encoding="utf-8")
        digests = []
        for attempt in ("a", "b"):
            out_dir = tmp_path / f"{name}-{attempt}"
            code = dispatch(argv + ["--config", str(config),
                                    "--out", str(out_dir)])
            assert code == 0, f"{name} attempt {attempt} exited {code}"
            manifest = json.loads((out_dir / "manifest.json").read_text())
            produced = [e["name"] for e in manifest["files"]]
            digests.append({n: sha256_file(str(out_dir / n))
                            for n in produced})
        assert digests[0] == digests[1], f"{name} outputs differ across runs"


def test_criterion_11_figures_render_from_golden_fixtures(tmp_path):
    """All four figure kinds render nonempty images with exit 0, and the
    variance figure's annotated ratio equals the fixture value."""
    golden = FIXTURES / "golden_outputs"
    kinds = [
        ("trajectories", "trajectories.jsonl"),
        ("theorem-scan", "scan_summary.csv"),
        ("variance", "variance.csv"),
        ("ablation", "ablation_summary.csv"),
    ]
    for kind, name in kinds:
        out = tmp_path / f"{kind}.png"
        proc = subprocess.run(
            [sys.executable, "-m", "cdslab_plots", "--kind", kind,
             "--in", str(golden / name), "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, f"{kind}: {proc.stderr.strip()}"
        assert out.exists() and out.stat().st_size > 0
        if kind == "variance":
            annotations = json.loads(proc.stdout.strip().splitlines()[-1])
            header, row = (golden / name).read_text().splitlines()[:2]
            ratio = float(row.split(",")[header.split(",").index("ratio")])
            assert annotations["ratio"] == ratio
