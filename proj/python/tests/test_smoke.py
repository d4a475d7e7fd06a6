import json
import os
import subprocess

import numpy as np
import pytest

import factormap as fm

TINY = [
    "field.res=8", "field.density_channels=2", "field.appearance_channels=2", "field.hidden=8",
    "field.density_bias=-2", "schedule.init_frames=3", "schedule.sample_counts=[8,8,8,8]",
    "schedule.init_iters=8", "schedule.init_rays_per_iter=32", "schedule.active_window=4",
    "schedule.local_frames=2", "schedule.frames_per_update=2", "schedule.iters_per_update=2",
    "schedule.rays_per_iter=32", "schedule.update_coarse=8", "schedule.update_fine=8",
    "schedule.keyframe_stride=2", "synthetic.frame_count=7",
    'synthetic.intrinsics={"fx":10.5,"fy":10.5,"cx":6,"cy":6,"width":12,"height":12}',
    "output.view_stride=2", "output.pixel_stride=3", "output.eval_coarse=8", "output.eval_fine=8",
]


def tiny_args(out, run_id):
    args = ["run", "--out", str(out), "--seed", "3"]
    for s in TINY + [f"output.run_id={run_id}"]:
        args += ["--set", s]
    return args


def test_default_config_round_trips_through_cli(tmp_path):
    cfg = json.loads(fm.default_config())
    assert cfg["field"]["res"] == 128
    path = tmp_path / "cfg.json"
    path.write_text(fm.default_config())
    code, out, err = fm.main(["run", "--config", str(path), "--set", "field.res=1"])
    assert code == 2
    assert "error:" in err


def test_counts_at_default_shape():
    assert fm.param_count() == 1_985_235
    assert fm.param_count(with_decoder=False) == 1_981_440
    assert fm.flops_per_point() == 9_168
    with pytest.raises(fm.Error):
        fm.param_count(res=1)


def test_metrics_against_numpy():
    rng = np.random.default_rng(0)
    gt = rng.uniform(-1, 1, size=(300, 3))
    pred = gt[:200] + rng.normal(0, 0.01, size=(200, 3))
    d_pred = np.min(np.linalg.norm(pred[:, None] - gt[None], axis=2), axis=1)
    d_gt = np.min(np.linalg.norm(gt[:, None] - pred[None], axis=2), axis=1)
    assert fm.accuracy_cm(pred, gt) == pytest.approx(100 * d_pred.mean(), rel=1e-9)
    assert fm.completion_cm(pred, gt) == pytest.approx(100 * d_gt.mean(), rel=1e-9)
    assert fm.completion_ratio(pred, gt, 0.05) == pytest.approx(100 * np.mean(d_gt < 0.05), rel=1e-9)
    rep = fm.evaluate(pred, gt, 0.05)
    assert rep["completion_ratio_pct"] == pytest.approx(fm.completion_ratio(pred, gt, 0.05))
    assert fm.psnr_from_mse(0.01) == pytest.approx(20.0)
    with pytest.raises(fm.InvalidInput):
        fm.accuracy_cm(np.zeros((3, 2)), gt)


def test_tiny_run_outputs(tmp_path):
    out = fm.run(*tiny_args(tmp_path, "a"))
    run = tmp_path / "a"
    for name in ["config.json", "metrics.csv", "timing.csv", "uncertainty.csv", "map.ckpt", "eval.csv"]:
        assert (run / name).exists(), name
    assert out is not None

    m = fm.Map.load(run / "map.ckpt")
    assert m.frames_processed == 7
    assert m.res == 8
    assert m.param_count == fm.param_count(8, 2, 2, 8)
    pts = np.array([[0.0, 0.0, 0.0], [0.5, -0.5, 0.2]])
    occ = m.query_occupancy(pts)
    assert occ.shape == (2,)
    assert np.all((occ > 0) & (occ < 1))
    sig = m.query_density(pts)
    assert np.allclose(occ, 1 / (1 + np.exp(-sig)))

    csv = (run / "eval.csv").read_text().splitlines()
    assert csv[0].startswith("accuracy_cm,completion_cm,completion_ratio_pct")

    with pytest.raises(fm.DataError):
        fm.Map.load(tmp_path / "missing.ckpt")


def test_cloud_export_reads_back(tmp_path):
    args = tiny_args(tmp_path, "b") + ["--snapshot-every", "4"]
    fm.run(*args)
    xyz, rgb = fm.read_ply(tmp_path / "b" / "snap_000007" / "cloud.ply")
    assert xyz.shape[1] == 3 and rgb.shape == xyz.shape
    assert rgb.dtype == np.uint8
    if len(xyz):
        assert fm.completion_ratio(xyz, xyz, 1e-6) == pytest.approx(100.0)


@pytest.mark.skipif("FACTORMAP_CLI" not in os.environ, reason="CLI binary path not provided")
def test_cli_binary_matches_in_process(tmp_path):
    exe = os.environ["FACTORMAP_CLI"]
    proc = subprocess.run([exe, *tiny_args(tmp_path, "c")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    fm.run(*tiny_args(tmp_path, "d"))
    assert (tmp_path / "c" / "metrics.csv").read_text() == (tmp_path / "d" / "metrics.csv").read_text()
    bad = subprocess.run([exe, "frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2
