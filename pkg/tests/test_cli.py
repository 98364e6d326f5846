import csv
import json
import math

import numpy as np
import pytest

from aperturesim.bank_io import load_bank, save_bank
from aperturesim.cli import main
from aperturesim.dataset import load_rgb, save_depth, save_rgb
from aperturesim.psf import CHANNELS, DepthPlanSpec, ImpulseGridSpec, synthesize_impulse_grid
from conftest import make_bank, random_kernel
from test_replicate import build_fixture


def run(*argv):
    return main([str(a) for a in argv])


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("geometry", "--bogus")
        assert exc.value.code == 2

    def test_missing_required(self):
        with pytest.raises(SystemExit) as exc:
            run("psf", "extract", "--out", "x.psfb")
        assert exc.value.code == 2

    def test_even_block_size_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("psf", "synth", "--block-size", "50", "--out-dir", tmp_path)
        assert exc.value.code == 2


class TestPsfSynth:
    def test_three_channel_grids(self, tmp_path, capsys):
        assert run("psf", "synth", "--height", "153", "--width", "204",
                   "--block-size", "51", "--out-dir", tmp_path) == 0
        for ch in CHANNELS:
            grid = load_rgb(tmp_path / f"impulse_{ch}.png")
            assert grid.shape == (153, 204, 3)
            assert (grid[:, :, CHANNELS.index(ch)] == 255).sum() == 12

    def test_channel_subset(self, tmp_path):
        assert run("psf", "synth", "--height", "51", "--width", "51",
                   "--channels", "G", "--out-dir", tmp_path) == 0
        assert (tmp_path / "impulse_G.png").exists()
        assert not (tmp_path / "impulse_R.png").exists()

    def test_default_spec_is_full_resolution(self, tmp_path):
        assert run("psf", "synth", "--channels", "R", "--out-dir", tmp_path) == 0
        grid = load_rgb(tmp_path / "impulse_R.png")
        assert grid.shape == (1536, 2048, 3)
        assert (grid[:, :, 0] == 255).sum() == 1200  # 30 x 40 blocks


class TestPsfExtract:
    def write_frames(self, tmp_path, plan):
        for plane in range(len(plan)):
            for ch in CHANNELS:
                spec = ImpulseGridSpec(height=153, width=204, block_size=51,
                                       channel=ch)
                frame_dir = tmp_path / plan.label(plane)
                frame_dir.mkdir(parents=True, exist_ok=True)
                save_rgb(frame_dir / f"{ch}.png", synthesize_impulse_grid(spec))

    def test_extracts_delta_bank(self, tmp_path, capsys):
        plan = DepthPlanSpec((10.0, 15.0))
        self.write_frames(tmp_path / "frames", plan)
        out = tmp_path / "bank.psfb"
        assert run("psf", "extract", "--frames-dir", tmp_path / "frames",
                   "--plan", "10:15:5", "--block-size", "51",
                   "--aperture-name", "plus", "--out", out) == 0
        bank = load_bank(out)
        assert bank.aperture_name == "plus"
        assert all(k.support == (1, 1) for k in bank.kernels.values())
        captured = capsys.readouterr()
        assert "plane 10 m" in captured.out

    def test_missing_frame_is_runtime_error(self, tmp_path, capsys):
        plan = DepthPlanSpec((10.0, 15.0))
        self.write_frames(tmp_path / "frames", plan)
        (tmp_path / "frames" / "15" / "G.png").unlink()
        assert run("psf", "extract", "--frames-dir", tmp_path / "frames",
                   "--plan", "10:15:5", "--out", tmp_path / "bank.psfb") == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "15" in err and "G" in err


@pytest.fixture
def small_bank_file(rng, tmp_path):
    bank = make_bank(96, 128, 25, DepthPlanSpec((10.0, 15.0, 20.0)),
                     lambda key: random_kernel(rng), aperture_name="plus")
    path = tmp_path / "plus.psfb"
    save_bank(bank, path)
    return path


class TestRenderCommand:
    def test_render_is_deterministic(self, rng, tmp_path, small_bank_file):
        rgb = rng.integers(0, 256, (96, 128, 3)).astype(np.uint8)
        depth = rng.integers(900, 2100, (96, 128)).astype(np.uint16)
        save_rgb(tmp_path / "in.png", rgb)
        save_depth(tmp_path / "in_depth.png", depth)
        model = {"valid_gain_range_db": [0, 48],
                 "channels": {c: {"amplitude": 0.6, "rate": 0.06} for c in CHANNELS}}
        (tmp_path / "noise.json").write_text(json.dumps(model))

        for name in ("a.png", "b.png"):
            assert run("render", "--rgb", tmp_path / "in.png",
                       "--depth", tmp_path / "in_depth.png",
                       "--bank", small_bank_file, "--gain-db", "30",
                       "--noise-model", tmp_path / "noise.json",
                       "--seed", "5", "--image-id", "img1",
                       "--out", tmp_path / name) == 0
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


class TestReplicateCommand:
    def test_replicate_via_cli(self, rng, tmp_path, small_bank_file):
        manifest = build_fixture(tmp_path, rng, n_records=1)
        report_path = tmp_path / "report.json"
        assert run("replicate", "--manifest", manifest,
                   "--bank", f"plus={small_bank_file}",
                   "--gains", "0,30", "--out-root", tmp_path / "out",
                   "--report", report_path) == 0
        report = json.loads(report_path.read_text())
        assert report["total_written"] == 2
        assert (tmp_path / "out" / "plus" / "0dB" / "scene_000.png").exists()
        assert (tmp_path / "out" / "plus" / "30dB" / "scene_000.png").exists()

    def test_bad_bank_argument(self, tmp_path, capsys):
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({"records": []}))
        assert run("replicate", "--manifest", manifest, "--bank", "plus",
                   "--out-root", tmp_path / "out") == 1
        assert "NAME=PATH" in capsys.readouterr().err


class TestNoiseFit:
    def write_csv(self, path, jitter=0.0, rows=9):
        rng = np.random.default_rng(1)
        lines = ["gain_db,std_r,std_g,std_b"]
        for g in np.linspace(0, 48, rows):
            vals = []
            for a, b in ((0.5, 0.08), (0.45, 0.082), (0.55, 0.078)):
                std = a * math.exp(b * g) * (1 + rng.uniform(-jitter, jitter))
                vals.append(f"{std:.12g}")
            lines.append(f"{g:.6g}," + ",".join(vals))
        path.write_text("\n".join(lines) + "\n")

    def test_exact_fit(self, tmp_path):
        self.write_csv(tmp_path / "m.csv")
        out = tmp_path / "model.json"
        assert run("noise", "fit", "--measurements", tmp_path / "m.csv",
                   "--out", out) == 0
        model = json.loads(out.read_text())
        assert model["channels"]["R"]["amplitude"] == pytest.approx(0.5, abs=1e-9)
        assert model["channels"]["G"]["rate"] == pytest.approx(0.082, abs=1e-9)
        assert model["valid_gain_range_db"] == [0.0, 48.0]

    def test_jittered_fit_within_2_percent(self, tmp_path):
        self.write_csv(tmp_path / "m.csv", jitter=0.01)
        out = tmp_path / "model.json"
        assert run("noise", "fit", "--measurements", tmp_path / "m.csv",
                   "--out", out) == 0
        model = json.loads(out.read_text())
        assert model["channels"]["R"]["amplitude"] == pytest.approx(0.5, rel=0.02)
        assert model["channels"]["B"]["rate"] == pytest.approx(0.078, rel=0.02)

    def test_single_row_fails(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("gain_db,std_r,std_g,std_b\n0,0.5,0.5,0.5\n")
        assert run("noise", "fit", "--measurements", tmp_path / "m.csv",
                   "--out", tmp_path / "model.json") == 1
        assert "error:" in capsys.readouterr().err

    def test_sample_measurements_match_default_profile(self, tmp_path):
        from importlib import resources
        from aperturesim.config import load_profile
        csv_text = resources.files("aperturesim.data").joinpath(
            "sample_noise_measurements.csv").read_text()
        src = tmp_path / "sample.csv"
        src.write_text(csv_text)
        out = tmp_path / "model.json"
        assert run("noise", "fit", "--measurements", src, "--out", out) == 0
        fitted = json.loads(out.read_text())
        profile = load_profile()
        for i, ch in enumerate(CHANNELS):
            assert fitted["channels"][ch]["amplitude"] == pytest.approx(
                profile.noise_model.amplitude[i], rel=1e-6)
            assert fitted["channels"][ch]["rate"] == pytest.approx(
                profile.noise_model.rate[i], rel=1e-6)


def make_coco_fixture(tmp_path, rng, n_groups=4, n_folds=5, shift=0.0):
    """Ground truth plus per-(group, fold) detection files with tunable quality."""
    images = [{"id": i} for i in range(10)]
    annotations = []
    for img in images:
        for k in range(3):
            annotations.append({"image_id": img["id"], "category_id": k,
                                "bbox": [10.0 + 30 * k, 10.0, 20.0, 20.0]})
    gt_path = tmp_path / "gt.json"
    gt_path.write_text(json.dumps({"images": images, "annotations": annotations}))

    groups = {}
    for g in range(n_groups):
        fold_paths = []
        for fold in range(n_folds):
            dets = []
            for img in images:
                for k in range(3):
                    # jitter grows with group index when shift > 0
                    dx = float(rng.normal(0, 0.5 + shift * g))
                    dets.append({"image_id": img["id"], "category_id": k,
                                 "bbox": [10.0 + 30 * k + dx, 10.0, 20.0, 20.0],
                                 "score": float(rng.uniform(0.6, 1.0))})
            path = tmp_path / f"det_g{g}_f{fold}.json"
            path.write_text(json.dumps(dets))
            fold_paths.append(str(path))
        groups[f"group{g}"] = fold_paths
    return gt_path, groups


class TestStatsCommand:
    def test_four_groups_give_six_pair_rows(self, rng, tmp_path):
        gt_path, groups = make_coco_fixture(tmp_path, rng)
        args = ["stats", "--ground-truth", gt_path,
                "--confidence-threshold", "0.5", "--out-dir", tmp_path / "out"]
        for label, folds in groups.items():
            args += ["--group", f"{label}={','.join(folds)}"]
        assert run(*args) == 0

        with open(tmp_path / "out" / "welch_tests.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert [tuple(sorted((r["group_a"], r["group_b"]))) for r in rows] == \
            sorted((a, b) for i, a in enumerate(sorted(groups))
                   for b in sorted(groups)[i + 1:])

        with open(tmp_path / "out" / "fold_map.csv", newline="") as fh:
            fold_rows = list(csv.DictReader(fh))
        assert len(fold_rows) == 20  # 4 groups x 5 folds

        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert set(summary["groups"]) == set(groups)
        for entry in summary["groups"].values():
            assert 0.0 <= entry["weighted_mean_map"] <= 1.0

    def test_identical_groups_never_reject(self, rng, tmp_path):
        gt_path, groups = make_coco_fixture(tmp_path, rng, n_groups=1)
        only = groups["group0"]
        args = ["stats", "--ground-truth", gt_path,
                "--confidence-threshold", "0.5", "--out-dir", tmp_path / "out",
                "--group", f"a={','.join(only)}", "--group", f"b={','.join(only)}"]
        assert run(*args) == 0
        with open(tmp_path / "out" / "welch_tests.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        # identical samples: either zero variance (error) or p == 1
        assert rows[0]["reject"].startswith("error") or rows[0]["reject"] == "no"

    def test_size_and_class_group_filters(self, rng, tmp_path):
        gt_path, groups = make_coco_fixture(tmp_path, rng, n_groups=2, n_folds=2)
        args = ["stats", "--ground-truth", gt_path,
                "--confidence-threshold", "0.5", "--size", "tiny",
                "--class-group", "traffic_sign", "--out-dir", tmp_path / "out"]
        for label, folds in groups.items():
            args += ["--group", f"{label}={','.join(folds)}"]
        assert run(*args) == 0  # category ids 0..2 are traffic signs, boxes tiny


class TestGeometryCommand:
    def test_default_profile_fov(self, capsys):
        assert run("geometry") == 0
        out = capsys.readouterr().out
        fov = float(out.split("fov_deg=")[1].splitlines()[0])
        assert fov == pytest.approx(24.9, abs=0.05)

    def test_bbox_widths_at_distances(self, capsys):
        assert run("geometry", "--object", "speed_sign",
                   "--distances", "38,51") == 0
        out = capsys.readouterr().out
        w38 = int(out.split("bbox_width_px[speed_sign@38m]=")[1].splitlines()[0])
        w51 = int(out.split("bbox_width_px[speed_sign@51m]=")[1].splitlines()[0])
        assert abs(w38 - 32) <= 2
        assert abs(w51 - 23) <= 2

    def test_width_inversion_near_published_distance(self, capsys):
        assert run("geometry", "--object", "speed_sign", "--bbox-width", "23") == 0
        out = capsys.readouterr().out
        distance = float(out.split("]=")[-1])
        assert distance == pytest.approx(51.0, rel=0.10)

    def test_unknown_object(self, capsys):
        assert run("geometry", "--object", "sasquatch", "--distances", "10") == 1
        assert "unknown object" in capsys.readouterr().err

    def test_missing_width_flag_is_usage_error(self, capsys):
        assert run("geometry", "--distances", "10") == 2
        assert "usage error:" in capsys.readouterr().err
