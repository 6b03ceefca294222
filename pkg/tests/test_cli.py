import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from dynffl.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from dynffl.io import read_array, read_pgm


def tiny_doc(out, **changes):
    doc = json.loads(resources.files("dynffl").joinpath("configs", "desk.json").read_text())
    doc["scanner"]["angle_count"] = 6
    doc["scanner"]["sampling_frequency_Hz"] = 2 * 25e3 * 12
    doc["grids"] = {"simulation": 24, "reconstruction": 16}
    doc["solve"]["max_iterations"] = 40
    doc["sweep"] = {"alpha1": [2e3], "alpha2": [1e-3, 1e-2]}
    doc["output"] = str(out)
    for k, v in changes.items():
        doc[k] = v
    return doc


def write_config(tmp_path, name="cfg.json", **changes):
    p = tmp_path / name
    p.write_text(json.dumps(tiny_doc(tmp_path / "out", **changes)))
    return p


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def pipeline(cfg, out):
    base = ["--config", str(cfg), "--out", str(out)]
    for verb in (["simulate"], ["reconstruct"], ["reconstruct", "--method", "M1"],
                 ["sweep"], ["evaluate"], ["render", "--clamp"]):
        assert main(base + verb) == EXIT_OK, verb


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = write_config(root)
    pipeline(cfg, root / "run1")
    return root, cfg


class TestPipeline:
    def test_outputs(self, tiny_run):
        root, _ = tiny_run
        out = root / "run1"
        for name in ("phantom.bin", "recording.bin", "sinogram_truth.bin", "meta.json",
                     "reconstruct_M2/c0.bin", "reconstruct_M2/v.bin",
                     "reconstruct_M2/result.json", "reconstruct_M1/c0.bin",
                     "sweep_M2/sweep.csv", "sweep_M2/best_ssim/c0.bin",
                     "sweep_M2/best_psnr/result.json", "evaluation/metrics.csv",
                     "evaluation/metrics.json", "render/phantom.pgm", "render/phantom.png",
                     "render/recording.png", "render/sweep_M2_sweep_ssim.png"):
            assert (out / name).is_file(), name

    def test_recording_shape_and_meta(self, tiny_run):
        out = tiny_run[0] / "run1"
        data, head = read_array(out / "recording.bin")
        assert data.shape == (2 * 6, 13) and head.kind == "recording"
        meta = json.loads((out / "meta.json").read_text())
        assert meta["recording_shape"] == [2, 6, 13]
        assert meta["samples_per_translation"] == 12
        assert meta["u_star_clean"] > 0 and "version" in meta

    def test_result_json(self, tiny_run):
        doc = json.loads((tiny_run[0] / "run1" / "reconstruct_M2" / "result.json").read_text())
        assert doc["solve"]["alpha1"] == 2000.0 and doc["termination"]
        assert doc["objective"]["length"] == doc["iterations"]

    def test_sweep_csv(self, tiny_run):
        lines = (tiny_run[0] / "run1" / "sweep_M2" / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("# max_iterations=40")
        rows = list(csv.DictReader(lines[1:]))
        assert list(rows[0]) == ["method", "alpha1", "alpha2", "alpha3", "ssim", "psnr",
                                 "iterations", "seconds"]
        assert len(rows) == 2 and all(r["seconds"] == "" for r in rows)

    def test_determinism(self, tiny_run):
        root, cfg = tiny_run
        pipeline(cfg, root / "run2")
        assert tree(root / "run1") == tree(root / "run2")

    def test_seed_override_changes_noise(self, tmp_path):
        cfg = write_config(tmp_path, noise={"std_relative": 0.1, "seed": 0})
        assert main(["--config", str(cfg), "--out", str(tmp_path / "a"), "simulate"]) == 0
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"),
                     "--seed-override", "5"]) == 0
        a = (tmp_path / "a" / "recording.bin").read_bytes()
        b = (tmp_path / "b" / "recording.bin").read_bytes()
        assert a != b


class TestSweepGrid:
    def test_one_by_one(self, tiny_run, tmp_path):
        root, _ = tiny_run
        cfg = write_config(tmp_path, sweep={"alpha1": [2e3], "alpha2": [1e-3]})
        out = tmp_path / "o"
        assert main(["--config", str(cfg), "--out", str(out), "simulate"]) == 0
        assert main(["--config", str(cfg), "--out", str(out), "sweep", "--timing"]) == 0
        lines = (out / "sweep_M2" / "sweep.csv").read_text().splitlines()
        rows = list(csv.DictReader(lines[1:]))
        assert len(rows) == 1 and float(rows[0]["seconds"]) > 0

    def test_paper_grid_cardinality(self):
        from dynffl.config import config_from_dict
        cfg = config_from_dict(json.loads(
            resources.files("dynffl").joinpath("configs", "paper.json").read_text()))
        assert len(cfg.sweep_alpha1) * len(cfg.sweep_alpha2) == 160


class TestIdentity:
    def test_m1_m2_bitwise(self, tmp_path):
        cfg = write_config(tmp_path, motion={"kind": "identity"})
        out = tmp_path / "o"
        base = ["--config", str(cfg), "--out", str(out)]
        assert main(base + ["simulate"]) == 0
        assert main(base + ["reconstruct", "--method", "M1"]) == 0
        assert main(base + ["reconstruct", "--method", "M2"]) == 0
        assert ((out / "reconstruct_M1" / "c0.bin").read_bytes()
                == (out / "reconstruct_M2" / "c0.bin").read_bytes())


class TestRender:
    def test_constant_and_clamp(self, tmp_path):
        from dynffl.io import AxisHeader, write_array
        cfg = write_config(tmp_path)
        out = tmp_path / "o"
        out.mkdir()
        write_array(out / "const.bin", np.full((16, 16), 0.4), AxisHeader("image", half_width=1e-3))
        write_array(out / "big.bin", np.array([[0.5, 1.0, 3.0]]))
        base = ["--config", str(cfg), "--out", str(out), "render"]
        assert main(base + [str(out / "const.bin"), str(out / "big.bin"), "--clamp"]) == 0
        g = read_pgm(out / "render" / "const.pgm")
        assert np.unique(g).size == 1
        big = read_pgm(out / "render" / "big.pgm")
        assert big[0, 1] == big[0, 2] == 255
        first = tree(out / "render")
        assert main(base + [str(out / "const.bin"), str(out / "big.bin"), "--clamp"]) == 0
        assert tree(out / "render") == first


class TestExitCodes:
    def test_validation(self, tmp_path, capsys):
        cfg = write_config(tmp_path, method="M5")
        assert main(["--config", str(cfg), "simulate"]) == EXIT_VALIDATION
        assert "method" in capsys.readouterr().err

    def test_zero_phantom(self, tmp_path):
        cfg = write_config(tmp_path, phantom={"kind": "disk", "radius_m": 0.0})
        out = tmp_path / "o"
        assert main(["--config", str(cfg), "--out", str(out), "simulate"]) == EXIT_NUMERICAL
        assert not (out / "recording.bin").exists()

    def test_missing_file(self, tmp_path):
        cfg = write_config(tmp_path)
        code = main(["--config", str(cfg), "--out", str(tmp_path / "o"), "reconstruct",
                     "--recording", str(tmp_path / "nope.bin")])
        assert code == EXIT_IO

    def test_missing_config(self, tmp_path):
        assert main(["--config", str(tmp_path / "absent.json"), "simulate"]) == EXIT_IO

    def test_metadata_mismatch(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "o"
        assert main(["--config", str(cfg), "--out", str(out), "simulate"]) == 0
        doc = tiny_doc(out)
        doc["scanner"]["angle_count"] = 7
        other = tmp_path / "other.json"
        other.write_text(json.dumps(doc))
        code = main(["--config", str(other), "--out", str(out), "reconstruct"])
        assert code == EXIT_VALIDATION
        assert "recording.angle_count" in capsys.readouterr().err


@pytest.mark.slow
def test_default_scanner_recording_shape(tmp_path):
    out = tmp_path / "desk"
    assert main(["--config", "desk", "--out", str(out), "simulate"]) == EXIT_OK
    data, _ = read_array(out / "recording.bin")
    meta = json.loads((out / "meta.json").read_text())
    assert meta["recording_shape"] == [2, 25, 161] and data.shape == (50, 161)
