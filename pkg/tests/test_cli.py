import json
import os

import numpy as np
import pytest

from massseg.cli import main
from massseg.config import Config
from massseg.manifest import read_manifest
from massseg.pgm import read_pgm
from massseg.pipeline import mask_from_raw, roi_from_raw
from massseg.preprocess import RoiAnnotation
from massseg.synth import generate_sample

FAST = "layers=8,8\ndbn_epochs=2\ndbn_max_patches=2000\ngmm_components=3\nssvm_C=100\n"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--count", "9", "--test", "3", "--seed", "5", "--out", str(data)]) == 0
    cfg = root / "fast.cfg"
    cfg.write_text(FAST)
    model = root / "model.bin"
    assert main(["train", "--manifest", str(data / "manifest.tsv"), "--config", str(cfg),
                 "--out", str(model)]) == 0
    return root


def bytes_of(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestSynth:
    def test_same_seed_same_bytes(self, tmp_path):
        for d in ("a", "b"):
            assert main(["synth", "--count", "4", "--seed", "3", "--out", str(tmp_path / d)]) == 0
        names = sorted(os.listdir(tmp_path / "a"))
        assert names == sorted(os.listdir(tmp_path / "b"))
        assert "manifest.tsv" in names and len(names) == 9
        for n in names:
            assert bytes_of(tmp_path / "a" / n) == bytes_of(tmp_path / "b" / n)

    def test_splits(self, workspace):
        recs = read_manifest(workspace / "data" / "manifest.tsv")
        assert [r.split for r in recs] == ["train"] * 6 + ["test"] * 3

    def test_generator_audit(self):
        cfg = Config()
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            s = generate_sample(rng)
            ann = RoiAnnotation(s.center_x, s.center_y, s.scale)
            mask = mask_from_raw(s.mask, ann, cfg)
            img = roi_from_raw(s.image, ann, cfg)
            assert 0.05 <= mask.positive.mean() <= 0.40
            assert img.intensities[mask.positive].mean() > img.intensities[~mask.positive].mean()

    def test_bad_count(self, tmp_path):
        assert main(["synth", "--count", "0", "--out", str(tmp_path)]) == 2


class TestUsage:
    def test_no_command(self):
        assert main([]) == 1

    def test_missing_flag(self):
        assert main(["train", "--out", "x"]) == 1

    def test_bad_center(self, tmp_path):
        assert main(["segment", "img.pgm", "--model", "m", "--center", "12", "--scale", "3", "--out", "o"]) == 1


class TestTrain:
    def test_zero_train_records(self, workspace, tmp_path):
        lines = (workspace / "data" / "manifest.tsv").read_text().splitlines()
        test_only = [l for l in lines if l.endswith("\ttest")]
        man = workspace / "data" / "test_only.tsv"
        man.write_text("\n".join(test_only) + "\n")
        assert main(["train", "--manifest", str(man), "--config", str(workspace / "fast.cfg"),
                     "--out", str(tmp_path / "m.bin")]) == 2
        assert not (tmp_path / "m.bin").exists()

    def test_missing_manifest(self, tmp_path):
        assert main(["train", "--manifest", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "m")]) == 2

    def test_iteration_cap_exit_code(self, workspace, tmp_path):
        cfg = tmp_path / "cap.cfg"
        cfg.write_text(FAST + "ssvm_max_iter=1\n")
        rc = main(["train", "--manifest", str(workspace / "data" / "manifest.tsv"), "--config", str(cfg),
                   "--out", str(tmp_path / "m.bin")])
        assert rc == 3

    def test_deterministic_model_file(self, workspace, tmp_path):
        assert main(["train", "--manifest", str(workspace / "data" / "manifest.tsv"),
                     "--config", str(workspace / "fast.cfg"), "--out", str(tmp_path / "again.bin")]) == 0
        assert bytes_of(tmp_path / "again.bin") == bytes_of(workspace / "model.bin")


class TestSegment:
    def run(self, workspace, out):
        rec = read_manifest(workspace / "data" / "manifest.tsv")[-1]
        return main(["segment", rec.image, "--model", str(workspace / "model.bin"),
                     "--center", f"{rec.center_x},{rec.center_y}", "--scale", str(rec.scale), "--out", str(out)])

    def test_mask_values_and_repeatability(self, workspace, tmp_path, capsys):
        assert self.run(workspace, tmp_path / "a.pgm") == 0
        assert "segmentation seconds" in capsys.readouterr().out
        assert self.run(workspace, tmp_path / "b.pgm") == 0
        mask = read_pgm(tmp_path / "a.pgm")
        assert mask.samples.shape == (40, 40)
        assert set(np.unique(mask.samples)) <= {0, 255}
        assert bytes_of(tmp_path / "a.pgm") == bytes_of(tmp_path / "b.pgm")

    def test_center_outside_image(self, workspace, tmp_path):
        rec = read_manifest(workspace / "data" / "manifest.tsv")[0]
        rc = main(["segment", rec.image, "--model", str(workspace / "model.bin"),
                   "--center", "500,500", "--scale", "10", "--out", str(tmp_path / "o.pgm")])
        assert rc == 2

    def test_not_a_model(self, workspace, tmp_path):
        rec = read_manifest(workspace / "data" / "manifest.tsv")[0]
        rc = main(["segment", rec.image, "--model", rec.image,
                   "--center", "40,40", "--scale", "10", "--out", str(tmp_path / "o.pgm")])
        assert rc == 2


class TestEvaluate:
    def run(self, workspace, out, *extra):
        return main(["evaluate", "--model", str(workspace / "model.bin"),
                     "--manifest", str(workspace / "data" / "manifest.tsv"), "--out", str(out), *extra])

    def test_report_consistency(self, workspace, tmp_path):
        assert self.run(workspace, tmp_path / "r.txt") == 0
        lines = (tmp_path / "r.txt").read_text().splitlines()
        per_image = [float(l.split("\t")[1]) for l in lines if l.startswith("img_")]
        assert len(per_image) == 3
        mean = float([l for l in lines if l.startswith("mean_dice")][0].split("\t")[1])
        assert mean == pytest.approx(np.mean(per_image), abs=1e-6)
        doc = json.loads((tmp_path / "r.txt.json").read_text())
        assert [i["name"] for i in doc["images"]] == ["img_0006.pgm", "img_0007.pgm", "img_0008.pgm"]
        timing = json.loads((tmp_path / "r.txt.timing.json").read_text())
        assert len(timing["seconds"]) == 3 and all(s > 0 for s in timing["seconds"])

    def test_reports_reproducible(self, workspace, tmp_path):
        assert self.run(workspace, tmp_path / "a.txt") == 0
        assert self.run(workspace, tmp_path / "b.txt") == 0
        assert bytes_of(tmp_path / "a.txt") == bytes_of(tmp_path / "b.txt")
        assert bytes_of(tmp_path / "a.txt.json") == bytes_of(tmp_path / "b.txt.json")

    def test_target_dice(self, workspace, tmp_path, capsys):
        assert self.run(workspace, tmp_path / "r.txt", "--target-dice", "0.88") == 0
        assert "advisory" in capsys.readouterr().out
        doc = json.loads((tmp_path / "r.txt.json").read_text())
        assert doc["target_dice"] == 0.88
        assert doc["within_advisory_tolerance"] == (abs(doc["mean_dice"] - 0.88) <= 0.05)
