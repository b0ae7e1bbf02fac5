"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL/INFO line to ``ACCEPTANCE_LINES``; the lines
are printed in the terminal summary at the end of the run. Criteria 4, 5, 7
and 9 share one synthetic benchmark that is generated and trained once
through the command-line entry points.
"""
import itertools
import json
import os
import time

import numpy as np
import pytest
from scipy.special import logsumexp

from massseg import maxflow
from massseg.cli import main
from massseg.core import LabelMask, energy
from massseg.dbn import RbmLayer, free_energy
from massseg.evaluation import brute_force_infer, dice, evaluate_dataset
from massseg.manifest import read_manifest
from massseg.maxflow import infer, infer_loss_augmented
from massseg.model import load_model
from massseg.pipeline import fit_weights, load_record, prepare
from massseg.potentials import build_potential_stack, fit_mixture
from massseg.ssvm import hamming, most_violated

from conftest import ACCEPTANCE_LINES, random_stack, random_weights


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# --- shared synthetic benchmark ----------------------------------------------------

@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    data = root / "data"
    t0 = time.perf_counter()
    assert main(["synth", "--count", "90", "--test", "30", "--seed", "0", "--out", str(data)]) == 0
    manifest = data / "manifest.tsv"
    model_path = root / "model.bin"
    assert main(["train", "--manifest", str(manifest), "--seed", "0", "--out", str(model_path)]) == 0
    train_seconds = time.perf_counter() - t0

    model = load_model(model_path)
    records = read_manifest(manifest)
    split = {"train": ([], []), "test": ([], [])}
    for rec in records:
        img, mask = load_record(rec, model.config)
        split[rec.split][0].append(img)
        split[rec.split][1].append(mask)
    return {
        "root": root,
        "manifest": manifest,
        "model_path": model_path,
        "model": model,
        "train": split["train"],
        "test": split["test"],
        "train_seconds": train_seconds,
    }


# --- criteria ----------------------------------------------------------------------------

def test_criterion_1_inference_exactness():
    rng = np.random.default_rng(20240601)
    maxflow.warmup()
    t0 = time.perf_counter()
    worst_plain = worst_aug = 0.0
    for _ in range(200):
        stack = random_stack(rng, 3, 4)
        w = random_weights(rng)
        gt = LabelMask(rng.choice([-1, 1], (3, 4)))
        e_cut = energy(infer(stack, w), stack, w)
        e_bf = energy(brute_force_infer(stack, w), stack, w)
        worst_plain = max(worst_plain, abs(e_cut - e_bf))
        y_cut = infer_loss_augmented(stack, w, gt)
        y_bf = brute_force_infer(stack, w, gt)
        a_cut = energy(y_cut, stack, w) - hamming(gt, y_cut)
        a_bf = energy(y_bf, stack, w) - hamming(gt, y_bf)
        worst_aug = max(worst_aug, abs(a_cut - a_bf))
    seconds = time.perf_counter() - t0
    ok = worst_plain <= 1e-9 and worst_aug <= 1e-9 and seconds < 5.0
    record(1, "inference exactness", ok,
           f"200 instances, max |dE| {worst_plain:.2e}, max |d(E-loss)| {worst_aug:.2e}, {seconds:.2f}s")


def test_criterion_2_free_energy_exactness():
    rng = np.random.default_rng(77)
    worst = 0.0
    for k in range(50):
        nh = k % 4 + 1
        n_feat = int(rng.integers(1, 6))
        top = RbmLayer(rng.normal(0, 1.5, (n_feat + 2, nh)), rng.normal(size=n_feat + 2), rng.normal(size=nh))
        h = rng.random(n_feat)
        diff = free_energy(top, h, 1) - free_energy(top, h, -1)
        exact = []
        for label in (1, -1):
            v = np.concatenate([h, [(label + 1) / 2, (1 - label) / 2]])
            terms = [v @ top.visible_bias + np.dot(z, top.hidden_bias) + v @ top.weights @ np.array(z)
                     for z in itertools.product((0.0, 1.0), repeat=nh)]
            exact.append(-logsumexp(terms))
        worst = max(worst, abs(diff - (exact[0] - exact[1])))
    record(2, "free-energy exactness", worst <= 1e-9, f"50 top layers, max |error| {worst:.2e}")


def test_criterion_3_em_monotonicity():
    data_rng = np.random.default_rng(3)
    x = np.concatenate([
        data_rng.normal(0.25, 0.06, 3000),
        data_rng.normal(0.55, 0.1, 2000),
        data_rng.normal(0.85, 0.04, 1000),
        data_rng.random(500),
    ]).clip(0, 1)
    worst = 0.0
    iters = []
    for seed in range(50):
        _, trace = fit_mixture(x, 5, seed=seed)
        worst = min(worst, float(np.min(np.diff(trace.loglik))) if trace.iterations else 0.0)
        iters.append(trace.iterations)
    record(3, "EM monotonicity", worst >= -1e-9,
           f"50 seeds, largest per-iteration decrease {max(0.0, -worst):.2e}, iterations {min(iters)}-{max(iters)}")


@pytest.mark.slow
def test_criterion_4_ssvm_contract(bench):
    model = bench["model"]
    images = [prepare(im, model.config) for im in bench["train"][0]]
    masks = bench["train"][1]
    refit, result = fit_weights(model.with_weights(None), images, masks)
    tol = model.config.ssvm_tol
    w = result.weights
    worst = -np.inf
    for k, im in enumerate(images):
        _, viol = most_violated(build_potential_stack(im, model), w, masks[k])
        worst = max(worst, viol - result.slacks[k])
    for c in result.constraints:
        worst = max(worst, c.violation(w.vector) - result.slacks[c.sample])
    monotone = bool(np.all(np.diff(result.objectives) >= -1e-9))
    same = np.array_equal(refit.weights.vector, model.weights.vector)
    ok = result.converged and result.iterations < model.config.ssvm_max_iter and worst <= tol and monotone and same
    record(4, "SSVM convergence contract", ok,
           f"converged={result.converged} after {result.iterations} passes, {len(result.constraints)} constraints, "
           f"max violation beyond slack {worst:.2e}, objectives nondecreasing={monotone}, "
           f"max QP KKT residual {result.max_kkt_residual:.1e}")


@pytest.mark.slow
def test_criterion_5_end_to_end(bench):
    model = bench["model"]
    train_imgs = [prepare(im, model.config) for im in bench["train"][0]]
    train_masks = bench["train"][1]
    test_set = list(zip(*bench["test"]))
    full = evaluate_dataset(model, test_set).mean_dice
    ablations = {}
    for name in model.config.unaries:
        sub = model.with_config(model.config.replace(unaries=(name,))).with_weights(None)
        sub, _ = fit_weights(sub, train_imgs, train_masks)
        ablations[name] = evaluate_dataset(sub, test_set).mean_dice
    ok = full >= 0.80 and all(full >= d for d in ablations.values())
    detail = ", ".join(f"{k} {v:.4f}" for k, v in ablations.items())
    record(5, "end-to-end synthetic benchmark", ok,
           f"full model test Dice {full:.4f}; single-unary ablations: {detail}; "
           f"synth+train {bench['train_seconds']:.0f}s")


def test_criterion_6_reference_numbers(tmp_path):
    manifest = os.environ.get("MASSSEG_REFERENCE_MANIFEST")
    target = float(os.environ.get("MASSSEG_REFERENCE_TARGET", "0.88"))
    if not manifest:
        line = ("[INFO] criterion 6: reference datasets: not gating; no dataset supplied "
                "(set MASSSEG_REFERENCE_MANIFEST to a manifest with train/test splits)")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return
    model_path = tmp_path / "reference.bin"
    report = tmp_path / "reference.txt"
    rc = main(["train", "--manifest", manifest, "--out", str(model_path)])
    if rc in (0, 3):
        rc = main(["evaluate", "--model", str(model_path), "--manifest", manifest, "--out", str(report),
                   "--target-dice", str(target)])
    if rc == 0:
        doc = json.loads((tmp_path / "reference.txt.json").read_text())
        verdict = "within" if doc["within_advisory_tolerance"] else "outside"
        msg = f"mean Dice {doc['mean_dice']:.4f} vs target {target:.2f}, {verdict} +-0.05"
    else:
        msg = f"run failed with exit status {rc}"
    line = f"[INFO] criterion 6: reference datasets: not gating; {msg}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.mark.slow
def test_criterion_7_runtime(bench, tmp_path, capsys):
    rec = [r for r in read_manifest(bench["manifest"]) if r.split == "test"][0]
    argv = ["segment", rec.image, "--model", str(bench["model_path"]),
            "--center", f"{rec.center_x},{rec.center_y}", "--scale", str(rec.scale),
            "--out", str(tmp_path / "mask.pgm")]
    assert main(argv) == 0
    wall, reported = [], []
    for _ in range(30):
        capsys.readouterr()
        t0 = time.perf_counter()
        assert main(argv) == 0
        wall.append(time.perf_counter() - t0)
        reported.append(float(capsys.readouterr().out.split("segmentation seconds")[1].split()[0]))
    mean_wall = float(np.mean(wall))
    record(7, "segmentation runtime", mean_wall <= 1.0,
           f"mean over 30 runs: whole command {mean_wall:.3f}s (model load, I/O included), "
           f"segmentation call {np.mean(reported):.3f}s")


def test_criterion_8_dice():
    gt = np.full((4, 6), -1)
    gt.flat[:16] = 1
    pred = np.full((4, 6), -1)
    pred.flat[:8] = 1
    examples = [
        dice(LabelMask(gt), LabelMask(gt)) == 1.0,
        dice(LabelMask([[1, 1, -1, -1]]), LabelMask([[-1, -1, 1, 1]])) == 0.0,
        abs(dice(LabelMask(pred), LabelMask(gt)) - 16 / 24) < 1e-15,
    ]
    rng = np.random.default_rng(8)
    sym = comp = True
    for _ in range(1000):
        shape = tuple(rng.integers(1, 12, 2))
        a = LabelMask(rng.choice([-1, 1], shape))
        b = LabelMask(rng.choice([-1, 1], shape))
        sym &= dice(a, b) == dice(b, a)
        if a.positive.any() and (~a.positive).any():
            comp &= dice(a, a.complement()) == 0.0
    record(8, "Dice correctness", all(examples) and sym and comp,
           f"examples {sum(examples)}/3, symmetry {sym}, complement {comp} on 1000 random pairs")


@pytest.mark.slow
def test_criterion_9_determinism(bench, tmp_path):
    second = tmp_path / "model.bin"
    assert main(["train", "--manifest", str(bench["manifest"]), "--seed", "0", "--out", str(second)]) == 0
    same_model = read_bytes(second) == read_bytes(bench["model_path"])

    rec = [r for r in read_manifest(bench["manifest"]) if r.split == "test"][3]
    masks = []
    for k, model in enumerate((bench["model_path"], second)):
        out = tmp_path / f"mask{k}.pgm"
        assert main(["segment", rec.image, "--model", str(model), "--center", f"{rec.center_x},{rec.center_y}",
                     "--scale", str(rec.scale), "--out", str(out)]) == 0
        masks.append(read_bytes(out))
    reports = []
    for k, model in enumerate((bench["model_path"], second)):
        out = tmp_path / f"report{k}.txt"
        assert main(["evaluate", "--model", str(model), "--manifest", str(bench["manifest"]),
                     "--out", str(out)]) == 0
        reports.append((read_bytes(out), read_bytes(str(out) + ".json")))
    ok = same_model and masks[0] == masks[1] and reports[0] == reports[1]
    record(9, "determinism", ok,
           f"model files identical {same_model}, masks identical {masks[0] == masks[1]}, "
           f"reports identical {reports[0] == reports[1]}")
