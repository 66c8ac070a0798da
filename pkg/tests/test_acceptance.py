"""Acceptance criteria 1-8, one PASS/FAIL line each.

Lines are printed as each check finishes and repeated in the pytest terminal
summary. Run standalone with ``python3 tests/test_acceptance.py``.
"""

import csv
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cellseg.bench import BenchmarkSpec, run_benchmark  # noqa: E402
from cellseg.cli import main as cli  # noqa: E402
from cellseg.metrics import (ConfusionCounts, auroc, confusion_counts, evaluate, f1, iou, miou,  # noqa: E402
                             precision, recall)
from cellseg.model import UNetConfig, build_unet  # noqa: E402
from cellseg.synthdata import SynthConfig, generate, write_dataset  # noqa: E402
from cellseg.training import TrainConfig, train  # noqa: E402
from cellseg.transforms import ResizePolicy  # noqa: E402
from oracles import auroc_pairs, count_loop  # noqa: E402
from test_model import _fd_problem, worst_fd_error  # noqa: E402


def line(number, ok, detail):
    return f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def check_1(tmp_path):
    gen = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    probs, targets, loop_ious = [], [], []
    for _ in range(100):
        prob = gen.random((16, 16))
        target = (gen.random((16, 16)) < gen.uniform(0.1, 0.9)).astype(np.uint8)
        c = confusion_counts(prob, target)
        tp, fp, fn, tn = count_loop(prob, target, 0.5)
        if (c.tp, c.fp, c.fn, c.tn) != (tp, fp, fn, tn):
            worst = math.inf
        expected = (tp / (tp + fp), tp / (tp + fn), 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn),
                    auroc_pairs(prob.ravel(), target.ravel()))
        got = (precision(c), recall(c), f1(c), iou(c), auroc(prob, target))
        worst = max(worst, *(abs(a - b) for a, b in zip(got, expected)))
        probs.append(prob)
        targets.append(target)
        loop_ious.append(expected[3])
    worst = max(worst, abs(miou([confusion_counts(p, t) for p, t in zip(probs, targets)])
                           - sum(loop_ious) / len(loop_ious)))
    elapsed = time.perf_counter() - start
    return (worst <= 1e-9 and elapsed < 10,
           f"100 instances, max |diff| {worst:.2e} (tol 1e-9), {elapsed:.2f}s (limit 10s)")


def check_2(tmp_path):
    p, r = 0.9086, 0.9902
    # counts whose precision and recall are exactly the reference values
    c = ConfusionCounts(tp=9086 * 9902, fp=914 * 9902, fn=98 * 9086)
    value = f1(c)
    ok = abs(precision(c) - p) < 1e-12 and abs(recall(c) - r) < 1e-12 and abs(value - 0.9477) <= 0.0005
    return (ok, f"F1(P={p}, R={r}) = {value:.6f}, target 0.9477 +/- 0.0005")


def check_3(tmp_path):
    gen = np.random.default_rng(3)
    model = build_unet(UNetConfig())
    start = time.perf_counter()
    bad = []
    for _ in range(50):
        h, w = (int(v) * 16 for v in gen.integers(1, 7, size=2))
        out = model.forward(gen.random((1, 3, h, w)).astype(np.float32))
        if out.shape != (1, 1, h, w) or not ((out > 0) & (out < 1)).all():
            bad.append((h, w))
    elapsed = time.perf_counter() - start
    return (not bad and elapsed < 60,
           f"50 shapes on the default depth-4 model, {len(bad)} failures, {elapsed:.1f}s (limit 60s)")


def check_4(tmp_path):
    start = time.perf_counter()
    model, x, y = _fd_problem(0)
    worst = worst_fd_error(model, x, y, 1e-4)
    elapsed = time.perf_counter() - start
    return (worst < 1e-3 and elapsed < 120,
           f"{model.num_parameters()} parameters, max rel err {worst:.2e} (tol 1e-3), {elapsed:.1f}s (limit 120s)")


def check_5(tmp_path):
    ds = generate(SynthConfig(n_images=4, height=64, width=64, noise_sigma=0.0, seed=0))
    start = time.perf_counter()
    model, history = train(build_unet(UNetConfig(in_channels=1, depth=2, base_filters=8, seed=0)), ds,
                           TrainConfig(learning_rate=1e-4, batch_size=2, epochs=200, seed=0))
    score = evaluate(model, ds).miou
    elapsed = time.perf_counter() - start
    return (score >= 0.95 and history.losses[-1] < 0.1 and elapsed < 600,
           f"training IoU {score:.4f} (>= 0.95), final loss {history.losses[-1]:.4f} (< 0.1), {elapsed:.1f}s")


def check_6(tmp_path):
    policy = ResizePolicy(256, 16)
    exact = policy.output_size(520, 696, warn=False)
    gen = np.random.default_rng(6)
    bad = 0
    for _ in range(1000):
        h, w = (int(v) for v in gen.integers(1, 4000, size=2))
        oh, ow = policy.output_size(h, w, warn=False)
        bad += oh != 256 or ow % 16 != 0 or ow < 16
    return (exact == (256, 336) and bad == 0,
           f"520x696 -> {exact[0]}x{exact[1]} (want 256x336), sweep of 1000 sizes: {bad} violations")


def _pipeline(root, tag):
    data = root / "data"
    run = root / f"run_{tag}"
    small = ["--height", "64", "--depth", "2", "--base-filters", "8", "--in-channels", "1"]
    codes = [
        cli(["synth", "--out", str(data), "-n", "6", "--height", "64", "--width", "64", "--seed", "1", "--force"]),
        cli(["train", "--images", str(data / "images"), "--masks", str(data / "masks"), "--out-dir", str(run),
             "--seed", "1", "--epochs", "3", *small]),
        cli(["eval", "--checkpoint", str(run / "model.ckpt"), "--images", str(data / "images"),
             "--masks", str(data / "masks"), "--csv", str(run / "metrics.csv")]),
    ]
    return codes, (run / "model.ckpt").read_bytes(), (run / "metrics.csv").read_bytes()


def check_7(tmp_path):
    first = _pipeline(tmp_path, "a")
    second = _pipeline(tmp_path, "b")
    ok = first[0] == second[0] == [0, 0, 0] and first[1] == second[1] and first[2] == second[2]
    return (ok, f"exit codes {first[0]} / {second[0]}, checkpoints identical: {first[1] == second[1]},"
                           f" CSVs identical: {first[2] == second[2]}")


def _read_mean(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {m: math.fsum(float(r[m]) for r in rows) / len(rows)
            for m in ("precision", "recall", "f1", "auroc", "miou")}


def check_8(tmp_path):
    write_dataset(generate(SynthConfig(n_images=10, height=32, width=32, seed=8)), tmp_path / "data")

    def bench(seeds, out):
        spec = BenchmarkSpec(name="synth", data=str(tmp_path / "data"), seeds=seeds, n_runs=len(seeds),
                             model_cfg=UNetConfig(in_channels=1, depth=1, base_filters=4),
                             train_cfg=TrainConfig(epochs=3), policy=ResizePolicy(32, 16))
        return run_benchmark(spec, tmp_path / out)

    a = bench([1, 2, 3, 4, 5], "a")
    b = bench([4, 2, 5, 1, 3], "b")
    independent = _read_mean(tmp_path / "a" / "runs.csv")
    diff = max(abs(independent[m] - a.mean[m]) for m in independent)
    perm = max(abs(a.mean[m] - b.mean[m]) for m in a.mean)
    return (diff <= 1e-12 and perm == 0.0,
           f"independent mean vs aggregate max |diff| {diff:.1e} (tol 1e-12), permuted seeds |diff| {perm:.1e}")


CHECKS = {1: check_1, 2: check_2, 3: check_3, 4: check_4, 5: check_5, 6: check_6, 7: check_7, 8: check_8}


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number, tmp_path, request):
    ok, detail = CHECKS[number](tmp_path)
    text = line(number, ok, detail)
    request.node.user_properties.append(("acceptance", text))
    print(text)
    assert ok, text


if __name__ == "__main__":
    import tempfile

    failed = 0
    for number, check in sorted(CHECKS.items()):
        with tempfile.TemporaryDirectory() as tmp:
            ok, detail = check(Path(tmp))
        print(line(number, ok, detail), flush=True)
        failed += not ok
    sys.exit(1 if failed else 0)
