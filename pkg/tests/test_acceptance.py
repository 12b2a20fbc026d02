"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line.

Criteria 6 and 7 train the full ablation grid and the shrink sweep, about ten
minutes together on one core.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
from conftest import VERDICTS

from cdsp import losses as L
from cdsp.annotations import LabelMask, ScribblePolyline, ScribbleSet, load_label_mask, load_scribbles, save_label_mask, save_scribbles
from cdsp.distmap import (
    boundary_extract,
    brute_force_squared_edt,
    load_distance_map,
    pseudo_boundary_distance_map,
    save_distance_map,
    scribble_distance_map,
    squared_edt,
)
from cdsp.engine.serialize import load_array, save_tensor
from cdsp.engine.tensor import Tensor
from cdsp.gradsuite import SUITE, run_suite
from cdsp.harness.config import ExperimentConfig
from cdsp.harness.experiments import prepare, run_ablation, run_robustness
from cdsp.lorm import LormParams, mask_apply, rectify, rectify_features, similarity


def verdict(n, title, ok, detail):
    line = f"CRITERION {n} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def test_criterion_1_gradient_integrity():
    results, seconds = run_suite(instances=20, seed=0, tol=1e-4)
    worst = max(r.max_rel_err for r in results)
    ok = all(r.passed for r in results) and len(results) == len(SUITE) == 8 and seconds < 60
    failed = [r.name for r in results if not r.passed]
    verdict(1, "gradient integrity", ok, f"{len(results)} checks x 20 instances, max rel err {worst:.2e}, {seconds:.1f}s, failed={failed}")


def test_criterion_2_edt_exactness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(100):
        m = rng.random((64, 64)) < rng.choice([0.001, 0.01, 0.05, 0.2, 0.6])
        m[rng.integers(64), rng.integers(64)] = True
        mismatches += int(not np.array_equal(squared_edt(m, 64, 64), brute_force_squared_edt(m, 64, 64)))
    seconds = time.perf_counter() - t0
    verdict(2, "EDT exactness", mismatches == 0 and seconds < 10, f"{100 - mismatches}/100 exact, {seconds:.2f}s (incl. brute force)")


def _random_case(rng):
    h, w = rng.integers(16, 65, size=2)
    scribble = np.full((h, w), 255, np.uint8)
    pseudo = np.zeros((h, w), np.uint8)
    for _ in range(rng.integers(1, 4)):
        cls = rng.integers(1, 4)
        r0, c0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        r1, c1 = r0 + rng.integers(3, h - r0 + 1), c0 + rng.integers(3, w - c0 + 1)
        pseudo[r0:r1, c0:c1] = cls
        rr = rng.integers(r0, r1)
        scribble[rr, c0:c1] = cls
    scribble[rng.integers(h), :] = np.where(rng.random(w) < 0.5, 0, 255)  # background strokes
    return scribble, pseudo


def test_criterion_3_distance_map_semantics():
    rng = np.random.default_rng(3)
    exact, monotone = 0, 0
    for _ in range(50):
        scribble, pseudo = _random_case(rng)
        src = (scribble >= 1) & (scribble != 255)
        bnd = boundary_extract(pseudo)
        maps_s = [scribble_distance_map(scribble, lam).values for lam in (0.0, 3.0, 7.0)]
        maps_c = [pseudo_boundary_distance_map(pseudo, lam).values for lam in (0.0, 3.0, 7.0)]
        exact += all((d[src] == 1.0).all() for d in maps_s) and all((d[bnd] == 0.0).all() for d in maps_c)
        monotone += (maps_s[0] >= maps_s[1]).all() and (maps_s[1] >= maps_s[2]).all() and (maps_c[0] <= maps_c[1]).all() and (maps_c[1] <= maps_c[2]).all()
    verdict(3, "distance-map semantics", exact == 50 and monotone == 50, f"exact on sources {exact}/50, monotone over lambda 0/3/7 {monotone}/50")


def test_criterion_4_loss_identities():
    rng = np.random.default_rng(4)
    errs = []
    for k in (2, 3, 4, 6):
        P = T(np.full((k, 5, 5), 1.0 / k))
        lab = rng.integers(0, k, (5, 5)).astype(np.uint8)
        lab[0, 0] = 255
        errs.append(abs(L.partial_ce(P, lab).item() - math.log(k)))
        for eps in (0.0, 0.1, 0.5, 0.9):
            errs.append(abs(L.smoothed_ce(P, lab, eps).item() - math.log(k)))
    onehot = np.zeros((4, 5, 5))
    onehot[2] = 1.0
    ent = L.distance_entropy(T(onehot), rng.random((5, 5))).item()
    hand = L.smoothed_ce(T(np.array([0.8, 0.2]).reshape(2, 1, 1)), np.zeros((1, 1), np.uint8), 0.1).item()
    stated = 0.29186
    ok_uniform = max(errs) <= 1e-6
    ok_hand = abs(hand - stated) <= 1e-4
    detail = (
        f"uniform max err {max(errs):.1e}, one-hot entropy {ent:.1e}, "
        f"hand instance {hand:.6f} vs stated {stated} (diff {abs(hand - stated):.1e}, tol 1e-4)"
    )
    verdict(4, "loss identities", ok_uniform and abs(ent) <= 1e-9 and ok_hand, detail)


def test_criterion_5_lorm_invariants():
    rng = np.random.default_rng(5)
    row_err, scale_err, bound_viol, const_err = 0.0, 0.0, 0, 0.0
    for trial in range(20):
        c, h, w = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 6)
        F = rng.normal(size=(c, h, w))
        p = LormParams(c, seed=trial, dtype=np.float64)
        A = similarity(T(F), p).data
        row_err = max(row_err, np.abs(A.sum(axis=1) - 1).max())
        for alpha in (0.5, 2.0, 10.0):
            scale_err = max(scale_err, np.abs(similarity(T(alpha * F), p).data - A).max())
        hat = rectify(T(F), mask_apply(T(A), np.ones((h, w))), p.delta).data / p.delta.item()
        flat = F.reshape(c, -1)
        bound_viol += int((hat < flat.min(1)[:, None, None] - 1e-12).any() or (hat > flat.max(1)[:, None, None] + 1e-12).any())
        const = np.ones((c, h, w)) * rng.normal(size=(c, 1, 1))
        out = rectify_features(T(const), np.ones((h, w)), p)
        const_err = max(const_err, np.abs(out.data - const).max(), float(np.mean((const - out.data) ** 2)))
    ok = row_err <= 1e-6 and scale_err <= 1e-5 and bound_viol == 0 and const_err <= 1e-12
    verdict(5, "LoRM invariants", ok, f"row-sum err {row_err:.1e}, scale err {scale_err:.1e}, bound violations {bound_viol}, constant-F err {const_err:.1e}")


def test_criterion_6_ablation_direction():
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    summary, _ = run_ablation(cfg, seeds=(0, 1, 2), prep=prepare(cfg))
    minutes = (time.perf_counter() - t0) / 60
    means = {combo: mu for combo, mu, _, _ in summary}
    s, c, sc, full = means["segs"], means["segc"], means["segs+segc"], means["segs+segc+ds+dc+lorm"]
    ok = sc - s >= 0.02 and sc - c >= 0.02 and full >= sc and minutes <= 30
    table = ", ".join(f"{k}={v:.4f}" for k, v in means.items())
    verdict(6, "ablation direction", ok, f"segs+segc beats segs by {100 * (sc - s):.2f} and segc by {100 * (sc - c):.2f} points; full-segs+segc {100 * (full - sc):+.2f}; {minutes:.1f} min; {table}")


def test_criterion_7_robustness_direction():
    rows = run_robustness(ExperimentConfig(), ratios=(0.0, 1.0), mode="shrink", seeds=(0, 1, 2))
    mean = {}
    for method, ratio, _, miou, *_ in rows:
        mean.setdefault((method, ratio), []).append(miou)
    mean = {k: float(np.mean(v)) for k, v in mean.items()}
    drop_full = mean[("cdsp", 0.0)] - mean[("cdsp", 1.0)]
    drop_base = mean[("baseline", 0.0)] - mean[("baseline", 1.0)]
    detail = (
        f"full {mean[('cdsp', 0.0)]:.4f}->{mean[('cdsp', 1.0)]:.4f} (drop {100 * drop_full:.2f}), "
        f"baseline {mean[('baseline', 0.0)]:.4f}->{mean[('baseline', 1.0)]:.4f} (drop {100 * drop_base:.2f}) points"
    )
    verdict(7, "robustness direction", drop_full < drop_base, detail)


def _cli(*argv):
    subprocess.run([sys.executable, "-m", "cdsp.cli", *map(str, argv)], check=True, capture_output=True)


def _files(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_criterion_8_cli_determinism(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("cls_epochs=3\ncls_width=8\nseg_width=16\nepochs=3\nwarmup_epochs=1\nbatch=4\n")
    shared = tmp_path / "shared"
    _cli("gen-data", "--n", 8, "--seed", 3, "--out", shared / "data")
    _cli("train-classifier", "--data", shared / "data", "--config", cfg, "--out", shared / "cls")
    _cli("make-cam", "--data", shared / "data", "--classifier", shared / "cls", "--out", shared / "cams")
    _cli("make-pseudo", "--data", shared / "data", "--cams", shared / "cams", "--config", cfg, "--out", shared / "pseudo")
    _cli("distmap", "--kind", "ds", "--scribbles", shared / "data" / "scribbles", "--out", shared / "ds")
    _cli("distmap", "--kind", "dc", "--pseudo", shared / "pseudo", "--out", shared / "dc")
    outputs = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        _cli("gen-data", "--n", 8, "--seed", 3, "--out", d / "data")
        _cli("train-seg", "--data", shared / "data", "--pseudo", shared / "pseudo", "--ds", shared / "ds", "--dc", shared / "dc", "--config", cfg, "--seed", 1, "--out", d / "run")
        _cli("eval", "--data", shared / "data", "--checkpoint", d / "run", "--out", d / "eval.csv")
        outputs.append(_files(d))
    same = outputs[0] == outputs[1]
    verdict(8, "determinism", same and len(outputs[0]) > 10, f"{len(outputs[0])} files from gen-data/train-seg/eval, byte-identical={same}")


def test_criterion_9_format_round_trips(tmp_path):
    rng = np.random.default_rng(9)
    failures = []
    for i in range(25):
        h, w = rng.integers(1, 40, size=2)
        values = rng.integers(0, 5, (h, w)).astype(np.uint8)
        values[rng.random((h, w)) < 0.3] = 255
        save_label_mask(tmp_path / "m.pgm", LabelMask(values))
        if not np.array_equal(load_label_mask(tmp_path / "m.pgm", 4).values, values):
            failures.append(f"mask{i}")

        pseudo = rng.integers(0, 3, (h, w)).astype(np.uint8)
        for dmap in (scribble_distance_map(values, rng.uniform(0, 7)), pseudo_boundary_distance_map(pseudo, rng.uniform(0, 7))):
            for suffix in (".pgm", ".cdspt"):
                save_distance_map(tmp_path / f"d{suffix}", dmap)
                back = load_distance_map(tmp_path / f"d{suffix}", kind=dmap.kind, lam=dmap.lam)
                if not (np.array_equal(back.raw, dmap.raw) and np.allclose(back.values, dmap.values, atol=1e-7)):
                    failures.append(f"dist{i}{suffix}")

        polys = [ScribblePolyline(int(rng.integers(0, 5)), [(int(rng.integers(h)), int(rng.integers(w))) for _ in range(rng.integers(1, 5))]) for _ in range(rng.integers(0, 4))]
        s = ScribbleSet(f"img{i}", int(h), int(w), polys)
        save_scribbles(tmp_path / "s.json", s)
        if load_scribbles(tmp_path / "s.json").to_dict() != s.to_dict():
            failures.append(f"json{i}")

        dtype = (np.float32, np.float64)[i % 2]
        arr = rng.normal(size=tuple(rng.integers(0, 5, size=rng.integers(0, 5)))).astype(dtype)
        save_tensor(tmp_path / "t.cdspt", arr)
        back = load_array(tmp_path / "t.cdspt")
        if back.dtype != arr.dtype or back.shape != arr.shape or back.tobytes() != arr.tobytes():
            failures.append(f"tensor{i}")
    verdict(9, "format round-trips", not failures, f"25 randomized fixtures per format, failures={failures}")
