"""Command-line pipeline: every stage reads and writes files so runs can be audited and reused.

Each command prints a one-line JSON summary on stdout. Failures print a
one-line JSON error on stderr and exit with 3 (missing input file) or
4 (validation failure); usage errors exit with 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from cdsp import __version__
from cdsp.annotations import (
    IGNORE,
    load_label_mask,
    load_scribbles,
    perturb,
    rasterize,
    save_label_mask,
    save_scribbles,
)
from cdsp.campseudo import ClassifierConfig, ClassifierParams, cams_to_pseudo, compute_cams, train_classifier
from cdsp.distmap import load_distance_map, pseudo_boundary_distance_map, save_distance_map, scribble_distance_map
from cdsp.engine.nn import load_checkpoint, save_checkpoint
from cdsp.engine.serialize import load_array, save_tensor
from cdsp.engine.tensor import DTYPES, get_default_dtype, set_default_dtype
from cdsp.harness import experiments as E
from cdsp.harness.config import ExperimentConfig, load_config, save_config
from cdsp.harness.data import gen_synthetic_dataset, load_dataset, save_dataset
from cdsp.harness.metrics import evaluate_miou
from cdsp.harness.model import SegModel
from cdsp.harness.train import train_segmentation
from cdsp.losses import CSV_HEADER

log = logging.getLogger("cdsp")

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_INVALID = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _need(path, what="input"):
    if path is None:
        raise CliError(f"missing required {what}", EXIT_INVALID)
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}", EXIT_MISSING)
    return path


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True, default=_jsonable))


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(f"not JSON serialisable: {type(v)}")


# -- config resolution ----------------------------------------------------------

OVERRIDES = {
    "lambda_s": "lambda_s",
    "lambda_c": "lambda_c",
    "tau": "tau",
    "epsilon": "epsilon",
    "losses": "losses",
    "dtype": "dtype",
    "paper_literal_entropy": "paper_literal_entropy",
}


def _config(args) -> ExperimentConfig:
    cfg = load_config(_need(args.config, "config file")) if args.config else ExperimentConfig()
    changes = {}
    for attr, key in OVERRIDES.items():
        val = getattr(args, attr, None)
        if val is not None:
            changes[key] = val
    if args.seed is not None:
        for key in args.config_seed_targets:
            changes[key] = args.seed
    cfg = cfg.replace(**changes)
    cfg.validate()
    return cfg


def _ids_in(directory, ext):
    return sorted(f[: -len(ext)] for f in os.listdir(directory) if f.endswith(ext))


# -- commands -------------------------------------------------------------------


def cmd_gen_data(args):
    samples = gen_synthetic_dataset(args.n, args.k, args.seed, args.size, args.thickness, prefix=args.prefix)
    save_dataset(_out(args), samples, args.k)
    frac = float(np.mean([(rasterize(s.scribbles, args.thickness).values != IGNORE).mean() for s in samples]))
    return {"n": len(samples), "num_classes": args.k, "seed": args.seed, "scribble_fraction": round(frac, 6)}


def cmd_perturb(args):
    src = _need(os.path.join(_need(args.data, "dataset directory"), "scribbles"), "scribble directory")
    out = _out(args)
    os.makedirs(out, exist_ok=True)
    ids = _ids_in(src, ".json")
    for i, image_id in enumerate(ids):
        s = perturb(load_scribbles(os.path.join(src, f"{image_id}.json")), args.mode, args.ratio, seed=args.seed * 1_000_003 + i)
        save_scribbles(os.path.join(out, f"{image_id}.json"), s)
    return {"mode": args.mode, "ratio": args.ratio, "seed": args.seed, "n": len(ids)}


def cmd_rasterize(args):
    src = _need(args.scribbles, "scribbles")
    out = _out(args)
    if os.path.isdir(src):
        os.makedirs(out, exist_ok=True)
        ids = _ids_in(src, ".json")
        for image_id in ids:
            save_label_mask(os.path.join(out, f"{image_id}.pgm"), rasterize(load_scribbles(os.path.join(src, f"{image_id}.json")), args.thickness))
        return {"n": len(ids)}
    mask = rasterize(load_scribbles(src), args.thickness)
    save_label_mask(out, mask)
    return {"n": 1, "labeled_pixels": int((mask.values != IGNORE).sum())}


def _dataset(args):
    samples, k = load_dataset(_need(args.data, "dataset directory"), scribble_dir=args.scribbles_dir)
    return samples, k


def _classifier_meta(directory):
    with open(_need(os.path.join(directory, "classifier.json"), "classifier metadata")) as fh:
        return json.load(fh)


def cmd_train_classifier(args):
    cfg = _config(args)
    samples, k = _dataset(args)
    dtype = DTYPES[cfg.dtype]
    ccfg = ClassifierConfig(epochs=cfg.cls_epochs, lr=cfg.cls_lr, width=cfg.cls_width, seed=cfg.data_seed, dtype=dtype)
    params, history = train_classifier(np.stack([s.image for s in samples]), np.stack([s.class_vector for s in samples]), ccfg)
    out = _out(args)
    save_checkpoint(params, out)
    with open(os.path.join(out, "classifier.json"), "w") as fh:
        json.dump({"num_classes": k, "width": cfg.cls_width, "dtype": cfg.dtype}, fh, sort_keys=True)
        fh.write("\n")
    return {"n": len(samples), "final_loss": history[-1], "epochs": len(history)}


def cmd_make_cam(args):
    samples, _ = _dataset(args)
    ckpt = _need(args.classifier, "classifier checkpoint")
    meta = _classifier_meta(ckpt)
    params = ClassifierParams(meta["num_classes"], width=meta["width"], dtype=DTYPES[meta["dtype"]])
    load_checkpoint(params, ckpt)
    out = _out(args)
    os.makedirs(out, exist_ok=True)
    for s in samples:
        save_tensor(os.path.join(out, f"{s.image_id}.cdspt"), compute_cams(s.image, params).astype(np.float32))
    return {"n": len(samples), "num_classes": meta["num_classes"]}


def cmd_make_pseudo(args):
    cfg = _config(args)
    samples, _ = _dataset(args)
    cams_dir = _need(args.cams, "CAM directory")
    out = _out(args)
    os.makedirs(out, exist_ok=True)
    unclaimed = IGNORE if cfg.unclaimed_ignore else 0
    for s in samples:
        cams = load_array(_need(os.path.join(cams_dir, f"{s.image_id}.cdspt"), "CAM file"))
        save_label_mask(os.path.join(out, f"{s.image_id}.pgm"), cams_to_pseudo(cams, s.class_vector, cfg.tau, unclaimed))
    return {"n": len(samples), "tau": cfg.tau}


def cmd_distmap(args):
    if args.kind == "ds":
        src, lam = _need(args.scribbles, "scribbles"), args.lam if args.lam is not None else 1.0
    else:
        src, lam = _need(args.pseudo, "pseudo-labels"), args.lam if args.lam is not None else 6.0
    out = _out(args)

    def one(path):
        if args.kind == "ds":
            return scribble_distance_map(rasterize(load_scribbles(path), args.thickness), lam)
        return pseudo_boundary_distance_map(load_label_mask(path), lam)

    if os.path.isdir(src):
        os.makedirs(out, exist_ok=True)
        ext = ".json" if args.kind == "ds" else ".pgm"
        ids = _ids_in(src, ext)
        degenerate = 0
        for image_id in ids:
            d = one(os.path.join(src, image_id + ext))
            degenerate += d.degenerate
            save_distance_map(os.path.join(out, f"{image_id}.pgm"), d)
        return {"kind": args.kind, "lambda": lam, "n": len(ids), "degenerate": degenerate}
    d = one(src)
    save_distance_map(out, d)
    return {"kind": args.kind, "lambda": lam, "n": 1, "degenerate": int(d.degenerate), "nonzero": int(d.nonzero)}


def _optional_dir_items(directory, ids, ext, loader, what):
    if directory is None:
        return None
    _need(directory, f"{what} directory")
    return [loader(_need(os.path.join(directory, f"{i}{ext}"), what)) for i in ids]


def cmd_train_seg(args):
    cfg = _config(args)
    samples, k = _dataset(args)
    if cfg.num_classes != k:
        cfg = cfg.replace(num_classes=k)
    ids = [s.image_id for s in samples]
    pseudo = _optional_dir_items(args.pseudo, ids, ".pgm", lambda p: load_label_mask(p, num_classes=k), "pseudo-label")
    ds = _optional_dir_items(args.ds, ids, ".pgm", lambda p: load_distance_map(p, kind="scribble_ds"), "ds map")
    dc = _optional_dir_items(args.dc, ids, ".pgm", lambda p: load_distance_map(p, kind="pseudo_dc"), "dc map")
    model, reports = train_segmentation(cfg, samples, pseudo, {"ds": ds, "dc": dc})
    out = _out(args)
    os.makedirs(out, exist_ok=True)
    save_checkpoint(model, os.path.join(out, "checkpoint"))
    save_config(os.path.join(out, "config.txt"), cfg)
    with open(os.path.join(out, "losses.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(r.as_row(i) for i, r in enumerate(reports))
    return {"config_hash": cfg.digest(), "steps": len(reports), "final_loss": reports[-1].total, "losses": cfg.losses}


def cmd_eval(args):
    run = _need(args.checkpoint, "run directory")
    cfg = load_config(_need(os.path.join(run, "config.txt"), "run config"))
    samples, k = _dataset(args)
    model = SegModel(cfg.num_classes, width=cfg.seg_width, seed=cfg.seed, dtype=DTYPES[cfg.dtype])
    load_checkpoint(model, _need(os.path.join(run, "checkpoint"), "checkpoint"))
    metrics = evaluate_miou(model, samples)
    run_id = os.path.basename(os.path.normpath(run))
    E.write_results(_out(args), E.metrics_rows(run_id, cfg, metrics, split=args.split))
    return {"miou": metrics.miou, "iou": [None if np.isnan(v) else float(v) for v in metrics.iou], "n": len(samples)}


def _seeds(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


def cmd_ablate(args):
    cfg = _config(args)
    out = _out(args)
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    prep = E.prepare(cfg)
    summary, per_run = E.run_ablation(cfg, seeds=_seeds(args.seeds), n_jobs=args.jobs, prep=prep)
    E.write_ablation_table(os.path.join(out, "ablation.csv"), summary)
    rows = []
    for combo, seed, rcfg, m in per_run:
        rows.extend(E.metrics_rows(f"{'+'.join(combo)}-s{seed}", rcfg, m))
    E.write_results(os.path.join(out, "results.csv"), rows)
    save_config(os.path.join(out, "config.txt"), cfg)
    return {
        "rows": len(summary),
        "pseudo_miou": prep.pseudo_miou,
        "table": {c: round(mu, 6) for c, mu, _, _ in summary},
        "seconds": round(time.perf_counter() - t0, 1),
    }


def cmd_robustness(args):
    cfg = _config(args)
    out = _out(args)
    os.makedirs(out, exist_ok=True)
    ratios = tuple(float(r) for r in args.ratios.split(",")) if args.ratio is None else (0.0, args.ratio)
    lambdas = None if (args.lambda_s is not None or args.lambda_c is not None) else E.ROBUSTNESS_LAMBDAS
    rows = E.run_robustness(cfg, ratios=ratios, mode=args.mode, seeds=_seeds(args.seeds), n_jobs=args.jobs, lambdas=lambdas)
    E.write_robustness_curve(os.path.join(out, "robustness.csv"), rows)
    res = []
    for method, ratio, seed, _, rcfg, m in rows:
        res.extend(E.metrics_rows(f"{method}-r{ratio}-s{seed}", rcfg, m))
    E.write_results(os.path.join(out, "results.csv"), res)
    means = {}
    for method, ratio, _, miou, *_ in rows:
        means.setdefault(f"{method}@{ratio}", []).append(miou)
    return {"mode": args.mode, "mean_miou": {k: round(float(np.mean(v)), 6) for k, v in means.items()}}


def cmd_check_grads(args):
    from cdsp.gradsuite import run_suite

    results, seconds = run_suite(instances=args.instances, seed=args.seed)
    summary = {
        "passed": all(r.passed for r in results),
        "max_rel_err": {r.name: r.max_rel_err for r in results},
        "instances": args.instances,
        "seconds": round(seconds, 2),
    }
    if not summary["passed"]:
        _emit(summary)
        raise CliError("gradient check failed: " + ",".join(r.name for r in results if not r.passed))
    return summary


def _out(args):
    if not args.out:
        raise CliError("--out is required")
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    return args.out


# -- parser -----------------------------------------------------------------------


def _common(p, config=False, seed_targets=()):
    if config:
        target = " and ".join(seed_targets) or "seed"
        p.add_argument("--seed", type=int, help=f"overrides the config's {target} (default: config value, 0)")
    else:
        p.add_argument("--seed", type=int, default=0, help="random seed (default: %(default)s)")
    p.add_argument("--out", help="output path (file or directory)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    p.set_defaults(config_seed_targets=seed_targets)
    if config:
        p.add_argument("--config", help="key=value experiment config (default: built-in defaults)")
        p.add_argument("--dtype", choices=sorted(DTYPES), help="float precision (default: f32)")
        p.add_argument("--lambda-s", dest="lambda_s", type=float, help="scribble distance exponent (default: 1.0)")
        p.add_argument("--lambda-c", dest="lambda_c", type=float, help="pseudo-boundary distance exponent (default: 6.0)")
        p.add_argument("--tau", type=float, help="CAM threshold (default: 0.3)")
        p.add_argument("--epsilon", type=float, help="label smoothing (default: 0.1)")
        p.add_argument("--losses", help="comma list from segs,segc,ds,dc,lorm (default: all)")
        p.add_argument(
            "--paper-literal-entropy",
            dest="paper_literal_entropy",
            action="store_const",
            const=True,
            default=None,
            help="use the negated (entropy-maximising) distance-entropy sign (default: off)",
        )


def _data_args(p):
    p.add_argument("--data", help="dataset directory written by gen-data")
    p.add_argument("--scribbles-dir", dest="scribbles_dir", help="alternative scribble directory, e.g. from perturb")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdsp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cdsp {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--n", type=int, default=96, help="number of images (default: %(default)s)")
    p.add_argument("--k", type=int, default=3, help="foreground classes (default: %(default)s)")
    p.add_argument("--size", type=int, default=64, help="image side (default: %(default)s)")
    p.add_argument("--thickness", type=float, default=3, help="scribble thickness (default: %(default)s)")
    p.add_argument("--prefix", default="img", help="image id prefix (default: %(default)s)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("perturb", help="shrink or drop a dataset's scribbles")
    _common(p)
    _data_args(p)
    p.add_argument("--mode", choices=("shrink", "drop"), default="shrink", help="(default: %(default)s)")
    p.add_argument("--ratio", type=float, default=0.5, help="perturbation ratio in [0, 1] (default: %(default)s)")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("rasterize", help="scribble JSON (file or directory) to label PGM")
    _common(p)
    p.add_argument("--scribbles", help="scribble JSON file or directory")
    p.add_argument("--thickness", type=float, default=3, help="(default: %(default)s)")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("train-classifier", help="train the multi-label CAM classifier")
    _common(p, config=True, seed_targets=("data_seed",))
    _data_args(p)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("make-cam", help="per-image CAM stacks as binary tensors")
    _common(p)
    _data_args(p)
    p.add_argument("--classifier", help="checkpoint directory from train-classifier")
    p.set_defaults(func=cmd_make_cam)

    p = sub.add_parser("make-pseudo", help="threshold CAMs into pseudo-label PGMs")
    _common(p, config=True)
    _data_args(p)
    p.add_argument("--cams", help="CAM directory from make-cam")
    p.set_defaults(func=cmd_make_pseudo)

    p = sub.add_parser("distmap", help="scribble (ds) or pseudo-boundary (dc) distance maps")
    _common(p)
    p.add_argument("--kind", choices=("ds", "dc"), default="ds", help="(default: %(default)s)")
    p.add_argument("--lambda", dest="lam", type=float, help="exponent (default: 1.0 for ds, 6.0 for dc)")
    p.add_argument("--scribbles", help="scribble JSON file or directory (ds)")
    p.add_argument("--pseudo", help="pseudo-label PGM file or directory (dc)")
    p.add_argument("--thickness", type=float, default=3, help="(default: %(default)s)")
    p.set_defaults(func=cmd_distmap)

    p = sub.add_parser("train-seg", help="train the segmenter with the selected losses")
    _common(p, config=True, seed_targets=("seed",))
    _data_args(p)
    p.add_argument("--pseudo", help="pseudo-label directory")
    p.add_argument("--ds", help="ds distance-map directory")
    p.add_argument("--dc", help="dc distance-map directory")
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("eval", help="mIoU of a train-seg run on a dataset")
    _common(p)
    _data_args(p)
    p.add_argument("--checkpoint", help="run directory from train-seg")
    p.add_argument("--split", default="val", help="split label written to the CSV (default: %(default)s)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="loss-component ablation table")
    _common(p, config=True, seed_targets=("data_seed",))
    p.add_argument("--seeds", default="0,1,2", help="training seeds (default: %(default)s)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: %(default)s)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("robustness", help="full method vs scribble-only under shrink/drop")
    _common(p, config=True, seed_targets=("data_seed",))
    p.add_argument("--mode", choices=("shrink", "drop"), default="shrink", help="(default: %(default)s)")
    p.add_argument("--ratios", default="0,0.25,0.5,0.75,1", help="(default: %(default)s)")
    p.add_argument("--ratio", type=float, help="compare ratio 0 against this single ratio instead of --ratios")
    p.add_argument("--seeds", default="0,1,2", help="training seeds (default: %(default)s)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: %(default)s)")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("check-grads", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--dtype", choices=("f64",), default="f64", help="checks always run in f64 (default: %(default)s)")
    p.add_argument("--instances", type=int, default=20, help="random instances per check (default: %(default)s)")
    p.set_defaults(func=cmd_check_grads)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    previous = get_default_dtype()
    if getattr(args, "dtype", None) in DTYPES:
        set_default_dtype(args.dtype)
    try:
        summary = args.func(args)
    except CliError as exc:
        _fail(args.command, str(exc), exc.code)
        return exc.code
    except FileNotFoundError as exc:
        _fail(args.command, f"file not found: {exc.filename or exc}", EXIT_MISSING)
        return EXIT_MISSING
    except (ValueError, KeyError) as exc:
        _fail(args.command, str(exc), EXIT_INVALID)
        return EXIT_INVALID
    finally:
        set_default_dtype(previous)  # in-process callers keep their own default
    _emit({"command": args.command, "ok": True, **summary})
    return 0


def _fail(command, message, code):
    print(json.dumps({"command": command, "ok": False, "exit": code, "error": message.replace("\n", " ")}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
