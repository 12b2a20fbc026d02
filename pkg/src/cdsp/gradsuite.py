"""Finite-difference gradient checks for every differentiable loss and op the training loop uses."""

from __future__ import annotations

import time
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from cdsp import losses as L
from cdsp.annotations import IGNORE
from cdsp.engine import ops
from cdsp.engine.gradcheck import check_gradients
from cdsp.lorm import lorm_forward

TOLERANCE = 1e-4


def _labels(rng, shape, k1: int, ignore_frac: float = 0.4):
    lab = rng.integers(0, k1, size=shape).astype(np.uint8)
    lab[rng.random(shape) < ignore_frac] = IGNORE
    if (lab == IGNORE).all():
        lab.flat[0] = 0
    return lab


def _dist(rng, shape):
    d = rng.random(shape)
    d[rng.random(shape) < 0.3] = 0.0
    return d


# each builder returns (fn, inputs) for one random instance


def _partial_ce(rng):
    k1 = int(rng.integers(2, 5))
    z = rng.normal(size=(2, k1, 3, 4))
    lab = _labels(rng, (2, 3, 4), k1)
    return (lambda x: L.partial_ce(ops.softmax(x, axis=1), lab)), [z]


def _smoothed_ce(rng):
    k1 = int(rng.integers(2, 5))
    z = rng.normal(size=(2, k1, 3, 4))
    lab = _labels(rng, (2, 3, 4), k1, ignore_frac=0.2)
    eps = float(rng.uniform(0, 0.5))
    return (lambda x: L.smoothed_ce(ops.softmax(x, axis=1), lab, eps)), [z]


def _entropy(literal: bool):
    def build(rng):
        k1 = int(rng.integers(2, 5))
        z = rng.normal(size=(2, k1, 3, 4))
        d = _dist(rng, (2, 3, 4))
        return (lambda x: L.distance_entropy(ops.softmax(x, axis=1), d, paper_literal=literal)), [z]

    return build


def _lorm(rng):
    c, h, w = int(rng.integers(2, 5)), 3, 3
    F = rng.normal(size=(c, h, w))
    wq = rng.normal(size=(c, c)) / np.sqrt(c)
    wk = rng.normal(size=(c, c)) / np.sqrt(c)
    delta = np.array(rng.uniform(0.5, 1.5))
    pseudo = rng.integers(0, 3, size=(h, w))
    pseudo.flat[0] = 1  # at least one foreground reference
    fg_only = bool(rng.integers(2))

    def fn(F_, wq_, wk_, d_):
        params = SimpleNamespace(wq=wq_, wk=wk_, delta=d_)
        return lorm_forward(F_, pseudo, params, foreground_only=fg_only)[1]

    return fn, [F, wq, wk, delta]


def _conv2d(rng):
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    x = rng.normal(size=(2, cin, 5, 5))
    wt = rng.normal(size=(cout, cin, k, k))
    b = rng.normal(size=(cout,))
    probe = rng.normal(size=(2, cout, (5 + 2 * (k // 2) - k) // stride + 1, (5 + 2 * (k // 2) - k) // stride + 1))
    return (lambda x_, w_, b_: ops.sum(ops.mul(ops.conv2d(x_, w_, b_, stride=stride, pad=k // 2), probe))), [x, wt, b]


def _softmax(rng):
    axis = int(rng.integers(0, 2))
    x = rng.normal(size=(3, 4)) * 2
    probe = rng.normal(size=(3, 4))
    return (lambda x_: ops.sum(ops.mul(ops.softmax(x_, axis=axis), probe))), [x]


def _l2_normalize(rng):
    axis = int(rng.integers(0, 2))
    x = rng.normal(size=(3, 4))
    probe = rng.normal(size=(3, 4))
    return (lambda x_: ops.sum(ops.mul(ops.l2_normalize(x_, axis=axis), probe))), [x]


SUITE = {
    "partial_ce": _partial_ce,
    "smoothed_ce": _smoothed_ce,
    "distance_entropy": _entropy(False),
    "distance_entropy_paper_literal": _entropy(True),
    "lorm_end_to_end": _lorm,
    "conv2d": _conv2d,
    "softmax": _softmax,
    "l2_normalize": _l2_normalize,
}


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_err: float
    passed: bool


def run_suite(instances: int = 20, seed: int = 0, tol: float = TOLERANCE, names=None):
    """Check every registered case on ``instances`` random draws; returns (results, seconds)."""
    t0 = time.perf_counter()
    out = []
    for name in names or SUITE:
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        worst = 0.0
        for _ in range(instances):
            fn, inputs = SUITE[name](rng)
            worst = max(worst, check_gradients(fn, inputs))
        out.append(CheckResult(name, instances, worst, worst < tol))
    return out, time.perf_counter() - t0
