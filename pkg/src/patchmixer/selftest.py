"""Fast property suite runnable from the command line.

Three groups: gradient checks of every layer and block, permutation
invariance plus spatial-operator oracles, and metric oracles. Each group
returns a list of (check name, passed, detail).
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import oracles as O
from .autodiff import functional as F
from .autodiff.gradcheck import grad_check
from .autodiff.nn import BatchNorm, LayerNorm, Linear, PatchMix
from .autodiff.tensor import Tensor
from .config import BackboneConfig, HeadConfig, TrainConfig
from .geometry import PointCloud, ball_query, fps, fps_seed, knn
from .metrics import ConfusionMatrix, clustering_suite, mean_iou, overall_accuracy
from .model import (
    ChannelMixer,
    ClassificationHead,
    PatchMixer,
    SegmentationHead,
    TokenMixer,
    forward_classification,
)

GRAD_TOL = 1e-4
GRAD_STEP = 1e-6


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    """Scalar probe ``sum(out * w)`` with fixed random weights."""
    return F.sum(out * Tensor(w, dtype=np.float64))


def _check_module(name, module, inputs, call: Callable, rng, results):
    module.to(np.float64)
    module.train()
    params = [p for _, p in module.named_parameters()]
    with_grad = [Tensor(x, requires_grad=True, dtype=np.float64) for x in inputs]
    probe = rng.normal(size=call(module, *with_grad).shape)
    err = grad_check(lambda: _weighted_sum(call(module, *with_grad), probe), with_grad + params, h=GRAD_STEP)
    results.append((f"grad:{name}", err <= GRAD_TOL, f"max rel err {err:.2e}"))


def tiny_backbone(token_mixer: str = "attentive", **kw) -> BackboneConfig:
    base = dict(
        num_points=24, num_patches=4, num_samples=3, radius=0.4, features=8,
        token_hidden=6, channel_hidden=5, depth=1, embed_channels=(5, 8), mask_rate=0.0,
        token_mixer=token_mixer,
    )
    base.update(kw)
    return BackboneConfig(**base)


def grad_group(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    r = []
    B, P, Fe = 3, 4, 6
    x2 = rng.normal(size=(5, 4))
    tok = rng.normal(size=(B, P, Fe))
    _check_module("linear", Linear(4, 3, rng), [x2], lambda m, x: m(x), rng, r)
    _check_module("batchnorm", BatchNorm(4), [x2], lambda m, x: m(x), rng, r)
    _check_module("batchnorm_axis1", BatchNorm(P, axis=1), [tok], lambda m, x: m(x), rng, r)
    _check_module("layernorm", LayerNorm(Fe), [tok], lambda m, x: m(x), rng, r)
    _check_module("patchmix", PatchMix(P, rng), [tok], lambda m, x: m(x), rng, r)
    _check_module("sigmoid", LayerNorm(Fe), [tok], lambda m, x: F.sigmoid(m(x)), rng, r)
    _check_module("relu", LayerNorm(Fe), [tok], lambda m, x: F.relu(m(x)), rng, r)
    _check_module(
        "max_over_axis", LayerNorm(Fe), [tok], lambda m, x: F.max_over_axis(m(x), axis=1)[0], rng, r
    )
    targets = rng.integers(0, 3, size=5)
    _check_module(
        "cross_entropy", Linear(4, 3, rng), [x2],
        lambda m, x: F.softmax_cross_entropy(m(x), targets), rng, r,
    )
    _check_module("token_mixer_attentive", TokenMixer(P, Fe, 5, True, rng), [tok], lambda m, x: m(x), rng, r)
    _check_module("token_mixer_vanilla", TokenMixer(P, Fe, 5, False, rng), [tok], lambda m, x: m(x), rng, r)
    _check_module("channel_mixer", ChannelMixer(Fe, 5, rng), [tok], lambda m, x: m(x), rng, r)
    head_cfg = HeadConfig(num_classes=3, hidden=(5, 4), dropout=0.0)
    _check_module("classification_head", ClassificationHead(Fe, head_cfg, rng), [rng.normal(size=(4, Fe))], lambda m, g: m(g), rng, r)
    S = 2
    _check_module(
        "segmentation_head", SegmentationHead(Fe, head_cfg, rng),
        [rng.normal(size=(2, P, S, Fe)), rng.normal(size=(2, P, Fe)), rng.normal(size=(2, Fe))],
        lambda m, loc, t, g: m(loc, t, g), rng, r,
    )
    for task in ("classification", "segmentation"):
        net = PatchMixer(tiny_backbone(), head_cfg, task, rng)
        enc = rng.normal(size=(3, 4, 3, 7))
        _check_module(f"network_{task}", net, [enc], lambda m, e: m(e)[0], rng, r)
    return r


def invariance_group(seed: int = 0, clouds: int = 4, perms: int = 3) -> list:
    rng = np.random.default_rng(seed)
    r = []
    cfg = TrainConfig(
        backbone=BackboneConfig.desk(num_points=128, num_patches=16, num_samples=16, features=32,
                                     token_hidden=16, channel_hidden=16, embed_channels=(16, 32)),
        head=HeadConfig(num_classes=4, hidden=(16,)),
    )
    model = PatchMixer(cfg.backbone, cfg.head, "classification", rng).eval()
    worst = 0.0
    for _ in range(clouds):
        pc = PointCloud(rng.uniform(-1, 1, size=(128, 3)))
        ref = forward_classification(pc, cfg, model)
        for _ in range(perms):
            perm = rng.permutation(128)
            out = forward_classification(pc.subset(perm), cfg, model)
            worst = max(worst, float(np.abs(out - ref).max()))
    r.append(("invariance:permutation", worst <= 1e-5, f"max |dlogit| {worst:.2e}"))

    ok = True
    for _ in range(5):
        pts = rng.uniform(-1, 1, size=(int(rng.integers(20, 60)), 3)).astype(np.float32)
        c = int(rng.integers(len(pts)))
        ok &= ball_query(pts, c, 0.5).tolist() == O.ball_query_bruteforce(pts, c, 0.5)
        ok &= knn(pts, c, 7).tolist() == O.knn_bruteforce(pts, c, 7)
        ok &= fps(pts, 8).tolist() == O.fps_bruteforce(pts, 8, fps_seed(pts))
    r.append(("invariance:spatial_oracles", bool(ok), "ball query / kNN / FPS vs brute force"))
    return r


def metrics_group(seed: int = 0, trials: int = 60) -> list:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 8))
        t = [int(v) for v in rng.integers(0, 3, n)]
        p = [int(v) for v in rng.integers(0, 3, n)]
        x = rng.normal(size=(n, 2))
        got = clustering_suite(t, p, x)
        h, c, v = O.homogeneity_completeness_v(t, p)
        ref = {"ari": O.ari_pairs(t, p), "ami": O.ami_max(t, p), "h": h, "c": c, "v": v, "fm": O.fm_pairs(t, p)}
        if 2 <= len(set(p)) <= n - 1:
            ref["s"] = O.silhouette_loop(x, p)
            ref["ch"] = O.calinski_harabasz_loop(x, p)
        worst = max(worst, max(abs(got[k] - val) for k, val in ref.items()))
    r = [("metrics:clustering_oracles", worst <= 1e-12, f"max abs err {worst:.2e}")]
    y = rng.integers(0, 4, 200)
    yh = np.where(rng.random(200) < 0.7, y, rng.integers(0, 4, 200))
    cm = ConfusionMatrix.from_labels(y, yh, 4)
    exact = overall_accuracy(cm) == O.accuracy_recount(list(y), list(yh))
    exact &= abs(mean_iou(cm) - O.miou_sets(list(y), list(yh))) <= 1e-15
    r.append(("metrics:oa_miou_recount", bool(exact), "confusion matrix vs recount"))
    return r


GROUPS = {"grad": grad_group, "invariance": invariance_group, "metrics": metrics_group}


def run(groups=None, out=print) -> bool:
    """Run the named groups (all by default); print one line per group."""
    ok_all = True
    for name in groups or GROUPS:
        t0 = time.perf_counter()
        try:
            results = GROUPS[name]()
        except Exception as exc:  # a crash fails the group rather than the run
            results = [(f"{name}:crashed", False, repr(exc))]
        ok = all(passed for _, passed, _ in results)
        ok_all &= ok
        out(f"[{'PASS' if ok else 'FAIL'}] {name} ({len(results)} checks, {time.perf_counter() - t0:.1f}s)")
        for check, passed, detail in results:
            if not passed:
                out(f"    failed {check}: {detail}")
    return ok_all
