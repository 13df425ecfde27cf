"""Training loop, evaluation, the transfer grid and the ablation runner."""

from __future__ import annotations

import itertools
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .autodiff import functional as F
from .autodiff.optim import SGD, cosine_lr
from .autodiff.tensor import NonFiniteError, no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig
from .data.batching import batcher
from .data.io import DatasetManifest, read_manifest
from .geometry import PointCloud
from .metrics import ConfusionMatrix, MetricsReport, clustering_suite, mean_iou, overall_accuracy, transfer_table
from .model import PatchMixer, build_model, lift_labels, prepare_batch, vertex_vote

CHECKPOINT_NAME = "model.pmx"
LOG_NAME = "train_log.jsonl"

Dataset = Union[str, Path, DatasetManifest, Sequence[PointCloud]]


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, lr: float, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}, lr {lr:.6g}")
        self.epoch, self.batch, self.lr, self.loss = epoch, batch, lr, loss


def load_dataset(data: Dataset) -> list[PointCloud]:
    if isinstance(data, (str, Path)):
        data = read_manifest(data)
    if isinstance(data, DatasetManifest):
        return data.load()
    return list(data)


def init_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent streams for weight init and for everything stochastic in training."""
    return np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1])


@dataclass
class TrainState:
    config: TrainConfig
    model: PatchMixer
    optimizer: SGD
    rng: np.random.Generator
    epoch: int = 0              # completed epochs

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        init_rng, rng = init_rngs(config.seed)
        model = build_model(config, init_rng)
        opt = SGD(model.named_parameters(), config.lr_max, config.momentum, config.weight_decay)
        return cls(config, model, opt, rng)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.config.to_dict(),
            model_state=self.model.state_dict(),
            optimizer_state=self.optimizer.state_dict(),
            epoch=self.epoch,
            rng_state=self.rng.bit_generator.state,
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, config: Optional[TrainConfig] = None) -> "TrainState":
        saved = TrainConfig.from_dict(ckpt.config)
        if config is not None:
            if config.backbone != saved.backbone or config.head != saved.head or config.task != saved.task:
                raise ConfigError("checkpoint architecture differs from the requested config")
        else:
            config = saved
        state = cls.fresh(config)
        try:
            state.model.load_state_dict(ckpt.model_state)
            state.optimizer.load_state_dict(ckpt.optimizer_state)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"checkpoint does not fit the model: {exc}") from exc
        state.rng.bit_generator.state = ckpt.rng_state
        state.epoch = ckpt.epoch
        return state


def _batch_loss(state: TrainState, clouds, targets) -> tuple:
    cfg = state.config
    batch = prepare_batch(clouds, cfg.backbone, "train", state.rng, cfg.augment)
    logits, _ = state.model(batch.encodings, batch.mask, state.rng)
    if cfg.task == "classification":
        y = np.asarray(targets)
        flat = logits
    else:
        y = np.concatenate([lift_labels(pc.labels, ps.sample_indices) for pc, ps in zip(batch.clouds, batch.patches)])
        flat = logits.reshape(-1, logits.shape[-1])
    loss = F.softmax_cross_entropy(flat, y)
    correct = int((flat.data.argmax(axis=1) == y).sum())
    return loss, correct, len(y)


def train_epoch(state: TrainState, clouds: Sequence[PointCloud]) -> dict:
    cfg = state.config
    epoch = state.epoch
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)
    state.optimizer.lr = lr
    state.model.train()
    losses, correct, seen = [], 0, 0
    for b_idx, batch in enumerate(batcher(clouds, cfg.batch_size, cfg.backbone.num_points, state.rng, "train")):
        if len(batch.clouds) < 2:
            continue  # batch norm needs at least two items
        try:
            loss, ok, n = _batch_loss(state, batch.clouds, batch.targets)
        except NonFiniteError:
            raise TrainingDiverged(epoch, b_idx, lr, float("nan")) from None
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(epoch, b_idx, lr, value)
        loss.backward()
        state.optimizer.step()
        losses.append(value * n)
        correct += ok
        seen += n
    state.epoch += 1
    return {
        "epoch": epoch,
        "lr": lr,
        "loss": math.fsum(losses) / max(seen, 1),
        "train_oa": correct / max(seen, 1),
    }


@dataclass
class TrainResult:
    state: TrainState
    log: list = field(default_factory=list)

    @property
    def checkpoint(self) -> Checkpoint:
        return self.state.checkpoint()


def train(
    config: TrainConfig,
    data: Dataset,
    out_dir=None,
    resume: Optional[Union[str, Path, Checkpoint]] = None,
    stop_after: Optional[int] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Train for ``config.epochs`` epochs (or until epoch ``stop_after``).

    With ``out_dir`` the checkpoint is rewritten after every epoch and the
    epoch records are appended to a JSON-lines log.
    """
    clouds = load_dataset(data)
    if not clouds:
        raise ValueError("empty training set")
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        state = TrainState.from_checkpoint(ckpt, config)
    else:
        state = TrainState.fresh(config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is None:
            (out / LOG_NAME).write_text("")
    result = TrainResult(state)
    last = config.epochs if stop_after is None else min(stop_after, config.epochs)
    while state.epoch < last:
        record = train_epoch(state, clouds)
        result.log.append(record)
        if on_epoch:
            on_epoch(record)
        if out is not None:
            with open(out / LOG_NAME, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            save_checkpoint(state.checkpoint(), out / CHECKPOINT_NAME)
    return result


# -- evaluation ----------------------------------------------------------------------

@dataclass
class EvalOutput:
    report: MetricsReport
    embeddings: np.ndarray     # global features, one row per shape
    predictions: np.ndarray    # class per shape, or concatenated per-vertex parts
    targets: np.ndarray


def evaluate(
    model_or_ckpt: Union[PatchMixer, Checkpoint, str, Path],
    data: Dataset,
    config: Optional[TrainConfig] = None,
) -> EvalOutput:
    """Deterministic inference and scores for one test set."""
    if isinstance(model_or_ckpt, PatchMixer):
        if config is None:
            raise ValueError("pass the config alongside a bare model")
        model = model_or_ckpt
    else:
        ckpt = model_or_ckpt if isinstance(model_or_ckpt, Checkpoint) else load_checkpoint(model_or_ckpt)
        model = TrainState.from_checkpoint(ckpt, config).model
        config = config or TrainConfig.from_dict(ckpt.config)
    clouds = load_dataset(data)
    if not clouds:
        raise ValueError("empty evaluation set")
    model.eval()
    num_classes = config.head.num_classes
    cm = ConfusionMatrix(num_classes)
    embeds, preds, targets = [], [], []
    with no_grad():
        for batch in batcher(clouds, config.batch_size, config.backbone.num_points, mode="eval"):
            pb = prepare_batch(batch.clouds, config.backbone, "eval")
            logits, feats = model(pb.encodings, pb.mask)
            embeds.append(feats.global_feat.data.astype(np.float64))
            if config.task == "classification":
                p = logits.data.argmax(axis=1)
                cm.update(batch.targets, p)
                preds.append(p)
                targets.append(batch.targets)
            else:
                for i, (pc, ps) in enumerate(zip(pb.clouds, pb.patches)):
                    vp = vertex_vote(logits.data[i], ps.sample_indices, pc.points)
                    cm.update(pc.labels, vp)
                    preds.append(vp)
                    targets.append(pc.labels)
    emb = np.concatenate(embeds)
    pred = np.concatenate(preds)
    tgt = np.concatenate(targets)
    report = MetricsReport(n_items=len(tgt), confusion=cm.counts.tolist())
    if config.task == "classification":
        report.oa = overall_accuracy(cm)
        for k, v in clustering_suite(tgt, pred, emb).items():
            setattr(report, k, v)
    else:
        report.oa = overall_accuracy(cm)
        report.miou = mean_iou(cm)
    return EvalOutput(report, emb, pred, tgt)


# -- transfer grid -------------------------------------------------------------------

@dataclass
class GridResult:
    cells: dict                 # (train domain, test domain) -> MetricsReport
    logs: dict                  # train domain -> epoch records

    def summary(self, metric: str = "oa"):
        return transfer_table(self.cells, metric)

    @property
    def avg_tl(self) -> Optional[float]:
        """Mean over every off-domain cell."""
        off = [getattr(r, "oa") for (a, b), r in self.cells.items() if a != b]
        return math.fsum(off) / len(off) if off else None

    def rows(self) -> list[dict]:
        return [
            {"train": a, "test": b, **json.loads(r.to_json())} for (a, b), r in self.cells.items()
        ]


def transfer_grid(
    domains: Mapping[str, tuple],
    config: TrainConfig,
    out_dir=None,
    on_epoch: Optional[Callable[[str, dict], None]] = None,
) -> GridResult:
    """``domains`` maps name -> (train data, test data); one model per training domain."""
    tests = {name: load_dataset(te) for name, (_, te) in domains.items()}
    cells, logs = {}, {}
    for name, (tr, _) in domains.items():
        sub = Path(out_dir) / f"train_{name}" if out_dir is not None else None
        cb = (lambda rec, _n=name: on_epoch(_n, rec)) if on_epoch else None
        res = train(config, tr, sub, on_epoch=cb)
        logs[name] = res.log
        for te_name, te in tests.items():
            cells[(name, te_name)] = evaluate(res.state.model, te, config).report
    return GridResult(cells, logs)


# -- ablation --------------------------------------------------------------------------

AXES = ("R", "TM", "Att", "D", "B")


def _flag(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "on", "true", "yes")
    return bool(v)


def arm_overrides(arm: Mapping[str, object]) -> dict:
    """Config overrides for one ablation arm; TM off means channel mixer only."""
    out = {}
    for key, value in arm.items():
        if key == "R":
            out["backbone.radius"] = float(value)
            out["backbone.k"] = None
        elif key == "D":
            out["backbone.depth"] = int(value)
        elif key == "B":
            out["batch_size"] = int(value)
        elif key not in ("TM", "Att"):
            raise ConfigError(f"unknown ablation axis {key!r}; expected one of {AXES}")
    if "TM" in arm or "Att" in arm:
        tm = _flag(arm.get("TM", True))
        att = _flag(arm.get("Att", True))
        out["backbone.token_mixer"] = "none" if not tm else ("attentive" if att else "vanilla")
    return out


def expand_arms(axes: Mapping[str, Sequence]) -> list[dict]:
    """Cross product of axis values, collapsing arms that resolve to the same config."""
    keys = list(axes)
    arms, seen = [], set()
    for combo in itertools.product(*(axes[k] for k in keys)):
        arm = dict(zip(keys, combo))
        if "TM" in arm and not _flag(arm["TM"]) and "Att" in arm:
            arm["Att"] = "off"
        key = json.dumps(arm_overrides(arm), sort_keys=True)
        if key not in seen:
            seen.add(key)
            arms.append(arm)
    return arms


def parse_axes(spec: str) -> dict:
    """``"TM=on,off;Att=on,off;D=1,2"`` -> ``{"TM": ["on", "off"], ...}``."""
    axes = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        name, sep, values = part.partition("=")
        name = name.strip()
        if not sep or name not in AXES:
            raise ConfigError(f"bad ablation axis {part!r}; expected NAME=v1,v2 with NAME in {AXES}")
        axes[name] = [v.strip() for v in values.split(",") if v.strip()]
        if not axes[name]:
            raise ConfigError(f"axis {name} has no values")
    return axes


def arm_label(arm: Mapping[str, object]) -> str:
    return ",".join(f"{k}={v}" for k, v in arm.items()) or "base"


def _run_cell(args):
    config_dict, domains, out_dir = args
    res = transfer_grid(domains, TrainConfig.from_dict(config_dict), out_dir)
    return {f"{a}->{b}": json.loads(r.to_json()) for (a, b), r in res.cells.items()}


def ablation_run(
    base: TrainConfig,
    axes: Mapping[str, Sequence],
    domains: Mapping[str, tuple],
    seeds: Iterable[int] = (0,),
    out_dir=None,
    jobs: int = 1,
) -> list[dict]:
    """One row per arm: per-seed AvgTL, their median, and the raw grid cells."""
    arms = expand_arms(axes) if axes else [{}]
    seeds = list(seeds)
    tasks = []
    for arm in arms:
        cfg_arm = base.replace(**arm_overrides(arm))
        for seed in seeds:
            sub = None
            if out_dir is not None:
                sub = str(Path(out_dir) / arm_label(arm).replace("=", "-").replace(",", "_") / f"seed{seed}")
            tasks.append((cfg_arm.replace(seed=seed).to_dict(), _as_paths(domains), sub))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    rows = []
    for a_idx, arm in enumerate(arms):
        per_seed = results[a_idx * len(seeds):(a_idx + 1) * len(seeds)]
        tl = [_avg_off(cells) for cells in per_seed]
        valid = [t for t in tl if t is not None]
        rows.append({
            "arm": arm_label(arm),
            **{k: arm.get(k) for k in axes},
            "seeds": seeds,
            "avg_tl": tl,
            "median_avg_tl": statistics.median(valid) if valid else None,
            "cells": per_seed,
        })
    return rows


def _as_paths(domains):
    # manifests travel to worker processes as paths, not loaded clouds
    return {k: tuple(str(x) if isinstance(x, Path) else x for x in v) for k, v in domains.items()}


def _avg_off(cells: Mapping[str, dict]) -> Optional[float]:
    off = [c["oa"] for key, c in cells.items() if key.split("->")[0] != key.split("->")[1]]
    return math.fsum(off) / len(off) if off else None
