"""``patchmixer`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Outputs go to ``--out``; without it, to ``$PATCHMIXER_OUT/<command>`` (or
``./runs/<command>``). Every run writes its fully resolved configuration
next to its outputs.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import selftest
from .autodiff.tensor import NonFiniteError
from .checkpoint import CheckpointError
from .config import BackboneConfig, ConfigError, HeadConfig, RunConfig, TrainConfig, dump_ini, load_ini
from .data.benchmark import DEFAULT_DOMAINS, BenchmarkConfig, discover, make_benchmark
from .data.io import FormatError, read_manifest
from .data.synth import CATEGORIES, DomainSpec
from .desk import desk_config
from .geometry import AugmentConfig, GeometryError
from .metrics import REPORT_FIELDS
from .training import TrainingDiverged, ablation_run, evaluate, parse_axes, train, transfer_grid

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "PATCHMIXER_OUT"
RESOLVED_NAME = "resolved.ini"

PRESETS = {
    "full": lambda: TrainConfig(),
    "desk": desk_config,
    "segmentation": lambda: TrainConfig(
        task="segmentation", backbone=BackboneConfig.segmentation(),
        head=HeadConfig(num_classes=8), augment=AugmentConfig(translate=0.1),
    ),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / command


# -- config resolution ---------------------------------------------------------------

def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(args) -> RunConfig:
    """Preset, then INI file, then command-line overrides."""
    base = PRESETS[args.preset]()
    run = load_ini(args.config, base) if args.config else RunConfig(train=base)
    changes = {}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("seed", "seed")):
        if getattr(args, flag, None) is not None:
            changes[key] = getattr(args, flag)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        changes[key.strip()] = _coerce(raw.strip())
    if changes:
        try:
            run.train = run.train.replace(**changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return run


def write_resolved(run: RunConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESOLVED_NAME
    path.write_text(dump_ini(run), encoding="utf-8")
    return path


def _data_path(explicit: Optional[str], run: RunConfig, key: str) -> Path:
    if explicit:
        return Path(explicit)
    if key in run.data:
        root = Path(run.data.get("root", "."))
        return root / run.data[key]
    raise UsageError(f"no --data given and no [data] {key} in the config")


def _check_classes(run: RunConfig, manifest_path: Path):
    m = read_manifest(manifest_path)
    if run.train.task == "classification" and m.num_classes > run.train.head.num_classes:
        raise FormatError(
            f"{manifest_path} has {m.num_classes} classes but the model predicts {run.train.head.num_classes}"
        )
    return m


# -- commands ------------------------------------------------------------------------

def load_domain_specs(path) -> tuple:
    cp = configparser.ConfigParser(interpolation=None)
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"domain spec file not found: {path}")
    specs = []
    allowed = {"partiality", "noise", "density", "pose_jitter"}
    for name in cp.sections():
        extra = set(cp[name]) - allowed
        if extra:
            raise ConfigError(f"[{name}] unknown keys {sorted(extra)}")
        try:
            specs.append(DomainSpec(name, **{k: float(v) for k, v in cp[name].items()}))
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    if not specs:
        raise ConfigError(f"{path}: no domains defined")
    return tuple(specs)


def cmd_gen_data(args) -> int:
    classes = tuple(c.strip() for c in args.classes.split(",")) if args.classes else CATEGORIES
    unknown = set(classes) - set(CATEGORIES)
    if unknown:
        raise UsageError(f"unknown classes {sorted(unknown)}; choose from {CATEGORIES}")
    domains = load_domain_specs(args.domains) if args.domains else DEFAULT_DOMAINS
    cfg = BenchmarkConfig(
        classes=classes, per_class=args.per_class, domains=domains, points_per_shape=args.points,
        train_fraction=args.train_fraction, seed=args.seed, global_part_ids=args.global_part_ids,
    )
    out = out_dir(args, "data")
    try:
        bench = make_benchmark(cfg, out, force=args.force)
    except FileExistsError as exc:
        print(f"error: {exc}; pass --force to overwrite", file=sys.stderr)
        return EXIT_DATA
    resolved = {
        "classes": list(classes), "per_class": cfg.per_class, "points_per_shape": cfg.points_per_shape,
        "train_fraction": cfg.train_fraction, "seed": cfg.seed, "global_part_ids": cfg.global_part_ids,
        "domains": [dataclasses.asdict(d) for d in domains],
    }
    (out / "benchmark.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    for path in bench.manifests.values():
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    run = resolve_config(args)
    data = _data_path(args.data, run, "train")
    _check_classes(run, data)
    out = out_dir(args, "train")
    run.data.setdefault("train", str(data))
    write_resolved(run, out)

    def report(rec):
        print(json.dumps(rec, sort_keys=True), flush=True)

    train(run.train, data, out, resume=args.resume, on_epoch=report if not args.quiet else None)
    print(out / "model.pmx")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        print(f"error: checkpoint not found: {ckpt}", file=sys.stderr)
        return EXIT_DATA
    data = Path(args.data)
    out = out_dir(args, "eval")
    result = evaluate(ckpt, data)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.report.to_json() + "\n", encoding="utf-8")
    (out / "eval.json").write_text(json.dumps({"ckpt": str(ckpt), "data": str(data)}, sort_keys=True) + "\n")
    if args.dump_embeddings:
        write_embeddings(out / "embeddings.csv", result.embeddings, result.targets if len(result.targets) == len(result.embeddings) else None)
    print(result.report.to_json())
    return EXIT_OK


def write_embeddings(path: Path, emb: np.ndarray, labels=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ([] if labels is None else ["label"]) + [f"f{i}" for i in range(emb.shape[1])]
        w.writerow(head)
        for i, row in enumerate(emb):
            w.writerow(([] if labels is None else [int(labels[i])]) + [repr(float(v)) for v in row])


def _domains_from_dir(path) -> dict:
    bench = discover(path)
    return {d: (bench.manifest(d, "train"), bench.manifest(d, "test")) for d in bench.domains}


def _write_table(rows: list, out: Path, stem: str, fields: list) -> None:
    (out / f"{stem}.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    with open(out / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fields})


def cmd_grid(args) -> int:
    run = resolve_config(args)
    domains = _domains_from_dir(args.domains)
    out = out_dir(args, "grid")
    run.data["root"] = str(args.domains)
    write_resolved(run, out)
    res = transfer_grid(domains, run.train, out)
    _write_table(res.rows(), out, "grid", ["train", "test", *REPORT_FIELDS])
    summary = [
        {"train": s.train_domain, "same_domain": s.same_domain, "avg_tl": s.avg_tl, **{f"to_{k}": v for k, v in s.off_domain.items()}}
        for s in res.summary()
    ]
    fields = ["train", "same_domain", "avg_tl"] + sorted({k for s in summary for k in s if k.startswith("to_")})
    _write_table(summary, out, "summary", fields)
    for s in summary:
        print(json.dumps(s, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = resolve_config(args)
    axes = parse_axes(args.axes)
    domains = _domains_from_dir(args.domains)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = out_dir(args, "ablate")
    run.data["root"] = str(args.domains)
    write_resolved(run, out)
    (out / "axes.json").write_text(json.dumps({"axes": axes, "seeds": seeds}, sort_keys=True) + "\n")
    rows = ablation_run(run.train, axes, domains, seeds, out, jobs=args.jobs)
    flat = [{k: v for k, v in r.items() if k != "cells"} for r in rows]
    for r in flat:
        r["avg_tl"] = ";".join(f"{v:.6f}" for v in r["avg_tl"] if v is not None)
        r["seeds"] = ";".join(str(s) for s in r["seeds"])
    _write_table(rows, out, "ablation_full", ["arm"])
    _write_table(flat, out, "ablation", ["arm", *axes, "seeds", "avg_tl", "median_avg_tl"])
    for r in flat:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def cmd_selftest(args) -> int:
    groups = args.groups.split(",") if args.groups else None
    if groups:
        unknown = set(groups) - set(selftest.GROUPS)
        if unknown:
            raise UsageError(f"unknown groups {sorted(unknown)}; choose from {sorted(selftest.GROUPS)}")
    return EXIT_OK if selftest.run(groups) else EXIT_NUMERIC


# -- parser --------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="INI file with [model] [train] [data] [eval] sections")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full", help="base configuration")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, e.g. backbone.depth=2")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="patchmixer", description="Point-cloud classification and segmentation pipeline")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic multi-domain benchmark")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", help=f"comma-separated subset of {','.join(CATEGORIES)}")
    p.add_argument("--per-class", type=int, default=100, dest="per_class")
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--train-fraction", type=float, default=0.7, dest="train_fraction")
    p.add_argument("--domains", help="INI file, one section per domain")
    p.add_argument("--global-part-ids", action="store_true", dest="global_part_ids")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    _add_config_flags(p)
    p.add_argument("--data", help="training manifest")
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--dump-embeddings", action="store_true", dest="dump_embeddings")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="train per domain, test on every domain")
    _add_config_flags(p)
    p.add_argument("--domains", required=True, help="directory of <domain>_train/test.txt manifests")
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ablate", help="transfer grid for every arm of an ablation")
    _add_config_flags(p)
    p.add_argument("--axes", required=True, help='e.g. "TM=on,off;Att=on,off"')
    p.add_argument("--domains", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("selftest", help="gradient, invariance and metric checks")
    p.add_argument("--groups", help=f"comma-separated subset of {','.join(selftest.GROUPS)}")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, CheckpointError, GeometryError, FileNotFoundError, FileExistsError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
