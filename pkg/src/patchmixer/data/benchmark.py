"""Seeded multi-domain synthetic benchmark written to disk as files + manifests."""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import DatasetManifest, save_cloud, write_manifest
from ..geometry import PointCloud
from .synth import CATEGORIES, PART_NAMES, DomainSpec, apply_domain, synth_shape

DEFAULT_DOMAINS = (
    DomainSpec("clean", partiality=0.0, noise=0.0, density=1.0, pose_jitter=0.0),
    DomainSpec("scan", partiality=0.3, noise=0.02, density=0.6, pose_jitter=0.3),
)


@dataclass
class BenchmarkConfig:
    classes: tuple = CATEGORIES
    per_class: int = 100
    domains: tuple = DEFAULT_DOMAINS
    points_per_shape: int = 1024
    train_fraction: float = 0.7
    seed: int = 0
    fmt: str = "pcb"
    global_part_ids: bool = False   # offset part labels so every (class, part) is distinct

    def part_offsets(self) -> dict:
        offsets, total = {}, 0
        for cat in self.classes:
            offsets[cat] = total
            total += len(PART_NAMES[cat])
        return offsets

    def split_sizes(self) -> tuple[int, int]:
        n_train = int(round(self.per_class * self.train_fraction))
        return n_train, self.per_class - n_train


@dataclass
class Benchmark:
    root: Path
    manifests: dict = field(default_factory=dict)   # (domain, split) -> path

    def manifest(self, domain: str, split: str) -> Path:
        return self.manifests[(domain, split)]

    @property
    def domains(self) -> list[str]:
        return sorted({d for d, _ in self.manifests})


def manifest_name(domain: str, split: str) -> str:
    return f"{domain}_{split}.txt"


def make_benchmark(config: BenchmarkConfig, out_dir, force: bool = False) -> Benchmark:
    """Write every shape and one manifest per (domain, split).

    Shape ``i`` of class ``c`` in domain ``d`` uses the RNG stream
    ``(seed, d, c, i)``, so output is a pure function of the config.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"{out} is not empty")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    n_train, _ = config.split_sizes()
    offsets = config.part_offsets() if config.global_part_ids else None
    bench = Benchmark(out)
    for d_idx, spec in enumerate(config.domains):
        entries = {"train": [], "test": []}
        for split in entries:
            (out / spec.name / split).mkdir(parents=True, exist_ok=True)
        for c_idx, cat in enumerate(config.classes):
            for i in range(config.per_class):
                rng = np.random.default_rng([config.seed, d_idx, c_idx, i])
                pc = apply_domain(synth_shape(cat, config.points_per_shape, rng), spec, rng)
                if offsets is not None:
                    pc = PointCloud(pc.points, pc.labels + offsets[cat])
                split = "train" if i < n_train else "test"
                rel = f"{spec.name}/{split}/{cat}_{i:04d}.{config.fmt}"
                save_cloud(pc, out / rel)
                entries[split].append((rel, c_idx))
        for split, rows in entries.items():
            m = DatasetManifest(spec.name, list(config.classes), split, rows, out)
            path = out / manifest_name(spec.name, split)
            write_manifest(m, path)
            bench.manifests[(spec.name, split)] = path
    return bench


def discover(root) -> Benchmark:
    """Find ``<domain>_{train,test}.txt`` manifest pairs in a directory."""
    root = Path(root)
    bench = Benchmark(root)
    for path in sorted(root.glob("*_train.txt")):
        domain = path.name[: -len("_train.txt")]
        test = root / manifest_name(domain, "test")
        if test.exists():
            bench.manifests[(domain, "train")] = path
            bench.manifests[(domain, "test")] = test
    if not bench.manifests:
        raise FileNotFoundError(f"no <domain>_train.txt / <domain>_test.txt pairs in {root}")
    return bench
