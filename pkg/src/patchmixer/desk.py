"""The desk-scale transfer benchmark: data recipe and model configuration.

Shared by the ``desk`` CLI preset, the experiment scripts and the acceptance
tests so that all three measure the same thing.
"""

from __future__ import annotations

from pathlib import Path

from .config import BackboneConfig, HeadConfig, TrainConfig
from .data.benchmark import Benchmark, BenchmarkConfig, discover, make_benchmark

BENCHMARK = BenchmarkConfig(per_class=100, points_per_shape=1024, train_fraction=0.7, seed=0)
ARMS = {"attentive": "attentive", "vanilla": "vanilla", "channel-only": "none"}


def desk_config(seed: int = 0, token_mixer: str = "attentive", **overrides) -> TrainConfig:
    cfg = TrainConfig(
        epochs=50, batch_size=32, seed=seed,
        backbone=BackboneConfig.desk(token_mixer=token_mixer),
        head=HeadConfig(num_classes=len(BENCHMARK.classes)),
    )
    return cfg.replace(**overrides) if overrides else cfg


def ensure_benchmark(root, config: BenchmarkConfig = BENCHMARK) -> Benchmark:
    """Reuse the corpus under ``root`` if present, else generate it."""
    root = Path(root)
    if root.is_dir() and any(root.glob("*_train.txt")):
        return discover(root)
    return make_benchmark(config, root)


def grid_domains(bench: Benchmark) -> dict:
    return {d: (bench.manifest(d, "train"), bench.manifest(d, "test")) for d in bench.domains}
