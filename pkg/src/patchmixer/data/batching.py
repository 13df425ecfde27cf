from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from ..geometry import PointCloud
from .io import DatasetManifest


@dataclass
class Batch:
    points: np.ndarray      # B x V x 3
    targets: np.ndarray     # B category indices
    clouds: list            # subsampled PointClouds (labels preserved)
    indices: np.ndarray     # dataset positions of the B shapes


def canonical_subsample(pc: PointCloud, num_points: int) -> np.ndarray:
    """Deterministic indices: lexicographic (x, y, z) sort, then even stride."""
    p = pc.points
    order = np.lexsort((np.arange(len(p)), p[:, 2], p[:, 1], p[:, 0]))
    return order[(np.arange(num_points) * len(p)) // num_points]


def random_subsample(pc: PointCloud, num_points: int, rng: np.random.Generator) -> np.ndarray:
    n = len(pc)
    return rng.choice(n, size=num_points, replace=n < num_points)


def batcher(
    data,
    batch_size: int,
    num_points: int,
    rng: Optional[np.random.Generator] = None,
    mode: str = "eval",
) -> Iterator[Batch]:
    """Mini-batches of shapes resampled to ``num_points`` vertices.

    ``data`` is a manifest or a list of clouds with ``category`` set. Train
    mode shuffles and subsamples at random; eval mode keeps file order and
    subsamples canonically. The last, possibly short, batch is kept.
    """
    clouds: Sequence[PointCloud] = data.load() if isinstance(data, DatasetManifest) else data
    n = len(clouds)
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode batching needs an rng")
        order = rng.permutation(n)
    elif mode == "eval":
        order = np.arange(n)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        subs = []
        for i in idx:
            pc = clouds[i]
            sel = random_subsample(pc, num_points, rng) if mode == "train" else canonical_subsample(pc, num_points)
            subs.append(pc.subset(sel))
        targets = np.array([-1 if pc.category is None else pc.category for pc in subs], dtype=np.int64)
        yield Batch(np.stack([pc.points for pc in subs]), targets, subs, idx)
