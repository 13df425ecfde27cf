"""Point-cloud spatial primitives: normalisation, FPS, neighbourhoods, patches, augmentation.

Distances are evaluated in float64 as ``dx*dx + dy*dy + dz*dz`` so that every
routine (and the brute-force oracles in the tests) sees bit-identical values.
All randomness comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

UP_AXIS = 2


class GeometryError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    labels: Optional[np.ndarray] = None
    category: Optional[int] = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise GeometryError(f"points must be V x 3, got {self.points.shape}")
        if len(self.points) < 1:
            raise GeometryError("a point cloud needs at least one vertex")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.points),):
                raise GeometryError(
                    f"{len(self.labels)} labels for {len(self.points)} vertices"
                )

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx: np.ndarray) -> "PointCloud":
        labels = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], labels, self.category)


@dataclass
class PatchSet:
    centroids: np.ndarray          # P x 3
    centroid_indices: np.ndarray   # P
    samples: np.ndarray            # P x S x 3
    sample_indices: np.ndarray     # P x S
    mask: np.ndarray               # P, True = kept
    radius: Optional[float] = None
    k: Optional[int] = None

    @property
    def num_patches(self) -> int:
        return len(self.centroid_indices)

    @property
    def num_samples(self) -> int:
        return self.sample_indices.shape[1]


def _sqdist(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    d = p - c
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def barycenter(points: np.ndarray) -> np.ndarray:
    """Exactly rounded mean, independent of vertex order."""
    p = np.asarray(points, dtype=np.float64)
    n = len(p)
    return np.array([math.fsum(p[:, a]) / n for a in range(3)])


def normalize_shape(pc: PointCloud) -> PointCloud:
    """Centre at the barycentre and scale the bounding-box diagonal to 1."""
    p = np.asarray(pc.points, dtype=np.float64)
    diag = float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))
    if diag == 0.0:
        raise GeometryError("cannot normalise a cloud whose points all coincide")
    out = (p - barycenter(p)) / diag
    return PointCloud(out, pc.labels, pc.category)


def fps_seed(points: np.ndarray) -> int:
    """Vertex farthest from the barycentre; ties by (x, y, z) then index."""
    d = _sqdist(points, barycenter(points))
    cand = np.flatnonzero(d == d.max())
    if len(cand) == 1:
        return int(cand[0])
    p = points[cand]
    order = np.lexsort((cand, p[:, 2], p[:, 1], p[:, 0]))
    return int(cand[order[0]])


def fps(points: np.ndarray, num: int, seed_index: Optional[int] = None) -> np.ndarray:
    """Greedy farthest point sampling of ``num`` vertex indices.

    Each new index maximises the distance to the already chosen set; ties
    go to the lowest index and chosen vertices are never picked twice.
    """
    points = np.asarray(points)
    v = len(points)
    if num > v:
        raise GeometryError(f"cannot pick {num} centroids from {v} vertices")
    if num < 1:
        raise GeometryError("need at least one centroid")
    first = fps_seed(points) if seed_index is None else int(seed_index)
    chosen = np.empty(num, dtype=np.int64)
    chosen[0] = first
    mind = _sqdist(points, points[first])
    mind[first] = -1.0
    for i in range(1, num):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        np.minimum(mind, _sqdist(points, points[nxt]), out=mind)
        mind[chosen[: i + 1]] = -1.0
    return chosen


def _order_by_distance(d2: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return idx[np.argsort(d2[idx], kind="stable")]


def ball_query(points: np.ndarray, centroid_index: int, radius: float) -> np.ndarray:
    """Indices within ``radius`` of the centroid, nearest first (ties by index)."""
    d2 = _sqdist(points, points[centroid_index])
    inside = np.flatnonzero(d2 <= radius * radius)
    return _order_by_distance(d2, inside)


def knn(points: np.ndarray, centroid_index: int, k: int) -> np.ndarray:
    """The ``k`` nearest indices to the centroid (ties by index)."""
    if not 1 <= k <= len(points):
        raise GeometryError(f"k={k} outside [1, {len(points)}]")
    d2 = _sqdist(points, points[centroid_index])
    return np.argsort(d2, kind="stable")[:k]


def resample_patch(
    neighbors: np.ndarray, num_samples: int, mode: str = "eval", rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Pick ``num_samples`` indices from a neighbourhood.

    Train mode draws uniformly with replacement. Eval mode is deterministic:
    short neighbourhoods are cycled from the start, longer ones are strided
    evenly so the sample spans the whole patch, keeping stored order.
    """
    neighbors = np.asarray(neighbors)
    n = len(neighbors)
    if n == 0:
        raise GeometryError("empty neighbourhood")
    if mode == "train":
        if rng is None:
            raise GeometryError("train-mode resampling needs an rng")
        return neighbors[rng.integers(0, n, size=num_samples)]
    if mode != "eval":
        raise GeometryError(f"unknown mode {mode!r}")
    if n < num_samples:
        return neighbors[np.arange(num_samples) % n]
    return neighbors[(np.arange(num_samples) * n) // num_samples]


def patch_mask(num_patches: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Keep each patch with probability ``1 - rate``; redraw if none survive."""
    if not 0 <= rate < 1:
        raise GeometryError(f"mask rate must lie in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(num_patches, dtype=bool)
    while True:
        keep = rng.random(num_patches) >= rate
        if keep.any():
            return keep


def extract_patches(
    pc: PointCloud,
    num_patches: int,
    num_samples: int,
    radius: Optional[float] = None,
    k: Optional[int] = None,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> PatchSet:
    """FPS centroids, then ball query (``radius``) or kNN (``k``), then resampling."""
    if (radius is None) == (k is None):
        raise GeometryError("give exactly one of radius or k")
    pts = pc.points
    centers = fps(pts, num_patches)
    sample_idx = np.empty((num_patches, num_samples), dtype=np.int64)
    for i, c in enumerate(centers):
        nb = ball_query(pts, c, radius) if radius is not None else knn(pts, c, k)
        sample_idx[i] = resample_patch(nb, num_samples, mode, rng)
    return PatchSet(
        centroids=pts[centers],
        centroid_indices=centers,
        samples=pts[sample_idx],
        sample_indices=sample_idx,
        mask=np.ones(num_patches, dtype=bool),
        radius=radius,
        k=k,
    )


@dataclass
class AugmentConfig:
    jitter_sigma: float = 1e-2
    rotate: bool = True
    scale_range: Optional[tuple[float, float]] = (0.8, 1.2)
    translate: Optional[float] = None   # set to 0.1 for segmentation

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(jitter_sigma=0.0, rotate=False, scale_range=None, translate=None)


def rotation_about_up(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def augment(pc: PointCloud, rng: np.random.Generator, config: Optional[AugmentConfig] = None) -> PointCloud:
    """normalise -> jitter -> rotate about +z -> scale -> optional translation."""
    config = config or AugmentConfig()
    p = normalize_shape(pc).points.astype(np.float64)
    if config.jitter_sigma > 0:
        p = p + rng.normal(0.0, config.jitter_sigma, size=p.shape)
    if config.rotate:
        p = p @ rotation_about_up(rng.uniform(0.0, 2 * math.pi)).T
    if config.scale_range is not None:
        lo, hi = config.scale_range
        p = p * rng.uniform(lo, hi)
    if config.translate:
        p = p + rng.uniform(-config.translate, config.translate, size=3)
    return PointCloud(p, pc.labels, pc.category)

