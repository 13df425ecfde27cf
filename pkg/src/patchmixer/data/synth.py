"""Synthetic primitive shapes and domain corruptions.

Each primitive is sampled uniformly over its surface with per-vertex part
labels. A :class:`DomainSpec` then emulates acquisition artefacts: a
half-space crop (partiality), Gaussian noise, a density change, and a small
random tilt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import PointCloud

CATEGORIES = ("sphere", "box", "cylinder", "cone")
PART_NAMES = {
    "sphere": ("upper", "lower"),
    "box": ("+x", "-x", "+y", "-y", "+z", "-z"),
    "cylinder": ("side", "top", "bottom"),
    "cone": ("base", "side"),
}


def _pick_parts(areas, v: int, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(areas, dtype=np.float64)
    return rng.choice(len(w), size=v, p=w / w.sum())


def _sphere(v, rng):
    d = rng.normal(size=(v, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d, (d[:, 2] < 0).astype(np.int64)


def _box(v, rng, dims):
    a, b, c = dims
    # faces: +x, -x, +y, -y, +z, -z
    areas = [b * c, b * c, a * c, a * c, a * b, a * b]
    part = _pick_parts(areas, v, rng)
    u = rng.uniform(-0.5, 0.5, size=(v, 3)) * np.array([a, b, c])
    axis = part // 2
    sign = np.where(part % 2 == 0, 0.5, -0.5)
    u[np.arange(v), axis] = sign * np.array([a, b, c])[axis]
    return u, part


def _disk(n, r, rng):
    rad = r * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * math.pi, size=n)
    return rad * np.cos(th), rad * np.sin(th)


def _cylinder(v, rng, r, h):
    part = _pick_parts([2 * math.pi * r * h, math.pi * r * r, math.pi * r * r], v, rng)
    pts = np.empty((v, 3))
    side = part == 0
    th = rng.uniform(0, 2 * math.pi, size=side.sum())
    pts[side] = np.stack([r * np.cos(th), r * np.sin(th), rng.uniform(-h / 2, h / 2, size=side.sum())], 1)
    for lab, z in ((1, h / 2), (2, -h / 2)):
        sel = part == lab
        x, y = _disk(sel.sum(), r, rng)
        pts[sel] = np.stack([x, y, np.full(sel.sum(), z)], 1)
    return pts, part


def _cone(v, rng, r, h):
    slant = math.hypot(r, h)
    part = _pick_parts([math.pi * r * r, math.pi * r * slant], v, rng)
    pts = np.empty((v, 3))
    base = part == 0
    x, y = _disk(base.sum(), r, rng)
    pts[base] = np.stack([x, y, np.zeros(base.sum())], 1)
    side = ~base
    # lateral area grows linearly with distance from the apex
    t = np.sqrt(rng.uniform(size=side.sum()))
    th = rng.uniform(0, 2 * math.pi, size=side.sum())
    pts[side] = np.stack([r * t * np.cos(th), r * t * np.sin(th), h * (1 - t)], 1)
    return pts, part


def synth_shape(
    category: str, num_points: int, rng: np.random.Generator, dims: Optional[tuple] = None
) -> PointCloud:
    """Uniform surface sample of a primitive with part labels.

    ``dims`` fixes the size parameters (box: a, b, c; cylinder/cone: r, h);
    otherwise they are drawn at random. Spheres always have unit radius.
    """
    if category == "sphere":
        pts, lab = _sphere(num_points, rng)
    elif category == "box":
        dims = dims or tuple(rng.uniform(0.4, 1.0, size=3))
        pts, lab = _box(num_points, rng, dims)
    elif category == "cylinder":
        r, h = dims or (rng.uniform(0.25, 0.5), rng.uniform(0.8, 1.6))
        pts, lab = _cylinder(num_points, rng, r, h)
    elif category == "cone":
        r, h = dims or (rng.uniform(0.35, 0.7), rng.uniform(0.8, 1.6))
        pts, lab = _cone(num_points, rng, r, h)
    else:
        raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")
    return PointCloud(pts, lab)


@dataclass(frozen=True)
class DomainSpec:
    name: str = "clean"
    partiality: float = 0.0     # fraction of points removed by a half-space crop
    noise: float = 0.0          # Gaussian jitter sigma (shape units)
    density: float = 1.0        # output count = round(density * surviving count)
    pose_jitter: float = 0.0    # max tilt angle in radians about a random axis

    def __post_init__(self):
        if not 0 <= self.partiality < 1:
            raise ValueError("partiality must lie in [0, 1)")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.noise < 0 or self.pose_jitter < 0:
            raise ValueError("noise and pose_jitter must be non-negative")


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    C = 1 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def apply_domain(pc: PointCloud, spec: DomainSpec, rng: np.random.Generator) -> PointCloud:
    """Crop, add noise, resample density, tilt; labels follow their points."""
    pts = pc.points.astype(np.float64)
    labels = pc.labels
    v = len(pts)
    keep = np.arange(v)
    if spec.partiality > 0:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        proj = pts @ direction
        n_keep = max(1, v - int(round(spec.partiality * v)))
        keep = np.sort(np.argsort(proj, kind="stable")[:n_keep])
    if spec.density != 1.0:
        n = len(keep)
        target = max(1, int(round(spec.density * n)))
        if target <= n:
            keep = keep[np.sort(rng.choice(n, size=target, replace=False))]
        else:
            extra = keep[rng.integers(0, n, size=target - n)]
            keep = np.concatenate([keep, extra])
    if len(keep) == v and np.array_equal(keep, np.arange(v)) and spec.noise == 0 and spec.pose_jitter == 0:
        return PointCloud(pc.points.copy(), None if labels is None else labels.copy(), pc.category)
    out = pts[keep]
    if spec.noise > 0:
        out = out + rng.normal(0.0, spec.noise, size=out.shape)
    if spec.pose_jitter > 0:
        angle = rng.uniform(-spec.pose_jitter, spec.pose_jitter)
        out = out @ _rotation(rng.normal(size=3), angle).T
    return PointCloud(out, None if labels is None else labels[keep], pc.category)
