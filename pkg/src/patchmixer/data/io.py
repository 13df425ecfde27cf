"""Point-cloud file formats and dataset manifests.

``.xyz``
    ASCII, one ``x y z`` triple per line; optional ``.lbl`` sidecar with one
    integer per line.
``.pcb``
    ``b"PCB1"``, u32 vertex count V, V x 3 little-endian float32, u8 label
    flag, V little-endian u16 labels when the flag is 1, then the CRC32 of
    everything between the magic and the checksum.
manifest
    UTF-8 text; ``# key: value`` header lines (name, classes, split) followed
    by ``relative/path<TAB>label`` entries.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..geometry import GeometryError, PointCloud

PCB_MAGIC = b"PCB1"
MAX_LABEL = 65535


class FormatError(ValueError):
    """A file does not follow its declared format."""


# -- ASCII -------------------------------------------------------------------

def label_path(path) -> Path:
    return Path(path).with_suffix(".lbl")


def load_xyz(path, labels: Optional[bool] = None) -> PointCloud:
    """Read an ``.xyz`` file; the ``.lbl`` sidecar is read when present.

    ``labels=True`` makes the sidecar mandatory, ``False`` ignores it.
    """
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no points")
    pts = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{path}: non-finite coordinate")
    lbl = None
    lpath = label_path(path)
    if labels is True or (labels is None and lpath.exists()):
        lbl = _load_labels(lpath, len(pts))
    return PointCloud(pts.astype(np.float32), lbl)


def _load_labels(path: Path, count: int) -> np.ndarray:
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(int(text))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not an integer label") from None
    if len(values) != count:
        raise FormatError(f"{path}: {len(values)} labels for {count} points")
    arr = np.asarray(values, dtype=np.int64)
    if arr.min() < 0:
        raise FormatError(f"{path}: negative label")
    return arr


def save_xyz(pc: PointCloud, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in pc.points.astype(np.float64):
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    if pc.labels is not None:
        with open(label_path(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{int(v)}\n" for v in pc.labels)


# -- binary --------------------------------------------------------------------

def encode_pcb(pc: PointCloud) -> bytes:
    v = len(pc.points)
    body = [struct.pack("<I", v), pc.points.astype("<f4").tobytes()]
    if pc.labels is None:
        body.append(b"\x00")
    else:
        if pc.labels.min() < 0 or pc.labels.max() > MAX_LABEL:
            raise FormatError("labels must fit in u16")
        body.append(b"\x01")
        body.append(pc.labels.astype("<u2").tobytes())
    payload = b"".join(body)
    return PCB_MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def decode_pcb(buf: bytes, source: str = "<bytes>") -> PointCloud:
    if len(buf) < 4 or buf[:4] != PCB_MAGIC:
        raise FormatError(f"{source}: bad magic")
    if len(buf) < 4 + 4 + 1 + 4:
        raise FormatError(f"{source}: truncated header")
    payload, crc = buf[4:-4], buf[-4:]
    (v,) = struct.unpack_from("<I", payload, 0)
    if v == 0:
        raise FormatError(f"{source}: empty point cloud")
    coord_end = 4 + 12 * v
    if len(payload) < coord_end + 1:
        raise FormatError(f"{source}: truncated (need {coord_end + 1} payload bytes, have {len(payload)})")
    flag = payload[coord_end]
    expected = coord_end + 1 + (2 * v if flag == 1 else 0)
    if flag not in (0, 1):
        raise FormatError(f"{source}: invalid label flag {flag}")
    if len(payload) != expected:
        raise FormatError(f"{source}: payload length {len(payload)} != expected {expected}")
    if zlib.crc32(payload) != struct.unpack("<I", crc)[0]:
        raise FormatError(f"{source}: CRC mismatch")
    pts = np.frombuffer(payload, dtype="<f4", count=3 * v, offset=4).reshape(v, 3).astype(np.float32)
    labels = None
    if flag == 1:
        labels = np.frombuffer(payload, dtype="<u2", count=v, offset=coord_end + 1).astype(np.int64)
    try:
        return PointCloud(pts, labels)
    except GeometryError as exc:
        raise FormatError(f"{source}: {exc}") from None


def save_pcb(pc: PointCloud, path) -> None:
    Path(path).write_bytes(encode_pcb(pc))


def load_pcb(path) -> PointCloud:
    return decode_pcb(Path(path).read_bytes(), str(path))


def load_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix == ".pcb":
        return load_pcb(path)
    if path.suffix == ".xyz":
        return load_xyz(path)
    raise FormatError(f"{path}: unknown point-cloud extension {path.suffix!r}")


def save_cloud(pc: PointCloud, path) -> None:
    path = Path(path)
    if path.suffix == ".pcb":
        save_pcb(pc, path)
    elif path.suffix == ".xyz":
        save_xyz(pc, path)
    else:
        raise FormatError(f"{path}: unknown point-cloud extension {path.suffix!r}")


# -- manifests -------------------------------------------------------------------

@dataclass
class DatasetManifest:
    name: str
    class_names: list
    split: str
    entries: list = field(default_factory=list)   # (relative path, category)
    root: Path = Path(".")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def path_of(self, rel: str) -> Path:
        return self.root / rel

    def validate(self) -> None:
        for rel, cat in self.entries:
            if not 0 <= cat < self.num_classes:
                raise FormatError(f"{self.name}: category {cat} out of range for {rel}")
            if not self.path_of(rel).exists():
                raise FormatError(f"{self.name}: missing file {rel}")

    def load(self) -> list[PointCloud]:
        clouds = []
        for rel, cat in self.entries:
            pc = load_cloud(self.path_of(rel))
            pc.category = cat
            clouds.append(pc)
        return clouds


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = [
        f"# name: {manifest.name}",
        f"# classes: {','.join(manifest.class_names)}",
        f"# split: {manifest.split}",
    ]
    lines += [f"{rel}\t{cat}" for rel, cat in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path, validate: bool = True) -> DatasetManifest:
    path = Path(path)
    header: dict = {}
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
            continue
        rel, sep, cat = line.partition("\t")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'path<TAB>label'")
        try:
            entries.append((rel, int(cat)))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: label {cat!r} is not an integer") from None
    classes = [c for c in header.get("classes", "").split(",") if c]
    if not classes:
        classes = [str(i) for i in range(max(c for _, c in entries) + 1)] if entries else []
    m = DatasetManifest(
        name=header.get("name", path.stem),
        class_names=classes,
        split=header.get("split", "train"),
        entries=entries,
        root=path.parent,
    )
    if validate:
        m.validate()
    return m


def atomic_write_bytes(path, data: bytes) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
