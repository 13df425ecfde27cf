"""PatchMixer backbone and task heads.

Tensors are channel-last throughout: patch samples are ``B x P x S x C`` and
tokens ``B x P x F``. Batch norm inside the patch embedding normalises each
channel over (B, P, S); the attention gates normalise each patch channel over
(B, F).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import BatchNorm, Dropout, LayerNorm, Linear, Module, PatchMix
from .autodiff.tensor import Tensor, no_grad
from .config import BackboneConfig, HeadConfig, POSITIONAL_WIDTH, TrainConfig
from .geometry import (
    AugmentConfig,
    PatchSet,
    PointCloud,
    augment,
    extract_patches,
    normalize_shape,
    patch_mask,
)


def positional_encoding(samples: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """``(x_j - x_i, |x_j - x_i|, x_i)`` for every sample; ``... x S x 7``."""
    samples = np.asarray(samples, dtype=np.float32)
    centroids = np.asarray(centroids, dtype=np.float32)
    rel = samples - centroids[..., None, :]
    dist = np.sqrt((rel * rel).sum(axis=-1, keepdims=True))
    cen = np.broadcast_to(centroids[..., None, :], rel.shape)
    return np.concatenate([rel, dist, cen], axis=-1)


class PatchEmbed(Module):
    """Shared per-sample MLP (linear -> BN -> ReLU blocks) then max over samples."""

    def __init__(self, channels: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.num_blocks = len(channels)
        fin = POSITIONAL_WIDTH
        for i, fout in enumerate(channels):
            self.add_module(f"lin{i}", Linear(fin, fout, rng))
            self.add_module(f"bn{i}", BatchNorm(fout, axis=-1))
            fin = fout

    def forward(self, encodings: Tensor) -> tuple[Tensor, Tensor]:
        x = encodings
        for i in range(self.num_blocks):
            x = getattr(self, f"lin{i}")(x)
            x = getattr(self, f"bn{i}")(x)
            x = F.relu(x)
        tokens, _ = F.max_over_axis(x, axis=-2)
        return x, tokens


class Gate(Module):
    """sigmoid(BN(patch-axis conv)); output entries lie in (0, 1)."""

    def __init__(self, num_patches: int, rng: np.random.Generator):
        super().__init__()
        self.mix = PatchMix(num_patches, rng)
        self.bn = BatchNorm(num_patches, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.bn(self.mix(x)))


class TokenMixer(Module):
    """Pre-norm residual MLP over tokens, optionally gated by patch attention.

    Attentive: ``N = LN(T)``, ``Ht = relu(Lin1(Att1(N) * N))``,
    ``H = Lin2(Att2(Ht) * Ht) + T``. Vanilla drops both gates.
    """

    def __init__(self, num_patches: int, features: int, hidden: int, attention: bool, rng):
        super().__init__()
        self.attention = attention
        self.norm = LayerNorm(features)
        if attention:
            self.att1 = Gate(num_patches, rng)
        self.lin1 = Linear(features, hidden, rng)
        if attention:
            self.att2 = Gate(num_patches, rng)
        self.lin2 = Linear(hidden, features, rng)

    def forward(self, tokens: Tensor) -> Tensor:
        n = self.norm(tokens)
        if self.attention:
            n = self.att1(n) * n
        h = F.relu(self.lin1(n))
        if self.attention:
            h = self.att2(h) * h
        return self.lin2(h) + tokens


class ChannelMixer(Module):
    def __init__(self, features: int, hidden: int, rng):
        super().__init__()
        self.norm = LayerNorm(features)
        self.lin3 = Linear(features, hidden, rng)
        self.lin4 = Linear(hidden, features, rng)

    def forward(self, h: Tensor) -> Tensor:
        return self.lin4(F.relu(self.lin3(self.norm(h)))) + h


class MixerBlock(Module):
    def __init__(self, cfg: BackboneConfig, rng):
        super().__init__()
        self.token: Optional[TokenMixer] = None
        if cfg.token_mixer != "none":
            self.token = TokenMixer(
                cfg.num_patches, cfg.features, cfg.token_hidden, cfg.token_mixer == "attentive", rng
            )
        self.channel = ChannelMixer(cfg.features, cfg.channel_hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        if self.token is not None:
            x = self.token(x)
        return self.channel(x)


@dataclass
class BackboneOutput:
    locals: Tensor     # B x P x S x F
    tokens: Tensor     # B x P x F (after masking)
    mixed: Tensor      # B x P x F
    global_feat: Tensor  # B x F


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.embed = PatchEmbed(cfg.embed_channels, rng)
        for d in range(cfg.depth):
            self.add_module(f"block{d}", MixerBlock(cfg, rng))
        self.final_norm = LayerNorm(cfg.features)

    @property
    def blocks(self) -> list[MixerBlock]:
        return [getattr(self, f"block{d}") for d in range(self.cfg.depth)]

    def forward(self, encodings: Tensor, mask: Optional[np.ndarray] = None) -> BackboneOutput:
        b, p = encodings.shape[:2]
        if mask is None:
            mask = np.ones((b, p), dtype=bool)
        local, tokens = self.embed(encodings)
        if not mask.all():
            tokens = tokens * mask[..., None].astype(tokens.dtype)
        g = tokens
        for block in self.blocks:
            g = block(g)
        g_global = global_aggregate(self.final_norm(g), mask)
        return BackboneOutput(local, tokens, g, g_global)


def global_aggregate(mixed_normed: Tensor, mask: np.ndarray) -> Tensor:
    """Max over the patch axis, restricted to kept patches."""
    out, _ = F.max_over_axis(mixed_normed, axis=1, where=mask[..., None])
    return out


class MLPHeadBlocks(Module):
    """Stack of (linear -> BN -> ReLU -> dropout) blocks."""

    def __init__(self, widths: Sequence[int], fin: int, dropout: float, rng):
        super().__init__()
        self.num_blocks = len(widths)
        for i, fout in enumerate(widths):
            self.add_module(f"lin{i}", Linear(fin, fout, rng))
            self.add_module(f"bn{i}", BatchNorm(fout, axis=-1))
            self.add_module(f"drop{i}", Dropout(dropout))
            fin = fout
        self.out_features = fin

    def forward(self, x: Tensor, rng=None) -> Tensor:
        for i in range(self.num_blocks):
            x = getattr(self, f"lin{i}")(x)
            x = getattr(self, f"bn{i}")(x)
            x = F.relu(x)
            x = getattr(self, f"drop{i}")(x, rng)
        return x


class ClassificationHead(Module):
    def __init__(self, features: int, cfg: HeadConfig, rng):
        super().__init__()
        self.blocks = MLPHeadBlocks(cfg.hidden, features, cfg.dropout, rng)
        self.out = Linear(self.blocks.out_features, cfg.num_classes, rng)

    def forward(self, g: Tensor, rng=None) -> Tensor:
        return self.out(self.blocks(g, rng))


class SegmentationHead(Module):
    def __init__(self, features: int, cfg: HeadConfig, rng):
        super().__init__()
        self.reduce = MLPHeadBlocks([features], 3 * features, cfg.dropout, rng)
        self.blocks = MLPHeadBlocks(cfg.hidden, features, cfg.dropout, rng)
        self.out = Linear(self.blocks.out_features, cfg.num_classes, rng)

    def forward(self, local: Tensor, tokens: Tensor, g: Tensor, rng=None) -> Tensor:
        feats = segmentation_features(local, tokens, g)
        b, p, s, f3 = feats.shape
        x = feats.reshape(b, p * s, f3)
        x = self.reduce(x, rng)
        x = self.blocks(x, rng)
        return self.out(x)


def segmentation_features(local: Tensor, tokens: Tensor, g: Tensor) -> Tensor:
    """Per-sample concatenation [local | patch token | global], ``B x P x S x 3F``."""
    b, p, s, f = local.shape
    tok = F.broadcast_to(tokens.reshape(b, p, 1, f), (b, p, s, f))
    glob = F.broadcast_to(g.reshape(b, 1, 1, f), (b, p, s, f))
    return F.concat([local, tok, glob], axis=-1)


class PatchMixer(Module):
    def __init__(self, backbone: BackboneConfig, head: HeadConfig, task: str, rng: np.random.Generator):
        super().__init__()
        self.task = task
        self.backbone = Backbone(backbone, rng)
        if task == "classification":
            self.head = ClassificationHead(backbone.features, head, rng)
        else:
            self.head = SegmentationHead(backbone.features, head, rng)

    def forward(self, encodings, mask=None, rng=None) -> tuple[Tensor, BackboneOutput]:
        if not isinstance(encodings, Tensor):
            encodings = Tensor(encodings)
        feats = self.backbone(encodings, mask)
        if self.task == "classification":
            return self.head(feats.global_feat, rng), feats
        return self.head(feats.locals, feats.tokens, feats.global_feat, rng), feats


def build_model(config: TrainConfig, rng: Optional[np.random.Generator] = None) -> PatchMixer:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    return PatchMixer(config.backbone, config.head, config.task, rng)


# -- input preparation ---------------------------------------------------------

@dataclass
class PatchBatch:
    encodings: np.ndarray   # B x P x S x 7
    mask: np.ndarray        # B x P
    patches: list           # PatchSet per cloud
    clouds: list            # the (normalised/augmented) clouds the patches index into


def prepare_batch(
    clouds: Sequence[PointCloud],
    cfg: BackboneConfig,
    mode: str,
    rng: Optional[np.random.Generator] = None,
    augment_cfg: Optional[AugmentConfig] = None,
) -> PatchBatch:
    """Normalise (eval) or augment (train), extract patches, and draw masks."""
    encs, masks, patch_sets, used = [], [], [], []
    for pc in clouds:
        if mode == "train":
            pc = augment(pc, rng, augment_cfg)
        else:
            pc = normalize_shape(pc)
        ps: PatchSet = extract_patches(
            pc, cfg.num_patches, cfg.num_samples, radius=cfg.radius, k=cfg.k, mode=mode, rng=rng
        )
        if mode == "train" and cfg.mask_rate > 0:
            ps.mask = patch_mask(cfg.num_patches, cfg.mask_rate, rng)
        encs.append(positional_encoding(ps.samples, ps.centroids))
        masks.append(ps.mask)
        patch_sets.append(ps)
        used.append(pc)
    return PatchBatch(np.stack(encs), np.stack(masks), patch_sets, used)


def forward_classification(
    clouds, config: TrainConfig, model: PatchMixer, mode: str = "eval", rng=None
) -> np.ndarray:
    """Logits for one cloud (``C``) or a list of clouds (``B x C``)."""
    single = isinstance(clouds, PointCloud)
    batch = prepare_batch([clouds] if single else clouds, config.backbone, mode, rng, config.augment)
    model.train(mode == "train")
    with no_grad():
        logits, _ = model(batch.encodings, batch.mask, rng)
    return logits.data[0] if single else logits.data


# -- segmentation label plumbing -------------------------------------------------

def lift_labels(labels: np.ndarray, sample_indices: np.ndarray) -> np.ndarray:
    """Per-(patch, sample) targets, flattened patch-major to length P*S."""
    return np.asarray(labels)[np.asarray(sample_indices)].reshape(-1)


def vertex_vote(
    sample_logits: np.ndarray, sample_indices: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Per-vertex labels from per-sample logits.

    Logits of every occurrence of a vertex are averaged and the argmax taken
    (lowest class on ties). Vertices never sampled copy the label of the
    nearest sampled vertex.
    """
    points = np.asarray(points, dtype=np.float64)
    v = len(points)
    idx = np.asarray(sample_indices).reshape(-1)
    logits = np.asarray(sample_logits, dtype=np.float64).reshape(len(idx), -1)
    sums = np.zeros((v, logits.shape[1]))
    np.add.at(sums, idx, logits)
    counts = np.bincount(idx, minlength=v)
    covered = counts > 0
    labels = np.zeros(v, dtype=np.int64)
    labels[covered] = np.argmax(sums[covered] / counts[covered, None], axis=1)
    missing = np.flatnonzero(~covered)
    if len(missing):
        cov_idx = np.flatnonzero(covered)
        d = ((points[missing, None, :] - points[None, cov_idx, :]) ** 2).sum(axis=-1)
        labels[missing] = labels[cov_idx[np.argmin(d, axis=1)]]
    return labels
