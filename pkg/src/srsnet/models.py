"""Forecasting models: SRSNet (patch selection + MLP head), a minimal
patch-transformer backbone, and the plugin adapter that feeds either
conventional or selective embeddings into a backbone."""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .datakit import INSTANCE_NORM_EPS
from .srs import SelectionTrace, SRSModule, SrsConfig
from .substrate import ParamStore

ABLATIONS = ("full", "no_selective", "no_reassembly", "no_fusion", "no_srs")


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    patch_size: int = 16
    patch_stride: Optional[int] = None
    embed_dim: int = 128
    scorer_hidden: int = 128
    scorer_layers: int = 2
    head_hidden: int = 512  # 0 -> pure linear head
    dropout: float = 0.1
    fusion_init: float = 0.0
    ablation: str = "full"
    encoder_layers: int = 2
    encoder_heads: int = 4

    def srs_config(self) -> SrsConfig:
        if self.ablation not in ABLATIONS:
            raise ValueError(
                f"unknown ablation {self.ablation!r}; valid: {', '.join(ABLATIONS)}"
            )
        return SrsConfig(
            patch_size=self.patch_size,
            patch_stride=self.patch_stride,
            embed_dim=self.embed_dim,
            scorer_hidden=self.scorer_hidden,
            scorer_layers=self.scorer_layers,
            fusion_init=self.fusion_init,
            use_selective=self.ablation != "no_selective",
            use_reassembly=self.ablation != "no_reassembly",
            use_fusion=self.ablation != "no_fusion",
            conventional_only=self.ablation == "no_srs",
        )


def instance_normalize(x: Tensor) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """Per-row z-score over the time axis (population std + eps guard)."""
    mean = x.mean(dim=-1, keepdim=True)
    std = x.std(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / (std + INSTANCE_NORM_EPS), (mean, std)


def denormalize(yn: Tensor, stats: tuple[Tensor, Tensor]) -> Tensor:
    mean, std = stats
    return yn * (std + INSTANCE_NORM_EPS) + mean


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared errors over all elements."""
    if pred.shape != target.shape:
        raise ValueError(
            f"shape mismatch: predictions {tuple(pred.shape)} vs targets "
            f"{tuple(target.shape)}"
        )
    return ((pred - target) ** 2).mean()


class ForecastHead(nn.Module):
    """Flatten + at most two linear layers mapping [B, n, d] to [B, horizon]."""

    def __init__(
        self, in_dim: int, horizon: int, hidden: int = 512, dropout: float = 0.1
    ) -> None:
        super().__init__()
        if hidden > 0:
            self.net = nn.Sequential(
                nn.Linear(in_dim, hidden),
                nn.GELU(),
                nn.Dropout(dropout),
                nn.Linear(hidden, horizon),
            )
        else:
            self.net = nn.Sequential(nn.Linear(in_dim, horizon))

    def forward(self, emb: Tensor) -> Tensor:
        return self.net(emb.flatten(1))


class SRSNet(nn.Module):
    """Instance normalization -> SRS embeddings -> flatten -> MLP head ->
    denormalization.  Channels are folded into the batch (channel-independent);
    the head is shared across channels."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.srs = SRSModule(cfg.lookback, cfg.srs_config())
        n = self.srs.geom.num_patches
        self.head = ForecastHead(
            n * cfg.embed_dim, cfg.horizon, cfg.head_hidden, cfg.dropout
        )

    def forward(
        self, x: Tensor, capture_trace: bool = False
    ) -> tuple[Tensor, Optional[SelectionTrace]]:
        """x: [B, N, T] raw values -> ([B, N, horizon], trace)."""
        batch, channels, lookback = x.shape
        rows = x.reshape(batch * channels, lookback)
        normed, stats = instance_normalize(rows)
        emb, trace = self.srs(normed, capture_trace)
        pred = denormalize(self.head(emb), stats)
        return pred.reshape(batch, channels, self.cfg.horizon), trace


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float) -> None:
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        batch, length, dim = x.shape
        qkv = (
            self.qkv(x)
            .reshape(batch, length, 3, self.heads, self.head_dim)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = self.drop(torch.softmax(att, dim=-1))
        out = (att @ v).transpose(1, 2).reshape(batch, length, dim)
        return self.proj(out)


class EncoderBlock(nn.Module):
    """Pre-norm residual block: attention then a 2d-wide feed-forward."""

    def __init__(self, dim: int, heads: int, dropout: float) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, 2 * dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(2 * dim, dim),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop(self.attn(self.norm1(x)))
        x = x + self.drop(self.ff(self.norm2(x)))
        return x


class MiniTransformerEncoder(nn.Module):
    """Stack of pre-norm blocks; output shape equals input shape."""

    def __init__(
        self, dim: int, layers: int = 2, heads: int = 4, dropout: float = 0.1
    ) -> None:
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderBlock(dim, heads, dropout) for _ in range(layers)
        )
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


class PluginForecaster(nn.Module):
    """Backbone adapter: embeddings (selective or conventional-only) feed an
    encoder unchanged in shape, then a flatten + linear decoder."""

    def __init__(
        self, cfg: ModelConfig, embed_source: str = "srs", use_encoder: bool = True
    ) -> None:
        super().__init__()
        if embed_source not in ("srs", "conventional"):
            raise ValueError("embed_source must be 'srs' or 'conventional'")
        self.cfg = cfg
        srs_cfg = cfg.srs_config()
        srs_cfg.conventional_only = embed_source == "conventional"
        self.srs = SRSModule(cfg.lookback, srs_cfg)
        n = self.srs.geom.num_patches
        self.encoder = (
            MiniTransformerEncoder(
                cfg.embed_dim, cfg.encoder_layers, cfg.encoder_heads, cfg.dropout
            )
            if use_encoder
            else None
        )
        self.decoder = nn.Linear(n * cfg.embed_dim, cfg.horizon)

    def forward(
        self, x: Tensor, capture_trace: bool = False
    ) -> tuple[Tensor, Optional[SelectionTrace]]:
        batch, channels, lookback = x.shape
        rows = x.reshape(batch * channels, lookback)
        normed, stats = instance_normalize(rows)
        emb, trace = self.srs(normed, capture_trace)
        if self.encoder is not None:
            emb = self.encoder(emb)
        pred = denormalize(self.decoder(emb.flatten(1)), stats)
        return pred.reshape(batch, channels, self.cfg.horizon), trace


def build_variant(name: str, cfg: ModelConfig) -> SRSNet:
    """SRSNet with one component removed; 'full' keeps everything and 'no_srs'
    is the conventional patch-embedding MLP baseline."""
    if name not in ABLATIONS:
        raise ValueError(f"unknown variant {name!r}; valid: {', '.join(ABLATIONS)}")
    variant_cfg = ModelConfig(**{**asdict(cfg), "ablation": name})
    return SRSNet(variant_cfg)


# -- checkpoint format: flat binary of named float32 params + JSON manifest --

CHECKPOINT_FILE = "checkpoint.bin"
MANIFEST_FILE = "manifest.json"


def save_checkpoint(
    directory: str,
    model: nn.Module,
    *,
    config_hash: str = "",
    seed: int = 0,
    step_count: int = 0,
    extra: Optional[dict] = None,
) -> None:
    """Write little-endian float32 parameters plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    store = ParamStore.from_module(model)
    entries = []
    with open(os.path.join(directory, CHECKPOINT_FILE), "wb") as fh:
        for name, param in store.items():
            data = param.detach().to(torch.float32).cpu().numpy()
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
            entries.append({"name": name, "shape": list(data.shape)})
    geom = None
    srs = getattr(model, "srs", None)
    if srs is not None:
        geom = asdict(srs.geom)
    manifest = {
        "config_hash": config_hash,
        "geometry": geom,
        "seed": seed,
        "step_count": step_count,
        "params": entries,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, MANIFEST_FILE), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(os.path.join(directory, MANIFEST_FILE)) as fh:
        manifest = json.load(fh)
    params: dict[str, np.ndarray] = {}
    with open(os.path.join(directory, CHECKPOINT_FILE), "rb") as fh:
        while True:
            raw = fh.read(4)
            if not raw:
                break
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            params[name] = data.copy()
    return params, manifest


def load_into(model: nn.Module, directory: str) -> dict:
    """Copy checkpoint parameters into a model; shapes must match."""
    params, manifest = load_checkpoint(directory)
    store = ParamStore.from_module(model)
    for name in store.names():
        if name not in params:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        store.load_(name, torch.from_numpy(params[name]))
    return manifest
