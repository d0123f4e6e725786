"""Selective representation space: learnable patch selection and reordering.

The non-differentiable argmax/argsort decisions are made on strictly positive
scores; the chosen values are then multiplied by ``score * detach(1/score)``,
a factor that is exactly 1 in exact arithmetic (within 1 ulp in float32), so
the forward pass equals a plain gather while the backward pass routes
``<upstream, selected values> / score`` into each used score.  Unused scores
receive exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .patching import PatchGeometry, adjacent_patches, candidate_patches, geometry, pad

SCORE_FLOOR = 1e-4


class PatchScorer(nn.Module):
    """MLP over raw patch values emitting strictly positive scores.

    Outputs pass through softplus plus a small floor: the passthrough factors
    divide by scores, so zero or negative scores would produce non-finite or
    sign-flipped gradients.
    """

    def __init__(
        self,
        patch_size: int,
        num_outputs: int,
        hidden_dim: int = 128,
        num_hidden: int = 2,
    ) -> None:
        super().__init__()
        if num_hidden < 1:
            layers: list[nn.Module] = [nn.Linear(patch_size, num_outputs)]
        else:
            layers = [nn.Linear(patch_size, hidden_dim), nn.GELU()]
            for _ in range(num_hidden - 1):
                layers += [nn.Linear(hidden_dim, hidden_dim), nn.GELU()]
            layers.append(nn.Linear(hidden_dim, num_outputs))
        self.net = nn.Sequential(*layers)

    def forward(self, patches: Tensor) -> Tensor:
        return F.softplus(self.net(patches)) + SCORE_FLOOR


def argmax_lowest(scores: Tensor, dim: int) -> Tensor:
    """Index of the maximum along ``dim``; ties resolve to the lowest index."""
    size = scores.shape[dim]
    max_vals = scores.amax(dim=dim, keepdim=True)
    shape = [1] * scores.dim()
    shape[dim] = size
    position = torch.arange(size, device=scores.device).reshape(shape)
    masked = torch.where(scores == max_vals, position, torch.full_like(position, size))
    return masked.amin(dim=dim)


def argsort_stable(scores: Tensor, dim: int = -1) -> Tensor:
    """Ascending argsort; equal scores keep their original order."""
    return torch.sort(scores, dim=dim, stable=True).indices


def passthrough_select(
    values: Tensor, scores: Tensor, indices: Tensor, dim: int = 1
) -> Tensor:
    """Gather ``values`` at ``indices`` along ``dim`` with gradient passthrough.

    values:  [B, K, p] items along ``dim`` (must be 1)
    scores:  [B, K] one score per item, or [B, K, m] one score per item per
             sampling slot
    indices: [B, m] selections along ``dim``

    The forward output equals the plain gather (the score factor is 1 within
    1 ulp); backward delivers ``<upstream_j, value_j> / score_j`` to each used
    score and the gathered gradient to the selected values.
    """
    if dim != 1 or values.dim() != 3:
        raise ValueError("passthrough_select expects [B, items, p] values, dim=1")
    if not bool((scores > 0).all()):
        raise ValueError("passthrough_select requires strictly positive scores")
    if scores.dim() == values.dim():
        # per-slot scores: entry (b, j) reads scores[b, indices[b, j], j]
        selected_scores = torch.take_along_dim(
            scores, indices.unsqueeze(1), dim=1
        ).squeeze(1)
    else:
        selected_scores = torch.take_along_dim(scores, indices, dim=1)
    gathered = torch.take_along_dim(values, indices.unsqueeze(-1), dim=1)
    factor = selected_scores * (1.0 / selected_scores).detach()
    return gathered * factor.unsqueeze(-1)


def selective_patching(
    candidates: Tensor, scorer: PatchScorer
) -> tuple[Tensor, Tensor, Tensor]:
    """Choose one of K candidate patches per sampling slot (with replacement).

    candidates: [B, K, p]
    returns (selected [B, n, p], indices [B, n], selection scores [B, n])

    The scorer emits n scores per candidate; slot j takes the candidate with
    the highest slot-j score (ties to the lowest index).
    """
    scores = scorer(candidates)  # [B, K, n]
    indices = argmax_lowest(scores, dim=1)  # [B, n]
    selected = passthrough_select(candidates, scores, indices, dim=1)
    picked_scores = torch.take_along_dim(scores, indices.unsqueeze(1), dim=1).squeeze(1)
    return selected, indices, picked_scores


def dynamic_reassembly(
    selected: Tensor, scorer: PatchScorer
) -> tuple[Tensor, Tensor]:
    """Reorder selected patches by ascending scorer output (stable ties).

    selected: [B, n, p]
    returns (reordered [B, n, p], order [B, n]); the output rows are an exact
    permutation of the input rows per sample.
    """
    scores = scorer(selected).squeeze(-1)  # [B, n]
    order = argsort_stable(scores, dim=1)
    reordered = passthrough_select(selected, scores, order, dim=1)
    return reordered, order


def adaptive_fusion(
    conventional_emb: Tensor, selective_emb: Tensor, fusion_logits: Tensor
) -> Tensor:
    """Elementwise convex combination sigmoid(logits) * conventional +
    (1 - sigmoid(logits)) * selective; logits are [n, d], broadcast over batch."""
    if conventional_emb.shape != selective_emb.shape:
        raise ValueError(
            f"embedding shapes differ: {tuple(conventional_emb.shape)} vs "
            f"{tuple(selective_emb.shape)}"
        )
    if fusion_logits.shape != conventional_emb.shape[-2:]:
        raise ValueError(
            f"fusion logits {tuple(fusion_logits.shape)} do not match embedding "
            f"trailing dims {tuple(conventional_emb.shape[-2:])}"
        )
    alpha = torch.sigmoid(fusion_logits)
    return alpha * conventional_emb + (1.0 - alpha) * selective_emb


def sinusoidal_position_embedding(
    length: int, dim: int, dtype: torch.dtype = torch.float32
) -> Tensor:
    """[length, dim] table: pe[pos, 2i] = sin(pos / 10000^(2i/dim)),
    pe[pos, 2i+1] = cos(...); a trailing unpaired column (odd dim) stays zero."""
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    pairs = dim // 2
    if pairs > 0:
        exponents = torch.arange(pairs, dtype=torch.float64) * 2.0 / dim
        angles = pos / torch.pow(torch.tensor(10000.0, dtype=torch.float64), exponents)
        pe[:, 0 : 2 * pairs : 2] = torch.sin(angles)
        pe[:, 1 : 2 * pairs : 2] = torch.cos(angles)
    return pe.to(dtype)


def position_embed(embeddings: Tensor, position: Tensor) -> Tensor:
    """Add the (slot-indexed) position table; identical across batch rows."""
    return embeddings + position


@dataclass
class SelectionTrace:
    """Per-row record of the decisions taken in one forward pass.

    ``selected_starts[b, j]`` is the chosen candidate index for slot j, which
    equals the patch start offset in the padded context.  ``order`` is the
    permutation applied by reassembly; ``scores`` are the selection-time
    scores of the chosen candidates.
    """

    selected_starts: Tensor
    order: Tensor
    scores: Tensor

    def to_records(self, window_origin: int) -> list[dict]:
        out = []
        for ch in range(self.selected_starts.shape[0]):
            out.append(
                {
                    "channel": ch,
                    "window_origin": int(window_origin),
                    "selected_starts": [int(v) for v in self.selected_starts[ch]],
                    "reassembly_order": [int(v) for v in self.order[ch]],
                    "scores": [float(v) for v in self.scores[ch]],
                }
            )
        return out


@dataclass
class SrsConfig:
    patch_size: int = 16
    patch_stride: Optional[int] = None  # defaults to patch_size // 2
    embed_dim: int = 128
    scorer_hidden: int = 128
    scorer_layers: int = 2
    fusion_init: float = 0.0
    use_selective: bool = True
    use_reassembly: bool = True
    use_fusion: bool = True
    conventional_only: bool = False

    def resolved_stride(self) -> int:
        if self.patch_stride is not None and self.patch_stride > 0:
            return self.patch_stride
        return max(self.patch_size // 2, 1)


class SRSModule(nn.Module):
    """Patch selection + reordering + fused embeddings for one context window.

    Input rows are univariate (channels folded into the batch axis upstream);
    ``forward`` maps [B, lookback] to [B, n, d] encoder-ready embeddings.
    All parameters exist in every configuration; disabled pathways simply
    receive no gradient, which keeps checkpoints interchangeable across
    ablation variants.
    """

    def __init__(self, lookback: int, cfg: SrsConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.geom: PatchGeometry = geometry(
            lookback, cfg.patch_size, cfg.resolved_stride()
        )
        n, p, d = self.geom.num_patches, cfg.patch_size, cfg.embed_dim
        self.scorer_select = PatchScorer(p, n, cfg.scorer_hidden, cfg.scorer_layers)
        self.scorer_order = PatchScorer(p, 1, cfg.scorer_hidden, cfg.scorer_layers)
        self.embed_conventional = nn.Linear(p, d)
        self.embed_selective = nn.Linear(p, d)
        self.fusion_logits = nn.Parameter(torch.full((n, d), float(cfg.fusion_init)))
        self.register_buffer("position", sinusoidal_position_embedding(n, d))

    @property
    def embed_dim(self) -> int:
        return self.cfg.embed_dim

    def forward(
        self, x: Tensor, capture_trace: bool = False
    ) -> tuple[Tensor, Optional[SelectionTrace]]:
        geom = self.geom
        rows = x.shape[0]
        padded = pad(x, geom)
        adjacent = adjacent_patches(padded, geom)

        if self.cfg.conventional_only:
            emb = position_embed(self.embed_conventional(adjacent.values), self.position)
            trace = None
            if capture_trace:
                starts = adjacent.starts.unsqueeze(0).expand(rows, -1)
                identity = torch.arange(geom.num_patches).unsqueeze(0).expand(rows, -1)
                trace = SelectionTrace(starts, identity, torch.ones_like(starts, dtype=x.dtype))
            return emb, trace

        if self.cfg.use_selective:
            cands = candidate_patches(padded, geom)
            selected, picked_idx, picked_scores = selective_patching(
                cands.values, self.scorer_select
            )
        else:
            selected = adjacent.values
            picked_idx = adjacent.starts.unsqueeze(0).expand(rows, -1)
            picked_scores = torch.ones_like(picked_idx, dtype=x.dtype)

        if self.cfg.use_reassembly:
            assembled, order = dynamic_reassembly(selected, self.scorer_order)
        else:
            assembled = selected
            order = torch.arange(geom.num_patches).unsqueeze(0).expand(rows, -1)

        emb_selective = self.embed_selective(assembled)
        if self.cfg.use_fusion:
            emb_conventional = self.embed_conventional(adjacent.values)
            fused = adaptive_fusion(emb_conventional, emb_selective, self.fusion_logits)
        else:
            fused = emb_selective
        emb = position_embed(fused, self.position)

        trace = None
        if capture_trace:
            trace = SelectionTrace(
                picked_idx.detach(), order.detach(), picked_scores.detach()
            )
        return emb, trace
