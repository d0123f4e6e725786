"""Deterministic patch geometry: padding, adjacent patching, and exhaustive
stride-1 candidate enumeration over a context window."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor


@dataclass(frozen=True)
class PatchGeometry:
    lookback: int
    patch_size: int
    stride: int
    num_patches: int
    num_candidates: int
    padded_length: int


def geometry(lookback: int, patch_size: int, stride: int) -> PatchGeometry:
    """Patch counts for a context of ``lookback`` steps.

    ``num_patches    = ceil((lookback - patch_size) / stride) + 1``
    ``num_candidates = (num_patches - 1) * stride + 1``
    ``padded_length  = patch_size + (num_patches - 1) * stride``
    """
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    if patch_size > lookback:
        raise ValueError(f"patch_size {patch_size} exceeds lookback {lookback}")
    if not 1 <= stride <= patch_size:
        raise ValueError(f"stride {stride} must be in [1, patch_size={patch_size}]")
    n = math.ceil((lookback - patch_size) / stride) + 1
    k = (n - 1) * stride + 1
    padded = patch_size + (n - 1) * stride
    return PatchGeometry(lookback, patch_size, stride, n, k, padded)


@dataclass
class PatchSet:
    """A block of patches plus the start index of each into the padded context.

    ``values`` is [rows, count, patch_size]; for kinds adjacent/candidate every
    patch equals the padded-context slice [start, start + patch_size) exactly.
    """

    values: Tensor
    starts: Tensor
    kind: str


def pad(x: Tensor, geom: PatchGeometry) -> Tensor:
    """Extend [..., lookback] to [..., padded_length] by replicating the last
    observed value per row."""
    if x.shape[-1] != geom.lookback:
        raise ValueError(
            f"expected context of length {geom.lookback}, got {x.shape[-1]}"
        )
    extra = geom.padded_length - geom.lookback
    if extra == 0:
        return x
    tail = x[..., -1:].expand(*x.shape[:-1], extra)
    return torch.cat([x, tail], dim=-1)


def adjacent_patches(padded: Tensor, geom: PatchGeometry) -> PatchSet:
    """Fixed-position patches at starts {0, s, 2s, ...}; a strided view, not a copy."""
    _check_padded(padded, geom)
    values = padded.unfold(-1, geom.patch_size, geom.stride)
    starts = torch.arange(geom.num_patches, dtype=torch.long) * geom.stride
    return PatchSet(values, starts, "adjacent")


def candidate_patches(padded: Tensor, geom: PatchGeometry) -> PatchSet:
    """All length-p windows at stride 1; adjacent starts are a subset of these."""
    _check_padded(padded, geom)
    values = padded.unfold(-1, geom.patch_size, 1)
    starts = torch.arange(geom.num_candidates, dtype=torch.long)
    return PatchSet(values, starts, "candidate")


def search_space_size(geom: PatchGeometry) -> int:
    """Number of distinct patch selections (with replacement) times orderings."""
    n, k = geom.num_patches, geom.num_candidates
    return math.comb(k + n - 1, n) * math.factorial(n)


def _check_padded(padded: Tensor, geom: PatchGeometry) -> None:
    if padded.shape[-1] != geom.padded_length:
        raise ValueError(
            f"expected padded length {geom.padded_length}, got {padded.shape[-1]}"
        )
