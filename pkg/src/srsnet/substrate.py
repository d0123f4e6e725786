"""Differentiable-computation contract shared by all model code.

A ``DiffValue`` is a ``torch.Tensor``: dense float payload, ``shape``, and a
``requires_grad`` flag as the grad-tracked bit.  Reverse-mode gradients come
from torch's per-forward tape (freed after each backward); gradient
accumulation into ``.grad`` is additive.  Integer-valued ops (argmax, argsort,
comparisons) carry no gradient path by construction.  Model state is float32;
test oracles may run in float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator

import torch
from torch import Tensor

DiffValue = Tensor


def seed_all(seed: int) -> None:
    """Seed the torch RNG that drives init and dropout."""
    torch.manual_seed(seed)


def detach(x: Tensor) -> Tensor:
    """Return a value-identical tensor through which no gradient flows."""
    return x.detach()


def gather(x: Tensor, indices, axis: int) -> Tensor:
    """Select slices of ``x`` along ``axis`` (numpy.take semantics).

    Output shape is ``x.shape[:axis] + indices.shape + x.shape[axis+1:]``.
    Backward scatters upstream gradients additively onto the selected slices.
    """
    idx = torch.as_tensor(indices, dtype=torch.long)
    axis = axis % x.dim()
    size = x.shape[axis]
    if idx.numel() > 0:
        lo, hi = int(idx.min()), int(idx.max())
        if lo < 0 or hi >= size:
            bad = lo if lo < 0 else hi
            raise IndexError(
                f"gather: index {bad} out of range for axis {axis} of length {size}"
            )
    out = x.index_select(axis, idx.reshape(-1))
    return out.reshape(x.shape[:axis] + tuple(idx.shape) + x.shape[axis + 1 :])


def finite_diff_grad(
    f: Callable[[Tensor], Tensor | float], x: Tensor, eps: float = 1e-4
) -> Tensor:
    """Central-difference gradient estimate of a scalar function, per coordinate.

    Test oracle only; ``f`` must be deterministic.  Raises on non-finite output.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = x.detach().clone()
    flat = base.reshape(-1)
    grad = torch.zeros_like(flat)

    def eval_at(v: Tensor) -> float:
        out = f(v)
        val = float(out)
        if not torch.isfinite(torch.tensor(val)):
            raise ValueError("finite_diff_grad: non-finite function output")
        return val

    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = eval_at(base)
        flat[i] = orig - eps
        lo = eval_at(base)
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(x.shape)


class ParamStore:
    """Named learnable tensors with unique names, immutable shapes, and an
    optimizer step counter."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self.step_count = 0

    def add(self, name: str, value: Tensor) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        self._params[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def load_(self, name: str, values: Tensor) -> None:
        """Copy ``values`` into an existing parameter; shape must match."""
        param = self._params[name]
        if tuple(values.shape) != tuple(param.shape):
            raise ValueError(
                f"shape mismatch for {name!r}: stored {tuple(param.shape)}, "
                f"got {tuple(values.shape)}"
            )
        with torch.no_grad():
            param.copy_(values)

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParamStore":
        store = cls()
        for name, param in module.named_parameters():
            store.add(name, param)
        return store

    @classmethod
    def from_named(cls, named: Iterable[tuple[str, Tensor]]) -> "ParamStore":
        store = cls()
        for name, param in named:
            store.add(name, param)
        return store
