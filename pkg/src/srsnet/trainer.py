"""Deterministic training loop: seeded shuffling, Adam, early stopping on
validation MSE, best-checkpoint restore, and wall-time / peak-memory probes."""

from __future__ import annotations

import gc
import math
import resource
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .datakit import WindowPair
from .models import mse_loss
from .substrate import ParamStore, seed_all

ALLOWED_BATCH_SIZES = (8, 16, 32, 64)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    cosine_decay: bool = False

    def __post_init__(self) -> None:
        if self.batch_size not in ALLOWED_BATCH_SIZES:
            raise ValueError(
                f"batch_size must be one of {ALLOWED_BATCH_SIZES}, got {self.batch_size}"
            )
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class RunRecord:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    epoch_seconds: list[float] = field(default_factory=list)
    peak_rss_bytes: int = 0
    test_mse: Optional[float] = None
    test_mae: Optional[float] = None
    diverged: bool = False
    steps: int = 0

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "epoch_seconds": self.epoch_seconds,
            "peak_rss_bytes": self.peak_rss_bytes,
            "test_mse": self.test_mse,
            "test_mae": self.test_mae,
            "diverged": self.diverged,
            "steps": self.steps,
        }


@dataclass
class DataSplits:
    train: list[WindowPair]
    val: list[WindowPair]
    test: Optional[list[WindowPair]] = None


@dataclass
class AdamState:
    m: list[Tensor]
    v: list[Tensor]
    step: int = 0


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[Tensor]],
    state: AdamState,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected first/second-moment update, in place.  A missing gradient
    counts as zero (moments still decay)."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    with torch.no_grad():
        for param, grad, m, v in zip(params, grads, state.m, state.v):
            g = torch.zeros_like(param) if grad is None else grad
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            param.addcdiv_(m / bias1, (v / bias2).sqrt().add_(eps), value=-lr)


class Adam:
    """Adam over a ParamStore; the store's step counter mirrors the state."""

    def __init__(self, store: ParamStore, config: TrainConfig) -> None:
        self.store = store
        self.config = config
        params = store.tensors()
        self.state = AdamState(
            m=[torch.zeros_like(p) for p in params],
            v=[torch.zeros_like(p) for p in params],
        )

    def zero_grad(self) -> None:
        for param in self.store.tensors():
            param.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        params = self.store.tensors()
        adam_step(
            params,
            [p.grad for p in params],
            self.state,
            lr=self.config.lr if lr is None else lr,
            beta1=self.config.beta1,
            beta2=self.config.beta2,
            eps=self.config.eps,
        )
        self.store.step_count = self.state.step


class EarlyStopper:
    """Stops after ``patience`` consecutive epochs without strict improvement."""

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> str:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return "improved"
        self.bad_epochs += 1
        return "stop" if self.bad_epochs >= self.patience else "continue"


def assemble_batch(
    windows: Sequence[WindowPair], indices: Sequence[int]
) -> tuple[Tensor, Tensor]:
    contexts = np.stack([windows[i].context for i in indices]).astype(np.float32)
    targets = np.stack([windows[i].target for i in indices]).astype(np.float32)
    return torch.from_numpy(contexts), torch.from_numpy(targets)


def batch_indices(
    count: int, batch_size: int, order: Optional[np.ndarray] = None
) -> Iterator[list[int]]:
    """Full coverage, no drop-last."""
    idx = np.arange(count) if order is None else order
    for start in range(0, count, batch_size):
        yield [int(i) for i in idx[start : start + batch_size]]


def evaluate(
    model: nn.Module, windows: Sequence[WindowPair], batch_size: int
) -> tuple[float, float]:
    """Exact element-weighted MSE/MAE over every window (no drop-last)."""
    model.eval()
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    with torch.no_grad():
        for batch in batch_indices(len(windows), batch_size):
            x, y = assemble_batch(windows, batch)
            pred, _ = model(x)
            diff = (pred - y).double()
            sq_sum += float((diff**2).sum())
            abs_sum += float(diff.abs().sum())
            count += diff.numel()
    model.train()
    return sq_sum / count, abs_sum / count


def predict(
    model: nn.Module, windows: Sequence[WindowPair], batch_size: int
) -> np.ndarray:
    """Stacked predictions [W, N, L] in evaluation mode."""
    model.eval()
    chunks = []
    with torch.no_grad():
        for batch in batch_indices(len(windows), batch_size):
            x, _ = assemble_batch(windows, batch)
            pred, _ = model(x)
            chunks.append(pred.numpy())
    model.train()
    return np.concatenate(chunks, axis=0)


def _snapshot(model: nn.Module) -> dict[str, Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _restore(model: nn.Module, snapshot: dict[str, Tensor]) -> None:
    model.load_state_dict(snapshot)


def _peak_rss_bytes() -> int:
    # ru_maxrss is kilobytes on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def train(
    model: nn.Module, data: DataSplits, config: TrainConfig
) -> tuple[nn.Module, RunRecord]:
    """Train with epoch-wise seeded shuffling and early stopping on validation
    MSE; restores the best-validation weights.  A non-finite training loss
    aborts immediately, keeping the last finite checkpoint."""
    if not data.train or not data.val:
        raise ValueError("train and val splits must each contain >= 1 window")
    seed_all(config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(ParamStore.from_module(model), config)
    stopper = EarlyStopper(config.patience)
    record = RunRecord()
    best_state = _snapshot(model)

    model.train()
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        lr = config.lr
        if config.cosine_decay:
            lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.max_epochs))
        order = rng.permutation(len(data.train))
        loss_sum = 0.0
        loss_count = 0
        aborted = False
        for batch in batch_indices(len(data.train), config.batch_size, order):
            x, y = assemble_batch(data.train, batch)
            optimizer.zero_grad()
            pred, _ = model(x)
            loss = mse_loss(pred, y)
            if not torch.isfinite(loss):
                record.diverged = True
                aborted = True
                break
            loss.backward()
            optimizer.step(lr)
            record.steps += 1
            if not all(bool(torch.isfinite(p).all()) for p in model.parameters()):
                # the step itself blew up; the next forward would be garbage
                record.diverged = True
                aborted = True
                break
            loss_sum += loss.item() * y.numel()
            loss_count += y.numel()
        if aborted:
            break
        record.train_losses.append(loss_sum / loss_count)
        val_mse, _ = evaluate(model, data.val, config.batch_size)
        record.val_losses.append(val_mse)
        record.epoch_seconds.append(time.perf_counter() - start)
        verdict = stopper.update(epoch, val_mse)
        if verdict == "improved":
            best_state = _snapshot(model)
        if verdict == "stop":
            break

    _restore(model, best_state)
    record.best_epoch = stopper.best_epoch
    record.best_val_loss = stopper.best
    record.peak_rss_bytes = _peak_rss_bytes()
    if data.test:
        record.test_mse, record.test_mae = evaluate(model, data.test, config.batch_size)
    return model, record


def measure_overhead(
    model_with: nn.Module,
    model_without: nn.Module,
    windows: Sequence[WindowPair],
    config: TrainConfig,
    warmup: int = 2,
    measured: int = 40,
    block: int = 1,
) -> dict:
    """Per-batch training/inference wall time and peak-RSS deltas between two
    models on identical data.

    Both arms run once per round, back to back with rotating order, and each
    round contributes one +SRS/baseline CPU-time ratio; the reported overhead
    is the median ratio.  Pairing within a round shares whatever contention
    the host is under at that moment, CPU time ignores preemption, and timing
    ``block`` steps at once keeps the kernel's 10 ms CPU-clock quantization
    small.  Per-arm CPU/wall minimums are reported for reference.  Memory is
    the process high-water mark sampled after the baseline arm and again
    after the +SRS arm, so the delta is the extra footprint the +SRS arm adds
    (>= 0 by monotonicity).
    """
    batch = list(range(min(config.batch_size, len(windows))))
    x, y = assemble_batch(windows, batch)

    base_opt = Adam(ParamStore.from_module(model_without), config)
    # degenerate self-comparison: share the optimizer so the arms are identical
    srs_opt = base_opt if model_with is model_without else Adam(
        ParamStore.from_module(model_with), config
    )
    arms = {
        "baseline": (model_without, base_opt),
        "with_srs": (model_with, srs_opt),
    }

    def train_step(model: nn.Module, optimizer: Adam, steps: int = 1) -> tuple[float, float]:
        # CPU time is jiffy-quantized (10 ms); timing a block of steps keeps
        # quantization error around 1%
        wall = time.perf_counter()
        cpu = time.process_time()
        for _ in range(steps):
            optimizer.zero_grad()
            pred, _ = model(x)
            loss = mse_loss(pred, y)
            loss.backward()
            optimizer.step()
        return (time.process_time() - cpu) / steps, (time.perf_counter() - wall) / steps

    def infer_step(model: nn.Module, steps: int = 1) -> tuple[float, float]:
        wall = time.perf_counter()
        cpu = time.process_time()
        with torch.no_grad():
            for _ in range(steps):
                model(x)
        return (time.process_time() - cpu) / steps, (time.perf_counter() - wall) / steps

    names = list(arms)
    times: dict[tuple[str, str], list[tuple[float, float]]] = {
        (kind, name): [] for kind in ("train", "infer") for name in names
    }
    gc_was_enabled = gc.isenabled()
    gc.disable()  # deterministic allocation patterns alias GC pulses to one arm
    try:
        for model, optimizer in arms.values():
            model.train()
            for _ in range(warmup):
                train_step(model, optimizer)
        for round_no in range(measured):
            for name in names if round_no % 2 == 0 else reversed(names):
                model, optimizer = arms[name]
                times["train", name].append(train_step(model, optimizer, block))
        for name, (model, _) in arms.items():
            model.eval()
            for _ in range(warmup):
                infer_step(model)
        for round_no in range(measured):
            for name in names if round_no % 2 == 0 else reversed(names):
                times["infer", name].append(infer_step(arms[name][0], block))
        for model, _ in arms.values():
            model.train()
    finally:
        if gc_was_enabled:
            gc.enable()

    def arm_report(name: str) -> dict:
        model, optimizer = arms[name]
        model.train()
        for _ in range(2):  # refresh the high-water mark for this arm
            train_step(model, optimizer)
        return {
            "train_s_per_batch": min(t[0] for t in times["train", name]),
            "infer_s_per_batch": min(t[0] for t in times["infer", name]),
            "train_wall_s_per_batch": min(t[1] for t in times["train", name]),
            "infer_wall_s_per_batch": min(t[1] for t in times["infer", name]),
            "peak_rss_bytes": _peak_rss_bytes(),
        }

    baseline = arm_report("baseline")
    with_srs = arm_report("with_srs")

    def ratio_pct(kind: str) -> float:
        pairs = list(zip(times[kind, "with_srs"], times[kind, "baseline"]))
        ratios = [srs[0] / base[0] for srs, base in pairs if base[0] > 0 and srs[0] > 0]
        if len(ratios) >= len(pairs) / 2:
            return 100.0 * (statistics.median(ratios) - 1.0)
        # sub-quantum samples (10 ms CPU clock): fall back to totals
        total_srs = sum(srs[0] for srs, _ in pairs)
        total_base = sum(base[0] for _, base in pairs)
        return 100.0 * (total_srs / total_base - 1.0) if total_base > 0 else 0.0

    def pct(new: float, old: float) -> float:
        return 100.0 * (new - old) / old if old > 0 else 0.0

    return {
        "baseline": baseline,
        "with_srs": with_srs,
        "overhead": {
            "train_pct": ratio_pct("train"),
            "infer_pct": ratio_pct("infer"),
            "memory_pct": pct(with_srs["peak_rss_bytes"], baseline["peak_rss_bytes"]),
            "memory_delta_bytes": with_srs["peak_rss_bytes"] - baseline["peak_rss_bytes"],
        },
    }
