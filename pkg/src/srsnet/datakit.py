"""Dataset ingestion, chronological splitting, sliding-window enumeration,
normalization, and a synthetic series generator with regime-shift events."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

INSTANCE_NORM_EPS = 1e-5
STANDARDIZE_EPS = 1e-8

REGION_NAMES = ("train", "validation", "test")


@dataclass
class SeriesFrame:
    """A multivariate series: ``values`` is [channels, length], float64."""

    values: np.ndarray
    channel_names: list[str]
    frequency: str = ""
    name: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("SeriesFrame values must be 2-d [channels, length]")
        if len(self.channel_names) != self.values.shape[0]:
            raise ValueError("channel_names must match the channel count")

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/val/test ratios; must be non-negative and sum to 1."""

    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self) -> None:
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be three non-negative floats")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(self.ratios)}")

    def boundaries(self, length: int) -> tuple[int, int]:
        # the 1e-9 guard absorbs binary-float error in ratio sums (0.6+0.3 != 0.9)
        train_end = math.floor(self.ratios[0] * length + 1e-9)
        val_end = math.floor((self.ratios[0] + self.ratios[1]) * length + 1e-9)
        return train_end, val_end


@dataclass
class WindowPair:
    """One supervised sample: context [N, T], target [N, L], plus per-channel
    context mean/std (population) for reporting."""

    context: np.ndarray
    target: np.ndarray
    origin: int
    norm_mean: np.ndarray
    norm_std: np.ndarray


@dataclass
class SynthSpec:
    """Synthetic sinusoid with optional period change, level shift, and spikes."""

    base_period: float = 24.0
    length: int = 960
    channels: int = 1
    noise_std: float = 0.0
    seed: int = 0
    period_change: Optional[tuple[int, float]] = None
    level_shift: Optional[tuple[int, float]] = None
    spikes: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for idx in self._event_indices():
            if not 0 <= idx < self.length:
                raise ValueError(f"event index {idx} outside [0, {self.length})")

    def _event_indices(self) -> list[int]:
        out = []
        if self.period_change is not None:
            out.append(self.period_change[0])
        if self.level_shift is not None:
            out.append(self.level_shift[0])
        out.extend(idx for idx, _ in self.spikes)
        return out


def load_csv(path: str, forward_fill: bool = False) -> SeriesFrame:
    """Load a header-plus-timestamp CSV: column 1 is a timestamp (ignored beyond
    ordering), remaining columns are numeric channels.

    Non-numeric cells and ragged rows raise with the offending row/column.
    NaN values are rejected unless ``forward_fill`` is set.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ValueError(f"{path}: need a timestamp column plus >=1 channel")
        names = [h.strip() for h in header[1:]]
        columns: list[list[float]] = [[] for _ in names]
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}"
                )
            for col_no, cell in enumerate(row[1:], start=2):
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: unparseable value {cell!r} at row {row_no}, "
                        f"column {col_no}"
                    ) from None
                columns[col_no - 2].append(value)
    if not columns[0]:
        raise ValueError(f"{path}: no data rows")
    values = np.asarray(columns, dtype=np.float64)
    if not np.isfinite(values).all():
        if not forward_fill:
            ch, idx = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(
                f"{path}: non-finite value in channel {names[ch]!r} at index {idx} "
                "(pass forward_fill=True to repair)"
            )
        values = _forward_fill(values)
    return SeriesFrame(values, names)


def _forward_fill(values: np.ndarray) -> np.ndarray:
    out = values.copy()
    for ch in range(out.shape[0]):
        row = out[ch]
        bad = ~np.isfinite(row)
        if bad[0]:
            first_good = np.argmax(~bad)
            if bad.all():
                raise ValueError(f"channel {ch} has no finite values")
            row[:first_good] = row[first_good]
            bad = ~np.isfinite(row)
        idx = np.where(bad, 0, np.arange(len(row)))
        np.maximum.accumulate(idx, out=idx)
        out[ch] = row[idx]
    return out


def standardize(
    frame: SeriesFrame, split: SplitSpec
) -> tuple[SeriesFrame, dict[str, np.ndarray]]:
    """Z-score every channel using train-region statistics only (population std,
    guarded below by STANDARDIZE_EPS).  Metrics downstream are computed in this
    space."""
    train_end, _ = split.boundaries(frame.length)
    if train_end < 1:
        raise ValueError("train region is empty; cannot standardize")
    region = frame.values[:, :train_end]
    mean = region.mean(axis=1)
    std = region.std(axis=1)
    std_guarded = np.maximum(std, STANDARDIZE_EPS)
    values = (frame.values - mean[:, None]) / std_guarded[:, None]
    out = SeriesFrame(values, list(frame.channel_names), frame.frequency, frame.name)
    return out, {"mean": mean, "std": std_guarded}


def split(
    frame: SeriesFrame, spec: SplitSpec, min_length: Optional[int] = None
) -> tuple[SeriesFrame, SeriesFrame, SeriesFrame]:
    """Chronological, disjoint, exhaustive partition at floor(ratio * length).

    When ``min_length`` (typically lookback + horizon) is given, any shorter
    region raises, naming the region.
    """
    train_end, val_end = spec.boundaries(frame.length)
    bounds = [(0, train_end), (train_end, val_end), (val_end, frame.length)]
    regions = []
    for region_name, (lo, hi) in zip(REGION_NAMES, bounds):
        if min_length is not None and hi - lo < min_length:
            raise ValueError(
                f"{region_name} region has {hi - lo} steps; "
                f"need at least {min_length}"
            )
        regions.append(
            SeriesFrame(
                frame.values[:, lo:hi],
                list(frame.channel_names),
                frame.frequency,
                region_name,
            )
        )
    return regions[0], regions[1], regions[2]


def window_count(region_length: int, lookback: int, horizon: int, stride: int = 1) -> int:
    if region_length < lookback + horizon:
        return 0
    return (region_length - lookback - horizon) // stride + 1


def windows(
    region: SeriesFrame, lookback: int, horizon: int, stride: int = 1
) -> list[WindowPair]:
    """Enumerate supervised windows fully inside the region.

    Count is (length - lookback - horizon) // stride + 1; contexts and targets
    are views into the region array.
    """
    values = region.values
    length = values.shape[1]
    if length < lookback + horizon:
        name = region.name or "series"
        raise ValueError(
            f"{name} region has {length} steps; need at least "
            f"{lookback + horizon} for lookback {lookback} + horizon {horizon}"
        )
    out = []
    for origin in range(0, length - lookback - horizon + 1, stride):
        context = values[:, origin : origin + lookback]
        target = values[:, origin + lookback : origin + lookback + horizon]
        mean = context.mean(axis=1)
        std = context.std(axis=1)
        out.append(WindowPair(context, target, origin, mean, std))
    return out


def instance_normalize(x: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Per-channel z-score over the context axis (population std, +eps guard)."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    xn = (x - mean) / (std + INSTANCE_NORM_EPS)
    return xn, (mean, std)


def denormalize(yn: np.ndarray, stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, std = stats
    return yn * (std + INSTANCE_NORM_EPS) + mean


def synth_generate(spec: SynthSpec) -> SeriesFrame:
    """Deterministic sinusoid with the configured regime events.

    The phase is continuous across a period change; channel c is phase-shifted
    by 2*pi*c/channels.  Level shifts apply from their index onward; spikes are
    single-step additive; Gaussian noise is seeded per spec.
    """
    t = np.arange(spec.length, dtype=np.float64)
    if spec.period_change is not None:
        change_idx, new_period = spec.period_change
        phase = np.where(
            t < change_idx,
            2.0 * np.pi * t / spec.base_period,
            2.0 * np.pi * change_idx / spec.base_period
            + 2.0 * np.pi * (t - change_idx) / new_period,
        )
    else:
        phase = 2.0 * np.pi * t / spec.base_period

    values = np.empty((spec.channels, spec.length), dtype=np.float64)
    for ch in range(spec.channels):
        offset = 2.0 * np.pi * ch / max(spec.channels, 1)
        values[ch] = np.sin(phase + offset)

    if spec.level_shift is not None:
        shift_idx, amount = spec.level_shift
        values[:, shift_idx:] += amount
    for idx, magnitude in spec.spikes:
        values[:, idx] += magnitude
    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed)
        values += rng.normal(0.0, spec.noise_std, size=values.shape)

    names = [f"ch{c}" for c in range(spec.channels)]
    return SeriesFrame(values, names, name="synth")


def regime_shift_series(
    length: int = 8000,
    channels: int = 2,
    seed: int = 0,
    periods: tuple[float, float] = (23.0, 15.0),
    switch_every: tuple[int, int] = (150, 400),
    spike_every: tuple[int, int] = (40, 90),
    spike_mag: tuple[float, float] = (4.0, 8.0),
    shift_every: tuple[int, int] = (400, 900),
    shift_mag: float = 1.5,
    noise_std: float = 0.1,
) -> SeriesFrame:
    """Sinusoid whose period switches at random (seeded) times, with anomaly
    spikes and level shifts sprinkled throughout.

    Phase stays continuous across switches.  Unlike SynthSpec's single-event
    generator this produces the regime phenomena densely, so every split
    contains period changes, shifts, and anomalies.
    """
    rng = np.random.default_rng(seed)
    values = np.zeros((channels, length))
    for ch in range(channels):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        period = periods[rng.integers(len(periods))]
        next_switch = rng.integers(*switch_every)
        for t in range(length):
            values[ch, t] = np.sin(phase)
            phase += 2.0 * np.pi / period
            next_switch -= 1
            if next_switch <= 0:
                period = periods[rng.integers(len(periods))]
                next_switch = rng.integers(*switch_every)
        t = rng.integers(*spike_every)
        while t < length:
            values[ch, t] += rng.choice([-1.0, 1.0]) * rng.uniform(*spike_mag)
            t += rng.integers(*spike_every)
        t = rng.integers(*shift_every)
        while t < length:
            values[ch, t:] += rng.choice([-1.0, 1.0]) * shift_mag
            t += rng.integers(*shift_every)
    values += rng.normal(0.0, noise_std, size=values.shape)
    names = [f"ch{c}" for c in range(channels)]
    return SeriesFrame(values, names, name="regime-shift")


def write_csv(frame: SeriesFrame, path: str) -> None:
    """Write a frame in the load_csv layout (integer timestamps)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(frame.channel_names))
        for i in range(frame.length):
            writer.writerow([i] + [repr(float(v)) for v in frame.values[:, i]])
