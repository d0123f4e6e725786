"""Metrics, experiment orchestration, flat-file configuration, and the ``srs``
command line: train/eval/ablate/sweep/plugin-bench/viz/synth."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch

from .datakit import (
    SeriesFrame,
    SplitSpec,
    SynthSpec,
    load_csv,
    split,
    standardize,
    synth_generate,
    windows,
    write_csv,
)
from .models import (
    ABLATIONS,
    ModelConfig,
    PluginForecaster,
    SRSNet,
    build_variant,
    load_into,
    save_checkpoint,
)
from .substrate import seed_all
from .trainer import (
    DataSplits,
    TrainConfig,
    assemble_batch,
    evaluate,
    measure_overhead,
    predict,
    train,
)

PROTOCOL_LOOKBACKS = (96, 336, 512)
PROTOCOL_HORIZONS = (96, 192, 336, 720)
PROTOCOL_PATCH_SIZES = (16, 24)

SWEEPABLE = ("patch_size", "lookback", "scorer_layers", "scorer_hidden")


# ---------------------------------------------------------------------------
# metrics


def metrics(preds: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """MSE and MAE averaged over windows, channels, and steps."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(
            f"misaligned prediction/target sets: {preds.shape} vs {targets.shape}"
        )
    diff = preds - targets
    return float(np.mean(diff**2)), float(np.mean(np.abs(diff)))


@dataclass
class MetricReport:
    dataset: str
    lookback: int
    horizon: int
    seed: int
    mse: float
    mae: float
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "lookback": self.lookback,
            "horizon": self.horizon,
            "seed": self.seed,
            "mse": self.mse,
            "mae": self.mae,
            "rows": self.rows,
        }


# ---------------------------------------------------------------------------
# flat configuration

_DEFAULTS: dict[str, str] = {
    "dataset.name": "synth",
    "dataset.path": "",
    "dataset.forward_fill": "false",
    "synth.base_period": "24.0",
    "synth.length": "960",
    "synth.channels": "1",
    "synth.noise_std": "0.0",
    "synth.seed": "0",
    "synth.period_change": "",
    "synth.level_shift": "",
    "synth.spikes": "",
    "split.train": "0.6",
    "split.val": "0.2",
    "split.test": "0.2",
    "window.lookback": "96",
    "window.horizon": "96",
    "window.stride": "1",
    "model.patch_size": "16",
    "model.patch_stride": "0",
    "model.embed_dim": "128",
    "model.scorer_hidden": "128",
    "model.scorer_layers": "2",
    "model.head_hidden": "512",
    "model.dropout": "0.1",
    "model.fusion_init": "0.0",
    "model.ablation": "full",
    "model.backbone": "none",
    "model.encoder_layers": "2",
    "model.encoder_heads": "4",
    "train.lr": "0.0001",
    "train.batch_size": "64",
    "train.max_epochs": "100",
    "train.patience": "5",
    "train.seed": "0",
    "train.cosine_decay": "false",
    "run.output_dir": "runs/exp",
    "run.trace_windows": "4",
    "run.seeds": "1",
    "run.allow_nonstandard": "false",
}


def parse_config_file(path: str) -> dict[str, str]:
    """Flat ``key=value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def apply_overrides(flat: dict[str, str], sets: Sequence[str]) -> dict[str, str]:
    out = dict(flat)
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_flat(flat: dict[str, str]) -> dict[str, str]:
    merged = dict(_DEFAULTS)
    for key, value in flat.items():
        if key not in _DEFAULTS:
            raise ValueError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(_DEFAULTS))}"
            )
        merged[key] = value
    return merged


def config_hash(flat: dict[str, str]) -> str:
    text = "\n".join(f"{k}={flat[k]}" for k in sorted(flat))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _parse_bool(value: str, key: str) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"{key}: expected boolean, got {value!r}")


def _parse_event(value: str, key: str) -> Optional[tuple[int, float]]:
    if not value:
        return None
    try:
        idx, amount = value.split(":", 1)
        return int(idx), float(amount)
    except ValueError:
        raise ValueError(f"{key}: expected 'index:value', got {value!r}") from None


def _parse_spikes(value: str, key: str) -> list[tuple[int, float]]:
    if not value:
        return []
    out = []
    for part in value.split(","):
        event = _parse_event(part.strip(), key)
        if event is not None:
            out.append(event)
    return out


@dataclass
class ExperimentConfig:
    flat: dict[str, str]

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ExperimentConfig":
        cfg = cls(resolve_flat(flat))
        cfg.validate()
        return cfg

    def _get(self, key: str) -> str:
        return self.flat[key]

    def _int(self, key: str) -> int:
        try:
            return int(self._get(key))
        except ValueError:
            raise ValueError(f"{key}: expected integer, got {self._get(key)!r}") from None

    def _float(self, key: str) -> float:
        try:
            return float(self._get(key))
        except ValueError:
            raise ValueError(f"{key}: expected number, got {self._get(key)!r}") from None

    def _bool(self, key: str) -> bool:
        return _parse_bool(self._get(key), key)

    # resolved views -------------------------------------------------------

    @property
    def dataset_name(self) -> str:
        return self._get("dataset.name")

    @property
    def dataset_path(self) -> str:
        return self._get("dataset.path")

    @property
    def lookback(self) -> int:
        return self._int("window.lookback")

    @property
    def horizon(self) -> int:
        return self._int("window.horizon")

    @property
    def window_stride(self) -> int:
        return self._int("window.stride")

    @property
    def output_dir(self) -> str:
        return self._get("run.output_dir")

    @property
    def trace_windows(self) -> int:
        return self._int("run.trace_windows")

    @property
    def seeds(self) -> int:
        return self._int("run.seeds")

    @property
    def backbone(self) -> str:
        return self._get("model.backbone")

    @property
    def ablation(self) -> str:
        return self._get("model.ablation")

    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            (self._float("split.train"), self._float("split.val"), self._float("split.test"))
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            base_period=self._float("synth.base_period"),
            length=self._int("synth.length"),
            channels=self._int("synth.channels"),
            noise_std=self._float("synth.noise_std"),
            seed=self._int("synth.seed"),
            period_change=_parse_event(self._get("synth.period_change"), "synth.period_change"),
            level_shift=_parse_event(self._get("synth.level_shift"), "synth.level_shift"),
            spikes=_parse_spikes(self._get("synth.spikes"), "synth.spikes"),
        )

    def model_config(self) -> ModelConfig:
        stride = self._int("model.patch_stride")
        return ModelConfig(
            lookback=self.lookback,
            horizon=self.horizon,
            patch_size=self._int("model.patch_size"),
            patch_stride=stride if stride > 0 else None,
            embed_dim=self._int("model.embed_dim"),
            scorer_hidden=self._int("model.scorer_hidden"),
            scorer_layers=self._int("model.scorer_layers"),
            head_hidden=self._int("model.head_hidden"),
            dropout=self._float("model.dropout"),
            fusion_init=self._float("model.fusion_init"),
            ablation=self._get("model.ablation"),
            encoder_layers=self._int("model.encoder_layers"),
            encoder_heads=self._int("model.encoder_heads"),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self._float("train.lr"),
            batch_size=self._int("train.batch_size"),
            max_epochs=self._int("train.max_epochs"),
            patience=self._int("train.patience"),
            seed=self._int("train.seed"),
            cosine_decay=self._bool("train.cosine_decay"),
        )

    def validate(self) -> None:
        if self._bool("run.allow_nonstandard"):
            return
        if self.lookback not in PROTOCOL_LOOKBACKS:
            raise ValueError(
                f"window.lookback={self.lookback} outside protocol set "
                f"{PROTOCOL_LOOKBACKS}; set run.allow_nonstandard=true to override"
            )
        if self.horizon not in PROTOCOL_HORIZONS:
            raise ValueError(
                f"window.horizon={self.horizon} outside protocol set "
                f"{PROTOCOL_HORIZONS}; set run.allow_nonstandard=true to override"
            )
        if self._int("model.patch_size") not in PROTOCOL_PATCH_SIZES:
            raise ValueError(
                f"model.patch_size={self._get('model.patch_size')} outside protocol "
                f"set {PROTOCOL_PATCH_SIZES}; set run.allow_nonstandard=true to override"
            )

    def with_values(self, **updates: str) -> "ExperimentConfig":
        flat = dict(self.flat)
        for key, value in updates.items():
            flat[key.replace("__", ".")] = str(value)
        return ExperimentConfig.from_flat(flat)

    def hash(self) -> str:
        return config_hash(self.flat)


def write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_config(path: str, flat: dict[str, str]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        for key in sorted(flat):
            fh.write(f"{key}={flat[key]}\n")


# ---------------------------------------------------------------------------
# experiment plumbing


def load_series(cfg: ExperimentConfig) -> SeriesFrame:
    if cfg.dataset_path:
        frame = load_csv(cfg.dataset_path, cfg._bool("dataset.forward_fill"))
        frame.name = cfg.dataset_name
        return frame
    frame = synth_generate(cfg.synth_spec())
    frame.name = cfg.dataset_name
    return frame


def prepare_data(cfg: ExperimentConfig) -> DataSplits:
    frame = load_series(cfg)
    spec = cfg.split_spec()
    std_frame, _ = standardize(frame, spec)
    min_len = cfg.lookback + cfg.horizon
    train_f, val_f, test_f = split(std_frame, spec, min_length=min_len)
    stride = cfg.window_stride
    return DataSplits(
        train=windows(train_f, cfg.lookback, cfg.horizon, stride),
        val=windows(val_f, cfg.lookback, cfg.horizon, stride),
        test=windows(test_f, cfg.lookback, cfg.horizon, stride),
    )


def build_model(cfg: ExperimentConfig) -> torch.nn.Module:
    mc = cfg.model_config()
    if cfg.backbone == "transformer":
        source = "conventional" if mc.ablation == "no_srs" else "srs"
        return PluginForecaster(mc, embed_source=source)
    if cfg.backbone != "none":
        raise ValueError(f"unknown model.backbone {cfg.backbone!r}; valid: none, transformer")
    return build_variant(mc.ablation, mc)


def _capture_traces(
    model: torch.nn.Module,
    data: DataSplits,
    cfg: ExperimentConfig,
    out_dir: str,
) -> list[str]:
    paths = []
    count = min(cfg.trace_windows, len(data.test or []))
    patch_size = cfg._int("model.patch_size")
    model.eval()
    with torch.no_grad():
        for i in range(count):
            window = data.test[i]
            x, y = assemble_batch(data.test, [i])
            pred, trace = model(x, capture_trace=True)
            records = trace.to_records(window.origin)
            for ch, record in enumerate(records):
                record["context"] = [float(v) for v in window.context[ch]]
                record["target"] = [float(v) for v in window.target[ch]]
                record["forecast"] = [float(v) for v in pred[0, ch].numpy()]
            payload = {
                "window_origin": int(window.origin),
                "patch_size": patch_size,
                "lookback": cfg.lookback,
                "horizon": cfg.horizon,
                "records": records,
            }
            path = os.path.join(out_dir, f"trace-{i:03d}.json")
            write_json(path, payload)
            paths.append(path)
    model.train()
    return paths


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train, evaluate on the test split, and write metrics.json, run.json,
    trace-*.json, and a checkpoint under the configured output directory."""
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    write_config(os.path.join(out_dir, "config.txt"), cfg.flat)

    base_seed = cfg._int("train.seed")
    seed_list = [base_seed + k for k in range(max(cfg.seeds, 1))]
    per_seed = []
    for seed in seed_list:
        seed_dir = out_dir if len(seed_list) == 1 else os.path.join(out_dir, f"seed-{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        seed_all(seed)
        model = build_model(cfg)
        data = prepare_data(cfg)
        train_cfg = replace(cfg.train_config(), seed=seed)
        model, record = train(model, data, train_cfg)
        preds = predict(model, data.test, train_cfg.batch_size)
        targets = np.stack([w.target for w in data.test])
        mse, mae = metrics(preds, targets)
        report = MetricReport(
            dataset=cfg.dataset_name,
            lookback=cfg.lookback,
            horizon=cfg.horizon,
            seed=seed,
            mse=mse,
            mae=mae,
            rows=[{"horizon": cfg.horizon, "mse": mse, "mae": mae}],
        )
        _capture_traces(model, data, cfg, seed_dir)
        save_checkpoint(
            seed_dir,
            model,
            config_hash=cfg.hash(),
            seed=seed,
            step_count=record.steps,
        )
        write_json(os.path.join(seed_dir, "run.json"), record.to_dict())
        write_json(os.path.join(seed_dir, "metrics.json"), report.to_dict())
        per_seed.append({"report": report.to_dict(), "record": record.to_dict()})

    summary: dict = {
        "dataset": cfg.dataset_name,
        "lookback": cfg.lookback,
        "horizon": cfg.horizon,
        "config_hash": cfg.hash(),
        "seeds": seed_list,
        "mse": float(np.mean([r["report"]["mse"] for r in per_seed])),
        "mae": float(np.mean([r["report"]["mae"] for r in per_seed])),
        "best_val_loss": float(np.min([r["record"]["best_val_loss"] for r in per_seed])),
        "per_seed": per_seed,
    }
    if len(per_seed) > 1:
        summary["mse_std"] = float(np.std([r["report"]["mse"] for r in per_seed]))
        summary["mae_std"] = float(np.std([r["report"]["mae"] for r in per_seed]))
        write_json(os.path.join(out_dir, "metrics.json"), summary)
    return summary


def sweep(
    parameter: str,
    values: Sequence,
    cfg: ExperimentConfig,
    select_best: Optional[str] = None,
) -> dict:
    """One run per value; optionally picks the best row by validation loss."""
    if parameter not in SWEEPABLE:
        raise ValueError(
            f"unknown sweep parameter {parameter!r}; valid: {', '.join(SWEEPABLE)}"
        )
    key = {
        "patch_size": "model.patch_size",
        "lookback": "window.lookback",
        "scorer_layers": "model.scorer_layers",
        "scorer_hidden": "model.scorer_hidden",
    }[parameter]
    rows = []
    for value in values:
        sub = cfg.with_values(
            **{
                key.replace(".", "__"): value,
                "run__output_dir": os.path.join(cfg.output_dir, f"{parameter}-{value}"),
            }
        )
        summary = run_experiment(sub)
        rows.append(
            {
                parameter: value,
                "mse": summary["mse"],
                "mae": summary["mae"],
                "val_loss": summary["best_val_loss"],
                "output_dir": sub.output_dir,
            }
        )
    result = {"parameter": parameter, "rows": rows}
    if select_best == "val":
        best = min(rows, key=lambda r: r["val_loss"])
        result["best"] = best
    elif select_best is not None:
        raise ValueError(f"unknown selection criterion {select_best!r}; valid: val")
    write_json(os.path.join(cfg.output_dir, "sweep.json"), result)
    return result


# ---------------------------------------------------------------------------
# trace visualization (hand-written SVG for deterministic output)

_REQUIRED_TRACE_FIELDS = ("channel", "window_origin", "selected_starts", "reassembly_order", "scores")


def _scale(values: Sequence[float], lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _polyline(xs: Sequence[float], ys: Sequence[float], color: str, width: float) -> str:
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
        f'points="{points}" />'
    )


def viz_trace(trace_path: str, out_path: str, channel: int = 0) -> dict:
    """Render one channel's trace: context line, grey selected-patch rectangles,
    and forecast vs ground truth.  Returns the parsed payload."""
    with open(trace_path) as fh:
        payload = json.load(fh)
    records = payload.get("records")
    if not records:
        raise ValueError(f"{trace_path}: missing trace fields: records")
    record = next((r for r in records if r.get("channel") == channel), None)
    if record is None:
        raise ValueError(f"{trace_path}: no record for channel {channel}")
    missing = [f for f in _REQUIRED_TRACE_FIELDS if f not in record]
    for extra in ("context", "forecast", "target"):
        if extra not in record:
            missing.append(extra)
    if missing:
        raise ValueError(f"{trace_path}: missing trace fields: {', '.join(missing)}")

    context = record["context"]
    forecast = record["forecast"]
    target = record["target"]
    patch_size = int(payload.get("patch_size", 0)) or 1
    lookback = len(context)
    total = lookback + len(forecast)

    width, height, margin = 960.0, 320.0, 24.0
    all_vals = list(context) + list(forecast) + list(target)
    lo, hi = min(all_vals), max(all_vals)
    pad_y = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad_y, hi + pad_y

    def sx(step: float) -> float:
        return margin + step / max(total - 1, 1) * (width - 2 * margin)

    def sy(value: float) -> float:
        return height - margin - (value - lo) / (hi - lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="white" />',
    ]
    for start in record["selected_starts"]:
        x0 = sx(min(start, lookback - 1))
        x1 = sx(min(start + patch_size, lookback - 1))
        parts.append(
            f'<rect x="{x0:.2f}" y="{margin:.2f}" width="{x1 - x0:.2f}" '
            f'height="{height - 2 * margin:.2f}" fill="#888888" opacity="0.22" />'
        )
    parts.append(
        _polyline([sx(i) for i in range(lookback)], [sy(v) for v in context], "#1f77b4", 1.5)
    )
    horizon_steps = [lookback + i for i in range(len(forecast))]
    parts.append(
        _polyline([sx(i) for i in horizon_steps], [sy(v) for v in target], "#2ca02c", 1.5)
    )
    parts.append(
        _polyline([sx(i) for i in horizon_steps], [sy(v) for v in forecast], "#d62728", 1.5)
    )
    sep = sx(lookback - 0.5)
    parts.append(
        f'<line x1="{sep:.2f}" y1="{margin:.2f}" x2="{sep:.2f}" '
        f'y2="{height - margin:.2f}" stroke="#444444" stroke-dasharray="4 3" />'
    )
    parts.append("</svg>")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return payload


# ---------------------------------------------------------------------------
# higher-level commands


def run_ablate(cfg: ExperimentConfig, variants: Sequence[str]) -> dict:
    rows = []
    for name in variants:
        if name not in ABLATIONS:
            raise ValueError(f"unknown variant {name!r}; valid: {', '.join(ABLATIONS)}")
        sub = cfg.with_values(
            model__ablation=name,
            run__output_dir=os.path.join(cfg.output_dir, name),
        )
        summary = run_experiment(sub)
        rows.append({"variant": name, "mse": summary["mse"], "mae": summary["mae"]})
    result: dict = {"rows": rows}
    by_name = {r["variant"]: r for r in rows}
    if "full" in by_name and "no_srs" in by_name:
        base = by_name["no_srs"]["mse"]
        result["improvement_pct"] = 100.0 * (base - by_name["full"]["mse"]) / base
    write_json(os.path.join(cfg.output_dir, "ablate.json"), result)
    return result


def run_plugin_bench(
    cfg: ExperimentConfig, seeds: int, with_overhead: bool = False
) -> dict:
    """Mini patch-transformer backbone with vs without selective embeddings."""
    base_seed = cfg._int("train.seed")
    rows = []
    for k in range(seeds):
        seed = base_seed + k
        pair = {}
        for label, ablation in (("baseline", "no_srs"), ("with_srs", "full")):
            sub = cfg.with_values(
                model__backbone="transformer",
                model__ablation=ablation,
                train__seed=seed,
                run__output_dir=os.path.join(cfg.output_dir, f"{label}-seed{seed}"),
            )
            summary = run_experiment(sub)
            pair[label] = {"mse": summary["mse"], "mae": summary["mae"]}
        pair["seed"] = seed
        pair["srs_wins"] = pair["with_srs"]["mse"] <= pair["baseline"]["mse"]
        rows.append(pair)
    wins = sum(1 for r in rows if r["srs_wins"])
    result: dict = {
        "rows": rows,
        "wins": wins,
        "seeds": seeds,
        "majority": wins * 2 > seeds,
    }
    if with_overhead:
        result["overhead"] = plugin_overhead(cfg)
    write_json(os.path.join(cfg.output_dir, "plugin.json"), result)
    return result


def plugin_overhead(cfg: ExperimentConfig) -> dict:
    """Per-batch cost of the selective path on the transformer backbone."""
    seed_all(cfg._int("train.seed"))
    mc = cfg.model_config()
    baseline = PluginForecaster(
        ModelConfig(**{**dataclasses.asdict(mc), "ablation": "no_srs"}),
        embed_source="conventional",
    )
    with_srs = PluginForecaster(
        ModelConfig(**{**dataclasses.asdict(mc), "ablation": "full"}),
        embed_source="srs",
    )
    data = prepare_data(cfg)
    return measure_overhead(with_srs, baseline, data.train, cfg.train_config())


def run_eval(cfg: ExperimentConfig, checkpoint_dir: Optional[str] = None) -> dict:
    directory = checkpoint_dir or cfg.output_dir
    seed_all(cfg._int("train.seed"))
    model = build_model(cfg)
    manifest = load_into(model, directory)
    data = prepare_data(cfg)
    mse, mae = evaluate(model, data.test, cfg.train_config().batch_size)
    report = MetricReport(
        dataset=cfg.dataset_name,
        lookback=cfg.lookback,
        horizon=cfg.horizon,
        seed=int(manifest.get("seed", 0)),
        mse=mse,
        mae=mae,
        rows=[{"horizon": cfg.horizon, "mse": mse, "mae": mae}],
    )
    write_json(os.path.join(cfg.output_dir, "metrics-eval.json"), report.to_dict())
    return report.to_dict()


def run_synth(cfg: ExperimentConfig, out_path: str) -> str:
    frame = synth_generate(cfg.synth_spec())
    write_csv(frame, out_path)
    return out_path


# ---------------------------------------------------------------------------
# CLI


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    flat: dict[str, str] = {}
    if args.config:
        flat = parse_config_file(args.config)
    flat = apply_overrides(flat, args.set or [])
    return ExperimentConfig.from_flat(flat)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="srs",
        description="Selective-representation-space forecasting experiments",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common], help="train + evaluate")
    p_train.add_argument("--sweep", choices=["lookback"], default=None)
    p_train.add_argument("--select-best", choices=["val"], default=None)

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", default=None)

    p_ablate = sub.add_parser("ablate", parents=[common], help="run ablation variants")
    p_ablate.add_argument("--variants", default=",".join(ABLATIONS))

    p_sweep = sub.add_parser("sweep", parents=[common], help="hyperparameter sweep")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--select-best", choices=["val"], default=None)

    p_plugin = sub.add_parser(
        "plugin-bench", parents=[common], help="backbone with/without selective embeddings"
    )
    p_plugin.add_argument("--seeds", type=int, default=3)
    p_plugin.add_argument("--overhead", action="store_true")

    p_viz = sub.add_parser("viz", parents=[common], help="render a selection trace")
    p_viz.add_argument("--trace", required=True)
    p_viz.add_argument("--out", required=True)
    p_viz.add_argument("--channel", type=int, default=0)

    p_synth = sub.add_parser("synth", parents=[common], help="write a synthetic CSV")
    p_synth.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "viz":
            viz_trace(args.trace, args.out, args.channel)
            print(json.dumps({"written": args.out}))
            return 0
        cfg = _load_config(args)
        if args.command == "train":
            if args.sweep == "lookback":
                result = sweep("lookback", list(PROTOCOL_LOOKBACKS), cfg, args.select_best)
            else:
                result = run_experiment(cfg)
            print(json.dumps(_brief(result), sort_keys=True))
        elif args.command == "eval":
            result = run_eval(cfg, args.checkpoint)
            print(json.dumps(result, sort_keys=True))
        elif args.command == "ablate":
            variants = [v.strip() for v in args.variants.split(",") if v.strip()]
            result = run_ablate(cfg, variants)
            print(json.dumps(result, sort_keys=True))
        elif args.command == "sweep":
            values = [_coerce(v) for v in args.values.split(",")]
            result = sweep(args.param, values, cfg, args.select_best)
            print(json.dumps(_brief(result), sort_keys=True))
        elif args.command == "plugin-bench":
            result = run_plugin_bench(cfg, args.seeds, args.overhead)
            print(json.dumps(_brief(result), sort_keys=True))
        elif args.command == "synth":
            path = run_synth(cfg, args.out)
            print(json.dumps({"written": path}))
        return 0
    except Exception as exc:  # CLI boundary: report as machine-readable JSON
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


def _coerce(value: str):
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        try:
            return float(value)
        except ValueError:
            return value


def _brief(result: dict) -> dict:
    out = {k: v for k, v in result.items() if k not in ("per_seed", "rows")}
    if "rows" in result:
        out["rows"] = result["rows"]
    return out


if __name__ == "__main__":
    sys.exit(main())
