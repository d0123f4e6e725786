#!/usr/bin/env python3
"""Synthetic regime-shift experiments: the five ablation variants plus the
plugin comparison (mini patch-transformer with and without selective
embeddings), on the same seeded dataset the acceptance suite uses.

Usage: python scripts/run_synth_suite.py [output_dir]
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from srsnet.datakit import SplitSpec, regime_shift_series, split, standardize, windows
from srsnet.evalcli import write_json
from srsnet.models import ABLATIONS, ModelConfig, PluginForecaster, build_variant
from srsnet.substrate import seed_all
from srsnet.trainer import DataSplits, TrainConfig, train


def make_splits(lookback=96, horizon=96, seed=7):
    frame = regime_shift_series(length=8000, channels=2, seed=seed)
    spec = SplitSpec()
    std, _ = standardize(frame, spec)
    train_f, val_f, test_f = split(std, spec, min_length=lookback + horizon)
    return DataSplits(
        train=windows(train_f, lookback, horizon),
        val=windows(val_f, lookback, horizon),
        test=windows(test_f, lookback, horizon),
    )


def model_config(ablation="full"):
    return ModelConfig(
        lookback=96, horizon=96, patch_size=16, patch_stride=8,
        embed_dim=64, scorer_hidden=64, head_hidden=256, dropout=0.1,
        ablation=ablation,
    )


TRAIN = dict(lr=5e-4, batch_size=64, max_epochs=60, patience=10)


def main() -> int:
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/synth-suite"
    os.makedirs(out_dir, exist_ok=True)
    data = make_splits()

    ablation_rows = []
    for name in ABLATIONS:
        seed_all(0)
        model = build_variant(name, model_config())
        _, rec = train(model, data, TrainConfig(seed=0, **TRAIN))
        ablation_rows.append({"variant": name, "mse": rec.test_mse, "mae": rec.test_mae,
                              "epochs": len(rec.train_losses)})
        print(f"{name:14s} mse={rec.test_mse:.4f} mae={rec.test_mae:.4f}")
    by_name = {r["variant"]: r["mse"] for r in ablation_rows}
    improvement = 100.0 * (by_name["no_srs"] - by_name["full"]) / by_name["no_srs"]
    print(f"full vs no_srs improvement: {improvement:.2f}%")

    plugin_rows = []
    wins = 0
    for seed in range(3):
        pair = {"seed": seed}
        for label, source, ablation in (("baseline", "conventional", "no_srs"),
                                        ("with_srs", "srs", "full")):
            seed_all(seed)
            model = PluginForecaster(model_config(ablation), embed_source=source)
            _, rec = train(model, data, TrainConfig(seed=seed, **TRAIN))
            pair[label] = rec.test_mse
        pair["srs_wins"] = pair["with_srs"] <= pair["baseline"]
        wins += int(pair["srs_wins"])
        plugin_rows.append(pair)
        print(f"plugin seed {seed}: srs={pair['with_srs']:.4f} base={pair['baseline']:.4f}")
    print(f"plugin wins: {wins}/3")

    write_json(os.path.join(out_dir, "synth-suite.json"), {
        "ablation": ablation_rows,
        "improvement_pct": improvement,
        "plugin": plugin_rows,
        "plugin_wins": wins,
    })
    return 0


if __name__ == "__main__":
    sys.exit(main())
