#!/usr/bin/env python3
"""Desk-scale ETTh1 reproduction: best-over-lookback {96, 336, 512} at
horizon 96, selected on validation loss.

Needs the 14,400-row ETT-small ETTh1.csv (7 channels + date column); pass the
path as the first argument or set SRSNET_ETTH1.  Expect roughly an hour on a
few CPU cores; minutes with a GPU build of torch.

Usage: python scripts/run_etth1.py [path/to/ETTh1.csv] [output_dir]
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from srsnet.evalcli import ExperimentConfig, sweep


def main() -> int:
    path = sys.argv[1] if len(sys.argv) > 1 else os.environ.get("SRSNET_ETTH1", "data/ETTh1.csv")
    out_dir = sys.argv[2] if len(sys.argv) > 2 else "runs/etth1-h96"
    if not os.path.exists(path):
        print(f"ETTh1.csv not found at {path!r}; pass a path or set SRSNET_ETTH1",
              file=sys.stderr)
        return 1
    cfg = ExperimentConfig.from_flat({
        "dataset.name": "ETTh1",
        "dataset.path": path,
        "window.horizon": "96",
        "run.output_dir": out_dir,
    })
    result = sweep("lookback", [96, 336, 512], cfg, select_best="val")
    print(json.dumps(result, indent=2, sort_keys=True))
    best = result["best"]
    ok = best["mse"] <= 0.40 and best["mae"] <= 0.43
    print(f"best lookback={best['lookback']}: mse={best['mse']:.4f} (target <=0.40), "
          f"mae={best['mae']:.4f} (target <=0.43) -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
