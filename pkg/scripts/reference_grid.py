#!/usr/bin/env python3
"""Desk-scale reference grid: train every skip kind on one shared dataset.

Writes the golden artifacts the regression tests pin against:

    reference/golden.json     per-kind epoch means, test metrics, runtimes
    reference/logs/KIND.tsv   step-level training curves
    reference/reports/KIND.txt
    reference/radar.csv       comparison over all kinds (written when complete)

Checkpoints and the dataset stay under the work directory; both are
reproducible from the seeds recorded in golden.json.  Running a subset of
kinds merges into an existing golden.json, so the grid can be filled in
across several invocations.
"""
import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from hybridskip import metrics as M
from hybridskip import train_eval as TE
from hybridskip.checkpoint import save_model
from hybridskip.data import SceneSpec, write_split
from hybridskip.skips import SKIP_KINDS
from hybridskip.unet import UNetConfig

PLAN = (16, 32, 64, 128, 256)
RESOLUTION = (64, 64)
TRAIN_COUNT = 200
TEST_COUNT = 50
SEED = 7
EPOCHS = 30
FILTER_SIZE = 9

GRID_CONFIG = {
    "channel_plan": list(PLAN),
    "resolution": list(RESOLUTION),
    "train_count": TRAIN_COUNT,
    "test_count": TEST_COUNT,
    "seed": SEED,
    "epochs": EPOCHS,
    "filter_size": FILTER_SIZE,
    "lr": 0.0002,
    "batch_size": 4,
    "loss": "l1_grad",
}


def ensure_dataset(root: Path) -> Path:
    marker = root / "test" / "manifest.tsv"
    if not marker.is_file():
        template = SceneSpec(seed=0, resolution=RESOLUTION)
        write_split(root, "train", SEED, TRAIN_COUNT, template)
        write_split(root, "test", SEED + 1000, TEST_COUNT, template)
    return root


def load_golden(path: Path) -> dict:
    if path.is_file():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"config": GRID_CONFIG, "pinned": {}, "kinds": {}}


def run_kind(kind: str, data_root: Path, work: Path, ref: Path) -> dict:
    model_cfg = UNetConfig(skip=kind, channel_plan=PLAN,
                           filter_size=FILTER_SIZE)
    train_cfg = TE.TrainConfig(lr=GRID_CONFIG["lr"],
                               batch_size=GRID_CONFIG["batch_size"],
                               epochs=EPOCHS, seed=SEED,
                               loss=GRID_CONFIG["loss"])
    t0 = time.time()
    model, log = TE.train(train_cfg, model_cfg, data_root)
    train_seconds = time.time() - t0

    ckpt = work / "ckpts" / f"{kind.replace(':', '_')}.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_model(ckpt, model)
    TE.write_log(ref / "logs" / f"{kind}.tsv", log)

    report = TE.evaluate(model, data_root)
    (ref / "reports").mkdir(parents=True, exist_ok=True)
    (ref / "reports" / f"{kind}.txt").write_text(M.report_text(report),
                                                 encoding="utf-8")
    return {
        "epoch_means": log.epoch_means,
        "train_seconds": round(train_seconds, 1),
        "metrics": dataclasses.asdict(report),
    }


def write_radar(golden: dict, ref: Path):
    # a fully degenerate run (e.g. zero predicted edges) has an infinite
    # raw axis and cannot be normalized; compare the rest and record it
    named, excluded = [], []
    for kind in SKIP_KINDS:
        report = M.MetricsReport(**golden["kinds"][kind]["metrics"])
        if np.all(np.isfinite(M.radar_axes_raw(report))):
            named.append((kind, report))
        else:
            excluded.append(kind)
    rows = M.radar(named)
    (ref / "radar.csv").write_text(M.radar_csv(rows), encoding="utf-8")
    golden["radar_areas"] = {row.name: row.area for row in rows}
    golden["radar_excluded"] = excluded


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work", required=True, help="scratch directory")
    parser.add_argument("--ref", default=str(Path(__file__).resolve()
                                             .parent.parent / "reference"))
    parser.add_argument("--kinds", nargs="+", default=list(SKIP_KINDS),
                        choices=list(SKIP_KINDS))
    args = parser.parse_args(argv)

    work = Path(args.work)
    ref = Path(args.ref)
    (ref / "logs").mkdir(parents=True, exist_ok=True)
    data_root = ensure_dataset(work / "data")

    golden_path = ref / "golden.json"
    golden = load_golden(golden_path)
    for kind in args.kinds:
        entry = run_kind(kind, data_root, work, ref)
        golden["kinds"][kind] = entry
        if kind == "hybrid":
            golden["pinned"].setdefault("hybrid_delta_125",
                                        entry["metrics"]["delta_125"])
        if set(golden["kinds"]) == set(SKIP_KINDS):
            write_radar(golden, ref)
        golden_path.write_text(json.dumps(golden, indent=1, sort_keys=True)
                               + "\n", encoding="utf-8")
        e = entry["epoch_means"]
        print(f"{kind}: epoch1={e[0]:.4f} epoch5={e[4]:.4f} "
              f"final={e[-1]:.4f} delta125={entry['metrics']['delta_125']:.2f} "
              f"({entry['train_seconds']:.0f}s)", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
