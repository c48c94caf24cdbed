#!/usr/bin/env python3
"""Run the full synthetic experiment and print the evaluation report.

Equivalent to `renalrisk reproduce --config configs/default.json` plus stage
timings. Use --config to point at a different pipeline config.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from renalrisk.pipeline import (
    STAGE_ORDER,
    artifact_paths,
    load_pipeline_config,
    run_stage,
)

REPO_ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(REPO_ROOT / "configs" / "default.json"))
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    cfg = load_pipeline_config(args.config, seed_override=args.seed, workers=args.workers)
    timings = {}
    for stage in STAGE_ORDER:
        if stage == "synth" and cfg.synth is None:
            continue
        started = time.monotonic()
        run_stage(cfg, stage)
        timings[stage] = time.monotonic() - started

    print("\nstage timings:")
    for stage, seconds in timings.items():
        print(f"  {stage:<10} {seconds:8.1f}s")
    report = json.loads(artifact_paths(cfg)["report_json"].read_text())
    aucs = [c["roc_auc"] for c in report["performance"].get("rrt", [])]
    if aucs and all(a is not None for a in aucs):
        ordered = all(a >= b for a, b in zip(aucs, aucs[1:]))
        print(f"\nRRT ROC-AUC by horizon: {[round(a, 4) for a in aucs]} (non-increasing: {ordered})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
