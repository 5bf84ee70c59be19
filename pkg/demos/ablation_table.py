#!/usr/bin/env python3
"""Ablation sweep: which design choices earn their keep?

Three axes, each scored by localization mIoU on planted pairs:
  mask_stage  intermediate mask vs final (two-alignment) mask
  init        alignment start / constraint strategy
  threshold   binarisation strategies (adaptive mean vs fixed cuts)
"""

import tempfile
from pathlib import Path

from tiil.backends import synthetic_bundle
from tiil.dataset import build_planted_benchmark
from tiil.metrics import run_ablations
from tiil.pipeline import suggested_config

bundle = synthetic_bundle(seed=0)
cfg = suggested_config(bundle, seed=0)

out = Path(tempfile.mkdtemp(prefix="tiil_ablate_"))
# a modest slice keeps the sweep quick; bump the counts for tighter numbers
records = build_planted_benchmark(out, bundle, n_consistent=0, n_inconsistent=15, seed=0)
print(f"sweeping {len(records)} planted pairs, 10 variants\n")

report = run_ablations(records, bundle, cfg, parallelism=4)

width = max(len(str(r["variant"])) for r in report["rows"])
last_axis = None
for row in report["rows"]:
    if row["axis"] != last_axis:
        print(f"-- {row['axis']}")
        last_axis = row["axis"]
    print(f"   {str(row['variant']):<{width}}  miou={row['miou']:.4f}")

by = {(r["axis"], r["variant"]): r["miou"] for r in report["rows"]}
print("\norderings to look for:")
print(f"  final >= intermediate : "
      f"{by[('mask_stage', 'final')]:.4f} >= {by[('mask_stage', 'intermediate')]:.4f}")
print(f"  default >= no_constraint >= random_init : "
      f"{by[('init', 'default')]:.4f} >= {by[('init', 'no_constraint')]:.4f} "
      f">= {by[('init', 'random_init')]:.4f}")
print(f"  mean threshold >= every fixed threshold : "
      f"{by[('threshold', 'mean')]:.4f} vs "
      + ", ".join(f"{by[('threshold', v)]:.4f}" for v in ("0.1", "0.2", "0.3", "0.4")))
