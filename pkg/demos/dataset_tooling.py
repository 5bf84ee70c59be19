#!/usr/bin/env python3
"""Dataset tooling tour: four-way pair generation, manifests, stats, scores.

Starting from one base image/caption pair and one edit instruction, the
generator produces the four image/caption combinations (two consistent, two
inconsistent), writes them to a JSON-lines manifest, and the reporting
helpers summarise what is in it.
"""

import json
import tempfile
from pathlib import Path

from tiil.backends import encode_text, generate, synthetic_bundle
from tiil.dataset import (
    DatasetRecord,
    EditSpec,
    clip_score_table,
    generate_pairs,
    load_manifest,
    validate_stats,
    write_manifest,
)
from tiil.utils import save_image, save_mask

work = Path(tempfile.mkdtemp(prefix="tiil_data_"))
bundle = synthetic_bundle(seed=0)
model = bundle.text_encoder

# --- base pairs and their edits --------------------------------------------
# each replacement is the colour opposite of the word it displaces
plan = [
    ("anchor guitar", "anchor", "mirror"),
    ("candle island", "candle", "orange"),
    ("engine kettle", "engine", "quarry"),
]
save_mask(work / "region.png", model.strip_mask(0))  # every edit targets strip 0

records = []
for i, (caption, term, replacement) in enumerate(plan):
    image = generate(bundle, None, encode_text(bundle, caption))
    save_image(work / f"base{i}.png", image)
    base = DatasetRecord(
        id=f"demo{i}",
        image_path=str(work / f"base{i}.png"),
        caption=caption,
        pair_type="orig_orig",
        label="consistent",
    )
    edit = EditSpec(
        base_id=f"demo{i}",
        region_mask_path=str(work / "region.png"),
        original_term=term,
        replacement_term=replacement,
    )
    records.extend(generate_pairs(base, edit, bundle, work / "generated"))

print(f"four-way records from {len(plan)} edits:")
for rec in records:
    gt = "mask+span" if rec.gt_mask_path else ("span" if rec.gt_spans else "-")
    print(f"  {rec.id:<22} {rec.label:<13} caption={rec.caption!r:<18} gt={gt}")

# --- manifest round trip ----------------------------------------------------
manifest = work / "manifest.jsonl"
write_manifest(records, manifest)
loaded = load_manifest(manifest)
assert loaded.ok and loaded.records == records
print(f"\nmanifest round-trip lossless: {loaded.records == records} ({manifest})")

# a malformed line is reported with its line number, not silently dropped
with open(manifest, "a", encoding="utf-8") as fh:
    fh.write('{"id": "broken"}\n')
reloaded = load_manifest(manifest)
for lineno, message in reloaded.errors:
    print(f"  line {lineno}: {message}")

# --- stats and score table --------------------------------------------------
stats = validate_stats(records)
print("\nrecord counts:")
print(json.dumps(stats.as_dict(), indent=2, sort_keys=True))

table = clip_score_table(records, bundle, seed=0)
print("whole-image cosine by group (x100):")
for name, row in table["groups"].items():
    print(f"  {name:<26} mean={row['mean_clip_score']:7.2f}  n={row['count']}")
for note in table["notes"]:
    print(f"  note: {note}")
