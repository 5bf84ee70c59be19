#!/usr/bin/env python3
"""Walk one image/caption pair through all four analysis stages.

The synthetic backend renders each caption word as a vertical colour strip,
so we can plant an inconsistency by hand: render an image from one caption,
then show the analysis a caption with one word swapped.  Artifacts land in
./demo_out/analyze_pair/.
"""

from pathlib import Path

import numpy as np

from tiil.backends import encode_text, generate, synthetic_bundle
from tiil.pipeline import analyze, detect, suggested_config
from tiil.utils import overlay_mask, save_image, save_mask

out_dir = Path("demo_out/analyze_pair")
out_dir.mkdir(parents=True, exist_ok=True)

bundle = synthetic_bundle(seed=0)
model = bundle.text_encoder
cfg = suggested_config(bundle, seed=0)

# --- build the pair -------------------------------------------------------
# the image really shows "anchor guitar", but the caption claims "mirror
# guitar"; on this backend "mirror" is the colour opposite of "anchor", a
# clear-cut lie about the first strip
true_caption = "anchor guitar"
shown_caption = "mirror guitar"
rng = np.random.default_rng(7)
image = generate(bundle, None, encode_text(bundle, true_caption))
image = np.clip(image + rng.normal(0.0, 0.05, size=image.shape), 0.0, 1.0)
save_image(out_dir / "input.png", image)
print(f"image renders {true_caption!r}, caption claims {shown_caption!r}")

# --- run the analysis ------------------------------------------------------
result = analyze(image, shown_caption, bundle, cfg)

save_mask(out_dir / "mask.png", result.mask)
save_mask(out_dir / "mask_intermediate.png", result.intermediate_mask)
save_image(out_dir / "edited.png", result.edited_image)
save_image(out_dir / "overlay.png", overlay_mask(image, result.mask))

print(f"consistency score: {result.score:.2f} / 100")
print(f"decision at threshold 50: {detect(result, 50.0)}")
for w in result.words:
    print(f"  suspect span [{w.start},{w.end}) {w.surface!r}  similarity {w.similarity:+.3f}")

expected = model.strip_mask(0)
agree = (result.mask == expected).mean()
print(f"final mask matches the planted strip on {agree:.0%} of pixels")

# --- contrast with a genuinely consistent pair -----------------------------
clean = generate(bundle, None, encode_text(bundle, true_caption))
honest = analyze(clean, true_caption, bundle, cfg)
print(f"\nsame image with its true caption: score {honest.score:.2f}, "
      f"edit performed: {not honest.metadata['no_edit']}")
print(f"artifacts written to {out_dir}/")
