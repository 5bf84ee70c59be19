from __future__ import annotations

import numpy as np

from tiil.backends import encode_text, generate
from tiil.edit import edit_image
from tiil.maskgen import MaskGenConfig


def test_identical_embeddings_edit_nothing(bundle):
    emb = encode_text(bundle, "quilt rocket")
    image = generate(bundle, None, emb)
    mask, edited = edit_image(image, emb, emb, bundle, MaskGenConfig(n_noises=2))
    assert not mask.any()
    assert np.array_equal(edited, image)
    assert edited is not image  # caller gets an independent copy


def test_planted_token_edit_replaces_its_strip(bundle, model):
    text_emb = encode_text(bundle, "saddle temple urchin")
    rows = text_emb.rows.copy()
    rows[1] = model.token_embedding("falcon")  # what the image actually shows
    aligned = text_emb.with_rows(rows)
    image = generate(bundle, None, aligned)

    mask, edited = edit_image(image, text_emb, aligned, bundle, MaskGenConfig(n_noises=2))

    assert np.array_equal(mask, model.strip_mask(1))
    target = generate(bundle, None, text_emb)
    # inside the mask the edit shows the text's claim...
    assert np.allclose(edited[mask], target[mask])
    # ...and outside it the input pixels are preserved exactly
    assert np.array_equal(edited[~mask], image[~mask])
    assert not np.allclose(edited[mask], image[mask])


def test_edit_output_shape_and_range(bundle, model):
    text_emb = encode_text(bundle, "violet walnut")
    rows = text_emb.rows.copy()
    rows[0] = model.token_embedding("kettle")
    aligned = text_emb.with_rows(rows)
    image = generate(bundle, None, aligned)
    mask, edited = edit_image(image, text_emb, aligned, bundle, MaskGenConfig(n_noises=1))
    assert mask.shape == (16, 16) and mask.dtype == bool
    assert edited.shape == image.shape
    assert edited.min() >= 0.0 and edited.max() <= 1.0
