"""Text-guided editing: materialise the text's claim inside the disputed region.

Given the embedding aligned to the input image and the original text
embedding, the disagreement between the two yields an intermediate mask; the
masked region is then regenerated conditioned on the original text, producing
an edited image that shows what the text says where the image disagreed.
"""

from __future__ import annotations

import numpy as np

from .backends import BackendBundle, TokenEmbeddingMatrix, inpaint, validate_image
from .maskgen import MaskGenConfig, binarize_mask, noise_difference_map

__all__ = ["edit_image"]


def edit_image(
    image: np.ndarray,
    text_embeddings: TokenEmbeddingMatrix,
    aligned_embeddings: TokenEmbeddingMatrix,
    bundle: BackendBundle,
    cfg: MaskGenConfig = MaskGenConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(intermediate_mask, edited_image)``.

    The mask marks where the image-aligned embedding and the raw text
    embedding disagree; its pixels are regenerated conditioned on the text
    embedding, all other pixels are preserved exactly.  An empty mask leaves
    the image unchanged (callers flag this as a no-edit outcome).
    """
    image = validate_image(image)
    diff = noise_difference_map(image, aligned_embeddings, text_embeddings, bundle, cfg)
    mask = binarize_mask(diff, cfg)
    if not mask.any():
        return mask, image.copy()
    edited = inpaint(bundle, image, mask, text_embeddings)
    return mask, edited
