"""Final mask extraction, word-level localization, and the consistency score."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .backends import (
    BackendBundle,
    TokenEmbeddingMatrix,
    encode_image,
    encode_text,
    validate_image,
    validate_mask,
)
from .maskgen import MaskGenConfig, binarize_mask, noise_difference_map

__all__ = [
    "WordSpan",
    "STOPWORDS",
    "SPAN_TEMPLATE",
    "final_mask",
    "candidate_spans",
    "localize_words",
    "pooled_text_vector",
    "consistency_score",
]

# Small closed-class word list; spans consisting solely of these are never
# offered as localization candidates.
STOPWORDS = frozenset(
    """a an and are as at be but by for from has have if in into is it its of on
    or that the their then there these this to was were will with near over
    under""".split()
)

SPAN_TEMPLATE = "A photo of {}"

_MAX_NGRAM = 4

_TOKEN_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class WordSpan:
    """A character span of the input text with its localization similarity."""

    start: int
    end: int
    surface: str
    similarity: float = 0.0

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span offsets [{self.start}, {self.end})")

    def overlaps(self, other: "WordSpan") -> bool:
        return self.start < other.end and other.start < self.end


def final_mask(
    image: np.ndarray,
    aligned_to_input: TokenEmbeddingMatrix,
    aligned_to_edited: TokenEmbeddingMatrix,
    bundle: BackendBundle,
    cfg: MaskGenConfig = MaskGenConfig(),
) -> np.ndarray:
    """Inconsistency mask from the two aligned embeddings.

    Comparing the embedding aligned to the input image against the one
    aligned to the edited image cancels disagreement that both alignments
    absorbed from the image itself, leaving only the genuinely inconsistent
    region.
    """
    diff = noise_difference_map(image, aligned_to_input, aligned_to_edited, bundle, cfg)
    return binarize_mask(diff, cfg)


def _is_stopword(token: str) -> bool:
    return token.lower().strip(".,;:!?'\"") in STOPWORDS


def candidate_spans(text: str) -> list[WordSpan]:
    """Contiguous content-word n-grams (1..4) as character spans.

    Stopwords never appear inside a candidate: they split the text into runs
    of content words, and n-grams are taken within each run.
    """
    tokens = [(m.start(), m.end(), m.group()) for m in _TOKEN_RE.finditer(text)]
    runs: list[list[tuple[int, int, str]]] = [[]]
    for tok in tokens:
        if _is_stopword(tok[2]):
            if runs[-1]:
                runs.append([])
        else:
            runs[-1].append(tok)

    spans: list[WordSpan] = []
    for run in runs:
        for n in range(1, _MAX_NGRAM + 1):
            for i in range(len(run) - n + 1):
                start, end = run[i][0], run[i + n - 1][1]
                spans.append(WordSpan(start, end, text[start:end]))
    return spans


def pooled_text_vector(embeddings: TokenEmbeddingMatrix) -> np.ndarray:
    """Mean of the token embedding rows (the text's single-vector summary)."""
    return embeddings.rows.mean(axis=0)


def localize_words(
    text: str,
    edited_image: np.ndarray,
    mask: np.ndarray,
    bundle: BackendBundle,
    top_k: int = 1,
) -> list[WordSpan]:
    """Rank candidate spans against the masked edited image.

    Each candidate is wrapped in the template ``"A photo of {span}"``,
    encoded, mean-pooled and compared by cosine similarity with the embedding
    of the edited image restricted to the mask.  Candidates overlapping a
    higher-ranked span are suppressed; the ``top_k`` survivors are returned
    in rank order.  A text with no content words yields an empty list.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    candidates = candidate_spans(text)
    if not candidates:
        return []
    edited_image = validate_image(edited_image)
    m = validate_mask(mask, edited_image)
    region_vec = encode_image(bundle, edited_image, m)

    scored: list[WordSpan] = []
    for span in candidates:
        emb = encode_text(bundle, SPAN_TEMPLATE.format(span.surface))
        vec = pooled_text_vector(emb)
        scored.append(WordSpan(span.start, span.end, span.surface, _cosine(region_vec, vec)))

    scored.sort(key=lambda s: (-s.similarity, s.start, s.end))
    picked: list[WordSpan] = []
    for span in scored:
        if any(span.overlaps(p) for p in picked):
            continue
        picked.append(span)
        if len(picked) == top_k:
            break
    return picked


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def consistency_score(
    image: np.ndarray,
    mask: np.ndarray,
    text_vector: np.ndarray,
    bundle: BackendBundle,
) -> float:
    """Score in [0, 100] rating how well the masked image matches the text.

    ``100 * clamp(cos(v, text_vector), 0, 1)`` where ``v`` embeds the image
    restricted to the mask; an empty mask falls back to the full image
    (callers record that fallback).  A zero text vector is an error.
    """
    image = validate_image(image)
    m = validate_mask(mask, image)
    text_vector = np.asarray(text_vector, dtype=np.float64)
    if float(np.linalg.norm(text_vector)) == 0.0:
        raise ValueError("text vector is zero; cannot score")
    vec = encode_image(bundle, image, m if m.any() else None)
    cos = float(np.dot(vec, text_vector) / (np.linalg.norm(vec) * np.linalg.norm(text_vector)))
    return 100.0 * float(np.clip(cos, 0.0, 1.0))
