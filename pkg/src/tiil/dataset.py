"""Dataset records, JSON-lines manifests, pair generation and statistics.

A manifest is a UTF-8 text file with one JSON object per line describing an
image/caption pair.  Pair types follow the four-way construction around an
edited image and an edited caption:

* ``orig_orig``      -- original image, original caption (consistent)
* ``edit_editText``  -- edited image, edited caption (consistent)
* ``orig_editText``  -- original image, edited caption (inconsistent)
* ``edit_origText``  -- edited image, original caption (inconsistent)

Ground truth for inconsistent pairs is a region mask (single-channel PNG,
values {0, 255}) and/or character spans into the caption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backends import BackendBundle, encode_text, inpaint
from .localize import pooled_text_vector
from .utils import load_image, load_mask, save_image, save_mask, stable_seed

__all__ = [
    "PAIR_TYPES",
    "CONSISTENT_PAIR_TYPES",
    "REGION_BUCKETS",
    "Span",
    "DatasetRecord",
    "EditSpec",
    "ManifestError",
    "ManifestLoad",
    "load_manifest",
    "write_manifest",
    "generate_pairs",
    "bucket_for_area",
    "bucket_for_mask",
    "validate_stats",
    "DatasetStats",
    "clip_score_table",
    "build_planted_benchmark",
]

PAIR_TYPES = ("orig_orig", "edit_editText", "orig_editText", "edit_origText")
CONSISTENT_PAIR_TYPES = frozenset({"orig_orig", "edit_editText"})
LABELS = ("consistent", "inconsistent")
SOURCES = ("real", "generated")
REGION_BUCKETS = ("large", "medium", "small", "none")

# Region-size buckets by pixel area: large above 200x200, small below 100x100,
# medium in between (both bounds inclusive).
_MEDIUM_MIN_AREA = 100 * 100
_LARGE_MIN_AREA = 200 * 200


class ManifestError(ValueError):
    """A manifest line or record failed validation."""


@dataclass(frozen=True)
class Span:
    """Character span into a caption."""

    start: int
    end: int
    surface: str

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ManifestError(f"bad span offsets [{self.start}, {self.end})")


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    image_path: str
    caption: str
    pair_type: str
    label: str
    source: str = "real"
    gt_mask_path: str | None = None
    gt_spans: tuple[Span, ...] = ()
    region_bucket: str = "none"

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("record id must be non-empty")
        if not self.caption:
            raise ManifestError(f"record {self.id!r}: caption must be non-empty")
        if self.pair_type not in PAIR_TYPES:
            raise ManifestError(f"record {self.id!r}: unknown pair_type {self.pair_type!r}")
        if self.label not in LABELS:
            raise ManifestError(f"record {self.id!r}: unknown label {self.label!r}")
        if self.source not in SOURCES:
            raise ManifestError(f"record {self.id!r}: unknown source {self.source!r}")
        if self.region_bucket not in REGION_BUCKETS:
            raise ManifestError(f"record {self.id!r}: unknown region_bucket {self.region_bucket!r}")
        expected = "consistent" if self.pair_type in CONSISTENT_PAIR_TYPES else "inconsistent"
        if self.label != expected:
            raise ManifestError(
                f"record {self.id!r}: pair_type {self.pair_type!r} implies label {expected!r}"
            )
        object.__setattr__(self, "gt_spans", tuple(self.gt_spans))
        for span in self.gt_spans:
            if self.caption[span.start : span.end] != span.surface:
                raise ManifestError(
                    f"record {self.id!r}: span surface {span.surface!r} does not match caption"
                )
        if self.label == "inconsistent" and not self.gt_mask_path and not self.gt_spans:
            raise ManifestError(
                f"record {self.id!r}: inconsistent records need a gt mask or gt spans"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_path": self.image_path,
            "caption": self.caption,
            "pair_type": self.pair_type,
            "label": self.label,
            "source": self.source,
            "gt_mask_path": self.gt_mask_path,
            "gt_spans": [{"start": s.start, "end": s.end, "surface": s.surface} for s in self.gt_spans],
            "region_bucket": self.region_bucket,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetRecord":
        if not isinstance(data, dict):
            raise ManifestError(f"record must be a JSON object, got {type(data).__name__}")
        known = {
            "id", "image_path", "caption", "pair_type", "label",
            "source", "gt_mask_path", "gt_spans", "region_bucket",
        }
        unknown = set(data) - known
        if unknown:
            raise ManifestError(f"unknown manifest fields: {sorted(unknown)}")
        missing = {"id", "image_path", "caption", "pair_type", "label"} - set(data)
        if missing:
            raise ManifestError(f"missing manifest fields: {sorted(missing)}")
        spans = tuple(
            Span(int(s["start"]), int(s["end"]), str(s["surface"]))
            for s in data.get("gt_spans") or ()
        )
        return cls(
            id=str(data["id"]),
            image_path=str(data["image_path"]),
            caption=str(data["caption"]),
            pair_type=str(data["pair_type"]),
            label=str(data["label"]),
            source=str(data.get("source", "real")),
            gt_mask_path=data.get("gt_mask_path"),
            gt_spans=spans,
            region_bucket=str(data.get("region_bucket", "none")),
        )


@dataclass(frozen=True)
class ManifestLoad:
    records: list[DatasetRecord]
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def load_manifest(path: str | Path) -> ManifestLoad:
    """Load a JSON-lines manifest; bad lines are skipped and reported.

    Returns the parsed records plus ``(line_number, message)`` for every
    malformed line.  Blank lines are ignored.
    """
    records: list[DatasetRecord] = []
    errors: list[tuple[int, str]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = DatasetRecord.from_dict(json.loads(line))
            except json.JSONDecodeError as exc:
                errors.append((lineno, f"invalid JSON: {exc.msg}"))
                continue
            except (ManifestError, TypeError, KeyError, ValueError) as exc:
                errors.append((lineno, str(exc)))
                continue
            if rec.id in seen:
                errors.append((lineno, f"duplicate record id {rec.id!r}"))
                continue
            seen.add(rec.id)
            records.append(rec)
    return ManifestLoad(records, errors)


def write_manifest(records: list[DatasetRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


# --------------------------------------------------------------- generation


@dataclass(frozen=True)
class EditSpec:
    """Instructions for a four-way pair: edit this region, swap this term."""

    base_id: str
    region_mask_path: str
    original_term: str
    replacement_term: str

    def __post_init__(self) -> None:
        if not self.original_term or not self.replacement_term:
            raise ValueError("edit terms must be non-empty")
        if self.original_term == self.replacement_term:
            raise ValueError("original and replacement terms must differ")


def generate_pairs(
    base: DatasetRecord,
    edit: EditSpec,
    bundle: BackendBundle,
    out_dir: str | Path,
) -> list[DatasetRecord]:
    """Produce the four-way records for one base pair and one edit.

    The edited image regenerates the edit region conditioned on the edited
    caption; the edited image and region mask are written under ``out_dir``.
    Returns exactly two consistent and two inconsistent records.
    """
    if edit.base_id != base.id:
        raise ValueError(f"edit targets {edit.base_id!r}, record is {base.id!r}")
    caption = base.caption
    pos = caption.find(edit.original_term)
    if pos < 0:
        raise ValueError(f"original term {edit.original_term!r} not found in caption")
    edited_caption = (
        caption[:pos] + edit.replacement_term + caption[pos + len(edit.original_term) :]
    )
    replacement_span = Span(pos, pos + len(edit.replacement_term), edit.replacement_term)
    original_span = Span(pos, pos + len(edit.original_term), edit.original_term)

    image = load_image(base.image_path)
    region = load_mask(edit.region_mask_path)
    if region.shape != image.shape[:2]:
        raise ValueError("region mask does not match the base image")
    if not region.any():
        raise ValueError("region mask is empty")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    edited_image = inpaint(bundle, image, region, encode_text(bundle, edited_caption))
    edited_path = out_dir / f"{base.id}_edited.png"
    mask_path = out_dir / f"{base.id}_region.png"
    save_image(edited_path, edited_image)
    save_mask(mask_path, region)

    bucket = bucket_for_mask(region)
    return [
        replace(base, id=f"{base.id}:orig_orig", pair_type="orig_orig", label="consistent"),
        DatasetRecord(
            id=f"{base.id}:edit_editText",
            image_path=str(edited_path),
            caption=edited_caption,
            pair_type="edit_editText",
            label="consistent",
            source="generated",
        ),
        DatasetRecord(
            id=f"{base.id}:orig_editText",
            image_path=base.image_path,
            caption=edited_caption,
            pair_type="orig_editText",
            label="inconsistent",
            source="generated",
            gt_spans=(replacement_span,),
        ),
        DatasetRecord(
            id=f"{base.id}:edit_origText",
            image_path=str(edited_path),
            caption=caption,
            pair_type="edit_origText",
            label="inconsistent",
            source="generated",
            gt_mask_path=str(mask_path),
            gt_spans=(original_span,),
            region_bucket=bucket,
        ),
    ]


# --------------------------------------------------------------- statistics


def bucket_for_area(area: int) -> str:
    """Region-size bucket for a pixel area (none / small / medium / large)."""
    if area <= 0:
        return "none"
    if area > _LARGE_MIN_AREA:
        return "large"
    if area >= _MEDIUM_MIN_AREA:
        return "medium"
    return "small"


def bucket_for_mask(mask: np.ndarray) -> str:
    return bucket_for_area(int(np.asarray(mask, dtype=bool).sum()))


@dataclass(frozen=True)
class DatasetStats:
    total: int
    by_label: dict
    by_pair_type: dict
    by_region_bucket: dict

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "by_label": dict(self.by_label),
            "by_pair_type": dict(self.by_pair_type),
            "by_region_bucket": dict(self.by_region_bucket),
        }


def validate_stats(records: list[DatasetRecord]) -> DatasetStats:
    """Count records by label, pair type and region bucket (never enforces
    any expected totals -- reporting only)."""
    by_label: dict[str, int] = {}
    by_pair: dict[str, int] = {}
    by_bucket: dict[str, int] = {}
    for rec in records:
        by_label[rec.label] = by_label.get(rec.label, 0) + 1
        by_pair[rec.pair_type] = by_pair.get(rec.pair_type, 0) + 1
        by_bucket[rec.region_bucket] = by_bucket.get(rec.region_bucket, 0) + 1
    return DatasetStats(len(records), by_label, by_pair, by_bucket)


def clip_score_table(
    records: list[DatasetRecord], bundle: BackendBundle, seed: int = 0
) -> dict:
    """Mean whole-image/caption cosine (x100) per record group.

    Groups: consistent pairs split by source (real / generated), all
    inconsistent pairs, plus a random-swap group built by pairing the
    consistent images against a seeded permutation of their captions.  Empty
    groups are omitted and noted.
    """

    def score(image: np.ndarray, caption: str) -> float:
        vec = bundle.image_encoder.encode_image(image)
        pooled = pooled_text_vector(encode_text(bundle, caption))
        norm = float(np.linalg.norm(pooled))
        if norm == 0.0:
            return 0.0
        return 100.0 * float(np.dot(vec, pooled) / norm)

    groups: dict[str, list[float]] = {
        "real_consistent": [],
        "generated_consistent": [],
        "generated_inconsistent": [],
        "random_swap_inconsistent": [],
    }
    consistent: list[tuple[np.ndarray, str]] = []
    for rec in records:
        image = load_image(rec.image_path)
        if rec.label == "consistent":
            consistent.append((image, rec.caption))
            key = "real_consistent" if rec.source == "real" else "generated_consistent"
        else:
            key = "generated_inconsistent"
        groups[key].append(score(image, rec.caption))

    if len(consistent) >= 2:
        perm = np.random.default_rng(stable_seed(seed, "caption-swap")).permutation(len(consistent))
        groups["random_swap_inconsistent"] = [
            score(consistent[i][0], consistent[int(j)][1]) for i, j in enumerate(perm)
        ]

    table: dict = {"groups": {}, "notes": []}
    for name, values in groups.items():
        if values:
            table["groups"][name] = {
                "mean_clip_score": float(np.mean(values)),
                "count": len(values),
            }
        else:
            table["notes"].append(f"group {name!r} has no members and was omitted")
    return table


# ---------------------------------------------------- synthetic benchmark


def build_planted_benchmark(
    out_dir: str | Path,
    bundle: BackendBundle,
    n_consistent: int = 50,
    n_inconsistent: int = 50,
    noise: float = 0.05,
    seed: int = 0,
) -> list[DatasetRecord]:
    """Build an exactly-annotated benchmark on the synthetic backend.

    Every scene is a two-word caption rendered to an image (plus pixel
    noise).  Inconsistent pairs replace exactly one caption word, so the
    ground-truth region is that token's strip and the ground-truth span is
    the replaced word.  The two scene concepts are uncorrelated and every
    replacement is the colour opposite of the word it displaces, which keeps
    masked-region scores for consistent and inconsistent pairs cleanly
    separated.  Writes images, masks and ``manifest.jsonl`` under ``out_dir``
    and returns the records.
    """
    model = bundle.text_encoder
    vocab = getattr(model, "vocabulary", None)
    if vocab is None:
        raise ValueError("the planted benchmark requires the synthetic backend")
    n_words = len(vocab)
    quarter = n_words // 4
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    def scene_words(s0: int) -> list[str]:
        # a quarter turn apart on the concept circle: uncorrelated colours
        return [vocab[s0 % n_words], vocab[(s0 + quarter) % n_words]]

    def render_scene(words: list[str], scene_rng: np.random.Generator) -> np.ndarray:
        clean = model.generate(None, encode_text(bundle, " ".join(words)))
        return np.clip(clean + scene_rng.normal(0.0, noise, size=clean.shape), 0.0, 1.0)

    records: list[DatasetRecord] = []
    for i in range(n_consistent):
        scene_rng = np.random.default_rng(stable_seed(seed, "con", i))
        words = scene_words(int(scene_rng.integers(n_words)))
        image = render_scene(words, scene_rng)
        rec_id = f"bench-con-{i:03d}"
        image_path = out_dir / "images" / f"{rec_id}.png"
        save_image(image_path, image)
        records.append(
            DatasetRecord(
                id=rec_id,
                image_path=str(image_path),
                caption=" ".join(words),
                pair_type="orig_orig",
                label="consistent",
                source="real",
            )
        )

    for i in range(n_inconsistent):
        scene_rng = np.random.default_rng(stable_seed(seed, "inc", i))
        s0 = int(scene_rng.integers(n_words))
        true_words = scene_words(s0)
        image = render_scene(true_words, scene_rng)

        k = int(scene_rng.integers(len(true_words)))
        # the replacement is the half-turn opposite of the displaced word
        swap_pos = (s0 + k * quarter + n_words // 2) % n_words
        shown_words = list(true_words)
        shown_words[k] = vocab[swap_pos]
        caption = " ".join(shown_words)
        start = len(" ".join(shown_words[:k])) + (1 if k else 0)
        span = Span(start, start + len(shown_words[k]), shown_words[k])

        rec_id = f"bench-inc-{i:03d}"
        image_path = out_dir / "images" / f"{rec_id}.png"
        mask_path = out_dir / "masks" / f"{rec_id}.png"
        save_image(image_path, image)
        save_mask(mask_path, model.strip_mask(k))
        records.append(
            DatasetRecord(
                id=rec_id,
                image_path=str(image_path),
                caption=caption,
                pair_type="orig_editText",
                label="inconsistent",
                source="generated",
                gt_mask_path=str(mask_path),
                gt_spans=(span,),
                region_bucket=bucket_for_mask(model.strip_mask(k)),
            )
        )

    write_manifest(records, out_dir / "manifest.jsonl")
    return records
