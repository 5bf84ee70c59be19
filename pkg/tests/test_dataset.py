from __future__ import annotations

import json

import numpy as np
import pytest

from tiil.backends import encode_text, generate, inpaint
from tiil.dataset import (
    CONSISTENT_PAIR_TYPES,
    PAIR_TYPES,
    DatasetRecord,
    EditSpec,
    ManifestError,
    Span,
    bucket_for_area,
    bucket_for_mask,
    build_planted_benchmark,
    clip_score_table,
    generate_pairs,
    load_manifest,
    validate_stats,
    write_manifest,
)
from tiil.utils import load_image, load_mask, save_image, save_mask


def _record(**overrides) -> DatasetRecord:
    base = dict(
        id="r1",
        image_path="img.png",
        caption="a red boat",
        pair_type="orig_orig",
        label="consistent",
    )
    base.update(overrides)
    return DatasetRecord(**base)


# ----------------------------------------------------------------- records


def test_span_validation():
    Span(0, 3, "abc")
    with pytest.raises(ManifestError):
        Span(-1, 3, "abc")
    with pytest.raises(ManifestError):
        Span(3, 3, "")


def test_record_field_validation():
    with pytest.raises(ManifestError):
        _record(id="")
    with pytest.raises(ManifestError):
        _record(caption="")
    with pytest.raises(ManifestError):
        _record(pair_type="mystery")
    with pytest.raises(ManifestError):
        _record(label="dubious")
    with pytest.raises(ManifestError):
        _record(source="scraped")
    with pytest.raises(ManifestError):
        _record(region_bucket="huge")


def test_record_label_must_match_pair_type():
    for pt in PAIR_TYPES:
        good = "consistent" if pt in CONSISTENT_PAIR_TYPES else "inconsistent"
        bad = "inconsistent" if good == "consistent" else "consistent"
        kwargs = {}
        if good == "inconsistent":
            kwargs["gt_spans"] = (Span(2, 5, "red"),)
        _record(pair_type=pt, label=good, **kwargs)
        with pytest.raises(ManifestError):
            _record(pair_type=pt, label=bad, **kwargs)


def test_record_spans_must_slice_the_caption():
    _record(
        pair_type="orig_editText",
        label="inconsistent",
        gt_spans=(Span(2, 5, "red"),),
    )
    with pytest.raises(ManifestError):
        _record(
            pair_type="orig_editText",
            label="inconsistent",
            gt_spans=(Span(2, 5, "blue"),),
        )


def test_inconsistent_record_needs_ground_truth():
    with pytest.raises(ManifestError):
        _record(pair_type="orig_editText", label="inconsistent")
    _record(pair_type="orig_editText", label="inconsistent", gt_mask_path="m.png")


def test_from_dict_rejects_unknown_and_missing_fields():
    good = _record().to_dict()
    assert DatasetRecord.from_dict(good) == _record()
    with pytest.raises(ManifestError):
        DatasetRecord.from_dict({**good, "rating": 5})
    with pytest.raises(ManifestError):
        DatasetRecord.from_dict({k: v for k, v in good.items() if k != "caption"})
    with pytest.raises(ManifestError):
        DatasetRecord.from_dict(["not", "a", "dict"])


# --------------------------------------------------------------- manifests


def test_manifest_round_trip_is_lossless(tmp_path):
    records = [
        _record(),
        _record(
            id="r2",
            pair_type="edit_origText",
            label="inconsistent",
            source="generated",
            gt_mask_path="masks/r2.png",
            gt_spans=(Span(2, 5, "red"), Span(6, 10, "boat")),
            region_bucket="small",
        ),
    ]
    path = tmp_path / "manifest.jsonl"
    write_manifest(records, path)
    loaded = load_manifest(path)
    assert loaded.ok
    assert loaded.records == records


def test_load_manifest_collects_errors_with_line_numbers(tmp_path):
    good = json.dumps(_record().to_dict())
    dup = json.dumps(_record().to_dict())
    lines = [
        good,
        "",  # blank: ignored
        "{not json",
        json.dumps({"id": "x"}),  # missing fields
        dup,  # duplicate id r1
        json.dumps(_record(id="r9").to_dict()),
    ]
    path = tmp_path / "broken.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    loaded = load_manifest(path)
    assert [r.id for r in loaded.records] == ["r1", "r9"]
    assert not loaded.ok
    assert [lineno for lineno, _ in loaded.errors] == [3, 4, 5]
    assert "duplicate" in loaded.errors[2][1]


# ----------------------------------------------------------------- buckets


def test_bucket_boundaries():
    assert bucket_for_area(0) == "none"
    assert bucket_for_area(-5) == "none"
    assert bucket_for_area(1) == "small"
    assert bucket_for_area(100 * 100 - 1) == "small"
    assert bucket_for_area(100 * 100) == "medium"
    assert bucket_for_area(150 * 150) == "medium"
    assert bucket_for_area(200 * 200) == "medium"
    assert bucket_for_area(200 * 200 + 1) == "large"


def test_bucket_for_mask_counts_pixels():
    mask = np.zeros((250, 250), dtype=bool)
    assert bucket_for_mask(mask) == "none"
    mask[:100, :100] = True
    assert bucket_for_mask(mask) == "medium"
    mask[:] = True
    assert bucket_for_mask(mask) == "large"


# ------------------------------------------------------------- generation


@pytest.fixture()
def base_pair(tmp_path, bundle):
    image = generate(bundle, None, encode_text(bundle, "anchor juice"))
    image_path = tmp_path / "base.png"
    save_image(image_path, image)
    mask_path = tmp_path / "region.png"
    save_mask(mask_path, bundle.text_encoder.strip_mask(0))
    record = DatasetRecord(
        id="pair0",
        image_path=str(image_path),
        caption="anchor juice",
        pair_type="orig_orig",
        label="consistent",
    )
    edit = EditSpec(
        base_id="pair0",
        region_mask_path=str(mask_path),
        original_term="anchor",
        replacement_term="island",
    )
    return record, edit


def test_generate_pairs_yields_the_four_way_records(tmp_path, bundle, base_pair):
    record, edit = base_pair
    out = generate_pairs(record, edit, bundle, tmp_path / "gen")
    assert [r.pair_type for r in out] == list(PAIR_TYPES)
    labels = [r.label for r in out]
    assert labels.count("consistent") == 2 and labels.count("inconsistent") == 2
    assert [r.id for r in out] == [f"pair0:{pt}" for pt in PAIR_TYPES]

    edited_caption = "island juice"
    assert out[1].caption == edited_caption
    assert out[2].caption == edited_caption
    assert out[3].caption == "anchor juice"
    # spans point at the swapped term in each inconsistent caption
    (span,) = out[2].gt_spans
    assert edited_caption[span.start : span.end] == "island"
    (span,) = out[3].gt_spans
    assert out[3].caption[span.start : span.end] == "anchor"
    assert out[3].gt_mask_path and out[3].region_bucket == "small"


def test_generate_pairs_composites_the_edit_region(tmp_path, bundle, base_pair):
    record, edit = base_pair
    out = generate_pairs(record, edit, bundle, tmp_path / "gen")
    edited = load_image(out[1].image_path)
    base = load_image(record.image_path)
    region = load_mask(out[3].gt_mask_path)
    expected = inpaint(bundle, base, region, encode_text(bundle, out[1].caption))
    # PNG round-trips quantise to 1/255
    assert np.allclose(edited, expected, atol=1.0 / 255.0)
    assert np.array_equal(edited[~region], base[~region])


def test_generate_pairs_error_cases(tmp_path, bundle, base_pair):
    record, edit = base_pair
    with pytest.raises(ValueError):
        generate_pairs(record, EditSpec("other", edit.region_mask_path, "anchor", "island"), bundle, tmp_path)
    with pytest.raises(ValueError):
        generate_pairs(
            record, EditSpec("pair0", edit.region_mask_path, "zeppelin", "island"), bundle, tmp_path
        )
    empty_mask = tmp_path / "empty.png"
    save_mask(empty_mask, np.zeros((16, 16), dtype=bool))
    with pytest.raises(ValueError):
        generate_pairs(record, EditSpec("pair0", str(empty_mask), "anchor", "island"), bundle, tmp_path)
    small_mask = tmp_path / "small.png"
    save_mask(small_mask, np.ones((4, 4), dtype=bool))
    with pytest.raises(ValueError):
        generate_pairs(record, EditSpec("pair0", str(small_mask), "anchor", "island"), bundle, tmp_path)
    with pytest.raises(ValueError):
        EditSpec("pair0", str(empty_mask), "anchor", "anchor")
    with pytest.raises(ValueError):
        EditSpec("pair0", str(empty_mask), "", "island")


# ------------------------------------------------------------- statistics


def test_validate_stats_counts_exactly():
    records = []
    for i in range(12):
        records.append(_record(id=f"c{i}"))
    for i in range(8):
        records.append(
            _record(id=f"e{i}", pair_type="edit_editText", source="generated")
        )
    for i in range(11):
        records.append(
            _record(
                id=f"t{i}",
                pair_type="orig_editText",
                label="inconsistent",
                source="generated",
                gt_spans=(Span(2, 5, "red"),),
            )
        )
    for i in range(9):
        records.append(
            _record(
                id=f"m{i}",
                pair_type="edit_origText",
                label="inconsistent",
                source="generated",
                gt_mask_path="m.png",
                region_bucket="medium" if i < 4 else "small",
            )
        )
    stats = validate_stats(records)
    assert stats.total == 40
    assert stats.by_label == {"consistent": 20, "inconsistent": 20}
    assert stats.by_pair_type == {
        "orig_orig": 12,
        "edit_editText": 8,
        "orig_editText": 11,
        "edit_origText": 9,
    }
    assert stats.by_region_bucket == {"none": 31, "medium": 4, "small": 5}
    assert stats.as_dict()["total"] == 40


def test_clip_score_table_separates_matched_from_swapped(bundle, benchmark):
    _, records = benchmark
    subset = records[:10] + records[50:60]
    table = clip_score_table(subset, bundle, seed=0)
    groups = table["groups"]
    assert groups["real_consistent"]["count"] == 10
    assert groups["generated_inconsistent"]["count"] == 10
    assert groups["random_swap_inconsistent"]["count"] == 10
    matched = groups["real_consistent"]["mean_clip_score"]
    swapped = groups["random_swap_inconsistent"]["mean_clip_score"]
    assert matched > swapped
    # deterministic under a fixed seed
    again = clip_score_table(subset, bundle, seed=0)
    assert again == table
    # the benchmark has no edit_editText pairs, so that group is noted
    assert any("generated_consistent" in note for note in table["notes"])


# -------------------------------------------------------------- benchmark


def test_benchmark_structure(bundle, model, benchmark):
    out, records = benchmark
    assert len(records) == 100
    consistent = [r for r in records if r.label == "consistent"]
    inconsistent = [r for r in records if r.label == "inconsistent"]
    assert len(consistent) == 50 and len(inconsistent) == 50
    loaded = load_manifest(out / "manifest.jsonl")
    assert loaded.ok and loaded.records == records

    vocab = set(model.vocabulary)
    for rec in records:
        words = rec.caption.split()
        assert len(words) == 2 and set(words) <= vocab
        assert load_image(rec.image_path).shape == (16, 16, 3)

    strip_masks = [model.strip_mask(k) for k in range(2)]
    for rec in inconsistent:
        assert rec.pair_type == "orig_editText" and rec.source == "generated"
        (span,) = rec.gt_spans
        assert rec.caption[span.start : span.end] == span.surface
        k = rec.caption.split().index(span.surface)
        mask = load_mask(rec.gt_mask_path)
        assert np.array_equal(mask, strip_masks[k])


def test_benchmark_requires_the_synthetic_vocabulary(tmp_path):
    class Opaque:
        pass

    class FakeBundle:
        text_encoder = Opaque()

    with pytest.raises(ValueError):
        build_planted_benchmark(tmp_path, FakeBundle())
