"""Evaluation metrics and the ablation/evaluation harness.

Localization quality is class-wise mean IoU (foreground and background both
count); detection quality is exact rank-based ROC AUC plus accuracy at the
best decision threshold found by exhaustive sweep.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import replace
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .backends import BackendBundle
from .dataset import DatasetRecord
from .localize import pooled_text_vector
from .pipeline import PipelineConfig, analyze_batch
from .utils import load_image, load_mask

__all__ = [
    "miou",
    "dataset_miou",
    "roc_auc",
    "accuracy_at_best_threshold",
    "evaluate_localization",
    "evaluate_detection",
    "baseline_clip_detect",
    "run_ablations",
    "report_entry",
    "ABLATION_AXES",
]


def miou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Class-wise mean IoU over {foreground, background}.

    A class absent from both masks scores IoU 1 for that class; absent from
    exactly one scores 0.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")

    def class_iou(p: np.ndarray, g: np.ndarray) -> float:
        union = np.logical_or(p, g).sum()
        if union == 0:
            return 1.0
        return float(np.logical_and(p, g).sum() / union)

    return 0.5 * (class_iou(pred, gt) + class_iou(~pred, ~gt))


def dataset_miou(
    predictions: Mapping[str, np.ndarray], records: Sequence[DatasetRecord]
) -> float:
    """Unweighted mean of per-pair mIoU over mask-annotated inconsistent pairs.

    Every such record must have a prediction; missing ids raise an error
    naming them.
    """
    scored = [r for r in records if r.label == "inconsistent" and r.gt_mask_path]
    if not scored:
        raise ValueError("no inconsistent records with ground-truth masks")
    missing = [r.id for r in scored if r.id not in predictions]
    if missing:
        raise ValueError(f"missing predictions for records: {missing}")
    values = [miou(predictions[r.id], load_mask(r.gt_mask_path)) for r in scored]
    return float(np.mean(values))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Exact ROC AUC with tie handling.

    ``labels`` are 1 for consistent (expected high score) and 0 for
    inconsistent; the result equals P(score_1 > score_0) + 0.5 P(tie) over
    all pairs, computed via mid-ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present to compute AUC")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def accuracy_at_best_threshold(
    scores: Sequence[float], labels: Sequence[int]
) -> tuple[float, float]:
    """Best detection accuracy over an exhaustive threshold sweep.

    A pair is called inconsistent iff its score is strictly below the
    threshold.  Candidates are the midpoints between consecutive unique
    scores plus the two boundary decisions (everything consistent /
    everything inconsistent); the smallest threshold achieving the maximum
    accuracy is returned as ``(accuracy, threshold)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores and labels must be matching non-empty 1-d sequences")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 (inconsistent) or 1 (consistent)")
    uniq = np.unique(scores)
    candidates = np.concatenate([[uniq[0]], (uniq[:-1] + uniq[1:]) / 2.0, [uniq[-1] + 1.0]])
    best_acc, best_thr = -1.0, float(candidates[0])
    for thr in candidates:
        predicted_consistent = scores >= thr
        acc = float(np.mean(predicted_consistent == (labels == 1)))
        if acc > best_acc:
            best_acc, best_thr = acc, float(thr)
    return best_acc, best_thr


# ------------------------------------------------------------------ harness


def _analysis_inputs(records: Sequence[DatasetRecord]) -> list[tuple[str, np.ndarray, str]]:
    return [(r.id, load_image(r.image_path), r.caption) for r in records]


def evaluate_localization(
    records: Sequence[DatasetRecord],
    bundle: BackendBundle,
    cfg: PipelineConfig = PipelineConfig(),
    parallelism: int = 1,
) -> dict:
    """Run the pipeline on mask-annotated inconsistent pairs and report mIoU."""
    scored = [r for r in records if r.label == "inconsistent" and r.gt_mask_path]
    if not scored:
        raise ValueError("no inconsistent records with ground-truth masks")
    results = analyze_batch(_analysis_inputs(scored), bundle, cfg, parallelism)
    per_pair = []
    predictions = {}
    for rec, res in zip(scored, results):
        predictions[rec.id] = res.mask
        per_pair.append({"id": rec.id, "miou": miou(res.mask, load_mask(rec.gt_mask_path))})
    return {
        "miou": dataset_miou(predictions, scored),
        "n_pairs": len(scored),
        "per_pair": per_pair,
    }


def evaluate_detection(
    records: Sequence[DatasetRecord],
    bundle: BackendBundle,
    cfg: PipelineConfig = PipelineConfig(),
    parallelism: int = 1,
) -> dict:
    """Score every pair with the pipeline and report AUC plus best accuracy."""
    if not records:
        raise ValueError("no records to evaluate")
    results = analyze_batch(_analysis_inputs(records), bundle, cfg, parallelism)
    scores = [res.score for res in results]
    labels = [1 if r.label == "consistent" else 0 for r in records]
    auc = roc_auc(scores, labels)
    accuracy, threshold = accuracy_at_best_threshold(scores, labels)
    per_pair = [
        {"id": r.id, "score": s, "label": r.label}
        for r, s in zip(records, scores)
    ]
    return {
        "auc": auc,
        "accuracy": accuracy,
        "threshold": threshold,
        "n_pairs": len(records),
        "per_pair": per_pair,
    }


def baseline_clip_detect(records: Sequence[DatasetRecord], bundle: BackendBundle) -> dict:
    """Whole-image/caption cosine as a no-localization detection baseline."""
    if not records:
        raise ValueError("no records to evaluate")
    from .backends import encode_text  # local import to avoid cycle noise

    scores = []
    for rec in records:
        vec = bundle.image_encoder.encode_image(load_image(rec.image_path))
        pooled = pooled_text_vector(encode_text(bundle, rec.caption))
        norm = float(np.linalg.norm(pooled))
        scores.append(0.0 if norm == 0.0 else 100.0 * float(np.dot(vec, pooled) / norm))
    labels = [1 if r.label == "consistent" else 0 for r in records]
    auc = roc_auc(scores, labels)
    accuracy, threshold = accuracy_at_best_threshold(scores, labels)
    return {"auc": auc, "accuracy": accuracy, "threshold": threshold, "n_pairs": len(records)}


ABLATION_AXES = ("mask_stage", "init", "threshold")

_DEFAULT_GRID: dict[str, tuple] = {
    "mask_stage": ("intermediate", "final"),
    "init": ("random_init", "no_constraint", "default"),
    "threshold": (0.1, 0.2, 0.3, 0.4, "mean"),
}


def run_ablations(
    records: Sequence[DatasetRecord],
    bundle: BackendBundle,
    cfg: PipelineConfig = PipelineConfig(),
    grid: Mapping[str, Sequence] | None = None,
    parallelism: int = 1,
) -> dict:
    """Localization mIoU across the ablation grid.

    Axes: ``mask_stage`` (intermediate vs final mask), ``init`` (embedding
    initialisation / constraint strategy) and ``threshold`` (binarisation
    strategies).  Unknown axes raise; each row reports the dataset mIoU of
    the variant under identical seeds.
    """
    grid = dict(_DEFAULT_GRID) if grid is None else dict(grid)
    unknown = set(grid) - set(ABLATION_AXES)
    if unknown:
        raise ValueError(f"unknown ablation axes: {sorted(unknown)}; expected {ABLATION_AXES}")

    scored = [r for r in records if r.label == "inconsistent" and r.gt_mask_path]
    if not scored:
        raise ValueError("no inconsistent records with ground-truth masks")
    inputs = _analysis_inputs(scored)
    gt = {r.id: load_mask(r.gt_mask_path) for r in scored}

    def run_miou(run_cfg: PipelineConfig, stage: str = "final") -> float:
        results = analyze_batch(inputs, bundle, run_cfg, parallelism)
        attr = "mask" if stage == "final" else "intermediate_mask"
        values = [miou(getattr(res, attr), gt[rec.id]) for rec, res in zip(scored, results)]
        return float(np.mean(values))

    rows: list[dict] = []
    for stage in grid.get("mask_stage", ()):
        if stage not in ("intermediate", "final"):
            raise ValueError(f"unknown mask stage {stage!r}")
        rows.append(
            {"axis": "mask_stage", "variant": stage, "miou": run_miou(cfg, stage)}
        )
    for strategy in grid.get("init", ()):
        variant_cfg = replace(cfg, embedding_init=strategy)
        rows.append(
            {"axis": "init", "variant": strategy, "miou": run_miou(variant_cfg)}
        )
    for threshold in grid.get("threshold", ()):
        variant_cfg = replace(cfg, maskgen=replace(cfg.maskgen, threshold=threshold))
        rows.append(
            {"axis": "threshold", "variant": str(threshold), "miou": run_miou(variant_cfg)}
        )
    return {
        "rows": rows,
        "n_pairs": len(scored),
        "backend_id": bundle.backend_id,
        "seed": cfg.seed,
    }


def report_entry(
    metric: str,
    value: float,
    *,
    config: dict | None = None,
    seed: int = 0,
    backend_id: str = "unknown",
    timestamp: str | None = None,
) -> dict:
    """Uniform envelope for serialised metric values."""
    return {
        "metric": metric,
        "value": value,
        "config": config or {},
        "seed": seed,
        "backend_id": backend_id,
        "timestamp": timestamp
        or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
