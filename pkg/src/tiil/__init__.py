"""Text-image inconsistency localization toolkit.

Given an image and a caption, the pipeline aligns the caption's token
embeddings to the image through a diffusion-style backend, materialises the
caption's claim inside the disputed region, and compares the two alignments
to produce an inconsistency mask, the offending caption words, and a
[0, 100] consistency score.  A deterministic synthetic backend makes every
stage exactly testable; dataset, metrics and CLI layers provide the
evaluation harness.
"""

from .align import AlignConfig, AlignResult, align_embedding, alignment_loss_and_grad, project_to_ball
from .backends import (
    BackendBundle,
    BackendError,
    BackendLoadError,
    NoiseSchedule,
    SyntheticModel,
    TokenEmbeddingMatrix,
    TruncationWarning,
    encode_image,
    encode_text,
    estimate_noise,
    forward_noise,
    generate,
    inpaint,
    load_backend,
)
from .dataset import (
    DatasetRecord,
    EditSpec,
    ManifestError,
    Span,
    build_planted_benchmark,
    clip_score_table,
    generate_pairs,
    load_manifest,
    validate_stats,
    write_manifest,
)
from .edit import edit_image
from .localize import (
    WordSpan,
    candidate_spans,
    consistency_score,
    final_mask,
    localize_words,
    pooled_text_vector,
)
from .maskgen import MaskGenConfig, binarize_mask, default_timesteps, noise_difference_map
from .metrics import (
    accuracy_at_best_threshold,
    baseline_clip_detect,
    dataset_miou,
    evaluate_detection,
    evaluate_localization,
    miou,
    roc_auc,
    run_ablations,
)
from .pipeline import (
    AnalysisResult,
    PipelineConfig,
    PipelineStageError,
    analyze,
    analyze_batch,
    detect,
    suggested_config,
)

__version__ = "0.1.0"
