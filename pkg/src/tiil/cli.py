"""Command-line interface.

Subcommands::

    tiil analyze  --image I.png --text "..."   single-pair analysis artifacts
    tiil evaluate --manifest M --task ...      localization / detection metrics
    tiil ablate   --manifest M                 ablation tables
    tiil dataset  build|stats                  manifest tooling

Exit codes: 0 success, 2 usage error, 3 backend failure, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .backends import BackendError, BackendLoadError, load_backend
from .dataset import (
    EditSpec,
    generate_pairs,
    load_manifest,
    validate_stats,
    write_manifest,
)
from .metrics import (
    baseline_clip_detect,
    evaluate_detection,
    evaluate_localization,
    report_entry,
    run_ablations,
)
from .pipeline import suggested_config
from .utils import load_image, overlay_mask, save_image, save_mask

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_DATA = 4


class _DataError(Exception):
    pass


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_bundle(args):
    return load_backend(args.backend, seed=args.seed)


def _pipeline_config(bundle, args):
    cfg = suggested_config(bundle, seed=args.seed)
    if getattr(args, "top_k", None):
        cfg = replace(cfg, top_k=args.top_k)
    if getattr(args, "threshold", None) is not None:
        thr = args.threshold
        value = thr if thr == "mean" else float(thr)
        cfg = replace(cfg, maskgen=replace(cfg.maskgen, threshold=value))
    return cfg


def _read_manifest(path: str):
    if not Path(path).is_file():
        raise _DataError(f"manifest not found: {path}")
    loaded = load_manifest(path)
    if loaded.errors:
        lines = "\n".join(f"  line {no}: {msg}" for no, msg in loaded.errors)
        raise _DataError(f"manifest {path} has invalid lines:\n{lines}")
    if not loaded.records:
        raise _DataError(f"manifest {path} contains no records")
    return loaded.records


# ------------------------------------------------------------- subcommands


def cmd_analyze(args) -> int:
    image_path = Path(args.image)
    if not image_path.is_file():
        print(f"error: image not found: {image_path}", file=sys.stderr)
        return EXIT_USAGE
    bundle = _load_bundle(args)
    image = load_image(image_path)
    from .pipeline import analyze  # imported here so --help stays fast

    result = analyze(image, args.text, bundle, _pipeline_config(bundle, args))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_mask(out_dir / "mask.png", result.mask)
    save_mask(out_dir / "mask_intermediate.png", result.intermediate_mask)
    save_image(out_dir / "edited.png", result.edited_image)
    save_image(out_dir / "overlay.png", overlay_mask(image, result.mask))

    metadata = {k: v for k, v in result.metadata.items() if k != "timings"}
    metadata["timestamp"] = report_entry("", 0.0)["timestamp"]
    _write_json(
        out_dir / "result.json",
        {
            "score": result.score,
            "words": [
                {"start": w.start, "end": w.end, "surface": w.surface, "similarity": w.similarity}
                for w in result.words
            ],
            "mask_path": "mask.png",
            "intermediate_mask_path": "mask_intermediate.png",
            "edited_image_path": "edited.png",
            "overlay_path": "overlay.png",
            "metadata": metadata,
        },
    )
    print(f"score={result.score:.2f} words={[w.surface for w in result.words]} -> {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    records = _read_manifest(args.manifest)
    bundle = _load_bundle(args)
    cfg = _pipeline_config(bundle, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    if args.task == "localization":
        report = evaluate_localization(records, bundle, cfg, parallelism=args.parallelism)
        entries.append(
            report_entry(
                "miou", report["miou"], config={"task": "localization"},
                seed=args.seed, backend_id=bundle.backend_id,
            )
        )
        print(f"localization mIoU over {report['n_pairs']} pairs: {report['miou']:.4f}")
    else:
        report = evaluate_detection(records, bundle, cfg, parallelism=args.parallelism)
        baseline = baseline_clip_detect(records, bundle)
        for name, value in (
            ("auc", report["auc"]),
            ("accuracy", report["accuracy"]),
            ("threshold", report["threshold"]),
            ("baseline_auc", baseline["auc"]),
            ("baseline_accuracy", baseline["accuracy"]),
        ):
            entries.append(
                report_entry(
                    name, value, config={"task": "detection"},
                    seed=args.seed, backend_id=bundle.backend_id,
                )
            )
        print(
            f"detection over {report['n_pairs']} pairs: auc={report['auc']:.4f} "
            f"accuracy={report['accuracy']:.4f} (baseline auc={baseline['auc']:.4f})"
        )
    _write_json(out_dir / "metrics.json", {"entries": entries, "per_pair": report["per_pair"]})
    return EXIT_OK


def cmd_ablate(args) -> int:
    records = _read_manifest(args.manifest)
    bundle = _load_bundle(args)
    cfg = _pipeline_config(bundle, args)

    grid: dict = {}
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    for axis in axes:
        if axis == "threshold":
            strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
            grid["threshold"] = [s if s == "mean" else float(s) for s in strategies]
        elif axis == "init":
            grid["init"] = ["random_init", "no_constraint", "default"]
        elif axis == "mask_stage":
            grid["mask_stage"] = ["intermediate", "final"]
        else:
            raise _DataError(f"unknown ablation axis {axis!r}")

    report = run_ablations(records, bundle, cfg, grid=grid, parallelism=args.parallelism)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "ablation.json", report)
    width = max(len(str(r["variant"])) for r in report["rows"])
    for row in report["rows"]:
        print(f"{row['axis']:<12} {str(row['variant']):<{width}}  miou={row['miou']:.4f}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    if args.dataset_cmd == "stats":
        records = _read_manifest(args.manifest)
        stats = validate_stats(records).as_dict()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "stats.json", stats)
        print(json.dumps(stats, indent=2, sort_keys=True))
        return EXIT_OK

    # build
    records = {r.id: r for r in _read_manifest(args.manifest)}
    edits_path = Path(args.edits)
    if not edits_path.is_file():
        raise _DataError(f"edits file not found: {edits_path}")
    try:
        edit_dicts = json.loads(edits_path.read_text(encoding="utf-8"))
        edits = [EditSpec(**d) for d in edit_dicts]
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise _DataError(f"invalid edits file {edits_path}: {exc}") from exc

    bundle = _load_bundle(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    produced = []
    for edit in edits:
        base = records.get(edit.base_id)
        if base is None:
            raise _DataError(f"edit references unknown record {edit.base_id!r}")
        try:
            produced.extend(generate_pairs(base, edit, bundle, out_dir / "generated"))
        except ValueError as exc:
            raise _DataError(f"edit for {edit.base_id!r} failed: {exc}") from exc
    write_manifest(produced, out_dir / "manifest.jsonl")
    print(f"wrote {len(produced)} records to {out_dir / 'manifest.jsonl'}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiil",
        description="Localize and score text-image inconsistencies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--backend", default="synthetic",
                       help="backend spec: 'synthetic' or 'diffusion:<model-id>'")
        p.add_argument("--seed", type=int, default=0, help="seed for all stochastic stages")
        p.add_argument("--out", default="tiil_out", help="output directory")

    p = sub.add_parser("analyze", help="analyze one image/text pair")
    p.add_argument("--image", required=True, help="path to the image file")
    p.add_argument("--text", required=True, help="the caption to check")
    p.add_argument("--top-k", type=int, default=1, help="number of word spans to report")
    p.add_argument("--threshold", default=None,
                   help="mask threshold strategy: 'mean' or a fixed value in [0,1]")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("evaluate", help="evaluate a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--task", choices=("localization", "detection"), required=True)
    p.add_argument("--parallelism", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run ablation variants over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategies", default="0.1,0.2,0.3,0.4,mean",
                   help="comma-separated threshold strategies")
    p.add_argument("--axes", default="mask_stage,init,threshold",
                   help="comma-separated ablation axes")
    p.add_argument("--parallelism", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dataset", help="dataset tooling")
    dsub = p.add_subparsers(dest="dataset_cmd", required=True)
    pb = dsub.add_parser("build", help="generate four-way pairs from edits")
    pb.add_argument("--manifest", required=True, help="manifest with base records")
    pb.add_argument("--edits", required=True, help="JSON list of edit specifications")
    common(pb)
    pb.set_defaults(func=cmd_dataset)
    ps = dsub.add_parser("stats", help="count records by label/pair type/bucket")
    ps.add_argument("--manifest", required=True)
    common(ps)
    ps.set_defaults(func=cmd_dataset)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except BackendLoadError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except _DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
