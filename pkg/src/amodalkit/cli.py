"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import synth
from .config import PipelineConfig, build_backends, load_config
from .decision import GuidanceDecision
from .errors import AmodalError, InvalidInputError
from .eval import AnnotatedSample, eval_amodal_seg, eval_gdm, eval_mask_accuracy, eval_oor, load_annotations, mask_accuracy_pair
from .geometric import MultiScaleBoxes
from .maskcore import load_image, load_mask, save_image, save_mask
from .pipeline import RunRecord, TargetSpec, run, run_batch
from .render import render_panel

log = logging.getLogger("amodalkit")

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


def _dump(data, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config(args) -> PipelineConfig:
    try:
        return load_config(args.config, args.override or ())
    except AmodalError as exc:
        raise UsageError(str(exc)) from exc


def _redacted(value):
    """Copy of a config dict with inline secrets blanked out."""
    if isinstance(value, dict):
        return {k: "***" if k == "api_key" and v else _redacted(v) for k, v in value.items()}
    return value


def write_run(out_dir: Path, spec: TargetSpec, record: RunRecord, config: PipelineConfig) -> None:
    """Write images, masks and ``run_record.json`` for one target into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {"input": "input.png", "modal": "modal.png"}
    save_image(spec.image, out_dir / "input.png")
    save_mask(spec.modal, out_dir / "modal.png")
    if record.inpaint_mask is not None:
        save_mask(record.inpaint_mask, out_dir / "inpaint_mask.png")
        files["inpaint_mask"] = "inpaint_mask.png"
    if record.result is not None:
        save_image(record.result.amodal_image, out_dir / "amodal.png")
        save_mask(record.result.amodal_mask, out_dir / "amodal_mask.png")
        files.update(amodal_image="amodal.png", amodal_mask="amodal_mask.png")
    data = record.to_dict(include_timings=config.record_timings)
    data["files"] = files
    data["config"] = _redacted(config.to_dict())
    _dump(data, out_dir / "run_record.json")


# ---------------------------------------------------------------- subcommands


def cmd_complete(args) -> int:
    for p in (args.image, args.mask):
        if not Path(p).is_file():
            raise UsageError(f"cannot read input file: {p}")
    config = _config(args)
    try:
        spec = TargetSpec(load_image(args.image), load_mask(args.mask), args.category,
                          args.sample_id or Path(args.image).parent.name or "sample")
    except (OSError, AmodalError) as exc:
        raise UsageError(f"invalid input: {exc}") from exc
    try:
        backends = build_backends(config, args.sample_dir or Path(args.image).parent)
    except AmodalError as exc:
        raise UsageError(str(exc)) from exc
    record = run(config, backends, spec)
    write_run(Path(args.out), spec, record, config)
    print(f"{spec.sample_id}: {record.status}" + (f" ({record.error})" if record.error else ""))
    return EXIT_FAILED if record.status == "error" else EXIT_OK


def _annotations(args):
    try:
        loaded = load_annotations(args.annotations, args.format)
    except AmodalError as exc:
        raise UsageError(str(exc)) from exc
    for err in loaded.errors:
        log.warning("annotation error: %s", err)
    if not loaded.samples:
        raise UsageError(f"no usable samples in {args.annotations}")
    return loaded


def cmd_batch(args) -> int:
    config = _config(args)
    loaded = _annotations(args)
    samples = loaded.samples
    root = Path(args.annotations)
    sample_dirs = {}
    if args.format == "synth-dir":
        from .eval import _sample_dirs
        sample_dirs = {d.name: d for d in _sample_dirs(root)}

    specs = [TargetSpec(s.image, s.modal, s.category if args.use_dataset_category else None, s.sample_id)
             for s in samples]
    oracle = config.backends.get("mode") == "oracle"
    if oracle and not sample_dirs:
        raise UsageError("oracle backends need --format synth-dir")
    try:
        shared = None if oracle else build_backends(config)
    except AmodalError as exc:
        raise UsageError(str(exc)) from exc
    backends = (lambda spec: build_backends(config, sample_dirs[spec.sample_id])) if oracle else shared

    records = run_batch(config, backends, specs, args.parallelism)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec, record in zip(specs, records):
        write_run(out / spec.sample_id, spec, record, config)
    statuses = {r.sample_id: r.status for r in records}
    summary = {"n": len(records), "status_counts": {s: list(statuses.values()).count(s)
                                                    for s in ("ok", "incomplete", "error")},
               "samples": statuses, "annotation_errors": loaded.errors}
    _dump(summary, out / "summary.json")
    print(json.dumps(summary["status_counts"], sort_keys=True))
    return EXIT_FAILED if all(r.status == "error" for r in records) else EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.max_occluders < 1:
        raise UsageError("--max-occluders must be >= 1")
    try:
        paths = synth.write_suite(args.out, args.n, args.seed, (args.min_ratio, args.max_ratio), args.max_occluders)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    except AmodalError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(f"wrote {len(paths)} samples to {args.out}")
    return EXIT_OK


def _prediction(pred_dir: Path, sample: AnnotatedSample, name: str, loader):
    path = pred_dir / sample.sample_id / name
    try:
        return loader(path)
    except (OSError, ValueError):
        log.warning("%s: no %s in %s", sample.sample_id, name, pred_dir)
        return None


def _record(pred_dir: Path, sample: AnnotatedSample) -> dict | None:
    return _prediction(pred_dir, sample, "run_record.json", lambda p: json.loads(p.read_text(encoding="utf-8")))


def _write_report(report, out: Path, stem: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _dump(report.to_dict(), out / f"{stem}.json")
    table = report.to_table()
    (out / f"{stem}.txt").write_text(table, encoding="utf-8")
    print(table, end="")


def cmd_eval_seg(args) -> int:
    loaded = _annotations(args)
    pred = Path(args.predictions)
    report = eval_amodal_seg((s, _prediction(pred, s, "amodal_mask.png", load_mask)) for s in loaded.samples)
    _write_report(report, Path(args.out), "seg_report")
    return EXIT_FAILED if report.count == 0 else EXIT_OK


def cmd_eval_oor(args) -> int:
    config = _config(args)
    loaded = _annotations(args)
    if args.labels:
        labels = [x.strip() for x in args.labels.split(",") if x.strip()]
    else:
        labels = sorted({s.category for s in loaded.samples if s.category})
    try:
        if config.backends.get("mode") == "oracle":
            classifier = synth.PaletteClassifier()
        else:
            classifier = build_backends(config).classifier
        if classifier is None:
            raise UsageError("no classifier backend configured")
    except AmodalError as exc:
        raise UsageError(str(exc)) from exc
    pred = Path(args.predictions)
    results = []
    for s in loaded.samples:
        image = _prediction(pred, s, "amodal.png", load_image)
        mask = _prediction(pred, s, "amodal_mask.png", load_mask)
        if image is None or mask is None or s.category is None:
            continue
        results.append((s, image, mask))
    try:
        report = eval_oor(results, classifier, labels)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    _write_report(report, Path(args.out), "oor_report")
    return EXIT_FAILED if report.count == 0 else EXIT_OK


def cmd_eval_gdm(args) -> int:
    loaded = _annotations(args)
    pred = Path(args.predictions)
    pairs = []
    for s in loaded.samples:
        rec = _record(pred, s)
        if rec and rec.get("decision"):
            pairs.append((s, GuidanceDecision.from_dict(rec["decision"])))
    report = eval_gdm(pairs)
    _write_report(report, Path(args.out), "gdm_report")
    return EXIT_FAILED if not pairs else EXIT_OK


def cmd_eval_mask(args) -> int:
    loaded = _annotations(args)
    pred = Path(args.predictions)
    pairs = []
    for s in loaded.samples:
        rec = _record(pred, s)
        inpaint = _prediction(pred, s, "inpaint_mask.png", load_mask)
        if not rec or not rec.get("boxes") or not rec.get("result") or inpaint is None or s.gt_amodal is None:
            pairs.append((None, None))
            continue
        boxes = MultiScaleBoxes.from_dict(rec["boxes"])
        scale = rec["result"]["chosen_scale"]
        box = boxes.coarse if scale == "fallback" else boxes.at(scale)
        pairs.append(mask_accuracy_pair(box, inpaint, s.gt_amodal))
    miou = eval_mask_accuracy(pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = sum(p[0] is not None for p in pairs)
    _dump({"miou": miou, "count": n, "skipped": len(pairs) - n}, out / "mask_accuracy.json")
    print(f"inpainting mask mIoU: {'-' if miou is None else f'{miou:.2f}'} (n={n})")
    return EXIT_FAILED if miou is None else EXIT_OK


def cmd_render(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.records:
        path = Path(path)
        if path.is_dir():
            path = path / "run_record.json"
        try:
            panel = render_panel(path)
            sample_id = json.loads(path.read_text(encoding="utf-8")).get("sample_id", path.parent.name)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read run record {path}: {exc}") from exc
        panel.save(out / f"{sample_id}_panel.png")
        print(out / f"{sample_id}_panel.png")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amodalkit", description="Guided amodal completion and its evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("-O", "--override", action="append", metavar="KEY=VALUE",
                       help="override a config value, e.g. boundary_band_px=5 (repeatable)")
        return p

    def with_annotations(p):
        p.add_argument("--annotations", required=True, help="annotation JSON file or synthetic suite directory")
        p.add_argument("--format", choices=("generic-json", "synth-dir"), default="synth-dir")
        return p

    p = with_config(sub.add_parser("complete", help="complete one target"))
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="modal mask PNG")
    p.add_argument("--category")
    p.add_argument("--sample-id")
    p.add_argument("--sample-dir", help="synthetic sample directory for oracle backends")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = with_annotations(with_config(sub.add_parser("batch", help="complete every annotated target")))
    p.add_argument("--out", required=True)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--use-dataset-category", action="store_true",
                   help="pass annotated categories as the category hint")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("synth", help="generate a synthetic occlusion suite")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-ratio", type=float, default=0.3)
    p.add_argument("--max-ratio", type=float, default=0.8)
    p.add_argument("--max-occluders", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for name, func, doc in (("eval-seg", cmd_eval_seg, "stratified amodal segmentation mIoU"),
                            ("eval-oor", cmd_eval_oor, "occluded object recognition top-1/top-3"),
                            ("eval-gdm", cmd_eval_gdm, "guidance call/skip rates"),
                            ("eval-mask", cmd_eval_mask, "inpainting mask accuracy")):
        p = with_annotations(with_config(sub.add_parser(name, help=doc)))
        p.add_argument("--predictions", required=True, help="output directory of a batch run")
        p.add_argument("--out", required=True)
        if name == "eval-oor":
            p.add_argument("--labels", help="comma-separated label list (default: annotated categories)")
        p.set_defaults(func=func)

    p = sub.add_parser("render", help="render result panels from run records")
    p.add_argument("records", nargs="+", help="run_record.json files or their directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
