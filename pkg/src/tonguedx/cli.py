"""Command-line interface.

Subcommands cover each pipeline stage plus the full run.  Exit codes:
0 success, 2 validation error, 3 I/O error, 4 numerical/degeneracy error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import SvmModel, confusion, metrics, svm_decision, svm_train
from .core import (
    DegeneracyError,
    ValidationError,
    load_image,
    load_manifest,
    make_rng,
    save_image,
)
from .fusion import fuse_sample
from .infotheory import rank_layers
from .nnet import (
    DEFAULT_CNN_SPEC,
    CnnModel,
    MlpModel,
    cnn_init,
    cnn_train,
    grad_check,
    mlp_init,
    mlp_train,
)
from .pipeline import PipelineConfig, _cnn_forward_batch, _derived_seed, run_pipeline
from .regionizer import (
    FEATURE_INPUT_SIZE,
    RegionSet,
    crop_margins,
    resize,
    split_regions,
    vectorize_channel,
)
from .registration import apply_points, fit_affine, fit_residual, warp_to_reference
from .synth import SynthSpec, detect_quad_heuristic, synth_generate

log = logging.getLogger("tonguedx")


def _load_config(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.from_file(args.config)
    else:
        cfg = PipelineConfig(seed=0, out_dir=str(args.out or "."), manifest="unused")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if overrides:
        merged = {**_config_as_dict(cfg), **overrides}
        cfg = PipelineConfig.from_dict(merged)
    return cfg


def _config_as_dict(cfg: PipelineConfig) -> dict:
    d = cfg.canonical()
    d["out_dir"] = cfg.out_dir
    d["workers"] = cfg.workers
    d["cache"] = cfg.cache
    return d


def _require_out(args) -> Path:
    if args.out is None:
        raise ValidationError("this subcommand requires --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    out = _require_out(args)
    spec = SynthSpec(
        n_per_class=args.n_per_class,
        separation=args.separation,
        pose_jitter=args.pose_jitter,
        seed=args.seed if args.seed is not None else 0,
        test_fraction=args.test_fraction,
    )
    dataset = synth_generate(spec, out)
    print(f"wrote {len(dataset)} images and manifest.jsonl to {out}")
    return 0


def cmd_register(args) -> int:
    out = _require_out(args)
    cfg = _load_config(args)
    reference_quad, reference_dims = cfg.reference()
    dataset = load_manifest(args.manifest, reference_quad, reference_dims)
    records = []
    for sample in dataset:
        img = load_image(sample.path)
        quad = sample.quad if sample.quad is not None else detect_quad_heuristic(img)
        t = fit_affine(quad, dataset.reference_quad)
        registered = warp_to_reference(img, t, dataset.reference_dims)
        save_image(registered, out / f"{sample.image_id}_reg.png")
        records.append(
            {
                "image_id": sample.image_id,
                "params": [float(v) for v in t.params],
                "residual": fit_residual(t, quad, dataset.reference_quad),
            }
        )
    report_path = out / "transforms.jsonl"
    with open(report_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"registered {len(records)} images into {out}")
    return 0


def cmd_regions(args) -> int:
    out = _require_out(args)
    in_dir = Path(args.in_dir)
    pngs = sorted(in_dir.glob("*.png"))
    if not pngs:
        raise ValidationError(f"no PNG files in {in_dir}")
    for path in pngs:
        image_id = path.stem.removesuffix("_reg")
        regions = split_regions(crop_margins(load_image(path)))
        for k, region in enumerate(regions.all(), start=1):
            save_image(region, out / f"{image_id}_r{k}.png")
    print(f"wrote regions for {len(pngs)} images into {out}")
    return 0


def _region_vectors(regions_dir: Path, image_id: str, k: int, channel: int) -> np.ndarray:
    path = regions_dir / f"{image_id}_r{k}.png"
    if not path.exists():
        raise ValidationError(f"sample {image_id!r}: missing region {k} file {path.name}")
    img = load_image(path)
    return vectorize_channel(resize(img, FEATURE_INPUT_SIZE, FEATURE_INPUT_SIZE), channel)


def cmd_train_extractors(args) -> int:
    out = _require_out(args)
    cfg = _load_config(args)
    dataset = load_manifest(args.manifest)
    dataset.require_both_classes("train")
    regions_dir = Path(args.regions)
    train = dataset.split("train")
    for k in range(1, 5):
        pairs = [
            (_region_vectors(regions_dir, s.image_id, k, cfg.channel), s.target) for s in train
        ]
        model = mlp_train(pairs, cfg.extractor_cfg(k - 1))
        payload = json.dumps(model.to_dict(), sort_keys=True, indent=2)
        (out / f"extractor_r{k}.json").write_text(payload + "\n", encoding="utf-8")
        print(f"trained extractor for region {k} on {len(pairs)} samples")
    return 0


def _load_extractors(extractors_dir: Path) -> list[MlpModel]:
    models = []
    for k in range(1, 5):
        path = extractors_dir / f"extractor_r{k}.json"
        with open(path, "r", encoding="utf-8") as fh:
            models.append(MlpModel.from_dict(json.load(fh)))
    return models


def cmd_fuse(args) -> int:
    out = _require_out(args)
    cfg = _load_config(args)
    dataset = load_manifest(args.manifest)
    regions_dir = Path(args.regions)
    extractors = _load_extractors(Path(args.extractors))
    records = []
    for sample in dataset:
        parts = []
        for k in range(1, 6):
            path = regions_dir / f"{sample.image_id}_r{k}.png"
            if not path.exists():
                raise ValidationError(
                    f"sample {sample.image_id!r}: missing region {k} file {path.name}"
                )
            parts.append(load_image(path))
        composite = fuse_sample(sample.image_id, RegionSet(*parts), extractors, cfg.channel)
        name = f"{sample.image_id}_comp.png"
        save_image(composite.image, out / name)
        records.append(
            {"path": name, "label": sample.label, "split": sample.split, "image_id": sample.image_id}
        )
    with open(out / "composites.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"fused {len(records)} composites into {out}")
    return 0


def _load_composites(composites_dir: Path, split: str | None = None):
    manifest = composites_dir / "composites.jsonl"
    if not manifest.exists():
        raise ValidationError(f"no composites.jsonl in {composites_dir}")
    ids, images, labels = [], [], []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if split is not None and rec["split"] != split:
                continue
            ids.append(rec["image_id"])
            images.append(load_image(composites_dir / rec["path"]))
            labels.append(1 if rec["label"] == "patient" else 0)
    if not ids:
        raise ValidationError(f"no composites for split {split!r} in {composites_dir}")
    return ids, np.stack(images), np.array(labels, dtype=int)


def cmd_train_cnn(args) -> int:
    out = _require_out(args)
    cfg = _load_config(args)
    _, images, labels = _load_composites(Path(args.composites), split="train")
    model = cnn_train(
        list(zip(images, labels.tolist())),
        cfg.cnn_cfg(),
        spec=cfg.cnn["spec"],
        tap_points=cfg.cnn["tap_points"],
    )
    (out / "cnn.json").write_text(
        json.dumps(model.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"trained CNN on {len(labels)} composites")
    return 0


def cmd_train_svm(args) -> int:
    out = _require_out(args)
    cfg = _load_config(args)
    _, images, labels = _load_composites(Path(args.composites), split="train")
    xs = images.reshape(images.shape[0], -1)
    ys = np.where(labels == 1, 1.0, -1.0)
    model = svm_train(
        xs,
        ys,
        c=float(cfg.svm["c"]),
        kernel=cfg.svm["kernel"],
        gamma=None if cfg.svm["gamma"] is None else float(cfg.svm["gamma"]),
        tol=float(cfg.svm["tol"]),
        max_passes=int(cfg.svm["max_passes"]),
        seed=_derived_seed(cfg.seed, 404),
    )
    (out / "svm.json").write_text(
        json.dumps(model.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"trained SVM on {len(labels)} composites ({len(model.alphas)} support vectors)")
    return 0


def cmd_mi_select(args) -> int:
    features_dir = Path(args.features)
    dumps = sorted(features_dir.glob("*.json"))
    if not dumps:
        raise ValidationError(f"no feature dumps in {features_dir}")
    by_layer: dict[str, dict[str, list]] = {}
    order: list[str] = []
    for path in dumps:
        with open(path, "r", encoding="utf-8") as fh:
            rec = json.load(fh)
        layer_id = rec["layer_id"]
        if layer_id not in by_layer:
            by_layer[layer_id] = {"healthy": [], "patient": []}
            order.append(layer_id)
        by_layer[layer_id][rec["class"]].extend(
            np.asarray(v, dtype=float) for v in rec["features"]
        )
    per_layer = []
    for layer_id in order:
        groups = by_layer[layer_id]
        if not groups["healthy"] or not groups["patient"]:
            raise ValidationError(f"layer {layer_id!r} is missing one class of features")
        per_layer.append((layer_id, groups["healthy"], groups["patient"]))
    ranking = rank_layers(
        per_layer,
        bins=args.bins,
        max_pairs=args.max_pairs,
        seed=args.seed if args.seed is not None else 0,
    )
    print(f"{'layer':<24} {'mean MI (bits)':>14}")
    for layer_id, mi in ranking:
        print(f"{layer_id:<24} {mi:>14.6f}")
    print(f"selected: {ranking[0][0]}")
    return 0


def cmd_eval(args) -> int:
    out = _require_out(args)
    with open(args.model, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    fmt = payload.get("format", "")
    ids, images, labels = _load_composites(Path(args.composites), split="test")
    if fmt == "tonguedx-svm/1":
        model = SvmModel.from_dict(payload)
        values = svm_decision(model, images.reshape(images.shape[0], -1))
    elif fmt == "tonguedx-cnn/1":
        model = CnnModel.from_dict(payload)
        probs, _ = _cnn_forward_batch(model, images)
        values = probs[:, 1] - probs[:, 0]
    else:
        raise ValidationError(f"unrecognized model format {fmt!r} in {args.model}")
    preds = np.where(values >= 0, 1, -1)
    truth = np.where(labels == 1, 1, -1)
    cm = confusion(preds, truth)
    metric_values = metrics(cm)
    print(f"{'metric':<6} {'value':>10}")
    for name, value in metric_values.items():
        shown = "undefined" if value is None else f"{value:.4f}"
        print(f"{name:<6} {shown:>10}")
    report = {
        "confusion": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
        "metrics": metric_values,
        "n_test": int(len(ids)),
    }
    (out / "eval.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return 0


def cmd_gradcheck(args) -> int:
    rng = make_rng(args.seed if args.seed is not None else 0)
    mlp = mlp_init(7)
    x = rng.uniform(0.0, 1.0, size=1024)
    mlp_err = grad_check(mlp, (x, 1), step=1e-5)
    cnn = cnn_init(DEFAULT_CNN_SPEC, seed=7)
    img = rng.uniform(0.0, 1.0, size=(32, 32, 3))
    cnn_err = grad_check(cnn, (img, 0), step=1e-5)
    print(f"mlp max relative gradient error: {mlp_err:.3e}")
    print(f"cnn max relative gradient error: {cnn_err:.3e}")
    worst = max(mlp_err, cnn_err)
    if worst > 1e-3:
        print("gradient check FAILED")
        return 4
    print("gradient check passed")
    return 0


def cmd_run(args) -> int:
    if args.replay:
        with open(args.replay, "r", encoding="utf-8") as fh:
            report = json.load(fh)
        raw = dict(report["config"])
        raw["out_dir"] = str(args.out) if args.out is not None else str(
            Path(args.replay).parent / "replay"
        )
        if args.workers is not None:
            raw["workers"] = args.workers
        cfg = PipelineConfig.from_dict(raw)
    else:
        if not args.config:
            raise ValidationError("run requires --config PATH (or --replay REPORT)")
        cfg = _load_config(args)
    report = run_pipeline(cfg)
    print(f"config hash: {report['config_hash']}")
    print(f"train/test:  {report['counts']['train']}/{report['counts']['test']}")
    if report["selected_layer"]:
        print(f"selected layer: {report['selected_layer']}")
    print(f"{'metric':<6} {'value':>10}")
    for name, value in report["metrics"].items():
        shown = "undefined" if value is None else f"{value:.4f}"
        print(f"{name:<6} {shown:>10}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="run configuration file (JSON)")
    shared.add_argument("--seed", type=int, help="override the config seed")
    shared.add_argument("--workers", type=int, help="worker pool size for per-image stages")
    shared.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="tonguedx", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tonguedx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic dataset")
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--pose-jitter", type=float, default=0.5)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register", parents=[shared], help="register images to the reference model")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("regions", parents=[shared], help="crop margins and write the five regions")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=cmd_regions)

    p = sub.add_parser("train-extractors", parents=[shared], help="train the four region extractors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--regions", required=True)
    p.set_defaults(func=cmd_train_extractors)

    p = sub.add_parser("fuse", parents=[shared], help="build composite images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--extractors", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train-cnn", parents=[shared], help="train the CNN head on composites")
    p.add_argument("--composites", required=True)
    p.set_defaults(func=cmd_train_cnn)

    p = sub.add_parser("train-svm", parents=[shared], help="train the SVM head on composites")
    p.add_argument("--composites", required=True)
    p.set_defaults(func=cmd_train_svm)

    p = sub.add_parser("mi-select", parents=[shared], help="rank layers by cross-class MI")
    p.add_argument("--features", required=True)
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--max-pairs", type=int, default=200)
    p.set_defaults(func=cmd_mi_select)

    p = sub.add_parser("eval", parents=[shared], help="evaluate a trained head on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--composites", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[shared], help="verify backprop against finite differences")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("run", parents=[shared], help="execute the full pipeline")
    p.add_argument("--replay", help="re-run the exact config embedded in a previous report")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        log.error("validation error: %s", exc)
        return 2
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 3
    except (DegeneracyError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical error: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
