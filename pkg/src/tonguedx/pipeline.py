"""End-to-end orchestration: config, stage caching, and the full run.

Stage order is arranged so that nothing on the training side ever reads a
test image: train-split preparation, extractor training, fusion and head
training all complete (and checkpoints hit disk) before the test split is
loaded for evaluation.

Stage outputs are content-addressed: each stage key is a hash chaining the
upstream key with every parameter that can influence the stage, so a warm
re-run loads bit-identical artifacts instead of recomputing them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .classify import ConfusionMatrix, SvmModel, confusion, metrics, svm_decision, svm_train
from .core import (
    BoundingQuad,
    Dataset,
    LabeledSample,
    ValidationError,
    load_image,
    load_manifest,
)
from .fusion import build_composite
from .infotheory import rank_layers
from .nnet import (
    DEFAULT_CNN_SPEC,
    CnnModel,
    MlpModel,
    TrainConfig,
    _cnn_forward_batch,
    cnn_init,
    cnn_train,
    mlp_extract,
    mlp_train,
)
from .regionizer import (
    FEATURE_INPUT_SIZE,
    FUSION_REGION5_SIZE,
    crop_margins,
    resize,
    split_regions,
    vectorize_channel,
)
from .registration import register_sample
from .synth import SynthSpec, detect_quad_heuristic, synth_generate

log = logging.getLogger("tonguedx.pipeline")

HEAD_CHOICES = ("svm-on-composite", "cnn", "svm-on-tap")


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved run configuration; everything that can affect results lives here."""

    seed: int
    out_dir: str
    manifest: str | None = None
    synth: dict | None = None
    workers: int = 1
    cache: bool = True
    channel: int = 0
    reference_dims: tuple[int, int] = (512, 512)
    reference_quad: tuple = (
        (156.0, 176.0),
        (356.0, 176.0),
        (356.0, 416.0),
        (156.0, 416.0),
    )
    head: str = "svm-on-composite"
    extractor: dict = field(
        default_factory=lambda: {"learning_rate": 0.1, "epochs": 200, "batch_size": 32}
    )
    cnn: dict = field(
        default_factory=lambda: {
            "learning_rate": 0.05,
            "epochs": 200,
            "batch_size": 32,
            "spec": [dict(layer) for layer in DEFAULT_CNN_SPEC],
            "tap_points": None,
        }
    )
    svm: dict = field(
        default_factory=lambda: {
            "c": 1.0,
            "kernel": "linear",
            "gamma": None,
            "tol": 1e-3,
            "max_passes": 10,
        }
    )
    mi: dict = field(
        default_factory=lambda: {"bins": 8, "max_pairs": 200, "pairing": "cross"}
    )

    _KNOWN = (
        "seed", "out_dir", "manifest", "synth", "workers", "cache", "channel",
        "reference_dims", "reference_quad", "head", "extractor", "cnn", "svm", "mi",
    )

    def __post_init__(self) -> None:
        if self.head not in HEAD_CHOICES:
            raise ValidationError(f"head must be one of {HEAD_CHOICES}, got {self.head!r}")
        if self.manifest is None and self.synth is None:
            raise ValidationError("config needs either a manifest path or a synth block")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        unknown = set(raw) - set(cls._KNOWN)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in raw:
            raise ValidationError("config must set an explicit seed")
        if "out_dir" not in raw:
            raise ValidationError("config must set out_dir")
        merged: dict = dict(raw)
        for name in ("extractor", "cnn", "svm", "mi"):
            defaults = getattr(cls(seed=0, out_dir=".", manifest="unused"), name)
            merged[name] = {**defaults, **raw.get(name, {})}
        if "reference_dims" in merged:
            merged["reference_dims"] = tuple(int(v) for v in merged["reference_dims"])
        if "reference_quad" in merged:
            merged["reference_quad"] = tuple(
                tuple(float(v) for v in pt) for pt in merged["reference_quad"]
            )
        return cls(**merged)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def canonical(self) -> dict:
        """JSON-stable view of everything that determines the run's results."""
        d = {
            "seed": self.seed,
            "manifest": self.manifest,
            "synth": self.synth,
            "channel": self.channel,
            "reference_dims": list(self.reference_dims),
            "reference_quad": [list(pt) for pt in self.reference_quad],
            "head": self.head,
            "extractor": self.extractor,
            "cnn": self.cnn,
            "svm": self.svm,
            "mi": self.mi,
        }
        return json.loads(json.dumps(d, sort_keys=True))

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical(), sort_keys=True).encode("utf-8")
        ).hexdigest()

    def reference(self) -> tuple[BoundingQuad, tuple[int, int]]:
        return BoundingQuad(np.asarray(self.reference_quad, dtype=float)), self.reference_dims

    def extractor_cfg(self, region_idx: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=float(self.extractor["learning_rate"]),
            epochs=int(self.extractor["epochs"]),
            batch_size=int(self.extractor["batch_size"]),
            seed=_derived_seed(self.seed, 101, region_idx),
        )

    def cnn_cfg(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=float(self.cnn["learning_rate"]),
            epochs=int(self.cnn["epochs"]),
            batch_size=int(self.cnn["batch_size"]),
            seed=_derived_seed(self.seed, 202),
        )


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence((seed, *key)).generate_state(1, dtype=np.uint64)[0])


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> list:
    """Apply fn to items, preserving input order regardless of worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class StageCache:
    """Content-addressed stage store under <out>/cache.

    A stage directory is valid once its ``done`` marker holds the full key;
    loading a valid directory must reproduce the computed artifacts exactly.
    """

    def __init__(self, root: Path, enabled: bool = True) -> None:
        self.root = root
        self.enabled = enabled
        self.computed: list[str] = []
        self.loaded: list[str] = []

    def get(self, stage: str, key: str, compute: Callable[[], dict], save, load):
        if not self.enabled:
            self.computed.append(stage)
            return compute()
        stage_dir = self.root / f"{stage}-{key[:16]}"
        marker = stage_dir / "done"
        if marker.exists() and marker.read_text(encoding="utf-8") == key:
            log.info("stage %s: loading cached result (%s)", stage, key[:16])
            self.loaded.append(stage)
            return load(stage_dir)
        log.info("stage %s: computing (%s)", stage, key[:16])
        result = compute()
        stage_dir.mkdir(parents=True, exist_ok=True)
        save(stage_dir, result)
        marker.write_text(key, encoding="utf-8")
        self.computed.append(stage)
        return result


def _chain(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _split_fingerprint(samples: Sequence[LabeledSample]) -> str:
    """Hash of the image bytes and annotations of one split."""
    h = hashlib.sha256()
    for s in samples:
        h.update(s.image_id.encode("utf-8"))
        h.update(s.label.encode("utf-8"))
        quad = "none" if s.quad is None else json.dumps(s.quad.as_list())
        h.update(quad.encode("utf-8"))
        h.update(Path(s.path).read_bytes())
    return h.hexdigest()


@dataclass
class PreparedSplit:
    """Per-sample arrays the downstream stages need; images are not kept."""

    ids: list[str]
    labels: np.ndarray          # 0 healthy / 1 patient
    vectors: np.ndarray         # (n, 4, 1024) corner-region channel vectors
    region5: np.ndarray         # (n, 30, 30, 3)


def _prepare_split(
    dataset: Dataset, samples: Sequence[LabeledSample], channel: int, workers: int
) -> PreparedSplit:
    def prep(sample: LabeledSample):
        img = load_image(sample.path)
        quad = sample.quad if sample.quad is not None else detect_quad_heuristic(img)
        try:
            registered = register_sample(img, quad, dataset)
        except Exception as exc:
            raise type(exc)(f"sample {sample.image_id!r}: {exc}") from exc
        regions = split_regions(crop_margins(registered))
        vecs = np.stack(
            [
                vectorize_channel(resize(r, FEATURE_INPUT_SIZE, FEATURE_INPUT_SIZE), channel)
                for r in regions.corners()
            ]
        )
        r5 = resize(regions.r5, FUSION_REGION5_SIZE, FUSION_REGION5_SIZE)
        return vecs, r5

    results = _map_ordered(prep, list(samples), workers)
    return PreparedSplit(
        ids=[s.image_id for s in samples],
        labels=np.array([s.target for s in samples], dtype=int),
        vectors=np.stack([r[0] for r in results]) if results else np.zeros((0, 4, 1024)),
        region5=np.stack([r[1] for r in results]) if results else np.zeros((0, 30, 30, 3)),
    )


def _save_prepared(stage_dir: Path, prep: PreparedSplit) -> None:
    np.savez_compressed(
        stage_dir / "prepared.npz",
        ids=np.array(prep.ids),
        labels=prep.labels,
        vectors=prep.vectors,
        region5=prep.region5,
    )


def _load_prepared(stage_dir: Path) -> PreparedSplit:
    data = np.load(stage_dir / "prepared.npz", allow_pickle=False)
    return PreparedSplit(
        ids=[str(v) for v in data["ids"]],
        labels=data["labels"],
        vectors=data["vectors"],
        region5=data["region5"],
    )


def _extract_features(extractors: Sequence[MlpModel], vectors: np.ndarray) -> np.ndarray:
    """(n, 4, 31) hidden-layer features, one extractor per corner region."""
    feats = np.empty((vectors.shape[0], 4, 31))
    for k, model in enumerate(extractors):
        for i in range(vectors.shape[0]):
            feats[i, k] = mlp_extract(model, vectors[i, k])
    return feats


def _fuse_split(prep: PreparedSplit, feats: np.ndarray) -> np.ndarray:
    """(n, 32, 32, 3) composite images in sample order."""
    out = np.empty((len(prep.ids), 32, 32, 3))
    for i, sample_id in enumerate(prep.ids):
        comp = build_composite(
            prep.region5[i], feats[i, 0], feats[i, 1], feats[i, 2], feats[i, 3],
            source_id=sample_id,
        )
        out[i] = comp.image
    return out


def _cnn_tap_features(model: CnnModel, composites: np.ndarray) -> dict[int, np.ndarray]:
    """Flattened tap activations for a batch, keyed by layer index."""
    probs, taps = _cnn_forward_batch(model, composites)
    return {
        idx: tap.reshape(tap.shape[0], -1).copy()
        for idx, tap in zip(model.tap_points, taps)
    }


def _select_tap_layer(
    cfg: PipelineConfig, model: CnnModel, composites: np.ndarray, labels: np.ndarray
) -> tuple[str, list]:
    taps = _cnn_tap_features(model, composites)
    per_layer = []
    for idx in model.tap_points:
        layer_kind = model.spec[idx]["type"]
        layer_id = f"layer{idx}:{layer_kind}"
        feats = taps[idx]
        per_layer.append(
            (layer_id, list(feats[labels == 0]), list(feats[labels == 1]))
        )
    ranking = rank_layers(
        per_layer,
        bins=int(cfg.mi["bins"]),
        max_pairs=int(cfg.mi["max_pairs"]),
        seed=_derived_seed(cfg.seed, 303),
        pairing=cfg.mi["pairing"],
    )
    # rank_layers sorts ascending and Python sort is stable, so the first
    # entry is the shallowest layer among the minima.
    return ranking[0][0], [[lid, mi] for lid, mi in ranking]


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute the full pipeline and return the run report (also written to disk).

    register -> crop -> regions -> train extractors -> fuse -> train head ->
    (mi-select when the head exposes taps) -> evaluate on the test split.
    Test samples never influence extractor, fusion, or head training.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out_dir / "cache", enabled=cfg.cache)

    if cfg.manifest is not None:
        reference_quad, reference_dims = cfg.reference()
        dataset = load_manifest(cfg.manifest, reference_quad, reference_dims)
    else:
        spec = SynthSpec(**cfg.synth)
        reference_quad, reference_dims = cfg.reference()
        data_dir = out_dir / "data"
        manifest_path = data_dir / "manifest.jsonl"
        if manifest_path.exists():
            dataset = load_manifest(manifest_path, reference_quad, reference_dims)
        else:
            dataset = synth_generate(spec, data_dir, reference_quad, reference_dims)
    dataset.require_both_classes("train")
    dataset.require_both_classes("test")

    train_samples = dataset.split("train")
    test_samples = dataset.split("test")
    base_key = _chain(
        "v1",
        json.dumps(cfg.canonical(), sort_keys=True),
    )

    # ----- training side; test images are untouched until checkpoints exist --
    train_key = _chain(base_key, "train", _split_fingerprint(train_samples))
    prep_train = cache.get(
        "prep-train",
        train_key,
        lambda: _prepare_split(dataset, train_samples, cfg.channel, cfg.workers),
        _save_prepared,
        _load_prepared,
    )

    extract_key = _chain(train_key, json.dumps(cfg.extractor, sort_keys=True))

    def compute_extractors() -> dict:
        models = []
        for k in range(4):
            pairs = list(zip(prep_train.vectors[:, k, :], prep_train.labels.tolist()))
            models.append(mlp_train(pairs, cfg.extractor_cfg(k)))
        return {"models": models}

    def save_extractors(stage_dir: Path, result: dict) -> None:
        for k, model in enumerate(result["models"]):
            _write_json(stage_dir / f"extractor_r{k + 1}.json", model.to_dict())

    def load_extractors(stage_dir: Path) -> dict:
        models = []
        for k in range(4):
            with open(stage_dir / f"extractor_r{k + 1}.json", "r", encoding="utf-8") as fh:
                models.append(MlpModel.from_dict(json.load(fh)))
        return {"models": models}

    extractors = cache.get(
        "extractors", extract_key, compute_extractors, save_extractors, load_extractors
    )["models"]

    fuse_key = _chain(extract_key, "fuse")
    train_composites = cache.get(
        "fuse-train",
        fuse_key,
        lambda: {"composites": _fuse_split(prep_train, _extract_features(extractors, prep_train.vectors))},
        lambda d, r: np.savez_compressed(d / "composites.npz", composites=r["composites"]),
        lambda d: {"composites": np.load(d / "composites.npz")["composites"]},
    )["composites"]

    head_key = _chain(
        fuse_key,
        cfg.head,
        json.dumps(cfg.svm, sort_keys=True),
        json.dumps(cfg.cnn, sort_keys=True),
        json.dumps(cfg.mi, sort_keys=True),
    )

    def compute_head() -> dict:
        labels = prep_train.labels
        result: dict = {"head": cfg.head, "selected_layer": None, "layer_ranking": None}
        if cfg.head == "svm-on-composite":
            xs = train_composites.reshape(train_composites.shape[0], -1)
            result["svm"] = _train_svm(cfg, xs, labels)
        else:
            cnn_model = cnn_train(
                list(zip(train_composites, labels.tolist())),
                cfg.cnn_cfg(),
                spec=cfg.cnn["spec"],
                tap_points=cfg.cnn["tap_points"],
            )
            result["cnn"] = cnn_model
            selected, ranking = _select_tap_layer(cfg, cnn_model, train_composites, labels)
            result["selected_layer"] = selected
            result["layer_ranking"] = ranking
            if cfg.head == "svm-on-tap":
                sel_idx = int(selected.split(":")[0].removeprefix("layer"))
                taps = _cnn_tap_features(cnn_model, train_composites)[sel_idx]
                result["svm"] = _train_svm(cfg, taps, labels)
        return result

    def save_head(stage_dir: Path, result: dict) -> None:
        meta = {
            "head": result["head"],
            "selected_layer": result["selected_layer"],
            "layer_ranking": result["layer_ranking"],
        }
        _write_json(stage_dir / "head.json", meta)
        if "svm" in result:
            _write_json(stage_dir / "svm.json", result["svm"].to_dict())
        if "cnn" in result:
            _write_json(stage_dir / "cnn.json", result["cnn"].to_dict())

    def load_head(stage_dir: Path) -> dict:
        with open(stage_dir / "head.json", "r", encoding="utf-8") as fh:
            result = json.load(fh)
        svm_path = stage_dir / "svm.json"
        if svm_path.exists():
            with open(svm_path, "r", encoding="utf-8") as fh:
                result["svm"] = SvmModel.from_dict(json.load(fh))
        cnn_path = stage_dir / "cnn.json"
        if cnn_path.exists():
            with open(cnn_path, "r", encoding="utf-8") as fh:
                result["cnn"] = CnnModel.from_dict(json.load(fh))
        return result

    head = cache.get("head", head_key, compute_head, save_head, load_head)

    # Persist checkpoints before any test image is read.
    ckpt_dir = out_dir / "checkpoints"
    for k, model in enumerate(extractors):
        _write_json(ckpt_dir / f"extractor_r{k + 1}.json", model.to_dict())
    if "svm" in head:
        _write_json(ckpt_dir / "head_svm.json", head["svm"].to_dict())
    if "cnn" in head:
        _write_json(ckpt_dir / "head_cnn.json", head["cnn"].to_dict())

    # ----- evaluation side ---------------------------------------------------
    test_key = _chain(base_key, "test", _split_fingerprint(test_samples))
    prep_test = cache.get(
        "prep-test",
        test_key,
        lambda: _prepare_split(dataset, test_samples, cfg.channel, cfg.workers),
        _save_prepared,
        _load_prepared,
    )
    test_composites = _fuse_split(prep_test, _extract_features(extractors, prep_test.vectors))

    preds, decisions = _predict(cfg, head, test_composites)
    truth = np.where(prep_test.labels == 1, 1, -1)
    cm = confusion(preds, truth)
    metric_values = metrics(cm)

    report = {
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "counts": {
            "train": len(train_samples),
            "test": len(test_samples),
            "total": len(dataset),
        },
        "head": cfg.head,
        "selected_layer": head.get("selected_layer"),
        "layer_ranking": head.get("layer_ranking"),
        "confusion": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
        "metrics": metric_values,
    }
    _write_json(out_dir / "report.json", report)
    with open(out_dir / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "label", "predicted", "decision_value"])
        for sample_id, label, pred, value in zip(
            prep_test.ids, prep_test.labels, preds, decisions
        ):
            writer.writerow(
                [
                    sample_id,
                    "patient" if label == 1 else "healthy",
                    "patient" if pred == 1 else "healthy",
                    repr(float(value)),
                ]
            )
    report["_cache"] = {"computed": cache.computed, "loaded": cache.loaded}
    return report


def _train_svm(cfg: PipelineConfig, xs: np.ndarray, labels01: np.ndarray) -> SvmModel:
    ys = np.where(labels01 == 1, 1.0, -1.0)
    return svm_train(
        xs,
        ys,
        c=float(cfg.svm["c"]),
        kernel=cfg.svm["kernel"],
        gamma=None if cfg.svm["gamma"] is None else float(cfg.svm["gamma"]),
        tol=float(cfg.svm["tol"]),
        max_passes=int(cfg.svm["max_passes"]),
        seed=_derived_seed(cfg.seed, 404),
    )


def _predict(cfg: PipelineConfig, head: dict, composites: np.ndarray):
    """Test-split predictions in {-1, +1} plus a decision value per sample."""
    if cfg.head == "svm-on-composite":
        xs = composites.reshape(composites.shape[0], -1)
        values = svm_decision(head["svm"], xs)
        return np.where(values >= 0, 1, -1), values
    if cfg.head == "cnn":
        probs, _ = _cnn_forward_batch(head["cnn"], composites)
        values = probs[:, 1] - probs[:, 0]
        return np.where(values >= 0, 1, -1), values
    sel_idx = int(head["selected_layer"].split(":")[0].removeprefix("layer"))
    taps = _cnn_tap_features(head["cnn"], composites)[sel_idx]
    values = svm_decision(head["svm"], taps)
    return np.where(values >= 0, 1, -1), values
