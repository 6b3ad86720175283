"""Synthetic desk-scale dataset: face-like frames with an elliptical tongue.

Every sample is rendered deterministically from (seed, class, index), so the
generator produces byte-identical files for identical specs.  The patient
class shifts the tongue hue and adds a coating texture, both scaled by the
``separation`` knob; at separation 0 the two classes are distributionally
identical.  The tongue quad (after pose jitter) is recorded in the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (
    DEFAULT_REFERENCE_DIMS,
    DEFAULT_REFERENCE_QUAD,
    BoundingQuad,
    Dataset,
    DetectionError,
    LabeledSample,
    ValidationError,
    derive_rng,
    save_image,
    validate_image,
)

# Tongue colours (RGB in [0,1]); the patient shift is scaled by separation.
HEALTHY_TONGUE = np.array([0.78, 0.40, 0.47])
PATIENT_SHIFT = np.array([0.04, 0.22, -0.12])
COATING_COLOR = np.array([0.88, 0.86, 0.70])
SKIN_BASE = np.array([0.78, 0.66, 0.58])


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int
    separation: float
    pose_jitter: float = 0.0
    image_dims: tuple[int, int] = (512, 512)
    seed: int = 0
    test_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.n_per_class < 1:
            raise ValidationError("n_per_class must be positive")
        if not 0.0 <= self.separation <= 1.0:
            raise ValidationError("separation must lie in [0, 1]")
        if self.pose_jitter < 0.0:
            raise ValidationError("pose_jitter must be nonnegative")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValidationError("test_fraction must lie in (0, 1)")


def _jitter_matrix(rng: np.random.Generator, jitter: float, center: np.ndarray) -> np.ndarray:
    """Random affine about ``center``: rotation, per-axis scale, shear, shift."""
    angle = rng.uniform(-0.14, 0.14) * jitter
    sx = 1.0 + rng.uniform(-0.06, 0.06) * jitter
    sy = 1.0 + rng.uniform(-0.06, 0.06) * jitter
    shear = rng.uniform(-0.06, 0.06) * jitter
    dx = rng.uniform(-18.0, 18.0) * jitter
    dy = rng.uniform(-18.0, 18.0) * jitter
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    lin = np.array([[cos_a, -sin_a], [sin_a, cos_a]]) @ np.array([[sx, shear * sx], [0.0, sy]])
    # x' = lin (x - c) + c + d
    full = np.eye(3)
    full[:2, :2] = lin
    full[:2, 2] = center - lin @ center + np.array([dx, dy])
    return full


def _smooth_field(rng: np.random.Generator, xs: np.ndarray, ys: np.ndarray, waves: int, freq: float) -> np.ndarray:
    """Deterministic smooth random field in [-1, 1] from a few sinusoids."""
    field = np.zeros_like(xs)
    for _ in range(waves):
        fx, fy = rng.uniform(-freq, freq, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        field += rng.uniform(0.5, 1.0) * np.sin(2.0 * np.pi * (fx * xs + fy * ys) + phase)
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def render_sample(
    spec: SynthSpec, class_idx: int, sample_idx: int
) -> tuple[np.ndarray, BoundingQuad]:
    """Render one sample image plus its ground-truth tongue quad."""
    rng = derive_rng(spec.seed, class_idx, sample_idx)
    h, w = spec.image_dims
    ys, xs = np.mgrid[0:h, 0:w].astype(float)

    # Face-like background: low-saturation skin with slow per-sample mottling.
    background = np.empty((h, w, 3))
    mottle = _smooth_field(rng, xs / w, ys / h, waves=4, freq=2.0) * 0.04
    brightness = rng.uniform(-0.04, 0.04)
    for c in range(3):
        background[:, :, c] = SKIN_BASE[c] + mottle + brightness - 0.05 * (ys / h - 0.5)

    ref = DEFAULT_REFERENCE_QUAD.corners
    center = ref.mean(axis=0)
    jitter = _jitter_matrix(rng, spec.pose_jitter, center)
    quad_pts = (jitter[:2, :2] @ ref.T).T + jitter[:2, 2]
    quad = BoundingQuad(quad_pts)

    # Tongue mask: the ellipse inscribed in the canonical rectangle, pushed
    # through the jitter map.  Work in canonical coordinates via the inverse.
    inv = np.linalg.inv(jitter)
    cx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    cy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    x0, y0 = ref[0]
    x1, y1 = ref[2]
    ax, ay = (x1 - x0) / 2.0, (y1 - y0) / 2.0
    mx, my = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    rho = np.sqrt(((cx - mx) / ax) ** 2 + ((cy - my) / ay) ** 2)
    alpha = np.clip((1.0 - rho) / 0.02, 0.0, 1.0)  # soft 2%-wide rim

    # Mouth shadow behind the tongue keeps the frame face-like.
    shadow = np.clip((1.12 - rho) / 0.08, 0.0, 1.0) * 0.35
    background *= (1.0 - shadow)[:, :, None]

    tongue_color = HEALTHY_TONGUE + spec.separation * class_idx * PATIENT_SHIFT
    papillae = _smooth_field(rng, xs / w, ys / h, waves=6, freq=40.0) * 0.03
    tongue = np.empty((h, w, 3))
    for c in range(3):
        tongue[:, :, c] = tongue_color[c] + papillae

    # Patient coating: pale blotches concentrated around the tongue centre.
    coating_strength = spec.separation * class_idx
    if coating_strength > 0.0:
        blotch = _smooth_field(rng, xs / w, ys / h, waves=5, freq=14.0)
        coat = np.clip(blotch, 0.0, 1.0) * np.clip(1.4 - rho, 0.0, 1.0) * coating_strength * 0.8
        tongue = tongue * (1.0 - coat[:, :, None]) + COATING_COLOR * coat[:, :, None]

    img = background * (1.0 - alpha[:, :, None]) + tongue * alpha[:, :, None]
    return np.clip(img, 0.0, 1.0), quad


def synth_generate(
    spec: SynthSpec,
    out_dir: str | Path,
    reference_quad: BoundingQuad = DEFAULT_REFERENCE_QUAD,
    reference_dims: tuple[int, int] = DEFAULT_REFERENCE_DIMS,
) -> Dataset:
    """Write PNGs plus a JSON-lines manifest and return the matching Dataset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples: list[LabeledSample] = []
    records: list[str] = []
    for class_idx, label in enumerate(("healthy", "patient")):
        n_test = int(round(spec.n_per_class * spec.test_fraction))
        n_test = min(max(n_test, 1), spec.n_per_class - 1) if spec.n_per_class > 1 else 0
        split_rng = derive_rng(spec.seed, 999, class_idx)
        test_ids = set(split_rng.choice(spec.n_per_class, size=n_test, replace=False).tolist())
        for idx in range(spec.n_per_class):
            img, quad = render_sample(spec, class_idx, idx)
            name = f"{label}_{idx:04d}.png"
            save_image(img, out_dir / name)
            split = "test" if idx in test_ids else "train"
            samples.append(
                LabeledSample(
                    image_id=f"{label}_{idx:04d}",
                    label=label,
                    path=out_dir / name,
                    split=split,
                    quad=quad,
                )
            )
            records.append(
                json.dumps(
                    {"path": name, "label": label, "split": split, "quad": quad.as_list()},
                    sort_keys=True,
                )
            )
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(records) + "\n", encoding="utf-8")
    return Dataset(tuple(samples), reference_quad=reference_quad, reference_dims=reference_dims)


def _saturation_value(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mx = img.max(axis=2)
    mn = img.min(axis=2)
    sat = np.where(mx > 0, (mx - mn) / np.maximum(mx, 1e-12), 0.0)
    return sat, mx


def detect_quad_heuristic(
    img: np.ndarray,
    sat_threshold: float = 0.35,
    value_threshold: float = 0.25,
    min_area: int = 500,
) -> BoundingQuad:
    """Axis-aligned bounding quad of the dominant saturated region.

    Thresholds saturation and brightness, keeps the largest connected
    component, and returns its bounding box corners in TL, TR, BR, BL order.
    Intended for the synthetic data only; manifest quads stay authoritative
    for real images.
    """
    validate_image(img)
    if img.shape[2] != 3:
        raise ValidationError("tongue detection needs a 3-channel image")
    sat, value = _saturation_value(img)
    mask = (sat > sat_threshold) & (value > value_threshold)
    labels, n_components = ndimage.label(mask)
    if n_components == 0:
        raise DetectionError("no saturated region found")
    sizes = np.bincount(labels.reshape(-1))[1:]
    biggest = int(np.argmax(sizes)) + 1
    if sizes[biggest - 1] < min_area:
        raise DetectionError(
            f"largest saturated component has {sizes[biggest - 1]} px, need {min_area}"
        )
    rows, cols = np.nonzero(labels == biggest)
    x0, x1 = float(cols.min()), float(cols.max())
    y0, y1 = float(rows.min()), float(rows.max())
    return BoundingQuad(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]))
