"""Domain types, dataset model, manifest ingestion and deterministic seeding.

Conventions used throughout the package:

- Images are numpy float64 arrays of shape (height, width, channels) with
  channels in {1, 3} and every value in [0, 1].
- Points and quad corners are (x, y) pixel coordinates with a pixel-center
  origin at (0, 0) in the top-left corner (x grows rightwards, y downwards).
- Random streams come from numpy's PCG64 generator; an identical 64-bit seed
  yields a bit-identical stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

LABELS = ("healthy", "patient")
SPLITS = ("train", "test")

# Internal integer encoding for loss targets; "patient" is the positive class.
LABEL_TO_INT = {"healthy": 0, "patient": 1}


class ValidationError(Exception):
    """Input violates a documented contract (bad values, bad shapes)."""


class ParseError(ValidationError):
    """A manifest or config file could not be parsed."""


class ShapeError(ValidationError):
    """An array argument has the wrong dimensions."""


class DetectionError(ValidationError):
    """The heuristic detector found no usable tongue region."""


class DegeneracyError(Exception):
    """A numerical operation hit a singular or near-singular configuration."""


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded with a 64-bit unsigned integer.

    The same seed always produces a bit-identical pseudo-random stream.
    """
    if seed < 0 or seed > 2**64 - 1:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Deterministic independent substream for (seed, key) via SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *key))))


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, C) float-in-[0,1] image convention; return the array."""
    arr = np.asarray(img)
    if arr.ndim != 3:
        raise ShapeError(f"{name}: expected 3 dimensions (H, W, C), got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c not in (1, 3):
        raise ShapeError(f"{name}: bad shape {arr.shape}; channels must be 1 or 3")
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValidationError(f"{name}: expected float pixels, got dtype {arr.dtype}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name}: non-finite pixel values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise ValidationError(f"{name}: pixel values outside [0, 1] (min={lo}, max={hi})")
    return arr


@dataclass(frozen=True)
class BoundingQuad:
    """Four (x, y) corners ordered top-left, top-right, bottom-right, bottom-left."""

    corners: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.corners, dtype=float)
        if arr.shape != (4, 2):
            raise ShapeError(f"quad corners must be 4 (x, y) points, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("quad corners must be finite")
        object.__setattr__(self, "corners", arr)
        if self.area() <= 0.0:
            raise ValidationError(f"quad is degenerate (area {self.area()!r})")

    def area(self) -> float:
        """Polygon area via the shoelace formula (corners in drawing order)."""
        x = self.corners[:, 0]
        y = self.corners[:, 1]
        return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0

    def within_bounds(self, height: int, width: int) -> bool:
        x = self.corners[:, 0]
        y = self.corners[:, 1]
        return bool((x >= 0).all() and (x <= width - 1).all() and (y >= 0).all() and (y <= height - 1).all())

    def as_list(self) -> list[list[float]]:
        return [[float(x), float(y)] for x, y in self.corners]


# Canonical reference model: a 512x512 frame with the tongue rectangle centred
# slightly below the middle.  Runs may override it from their config file.
DEFAULT_REFERENCE_DIMS = (512, 512)
DEFAULT_REFERENCE_QUAD = BoundingQuad(
    np.array([[156.0, 176.0], [356.0, 176.0], [356.0, 416.0], [156.0, 416.0]])
)


@dataclass(frozen=True)
class LabeledSample:
    image_id: str
    label: str
    path: Path
    split: str
    quad: BoundingQuad | None = None

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def target(self) -> int:
        return LABEL_TO_INT[self.label]


@dataclass(frozen=True)
class Dataset:
    samples: tuple[LabeledSample, ...]
    reference_quad: BoundingQuad = DEFAULT_REFERENCE_QUAD
    reference_dims: tuple[int, int] = DEFAULT_REFERENCE_DIMS

    def __post_init__(self) -> None:
        ids = [s.image_id for s in self.samples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate image_id values in manifest: {dupes}")

    def split(self, which: str) -> tuple[LabeledSample, ...]:
        return tuple(s for s in self.samples if s.split == which)

    def require_both_classes(self, which: str) -> None:
        labels = {s.label for s in self.split(which)}
        if labels != set(LABELS):
            raise ValidationError(
                f"{which} split must contain both classes, found {sorted(labels)}"
            )

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)


def _parse_quad(value, line_no: int) -> BoundingQuad:
    try:
        return BoundingQuad(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"manifest line {line_no}: bad quad: {exc}") from exc


def load_manifest(
    path: str | Path,
    reference_quad: BoundingQuad = DEFAULT_REFERENCE_QUAD,
    reference_dims: tuple[int, int] = DEFAULT_REFERENCE_DIMS,
) -> Dataset:
    """Parse a JSON-lines manifest into a Dataset, preserving line order.

    Each line is an object with keys ``path``, ``label`` ("healthy"|"patient"),
    ``split`` ("train"|"test") and optionally ``quad`` (4 [x, y] pairs in
    TL, TR, BR, BL order).  The image_id is the path stem.
    """
    path = Path(path)
    samples: list[LabeledSample] = []
    base = path.parent
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"manifest line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"manifest line {line_no}: expected an object")
            missing = {"path", "label", "split"} - record.keys()
            if missing:
                raise ParseError(f"manifest line {line_no}: missing keys {sorted(missing)}")
            img_path = Path(record["path"])
            if not img_path.is_absolute():
                img_path = base / img_path
            quad = _parse_quad(record["quad"], line_no) if record.get("quad") is not None else None
            try:
                sample = LabeledSample(
                    image_id=img_path.stem,
                    label=record["label"],
                    path=img_path,
                    split=record["split"],
                    quad=quad,
                )
            except ValidationError as exc:
                raise ParseError(f"manifest line {line_no}: {exc}") from exc
            samples.append(sample)
    if not samples:
        raise ValidationError(f"no samples in manifest {path}")
    return Dataset(tuple(samples), reference_quad=reference_quad, reference_dims=reference_dims)


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG as a float64 (H, W, C) array scaled by 1/255."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Write an image as an 8-bit PNG (values rounded to the nearest level)."""
    arr = validate_image(img)
    quantized = np.rint(arr * 255.0).astype(np.uint8)
    if quantized.shape[2] == 1:
        pil = Image.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(quantized, mode="RGB")
    pil.save(path, format="PNG")
