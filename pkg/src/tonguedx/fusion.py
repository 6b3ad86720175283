"""Composite-image assembly.

Each 32x32x3 composite packs, per channel and in row-major order, the 900
pixels of the 30x30 centre region followed by the four 31-entry feature
vectors of the corner regions (region 1 through 4): 900 + 4*31 = 1024 = 32*32.
The feature block is identical across the three channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ShapeError, ValidationError, validate_image
from .nnet import MLP_HIDDEN, MlpModel, mlp_extract
from .regionizer import (
    FEATURE_INPUT_SIZE,
    FUSION_REGION5_SIZE,
    RegionSet,
    resize,
    vectorize_channel,
)

COMPOSITE_SIZE = 32
REGION5_PIXELS = FUSION_REGION5_SIZE * FUSION_REGION5_SIZE  # 900
FEATURE_BLOCK = 4 * MLP_HIDDEN  # 124


@dataclass(frozen=True)
class CompositeImage:
    """Fused 32x32x3 image plus the ids of the pieces it was built from."""

    image: np.ndarray
    region5_source: str
    feature_sources: tuple[str, str, str, str]


def build_composite(
    r5: np.ndarray,
    f1: np.ndarray,
    f2: np.ndarray,
    f3: np.ndarray,
    f4: np.ndarray,
    source_id: str = "",
) -> CompositeImage:
    """Pack the centre-region pixels and the four feature vectors per channel."""
    validate_image(r5, "r5")
    if r5.shape != (FUSION_REGION5_SIZE, FUSION_REGION5_SIZE, 3):
        raise ShapeError(
            f"r5 must be {FUSION_REGION5_SIZE}x{FUSION_REGION5_SIZE}x3, got {r5.shape}"
        )
    feats = []
    for k, f in enumerate((f1, f2, f3, f4), start=1):
        arr = np.asarray(f, dtype=float)
        if arr.shape != (MLP_HIDDEN,):
            raise ShapeError(f"f{k} must have {MLP_HIDDEN} entries, got shape {arr.shape}")
        if not ((arr > 0.0) & (arr < 1.0)).all():
            raise ValidationError(f"f{k} entries must lie strictly in (0, 1)")
        feats.append(arr)
    block = np.concatenate(feats)  # (124,)
    out = np.empty((COMPOSITE_SIZE, COMPOSITE_SIZE, 3), dtype=float)
    for c in range(3):
        flat = np.concatenate([r5[:, :, c].reshape(-1), block])
        out[:, :, c] = flat.reshape(COMPOSITE_SIZE, COMPOSITE_SIZE)
    return CompositeImage(
        image=out,
        region5_source=source_id,
        feature_sources=(f"{source_id}_r1", f"{source_id}_r2", f"{source_id}_r3", f"{source_id}_r4"),
    )


def fuse_sample(
    sample_id: str,
    regions: RegionSet,
    extractors: Sequence[MlpModel],
    channel: int = 0,
) -> CompositeImage:
    """Fuse one sample: extract corner features, downscale region 5, pack."""
    if len(extractors) != 4:
        raise ValidationError(f"need 4 extractors (one per corner region), got {len(extractors)}")
    feats = []
    for k, (region, extractor) in enumerate(zip(regions.corners(), extractors), start=1):
        if region is None:
            raise ValidationError(f"sample {sample_id!r}: missing region {k}")
        vec = vectorize_channel(resize(region, FEATURE_INPUT_SIZE, FEATURE_INPUT_SIZE), channel)
        feats.append(mlp_extract(extractor, vec))
    if regions.r5 is None:
        raise ValidationError(f"sample {sample_id!r}: missing region 5")
    r5_small = resize(regions.r5, FUSION_REGION5_SIZE, FUSION_REGION5_SIZE)
    try:
        return build_composite(r5_small, *feats, source_id=sample_id)
    except ShapeError as exc:
        raise ShapeError(f"sample {sample_id!r}: {exc}") from exc


def fuse_dataset(
    samples: Sequence[tuple[str, RegionSet, str]],
    extractors: Sequence[MlpModel],
    channel: int = 0,
) -> list[tuple[CompositeImage, str]]:
    """Fuse every (sample_id, regions, label) entry, preserving input order."""
    out = []
    for sample_id, regions, label in samples:
        out.append((fuse_sample(sample_id, regions, extractors, channel), label))
    return out
