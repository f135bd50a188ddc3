"""
Disc-based stand-in for the scale-biased S / L / X datasets.
"""

import numpy as np
from loguru import logger
from typing import Sequence
from divdr.data.schemas import (
    SPLIT_CODE,
    SUBSET_CODE,
    SUBSET_LABEL,
    DatasetSpec,
    SplitReport,
    SynthSample,
)

# Discs per image.
MIN_DISCS, MAX_DISCS = 1, 3


def render(
    discs: Sequence[tuple[float, float, float]],
    size: int,
    noise_std: float = 0.0,
    rng: np.random.Generator = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Rasterise (cy, cx, r) discs; pixel (i, j) sits at (i + 0.5, j + 0.5).
    The mask is distance <= r, the image a soft edge one pixel wide plus
    clipped Gaussian noise.
    """
    coords = np.arange(size) + 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    image = np.zeros((size, size))
    mask = np.zeros((size, size), dtype=bool)
    for cy, cx, radius in discs:
        distance = np.hypot(yy - cy, xx - cx)
        image = np.maximum(image, np.clip(radius + 0.5 - distance, 0.0, 1.0))
        mask |= distance <= radius
    if noise_std > 0:
        if rng is None:
            raise ValueError("render: noise requires a random generator")
        image = image + rng.normal(0.0, noise_std, size=image.shape)
    return np.clip(image, 0.0, 1.0)[None], mask.astype(np.int64)


def is_small(index: int, mix: float) -> bool:
    """
    Interleaving rule for X: sample i is S-type iff floor((i+1)*mix) > floor(i*mix),
    giving exactly floor(n*mix) S-type samples among the first n.
    """
    return int(np.floor((index + 1) * mix)) > int(np.floor(index * mix))


def _sample(spec: DatasetSpec, subset: str, split: str, sample_id: int) -> SynthSample:
    rng = np.random.default_rng([spec.seed, SPLIT_CODE[split], SUBSET_CODE[subset], sample_id])
    kind = subset
    if subset == "X":
        kind = "S" if is_small(sample_id, spec.mix) else "L"
    low, high = spec.radius_range(kind)
    discs = []
    for _ in range(int(rng.integers(MIN_DISCS, MAX_DISCS + 1))):
        radius = float(rng.uniform(low, high))
        cy, cx = rng.uniform(radius, spec.size - radius, size=2)
        discs.append((float(cy), float(cx), radius))
    image, mask = render(discs, spec.size, spec.noise_std, rng)
    return SynthSample(image=image, mask=mask, true_subset=SUBSET_LABEL[kind], sample_id=sample_id)


def generate(spec: DatasetSpec, subset: str, split: str = "train") -> list[SynthSample]:
    """
    Generate a split of subset S, L or X. Content is a pure function of
    (seed, split, subset, sample_id).
    """
    if subset not in SUBSET_CODE:
        raise ValueError(f"Unknown subset: {subset}")
    if split not in SPLIT_CODE:
        raise ValueError(f"Unknown split: {split}")
    samples = [_sample(spec, subset, split, index) for index in range(spec.count(split))]
    report = split_report(samples)
    if report.foreground_s is not None and report.foreground_l is not None:
        if report.foreground_l <= report.foreground_s:
            logger.warning(f"Foreground ordering L > S violated for {subset}/{split}: {report}")
    logger.info(f"Generated {len(samples)} {subset}/{split} samples: {report.counts}")
    return samples


def split_report(dataset: Sequence[SynthSample]) -> SplitReport:
    small = [sample for sample in dataset if sample.true_subset == SUBSET_LABEL["S"]]
    large = [sample for sample in dataset if sample.true_subset == SUBSET_LABEL["L"]]
    return SplitReport(
        count_s=len(small),
        count_l=len(large),
        foreground_s=float(np.mean([s.foreground_fraction for s in small])) if small else None,
        foreground_l=float(np.mean([s.foreground_fraction for s in large])) if large else None,
    )


def random_flip(sample: SynthSample, rng: np.random.Generator) -> SynthSample:
    """
    Horizontal flip with probability 1/2.
    """
    if rng.random() < 0.5:
        return sample
    return SynthSample(
        image=sample.image[:, :, ::-1].copy(),
        mask=sample.mask[:, ::-1].copy(),
        true_subset=sample.true_subset,
        sample_id=sample.sample_id,
    )
