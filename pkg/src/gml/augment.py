"""CutMix and MixUp batch augmentation for spectrogram inputs.

Both operate on draft batches of (ModelInput, per-listener scores) and mix
pairs chosen by a random batch permutation. Labels follow the convex rule
label = lambda * y_a + (1 - lambda) * y_b, with lambda taken from the
realized kept-area fraction for CutMix and from the raw Beta draw for MixUp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmallError, NonpositiveScaleError, ShapeMismatchError
from .frontend import ModelInput


@dataclass(frozen=True)
class MixSpec:
    """How one mixed sample was produced.

    mask is (band_lo, band_hi, frame_lo, frame_hi), half-open, identical on
    all 8 planes; None for blend (MixUp) mixing. lambda_eff is the fraction
    of sample A that survived: 1 - mask_area / plane_area for CutMix, equal
    to lambda_raw for MixUp.
    """

    lambda_raw: float
    lambda_eff: float
    partner_index: int
    mask: tuple[int, int, int, int] | None

    def __post_init__(self):
        if not 0.0 <= self.lambda_eff <= 1.0:
            raise ValueError("lambda_eff must be in [0, 1]")
        if not 0.0 < self.lambda_raw < 1.0:
            raise ValueError("lambda_raw must be in (0, 1)")


@dataclass
class MixedSample:
    input: ModelInput
    label: float
    provenance: tuple[str, str, MixSpec]


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """One draw from the symmetric Beta(alpha, alpha) on the open interval."""
    if not alpha > 0:
        raise NonpositiveScaleError(f"alpha must be positive, got {alpha}")
    x = float(rng.beta(alpha, alpha))
    return min(max(x, 1e-12), 1.0 - 1e-12)


def _fit_rectangle(lambda_raw: float, n_bands: int, n_frames: int, rng: np.random.Generator):
    """Integer cut rectangle whose area tracks 1 - lambda_raw.

    Width and height fractions are both sqrt(1 - lambda_raw); the rectangle
    is placed uniformly among positions where it fits, so the realized area
    differs from the target only by integer rounding (at most one band row
    plus one frame column of cells).
    """
    cut = np.sqrt(1.0 - lambda_raw)
    h = min(int(round(cut * n_bands)), n_bands)
    w = min(int(round(cut * n_frames)), n_frames)
    top = int(rng.integers(0, n_bands - h + 1))
    left = int(rng.integers(0, n_frames - w + 1))
    return top, top + h, left, left + w


def _pick_score(scores, rng: np.random.Generator, use_mean: bool) -> float:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("sample has no listener scores")
    if use_mean:
        return float(np.mean(arr))
    return float(arr[int(rng.integers(arr.size))])


def _check_batch(batch):
    if len(batch) < 2:
        raise BatchTooSmallError(f"need a batch of >= 2, got {len(batch)}")
    shape = batch[0][0].planes.shape
    for mi, _ in batch:
        if mi.planes.shape != shape:
            raise ShapeMismatchError(
                f"plane shapes differ within batch: {mi.planes.shape} vs {shape}"
            )
    return shape


def cutmix(batch, alpha: float, rng: np.random.Generator, use_mean_scores: bool = False):
    """Rectangle-splice augmentation over a batch of (ModelInput, scores).

    The same mask is applied to all 8 planes of a sample; cells inside the
    mask come from the partner, cells outside stay. The label mixes one
    randomly drawn listener score from each side (or the mean scores when
    use_mean_scores is set) weighted by the realized kept-area fraction.
    """
    shape = _check_batch(batch)
    _, n_bands, n_frames = shape
    perm = rng.permutation(len(batch))
    out = []
    for i, (mi, scores) in enumerate(batch):
        j = int(perm[i])
        partner, partner_scores = batch[j]
        lam_raw = sample_beta(alpha, rng)
        b_lo, b_hi, f_lo, f_hi = _fit_rectangle(lam_raw, n_bands, n_frames, rng)
        area = (b_hi - b_lo) * (f_hi - f_lo)
        lam_eff = 1.0 - area / (n_bands * n_frames)
        planes = mi.planes.copy()
        planes[:, b_lo:b_hi, f_lo:f_hi] = partner.planes[:, b_lo:b_hi, f_lo:f_hi]
        y_a = _pick_score(scores, rng, use_mean_scores)
        y_b = _pick_score(partner_scores, rng, use_mean_scores)
        label = lam_eff * y_a + (1.0 - lam_eff) * y_b
        spec = MixSpec(lam_raw, lam_eff, j, (b_lo, b_hi, f_lo, f_hi))
        mixed = ModelInput(planes=planes, excerpt_id=mi.excerpt_id)
        out.append(MixedSample(mixed, label, (mi.excerpt_id, partner.excerpt_id, spec)))
    return out


def mixup(batch, alpha: float, rng: np.random.Generator, use_mean_scores: bool = False):
    """Convex blend of inputs and labels with a shared Beta(alpha, alpha) weight."""
    _check_batch(batch)
    perm = rng.permutation(len(batch))
    out = []
    for i, (mi, scores) in enumerate(batch):
        j = int(perm[i])
        partner, partner_scores = batch[j]
        lam = sample_beta(alpha, rng)
        planes = lam * mi.planes + (1.0 - lam) * partner.planes
        y_a = _pick_score(scores, rng, use_mean_scores)
        y_b = _pick_score(partner_scores, rng, use_mean_scores)
        label = lam * y_a + (1.0 - lam) * y_b
        spec = MixSpec(lam, lam, j, None)
        mixed = ModelInput(planes=planes, excerpt_id=mi.excerpt_id)
        out.append(MixedSample(mixed, label, (mi.excerpt_id, partner.excerpt_id, spec)))
    return out


AUGMENTATIONS = {"cutmix": cutmix, "mixup": mixup}
