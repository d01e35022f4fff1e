"""Training loop: normalization, k-fold splits, Adam/NLL optimization,
checkpoint serialization, and prediction.

One epoch visits every (excerpt, condition) input once; the per-sample NLL
sums over all individual listener scores attached to that input, so tests
with more listeners pull proportionally harder on the gradient. Reported
losses are per-score mean nats. With CutMix/MixUp enabled, each batch is
mixed on the fly and contributes one mixed label per input; validation
always runs on un-augmented data.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import prob
from .augment import AUGMENTATIONS
from .errors import (
    CheckpointError,
    ConfigError,
    ShapeMismatchError,
    TooFewExcerptsError,
    TrainingDivergedError,
)
from .frontend import ModelInput
from .nn import AdamState, BackboneConfig, ModelParams, adam_step, backward, forward, init_params
from .util import atomic_write_bytes, canonical_json, child_rng, fmt_float

CHECKPOINT_MAGIC = b"GMLCKPT1"
CHECKPOINT_VERSION = 1

LOSS_CSV_HEADER = "fold,epoch,split,nll"
AUG_CSV_HEADER = "batch,epoch,id_a,id_b,lambda_raw,lambda_eff,band_lo,band_hi,frame_lo,frame_hi"


def child_seed(*keys) -> int:
    return int(child_rng(*keys).integers(2**63))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs_per_fold: int = 10
    folds: int = 5
    loss_family: str = "logistic"
    augmentation: str = "none"
    alpha: float = 0.7
    seed: int = 0
    log_augmentation: bool = False

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs_per_fold < 1:
            raise ConfigError("epochs_per_fold must be >= 1")
        if self.loss_family not in prob.FAMILIES:
            raise ConfigError(f"unknown loss family {self.loss_family!r}")
        if self.augmentation not in ("none", *AUGMENTATIONS):
            raise ConfigError(f"unknown augmentation {self.augmentation!r}")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs_per_fold": self.epochs_per_fold,
            "folds": self.folds,
            "loss_family": self.loss_family,
            "augmentation": self.augmentation,
            "alpha": self.alpha,
            "seed": self.seed,
            "log_augmentation": self.log_augmentation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class NormStats:
    """Per-plane z-scoring statistics, fit on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, planes: np.ndarray) -> np.ndarray:
        if planes.shape[-3] != self.mean.size:
            raise ShapeMismatchError("plane count does not match normalization stats")
        shape = (self.mean.size, 1, 1)
        return (planes - self.mean.reshape(shape)) / self.std.reshape(shape)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def normalize_fit(planes_list) -> NormStats:
    """Per-plane mean/std over a list of (8, H, W) inputs; std floored at 1e-6."""
    if len(planes_list) == 0:
        raise ConfigError("cannot fit normalization on an empty dataset")
    n_planes = planes_list[0].shape[0]
    total = np.zeros(n_planes)
    count = 0
    for p in planes_list:
        total += p.sum(axis=(1, 2))
        count += p.shape[1] * p.shape[2]
    mean = total / count
    ss = np.zeros(n_planes)
    for p in planes_list:
        d = p - mean[:, None, None]
        ss += (d * d).sum(axis=(1, 2))
    std = np.sqrt(ss / count)
    return NormStats(mean=mean, std=np.maximum(std, 1e-6))


@dataclass
class TrainItem:
    """One featurized (excerpt, condition) input plus its listener scores."""

    key: str
    excerpt_id: str
    condition_id: str
    input: ModelInput
    scores: np.ndarray
    swapped: bool = False


@dataclass
class TrainingSet:
    items: list

    @property
    def excerpt_ids(self) -> list[str]:
        return sorted({it.excerpt_id for it in self.items})


def kfold_split(dataset: TrainingSet, k: int = 5, seed: int = 0):
    """k (train, validation) item-index partitions grouped by excerpt.

    All conditions and channel-swapped twins of an excerpt land in the same
    fold; validation fold sizes differ by at most one excerpt.
    """
    excerpts = dataset.excerpt_ids
    if len(excerpts) < k:
        raise TooFewExcerptsError(f"{len(excerpts)} excerpts cannot fill {k} folds")
    rng = child_rng(seed, "split")
    order = rng.permutation(len(excerpts))
    groups = np.array_split(order, k)
    by_excerpt = {}
    for idx, it in enumerate(dataset.items):
        by_excerpt.setdefault(it.excerpt_id, []).append(idx)
    splits = []
    for g in groups:
        val_ids = {excerpts[int(i)] for i in g}
        val_idx = [i for e in sorted(val_ids) for i in by_excerpt[e]]
        train_idx = [
            i
            for e in excerpts
            if e not in val_ids
            for i in by_excerpt[e]
        ]
        splits.append((np.asarray(train_idx), np.asarray(val_idx)))
    return splits


def _family_fns(family: str):
    if family == "gaussian":
        return prob.nll_gaussian, prob.nll_gaussian_grad
    return prob.nll_logistic, prob.nll_logistic_grad


@dataclass
class Checkpoint:
    backbone: BackboneConfig
    params: np.ndarray
    norm: NormStats
    adam: AdamState | None
    meta: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        return self.meta.get("loss_family", "logistic")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = canonical_json(
        {
            "backbone": ckpt.backbone.to_dict(),
            "norm": ckpt.norm.to_dict(),
            "meta": ckpt.meta,
        }
    ).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(header)),
        header,
        struct.pack("<Q", ckpt.params.size),
        ckpt.params.astype("<f8").tobytes(),
    ]
    if ckpt.adam is not None:
        parts.append(b"\x01")
        parts.append(struct.pack("<Q", ckpt.adam.t))
        parts.append(ckpt.adam.m.astype("<f8").tobytes())
        parts.append(ckpt.adam.v.astype("<f8").tobytes())
    else:
        parts.append(b"\x00")
    blob = b"".join(parts)
    atomic_write_bytes(path, blob + struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if len(data) < 20 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file corrupt")
    version, jlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 16
    import json

    head = json.loads(data[off : off + jlen].decode("utf-8"))
    off += jlen
    (n_params,) = struct.unpack_from("<Q", data, off)
    off += 8
    params = np.frombuffer(data, dtype="<f8", count=n_params, offset=off).copy()
    off += 8 * n_params
    has_adam = data[off]
    off += 1
    adam = None
    if has_adam:
        (t,) = struct.unpack_from("<Q", data, off)
        off += 8
        m = np.frombuffer(data, dtype="<f8", count=n_params, offset=off).copy()
        off += 8 * n_params
        v = np.frombuffer(data, dtype="<f8", count=n_params, offset=off).copy()
        adam = AdamState(m=m, v=v, t=t)
    return Checkpoint(
        backbone=BackboneConfig.from_dict(head["backbone"]),
        params=params,
        norm=NormStats.from_dict(head["norm"]),
        adam=adam,
        meta=head["meta"],
    )


def predict(ckpt: Checkpoint, mi: ModelInput) -> prob.ScoreDistribution:
    """Forward one input through a checkpoint with its stored normalization."""
    params = ModelParams(ckpt.backbone, ckpt.params)
    x = ckpt.norm.apply(mi.planes[None])
    mu, ls, _ = forward(ckpt.backbone, params, x)
    return prob.ScoreDistribution(ckpt.family, float(mu[0]), float(ls[0]))


def predict_ensemble(ckpts, mi: ModelInput) -> prob.ScoreDistribution:
    """Cross-fold prediction: arithmetic mean of mu, RMS of the scales."""
    if not ckpts:
        raise ConfigError("need at least one checkpoint")
    fams = {c.family for c in ckpts}
    if len(fams) != 1:
        raise ConfigError(f"checkpoints mix families: {sorted(fams)}")
    dists = [predict(c, mi) for c in ckpts]
    mu = float(np.mean([d.mu for d in dists]))
    scale = float(np.sqrt(np.mean([d.scale**2 for d in dists])))
    return prob.ScoreDistribution(fams.pop(), mu, float(np.log(scale)))


def _batch_nll_grad(backbone, params, x, labels, family):
    """Mean NLL over all (sample, score) terms in a batch plus its gradient.

    x is the normalized (B, 8, H, W) stack; labels[i] holds the listener
    scores attached to sample i. Returns (nll_sum, n_terms, grad_flat).
    """
    nll_fn, grad_fn = _family_fns(family)
    mu, ls, cache = forward(backbone, params, x, want_cache=True)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(ls))):
        raise TrainingDivergedError("model produced non-finite outputs")
    n_terms = sum(np.asarray(lab).size for lab in labels)
    dmu = np.zeros(len(labels))
    dls = np.zeros(len(labels))
    nll_sum = 0.0
    for i, lab in enumerate(labels):
        nll_sum += float(np.sum(nll_fn(lab, mu[i], ls[i])))
        gm, gs = grad_fn(lab, mu[i], ls[i])
        dmu[i] = np.sum(gm) / n_terms
        dls[i] = np.sum(gs) / n_terms
    grad = backward(backbone, params, cache, dmu, dls)
    return nll_sum, n_terms, grad


def nll_backward(backbone, params, norm, mi, scores, family):
    """Per-sample NLL and its exact gradient w.r.t. every parameter."""
    x = norm.apply(np.asarray(mi.planes if isinstance(mi, ModelInput) else mi)[None])
    scores = np.atleast_1d(np.asarray(scores, dtype=np.float64))
    nll_sum, n_terms, grad = _batch_nll_grad(backbone, params, x, [scores], family)
    return nll_sum / n_terms, grad


def _dataset_nll(backbone, params, norm, items, family, batch_size) -> float:
    nll_fn, _ = _family_fns(family)
    total = 0.0
    terms = 0
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        x = norm.apply(np.stack([it.input.planes for it in chunk]))
        mu, ls, _ = forward(backbone, params, x)
        for i, it in enumerate(chunk):
            total += float(np.sum(nll_fn(it.scores, mu[i], ls[i])))
            terms += it.scores.size
    return total / terms


@dataclass
class TrainResult:
    checkpoints: list
    loss_rows: list
    aug_rows: dict


def train(
    dataset: TrainingSet,
    cfg: TrainConfig,
    backbone: BackboneConfig | None = None,
    out_dir=None,
) -> TrainResult:
    """5-fold cross-validated NLL training; one checkpoint per fold.

    Deterministic for a fixed cfg.seed: the fold split, per-fold init,
    per-epoch shuffle and per-batch augmentation draws all come from
    derived seed streams.
    """
    backbone = backbone or BackboneConfig()
    folds = kfold_split(dataset, cfg.folds, cfg.seed)
    checkpoints = []
    loss_rows = []
    aug_rows = {}
    for fold, (tr_idx, va_idx) in enumerate(folds):
        train_items = [dataset.items[int(i)] for i in tr_idx]
        val_items = [dataset.items[int(i)] for i in va_idx]
        norm = normalize_fit([it.input.planes for it in train_items])
        params = init_params(backbone, seed=child_seed(cfg.seed, "init", fold))
        adam = AdamState.zeros(params.count)
        fold_aug = []
        v0 = _dataset_nll(backbone, params, norm, val_items, cfg.loss_family, cfg.batch_size)
        loss_rows.append((fold, 0, "val", v0))
        batch_counter = 0
        for epoch in range(1, cfg.epochs_per_fold + 1):
            order = child_rng(cfg.seed, "shuffle", fold, epoch).permutation(len(train_items))
            epoch_nll = 0.0
            epoch_terms = 0
            for bstart in range(0, len(order), cfg.batch_size):
                batch_items = [train_items[int(i)] for i in order[bstart : bstart + cfg.batch_size]]
                if cfg.augmentation != "none" and len(batch_items) >= 2:
                    rng = child_rng(cfg.seed, "augment", fold, epoch, batch_counter)
                    mixed = AUGMENTATIONS[cfg.augmentation](
                        [(it.input, it.scores) for it in batch_items], cfg.alpha, rng
                    )
                    planes = np.stack([m.input.planes for m in mixed])
                    labels = [np.array([m.label]) for m in mixed]
                    if cfg.log_augmentation:
                        for m in mixed:
                            id_a, id_b, spec = m.provenance
                            mask = spec.mask or (0, 0, 0, 0)
                            fold_aug.append(
                                (batch_counter, epoch, id_a, id_b, spec.lambda_raw, spec.lambda_eff, *mask)
                            )
                else:
                    planes = np.stack([it.input.planes for it in batch_items])
                    labels = [it.scores for it in batch_items]
                x = norm.apply(planes)
                try:
                    batch_nll, n_terms, grads = _batch_nll_grad(
                        backbone, params, x, labels, cfg.loss_family
                    )
                except TrainingDivergedError as exc:
                    raise TrainingDivergedError(
                        f"{exc} (fold {fold}, epoch {epoch}, batch {batch_counter})"
                    ) from exc
                if not np.isfinite(batch_nll):
                    raise TrainingDivergedError(
                        f"non-finite loss at fold {fold} epoch {epoch} batch {batch_counter}"
                    )
                adam_step(params.flat, grads, adam, cfg.learning_rate)
                epoch_nll += batch_nll
                epoch_terms += n_terms
                batch_counter += 1
            train_nll = epoch_nll / epoch_terms
            val_nll = _dataset_nll(backbone, params, norm, val_items, cfg.loss_family, cfg.batch_size)
            loss_rows.append((fold, epoch, "train", train_nll))
            loss_rows.append((fold, epoch, "val", val_nll))
        ckpt = Checkpoint(
            backbone=backbone,
            params=params.flat.copy(),
            norm=norm,
            adam=adam,
            meta={
                "fold": fold,
                "epochs": cfg.epochs_per_fold,
                "loss_family": cfg.loss_family,
                "augmentation": cfg.augmentation,
                "seed": cfg.seed,
                "val_excerpt_ids": sorted({it.excerpt_id for it in val_items}),
                "history": [[f, e, s, v] for (f, e, s, v) in loss_rows if f == fold],
            },
        )
        checkpoints.append(ckpt)
        if cfg.log_augmentation:
            aug_rows[fold] = fold_aug
    if out_dir is not None:
        out = Path(out_dir)
        for fold, ckpt in enumerate(checkpoints):
            save_checkpoint(out / f"checkpoint_fold{fold}.gmlckpt", ckpt)
        write_loss_csv(out / "losses.csv", loss_rows)
        for fold, rows in aug_rows.items():
            write_aug_csv(out / f"augmentation_fold{fold}.csv", rows)
    return TrainResult(checkpoints=checkpoints, loss_rows=loss_rows, aug_rows=aug_rows)


def write_loss_csv(path, rows) -> None:
    lines = [LOSS_CSV_HEADER]
    for fold, epoch, split, nll in rows:
        lines.append(f"{fold},{epoch},{split},{fmt_float(nll)}")
    from .util import atomic_write_text

    atomic_write_text(path, "\n".join(lines) + "\n")


def write_aug_csv(path, rows) -> None:
    lines = [AUG_CSV_HEADER]
    for batch, epoch, id_a, id_b, lraw, leff, blo, bhi, flo, fhi in rows:
        lines.append(
            f"{batch},{epoch},{id_a},{id_b},{fmt_float(lraw)},{fmt_float(leff)},{blo},{bhi},{flo},{fhi}"
        )
    from .util import atomic_write_text

    atomic_write_text(path, "\n".join(lines) + "\n")
