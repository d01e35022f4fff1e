"""Dataset plumbing: manifests, the synthetic oracle dataset, featurization.

The manifest is a per-rating CSV (one listener score per row). The synthetic
generator builds a desk-scale MUSHRA-style corpus: tone-plus-noise stereo
references, a degradation ladder of low-pass/noise conditions mirroring the
hidden-reference/anchor structure, and listener scores drawn from a logistic
distribution around a per-condition true mean. Featurization converts pairs
to cached spectrogram tensors keyed by config + audio content digests, and
adds the channel-swapped twin of every pair.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.signal

from . import prob
from .errors import (
    ConfigError,
    DuplicateRecordError,
    ManifestError,
    MissingFileError,
    OutOfRangeScoreError,
)
from .frontend import (
    GammatoneConfig,
    ModelInput,
    SAMPLE_RATE,
    StereoSignal,
    cache_key,
    channel_planes,
    load_audio,
    pad_to_length,
    read_cache,
    save_audio,
    swapped_input,
    write_cache,
)
from .train import TrainItem, TrainingSet
from .util import atomic_write_text, canonical_json, child_rng, fmt_float

MANIFEST_HEADER = ["excerpt_id", "condition_id", "ref_path", "cod_path", "listener_id", "score"]
SWAP_SUFFIX = "#swap"


@dataclass(frozen=True)
class RatingRecord:
    excerpt_id: str
    condition_id: str
    listener_id: str
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 100.0) or not math.isfinite(self.score):
            raise OutOfRangeScoreError(
                f"score {self.score} for ({self.excerpt_id}, {self.condition_id}, "
                f"{self.listener_id}) outside [0, 100]"
            )


@dataclass
class ManifestEntry:
    excerpt_id: str
    condition_id: str
    ref_path: str
    cod_path: str
    ratings: list

    @property
    def pair_key(self) -> str:
        return f"{self.excerpt_id}:{self.condition_id}"


@dataclass
class Manifest:
    entries: list
    sample_rate: int = SAMPLE_RATE

    def rating_count(self) -> int:
        return sum(len(e.ratings) for e in self.entries)


def load_manifest(path) -> Manifest:
    """Parse and validate a per-rating manifest CSV."""
    entries: dict[tuple[str, str], ManifestEntry] = {}
    seen = set()
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise MissingFileError(f"{path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ManifestError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ManifestError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            excerpt, cond, ref_path, cod_path, listener, score_text = row
            try:
                score = float(score_text)
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: bad score {score_text!r}") from exc
            if not (0.0 <= score <= 100.0) or not math.isfinite(score):
                raise OutOfRangeScoreError(
                    f"{path}:{lineno}: score {score_text} outside [0, 100]"
                )
            triple = (excerpt, cond, listener)
            if triple in seen:
                raise DuplicateRecordError(
                    f"{path}:{lineno}: duplicate rating for {triple}"
                )
            seen.add(triple)
            key = (excerpt, cond)
            entry = entries.get(key)
            if entry is None:
                entry = ManifestEntry(excerpt, cond, ref_path, cod_path, [])
                entries[key] = entry
            elif entry.ref_path != ref_path or entry.cod_path != cod_path:
                raise ManifestError(
                    f"{path}:{lineno}: inconsistent audio paths for {key}"
                )
            entry.ratings.append(RatingRecord(excerpt, cond, listener, score))
    ordered = [entries[k] for k in sorted(entries)]
    for entry in ordered:
        entry.ratings.sort(key=lambda r: r.listener_id)
    return Manifest(entries=ordered)


def save_manifest(path, manifest: Manifest) -> None:
    lines = [",".join(MANIFEST_HEADER)]
    for entry in sorted(manifest.entries, key=lambda e: (e.excerpt_id, e.condition_id)):
        for r in sorted(entry.ratings, key=lambda r: r.listener_id):
            lines.append(
                f"{entry.excerpt_id},{entry.condition_id},{entry.ref_path},"
                f"{entry.cod_path},{r.listener_id},{fmt_float(r.score)}"
            )
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Synthetic oracle dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradationStep:
    """One rung of the degradation ladder with its true mean score."""

    condition_id: str
    lowpass_hz: float | None
    noise_level: float
    mu_true: float


DEFAULT_CONDITIONS = (
    DegradationStep("hidden_ref", None, 0.0, 98.0),
    DegradationStep("lp_noise_mild", 15000.0, 0.004, 70.0),
    DegradationStep("lp7000", 7000.0, 0.0, 55.0),
    DegradationStep("lp_noise_severe", 5000.0, 0.04, 45.0),
    DegradationStep("lp3500", 3500.0, 0.0, 35.0),
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic dataset recipe; conditions are ordered by severity."""

    n_excerpts: int = 200
    listeners_per_condition: int = 20
    scale_true: float = 6.0
    duration_s: float = 0.25
    duration_jitter: float = 0.1
    seed: int = 0
    conditions: tuple = field(default_factory=lambda: DEFAULT_CONDITIONS)

    def __post_init__(self):
        if isinstance(self.conditions, list):
            object.__setattr__(self, "conditions", tuple(self.conditions))
        if self.n_excerpts < 1:
            raise ConfigError("n_excerpts must be >= 1")
        if self.listeners_per_condition < 2:
            raise ConfigError("need at least 2 listeners per condition")
        if not self.scale_true > 0:
            raise ConfigError("scale_true must be positive")
        if not 0 <= self.duration_jitter < 1:
            raise ConfigError("duration_jitter must be in [0, 1)")
        mus = [c.mu_true for c in self.conditions]
        if any(b >= a for a, b in zip(mus, mus[1:])):
            raise ConfigError("true means must decrease strictly with severity")
        ids = [c.condition_id for c in self.conditions]
        if len(set(ids)) != len(ids):
            raise ConfigError("condition ids must be unique")

    @property
    def std_true(self) -> float:
        return prob.logistic_std(self.scale_true)

    def to_dict(self) -> dict:
        return {
            "n_excerpts": self.n_excerpts,
            "listeners_per_condition": self.listeners_per_condition,
            "scale_true": self.scale_true,
            "duration_s": self.duration_s,
            "duration_jitter": self.duration_jitter,
            "seed": self.seed,
            "conditions": [
                {
                    "condition_id": c.condition_id,
                    "lowpass_hz": c.lowpass_hz,
                    "noise_level": c.noise_level,
                    "mu_true": c.mu_true,
                }
                for c in self.conditions
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "conditions" in d:
            d["conditions"] = tuple(DegradationStep(**c) for c in d["conditions"])
        return cls(**d)


_NOISE_BED = 0.02
_N_TONES = 6


def _reference_audio(rng: np.random.Generator, n_samples: int) -> StereoSignal:
    """Stereo tone mixture over a broadband noise bed, peak-normalized to 0.5."""
    t = np.arange(n_samples) / SAMPLE_RATE
    freqs = np.exp(rng.uniform(np.log(100.0), np.log(10000.0), _N_TONES))
    amps = rng.uniform(0.2, 1.0, _N_TONES)
    phase_l = rng.uniform(0.0, 2.0 * np.pi, _N_TONES)
    phase_r = phase_l + rng.uniform(-0.6, 0.6, _N_TONES)
    left = np.zeros(n_samples)
    right = np.zeros(n_samples)
    for f, a, pl, pr in zip(freqs, amps, phase_l, phase_r):
        arg = 2.0 * np.pi * f * t
        left += a * np.sin(arg + pl)
        right += a * np.sin(arg + pr)
    left += _NOISE_BED * rng.standard_normal(n_samples) / 0.5
    right += _NOISE_BED * rng.standard_normal(n_samples) / 0.5
    peak = max(np.max(np.abs(left)), np.max(np.abs(right)))
    return StereoSignal(0.5 * left / peak, 0.5 * right / peak)


def _degrade(sig: StereoSignal, step: DegradationStep, rng: np.random.Generator) -> StereoSignal:
    if step.lowpass_hz is None and step.noise_level == 0.0:
        return sig
    left, right = sig.left, sig.right
    if step.lowpass_hz is not None:
        taps = scipy.signal.firwin(129, step.lowpass_hz, fs=SAMPLE_RATE)
        left = scipy.signal.fftconvolve(left, taps, mode="same")
        right = scipy.signal.fftconvolve(right, taps, mode="same")
    if step.noise_level > 0.0:
        left = left + step.noise_level * rng.standard_normal(left.size)
        right = right + step.noise_level * rng.standard_normal(right.size)
    return StereoSignal(np.clip(left, -1.0, 1.0), np.clip(right, -1.0, 1.0))


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Manifest:
    """Write audio files, manifest.csv, subjective.csv and truth.csv.

    Listener scores are logistic draws around the condition's true mean,
    clipped into [0, 100] for MUSHRA realism. The zero-degradation condition
    writes a coded file that is byte-identical to the reference.
    """
    out = Path(out_dir)
    audio_dir = out / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    subj_rows = []
    truth_rows = []
    n_listeners = spec.listeners_per_condition
    listener_ids = [f"L{i + 1:03d}" for i in range(n_listeners)]
    for ei in range(spec.n_excerpts):
        excerpt_id = f"e{ei:04d}"
        rng_audio = child_rng(spec.seed, "audio", ei)
        frac = rng_audio.uniform(1.0 - spec.duration_jitter, 1.0)
        n_samples = max(int(round(SAMPLE_RATE * spec.duration_s * frac)), 2048)
        ref = _reference_audio(rng_audio, n_samples)
        ref_rel = f"audio/{excerpt_id}_ref.wav"
        save_audio(out / ref_rel, ref)
        for ci, step in enumerate(spec.conditions):
            cod = _degrade(ref, step, child_rng(spec.seed, "degrade", ei, ci))
            cod_rel = f"audio/{excerpt_id}_{step.condition_id}.wav"
            save_audio(out / cod_rel, cod)
            raw = prob.sample_scores(
                prob.ScoreDistribution("logistic", step.mu_true, math.log(spec.scale_true)),
                n_listeners,
                child_rng(spec.seed, "scores", ei, ci),
            )
            scores = np.clip(raw, 0.0, 100.0)
            ratings = [
                RatingRecord(excerpt_id, step.condition_id, lid, float(s))
                for lid, s in zip(listener_ids, scores)
            ]
            entry = ManifestEntry(excerpt_id, step.condition_id, ref_rel, cod_rel, ratings)
            entries.append(entry)
            for r in ratings:
                subj_rows.append((entry.pair_key, r.listener_id, r.score))
            truth_rows.append((entry.pair_key, step.mu_true, spec.std_true, n_listeners))
    manifest = Manifest(entries=sorted(entries, key=lambda e: (e.excerpt_id, e.condition_id)))
    save_manifest(out / "manifest.csv", manifest)
    from .evaluate import write_subjective_csv, write_truth_csv

    write_subjective_csv(out / "subjective.csv", sorted(subj_rows))
    write_truth_csv(out / "truth.csv", sorted(truth_rows))
    return manifest


# ---------------------------------------------------------------------------
# Featurization and cache management
# ---------------------------------------------------------------------------


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", text)


def _wav_frames(path) -> int:
    import wave

    with wave.open(str(path), "rb") as wf:
        return wf.getnframes()


def dataset_max_length(manifest: Manifest, base_dir) -> int:
    """Longest excerpt in samples; every pair is padded to this target."""
    base = Path(base_dir)
    longest = 0
    for entry in manifest.entries:
        for rel in (entry.ref_path, entry.cod_path):
            p = base / rel
            if not p.exists():
                raise MissingFileError(f"{p}: referenced by manifest but missing")
            longest = max(longest, _wav_frames(p))
    return longest


def featurize(manifest: Manifest, gcfg: GammatoneConfig, cache_dir, base_dir) -> dict:
    """Build (or reuse) spectrogram caches for every pair plus its swap twin.

    Cache keys hash the Gammatone config and both audio file digests, so a
    changed config or changed audio never reuses a stale file. Returns the
    index mapping pair keys to cache file names.
    """
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    base = Path(base_dir)
    target = dataset_max_length(manifest, base)
    index_entries = {}
    ref_planes_cache: dict[str, np.ndarray] = {}
    for entry in manifest.entries:
        ref_p = base / entry.ref_path
        cod_p = base / entry.cod_path
        key = cache_key(gcfg, ref_p, cod_p)
        stem = f"{_safe_name(entry.excerpt_id)}__{_safe_name(entry.condition_id)}__{key}"
        main_name = f"{stem}.gts"
        swap_name = f"{stem}__swap.gts"
        if not (cache / main_name).exists() or not (cache / swap_name).exists():
            # the reference planes are shared by every condition of an excerpt
            if entry.ref_path not in ref_planes_cache:
                ref_planes_cache.clear()
                ref = pad_to_length(load_audio(ref_p), target)
                ref_planes_cache[entry.ref_path] = channel_planes(ref, gcfg)
            cod = pad_to_length(load_audio(cod_p), target)
            planes = np.concatenate(
                [ref_planes_cache[entry.ref_path], channel_planes(cod, gcfg)]
            )
            mi = ModelInput(planes=planes, excerpt_id=entry.pair_key)
            write_cache(cache / main_name, mi)
            write_cache(cache / swap_name, swapped_input(mi, entry.pair_key + SWAP_SUFFIX))
        index_entries[entry.pair_key] = {
            "file": main_name,
            "swap": swap_name,
            "excerpt_id": entry.excerpt_id,
            "condition_id": entry.condition_id,
        }
    index = {
        "gammatone": gcfg.to_dict(),
        "target_len": target,
        "entries": index_entries,
    }
    atomic_write_text(cache / "index.json", canonical_json(index) + "\n")
    return index


def _load_index(cache_dir, gcfg: GammatoneConfig) -> dict:
    path = Path(cache_dir) / "index.json"
    if not path.exists():
        raise MissingFileError(f"{path}: no cache index; run featurize first")
    with open(path) as fh:
        index = json.load(fh)
    if index.get("gammatone") != gcfg.to_dict():
        raise ConfigError(
            "cache was featurized with a different Gammatone config; rerun featurize"
        )
    return index


def build_training_set(manifest: Manifest, cache_dir, gcfg: GammatoneConfig) -> TrainingSet:
    """Training items (pair + swap twin) from cached spectrograms."""
    index = _load_index(cache_dir, gcfg)
    cache = Path(cache_dir)
    items = []
    for entry in sorted(manifest.entries, key=lambda e: e.pair_key):
        info = index["entries"].get(entry.pair_key)
        if info is None:
            raise MissingFileError(f"{entry.pair_key}: not in cache index; rerun featurize")
        scores = np.asarray([r.score for r in entry.ratings], dtype=np.float64)
        for name, swapped in ((info["file"], False), (info["swap"], True)):
            p = cache / name
            if not p.exists():
                raise MissingFileError(f"{p}: cache file missing; rerun featurize")
            mi = read_cache(p)
            key = entry.pair_key + (SWAP_SUFFIX if swapped else "")
            items.append(
                TrainItem(
                    key=key,
                    excerpt_id=entry.excerpt_id,
                    condition_id=entry.condition_id,
                    input=mi,
                    scores=scores,
                    swapped=swapped,
                )
            )
    return TrainingSet(items=items)


def load_eval_inputs(manifest: Manifest, cache_dir, gcfg: GammatoneConfig):
    """Canonical (un-swapped) inputs for prediction, sorted by pair key."""
    index = _load_index(cache_dir, gcfg)
    cache = Path(cache_dir)
    out = []
    for entry in sorted(manifest.entries, key=lambda e: e.pair_key):
        info = index["entries"].get(entry.pair_key)
        if info is None:
            raise MissingFileError(f"{entry.pair_key}: not in cache index; rerun featurize")
        mi = read_cache(cache / info["file"])
        out.append((entry.pair_key, entry.excerpt_id, mi, len(entry.ratings)))
    return out
