"""Audio frontend: WAV ingest, L/R/M/S channels, Gammatone spectrogram planes.

A reference/coded stereo pair becomes 8 spectrogram planes, ordered
[ref-L, ref-R, ref-M, ref-S, cod-L, cod-R, cod-M, cod-S]. M and S are the
half-sum and half-difference channels. Everything here is a pure function
of its inputs and configuration.
"""

from __future__ import annotations

import hashlib
import math
import struct
import wave
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import (
    InputTooShortError,
    IoFailureError,
    LengthMismatchError,
    TargetTooSmallError,
    UnsupportedFormatError,
)
from .util import atomic_write_bytes, canonical_json

SAMPLE_RATE = 48000
N_PLANES = 8
PLANE_NAMES = ("ref-L", "ref-R", "ref-M", "ref-S", "cod-L", "cod-R", "cod-M", "cod-S")

# Joint L/R swap of ref and coded audio permutes the planes this way
# (M is symmetric, S flips sign, and the magnitude front end kills the sign).
SWAP_PLANE_ORDER = (1, 0, 2, 3, 5, 4, 6, 7)

CACHE_MAGIC = b"GMLSPEC1"


@dataclass
class StereoSignal:
    """Two-channel 48 kHz excerpt, samples in [-1, 1]."""

    left: np.ndarray
    right: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64)
        self.right = np.asarray(self.right, dtype=np.float64)
        if self.left.ndim != 1 or self.right.ndim != 1:
            raise ValueError("channels must be 1-D sample sequences")
        if self.left.shape != self.right.shape:
            raise ValueError("left and right must have equal length")
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedFormatError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}"
            )
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ValueError("samples must be finite")

    @property
    def n_samples(self) -> int:
        return self.left.size

    @property
    def peak(self) -> float:
        if self.n_samples == 0:
            return 0.0
        return float(max(np.max(np.abs(self.left)), np.max(np.abs(self.right))))


@dataclass
class FourChannels:
    """Left, right, mid (L+R)/2 and side (L-R)/2 sample sequences."""

    l: np.ndarray
    r: np.ndarray
    m: np.ndarray
    s: np.ndarray


def derive_channels(sig: StereoSignal) -> FourChannels:
    l, r = sig.left, sig.right
    return FourChannels(l=l, r=r, m=(l + r) * 0.5, s=(l - r) * 0.5)


def pad_to_length(sig: StereoSignal, target: int) -> StereoSignal:
    """Center the excerpt in zeros; an odd remainder pads the trailing side."""
    n = sig.n_samples
    if target < n:
        raise TargetTooSmallError(f"target {target} < current length {n}")
    lead = (target - n) // 2
    tail = target - n - lead
    pad = ((lead, tail),)
    return StereoSignal(np.pad(sig.left, pad), np.pad(sig.right, pad), sig.sample_rate)


def swap_channels(sig: StereoSignal) -> StereoSignal:
    return StereoSignal(sig.right.copy(), sig.left.copy(), sig.sample_rate)


@dataclass(frozen=True)
class GammatoneConfig:
    """Filterbank and framing parameters for the spectrogram front end.

    Defaults: 32 ERB-spaced 4th-order bands between 50 Hz and 20 kHz,
    21.3 ms frames with 50% hop, power-law compression 0.3 applied to the
    frame-averaged envelope magnitude.
    """

    n_bands: int = 32
    f_min: float = 50.0
    f_max: float = 20000.0
    filter_order: int = 4
    frame_len: int = 1024
    frame_hop: int = 512
    compression_exponent: float = 0.3

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max <= SAMPLE_RATE / 2:
            raise ValueError("need 0 < f_min < f_max <= sample_rate/2")
        if self.n_bands < 4:
            raise ValueError("need at least 4 bands")
        if self.filter_order < 1:
            raise ValueError("filter order must be >= 1")
        if not 0 < self.frame_hop <= self.frame_len:
            raise ValueError("need 0 < frame_hop <= frame_len")
        if self.compression_exponent <= 0:
            raise ValueError("compression exponent must be positive")

    def to_dict(self) -> dict:
        return {
            "n_bands": self.n_bands,
            "f_min": self.f_min,
            "f_max": self.f_max,
            "filter_order": self.filter_order,
            "frame_len": self.frame_len,
            "frame_hop": self.frame_hop,
            "compression_exponent": self.compression_exponent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GammatoneConfig":
        return cls(**d)

    def cache_token(self) -> str:
        return canonical_json(self.to_dict())


def erb_bandwidth(f_hz):
    """Glasberg-Moore equivalent rectangular bandwidth at f_hz."""
    return 24.7 * (1.0 + 0.00437 * np.asarray(f_hz, dtype=np.float64))


def erb_rate(f_hz):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f_hz, dtype=np.float64))


def erb_rate_inverse(e):
    return (np.power(10.0, np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def center_frequencies(cfg: GammatoneConfig) -> np.ndarray:
    """n_bands center frequencies uniformly spaced on the ERB-rate scale."""
    rates = np.linspace(erb_rate(cfg.f_min), erb_rate(cfg.f_max), cfg.n_bands)
    return erb_rate_inverse(rates)


def _bandwidth_factor(order: int) -> float:
    # Makes the filter's equivalent rectangular bandwidth equal the auditory
    # ERB for the given gammatone order (1.019 for the usual order 4).
    n = order
    a_n = math.pi * math.factorial(2 * n - 2) * 2.0 ** (-(2 * n - 2)) / math.factorial(n - 1) ** 2
    return 1.0 / a_n


def _band_poles(cfg: GammatoneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Complex one-pole parameters (pole, per-stage gain) per band.

    Each band is `filter_order` cascaded complex resonators; per-stage gains
    normalize the response at the band center frequency to exactly 1.
    """
    cf = center_frequencies(cfg)
    b = erb_bandwidth(cf) * _bandwidth_factor(cfg.filter_order)
    dt = 1.0 / SAMPLE_RATE
    poles = np.exp(-2.0 * math.pi * b * dt) * np.exp(2j * math.pi * cf * dt)
    omega = 2.0 * math.pi * cf * dt
    gains = np.abs(1.0 - poles * np.exp(-1j * omega))
    return poles, gains


def band_response(cfg: GammatoneConfig, freq_hz: float) -> np.ndarray:
    """Magnitude response of every band at one frequency (analytic form)."""
    poles, gains = _band_poles(cfg)
    w = 2.0 * math.pi * freq_hz / SAMPLE_RATE
    stage = gains / np.abs(1.0 - poles * np.exp(-1j * w))
    return stage**cfg.filter_order


def _frame_starts(n_samples: int, cfg: GammatoneConfig) -> np.ndarray:
    n_frames = 1 + (n_samples - cfg.frame_len) // cfg.frame_hop
    return np.arange(n_frames) * cfg.frame_hop


def gammatone_spectrogram_multi(signals: np.ndarray, cfg: GammatoneConfig) -> np.ndarray:
    """Spectrograms for a (C, n) stack of signals in one pass -> (C, bands, frames).

    Row results are identical to filtering each signal on its own; stacking
    only batches the per-band IIR runs.
    """
    x = np.asarray(signals, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1]
    if n < cfg.frame_len:
        raise InputTooShortError(
            f"signal length {n} below frame length {cfg.frame_len}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("signal must be finite")
    poles, gains = _band_poles(cfg)
    starts = _frame_starts(n, cfg)
    out = np.empty((x.shape[0], cfg.n_bands, starts.size), dtype=np.float64)
    for bi in range(cfg.n_bands):
        num = np.array([gains[bi]], dtype=np.complex128)
        den = np.array([1.0, -poles[bi]], dtype=np.complex128)
        y = x.astype(np.complex128)
        for _ in range(cfg.filter_order):
            y = scipy.signal.lfilter(num, den, y, axis=1)
        env = np.abs(y)
        csum = np.concatenate(
            [np.zeros((env.shape[0], 1)), np.cumsum(env, axis=1)], axis=1
        )
        frame_mean = (csum[:, starts + cfg.frame_len] - csum[:, starts]) / cfg.frame_len
        out[:, bi, :] = frame_mean
    return out**cfg.compression_exponent


def gammatone_spectrogram(x: np.ndarray, cfg: GammatoneConfig) -> np.ndarray:
    """Compressed Gammatone envelope spectrogram of one signal -> (bands, frames)."""
    return gammatone_spectrogram_multi(np.asarray(x)[None, :], cfg)[0]


@dataclass
class ModelInput:
    """Stack of 8 spectrogram planes for one reference/coded pair."""

    planes: np.ndarray
    excerpt_id: str = ""

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != N_PLANES:
            raise ValueError(f"planes must be ({N_PLANES}, bands, frames)")
        if not np.all(np.isfinite(self.planes)) or np.any(self.planes < 0):
            raise ValueError("plane entries must be finite and nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1], self.planes.shape[2]


def channel_planes(sig: StereoSignal, cfg: GammatoneConfig) -> np.ndarray:
    """Spectrograms of the L, R, M, S channels of one signal -> (4, bands, frames)."""
    ch = derive_channels(sig)
    return gammatone_spectrogram_multi(np.stack([ch.l, ch.r, ch.m, ch.s]), cfg)


def build_input(
    ref: StereoSignal, cod: StereoSignal, cfg: GammatoneConfig, excerpt_id: str = ""
) -> ModelInput:
    """8-plane spectrogram tensor for a length-aligned reference/coded pair."""
    if ref.n_samples != cod.n_samples:
        raise LengthMismatchError(
            f"reference has {ref.n_samples} samples, coded has {cod.n_samples}"
        )
    planes = np.concatenate([channel_planes(ref, cfg), channel_planes(cod, cfg)])
    return ModelInput(planes=planes, excerpt_id=excerpt_id)


def swapped_input(mi: ModelInput, excerpt_id: str | None = None) -> ModelInput:
    """ModelInput for the channel-swapped pair, derived by plane permutation.

    Swapping L and R exchanges the L/R planes, keeps M, and negates S;
    the magnitude front end makes the S planes bit-identical, so the
    permuted planes equal a full recompute on swapped audio.
    """
    planes = mi.planes[list(SWAP_PLANE_ORDER)].copy()
    return ModelInput(planes=planes, excerpt_id=mi.excerpt_id if excerpt_id is None else excerpt_id)


# ---------------------------------------------------------------------------
# WAV input/output (RIFF PCM, 2 channels, 48 kHz, 16 or 24 bit)
# ---------------------------------------------------------------------------


def load_audio(path) -> StereoSignal:
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            rate = wf.getframerate()
            width = wf.getsampwidth()
            comp = wf.getcomptype()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc
    if comp != "NONE":
        raise UnsupportedFormatError(f"{path}: compressed WAV not supported")
    if n_channels != 2:
        raise UnsupportedFormatError(f"{path}: need 2 channels, got {n_channels}")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError(f"{path}: need {SAMPLE_RATE} Hz, got {rate}")
    if width == 2:
        ints = np.frombuffer(raw, dtype="<i2").astype(np.float64)
        samples = ints / 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        ints = (
            b[:, 0].astype(np.int32)
            | (b[:, 1].astype(np.int32) << 8)
            | (b[:, 2].astype(np.int32) << 16)
        )
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints.astype(np.float64) / float(1 << 23)
    else:
        raise UnsupportedFormatError(f"{path}: need 16/24-bit PCM, got {8 * width}-bit")
    samples = samples.reshape(-1, 2)
    return StereoSignal(samples[:, 0], samples[:, 1])


def save_audio(path, sig: StereoSignal, bits: int = 16) -> None:
    """Write a stereo PCM WAV; float samples are scaled and clipped."""
    if bits == 16:
        full = 32768.0
        lo, hi = -32768, 32767
        ints = np.clip(np.round(np.stack([sig.left, sig.right], axis=1) * full), lo, hi)
        payload = ints.astype("<i2").tobytes()
        width = 2
    elif bits == 24:
        full = float(1 << 23)
        lo, hi = -(1 << 23), (1 << 23) - 1
        ints = np.clip(
            np.round(np.stack([sig.left, sig.right], axis=1) * full), lo, hi
        ).astype(np.int64)
        ints = np.where(ints < 0, ints + (1 << 24), ints).astype(np.uint32)
        flat = ints.reshape(-1)
        payload = np.stack(
            [flat & 0xFF, (flat >> 8) & 0xFF, (flat >> 16) & 0xFF], axis=1
        ).astype(np.uint8).tobytes()
        width = 3
    else:
        raise UnsupportedFormatError(f"can only write 16/24-bit PCM, got {bits}")
    import io

    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(width)
        wf.setframerate(sig.sample_rate)
        wf.writeframes(payload)
    atomic_write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# Spectrogram cache files
# ---------------------------------------------------------------------------


def write_cache(path, mi: ModelInput) -> None:
    """GMLSPEC1 container: header + 8 planes as little-endian float32."""
    n_bands, n_frames = mi.shape
    ident = mi.excerpt_id.encode("utf-8")
    header = CACHE_MAGIC + struct.pack(
        "<IIII", n_bands, n_frames, N_PLANES, len(ident)
    )
    body = mi.planes.astype("<f4").tobytes()
    atomic_write_bytes(path, header + ident + body)


def read_cache(path) -> ModelInput:
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc
    if data[:8] != CACHE_MAGIC:
        raise IoFailureError(f"{path}: bad magic, not a spectrogram cache")
    n_bands, n_frames, n_planes, id_len = struct.unpack_from("<IIII", data, 8)
    if n_planes != N_PLANES:
        raise IoFailureError(f"{path}: expected {N_PLANES} planes, got {n_planes}")
    off = 24
    ident = data[off : off + id_len].decode("utf-8")
    off += id_len
    expect = n_planes * n_bands * n_frames * 4
    if len(data) - off != expect:
        raise IoFailureError(f"{path}: truncated plane payload")
    planes = np.frombuffer(data, dtype="<f4", count=n_planes * n_bands * n_frames, offset=off)
    planes = planes.reshape(n_planes, n_bands, n_frames).astype(np.float64)
    return ModelInput(planes=planes, excerpt_id=ident)


def content_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cache_key(cfg: GammatoneConfig, ref_path, cod_path) -> str:
    """Cache key tying a spectrogram file to config + audio content."""
    h = hashlib.sha256()
    h.update(cfg.cache_token().encode("utf-8"))
    h.update(content_digest(ref_path).encode("ascii"))
    h.update(content_digest(cod_path).encode("ascii"))
    return h.hexdigest()[:16]
