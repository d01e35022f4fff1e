"""Frontend: WAV ingest, channel math, padding, Gammatone planes, cache."""

import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gml import frontend as fe
from gml.errors import (
    InputTooShortError,
    IoFailureError,
    LengthMismatchError,
    TargetTooSmallError,
    UnsupportedFormatError,
)


def _sig(left, right):
    return fe.StereoSignal(np.asarray(left, float), np.asarray(right, float))


def _small_cfg(**kw):
    base = dict(n_bands=16, f_min=100.0, f_max=12000.0, frame_len=512, frame_hop=256)
    base.update(kw)
    return fe.GammatoneConfig(**base)


# ---------------------------------------------------------------------------
# WAV input/output
# ---------------------------------------------------------------------------


def test_load_audio_silence(tmp_path):
    p = tmp_path / "silence.wav"
    fe.save_audio(p, _sig(np.zeros(48000), np.zeros(48000)))
    sig = fe.load_audio(p)
    assert sig.n_samples == 48000
    assert not sig.left.any() and not sig.right.any()
    assert sig.peak == 0.0


def test_load_audio_rejects_mono(tmp_path):
    p = tmp_path / "mono.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(48000)
        wf.writeframes(b"\x00\x00" * 100)
    with pytest.raises(UnsupportedFormatError):
        fe.load_audio(p)


def test_load_audio_rejects_wrong_rate(tmp_path):
    p = tmp_path / "rate.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(44100)
        wf.writeframes(b"\x00\x00\x00\x00" * 10)
    with pytest.raises(UnsupportedFormatError):
        fe.load_audio(p)


def test_load_audio_rejects_garbage(tmp_path):
    p = tmp_path / "noise.bin"
    p.write_bytes(b"definitely not RIFF")
    with pytest.raises(UnsupportedFormatError):
        fe.load_audio(p)


def test_load_audio_fullscale_square_wave(tmp_path):
    # PCM scaling oracle: int16 / 32768 maps full scale to -1.0 and 32767/32768
    p = tmp_path / "square.wav"
    n = 64
    ints = np.empty(2 * n, dtype="<i2")
    ints[0::2] = np.where(np.arange(n) % 2 == 0, 32767, -32768)
    ints[1::2] = ints[0::2]
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(48000)
        wf.writeframes(ints.tobytes())
    sig = fe.load_audio(p)
    assert set(np.unique(sig.left)) == {-1.0, 32767 / 32768}


def test_24bit_round_trip(tmp_path):
    # known integers survive the 1/2^23 scaling exactly
    p = tmp_path / "deep.wav"
    ints = np.array([0, 1, -1, 1 << 22, -(1 << 22), (1 << 23) - 1, -(1 << 23)])
    samples = ints / float(1 << 23)
    fe.save_audio(p, _sig(samples, -samples / 2), bits=24)
    sig = fe.load_audio(p)
    np.testing.assert_array_equal(sig.left, samples)


def test_16bit_round_trip_integers(tmp_path):
    p = tmp_path / "rt.wav"
    rng = np.random.default_rng(0)
    ints = rng.integers(-32768, 32768, size=500)
    samples = ints / 32768.0
    fe.save_audio(p, _sig(samples, samples[::-1]))
    sig = fe.load_audio(p)
    np.testing.assert_array_equal(sig.left, samples)
    np.testing.assert_array_equal(sig.right, samples[::-1])


def test_stereo_signal_validation():
    with pytest.raises(ValueError):
        fe.StereoSignal(np.zeros(5), np.zeros(6))
    with pytest.raises(UnsupportedFormatError):
        fe.StereoSignal(np.zeros(5), np.zeros(5), sample_rate=44100)
    with pytest.raises(ValueError):
        fe.StereoSignal(np.array([np.nan, 0.0]), np.zeros(2))


# ---------------------------------------------------------------------------
# Channel derivation, padding, swapping
# ---------------------------------------------------------------------------


def test_derive_channels_identical():
    c = np.full(16, 0.25)
    ch = fe.derive_channels(_sig(c, c))
    np.testing.assert_array_equal(ch.m, c)
    assert not ch.s.any()


def test_derive_channels_antiphase():
    l = np.linspace(-0.5, 0.5, 32)
    ch = fe.derive_channels(_sig(l, -l))
    assert not ch.m.any()
    np.testing.assert_array_equal(ch.s, l)


def test_derive_channels_reconstruction():
    rng = np.random.default_rng(4)
    l, r = rng.uniform(-1, 1, (2, 4096))
    ch = fe.derive_channels(_sig(l, r))
    peak = max(np.abs(l).max(), np.abs(r).max())
    assert np.max(np.abs(l - (ch.m + ch.s))) <= peak * 2**-20
    assert np.max(np.abs(r - (ch.m - ch.s))) <= peak * 2**-20


def test_pad_identity():
    sig = _sig(np.arange(10) / 10.0, np.arange(10) / 20.0)
    out = fe.pad_to_length(sig, 10)
    np.testing.assert_array_equal(out.left, sig.left)


def test_pad_even_split():
    sig = _sig(np.ones(8) * 0.5, np.ones(8) * 0.5)
    out = fe.pad_to_length(sig, 12)
    assert not out.left[:2].any() and not out.left[-2:].any()
    np.testing.assert_array_equal(out.left[2:10], sig.left)


def test_pad_odd_split_floor_rule():
    # index-bookkeeping oracle: lead = floor((target - n) / 2), tail gets the rest
    n, target = 7, 12
    lead = (target - n) // 2
    tail = target - n - lead
    assert (lead, tail) == (2, 3)
    sig = _sig(np.arange(1, n + 1) / 10.0, np.zeros(n))
    out = fe.pad_to_length(sig, target)
    assert not out.left[:lead].any()
    assert not out.left[n + lead :].any()
    np.testing.assert_array_equal(out.left[lead : lead + n], sig.left)


def test_pad_target_too_small():
    with pytest.raises(TargetTooSmallError):
        fe.pad_to_length(_sig(np.zeros(5), np.zeros(5)), 4)


@given(n=st.integers(2, 40), extra=st.integers(0, 30))
@settings(max_examples=40)
def test_pad_preserves_nonzero_samples(n, extra):
    rng = np.random.default_rng(n * 100 + extra)
    left = rng.uniform(0.1, 1.0, n)
    sig = _sig(left, left)
    out = fe.pad_to_length(sig, n + extra)
    kept = out.left[out.left != 0]
    np.testing.assert_array_equal(kept, left)


def test_swap_involution_and_symmetry():
    rng = np.random.default_rng(8)
    sig = _sig(*rng.uniform(-1, 1, (2, 64)))
    double = fe.swap_channels(fe.swap_channels(sig))
    np.testing.assert_array_equal(double.left, sig.left)
    sym = _sig(sig.left, sig.left)
    out = fe.swap_channels(sym)
    np.testing.assert_array_equal(out.left, sym.left)
    np.testing.assert_array_equal(out.right, sym.right)


def test_swap_negates_side_keeps_mid():
    rng = np.random.default_rng(9)
    sig = _sig(*rng.uniform(-1, 1, (2, 64)))
    ch = fe.derive_channels(sig)
    ch_sw = fe.derive_channels(fe.swap_channels(sig))
    np.testing.assert_array_equal(ch_sw.m, ch.m)
    np.testing.assert_array_equal(ch_sw.s, -ch.s)


# ---------------------------------------------------------------------------
# Gammatone spectrograms
# ---------------------------------------------------------------------------


def test_gammatone_config_validation():
    with pytest.raises(ValueError):
        fe.GammatoneConfig(f_min=0.0)
    with pytest.raises(ValueError):
        fe.GammatoneConfig(f_max=30000.0)
    with pytest.raises(ValueError):
        fe.GammatoneConfig(n_bands=3)
    with pytest.raises(ValueError):
        fe.GammatoneConfig(frame_hop=2048)


def test_center_frequencies_monotone():
    cfg = fe.GammatoneConfig()
    cf = fe.center_frequencies(cfg)
    assert cf.size == cfg.n_bands
    assert np.all(np.diff(cf) > 0)
    assert cf[0] == pytest.approx(cfg.f_min, rel=1e-9)
    assert cf[-1] == pytest.approx(cfg.f_max, rel=1e-9)


def test_gammatone_zero_input():
    cfg = _small_cfg()
    spec = fe.gammatone_spectrogram(np.zeros(4096), cfg)
    assert spec.shape == (16, 1 + (4096 - 512) // 256)
    assert not spec.any()


def test_gammatone_too_short():
    with pytest.raises(InputTooShortError):
        fe.gammatone_spectrogram(np.zeros(100), _small_cfg())


def test_gammatone_linearity_scaling():
    # doubling the input doubles every pre-compression cell exactly
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.5, 0.5, 4096)
    cfg = _small_cfg(compression_exponent=1.0)
    a = fe.gammatone_spectrogram(x, cfg)
    b = fe.gammatone_spectrogram(2.0 * x, cfg)
    np.testing.assert_array_equal(b, 2.0 * a)
    # and with compression c the factor becomes 2^c
    cfg_c = _small_cfg(compression_exponent=0.3)
    ac = fe.gammatone_spectrogram(x, cfg_c)
    bc = fe.gammatone_spectrogram(2.0 * x, cfg_c)
    np.testing.assert_allclose(bc, 2.0**0.3 * ac, rtol=1e-12)


def test_gammatone_sign_invariance():
    rng = np.random.default_rng(6)
    x = rng.uniform(-0.5, 0.5, 4096)
    cfg = _small_cfg()
    np.testing.assert_array_equal(
        fe.gammatone_spectrogram(-x, cfg), fe.gammatone_spectrogram(x, cfg)
    )


def test_gammatone_deterministic():
    rng = np.random.default_rng(7)
    x = rng.uniform(-0.5, 0.5, 4096)
    cfg = _small_cfg()
    np.testing.assert_array_equal(
        fe.gammatone_spectrogram(x, cfg), fe.gammatone_spectrogram(x, cfg)
    )


@pytest.mark.parametrize("band", [3, 7, 12])
def test_tone_at_band_center_dominates(band):
    # filterbank frequency-response oracle: the band with the largest
    # analytic response at the tone frequency must hold the column max
    cfg = _small_cfg()
    f = fe.center_frequencies(cfg)[band]
    oracle_band = int(np.argmax(fe.band_response(cfg, f)))
    assert oracle_band == band
    t = np.arange(9600) / fe.SAMPLE_RATE
    tone = 0.5 * np.sin(2 * np.pi * f * t)
    spec = fe.gammatone_spectrogram(tone, cfg)
    interior = spec[:, 1:-1]
    assert np.all(np.argmax(interior, axis=0) == oracle_band)


def test_multi_matches_single():
    rng = np.random.default_rng(10)
    stack = rng.uniform(-0.5, 0.5, (3, 4096))
    cfg = _small_cfg()
    multi = fe.gammatone_spectrogram_multi(stack, cfg)
    for i in range(3):
        np.testing.assert_array_equal(multi[i], fe.gammatone_spectrogram(stack[i], cfg))


# ---------------------------------------------------------------------------
# Model input assembly
# ---------------------------------------------------------------------------


def _random_pair(seed, n=4096):
    rng = np.random.default_rng(seed)
    ref = _sig(*rng.uniform(-0.5, 0.5, (2, n)))
    cod = _sig(*rng.uniform(-0.5, 0.5, (2, n)))
    return ref, cod


def test_build_input_identical_pair():
    ref, _ = _random_pair(1)
    mi = fe.build_input(ref, ref, _small_cfg(), excerpt_id="x")
    np.testing.assert_array_equal(mi.planes[:4], mi.planes[4:])
    assert mi.excerpt_id == "x"


def test_build_input_length_mismatch():
    ref, _ = _random_pair(2)
    cod = _sig(np.zeros(2048), np.zeros(2048))
    with pytest.raises(LengthMismatchError):
        fe.build_input(ref, cod, _small_cfg())


def test_build_input_mono_fold_zero_side():
    rng = np.random.default_rng(3)
    mono = rng.uniform(-0.5, 0.5, 4096)
    ref = _sig(mono, mono)
    mi = fe.build_input(ref, ref, _small_cfg())
    assert not mi.planes[3].any()  # ref-S
    assert not mi.planes[7].any()  # cod-S


def test_build_input_joint_swap_permutes_planes():
    ref, cod = _random_pair(4)
    cfg = _small_cfg()
    mi = fe.build_input(ref, cod, cfg)
    mi_sw = fe.build_input(fe.swap_channels(ref), fe.swap_channels(cod), cfg)
    np.testing.assert_array_equal(mi_sw.planes, mi.planes[list(fe.SWAP_PLANE_ORDER)])
    # the derived twin equals the full recompute, cell-exact
    np.testing.assert_array_equal(fe.swapped_input(mi).planes, mi_sw.planes)


def test_model_input_validation():
    with pytest.raises(ValueError):
        fe.ModelInput(planes=np.zeros((4, 3, 3)))
    with pytest.raises(ValueError):
        fe.ModelInput(planes=np.full((8, 3, 3), -1.0))


# ---------------------------------------------------------------------------
# Spectrogram cache files
# ---------------------------------------------------------------------------


def test_cache_round_trip(tmp_path):
    ref, cod = _random_pair(5)
    mi = fe.build_input(ref, cod, _small_cfg(), excerpt_id="e01:c_lp35")
    p = tmp_path / "x.gts"
    fe.write_cache(p, mi)
    back = fe.read_cache(p)
    assert back.excerpt_id == "e01:c_lp35"
    np.testing.assert_array_equal(back.planes, mi.planes.astype("<f4").astype(np.float64))
    # header fields
    raw = p.read_bytes()
    assert raw[:8] == b"GMLSPEC1"
    n_bands, n_frames, n_planes, id_len = struct.unpack_from("<IIII", raw, 8)
    assert (n_bands, n_frames, n_planes) == (*mi.shape, 8)
    assert id_len == len(b"e01:c_lp35")


def test_cache_bad_magic(tmp_path):
    p = tmp_path / "bad.gts"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 40)
    with pytest.raises(IoFailureError):
        fe.read_cache(p)


def test_cache_key_sensitivity(tmp_path):
    ref, cod = _random_pair(6, n=2048)
    pa, pb = tmp_path / "a.wav", tmp_path / "b.wav"
    fe.save_audio(pa, ref)
    fe.save_audio(pb, cod)
    k1 = fe.cache_key(_small_cfg(), pa, pb)
    k2 = fe.cache_key(_small_cfg(n_bands=17), pa, pb)
    k3 = fe.cache_key(_small_cfg(), pb, pa)
    assert len({k1, k2, k3}) == 3
    # same inputs -> same key
    assert fe.cache_key(_small_cfg(), pa, pb) == k1
