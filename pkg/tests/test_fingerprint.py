import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from broadcurate import fingerprint as fp
from broadcurate.audio_io import AudioBuffer, lowpass
from broadcurate.synth import melody_track, noise_track, silence


@pytest.fixture(scope="module")
def minute():
    return melody_track(60.0, seed=11)


def test_sixty_seconds_give_237_codes(minute):
    assert len(fp.extract(minute)) == 237 == fp.n_codes_for(60 * 16000)


def test_gain_invariance(minute):
    half = AudioBuffer(minute.samples * 0.5, minute.sample_rate)
    assert np.array_equal(fp.extract(half).codes, fp.extract(minute).codes)


def test_deterministic(minute):
    assert np.array_equal(fp.extract(minute).codes, fp.extract(minute).codes)


def test_lowpass_copy_stays_close(minute):
    a = fp.extract(minute).codes
    b = fp.extract(lowpass(minute, 4000.0)).codes
    assert np.mean(fp.hamming_array(a, b) <= 6) >= 0.90


def test_locality():
    # code i depends only on samples before (i * hop + window + hop)
    buf = noise_track(12.0, seed=2)
    a = fp.extract(buf).codes
    tail = buf.samples.copy()
    cut = 8 * 16000
    tail[cut:] = np.random.default_rng(5).normal(size=len(tail) - cut) * 0.3
    b = fp.extract(AudioBuffer(tail)).codes
    n_safe = (cut - 16000 - 4000) // 4000 + 1
    assert np.array_equal(a[:n_safe], b[:n_safe])
    assert not np.array_equal(a, b)


def test_too_short():
    with pytest.raises(fp.TooShort):
        fp.extract(silence(0.9))


def test_requires_canonical_rate():
    with pytest.raises(ValueError):
        fp.extract(AudioBuffer(np.zeros(44100), 44100))


def test_phases_add_shifted_tracks(minute):
    t = fp.extract(minute, "x", phases=4)
    assert t.n_phases == 4
    shifted = AudioBuffer(minute.samples[2000:])
    assert np.array_equal(t.phase(2), fp.extract(shifted).codes)


# --- hamming / similar ---------------------------------------------------------

def test_hamming_examples():
    assert fp.hamming(0xDEADBEEF, 0xDEADBEEF) == 0
    assert fp.hamming(0x12345678, 0x12345678 ^ 0xFFFFFFFF) == 32
    assert fp.hamming(0b0011, 0b0101) == 2


def test_similar_threshold():
    a = 0
    assert not fp.similar(a, 0b1111111, tol=6)
    assert fp.similar(a, 0b111111, tol=6)
    with pytest.raises(ValueError):
        fp.similar(0, 0, tol=33)


u32 = st.integers(0, 2**32 - 1)


@given(u32, u32, u32)
def test_hamming_is_a_metric(a, b, c):
    assert fp.hamming(a, b) == fp.hamming(b, a)
    assert (fp.hamming(a, b) == 0) == (a == b)
    assert fp.hamming(a, c) <= fp.hamming(a, b) + fp.hamming(b, c)
    assert fp.hamming(a, b) == bin(a ^ b).count("1")


# --- files ---------------------------------------------------------------------

def test_track_file_round_trip(tmp_path):
    t = fp.FingerprintTrack(np.array([1, 2**32 - 1, 7], dtype=np.uint32), "émission_1")
    fp.write_track(t, tmp_path / "a.fpt")
    back = fp.read_track(tmp_path / "a.fpt")
    assert back.source_id == t.source_id and np.array_equal(back.codes, t.codes)
    assert (back.hop_s, back.window_s) == (0.25, 1.0)


def test_track_file_layout(tmp_path):
    fp.write_track(fp.FingerprintTrack(np.array([5], dtype=np.uint32), "ab"), tmp_path / "a.fpt")
    raw = (tmp_path / "a.fpt").read_bytes()
    assert raw[:4] == b"FPT1"
    assert struct.unpack_from("<ddI", raw, 4) == (0.25, 1.0, 2)
    assert raw[24:26] == b"ab" and struct.unpack_from("<QI", raw, 26) == (1, 5)
    assert len(raw) == 26 + 8 + 4


def test_track_file_rejects_bad_magic_and_truncation(tmp_path):
    fp.write_track(fp.FingerprintTrack(np.arange(4, dtype=np.uint32), "a"), tmp_path / "a.fpt")
    raw = (tmp_path / "a.fpt").read_bytes()
    (tmp_path / "b.fpt").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "c.fpt").write_bytes(raw[:-2])
    for name in ("b.fpt", "c.fpt"):
        with pytest.raises(ValueError):
            fp.read_track(tmp_path / name)


def test_track_dir_reattaches_phases(tmp_path, minute):
    t = fp.extract(minute, "src.phase", phases=3)  # id that itself looks like a phase suffix
    fp.write_track_dir(t, tmp_path, stem="s0")
    back = fp.read_track_dir(tmp_path)["src.phase"]
    assert back.n_phases == 3
    assert all(np.array_equal(back.phase(k), t.phase(k)) for k in range(3))
