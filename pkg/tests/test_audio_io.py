import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from broadcurate import audio_io as A
from broadcurate.audio_io import AudioBuffer, SynthSpec


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def tone(freq, seconds=1.0, rate=16000):
    return A.synth_signal(SynthSpec("tone", seconds, freq, sample_rate=rate))


# --- WAV I/O -------------------------------------------------------------------

def test_decode_silence(tmp_path):
    A.encode_pcm(AudioBuffer(np.zeros(16000)), tmp_path / "s.wav")
    buf = A.decode_pcm(tmp_path / "s.wav")
    assert buf.sample_rate == 16000 and len(buf) == 16000 and not buf.samples.any()


def test_stereo_identical_channels_average_to_mono(tmp_path):
    b = tone(440)
    A.encode_pcm(b, tmp_path / "m.wav")
    A.encode_pcm(b, tmp_path / "s.wav", channels=2)
    assert np.array_equal(A.decode_pcm(tmp_path / "m.wav").samples, A.decode_pcm(tmp_path / "s.wav").samples)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["tone", "white_noise", "tone_mix"]), st.integers(0, 2**31 - 1),
       st.floats(50, 7000))
def test_pcm16_round_trip_within_one_lsb(tmp_path_factory, kind, seed, freq):
    b = A.synth_signal(SynthSpec(kind, 0.2, freq, seed=seed))
    path = tmp_path_factory.mktemp("rt") / "x.wav"
    A.encode_pcm(b, path)
    assert np.max(np.abs(A.decode_pcm(path).samples - b.samples)) <= 1 / 32768


def test_float32_round_trip(tmp_path):
    b = A.synth_signal(SynthSpec("tone_mix", 0.5, 300, seed=1))
    A.encode_pcm(b, tmp_path / "f.wav", encoding="float32")
    assert np.allclose(A.decode_pcm(tmp_path / "f.wav").samples, b.samples, atol=1e-7)


def test_malformed_header(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"RIFX" + b"\x00" * 40)
    with pytest.raises(A.MalformedHeader):
        A.decode_pcm(tmp_path / "x.wav")


def test_unsupported_encoding(tmp_path):
    A.encode_pcm(tone(440, 0.1), tmp_path / "x.wav")
    raw = bytearray((tmp_path / "x.wav").read_bytes())
    raw[20:22] = struct.pack("<H", 2)  # ADPCM tag
    (tmp_path / "y.wav").write_bytes(bytes(raw))
    with pytest.raises(A.UnsupportedEncoding):
        A.decode_pcm(tmp_path / "y.wav")


def test_truncated_payload(tmp_path):
    A.encode_pcm(tone(440, 0.1), tmp_path / "x.wav")
    raw = (tmp_path / "x.wav").read_bytes()
    (tmp_path / "y.wav").write_bytes(raw[:-101])
    with pytest.raises(A.TruncatedPayload):
        A.decode_pcm(tmp_path / "y.wav")


# --- resampling ----------------------------------------------------------------

def test_resample_identity_is_bitwise():
    b = tone(440)
    assert np.array_equal(A.resample(b, 16000).samples, b.samples)


def test_resample_keeps_tone_peak():
    out = A.resample(tone(440, 1.0, 32000), 16000)
    spec = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(len(out.samples), 1 / 16000)
    assert abs(freqs[np.argmax(spec)] - 440) <= freqs[1]


@pytest.mark.parametrize("src, dst", [(16000, 8000), (44100, 16000), (8000, 16000), (22050, 16000)])
def test_resample_preserves_duration(src, dst):
    out = A.resample(AudioBuffer(np.zeros(2 * src), src), dst)
    assert abs(len(out) - 2 * dst) <= 1


# --- synthesis -----------------------------------------------------------------

def test_tone_closed_form():
    k = np.arange(16000)
    assert np.allclose(tone(440).samples, 0.5 * np.sin(2 * np.pi * 440 * k / 16000))


def test_noise_mean_and_determinism():
    a = A.synth_signal(SynthSpec("white_noise", 1.0, seed=7))
    assert abs(a.samples.mean()) <= 0.02
    assert np.array_equal(a.samples, A.synth_signal(SynthSpec("white_noise", 1.0, seed=7)).samples)


@pytest.mark.parametrize("spec", [SynthSpec("tone", 0.0), SynthSpec("tone", 1.0, 9000.0), SynthSpec("chirp", 1.0)])
def test_invalid_spec(spec):
    with pytest.raises(A.InvalidSpec):
        A.synth_signal(spec)


def test_buffer_helpers():
    b = AudioBuffer(np.arange(32000) / 32000)
    assert b.duration_seconds == 2.0
    assert len(b.slice(0.5, 1.0)) == 8000
    assert len(A.concat([b, b])) == 64000


# --- lowpass -------------------------------------------------------------------

def test_lowpass_passes_440():
    b = tone(440)
    assert rms(A.lowpass(b, 4000).samples) == pytest.approx(rms(b.samples), rel=0.05)


def test_lowpass_attenuates_6k_by_40db():
    b = tone(6000)
    assert 20 * np.log10(rms(A.lowpass(b, 4000).samples) / rms(b.samples)) <= -40


@pytest.mark.parametrize("freq", [4100, 4500, 5000, 7000])
def test_lowpass_stopband_interior(freq):
    # onset/offset transients of a finite tone carry in-band energy; judge the steady state
    b = tone(freq, 2.0)
    out = A.lowpass(b, 4000).samples[4000:-4000]
    assert 20 * np.log10(rms(out) / rms(b.samples[4000:-4000])) <= -40


def test_lowpass_near_nyquist_is_transparent():
    b = A.synth_signal(SynthSpec("white_noise", 1.0, seed=3))
    out = A.lowpass(b, 7999)
    assert np.corrcoef(out.samples, b.samples)[0, 1] >= 0.99


@pytest.mark.parametrize("cutoff", [0, -5, 8000, 9000])
def test_lowpass_invalid_cutoff(cutoff):
    with pytest.raises(A.InvalidCutoff):
        A.lowpass(tone(440), cutoff)
