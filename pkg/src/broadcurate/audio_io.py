"""Audio buffers, WAV decode/encode, resampling, filtering and test-signal synthesis.

Everything downstream assumes 16 kHz mono float samples in [-1, 1].
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

CANONICAL_RATE = 16000

_RESAMPLE_TAPS = 64
_KAISER_BETA = 8.6

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioError(Exception):
    pass


class MalformedHeader(AudioError):
    pass


class UnsupportedEncoding(AudioError):
    pass


class TruncatedPayload(AudioError):
    pass


class InvalidSpec(AudioError):
    pass


class InvalidCutoff(AudioError):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples only")
        object.__setattr__(self, "samples", x)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)

    def slice(self, start_s: float, end_s: float) -> "AudioBuffer":
        a = int(round(start_s * self.sample_rate))
        b = int(round(end_s * self.sample_rate))
        return AudioBuffer(self.samples[a:b], self.sample_rate)


def concat(buffers) -> AudioBuffer:
    buffers = list(buffers)
    rates = {b.sample_rate for b in buffers}
    if len(rates) != 1:
        raise ValueError(f"cannot concatenate buffers at rates {sorted(rates)}")
    return AudioBuffer(np.concatenate([b.samples for b in buffers]), rates.pop())


# --- WAV I/O ---------------------------------------------------------------

def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        ck_id = data[pos:pos + 4]
        (ck_size,) = struct.unpack_from("<I", data, pos + 4)
        yield ck_id, pos + 8, ck_size
        pos += 8 + ck_size + (ck_size & 1)


def decode_pcm(path) -> AudioBuffer:
    """Read a RIFF/WAVE file (16-bit PCM or 32-bit IEEE float) into a mono buffer.

    Channels are averaged. Raises MalformedHeader, UnsupportedEncoding or
    TruncatedPayload.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for ck_id, start, size in _iter_chunks(data):
        if ck_id == b"fmt ":
            if size < 16 or start + 16 > len(data):
                raise MalformedHeader(f"{path}: short fmt chunk")
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", data, start)
            if tag == _WAVE_FORMAT_EXTENSIBLE:
                if size < 40 or start + 40 > len(data):
                    raise MalformedHeader(f"{path}: short extensible fmt chunk")
                (tag,) = struct.unpack_from("<H", data, start + 24)
            fmt = (tag, channels, rate, block_align, bits)
        elif ck_id == b"data":
            if fmt is None:
                raise MalformedHeader(f"{path}: data chunk precedes fmt chunk")
            available = len(data) - start
            if size > available:
                raise TruncatedPayload(f"{path}: data chunk declares {size} bytes, {available} present")
            payload = data[start:start + size]
            break

    if fmt is None:
        raise MalformedHeader(f"{path}: missing fmt chunk")
    if payload is None:
        raise MalformedHeader(f"{path}: missing data chunk")
    tag, channels, rate, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise MalformedHeader(f"{path}: channels={channels} rate={rate}")

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"{path}: format tag {tag:#x} with {bits} bits")

    frame_bytes = dtype.itemsize * channels
    if len(payload) % frame_bytes:
        raise TruncatedPayload(f"{path}: payload is not a whole number of frames")
    x = np.frombuffer(payload, dtype=dtype).astype(np.float64) * scale
    x = x.reshape(-1, channels).mean(axis=1)
    return AudioBuffer(np.clip(x, -1.0, 1.0), rate)


def encode_pcm(buf: AudioBuffer, path, encoding: str = "pcm16", channels: int = 1) -> None:
    """Write a buffer as a WAV file; ``channels > 1`` duplicates the mono signal."""
    x = np.clip(buf.samples, -1.0, 1.0)
    if encoding == "pcm16":
        pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        pcm = x.astype("<f4")
        tag, bits = _WAVE_FORMAT_FLOAT, 32
    else:
        raise UnsupportedEncoding(encoding)
    pcm = np.repeat(pcm[:, None], channels, axis=1)
    payload = pcm.tobytes()
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, buf.sample_rate,
                      buf.sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# --- signal processing -----------------------------------------------------

def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Kaiser-windowed sinc interpolation with a fixed 64-tap kernel."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == buf.sample_rate:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate)

    x = buf.samples
    ratio = target_rate / buf.sample_rate
    n_out = int(round(len(x) * ratio))
    cutoff = min(1.0, ratio)
    half = _RESAMPLE_TAPS // 2
    rel = np.arange(-half + 1, half + 1)
    i0_beta = np.i0(_KAISER_BETA)
    out = np.empty(n_out)
    block = 32768
    for a in range(0, n_out, block):
        t = np.arange(a, min(a + block, n_out)) / ratio
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + rel[None, :]
        d = t[:, None] - idx
        taper = np.clip(1.0 - (d / half) ** 2, 0.0, None)
        w = np.i0(_KAISER_BETA * np.sqrt(taper)) / i0_beta
        h = cutoff * np.sinc(cutoff * d) * w
        valid = (idx >= 0) & (idx < len(x))
        vals = np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0)
        out[a:a + len(t)] = np.sum(vals * h, axis=1)
    return AudioBuffer(np.clip(out, -1.0, 1.0), target_rate)


def lowpass(buf: AudioBuffer, cutoff_hz: float, attenuation_db: float = 60.0) -> AudioBuffer:
    """Zero-phase Kaiser FIR lowpass; the stopband starts at ``cutoff_hz``."""
    nyq = buf.sample_rate / 2
    if not 0 < cutoff_hz < nyq:
        raise InvalidCutoff(f"cutoff {cutoff_hz} Hz outside (0, {nyq})")
    width = min(200.0, cutoff_hz / 2)
    numtaps, beta = sps.kaiserord(attenuation_db, width / nyq)
    numtaps |= 1  # odd length keeps the filter zero-phase under 'same' convolution
    h = sps.firwin(numtaps, cutoff_hz - width / 2, window=("kaiser", beta), fs=buf.sample_rate)
    y = sps.fftconvolve(buf.samples, h, mode="same")
    return AudioBuffer(np.clip(y, -1.0, 1.0), buf.sample_rate)


# --- synthesis -------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    kind: str
    duration_s: float
    freq_hz: float = 440.0
    seed: int = 0
    sample_rate: int = CANONICAL_RATE
    amplitude: float = 0.5


def synth_signal(spec: SynthSpec) -> AudioBuffer:
    if spec.duration_s <= 0:
        raise InvalidSpec("duration_s must be positive")
    if spec.kind not in ("tone", "white_noise", "tone_mix"):
        raise InvalidSpec(f"unknown kind {spec.kind!r}")
    if spec.kind != "white_noise" and not 0 < spec.freq_hz < spec.sample_rate / 2:
        raise InvalidSpec(f"freq {spec.freq_hz} Hz outside (0, Nyquist)")

    n = int(round(spec.duration_s * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    if spec.kind == "tone":
        x = spec.amplitude * np.sin(2 * np.pi * spec.freq_hz * t)
    elif spec.kind == "white_noise":
        rng = np.random.default_rng(spec.seed)
        x = np.clip(rng.normal(0.0, spec.amplitude / 2, n), -1.0, 1.0)
    else:
        rng = np.random.default_rng(spec.seed)
        x = np.zeros(n)
        for k, gain in enumerate((1.0, 0.5, 0.25), start=1):
            if k * spec.freq_hz >= spec.sample_rate / 2:
                break
            x += gain * np.sin(2 * np.pi * k * spec.freq_hz * t + rng.uniform(0, 2 * np.pi))
        x *= spec.amplitude / 1.75
    return AudioBuffer(x, spec.sample_rate)
