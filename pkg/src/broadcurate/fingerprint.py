"""Robust 32-bit audio hashes for copy detection.

Each code summarizes one 1 s analysis window (hop 0.25 s). Bit ``m`` is the sign
of the time-frequency derivative of band energies between adjacent log-spaced
bands ``m``/``m+1`` and adjacent frames ``i``/``i+1``, so a code depends only on
samples in ``[i*hop, i*hop + window + hop]`` and is unchanged by a gain factor.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .audio_io import CANONICAL_RATE, AudioBuffer

WINDOW_S = 1.0
HOP_S = 0.25
N_BANDS = 33
BAND_LO_HZ = 300.0
BAND_HI_HZ = 3000.0
DEFAULT_TOL = 4

_MAGIC = b"FPT1"
_FRAMES_PER_BLOCK = 128


class TooShort(ValueError):
    pass


class FpCode(NamedTuple):
    bits: int
    frame_index: int


@dataclass
class FingerprintTrack:
    codes: np.ndarray
    source_id: str = ""
    hop_s: float = HOP_S
    window_s: float = WINDOW_S
    frame_offset: int = field(default=0, repr=False)
    # codes of the same audio started k*hop/P later (k = 1..P-1); query side only
    phase_codes: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint32)
        self.phase_codes = [np.ascontiguousarray(c, dtype=np.uint32) for c in self.phase_codes]

    @property
    def n_phases(self) -> int:
        return 1 + len(self.phase_codes)

    def phase(self, k: int) -> np.ndarray:
        return self.codes if k == 0 else self.phase_codes[k - 1]

    def __len__(self):
        return len(self.codes)

    @property
    def frame_indices(self) -> np.ndarray:
        return np.arange(len(self.codes)) + self.frame_offset

    @property
    def duration_s(self) -> float:
        """Audio span covered by the codes (exact for tracks cut on the hop grid)."""
        if len(self.codes) == 0:
            return 0.0
        return (len(self.codes) - 1) * self.hop_s + self.window_s

    def code(self, i: int) -> FpCode:
        return FpCode(int(self.codes[i]), i + self.frame_offset)

    def excerpt(self, start: int, stop: int, source_id: str | None = None) -> "FingerprintTrack":
        return FingerprintTrack(self.codes[start:stop], source_id or self.source_id,
                                self.hop_s, self.window_s)


def _band_edges(n_fft: int, sample_rate: int) -> np.ndarray:
    edges_hz = np.geomspace(BAND_LO_HZ, BAND_HI_HZ, N_BANDS + 1)
    return np.round(edges_hz * n_fft / sample_rate).astype(int)


def band_energies(x: np.ndarray, n_frames: int, win: int, hop: int, sample_rate: int) -> np.ndarray:
    """(n_frames, N_BANDS) energies of Hann-windowed frames starting at ``k*hop``."""
    need = (n_frames - 1) * hop + win
    if len(x) < need:
        x = np.concatenate([x, np.zeros(need - len(x))])
    window = np.hanning(win)
    edges = _band_edges(win, sample_rate)
    lo, hi = edges[0], edges[-1]
    frames_view = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    out = np.empty((n_frames, N_BANDS))
    for a in range(0, n_frames, _FRAMES_PER_BLOCK):
        b = min(a + _FRAMES_PER_BLOCK, n_frames)
        spec = np.fft.rfft(frames_view[a:b] * window, axis=1)[:, lo:hi]
        power = spec.real ** 2 + spec.imag ** 2
        csum = np.concatenate([np.zeros((b - a, 1)), np.cumsum(power, axis=1)], axis=1)
        out[a:b] = csum[:, edges[1:] - lo] - csum[:, edges[:-1] - lo]
    return out


def n_codes_for(n_samples: int, sample_rate: int = CANONICAL_RATE,
                window_s: float = WINDOW_S, hop_s: float = HOP_S) -> int:
    win = int(round(window_s * sample_rate))
    hop = int(round(hop_s * sample_rate))
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def extract(buf: AudioBuffer, source_id: str = "", phases: int = 1) -> FingerprintTrack:
    """One code per hop. ``phases > 1`` adds tracks started at sub-hop offsets,
    which lets a query match copies that are not aligned to the hop grid."""
    if phases < 1:
        raise ValueError("phases must be >= 1")
    codes = _extract_codes(buf, source_id)
    hop = int(round(HOP_S * buf.sample_rate))
    extra = []
    for k in range(1, phases):
        shifted = AudioBuffer(buf.samples[k * hop // phases:], buf.sample_rate)
        if n_codes_for(len(shifted.samples), buf.sample_rate) > 0:
            extra.append(_extract_codes(shifted, source_id))
    return FingerprintTrack(codes, source_id, phase_codes=extra)


def _extract_codes(buf: AudioBuffer, source_id: str) -> np.ndarray:
    if buf.sample_rate != CANONICAL_RATE:
        raise ValueError(f"fingerprints require {CANONICAL_RATE} Hz input, got {buf.sample_rate}")
    win = int(round(WINDOW_S * buf.sample_rate))
    hop = int(round(HOP_S * buf.sample_rate))
    n = n_codes_for(len(buf.samples), buf.sample_rate)
    if n == 0:
        raise TooShort(f"{source_id or 'buffer'}: {buf.duration_seconds:.3f}s shorter than {WINDOW_S}s window")

    energy = band_energies(buf.samples, n + 1, win, hop, buf.sample_rate)
    across_bands = energy[:, :-1] - energy[:, 1:]
    derivative = across_bands[:-1] - across_bands[1:]
    bits = derivative > 0
    weights = np.left_shift(np.uint64(1), np.arange(N_BANDS - 1, dtype=np.uint64))
    return (bits.astype(np.uint64) * weights).sum(axis=1).astype(np.uint32)


def hamming(a, b) -> int:
    a = getattr(a, "bits", a)
    b = getattr(b, "bits", b)
    return int(np.bitwise_count(np.uint32(a) ^ np.uint32(b)))


def hamming_array(a: np.ndarray, b) -> np.ndarray:
    return np.bitwise_count(np.asarray(a, dtype=np.uint32) ^ np.asarray(b, dtype=np.uint32))


def similar(a, b, tol: int = DEFAULT_TOL) -> bool:
    if not 0 <= tol <= 32:
        raise ValueError(f"tol must lie in [0, 32], got {tol}")
    return hamming(a, b) <= tol


# --- FPT1 files --------------------------------------------------------------

def write_track(track: FingerprintTrack, path) -> None:
    sid = track.source_id.encode("utf-8")
    header = _MAGIC + struct.pack("<dd", track.hop_s, track.window_s)
    header += struct.pack("<I", len(sid)) + sid + struct.pack("<Q", len(track.codes))
    Path(path).write_bytes(header + track.codes.astype("<u4").tobytes())


def write_track_dir(track: FingerprintTrack, directory, stem: str | None = None) -> list[Path]:
    """Write ``<stem>.fpt`` plus one ``<stem>.phase<k>.fpt`` per extra phase."""
    directory = Path(directory)
    stem = stem or track.source_id
    paths = [directory / f"{stem}.fpt"]
    write_track(FingerprintTrack(track.codes, track.source_id, track.hop_s, track.window_s), paths[0])
    for k, codes in enumerate(track.phase_codes, start=1):
        paths.append(directory / f"{stem}.phase{k}.fpt")
        write_track(FingerprintTrack(codes, track.source_id, track.hop_s, track.window_s), paths[-1])
    return paths


def read_track_dir(directory) -> dict[str, FingerprintTrack]:
    """Load every track in a directory, re-attaching phase files to their base track."""
    directory = Path(directory)
    tracks = {}
    phase_files = {}
    for path in sorted(directory.glob("*.fpt")):
        parts = path.name[:-4].rsplit(".phase", 1)
        if len(parts) == 2 and parts[1].isdigit():
            phase_files.setdefault(parts[0], []).append((int(parts[1]), path))
        else:
            track = read_track(path)
            tracks[track.source_id] = (path.name[:-4], track)
    out = {}
    for sid, (stem, track) in tracks.items():
        for _, path in sorted(phase_files.get(stem, [])):
            track.phase_codes.append(read_track(path).codes)
        out[sid] = track
    return out


def read_track(path) -> FingerprintTrack:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    hop_s, window_s = struct.unpack_from("<dd", data, 4)
    (sid_len,) = struct.unpack_from("<I", data, 20)
    pos = 24 + sid_len
    sid = data[24:pos].decode("utf-8")
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) - pos != 4 * count:
        raise ValueError(f"{path}: expected {count} codes, payload holds {(len(data) - pos) / 4}")
    codes = np.frombuffer(data, dtype="<u4", offset=pos, count=count)
    return FingerprintTrack(codes.astype(np.uint32), sid, hop_s, window_s)
