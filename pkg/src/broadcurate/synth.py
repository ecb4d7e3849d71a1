"""Deterministic synthetic material for desk-scale runs.

Nothing here resembles real broadcast audio; the signals only need distinct,
time-varying spectra so fingerprints and detectors have something to work on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import CANONICAL_RATE, AudioBuffer, SynthSpec, lowpass, synth_signal


def noise_track(duration_s: float, seed: int, level: float = 0.5) -> AudioBuffer:
    return synth_signal(SynthSpec("white_noise", duration_s, seed=seed, amplitude=level))


def melody_track(duration_s: float, seed: int, level: float = 0.5,
                 note_s=(0.15, 0.6), sample_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """Random harmonic notes over a faint noise bed (keeps silence out of the hash)."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    out = np.empty(0)
    while len(out) < n:
        dur = rng.uniform(*note_s)
        freq = 110.0 * 2 ** (rng.integers(0, 36) / 12)
        note = synth_signal(SynthSpec("tone_mix", dur, freq, seed=int(rng.integers(2**31)),
                                      sample_rate=sample_rate, amplitude=level)).samples
        fade = min(len(note) // 2, int(0.01 * sample_rate))
        if fade:
            ramp = np.linspace(0, 1, fade)
            note[:fade] *= ramp
            note[-fade:] *= ramp[::-1]
        out = np.concatenate([out, note])
    bed = rng.normal(0, level * 0.01, n)
    return AudioBuffer(np.clip(out[:n] + bed, -1, 1), sample_rate)


def speech_like(duration_s: float, seed: int, level: float = 0.4,
                sample_rate: int = CANONICAL_RATE, f0_range=(100.0, 240.0)) -> AudioBuffer:
    """Noise bursts with a ~4 Hz syllabic envelope and a voiced component."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(*f0_range)
    rate = rng.uniform(3.0, 5.0)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 6.3)), 0, None) ** 2
    voiced = sum(np.sin(2 * np.pi * k * f0 * t * (1 + 0.03 * np.sin(2 * np.pi * 0.5 * t))) / k
                 for k in range(1, 6))
    x = env * (0.6 * voiced / 2.3 + 0.4 * rng.normal(0, 1, n))
    return AudioBuffer(np.clip(level * x, -1, 1), sample_rate)


def silence(duration_s: float, sample_rate: int = CANONICAL_RATE) -> AudioBuffer:
    return AudioBuffer(np.zeros(int(round(duration_s * sample_rate))), sample_rate)


@dataclass
class PlantedSuite:
    """Distinct originals followed by planted copies (in broadcast order)."""
    buffers: dict
    order: list
    originals: list
    duplicates: dict  # duplicate id -> (original id, kind)


def planted_duplicate_suite(n_distinct: int = 200, n_dups: int = 100, duration_s: float = 40.0,
                            excerpt_s: float = 24.0, seed: int = 0) -> PlantedSuite:
    """Originals alternate noise/melody; copies cycle exact / excerpt / 4 kHz lowpass.

    Excerpts start at arbitrary sample offsets, not on the fingerprint hop grid.
    """
    rng = np.random.default_rng(seed)
    buffers, originals = {}, []
    for i in range(n_distinct):
        sid = f"orig{i:04d}"
        s = int(rng.integers(2**31))
        buffers[sid] = noise_track(duration_s, s) if i % 2 == 0 else melody_track(duration_s, s)
        originals.append(sid)
    duplicates = {}
    kinds = ("exact", "excerpt", "lowpass")
    picks = rng.choice(n_distinct, size=n_dups, replace=n_dups > n_distinct)
    order = list(originals)
    for j, oi in enumerate(picks):
        src = originals[oi]
        kind = kinds[j % 3]
        buf = buffers[src]
        if kind == "exact":
            dup = AudioBuffer(buf.samples.copy(), buf.sample_rate)
        elif kind == "excerpt":
            n_ex = int(excerpt_s * buf.sample_rate)
            start = int(rng.integers(0, len(buf.samples) - n_ex + 1))
            dup = AudioBuffer(buf.samples[start:start + n_ex].copy(), buf.sample_rate)
        else:
            dup = lowpass(buf, 4000.0)
        sid = f"dup{j:04d}_{kind}"
        buffers[sid] = dup
        duplicates[sid] = (src, kind)
        order.append(sid)
    return PlantedSuite(buffers, order, originals, duplicates)


# --- synthetic broadcast corpus --------------------------------------------------

F0 = {"male": (90.0, 140.0), "female": (180.0, 250.0)}
PROFILES = ("talk", "talk", "mixed", "music")
CHANNELS = ("tv1", "tv2", "radio1", "radio2", "radio3")
LANGUAGES = ("fr", "fr", "fr", "en", "de")


def _programme(duration_s: float, profile: str, rng) -> list[tuple]:
    """Consecutive (start, end, kind, gender) pieces covering the file."""
    pieces, t = [], 0.0
    while t < duration_s - 1e-9:
        length = min(float(rng.uniform(6.0, 20.0)), duration_s - t)
        u = rng.random()
        if profile == "music":
            kind = "music" if u < 0.85 else "speech"
        elif profile == "mixed":
            kind = "speech_bg" if u < 0.6 else ("music" if u < 0.85 else "speech")
        else:
            kind = "speech" if u < 0.9 else "music"
        gender = ("male", "female")[int(rng.integers(0, 2))] if kind != "music" else None
        pieces.append((round(t, 6), round(t + length, 6), kind, gender))
        t += length
    return pieces


def programme_audio(duration_s: float, profile: str, seed: int,
                    sample_rate: int = CANONICAL_RATE) -> tuple[AudioBuffer, dict]:
    """Audio plus its file-level timeline (speech with gender, music with level)."""
    rng = np.random.default_rng(seed)
    pieces = _programme(duration_s, profile, rng)
    parts, speech, music = [], [], []
    for start, end, kind, gender in pieces:
        dur = end - start
        s = int(rng.integers(2**31))
        if kind == "music":
            x = melody_track(dur, s, sample_rate=sample_rate).samples
            music.append({"start": start, "end": end, "level": "fg"})
        else:
            x = speech_like(dur, s, sample_rate=sample_rate, f0_range=F0[gender]).samples
            if kind == "speech_bg":
                x = x + 0.2 * melody_track(dur, s + 1, sample_rate=sample_rate).samples
                music.append({"start": start, "end": end, "level": "bg"})
            speech.append({"start": start, "end": end, "gender": gender})
        parts.append(x)
    n = int(round(duration_s * sample_rate))
    x = np.concatenate(parts)[:n]
    x = np.pad(x, (0, n - len(x)))
    return AudioBuffer(np.clip(x, -1, 1), sample_rate), {"speech_segments": speech, "music_segments": music}


def shift_timeline(timeline: dict, start: float, end: float) -> dict:
    """Timeline of the excerpt [start, end), re-based to zero."""
    out = {k: v for k, v in timeline.items() if k not in ("speech_segments", "music_segments")}
    for key in ("speech_segments", "music_segments"):
        segs = []
        for seg in timeline.get(key, []):
            a, b = max(seg["start"], start), min(seg["end"], end)
            if b > a:
                segs.append({**seg, "start": round(a - start, 6), "end": round(b - start, 6)})
        out[key] = segs
    return out


@dataclass
class SyntheticCorpus:
    catalog: list            # dicts: id, path, duration_s, channel, date
    timelines: dict          # id -> file-level timeline
    eval_files: list         # dicts: id, path, duration_s
    planted_copies: dict     # copy id -> (original id, kind)
    eval_overlaps: dict      # eval id -> corpus id it excerpts


def write_synthetic_corpus(root, n_files: int = 30, seed: int = 0, duration_range=(80.0, 100.0),
                           n_copies: int = 3, sample_rate: int = CANONICAL_RATE) -> SyntheticCorpus:
    """Write ``audio/*.wav``, ``eval/*.wav``, ``catalog.jsonl`` and
    ``timelines/*.json`` under ``root``.

    The last ``n_copies`` files replay earlier ones (exact, 60 s excerpt,
    4 kHz lowpass) with later broadcast dates. Two evaluation files are 20 s
    excerpts of corpus originals; a third is fresh audio.
    """
    import json
    from pathlib import Path

    from .audio_io import encode_pcm

    root = Path(root)
    for sub in ("audio", "eval", "timelines"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_orig = n_files - n_copies
    buffers, timelines, catalog = {}, {}, []
    for i in range(n_orig):
        sid = f"src{i:03d}"
        dur = round(float(rng.uniform(*duration_range)), 1)
        profile = PROFILES[int(rng.integers(0, len(PROFILES)))]
        buf, tl = programme_audio(dur, profile, int(rng.integers(2**31)), sample_rate)
        tl["language"] = LANGUAGES[int(rng.integers(0, len(LANGUAGES)))]
        tl["profile"] = profile
        buffers[sid], timelines[sid] = buf, tl
        year = 1960 + int(rng.integers(0, 60))
        date = f"{year}-{int(rng.integers(1, 13)):02d}-{int(rng.integers(1, 29)):02d}"
        catalog.append({"id": sid, "duration_s": dur, "channel": CHANNELS[int(rng.integers(0, len(CHANNELS)))],
                        "date": date})
    copies = {}
    kinds = ("exact", "excerpt", "lowpass")
    for j in range(n_copies):
        src = catalog[int(rng.integers(0, n_orig))]
        kind = kinds[j % 3]
        buf, tl = buffers[src["id"]], timelines[src["id"]]
        if kind == "exact":
            new, new_tl = AudioBuffer(buf.samples.copy(), sample_rate), dict(tl)
        elif kind == "excerpt":
            start = round(float(rng.uniform(0, buf.duration_seconds - 60.0)), 3)
            new = buf.slice(start, start + 60.0)
            new_tl = shift_timeline(tl, start, start + 60.0)
        else:
            new, new_tl = lowpass(buf, 4000.0), dict(tl)
        sid = f"src{n_orig + j:03d}"
        buffers[sid], timelines[sid] = new, new_tl
        copies[sid] = (src["id"], kind)
        later = int(src["date"][:4]) + 1 + int(rng.integers(0, 5))
        catalog.append({"id": sid, "duration_s": round(new.duration_seconds, 3), "channel": src["channel"],
                        "date": f"{later}{src['date'][4:]}"})
    for entry in catalog:
        entry["path"] = f"audio/{entry['id']}.wav"
        encode_pcm(buffers[entry["id"]], root / entry["path"])
        (root / "timelines" / f"{entry['id']}.json").write_text(
            json.dumps(timelines[entry["id"]], sort_keys=True) + "\n", encoding="utf-8")
    (root / "catalog.jsonl").write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in catalog),
                                        encoding="utf-8")

    eval_files, overlaps = [], {}
    picks = rng.choice(n_orig, size=2, replace=False)
    for k, oi in enumerate(picks):
        src = catalog[int(oi)]["id"]
        start = round(float(rng.uniform(0, buffers[src].duration_seconds - 20.0)), 3)
        eid = f"eval{k:02d}"
        encode_pcm(buffers[src].slice(start, start + 20.0), root / "eval" / f"{eid}.wav")
        eval_files.append({"id": eid, "path": f"eval/{eid}.wav", "duration_s": 20.0})
        overlaps[eid] = src
    fresh, _ = programme_audio(30.0, "talk", int(rng.integers(2**31)), sample_rate)
    encode_pcm(fresh, root / "eval" / "eval02.wav")
    eval_files.append({"id": "eval02", "path": "eval/eval02.wav", "duration_s": 30.0})
    truth = {"planted_copies": copies, "eval_overlaps": overlaps}
    (root / "truth.json").write_text(json.dumps(truth, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return SyntheticCorpus(catalog, timelines, eval_files, copies, overlaps)
