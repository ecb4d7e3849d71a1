"""Per-chunk content descriptions.

External tools (transcriber, speech/gender segmenter, music-proportion model)
are not reimplemented: their outputs arrive as JSON sidecars, one per chunk.
``baseline_vad`` and ``baseline_music_score`` are crude signal-level proxies
so the pipeline can run end to end without those tools; they are not meant to
approximate the tools' accuracy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer

CHUNK_S = 30.0
GENDERS = ("male", "female", "unknown")

# labeling thresholds, all strict
MUSIC_MAX_NO_MUSIC = 0.85
SPEECH_MIN_SECONDS = 20.0
SPEECH_MAX_FG_MUSIC = 0.30

_SUM_TOL = 1e-3
_SUM_EXACT = 1e-9


class AnnotationError(ValueError):
    pass


class SchemaViolation(AnnotationError):
    pass


class ProportionSumError(AnnotationError):
    pass


class OverlappingSegments(AnnotationError):
    pass


class AnnotationConflict(AnnotationError):
    pass


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    gender: str = "unknown"

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Annotation:
    language: str = "unknown"
    transcript: tuple = ()
    speech_segments: tuple = ()
    music_props: tuple = (1.0, 0.0, 0.0)

    @property
    def p_no(self) -> float:
        return self.music_props[0]

    @property
    def p_bg(self) -> float:
        return self.music_props[1]

    @property
    def p_fg(self) -> float:
        return self.music_props[2]


@dataclass(frozen=True)
class ContentFlags:
    has_music: bool
    is_speech: bool


def total_speech(a: Annotation) -> float:
    return sum(s.duration for s in a.speech_segments)


def speaking_time(a: Annotation) -> tuple[float, float]:
    """(male seconds, female seconds); unknown-gender speech counts for neither."""
    male = sum(s.duration for s in a.speech_segments if s.gender == "male")
    female = sum(s.duration for s in a.speech_segments if s.gender == "female")
    return male, female


def label_heuristics(a: Annotation) -> ContentFlags:
    has_music = a.p_no < MUSIC_MAX_NO_MUSIC
    is_speech = total_speech(a) > SPEECH_MIN_SECONDS and a.p_fg < SPEECH_MAX_FG_MUSIC
    return ContentFlags(has_music=has_music, is_speech=is_speech)


# --- validation and sidecars -------------------------------------------------

def _check_segments(segments, duration: float) -> tuple:
    out = []
    for s in segments:
        if s.gender not in GENDERS:
            raise SchemaViolation(f"unknown gender {s.gender!r}")
        if not (math.isfinite(s.start) and math.isfinite(s.end)):
            raise SchemaViolation("non-finite segment bound")
        if s.start < 0 or s.end > duration + 1e-6 or not s.start < s.end:
            raise SchemaViolation(f"segment [{s.start}, {s.end}] outside [0, {duration}] or empty")
        out.append(s)
    out.sort(key=lambda s: (s.start, s.end))
    for a, b in zip(out, out[1:]):
        if b.start < a.end:
            raise OverlappingSegments(f"[{a.start}, {a.end}] overlaps [{b.start}, {b.end}]")
    return tuple(out)


def _check_props(props) -> tuple:
    p = [float(v) for v in props]
    if len(p) != 3 or any(not math.isfinite(v) or v < 0 for v in p):
        raise SchemaViolation(f"music proportions must be three non-negative numbers, got {props}")
    total = sum(p)
    if abs(total - 1.0) > _SUM_TOL:
        raise ProportionSumError(f"music proportions sum to {total}")
    if abs(total - 1.0) > _SUM_EXACT:
        p = [v / total for v in p]
    return tuple(p)


def validate(a: Annotation, duration: float = CHUNK_S) -> Annotation:
    return Annotation(language=a.language, transcript=tuple(a.transcript),
                      speech_segments=_check_segments(a.speech_segments, duration),
                      music_props=_check_props(a.music_props))


def from_dict(doc: dict, duration: float = CHUNK_S) -> Annotation:
    if not isinstance(doc, dict):
        raise SchemaViolation("sidecar must be a JSON object")
    try:
        language = doc.get("language") or "unknown"
        transcript = doc.get("transcript", [])
        if isinstance(transcript, str):
            transcript = transcript.split()
        segments = [Segment(float(s["start"]), float(s["end"]), s.get("gender", "unknown"))
                    for s in doc.get("speech_segments", [])]
        mp = doc["music_props"]
        props = (mp["no"], mp["bg"], mp["fg"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"malformed sidecar: {exc!r}") from exc
    if not isinstance(language, str) or not all(isinstance(t, str) for t in transcript):
        raise SchemaViolation("language and transcript tokens must be strings")
    return validate(Annotation(language, tuple(transcript), tuple(segments), props), duration)


def render(a: Annotation) -> dict:
    return {
        "language": a.language,
        "transcript": list(a.transcript),
        "speech_segments": [{"start": s.start, "end": s.end, "gender": s.gender}
                            for s in a.speech_segments],
        "music_props": {"no": a.p_no, "bg": a.p_bg, "fg": a.p_fg},
    }


def ingest_sidecar(path, duration: float = CHUNK_S) -> Annotation:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc
    return from_dict(doc, duration)


def write_sidecar(a: Annotation, path) -> None:
    Path(path).write_text(json.dumps(render(a), sort_keys=True) + "\n", encoding="utf-8")


def ingest_dir(directory, chunk_ids=None) -> dict[str, Annotation]:
    """Load ``<chunk_id>.json`` sidecars; restricted to ``chunk_ids`` when given."""
    directory = Path(directory)
    if chunk_ids is None:
        return {p.stem: ingest_sidecar(p) for p in sorted(directory.glob("*.json"))}
    return {cid: ingest_sidecar(directory / f"{cid}.json") for cid in chunk_ids}


def merge_annotations(into: dict, new: dict) -> dict:
    for cid, a in new.items():
        if cid in into and into[cid] != a:
            raise AnnotationConflict(f"conflicting annotations for {cid}")
        into[cid] = a
    return into


# --- long-form timelines -> chunk annotations ----------------------------------

def annotate_from_timeline(timeline: dict, offset_s: float, duration: float = CHUNK_S) -> Annotation:
    """Cut a file-level description down to one chunk.

    ``timeline`` holds ``language``, ``speech_segments`` and ``music_segments``
    (``{start, end, level: bg|fg}``) in file time, as a segmenter run on the
    whole file would produce.
    """
    lo, hi = offset_s, offset_s + duration
    segs = []
    for s in timeline.get("speech_segments", []):
        a, b = max(s["start"], lo), min(s["end"], hi)
        if b > a:
            segs.append(Segment(round(a - lo, 6), round(b - lo, 6), s.get("gender", "unknown")))
    bg = fg = 0.0
    for m in timeline.get("music_segments", []):
        overlap = max(0.0, min(m["end"], hi) - max(m["start"], lo))
        if m.get("level", "fg") == "fg":
            fg += overlap
        else:
            bg += overlap
    p_bg, p_fg = round(bg / duration, 9), round(fg / duration, 9)
    props = (max(0.0, round(1.0 - p_bg - p_fg, 9)), p_bg, p_fg)
    return validate(Annotation(timeline.get("language", "unknown"), (), tuple(segs), props), duration)


# --- baseline detectors ----------------------------------------------------------

VAD_FRAME_S = 0.025
VAD_MARGIN_DB = 12.0
VAD_HANGOVER_S = 0.3
_ABS_FLOOR_DB = -80.0


def _frame_power_db(x: np.ndarray, frame: int) -> np.ndarray:
    n = len(x) // frame
    frames = x[:n * frame].reshape(n, frame)
    return 10 * np.log10(np.mean(frames ** 2, axis=1) + 1e-20)


def baseline_vad(buf: AudioBuffer) -> list[Segment]:
    """Energy VAD: 25 ms frames above noise floor + 12 dB, gaps under 0.3 s bridged."""
    frame = int(round(VAD_FRAME_S * buf.sample_rate))
    db = _frame_power_db(buf.samples, frame)
    if len(db) == 0:
        return []
    floor = max(np.percentile(db, 10), _ABS_FLOOR_DB)
    active = db > floor + VAD_MARGIN_DB
    segs = []
    start = None
    for i, on in enumerate(np.append(active, False)):
        if on and start is None:
            start = i
        elif not on and start is not None:
            segs.append([start, i])
            start = None
    merged = []
    max_gap = int(round(VAD_HANGOVER_S / VAD_FRAME_S))
    for s in segs:
        if merged and s[0] - merged[-1][1] <= max_gap:
            merged[-1][1] = s[1]
        else:
            merged.append(s)
    return [Segment(a * VAD_FRAME_S, b * VAD_FRAME_S, "unknown") for a, b in merged]


MUSIC_FRAME = 2048
FLATNESS_FG = 0.05
FLATNESS_BG = 0.25


def baseline_music_score(buf: AudioBuffer) -> tuple[float, float, float]:
    """Spectral-flatness vote per frame.

    A frame votes music when its spectrum is peaky (low flatness) and its
    strongest bin persists from the previous frame; very low flatness votes
    foreground, moderate flatness background. Silent frames vote no-music.
    """
    x = buf.samples
    n = len(x) // MUSIC_FRAME
    if n == 0:
        return (1.0, 0.0, 0.0)
    frames = x[:n * MUSIC_FRAME].reshape(n, MUSIC_FRAME) * np.hanning(MUSIC_FRAME)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2 + 1e-20
    flatness = np.exp(np.mean(np.log(power), axis=1)) / np.mean(power, axis=1)
    peak = np.argmax(power, axis=1)
    sustained = np.zeros(n, dtype=bool)
    sustained[1:] = np.abs(np.diff(peak)) <= 1
    sustained[0] = sustained[1] if n > 1 else True
    loud = _frame_power_db(x, MUSIC_FRAME) > _ABS_FLOOR_DB + 20
    fg = loud & sustained & (flatness < FLATNESS_FG)
    bg = loud & sustained & ~fg & (flatness < FLATNESS_BG)
    p_fg = fg.mean()
    p_bg = bg.mean()
    return (float(1.0 - p_fg - p_bg), float(p_bg), float(p_fg))


def baseline_annotation(buf: AudioBuffer) -> Annotation:
    return validate(Annotation("unknown", (), tuple(baseline_vad(buf)), baseline_music_score(buf)),
                    duration=buf.duration_seconds)
