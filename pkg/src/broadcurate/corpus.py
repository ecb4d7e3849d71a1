"""Chunk catalog: random 30 s chunk sampling, manifest files and corpus statistics."""
from __future__ import annotations

import datetime as dt
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import describe

CHUNK_S = 30.0
GRID_S = 1


class CorpusError(ValueError):
    pass


class InsufficientMaterial(CorpusError):
    pass


class MissingAnnotations(CorpusError):
    pass


def parse_date(value) -> dt.date:
    """ISO date; year-only or year-month values fall on the first day."""
    if isinstance(value, dt.date):
        return value
    parts = str(value).strip().split("-")
    if not 1 <= len(parts) <= 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"bad date {value!r}")
    nums = [int(p) for p in parts] + [1] * (3 - len(parts))
    return dt.date(*nums)


@dataclass(frozen=True)
class SourceFile:
    id: str
    path: str
    duration_s: float
    channel: str
    broadcast_date: dt.date

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"{self.id}: duration must be positive")
        object.__setattr__(self, "broadcast_date", parse_date(self.broadcast_date))

    def to_dict(self) -> dict:
        return {"id": self.id, "path": self.path, "duration_s": self.duration_s,
                "channel": self.channel, "date": self.broadcast_date.isoformat()}

    @classmethod
    def from_dict(cls, d: dict) -> "SourceFile":
        return cls(d["id"], d.get("path", ""), float(d["duration_s"]), d.get("channel", ""), d["date"])


@dataclass(frozen=True)
class ChunkRecord:
    chunk_id: str
    source_id: str
    offset_s: int
    channel: str
    broadcast_date: dt.date
    duration_s: float = CHUNK_S

    def to_dict(self) -> dict:
        return {"chunk_id": self.chunk_id, "source_id": self.source_id, "offset_s": self.offset_s,
                "duration_s": self.duration_s, "channel": self.channel,
                "date": self.broadcast_date.isoformat()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkRecord":
        return cls(d["chunk_id"], d["source_id"], int(d["offset_s"]), d.get("channel", ""),
                   parse_date(d["date"]), float(d.get("duration_s", CHUNK_S)))


@dataclass
class ChunkManifest:
    chunks: list = field(default_factory=list)
    annotations: dict | None = None

    def __post_init__(self):
        ids = [c.chunk_id for c in self.chunks]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate chunk_id in manifest")
        self._by_id = {c.chunk_id: c for c in self.chunks}

    def __len__(self):
        return len(self.chunks)

    def __getitem__(self, chunk_id: str) -> ChunkRecord:
        return self._by_id[chunk_id]

    def __contains__(self, chunk_id) -> bool:
        return chunk_id in self._by_id

    @property
    def ids(self) -> list[str]:
        return [c.chunk_id for c in self.chunks]

    @property
    def total_hours(self) -> float:
        return sum(c.duration_s for c in self.chunks) / 3600.0

    def annotation(self, chunk_id: str) -> describe.Annotation:
        if not self.annotations or chunk_id not in self.annotations:
            raise MissingAnnotations(f"no annotation for {chunk_id}")
        return self.annotations[chunk_id]

    def flags(self, chunk_id: str) -> describe.ContentFlags:
        return describe.label_heuristics(self.annotation(chunk_id))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c.to_dict(), sort_keys=True) + "\n" for c in self.chunks)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path, annotations: dict | None = None) -> "ChunkManifest":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ChunkRecord.from_dict(json.loads(l)) for l in lines if l.strip()], annotations)


def load_catalog(path) -> list[SourceFile]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [SourceFile.from_dict(json.loads(l)) for l in lines if l.strip()]


def save_catalog(catalog, path) -> None:
    Path(path).write_text("".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in catalog),
                          encoding="utf-8")


def chunk_id_for(source_id: str, offset_s: int) -> str:
    return f"{source_id}_{offset_s:05d}"


def sample_chunks(catalog, n: int, seed: int, chunk_s: float = CHUNK_S) -> ChunkManifest:
    """Draw ``n`` non-overlapping chunks on a 1 s offset grid.

    Chunk counts per file follow a uniform draw without replacement over every
    file's chunk slots (``floor(duration / 30)`` each); within a file the gaps
    between chunks are a uniform composition of the slack, so every
    non-overlapping placement on the grid is equally likely.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    files = [f for f in catalog if f.duration_s >= chunk_s]
    capacity = np.array([int(f.duration_s // chunk_s) for f in files], dtype=np.int64)
    total = int(capacity.sum())
    if n > total:
        raise InsufficientMaterial(f"requested {n} chunks, catalog holds {total} non-overlapping slots")
    if n == 0:
        return ChunkManifest([])
    slots = rng.choice(total, size=n, replace=False)
    owner = np.searchsorted(np.cumsum(capacity), slots, side="right")
    counts = np.bincount(owner, minlength=len(files))
    step = int(chunk_s) - GRID_S
    chunks = []
    for f, k in zip(files, counts):
        if k == 0:
            continue
        slack = int(np.floor(f.duration_s - k * chunk_s))
        picks = np.sort(rng.choice(slack + k, size=k, replace=False))
        for j, c in enumerate(picks):
            off = int(c) + step * j
            chunks.append(ChunkRecord(chunk_id_for(f.id, off), f.id, off, f.channel, f.broadcast_date,
                                      chunk_s))
    return ChunkManifest(chunks)


# --- statistics ------------------------------------------------------------------

@dataclass
class StatsReport:
    total_segments: int
    total_hours: float
    pct_speech: float
    pct_music: float
    pct_women_time: float | None
    pct_men_time: float | None
    language_shares: dict
    language_shares_speech: dict
    language_shares_music: dict
    per_year_hours: dict
    per_year_gender_ratio: dict

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_text(self) -> str:
        def pct(v):
            return "n/a" if v is None else f"{v:.2f}%"
        lines = [
            "Global:",
            "  Segment duration     30s",
            f"  Audio segments       {self.total_segments:,}",
            f"  Total duration       {self.total_hours:,.1f}h",
            "Content type:",
            f"  Segments with speech {pct(self.pct_speech)}",
            f"  Segments with music  {pct(self.pct_music)}",
            "Gender balance:",
            f"  Women speaking time  {pct(self.pct_women_time)}",
            f"  Men speaking time    {pct(self.pct_men_time)}",
            "Language:",
        ]
        for lang, share in sorted(self.language_shares.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {lang:<8} {share:6.2f}%  (speech {pct(self.language_shares_speech.get(lang))},"
                         f" music {pct(self.language_shares_music.get(lang))})")
        lines.append("Per year:")
        for year in sorted(self.per_year_hours):
            ratio = self.per_year_gender_ratio.get(year)
            women = "n/a" if ratio is None else f"{100 * ratio:.1f}% women"
            lines.append(f"  {year}  {self.per_year_hours[year]:.3f}h  {women}")
        return "\n".join(lines) + "\n"


def _shares(counter: Counter, total: int) -> dict:
    return {k: 100.0 * v / total for k, v in sorted(counter.items())} if total else {}


def stats_report(manifest: ChunkManifest) -> StatsReport:
    missing = [c.chunk_id for c in manifest.chunks
               if not manifest.annotations or c.chunk_id not in manifest.annotations]
    if missing:
        raise MissingAnnotations(f"{len(missing)} chunks lack annotations, e.g. {missing[0]}")
    n = len(manifest)
    speech = music = 0
    male_s = female_s = 0.0
    langs, langs_speech, langs_music = Counter(), Counter(), Counter()
    year_seconds = defaultdict(float)
    year_gender = defaultdict(lambda: [0.0, 0.0])
    for c in manifest.chunks:
        a = manifest.annotations[c.chunk_id]
        flags = describe.label_heuristics(a)
        m, f = describe.speaking_time(a)
        male_s += m
        female_s += f
        langs[a.language] += 1
        if flags.is_speech:
            speech += 1
            langs_speech[a.language] += 1
        if flags.has_music:
            music += 1
            langs_music[a.language] += 1
        year = c.broadcast_date.year
        year_seconds[year] += c.duration_s
        year_gender[year][0] += m
        year_gender[year][1] += f
    gendered = male_s + female_s
    return StatsReport(
        total_segments=n,
        total_hours=manifest.total_hours,
        pct_speech=100.0 * speech / n if n else 0.0,
        pct_music=100.0 * music / n if n else 0.0,
        pct_women_time=100.0 * female_s / gendered if gendered else None,
        pct_men_time=100.0 * male_s / gendered if gendered else None,
        language_shares=_shares(langs, n),
        language_shares_speech=_shares(langs_speech, speech),
        language_shares_music=_shares(langs_music, music),
        per_year_hours={y: s / 3600.0 for y, s in sorted(year_seconds.items())},
        per_year_gender_ratio={y: (g[1] / (g[0] + g[1]) if g[0] + g[1] else None)
                               for y, g in sorted(year_gender.items())},
    )
