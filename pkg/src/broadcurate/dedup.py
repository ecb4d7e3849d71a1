"""Copy detection over fingerprint tracks.

The index splits every 32-bit code into four 8-bit sub-blocks and keeps one
posting table per sub-block position (multi-index hashing). Two codes within
Hamming distance ``tol`` agree within ``tol // 4`` bits on at least one
sub-block, so probing each query sub-block's radius-``tol // 4`` neighbourhood
retrieves every code within ``tol`` (exact for tol <= 7).

A copy is declared when ``min_run`` consecutive query codes are each similar
to reference codes at one fixed frame offset.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .fingerprint import DEFAULT_TOL, FingerprintTrack, hamming_array

log = logging.getLogger(__name__)

DEFAULT_MIN_RUN = 4
N_SUBBLOCKS = 4


class DuplicateSourceId(ValueError):
    pass


@dataclass(frozen=True)
class MatchSpan:
    query_source: str
    ref_source: str
    query_start: int
    ref_start: int
    length: int
    phase: int = 0

    @property
    def offset(self) -> int:
        return self.ref_start - self.query_start


def _probe_masks(radius: int) -> np.ndarray:
    masks = [0]
    for r in range(1, radius + 1):
        for bits in combinations(range(8), r):
            masks.append(sum(1 << b for b in bits))
    return np.array(masks, dtype=np.uint32)


class FpIndex:
    """Postings per (sub-block position, 8-bit value) -> (source_id, frame_index)."""

    def __init__(self, tracks=()):
        self._pending: list[FingerprintTrack] = []
        self.sources: set[str] = set()
        self._codes = np.zeros(0, dtype=np.uint32)
        self._src = np.zeros(0, dtype=np.int64)
        self._frame = np.zeros(0, dtype=np.int64)
        self._names: list[str] = []
        self._order: list[np.ndarray] = []
        self._bounds: list[np.ndarray] = []
        self._tracks: list[FingerprintTrack] = []
        for t in tracks:
            self.add(t)
        self._compact()

    def add(self, track: FingerprintTrack) -> None:
        if track.source_id in self.sources:
            raise DuplicateSourceId(track.source_id)
        self.sources.add(track.source_id)
        self._pending.append(track)

    def __len__(self):
        self._compact()
        return len(self._codes)

    def _compact(self) -> None:
        if not self._pending and self._order:
            return
        self._tracks.extend(self._pending)
        self._pending = []
        tracks = sorted(self._tracks, key=lambda t: t.source_id)
        self._names = [t.source_id for t in tracks]
        self._codes = np.concatenate([t.codes for t in tracks]) if tracks else np.zeros(0, np.uint32)
        self._src = np.concatenate([np.full(len(t), i) for i, t in enumerate(tracks)]) if tracks \
            else np.zeros(0, np.int64)
        self._frame = np.concatenate([t.frame_indices for t in tracks]) if tracks \
            else np.zeros(0, np.int64)
        self._order, self._bounds = [], []
        for p in range(N_SUBBLOCKS):
            values = (self._codes >> np.uint32(8 * p)) & np.uint32(0xFF)
            # stable sort keeps each posting list ordered by (source_id, frame_index)
            order = np.argsort(values, kind="stable")
            self._order.append(order)
            self._bounds.append(np.searchsorted(values[order], np.arange(257)))

    def postings(self, position: int, value: int) -> list[tuple[str, int]]:
        self._compact()
        lo, hi = self._bounds[position][value], self._bounds[position][value + 1]
        idx = self._order[position][lo:hi]
        return [(self._names[s], int(f)) for s, f in zip(self._src[idx], self._frame[idx])]

    def candidates(self, query_codes: np.ndarray, tol: int) -> tuple[np.ndarray, np.ndarray]:
        """All (query position, index row) pairs with Hamming distance <= tol."""
        self._compact()
        q = np.asarray(query_codes, dtype=np.uint32)
        if len(q) == 0 or len(self._codes) == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        masks = _probe_masks(min(tol // N_SUBBLOCKS, 8))
        keys = []
        for p in range(N_SUBBLOCKS):
            sub = (q >> np.uint32(8 * p)) & np.uint32(0xFF)
            probe = (sub[:, None] ^ masks[None, :]).ravel()
            qpos = np.repeat(np.arange(len(q)), len(masks))
            lo = self._bounds[p][probe]
            counts = self._bounds[p][probe + 1] - lo
            total = int(counts.sum())
            if total == 0:
                continue
            qrep = np.repeat(qpos, counts)
            run_start = np.repeat(np.cumsum(counts) - counts, counts)
            rows = self._order[p][np.repeat(lo, counts) + np.arange(total) - run_start]
            keys.append(qrep * len(self._codes) + rows)
        if not keys:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        keys = np.unique(np.concatenate(keys))
        qi, rows = np.divmod(keys, len(self._codes))
        close = hamming_array(q[qi], self._codes[rows]) <= tol
        return qi[close], rows[close]

    def find_spans(self, query: FingerprintTrack, min_run: int = DEFAULT_MIN_RUN,
                   tol: int = DEFAULT_TOL) -> list[MatchSpan]:
        if min_run < 1:
            raise ValueError("min_run must be >= 1")
        self._compact()
        spans = []
        for k in range(query.n_phases):
            qi, rows = self.candidates(query.phase(k), tol)
            if len(qi) == 0:
                continue
            qframe = qi + query.frame_offset
            src = self._src[rows]
            offset = self._frame[rows] - qframe
            order = np.lexsort((qframe, offset, src))
            src, offset, qframe = src[order], offset[order], qframe[order]
            brk = np.ones(len(qframe), dtype=bool)
            brk[1:] = (src[1:] != src[:-1]) | (offset[1:] != offset[:-1]) | (qframe[1:] != qframe[:-1] + 1)
            starts = np.flatnonzero(brk)
            lengths = np.diff(np.append(starts, len(qframe)))
            for s, n in zip(starts, lengths):
                if n < min_run:
                    continue
                ref = self._names[src[s]]
                if k == 0 and ref == query.source_id and offset[s] == 0:
                    continue
                spans.append(MatchSpan(query.source_id, ref, int(qframe[s]),
                                       int(qframe[s] + offset[s]), int(n), k))
        spans.sort(key=lambda m: (m.ref_source, m.phase, m.offset, m.query_start))
        return spans


def build_index(tracks) -> FpIndex:
    return FpIndex(tracks)


def find_spans(idx: FpIndex, query: FingerprintTrack, min_run: int = DEFAULT_MIN_RUN,
               tol: int = DEFAULT_TOL) -> list[MatchSpan]:
    return idx.find_spans(query, min_run, tol)


def _best_span(spans: list[MatchSpan]) -> MatchSpan:
    return max(spans, key=lambda m: (m.length, -m.query_start))


@dataclass
class Removal:
    source_id: str
    matched_ref: str
    span: MatchSpan


@dataclass
class DedupReport:
    kept: list[str] = field(default_factory=list)
    removed: list[Removal] = field(default_factory=list)
    removed_duration_s: float = 0.0
    total_duration_s: float = 0.0

    @property
    def removed_fraction(self) -> float:
        return self.removed_duration_s / self.total_duration_s if self.total_duration_s else 0.0

    @property
    def removed_ids(self) -> list[str]:
        return [r.source_id for r in self.removed]

    def records(self, order: list[str]) -> list[dict]:
        removed = {r.source_id: r for r in self.removed}
        out = []
        for sid in order:
            r = removed.get(sid)
            out.append({
                "source_id": sid,
                "verdict": "REMOVED" if r else "KEPT",
                "matched_ref": r.matched_ref if r else None,
                "offset": r.span.offset if r else None,
                "length": r.span.length if r else None,
                "phase": r.span.phase if r else None,
            })
        return out

    def to_jsonl(self, order: list[str]) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.records(order))


def dedup_corpus(tracks, min_run: int = DEFAULT_MIN_RUN, tol: int = DEFAULT_TOL,
                 durations: dict | None = None) -> DedupReport:
    """Stream tracks in the given order (ascending broadcast date); a track
    matching anything kept earlier is removed, otherwise it is indexed."""
    index = FpIndex()
    report = DedupReport()
    seen = set()
    for track in tracks:
        if track.source_id in seen:
            raise DuplicateSourceId(track.source_id)
        seen.add(track.source_id)
        dur = durations[track.source_id] if durations else track.duration_s
        report.total_duration_s += dur
        spans = index.find_spans(track, min_run, tol)
        if spans:
            best = _best_span(spans)
            report.removed.append(Removal(track.source_id, best.ref_source, best))
            report.removed_duration_s += dur
            log.debug("removed %s: copy of %s (%d codes)", track.source_id, best.ref_source, best.length)
        else:
            index.add(track)
            report.kept.append(track.source_id)
    return report


def apply_blocklist(block: FpIndex, chunks, min_run: int = DEFAULT_MIN_RUN,
                    tol: int = DEFAULT_TOL) -> tuple[list[str], list[Removal]]:
    kept, removed = [], []
    for chunk in chunks:
        spans = block.find_spans(chunk, min_run, tol)
        if spans:
            best = _best_span(spans)
            removed.append(Removal(chunk.source_id, best.ref_source, best))
        else:
            kept.append(chunk.source_id)
    return kept, removed


def removal_to_dict(r: Removal) -> dict:
    return {"source_id": r.source_id, "matched_ref": r.matched_ref, **asdict(r.span)}
