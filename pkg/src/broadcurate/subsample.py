"""Acoustically controlled pretraining subsets drawn from an annotated manifest."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import describe
from .corpus import ChunkManifest

NAMES = ("base", "no_music", "only_speech", "only_fr", "gender", "duplicates")
PAPER_SEGMENTS = 120_000
GENDER_TOLERANCE = 0.06


class SubsampleError(ValueError):
    pass


class InsufficientPool(SubsampleError):
    pass


class UnknownSegmentId(SubsampleError):
    pass


@dataclass(frozen=True)
class SubsampleSpec:
    name: str
    target_segments: int
    seed: int = 0
    dup_fraction: float = 0.01
    dup_copies: int = 10
    gender_target: float = 0.5

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown subsample {self.name!r}; expected one of {NAMES}")
        if self.target_segments <= 0:
            raise ValueError("target_segments must be positive")
        if not 0 < self.dup_fraction < 1:
            raise ValueError("dup_fraction must lie in (0, 1)")
        if self.dup_copies < 1:
            raise ValueError("dup_copies must be >= 1")


@dataclass
class Subsample:
    spec: SubsampleSpec
    segment_ids: list
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.segment_ids)

    def multiplicity(self) -> Counter:
        return Counter(self.segment_ids)

    def save(self, path) -> None:
        header = {"spec": asdict(self.spec), "provenance": self.provenance}
        body = "".join(f"{sid}\n" for sid in self.segment_ids)
        Path(path).write_text("# " + json.dumps(header, sort_keys=True) + "\n" + body, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Subsample":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# "):
            raise SubsampleError(f"{path}: missing header line")
        header = json.loads(lines[0][2:])
        return cls(SubsampleSpec(**header["spec"]), [l for l in lines[1:] if l], header["provenance"])


PREDICATES = {
    "no_music": lambda a: not describe.label_heuristics(a).has_music,
    "only_speech": lambda a: describe.label_heuristics(a).is_speech,
    "only_fr": lambda a: a.language == "fr",
}


def _uniform_subset(pool: list, n: int, rng) -> list:
    idx = np.sort(rng.choice(len(pool), size=n, replace=False))
    return [pool[i] for i in idx]


def build_base(manifest: ChunkManifest, n: int, seed: int) -> Subsample:
    spec = SubsampleSpec("base", n, seed)
    if len(manifest) < n:
        raise InsufficientPool(f"base: need {n} chunks, manifest has {len(manifest)}")
    ids = _uniform_subset(manifest.ids, n, np.random.default_rng(seed))
    return Subsample(spec, ids, {"pool_size": len(manifest)})


def build_filtered(manifest: ChunkManifest, name: str, n: int, seed: int) -> Subsample:
    spec = SubsampleSpec(name, n, seed)
    keep = PREDICATES[name]
    pool = [cid for cid in manifest.ids if keep(manifest.annotation(cid))]
    if len(pool) < n:
        raise InsufficientPool(f"{name}: need {n} chunks, only {len(pool)} satisfy the predicate")
    ids = _uniform_subset(pool, n, np.random.default_rng(seed))
    return Subsample(spec, ids, {"pool_size": len(pool)})


def gender_pool(manifest: ChunkManifest) -> list[str]:
    pool = []
    for cid in manifest.ids:
        a = manifest.annotation(cid)
        m, f = describe.speaking_time(a)
        if describe.label_heuristics(a).is_speech and m + f > 0:
            pool.append(cid)
    return pool


def greedy_balance(male: np.ndarray, female: np.ndarray, n: int, target: float,
                   max_swaps: int | None = None) -> list[int]:
    """Indices of ``n`` items whose pooled female share is close to ``target``.

    Items are taken one at a time, each time the one bringing the running share
    closest to ``target`` (ties go to the lowest index). A refinement pass then
    applies the best single exchange between chosen and unchosen items while it
    strictly reduces the gap.
    """
    male = np.asarray(male, dtype=np.float64)
    female = np.asarray(female, dtype=np.float64)
    taken = np.zeros(len(male), dtype=bool)
    fm = ff = 0.0
    picked = []
    for _ in range(n):
        tot = fm + ff + male + female
        share = np.divide(ff + female, tot, out=np.full(len(male), target), where=tot > 0)
        gap = np.abs(share - target)
        gap[taken] = np.inf
        i = int(np.argmin(gap))
        taken[i] = True
        picked.append(i)
        fm += male[i]
        ff += female[i]

    max_swaps = n if max_swaps is None else max_swaps
    for _ in range(max_swaps):
        move = _best_exchange(male, female, picked, taken, fm, ff, target)
        if move is None:
            break
        out_pos, in_items = move
        for a, j in zip(out_pos, in_items):
            i = picked[a]
            taken[i], taken[j] = False, True
            picked[a] = j
            fm += male[j] - male[i]
            ff += female[j] - female[i]
    return picked


_PAIR_EXCHANGE_BUDGET = 2_000_000


def _best_exchange(male, female, picked, taken, fm, ff, target):
    """Best single exchange, or best double exchange when the pool is small;
    None when neither strictly reduces the gap."""
    inside = np.array(picked)
    outside = np.flatnonzero(~taken)
    if len(outside) == 0:
        return None
    current = abs(ff / (fm + ff) - target) if fm + ff > 0 else np.inf

    def gaps(dm, df):
        tot = fm + ff + dm + df
        return np.abs(np.divide(ff + df, tot, out=np.full(np.shape(tot), np.inf), where=tot > 0) - target)

    dm1 = male[outside][None, :] - male[inside][:, None]
    df1 = female[outside][None, :] - female[inside][:, None]
    g1 = gaps(dm1, df1)
    a, b = np.unravel_index(np.argmin(g1), g1.shape)
    best = ((a,), (int(outside[b]),)), g1[a, b]

    n_in, n_out = len(inside), len(outside)
    if n_in >= 2 and n_out >= 2 and (n_in * n_out) ** 2 <= _PAIR_EXCHANGE_BUDGET:
        ia, ib = np.triu_indices(n_in, 1)
        oa, ob = np.triu_indices(n_out, 1)
        dm2 = (male[outside[oa]] + male[outside[ob]])[None, :] - (male[inside[ia]] + male[inside[ib]])[:, None]
        df2 = (female[outside[oa]] + female[outside[ob]])[None, :] - (female[inside[ia]] + female[inside[ib]])[:, None]
        g2 = gaps(dm2, df2)
        a, b = np.unravel_index(np.argmin(g2), g2.shape)
        if g2[a, b] < best[1] - 1e-12:
            best = ((ia[a], ib[a]), (int(outside[oa[b]]), int(outside[ob[b]]))), g2[a, b]

    if not best[1] < current - 1e-12:
        return None
    return best[0]


def female_share(manifest: ChunkManifest, ids) -> float | None:
    m = f = 0.0
    for cid in ids:
        dm, df = describe.speaking_time(manifest.annotation(cid))
        m += dm
        f += df
    return f / (m + f) if m + f else None


def build_gender_balanced(manifest: ChunkManifest, n: int, seed: int, target: float = 0.5) -> Subsample:
    spec = SubsampleSpec("gender", n, seed, gender_target=target)
    pool = gender_pool(manifest)
    if len(pool) < n:
        raise InsufficientPool(f"gender: need {n} gendered speech chunks, only {len(pool)} available")
    rng = np.random.default_rng(seed)
    pool = [pool[i] for i in rng.permutation(len(pool))]
    times = np.array([describe.speaking_time(manifest.annotation(cid)) for cid in pool])
    picked = greedy_balance(times[:, 0], times[:, 1], n, target)
    ids = [pool[i] for i in picked]
    share = female_share(manifest, ids)
    return Subsample(spec, ids, {"pool_size": len(pool), "female_share": share,
                                 "male_share": None if share is None else 1.0 - share})


def n_duplicated(n: int, dup_fraction: float) -> int:
    return int(math.floor(dup_fraction * n + 0.5))


def build_duplicates(base: Subsample, dup_fraction: float = 0.01, dup_copies: int = 10,
                     seed: int = 0) -> Subsample:
    """Repeat ``d = round(dup_fraction * n)`` segments ``dup_copies`` times and
    drop ``(dup_copies - 1) * d`` other segments so the length stays ``n``."""
    n = len(base.segment_ids)
    if len(set(base.segment_ids)) != n:
        raise SubsampleError("duplicates must start from a subsample without repeats")
    spec = SubsampleSpec("duplicates", n, seed, dup_fraction=dup_fraction, dup_copies=dup_copies)
    d = n_duplicated(n, dup_fraction)
    if d < 1:
        raise InsufficientPool(f"dup_fraction {dup_fraction} of {n} segments selects nothing")
    n_remove = (dup_copies - 1) * d
    if n_remove > n - d:
        raise InsufficientPool(f"need {n_remove} removable segments, only {n - d} are not duplicated")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    dup_idx = order[:d]
    removed_idx = order[d:d + n_remove]
    keep = np.ones(n, dtype=bool)
    keep[removed_idx] = False
    keep[dup_idx] = False
    ids = [base.segment_ids[i] for i in np.flatnonzero(keep)]
    ids += [base.segment_ids[i] for i in np.sort(dup_idx)] * dup_copies
    ids = [ids[i] for i in rng.permutation(len(ids))]
    return Subsample(spec, ids, {"duplicated": d, "removed": n_remove,
                                 "base_seed": base.spec.seed})


def build(spec: SubsampleSpec, manifest: ChunkManifest, base: Subsample | None = None) -> Subsample:
    if spec.name == "base":
        return build_base(manifest, spec.target_segments, spec.seed)
    if spec.name in PREDICATES:
        return build_filtered(manifest, spec.name, spec.target_segments, spec.seed)
    if spec.name == "gender":
        return build_gender_balanced(manifest, spec.target_segments, spec.seed, spec.gender_target)
    if base is None:
        base = build_base(manifest, spec.target_segments, spec.seed)
    return build_duplicates(base, spec.dup_fraction, spec.dup_copies, spec.seed)


# --- verification ------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def verify_subsample(sub: Subsample, manifest: ChunkManifest | None = None) -> list[Check]:
    """Re-derive every constraint of ``sub.spec`` from the ids alone."""
    spec = sub.spec
    mult = sub.multiplicity()
    if manifest is not None:
        unknown = [sid for sid in mult if sid not in manifest]
        if unknown:
            raise UnknownSegmentId(f"{len(unknown)} ids not in manifest, e.g. {unknown[0]}")
    checks = [Check("length", len(sub) == spec.target_segments,
                    f"{len(sub)} segments, target {spec.target_segments}")]

    if spec.name == "duplicates":
        d = n_duplicated(spec.target_segments, spec.dup_fraction)
        hist = Counter(mult.values())
        expected = Counter({1: spec.target_segments - spec.dup_copies * d})
        expected[spec.dup_copies] += d
        expected = +expected
        checks.append(Check("multiplicity", hist == expected,
                            f"histogram {dict(sorted(hist.items()))}, expected {dict(sorted(expected.items()))}"))
    else:
        repeats = [sid for sid, c in mult.items() if c > 1]
        checks.append(Check("no_repeats", not repeats,
                            f"repeated: {repeats[:5]}" if repeats else "all ids unique"))

    if manifest is None:
        return checks
    if spec.name in PREDICATES:
        keep = PREDICATES[spec.name]
        bad = [sid for sid in mult if not keep(manifest.annotation(sid))]
        checks.append(Check("predicate", not bad,
                            f"violating: {', '.join(bad[:5])}" if bad else f"all {len(mult)} satisfy {spec.name}"))
    if spec.name == "gender":
        share = female_share(manifest, sub.segment_ids)
        recorded = sub.provenance.get("female_share")
        checks.append(Check("share_recorded", share is not None and recorded is not None
                            and abs(share - recorded) < 1e-9, f"recomputed {share}, recorded {recorded}"))
        checks.append(Check("balance", share is not None and abs(share - spec.gender_target) <= GENDER_TOLERANCE,
                            f"female share {share}, target {spec.gender_target} +/- {GENDER_TOLERANCE}"))
        eligible = set(gender_pool(manifest))
        bad = [sid for sid in mult if sid not in eligible]
        checks.append(Check("pool_membership", not bad,
                            f"not gendered speech: {bad[:5]}" if bad else "all gendered speech"))
    return checks
