import datetime as dt
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from broadcurate import corpus as C
from broadcurate import subsample as S
from broadcurate.describe import Annotation, Segment
from broadcurate.subsample import Subsample, SubsampleSpec


def ids(n):
    return [f"c{i:06d}" for i in range(n)]


def base_of(n, seed=0):
    return Subsample(SubsampleSpec("base", n, seed), ids(n))


def manifest(n=400, seed=0):
    rng = np.random.default_rng(seed)
    chunks, anns = [], {}
    for i in range(n):
        cid = f"c{i:04d}"
        chunks.append(C.ChunkRecord(cid, "f", 30 * i, "tv1", dt.date(2000, 1, 1)))
        speech = float(rng.uniform(0, 30))
        female = float(rng.uniform(0, speech))
        segs = tuple(s for s in (Segment(0.0, female, "female") if female > 0 else None,
                                 Segment(female, speech, "male") if speech > female else None) if s)
        p_fg = float(rng.choice([0.0, 0.5]))
        p_bg = float(rng.choice([0.0, 0.3]))
        anns[cid] = Annotation(str(rng.choice(["fr", "fr", "en"])), (), segs, (1 - p_fg - p_bg, p_bg, p_fg))
    return C.ChunkManifest(chunks, anns)


# --- duplicates ----------------------------------------------------------------

def test_duplicates_at_full_scale():
    dup = S.build_duplicates(base_of(S.PAPER_SEGMENTS), 0.01, 10, seed=0)
    hist = Counter(dup.multiplicity().values())
    assert hist == {10: 1200, 1: 120_000 - 12_000}
    assert dup.provenance["removed"] == 10_800
    assert all(c.passed for c in S.verify_subsample(dup))


@settings(max_examples=40, deadline=None)
@given(st.integers(50, 3000), st.floats(0.005, 0.08), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_duplicates_invariants(n, frac, copies, seed):
    d = S.n_duplicated(n, frac)
    if d < 1 or (copies - 1) * d > n - d:
        with pytest.raises(S.InsufficientPool):
            S.build_duplicates(base_of(n), frac, copies, seed)
        return
    dup = S.build_duplicates(base_of(n), frac, copies, seed)
    assert len(dup) == n and set(dup.segment_ids) <= set(ids(n))
    assert all(c.passed for c in S.verify_subsample(dup))


def test_duplicates_need_unique_base():
    b = Subsample(SubsampleSpec("base", 4), ["a", "a", "b", "c"])
    with pytest.raises(S.SubsampleError):
        S.build_duplicates(b, 0.25, 2)


def test_verify_detects_tampering():
    dup = S.build_duplicates(base_of(1000), 0.01, 10, seed=0)
    dup.segment_ids[0] = dup.segment_ids[1] if dup.segment_ids[1] != dup.segment_ids[0] else "x"
    assert not all(c.passed for c in S.verify_subsample(dup))


# --- base and filtered ---------------------------------------------------------

def test_base_is_unique_subset_and_seeded():
    m = manifest()
    a = S.build_base(m, 100, seed=1)
    assert len(set(a.segment_ids)) == 100 and set(a.segment_ids) <= set(m.ids)
    assert a.segment_ids == S.build_base(m, 100, seed=1).segment_ids
    assert a.segment_ids != S.build_base(m, 100, seed=2).segment_ids


@pytest.mark.parametrize("name", ["no_music", "only_speech", "only_fr"])
def test_filtered_subsamples_verify(name):
    m = manifest()
    sub = S.build(SubsampleSpec(name, 40, seed=3), m)
    checks = S.verify_subsample(sub, m)
    assert all(c.passed for c in checks), checks
    assert any(c.name == "predicate" for c in checks)


def test_filtered_pool_too_small():
    with pytest.raises(S.InsufficientPool, match="only_speech"):
        S.build_filtered(manifest(50), "only_speech", 50, seed=0)


def test_unknown_segment_id():
    m = manifest(20)
    with pytest.raises(S.UnknownSegmentId):
        S.verify_subsample(Subsample(SubsampleSpec("base", 1), ["zzz"]), m)


# --- gender balance ------------------------------------------------------------

def test_gender_balanced_verifies():
    m = manifest(600)
    sub = S.build_gender_balanced(m, 80, seed=0)
    assert all(c.passed for c in S.verify_subsample(sub, m))
    assert abs(sub.provenance["female_share"] - 0.5) < 0.01


def test_greedy_balance_hits_target_on_easy_pool():
    male = np.array([10.0, 0, 10, 0, 5, 5])
    female = np.array([0.0, 10, 0, 10, 5, 5])
    picked = S.greedy_balance(male, female, 4, 0.5)
    assert len(set(picked)) == 4
    assert female[picked].sum() / (male[picked] + female[picked]).sum() == 0.5


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 30), st.floats(0, 30)), min_size=2, max_size=25), st.data())
def test_greedy_balance_returns_distinct_indices(pairs, data):
    n = data.draw(st.integers(1, len(pairs)))
    male, female = np.array(pairs).T
    picked = S.greedy_balance(male, female, n, 0.5)
    assert len(picked) == n == len(set(picked))


# --- files and specs -----------------------------------------------------------

def test_subsample_file_round_trip(tmp_path):
    dup = S.build_duplicates(base_of(500), 0.02, 3, seed=4)
    dup.save(tmp_path / "d.txt")
    back = Subsample.load(tmp_path / "d.txt")
    assert back.spec == dup.spec and back.segment_ids == dup.segment_ids
    assert back.provenance == dup.provenance


@pytest.mark.parametrize("kwargs", [dict(name="everything", target_segments=5),
                                    dict(name="base", target_segments=0),
                                    dict(name="duplicates", target_segments=5, dup_fraction=1.0)])
def test_bad_specs(kwargs):
    with pytest.raises(ValueError):
        SubsampleSpec(**kwargs)
