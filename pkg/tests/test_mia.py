import numpy as np
import pytest

from broadcurate import frameseg, mia, subsample
from broadcurate.subsample import InsufficientPool, Subsample, SubsampleSpec


def manifests(n=12000, extra=600, dup_fraction=0.01):
    ids = [f"c{i:06d}" for i in range(n + extra)]
    base = Subsample(SubsampleSpec("base", n, 0), ids[:n])
    dups = subsample.build_duplicates(base, dup_fraction, 10, seed=1)
    return ids, base, dups


SMALL = mia.SplitSizes(132, 132, 120, 120, 120)


def test_scaled_splits_satisfy_invariants():
    ids, base, dups = manifests()
    s = mia.build_splits(base, dups, ids, seed=3, sizes=SMALL)
    assert mia.check_splits(s, base, dups) == []
    assert [len(v) for v in s.sets().values()] == [132, 132, 120, 120, 120]


def test_splits_are_seed_deterministic():
    ids, base, dups = manifests()
    a = mia.build_splits(base, dups, ids, seed=3, sizes=SMALL)
    assert a.sets() == mia.build_splits(base, dups, ids, seed=3, sizes=SMALL).sets()
    assert a.sets() != mia.build_splits(base, dups, ids, seed=4, sizes=SMALL).sets()


def test_default_sizes_hours():
    sizes = mia.SplitSizes()
    assert sizes.hours("train_members") + sizes.hours("train_nonmembers") == 22.0
    assert all(sizes.hours(n) == 10.0 for n in ("test_unseen", "test_once", "test_duplicated"))


def test_insufficient_duplicated_pool_is_named():
    ids, base, dups = manifests(n=11000)  # 110 ten-fold ids
    with pytest.raises(InsufficientPool, match="test_duplicated"):
        mia.build_splits(base, dups, ids, seed=0, sizes=SMALL)


def test_check_splits_catches_overlap():
    ids, base, dups = manifests()
    s = mia.build_splits(base, dups, ids, seed=0, sizes=SMALL)
    s.test_unseen[0] = s.train_nonmembers[0]
    assert any("overlap" in p for p in mia.check_splits(s, base, dups))


def test_splits_file_round_trip(tmp_path):
    ids, base, dups = manifests()
    s = mia.build_splits(base, dups, ids, seed=0, sizes=SMALL)
    s.save(tmp_path / "s.json")
    assert mia.MiaSplits.load(tmp_path / "s.json").sets() == s.sets()


# --- probe ---------------------------------------------------------------------

def probe(n_layers=3, d=5, seed=0):
    return mia.ProbeModel.init(n_layers, d, frameseg.TrainConfig(hidden=8, seed=seed))


def test_equal_weights_identical_layers_reduce_to_one_layer():
    m = probe()
    layer = np.random.default_rng(0).normal(size=(6, 5))
    stack = np.stack([layer] * 3)
    single = m.head.predict(layer.mean(axis=0)[None, :])[0]
    assert mia.probe_forward(m, stack) == pytest.approx(single)


def test_zero_mlp_output_scores_half():
    m = probe()
    m.head.params["W3"][:] = 0
    m.head.params["b3"][:] = 0
    assert mia.probe_forward(m, np.ones((3, 4, 5))) == 0.5


def test_one_hot_weights_match_single_layer():
    m = probe()
    stack = np.random.default_rng(1).normal(size=(3, 6, 5))
    m.layer_weights = np.array([-mia.ONE_HOT_LOGIT, mia.ONE_HOT_LOGIT, -mia.ONE_HOT_LOGIT])
    single = m.head.predict(stack[1].mean(axis=0)[None, :])[0]
    assert mia.probe_forward(m, stack) == pytest.approx(single, abs=1e-6)


def test_softmax_shift_invariance():
    m = probe()
    m.layer_weights = np.array([0.3, -1.0, 2.0])
    stack = np.random.default_rng(2).normal(size=(3, 6, 5))
    a = mia.probe_forward(m, stack)
    m.layer_weights = m.layer_weights + 17.0
    assert mia.probe_forward(m, stack) == pytest.approx(a, abs=1e-12)
    assert mia.softmax(m.layer_weights).sum() == pytest.approx(1.0)


def test_layer_count_mismatch():
    with pytest.raises(mia.LayerCountMismatch):
        mia.probe_forward(probe(), np.zeros((2, 4, 5)))


def test_layer_weight_gradient():
    m = probe()
    m.layer_weights = np.array([0.2, -0.4, 0.1])
    rng = np.random.default_rng(0)
    xs = [rng.normal(size=(3, 5)) for _ in range(8)]
    ys = [np.array([float(i % 2)]) for i in range(8)]
    _, g = m.batch_loss_and_grad(xs, ys, np.random.default_rng(9))
    eps = 1e-6
    for j in range(3):
        vals = []
        for sgn in (1, -1):
            w = m.layer_weights.copy()
            w[j] += sgn * eps
            other = mia.ProbeModel(w, m.head.copy())
            vals.append(other.batch_loss_and_grad(xs, ys, np.random.default_rng(9))[0])
        assert g["w"][j] == pytest.approx((vals[0] - vals[1]) / (2 * eps), rel=1e-4, abs=1e-10)


def test_feature_seq_stack_round_trip():
    stack = np.random.default_rng(0).normal(size=(4, 3, 2))
    f = mia.to_feature_seq("x", stack)
    assert f.D == 8 and len(f.layer_tags) == 4
    assert np.array_equal(mia.layer_stack(f), stack)


# --- attack --------------------------------------------------------------------

def test_constant_scorer_gives_chance():
    ids, base, dups = manifests()
    s = mia.build_splits(base, dups, ids, seed=0, sizes=SMALL)
    feats = {sid: np.zeros((1, 1, 1)) for ids_ in s.sets().values() for sid in ids_}
    rep = mia.run_attack(lambda stack: 0.7, s, feats)
    assert rep.auc["n=0|1"] == 0.5 and rep.auc["n=0|10"] == 0.5


def test_missing_features():
    ids, base, dups = manifests()
    s = mia.build_splits(base, dups, ids, seed=0, sizes=SMALL)
    with pytest.raises(mia.MissingFeatures):
        mia.run_attack(lambda stack: 0.5, s, {})


def test_planted_features_shift_with_multiplicity():
    cfg = mia.PlantConfig(delta=0.5, t_frames=400)
    u = mia.planted_direction(cfg)
    proj = [mia.planted_features("x", m, cfg).mean(axis=(0, 1)) @ u for m in (0, 1, 10)]
    assert proj[0] < proj[1] < proj[2]
    assert np.array_equal(mia.planted_features("x", 1, cfg), mia.planted_features("x", 1, cfg))


def test_probe_file_round_trip(tmp_path):
    m = probe()
    m.layer_weights = np.array([0.1, 0.2, 0.3])
    mia.save_probe(m, tmp_path / "p.npz")
    stack = np.random.default_rng(0).normal(size=(3, 4, 5))
    assert mia.probe_forward(mia.load_probe(tmp_path / "p.npz"), stack) == mia.probe_forward(m, stack)
