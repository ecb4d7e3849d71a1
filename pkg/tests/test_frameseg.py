import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from broadcurate import frameseg as F
from broadcurate.audio_io import AudioBuffer

from .oracles import brute_viterbi


def small_model(d=6, h=10, seed=0, dropout=0.1):
    return F.HeadModel.init(d, h, dropout, seed)


# --- forward -------------------------------------------------------------------

def test_zero_output_layer_gives_half():
    m = small_model()
    m.params["W3"][:] = 0
    m.params["b3"][:] = 0
    x = np.random.default_rng(0).normal(size=(7, 6))
    assert np.all(F.head_forward(m, x) == 0.5)


def test_eval_is_deterministic_and_in_range():
    m = small_model()
    x = np.random.default_rng(1).normal(size=(5, 6))
    a, b = F.head_forward(m, x), F.head_forward(m, x)
    assert a.shape == (5,) and np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))


def test_train_mode_uses_dropout():
    m = small_model(dropout=0.5)
    x = np.random.default_rng(1).normal(size=(20, 6))
    assert not np.array_equal(F.head_forward(m, x, "train", seed=0), F.head_forward(m, x, "train", seed=1))


def test_dimension_mismatch():
    with pytest.raises(F.DimensionMismatch):
        F.head_forward(small_model(), np.zeros((3, 5)))


def test_parameter_count():
    d, h = 6, 10
    m = small_model(d, h)
    assert m.n_params == d * h + h + 2 * h + h * h + h + 2 * h + h + 1


# --- gradients -----------------------------------------------------------------

def batch(seed=0, n=16, d=6):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.integers(0, 2, n)


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_passes(seed):
    x, y = batch(seed)
    assert F.grad_check(small_model(seed=seed), x, y, seed=seed) <= 1e-4


def test_grad_check_detects_corrupted_bias_gradient():
    x, y = batch()
    assert F.grad_check(small_model(), x, y, fault=F.corrupt_output_bias) > 1e-2


def test_zero_input_gives_zero_first_layer_gradient():
    _, y = batch()
    _, g = small_model().loss_and_grad(np.zeros((16, 6)), y)
    assert np.all(g["W1"] == 0)


def test_input_gradient_matches_finite_difference():
    m = small_model(dropout=0.0)
    x, y = batch(2)
    _, g = m.loss_and_grad(x, y)
    eps = 1e-6
    for i, j in [(0, 0), (3, 2), (15, 5)]:
        xp, xm = x.copy(), x.copy()
        xp[i, j] += eps
        xm[i, j] -= eps
        num = (m.loss_and_grad(xp, y)[0] - m.loss_and_grad(xm, y)[0]) / (2 * eps)
        assert g["x"][i, j] == pytest.approx(num, rel=1e-4, abs=1e-9)


# --- training ------------------------------------------------------------------

def labeled(n, t_len=300, offset=0):
    out = []
    for i in range(offset, offset + n):
        lab = F.synthetic_labels(t_len, i)
        out.append((F.synthetic_features(lab, 16, seed=i), lab))
    return out


def test_separable_blobs_reach_high_dev_accuracy():
    res = F.train_head(labeled(10), labeled(2, offset=100), F.TrainConfig(max_epochs=50, batch_size=4))
    acc = np.mean([np.mean((F.head_forward(res.model, f) > 0.5) == y) for f, y in labeled(2, offset=100)])
    assert acc >= 0.95
    assert len(res.curve) <= 50


def test_all_zero_labels_drive_posteriors_down():
    data = [(f, np.zeros_like(y)) for f, y in labeled(4)]
    res = F.train_head(data, data[:1], F.TrainConfig(max_epochs=50, batch_size=2))
    assert max(F.head_forward(res.model, f).max() for f, _ in data) < 0.1


def test_training_is_deterministic():
    cfg = F.TrainConfig(max_epochs=3, batch_size=2, hidden=8)
    a = F.train_head(labeled(3), labeled(1, offset=9), cfg)
    b = F.train_head(labeled(3), labeled(1, offset=9), cfg)
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])


def test_selected_checkpoint_is_dev_best():
    res = F.train_head(labeled(4), labeled(1, offset=20), F.TrainConfig(max_epochs=15, batch_size=2, hidden=16))
    best = res.curve[res.best_epoch - 1]["dev_loss"]
    assert all(best <= row["dev_loss"] for row in res.curve)


def test_empty_split_and_bad_labels():
    with pytest.raises(F.EmptySplit):
        F.train_head(labeled(2), [])
    f, y = labeled(1)[0]
    with pytest.raises(F.DimensionMismatch):
        F.train_head([(f, y[:-1])], [(f, y)])


def test_train_config_validation():
    with pytest.raises(ValueError):
        F.TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        F.TrainConfig(dropout_p=1.0)


# --- Viterbi -------------------------------------------------------------------

def test_viterbi_unanimous():
    assert np.all(F.viterbi_smooth([0.9] * 8, 0.01) == 1)


def test_viterbi_smooths_single_dip():
    assert np.all(F.viterbi_smooth([0.9] * 5 + [0.45] + [0.9] * 5, 0.01) == 1)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_viterbi_half_switch_is_argmax(post):
    p = np.clip(post, F.CLAMP, 1 - F.CLAMP)
    assert np.array_equal(F.viterbi_smooth(post, 0.5), (p > 0.5).astype(np.int8))


def test_viterbi_handles_exact_zero_and_one():
    assert list(F.viterbi_smooth([0.0, 1.0, 1.0, 0.0], 0.01)) in ([0, 1, 1, 0], [0, 0, 0, 0], [1, 1, 1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=9), st.sampled_from([0.01, 0.05, 0.2]))
def test_viterbi_matches_exhaustive(post, p_switch):
    assert np.array_equal(F.viterbi_smooth(post, p_switch), brute_viterbi(post, p_switch))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.01, 0.98), min_size=1, max_size=25), st.floats(0.0, 0.3),
       st.sampled_from([0.01, 0.05]))
def test_viterbi_posterior_monotone(post, bump, p_switch):
    before = F.viterbi_smooth(post, p_switch)
    after = F.viterbi_smooth(np.minimum(np.array(post) + bump, 0.99), p_switch)
    assert not np.any((before == 1) & (after == 0))


def test_viterbi_rejects_bad_switch():
    with pytest.raises(ValueError):
        F.viterbi_smooth([0.5], 0.0)


# --- slicing -------------------------------------------------------------------

@pytest.mark.parametrize("seconds, expected", [(90, [1500, 1500, 1500]), (75, [1500, 1500, 750])])
def test_slice_features(seconds, expected):
    f = F.FeatureSeq(np.zeros((F.n_frames(seconds), 3)), "c")
    wins = F.slice_for_eval(f)
    assert [w.T for w in wins] == expected
    assert sum(w.T for w in wins) == f.T


def test_slice_audio_keeps_remainder():
    buf = AudioBuffer(np.zeros(16000 * 75))
    assert [w.duration_seconds for w in F.slice_for_eval(buf)] == [30.0, 30.0, 15.0]


# --- files ---------------------------------------------------------------------

def test_feature_file_round_trip(tmp_path):
    f = F.FeatureSeq(np.random.default_rng(0).normal(size=(7, 4)).astype(np.float32), "chunk_é", ("cnn", "transformer1"))
    F.write_features(f, tmp_path / "a.fsq")
    g = F.read_features(tmp_path / "a.fsq")
    assert g.chunk_id == f.chunk_id and g.layer_tags == f.layer_tags
    assert np.array_equal(g.frames, f.frames)


def test_feature_file_layout(tmp_path):
    F.write_features(F.FeatureSeq(np.ones((2, 3)), "ab", ("x",)), tmp_path / "a.fsq")
    raw = (tmp_path / "a.fsq").read_bytes()
    assert raw[:4] == b"FSQ1" and raw[4:8] == b"\x02\x00\x00\x00" and raw[8:10] == b"ab"
    assert len(raw) == 4 + 4 + 2 + 16 + 2 * 3 * 4 + 4 + 1


def test_feature_file_truncated(tmp_path):
    F.write_features(F.FeatureSeq(np.ones((4, 3)), "ab"), tmp_path / "a.fsq")
    (tmp_path / "b.fsq").write_bytes((tmp_path / "a.fsq").read_bytes()[:30])
    with pytest.raises(F.FormatError):
        F.read_features(tmp_path / "b.fsq")


def test_label_file_round_trip(tmp_path):
    F.write_labels("c1", [0, 1, 1, 0], tmp_path / "c1.lbl")
    cid, lab = F.read_labels(tmp_path / "c1.lbl")
    assert cid == "c1" and list(lab) == [0, 1, 1, 0]
    with pytest.raises(F.FormatError):
        F.write_labels("c1", [0, 2], tmp_path / "bad.lbl")


def test_model_round_trip(tmp_path):
    m = small_model()
    F.save_model(m, tmp_path / "m.npz")
    x = np.random.default_rng(0).normal(size=(4, 6))
    assert np.array_equal(F.head_forward(F.load_model(tmp_path / "m.npz"), x), F.head_forward(m, x))
