"""Frame-level binary heads (VAD, music detection) over precomputed encoder
features, plus Viterbi smoothing.

The head is a small numpy MLP with hand-written backprop:
Linear -> BatchNorm -> ReLU -> Dropout, twice, then Linear -> Sigmoid.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

FRAME_RATE = 50
BN_EPS = 1e-5
CLAMP = 1e-6
FEATURE_MAGIC = b"FSQ1"
LABEL_MAGIC = b"LBL1"
DEFAULT_LAYERS = ("cnn", "transformer1")


class FramesegError(ValueError):
    pass


class DimensionMismatch(FramesegError):
    pass


class EmptySplit(FramesegError):
    pass


class NonFiniteLoss(FramesegError):
    pass


class FormatError(FramesegError):
    pass


@dataclass
class FeatureSeq:
    frames: np.ndarray
    chunk_id: str = ""
    layer_tags: tuple = DEFAULT_LAYERS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] == 0:
            raise DimensionMismatch(f"frames must be T x D with D > 0, got {self.frames.shape}")
        self.layer_tags = tuple(self.layer_tags)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_s(self) -> float:
        return self.T / FRAME_RATE


def n_frames(duration_s: float) -> int:
    return int(round(duration_s * FRAME_RATE))


# --- model ---------------------------------------------------------------------

_ORDER = ("W1", "b1", "g1", "be1", "W2", "b2", "g2", "be2", "W3", "b3")


@dataclass
class HeadModel:
    params: dict
    running: dict
    dropout_p: float = 0.1
    momentum: float = 0.1

    @classmethod
    def init(cls, d_in: int, hidden: int = 256, dropout_p: float = 0.1, seed: int = 0) -> "HeadModel":
        rng = np.random.default_rng(seed)

        def he(fan_in, fan_out):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))

        params = {
            "W1": he(d_in, hidden), "b1": np.zeros(hidden), "g1": np.ones(hidden), "be1": np.zeros(hidden),
            "W2": he(hidden, hidden), "b2": np.zeros(hidden), "g2": np.ones(hidden), "be2": np.zeros(hidden),
            "W3": rng.normal(0.0, np.sqrt(1.0 / hidden), (hidden, 1)), "b3": np.zeros(1),
        }
        running = {"m1": np.zeros(hidden), "v1": np.ones(hidden), "m2": np.zeros(hidden), "v2": np.ones(hidden)}
        return cls(params, running, dropout_p)

    @property
    def d_in(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[1]

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self) -> "HeadModel":
        return HeadModel({k: v.copy() for k, v in self.params.items()},
                         {k: v.copy() for k, v in self.running.items()}, self.dropout_p, self.momentum)

    def dropout_masks(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        keep = 1.0 - self.dropout_p
        return tuple((rng.random((n, self.hidden)) < keep) / keep for _ in range(2))

    # forward/backward over a (N, D) matrix

    def _forward(self, x, train: bool, masks=None, update_running: bool = False):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionMismatch(f"expected (N, {self.d_in}) input, got {x.shape}")
        p, cache = self.params, {"x": x}
        h = x
        for k in (1, 2):
            z = h @ p[f"W{k}"] + p[f"b{k}"]
            if train:
                mu, var = z.mean(axis=0), z.var(axis=0)
                if update_running:
                    m = self.momentum
                    self.running[f"m{k}"] = (1 - m) * self.running[f"m{k}"] + m * mu
                    self.running[f"v{k}"] = (1 - m) * self.running[f"v{k}"] + m * var
            else:
                mu, var = self.running[f"m{k}"], self.running[f"v{k}"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            a = np.maximum(p[f"g{k}"] * zhat + p[f"be{k}"], 0.0)
            if train and masks is not None:
                a = a * masks[k - 1]
            cache[k] = (h, zhat, inv, a)
            h = a
        logit = (h @ p["W3"] + p["b3"])[:, 0]
        cache["h2"] = h
        return logit, cache

    def loss_and_grad(self, x, y, masks=None, update_running: bool = False):
        """Mean binary cross-entropy and its gradient (train-mode batch norm).

        Also returns the gradient with respect to the input as ``grads["x"]``.
        """
        y = np.asarray(y, dtype=np.float64)
        logit, cache = self._forward(x, True, masks, update_running)
        loss = bce_with_logits(logit, y)
        n = len(y)
        p = self.params
        g = {}
        dlogit = (sigmoid(logit) - y)[:, None] / n
        g["W3"] = cache["h2"].T @ dlogit
        g["b3"] = dlogit.sum(axis=0)
        da = dlogit @ p["W3"].T
        for k in (2, 1):
            h_in, zhat, inv, a = cache[k]
            if masks is not None:
                da = da * masks[k - 1]
            dpre = da * (a > 0)
            g[f"g{k}"] = np.sum(dpre * zhat, axis=0)
            g[f"be{k}"] = dpre.sum(axis=0)
            dzhat = dpre * p[f"g{k}"]
            dz = inv * (dzhat - dzhat.mean(axis=0) - zhat * np.mean(dzhat * zhat, axis=0))
            g[f"W{k}"] = h_in.T @ dz
            g[f"b{k}"] = dz.sum(axis=0)
            da = dz @ p[f"W{k}"].T
        g["x"] = da
        return loss, g

    def predict(self, x) -> np.ndarray:
        logit, _ = self._forward(np.asarray(x, dtype=np.float64), False)
        return sigmoid(logit)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce_with_logits(logit, y) -> float:
    return float(np.mean(np.maximum(logit, 0) - logit * y + np.log1p(np.exp(-np.abs(logit)))))


def head_forward(m: HeadModel, f, mode: str = "eval", seed: int = 0) -> np.ndarray:
    """Per-frame posteriors. Train mode uses batch statistics and a seeded dropout mask."""
    x = f.frames if isinstance(f, FeatureSeq) else np.asarray(f, dtype=np.float64)
    if mode == "eval":
        return m.predict(x)
    if mode != "train":
        raise ValueError("mode must be 'train' or 'eval'")
    logit, _ = m._forward(x, True, m.dropout_masks(len(x), np.random.default_rng(seed)))
    return sigmoid(logit)


# --- training ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    dropout_p: float = 0.1
    hidden: int = 256
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if k != "seed" and not v > 0:
                raise ValueError(f"{k} must be positive")
        if not self.dropout_p < 1:
            raise ValueError("dropout_p must be < 1")


class Adam:
    def __init__(self, params: dict, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            mhat = self.m[k] / (1 - self.b1 ** self.t)
            vhat = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    model: object
    curve: list = field(default_factory=list)
    best_epoch: int = 0


def fit(model, train_items, dev_items, cfg: TrainConfig, log: Callable | None = None) -> TrainResult:
    """Mini-batch Adam with dev-loss early stopping; returns the dev-best copy.

    ``model`` exposes ``params``, ``copy()``, ``batch_loss_and_grad(xs, ys, rng)``
    and ``dev_loss(xs, ys)``. Items are ``(x, y)`` pairs; a batch is
    ``cfg.batch_size`` items in a seeded order.
    """
    if not train_items or not dev_items:
        raise EmptySplit("train and dev splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate)
    dev_x, dev_y = [x for x, _ in dev_items], [y for _, y in dev_items]
    best, best_loss, best_epoch, curve, stale = model.copy(), np.inf, 0, [], 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_items))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            batch = [train_items[i] for i in order[s:s + cfg.batch_size]]
            loss, grads = model.batch_loss_and_grad([x for x, _ in batch], [y for _, y in batch], rng)
            if loss is None:
                continue
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}: loss {loss}")
            opt.step(model.params, grads)
            losses.append(loss)
        dev = model.dev_loss(dev_x, dev_y)
        if not np.isfinite(dev):
            raise NonFiniteLoss(f"epoch {epoch}: dev loss {dev}")
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"),
               "dev_loss": float(dev)}
        curve.append(row)
        if log:
            log(row)
        if dev < best_loss:
            best, best_loss, best_epoch, stale = model.copy(), dev, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best, curve, best_epoch)


class FrameTrainable:
    """Adapter: a HeadModel trained on frames pooled from whole windows."""

    def __init__(self, head: HeadModel):
        self.head = head

    @property
    def params(self):
        return self.head.params

    def copy(self):
        return FrameTrainable(self.head.copy())

    def batch_loss_and_grad(self, xs, ys, rng):
        x = np.concatenate(xs)
        if len(x) < 2:
            return None, None
        return self.head.loss_and_grad(x, np.concatenate(ys), self.head.dropout_masks(len(x), rng),
                                       update_running=True)

    def dev_loss(self, xs, ys):
        logit, _ = self.head._forward(np.concatenate(xs), False)
        return bce_with_logits(logit, np.concatenate(ys).astype(np.float64))


def train_head(train, dev, cfg: TrainConfig = TrainConfig(), log: Callable | None = None) -> TrainResult:
    """``train``/``dev``: sequences of (FeatureSeq, labels) with one label per frame."""
    def items(data):
        out = []
        for f, y in data:
            y = np.asarray(y, dtype=np.float64)
            if len(y) != f.T:
                raise DimensionMismatch(f"{f.chunk_id}: {f.T} frames but {len(y)} labels")
            out.append((f.frames, y))
        return out

    train_items, dev_items = items(train), items(dev)
    if not train_items or not dev_items:
        raise EmptySplit("train and dev splits must be non-empty")
    head = HeadModel.init(train_items[0][0].shape[1], cfg.hidden, cfg.dropout_p, cfg.seed)
    res = fit(FrameTrainable(head), train_items, dev_items, cfg, log)
    return TrainResult(res.model.head, res.curve, res.best_epoch)


# --- gradient check ----------------------------------------------------------------

def corrupt_output_bias(grads: dict) -> dict:
    """Fault injection: a wrong output-bias gradient."""
    out = dict(grads)
    out["b3"] = grads["b3"] * 2.0 + 1.0
    return out


def grad_check(m: HeadModel, x, y, n_samples: int = 120, eps: float = 1e-5, seed: int = 0,
               fault: Callable | None = None, floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout masks are drawn once and held fixed; running statistics are not
    touched. Sampled coordinates always include the output bias.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    masks = m.dropout_masks(len(x), rng)
    _, grads = m.loss_and_grad(x, y, masks)
    if fault is not None:
        grads = fault(grads)
    sizes = np.array([m.params[k].size for k in _ORDER])
    picks = {("b3", 0)}
    flat = rng.choice(sizes.sum(), size=min(n_samples, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    for f in flat:
        k = int(np.searchsorted(bounds, f, side="right"))
        picks.add((_ORDER[k], int(f - (bounds[k] - sizes[k]))))
    worst = 0.0
    for name, i in sorted(picks):
        arr = m.params[name].reshape(-1)
        old = arr[i]
        arr[i] = old + eps
        lp, _ = m.loss_and_grad(x, y, masks)
        arr[i] = old - eps
        lm, _ = m.loss_and_grad(x, y, masks)
        arr[i] = old
        num = (lp - lm) / (2 * eps)
        ana = grads[name].reshape(-1)[i]
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return float(worst)


# --- smoothing -----------------------------------------------------------------

def viterbi_smooth(post, p_switch: float) -> np.ndarray:
    """Most likely path of a symmetric two-state chain; emissions are the
    posteriors (state 1) and their complement (state 0). Ties go to state 0."""
    if not 0 < p_switch <= 0.5:
        raise ValueError("p_switch must lie in (0, 0.5]")
    p = np.clip(np.asarray(post, dtype=np.float64), CLAMP, 1 - CLAMP)
    t_len = len(p)
    if t_len == 0:
        return np.zeros(0, dtype=np.int8)
    emit = np.log(np.stack([1 - p, p], axis=1))
    stay, switch = np.log1p(-p_switch), np.log(p_switch)
    score = emit[0].copy()
    back = np.zeros((t_len, 2), dtype=np.int8)
    for t in range(1, t_len):
        new = np.empty(2)
        for s in (0, 1):
            from0 = score[0] + (stay if s == 0 else switch)
            from1 = score[1] + (stay if s == 1 else switch)
            back[t, s] = 1 if from1 > from0 else 0
            new[s] = max(from0, from1) + emit[t, s]
        score = new
    path = np.empty(t_len, dtype=np.int8)
    path[-1] = 1 if score[1] > score[0] else 0
    for t in range(t_len - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def slice_for_eval(x, window_s: float = 30.0, overlap_s: float = 0.0) -> list:
    """Consecutive windows; a short remainder is kept as a shorter window.

    Works on FeatureSeq (50 Hz frames) and on AudioBuffer.
    """
    hop_s = window_s - overlap_s
    if hop_s <= 0:
        raise ValueError("overlap must be shorter than the window")
    if isinstance(x, FeatureSeq):
        rate, total = FRAME_RATE, x.T
    else:
        rate, total = x.sample_rate, len(x.samples)
    win, hop = int(round(window_s * rate)), int(round(hop_s * rate))
    out = []
    for k, start in enumerate(range(0, total, hop)):
        stop = min(start + win, total)
        if isinstance(x, FeatureSeq):
            out.append(FeatureSeq(x.frames[start:stop], f"{x.chunk_id}_w{k:03d}", x.layer_tags))
        else:
            out.append(type(x)(x.samples[start:stop].copy(), x.sample_rate))
        if stop == total:
            break
    return out


# --- file formats --------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _unpack_str(data: bytes, pos: int) -> tuple[str, int]:
    if pos + 4 > len(data):
        raise FormatError("truncated string length")
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + n > len(data):
        raise FormatError("truncated string")
    return data[pos:pos + n].decode("utf-8"), pos + n


def write_features(f: FeatureSeq, path) -> None:
    body = FEATURE_MAGIC + _pack_str(f.chunk_id) + struct.pack("<QQ", f.T, f.D)
    body += f.frames.astype("<f4").tobytes() + _pack_str(",".join(f.layer_tags))
    Path(path).write_bytes(body)


def read_features(path) -> FeatureSeq:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic")
    cid, pos = _unpack_str(data, 4)
    if pos + 16 > len(data):
        raise FormatError(f"{path}: truncated header")
    t_len, d = struct.unpack_from("<QQ", data, pos)
    pos += 16
    nbytes = 4 * t_len * d
    if pos + nbytes > len(data):
        raise FormatError(f"{path}: truncated frames")
    frames = np.frombuffer(data, dtype="<f4", count=t_len * d, offset=pos).reshape(t_len, d)
    tags, _ = _unpack_str(data, pos + nbytes)
    return FeatureSeq(frames.astype(np.float64), cid, tuple(t for t in tags.split(",") if t))


def write_labels(chunk_id: str, labels, path) -> None:
    lab = np.asarray(labels, dtype=np.uint8)
    if np.any(lab > 1):
        raise FormatError("labels must be 0/1")
    Path(path).write_bytes(LABEL_MAGIC + _pack_str(chunk_id) + struct.pack("<Q", len(lab)) + lab.tobytes())


def read_labels(path) -> tuple[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != LABEL_MAGIC:
        raise FormatError(f"{path}: bad magic")
    cid, pos = _unpack_str(data, 4)
    if pos + 8 > len(data):
        raise FormatError(f"{path}: truncated header")
    (t_len,) = struct.unpack_from("<Q", data, pos)
    lab = np.frombuffer(data, dtype=np.uint8, count=t_len, offset=pos + 8) if pos + 8 + t_len <= len(data) else None
    if lab is None:
        raise FormatError(f"{path}: truncated labels")
    return cid, lab.astype(np.int8)


def save_model(m: HeadModel, path) -> None:
    arrays = {f"p_{k}": v for k, v in m.params.items()}
    arrays.update({f"r_{k}": v for k, v in m.running.items()})
    with open(path, "wb") as fh:
        np.savez(fh, dropout_p=np.array(m.dropout_p), momentum=np.array(m.momentum), **arrays)


def load_model(path) -> HeadModel:
    with np.load(path) as z:
        params = {k[2:]: z[k].copy() for k in z.files if k.startswith("p_")}
        running = {k[2:]: z[k].copy() for k in z.files if k.startswith("r_")}
        return HeadModel(params, running, float(z["dropout_p"]), float(z["momentum"]))


# --- synthetic features ------------------------------------------------------------

def synthetic_features(labels, d: int = 16, seed: int = 0, separation: float = 4.0,
                       chunk_id: str = "") -> FeatureSeq:
    """Each class is a mixture of two Gaussian blobs; class means differ by
    ``separation`` along fixed random directions (shared across calls)."""
    labels = np.asarray(labels, dtype=np.int64)
    centers = np.random.default_rng(12345).normal(0, 1, (2, 2, d))
    centers *= separation / (2 * np.linalg.norm(centers, axis=2, keepdims=True))
    centers[1] *= -1
    rng = np.random.default_rng(seed)
    blob = rng.integers(0, 2, len(labels))
    x = centers[labels, blob] + rng.normal(0, 0.5, (len(labels), d))
    return FeatureSeq(x, chunk_id)


def synthetic_labels(t_len: int, seed: int, mean_run: float = 60.0) -> np.ndarray:
    """Alternating runs with geometric lengths."""
    rng = np.random.default_rng(seed)
    out = np.empty(t_len, dtype=np.int8)
    state, pos = int(rng.integers(0, 2)), 0
    while pos < t_len:
        run = int(rng.geometric(1.0 / mean_run))
        out[pos:pos + run] = state
        pos += run
        state ^= 1
    return out
