"""Membership-inference harness: seen/unseen/duplicated splits, a layer-weighted
probe, and ROC scoring of the attack.

Real encoder features are out of reach at desk scale; ``planted_features``
supplies a labeled synthetic stand-in where membership leaves a small shift
proportional to pretraining multiplicity.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import frameseg, metrics
from .frameseg import FeatureSeq, HeadModel, TrainConfig
from .subsample import InsufficientPool, Subsample

SEGMENT_S = 30.0
SET_NAMES = ("train_members", "train_nonmembers", "test_unseen", "test_once", "test_duplicated")
ONE_HOT_LOGIT = 30.0


class MiaError(ValueError):
    pass


class LayerCountMismatch(MiaError):
    pass


class MissingFeatures(MiaError):
    pass


@dataclass(frozen=True)
class SplitSizes:
    train_members: int = 1320
    train_nonmembers: int = 1320
    test_unseen: int = 1200
    test_once: int = 1200
    test_duplicated: int = 1200

    def hours(self, name: str) -> float:
        return getattr(self, name) * SEGMENT_S / 3600.0

    def scaled(self, factor: float) -> "SplitSizes":
        return SplitSizes(*(int(round(getattr(self, n) * factor)) for n in SET_NAMES))


@dataclass
class MiaSplits:
    train_members: list
    train_nonmembers: list
    test_unseen: list
    test_once: list
    test_duplicated: list
    seed: int = 0

    def sets(self) -> dict:
        return {n: getattr(self, n) for n in SET_NAMES}

    def train_hours(self) -> float:
        return (len(self.train_members) + len(self.train_nonmembers)) * SEGMENT_S / 3600.0

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, **self.sets()}, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MiaSplits":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(*(list(doc[n]) for n in SET_NAMES), seed=int(doc.get("seed", 0)))


def build_splits(base: Subsample, duplicates: Subsample, candidate_pool, seed: int,
                 sizes: SplitSizes = SplitSizes(), dup_copies: int | None = None) -> MiaSplits:
    """Seeded disjoint selection.

    Members and once-seen ids occur exactly once in both pretraining lists;
    duplicated ids occur ``dup_copies`` times in the duplicates list; unseen
    and non-member ids come from ``candidate_pool`` minus both lists.
    """
    dup_copies = duplicates.spec.dup_copies if dup_copies is None else dup_copies
    mb, md = base.multiplicity(), duplicates.multiplicity()
    once_pool = sorted(sid for sid, c in mb.items() if c == 1 and md.get(sid) == 1)
    dup_pool = sorted(sid for sid, c in md.items() if c == dup_copies)
    seen = set(mb) | set(md)
    unseen_pool = sorted(set(candidate_pool) - seen)
    rng = np.random.default_rng(seed)

    def draw(pool, counts, names):
        need = sum(counts)
        if len(pool) < need:
            raise InsufficientPool(f"{'+'.join(names)}: need {need} ids, pool has {len(pool)}")
        perm = [pool[i] for i in rng.permutation(len(pool))[:need]]
        out, pos = [], 0
        for c in counts:
            out.append(sorted(perm[pos:pos + c]))
            pos += c
        return out

    members, once = draw(once_pool, [sizes.train_members, sizes.test_once], ["train_members", "test_once"])
    nonmembers, unseen = draw(unseen_pool, [sizes.train_nonmembers, sizes.test_unseen],
                              ["train_nonmembers", "test_unseen"])
    (duplicated,) = draw(dup_pool, [sizes.test_duplicated], ["test_duplicated"])
    return MiaSplits(members, nonmembers, unseen, once, duplicated, seed)


def check_splits(s: MiaSplits, base: Subsample, duplicates: Subsample, dup_copies: int | None = None) -> list[str]:
    """All violated invariants (empty when the splits are valid)."""
    dup_copies = duplicates.spec.dup_copies if dup_copies is None else dup_copies
    mb, md = base.multiplicity(), duplicates.multiplicity()
    problems = []
    sets = {n: set(v) for n, v in s.sets().items()}
    for n, v in s.sets().items():
        if len(set(v)) != len(v):
            problems.append(f"{n} has repeated ids")
    for i, a in enumerate(SET_NAMES):
        for b in SET_NAMES[i + 1:]:
            if sets[a] & sets[b]:
                problems.append(f"{a} and {b} overlap")
    for n in ("train_members", "test_once"):
        if any(mb.get(x) != 1 or md.get(x) != 1 for x in sets[n]):
            problems.append(f"{n} not seen exactly once in both lists")
    if any(md.get(x) != dup_copies for x in sets["test_duplicated"]):
        problems.append(f"test_duplicated not seen {dup_copies} times")
    for n in ("train_nonmembers", "test_unseen"):
        if any(x in mb or x in md for x in sets[n]):
            problems.append(f"{n} intersects a pretraining list")
    return problems


# --- probe -----------------------------------------------------------------------

def softmax(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    e = np.exp(w - w.max())
    return e / e.sum()


def layer_stack(f: FeatureSeq, n_layers: int | None = None) -> np.ndarray:
    """(L+1, T, D) view of a FeatureSeq whose columns concatenate the layers."""
    n_layers = len(f.layer_tags) if n_layers is None else n_layers
    if n_layers < 1 or f.D % n_layers:
        raise LayerCountMismatch(f"{f.D} columns do not split into {n_layers} layers")
    return f.frames.reshape(f.T, n_layers, f.D // n_layers).transpose(1, 0, 2)


def pooled_layers(stack) -> np.ndarray:
    """Per-layer time means, (L+1, D)."""
    return np.asarray(stack, dtype=np.float64).mean(axis=1)


@dataclass
class ProbeModel:
    layer_weights: np.ndarray
    head: HeadModel

    @classmethod
    def init(cls, n_layers: int, d: int, cfg: TrainConfig = TrainConfig()) -> "ProbeModel":
        return cls(np.zeros(n_layers), HeadModel.init(d, cfg.hidden, cfg.dropout_p, cfg.seed))

    @property
    def n_layers(self) -> int:
        return len(self.layer_weights)

    @property
    def params(self) -> dict:
        return {"w": self.layer_weights, **self.head.params}

    def copy(self) -> "ProbeModel":
        return ProbeModel(self.layer_weights.copy(), self.head.copy())

    def _pool(self, means) -> np.ndarray:
        means = np.asarray(means, dtype=np.float64)
        if means.shape[-2] != self.n_layers:
            raise LayerCountMismatch(f"probe has {self.n_layers} layer weights, input has {means.shape[-2]} layers")
        return np.einsum("l,...ld->...d", softmax(self.layer_weights), means)

    # trainer interface

    def batch_loss_and_grad(self, xs, ys, rng):
        means = np.stack(xs)
        if len(means) < 2:
            return None, None
        pooled = self._pool(means)
        loss, g = self.head.loss_and_grad(pooled, np.concatenate(ys), self.head.dropout_masks(len(pooled), rng),
                                          update_running=True)
        a = softmax(self.layer_weights)
        dpool_da = np.einsum("nd,nld->l", g.pop("x"), means)
        g["w"] = a * (dpool_da - np.dot(a, dpool_da))
        return loss, g

    def dev_loss(self, xs, ys):
        logit, _ = self.head._forward(self._pool(np.stack(xs)), False)
        return frameseg.bce_with_logits(logit, np.concatenate(ys).astype(np.float64))


def probe_forward(m: ProbeModel, features) -> float:
    """Membership score of one segment; ``features`` is an (L+1, T, D) stack or a FeatureSeq."""
    stack = layer_stack(features, m.n_layers) if isinstance(features, FeatureSeq) else np.asarray(features)
    if stack.ndim != 3:
        raise LayerCountMismatch("expected an (L+1, T, D) stack")
    if stack.shape[0] != m.n_layers:
        raise LayerCountMismatch(f"probe has {m.n_layers} layer weights, input has {stack.shape[0]} layers")
    return float(m.head.predict(m._pool(pooled_layers(stack))[None, :])[0])


def train_probe(splits: MiaSplits, features, cfg: TrainConfig = TrainConfig(), dev_fraction: float = 0.1,
                log=None) -> frameseg.TrainResult:
    """Members are positives, non-members negatives; a seeded ``dev_fraction``
    of each side is held out for early stopping."""
    rng = np.random.default_rng([cfg.seed, 1])
    train, dev = [], []
    for ids, label in ((splits.train_members, 1.0), (splits.train_nonmembers, 0.0)):
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_dev = max(1, int(round(dev_fraction * len(ids))))
        for k, sid in enumerate(ids):
            item = (pooled_layers(_get(features, sid)), np.array([label]))
            (dev if k < n_dev else train).append(item)
    n_layers, d = train[0][0].shape
    return frameseg.fit(ProbeModel.init(n_layers, d, cfg), train, dev, cfg, log)


def _get(features, sid):
    try:
        f = features[sid]
    except KeyError:
        raise MissingFeatures(f"no features for {sid}") from None
    return layer_stack(f) if isinstance(f, FeatureSeq) else f


COMPARISONS = {"n=0|1": ("test_unseen", "test_once"),
               "n=0|10": ("test_unseen", "test_duplicated"),
               "train": ("train_nonmembers", "train_members")}


@dataclass
class AttackReport:
    scores: dict = field(default_factory=dict)
    auc: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for name, s in self.scores.items():
            roc, auc = metrics.roc_auc(s)
            out[name] = {"auc": auc, "n_pos": s.n_pos, "n_neg": s.n_neg,
                         "roc": [[float(a), float(b)] for a, b in roc]}
        return out

    def to_text(self) -> str:
        return "".join(f"{name:8s} AUC {100 * auc:5.1f}%\n" for name, auc in self.auc.items())


def run_attack(m, splits: MiaSplits, features) -> AttackReport:
    """Score each comparison (members positive) and compute AUCs.

    ``m`` is a ProbeModel or any callable mapping an (L+1, T, D) stack to a score.
    """
    score = (lambda st: probe_forward(m, st)) if isinstance(m, ProbeModel) else m
    sets = splits.sets()
    report = AttackReport()
    for name, (neg, pos) in COMPARISONS.items():
        ids = list(sets[pos]) + list(sets[neg])
        vals = [score(_get(features, sid)) for sid in ids]
        s = metrics.ScoreSet(np.array(vals), np.array([True] * len(sets[pos]) + [False] * len(sets[neg])), ids)
        report.scores[name] = s
        report.auc[name] = metrics.roc_auc(s)[1]
    return report


# --- planted-signal features -------------------------------------------------------

@dataclass(frozen=True)
class PlantConfig:
    n_layers: int = 4
    t_frames: int = 8
    dim: int = 16
    delta: float = 0.03
    seed: int = 0


def _id_seed(sid: str, seed: int) -> list[int]:
    h = hashlib.sha256(sid.encode("utf-8")).digest()
    return [seed, int.from_bytes(h[:8], "little")]


def planted_direction(cfg: PlantConfig) -> np.ndarray:
    u = np.random.default_rng([cfg.seed, 7]).normal(size=cfg.dim)
    return u / np.linalg.norm(u)


def planted_features(sid: str, multiplicity: int, cfg: PlantConfig = PlantConfig()) -> np.ndarray:
    """(L+1, T, D) Gaussian noise shifted by ``delta * multiplicity`` along a
    fixed unit direction in every layer."""
    rng = np.random.default_rng(_id_seed(sid, cfg.seed))
    x = rng.normal(size=(cfg.n_layers, cfg.t_frames, cfg.dim))
    return x + cfg.delta * multiplicity * planted_direction(cfg)


def planted_feature_map(splits: MiaSplits, duplicates: Subsample, cfg: PlantConfig = PlantConfig()) -> dict:
    md = duplicates.multiplicity()
    out = {}
    for ids in splits.sets().values():
        for sid in ids:
            out[sid] = planted_features(sid, md.get(sid, 0), cfg)
    return out


def to_feature_seq(sid: str, stack: np.ndarray) -> FeatureSeq:
    n_layers, t_len, d = stack.shape
    tags = ["cnn"] + [f"transformer{i}" for i in range(1, n_layers)]
    return FeatureSeq(stack.transpose(1, 0, 2).reshape(t_len, n_layers * d), sid, tags)


def save_probe(m: ProbeModel, path) -> None:
    arrays = {f"p_{k}": v for k, v in m.head.params.items()}
    arrays.update({f"r_{k}": v for k, v in m.head.running.items()})
    with open(path, "wb") as fh:
        np.savez(fh, layer_weights=m.layer_weights, dropout_p=np.array(m.head.dropout_p), **arrays)


def load_probe(path) -> ProbeModel:
    with np.load(path) as z:
        head = HeadModel({k[2:]: z[k].copy() for k in z.files if k.startswith("p_")},
                         {k[2:]: z[k].copy() for k in z.files if k.startswith("r_")}, float(z["dropout_p"]))
        return ProbeModel(z["layer_weights"].copy(), head)


def plant_config_dict(cfg: PlantConfig) -> dict:
    return asdict(cfg)
