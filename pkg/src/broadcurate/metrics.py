"""Evaluation metrics: WER, gendered relative WER gap, frame scores, bootstrap
intervals and detection metrics (ROC/AUC, EER, minDCF)."""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


class EmptyReference(MetricError):
    pass


class BothZero(MetricError):
    pass


class LengthMismatch(MetricError):
    pass


class EmptyInput(MetricError):
    pass


class SingleClass(MetricError):
    pass


# --- WER ---------------------------------------------------------------------------

def tokenize(text: str, lowercase: bool = True, strip_punct: bool = True) -> list[str]:
    if lowercase:
        text = text.lower()
    if strip_punct:
        text = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)
    return text.split()


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_len


def wer(ref: Sequence[str], hyp: Sequence[str]) -> WerBreakdown:
    """Unit-cost Levenshtein alignment; counts come from one optimal path."""
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise EmptyReference("reference has no tokens")
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                          d[i - 1, j] + 1, d[i, j - 1] + 1)
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerBreakdown(int(s), dl, ins, n)


def corpus_wer(pairs) -> WerBreakdown:
    parts = [wer(r, h) for r, h in pairs]
    return WerBreakdown(sum(p.substitutions for p in parts), sum(p.deletions for p in parts),
                        sum(p.insertions for p in parts), sum(p.ref_len for p in parts))


def delta_rel(wer_f: float, wer_m: float) -> float:
    """Relative female-vs-male WER gap in percent; positive means the system
    does better on male speech."""
    if wer_f + wer_m <= 0:
        raise BothZero("both WERs are zero")
    return 100.0 * (wer_f - wer_m) / (0.5 * (wer_f + wer_m))


@dataclass(frozen=True)
class GenderWerReport:
    wer_male: float
    wer_female: float

    @property
    def delta_rel(self) -> float:
        return delta_rel(self.wer_female, self.wer_male)


# --- frame metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class FrameScores:
    accuracy: float
    f1: float
    precision: float
    recall: float


def frame_metrics(pred, gold) -> FrameScores:
    pred = np.asarray(pred).astype(bool)
    gold = np.asarray(gold).astype(bool)
    if pred.shape != gold.shape:
        raise LengthMismatch(f"{pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise EmptyInput("no frames")
    tp = int(np.sum(pred & gold))
    fp = int(np.sum(pred & ~gold))
    fn = int(np.sum(~pred & gold))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return FrameScores(float(np.mean(pred == gold)), f1, precision, recall)


# --- bootstrap ---------------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 1000
    confidence: float = 97.5
    seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 1:
            raise ValueError("n_resamples must be >= 1")
        if not 0 < self.confidence < 100:
            raise ValueError("confidence must lie in (0, 100)")


def weighted_mean(values, weights=None) -> float:
    values = np.asarray(values, dtype=np.float64)
    if weights is None:
        return float(values.mean())
    return float(np.sum(values * weights) / np.sum(weights))


def bootstrap_ci(values, statistic: Callable = weighted_mean, cfg: BootstrapConfig = BootstrapConfig(),
                 weights=None) -> tuple[float, float]:
    """Percentile interval of ``statistic`` over item-level resamples.

    ``values`` (and ``weights``) are indexed along axis 0 by evaluation item.
    Resample ``b`` draws from its own generator seeded with ``(seed, b)``.
    """
    values = np.asarray(values)
    n = len(values)
    if n == 0:
        raise EmptyInput("bootstrap needs at least one item")
    if weights is not None:
        weights = np.asarray(weights)
        if len(weights) != n:
            raise LengthMismatch("weights and values differ in length")
    stats = np.empty(cfg.n_resamples)
    for b in range(cfg.n_resamples):
        idx = np.random.default_rng([cfg.seed, b]).integers(0, n, size=n)
        stats[b] = statistic(values[idx]) if weights is None else statistic(values[idx], weights[idx])
    tail = (100.0 - cfg.confidence) / 2
    low, high = np.percentile(stats, [tail, 100.0 - tail])
    return float(low), float(high)


def ci_halfwidth(ci: tuple[float, float]) -> float:
    return (ci[1] - ci[0]) / 2


def format_ci(value: float, ci: tuple[float, float], digits: int = 1) -> str:
    return f"{value:.{digits}f} ±{ci_halfwidth(ci):.{digits}f}"


# --- detection scores --------------------------------------------------------------

@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    trial_ids: list | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(bool)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise LengthMismatch("scores and labels must be equal-length vectors")

    @classmethod
    def from_groups(cls, positive, negative) -> "ScoreSet":
        positive, negative = list(positive), list(negative)
        return cls(np.array(positive + negative, dtype=np.float64),
                   np.array([True] * len(positive) + [False] * len(negative)))

    def require_both(self) -> None:
        if self.labels.all() or not self.labels.any():
            raise SingleClass("score set needs positive and negative trials")

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int((~self.labels).sum())


_POSITIVE = {"1", "target", "tgt", "positive", "pos", "member", "true"}
_NEGATIVE = {"0", "nontarget", "non-target", "imposter", "impostor", "negative", "neg", "nonmember", "false"}


def read_scores(path) -> ScoreSet:
    ids, scores, labels = [], [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MetricError(f"{path}:{lineno}: expected 'trial_id score label'")
        lab = parts[2].lower()
        if lab not in _POSITIVE | _NEGATIVE:
            raise MetricError(f"{path}:{lineno}: unknown label {parts[2]!r}")
        ids.append(parts[0])
        scores.append(float(parts[1]))
        labels.append(lab in _POSITIVE)
    return ScoreSet(np.array(scores), np.array(labels, dtype=bool), ids)


def write_scores(s: ScoreSet, path) -> None:
    ids = s.trial_ids or [f"t{i:06d}" for i in range(len(s.scores))]
    Path(path).write_text("".join(f"{t} {float(v)!r} {'target' if l else 'nontarget'}\n"
                                  for t, v, l in zip(ids, s.scores, s.labels)), encoding="utf-8")


def operating_points(s: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, P_fa, P_miss), accepting ``score >= threshold``.

    The first point rejects everything (threshold +inf), the last accepts
    everything; one point per distinct score in between.
    """
    s.require_both()
    order = np.argsort(-s.scores, kind="stable")
    sc, lab = s.scores[order], s.labels[order]
    last = np.append(sc[1:] != sc[:-1], True)
    tp = np.cumsum(lab)[last]
    fp = np.cumsum(~lab)[last]
    thresholds = np.concatenate([[np.inf], sc[last]])
    p_fa = np.concatenate([[0.0], fp / s.n_neg])
    p_miss = np.concatenate([[1.0], 1.0 - tp / s.n_pos])
    return thresholds, p_fa, p_miss


def roc_auc(s: ScoreSet) -> tuple[np.ndarray, float]:
    """ROC points as an (k, 2) array of (false-positive rate, true-positive rate)
    and the Mann-Whitney AUC (ties count one half)."""
    _, p_fa, p_miss = operating_points(s)
    ranks = rankdata(s.scores)
    u = ranks[s.labels].sum() - s.n_pos * (s.n_pos + 1) / 2
    return np.column_stack([p_fa, 1.0 - p_miss]), float(u / (s.n_pos * s.n_neg))


def eer(s: ScoreSet) -> float:
    """Equal error rate in percent, interpolated linearly between the two
    operating points that bracket P_fa = P_miss."""
    _, p_fa, p_miss = operating_points(s)
    k = int(np.argmax(p_fa >= p_miss))
    if p_fa[k] == p_miss[k] or k == 0:
        return 100.0 * float(p_fa[k])
    a0, a1 = p_fa[k - 1], p_fa[k]
    r0, r1 = p_miss[k - 1], p_miss[k]
    t = (r0 - a0) / ((r0 - a0) - (r1 - a1))
    return 100.0 * float(a0 + t * (a1 - a0))


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.01
    c_fa: float = 1.0
    c_miss: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_target < 1 or self.c_fa <= 0 or self.c_miss <= 0:
            raise ValueError("need 0 < p_target < 1 and positive costs")


DCF1 = DcfParams(0.01)
DCF5 = DcfParams(0.05)


def min_dcf(s: ScoreSet, p: DcfParams = DCF1) -> float:
    """Normalized minimum detection cost."""
    _, p_fa, p_miss = operating_points(s)
    cost = p.c_miss * p.p_target * p_miss + p.c_fa * (1 - p.p_target) * p_fa
    norm = min(p.c_miss * p.p_target, p.c_fa * (1 - p.p_target))
    return float(cost.min() / norm)


def verification_report(s: ScoreSet) -> dict:
    _, auc = roc_auc(s)
    return {"eer": eer(s), "min_dcf1": min_dcf(s, DCF1), "min_dcf5": min_dcf(s, DCF5),
            "auc": auc, "n_target": s.n_pos, "n_nontarget": s.n_neg}
