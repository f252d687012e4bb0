"""Evaluation metrics for overlapping community covers.

Per-pair F1 / Jaccard, the symmetric best-match (bi-matching) score over
two covers, the overlapping normalized mutual information (per-community
best-match conditional entropies over the binary confusion table, with the
no-match guard and max-entropy normalization), and the train/validation
overlap filter applied to detected communities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .graphs import Community


def f1_pair(a: Community, b: Community) -> float:
    """2|a & b| / (|a| + |b|)."""
    if not a or not b:
        raise ValueError("f1_pair: empty community")
    return 2.0 * len(a & b) / (len(a) + len(b))


def jaccard_pair(a: Community, b: Community) -> float:
    """|a & b| / |a | b|."""
    if not a or not b:
        raise ValueError("jaccard_pair: empty community")
    return len(a & b) / len(a | b)


_DELTAS = {"f1": f1_pair, "jaccard": jaccard_pair}


def bimatch(preds, truths, delta: str = "f1") -> float:
    """Symmetric best-match average between two covers.

    Mean over predictions of the best score against any truth, averaged
    with the mean over truths of the best score against any prediction.
    """
    preds, truths = list(preds), list(truths)
    if not preds or not truths:
        raise ValueError("bimatch: empty cover")
    score = _DELTAS[delta]
    fwd = sum(max(score(p, t) for t in truths) for p in preds) / len(preds)
    bwd = sum(max(score(p, t) for p in preds) for t in truths) / len(truths)
    return 0.5 * (fwd + bwd)


def _h(p: float) -> float:
    return -p * math.log2(p) if p > 0.0 else 0.0


def _cond_entropy(x: Community, y: Community, n: int) -> float | None:
    """H(x|y) from the 4-cell confusion table; None when the no-match guard
    rejects y as a candidate (off-diagonal cells dominate)."""
    p11 = len(x & y) / n
    p10 = len(x - y) / n
    p01 = len(y - x) / n
    p00 = 1.0 - p11 - p10 - p01
    if _h(p11) + _h(p00) < _h(p01) + _h(p10):
        return None
    joint = _h(p11) + _h(p10) + _h(p01) + _h(p00)
    return joint - (_h(p11 + p01) + _h(p10 + p00))


def _binary_entropy(size: int, n: int) -> float:
    p = size / n
    return _h(p) + _h(1.0 - p)


def _cover_cond_entropy(xs, ys, n: int) -> float:
    total = 0.0
    for x in xs:
        hx = _binary_entropy(len(x), n)
        candidates = [c for c in (_cond_entropy(x, y, n) for y in ys) if c is not None]
        total += min(candidates) if candidates else hx
    return total


def onmi(preds, truths) -> float:
    """Overlapping NMI of two covers, normalized by the larger cover entropy.

    The universe is the union of all member nodes. Mutual information is
    the symmetric average of both conditional directions, where each
    community is matched to the counterpart minimizing its conditional
    entropy (falling back to its own entropy when no counterpart passes
    the guard).
    """
    preds, truths = list(preds), list(truths)
    if not preds or not truths:
        raise ValueError("onmi: empty cover")
    universe: set[int] = set()
    for c in preds + truths:
        if not c:
            raise ValueError("onmi: empty community")
        universe.update(c)
    n = len(universe)
    h_x = sum(_binary_entropy(len(c), n) for c in preds)
    h_y = sum(_binary_entropy(len(c), n) for c in truths)
    denom = max(h_x, h_y)
    if denom == 0.0:
        # both covers are all-universe communities: identical up to multiplicity
        return 1.0
    h_x_given_y = _cover_cond_entropy(preds, truths, n)
    h_y_given_x = _cover_cond_entropy(truths, preds, n)
    info = 0.5 * ((h_x - h_x_given_y) + (h_y - h_y_given_x))
    return min(1.0, max(0.0, info / denom))


def filter_overlap(detected, reference, threshold: float = 0.5) -> list[Community]:
    """Drop detected communities overlapping a reference one too heavily.

    The overlap ratio is |c & r| / |c|; communities whose best ratio exceeds
    ``threshold`` are removed.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    kept = []
    for c in detected:
        ratio = max((len(c & r) / len(c) for r in reference), default=0.0)
        if ratio <= threshold:
            kept.append(c)
    return kept


@dataclass
class ScoreReport:
    """Cover-level scores plus the per-prediction best-match table."""

    f1: float
    jaccard: float
    onmi: float
    best_matches: list[tuple[int, int, float]]  # (pred idx, truth idx, pair F1)

    def rows(self) -> list[tuple[str, float]]:
        return [("f1", self.f1), ("jaccard", self.jaccard), ("onmi", self.onmi)]

    def as_text(self) -> str:
        return "".join(f"{k}: {v:.6f}\n" for k, v in self.rows())

    def as_tsv(self) -> str:
        return "".join(f"{k}\t{v:.6f}\n" for k, v in self.rows())


def score_report(preds, truths) -> ScoreReport:
    """Full evaluation of a predicted cover against ground truth."""
    preds, truths = list(preds), list(truths)
    best = []
    for i, p in enumerate(preds):
        j, val = max(((j, f1_pair(p, t)) for j, t in enumerate(truths)),
                     key=lambda it: (it[1], -it[0]))
        best.append((i, j, val))
    return ScoreReport(f1=bimatch(preds, truths, "f1"),
                       jaccard=bimatch(preds, truths, "jaccard"),
                       onmi=onmi(preds, truths),
                       best_matches=best)
