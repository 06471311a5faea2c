"""Set, regression, direction and ranking metrics."""

from __future__ import annotations

import math
from enum import Enum
from typing import Hashable, Iterable, Mapping, Sequence

from ..errors import IdMismatch, LengthMismatch

STABLE_BAND = 0.05


class Direction(str, Enum):
    INC = "inc"
    DEC = "dec"
    STABLE = "stable"


def canonical_item(item: str) -> str:
    """Lowercase and trim; CVE and ATT&CK ids keep their exact form."""
    s = " ".join(str(item).split())
    upper = s.upper()
    if upper.startswith("CVE-") or (upper.startswith("T") and upper[1:5].isdigit()):
        return upper
    return s.lower()


def f1_set(predicted: Iterable[Hashable], reference: Iterable[Hashable]) -> float:
    pred, ref = set(predicted), set(reference)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    hits = len(pred & ref)
    if hits == 0:
        return 0.0
    precision, recall = hits / len(pred), hits / len(ref)
    return 2 * precision * recall / (precision + recall)


def rmse(pred: Sequence[float], ref: Sequence[float]) -> float:
    if len(pred) != len(ref) or not pred:
        raise LengthMismatch(f"rmse needs equal non-empty lengths, got {len(pred)} and {len(ref)}")
    return math.sqrt(sum((p - r) ** 2 for p, r in zip(pred, ref)) / len(pred))


def direction(before: float, after: float, eps: float = STABLE_BAND) -> Direction:
    """Label a change; within ``eps`` relative to ``before`` counts as stable."""
    delta = after - before
    if abs(delta) <= eps * abs(before):
        return Direction.STABLE
    return Direction.INC if delta > 0 else Direction.DEC


def directions(series: Sequence[float], eps: float = STABLE_BAND) -> list[Direction]:
    return [direction(a, b, eps) for a, b in zip(series, series[1:])]


def dir_acc(pred_dirs: Sequence[Direction], ref_dirs: Sequence[Direction]) -> float:
    if len(pred_dirs) != len(ref_dirs):
        raise LengthMismatch(f"dir_acc needs equal lengths, got {len(pred_dirs)} and {len(ref_dirs)}")
    if not pred_dirs:
        return 1.0
    return sum(Direction(p) is Direction(r) for p, r in zip(pred_dirs, ref_dirs)) / len(pred_dirs)


def _dcg(grades: Sequence[float]) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(grades))


def ndcg_at_k(ranking: Sequence[Hashable], relevance: Mapping[Hashable, float], k: int = 5) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    if any(g < 0 for g in relevance.values()):
        raise ValueError("relevance grades must be non-negative")
    ideal = _dcg(sorted(relevance.values(), reverse=True)[:k])
    if ideal == 0:
        return 1.0
    return _dcg([relevance.get(x, 0.0) for x in ranking[:k]]) / ideal


def kendall_tau(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    if len(set(a)) != len(a) or len(set(b)) != len(b) or set(a) != set(b):
        raise IdMismatch("kendall_tau needs two duplicate-free rankings over the same ids")
    n = len(a)
    if n < 2:
        return 1.0
    pos = {x: i for i, x in enumerate(b)}
    ranks = [pos[x] for x in a]
    score = 0
    for i in range(n):
        for j in range(i + 1, n):
            score += 1 if ranks[i] < ranks[j] else -1
    return score / (n * (n - 1) / 2)
