"""Ranking metrics and score summaries for premise selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "EmptyPositives",
    "ZeroVariance",
    "rank_candidates",
    "average_precision",
    "r_precision",
    "expected_random_average_precision",
    "standardize_scores",
    "mean_ci",
    "HoleRanking",
    "RankingReport",
]


class EmptyPositives(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


def rank_candidates(scores: Sequence[float], ordinals: Sequence[int] | None = None) -> list[int]:
    """Candidate ordinals by descending score; ties go to the smaller ordinal."""
    scores = np.asarray(scores, dtype=np.float64)
    ordinals = np.arange(len(scores)) if ordinals is None else np.asarray(ordinals)
    return [int(o) for o in ordinals[np.lexsort((ordinals, -scores))]]


def _check(ranking: Sequence[int], positives: Iterable[int]) -> set[int]:
    positives = set(positives)
    if not positives:
        raise EmptyPositives("no relevant candidates")
    if not positives <= set(ranking):
        raise ValueError("positives must be among the ranked candidates")
    return positives


def average_precision(ranking: Sequence[int], positives: Iterable[int]) -> float:
    """Mean of precision@k over the ranks k holding a positive.

    Summed in exact rationals and rounded once, so the result does not depend
    on summation order.
    """
    positives = _check(ranking, positives)
    hits = 0
    total = Fraction(0)
    for k, c in enumerate(ranking, start=1):
        if c in positives:
            hits += 1
            total += Fraction(hits, k)
    return float(total / len(positives))


def r_precision(ranking: Sequence[int], positives: Iterable[int]) -> float:
    positives = _check(ranking, positives)
    r = len(positives)
    return float(Fraction(len(positives.intersection(ranking[:r])), r))


def expected_random_average_precision(n: int, r: int) -> float:
    """Expected AveP of a uniformly random ranking of ``n`` items with ``r`` relevant.

    A positive at rank k has on average ``(k-1)(r-1)/(n-1)`` positives above
    it, giving ``(H_n + (r-1)/(n-1) (n - H_n)) / n``.
    """
    if not 0 < r <= n:
        raise ValueError("need 0 < r <= n")
    harmonic = sum(1 / k for k in range(1, n + 1))
    if n == 1:
        return 1.0
    return (harmonic + (r - 1) / (n - 1) * (n - harmonic)) / n


def standardize_scores(scores: Sequence[float], labels: Sequence[bool]) -> dict:
    """z-score all pair scores jointly, then group them by label.

    Uses the population standard deviation. Returns the grouped z-scores and
    their quartiles.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.size < 2:
        raise ValueError("need at least two scores")
    std = scores.std()
    if std == 0:
        raise ZeroVariance("all scores are equal")
    z = (scores - scores.mean()) / std
    out = {"z": z, "positive": z[labels], "negative": z[~labels], "quartiles": {}}
    for name in ("positive", "negative"):
        if out[name].size:
            out["quartiles"][name] = tuple(float(q) for q in np.percentile(out[name], [25, 50, 75]))
    return out


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """Sample mean and half-width of its Student-t confidence interval."""
    values = np.asarray(values, dtype=np.float64)
    m = float(values.mean())
    if values.size < 2:
        return m, float("nan")
    half = stats.t.ppf(0.5 + confidence / 2, values.size - 1) * values.std(ddof=1) / math.sqrt(values.size)
    return m, float(half)


@dataclass
class HoleRanking:
    file: str
    hole: str
    ranking: list[int]
    scores: np.ndarray
    positives: frozenset[int]
    avep: float | None
    rprec: float | None


@dataclass
class RankingReport:
    split: str
    holes: list[HoleRanking] = field(default_factory=list)
    skipped: int = 0

    def add(self, file: str, hole: str, scores: np.ndarray, positives: Iterable[int]) -> None:
        positives = frozenset(positives)
        ranking = rank_candidates(scores)
        if positives:
            ap, rp = average_precision(ranking, positives), r_precision(ranking, positives)
        else:
            ap = rp = None
            self.skipped += 1
        self.holes.append(HoleRanking(file, hole, ranking, np.asarray(scores), positives, ap, rp))

    @property
    def scored(self) -> list[HoleRanking]:
        return [h for h in self.holes if h.avep is not None]

    @property
    def avep(self) -> float:
        s = self.scored
        return float(np.mean([h.avep for h in s])) if s else float("nan")

    @property
    def rprec(self) -> float:
        s = self.scored
        return float(np.mean([h.rprec for h in s])) if s else float("nan")

    @property
    def random_avep(self) -> float:
        s = self.scored
        if not s:
            return float("nan")
        return float(np.mean([expected_random_average_precision(len(h.ranking), len(h.positives))
                              for h in s]))

    def pair_scores(self) -> tuple[np.ndarray, np.ndarray]:
        scores, labels = [], []
        for h in self.scored:
            scores.append(h.scores)
            labels.append(np.isin(np.arange(len(h.scores)), list(h.positives)))
        if not scores:
            return np.zeros(0), np.zeros(0, dtype=bool)
        return np.concatenate(scores), np.concatenate(labels)

    def standardized(self) -> dict:
        return standardize_scores(*self.pair_scores())

    def summary(self) -> dict:
        return {"split": self.split, "avep": self.avep, "rprec": self.rprec,
                "holes": len(self.scored), "skipped": self.skipped}
