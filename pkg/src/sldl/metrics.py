"""Ranking metrics: P@k, nDCG@k and their propensity-scored variants."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Slots reported for every evaluation: (metric family, k).
STANDARD_SLOTS = (("P", 1), ("P", 3), ("P", 5), ("nDCG", 3), ("nDCG", 5),
                  ("PSP", 1), ("PSP", 5), ("PSnDCG", 5))
FAMILIES = ("P", "nDCG", "PSP", "PSnDCG")
NORMALIZERS = ("paper", "standard")


@dataclass(frozen=True)
class PropensityModel:
    xi: np.ndarray
    a_param: float = 0.55
    b_param: float = 1.5


def _top(ranking, k: int) -> np.ndarray:
    ranking = np.asarray(ranking).ravel()
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > ranking.shape[0]:
        raise ValueError(f"k={k} exceeds ranking length {ranking.shape[0]}")
    return ranking[:k]


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def _ideal(k: int, n_relevant: int, normalizer: str) -> float:
    if normalizer == "paper":
        return float(_discounts(k).sum())
    if normalizer == "standard":
        return float(_discounts(min(k, n_relevant)).sum())
    raise ValueError(f"unknown nDCG normalizer {normalizer!r}; choose from {NORMALIZERS}")


def precision_at_k(ranking, relevant, k: int) -> float:
    top = _top(ranking, k)
    rel = set(int(r) for r in relevant)
    return sum(int(l) in rel for l in top) / k


def ndcg_at_k(ranking, relevant, k: int, normalizer: str = "paper") -> float:
    """Discounted gain with ``1/log2(i+1)`` weights over the top ``k``.

    ``normalizer="paper"`` divides by the full ``sum_{i<=k} 1/log2(i+1)``;
    ``"standard"`` stops that sum at ``min(k, |relevant|)``.
    """
    top = _top(ranking, k)
    rel = set(int(r) for r in relevant)
    ideal = _ideal(k, len(rel), normalizer)
    if ideal == 0:
        return 0.0
    disc = _discounts(k)
    return float(sum(disc[i] for i, l in enumerate(top) if int(l) in rel) / ideal)


def propensity_scores(freqs, n: int, a_param: float = 0.55, b_param: float = 1.5) -> PropensityModel:
    """Per-label propensities ``1 / (1 + C exp(-a log(N_l + b)))``.

    ``C = (log n - 1) (b + 1)^a``. For ``n < e`` the constant would go
    negative and push propensities above one, so it is floored at zero.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    C = max((math.log(n) - 1.0) * (b_param + 1.0) ** a_param, 0.0)
    xi = 1.0 / (1.0 + C * np.exp(-a_param * np.log(freqs + b_param)))
    return PropensityModel(xi, a_param, b_param)


def psp_at_k(ranking, relevant, xi, k: int) -> float:
    top = _top(ranking, k)
    rel = set(int(r) for r in relevant)
    xi = np.asarray(xi, dtype=np.float64)
    return float(sum(1.0 / xi[int(l)] for l in top if int(l) in rel) / k)


def psndcg_at_k(ranking, relevant, xi, k: int, normalizer: str = "paper") -> float:
    top = _top(ranking, k)
    rel = set(int(r) for r in relevant)
    xi = np.asarray(xi, dtype=np.float64)
    ideal = _ideal(k, len(rel), normalizer)
    if ideal == 0:
        return 0.0
    disc = _discounts(k)
    return float(sum(disc[i] / xi[int(l)] for i, l in enumerate(top) if int(l) in rel) / ideal)


def metric_name(family: str, k: int) -> str:
    return f"{family}@{k}"


def requested_slots(ks=()) -> list[tuple[str, int]]:
    slots = list(STANDARD_SLOTS)
    for k in ks:
        for fam in FAMILIES:
            if (fam, k) not in slots:
                slots.append((fam, k))
    return slots


def instance_metrics(ranking, relevant, xi, slots, normalizer: str = "paper") -> dict[str, float]:
    out = {}
    for fam, k in slots:
        if fam == "P":
            v = precision_at_k(ranking, relevant, k)
        elif fam == "nDCG":
            v = ndcg_at_k(ranking, relevant, k, normalizer)
        elif fam == "PSP":
            v = psp_at_k(ranking, relevant, xi, k)
        elif fam == "PSnDCG":
            v = psndcg_at_k(ranking, relevant, xi, k, normalizer)
        else:
            raise ValueError(f"unknown metric family {fam!r}")
        out[metric_name(fam, k)] = v
    return out


@dataclass
class MetricReport:
    """Metric values per fold, with mean and (population) standard deviation."""

    names: list[str]
    per_fold: list[dict[str, float]]
    normalizer: str = "paper"
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> dict[str, float]:
        return {m: float(np.mean([f[m] for f in self.per_fold])) for m in self.names}

    @property
    def std(self) -> dict[str, float]:
        return {m: float(np.std([f[m] for f in self.per_fold])) for m in self.names}

    @classmethod
    def combine(cls, reports: list["MetricReport"]) -> "MetricReport":
        if not reports:
            raise ValueError("no reports to combine")
        names = reports[0].names
        normalizer = reports[0].normalizer
        per_fold = [f for r in reports for f in r.per_fold]
        return cls(list(names), per_fold, normalizer)

    def to_dict(self) -> dict:
        return {
            "ndcg_normalizer": self.normalizer,
            "metrics": self.names,
            "mean": self.mean,
            "std": self.std,
            "per_fold": {m: [f[m] for f in self.per_fold] for m in self.names},
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self, percent: bool = True) -> str:
        scale = 100.0 if percent else 1.0
        mean, std = self.mean, self.std
        width = max(len(m) for m in self.names)
        lines = [f"{'metric':<{width}}  {'mean':>8}  {'std':>8}",
                 f"{'-' * width}  {'-' * 8}  {'-' * 8}"]
        for m in self.names:
            lines.append(f"{m:<{width}}  {mean[m] * scale:8.2f}  {std[m] * scale:8.2f}")
        lines.append(f"(folds: {len(self.per_fold)}, nDCG normalizer: {self.normalizer})")
        return "\n".join(lines)


def evaluate(predictions, truth, xi, ks=(), normalizer: str = "paper") -> MetricReport:
    """Average per-instance metrics over a test set.

    ``predictions`` holds either score vectors (length ``c``, ranked here
    with ties broken by ascending label index) or rankings already sorted.
    ``truth`` holds the relevant label indices of each instance. The report
    has one fold.
    """
    if len(predictions) != len(truth):
        raise ValueError(f"{len(predictions)} predictions but {len(truth)} truth label sets")
    if len(truth) == 0:
        raise ValueError("cannot evaluate an empty test set")
    if normalizer not in NORMALIZERS:
        raise ValueError(f"unknown nDCG normalizer {normalizer!r}; choose from {NORMALIZERS}")
    slots = requested_slots(ks)
    names = [metric_name(f, k) for f, k in slots]
    sums = dict.fromkeys(names, 0.0)
    for pred, rel in zip(predictions, truth):
        pred = np.asarray(pred)
        ranking = pred if np.issubdtype(pred.dtype, np.integer) else np.argsort(-pred, kind="stable")
        for m, v in instance_metrics(ranking, rel, xi, slots, normalizer).items():
            sums[m] += v
    n = len(truth)
    return MetricReport(names, [{m: sums[m] / n for m in names}], normalizer)
