"""Evaluation statistics for generated summaries.

Likert-record validation and ingestion, medians with interpolated quartiles,
Coleman-Liau readability, word-token counts and the Mann-Whitney U test
(exact null distribution for small samples, tie-corrected normal
approximation otherwise).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Optional, Sequence

EXACT_MAX_N = 12

# Allowed scores per criterion, as presented to annotators.
SCALES: dict[str, tuple[int, ...]] = {
    "coverage": (1, 2, 3, 4, 5),
    "coherence": (1, 2, 3, 4, 5),
    "relevance": (1, 2, 3),
    "length": (1, 2, 3),
    "hallucination": (0, 1),
}
CSV_COLUMNS = ("query_id", "model_id", "rater_id", "criterion", "score")


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class EvaluationRecord:
    query_id: str
    model_id: str
    rater_id: str
    criterion: str
    score: int

    def __post_init__(self):
        if self.criterion not in SCALES:
            raise ValidationError(f"unknown criterion {self.criterion!r}")
        if self.score not in SCALES[self.criterion]:
            lo, hi = SCALES[self.criterion][0], SCALES[self.criterion][-1]
            raise ValidationError(f"{self.criterion} score {self.score} outside [{lo}, {hi}]")


def read_records_csv(source: str | os.PathLike | io.TextIOBase) -> list[EvaluationRecord]:
    """Read rater scores from CSV; errors name the offending line."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as f:
            return read_records_csv(f)
    reader = csv.DictReader(source)
    missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise ValidationError(f"CSV header is missing columns: {', '.join(missing)}")
    records = []
    for row in reader:
        line = reader.line_num
        try:
            score = int(row["score"])
        except (TypeError, ValueError):
            raise ValidationError(f"line {line}: score {row['score']!r} is not an integer") from None
        try:
            records.append(
                EvaluationRecord(
                    row["query_id"].strip(), row["model_id"].strip(), row["rater_id"].strip(),
                    row["criterion"].strip().lower(), score,
                )
            )
        except ValidationError as e:
            raise ValidationError(f"line {line}: {e}") from None
    return records


@dataclass(frozen=True)
class DescriptiveStats:
    n: int
    median: float
    q1: float
    q3: float


def _quantile(sorted_values: Sequence[float], p: float) -> float:
    pos = p * (len(sorted_values) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] + (sorted_values[hi] - sorted_values[lo]) * frac


def median_iqr(values: Iterable[float]) -> DescriptiveStats:
    xs = sorted(values)
    if not xs:
        raise ValueError("median_iqr needs at least one value")
    return DescriptiveStats(len(xs), _quantile(xs, 0.5), _quantile(xs, 0.25), _quantile(xs, 0.75))


@dataclass(frozen=True)
class TextUnitCounts:
    letters: int
    words: int
    sentences: int


_TERMINATOR_RUN = re.compile(r"[.!?]+")


def count_text_units(text: str) -> TextUnitCounts:
    if not text.strip():
        raise ValueError("cannot count units of empty text")
    letters = sum(1 for ch in text if ch.isalpha())
    words = len(text.split())
    sentences = max(1, len(_TERMINATOR_RUN.findall(text)))
    return TextUnitCounts(letters, words, sentences)


def coleman_liau(text: str) -> float:
    c = count_text_units(text)
    L = 100.0 * c.letters / c.words
    S = 100.0 * c.sentences / c.words
    return 0.0588 * L - 0.296 * S - 15.8


def token_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class UTestResult:
    u1: float
    n1: int
    n2: int
    z: float
    p_two_tailed: float
    method: str
    tie_corrected: bool
    degenerate: bool = False

    @property
    def u2(self) -> float:
        return self.n1 * self.n2 - self.u1


def midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _sigma(n1: int, n2: int, tie_groups: Optional[Iterable[int]]) -> float:
    n = n1 + n2
    tie_term = 0.0
    if tie_groups is not None and n > 1:
        tie_term = sum(t**3 - t for t in tie_groups) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    return math.sqrt(max(var, 0.0))


def p_from_u(
    u1: float,
    n1: int,
    n2: int,
    tie_groups: Optional[Iterable[int]] = None,
    continuity: bool = False,
) -> tuple[float, float]:
    """Normal-approximation z and two-tailed p for an observed U.

    ``tie_groups`` lists the sizes of groups of tied values in the pooled
    sample; without it the no-ties variance is used.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError("sample sizes must be positive")
    if not 0 <= u1 <= n1 * n2:
        raise ValueError(f"U={u1} outside [0, {n1 * n2}]")
    sigma = _sigma(n1, n2, tie_groups)
    if sigma == 0:
        return 0.0, 1.0
    diff = u1 - n1 * n2 / 2.0
    if continuity:
        diff = math.copysign(max(abs(diff) - 0.5, 0.0), diff)
    z = diff / sigma
    return z, min(1.0, 2.0 * _normal_sf(abs(z)))


def _exact_p(ranks: Sequence[float], n1: int, u1: float) -> float:
    """Two-tailed permutation p: P(|U - mean| >= |u1 - mean|) over all n1-subsets.

    Counts subsets by their doubled rank sum (integral with midranks) with a
    knapsack-style table.
    """
    doubled = [int(round(2 * r)) for r in ranks]
    total_sum = sum(doubled)
    ways = [[0] * (total_sum + 1) for _ in range(n1 + 1)]
    ways[0][0] = 1
    for v in doubled:
        for j in range(n1, 0, -1):
            row, prev = ways[j], ways[j - 1]
            for s in range(total_sum, v - 1, -1):
                if prev[s - v]:
                    row[s] += prev[s - v]
    n2 = len(ranks) - n1
    mean = n1 * n2 / 2.0
    observed = abs(u1 - mean)
    offset = n1 * (n1 + 1) / 2.0
    hits = total = 0
    for s, count in enumerate(ways[n1]):
        if count:
            total += count
            if abs(s / 2.0 - offset - mean) >= observed - 1e-9:
                hits += count
    return hits / total


def mann_whitney_u(
    sample1: Sequence[float],
    sample2: Sequence[float],
    exact_max_n: int = EXACT_MAX_N,
    continuity: bool = False,
) -> UTestResult:
    n1, n2 = len(sample1), len(sample2)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    pooled = list(sample1) + list(sample2)
    ranks = midranks(pooled)
    u1 = sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0

    tie_groups = [t for t in Counter(pooled).values() if t > 1]
    has_ties = bool(tie_groups)
    degenerate = len(set(pooled)) == 1
    z, p_approx = p_from_u(u1, n1, n2, tie_groups if has_ties else None, continuity)

    if n1 + n2 <= exact_max_n:
        return UTestResult(u1, n1, n2, z, _exact_p(ranks, n1, u1), "exact", False, degenerate)
    return UTestResult(u1, n1, n2, z, p_approx, "normal_approx", has_ties, degenerate)


def _group_by_model(values: Mapping[str, Sequence[float]]) -> dict:
    models = list(values)
    out = {"by_model": {m: asdict(median_iqr(v)) for m, v in values.items() if v}}
    if len(models) == 2 and all(values[m] for m in models):
        res = mann_whitney_u(values[models[0]], values[models[1]])
        out["mann_whitney"] = {"sample1": models[0], "sample2": models[1], **asdict(res), "u2": res.u2}
    return out


def build_report(
    records: Sequence[EvaluationRecord],
    texts: Optional[Mapping[str, Mapping[str, Sequence[str]]]] = None,
) -> dict:
    """Per-criterion statistics plus optional text statistics.

    ``texts`` maps a text kind (e.g. ``"final_summary"``) to model id to the
    list of texts. Models keep their order of first appearance, so the first
    model is always sample 1 of the U test.
    """
    for r in records:
        EvaluationRecord(r.query_id, r.model_id, r.rater_id, r.criterion, r.score)
    criteria: dict[str, dict[str, list[float]]] = {}
    for r in records:
        criteria.setdefault(r.criterion, {}).setdefault(r.model_id, []).append(r.score)
    report: dict = {
        "n_records": len(records),
        "criteria": {c: _group_by_model(criteria[c]) for c in SCALES if c in criteria},
    }
    if texts:
        report["texts"] = {}
        for kind, by_model in texts.items():
            report["texts"][kind] = {
                "tokens": _group_by_model({m: [token_count(t) for t in ts] for m, ts in by_model.items()}),
                "coleman_liau": _group_by_model(
                    {m: [coleman_liau(t) for t in ts if t.strip()] for m, ts in by_model.items()}
                ),
            }
    return report


def _fmt(x: float) -> str:
    return f"{x:g}" if float(x).is_integer() else f"{x:.3f}"


def format_report_table(report: dict) -> str:
    rows = [("measure", "model", "n", "median", "IQR", "U", "p", "method")]

    def add(name: str, block: dict):
        mw = block.get("mann_whitney")
        for i, (model, st) in enumerate(block["by_model"].items()):
            test = ("", "", "")
            if mw and i == 0:
                test = (_fmt(mw["u1"]), f"{mw['p_two_tailed']:.4f}", mw["method"])
            rows.append((name, model, str(st["n"]), _fmt(st["median"]), f"{_fmt(st['q1'])}-{_fmt(st['q3'])}", *test))

    for criterion, block in report["criteria"].items():
        add(criterion, block)
    for kind, blocks in report.get("texts", {}).items():
        add(f"{kind} tokens", blocks["tokens"])
        add(f"{kind} CLI", blocks["coleman_liau"])

    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
