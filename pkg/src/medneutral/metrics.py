"""Inter-annotator agreement and classification quality metrics."""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .records import AntecedentLabel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelSequencePair:
    ids: tuple[str, ...]
    labels_a: tuple[AntecedentLabel, ...]
    labels_b: tuple[AntecedentLabel, ...]

    def __post_init__(self):
        n = len(self.ids)
        if n == 0:
            raise ValueError("empty label sequences")
        if len(self.labels_a) != n or len(self.labels_b) != n:
            raise ValueError(
                f"misaligned sequences: {n} ids, {len(self.labels_a)} vs "
                f"{len(self.labels_b)} labels"
            )


@dataclass(frozen=True)
class AgreementResult:
    kappa: float
    observed_agreement: float
    expected_agreement: float
    n: int


def cohen_kappa(pair: LabelSequencePair) -> AgreementResult:
    """Chance-corrected agreement between two aligned label sequences.

    expected agreement is the sum over labels of the product of the two
    annotators' marginal probabilities.
    """
    n = len(pair.ids)
    observed = sum(a == b for a, b in zip(pair.labels_a, pair.labels_b)) / n
    counts_a = Counter(pair.labels_a)
    counts_b = Counter(pair.labels_b)
    expected = sum(
        (counts_a[label] / n) * (counts_b[label] / n)
        for label in counts_a.keys() | counts_b.keys()
    )
    if expected >= 1.0:
        # both annotators constant and identical: 0/0, by convention 1
        log.warning("kappa degenerate: expected agreement is 1 (constant labels)")
        return AgreementResult(kappa=1.0, observed_agreement=observed,
                               expected_agreement=expected, n=n)
    kappa = (observed - expected) / (1.0 - expected)
    return AgreementResult(kappa=kappa, observed_agreement=observed,
                           expected_agreement=expected, n=n)


@dataclass(frozen=True)
class ClassMetrics:
    label: AntecedentLabel
    support: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    per_class: tuple[ClassMetrics, ...]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    @classmethod
    def from_class_metrics(cls, per_class: Sequence[ClassMetrics]) -> "MetricsReport":
        total = sum(c.support for c in per_class)
        if total == 0:
            return cls(tuple(per_class), 0.0, 0.0, 0.0)
        wp = sum(c.support * c.precision for c in per_class) / total
        wr = sum(c.support * c.recall for c in per_class) / total
        wf = sum(c.support * c.f1 for c in per_class) / total
        return cls(tuple(per_class), wp, wr, wf)

    def to_dict(self) -> dict:
        return {
            "per_class": [
                {
                    "label": c.label.value,
                    "support": c.support,
                    "tp": c.tp,
                    "fp": c.fp,
                    "fn": c.fn,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                }
                for c in self.per_class
            ],
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
        }

    def to_table(self) -> str:
        rows = [("Label", "Support", "Precision", "Recall", "F1")]
        for c in self.per_class:
            rows.append((c.label.value, str(c.support), f"{c.precision:.4f}",
                         f"{c.recall:.4f}", f"{c.f1:.4f}"))
        rows.append(("weighted avg", str(sum(c.support for c in self.per_class)),
                     f"{self.weighted_precision:.4f}", f"{self.weighted_recall:.4f}",
                     f"{self.weighted_f1:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
            for row in rows
        )


def _safe_div(num: int, den: int) -> float:
    return num / den if den else 0.0


def classification_metrics(
    predicted: Sequence[AntecedentLabel], gold: Sequence[AntecedentLabel]
) -> MetricsReport:
    """Per-class precision/recall/F1 plus support-weighted averages.

    All six labels appear in the report; absent ones get zero metrics.
    Rows are ordered by descending support.
    """
    if len(predicted) != len(gold):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(gold)} gold")
    tp: Counter = Counter()
    fp: Counter = Counter()
    fn: Counter = Counter()
    for p, g in zip(predicted, gold):
        if p == g:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    per_class = []
    for label in AntecedentLabel:
        precision = _safe_div(tp[label], tp[label] + fp[label])
        recall = _safe_div(tp[label], tp[label] + fn[label])
        f1 = (
            2 * precision * recall / (precision + recall)
            if (precision + recall) > 0
            else 0.0
        )
        per_class.append(
            ClassMetrics(
                label=label,
                support=tp[label] + fn[label],
                tp=tp[label],
                fp=fp[label],
                fn=fn[label],
                precision=precision,
                recall=recall,
                f1=f1,
            )
        )
    per_class.sort(key=lambda c: (-c.support, c.label.value))
    return MetricsReport.from_class_metrics(per_class)


_ARTICLE_RE = re.compile(r"^(?:the|a|an)\s+", re.IGNORECASE)


def normalize_antecedent(text: str) -> str:
    """Lowercase, collapse whitespace, strip one leading article."""
    s = re.sub(r"\s+", " ", text.strip().lower())
    return _ARTICLE_RE.sub("", s)


def resolution_accuracy(
    predicted_antecedents: Sequence[str],
    gold_antecedents: Sequence[str],
    strict: bool = False,
) -> float:
    """Fraction of aligned antecedent pairs that match.

    Non-strict matching lowercases, collapses whitespace, and ignores a
    leading "the"/"a"/"an"; strict matching compares raw strings.
    """
    if len(predicted_antecedents) != len(gold_antecedents):
        raise ValueError(
            f"length mismatch: {len(predicted_antecedents)} predicted vs "
            f"{len(gold_antecedents)} gold"
        )
    if not predicted_antecedents:
        raise ValueError("empty antecedent sequences")
    if strict:
        hits = sum(p == g for p, g in zip(predicted_antecedents, gold_antecedents))
    else:
        hits = sum(
            normalize_antecedent(p) == normalize_antecedent(g)
            for p, g in zip(predicted_antecedents, gold_antecedents)
        )
    return hits / len(predicted_antecedents)
