"""Masked-pronoun test construction and inclusive-replacement-rate evaluation."""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import requests

from .lexicon import Lexicon, match_terms
from .neutralizer import EditRecord, PronounRole, assign_role
from .records import Abstract, AntecedentLabel, ClassifiedInstance, PipelineError
from .tokens import sentence_containing

log = logging.getLogger(__name__)

MASK_TOKEN = "[MASK]"

# (masculine, feminine, inclusive), all single role-matched tokens
CANDIDATES_BY_ROLE = {
    PronounRole.SUBJECT: ("he", "she", "they"),
    PronounRole.OBJECT: ("him", "her", "them"),
    PronounRole.POSSESSIVE_DETERMINER: ("his", "her", "their"),
    PronounRole.POSSESSIVE_PRONOUN: ("his", "hers", "theirs"),
    PronounRole.REFLEXIVE: ("himself", "herself", "themselves"),
}


@dataclass(frozen=True)
class MaskTestCase:
    case_id: str
    pmid: str
    sentence: str
    original_pronoun: str
    role: PronounRole
    occupational_term: str
    candidates: tuple[str, str, str]

    def __post_init__(self):
        if self.sentence.count(MASK_TOKEN) != 1:
            raise ValueError(f"{self.case_id}: sentence must contain exactly one {MASK_TOKEN}")
        if self.candidates != CANDIDATES_BY_ROLE[self.role]:
            raise ValueError(
                f"{self.case_id}: candidates {self.candidates} do not match role {self.role.value}"
            )

    @property
    def inclusive_candidate(self) -> str:
        return self.candidates[2]

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "pmid": self.pmid,
            "sentence": self.sentence,
            "original_pronoun": self.original_pronoun,
            "role": self.role.value,
            "occupational_term": self.occupational_term,
            "candidates": list(self.candidates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskTestCase":
        return cls(
            case_id=d["case_id"],
            pmid=d["pmid"],
            sentence=d["sentence"],
            original_pronoun=d["original_pronoun"],
            role=PronounRole(d["role"]),
            occupational_term=d["occupational_term"],
            candidates=tuple(d["candidates"]),
        )


@dataclass(frozen=True)
class ScoreResponse:
    case_id: str
    scores: Mapping[str, float]


class ScorerError(Exception):
    """One case could not be scored; it is excluded from denominators."""


@dataclass(frozen=True)
class TermResult:
    term: str
    frequency: int
    cases: int
    accuracy: float  # percent of scored cases choosing the inclusive candidate


@dataclass(frozen=True)
class EvalReport:
    model_name: str
    n_cases: int
    scored: int
    unscored: int
    ties: int
    inclusive_rate: float
    per_term: tuple[TermResult, ...]
    per_term_overall: float
    case_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "n_cases": self.n_cases,
            "scored": self.scored,
            "unscored": self.unscored,
            "ties": self.ties,
            "inclusive_rate": self.inclusive_rate,
            "per_term": [
                {
                    "term": t.term,
                    "frequency": t.frequency,
                    "cases": t.cases,
                    "accuracy": t.accuracy,
                }
                for t in self.per_term
            ],
            "per_term_overall": self.per_term_overall,
            "case_ids": list(self.case_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            model_name=d["model_name"],
            n_cases=d["n_cases"],
            scored=d["scored"],
            unscored=d["unscored"],
            ties=d["ties"],
            inclusive_rate=d["inclusive_rate"],
            per_term=tuple(
                TermResult(t["term"], t["frequency"], t["cases"], t["accuracy"])
                for t in d["per_term"]
            ),
            per_term_overall=d["per_term_overall"],
            case_ids=tuple(d["case_ids"]),
        )

    def to_table(self) -> str:
        lines = [
            f"model: {self.model_name}",
            f"cases scored: {self.scored}/{self.n_cases}"
            + (f" ({self.unscored} unscored)" if self.unscored else ""),
            f"argmax ties broken toward masculine-first order: {self.ties}",
            f"inclusive replacement rate (direct overall): {self.inclusive_rate:g}%",
            f"per-term-derived overall: {self.per_term_overall:g}%",
        ]
        if self.per_term:
            rows = [("Term", "Frequency", "Cases", "Accuracy (%)")]
            for t in self.per_term:
                rows.append((t.term, str(t.frequency), str(t.cases), f"{t.accuracy:g}"))
            widths = [max(len(r[i]) for r in rows) for i in range(4)]
            lines += [
                "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
                for row in rows
            ]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# test-case construction

def top_terms(
    edits: Sequence[EditRecord], occupation_lexicon: Lexicon, k: int
) -> list[tuple[str, int]]:
    """Most frequent occupational terms in edit antecedents; ties alphabetical."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: dict[str, int] = {}
    for edit in edits:
        for match in match_terms(edit.antecedent_text, occupation_lexicon):
            counts[match.term] = counts.get(match.term, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def build_mask_tests(
    classified: Sequence[ClassifiedInstance],
    abstracts_by_pmid: Mapping[str, Abstract],
    terms: Sequence[str],
    n_per_term: int,
    seed: int,
) -> list[MaskTestCase]:
    """Sample occupation-labeled instances per term and mask their pronouns.

    Sampling is uniform and fully determined by the seed. A term with too
    few instances yields what exists plus a shortfall warning.
    """
    rng = random.Random(seed)
    cases: list[MaskTestCase] = []
    claimed: set[str] = set()
    for term in terms:
        term_lexicon = Lexicon.from_terms([term], name=f"term:{term}")
        pool = [
            ci
            for ci in classified
            if ci.label is AntecedentLabel.OCCUPATION
            and ci.instance.instance_id not in claimed
            and match_terms(ci.resolved.antecedent_text, term_lexicon)
        ]
        pool.sort(key=lambda ci: ci.instance.instance_id)
        if len(pool) < n_per_term:
            log.warning(
                "term %r: only %d of %d requested cases available",
                term, len(pool), n_per_term,
            )
            chosen = pool
        else:
            chosen = rng.sample(pool, n_per_term)
        chosen.sort(key=lambda ci: ci.instance.instance_id)
        for ci in chosen:
            inst = ci.instance
            abstract = abstracts_by_pmid[inst.pmid]
            inst.check_against(abstract.text)
            s, e = sentence_containing(abstract.text, inst.offset)
            local = inst.offset - s
            sentence = abstract.text[s:e]
            masked = sentence[:local] + MASK_TOKEN + sentence[local + len(inst.surface):]
            role = assign_role(abstract.text, inst)
            cases.append(
                MaskTestCase(
                    case_id=inst.instance_id,
                    pmid=inst.pmid,
                    sentence=masked,
                    original_pronoun=inst.lemma,
                    role=role,
                    occupational_term=term,
                    candidates=CANDIDATES_BY_ROLE[role],
                )
            )
            claimed.add(inst.instance_id)
    return cases


# ---------------------------------------------------------------------------
# scorers

class ScriptedScorer:
    """Offline scorer: a JSONL file of {case_id, choice} decides each case."""

    def __init__(self, choices: Mapping[str, str]):
        self.choices = dict(choices)

    @classmethod
    def from_file(cls, path: str) -> "ScriptedScorer":
        choices = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                choices[obj["case_id"]] = obj["choice"]
        return cls(choices)

    def score(self, case: MaskTestCase) -> ScoreResponse:
        choice = self.choices.get(case.case_id)
        if choice is None or choice not in case.candidates:
            raise ScorerError(f"{case.case_id}: no scripted choice")
        return ScoreResponse(
            case_id=case.case_id,
            scores={c: (1.0 if c == choice else 0.0) for c in case.candidates},
        )


class RemoteScorer:
    """Client for the fill-mask scoring service (POST <endpoint>/score)."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.url = endpoint.rstrip("/") + "/score"
        self.timeout = timeout

    def score(self, case: MaskTestCase) -> ScoreResponse:
        payload = {
            "case_id": case.case_id,
            "sentence": case.sentence,
            "mask_token": MASK_TOKEN,
            "candidates": list(case.candidates),
        }
        try:
            resp = requests.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as exc:
            raise ScorerError(f"{case.case_id}: scorer request failed: {exc}") from exc
        if body.get("case_id") != case.case_id:
            raise ScorerError(f"{case.case_id}: response case_id mismatch")
        return ScoreResponse(case_id=case.case_id, scores=body.get("scores", {}))


def _validate_scores(case: MaskTestCase, response: ScoreResponse) -> None:
    for candidate in case.candidates:
        value = response.scores.get(candidate)
        if value is None or not math.isfinite(float(value)):
            raise ScorerError(f"{case.case_id}: missing or non-finite score for {candidate!r}")


# ---------------------------------------------------------------------------
# evaluation

def run_masking_eval(
    cases: Sequence[MaskTestCase],
    scorer,
    model_name: str,
    term_frequencies: Optional[Mapping[str, int]] = None,
) -> EvalReport:
    """Score every case and aggregate inclusive replacement rates.

    Argmax ties break toward the fixed candidate order (masculine,
    feminine, inclusive) and are counted in the report.
    """
    term_frequencies = dict(term_frequencies or {})
    scored = 0
    unscored = 0
    ties = 0
    inclusive_total = 0
    term_scored: dict[str, int] = {}
    term_inclusive: dict[str, int] = {}
    term_order: list[str] = []

    for case in cases:
        if case.occupational_term not in term_scored:
            term_scored[case.occupational_term] = 0
            term_inclusive[case.occupational_term] = 0
            term_order.append(case.occupational_term)
        try:
            response = scorer.score(case)
            _validate_scores(case, response)
        except ScorerError as exc:
            log.warning("unscored: %s", exc)
            unscored += 1
            continue
        values = [float(response.scores[c]) for c in case.candidates]
        best = max(values)
        if values.count(best) > 1:
            ties += 1
        choice = case.candidates[values.index(best)]
        scored += 1
        term_scored[case.occupational_term] += 1
        if choice == case.inclusive_candidate:
            inclusive_total += 1
            term_inclusive[case.occupational_term] += 1

    per_term = tuple(
        TermResult(
            term=term,
            frequency=term_frequencies.get(term, 0),
            cases=term_scored[term],
            accuracy=(100.0 * term_inclusive[term] / term_scored[term])
            if term_scored[term]
            else 0.0,
        )
        for term in term_order
    )
    rated_terms = [t for t in per_term if t.cases]
    return EvalReport(
        model_name=model_name,
        n_cases=len(cases),
        scored=scored,
        unscored=unscored,
        ties=ties,
        inclusive_rate=(100.0 * inclusive_total / scored) if scored else 0.0,
        per_term=per_term,
        per_term_overall=(
            sum(t.accuracy for t in rated_terms) / len(rated_terms) if rated_terms else 0.0
        ),
        case_ids=tuple(sorted(c.case_id for c in cases)),
    )


@dataclass(frozen=True)
class ModelComparison:
    rows: tuple[tuple[str, float], ...]  # (model_name, inclusive_rate), descending

    def to_table(self) -> str:
        rows = [("Model", "Inclusive Replacement Rate (%)")]
        rows += [(name, f"{rate:g}") for name, rate in self.rows]
        widths = [max(len(r[i]) for r in rows) for i in range(2)]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
            for row in rows
        )


def compare_models(reports: Sequence[EvalReport]) -> ModelComparison:
    """Rank models by inclusive rate; all reports must share one case set."""
    if not reports:
        raise ValueError("need at least one report")
    reference = reports[0].case_ids
    for report in reports[1:]:
        if report.case_ids != reference:
            raise PipelineError(
                f"case set mismatch: {report.model_name} evaluated "
                f"{len(report.case_ids)} cases, expected the same "
                f"{len(reference)}-case fixture as {reports[0].model_name}"
            )
    ordered = sorted(reports, key=lambda r: (-r.inclusive_rate, r.model_name))
    return ModelComparison(rows=tuple((r.model_name, r.inclusive_rate) for r in ordered))
