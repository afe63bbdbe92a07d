"""Core record types and JSONL readers/writers for the pipeline.

All offsets are counted in Unicode code points from the start of the
abstract text, so records survive re-serialization across encodings.
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator, Optional


class PipelineError(Exception):
    """Fatal error: configuration or contract violation."""


class IntegrityError(PipelineError):
    """A record contradicts the text it claims to describe."""


class Gender(Enum):
    MASCULINE = "masculine"
    FEMININE = "feminine"
    COMPOUND = "compound"


class AntecedentLabel(Enum):
    """Six-way antecedent category. Values are the wire strings."""

    PATIENT_TRIAL_PARTICIPANT = "patient"
    NAMED_INDIVIDUAL = "named individual"
    OCCUPATION = "occupation"
    AUTHOR = "author"
    ANIMAL = "animal"
    OTHER = "other"


class LabelSource(Enum):
    ORACLE = "oracle"
    HUMAN_ANNOTATION = "human_annotation"
    RECONCILED = "reconciled"


@dataclass(frozen=True)
class Abstract:
    pmid: str
    text: str
    date: Optional[_dt.date] = None

    def __post_init__(self):
        if not self.pmid or not self.pmid.isdigit():
            raise ValueError(f"pmid must be non-empty and numeric, got {self.pmid!r}")
        if not self.text:
            raise ValueError(f"abstract {self.pmid}: text must be non-empty")

    def to_dict(self) -> dict:
        d = {"pmid": self.pmid}
        if self.date is not None:
            d["date"] = self.date.isoformat()
        d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Abstract":
        date = d.get("date")
        if date is not None:
            date = _dt.date.fromisoformat(date)
        return cls(pmid=d["pmid"], text=d["text"], date=date)


@dataclass(frozen=True)
class PronounInstance:
    """One gendered-pronoun occurrence within one abstract."""

    instance_id: str
    pmid: str
    offset: int
    surface: str
    lemma: str
    gender: Gender

    def __post_init__(self):
        if self.offset < 0:
            raise ValueError(f"{self.instance_id}: offset must be >= 0")

    @property
    def end(self) -> int:
        return self.offset + len(self.surface)

    def check_against(self, text: str) -> None:
        """Raise IntegrityError unless the instance is offset-sound for text."""
        if text[self.offset : self.end] != self.surface:
            raise IntegrityError(
                f"{self.instance_id}: text[{self.offset}:{self.end}] is "
                f"{text[self.offset:self.end]!r}, expected {self.surface!r}"
            )

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "pmid": self.pmid,
            "offset": self.offset,
            "surface": self.surface,
            "lemma": self.lemma,
            "gender": self.gender.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PronounInstance":
        return cls(
            instance_id=d["instance_id"],
            pmid=d["pmid"],
            offset=d["offset"],
            surface=d["surface"],
            lemma=d["lemma"],
            gender=Gender(d["gender"]),
        )


@dataclass(frozen=True)
class ResolvedInstance:
    instance: PronounInstance
    antecedent_text: str
    antecedent_span: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if not self.antecedent_text or self.antecedent_text != self.antecedent_text.strip():
            raise ValueError(
                f"{self.instance.instance_id}: antecedent_text must be non-empty "
                f"with no surrounding whitespace, got {self.antecedent_text!r}"
            )

    def to_dict(self) -> dict:
        d = self.instance.to_dict()
        d["antecedent_text"] = self.antecedent_text
        if self.antecedent_span is not None:
            d["antecedent_span"] = list(self.antecedent_span)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ResolvedInstance":
        span = d.get("antecedent_span")
        return cls(
            instance=PronounInstance.from_dict(d),
            antecedent_text=d["antecedent_text"],
            antecedent_span=tuple(span) if span is not None else None,
        )


@dataclass(frozen=True)
class ClassifiedInstance:
    resolved: ResolvedInstance
    label: AntecedentLabel
    label_source: LabelSource

    @property
    def instance(self) -> PronounInstance:
        return self.resolved.instance

    def to_dict(self) -> dict:
        d = self.resolved.to_dict()
        d["label"] = self.label.value
        d["label_source"] = self.label_source.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifiedInstance":
        return cls(
            resolved=ResolvedInstance.from_dict(d),
            label=AntecedentLabel(d["label"]),
            label_source=LabelSource(d["label_source"]),
        )


@dataclass(frozen=True)
class RecordError:
    """A non-fatal, per-line ingestion error."""

    line_number: int
    reason: str
    raw: str


def _iter_jsonl(stream: IO[str], errors: Optional[list[RecordError]], builder) -> Iterator:
    for line_number, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            if errors is None:
                raise
            errors.append(RecordError(line_number, f"malformed JSON: {exc}", line.rstrip("\n")))
            continue
        try:
            yield builder(obj)
        except (KeyError, ValueError, TypeError) as exc:
            if errors is None:
                raise
            errors.append(RecordError(line_number, f"bad record: {exc}", line.rstrip("\n")))


def read_abstracts(stream: IO[str], errors: Optional[list[RecordError]] = None) -> Iterator[Abstract]:
    """Yield abstracts from a JSONL stream in input order.

    With an `errors` list supplied, malformed lines are collected there and
    skipped; without one, the first bad line raises.
    """
    return _iter_jsonl(stream, errors, Abstract.from_dict)


def read_instances(stream: IO[str], errors: Optional[list[RecordError]] = None) -> Iterator[PronounInstance]:
    return _iter_jsonl(stream, errors, PronounInstance.from_dict)


def read_resolved(stream: IO[str], errors: Optional[list[RecordError]] = None) -> Iterator[ResolvedInstance]:
    return _iter_jsonl(stream, errors, ResolvedInstance.from_dict)


def read_classified(stream: IO[str], errors: Optional[list[RecordError]] = None) -> Iterator[ClassifiedInstance]:
    return _iter_jsonl(stream, errors, ClassifiedInstance.from_dict)


def write_records(records: Iterable, stream: IO[str]) -> int:
    """Write one JSON object per line; returns the record count.

    Round-trips with the matching reader. On a sink failure the raised
    error carries the number of records already written.
    """
    written = 0
    for record in records:
        obj = record.to_dict() if hasattr(record, "to_dict") else record
        try:
            stream.write(json.dumps(obj, ensure_ascii=False) + "\n")
        except OSError as exc:
            raise PipelineError(f"output failed after {written} records: {exc}") from exc
        written += 1
    return written
