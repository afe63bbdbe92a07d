"""Term lexicons with whole-word, per-entry case-sensitivity matching.

A match is whole-word: the characters adjacent to it are not Unicode
letters (so hyphens and digits act as boundaries, and "her" never fires
inside "therapy").
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable

from .records import PipelineError

PRONOUN_LEXICON_NAME = "gendered-pronouns"
OCCUPATION_LEXICON_NAME = "occupations"

MASCULINE_LEMMAS = frozenset({"he", "him", "his", "himself"})
FEMININE_LEMMAS = frozenset({"she", "her", "hers", "herself"})


@dataclass(frozen=True)
class LexiconEntry:
    term: str
    case_sensitive: bool = False

    def __post_init__(self):
        if not self.term or self.term != self.term.strip():
            raise ValueError(f"lexicon term must be non-empty and trimmed: {self.term!r}")
        if not self.case_sensitive and self.term != self.term.lower():
            raise ValueError(f"case-insensitive entries are stored lowercase: {self.term!r}")

    @property
    def multiword(self) -> bool:
        return any(c.isspace() for c in self.term)


@dataclass(frozen=True)
class TermMatch:
    term: str
    start: int
    end: int
    surface: str


@dataclass(frozen=True)
class Lexicon:
    name: str
    entries: frozenset[LexiconEntry]
    _patterns: tuple = field(init=False, default=(), repr=False, compare=False)

    def __post_init__(self):
        patterns = []
        for entry in sorted(self.entries, key=lambda e: (e.term, e.case_sensitive)):
            # multiword terms match with single internal spaces
            pat = re.escape(re.sub(r"\s+", " ", entry.term))
            flags = 0 if entry.case_sensitive else re.IGNORECASE
            patterns.append((entry, re.compile(pat, flags)))
        object.__setattr__(self, "_patterns", tuple(patterns))

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_terms(cls, terms: Iterable[str | tuple[str, bool]], name: str) -> "Lexicon":
        entries = set()
        for t in terms:
            term, cs = t if isinstance(t, tuple) else (t, False)
            entries.add(LexiconEntry(term if cs else term.lower(), cs))
        if not entries:
            raise PipelineError(f"empty lexicon: {name}")
        return cls(name=name, entries=frozenset(entries))


def load_lexicon(stream: IO[str], name: str) -> Lexicon:
    """Parse a lexicon file: one term per line, `<tab>cs` marks
    case-sensitive, `#` starts a comment line."""
    entries = set()
    for line in stream:
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        term, _, flag = line.partition("\t")
        case_sensitive = flag.strip() == "cs"
        term = term.strip()
        if not case_sensitive:
            term = term.lower()
        entries.add(LexiconEntry(term, case_sensitive))
    if not entries:
        raise PipelineError(f"empty lexicon: {name}")
    return Lexicon(name=name, entries=frozenset(entries))


def load_default_lexicon(which: str) -> Lexicon:
    """Load a lexicon shipped with the package ("pronouns" or "occupations")."""
    names = {"pronouns": PRONOUN_LEXICON_NAME, "occupations": OCCUPATION_LEXICON_NAME}
    path = resources.files("medneutral").joinpath("data", f"{which}.txt")
    with path.open("r", encoding="utf-8") as fh:
        return load_lexicon(fh, names[which])


def _whole_word(text: str, start: int, end: int) -> bool:
    before_ok = start == 0 or not text[start - 1].isalpha()
    after_ok = end == len(text) or not text[end].isalpha()
    return before_ok and after_ok


def match_terms(text: str, lexicon: Lexicon) -> list[TermMatch]:
    """All whole-word occurrences of lexicon terms, left to right."""
    matches = []
    for entry, pattern in lexicon._patterns:
        for m in pattern.finditer(text):
            if _whole_word(text, m.start(), m.end()):
                matches.append(TermMatch(entry.term, m.start(), m.end(), m.group()))
    matches.sort(key=lambda t: (t.start, t.end, t.term))
    return matches


def contains_occupational_term(antecedent_text: str, lexicon: Lexicon) -> bool:
    return bool(match_terms(antecedent_text, lexicon))
