"""Produce one PronounInstance per gendered-pronoun occurrence per abstract."""
from __future__ import annotations

from typing import Iterable, Iterator, Optional

from .lexicon import FEMININE_LEMMAS, Lexicon, match_terms
from .records import Abstract, Gender, PronounInstance


def _gender_of(lemma: str) -> Gender:
    return Gender.FEMININE if lemma in FEMININE_LEMMAS else Gender.MASCULINE


def scan_abstract(abstract: Abstract, pronoun_lexicon: Lexicon) -> list[PronounInstance]:
    """One instance per whole-word pronoun match, ordered by offset."""
    instances = []
    for match in match_terms(abstract.text, pronoun_lexicon):
        lemma = match.surface.lower()
        instances.append(
            PronounInstance(
                instance_id=f"{abstract.pmid}:{match.start}",
                pmid=abstract.pmid,
                offset=match.start,
                surface=match.surface,
                lemma=lemma,
                gender=_gender_of(lemma),
            )
        )
    return instances


def scan_corpus(
    abstracts: Iterable[Abstract],
    pronoun_lexicon: Lexicon,
    year_range: Optional[tuple[int, int]] = None,
) -> Iterator[PronounInstance]:
    """Concatenation of scan_abstract over the (optionally year-filtered) corpus.

    With a range set, undated abstracts are excluded; without one, all pass.
    """
    for abstract in abstracts:
        if year_range is not None:
            if abstract.date is None:
                continue
            lo, hi = year_range
            if not (lo <= abstract.date.year <= hi):
                continue
        yield from scan_abstract(abstract, pronoun_lexicon)
