"""Rewrite occupation-linked gendered pronouns to they-series forms.

Only instances labeled as occupational antecedents are touched; patient,
named-individual, author, animal, and other instances pass through
byte-identical. Every change is captured in an EditRecord so the original
text can be reconstructed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .records import (
    Abstract,
    AntecedentLabel,
    ClassifiedInstance,
    Gender,
    IntegrityError,
    PronounInstance,
)
from .tokens import Token, next_token

log = logging.getLogger(__name__)


class PronounRole(Enum):
    SUBJECT = "subject"
    OBJECT = "object"
    POSSESSIVE_DETERMINER = "possessive_determiner"
    POSSESSIVE_PRONOUN = "possessive_pronoun"
    REFLEXIVE = "reflexive"


@dataclass(frozen=True)
class EditRecord:
    """One neutralization edit, with offsets into the original text."""

    pmid: str
    start: int
    end: int
    before: str
    after: str
    role: PronounRole
    antecedent_text: str
    verb_fix: Optional[tuple[str, str]] = None

    def to_dict(self) -> dict:
        d = {
            "pmid": self.pmid,
            "start": self.start,
            "end": self.end,
            "before": self.before,
            "after": self.after,
            "role": self.role.value,
            "antecedent_text": self.antecedent_text,
        }
        if self.verb_fix is not None:
            d["verb_fix"] = list(self.verb_fix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EditRecord":
        vf = d.get("verb_fix")
        return cls(
            pmid=d["pmid"],
            start=d["start"],
            end=d["end"],
            before=d["before"],
            after=d["after"],
            role=PronounRole(d["role"]),
            antecedent_text=d["antecedent_text"],
            verb_fix=tuple(vf) if vf is not None else None,
        )


# ---------------------------------------------------------------------------
# compound pronouns

_COMPOUND_PAIRS = {
    ("he", "she"), ("she", "he"),
    ("him", "her"), ("her", "him"),
    ("his", "her"), ("her", "his"),
    ("himself", "herself"), ("herself", "himself"),
}


def detect_compounds(
    abstract_text: str, instances: Sequence[PronounInstance]
) -> list[PronounInstance]:
    """Merge adjacent "X or Y" pronoun pairs into single compound instances.

    The connective must be exactly a single-spaced "or" (any casing);
    anything else keeps the instances separate.
    """
    out: list[PronounInstance] = []
    i = 0
    ordered = sorted(instances, key=lambda x: x.offset)
    while i < len(ordered):
        cur = ordered[i]
        if i + 1 < len(ordered):
            nxt = ordered[i + 1]
            between = abstract_text[cur.end : nxt.offset]
            if between.lower() == " or " and (cur.lemma, nxt.lemma) in _COMPOUND_PAIRS:
                surface = abstract_text[cur.offset : nxt.end]
                out.append(
                    PronounInstance(
                        instance_id=f"{cur.pmid}:{cur.offset}",
                        pmid=cur.pmid,
                        offset=cur.offset,
                        surface=surface,
                        lemma=surface.lower(),
                        gender=Gender.COMPOUND,
                    )
                )
                i += 2
                continue
        out.append(cur)
        i += 1
    return out


# ---------------------------------------------------------------------------
# grammatical role heuristic

_AUXILIARIES = {
    "is", "was", "are", "were", "am", "be", "been", "being",
    "has", "had", "have", "having", "does", "did", "do",
    "will", "would", "shall", "should", "can", "could", "may", "might", "must",
}

_PREPOSITIONS = {
    "about", "above", "across", "after", "against", "along", "among",
    "around", "at", "before", "behind", "below", "beneath", "beside",
    "besides", "between", "beyond", "by", "despite", "down", "during",
    "except", "for", "from", "in", "inside", "into", "near", "of", "off",
    "on", "onto", "out", "outside", "over", "past", "per", "since",
    "through", "throughout", "to", "toward", "towards", "under", "until",
    "up", "upon", "via", "with", "within", "without",
}

_CONJUNCTIONS = {
    "and", "or", "but", "nor", "so", "yet", "because", "although", "though",
    "while", "if", "that", "when", "whenever", "whether", "unless",
    "whereas", "as",
}

# -ly words that usually modify nouns, not verbs
_LY_ADJECTIVES = {
    "daily", "weekly", "monthly", "yearly", "hourly", "early", "only",
    "elderly", "likely", "unlikely", "friendly", "lovely", "lonely",
    "deadly", "costly", "orderly", "timely", "scholarly",
}

_PLAIN_ADVERBS = {
    "yesterday", "today", "tomorrow", "now", "then", "here", "there",
    "again", "too", "also", "often", "always", "never", "still", "soon",
    "later", "earlier", "once", "twice", "already", "almost", "away",
    "alone", "back", "home", "abroad", "however", "moreover",
    "nevertheless", "meanwhile", "anyway", "elsewhere", "somewhere",
    "everywhere", "nowhere", "afterwards", "beforehand",
}

_ARTICLES = {"the", "a", "an", "this", "that", "these", "those"}

# verbs with no common noun reading, safe as "her <verb>" object triggers
_UNAMBIGUOUS_VERBS = {
    "become", "becomes", "became", "believe", "believes", "come", "comes",
    "came", "complete", "completes", "continue", "continues", "decide",
    "decides", "describe", "describes", "examine", "examines", "go",
    "goes", "went", "gone", "know", "knows", "knew", "known", "make",
    "makes", "made", "operate", "operates", "participate", "participates",
    "perform", "performs", "receive", "receives", "recover", "recovers",
    "remain", "remains", "respond", "responds", "speak", "speaks", "spoke",
    "say", "says", "said", "think", "thinks", "thought", "understand",
    "understands", "understood", "undergo", "undergoes", "underwent",
}


def _is_adverb_like(word: str) -> bool:
    w = word.lower()
    if w in _PLAIN_ADVERBS:
        return True
    return w.endswith("ly") and w not in _LY_ADJECTIVES


def _compound_role(lemma: str) -> PronounRole:
    parts = set(lemma.split(" or "))
    if parts <= {"he", "she"}:
        return PronounRole.SUBJECT
    if "him" in parts:
        return PronounRole.OBJECT
    if "his" in parts:
        return PronounRole.POSSESSIVE_DETERMINER
    return PronounRole.REFLEXIVE


def assign_role(abstract_text: str, instance: PronounInstance) -> PronounRole:
    """Deterministic rule tagger for the five pronoun roles.

    Only "his" and "her" need the following token; everything else is
    decided by the lemma alone.
    """
    if instance.gender is Gender.COMPOUND:
        return _compound_role(instance.lemma)
    lemma = instance.lemma
    if lemma in ("he", "she"):
        return PronounRole.SUBJECT
    if lemma == "him":
        return PronounRole.OBJECT
    if lemma == "hers":
        return PronounRole.POSSESSIVE_PRONOUN
    if lemma in ("himself", "herself"):
        return PronounRole.REFLEXIVE

    tok = next_token(abstract_text, instance.end)
    following = tok.text.lower() if tok is not None and tok.is_word else None

    if lemma == "his":
        # standalone possessive when nothing noun-like can follow
        if following is None or following in _AUXILIARIES \
                or following in _PREPOSITIONS or following in _CONJUNCTIONS \
                or following in ("alone", "too", "indeed"):
            return PronounRole.POSSESSIVE_PRONOUN
        return PronounRole.POSSESSIVE_DETERMINER

    # lemma == "her": determiner only when a noun phrase plausibly follows
    if following is None or following in _AUXILIARIES \
            or following in _PREPOSITIONS or following in _CONJUNCTIONS \
            or following in _ARTICLES or following in _UNAMBIGUOUS_VERBS \
            or _is_adverb_like(following):
        return PronounRole.OBJECT
    return PronounRole.POSSESSIVE_DETERMINER


# ---------------------------------------------------------------------------
# replacement mapping

_ROLE_REPLACEMENT = {
    PronounRole.SUBJECT: "they",
    PronounRole.OBJECT: "them",
    PronounRole.POSSESSIVE_DETERMINER: "their",
    PronounRole.POSSESSIVE_PRONOUN: "theirs",
    PronounRole.REFLEXIVE: "themselves",
}


def map_pronoun(lemma_or_compound: str, role: PronounRole) -> str:
    """They-series replacement for any gendered lemma or compound."""
    return _ROLE_REPLACEMENT[role]


def _copy_case(surface: str, replacement: str) -> str:
    if surface[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


# ---------------------------------------------------------------------------
# verb agreement

_VERB_SKIP_WORDS = {"also", "often", "always", "never", "still", "now"}

_AGREEMENT_MAP = {"is": "are", "was": "were", "has": "have", "does": "do"}

# -s words that are not third-person-singular verbs
_NON_VERB_S_WORDS = {
    "as", "its", "his", "hers", "ours", "yours", "theirs", "this", "thus",
    "perhaps", "besides", "plus", "versus", "whereas", "various",
    "previous", "serious", "numerous", "alas", "unless",
}


def _skippable_for_agreement(word: str) -> bool:
    return word.endswith("ly") or word in _VERB_SKIP_WORDS


def _singularize_to_plural(verb: str) -> Optional[str]:
    """Inverse third-person-singular -s, or None when it does not apply."""
    if not verb.isalpha() or not verb.islower():
        return None
    if len(verb) < 3 or not verb.endswith("s") or verb.endswith("ss"):
        return None
    if verb in _NON_VERB_S_WORDS:
        return None
    if verb.endswith("ies") and len(verb) > 4:
        return verb[:-3] + "y"
    if verb.endswith(("sses", "zzes", "ches", "shes", "xes", "oes")):
        return verb[:-2]
    return verb[:-1]


def _agreement_after(words: Sequence[str]) -> Optional[tuple[int, str, str]]:
    """(index into words, before, after) for the verb to adjust, or None.

    Skips up to two adverb-like words; modals and past-tense forms are
    left alone.
    """
    i = 0
    skipped = 0
    while i < len(words) and skipped < 2 and _skippable_for_agreement(words[i].lower()):
        i += 1
        skipped += 1
    if i >= len(words):
        return None
    word = words[i]
    if word in _AGREEMENT_MAP:
        return (i, word, _AGREEMENT_MAP[word])
    plural = _singularize_to_plural(word)
    if plural is not None:
        return (i, word, plural)
    return None


def fix_verb_agreement(
    tokens: Sequence[str], replaced_subject_index: int
) -> Optional[tuple[str, str]]:
    """Agreement change for the verb following a replaced subject pronoun."""
    found = _agreement_after(tokens[replaced_subject_index + 1 :])
    if found is None:
        return None
    _, before, after = found
    return (before, after)


def _find_verb_fix(text: str, from_pos: int) -> Optional[tuple[int, int, str, str]]:
    """Locate the agreement edit after a subject pronoun: (start, end, before, after)."""
    toks: list[Token] = []
    pos = from_pos
    for _ in range(3):  # at most 2 skips + the verb itself
        tok = next_token(text, pos)
        if tok is None or not tok.is_word:
            break
        toks.append(tok)
        pos = tok.end
    found = _agreement_after([t.text for t in toks])
    if found is None:
        return None
    idx, before, after = found
    tok = toks[idx]
    return (tok.start, tok.end, before, after)


# ---------------------------------------------------------------------------
# abstract-level rewriting

_GUARD_TERMS = {"female", "male", "woman", "women", "man", "men"}


def _antecedent_gendered(antecedent_text: str) -> bool:
    words = {w.strip(".,;:()\"'").lower() for w in antecedent_text.split()}
    return bool(words & _GUARD_TERMS)


def neutralize_abstract(
    abstract: Abstract,
    classified_instances: Iterable[ClassifiedInstance],
    verb_agreement: bool = True,
    gender_guard: bool = False,
) -> tuple[str, list[EditRecord]]:
    """Apply they-series replacements for occupation-labeled instances.

    Returns the rewritten text and one EditRecord per replaced pronoun.
    Instances with any other label leave the text byte-identical.
    """
    text = abstract.text
    planned = []  # (span_start, span_end, replacement) for pronouns and verbs
    edits: list[EditRecord] = []

    occupational = [
        ci for ci in classified_instances if ci.label is AntecedentLabel.OCCUPATION
    ]
    occupational.sort(key=lambda ci: ci.instance.offset)

    for ci in occupational:
        inst = ci.instance
        inst.check_against(text)
        if _antecedent_gendered(ci.resolved.antecedent_text):
            if gender_guard:
                log.info(
                    "%s: gender guard skipped %r (antecedent %r)",
                    inst.instance_id, inst.surface, ci.resolved.antecedent_text,
                )
                continue
            log.warning(
                "%s: rewriting %r although antecedent %r carries explicit gender",
                inst.instance_id, inst.surface, ci.resolved.antecedent_text,
            )
        role = assign_role(text, inst)
        replacement = _copy_case(inst.surface, map_pronoun(inst.lemma, role))
        planned.append((inst.offset, inst.end, replacement))

        verb_fix = None
        if verb_agreement and role is PronounRole.SUBJECT:
            found = _find_verb_fix(text, inst.end)
            if found is not None:
                vstart, vend, vbefore, vafter = found
                planned.append((vstart, vend, vafter))
                verb_fix = (vbefore, vafter)

        edits.append(
            EditRecord(
                pmid=inst.pmid,
                start=inst.offset,
                end=inst.end,
                before=inst.surface,
                after=replacement,
                role=role,
                antecedent_text=ci.resolved.antecedent_text,
                verb_fix=verb_fix,
            )
        )

    planned.sort(key=lambda p: p[0])
    for (s1, e1, _), (s2, _, _) in zip(planned, planned[1:]):
        if s2 < e1:
            raise IntegrityError(
                f"{abstract.pmid}: overlapping edit spans at {s1}..{e1} and {s2}"
            )

    new_text = text
    for start, end, replacement in reversed(planned):
        new_text = new_text[:start] + replacement + new_text[end:]
    return new_text, edits


def revert_edits(new_text: str, edits: Sequence[EditRecord]) -> str:
    """Reconstruct the original text from the rewritten text and its edits."""
    text = new_text
    for e in sorted(edits, key=lambda x: x.start):
        if text[e.start : e.start + len(e.after)] != e.after:
            raise IntegrityError(
                f"{e.pmid}: cannot revert edit at {e.start}: "
                f"{text[e.start:e.start + len(e.after)]!r} != {e.after!r}"
            )
        text = text[: e.start] + e.before + text[e.start + len(e.after) :]
        if e.verb_fix is not None:
            vbefore, vafter = e.verb_fix
            pos = e.start + len(e.before)
            for _ in range(3):
                tok = next_token(text, pos)
                if tok is None or not tok.is_word:
                    raise IntegrityError(f"{e.pmid}: lost verb fix {e.verb_fix}")
                if tok.text == vafter:
                    text = text[: tok.start] + vbefore + text[tok.end :]
                    break
                pos = tok.end
            else:
                raise IntegrityError(f"{e.pmid}: lost verb fix {e.verb_fix}")
    return text
