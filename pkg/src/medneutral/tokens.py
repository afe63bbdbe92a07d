"""Light tokenization helpers shared by the neutralizer and the masking harness."""
from __future__ import annotations

import re
from dataclasses import dataclass

# word = run of letters (with internal apostrophes/hyphens), a number,
# or a single punctuation character
_TOKEN_RE = re.compile(r"[^\W\d_]+(?:['’-][^\W\d_]+)*|\d+(?:\.\d+)?|[^\w\s]")

_ABBREVIATIONS = {
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc", "al",
    "eg", "e.g", "ie", "i.e", "fig", "figs", "no", "nos", "vol", "approx",
    "ca", "cf", "eq", "ref", "refs", "inc", "ltd", "dept", "univ", "resp",
    "spp", "sp",
}


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int

    @property
    def is_word(self) -> bool:
        return self.text[0].isalpha()


def word_tokens(text: str) -> list[Token]:
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def next_token(text: str, position: int) -> Token | None:
    """First token starting at or after position, or None at text end."""
    m = _TOKEN_RE.search(text, position)
    return Token(m.group(), m.start(), m.end()) if m else None


def _word_before(text: str, dot: int) -> str:
    i = dot
    while i > 0 and (text[i - 1].isalnum() or text[i - 1] == "."):
        i -= 1
    return text[i:dot]


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Sentence spans, splitting at ./!/? followed by whitespace.

    Guards common abbreviations ("Dr.", "vs.", "e.g."), single-letter
    initials, and decimal numbers; a split also requires the next
    non-space character to be an uppercase letter, a digit, or a quote.
    """
    spans = []
    start = 0
    for m in re.finditer(r"[.!?]+(?=\s)", text):
        nxt = m.end()
        while nxt < len(text) and text[nxt].isspace():
            nxt += 1
        if nxt >= len(text):
            break
        if not (text[nxt].isupper() or text[nxt].isdigit() or text[nxt] in "\"'("):
            continue
        if m.group().endswith("."):
            word = _word_before(text, m.end() - 1).rstrip(".").lower()
            if word in _ABBREVIATIONS or len(word) == 1:
                continue
        spans.append((start, m.end()))
        start = nxt
    if start < len(text) and text[start:].strip():
        end = len(text)
        while end > start and text[end - 1].isspace():
            end -= 1
        spans.append((start, end))
    return spans


def sentence_containing(text: str, offset: int) -> tuple[int, int]:
    """Span of the sentence that contains the character offset."""
    for s, e in split_sentences(text):
        if s <= offset < e:
            return (s, e)
    return (0, len(text))
