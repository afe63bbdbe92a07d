"""Pytest fixtures over the shared corpus assets."""
from corpus_fixtures import (  # noqa: F401
    fixture_abstracts,
    gold_classified,
    mask_corpus,
    occupation_lexicon,
    pronoun_lexicon,
    table5_abstracts,
)
