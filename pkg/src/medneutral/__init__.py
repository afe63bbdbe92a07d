"""medneutral: occupation-linked pronoun neutralization for biomedical abstracts."""

__version__ = "0.1.0"
