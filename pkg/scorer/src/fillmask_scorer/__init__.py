"""fillmask_scorer: serve mask-position candidate scores over HTTP."""

__version__ = "0.1.0"
