"""Checkpoint loading and mask-position candidate scoring."""
from __future__ import annotations

import logging

import torch
from transformers import AutoModelForMaskedLM, AutoTokenizer

log = logging.getLogger(__name__)


class ModelLoadError(Exception):
    """Checkpoint could not be loaded; the service must refuse to start."""


class BadRequestError(Exception):
    """The request violates the scoring contract."""


class MaskScorer:
    """Wraps one fill-mask checkpoint in evaluation mode.

    Scoring is deterministic: no sampling, no dropout, plain logits at
    the mask position.
    """

    def __init__(self, checkpoint: str, mask_token: str | None = None):
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
            self.model = AutoModelForMaskedLM.from_pretrained(checkpoint)
        except Exception as exc:
            raise ModelLoadError(f"cannot load checkpoint {checkpoint!r}: {exc}") from exc
        self.model.eval()
        self.model_name = str(checkpoint)
        self.mask_token = mask_token or self.tokenizer.mask_token
        if self.mask_token is None:
            raise ModelLoadError(f"checkpoint {checkpoint!r} defines no mask token")

    def score(
        self, sentence: str, candidates: list[str], mask_token: str = "[MASK]"
    ) -> tuple[dict[str, float], list[str]]:
        """Scores per candidate at the mask position, plus warning notes.

        Multi-token candidates are scored by their first subtoken and
        reported in the warnings list.
        """
        if not candidates:
            raise BadRequestError("no candidates given")
        if sentence.count(mask_token) != 1:
            raise BadRequestError(
                f"sentence must contain exactly one {mask_token!r}, "
                f"found {sentence.count(mask_token)}"
            )
        if mask_token != self.mask_token:
            sentence = sentence.replace(mask_token, self.mask_token, 1)

        encoded = self.tokenizer(sentence, return_tensors="pt", truncation=True)
        ids = encoded["input_ids"][0].tolist()
        positions = [i for i, t in enumerate(ids) if t == self.tokenizer.mask_token_id]
        if len(positions) != 1:
            raise BadRequestError(
                "mask token lost in tokenization; check the model's mask convention"
            )
        with torch.no_grad():
            logits = self.model(**encoded).logits[0, positions[0]]

        scores: dict[str, float] = {}
        warnings: list[str] = []
        for candidate in candidates:
            subtokens = self.tokenizer.tokenize(candidate)
            if not subtokens:
                raise BadRequestError(f"candidate {candidate!r} is not tokenizable")
            if len(subtokens) > 1:
                warnings.append(
                    f"candidate {candidate!r} spans {len(subtokens)} subtokens; "
                    "scored by the first"
                )
            token_id = self.tokenizer.convert_tokens_to_ids(subtokens[0])
            scores[candidate] = float(logits[token_id])
        return scores, warnings
