"""Builds a tiny deterministic BERT-style checkpoint for offline tests."""
from __future__ import annotations

import pytest
import torch
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors
from transformers import BertConfig, BertForMaskedLM, PreTrainedTokenizerFast

# every candidate token the mask-case fixtures use, plus filler words and a
# "##are" piece so a made-up candidate like "theyare" splits into two pieces
VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "he", "she", "they", "him", "her", "them", "his", "their",
    "hers", "theirs", "himself", "herself", "themselves",
    "the", "a", "an", "and", "is", "was", "are", "##are",
    "doctor", "nurse", "later", "revised", "protocol", ".", ",",
]


def build_tiny_checkpoint(path: str, seed: int = 7) -> str:
    vocab_file = f"{path}-vocab.txt"
    with open(vocab_file, "w", encoding="utf-8") as fh:
        fh.write("\n".join(VOCAB) + "\n")

    tokenizer = Tokenizer(models.WordPiece.from_file(vocab_file, unk_token="[UNK]"))
    tokenizer.normalizer = normalizers.BertNormalizer(lowercase=True)
    tokenizer.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    cls_id, sep_id = VOCAB.index("[CLS]"), VOCAB.index("[SEP]")
    tokenizer.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", cls_id), ("[SEP]", sep_id)],
    )
    wrapped = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
    )

    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    torch.manual_seed(seed)
    model = BertForMaskedLM(config)
    model.save_pretrained(path)
    wrapped.save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("checkpoint") / "tiny-fillmask"
    return build_tiny_checkpoint(str(path))
