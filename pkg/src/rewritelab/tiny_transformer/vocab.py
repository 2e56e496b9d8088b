"""Character vocabulary and batch encoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..dataset_io import Example, PromptTemplate, format_prompt

PAD, BOS, EOS = 0, 1, 2
SPECIALS = ("<pad>", "<bos>", "<eos>")


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    symbols: tuple[str, ...]  # index = id; specials first

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]  # type: ignore[attr-defined]
        except KeyError as exc:
            raise VocabError(f"symbol {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.symbols[i])
        return "".join(out)


def build_vocab(texts: Iterable[str]) -> Vocab:
    chars = set()
    for t in texts:
        chars.update(t)
    return Vocab(SPECIALS + tuple(sorted(chars)))


def vocab_for_examples(examples: Sequence[Example], tpl: PromptTemplate | None = None) -> Vocab:
    if not examples:
        raise VocabError("cannot build a vocabulary from an empty dataset")
    return build_vocab(format_prompt(ex, tpl) + ex.target_text for ex in examples)


@dataclass
class EncodedSet:
    """Right-padded token ids and a loss mask over target/EOS positions."""

    ids: np.ndarray  # (N, T) int64
    mask: np.ndarray  # (N, T) bool; True where the token is a target or EOS
    lengths: np.ndarray  # (N,) unpadded lengths


def encode_examples(vocab: Vocab, examples: Sequence[Example], tpl: PromptTemplate | None = None) -> EncodedSet:
    rows = []
    prompt_lens = []
    for ex in examples:
        p = [BOS] + vocab.encode(format_prompt(ex, tpl))
        rows.append(p + vocab.encode(ex.target_text) + [EOS])
        prompt_lens.append(len(p))
    T = max(len(r) for r in rows)
    ids = np.full((len(rows), T), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), T), dtype=bool)
    for i, (r, pl) in enumerate(zip(rows, prompt_lens)):
        ids[i, : len(r)] = r
        mask[i, pl : len(r)] = True
    return EncodedSet(ids, mask, np.array([len(r) for r in rows]))


def encode_prompts(vocab: Vocab, prompts: Sequence[str]) -> list[list[int]]:
    return [[BOS] + vocab.encode(p) for p in prompts]
