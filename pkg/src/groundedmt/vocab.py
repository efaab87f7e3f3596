"""Vocabulary with reserved symbols and training-corpus token frequencies."""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from pathlib import Path

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")


class Vocabulary:
    """Bijective token <-> id mapping with ids 0..3 reserved for
    pad/sos/eos/unk, plus the training-corpus frequency of every kept token.
    """

    def __init__(self, tokens: Sequence[str], counts: dict[str, int]) -> None:
        for i, tok in enumerate(RESERVED_TOKENS):
            if i < len(tokens) and tokens[i] != tok:
                raise ValueError("reserved ids 0..3 must hold the reserved tokens")
        if len(tokens) < len(RESERVED_TOKENS):
            raise ValueError("vocabulary must include the reserved tokens")
        self.tokens: tuple[str, ...] = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        self.counts = dict(counts)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def frequency(self, token_or_id: str | int) -> int:
        """Training-corpus count of a token, floored at 1.

        Tokens absent from the frequency table (reserved symbols, unknowns)
        report 1 so that frequency ratios stay well defined.
        """
        tok = self.token(token_or_id) if isinstance(token_or_id, int) else token_or_id
        return max(1, self.counts.get(tok, 1))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(f"{tok}\t{self.counts.get(tok, 0)}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens: list[str] = []
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok, _, cnt = line.rstrip("\n").partition("\t")
                tokens.append(tok)
                if int(cnt) > 0:
                    counts[tok] = int(cnt)
        return cls(tokens, counts)


def build_vocabulary(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from tokenized sentences.

    Tokens seen fewer than ``min_count`` times map to the unknown id.  Ids are
    assigned by descending count with ties broken lexicographically, so
    identical corpora always yield identical vocabularies.
    """
    counter: Counter[str] = Counter()
    n_sentences = 0
    for sent in corpus:
        n_sentences += 1
        counter.update(sent)
    if n_sentences == 0:
        raise ValueError("empty corpus")
    kept = sorted(
        (tok for tok, c in counter.items() if c >= min_count),
        key=lambda t: (-counter[t], t),
    )
    counts = {tok: counter[tok] for tok in kept}
    return Vocabulary(list(RESERVED_TOKENS) + kept, counts)


def encode_tokens(text: str, vocab: Vocabulary, lowercase: bool = True) -> list[int]:
    """Whitespace-tokenize a raw string and map tokens to ids (OOV -> unk)."""
    if lowercase:
        text = text.lower()
    return [vocab.id(tok) for tok in text.split()]


def encode_token_list(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    """Map already-tokenized text to ids (OOV -> unk)."""
    return [vocab.id(tok) for tok in tokens]


def decode_ids(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    return [vocab.token(i) for i in ids]
