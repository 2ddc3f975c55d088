"""Lower-cased word-level vocabulary with BERT-style special tokens."""

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)

_PUNCT = frozenset(string.punctuation)


def split_text(text):
    """Whitespace split, then peel leading/trailing ASCII punctuation off each piece.

    >>> split_text("Paris, (France) is big.")
    ['Paris', ',', '(', 'France', ')', 'is', 'big', '.']
    """
    tokens = []
    for piece in text.split():
        start, end = 0, len(piece)
        while start < end and piece[start] in _PUNCT:
            start += 1
        while end > start and piece[end - 1] in _PUNCT:
            end -= 1
        tokens.extend(piece[:start])
        if start < end:
            tokens.append(piece[start:end])
        tokens.extend(piece[end:])
    return tokens


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple
    token_to_id: dict = field(compare=False, repr=False)

    pad_id = PAD_ID
    unk_id = UNK_ID
    cls_id = CLS_ID
    sep_id = SEP_ID

    @classmethod
    def from_tokens(cls, tokens):
        """Vocab with the four specials followed by ``tokens`` in the given order."""
        id_to_token = list(SPECIAL_TOKENS)
        seen = set(SPECIAL_TOKENS)
        for tok in tokens:
            tok = tok.lower()
            if tok in seen:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            seen.add(tok)
            id_to_token.append(tok)
        return cls(tuple(id_to_token), {t: i for i, t in enumerate(id_to_token)})

    def __len__(self):
        return len(self.id_to_token)

    @property
    def size(self):
        return len(self.id_to_token)

    def save(self, path):
        body = "".join(tok + "\n" for tok in self.id_to_token[len(SPECIAL_TOKENS):])
        Path(path).write_text(body, encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_tokens(line for line in lines if line)


def build_vocab(documents, min_freq=1):
    """Count lower-cased tokens over all sentences and keep those seen ``min_freq`` times.

    Ordering is by descending frequency, ties broken lexicographically, so the
    result does not depend on document order.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for doc in documents:
        for sent in doc.sentences:
            counts.update(tok.lower() for tok in sent)
    kept = sorted((tok for tok, n in counts.items() if n >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab.from_tokens(kept)


def encode(tokens, vocab):
    lookup = vocab.token_to_id
    return [lookup.get(tok.lower(), UNK_ID) for tok in tokens]
