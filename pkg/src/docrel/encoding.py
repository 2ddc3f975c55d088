"""Input sequence assembly for one entity pair.

Layout::

    [CLS] doc tokens [SEP] head tokens [SEP] tail tokens [SEP] [PAD]...

Segment 0 covers ``[CLS]`` and the document; segment 1 starts at the first
``[SEP]`` and runs to the end, padding included.  Positions are 0-based and
keep counting through the padding.  Only document tokens are truncated.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ParseError
from .tokenizer import CLS_ID, PAD_ID, SEP_ID, encode

N_SPECIALS = 4
FIELDS = ("token_ids", "position_ids", "segment_ids", "attention_mask", "relation_id")


@dataclass(frozen=True)
class EncodedInput:
    token_ids: tuple
    position_ids: tuple
    segment_ids: tuple
    attention_mask: tuple
    relation_id: int

    @property
    def length(self):
        """Number of real (unpadded) positions."""
        return sum(self.attention_mask)

    def to_json(self):
        d = asdict(self)
        return json.dumps({k: (list(d[k]) if k != "relation_id" else d[k]) for k in FIELDS}, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        rec = json.loads(line)
        return cls(*(tuple(rec[k]) if k != "relation_id" else int(rec[k]) for k in FIELDS))


def doc_budget(n_doc, m_head, m_tail, max_len):
    """Number of document tokens kept after truncation."""
    return min(n_doc, max_len - m_head - m_tail - N_SPECIALS)


def assemble(instance, vocab, max_len=512, pad=True):
    """Encode ``instance`` into id sequences of length ``max_len`` (or unpadded if ``pad=False``)."""
    head = encode(instance.head_tokens, vocab)
    tail = encode(instance.tail_tokens, vocab)
    if max_len < len(head) + len(tail) + N_SPECIALS + 1:
        raise ConfigError(
            f"max_len={max_len} leaves no room for document tokens "
            f"(head {len(head)} + tail {len(tail)} + {N_SPECIALS} specials)"
        )
    doc = encode(instance.doc_tokens[:doc_budget(len(instance.doc_tokens), len(head), len(tail), max_len)], vocab)

    token_ids = [CLS_ID, *doc, SEP_ID, *head, SEP_ID, *tail, SEP_ID]
    length = len(token_ids)
    segment_ids = [0] * (len(doc) + 1) + [1] * (length - len(doc) - 1)
    attention_mask = [1] * length
    total = max_len if pad else length
    token_ids += [PAD_ID] * (total - length)
    segment_ids += [1] * (total - length)
    attention_mask += [0] * (total - length)
    return EncodedInput(
        tuple(token_ids), tuple(range(total)), tuple(segment_ids), tuple(attention_mask), int(instance.relation_id)
    )


def was_truncated(instance, max_len):
    return len(instance.doc_tokens) > doc_budget(
        len(instance.doc_tokens), len(instance.head_tokens), len(instance.tail_tokens), max_len
    )


# --------------------------------------------------------------------------- #
# Prepared-instance cache
# --------------------------------------------------------------------------- #
def write_cache(path, encoded):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in encoded:
            fh.write(item.to_json())
            fh.write("\n")


def read_cache(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                out.append(EncodedInput.from_json(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: cache line {lineno}: {exc}") from exc
    return out


@dataclass
class Batch:
    token_ids: np.ndarray       # (B, L) int64
    position_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray  # (B, L) bool
    relation_ids: np.ndarray    # (B,)

    def __len__(self):
        return self.token_ids.shape[0]


def collate(items, length=None):
    """Stack encoded inputs into a :class:`Batch`, trimmed/padded to the longest real length.

    Padding follows the same rules as :func:`assemble`: pad id, segment 1,
    continuing positions, mask 0.
    """
    if length is None:
        length = max(item.length for item in items)
    b = len(items)
    tok = np.full((b, length), PAD_ID, dtype=np.int64)
    seg = np.ones((b, length), dtype=np.int64)
    mask = np.zeros((b, length), dtype=bool)
    pos = np.broadcast_to(np.arange(length, dtype=np.int64), (b, length)).copy()
    for i, item in enumerate(items):
        n = min(item.length, length)
        tok[i, :n] = item.token_ids[:n]
        seg[i, :n] = item.segment_ids[:n]
        pos[i, :n] = item.position_ids[:n]
        mask[i, :n] = True
    rel = np.array([item.relation_id for item in items], dtype=np.int64)
    return Batch(tok, pos, seg, mask, rel)
