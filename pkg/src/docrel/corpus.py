"""Dataset ingestion: DocRED-family JSON and line-delimited relation triples.

Both loaders produce canonical :class:`Document` objects; :func:`enumerate_pairs`
turns a document into classifier instances, one per ordered entity pair.
"""

import json
import random
from dataclasses import dataclass, field
from itertools import chain
from pathlib import Path

from .errors import ParseError, SchemaError, ValidationError
from .tokenizer import split_text

NO_RELATION = "no_relation"


@dataclass(frozen=True)
class Mention:
    surface: tuple
    sent_id: int
    span: tuple  # [start, end) within the sentence
    ent_type: str = ""


@dataclass(frozen=True)
class Entity:
    mentions: tuple
    canonical_name: tuple = ()

    def __post_init__(self):
        if not self.mentions:
            raise ValidationError("entity without mentions")
        if not self.canonical_name:
            object.__setattr__(self, "canonical_name", tuple(self.mentions[0].surface))
        if not self.canonical_name:
            raise ValidationError("entity with empty canonical name")


@dataclass(frozen=True)
class GoldLabel:
    head: int
    tail: int
    relation_id: int
    evidence: tuple = ()


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple
    entities: tuple
    gold_labels: tuple = ()

    @property
    def tokens(self):
        return list(chain.from_iterable(self.sentences))

    def validate(self):
        if sum(len(s) for s in self.sentences) < 1:
            raise ValidationError(f"{self.doc_id}: document has no tokens")
        for ent in self.entities:
            for m in ent.mentions:
                start, end = m.span
                if not 0 <= m.sent_id < len(self.sentences):
                    raise ValidationError(f"{self.doc_id}: mention sentence {m.sent_id} out of range")
                if not 0 <= start < end <= len(self.sentences[m.sent_id]):
                    raise ValidationError(
                        f"{self.doc_id}: mention span {list(m.span)} out of range "
                        f"for sentence {m.sent_id} of length {len(self.sentences[m.sent_id])}"
                    )
        n_ent = len(self.entities)
        for lab in self.gold_labels:
            if not (0 <= lab.head < n_ent and 0 <= lab.tail < n_ent):
                raise ValidationError(f"{self.doc_id}: label entity index out of range ({lab.head}, {lab.tail})")
            if lab.head == lab.tail:
                raise ValidationError(f"{self.doc_id}: label with head == tail ({lab.head})")
        return self


@dataclass(frozen=True)
class RelationSchema:
    """Ordered relation names; index 0 is always the no-relation class."""

    id_to_label: tuple
    label_to_id: dict = field(compare=False, repr=False)

    na_id = 0

    @classmethod
    def from_labels(cls, labels):
        labels = [lab for lab in labels if lab != NO_RELATION]
        names = (NO_RELATION, *labels)
        if len(set(names)) != len(names):
            raise SchemaError("duplicate relation names in schema")
        return cls(names, {name: i for i, name in enumerate(names)})

    @classmethod
    def load(cls, path):
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines or lines[0] != NO_RELATION:
            raise SchemaError(f"{path}: first line of a relation schema must be {NO_RELATION!r}")
        return cls.from_labels(lines[1:])

    def save(self, path):
        Path(path).write_text("".join(name + "\n" for name in self.id_to_label), encoding="utf-8")

    def __len__(self):
        return len(self.id_to_label)

    def lookup(self, label):
        try:
            return self.label_to_id[label]
        except KeyError:
            raise SchemaError(f"unknown relation {label!r}") from None


@dataclass(frozen=True)
class PairInstance:
    doc_id: str
    head_idx: int
    tail_idx: int
    head_tokens: tuple
    tail_tokens: tuple
    doc_tokens: tuple
    relation_id: int


# --------------------------------------------------------------------------- #
# Loaders
# --------------------------------------------------------------------------- #
def _read_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON at line {exc.lineno} col {exc.colno}: {exc.msg}") from exc


def parse_docred_record(record, schema, index=0):
    """Convert one DocRED JSON object to a :class:`Document`."""
    try:
        doc_id = str(record.get("title", index))
        sentences = tuple(tuple(s) for s in record["sents"])
        entities = []
        for group in record["vertexSet"]:
            mentions = []
            for m in group:
                start, end = (int(v) for v in m["pos"])
                sent_id = int(m["sent_id"])
                if not 0 <= sent_id < len(sentences):
                    raise ValidationError(f"{doc_id}: mention sentence {sent_id} out of range")
                if not 0 <= start < end <= len(sentences[sent_id]):
                    raise ValidationError(f"{doc_id}: mention span {[start, end]} out of range in sentence {sent_id}")
                mentions.append(
                    Mention(sentences[sent_id][start:end], sent_id, (start, end), m.get("type", ""))
                )
            entities.append(Entity(tuple(mentions)))
        labels = tuple(
            GoldLabel(int(lab["h"]), int(lab["t"]), schema.lookup(lab["r"]), tuple(lab.get("evidence", ())))
            for lab in record.get("labels", ())
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"record {index}: malformed DocRED record ({exc!r})") from exc
    return Document(doc_id, sentences, tuple(entities), labels).validate()


def load_docred(path, schema):
    data = _read_json(path)
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of records")
    return [parse_docred_record(rec, schema, i) for i, rec in enumerate(data)]


def _find(tokens, needle, start=0):
    n = len(needle)
    for i in range(start, len(tokens) - n + 1):
        if tokens[i:i + n] == needle:
            return i
    return -1


def load_triples(path, schema):
    """Read line-delimited ``{text, head, tail, relation}`` records, one sentence each."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text, head, tail, rel = rec["text"], rec["head"], rec["tail"], rec["relation"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: record {lineno}: {exc}") from exc
            doc_id = str(rec.get("id", lineno))
            tokens = tuple(split_text(text))
            rel_id = schema.lookup(rel)
            spans = []
            for surface in (head, tail):
                needle = tuple(split_text(surface))
                pos = _find(tokens, needle) if needle else -1
                if pos < 0:
                    raise ValidationError(f"{doc_id}: entity {surface!r} not found in text")
                spans.append((pos, pos + len(needle)))
            if spans[0] == spans[1]:
                raise ValidationError(f"{doc_id}: head and tail resolve to the same span {spans[0]}")
            entities = tuple(Entity((Mention(tokens[s:e], 0, (s, e)),)) for s, e in spans)
            docs.append(Document(doc_id, (tokens,), entities, (GoldLabel(0, 1, rel_id, (0,)),)).validate())
    return docs


# --------------------------------------------------------------------------- #
# Pair enumeration
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class NegativePolicy:
    kind: str = "all"  # "all" | "sampled" | "none"
    k: int = 0

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        text = str(text).strip().lower()
        if text in ("all", "none"):
            return cls(text)
        if text.startswith("sampled"):
            _, _, k = text.partition(":")
            k = k.strip("() ") or "3"
            return cls("sampled", int(k))
        raise ValueError(f"unknown negative policy {text!r}")


def enumerate_pairs(doc, schema, negative_policy="all", rng=None):
    """Classifier instances for every ordered entity pair of ``doc``.

    Gold pairs yield one instance per relation; unlabeled pairs yield NA
    instances according to ``negative_policy`` ("all", "none" or "sampled:k").
    ``rng`` (a :class:`random.Random`) is only consulted for sampling.
    """
    policy = NegativePolicy.parse(negative_policy)
    doc_tokens = tuple(doc.tokens)
    names = [ent.canonical_name for ent in doc.entities]
    gold = {}
    for lab in doc.gold_labels:
        gold.setdefault((lab.head, lab.tail), []).append(lab.relation_id)

    def make(h, t, rel):
        return PairInstance(doc.doc_id, h, t, tuple(names[h]), tuple(names[t]), doc_tokens, rel)

    out = []
    negatives = []
    n = len(doc.entities)
    for h in range(n):
        for t in range(n):
            if h == t:
                continue
            if (h, t) in gold:
                out.extend(make(h, t, rel) for rel in gold[(h, t)])
            else:
                negatives.append((h, t))
    if policy.kind == "all":
        out.extend(make(h, t, schema.na_id) for h, t in negatives)
    elif policy.kind == "sampled":
        rng = rng if rng is not None else random.Random(0)
        picked = sorted(rng.sample(negatives, min(policy.k, len(negatives))))
        out.extend(make(h, t, schema.na_id) for h, t in picked)
    return out
