"""Document-level relation extraction with a global-context pair encoding."""

from .corpus import (
    Document,
    Entity,
    Mention,
    PairInstance,
    RelationSchema,
    enumerate_pairs,
    load_docred,
    load_triples,
)
from .encoding import EncodedInput, assemble, collate
from .metrics import EpochReport, SplitMetrics, format_report, score
from .model import ModelConfig, forward, init_params, predict
from .tokenizer import Vocab, build_vocab, encode
from .training import TrainConfig, backward, cross_entropy, evaluate, optimizer_step, train

__version__ = "0.1.0"
