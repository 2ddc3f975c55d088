from pathlib import Path

import numpy as np
import pytest

from docrel.corpus import RelationSchema
from docrel.model import ModelConfig

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def schema():
    return RelationSchema.load(DATA / "schema.txt")


@pytest.fixture
def tiny_config():
    return ModelConfig(vocab_size=50, n_relations=4, d_model=8, n_layers=2, n_heads=2, d_ff=16, max_len=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
