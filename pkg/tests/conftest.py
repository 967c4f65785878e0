import numpy as np
import pytest

from srecap.concepts import RESERVED, ConceptVocabulary
from srecap.config import preset

TOY_CATEGORIES = {
    "young": "attribute", "old": "attribute", "red": "attribute",
    "woman": "object", "man": "object", "dog": "object", "shirt": "object",
    "wearing": "relation", "chasing": "relation",
}


@pytest.fixture
def toy_vocab():
    words = sorted(set(TOY_CATEGORIES) | {"a", "the", "on"})
    return ConceptVocabulary(RESERVED + tuple(words), TOY_CATEGORIES)


@pytest.fixture
def tiny_cfg():
    """Desk preset shrunk further so model-level tests run in milliseconds."""
    return preset("desk", embed_dim=16, hidden_dim=16, heads=2, ffn_dim=24, attn_dim=12, rows=4,
                  max_len=8, init_scale=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
