import numpy as np
import pytest
from hypothesis import settings

from ctxrefine.embeddings import EmbeddingTable
from ctxrefine.synthetic import SyntheticConfig, generate_synthetic, synthetic_embeddings

np.seterr(all="raise", under="ignore")

settings.register_profile("default", max_examples=100, deadline=None)
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile("default")


@pytest.fixture
def tiny_table():
    table = EmbeddingTable(dim=2, seed=1)
    table.add("price", [1.0, 0.0])
    table.add("transit", [0.0, 2.0])
    table.add("location", [2.0, 0.0])
    table.add("great", [0.5, 0.5])
    return table


@pytest.fixture(scope="session")
def synthetic():
    cfg = SyntheticConfig(seed=0, count=200)
    return cfg, generate_synthetic(cfg), synthetic_embeddings(cfg)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
