import numpy as np
import pytest
from hypothesis import settings

from cofitune.model import ModelConfig, init_params
from cofitune.tensor import SeededRng

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def tiny_config():
    return ModelConfig(vocab_size=20, embed_dim=16, num_heads=2, ffn_dim=32, num_layers=2,
                       dropout_p=0.2, max_seq_len=32)


@pytest.fixture
def tiny_params64(tiny_config):
    return init_params(tiny_config, SeededRng(7, 1), std=0.3, dtype=np.float64)


@pytest.fixture
def small_config():
    # big enough for the default scopes (N=8 -> (2,4])
    return ModelConfig(embed_dim=16, num_heads=2, ffn_dim=24, num_layers=8, max_seq_len=96)


# one pass/fail line per acceptance criterion, printed after the run
_CRITERIA: list[tuple[str, str, float]] = []


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    ok = call.excinfo is None
    _CRITERIA.append((mark.args[0], "PASS" if ok else "FAIL", call.duration))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, secs in _CRITERIA:
        terminalreporter.write_line(f"{status}  {label}  ({secs:.1f}s)")
