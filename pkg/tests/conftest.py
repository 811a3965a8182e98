import numpy as np
import pytest

from pimforge.model import ModelConfig, TwoStreamModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    """Double-precision model small enough for finite differences."""
    return ModelConfig(patch_size=4, widths=(4, 8, 8, 8), heads=1, mlp_ratio=1, decoder_dim=4,
                       decoder_upsample_channels=2, stem_channels=2, seed=3, dtype="float64")


@pytest.fixture(scope="session")
def default_model():
    return TwoStreamModel(ModelConfig())


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one (criterion, passed, detail) line per acceptance criterion."""
    lines = getattr(request.config, "_acceptance_lines", None)
    if lines is None:
        lines = request.config._acceptance_lines = []
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in lines:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
