import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from riskbid.data import SyntheticConfig, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_synth():
    """A quick synthetic benchmark for integration tests."""
    return generate_synthetic(SyntheticConfig(n_train=20_000, n_test=20_000, seed=3))


@pytest.fixture(scope="session")
def default_synth():
    """The default synthetic benchmark (about 5 s to generate)."""
    return generate_synthetic(SyntheticConfig())
