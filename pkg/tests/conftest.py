"""Common test fixtures and utilities."""

import os
import tempfile

import pytest

from fibospec.config import Settings
from fibospec.thermo import builtin_system, normalize_potential


@pytest.fixture
def sample_env_file():
    """Create a temporary .env file for testing."""
    env_content = """
    FIBOSPEC_OUTPUT_DIR=/tmp/fibospec-test
    FIBOSPEC_WORKERS=3
    FIBOSPEC_SEED=7
    FIBOSPEC_LOG_LEVEL=debug
    FIBOSPEC_FORMAT=csv
    FIBOSPEC_ESCAPE_RADIUS=12.5
    FIBOSPEC_MAX_ITER=500
    FIBOSPEC_NODE_LIMIT=1000
    FIBOSPEC_WORD_CAP=2048
    FIBOSPEC_TERM_BUDGET=1e6
    FIBOSPEC_BRACKET_RADIUS=0.02
    FIBOSPEC_WRITE_MANIFEST=no
    """

    with tempfile.NamedTemporaryFile(mode="w", delete=False) as temp_file:
        temp_file.write(env_content)
        temp_path = temp_file.name

    yield temp_path

    # Clean up
    if os.path.exists(temp_path):
        os.unlink(temp_path)


@pytest.fixture
def output_dir():
    """Create a temporary artifact directory."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield temp_dir


@pytest.fixture
def sample_settings(output_dir):
    """Serial settings writing into a temporary directory."""
    return Settings(output_dir=output_dir, workers=1, seed=11)


@pytest.fixture(scope="session")
def triadic_system():
    """Middle-thirds Cantor map with its MME potential normalized."""
    return normalize_potential(builtin_system("triadic"))


@pytest.fixture(scope="session")
def nonlinear_system():
    """Cookie-cutter map with its MME potential normalized."""
    return normalize_potential(builtin_system("nonlinear"))


@pytest.fixture(scope="session")
def golden_system():
    """Golden-mean shift with its MME potential normalized."""
    return normalize_potential(builtin_system("golden-mean"))
