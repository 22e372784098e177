import os
from pathlib import Path

import numpy as np
import pytest

from helpers import make_tone_manifest


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", default=False,
        help="run desk/full-profile training tests")


def pytest_collection_modifyitems(config, items):
    run_slow = config.getoption("--run-slow")
    have_data = bool(os.environ.get("FSKWS_DATA_DIR"))
    skip_slow = pytest.mark.skip(reason="long training schedule; pass --run-slow")
    skip_data = pytest.mark.skip(
        reason="needs a Speech Commands v2 tree under FSKWS_DATA_DIR")
    for item in items:
        if "slow" in item.keywords and not run_slow:
            item.add_marker(skip_slow)
        if "dataset" in item.keywords and not have_data:
            item.add_marker(skip_data)


@pytest.fixture(scope="session")
def tone_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("tones")
    return make_tone_manifest(root)


@pytest.fixture(scope="session")
def tone_manifest_full(tmp_path_factory):
    """Tone dataset with background tracks, unknown keywords and silence."""
    root = tmp_path_factory.mktemp("tones_full")
    return make_tone_manifest(
        root, with_background=True, with_unknown=True, with_silence=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def speech_commands_root():
    root = os.environ.get("FSKWS_DATA_DIR")
    if not root or not Path(root).is_dir():
        pytest.skip("FSKWS_DATA_DIR not set")
    return Path(root)
