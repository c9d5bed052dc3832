"""Marqueur `slow` : les expériences complètes ne tournent qu'avec --runslow ou SPARSEREG_RUN_SLOW=1."""
import os

import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full experiment tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full experiment runs, skipped by default")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.getenv("SPARSEREG_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
