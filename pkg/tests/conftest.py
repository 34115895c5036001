# conftest.py
"""Shared fixtures for the lab test suites."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / 'src'))

import numpy as np
import pytest

from automorphic import CosTypeMap, ExpTypeMap, WeierstrassTypeMap, ZorichMap
from geometry import ConformalLinear


@pytest.fixture
def rng():
    return np.random.default_rng(4577)


@pytest.fixture(scope='session')
def exp_map():
    return ExpTypeMap()


@pytest.fixture(scope='session')
def cos_map():
    return CosTypeMap()


@pytest.fixture(scope='session')
def p_map():
    return WeierstrassTypeMap()


@pytest.fixture(scope='session')
def zorich_map():
    return ZorichMap()


@pytest.fixture
def doubling():
    return ConformalLinear.dilation(2.0, 2)


@pytest.fixture
def campaign(tmp_path):
    """Write a TOML campaign file and return its path."""
    def write(text: str) -> Path:
        path = tmp_path / 'campaign.toml'
        path.write_text(text, encoding='utf-8')
        return path
    return write
