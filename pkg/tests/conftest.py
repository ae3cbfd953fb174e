"""Shared fixtures"""

import numpy as np
import pytest

from src.utils.rng import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def random_unit():
    def _draw(D, seed=0):
        v = np.random.default_rng(seed).standard_normal(D)
        return v / np.linalg.norm(v)
    return _draw


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("SPHEVAR_OUT_DIR", raising=False)
    return tmp_path / "out"
