import os

import numpy as np
import pytest

from groundcap.model.captioner import ModelConfig


@pytest.fixture
def settings():
    return {
        'test_dir': os.path.dirname(__file__),
        'seed': 0,
        'tolerance': 1e-6,
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    def make(variant='att', **overrides):
        sem = frozenset() if variant in ('att', 'meanpool') else frozenset({'svo', 'cls'})
        values = dict(variant=variant, sem=sem, hidden_size=4, embedding_size=3,
                      attention_size=3, feature_size=5, semantic_size=4 if sem else 0,
                      dropout=0.0, seed=0, dtype='float64', init_scale=0.5)
        values.update(overrides)
        return ModelConfig(**values)
    return make
