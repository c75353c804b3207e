"""
Shared fixtures: tiny stored datasets (32×32 images) and small model configs.
"""

import json

import numpy as np
import pytest

from shapeworld.dataset import SplitSpec, build_dataset
from shapeworld.semantics import build_vocabulary
from shapeworld.worldgen import Scene, WorldObject

SMALL_FILM = {
    'cnn_channels': 4,
    'resblock_channels': 4,
    'embed_dim': 8,
    'gru_hidden': 8,
    'proj_dim': 8,
    'classifier_hidden': 8,
    'image_size': 32,
}

SMALL_BASELINE = {
    'cnn_channels': 4,
    'embed_dim': 8,
    'lstm_hidden': 8,
    'mlp_hidden': 8,
    'glimpses': 2,
    'attention_dim': 8,
    'image_size': 32,
}


def make_object(shape='square', color='red', x=0.5, y=0.5, size=0.2, shade=1.0, rotation=0.0):
    width, height = size if isinstance(size, tuple) else (size, size)
    return WorldObject(shape=shape, color=color, shade=shade, center=(x, y),
                       size=(width, height), rotation=rotation)


def make_scene(*objects, seed=0):
    return Scene(objects=tuple(objects), seed=seed)


def tiny_split(**overrides):
    fields = dict(train=24, val=16, test=16, seed=7, image_size=32)
    fields.update(overrides)
    return SplitSpec(**fields)


# ── Datasets ──

@pytest.fixture(scope='session')
def existential_data(tmp_path_factory):
    out = tmp_path_factory.mktemp('data') / 'existential'
    return build_dataset('existential', tiny_split(train=48, val=32, test=32), out, progress=False)


@pytest.fixture(scope='session')
def spatial_data(tmp_path_factory):
    out = tmp_path_factory.mktemp('data') / 'simple-spatial'
    return build_dataset('simple-spatial', tiny_split(), out, progress=False)


@pytest.fixture(scope='session')
def vocab():
    return build_vocabulary()


# ── Models ──

@pytest.fixture
def film_config():
    return dict(SMALL_FILM)


@pytest.fixture
def baseline_config():
    return dict(SMALL_BASELINE)


@pytest.fixture
def run_config_file(tmp_path):
    """Run-config JSON with small models and short evaluation batches."""
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({
        'film': SMALL_FILM,
        'baseline': SMALL_BASELINE,
        'schedule': {'batch_size': 8, 'eval_batch_size': 32},
    }))
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
