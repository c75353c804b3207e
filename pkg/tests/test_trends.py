"""
Long-running learnability checks at desk scale (default model sizes, 64×64 images).
The small overfit run is marked slow (pytest -m slow); the
seed-median trend runs are marked nightly (pytest -m nightly).
"""

import statistics

import pytest

from config import DEFAULT_RUN_CONFIG
from engine.optim import AdamState
from models import build_model
from shapeworld.dataset import SplitSpec, build_dataset
from shapeworld.semantics import build_vocabulary
from training.curriculum import CurriculumSpec, StageSpec, run_curriculum
from training.trainer import TrainSchedule, evaluate, train

FILM = DEFAULT_RUN_CONFIG['film']
SEEDS = (0, 1, 2)


def _film(seed):
    vocab = build_vocabulary()
    return build_model('film', FILM, vocab_size=len(vocab), seed=seed, vocab_digest=vocab.digest())


def _optimizer():
    return AdamState.from_config(DEFAULT_RUN_CONFIG['optimizer'])


@pytest.fixture(scope='module')
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp('desk')
    spec = SplitSpec(train=20000, val=2000, test=2000, seed=0)
    return {family: build_dataset(family, spec, root / family, workers=4, progress=False)
            for family in ('existential', 'relational', 'simple-spatial')}


@pytest.mark.slow
def test_film_overfits_a_small_existential_set(tmp_path):
    path = build_dataset('existential', SplitSpec(train=256, val=2, test=2, seed=0), tmp_path / 'small',
                         progress=False)
    model = _film(0)
    train(model, path, TrainSchedule(iterations=3000, batch_size=64, seed=0), optimizer=_optimizer(),
          progress=False)
    assert evaluate(model, path, 'train') >= 0.95


@pytest.mark.nightly
def test_relational_is_harder_than_existential(desk_data):
    medians = {}
    for family in ('existential', 'relational'):
        runs = []
        for seed in SEEDS:
            record = train(_film(seed), desk_data[family], TrainSchedule(iterations=20000, batch_size=64, seed=seed),
                           optimizer=_optimizer(), progress=False)
            runs.append(record.accuracies[-1])
        medians[family] = statistics.median(runs)
    assert medians['existential'] >= 0.85
    assert medians['relational'] <= 0.65


@pytest.mark.nightly
def test_spatial_pretraining_helps_relational(desk_data):
    curriculum, scratch = [], []
    for seed in SEEDS:
        half = TrainSchedule(iterations=20000, batch_size=64, seed=seed)
        spec = CurriculumSpec(
            arch='film',
            model_config=FILM,
            pretrain=StageSpec(desk_data['simple-spatial'], half),
            finetune=StageSpec(desk_data['relational'], half),
            optimizer=DEFAULT_RUN_CONFIG['optimizer'],
        )
        _, finetuned = run_curriculum(spec, progress=False)
        curriculum.append(finetuned.accuracies[-1])

        record = train(_film(seed), desk_data['relational'],
                       TrainSchedule(iterations=40000, batch_size=64, seed=seed),
                       optimizer=_optimizer(), progress=False)
        scratch.append(record.accuracies[-1])
    assert statistics.median(curriculum) - statistics.median(scratch) >= 0.10
