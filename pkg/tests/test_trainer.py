import json
import shutil
import xml.etree.ElementTree as ET
import zipfile

import numpy as np
import pytest
from openpyxl import load_workbook

from conftest import SMALL_FILM
from engine.checkpoint import Checkpoint
from engine.optim import AdamState
from errors import ArchitectureMismatch, ConfigError, NonFiniteActivation
from models import build_model, to_checkpoint
from shapeworld.dataset import RECORDS_FILE, get_reader
from training.curriculum import CurriculumSpec, StageSpec, mix_preset, run_curriculum, transfer_weights
from training.metrics import emit_metrics, merge_curves, read_curves_csv
from training.trainer import (
    DataMix, EvalEntry, RunRecord, TrainSchedule, TrainingMix, eval_points, evaluate, evaluate_by_family,
    predict, train,
)


def _film(vocab, seed=0, **overrides):
    return build_model('film', dict(SMALL_FILM, **overrides), vocab_size=len(vocab), seed=seed,
                       vocab_digest=vocab.digest())


def _schedule(iterations, **overrides):
    return TrainSchedule(iterations=iterations, batch_size=8, eval_batch_size=32, **overrides)


# ── schedule ──

def test_eval_points_are_dense_then_sparse():
    points = eval_points(100000)
    assert points[:11] == tuple(range(0, 10001, 1000))
    assert points[11:] == tuple(range(15000, 100001, 5000))
    assert len(eval_points(10000)) == 11
    assert eval_points(2500) == (0, 1000, 2000)
    assert eval_points(0) == (0,)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        TrainSchedule(iterations=-1)
    with pytest.raises(ConfigError):
        TrainSchedule.from_dict({'iterations': 10, 'momentum': 0.9})
    schedule = TrainSchedule.from_dict({'iterations': 10, 'batch_size': 4}, batch_size=None, seed=3)
    assert (schedule.batch_size, schedule.seed) == (4, 3)


# ── data mixing ──

def test_training_mix_frequencies(existential_data, spatial_data):
    readers = [get_reader(existential_data), get_reader(spatial_data)]
    mix = TrainingMix(readers, [0.45, 0.55], batch_size=8, rng=np.random.default_rng(0))
    components = mix.draw_components(10000)
    assert abs((components == 0).mean() - 0.45) <= 0.02


def test_training_mix_batches_draw_from_every_dataset(existential_data, spatial_data):
    readers = [get_reader(existential_data), get_reader(spatial_data)]
    mix = TrainingMix(readers, [0.5, 0.5], batch_size=32, rng=np.random.default_rng(1))
    batch = mix.next_batch()
    assert len(batch.labels) == 32
    assert set(batch.families) == {'existential', 'simple-spatial'}
    assert batch.tokens.shape == (32, batch.lengths.max())


def test_data_mix_normalizes_weights(existential_data):
    mix = DataMix(((existential_data, 1), (existential_data, 3)))
    np.testing.assert_allclose(mix.weights, [0.25, 0.75])
    with pytest.raises(ConfigError):
        DataMix(((existential_data, -1),))


def test_mix_presets_build_family_mixes():
    mix = mix_preset('distribution-55')
    assert mix.families == ('simple-spatial', 'relational')
    assert [w for _, w in mix.components] == pytest.approx([0.55, 0.45])
    with pytest.raises(ConfigError):
        mix_preset('nosuch')


# ── evaluation ──

def test_flipping_every_label_complements_accuracy(existential_data, vocab, tmp_path):
    flipped = tmp_path / 'flipped'
    shutil.copytree(existential_data, flipped)
    lines = (flipped / RECORDS_FILE).read_text(encoding='utf-8').splitlines()
    with open(flipped / RECORDS_FILE, 'w', encoding='utf-8') as f:
        for line in lines:
            record = json.loads(line)
            record['label'] = 1 - record['label']
            f.write(json.dumps(record, sort_keys=True, separators=(',', ':')) + '\n')

    model = _film(vocab)
    accuracy = evaluate(model, existential_data, 'val')
    assert evaluate(model, flipped, 'val') == pytest.approx(1.0 - accuracy)


def test_overall_accuracy_weights_families_by_size(existential_data, spatial_data, vocab):
    model = _film(vocab)
    mix = DataMix(((existential_data, 1), (spatial_data, 1)))
    result = evaluate_by_family(model, mix, 'val')
    expected = (result['existential'] * 32 + result['simple-spatial'] * 16) / 48
    assert result['overall'] == pytest.approx(expected)


def test_eval_sample_size_limits_the_instances(existential_data, vocab):
    model = _film(vocab)
    accuracy = evaluate(model, existential_data, 'val', sample_size=10, seed=4)
    assert round(accuracy * 10, 9) == round(accuracy * 10)
    assert evaluate(model, existential_data, 'val', sample_size=10, seed=4) == accuracy


def test_predict_leaves_the_model_mode_alone(existential_data, vocab):
    model = _film(vocab).train()
    reader = get_reader(existential_data)
    predictions = predict(model, reader, reader.split_indices('val'))
    assert model.training
    assert predictions.shape == (32,)
    assert set(predictions.tolist()) <= {0, 1}


# ── training ──

def test_same_seed_gives_the_same_loss_trace(existential_data, vocab):
    first = train(_film(vocab), existential_data, _schedule(4), progress=False)
    second = train(_film(vocab), existential_data, _schedule(4), progress=False)
    assert len(first.loss_trace) == 4
    assert first.loss_trace == second.loss_trace
    assert first.accuracies == second.accuracies


def test_train_writes_the_run_directory(existential_data, vocab, tmp_path):
    out = tmp_path / 'run'
    record = train(_film(vocab), existential_data, _schedule(3), out_dir=out, progress=False)
    for name in ('config.json', 'log.txt', 'curves.csv', 'curves.svg', 'curves.xlsx', 'final.ckpt', 'record.json'):
        assert (out / name).exists(), name
    assert record.iterations == [0]
    assert set(record.final) == {'val', 'test'}
    assert (out / 'log.txt').read_text().startswith('iteration=0 val_accuracy=')
    saved = RunRecord.load(out / 'record.json')
    assert saved.loss_trace == record.loss_trace
    assert Checkpoint.load(out / 'final.ckpt').optimizer['step'] == 3


def test_vocabulary_mismatch_is_refused(existential_data, vocab):
    model = build_model('film', SMALL_FILM, vocab_size=len(vocab) + 1)
    with pytest.raises(ArchitectureMismatch):
        train(model, existential_data, _schedule(1), progress=False)


def test_non_finite_weights_stop_the_run(existential_data, vocab):
    model = _film(vocab)
    bias = model.params['classifier.out.bias']
    bias.data = np.full(bias.shape, np.nan, dtype=bias.dtype)
    with pytest.raises(NonFiniteActivation):
        train(model, existential_data, _schedule(2), progress=False)


@pytest.mark.slow
def test_training_lowers_the_loss(existential_data, vocab):
    record = train(_film(vocab), existential_data, _schedule(400), optimizer=AdamState(lr=1e-3),
                   progress=False)
    trace = record.loss_trace
    assert np.mean(trace[-50:]) < np.mean(trace[:50])


# ── curriculum ──

def test_finetune_starts_from_the_pretrained_weights(existential_data, vocab, tmp_path):
    spec = CurriculumSpec(
        arch='film',
        model_config=SMALL_FILM,
        pretrain=StageSpec(existential_data, _schedule(3)),
        finetune=StageSpec(existential_data, _schedule(0, seed=5)),
    )
    pretrain_record, finetune_record = run_curriculum(spec, tmp_path / 'curriculum', progress=False)
    pretrained = Checkpoint.load(pretrain_record.checkpoint)
    finetuned = Checkpoint.load(finetune_record.checkpoint)
    for name, array in pretrained.params.items():
        np.testing.assert_array_equal(finetuned.params[name], array)
    for name, array in pretrained.buffers.items():
        np.testing.assert_array_equal(finetuned.buffers[name], array)
    assert finetuned.optimizer['step'] == 0
    assert (tmp_path / 'curriculum' / 'curriculum.json').exists()


def test_transfer_copies_weights_exactly(vocab):
    source = _film(vocab, seed=1)
    target = _film(vocab, seed=2)
    transfer_weights(to_checkpoint(source), target)
    for name, param in source.params.items():
        np.testing.assert_array_equal(target.params[name].data, param.data)


def test_curriculum_needs_exactly_one_start(existential_data):
    stage = StageSpec(existential_data, _schedule(1))
    with pytest.raises(ConfigError):
        CurriculumSpec(arch='film', model_config=SMALL_FILM, finetune=stage)
    with pytest.raises(ConfigError):
        CurriculumSpec(arch='film', model_config=SMALL_FILM, finetune=stage, pretrain=stage,
                       pretrain_checkpoint='x.ckpt')


# ── metrics ──

def _record():
    return RunRecord(entries=[
        EvalEntry(iteration=0, val_accuracy=0.5, family_accuracy={'existential': 0.5, 'numbers': 0.5}),
        EvalEntry(iteration=1000, val_accuracy=0.6123456789012345, train_loss=0.6931471805599453,
                  family_accuracy={'existential': 0.7, 'numbers': 0.52}),
        EvalEntry(iteration=2000, val_accuracy=2 / 3, train_loss=0.41,
                  family_accuracy={'existential': 0.8, 'numbers': 0.55}),
    ])


def test_curves_csv_reparses_to_the_same_numbers(tmp_path):
    record = _record()
    paths = emit_metrics(record, tmp_path / 'run')
    rows = read_curves_csv(paths['csv'])
    assert [r['iteration'] for r in rows] == [0, 1000, 2000]
    assert [r['accuracy'] for r in rows] == record.accuracies
    assert rows[0]['loss'] is None
    assert rows[1]['loss'] == 0.6931471805599453
    assert 'family_csv' in paths


def test_curves_svg_and_workbook_are_readable(tmp_path):
    paths = emit_metrics(_record(), tmp_path / 'run')
    root = ET.parse(paths['svg']).getroot()
    assert root.tag.endswith('svg')
    sheet = load_workbook(paths['xlsx']).active
    assert sheet.title == 'run'


def test_identical_series_give_identical_files(tmp_path):
    a = emit_metrics(_record(), tmp_path / 'a', label='same')
    b = emit_metrics(_record(), tmp_path / 'b', label='same')
    for kind in ('svg', 'xlsx', 'csv'):
        assert a[kind].read_bytes() == b[kind].read_bytes(), kind


def test_workbook_carries_no_wall_clock(tmp_path):
    path = emit_metrics(_record(), tmp_path / 'run')['xlsx']
    with zipfile.ZipFile(path) as archive:
        assert {info.date_time for info in archive.infolist()} == {(1980, 1, 1, 0, 0, 0)}
        core = archive.read('docProps/core.xml').decode('utf-8')
    assert core.count('2000-01-01T00:00:00Z') == 2
    assert load_workbook(path).active.cell(row=2, column=1).value == '3 evaluation points'


def test_merge_curves_from_several_runs(tmp_path):
    emit_metrics(_record(), tmp_path / 'one')
    emit_metrics(_record(), tmp_path / 'two')
    paths = merge_curves([tmp_path / 'one', tmp_path / 'two'], tmp_path / 'merged.svg')
    assert paths['svg'].exists()
    assert load_workbook(paths['xlsx']).sheetnames == ['one', 'two']
    with pytest.raises(ConfigError):
        merge_curves([tmp_path / 'missing'], tmp_path / 'x.svg')


def test_emit_metrics_needs_entries(tmp_path):
    with pytest.raises(ConfigError):
        emit_metrics(RunRecord(), tmp_path)
