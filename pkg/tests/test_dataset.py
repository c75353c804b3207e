import json
import random
import shutil

import numpy as np
import pytest

from conftest import tiny_split
from errors import ConfigError, CorruptRecord
from shapeworld.constants import WITHHELD_COMBOS, WITHHELD_COUNTS
from shapeworld.dataset import (
    MANIFEST_FILE, IMAGES_FILE, RECORDS_FILE, DatasetReader, MixSpec, SplitSpec, build_dataset, derive_seed,
    iterate_batches, get_reader, verify_dataset, withheld_test_indices,
)
from shapeworld import dataset as dataset_module

WITHHELD = set(WITHHELD_COMBOS)


def _records(path):
    with open(path / RECORDS_FILE, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f]


def _has_withheld_feature(record):
    objects = record['scene']['objects']
    combos = {(o['shape'], o['color']) for o in objects}
    return len(objects) in WITHHELD_COUNTS or bool(combos & WITHHELD)


# ── specs ──

def test_split_sizes_below_two_are_rejected():
    with pytest.raises(ConfigError):
        SplitSpec(train=1, val=10, test=10)


def test_mix_weights_are_normalized_and_validated():
    mix = MixSpec((('existential', 2), ('numbers', 6)))
    assert mix.components == (('existential', 0.25), ('numbers', 0.75))
    with pytest.raises(ConfigError):
        MixSpec((('existential', 0),))
    with pytest.raises(ConfigError):
        MixSpec((('nosuch', 1),))


def test_mix_draw_frequencies():
    mix = MixSpec((('existential', 0.45), ('numbers', 0.55)))
    draws = [mix.draw(random.Random(derive_seed(3, 'train', i))) for i in range(10000)]
    share = draws.count('existential') / len(draws)
    assert abs(share - 0.45) <= 0.02


def test_sub_seeds_do_not_depend_on_order():
    assert derive_seed(7, 'train', 3) == derive_seed(7, 'train', 3)
    assert derive_seed(7, 'train', 3) != derive_seed(7, 'val', 3)
    assert derive_seed(7, 'train', 3) != derive_seed(8, 'train', 3)


def test_withheld_test_indices_hit_the_rate_exactly():
    assert len(withheld_test_indices(tiny_split(test=40))) == 20
    assert len(withheld_test_indices(tiny_split(test=40, test_withheld_rate=0.25))) == 10
    assert not withheld_test_indices(tiny_split(test_withheld_rate=0.0))


# ── built datasets ──

def test_splits_are_balanced(existential_data):
    manifest = json.loads((existential_data / MANIFEST_FILE).read_text())
    for split, info in manifest['splits'].items():
        assert info['true'] == info['false'], split


def test_train_and_val_exclude_withheld_features(existential_data):
    for record in _records(existential_data):
        if record['split'] != 'test':
            assert not _has_withheld_feature(record), record['index']


def test_test_split_shows_withheld_features_at_the_configured_rate(existential_data):
    test = [r for r in _records(existential_data) if r['split'] == 'test']
    flagged = [r for r in test if r['withheld']]
    assert len(flagged) == round(0.5 * len(test))
    for record in test:
        assert _has_withheld_feature(record) == record['withheld']


def test_records_match_their_captions(existential_data):
    for record in _records(existential_data):
        assert record['family'] == 'existential'
        assert record['label'] in (0, 1)
        position = record['index'] - _split_start(existential_data, record['split'])
        assert record['label'] == int(position % 2 == 0)
        assert 1 not in record['token_ids']


def _split_start(path, split):
    manifest = json.loads((path / MANIFEST_FILE).read_text())
    return manifest['splits'][split]['start']


def test_single_shape_scenes_hold_one_object(tmp_path):
    path = build_dataset('single-shape', tiny_split(), tmp_path / 'single', progress=False)
    for record in _records(path):
        assert len(record['scene']['objects']) == 1


def test_unknown_family_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        build_dataset('nosuch', tiny_split(), tmp_path / 'x', progress=False)


def test_build_is_independent_of_worker_count(tmp_path):
    spec = tiny_split(train=12, val=6, test=6)
    one = build_dataset('numbers', spec, tmp_path / 'one', workers=1, progress=False)
    two = build_dataset('numbers', spec, tmp_path / 'two', workers=2, progress=False)
    for name in (MANIFEST_FILE, RECORDS_FILE, IMAGES_FILE):
        assert (one / name).read_bytes() == (two / name).read_bytes(), name


def test_mixed_dataset_records_every_family(tmp_path):
    mix = MixSpec((('existential', 1), ('relational', 1)))
    path = build_dataset(mix, tiny_split(train=40), tmp_path / 'mix', progress=False)
    assert {r['family'] for r in _records(path)} == {'existential', 'relational'}
    assert verify_dataset(path)['ok']


# ── verification ──

def test_verify_reports_a_clean_dataset(existential_data):
    report = verify_dataset(existential_data, deep=True)
    assert report['violations'] == []
    assert report['ok']
    assert report['instances'] == 48 + 32 + 32
    assert report['splits']['test']['withheld_rate'] == 0.5


def test_verify_reports_a_flipped_label(existential_data, tmp_path):
    path = tmp_path / 'corrupted'
    shutil.copytree(existential_data, path)
    records = _records(path)
    records[5]['label'] = 1 - records[5]['label']
    with open(path / RECORDS_FILE, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, separators=(',', ':')) + '\n')

    report = verify_dataset(path)
    mismatches = [v for v in report['violations'] if v['kind'] == 'label-mismatch']
    assert not report['ok']
    assert [v['index'] for v in mismatches] == [5]
    assert any(v['kind'] == 'checksum' for v in report['violations'])


def test_reader_rejects_truncated_images(existential_data, tmp_path):
    path = tmp_path / 'truncated'
    shutil.copytree(existential_data, path)
    data = (path / IMAGES_FILE).read_bytes()
    (path / IMAGES_FILE).write_bytes(data[:-10])
    with pytest.raises(CorruptRecord):
        DatasetReader(path)


def test_reader_rejects_a_plain_directory(tmp_path):
    with pytest.raises(ConfigError):
        DatasetReader(tmp_path)


def test_reader_cache_reloads_a_regenerated_directory(tmp_path):
    path = build_dataset('existential', tiny_split(), tmp_path / 'regen', progress=False)
    first = get_reader(path)
    assert get_reader(path) is first

    build_dataset('existential', tiny_split(train=26, seed=8), path, progress=False)
    second = get_reader(path)
    assert second is not first
    assert len(second) == len(first) + 2
    assert second.manifest['checksums'] != first.manifest['checksums']
    assert get_reader(path) is second
    cached = [reader for _, reader in dataset_module._readers.values()]
    assert second in cached and first not in cached


# ── batches ──

def test_batches_cover_the_split_once_per_epoch(existential_data):
    batches = list(iterate_batches(existential_data, 'val', 1, np.random.default_rng(0)))
    assert len(batches) == 32
    seen = sorted(int(b.indices[0]) for b in batches)
    assert seen == list(range(48, 80))


def test_batch_shapes_and_padding(existential_data):
    batch = next(iterate_batches(existential_data, 'train', 8, np.random.default_rng(1)))
    assert batch.images.shape == (8, 3, 32, 32)
    assert batch.images.dtype == np.float32
    assert 0.0 <= batch.images.min() and batch.images.max() <= 1.0
    assert batch.tokens.shape == (8, batch.lengths.max())
    for row, length in zip(batch.tokens, batch.lengths):
        assert (row[length:] == 0).all()
        assert (row[:length] > 1).all()
    assert set(batch.labels) <= {0, 1}


def test_batches_are_reproducible_for_a_seed(existential_data):
    first = [b.indices.tolist() for b in iterate_batches(existential_data, 'train', 16, np.random.default_rng(4))]
    second = [b.indices.tolist() for b in iterate_batches(existential_data, 'train', 16, np.random.default_rng(4))]
    assert first == second


def test_batch_size_must_be_positive(existential_data):
    with pytest.raises(ConfigError):
        next(iterate_batches(existential_data, 'train', 0, np.random.default_rng(0)))


@pytest.mark.slow
def test_full_scale_build_verifies_clean(tmp_path):
    spec = SplitSpec(train=10000, val=1000, test=1000, seed=7)
    path = build_dataset('existential', spec, tmp_path / 'full', workers=4, progress=False)
    report = verify_dataset(path)
    assert report['ok'], report['violations'][:5]
    assert abs(report['splits']['test']['withheld_rate'] - 0.5) <= 0.02
