"""
Dataset Service
Builds balanced, withheld-aware train/val/test splits for a caption family or
a weighted mixture of families, stores them bit-exactly, streams batches from
disk and verifies stored datasets.

On-disk layout (one directory per dataset):
    manifest.json   split spec, source, vocabulary, per-split ranges, frame offsets, checksums
    records.jsonl   one JSON object per instance (train, then val, then test)
    images.bin      concatenated u8 RGB frames, row-major H×W×3

Usage:
    from shapeworld.dataset import SplitSpec, MixSpec, build_dataset, iterate_batches, verify_dataset

    path = build_dataset('existential', SplitSpec(train=1000, val=100, test=100, seed=7), 'data/existential')
    report = verify_dataset(path)
    for batch in iterate_batches(path, 'train', 64, np.random.default_rng(0)):
        ...
"""

import json
import random
import hashlib
import logging
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from errors import ConfigError, CorruptRecord, FilmWorldError, SceneInfeasible, SceneUnusable
from shapeworld.constants import (
    FAMILIES, FAMILY_COUNTS, WITHHELD_COUNTS, WITHHELD_COMBOS, DEFAULT_COUNT_SETS, family_count_set,
)
from shapeworld.worldgen import Scene, SceneSpec, sample_scene, rasterize, to_bytes, overlap_fraction
from shapeworld.semantics import (
    Undefined, evaluate, realize, tokenize, build_vocabulary, caption_to_dict, caption_from_dict,
)
from shapeworld.captioner import sample_caption

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SPLITS = ('train', 'val', 'test')

MANIFEST_FILE = 'manifest.json'
RECORDS_FILE = 'records.jsonl'
IMAGES_FILE = 'images.bin'


# ═══════════════════════════════════════════════════════════════
# Specs
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class MixSpec:
    """Weighted caption families. Weights are normalized to sum to 1."""
    components: tuple

    def __post_init__(self):
        if not self.components:
            raise ConfigError('mix needs at least one component')
        cleaned = []
        for family, weight in self.components:
            if family not in FAMILIES:
                raise ConfigError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
            if not weight > 0:
                raise ConfigError(f"mix weight for {family} must be positive, got {weight}")
            cleaned.append((family, float(weight)))
        total = sum(w for _, w in cleaned)
        object.__setattr__(self, 'components', tuple((f, w / total) for f, w in cleaned))

    @classmethod
    def single(cls, family):
        return cls(((family, 1.0),))

    @property
    def families(self):
        return tuple(f for f, _ in self.components)

    def draw(self, rng):
        """Pick a family by weight with a random.Random."""
        r = rng.random()
        cumulative = 0.0
        for family, weight in self.components:
            cumulative += weight
            if r < cumulative:
                return family
        return self.components[-1][0]

    def to_dict(self):
        return {'components': [{'family': f, 'weight': w} for f, w in self.components]}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple((c['family'], c['weight']) for c in d['components']))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"mix must look like {{'components': [{{'family': ..., 'weight': ...}}]}}: {e}")


@dataclass(frozen=True)
class SplitSpec:
    train: int = 20000
    val: int = 2000
    test: int = 2000
    withheld_counts: tuple = WITHHELD_COUNTS
    withheld_combos: tuple = WITHHELD_COMBOS
    test_withheld_rate: float = 0.5
    max_overlap: float = 0.25
    seed: int = 0
    image_size: int = 64
    supersample: int = 2
    caption_attempts: int = 100
    scene_attempts: int = 100
    count_sets: tuple = DEFAULT_COUNT_SETS
    min_size: float = 0.1
    max_size: float = 0.25
    placement_attempts: int = 1000

    def __post_init__(self):
        object.__setattr__(self, 'withheld_counts', tuple(self.withheld_counts))
        object.__setattr__(self, 'withheld_combos', tuple(tuple(c) for c in self.withheld_combos))
        object.__setattr__(self, 'count_sets', tuple(self.count_sets))
        for name in SPLITS:
            if getattr(self, name) < 2:
                raise ConfigError(f"split size {name}={getattr(self, name)} must be >= 2")
        if not 0.0 <= self.test_withheld_rate <= 1.0:
            raise ConfigError(f"test_withheld_rate must be in [0, 1], got {self.test_withheld_rate}")
        if not 0.0 <= self.max_overlap <= 1.0:
            raise ConfigError(f"max_overlap must be in [0, 1], got {self.max_overlap}")

    def size(self, split):
        return getattr(self, split)

    def scene_spec(self):
        return SceneSpec(
            count_sets=self.count_sets,
            max_overlap=self.max_overlap,
            withheld_combos=self.withheld_combos,
            withheld_counts=self.withheld_counts,
            min_size=self.min_size,
            max_size=self.max_size,
            placement_attempts=self.placement_attempts,
        )

    def to_dict(self):
        d = asdict(self)
        d['withheld_counts'] = list(self.withheld_counts)
        d['withheld_combos'] = [list(c) for c in self.withheld_combos]
        d['count_sets'] = list(self.count_sets)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_run_config(cls, run_config, **overrides):
        fields = dict(run_config['split'])
        fields.update(run_config['scene'])
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)


@dataclass(frozen=True)
class Instance:
    image: np.ndarray
    caption_surface: str
    caption_ast: dict
    token_ids: list
    label: int
    family: str
    scene: dict
    seed: int
    split: str
    withheld: bool = False

    def record(self, index):
        return {
            'index': index,
            'split': self.split,
            'family': self.family,
            'label': self.label,
            'caption': self.caption_surface,
            'ast': self.caption_ast,
            'token_ids': self.token_ids,
            'scene': self.scene,
            'seed': self.seed,
            'withheld': self.withheld,
        }


# ═══════════════════════════════════════════════════════════════
# Generation
# ═══════════════════════════════════════════════════════════════

def derive_seed(master_seed, split, index):
    """Per-instance sub-seed, independent of generation order."""
    digest = hashlib.sha256(f"{master_seed}:{split}:{index}".encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


def withheld_test_indices(split_spec):
    """Test positions that must show a withheld feature (exactly round(rate·n) of them)."""
    n = split_spec.test
    k = int(round(split_spec.test_withheld_rate * n))
    rng = random.Random(derive_seed(split_spec.seed, 'test-withheld', 0))
    return frozenset(rng.sample(range(n), k))


def _withheld_features(family, split_spec):
    features = []
    if FAMILY_COUNTS[family] is None or FAMILY_COUNTS[family] == 'at-least-2':
        features += [('count', c) for c in split_spec.withheld_counts
                     if c in family_count_set(family, (c,))]
    features += [('combo', tuple(c)) for c in split_spec.withheld_combos]
    return features


def _instance_scene_spec(family, split_spec, split, index, flagged):
    base = split_spec.scene_spec()
    spec = base.with_counts(family_count_set(family, base.count_sets))
    if not flagged:
        return spec
    features = _withheld_features(family, split_spec)
    if not features:
        raise ConfigError(f"{family}: no withheld feature can be injected into test scenes")
    kind, value = random.Random(derive_seed(split_spec.seed, f"{split}-feature", index)).choice(features)
    if kind == 'count':
        return base.with_counts((value,), allow_withheld=True)
    return replace(spec, forced_combo=value)


def generate_instance(mix, split_spec, split, index, flagged=False):
    """Generate one instance from its own sub-seed."""
    seed = derive_seed(split_spec.seed, split, index)
    rng = random.Random(seed)
    family = mix.draw(rng)
    target = index % 2 == 0
    scene_spec = _instance_scene_spec(family, split_spec, split, index, flagged)
    avoid = () if split == 'test' else split_spec.withheld_combos

    for _ in range(split_spec.scene_attempts):
        try:
            scene = sample_scene(scene_spec, rng, seed=seed)
        except SceneInfeasible as e:
            raise SceneInfeasible(str(e), family=family)
        try:
            caption = sample_caption(family, scene, target, rng,
                                     max_attempts=split_spec.caption_attempts, avoid_combos=avoid)
            break
        except SceneUnusable:
            continue
    else:
        raise SceneInfeasible(f"no usable scene within {split_spec.scene_attempts} attempts "
                              f"({split} #{index})", family=family)

    if evaluate(caption, scene) != target:
        raise FilmWorldError(f"{family}: caption recheck failed for {split} #{index}")

    surface = realize(caption)
    vocabulary = build_vocabulary()
    image = to_bytes(rasterize(scene, split_spec.image_size, split_spec.supersample))
    return Instance(
        image=image,
        caption_surface=surface,
        caption_ast=caption_to_dict(caption),
        token_ids=vocabulary.encode(tokenize(surface)),
        label=int(target),
        family=family,
        scene=scene.to_dict(),
        seed=seed,
        split=split,
        withheld=flagged,
    )


def _as_mix(source):
    if isinstance(source, MixSpec):
        return source
    if source not in FAMILIES:
        raise ConfigError(f"unknown family {source!r}; expected one of {', '.join(FAMILIES)}")
    return MixSpec.single(source)


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def build_dataset(source, split_spec, out_dir, workers=1, progress=True):
    """
    Generate and persist all three splits. Output bytes depend only on
    (source, split_spec): worker count changes speed, never content.
    """
    mix = _as_mix(source)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocabulary = build_vocabulary()
    frame_bytes = split_spec.image_size * split_spec.image_size * 3

    logger.info(f"Dataset: ═══ Building {'+'.join(mix.families)} → {out} "
                f"({split_spec.train}/{split_spec.val}/{split_spec.test}, seed {split_spec.seed}) ═══")

    images_hash = hashlib.sha256()
    records_hash = hashlib.sha256()
    offsets = []
    splits = {}
    position = 0

    with open(out / IMAGES_FILE, 'wb') as images_out, open(out / RECORDS_FILE, 'wb') as records_out:
        for split in SPLITS:
            n = split_spec.size(split)
            flagged = withheld_test_indices(split_spec) if split == 'test' else frozenset()

            def make(i, split=split, flagged=flagged):
                return generate_instance(mix, split_spec, split, i, i in flagged)

            start = position
            labels = [0, 0]
            if workers > 1:
                pool = ThreadPoolExecutor(max_workers=workers)
                stream = pool.map(make, range(n))
            else:
                pool = None
                stream = map(make, range(n))
            try:
                for instance in tqdm(stream, total=n, desc=f"{split:>5}", disable=not progress, leave=False):
                    frame = instance.image.tobytes()
                    offsets.append(position * frame_bytes)
                    images_out.write(frame)
                    images_hash.update(frame)
                    line = (_dumps(instance.record(position)) + '\n').encode('utf-8')
                    records_out.write(line)
                    records_hash.update(line)
                    labels[instance.label] += 1
                    position += 1
            finally:
                if pool is not None:
                    pool.shutdown(wait=True, cancel_futures=True)

            splits[split] = {'start': start, 'count': n, 'true': labels[1], 'false': labels[0]}
            logger.info(f"Dataset: {split} done ({n} instances, {labels[1]} true / {labels[0]} false)")

    manifest = {
        'format_version': FORMAT_VERSION,
        'source': mix.to_dict(),
        'split_spec': split_spec.to_dict(),
        'image': {
            'height': split_spec.image_size,
            'width': split_spec.image_size,
            'channels': 3,
            'dtype': 'u8',
            'layout': 'HWC',
            'frame_bytes': frame_bytes,
        },
        'vocabulary': vocabulary.to_dict(),
        'splits': splits,
        'offsets': offsets,
        'checksums': {
            IMAGES_FILE: images_hash.hexdigest(),
            RECORDS_FILE: records_hash.hexdigest(),
        },
    }
    with open(out / MANIFEST_FILE, 'w', encoding='utf-8') as f:
        f.write(json.dumps(manifest, sort_keys=True, indent=2) + '\n')

    logger.info(f"Dataset: ═══ Wrote {position} instances to {out} ═══")
    return out


# ═══════════════════════════════════════════════════════════════
# Reading
# ═══════════════════════════════════════════════════════════════

Batch = namedtuple('Batch', ['images', 'tokens', 'lengths', 'labels', 'indices', 'families'])


class DatasetReader:
    """Read-only view of a stored dataset. Images are memory-mapped."""

    def __init__(self, path):
        self.path = Path(path)
        manifest_path = self.path / MANIFEST_FILE
        if not manifest_path.exists():
            raise ConfigError(f"{self.path} is not a dataset (no {MANIFEST_FILE})")
        with open(manifest_path, 'r', encoding='utf-8') as f:
            self.manifest = json.load(f)
        self.records = self._load_records()

        image = self.manifest['image']
        self.height, self.width = image['height'], image['width']
        self.frame_bytes = image['frame_bytes']
        expected = self.frame_bytes * len(self.records)
        images_path = self.path / IMAGES_FILE
        actual = images_path.stat().st_size
        if actual != expected:
            raise CorruptRecord(f"{IMAGES_FILE} holds {actual} bytes, expected {expected}")
        self.frames = np.memmap(images_path, dtype=np.uint8, mode='r') if expected else np.zeros(0, np.uint8)
        self.labels = np.array([r['label'] for r in self.records], dtype=np.int64)

    def _load_records(self):
        records = []
        with open(self.path / RECORDS_FILE, 'r', encoding='utf-8') as f:
            for index, line in enumerate(f):
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise CorruptRecord(f"unparseable JSON ({e})", index=index)
                if record.get('index') != index or 'label' not in record or 'token_ids' not in record:
                    raise CorruptRecord('missing or out-of-order fields', index=index)
                records.append(record)
        return records

    def __len__(self):
        return len(self.records)

    @property
    def vocabulary_tokens(self):
        return tuple(self.manifest['vocabulary']['tokens'])

    @property
    def vocabulary_digest(self):
        return self.manifest['vocabulary']['digest']

    @property
    def families(self):
        return tuple(c['family'] for c in self.manifest['source']['components'])

    def split_indices(self, split):
        if split not in self.manifest['splits']:
            raise ConfigError(f"unknown split {split!r}; expected one of {', '.join(SPLITS)}")
        info = self.manifest['splits'][split]
        return np.arange(info['start'], info['start'] + info['count'])

    def image(self, index):
        offset = self.manifest['offsets'][index]
        frame = self.frames[offset:offset + self.frame_bytes]
        if frame.size != self.frame_bytes:
            raise CorruptRecord('image frame out of range', index=index)
        return np.asarray(frame).reshape(self.height, self.width, 3)

    def batch(self, indices, dtype=np.float32):
        """Float images N×3×H×W in [0, 1], right-padded tokens, lengths and labels."""
        indices = np.asarray(indices, dtype=np.int64)
        images = np.stack([self.image(i) for i in indices]).astype(dtype) / dtype(255.0)
        images = images.transpose(0, 3, 1, 2).copy()
        token_lists = [self.records[i]['token_ids'] for i in indices]
        lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
        tokens = np.zeros((len(indices), int(lengths.max()) if len(indices) else 0), dtype=np.int64)
        for row, ids in enumerate(token_lists):
            tokens[row, :len(ids)] = ids
        families = [self.records[i]['family'] for i in indices]
        return Batch(images, tokens, lengths, self.labels[indices].copy(), indices, families)


# resolved dataset directory -> (manifest stamp, reader); one entry per directory
_readers = {}


def _manifest_stamp(path):
    manifest = path / MANIFEST_FILE
    if not manifest.exists():
        return None
    stat = manifest.stat()
    return stat.st_mtime_ns, stat.st_size


def get_reader(path):
    """Cached reader per dataset directory; reloads when the manifest changes."""
    path = Path(path)
    key = str(path.resolve())
    stamp = _manifest_stamp(path)
    cached = _readers.get(key)
    if cached is not None and cached[0] == stamp:
        return cached[1]
    if cached is not None:
        logger.debug(f"Dataset: manifest changed for {path}, dropping the stale reader")
        del _readers[key]
    else:
        logger.debug(f"Dataset: reader cache miss for {path}, loading")
    reader = DatasetReader(path)
    _readers[key] = (stamp, reader)
    return reader


def iterate_batches(data, split, batch_size, rng, epochs=1, dtype=np.float32):
    """
    Shuffled batches of a split. `epochs=None` cycles forever, reshuffling
    each pass. `data` is a dataset path or a DatasetReader.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    reader = data if isinstance(data, DatasetReader) else get_reader(data)
    indices = reader.split_indices(split)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = indices[rng.permutation(len(indices))]
        for start in range(0, len(order), batch_size):
            yield reader.batch(order[start:start + batch_size], dtype=dtype)
        epoch += 1


# ═══════════════════════════════════════════════════════════════
# Verification
# ═══════════════════════════════════════════════════════════════

def _file_sha256(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def verify_dataset(path, deep=False, check_overlap=True):
    """
    Re-derive every stored fact that can be re-derived and report all
    disagreements. Returns {'ok', 'instances', 'splits', 'violations'}.
    """
    path = Path(path)
    violations = []

    def violation(kind, index, detail):
        violations.append({'kind': kind, 'index': index, 'detail': detail})

    with open(path / MANIFEST_FILE, 'r', encoding='utf-8') as f:
        manifest = json.load(f)

    for name, expected in manifest['checksums'].items():
        actual = _file_sha256(path / name)
        if actual != expected:
            violation('checksum', None, f"{name}: expected {expected[:12]}…, found {actual[:12]}…")

    split_spec = SplitSpec.from_dict(manifest['split_spec'])
    withheld_counts = set(split_spec.withheld_counts)
    withheld_combos = set(split_spec.withheld_combos)
    vocabulary = build_vocabulary()
    if manifest['vocabulary']['digest'] != vocabulary.digest():
        violation('vocabulary', None, 'stored vocabulary differs from the current grammar')

    records = []
    with open(path / RECORDS_FILE, 'r', encoding='utf-8') as f:
        for index, line in enumerate(f):
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                violation('corrupt-record', index, str(e))
                records.append(None)

    frame_bytes = manifest['image']['frame_bytes']
    images = np.memmap(path / IMAGES_FILE, dtype=np.uint8, mode='r') if frame_bytes and records else None
    if images is not None and images.size != frame_bytes * len(records):
        violation('image-size', None, f"{images.size} bytes for {len(records)} frames of {frame_bytes}")
        images = None

    split_reports = {}
    for split in SPLITS:
        info = manifest['splits'][split]
        labels = [0, 0]
        flagged = 0
        for index in range(info['start'], info['start'] + info['count']):
            record = records[index] if index < len(records) else None
            if record is None:
                continue
            try:
                scene = Scene.from_dict(record['scene'])
                caption = caption_from_dict(record['ast'])
            except (KeyError, TypeError, ConfigError) as e:
                violation('corrupt-record', index, str(e))
                continue

            label = record['label']
            labels[1 if label else 0] += 1
            truth = evaluate(caption, scene)
            if isinstance(truth, Undefined):
                violation('undefined-caption', index, truth.reason)
            elif int(truth) != label:
                violation('label-mismatch', index, f"stored {label}, evaluates {int(truth)}")

            if realize(caption) != record['caption']:
                violation('surface-mismatch', index, record['caption'])
            if vocabulary.encode(tokenize(record['caption'])) != record['token_ids']:
                violation('token-mismatch', index, record['caption'])

            count = len(scene)
            combos = {(o.shape, o.color) for o in scene.objects}
            has_withheld = count in withheld_counts or bool(combos & withheld_combos)
            if split == 'test':
                flagged += has_withheld
            else:
                if count in withheld_counts:
                    violation('withheld-count', index, f"{count} objects in {split}")
                for combo in sorted(combos & withheld_combos):
                    violation('withheld-combo', index, f"{combo[1]} {combo[0]} in {split}")

            allowed = set(family_count_set(record['family'], split_spec.count_sets))
            if split == 'test':
                allowed |= withheld_counts
            if count not in allowed:
                violation('family-count', index, f"{record['family']} scene with {count} objects")

            if check_overlap:
                for i in range(count):
                    for j in range(i + 1, count):
                        overlap = overlap_fraction(scene.objects[i], scene.objects[j])
                        if overlap > split_spec.max_overlap:
                            violation('overlap', index, f"objects {i},{j} overlap {overlap:.3f}")

            if deep and images is not None:
                stored = np.asarray(images[index * frame_bytes:(index + 1) * frame_bytes])
                rendered = to_bytes(rasterize(scene, split_spec.image_size, split_spec.supersample))
                if not np.array_equal(stored, rendered.ravel()):
                    violation('image-mismatch', index, 'stored frame differs from re-rendered scene')

        if abs(labels[1] - labels[0]) > 1:
            violation('balance', None, f"{split}: {labels[1]} true vs {labels[0]} false")
        report = {'count': info['count'], 'true': labels[1], 'false': labels[0]}
        if split == 'test':
            rate = flagged / info['count'] if info['count'] else 0.0
            report['withheld_rate'] = rate
            if info['count'] >= 25 and abs(rate - split_spec.test_withheld_rate) > 0.02:
                violation('withheld-rate', None,
                          f"test withheld rate {rate:.3f} vs configured {split_spec.test_withheld_rate}")
            if split_spec.test_withheld_rate > 0 and info['count'] >= 10 and flagged == 0:
                violation('withheld-rate', None, 'test split shows no withheld feature')
        split_reports[split] = report

    ok = not violations
    logger.info(f"Dataset: verify {path} → {'clean' if ok else f'{len(violations)} violation(s)'}")
    return {'path': str(path), 'ok': ok, 'instances': len(records),
            'splits': split_reports, 'violations': violations}
