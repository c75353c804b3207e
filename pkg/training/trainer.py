"""
Trainer
Iteration-based training with a fixed evaluation schedule: every 1k
iterations for the first 10k, every 5k afterwards, plus iteration 0.
Training data is one stored dataset or a weighted mixture of several; each
batch instance picks its dataset independently by weight.

Run directory:
    config.json         snapshot of model, schedule, optimizer and data
    log.txt             one line per eval point
    curves.csv/.svg/.xlsx
    family_curves.csv   per-family val accuracy (mixtures only)
    final.ckpt          (plus iter_NNNNNN.ckpt when checkpointing at eval points)
    record.json         the full RunRecord including final val/test accuracy

Usage:
    from training.trainer import TrainSchedule, train, evaluate

    record = train(model, 'data/existential', TrainSchedule(iterations=3000), out_dir='runs/ex')
    accuracy = evaluate(model, 'data/existential', 'test')
"""

import json
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, field, fields
from pathlib import Path

import numpy as np
from tqdm import tqdm

from errors import ConfigError, ArchitectureMismatch, NonFiniteLoss, NonFiniteActivation
from engine import ops
from engine.tensor import Tape, backward
from engine.optim import AdamState, adam_step
from models import forward, save_model
from shapeworld.dataset import Batch, DatasetReader, get_reader
from training.metrics import emit_metrics

logger = logging.getLogger(__name__)

DENSE_EVAL_EVERY = 1000
DENSE_EVAL_UNTIL = 10000
SPARSE_EVAL_EVERY = 5000

FINAL_CHECKPOINT = 'final.ckpt'
RECORD_FILE = 'record.json'
LOG_FILE = 'log.txt'
CONFIG_FILE = 'config.json'


def eval_points(iterations):
    """{0} ∪ {1000k ≤ min(budget, 10k)} ∪ {5000k > 10k, ≤ budget}, sorted."""
    points = {0}
    points.update(range(DENSE_EVAL_EVERY, min(iterations, DENSE_EVAL_UNTIL) + 1, DENSE_EVAL_EVERY))
    points.update(range(DENSE_EVAL_UNTIL + SPARSE_EVAL_EVERY, iterations + 1, SPARSE_EVAL_EVERY))
    return tuple(sorted(points))


# ═══════════════════════════════════════════════════════════════
# Schedule & records
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TrainSchedule:
    iterations: int = 100000
    batch_size: int = 64
    eval_sample_size: int = None
    eval_batch_size: int = 256
    deterministic: bool = True
    checkpoint_at_eval: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError('batch sizes must be >= 1')
        if self.eval_sample_size is not None and self.eval_sample_size < 1:
            raise ConfigError(f"eval_sample_size must be >= 1 or null, got {self.eval_sample_size}")

    @property
    def eval_points(self):
        return eval_points(self.iterations)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d, **overrides):
        values = dict(d)
        values.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown schedule key(s): {', '.join(sorted(unknown))}")
        return cls(**values)


@dataclass
class EvalEntry:
    iteration: int
    val_accuracy: float
    train_loss: float = None
    wall_clock: float = 0.0
    family_accuracy: dict = None


@dataclass
class RunRecord:
    entries: list = field(default_factory=list)
    checkpoint: str = None
    config: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return [e.iteration for e in self.entries]

    @property
    def accuracies(self):
        return [e.val_accuracy for e in self.entries]

    def to_dict(self):
        return {
            'entries': [asdict(e) for e in self.entries],
            'checkpoint': self.checkpoint,
            'config': self.config,
            'loss_trace': self.loss_trace,
            'final': self.final,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(entries=[EvalEntry(**e) for e in d['entries']], checkpoint=d.get('checkpoint'),
                   config=d.get('config', {}), loss_trace=d.get('loss_trace', []), final=d.get('final', {}))

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


# ═══════════════════════════════════════════════════════════════
# Training data
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class DataMix:
    """Weighted stored datasets. Weights are normalized to sum to 1."""
    components: tuple

    def __post_init__(self):
        if not self.components:
            raise ConfigError('training mix needs at least one dataset')
        cleaned = []
        for path, weight in self.components:
            if not weight > 0:
                raise ConfigError(f"mix weight for {path} must be positive, got {weight}")
            cleaned.append((str(path), float(weight)))
        total = sum(w for _, w in cleaned)
        object.__setattr__(self, 'components', tuple((p, w / total) for p, w in cleaned))

    @property
    def paths(self):
        return tuple(p for p, _ in self.components)

    @property
    def weights(self):
        return np.array([w for _, w in self.components])

    def to_dict(self):
        return {'components': [{'data': p, 'weight': w} for p, w in self.components]}

    @classmethod
    def from_dict(cls, d, resolve=None):
        resolve = resolve or (lambda p: p)
        try:
            return cls(tuple((resolve(c['data']), c['weight']) for c in d['components']))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"training mix must look like {{'components': [{{'data': ..., 'weight': ...}}]}}: {e}")

    @classmethod
    def from_source(cls, source):
        if isinstance(source, DataMix):
            return source
        if isinstance(source, DatasetReader):
            return cls(((source.path, 1.0),))
        if isinstance(source, dict):
            return cls.from_dict(source)
        return cls(((source, 1.0),))


def _readers(source):
    if isinstance(source, DatasetReader):
        return [source]
    mix = DataMix.from_source(source)
    return [get_reader(p) for p in mix.paths]


def concat_batches(parts):
    if len(parts) == 1:
        return parts[0]
    width = max(p.tokens.shape[1] for p in parts)
    tokens = np.concatenate([np.pad(p.tokens, ((0, 0), (0, width - p.tokens.shape[1]))) for p in parts])
    return Batch(
        images=np.concatenate([p.images for p in parts]),
        tokens=tokens,
        lengths=np.concatenate([p.lengths for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        indices=np.concatenate([p.indices for p in parts]),
        families=[f for p in parts for f in p.families],
    )


class TrainingMix:
    """
    Endless training batches. Each instance draws its dataset i.i.d. by
    weight; within a dataset instances come from a reshuffled cycle over the
    train split.
    """

    def __init__(self, readers, weights, batch_size, rng, split='train'):
        self.readers = readers
        self.weights = np.asarray(weights, dtype=np.float64)
        self.batch_size = batch_size
        self.rng = rng
        self.split = split
        self._order = [None] * len(readers)
        self._position = [0] * len(readers)

    def draw_components(self, n):
        return self.rng.choice(len(self.readers), size=n, p=self.weights)

    def _next_index(self, k):
        order = self._order[k]
        if order is None or self._position[k] >= len(order):
            indices = self.readers[k].split_indices(self.split)
            order = self._order[k] = indices[self.rng.permutation(len(indices))]
            self._position[k] = 0
        index = order[self._position[k]]
        self._position[k] += 1
        return index

    def next_batch(self, dtype=np.float32):
        components = self.draw_components(self.batch_size)
        parts = []
        for k, reader in enumerate(self.readers):
            count = int((components == k).sum())
            if count:
                parts.append(reader.batch([self._next_index(k) for _ in range(count)], dtype=dtype))
        return concat_batches(parts)


# ═══════════════════════════════════════════════════════════════
# Evaluation
# ═══════════════════════════════════════════════════════════════

def model_dtype(model):
    return next(iter(model.params.values())).data.dtype.type


def predict(model, reader, indices, batch_size=256):
    """Predicted labels (eval mode) for instances of one dataset."""
    was_training = model.training
    model.eval()
    predictions = []
    try:
        for start in range(0, len(indices), batch_size):
            batch = reader.batch(indices[start:start + batch_size], dtype=model_dtype(model))
            logits = forward(model, batch.images, batch.tokens, batch.lengths)
            predictions.append(logits.data.argmax(axis=1))
    finally:
        model.training = was_training
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def _eval_sets(readers, split, sample_size=None, seed=0):
    sets = []
    for k, reader in enumerate(readers):
        indices = reader.split_indices(split)
        if sample_size is not None and sample_size < len(indices):
            rng = np.random.default_rng([seed, k])
            indices = np.sort(rng.choice(indices, size=sample_size, replace=False))
        sets.append((reader, indices))
    return sets


def _tally(model, sets, batch_size):
    correct, total = {}, {}
    for reader, indices in sets:
        predictions = predict(model, reader, indices, batch_size)
        hits = predictions == reader.labels[indices]
        for index, hit in zip(indices, hits):
            family = reader.records[index]['family']
            correct[family] = correct.get(family, 0) + int(hit)
            total[family] = total.get(family, 0) + 1
    return correct, total


def _by_family(correct, total):
    result = {f: correct[f] / total[f] for f in sorted(total)}
    n = sum(total.values())
    result['overall'] = sum(correct.values()) / n if n else 0.0
    return result


def evaluate_by_family(model, data, split='val', batch_size=256, sample_size=None, seed=0):
    """Accuracy per caption family in the split, plus 'overall'."""
    sets = _eval_sets(_readers(data), split, sample_size, seed)
    return _by_family(*_tally(model, sets, batch_size))


def evaluate(model, data, split='val', batch_size=256, sample_size=None, seed=0):
    """Fraction of instances where argmax(logits) equals the label, in eval mode."""
    return evaluate_by_family(model, data, split, batch_size, sample_size, seed)['overall']


# ═══════════════════════════════════════════════════════════════
# Training
# ═══════════════════════════════════════════════════════════════

def check_vocabulary(model, readers):
    for reader in readers:
        size = len(reader.vocabulary_tokens)
        if size != model.vocab_size:
            raise ArchitectureMismatch(f"{reader.path}: vocabulary has {size} tokens, model expects {model.vocab_size}")
        if model.vocab_digest and model.vocab_digest != reader.vocabulary_digest:
            raise ArchitectureMismatch(f"{reader.path}: vocabulary digest differs from the model's")
    if model.vocab_digest is None:
        model.vocab_digest = readers[0].vocabulary_digest


def train_step(model, batch, optimizer):
    """One forward/backward/Adam update. Returns the batch loss."""
    model.train()
    for param in model.params.values():
        param.grad = None
    with Tape():
        logits = forward(model, batch.images, batch.tokens, batch.lengths)
        loss = ops.softmax_cross_entropy(logits, batch.labels)
    grads = backward(loss)
    adam_step(model.params, {name: grads.get(p) for name, p in model.params.items()}, optimizer)
    return float(loss.item())


def _log_line(entry):
    loss = '-' if entry.train_loss is None else f"{entry.train_loss:.6f}"
    return (f"iteration={entry.iteration} val_accuracy={entry.val_accuracy:.6f} "
            f"train_loss={loss} wall_clock={entry.wall_clock:.2f}")


def train(model, data, schedule, out_dir=None, optimizer=None, progress=True, label=None, extra_config=None):
    """
    Run schedule.iterations optimizer steps, evaluating on the val split at
    every eval point. Writes the run directory when out_dir is given.
    """
    mix = DataMix.from_source(data)
    readers = [get_reader(p) for p in mix.paths]
    check_vocabulary(model, readers)
    optimizer = optimizer or AdamState()
    dtype = model_dtype(model)
    rng = np.random.default_rng(schedule.seed)
    sampler = TrainingMix(readers, mix.weights, schedule.batch_size, rng)
    val_sets = _eval_sets(readers, 'val', schedule.eval_sample_size, schedule.seed)
    points = set(schedule.eval_points)

    record = RunRecord(config={
        'arch': model.arch,
        'model': model.config.to_dict(),
        'parameter_count': model.parameter_count(),
        'schedule': schedule.to_dict(),
        'optimizer': optimizer.hyperparameters(),
        'data': mix.to_dict(),
        **(extra_config or {}),
    })

    out = Path(out_dir) if out_dir else None
    log_file = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / CONFIG_FILE, 'w', encoding='utf-8') as f:
            json.dump(record.config, f, indent=2, sort_keys=True)
        log_file = open(out / LOG_FILE, 'w', encoding='utf-8')

    logger.info(f"═══ Trainer: {model.arch} for {schedule.iterations} iterations "
                f"on {', '.join(mix.paths)} (batch {schedule.batch_size}, seed {schedule.seed}) ═══")
    start = time.perf_counter()
    window = []
    prefetch = None if schedule.deterministic else ThreadPoolExecutor(max_workers=1)
    pending = prefetch.submit(sampler.next_batch, dtype) if prefetch and schedule.iterations else None
    bar = tqdm(total=schedule.iterations, desc=label or model.arch, unit='it', disable=not progress)

    try:
        for iteration in range(schedule.iterations + 1):
            if iteration in points:
                accuracy = _by_family(*_tally(model, val_sets, schedule.eval_batch_size))
                entry = EvalEntry(
                    iteration=iteration,
                    val_accuracy=accuracy.pop('overall'),
                    train_loss=float(np.mean(window)) if window else None,
                    wall_clock=time.perf_counter() - start,
                    family_accuracy=accuracy,
                )
                record.entries.append(entry)
                window = []
                logger.info(f"Trainer: {_log_line(entry)}")
                if log_file:
                    log_file.write(_log_line(entry) + '\n')
                    log_file.flush()
                if out and schedule.checkpoint_at_eval and iteration:
                    save_model(model, out / f"iter_{iteration:06d}.ckpt", optimizer, meta={'iteration': iteration})
            if iteration == schedule.iterations:
                break

            if prefetch:
                batch = pending.result()
                if iteration + 1 < schedule.iterations:
                    pending = prefetch.submit(sampler.next_batch, dtype)
            else:
                batch = sampler.next_batch(dtype)
            try:
                loss = train_step(model, batch, optimizer)
            except NonFiniteLoss as e:
                raise NonFiniteLoss(str(e), iteration=iteration)
            except NonFiniteActivation as e:
                raise NonFiniteActivation(f"{e} at iteration {iteration}")
            record.loss_trace.append(loss)
            window.append(loss)
            bar.update(1)
    finally:
        bar.close()
        if prefetch:
            prefetch.shutdown(wait=True)
        if log_file:
            log_file.close()

    record.final = {
        'val': evaluate_by_family(model, mix, 'val', schedule.eval_batch_size),
        'test': evaluate_by_family(model, mix, 'test', schedule.eval_batch_size),
    }
    logger.info(f"Trainer: final val {record.final['val']['overall']:.4f}, "
                f"test {record.final['test']['overall']:.4f}")

    if out:
        record.checkpoint = str(save_model(model, out / FINAL_CHECKPOINT, optimizer,
                                           meta={'iteration': schedule.iterations}))
        emit_metrics(record, out, label=label)
        record.save(out / RECORD_FILE)
    logger.info(f"═══ Trainer: done in {time.perf_counter() - start:.1f}s ═══")
    return record
