"""
Curriculum Runs & Experiment Presets
Pretrain on one dataset (or start from an existing checkpoint), then
finetune on another. The finetune model starts from the pretrained
parameters and batch-norm statistics exactly; Adam moments and step count
start fresh.

Usage:
    from training.curriculum import CurriculumSpec, StageSpec, run_curriculum

    spec = CurriculumSpec(arch='film', model_config=cfg,
                          pretrain=StageSpec('data/simple-spatial', TrainSchedule(iterations=20000)),
                          finetune=StageSpec('data/relational', TrainSchedule(iterations=20000)))
    pretrain_record, finetune_record = run_curriculum(spec, 'runs/curriculum')
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from errors import ConfigError, ArchitectureMismatch
from engine.checkpoint import Checkpoint
from engine.optim import AdamState
from models import build_model, check_compatible, to_checkpoint
from training.trainer import DataMix, RunRecord, TrainSchedule, train, RECORD_FILE, FINAL_CHECKPOINT
from shapeworld.dataset import MixSpec, get_reader

logger = logging.getLogger(__name__)

SUMMARY_FILE = 'curriculum.json'


# ═══════════════════════════════════════════════════════════════
# Presets
# ═══════════════════════════════════════════════════════════════

# Family mixtures for `generate --preset`. Weights are relative.
MIX_PRESETS = {
    'broad-relational': {'existential': 1, 'logical': 1, 'numbers': 1, 'quantifiers': 1, 'relational': 1},
    'broad-implicit-superlatives': {'existential': 1, 'logical': 1, 'numbers': 1, 'quantifiers': 1,
                                    'implicit-relational': 1, 'superlatives': 1},
    'broad-relational-like': {'existential': 1, 'logical': 1, 'numbers': 1, 'quantifiers': 1,
                              'relational': 1, 'implicit-relational': 1, 'superlatives': 1},
    'spatial-relational': {'simple-spatial': 1, 'relational': 1},
    'spatial-relational-negation': {'simple-spatial': 1, 'relational-negation': 1},
    'existential-numbers': {'existential': 1, 'numbers': 1},
}

# Share of simple-spatial instances against relational.
DISTRIBUTION_SWEEP = (0.45, 0.475, 0.5, 0.525, 0.55, 0.575, 0.6)
MIX_PRESETS.update({
    f"distribution-{share * 100:g}": {'simple-spatial': share, 'relational': 1.0 - share}
    for share in DISTRIBUTION_SWEEP
})

# Max pairwise area overlap settings, from loosest to strictest.
OVERLAP_SWEEP = (0.25, 0.175, 0.10, 0.05)

# (pretrain dataset, finetune dataset), resolved under the data root.
CURRICULUM_PRESETS = {
    'simple-spatial->relational': ('simple-spatial', 'relational'),
    'simple-spatial->relational-negation': ('simple-spatial', 'relational-negation'),
    'existential->existential-numbers': ('existential', 'existential-numbers'),
}


def mix_preset(name):
    if name not in MIX_PRESETS:
        raise ConfigError(f"unknown mix preset {name!r}; expected one of {', '.join(sorted(MIX_PRESETS))}")
    return MixSpec(tuple(MIX_PRESETS[name].items()))


# ═══════════════════════════════════════════════════════════════
# Specs
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class StageSpec:
    data: object
    schedule: TrainSchedule


@dataclass(frozen=True)
class CurriculumSpec:
    """Exactly one of `pretrain` or `pretrain_checkpoint` must be given."""
    arch: str
    model_config: dict
    finetune: StageSpec
    pretrain: StageSpec = None
    pretrain_checkpoint: str = None
    optimizer: dict = field(default_factory=lambda: AdamState().hyperparameters())

    def __post_init__(self):
        if (self.pretrain is None) == (self.pretrain_checkpoint is None):
            raise ConfigError('curriculum needs either a pretrain stage or a pretrain checkpoint, not both')


def _vocabulary(data):
    readers = [get_reader(p) for p in DataMix.from_source(data).paths]
    digests = {r.vocabulary_digest for r in readers}
    if len(digests) != 1:
        raise ArchitectureMismatch('datasets in one stage use different vocabularies')
    return len(readers[0].vocabulary_tokens), digests.pop()


def _optimizer(spec):
    return AdamState(**spec.optimizer)


def transfer_weights(checkpoint, model):
    """Copy a checkpoint's parameters and buffers into a freshly built model, bit for bit."""
    model.load_arrays(checkpoint.params, checkpoint.buffers)
    for name, param in model.params.items():
        if not np.array_equal(param.data, checkpoint.params[name]):
            raise ArchitectureMismatch(f"{name}: weights changed in transfer (dtype mismatch?)")
    return model


def run_curriculum(spec, out_dir=None, progress=True):
    """Pretrain (or load), transfer, finetune. Returns (pretrain record, finetune record)."""
    out = Path(out_dir) if out_dir else None
    vocab_size, digest = _vocabulary(spec.finetune.data)

    logger.info(f"═══ Curriculum: {spec.arch}, finetune on {DataMix.from_source(spec.finetune.data).paths} ═══")

    # ── Pretrain stage ──
    if spec.pretrain_checkpoint:
        checkpoint = Checkpoint.load(spec.pretrain_checkpoint)
        check_compatible(checkpoint, spec.arch, spec.model_config, vocab_size, digest)
        sibling = Path(spec.pretrain_checkpoint).parent / RECORD_FILE
        pretrain_record = RunRecord.load(sibling) if sibling.exists() else RunRecord(
            checkpoint=str(spec.pretrain_checkpoint), config={'arch': checkpoint.arch})
        logger.info(f"Curriculum: starting from checkpoint {spec.pretrain_checkpoint}")
    else:
        pretrain_vocab = _vocabulary(spec.pretrain.data)
        if pretrain_vocab != (vocab_size, digest):
            raise ArchitectureMismatch('pretrain and finetune datasets use different vocabularies')
        model = build_model(spec.arch, spec.model_config, vocab_size, seed=spec.pretrain.schedule.seed,
                            vocab_digest=digest)
        pretrain_record = train(model, spec.pretrain.data, spec.pretrain.schedule,
                                out_dir=out / 'pretrain' if out else None, optimizer=_optimizer(spec),
                                progress=progress, label='pretrain', extra_config={'stage': 'pretrain'})
        checkpoint = Checkpoint.load(pretrain_record.checkpoint) if out else to_checkpoint(model)

    # ── Finetune stage ──
    model = build_model(spec.arch, spec.model_config, vocab_size, seed=spec.finetune.schedule.seed,
                        vocab_digest=digest)
    transfer_weights(checkpoint, model)
    logger.info('Curriculum: weights transferred, optimizer state reset')
    finetune_record = train(model, spec.finetune.data, spec.finetune.schedule,
                            out_dir=out / 'finetune' if out else None, optimizer=_optimizer(spec),
                            progress=progress, label='finetune',
                            extra_config={'stage': 'finetune',
                                          'pretrain_checkpoint': spec.pretrain_checkpoint or
                                          (str(out / 'pretrain' / FINAL_CHECKPOINT) if out else None)})

    if out:
        summary = {
            'arch': spec.arch,
            'pretrain_final': pretrain_record.final,
            'finetune_final': finetune_record.final,
            'pretrain_checkpoint': pretrain_record.checkpoint,
            'finetune_checkpoint': finetune_record.checkpoint,
        }
        with open(out / SUMMARY_FILE, 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    logger.info('═══ Curriculum: done ═══')
    return pretrain_record, finetune_record
