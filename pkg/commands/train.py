"""
Training Commands
train       — train one model on a dataset or a weighted dataset mix (optionally from a checkpoint).
eval        — accuracy of a checkpoint on dataset splits.
curriculum  — pretrain then finetune in one go.
curves      — merge the learning curves of several runs into one chart.
"""

import json
import logging
from pathlib import Path

import click

from config import Config, load_run_config
from errors import ArchitectureMismatch, ConfigError
from commands import handle_errors, emit
from engine.checkpoint import Checkpoint
from engine.optim import AdamState
from models import ARCHITECTURES, build_model, check_compatible, config_section, load_model
from shapeworld.dataset import get_reader
from training.trainer import DataMix, TrainSchedule, train as run_training, evaluate_by_family, check_vocabulary
from training.curriculum import CURRICULUM_PRESETS, CurriculumSpec, StageSpec, run_curriculum, transfer_weights
from training.metrics import merge_curves

logger = logging.getLogger(__name__)

MODEL_CHOICE = click.Choice(sorted(ARCHITECTURES))


# ── Data resolution ──

def _dataset_path(name):
    path = Config.resolve_data_path(name)
    if not (path / 'manifest.json').exists():
        raise ConfigError(f"no dataset at {path} (set FILMWORLD_DATA or pass a path)")
    return str(path)


def _data_source(data, mix_file):
    if bool(data) == bool(mix_file):
        raise ConfigError('give exactly one of --data or --mix')
    if data:
        return DataMix(((_dataset_path(data), 1.0),)), Path(data).name
    try:
        with open(mix_file, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{mix_file}: not valid JSON ({e})")
    return DataMix.from_dict(document, resolve=_dataset_path), Path(mix_file).stem


def _data_facts(source):
    """(image size, vocabulary size, vocabulary digest) shared by every dataset in a source."""
    readers = [get_reader(p) for p in source.paths]
    sizes = {r.height for r in readers}
    if len(sizes) != 1:
        raise ConfigError(f"datasets in one run have different image sizes: {sorted(sizes)}")
    return sizes.pop(), len(readers[0].vocabulary_tokens), readers[0].vocabulary_digest


def _model_config(run_config, arch, image_size):
    return dict(run_config[config_section(arch)], image_size=image_size)


def _run_lines(record, out):
    lines = [f"Run {out}:"]
    for e in record.entries:
        loss = '-' if e.train_loss is None else f"{e.train_loss:.4f}"
        lines.append(f"  {e.iteration:>7}  val {e.val_accuracy:.4f}  loss {loss}")
    lines.append(f"  final val {record.final['val']['overall']:.4f}  test {record.final['test']['overall']:.4f}")
    lines.append(f"  checkpoint {record.checkpoint}")
    return lines


def _run_report(record, out):
    return {'run_dir': str(out), 'checkpoint': record.checkpoint, 'final': record.final,
            'entries': [{'iteration': e.iteration, 'val_accuracy': e.val_accuracy, 'train_loss': e.train_loss}
                        for e in record.entries]}


# ═══════════════════════════════════════════════════════════════
# Commands
# ═══════════════════════════════════════════════════════════════

@click.command('train')
@click.option('--data', help='Dataset path or name under the data root.')
@click.option('--mix', 'mix_file', type=click.Path(dir_okay=False),
              help='JSON {"components": [{"data": ..., "weight": ...}]}.')
@click.option('--model', 'arch', type=MODEL_CHOICE, default='film', show_default=True)
@click.option('--out', help='Run directory (default: <runs root>/<data>-<model>).')
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), help='Run-config JSON.')
@click.option('--iterations', type=int)
@click.option('--batch-size', type=int)
@click.option('--seed', type=int)
@click.option('--eval-sample-size', type=int)
@click.option('--from-checkpoint', type=click.Path(dir_okay=False), help='Start from these weights.')
@click.option('--checkpoint-at-eval', is_flag=True, default=None)
@click.option('--progress/--no-progress', default=True)
@handle_errors
def train(data, mix_file, arch, out, config_file, iterations, batch_size, seed, eval_sample_size,
          from_checkpoint, checkpoint_at_eval, progress):
    """Train a model."""
    run_config = load_run_config(config_file)
    source, name = _data_source(data, mix_file)
    image_size, vocab_size, digest = _data_facts(source)
    schedule = TrainSchedule.from_dict(run_config['schedule'], iterations=iterations, batch_size=batch_size,
                                       seed=seed, eval_sample_size=eval_sample_size,
                                       checkpoint_at_eval=checkpoint_at_eval)
    model_config = _model_config(run_config, arch, image_size)

    if from_checkpoint:
        checkpoint = Checkpoint.load(from_checkpoint)
        trained_size = checkpoint.config.get('image_size')
        if trained_size is not None and trained_size != image_size:
            raise ArchitectureMismatch(f"checkpoint was trained on {trained_size}px images, data has {image_size}px")
        if config_file is None and checkpoint.arch == arch:
            model_config = dict(checkpoint.config)
        check_compatible(checkpoint, arch, model_config, vocab_size, digest)
        model = build_model(arch, model_config, vocab_size, seed=schedule.seed, vocab_digest=digest)
        transfer_weights(checkpoint, model)
        logger.info(f"Train: initialized from {from_checkpoint}, optimizer state reset")
    else:
        model = build_model(arch, model_config, vocab_size, seed=schedule.seed, vocab_digest=digest)

    out = Path(out) if out else Path(Config.RUNS_ROOT) / f"{name}-{arch}"
    record = run_training(model, source, schedule, out_dir=out,
                          optimizer=AdamState.from_config(run_config['optimizer']), progress=progress,
                          label=f"{name}-{arch}", extra_config={'from_checkpoint': from_checkpoint})
    emit(_run_report(record, out), _run_lines(record, out))


@click.command('eval')
@click.option('--data', required=True, help='Dataset path or name under the data root.')
@click.option('--checkpoint', required=True, type=click.Path(dir_okay=False))
@click.option('--split', 'splits', multiple=True, default=('val', 'test'), show_default=True)
@click.option('--batch-size', type=int, default=256, show_default=True)
@click.option('--by-family', is_flag=True, help='Also print accuracy per caption family.')
@handle_errors
def evaluate(data, checkpoint, splits, batch_size, by_family):
    """Accuracy of a checkpoint on dataset splits."""
    path = _dataset_path(data)
    model, _ = load_model(checkpoint)
    reader = get_reader(path)
    check_vocabulary(model, [reader])

    report = {'data': path, 'checkpoint': checkpoint, 'splits': {}}
    lines = []
    for split in splits:
        accuracy = evaluate_by_family(model, reader, split, batch_size=batch_size)
        report['splits'][split] = accuracy
        lines.append(f"{split:<5} accuracy {accuracy['overall']:.4f}")
        if by_family:
            lines.extend(f"        {family:<22} {value:.4f}" for family, value in accuracy.items()
                         if family != 'overall')
    emit(report, lines)


@click.command('curriculum')
@click.option('--preset', type=click.Choice(sorted(CURRICULUM_PRESETS)),
              help='Named (pretrain, finetune) pair of datasets under the data root.')
@click.option('--pretrain-data', help='Pretrain dataset.')
@click.option('--pretrain-checkpoint', type=click.Path(dir_okay=False), help='Skip pretraining, start here.')
@click.option('--finetune-data', help='Finetune dataset.')
@click.option('--model', 'arch', type=MODEL_CHOICE, default='film', show_default=True)
@click.option('--out', help='Curriculum directory (default: <runs root>/<pretrain>-to-<finetune>-<model>).')
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), help='Run-config JSON.')
@click.option('--pretrain-iterations', type=int)
@click.option('--finetune-iterations', type=int)
@click.option('--seed', type=int)
@click.option('--progress/--no-progress', default=True)
@handle_errors
def curriculum(preset, pretrain_data, pretrain_checkpoint, finetune_data, arch, out, config_file,
               pretrain_iterations, finetune_iterations, seed, progress):
    """Pretrain on one dataset, then finetune on another."""
    if preset:
        if pretrain_data or finetune_data:
            raise ConfigError('--preset conflicts with --pretrain-data/--finetune-data')
        pretrain_data, finetune_data = CURRICULUM_PRESETS[preset]
    if not finetune_data:
        raise ConfigError('--finetune-data (or --preset) is required')
    if bool(pretrain_data) == bool(pretrain_checkpoint):
        raise ConfigError('give exactly one of --pretrain-data or --pretrain-checkpoint')

    run_config = load_run_config(config_file)
    finetune_source = DataMix(((_dataset_path(finetune_data), 1.0),))
    image_size, _, _ = _data_facts(finetune_source)
    model_config = _model_config(run_config, arch, image_size)
    if pretrain_checkpoint and config_file is None:
        model_config = dict(Checkpoint.load(pretrain_checkpoint).config)

    base = run_config['schedule']
    pretrain = None
    if pretrain_data:
        pretrain = StageSpec(DataMix(((_dataset_path(pretrain_data), 1.0),)),
                             TrainSchedule.from_dict(base, iterations=pretrain_iterations, seed=seed))
    spec = CurriculumSpec(
        arch=arch,
        model_config=model_config,
        pretrain=pretrain,
        pretrain_checkpoint=pretrain_checkpoint,
        finetune=StageSpec(finetune_source, TrainSchedule.from_dict(base, iterations=finetune_iterations, seed=seed)),
        optimizer=dict(run_config['optimizer']),
    )
    start_name = Path(pretrain_data).name if pretrain_data else Path(pretrain_checkpoint).stem
    out = Path(out) if out else Path(Config.RUNS_ROOT) / f"{start_name}-to-{Path(finetune_data).name}-{arch}"
    pretrain_record, finetune_record = run_curriculum(spec, out, progress=progress)

    report = {'out': str(out), 'pretrain_final': pretrain_record.final, 'finetune': _run_report(finetune_record, out)}
    lines = [f"Curriculum {out}:"]
    if pretrain_record.final:
        lines.append(f"  pretrain final val {pretrain_record.final['val']['overall']:.4f}")
    lines.extend(_run_lines(finetune_record, out / 'finetune')[1:])
    emit(report, lines)


@click.command('curves')
@click.argument('run_dirs', nargs=-1, required=True, type=click.Path(file_okay=False))
@click.option('--out', default='curves.svg', show_default=True, type=click.Path(dir_okay=False))
@click.option('--label', 'labels', multiple=True, help='Series label per run (default: directory name).')
@click.option('--title')
@handle_errors
def curves(run_dirs, out, labels, title):
    """Merge run curves.csv files into one SVG (and workbook)."""
    paths = merge_curves(list(run_dirs), out, labels=list(labels) or None, title=title)
    emit({k: str(v) for k, v in paths.items()}, [f"Wrote {paths['svg']} and {paths['xlsx']}"])
