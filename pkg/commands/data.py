"""
Data Commands
generate — build a dataset for one family, a mix file or a mix preset, then verify it.
verify   — re-run verification on a stored dataset.
"""

import json
import logging

import click

from config import Config, load_run_config
from errors import ConfigError, VerifyFailed
from commands import handle_errors, emit, verify_lines
from shapeworld.dataset import MixSpec, SplitSpec, build_dataset, verify_dataset
from training.curriculum import mix_preset

logger = logging.getLogger(__name__)


def _load_mix(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return MixSpec.from_dict(json.load(f))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})")


def _source(family, mix, preset, run_config):
    given = [x for x in (family, mix, preset) if x]
    if not given and run_config['mix'] is not None:
        return MixSpec.from_dict(run_config['mix']), None
    if len(given) != 1:
        raise ConfigError('give exactly one of --family, --mix or --preset')
    if family:
        return MixSpec.single(family), family
    if mix:
        return _load_mix(mix), None
    return mix_preset(preset), preset


@click.command('generate')
@click.option('--family', help='Caption family, e.g. existential.')
@click.option('--mix', 'mix_file', type=click.Path(dir_okay=False), help='JSON mix of families with weights.')
@click.option('--preset', help='Named family mix (see training.curriculum.MIX_PRESETS).')
@click.option('--out', help='Output directory (default: <data root>/<family or preset>).')
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), help='Run-config JSON.')
@click.option('--train', 'n_train', type=int)
@click.option('--val', 'n_val', type=int)
@click.option('--test', 'n_test', type=int)
@click.option('--seed', type=int)
@click.option('--max-overlap', type=float)
@click.option('--image-size', type=int)
@click.option('--workers', type=int, help='Generation threads (default FILMWORLD_WORKERS).')
@click.option('--progress/--no-progress', default=True)
@handle_errors
def generate(family, mix_file, preset, out, config_file, n_train, n_val, n_test, seed, max_overlap,
             image_size, workers, progress):
    """Build and verify a dataset."""
    run_config = load_run_config(config_file)
    source, name = _source(family, mix_file, preset, run_config)
    split_spec = SplitSpec.from_run_config(run_config, train=n_train, val=n_val, test=n_test, seed=seed,
                                           max_overlap=max_overlap, image_size=image_size)
    if out is None:
        if name is None:
            raise ConfigError('--out is required with --mix')
        out = Config.resolve_data_path(name)
    workers = workers or Config.workers()
    if workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {workers}")

    path = build_dataset(source, split_spec, out, workers=workers, progress=progress)
    report = verify_dataset(path)
    emit(report, verify_lines(report))
    if not report['ok']:
        raise VerifyFailed(report['violations'])


@click.command('verify')
@click.argument('data')
@click.option('--deep', is_flag=True, help='Also re-render every image and compare bytes.')
@click.option('--skip-overlap', is_flag=True, help='Skip the pairwise overlap check.')
@handle_errors
def verify(data, deep, skip_overlap):
    """Verify a stored dataset (path or name under the data root)."""
    path = Config.resolve_data_path(data)
    if not (path / 'manifest.json').exists():
        raise ConfigError(f"{path} is not a dataset")
    report = verify_dataset(path, deep=deep, check_overlap=not skip_overlap)
    emit(report, verify_lines(report))
    if not report['ok']:
        raise VerifyFailed(report['violations'])
