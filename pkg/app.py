"""
FiLM World - Command Line Entry Point

Usage:
    python app.py generate --family existential --train 1000 --val 100 --test 100 --seed 7
    python app.py train --data existential --model film --iterations 3000
    python app.py --json verify existential
"""

import logging

import click

from config import Config
from errors import ConfigError
from commands.data import generate, verify
from commands.train import train, evaluate, curriculum, curves
from commands.checks import gradcheck

logger = logging.getLogger(__name__)


def _configure_logging(level):
    logging.basicConfig(level=getattr(logging, level), format='%(levelname)s:%(name)s:%(message)s')
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('PIL').setLevel(logging.WARNING)


def create_cli():
    @click.group()
    @click.option('--json', 'as_json', is_flag=True, help='Machine-readable JSON reports on stdout.')
    @click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']),
                  help='Overrides FILMWORLD_LOG_LEVEL.')
    @click.pass_context
    def cli(ctx, as_json, log_level):
        """Image–caption agreement lab: datasets, models, training runs."""
        if log_level:
            Config.LOG_LEVEL = log_level
        try:
            Config.validate()
        except ConfigError as e:
            click.echo(f"Error: {e}", err=True)
            ctx.exit(e.exit_code)
        _configure_logging(Config.LOG_LEVEL)
        ctx.ensure_object(dict)
        ctx.obj['json'] = as_json

    # --- Register Commands ---
    cli.add_command(generate)
    cli.add_command(verify)
    cli.add_command(train)
    cli.add_command(evaluate)
    cli.add_command(curriculum)
    cli.add_command(curves)
    cli.add_command(gradcheck)
    return cli


cli = create_cli()


if __name__ == '__main__':
    cli()
