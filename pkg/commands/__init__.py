"""
Command Helpers
Error → exit-code mapping for every command, and report output that
switches between human-readable text and JSON.

Usage:
    @click.command()
    @handle_errors
    def verify(...):
        ...
        emit(report, lines)
"""

import json
import logging
from functools import wraps

import click

from errors import FilmWorldError

logger = logging.getLogger(__name__)


def handle_errors(f):
    """
    Decorator: run a command body and turn tool errors into their exit
    codes. IO errors exit 1 with the OS message.
    """
    @wraps(f)
    def decorated_function(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return f(*args, **kwargs)
        except FilmWorldError as e:
            logger.error(f"{ctx.info_name}: {type(e).__name__}: {e}")
            click.echo(f"Error: {e}", err=True)
            ctx.exit(e.exit_code)
        except OSError as e:
            logger.error(f"{ctx.info_name}: {e}")
            click.echo(f"Error: {e}", err=True)
            ctx.exit(1)
    return decorated_function


def json_mode():
    ctx = click.get_current_context()
    root = ctx.find_root()
    return bool(root.obj and root.obj.get('json'))


def emit(report, lines):
    """Print `report` as JSON in --json mode, else the text lines."""
    if json_mode():
        click.echo(json.dumps(report, indent=2, sort_keys=True, default=str))
    else:
        for line in lines:
            click.echo(line)


def verify_lines(report, limit=20):
    lines = [f"Dataset {report['path']}: {'OK' if report['ok'] else 'VIOLATIONS'} "
             f"({report['instances']} instances)"]
    for split, info in report['splits'].items():
        extra = f", withheld rate {info['withheld_rate']:.3f}" if 'withheld_rate' in info else ''
        lines.append(f"  {split:<5} {info['count']:>7}  true {info['true']:>7}  false {info['false']:>7}{extra}")
    lines.append(f"  violations: {len(report['violations'])}")
    for v in report['violations'][:limit]:
        where = '' if v['index'] is None else f" #{v['index']}"
        lines.append(f"    {v['kind']}{where}: {v['detail']}")
    if len(report['violations']) > limit:
        lines.append(f"    … {len(report['violations']) - limit} more")
    return lines
