"""
Check Commands
gradcheck — finite-difference check of every differentiable op in float64.
"""

import logging

import click

from commands import handle_errors, emit
from engine.gradcheck import CASES, TOLERANCE, run_suite

logger = logging.getLogger(__name__)


@click.command('gradcheck')
@click.option('--seeds', type=int, default=20, show_default=True, help='Random instances per op.')
@click.option('--op', 'only', multiple=True, type=click.Choice([c.name for c in CASES]),
              help='Check only these ops.')
@handle_errors
def gradcheck(seeds, only):
    """Compare analytic gradients with central differences; exit 1 on any failure."""
    rows = run_suite(seeds=seeds, only=set(only) or None)
    lines = [f"{'op':<26} {'cases':>5}  {'max rel err':>11}  result"]
    for row in rows:
        lines.append(f"{row['op']:<26} {row['cases']:>5}  {row['max_rel_error']:>11.3e}  "
                     f"{'ok' if row['passed'] else 'FAIL'}")
    failed = [r['op'] for r in rows if not r['passed']]
    lines.append(f"{len(rows) - len(failed)}/{len(rows)} ops within {TOLERANCE:g}")
    emit({'tolerance': TOLERANCE, 'rows': rows, 'failed': failed}, lines)
    if failed:
        click.get_current_context().exit(1)
