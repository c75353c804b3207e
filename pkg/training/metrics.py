"""
Learning-Curve Metrics
Writes a run's evaluation series as curves.csv, curves.svg and curves.xlsx,
and merges several runs into one chart.

CSV columns: iteration, accuracy, loss. Accuracy and loss are written with
repr() so a reparse gives back the exact floats; the loss cell is empty at
iteration 0 (no training yet).

Usage:
    from training.metrics import emit_metrics, merge_curves

    emit_metrics(record, 'runs/existential-film')
    merge_curves(['runs/a', 'runs/b'], 'runs/compare.svg')
"""

import csv
import logging
from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from errors import ConfigError
from training.excel_helper import CURVE_COLUMNS, build_curves_workbook, save_workbook

logger = logging.getLogger(__name__)

CURVES_CSV = 'curves.csv'
CURVES_SVG = 'curves.svg'
CURVES_XLSX = 'curves.xlsx'
FAMILY_CSV = 'family_curves.csv'

# Fixed ids inside the SVG so identical series give identical files.
matplotlib.rcParams['svg.hashsalt'] = 'filmworld-curves'


def _rows(record):
    return [{'iteration': e.iteration, 'accuracy': e.val_accuracy, 'loss': e.train_loss}
            for e in record.entries]


# ── CSV ──

def write_curves_csv(rows, path):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['iteration', 'accuracy', 'loss'])
        for row in rows:
            loss = '' if row['loss'] is None else repr(float(row['loss']))
            writer.writerow([row['iteration'], repr(float(row['accuracy'])), loss])
    return path


def read_curves_csv(path):
    rows = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ['iteration', 'accuracy', 'loss']:
            raise ConfigError(f"{path}: expected columns iteration,accuracy,loss, got {reader.fieldnames}")
        for line in reader:
            rows.append({
                'iteration': int(line['iteration']),
                'accuracy': float(line['accuracy']),
                'loss': float(line['loss']) if line['loss'] else None,
            })
    return rows


def write_family_csv(record, path):
    families = sorted({f for e in record.entries for f in (e.family_accuracy or {})})
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['iteration'] + families)
        for e in record.entries:
            accuracy = e.family_accuracy or {}
            writer.writerow([e.iteration] + [repr(float(accuracy[fam])) if fam in accuracy else ''
                                             for fam in families])
    return path


# ── Charts ──

def plot_curves(series, path, title=None):
    """
    Line chart of accuracy over iterations for one or more runs.
    `series` is a list of (label, rows).
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, rows in series:
        xs = [r['iteration'] / 1000.0 for r in rows]
        ys = [r['accuracy'] for r in rows]
        ax.plot(xs, ys, marker='o', markersize=3, linewidth=1.5, label=label)
    ax.set_xlabel('iterations in 1000')
    ax.set_ylabel('accuracy')
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    if len(series) > 1 or (series and series[0][0]):
        ax.legend(loc='lower right')
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


# ═══════════════════════════════════════════════════════════════
# Entry points
# ═══════════════════════════════════════════════════════════════

def emit_metrics(record, out_dir, label=None):
    """Write curves.csv / curves.svg / curves.xlsx (and family_curves.csv for mixtures)."""
    if not record.entries:
        raise ConfigError('run record has no evaluation entries')
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = _rows(record)
    label = label or out.name

    paths = {
        'csv': write_curves_csv(rows, out / CURVES_CSV),
        'svg': plot_curves([(label, rows)], out / CURVES_SVG),
        'xlsx': save_workbook(build_curves_workbook([(label, rows, CURVE_COLUMNS)]), out / CURVES_XLSX),
    }
    families = {f for e in record.entries for f in (e.family_accuracy or {})}
    if len(families) > 1:
        paths['family_csv'] = write_family_csv(record, out / FAMILY_CSV)
    logger.info(f"Metrics: wrote {len(rows)} eval rows to {out}")
    return paths


def merge_curves(run_dirs, out_path, labels=None, title=None):
    """One SVG (and a workbook next to it) with a labeled series per run directory."""
    if not run_dirs:
        raise ConfigError('curves needs at least one run directory')
    labels = labels or [Path(d).name for d in run_dirs]
    if len(labels) != len(run_dirs):
        raise ConfigError(f"{len(labels)} labels for {len(run_dirs)} runs")
    series = []
    for label, run_dir in zip(labels, run_dirs):
        csv_path = Path(run_dir) / CURVES_CSV
        if not csv_path.exists():
            raise ConfigError(f"{run_dir} has no {CURVES_CSV}")
        series.append((label, read_curves_csv(csv_path)))

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    plot_curves(series, out_path, title=title)
    xlsx_path = out_path.with_suffix('.xlsx')
    save_workbook(build_curves_workbook([(label, rows, CURVE_COLUMNS) for label, rows in series]), xlsx_path)
    logger.info(f"Metrics: merged {len(series)} runs into {out_path}")
    return {'svg': out_path, 'xlsx': xlsx_path}
