"""
Excel Export Helper
Shared workbook builder for learning-curve exports (one sheet per run).
"""

import re
import logging
import zipfile
from datetime import datetime
from io import BytesIO

from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill, Alignment, Border, Side
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

# (header, row key, width, number format)
CURVE_COLUMNS = [
    ('Iteration', 'iteration', 12, '#,##0'),
    ('Val Accuracy', 'accuracy', 14, '0.0000'),
    ('Train Loss', 'loss', 14, '0.0000'),
]

# Pinned document and zip entry dates: identical curves give identical bytes.
STABLE_TIMESTAMP = datetime(2000, 1, 1)
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
_CORE_XML = 'docProps/core.xml'
_CORE_DATES = re.compile(rb'(<dcterms:(created|modified)[^>]*>)[^<]*(</dcterms:\2>)')

# Sheet names are capped at 31 characters and may not contain these.
_SHEET_FORBIDDEN = '[]:*?/\\'


def _sheet_title(label, taken):
    title = ''.join('_' if ch in _SHEET_FORBIDDEN else ch for ch in label)[:31] or 'Run'
    base, n = title, 2
    while title in taken:
        suffix = f" ({n})"
        title = base[:31 - len(suffix)] + suffix
        n += 1
    return title


def build_curves_workbook(sheets, title_label='Learning Curves'):
    """
    Build a formatted workbook.

    Args:
        sheets:       List of (label, rows, columns); rows are dicts, columns are
                      (header, key, width, number_format) tuples
        title_label:  Title shown above each sheet's table

    Returns:
        openpyxl Workbook
    """
    wb = Workbook()
    wb.remove(wb.active)

    # ── Styles ──
    header_font = Font(name='Arial', bold=True, size=11, color='FFFFFF')
    header_fill = PatternFill('solid', fgColor='1F2937')
    header_align = Alignment(horizontal='center', vertical='center', wrap_text=True)
    cell_font = Font(name='Arial', size=10)
    accuracy_font = Font(name='Arial', size=10, color='0A7A4F')
    thin_border = Border(bottom=Side(style='thin', color='E5E7EB'))
    alt_fill = PatternFill('solid', fgColor='F9FAFB')

    taken = set()
    for label, rows, cols in sheets:
        title = _sheet_title(label, taken)
        taken.add(title)
        ws = wb.create_sheet(title)

        # ── Title row ──
        ws.merge_cells(start_row=1, start_column=1, end_row=1, end_column=len(cols))
        title_cell = ws.cell(row=1, column=1, value=f'{title_label} — {label}')
        title_cell.font = Font(name='Arial', bold=True, size=13, color='1F2937')
        title_cell.alignment = Alignment(vertical='center')
        ws.row_dimensions[1].height = 32

        ws.merge_cells(start_row=2, start_column=1, end_row=2, end_column=len(cols))
        meta_cell = ws.cell(row=2, column=1, value=f'{len(rows)} evaluation points')
        meta_cell.font = Font(name='Arial', size=9, italic=True, color='6B7280')
        ws.row_dimensions[2].height = 20

        header_row = 4

        # ── Headers ──
        for col_idx, (header, _, width, _) in enumerate(cols, start=1):
            cell = ws.cell(row=header_row, column=col_idx, value=header)
            cell.font = header_font
            cell.fill = header_fill
            cell.alignment = header_align
            cell.border = Border(bottom=Side(style='medium', color='1F2937'))
            ws.column_dimensions[get_column_letter(col_idx)].width = width

        ws.row_dimensions[header_row].height = 28
        ws.freeze_panes = f'A{header_row + 1}'
        ws.auto_filter.ref = f'A{header_row}:{get_column_letter(len(cols))}{header_row + max(len(rows), 1)}'

        # ── Data rows ──
        for row_idx, record in enumerate(rows, start=header_row + 1):
            is_alt = (row_idx - header_row) % 2 == 0
            for col_idx, (_, key, _, fmt) in enumerate(cols, start=1):
                cell = ws.cell(row=row_idx, column=col_idx, value=record.get(key))
                cell.font = accuracy_font if key == 'accuracy' else cell_font
                cell.border = thin_border
                cell.alignment = Alignment(vertical='center')
                if is_alt:
                    cell.fill = alt_fill
                if fmt:
                    cell.number_format = fmt

    return wb


def save_workbook(wb, path):
    """Save with pinned created/modified dates and zip entry times."""
    wb.properties.created = STABLE_TIMESTAMP
    wb.properties.modified = STABLE_TIMESTAMP
    buffer = BytesIO()
    wb.save(buffer)
    buffer.seek(0)

    stamp = STABLE_TIMESTAMP.strftime('%Y-%m-%dT%H:%M:%SZ').encode('ascii')
    with zipfile.ZipFile(buffer) as source, zipfile.ZipFile(path, 'w', zipfile.ZIP_DEFLATED) as target:
        for info in source.infolist():
            data = source.read(info.filename)
            # openpyxl stamps modified with the save time regardless of wb.properties
            if info.filename == _CORE_XML:
                data = _CORE_DATES.sub(lambda m: m.group(1) + stamp + m.group(3), data)
            entry = zipfile.ZipInfo(info.filename, date_time=_ZIP_DATE)
            entry.compress_type = zipfile.ZIP_DEFLATED
            entry.external_attr = info.external_attr
            target.writestr(entry, data)
    logger.debug(f"Excel: wrote {path}")
    return path
