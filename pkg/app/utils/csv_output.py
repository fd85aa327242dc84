"""CSV serialization of result rows.

Columns follow the field order of the row model. Floats are written with
``repr`` so identical runs produce identical bytes; ``None`` becomes an
empty cell.
"""
import csv
from enum import Enum
from typing import IO, Iterable, Optional, Sequence, Type

from pydantic import BaseModel


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(rows: Iterable[BaseModel], out: IO[str], model: Optional[Type[BaseModel]] = None) -> int:
    """Write a header and one line per row; returns the number of rows written."""
    rows = list(rows)
    if model is None:
        if not rows:
            raise ValueError("cannot infer CSV columns from an empty result without a row model")
        model = type(rows[0])
    columns: Sequence[str] = list(model.model_fields)
    writer = csv.DictWriter(out, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _cell(getattr(row, c)) for c in columns})
    return len(rows)

