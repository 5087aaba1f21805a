"""CSV and JSON report emission.

Floats are written with ``repr`` (shortest round-trip form) and missing values
as empty CSV cells / JSON ``null``, so a report is a deterministic function of
its contents and the JSON form parses back to an equal :class:`Report`.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .. import __version__


@dataclass
class Report:
    kind: str
    seed: int
    config: dict
    rows: list[dict]
    verdicts: dict
    columns: list[str]
    extra: dict = field(default_factory=dict)
    version: str = __version__

    def __post_init__(self):
        # normalise tuples to lists so a JSON round trip compares equal
        self.config = json.loads(json.dumps(self.config))
        self.rows = json.loads(json.dumps(self.rows))
        self.verdicts = json.loads(json.dumps(self.verdicts))
        self.extra = json.loads(json.dumps(self.extra))
        self.columns = list(self.columns)

    @property
    def passed(self) -> bool:
        return not any(_is_fail(v) for v in _leaves(self.verdicts)) and not any(
            _is_fail(r.get("status")) for r in self.rows
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls(**json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = list(self.columns) + [c for c in _extra_columns(self.rows) if c not in self.columns]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_cell(r.get(c)) for c in cols])
        return buf.getvalue()

    def write(self, out_dir: str | Path, fmt: str) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.kind}.{fmt}"
        path.write_text(self.to_csv() if fmt == "csv" else self.to_json() + "\n")
        return path


def _extra_columns(rows: Sequence[dict]) -> list[str]:
    seen: list[str] = []
    for r in rows:
        for k in r:
            if k not in seen:
                seen.append(k)
    return seen


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _leaves(d):
    if isinstance(d, dict):
        for v in d.values():
            yield from _leaves(v)
    else:
        yield d


def _is_fail(v) -> bool:
    return isinstance(v, str) and v.startswith("FAIL")


def read_csv(text: str) -> list[dict]:
    """Parse a report CSV back into rows of floats/ints/strings (empty cells become ``None``)."""
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({k: _parse_cell(v) for k, v in r.items()})
    return rows


def _parse_cell(v: str):
    if v == "":
        return None
    for kind in (int, float):
        try:
            return kind(v)
        except ValueError:
            pass
    return v
