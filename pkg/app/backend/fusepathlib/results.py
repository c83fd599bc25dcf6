import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

logger = logging.getLogger("fusepath")

SIDECAR_SUFFIX = ".meta.json"


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(value, ".17g")


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, (list, tuple)):
        return " ".join(format_cell(item) for item in value)
    return str(value)


def _json_ready(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_json_ready(item) for item in value]
    if isinstance(value, list):
        return [_json_ready(item) for item in value]
    if isinstance(value, dict):
        return {key: _json_ready(item) for key, item in value.items()}
    if hasattr(value, "item"):
        # numpy scalars
        return value.item()
    return value


@dataclass
class ResultTable:
    """
    A tidy table: fixed column names and one dict per row. Rows keep insertion order so output is
    reproducible.

    `failures` counts replicates that failed or did not converge; it is reported, never written.
    """

    name: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)
    failures: int = 0

    def add_row(self, **values: Any):
        unknown = set(values) - set(self.columns)
        if unknown:
            raise ValueError(f"Unknown columns for table {self.name}: {sorted(unknown)}")
        self.rows.append({column: values.get(column) for column in self.columns})

    def column(self, name: str) -> list[Any]:
        if name not in self.columns:
            raise KeyError(name)
        return [row[name] for row in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_cell(row[column]) for column in self.columns])
        return buffer.getvalue()

    def to_json(self) -> str:
        document = {"name": self.name, "columns": self.columns, "rows": [_json_ready(row) for row in self.rows]}
        return json.dumps(document, indent=2) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"Unknown output format {fmt!r}, expected 'csv' or 'json'")


def write_table(table: ResultTable, path: Path, fmt: str = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table.render(fmt), encoding="utf-8")
    logger.info("Wrote %d rows of %s to %s", len(table), table.name, path)
    return path


def sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def write_sidecar(path: Path, config: Mapping[str, Any], outputs: Optional[Sequence[Path]] = None) -> Path:
    """Echoes the run configuration next to an output file. No timestamps, so reruns are byte-identical."""
    document: dict[str, Any] = {"config": _json_ready(dict(config))}
    if outputs is not None:
        document["outputs"] = [Path(output).name for output in outputs]
    target = sidecar_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target
