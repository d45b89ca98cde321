"""CSV tables written by the run and cordes commands, with matching readers."""

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path

from nharm.config import CSV_DIGITS


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return format(float(value), f".{CSV_DIGITS}g")


def _parse(kind, raw: str):
    if raw == "":
        return None
    if kind is int or kind == (int | None):
        return int(raw)
    return float(raw)


@dataclass
class TraceRow:
    k: int
    p: float
    delta: float
    E_pdelta: float
    D_n: float
    entropy: float
    residual: float
    iterations: int
    degree: int | None = None


@dataclass
class LadderRow:
    r_in: float
    r_out: float
    neck_energy: float
    tangential_energy: float
    hopf_lhs: float | None
    hopf_rhs: float | None


@dataclass
class CordesRow:
    p: float
    nN: int
    epsilon_max: float
    contraction_factor: float


class _Table:
    row_type: type = None

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.rows == other.rows

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls.row_type)]

    def column(self, name: str) -> list:
        return [getattr(row, name) for row in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for row in self.rows:
            writer.writerow([fmt(v) for v in astuple(row)])
        return buf.getvalue()

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != cls.header():
            raise ValueError(f"unexpected CSV header {header}, expected {cls.header()}")
        kinds = [f.type for f in fields(cls.row_type)]
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(kinds):
                raise ValueError(f"line {line_no}: expected {len(kinds)} columns, got {len(record)}")
            rows.append(cls.row_type(*(_parse(k, v) for k, v in zip(kinds, record))))
        return cls(rows)

    @classmethod
    def read(cls, path: Path):
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


class TraceTable(_Table):
    row_type = TraceRow


class LadderTable(_Table):
    row_type = LadderRow


class CordesTable(_Table):
    row_type = CordesRow
