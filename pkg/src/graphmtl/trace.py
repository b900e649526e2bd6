"""Per-round run traces and their CSV persistence.

The CSV schema is fixed:
round,comm_rounds,vectors_per_machine,samples_per_machine,erm_objective,population_loss,dist_to_oracle,wall_ms

dist_to_oracle is written empty when not tracked. Rows are appended and
flushed one at a time so a crashed run leaves a usable partial trace. The
wall_ms column is written as a deterministic 0.0 so traces are byte-identical
across repeated seeded runs; real elapsed time lives in the run summary.
"""

from dataclasses import dataclass

BASE_HEADER = (
    "round,comm_rounds,vectors_per_machine,samples_per_machine,"
    "erm_objective,population_loss,dist_to_oracle,wall_ms"
)


@dataclass
class TraceRow:
    round: int
    comm_rounds: int
    vectors_per_machine: float
    samples_per_machine: int
    erm_objective: float
    population_loss: float
    dist_to_oracle: float | None = None
    wall_ms: float = 0.0
    extra: tuple = ()

    def format(self) -> str:
        dist = "" if self.dist_to_oracle is None else repr(float(self.dist_to_oracle))
        cells = [
            str(self.round),
            str(self.comm_rounds),
            repr(float(self.vectors_per_machine)),
            str(self.samples_per_machine),
            repr(float(self.erm_objective)),
            repr(float(self.population_loss)),
            dist,
            repr(float(self.wall_ms)),
        ]
        cells.extend(repr(float(v)) for v in self.extra)
        return ",".join(cells)


class TraceWriter:
    """Append-only CSV writer, flushing every row."""

    def __init__(self, path, extra_columns: tuple = ()):
        self.path = path
        self.extra_columns = tuple(extra_columns)
        header = BASE_HEADER if not self.extra_columns else BASE_HEADER + "," + ",".join(self.extra_columns)
        self._fh = open(path, "w")
        self._fh.write(header + "\n")
        self._fh.flush()
        self.rows: list[TraceRow] = []

    def append(self, row: TraceRow):
        if len(row.extra) != len(self.extra_columns):
            raise ValueError(
                f"row carries {len(row.extra)} extra cells, header has {len(self.extra_columns)}"
            )
        self.rows.append(row)
        self._fh.write(row.format() + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_trace(path) -> tuple[list[str], list[dict]]:
    """Read a trace CSV into (column names, list of row dicts of floats/None)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    columns = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        row = {}
        for name, cell in zip(columns, cells):
            row[name] = None if cell == "" else float(cell)
        rows.append(row)
    return columns, rows
