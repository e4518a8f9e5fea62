"""Metric rows and the append-only CSV writer (RFC 4180, fixed schema)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

COLUMNS = (
    "experiment",
    "trial_seed",
    "task_id",
    "checkpoint_id",
    "method",
    "gamma",
    "alpha",
    "n_train",
    "accuracy_or_risk",
    "flop_fraction",
    "new_nnz",
    "shared_nnz",
    "wall_ms",
)


@dataclass
class MetricRow:
    experiment: str
    trial_seed: int
    task_id: object
    checkpoint_id: int
    method: str
    gamma: float
    alpha: float
    n_train: int
    accuracy_or_risk: float
    flop_fraction: float
    new_nnz: int
    shared_nnz: int
    wall_ms: float

    def as_list(self):
        return [getattr(self, c) for c in COLUMNS]


class MetricsWriter:
    """Appends rows to a CSV file, writing the header once.

    Every row with method "espn" must satisfy the FLOP budget; the writer
    hard-asserts it so a violated constraint can never be silently recorded.
    """

    def __init__(self, path):
        self.path = path
        self._file = open(path, "a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file)
        if self._file.tell() == 0:
            self._writer.writerow(COLUMNS)
            self._file.flush()

    def write(self, row: MetricRow):
        if row.method == "espn":
            assert row.flop_fraction <= row.gamma + 1e-9, (
                f"espn row violates FLOP budget: {row.flop_fraction} > {row.gamma}"
            )
        self._writer.writerow(row.as_list())
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_rows(path):
    """Read a metrics CSV back into dicts with numeric fields restored."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.DictReader(f):
            rec["trial_seed"] = int(rec["trial_seed"])
            rec["checkpoint_id"] = int(rec["checkpoint_id"])
            rec["gamma"] = float(rec["gamma"])
            rec["alpha"] = float(rec["alpha"])
            rec["n_train"] = int(rec["n_train"])
            rec["accuracy_or_risk"] = float(rec["accuracy_or_risk"])
            rec["flop_fraction"] = float(rec["flop_fraction"])
            rec["new_nnz"] = int(rec["new_nnz"])
            rec["shared_nnz"] = int(rec["shared_nnz"])
            rec["wall_ms"] = float(rec["wall_ms"])
            out.append(rec)
    return out
