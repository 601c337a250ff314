"""Solve reports and their CSV form.

``report.csv`` columns (header mandatory, fixed order)::

    benchmark, re, newton_steps, krylov_per_step, total_krylov, avg_krylov,
    final_residual, converged, residuals

``krylov_per_step`` and ``residuals`` are ``;``-separated.  Floats are
written with ``repr`` so the file round-trips exactly.  Wall times go to a
separate ``timings.csv`` so reports of identical runs are byte-identical.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

STAGE_COLUMNS = ["benchmark", "re", "newton_steps", "krylov_per_step", "total_krylov",
                 "avg_krylov", "final_residual", "converged", "residuals"]
MMS_COLUMNS = ["re", "gamma", "h", "error_u", "error_p"]


@dataclass
class StageRecord:
    re: float
    krylov: list = field(default_factory=list)          # outer iterations per Newton step
    residuals: list = field(default_factory=list)       # ||F|| before each step and at the end
    linear_histories: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    message: str = ""

    @property
    def newton_steps(self) -> int:
        return len(self.krylov)

    @property
    def total_krylov(self) -> int:
        return int(sum(self.krylov))

    @property
    def average(self) -> float:
        """Total outer Krylov iterations divided by Newton steps."""
        return self.total_krylov / self.newton_steps if self.newton_steps else 0.0


@dataclass
class MMSRecord:
    re: float
    gamma: float
    h: float
    error_u: float
    error_p: float


@dataclass
class SolveReport:
    benchmark: str = ""
    stages: list = field(default_factory=list)
    mms: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(self.stages) and all(s.converged for s in self.stages)

    def stage(self, re) -> StageRecord:
        for s in self.stages:
            if s.re == re:
                return s
        raise KeyError(re)

    # ------------------------------------------------------------------
    def stage_rows(self):
        for s in self.stages:
            yield {
                "benchmark": self.benchmark,
                "re": repr(float(s.re)),
                "newton_steps": str(s.newton_steps),
                "krylov_per_step": ";".join(str(int(k)) for k in s.krylov),
                "total_krylov": str(s.total_krylov),
                "avg_krylov": repr(float(s.average)),
                "final_residual": repr(float(s.residuals[-1])) if s.residuals else "",
                "converged": "1" if s.converged else "0",
                "residuals": ";".join(repr(float(r)) for r in s.residuals),
            }

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=STAGE_COLUMNS, lineterminator="\n")
            w.writeheader()
            for row in self.stage_rows():
                w.writerow(row)
        return path

    def write_mms_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MMS_COLUMNS)
            for r in self.mms:
                w.writerow([repr(float(r.re)), repr(float(r.gamma)), repr(float(r.h)),
                            repr(float(r.error_u)), repr(float(r.error_p))])
        return path

    def write_timings(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["benchmark", "re", "wall_time_s"])
            for s in self.stages:
                w.writerow([self.benchmark, repr(float(s.re)), f"{s.wall_time:.3f}"])
        return path

    @classmethod
    def read_csv(cls, path) -> "SolveReport":
        rep = cls()
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                rep.benchmark = row["benchmark"]
                kry = [int(k) for k in row["krylov_per_step"].split(";") if k]
                res = [float(r) for r in row["residuals"].split(";") if r]
                rep.stages.append(StageRecord(float(row["re"]), kry, res,
                                              converged=row["converged"] == "1"))
        return rep

    @staticmethod
    def read_mms_csv(path) -> list:
        with Path(path).open(newline="") as fh:
            return [MMSRecord(*(float(row[c]) for c in MMS_COLUMNS)) for row in csv.DictReader(fh)]
