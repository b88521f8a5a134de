"""Batch attack studies over targets, budgets and load-shift limits."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..ems import EmsParams
from ..grid import GridCase
from .adblp import AttackSpec
from .loop import run_attack_loop

PAPER_N1_GRID = tuple(round(0.2 * k, 1) for k in range(1, 11))
PAPER_LS_GRID = (0.1, 0.2)


@dataclass(frozen=True)
class Cell:
    physical_pct: float | None
    predicted_pct: float | None
    cyber_pct: float | None
    l0: int | None
    subgraph: int | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class StudyRow:
    target: str
    contingency: str | None
    L_S: float
    cells: list[Cell]


@dataclass
class StudyTable:
    case_name: str
    N1_grid: tuple[float, ...]
    LS_grid: tuple[float, ...]
    response_model: str
    rows: list[StudyRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def n_ok(self) -> int:
        return sum(c.ok for r in self.rows for c in r.cells)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# case: {self.case_name}\n")
        buf.write(f"# response_model: {self.response_model}\n")
        buf.write("# N1 in radians; L_S as a fraction of bus load; flows in percent of the limit\n")
        buf.write("# pf = max physical target flow, l0 = attacked buses, sub = attack subgraph buses\n")
        for key in sorted(self.config):
            buf.write(f"# {key}: {self.config[key]}\n")
        w = csv.writer(buf, lineterminator="\n")
        n1 = [f"{v:g}" for v in self.N1_grid]
        w.writerow(["target", "contingency", "L_S"] + [f"pf_N1={v}" for v in n1]
                   + [f"l0_N1={v}" for v in n1] + [f"sub_N1={v}" for v in n1])
        for r in self.rows:
            pf = [f"{c.physical_pct:.4f}" if c.ok else f"FAIL:{c.error}" for c in r.cells]
            l0 = [str(c.l0) if c.ok else f"FAIL:{c.error}" for c in r.cells]
            sub = [str(c.subgraph) if c.ok else f"FAIL:{c.error}" for c in r.cells]
            w.writerow([r.target, r.contingency or "", f"{r.L_S:g}"] + pf + l0 + sub)
        return buf.getvalue()

    def series(self, target: str, contingency: str | None, L_S: float, what: str = "physical_pct"):
        for r in self.rows:
            if r.target == target and r.contingency == contingency and r.L_S == L_S:
                return [getattr(c, what) for c in r.cells]
        raise KeyError((target, contingency, L_S))


def _cell(args) -> Cell:
    case, spec, params = args
    try:
        rep = run_attack_loop(case, spec, params)
    except Exception as exc:   # a failed cell must not stop the sweep
        reason = " ".join(str(exc).split())[:80].replace(",", ";") or type(exc).__name__
        return Cell(None, None, None, None, None, reason)
    return Cell(rep.physical.target_pct, rep.predicted_pct, rep.cyber.target_pct, rep.attack.c.l0,
                len(rep.attack.c.subgraph_buses))


def sweep_study(case: GridCase, targets, N1_grid=PAPER_N1_GRID, LS_grid=PAPER_LS_GRID,
                response_model: str = "sced", sigma: float = 1e-3, big_m: float = 1e4,
                params: EmsParams = EmsParams(), jobs: int = 1) -> StudyTable:
    """Attack every ``(target, contingency)`` pair at each budget and load-shift limit.

    ``targets`` holds ``(branch, contingency_or_None)`` pairs. Rows are sorted
    by target id, then contingency id, then ``L_S``.
    """
    N1_grid = tuple(float(v) for v in N1_grid)
    LS_grid = tuple(sorted(float(v) for v in LS_grid))
    if not N1_grid or not LS_grid:
        raise ValueError("N1 and L_S grids must be non-empty")
    order = sorted({(t, k) for t, k in targets}, key=lambda p: (p[0], p[1] or ""))
    table = StudyTable(case.name, N1_grid, LS_grid, response_model,
                       config={"sigma": sigma, "big_m": big_m, "tau": params.tau})
    jobs_list = []
    for t, k in order:
        for ls in LS_grid:
            for n1 in N1_grid:
                spec = AttackSpec(t, k, n1, ls, sigma, response_model, big_m)
                jobs_list.append((case, spec, params))
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            cells = list(ex.map(_cell, jobs_list))
    else:
        cells = [_cell(a) for a in jobs_list]
    it = iter(cells)
    for t, k in order:
        for ls in LS_grid:
            table.rows.append(StudyRow(t, k, ls, [next(it) for _ in N1_grid]))
    return table


def critical_targets(scs) -> list[tuple[str, str | None]]:
    """Pre-attack critical pairs, in the shape ``sweep_study`` expects."""
    out = [(c.branch, None) for c in scs.base_critical]
    out += [(c.branch, c.contingency) for c in scs.ctg_critical]
    return sorted(set(out), key=lambda p: (p[0], p[1] or ""))


def is_nondecreasing(values, tol: float = 1e-9) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) >= -tol))
