"""Export to the CPLEX-style LP text format read by most solvers."""
from __future__ import annotations

import math
import re

from .model import LinearProgram

_BAD = re.compile(r"[^A-Za-z0-9_.]")


def _names(raw, prefix, count):
    out, seen = [], set()
    for i in range(count):
        name = raw[i] if raw else f"{prefix}{i}"
        name = _BAD.sub("_", name)
        if not name or name[0].isdigit() or name[0] == ".":
            name = prefix + "_" + name
        if name.lower() in ("inf", "infinity", "free", "st", "end") or name in seen:
            name = f"{name}_{i}"
        seen.add(name)
        out.append(name)
    return out


def _num(v: float) -> str:
    return repr(float(v))


def _expr(coefs, names) -> str:
    parts = []
    for j, v in coefs:
        if v == 0.0:
            continue
        op = "-" if v < 0 else "+"
        parts.append(f"{op} {_num(abs(v))} {names[j]}")
    if not parts:
        return "0 " + names[0] if names else "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def _wrap(text: str, width: int = 200) -> str:
    # LP readers cap line length; break between terms
    out, line = [], ""
    for tok in text.split(" "):
        if len(line) + len(tok) + 1 > width and line:
            out.append(line)
            line = "   " + tok
        else:
            line = f"{line} {tok}" if line else tok
    out.append(line)
    return "\n".join(out)


def export_lp(lp: LinearProgram, title: str = "gridattack") -> str:
    lp.validate()
    vn = _names(lp.var_names, "x", lp.n_vars)
    cn = _names(lp.con_names, "c", lp.n_cons)
    lines = [f"\\ {title}", "Minimize" if lp.sense == "min" else "Maximize"]
    lines.append(" " + _wrap("obj: " + _expr(enumerate(lp.c), vn)))
    lines.append("Subject To")
    for i in range(lp.n_cons):
        row = [(j, lp.A[i, j]) for j in range(lp.n_vars) if lp.A[i, j] != 0.0]
        rel = {"<=": "<=", ">=": ">=", "=": "="}[lp.rel[i]]
        lhs = _expr(row, vn) if row else f"0 {vn[0]}"
        lines.append(" " + _wrap(f"{cn[i]}: {lhs} {rel} {_num(lp.b[i])}"))
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        if j in lp.integers:
            continue
        if not math.isfinite(lo) and not math.isfinite(hi):
            lines.append(f" {vn[j]} free")
        elif lo == hi:
            lines.append(f" {vn[j]} = {_num(lo)}")
        else:
            left = _num(lo) if math.isfinite(lo) else "-inf"
            right = f" <= {_num(hi)}" if math.isfinite(hi) else ""
            lines.append(f" {left} <= {vn[j]}{right}")
    if lp.integers:
        lines.append("Binaries")
        for j in sorted(lp.integers):
            lines.append(f" {vn[j]}")
    lines.append("End")
    return "\n".join(lines) + "\n"
