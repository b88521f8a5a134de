"""Conversion from MATPOWER ``.m`` case files.

Column mapping (MATPOWER name -> case-file field):

* bus: ``BUS_I`` -> id, ``BUS_TYPE == 3`` -> slack, ``PD``/``QD`` -> pd/qd,
  ``BASE_KV`` -> base_kv.
* branch: ``F_BUS``/``T_BUS`` -> from/to, ``BR_X`` -> x_pu, ``RATE_A`` ->
  rate_mva (0, meaning unlimited, becomes ``UNLIMITED_MVA``), ``BR_STATUS``
  -> status. Ids are ``L<from>-<to>`` with ``_2``, ``_3`` ... on parallels.
  Reactive end flows are not part of a MATPOWER case and are set to 0.
* gen: ``GEN_BUS`` -> bus, ``PMIN``/``PMAX`` -> pmin/pmax, ``PG`` (clipped to
  the limits) -> p0. The ramp (MW/min) is ``RAMP_AGC`` when positive, else
  ``RAMP_10 / 10``, else ``PMAX / 10``. Out-of-service units are dropped.
* gencost: the linear coefficient of a polynomial cost; piecewise-linear
  costs use the slope of the first segment. Costs are in $/MWh and are
  multiplied by ``baseMVA`` because the case format prices per-unit output.
  Reserve cost defaults to 0.
"""
from __future__ import annotations

import re

import numpy as np

from .grid import Branch, Bus, CaseError, Generator, GridCase, validate_case

UNLIMITED_MVA = 9900.0

_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")


def _matrix(body: str) -> np.ndarray:
    rows = []
    for raw in re.split(r"[;\n]", body):
        raw = raw.split("%", 1)[0].strip()
        if raw:
            rows.append([float(v) for v in raw.replace(",", " ").split()])
    width = max((len(r) for r in rows), default=0)
    if any(len(r) != width for r in rows):
        raise CaseError("ragged matrix in MATPOWER file")
    return np.array(rows).reshape(len(rows), width)


def read_matpower(text: str, name: str = "matpower", loss_fraction: float = 0.02,
                  validate: bool = True) -> GridCase:
    text = re.sub(r"%[^\n]*", "", text)
    mats = {k: _matrix(v) for k, v in _MATRIX.findall(text)}
    scal = {k: float(v) for k, v in _SCALAR.findall(text)}
    for need in ("bus", "branch", "gen"):
        if need not in mats:
            raise CaseError(f"MATPOWER file has no mpc.{need} matrix")
    base = scal.get("baseMVA", 100.0)
    bus_m, br_m, gen_m = mats["bus"], mats["branch"], mats["gen"]
    cost_m = mats.get("gencost")

    buses = []
    for r in bus_m:
        if r[2] < 0:
            raise CaseError(f"bus {int(r[0])} has a negative load; negative loads are not supported")
        buses.append(Bus(int(r[0]), float(r[9]) if bus_m.shape[1] > 9 else 0.0, r[2] / base, r[3] / base,
                         int(r[1]) == 3))
    branches, seen = [], {}
    for r in br_m:
        f, t = int(r[0]), int(r[1])
        key = (f, t)
        seen[key] = seen.get(key, 0) + 1
        bid = f"L{f}-{t}" + (f"_{seen[key]}" if seen[key] > 1 else "")
        rate = r[5] if r[5] > 0 else UNLIMITED_MVA
        status = bool(r[10]) if br_m.shape[1] > 10 else True
        branches.append(Branch(bid, f, t, float(r[3]), rate / base, 0.0, 0.0, status))
    gens, count = [], {}
    for i, r in enumerate(gen_m):
        if gen_m.shape[1] > 7 and r[7] <= 0:
            continue
        b = int(r[0])
        count[b] = count.get(b, 0) + 1
        gid = f"G{b}" + (f"_{count[b]}" if count[b] > 1 else "")
        pmax, pmin = r[8], r[9]
        if gen_m.shape[1] > 16 and r[16] > 0:
            ramp = r[16]
        elif gen_m.shape[1] > 17 and r[17] > 0:
            ramp = r[17] / 10.0
        else:
            ramp = pmax / 10.0
        cost = _linear_cost(cost_m[i]) if cost_m is not None and i < len(cost_m) else 0.0
        p0 = min(max(r[1], pmin), pmax)
        gens.append(Generator(gid, b, pmin / base, pmax / base, p0 / base, cost * base, 0.0, ramp / base))
    case = GridCase(tuple(buses), tuple(branches), tuple(gens), base, loss_fraction, name)
    return validate_case(case) if validate else case


def _linear_cost(row: np.ndarray) -> float:
    model, n = int(row[0]), int(row[3])
    coefs = row[4:4 + (2 * n if model == 1 else n)]
    if model == 1:
        pts = coefs.reshape(n, 2)
        return float((pts[1, 1] - pts[0, 1]) / (pts[1, 0] - pts[0, 0])) if n > 1 else 0.0
    # polynomial c_{n-1} ... c_1 c_0: keep c_1
    return float(coefs[-2]) if n >= 2 else 0.0
