"""Network data model, case-file ingestion and validation.

Case files are plain UTF-8 text with a short preamble of ``key value``
directives followed by three whitespace-separated tables::

    name       triangle3
    base_mva   100
    loss_fraction 0.0

    BUS
    # id  base_kv  pd_mw  qd_mvar  slack
    1     138      0      0        0

    BRANCH
    # id  from  to  x_pu  rate_mva  q_from_mvar  q_to_mvar  status
    L12   1     2   0.1   100       0            0          1

    GEN
    # id  bus  pmin_mw  pmax_mw  p0_mw  cost  reserve_cost  ramp_mw_per_min
    G1    1    0        200      100    10    1             2

Everything after ``#`` on a line is a comment. Power quantities are given
in MW / MVAr / MVA and converted to per unit on ``base_mva`` at ingest;
ramp rates become per unit per minute. ``cost`` and ``reserve_cost`` are
stored unscaled and multiply per-unit quantities in every objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_LOSS_FRACTION = 0.02
DEFAULT_BASE_MVA = 100.0


class CaseError(ValueError):
    """Base class for problems with case data."""


class CaseSyntaxError(CaseError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class CaseValidationError(CaseError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    load_p: float
    load_q: float = 0.0
    is_slack: bool = False


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: int
    to_bus: int
    reactance: float
    rating_longterm: float
    q_from: float = 0.0
    q_to: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    p_min: float
    p_max: float
    p0: float
    cost: float
    reserve_cost: float = 0.0
    ramp_rate: float = 0.0


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    system_base: float = DEFAULT_BASE_MVA
    loss_fraction: float = DEFAULT_LOSS_FRACTION
    name: str = "case"

    def __post_init__(self):
        # accept lists from callers but keep the stored value hashable/immutable
        for attr in ("buses", "branches", "generators"):
            value = getattr(self, attr)
            if not isinstance(value, tuple):
                object.__setattr__(self, attr, tuple(value))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict[str, int]:
        return {br.id: i for i, br in enumerate(self.branches)}

    @cached_property
    def gen_index(self) -> dict[str, int]:
        return {g.id: i for i, g in enumerate(self.generators)}

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def branch_ids(self) -> list[str]:
        return [br.id for br in self.branches]

    @property
    def slack_bus(self) -> int:
        for b in self.buses:
            if b.is_slack:
                return b.id
        raise CaseValidationError("no slack bus")

    @property
    def slack_index(self) -> int:
        return self.bus_index[self.slack_bus]

    def loads(self) -> np.ndarray:
        return np.array([b.load_p for b in self.buses], dtype=float)

    def dispatch0(self) -> np.ndarray:
        return np.array([g.p0 for g in self.generators], dtype=float)

    def gen_incidence(self) -> np.ndarray:
        """Generator-to-bus connectivity matrix (n_bus x n_gen)."""
        gb = np.zeros((self.n_bus, self.n_gen))
        for j, g in enumerate(self.generators):
            gb[self.bus_index[g.bus], j] = 1.0
        return gb

    def neighbors(self) -> dict[int, set[int]]:
        nb: dict[int, set[int]] = {b.id: set() for b in self.buses}
        for br in self.branches:
            if br.in_service:
                nb[br.from_bus].add(br.to_bus)
                nb[br.to_bus].add(br.from_bus)
        return nb

    def with_dispatch(self, p0: Sequence[float]) -> "GridCase":
        gens = tuple(replace(g, p0=float(p)) for g, p in zip(self.generators, p0))
        return replace(self, generators=gens)

    def with_loads(self, loads: Sequence[float]) -> "GridCase":
        buses = tuple(replace(b, load_p=float(p)) for b, p in zip(self.buses, loads))
        return replace(self, buses=buses)


def validate_case(case: GridCase) -> GridCase:
    """Check every model invariant and return the case unchanged."""
    if not case.system_base > 0:
        raise CaseValidationError("system base must be positive")
    if not case.loss_fraction >= 0:
        raise CaseValidationError("loss fraction must be non-negative")
    seen: set[int] = set()
    for b in case.buses:
        if b.id in seen:
            raise CaseValidationError(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if b.load_p < 0:
            raise CaseValidationError(f"negative load at bus {b.id}")
    if not case.buses:
        raise CaseValidationError("case has no buses")
    n_slack = sum(b.is_slack for b in case.buses)
    if n_slack == 0:
        raise CaseValidationError("no slack bus")
    if n_slack > 1:
        raise CaseValidationError(f"{n_slack} slack buses, exactly one required")

    seen_br: set[str] = set()
    for br in case.branches:
        if br.id in seen_br:
            raise CaseValidationError(f"duplicate branch id {br.id}")
        seen_br.add(br.id)
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise CaseValidationError(f"unknown endpoint {end} on branch {br.id}")
        if br.from_bus == br.to_bus:
            raise CaseValidationError(f"branch {br.id} connects bus {br.from_bus} to itself")
        if not br.reactance > 0:
            raise CaseValidationError(f"non-positive reactance on branch {br.id}")
        if not br.rating_longterm > 0:
            raise CaseValidationError(f"non-positive rating on branch {br.id}")

    if not case.generators:
        raise CaseValidationError("case has no generators")
    seen_g: set[str] = set()
    for g in case.generators:
        if g.id in seen_g:
            raise CaseValidationError(f"duplicate generator id {g.id}")
        seen_g.add(g.id)
        if g.bus not in seen:
            raise CaseValidationError(f"unknown bus {g.bus} for generator {g.id}")
        if not (g.p_min <= g.p0 <= g.p_max):
            raise CaseValidationError(f"generator {g.id}: p0 outside [p_min, p_max]")
        if g.ramp_rate < 0:
            raise CaseValidationError(f"generator {g.id}: negative ramp rate")
        if g.cost < 0:
            raise CaseValidationError(f"generator {g.id}: negative cost")

    stray = _disconnected_buses(case)
    if stray:
        raise CaseValidationError("disconnected bus " + ", ".join(str(b) for b in stray))

    demand = (1.0 + case.loss_fraction) * sum(b.load_p for b in case.buses)
    capacity = sum(g.p_max for g in case.generators)
    if capacity < demand - 1e-12:
        raise CaseValidationError(
            f"infeasible case: generation capacity {capacity:.6g} pu below demand {demand:.6g} pu"
        )
    return case


def _disconnected_buses(case: GridCase, skip: Iterable[str] = ()) -> list[int]:
    skip = set(skip)
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        if br.in_service and br.id not in skip:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    start = case.buses[0].id
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return [b.id for b in case.buses if b.id not in seen]


def is_connected_without(case: GridCase, branch_id: str) -> bool:
    return not _disconnected_buses(case, skip=[branch_id])


# ---------------------------------------------------------------------------
# text format

_SECTIONS = ("BUS", "BRANCH", "GEN")
_DIRECTIVES = ("name", "base_mva", "loss_fraction")
_NCOLS = {"BUS": 5, "BRANCH": 8, "GEN": 8}


def _tokens(line: str) -> list[tuple[str, int]]:
    """Split a line into (token, 1-based column) pairs, dropping comments."""
    line = line.split("#", 1)[0]
    out = []
    i = 0
    n = len(line)
    while i < n:
        if line[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not line[j].isspace():
            j += 1
        out.append((line[i:j], i + 1))
        i = j
    return out


def _num(tok: tuple[str, int], lineno: int, what: str) -> float:
    text, col = tok
    try:
        value = float(text)
    except ValueError:
        raise CaseSyntaxError(f"expected number for {what}, got {text!r}", lineno, col) from None
    if not math.isfinite(value):
        raise CaseSyntaxError(f"non-finite value for {what}", lineno, col)
    return value


def _int(tok: tuple[str, int], lineno: int, what: str) -> int:
    text, col = tok
    try:
        return int(text)
    except ValueError:
        raise CaseSyntaxError(f"expected integer for {what}, got {text!r}", lineno, col) from None


def _flag(tok: tuple[str, int], lineno: int, what: str) -> bool:
    text, col = tok
    if text not in ("0", "1"):
        raise CaseSyntaxError(f"expected 0 or 1 for {what}, got {text!r}", lineno, col)
    return text == "1"


def parse_case(text: str, validate: bool = True) -> GridCase:
    """Parse case-file text into a :class:`GridCase`.

    Raises :class:`CaseSyntaxError` with line/column for malformed input and
    :class:`CaseValidationError` when the data violates a model invariant.
    """
    meta: dict[str, str] = {}
    section = None
    rows: dict[str, list[tuple[int, list[tuple[str, int]]]]] = {s: [] for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = _tokens(line)
        if not toks:
            continue
        head = toks[0][0]
        if head.upper() in _SECTIONS and len(toks) == 1:
            section = head.upper()
            continue
        if section is None:
            if head not in _DIRECTIVES:
                raise CaseSyntaxError(f"unknown directive {head!r}", lineno, toks[0][1])
            if len(toks) != 2:
                raise CaseSyntaxError(f"directive {head!r} takes one value", lineno, toks[0][1])
            meta[head] = toks[1][0]
            meta[head + "@"] = str(lineno)
            continue
        if len(toks) != _NCOLS[section]:
            col = toks[min(len(toks), _NCOLS[section]) - 1][1]
            raise CaseSyntaxError(
                f"{section} row needs {_NCOLS[section]} columns, found {len(toks)}", lineno, col
            )
        rows[section].append((lineno, toks))

    base = DEFAULT_BASE_MVA
    if "base_mva" in meta:
        base = _num((meta["base_mva"], 1), int(meta["base_mva@"]), "base_mva")
        if base <= 0:
            raise CaseSyntaxError("base_mva must be positive", int(meta["base_mva@"]))
    loss = DEFAULT_LOSS_FRACTION
    if "loss_fraction" in meta:
        loss = _num((meta["loss_fraction"], 1), int(meta["loss_fraction@"]), "loss_fraction")

    buses = []
    for lineno, t in rows["BUS"]:
        buses.append(Bus(
            id=_int(t[0], lineno, "bus id"),
            base_kv=_num(t[1], lineno, "base_kv"),
            load_p=_num(t[2], lineno, "pd_mw") / base,
            load_q=_num(t[3], lineno, "qd_mvar") / base,
            is_slack=_flag(t[4], lineno, "slack"),
        ))
    branches = []
    for lineno, t in rows["BRANCH"]:
        branches.append(Branch(
            id=t[0][0],
            from_bus=_int(t[1], lineno, "from bus"),
            to_bus=_int(t[2], lineno, "to bus"),
            reactance=_num(t[3], lineno, "x_pu"),
            rating_longterm=_num(t[4], lineno, "rate_mva") / base,
            q_from=_num(t[5], lineno, "q_from_mvar") / base,
            q_to=_num(t[6], lineno, "q_to_mvar") / base,
            in_service=_flag(t[7], lineno, "status"),
        ))
    gens = []
    for lineno, t in rows["GEN"]:
        gens.append(Generator(
            id=t[0][0],
            bus=_int(t[1], lineno, "bus"),
            p_min=_num(t[2], lineno, "pmin_mw") / base,
            p_max=_num(t[3], lineno, "pmax_mw") / base,
            p0=_num(t[4], lineno, "p0_mw") / base,
            cost=_num(t[5], lineno, "cost"),
            reserve_cost=_num(t[6], lineno, "reserve_cost"),
            ramp_rate=_num(t[7], lineno, "ramp_mw_per_min") / base,
        ))
    case = GridCase(tuple(buses), tuple(branches), tuple(gens), base, loss, meta.get("name", "case"))
    return validate_case(case) if validate else case


def _scaled(pu: float, base: float) -> str:
    """Shortest decimal for ``pu * base`` that parses back to exactly ``pu``."""
    pu, base = float(pu), float(base)
    guess = pu * base
    for digits in range(1, 18):
        cand = float(f"{guess:.{digits}g}")
        if cand / base == pu:
            return repr(cand)
    up = down = guess
    for _ in range(4):
        up = math.nextafter(up, math.inf)
        down = math.nextafter(down, -math.inf)
        for cand in (up, down):
            if cand / base == pu:
                return repr(cand)
    return repr(guess)


def _g(x: float) -> str:
    return repr(float(x))


def serialize_case(case: GridCase) -> str:
    base = case.system_base
    out = [
        f"name {case.name}",
        f"base_mva {_g(base)}",
        f"loss_fraction {_g(case.loss_fraction)}",
        "",
        "BUS",
        "# id base_kv pd_mw qd_mvar slack",
    ]
    for b in case.buses:
        out.append(" ".join([
            str(b.id), _g(b.base_kv), _scaled(b.load_p, base), _scaled(b.load_q, base),
            "1" if b.is_slack else "0",
        ]))
    out += ["", "BRANCH", "# id from to x_pu rate_mva q_from_mvar q_to_mvar status"]
    for br in case.branches:
        out.append(" ".join([
            br.id, str(br.from_bus), str(br.to_bus), _g(br.reactance),
            _scaled(br.rating_longterm, base), _scaled(br.q_from, base), _scaled(br.q_to, base),
            "1" if br.in_service else "0",
        ]))
    out += ["", "GEN", "# id bus pmin_mw pmax_mw p0_mw cost reserve_cost ramp_mw_per_min"]
    for g in case.generators:
        out.append(" ".join([
            g.id, str(g.bus), _scaled(g.p_min, base), _scaled(g.p_max, base),
            _scaled(g.p0, base), _g(g.cost), _g(g.reserve_cost), _scaled(g.ramp_rate, base),
        ]))
    return "\n".join(out) + "\n"


def load_case(path) -> GridCase:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


BUNDLED = ("triangle3", "triangle3_attack", "five_bus", "ieee14")


def bundled_case(name: str) -> GridCase:
    """One of the cases shipped with the package, by stem name."""
    from importlib import resources

    stem = name[:-5] if name.endswith(".case") else name
    res = resources.files("gridattack") / "cases" / f"{stem}.case"
    if not res.is_file():
        raise CaseError(f"no bundled case named {name!r}")
    return parse_case(res.read_text(encoding="utf-8"))


def contingency_set(
    case: GridCase, kv_floor: float = 100.0, radial: Mapping[str, bool] | None = None
) -> list[str]:
    """Branch outages screened by the contingency analysis.

    In-service, non-radial branches whose two end buses are both at or above
    ``kv_floor``. Radial flags come from the LODF denominators unless given.
    """
    if radial is None:
        from .sensitivity import build_sensitivities

        radial = build_sensitivities(case).radial_map()
    kv = {b.id: b.base_kv for b in case.buses}
    return [
        br.id for br in case.branches
        if br.in_service and not radial.get(br.id, False)
        and kv[br.from_bus] >= kv_floor and kv[br.to_bus] >= kv_floor
    ]


@dataclass(frozen=True)
class CaseSummary:
    name: str
    n_bus: int
    n_branch: int
    n_gen: int
    total_load: float
    total_capacity: float
    slack_bus: int
    extra: dict = field(default_factory=dict)


def summarize(case: GridCase) -> CaseSummary:
    return CaseSummary(
        name=case.name, n_bus=case.n_bus, n_branch=case.n_branch, n_gen=case.n_gen,
        total_load=float(case.loads().sum()),
        total_capacity=float(sum(g.p_max for g in case.generators)),
        slack_bus=case.slack_bus,
    )
