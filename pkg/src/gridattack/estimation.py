"""DC measurement model, WLS state estimation with a chi-square bad-data test,
and construction of unobservable false-data attacks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .grid import GridCase
from .sensitivity import build_bus_susceptance

C_ZERO_TOL = 1e-6
DEFAULT_SIGMA = 0.01
BDD_CONFIDENCE = 0.99
SCHEMA = "gridattack.measurements/1"


class UnobservableError(RuntimeError):
    def __init__(self, deficiency: int):
        super().__init__(f"measurement set is unobservable: rank deficient by {deficiency}")
        self.deficiency = deficiency


def measurement_layout(case: GridCase):
    """Ids, kinds and elements of the full measurement set of ``case``.

    Every in-service branch is metered at both ends, every bus for injection.
    """
    ids, kinds, elems = [], [], []
    for br in case.branches:
        if not br.in_service:
            continue
        for end in ("from", "to"):
            ids.append(f"flow_{end}:{br.id}")
            kinds.append(f"flow_{end}")
            elems.append(br.id)
    for bus in case.buses:
        ids.append(f"inj:{bus.id}")
        kinds.append("injection")
        elems.append(bus.id)
    return ids, kinds, elems


def measurement_jacobian(case: GridCase, kinds, elems) -> np.ndarray:
    B, A, b = build_bus_susceptance(case)
    rows = []
    for kind, el in zip(kinds, elems):
        if kind == "injection":
            rows.append(B[case.bus_index[el]])
        else:
            m = case.branch_index[el]
            row = b[m] * A[m]
            rows.append(row if kind == "flow_from" else -row)
    return np.array(rows).reshape(len(rows), case.n_bus)


@dataclass
class MeasurementSet:
    case: GridCase
    ids: list[str]
    kinds: list[str]
    elements: list
    values: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if np.any(self.sigma <= 0):
            raise ValueError("measurement standard deviations must be positive")
        if len(self.ids) < 2 * self.case.n_bus - 1:
            raise ValueError(
                f"{len(self.ids)} measurements for {self.case.n_bus} buses; at least "
                f"{2 * self.case.n_bus - 1} required"
            )

    @property
    def n(self) -> int:
        return len(self.ids)

    def jacobian(self) -> np.ndarray:
        return measurement_jacobian(self.case, self.kinds, self.elements)

    def with_values(self, values) -> "MeasurementSet":
        return MeasurementSet(self.case, self.ids, self.kinds, self.elements, values, self.sigma)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "case": self.case.name,
            "measurements": [
                {"id": i, "kind": k, "element": e, "value": float(v), "sigma": float(s)}
                for i, k, e, v, s in zip(self.ids, self.kinds, self.elements, self.values, self.sigma)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, case: GridCase, text: str) -> "MeasurementSet":
        data = json.loads(text)
        if data.get("schema") != SCHEMA:
            raise ValueError(f"unsupported measurement schema {data.get('schema')!r}")
        ms = data["measurements"]
        return cls(case, [m["id"] for m in ms], [m["kind"] for m in ms], [m["element"] for m in ms],
                   [m["value"] for m in ms], [m["sigma"] for m in ms])


def measure(case: GridCase, flows, angles, noise_seed: int = 0,
            sigma: float = DEFAULT_SIGMA) -> MeasurementSet:
    """Meter a DC operating point; ``noise_seed=0`` gives noiseless values."""
    ids, kinds, elems = measurement_layout(case)
    H = measurement_jacobian(case, kinds, elems)
    angles = np.asarray(angles, dtype=float)
    if flows is not None:
        _, A, b = build_bus_susceptance(case)
        if not np.allclose(b * (A @ angles), flows, atol=1e-9):
            raise ValueError("flows are inconsistent with the given angles")
    z = H @ angles
    if noise_seed:
        z = z + np.random.default_rng(noise_seed).normal(0.0, sigma, size=z.size)
    return MeasurementSet(case, ids, kinds, elems, z, np.full(z.size, sigma))


@dataclass
class StateEstimate:
    angles: np.ndarray
    residuals: np.ndarray
    J: float
    dof: int
    threshold: float
    residual_norm: float = 0.0

    @property
    def alarm(self) -> bool:
        return self.J > self.threshold


def estimate_state(meas: MeasurementSet, confidence: float = BDD_CONFIDENCE) -> StateEstimate:
    """Weighted least squares with the slack angle pinned to zero."""
    case = meas.case
    H = meas.jacobian()
    s = case.slack_index
    keep = np.arange(case.n_bus) != s
    w = 1.0 / meas.sigma
    Hw = H[:, keep] * w[:, None]
    zw = meas.values * w
    rank = np.linalg.matrix_rank(Hw)
    if rank < case.n_bus - 1:
        raise UnobservableError(case.n_bus - 1 - rank)
    sol, *_ = np.linalg.lstsq(Hw, zw, rcond=None)
    theta = np.zeros(case.n_bus)
    theta[keep] = sol
    r = meas.values - H @ theta
    J = float(np.sum((r * w) ** 2))
    dof = meas.n - (case.n_bus - 1)
    thr = float(chi2.ppf(confidence, dof)) if dof > 0 else float("inf")
    return StateEstimate(theta, r, J, dof, thr, float(np.linalg.norm(r)))


@dataclass
class AttackVector:
    """Angle perturbation ``c`` (radians) with derived attack footprint."""
    case: GridCase
    c: np.ndarray
    center_buses: list[int]
    subgraph_buses: list[int]
    touched_measurements: list[str] = field(default_factory=list)

    @classmethod
    def from_array(cls, case: GridCase, c, c_zero_tol: float = C_ZERO_TOL) -> "AttackVector":
        c = np.array(c, dtype=float).ravel()
        if c.size != case.n_bus:
            raise ValueError(f"attack vector has {c.size} entries for {case.n_bus} buses")
        c[np.abs(c) <= c_zero_tol] = 0.0
        if c[case.slack_index] != 0.0:
            raise ValueError("attack vector must be zero at the slack bus")
        centers = [case.buses[i].id for i in np.flatnonzero(c)]
        nb = case.neighbors()
        sub = set(centers)
        for bus in centers:
            sub |= nb[bus]
        ids, kinds, elems = measurement_layout(case)
        delta = measurement_jacobian(case, kinds, elems) @ c
        touched = [i for i, d in zip(ids, delta) if d != 0.0]
        order = {b: k for k, b in enumerate(case.bus_ids)}
        return cls(case, c, centers, sorted(sub, key=order.get), touched)

    @property
    def l1(self) -> float:
        return float(np.abs(self.c).sum())

    @property
    def l0(self) -> int:
        return len(self.center_buses)


def _as_attack(case: GridCase, c) -> AttackVector:
    return c if isinstance(c, AttackVector) else AttackVector.from_array(case, c)


def apply_attack(meas: MeasurementSet, c) -> MeasurementSet:
    """False measurements consistent with the shifted state ``theta + c``."""
    av = _as_attack(meas.case, c)
    delta = meas.jacobian() @ av.c
    values = meas.values.copy()
    hit = delta != 0.0
    values[hit] = values[hit] + delta[hit]
    return meas.with_values(values)


def injection_shift(case: GridCase, c) -> np.ndarray:
    """``Hc``: change in estimated bus injections caused by ``c``."""
    B, _, _ = build_bus_susceptance(case)
    cvec = c.c if isinstance(c, AttackVector) else np.asarray(c, dtype=float)
    return B @ cvec


def false_loads(case: GridCase, c, loads=None) -> np.ndarray:
    """Loads the operator estimates under attack, ``P_D - Hc``."""
    loads = case.loads() if loads is None else np.asarray(loads, dtype=float)
    return loads - injection_shift(case, c)


@dataclass(frozen=True)
class AttackMetrics:
    l1: float
    l0: int
    subgraph_size: int
    touched: int


def attack_metrics(c, c_zero_tol: float = C_ZERO_TOL, case: GridCase | None = None) -> AttackMetrics:
    if not isinstance(c, AttackVector):
        if case is None:
            raise ValueError("a case is needed to size the attack subgraph of a raw vector")
        c = AttackVector.from_array(case, c, c_zero_tol)
    elif c_zero_tol != C_ZERO_TOL:
        c = AttackVector.from_array(c.case, c.c, c_zero_tol)
    return AttackMetrics(c.l1, c.l0, len(c.subgraph_buses), len(c.touched_measurements))
