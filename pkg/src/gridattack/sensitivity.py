"""DC power flow and linear sensitivity factors (PTDF, LODF, OTDF)."""
from __future__ import annotations

import io
import threading
from dataclasses import dataclass, field

import numpy as np

from .grid import GridCase

RADIAL_TOL = 1e-6
PMAX_FLOOR = 0.05


class IslandingError(RuntimeError):
    pass


def build_bus_susceptance(case: GridCase):
    """Return ``(B, A, b)``: bus susceptance matrix, branch-bus incidence, branch susceptances.

    ``A[m, from] = +1`` and ``A[m, to] = -1``; out-of-service branches get ``b = 0``.
    """
    nb, nl = case.n_bus, case.n_branch
    A = np.zeros((nl, nb))
    b = np.zeros(nl)
    for m, br in enumerate(case.branches):
        A[m, case.bus_index[br.from_bus]] = 1.0
        A[m, case.bus_index[br.to_bus]] = -1.0
        if br.in_service:
            b[m] = 1.0 / br.reactance
    B = A.T @ (b[:, None] * A)
    return B, A, b


def _reduced(B: np.ndarray, s: int) -> np.ndarray:
    keep = np.arange(B.shape[0]) != s
    return B[np.ix_(keep, keep)], keep


@dataclass
class DCFlow:
    flows: np.ndarray
    angles: np.ndarray


def solve_dc_flow(case: GridCase, inj, slack: int | None = None) -> DCFlow:
    """Solve the DC power flow for a per-bus injection vector.

    The slack bus absorbs any imbalance in ``inj`` and its angle is zero.
    """
    inj = np.asarray(inj, dtype=float)
    s = case.bus_index[case.slack_bus if slack is None else slack]
    B, A, b = build_bus_susceptance(case)
    Br, keep = _reduced(B, s)
    try:
        theta_r = np.linalg.solve(Br, inj[keep])
    except np.linalg.LinAlgError:
        raise IslandingError(f"singular DC system for case {case.name}: network is islanded") from None
    if np.linalg.cond(Br) > 1e12:
        raise IslandingError(f"ill-conditioned DC system for case {case.name}: network is islanded")
    theta = np.zeros(case.n_bus)
    theta[keep] = theta_r
    return DCFlow(flows=b * (A @ theta), angles=theta)


def compute_ptdf(case: GridCase, slack: int | None = None) -> np.ndarray:
    """Branch x bus PTDF with injections withdrawn at ``slack``."""
    s = case.bus_index[case.slack_bus if slack is None else slack]
    B, A, b = build_bus_susceptance(case)
    Br, keep = _reduced(B, s)
    if np.linalg.cond(Br) > 1e12:
        raise IslandingError(f"case {case.name} is islanded")
    X = np.zeros((case.n_bus, case.n_bus))
    X[np.ix_(keep, keep)] = np.linalg.inv(Br)
    return (b[:, None] * A) @ X


def compute_lodf(case: GridCase, ptdf: np.ndarray):
    """LODF matrix (monitored x outaged) and per-branch radial flags.

    Columns of radial outages are NaN apart from the ``-1`` diagonal; columns of
    out-of-service branches are zero.
    """
    nl = case.n_branch
    fr = np.array([case.bus_index[br.from_bus] for br in case.branches])
    to = np.array([case.bus_index[br.to_bus] for br in case.branches])
    transfer = ptdf[:, fr] - ptdf[:, to]         # (m, k): flow on m per unit transfer on k's ends
    denom = 1.0 - np.diag(transfer)
    in_service = np.array([br.in_service for br in case.branches])
    radial = in_service & (np.abs(denom) < RADIAL_TOL)
    lodf = np.zeros((nl, nl))
    ok = in_service & ~radial
    lodf[:, ok] = transfer[:, ok] / denom[ok]
    lodf[:, radial] = np.nan
    idx = np.flatnonzero(in_service)
    lodf[idx, idx] = -1.0
    return lodf, radial


def compute_otdf(ptdf: np.ndarray, lodf: np.ndarray, k: int) -> np.ndarray:
    """Post-outage PTDF for contingency ``k`` (branch index)."""
    col = lodf[:, k]
    if np.any(np.isnan(col)):
        raise ValueError(f"branch index {k} is radial; its outage islands the network")
    return ptdf + np.outer(col, ptdf[k])


@dataclass
class SensitivitySet:
    ptdf: np.ndarray
    lodf: np.ndarray
    radial: np.ndarray
    slack_bus: int
    branch_ids: list[str]
    bus_ids: list[int]
    _otdf: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def branch(self, k) -> int:
        return self.branch_ids.index(k) if isinstance(k, str) else int(k)

    def otdf(self, k) -> np.ndarray:
        k = self.branch(k)
        with self._lock:
            mat = self._otdf.get(k)
            if mat is None:
                mat = compute_otdf(self.ptdf, self.lodf, k)
                # post-outage flow on the outaged branch itself must vanish
                assert np.max(np.abs(mat[k]), initial=0.0) < 1e-8
                mat.setflags(write=False)
                self._otdf[k] = mat
        return mat

    def radial_map(self) -> dict[str, bool]:
        return {bid: bool(r) for bid, r in zip(self.branch_ids, self.radial)}

    def base_flows(self, inj) -> np.ndarray:
        return self.ptdf @ np.asarray(inj, dtype=float)

    def outage_flows(self, base_flows: np.ndarray, k) -> np.ndarray:
        k = self.branch(k)
        return base_flows + self.lodf[:, k] * base_flows[k]

    def to_csv(self, which: str = "ptdf") -> str:
        mat = {"ptdf": self.ptdf, "lodf": self.lodf}[which]
        cols = self.bus_ids if which == "ptdf" else self.branch_ids
        buf = io.StringIO()
        buf.write("branch," + ",".join(str(c) for c in cols) + "\n")
        for bid, row in zip(self.branch_ids, mat):
            buf.write(bid + "," + ",".join(f"{v:.12g}" for v in row) + "\n")
        return buf.getvalue()


def build_sensitivities(case: GridCase, slack: int | None = None) -> SensitivitySet:
    slack = case.slack_bus if slack is None else slack
    ptdf = compute_ptdf(case, slack)
    lodf, radial = compute_lodf(case, ptdf)
    return SensitivitySet(ptdf, lodf, radial, slack, case.branch_ids, case.bus_ids)


def injection(case: GridCase, dispatch, loads) -> np.ndarray:
    """Net bus injection ``G_B P_G - P_D``."""
    return case.gen_incidence() @ np.asarray(dispatch, dtype=float) - np.asarray(loads, dtype=float)


def active_limits(case: GridCase, shortterm_factor: float = 1.15, q_ctg=None):
    """Active-power limits from MVA ratings and reactive flows.

    Base: ``sqrt(S^2 - Q^2)`` with ``Q`` the larger end magnitude; contingency
    limits use ``shortterm_factor * S``. ``q_ctg`` optionally overrides the
    reactive flow assumed under contingency per branch id (defaults to base).
    When ``Q`` reaches the rating the limit falls to a floor of 0.05 pu.
    """
    s = np.array([br.rating_longterm for br in case.branches])
    q = np.array([max(abs(br.q_from), abs(br.q_to)) for br in case.branches])
    qk = q.copy()
    if q_ctg:
        for bid, val in q_ctg.items():
            qk[case.branch_index[bid]] = abs(val)
    sk = shortterm_factor * s

    def _lim(rating, react):
        return np.maximum(np.sqrt(np.maximum(rating**2 - react**2, 0.0)), np.minimum(PMAX_FLOOR, rating))

    return _lim(s, q), _lim(sk, qk)
