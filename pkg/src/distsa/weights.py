"""Stochastic weight schedules, window products and absolute probability sequences.

Row-stochastic matrices drive consensus (``W[i, j] > 0`` only when ``j`` is an
in-neighbor of ``i``); column-stochastic matrices drive push-sum.  Schedules
are compiled to a small bank of distinct matrices plus a per-step index,
which is what the simulation kernels consume.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .graphs import DirectedGraph, GraphSequence, PeriodicSchedule, SwitchSchedule

__all__ = [
    "ROW",
    "COLUMN",
    "WeightError",
    "BurnInError",
    "LimitNotDetected",
    "WeightSchedule",
    "GraphWeights",
    "ExplicitWeights",
    "AbsoluteProbabilitySequence",
    "equal_neighbor_weights",
    "push_weights",
    "check_stochastic",
    "min_positive_entry",
    "product_window",
    "absolute_probability_sequence",
    "eta_series",
    "push_weight_sums",
    "epsilon1",
    "tilde_weights",
    "verify_push_identities",
    "dump_matrix_csv",
    "dump_aps_csv",
]

ROW = "row"
COLUMN = "column"
STOCHASTIC_TOL = 1e-12
LIMIT_TOL = 1e-8


class WeightError(ValueError):
    pass


class BurnInError(RuntimeError):
    """Backward recursion did not forget its terminal vector."""

    def __init__(self, sensitivity: float, burn_in: int, suggested: int):
        self.sensitivity = sensitivity
        self.burn_in = burn_in
        self.suggested = suggested
        super().__init__(
            f"burn-in too short: terminal sensitivity {sensitivity:.3e} after H={burn_in}; try H={suggested}"
        )


class LimitNotDetected(RuntimeError):
    """The absolute probability sequence shows no limit over the computed tail."""

    assumption = "pi-limit"


def _adjacency(g) -> np.ndarray:
    return g.adjacency() if isinstance(g, DirectedGraph) else np.asarray(g, dtype=bool)


def equal_neighbor_weights(g) -> np.ndarray:
    """Row-stochastic ``w[i, j] = 1/|in-neighbors of i|`` on the graph's pattern."""
    adj = _adjacency(g).astype(float)
    return adj / adj.sum(axis=-1, keepdims=True)


def push_weights(g) -> np.ndarray:
    """Column-stochastic ``w[i, j] = 1/|out-neighbors of j|`` on the graph's pattern."""
    adj = _adjacency(g).astype(float)
    return adj / adj.sum(axis=-2, keepdims=True)


def check_stochastic(M, orientation: str = ROW, tol: float = STOCHASTIC_TOL, graph=None) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise WeightError(f"expected a square matrix, got shape {M.shape}")
    if np.any(M < 0):
        raise WeightError("negative weight")
    sums = M.sum(axis=1 if orientation == ROW else 0)
    if np.max(np.abs(sums - 1.0)) > tol:
        raise WeightError(f"not {orientation}-stochastic: sums deviate by {np.max(np.abs(sums - 1.0)):.3e}")
    if np.any(np.diag(M) <= 0):
        raise WeightError("diagonal must be positive (self-arcs)")
    if graph is not None:
        adj = _adjacency(graph)
        if np.any((M > 0) & ~adj):
            raise WeightError("weight pattern not compliant with the declared graph")


def min_positive_entry(M) -> float:
    M = np.asarray(M)
    return float(M[M > 0].min())


class WeightSchedule:
    """Time-indexed stochastic matrices ``W_t``."""

    orientation: str = ROW
    n_agents: int

    def compile(self, t0: int, t1: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(bank, idx)`` with ``W_t = bank[idx[t - t0]]`` for t in [t0, t1)."""
        raise NotImplementedError

    def matrix_at(self, t: int) -> np.ndarray:
        bank, idx = self.compile(t, t + 1)
        return bank[idx[0]].copy()

    def beta(self, horizon: int) -> float:
        """Smallest positive weight over the first ``horizon`` steps."""
        bank, idx = self.compile(0, horizon)
        return min(min_positive_entry(bank[k]) for k in np.unique(idx))


@dataclass(frozen=True)
class GraphWeights(WeightSchedule):
    graphs: GraphSequence
    orientation: str = ROW

    def __post_init__(self):
        if self.orientation not in (ROW, COLUMN):
            raise WeightError(f"unknown orientation {self.orientation!r}")

    @property
    def n_agents(self) -> int:
        return self.graphs.n_agents

    def compile(self, t0, t1):
        adj = self.graphs.adjacency_stack(t0, max(t1, t0 + 1))
        packed = np.packbits(adj.reshape(adj.shape[0], -1), axis=1)
        _, first, inverse = np.unique(packed, axis=0, return_index=True, return_inverse=True)
        rule = equal_neighbor_weights if self.orientation == ROW else push_weights
        bank = rule(adj[first])
        return np.ascontiguousarray(bank), inverse.reshape(-1)[: max(t1 - t0, 0)].astype(np.int64)


@dataclass(frozen=True)
class ExplicitWeights(WeightSchedule):
    """A periodic list of user-supplied matrices, validated on construction.

    ``switch_time``/``tail`` optionally replace the periodic list by a second
    periodic list from ``switch_time`` on.
    """

    matrices: tuple
    orientation: str = ROW
    declared_beta: float | None = None
    tail: tuple = ()
    switch_time: int = 0

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3:
            raise WeightError("matrices must be a list of square matrices")
        tail = np.asarray(self.tail, dtype=float) if len(self.tail) else np.empty((0,) + mats.shape[1:])
        # nested tuples keep the frozen dataclass hashable
        object.__setattr__(self, "matrices", _as_tuples(mats))
        object.__setattr__(self, "tail", _as_tuples(tail))
        for M in list(mats) + list(tail):
            check_stochastic(M, self.orientation)
            if self.declared_beta is not None and min_positive_entry(M) < self.declared_beta - 1e-15:
                raise WeightError(f"positive weight below declared beta={self.declared_beta}")

    @property
    def n_agents(self) -> int:
        return len(self.matrices[0])

    def _banks(self):
        head = np.asarray(self.matrices, dtype=float)
        tail = np.asarray(self.tail, dtype=float).reshape((-1,) + head.shape[1:])
        return head, tail

    def compile(self, t0, t1):
        head, tail = self._banks()
        ts = np.arange(t0, t1)
        if len(tail) == 0:
            return head, (ts % len(head)).astype(np.int64)
        idx = np.where(ts < self.switch_time, ts % len(head), len(head) + (ts - self.switch_time) % len(tail))
        return np.concatenate([head, tail]), idx.astype(np.int64)

    def graph_at(self, t: int) -> DirectedGraph:
        return DirectedGraph.from_adjacency(self.matrix_at(t) > 0)

    def graph_sequence(self, declared_L: int = 1) -> GraphSequence:
        """The schedule of zero patterns (arc j -> i where ``W[i, j] > 0``)."""
        def pattern(mats):
            mats = np.asarray(mats, dtype=float)
            return PeriodicSchedule(tuple(DirectedGraph.from_adjacency(M > 0) for M in mats), declared_L)

        head = pattern(self.matrices)
        if not len(self.tail):
            return head
        return SwitchSchedule(head, pattern(self.tail), self.switch_time, declared_L)


def _as_tuples(a):
    return tuple(map(float, a)) if np.ndim(a) == 1 else tuple(_as_tuples(r) for r in a)


def product_window(schedule: WeightSchedule, s: int, t: int) -> np.ndarray:
    """``W_t W_{t-1} ... W_s`` (left-multiplied, inclusive)."""
    if not 0 <= s <= t:
        raise WeightError(f"need 0 <= s <= t, got s={s}, t={t}")
    bank, idx = schedule.compile(s, t + 1)
    P = np.eye(schedule.n_agents)
    for k in idx:
        P = bank[k] @ P
    return P


@dataclass
class AbsoluteProbabilitySequence:
    horizon: int
    burn_in: int
    vectors: np.ndarray
    pi_min: float
    pi_infinity: np.ndarray | None
    terminal_sensitivity: float
    recursion_residual: float = field(default=float("nan"))

    @property
    def limit_detected(self) -> bool:
        return self.pi_infinity is not None


def _suggest_burn_in(sensitivity, burn_in, tol):
    if sensitivity >= 2.0 or sensitivity <= 0:
        return 2 * burn_in
    rate = (sensitivity / 2.0) ** (1.0 / max(burn_in, 1))
    if rate >= 1.0:
        return 2 * burn_in
    return max(2 * burn_in, int(math.ceil(1.2 * math.log(tol / 2.0) / math.log(rate))))


def _detect_limit(vectors: np.ndarray) -> np.ndarray | None:
    # the spread sum bounds every pairwise 1-norm difference within the tail
    tail = vectors[-int(math.ceil(len(vectors) / 4)):]
    spread = np.sum(tail.max(axis=0) - tail.min(axis=0))
    return tail[-1].copy() if spread < LIMIT_TOL else None


def absolute_probability_sequence(
    schedule: WeightSchedule,
    horizon: int,
    burn_in: int,
    terminal=None,
    tol: float = 1e-9,
    compiled=None,
) -> AbsoluteProbabilitySequence:
    """Backward recursion ``pi_t = W_t^T pi_{t+1}`` from ``pi_{T+H} = terminal``.

    The same recursion is run from every vertex of the simplex; the largest
    1-norm gap to the main run at time ``T`` is the terminal sensitivity (the
    gap only shrinks further back in time, so it bounds every reported
    vector).
    """
    if schedule.orientation != ROW:
        raise WeightError("absolute probability sequences need a row-stochastic schedule")
    if horizon < 1 or burn_in < 1:
        raise WeightError("horizon and burn_in must be >= 1")
    n = schedule.n_agents
    v = np.full(n, 1.0 / n) if terminal is None else np.asarray(terminal, dtype=float)
    if np.any(v < 0) or abs(v.sum() - 1.0) > STOCHASTIC_TOL:
        raise WeightError("terminal vector must be stochastic")
    bank, idx = compiled if compiled is not None else schedule.compile(0, horizon + burn_in)
    V = np.column_stack([v, np.eye(n)])
    vectors, at_T = _kernels.aps_backward(bank, idx[: horizon + burn_in], V, horizon + 1)
    sens = float(np.max(np.abs(at_T[:, 1:] - at_T[:, :1]).sum(axis=0)))
    if sens > tol:
        raise BurnInError(sens, burn_in, _suggest_burn_in(sens, burn_in, tol))
    residual = _recursion_residual(bank, idx[:horizon], vectors)
    return AbsoluteProbabilitySequence(
        horizon=horizon,
        burn_in=burn_in,
        vectors=vectors,
        pi_min=float(vectors.min()),
        pi_infinity=_detect_limit(vectors),
        terminal_sensitivity=sens,
        recursion_residual=residual,
    )


def _recursion_residual(bank, idx, vectors) -> float:
    lhs = vectors[:-1]
    rhs = np.einsum("ti,tij->tj", vectors[1:], bank[idx])
    return float(np.max(np.abs(lhs - rhs).sum(axis=1))) if len(lhs) else 0.0


def eta_series(aps: AbsoluteProbabilitySequence) -> np.ndarray:
    """``eta_t = ||pi_t - pi_inf||_2`` over the reported range."""
    if aps.pi_infinity is None:
        raise LimitNotDetected("absolute probability sequence has no detectable limit (pi-limit assumption violated)")
    return np.linalg.norm(aps.vectors - aps.pi_infinity, axis=1)


def push_weight_sums(schedule: WeightSchedule, horizon: int, compiled=None) -> np.ndarray:
    """``y_0..y_T`` with ``y_0 = 1`` and ``y_{t+1} = W_t y_t``."""
    bank, idx = compiled if compiled is not None else schedule.compile(0, horizon)
    return _kernels.forward_apply(bank, idx[:horizon], np.ones(schedule.n_agents))


def epsilon1(schedule: WeightSchedule, horizon: int, L: int | None = None) -> float:
    """Running minimum over t < horizon of ``min_i (W_t ... W_0 1)^i``."""
    if schedule.orientation != COLUMN:
        raise WeightError("epsilon1 needs a column-stochastic schedule")
    y = push_weight_sums(schedule, horizon)
    value = float(y[1:].min()) if horizon > 0 else 1.0
    n = schedule.n_agents
    L = L if L is not None else getattr(getattr(schedule, "graphs", None), "declared_L", 1)
    floor = float(n) ** (-n * L)
    if value < floor * (1 - 1e-12) or value > 1.0 + 1e-12:
        raise AssertionError(f"epsilon1={value:.3e} outside [{floor:.3e}, 1]")
    return min(value, 1.0)


def tilde_weights(hat_W, y) -> np.ndarray:
    """Row-stochastic ``w~[i, j] = w[i, j] y_j / sum_k w[i, k] y_k``."""
    hat_W = np.asarray(hat_W, dtype=float)
    y = np.asarray(y, dtype=float)
    num = hat_W * y[None, :]
    den = num.sum(axis=1, keepdims=True)
    assert np.all(den > 0), "zero denominator: self-arcs keep w_ii y_i > 0"
    return num / den


def verify_push_identities(schedule: WeightSchedule, horizon: int, n_windows: int = 50, burn_in: int | None = None,
                           seed: int = 0) -> dict:
    """Residuals of the push-sum identities along a column-stochastic schedule.

    ``product``: max over sampled windows of
    ``|(W~_t..W~_s)[i, j] - (y_s[j] / y_{t+1}[i]) (W^_t..W^_s)[i, j]|``;
    ``ratio``: max over t <= horizon of ``|pi~_t[i] / y_t[i] - 1/N|``;
    ``limit``: Frobenius distance of ``W~_{T-1}..W~_0`` to ``(1/N) 1 1^T``.
    """
    if schedule.orientation != COLUMN:
        raise WeightError("push identities need a column-stochastic schedule")
    n = schedule.n_agents
    H = horizon if burn_in is None else burn_in
    bank, idx = schedule.compile(0, horizon + H)
    y = push_weight_sums(schedule, horizon + H, compiled=(bank, idx))
    hat = bank[idx]
    tilde = np.stack([tilde_weights(hat[t], y[t]) for t in range(horizon + H)])

    rng = np.random.default_rng(seed)
    product_res = 0.0
    for _ in range(n_windows):
        s, t = sorted(rng.integers(0, horizon, size=2))
        P_tilde = np.eye(n)
        P_hat = np.eye(n)
        for k in range(s, t + 1):
            P_tilde = tilde[k] @ P_tilde
            P_hat = hat[k] @ P_hat
        predicted = (y[s][None, :] / y[t + 1][:, None]) * P_hat
        product_res = max(product_res, float(np.max(np.abs(P_tilde - predicted))))

    tilde_idx = np.arange(horizon + H, dtype=np.int64)
    V = np.column_stack([np.full(n, 1.0 / n), np.eye(n)])
    pi_tilde, at_T = _kernels.aps_backward(tilde, tilde_idx, V, horizon + 1)
    sens = float(np.max(np.abs(at_T[:, 1:] - at_T[:, :1]).sum(axis=0)))
    ratio_res = float(np.max(np.abs(pi_tilde / y[: horizon + 1] - 1.0 / n)))

    P = np.eye(n)
    for k in range(horizon):
        P = tilde[k] @ P
    limit_res = float(np.linalg.norm(P - np.full((n, n), 1.0 / n)))
    return {
        "horizon": horizon,
        "burn_in": H,
        "windows": n_windows,
        "product": product_res,
        "ratio": ratio_res,
        "limit": limit_res,
        "terminal_sensitivity": sens,
        "mass": float(np.max(np.abs(y.sum(axis=1) - n))),
        "y_min": float(y.min()),
    }


def dump_matrix_csv(M, path) -> Path:
    """Sparse ``i,j,value`` triplets (1-based), row-major order."""
    path = Path(path)
    M = np.asarray(M)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "value"])
        for i, j in zip(*np.nonzero(M)):
            w.writerow([i + 1, j + 1, repr(float(M[i, j]))])
    return path


def dump_aps_csv(aps: AbsoluteProbabilitySequence, path) -> Path:
    path = Path(path)
    n = aps.vectors.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"pi_{i + 1}" for i in range(n)])
        for t, row in enumerate(aps.vectors):
            w.writerow([t] + [repr(float(v)) for v in row])
    return path
