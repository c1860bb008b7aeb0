"""Consensus-SA, the combine-after-adapt variant, and push-SA iterations.

Matrix forms, with ``Theta`` the N x K block of agent states (row i is agent i):

* consensus: ``Theta' = W Theta + a W Theta A(x)^T + a B(x)``
* variant:   ``Theta' = W Theta + a Theta A(x)^T + a B(x)``
* push:      ``y' = W y``, ``Theta~' = W (Theta~ + a (Theta A(x)^T + B(x)))``,
  ``theta'_i = theta~'_i / y'_i`` with W column-stochastic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .graphs import GraphSequence
from .noise import NoiseModel, sample_path
from .weights import COLUMN, ROW, GraphWeights, WeightSchedule

__all__ = [
    "CONSENSUS",
    "KUSHNER",
    "PUSH",
    "ENGINES",
    "DivergenceError",
    "StepSchedule",
    "PushState",
    "Trajectory",
    "consensus_sa_step",
    "kushner_variant_step",
    "push_sa_step",
    "default_record_times",
    "initial_states",
    "run",
]

CONSENSUS = "consensus"
KUSHNER = "kushner"
PUSH = "push"
ENGINES = (CONSENSUS, KUSHNER, PUSH)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, detail: str = "non-finite or exploding agent state"):
        self.step = step
        super().__init__(f"divergence at step {step}: {detail}")


@dataclass(frozen=True)
class StepSchedule:
    """``fixed`` (alpha_t = alpha), ``harmonic`` (alpha_0/(t+1)) or ``table``.

    A table holds its last value past its end; it is only checked for
    positivity and non-increase, so square-summability stays unverified.
    """

    kind: str
    value: float = 0.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("fixed", "harmonic", "table"):
            raise ValueError(f"unknown step kind {self.kind!r}")
        if self.kind == "table":
            tab = np.asarray(self.table, dtype=float)
            if tab.size == 0 or np.any(tab <= 0) or np.any(np.diff(tab) > 0):
                raise ValueError("step table must be positive and non-increasing")
            object.__setattr__(self, "table", tuple(map(float, tab)))
        elif not self.value > 0:
            raise ValueError("step size must be positive")

    @property
    def assumption_verified(self) -> bool:
        """Whether sum a_t = inf and sum a_t^2 < inf hold by construction."""
        return self.kind == "harmonic"

    def alphas(self, T: int) -> np.ndarray:
        t = np.arange(T)
        if self.kind == "fixed":
            return np.full(T, self.value)
        if self.kind == "harmonic":
            return self.value / (t + 1.0)
        tab = np.asarray(self.table)
        return tab[np.minimum(t, len(tab) - 1)]

    def at(self, t):
        """Step size at integer times ``t``."""
        t = np.asarray(t)
        if self.kind == "fixed":
            return np.full(t.shape, self.value) if t.ndim else self.value
        if self.kind == "harmonic":
            return self.value / (t + 1.0)
        tab = np.asarray(self.table)
        return tab[np.minimum(t, len(tab) - 1)]


@dataclass
class PushState:
    theta_tilde: np.ndarray
    y: np.ndarray
    theta: np.ndarray = None

    def __post_init__(self):
        self.theta_tilde = np.asarray(self.theta_tilde, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.theta is None:
            self.theta = self.theta_tilde / self.y[:, None]


def _check_finite(theta, step):
    if not np.all(np.isfinite(theta)) or np.linalg.norm(theta, axis=1).max() > _kernels.DIVERGENCE_NORM:
        raise DivergenceError(step)


def consensus_sa_step(theta, W, A, B, alpha, step: int = 0):
    theta = np.asarray(theta, dtype=float)
    mixed = W @ theta
    out = mixed + alpha * mixed @ np.asarray(A).T + alpha * np.asarray(B)
    _check_finite(out, step + 1)
    return out


def kushner_variant_step(theta, W, A, B, alpha, step: int = 0):
    theta = np.asarray(theta, dtype=float)
    out = W @ theta + alpha * theta @ np.asarray(A).T + alpha * np.asarray(B)
    _check_finite(out, step + 1)
    return out


def push_sa_step(state: PushState, W, A, B, alpha, step: int = 0) -> PushState:
    msg = state.theta_tilde + alpha * (state.theta @ np.asarray(A).T + np.asarray(B))
    y = W @ state.y
    assert np.all(y > 0), "push-sum weights must stay positive"
    tilde = W @ msg
    out = PushState(tilde, y, tilde / y[:, None])
    _check_finite(out.theta, step + 1)
    return out


@dataclass
class Trajectory:
    """Snapshots at ``times`` plus per-step scalar metrics for every t in 0..T.

    Consensus metrics columns: weighted squared error to ``theta_star``,
    weighted consensus error, squared error of the weighted average.  Push
    columns: summed squared error, ``mu_t``, squared error of the plain
    average of ``theta~``, uniform consensus error, ``||Theta_t||_F``.
    """

    engine: str
    times: np.ndarray
    theta: np.ndarray
    metrics: np.ndarray
    seed: int
    noise_path: np.ndarray | None = None
    x0: int = 0
    theta0: np.ndarray | None = None
    theta_tilde: np.ndarray | None = None
    y: np.ndarray | None = None
    mass_residual: float = 0.0
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.metrics.shape[0] - 1


def default_record_times(T: int, stride: int | None = None, extra=()) -> np.ndarray:
    stride = max(1, T // 2000) if stride is None else max(1, int(stride))
    times = np.union1d(np.arange(0, T + 1, stride), [T])
    extra = [t for t in extra if 0 <= t <= T]
    return np.union1d(times, np.asarray(extra, dtype=np.int64)).astype(np.int64)


def initial_states(rng, n_agents: int, dim: int, scale: float = 1.0) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(n_agents, dim))


def run(
    engine: str,
    schedule,
    noise: NoiseModel,
    steps: StepSchedule,
    T: int,
    seed: int,
    record_stride: int | None = None,
    *,
    weight_rule: str | None = None,
    theta_star=None,
    pi=None,
    record_times=None,
    initial=None,
    initial_scale: float = 1.0,
    compiled=None,
    keep_path: bool = True,
    fingerprint: str = "",
) -> Trajectory:
    """Iterate one engine for ``T`` steps along a sampled noise path.

    ``schedule`` is a :class:`WeightSchedule`, or a :class:`GraphSequence`
    combined with ``weight_rule`` (``"equal_neighbor"`` or ``"push"``).
    ``pi`` (shape ``(T+1, N)``) weights the consensus metrics; uniform
    weights are used when it is omitted.  The generator seeded by ``seed``
    draws the initial states first and the noise path second.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if isinstance(schedule, GraphSequence):
        rule = weight_rule or ("push" if engine == PUSH else "equal_neighbor")
        schedule = GraphWeights(schedule, COLUMN if rule == "push" else ROW)
    want = COLUMN if engine == PUSH else ROW
    if schedule.orientation != want:
        raise ValueError(f"{engine} engine needs {want}-stochastic weights")
    N, K = noise.n_agents, noise.dim
    if schedule.n_agents != N:
        raise ValueError(f"weights have {schedule.n_agents} agents, noise maps {N}")

    rng = np.random.default_rng(seed)
    theta0 = initial_states(rng, N, K, initial_scale) if initial is None else np.array(initial, dtype=float).reshape(N, K)
    path = sample_path(noise, T, rng=rng)
    bank, idx = compiled if compiled is not None else schedule.compile(0, T)
    idx = np.ascontiguousarray(idx[:T], dtype=np.int64)
    alphas = steps.alphas(T)
    star = np.zeros(K) if theta_star is None else np.asarray(theta_star, dtype=float)
    times = default_record_times(T, record_stride) if record_times is None else np.asarray(record_times, np.int64)

    if engine == PUSH:
        snaps, tildes, ys, metrics, mass, status, fail = _kernels.push_loop(
            theta0, bank, idx, noise.A_states, noise.b_states, path, alphas, star, times
        )
        if status == 2:
            raise AssertionError(f"non-positive push-sum weight at step {fail}")
    else:
        weights = np.full((T + 1, N), 1.0 / N) if pi is None else np.ascontiguousarray(pi[: T + 1], dtype=float)
        variant = 0 if engine == CONSENSUS else 1
        snaps, metrics, status, fail, _ = _kernels.consensus_loop(
            theta0, bank, idx, noise.A_states, noise.b_states, path, alphas, variant, weights, star, times
        )
        tildes = ys = None
        mass = 0.0
    if status == 1:
        raise DivergenceError(int(fail))
    return Trajectory(
        engine=engine,
        times=times,
        theta=snaps,
        metrics=metrics,
        seed=seed,
        noise_path=path if keep_path else None,
        x0=int(path[0]),
        theta0=theta0,
        theta_tilde=tildes,
        y=ys,
        mass_residual=float(mass),
        fingerprint=fingerprint,
    )
