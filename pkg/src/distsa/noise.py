"""Finite-state Markov noise: state maps A(x), b^i(x), their limits and mixing times.

Expectations are exact: ``E[A(X_t) | X_0 = x] = sum_y (P^t)[x, y] A(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

__all__ = [
    "NoiseError",
    "MarkovChain",
    "NoiseModel",
    "MixingProfile",
    "stationary_distribution",
    "sample_path",
    "mixing_time",
    "geometric_rate_constant",
    "spectral_norm",
    "iid_chain",
    "lazy_two_state_chain",
    "chain_with_lambda2",
    "random_hurwitz_maps",
    "TDInstance",
    "td_instance",
]

HURWITZ_MARGIN = 1e-9


class NoiseError(ValueError):
    """Invalid chain or noise maps.  ``assumption`` names the violated condition."""

    def __init__(self, message, assumption=None):
        super().__init__(message)
        self.assumption = assumption


def spectral_norm(M) -> float:
    """Largest singular value (``||M||_2``) of a matrix or vector."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return float(np.linalg.norm(M))
    return float(np.linalg.norm(M, 2))


def _is_primitive(P: np.ndarray) -> bool:
    n = P.shape[0]
    pattern = (P > 0).astype(np.int64)
    power = pattern.copy()
    # Wielandt: a primitive n x n pattern has a positive power at (n-1)^2 + 1
    for _ in range((n - 1) ** 2 + 1):
        if np.all(power > 0):
            return True
        power = np.minimum(power @ pattern, 1)
    return bool(np.all(power > 0))


@dataclass(frozen=True, eq=False)
class MarkovChain:
    transition: np.ndarray
    initial: object = None  # None -> stationary start, int -> fixed state, array -> distribution

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise NoiseError("transition matrix must be square", "chain")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise NoiseError("transition rows must be nonnegative and sum to 1", "chain")
        if not _is_primitive(P):
            raise NoiseError("chain must be irreducible and aperiodic", "chain-ergodic")
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)
        if self.initial is not None and not isinstance(self.initial, (int, np.integer)):
            init = np.array(self.initial, dtype=float)
            if init.shape != (P.shape[0],) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
                raise NoiseError("initial distribution must be stochastic", "chain")
            object.__setattr__(self, "initial", init)
        elif self.initial is not None and not 0 <= int(self.initial) < P.shape[0]:
            raise NoiseError(f"initial state {self.initial} out of range", "chain")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def initial_distribution(self) -> np.ndarray:
        if self.initial is None:
            return stationary_distribution(self)
        if isinstance(self.initial, (int, np.integer)):
            return np.eye(self.n_states)[int(self.initial)]
        return np.asarray(self.initial)


def stationary_distribution(chain: MarkovChain) -> np.ndarray:
    P = chain.transition
    n = P.shape[0]
    M = P.T - np.eye(n)
    M[-1] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        mu = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise NoiseError("reducible chain: stationary distribution is not unique", "chain-ergodic") from exc
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = np.max(np.abs(mu @ P - mu))
    if residual > 1e-12:
        raise NoiseError(f"stationary solve residual {residual:.2e}", "chain-ergodic")
    return mu


@dataclass(eq=False)
class NoiseModel:
    """Markov chain plus per-state maps ``A(x)`` (K x K) and ``b^i(x)`` (N x K per state)."""

    chain: MarkovChain
    A_states: np.ndarray
    b_states: np.ndarray
    strict: bool = True
    mu: np.ndarray = field(init=False)
    A_limit: np.ndarray = field(init=False)
    b_limits: np.ndarray = field(init=False)
    A_max: float = field(init=False)
    b_max: float = field(init=False)

    def __post_init__(self):
        self.A_states = np.ascontiguousarray(self.A_states, dtype=float)
        self.b_states = np.ascontiguousarray(self.b_states, dtype=float)
        S = self.chain.n_states
        if self.A_states.ndim != 3 or self.A_states.shape[0] != S or self.A_states.shape[1] != self.A_states.shape[2]:
            raise NoiseError(f"A_states must have shape ({S}, K, K)", "noise-maps")
        K = self.A_states.shape[1]
        if self.b_states.ndim != 3 or self.b_states.shape[0] != S or self.b_states.shape[2] != K:
            raise NoiseError(f"b_states must have shape ({S}, N, {K})", "noise-maps")
        self.mu = stationary_distribution(self.chain)
        self.A_limit = np.einsum("x,xkl->kl", self.mu, self.A_states)
        self.b_limits = np.einsum("x,xik->ik", self.mu, self.b_states)
        self.A_max = max(spectral_norm(A) for A in self.A_states)
        self.b_max = float(np.linalg.norm(self.b_states, axis=2).max())
        if self.strict:
            problems = self.violations()
            if problems:
                name, msg = problems[0]
                raise NoiseError(msg, name)

    @property
    def n_agents(self) -> int:
        return self.b_states.shape[1]

    @property
    def dim(self) -> int:
        return self.A_states.shape[1]

    def hurwitz_margin(self) -> float:
        return float(np.max(np.linalg.eigvals(self.A_limit).real))

    def violations(self) -> list:
        out = []
        lam = self.hurwitz_margin()
        if lam >= -HURWITZ_MARGIN:
            out.append(("hurwitz-mean", f"mean matrix A is not Hurwitz: max Re(eig) = {lam:.3e}"))
        return out

    def path_cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.chain.transition, axis=1)
        cdf[:, -1] = 1.0
        return cdf


def sample_path(model, T: int, seed=None, rng=None) -> np.ndarray:
    """States ``X_0..X_T``; deterministic in ``seed`` (or in the supplied generator's state)."""
    chain = model.chain if isinstance(model, NoiseModel) else model
    rng = np.random.default_rng(seed) if rng is None else rng
    if isinstance(chain.initial, (int, np.integer)):
        x0 = int(chain.initial)
    else:
        x0 = int(rng.choice(chain.n_states, p=chain.initial_distribution()))
    u = rng.random(T)
    cdf = np.cumsum(chain.transition, axis=1)
    cdf[:, -1] = 1.0
    return _kernels.sample_path(cdf, np.int64(x0), u)


class MixingProfile:
    """Exact deviation curve ``dev(t)`` and a monotone envelope for the tail.

    ``dev(t) = max_x max(||E[A(X_t)|x] - A||_2, max_i ||E[b^i(X_t)|x] - b^i||_2)``.
    The envelope ``max_x ||P^t(x, .) - mu||_1 * max_y ||M(y) - M||`` is
    non-increasing and bounds ``dev(s)`` for every ``s >= t``; enumeration
    stops once it drops below the smallest alpha of interest, which makes
    ``tau(alpha)`` exact rather than a settle-window heuristic.
    """

    def __init__(self, model: NoiseModel, alpha_floor: float = 1e-12, max_horizon: int = 100_000):
        self.model = model
        self.max_horizon = max_horizon
        self._build(alpha_floor)

    def _build(self, alpha_floor):
        m = self.model
        P = m.chain.transition
        A_dev = m.A_states - m.A_limit
        b_dev = m.b_states - m.b_limits
        scale = max(max(spectral_norm(D) for D in A_dev), float(np.linalg.norm(b_dev, axis=2).max()))
        Pt = np.eye(P.shape[0])
        devs, envs = [], []
        t = 0
        while True:
            EA = np.einsum("xy,ykl->xkl", Pt, A_dev)
            Eb = np.einsum("xy,yik->xik", Pt, b_dev)
            dA = np.linalg.norm(EA, ord=2, axis=(1, 2)).max()
            db = np.linalg.norm(Eb, axis=2).max()
            devs.append(max(dA, db))
            envs.append(np.abs(Pt - m.mu).sum(axis=1).max() * scale)
            if envs[-1] <= alpha_floor:
                break
            t += 1
            if t > self.max_horizon:
                raise NoiseError(
                    f"mixing envelope still {envs[-1]:.3e} > {alpha_floor:.3e} after {self.max_horizon} steps",
                    "mixing",
                )
            Pt = Pt @ P
        self.alpha_floor = alpha_floor
        self.dev = np.array(devs)
        self.envelope = np.array(envs)
        self.suffix_max = np.maximum.accumulate(self.dev[::-1])[::-1]

    def tau(self, alpha):
        """Smallest t with ``dev(s) <= alpha`` for all ``s >= t`` (vectorised over alpha)."""
        alpha = np.asarray(alpha, dtype=float)
        if np.any(alpha <= 0):
            raise NoiseError("alpha must be positive", "mixing")
        low = float(alpha.min())
        if low < self.alpha_floor:
            self._build(low)
        out = np.searchsorted(-self.suffix_max, -alpha, side="left")
        return int(out) if out.ndim == 0 else out.astype(np.int64)


def mixing_time(model: NoiseModel, alpha: float, max_horizon: int = 100_000) -> int:
    return MixingProfile(model, alpha_floor=alpha, max_horizon=max_horizon).tau(alpha)


def geometric_rate_constant(model: NoiseModel, alpha_grid, profile: MixingProfile | None = None) -> float:
    """Smallest C with ``tau(alpha) <= -C log(alpha)`` on the grid."""
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if np.any((alpha_grid <= 0) | (alpha_grid >= 1)):
        raise NoiseError("alpha grid must lie in (0, 1)", "mixing")
    profile = profile or MixingProfile(model, alpha_floor=float(alpha_grid.min()))
    taus = profile.tau(alpha_grid)
    return float(np.max(taus / -np.log(alpha_grid)))


# ---------------------------------------------------------------------------
# presets


def iid_chain(n_states: int, seed: int = 0) -> MarkovChain:
    """Identical rows: X_t are i.i.d. draws from a random positive distribution."""
    p = np.random.default_rng(seed).dirichlet(np.full(n_states, 2.0))
    return MarkovChain(np.tile(p, (n_states, 1)))


def lazy_two_state_chain(p: float) -> MarkovChain:
    return MarkovChain(np.array([[1 - p, p], [p, 1 - p]]))


def chain_with_lambda2(n_states: int, lam: float, seed: int = 0, stationary=None) -> MarkovChain:
    """``P = lam I + (1 - lam) 1 mu^T``: eigenvalues 1 and lam, stationary law mu."""
    if not 0 <= lam < 1:
        raise NoiseError("lambda_2 must lie in [0, 1)", "chain")
    mu = np.random.default_rng(seed).dirichlet(np.full(n_states, 2.0)) if stationary is None else np.asarray(stationary)
    return MarkovChain(lam * np.eye(n_states) + (1 - lam) * np.outer(np.ones(n_states), mu))


def random_hurwitz_maps(n_states: int, n_agents: int, dim: int, seed: int = 0, decay: float = 1.0,
                        spread: float = 0.2, b_scale: float = 1.0, max_tries: int = 100):
    """Per-state ``A(x) = -decay I + skew + noise_x`` and ``b^i(x) = c^i + e^i_x``.

    Draws are repeated until every state's symmetric part is negative
    definite, which makes the stationary mean Hurwitz for any chain.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        skew = rng.normal(scale=spread, size=(dim, dim))
        skew = skew - skew.T
        A = -decay * np.eye(dim) + skew + rng.normal(scale=spread, size=(n_states, dim, dim))
        centers = rng.uniform(-b_scale, b_scale, size=(n_agents, dim))
        b = centers[None] + rng.normal(scale=0.3 * b_scale, size=(n_states, n_agents, dim))
        sym = 0.5 * (A + np.transpose(A, (0, 2, 1)))
        if np.all(np.linalg.eigvalsh(sym).max(axis=1) < 0):
            return A, b
    raise NoiseError("could not draw Hurwitz state maps", "hurwitz-mean")


@dataclass(eq=False)
class TDInstance:
    """Linear TD(0) with per-agent rewards as a noise model on state pairs.

    The noise chain runs on pairs ``x = (s, s')`` of consecutive states of the
    underlying chain; ``A(x) = phi(s) (gamma phi(s') - phi(s))^T`` and
    ``b^i(x) = r^i(s) phi(s)``.
    """

    model: NoiseModel
    transition: np.ndarray
    features: np.ndarray
    rewards: np.ndarray
    gamma: float

    def fixed_point(self, weights=None) -> np.ndarray:
        """TD fixed point of the reward averaged with ``weights`` (uniform by default)."""
        n = self.rewards.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        r = w @ self.rewards
        d = stationary_distribution(MarkovChain(self.transition))
        phi, P = self.features, self.transition
        A = phi.T @ np.diag(d) @ (self.gamma * P - np.eye(len(d))) @ phi
        return np.linalg.solve(A, -(phi.T @ (d * r)))


def td_instance(seed: int = 0, n_states: int = 3, dim: int = 2, n_agents: int = 2, gamma: float = 0.9,
                rewards=None, max_tries: int = 100) -> TDInstance:
    """Sample a strictly positive chain and features until the mean TD matrix is Hurwitz."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        P = rng.dirichlet(np.full(n_states, 2.0), size=n_states)
        phi = rng.normal(size=(n_states, dim)) / math.sqrt(dim)
        r = rng.uniform(0.0, 1.0, size=(n_agents, n_states)) if rewards is None else np.asarray(rewards, float)
        if r.shape != (n_agents, n_states):
            raise NoiseError(f"rewards must have shape ({n_agents}, {n_states})", "noise-maps")
        S = n_states
        pairs = [(s, u) for s in range(S) for u in range(S)]
        Q = np.zeros((S * S, S * S))
        for a, (s, u) in enumerate(pairs):
            for v in range(S):
                Q[a, u * S + v] = P[u, v]
        A = np.stack([np.outer(phi[s], gamma * phi[u] - phi[s]) for s, u in pairs])
        b = np.stack([r[:, s][:, None] * phi[s][None, :] for s, _ in pairs])
        model = NoiseModel(MarkovChain(Q), A, b, strict=False)
        if not model.violations():
            return TDInstance(model, P, phi, r, gamma)
    raise NoiseError("could not draw a TD instance with Hurwitz mean", "hurwitz-mean")
