"""Equilibria, Lyapunov quantities, the finite-time bound constants and bound evaluation.

Every constant is evaluated from its closed form; the only searches are the
root ``zeta_1`` of ``epsilon(alpha) = 1`` (bisection, ``epsilon`` is
increasing in alpha) and the integer horizons ``T1``, ``T2`` and ``T_bar``
(forward scans of their defining inequalities over the computed horizon).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "AnalysisError",
    "ConstantsNotAttainable",
    "LyapunovSolution",
    "Equilibrium",
    "BoundInputs",
    "BoundConstants",
    "ErrorSeries",
    "solve_lyapunov",
    "solve_equilibrium",
    "epsilon_of_alpha",
    "zeta1",
    "compute_zetas",
    "feasibility_limit",
    "max_feasible_alpha",
    "find_T1",
    "find_T2",
    "find_T_bar",
    "consensus_bound_constants",
    "push_bound_constants",
    "epsilon_bar_upper",
    "bound_rhs_fixed",
    "bound_rhs_timevarying",
    "bound_rhs_push",
    "mean_and_se",
    "error_series",
]

LYAPUNOV_TOL = 1e-10
LOG2 = math.log(2.0)


class AnalysisError(ValueError):
    pass


class ConstantsNotAttainable(AnalysisError):
    def __init__(self, constant: str, condition: str, horizon: int):
        self.constant = constant
        self.condition = condition
        super().__init__(f"{constant} not attainable on horizon {horizon}: condition '{condition}' still fails")


@dataclass
class LyapunovSolution:
    P: np.ndarray
    gamma_max: float
    gamma_min: float
    residual: float


@dataclass
class Equilibrium:
    theta_star: np.ndarray
    b_effective: np.ndarray
    weighting: str
    residual: float


def solve_lyapunov(A) -> LyapunovSolution:
    """Symmetric ``P`` with ``A^T P + P A = -I`` from the K(K+1)/2 upper-triangular unknowns."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    K = A.shape[0]
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise AnalysisError("Lyapunov equation needs a Hurwitz matrix")
    pairs = [(i, j) for i in range(K) for j in range(i, K)]
    pos = {p: n for n, p in enumerate(pairs)}

    def unknown(i, j):
        return pos[(i, j) if i <= j else (j, i)]

    M = np.zeros((len(pairs), len(pairs)))
    rhs = np.zeros(len(pairs))
    for row, (r, c) in enumerate(pairs):
        # (A^T P)[r, c] = sum_k A[k, r] P[k, c];  (P A)[r, c] = sum_k P[r, k] A[k, c]
        for k in range(K):
            M[row, unknown(k, c)] += A[k, r]
            M[row, unknown(r, k)] += A[k, c]
        rhs[row] = -1.0 if r == c else 0.0
    x = np.linalg.solve(M, rhs)
    P = np.zeros((K, K))
    for n, (i, j) in enumerate(pairs):
        P[i, j] = P[j, i] = x[n]
    residual = float(np.linalg.norm(A.T @ P + P @ A + np.eye(K)))
    if residual > LYAPUNOV_TOL:
        raise AnalysisError(f"Lyapunov residual {residual:.2e} above {LYAPUNOV_TOL:g}")
    eig = np.linalg.eigvalsh(P)
    if eig[0] <= 0:
        raise AnalysisError("Lyapunov solution is not positive definite")
    return LyapunovSolution(P, float(eig[-1]), float(eig[0]), residual)


def solve_equilibrium(A, b_list, weighting="uniform") -> Equilibrium:
    """Solve ``A theta + b = 0`` with ``b`` the weighted combination of the agents' ``b^i``.

    ``weighting`` is ``"uniform"`` or a stochastic weight vector (the limit of
    the absolute probability sequence).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b_list = np.atleast_2d(np.asarray(b_list, dtype=float))
    if isinstance(weighting, str):
        if weighting != "uniform":
            raise AnalysisError(f"unknown weighting {weighting!r}")
        w = np.full(b_list.shape[0], 1.0 / b_list.shape[0])
        label = "uniform"
    else:
        w = np.asarray(weighting, dtype=float)
        label = "pi_infinity"
    b = w @ b_list
    try:
        theta = np.linalg.solve(A, -b)
    except np.linalg.LinAlgError as exc:
        raise AnalysisError("singular mean matrix: equilibrium undefined") from exc
    residual = float(np.linalg.norm(A @ theta + b))
    return Equilibrium(theta, b, label, residual)


# ---------------------------------------------------------------------------
# closed-form constants


def epsilon_of_alpha(alpha, A_max, b_max, pi_min, beta, L, delta_max):
    """Contraction factor of the weighted consensus error over one window of length L."""
    r = 2.0 * b_max / A_max
    g = 1.0 + alpha * A_max
    return (1.0 + r - pi_min * beta ** (2 * L) / (2.0 * delta_max)) * g ** (2 * L) - r * g**L


def zeta1(A_max, b_max, pi_min, beta, L, delta_max, tol=1e-12) -> float:
    """The unique alpha > 0 with ``epsilon(alpha) = 1``, by bisection."""

    def f(a):
        return epsilon_of_alpha(a, A_max, b_max, pi_min, beta, L, delta_max) - 1.0

    if f(0.0) >= 0:
        raise AnalysisError("epsilon(0) >= 1: pi_min, beta or delta_max out of range")
    lo, hi = 0.0, 1.0 / A_max
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm < 0:
            lo = mid
        else:
            hi = mid
        if abs(fm) <= tol * 1e-3 or hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return hi if abs(f(hi)) <= abs(f(lo)) else lo


def compute_zetas(A_max, b_max, N, L, alpha, tau_alpha, theta_norm, pi_min=None, beta=None, delta_max=None,
                  mu_max=None, theta_norm_push=None) -> dict:
    """All nine zeta constants; entries whose inputs are absent are None.

    ``theta_norm`` is ``||theta*||`` of the consensus target; ``zeta8``/``zeta9``
    use ``theta_norm_push`` (uniform target) and ``mu_max``.
    """
    A, b, tau, th = A_max, b_max, tau_alpha, theta_norm
    g = 1.0 + alpha * A
    z = {}
    z["zeta1"] = zeta1(A, b, pi_min, beta, L, delta_max) if pi_min is not None else None
    z["zeta2"] = 4 * b**2 / A**2 * (g**L - 1) ** 2 + 2 * b * (g**L - 1) / A * g**L
    z["zeta3"] = (
        (144 + 4 * A**2 + 912 * tau * A**2 + 168 * tau * A * b) * th**2
        + tau * A**2 * (
            152 * (b / A + th) ** 2 + 48 * b / A * (b / A + 1) ** 2 + 87 * b**2 / A**2 + 12 * b / A
        )
        + 2 + 2 * b**2 + 4 * th**2 + 48 * b**2 / A**2
    )
    z["zeta4"] = math.sqrt(N) * b * (2 + 12 * b**2 / A**2 + 38 * th**2)
    z["zeta5"] = 144 + 916 * A**2 + 168 * A * b
    z["zeta6"] = 4 * b**2 * alpha * L**2 * g ** (2 * L - 2) + 2 * b * L * g ** (2 * L - 1)
    z["zeta7"] = (
        (148 + 916 * A**2 + 168 * A * b) * th**2 + 2 + 48 * b**2 / A**2 + 152 * (b + A * th) ** 2
        + 89 * b**2 + 12 * A * b + 48 * A * b * (b / A + 1) ** 2
    )
    if mu_max is None:
        z["zeta8"] = z["zeta9"] = None
    else:
        tp = th if theta_norm_push is None else theta_norm_push
        bm = b + mu_max
        z["zeta8"] = 144 + 916 * A**2 + 168 * A * b + 144 * A * mu_max
        z["zeta9"] = (
            2 + (4 + z["zeta8"]) * tp**2 + 48 * bm**2 / A**2 + 152 * (bm + A * tp) ** 2
            + 12 * A * b + 48 * A * bm * (bm / A + 1) ** 2 + 89 * bm**2
        )
    return z


def K2_of(A_max, b_max, tau_alpha):
    return 144 + 4 * A_max**2 + 912 * tau_alpha * A_max**2 + 168 * tau_alpha * A_max * b_max


def feasibility_limit(alpha, tau_alpha, A_max, b_max, gamma_max, zeta_1) -> float:
    """``min{K1, log2 / (A_max tau(alpha)), 0.1 / (K2 gamma_max)}``; feasible iff ``alpha`` is below it."""
    K1 = min(zeta_1, gamma_max / 0.9)
    mix = LOG2 / (A_max * tau_alpha) if tau_alpha > 0 else math.inf
    return min(K1, mix, 0.1 / (K2_of(A_max, b_max, tau_alpha) * gamma_max))


def max_feasible_alpha(tau_fn, A_max, b_max, gamma_max, zeta_1, grid=None) -> float:
    """Largest alpha on a log grid that satisfies the feasibility inequality."""
    grid = np.logspace(-8, 0, 801) if grid is None else np.asarray(grid)
    best = 0.0
    for a in grid:
        if a < feasibility_limit(a, int(tau_fn(a)), A_max, b_max, gamma_max, zeta_1):
            best = max(best, float(a))
    return best


def _last_failure(ok: np.ndarray) -> int:
    bad = np.flatnonzero(~ok)
    return int(bad[-1]) if bad.size else -1


def find_T1(eta, tau_alpha, K2, alpha, N, b_max, gamma_max) -> int:
    """Smallest positive T with ``t >= tau(alpha)`` and
    ``36 sqrt(N) b_max eta_{t+1} gamma_max + K2 alpha gamma_max <= 0.1`` for all checked ``t >= T``.

    ``eta`` must cover indices up to the last checked ``t + 1``.
    """
    eta = np.asarray(eta, dtype=float)
    cap = len(eta) - 2
    lhs = 36 * math.sqrt(N) * b_max * eta[1:] * gamma_max + K2 * alpha * gamma_max
    ok = lhs <= 0.1
    last = _last_failure(ok)
    if last >= cap:
        raise ConstantsNotAttainable("T1", "36 sqrt(N) b_max eta_{t+1} gamma_max + K2 alpha gamma_max <= 0.1", cap)
    return max(1, int(tau_alpha), last + 1)


def _tau_terms(tau_fn, alpha0, ts):
    alpha_t = alpha0 / (ts + 1.0)
    tau_t = np.asarray(tau_fn(alpha_t), dtype=np.int64)
    lagged = ts - tau_t
    valid = lagged >= 0
    alpha_lag = np.where(valid, alpha0 / (np.maximum(lagged, 0) + 1.0), np.inf)
    return alpha_t, tau_t, tau_t * alpha_lag, valid


def t2_conditions(ts, eta, tau_fn, alpha0, alpha, N, A_max, b_max, gamma_max, zeta5):
    """Boolean arrays of the four defining conditions of T2 at times ``ts``."""
    alpha_t, tau_t, prod, valid = _tau_terms(tau_fn, alpha0, ts)
    return {
        "alpha_t <= alpha": alpha_t <= alpha,
        "2 tau(alpha_t) <= t": 2 * tau_t <= ts,
        "tau(alpha_t) alpha_{t-tau} <= min{log2/A_max, 0.1/(zeta5 gamma_max)}": valid
        & (prod <= min(LOG2 / A_max, 0.1 / (zeta5 * gamma_max))),
        "zeta5 alpha_{t-tau} tau gamma_max + 36 sqrt(N) b_max eta_{t+1} gamma_max <= 0.1": valid
        & (zeta5 * prod * gamma_max + 36 * math.sqrt(N) * b_max * eta[ts + 1] * gamma_max <= 0.1),
    }


def find_T2(eta, tau_fn, alpha0, alpha, L, N, A_max, b_max, gamma_max, zeta5) -> int:
    """Smallest positive T2 with every condition holding for all checked ``t >= L T2``."""
    eta = np.asarray(eta, dtype=float)
    cap = len(eta) - 2
    ts = np.arange(cap + 1)
    conds = t2_conditions(ts, eta, tau_fn, alpha0, alpha, N, A_max, b_max, gamma_max, zeta5)
    ok = np.logical_and.reduce(list(conds.values()))
    last = _last_failure(ok)
    if last >= cap:
        failing = [name for name, c in conds.items() if not c[cap]]
        raise ConstantsNotAttainable("T2", failing[0], cap)
    return max(1, -(-(last + 1) // L))


def t_bar_conditions(ts, mu, tau_fn, alpha0, A_max, gamma_max, zeta8):
    alpha_t, tau_t, prod, valid = _tau_terms(tau_fn, alpha0, ts)
    return {
        "2 tau(alpha_t) <= t": 2 * tau_t <= ts,
        "mu_t + tau(alpha_t) alpha_{t-tau} zeta8 <= 0.1/gamma_max": valid
        & (mu[ts] + prod * zeta8 <= 0.1 / gamma_max),
        "tau(alpha_t) alpha_{t-tau} <= min{log2/A_max, 0.1/(zeta8 gamma_max)}": valid
        & (prod <= min(LOG2 / A_max, 0.1 / (zeta8 * gamma_max))),
    }


def find_T_bar(mu, tau_fn, alpha0, A_max, gamma_max, zeta8) -> int:
    mu = np.asarray(mu, dtype=float)
    cap = len(mu) - 1
    ts = np.arange(cap + 1)
    conds = t_bar_conditions(ts, mu, tau_fn, alpha0, A_max, gamma_max, zeta8)
    ok = np.logical_and.reduce(list(conds.values()))
    last = _last_failure(ok)
    if last >= cap:
        failing = [name for name, c in conds.items() if not c[cap]]
        raise ConstantsNotAttainable("T_bar", failing[0], cap)
    return max(1, last + 1)


def epsilon_bar_upper(N, L) -> float:
    """``(1 - N^{-NL})^{1/L}``, evaluated without cancellation."""
    x = math.exp(-N * L * math.log(N)) if N > 1 else 1.0
    return math.exp(math.log1p(-x) / L) if x < 1.0 else 0.0


def _one_minus_epsilon_bar(N, L) -> float:
    x = math.exp(-N * L * math.log(N)) if N > 1 else 1.0
    return -math.expm1(math.log1p(-x) / L) if x < 1.0 else 1.0


@dataclass
class BoundInputs:
    n_agents: int
    dim: int
    L: int
    A_max: float
    b_max: float
    gamma_max: float
    gamma_min: float
    C: float
    theta_star_norm: float = 0.0
    theta_star_norm_push: float | None = None
    pi_min: float | None = None
    beta: float | None = None
    delta_max: int | None = None
    alpha: float | None = None
    tau_alpha: int | None = None
    alpha0: float | None = None


@dataclass
class BoundConstants:
    inputs: BoundInputs
    epsilon: float | None = None
    zetas: dict = field(default_factory=dict)
    alpha_feasible_max: float | None = None
    alpha_feasible: bool | None = None
    K1: float | None = None
    K2: float | None = None
    C: dict = field(default_factory=dict)
    T1: int | None = None
    T2: int | None = None
    T_bar: int | None = None
    epsilon1: float | None = None
    epsilon_bar_upper: float | None = None
    mu_max: float | None = None
    C_theta: float | None = None
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["inputs"] = asdict(self.inputs)
        out["formulas"] = FORMULAS
        return _jsonable(out)


FORMULAS = {
    "epsilon": "(1 + 2b/A - pi_min beta^(2L)/(2 delta_max)) (1 + alpha A)^(2L) - (2b/A)(1 + alpha A)^L",
    "zeta1": "root of epsilon(alpha) = 1",
    "zeta2": "4b^2/A^2 [(1+alpha A)^L - 1]^2 + 2b [(1+alpha A)^L - 1]/A (1+alpha A)^L",
    "zeta3": "(144 + 4A^2 + 912 tau A^2 + 168 tau A b)|th|^2 + tau A^2 [152 (b/A + |th|)^2 + 48 b/A (b/A+1)^2"
    " + 87 b^2/A^2 + 12 b/A] + 2 + 2b^2 + 4|th|^2 + 48 b^2/A^2",
    "zeta4": "sqrt(N) b (2 + 12 b^2/A^2 + 38 |th|^2)",
    "zeta5": "144 + 916 A^2 + 168 A b",
    "zeta6": "4 b^2 alpha L^2 (1+alpha A)^(2L-2) + 2 b L (1+alpha A)^(2L-1)",
    "zeta7": "(148 + 916A^2 + 168Ab)|th|^2 + 2 + 48b^2/A^2 + 152(b + A|th|)^2 + 89b^2 + 12Ab + 48Ab(b/A+1)^2",
    "zeta8": "144 + 916A^2 + 168Ab + 144 A mu_max",
    "zeta9": "2 + (4+zeta8)|th|^2 + 48(b+mu)^2/A^2 + 152(b+mu+A|th|)^2 + 12Ab + 48A(b+mu)((b+mu)/A+1)^2"
    " + 89(b+mu)^2",
    "K1": "min{zeta1, gamma_max/0.9}",
    "K2": "144 + 4A^2 + 912 tau A^2 + 168 tau A b",
    "C1": "g (8 exp(2 alpha A T1) + 4) E|<th>_0 - th*|^2 + 8 g exp(2 alpha A T1)(|th*| + b/A)^2, g=gamma_max/gamma_min",
    "C2": "2 zeta2/(1-epsilon) + g 2 alpha zeta3 gamma_max/0.9",
    "C3": "2 zeta6/(1-epsilon)",
    "C4": "2 zeta7 alpha0 C g",
    "C5": "2 alpha0 zeta4 g",
    "C6": "2 L T2 g E|<th>_{L T2} - th*|^2",
    "C7": "16/epsilon1 E|sum_i th~_0^i + alpha0 A(X_0) th~_0^i + alpha0 b^i(X_0)|",
    "C8": "16/epsilon1 (A C_theta + b)/(1 - epsilon_bar)",
    "C9": "2 A C_theta + 2 b",
    "C10": "2 N zeta9 alpha0 C g",
    "C11": "2 alpha0 N g",
    "C12": "2 T_bar N g E|<th~>_{T_bar} - th*|^2",
    "mu_max": "(N+1) A C_theta",
    "epsilon_bar_upper": "(1 - N^(-N L))^(1/L)",
}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    return x


def consensus_bound_constants(inp: BoundInputs, eta, tau_fn, avg_sq_err=None, fixed: bool = True,
                       harmonic: bool = False) -> BoundConstants:
    """Consensus-SA constants for the fixed-step and/or harmonic-step bounds.

    ``eta`` covers ``t = 0..cap+1``; ``tau_fn`` maps step sizes to mixing
    times.  ``avg_sq_err`` (per-step mean of ``||<theta>_t - theta*||^2``)
    completes ``C1``/``C6`` when supplied.
    """
    A, b, g = inp.A_max, inp.b_max, inp.gamma_max / inp.gamma_min
    alpha, tau = inp.alpha, inp.tau_alpha
    out = BoundConstants(inputs=inp)
    out.epsilon = epsilon_of_alpha(alpha, A, b, inp.pi_min, inp.beta, inp.L, inp.delta_max)
    out.zetas = compute_zetas(A, b, inp.n_agents, inp.L, alpha, tau, inp.theta_star_norm, inp.pi_min, inp.beta,
                              inp.delta_max)
    z = out.zetas
    out.K1 = min(z["zeta1"], inp.gamma_max / 0.9)
    out.K2 = K2_of(A, b, tau)
    out.alpha_feasible_max = feasibility_limit(alpha, tau, A, b, inp.gamma_max, z["zeta1"])
    out.alpha_feasible = bool(0 < alpha < out.alpha_feasible_max)
    one_minus = 1.0 - out.epsilon
    out.C["C2"] = 2 * z["zeta2"] / one_minus + g * 2 * alpha * z["zeta3"] * inp.gamma_max / 0.9
    out.C["C3"] = 2 * z["zeta6"] / one_minus
    if fixed:
        out.T1 = find_T1(eta, tau, out.K2, alpha, inp.n_agents, b, inp.gamma_max)
        if avg_sq_err is not None:
            growth = math.exp(2 * alpha * A * out.T1)
            out.C["C1"] = g * (8 * growth + 4) * avg_sq_err[0] + 8 * g * growth * (inp.theta_star_norm + b / A) ** 2
    if harmonic:
        a0 = inp.alpha0
        out.C["C4"] = 2 * z["zeta7"] * a0 * inp.C * g
        out.C["C5"] = 2 * a0 * z["zeta4"] * g
        out.T2 = find_T2(eta, tau_fn, a0, alpha, inp.L, inp.n_agents, A, b, inp.gamma_max, z["zeta5"])
        if avg_sq_err is not None and inp.L * out.T2 < len(avg_sq_err):
            out.C["C6"] = 2 * inp.L * out.T2 * g * avg_sq_err[inp.L * out.T2]
    return out


def push_bound_constants(inp: BoundInputs, tau_fn, epsilon1: float, C_theta: float, mu_mean,
                       init_norm_mean: float | None = None, avg_tilde_sq_err=None) -> BoundConstants:
    """Push-SA constants.  ``C_theta`` is an empirical almost-sure state bound.

    ``mu_mean`` is the per-step ensemble mean of ``mu_t``; ``init_norm_mean``
    the mean of ``||sum_i th~_0^i + a0 A(X_0) th~_0^i + a0 b^i(X_0)||``.
    """
    A, b, g, N, a0 = inp.A_max, inp.b_max, inp.gamma_max / inp.gamma_min, inp.n_agents, inp.alpha0
    out = BoundConstants(inputs=inp)
    out.epsilon1 = epsilon1
    out.C_theta = C_theta
    out.mu_max = (N + 1) * A * C_theta
    out.epsilon_bar_upper = epsilon_bar_upper(N, inp.L)
    tp = inp.theta_star_norm if inp.theta_star_norm_push is None else inp.theta_star_norm_push
    z = compute_zetas(A, b, N, inp.L, 0.0, 0, tp, mu_max=out.mu_max, theta_norm_push=tp)
    out.zetas = {"zeta8": z["zeta8"], "zeta9": z["zeta9"]}
    if init_norm_mean is not None:
        out.C["C7"] = 16.0 / epsilon1 * init_norm_mean
    out.C["C8"] = 16.0 / epsilon1 * (A * C_theta + b) / _one_minus_epsilon_bar(N, inp.L)
    out.C["C9"] = 2 * A * C_theta + 2 * b
    out.C["C10"] = 2 * N * z["zeta9"] * a0 * inp.C * g
    out.C["C11"] = 2 * a0 * N * g
    out.T_bar = find_T_bar(mu_mean, tau_fn, a0, A, inp.gamma_max, z["zeta8"])
    if avg_tilde_sq_err is not None and out.T_bar < len(avg_tilde_sq_err):
        out.C["C12"] = 2 * out.T_bar * N * g * avg_tilde_sq_err[out.T_bar]
    return out


# ---------------------------------------------------------------------------
# bound right-hand sides


def _as_times(t):
    t = np.asarray(t, dtype=np.int64)
    return t, t.ndim == 0


def bound_rhs_fixed(t, consts: BoundConstants, eta, consensus_err):
    """Fixed-step bound on ``sum_i pi_t^i E||theta_t^i - theta*||^2`` for ``t >= T1``.

    ``consensus_err[m]`` is ``sum_i pi_m^i E||theta_m^i - <theta>_m||^2`` for
    ``m = 0..L-1``; ``eta`` must reach index ``max(t) + 1``.
    """
    t, scalar = _as_times(t)
    inp, T1 = consts.inputs, consts.T1
    if np.any(t < T1):
        raise AnalysisError(f"fixed-step bound needs t >= T1 = {T1}")
    alpha, L = inp.alpha, inp.L
    rho = 1.0 - 0.9 * alpha / inp.gamma_max
    g = inp.gamma_max / inp.gamma_min
    eta = np.asarray(eta, dtype=float)
    tmax = int(t.max())
    # S(t) = sum_{k=0}^{t-T1} eta_{t+1-k} rho^k = eta_{t+1} + rho S(t-1)
    conv = np.empty(tmax - T1 + 1)
    acc = 0.0
    for s in range(T1, tmax + 1):
        acc = eta[s + 1] + rho * acc
        conv[s - T1] = acc
    q, m = np.divmod(t, L)
    ce = np.asarray(consensus_err, dtype=float)[m]
    rhs = (
        2 * consts.epsilon ** q * ce
        + consts.C["C1"] * rho ** (t - T1)
        + consts.C["C2"]
        + g * 2 * alpha * consts.zetas["zeta4"] * conv[t - T1]
    )
    return float(rhs) if scalar else rhs


def bound_rhs_timevarying(t, consts: BoundConstants, eta, anchor_err):
    """Harmonic-step bound for ``t >= L T2``.

    ``anchor_err[m]`` is the weighted consensus error at time ``L T2 + m``.
    """
    t, scalar = _as_times(t)
    inp, T2, L = consts.inputs, consts.T2, consts.inputs.L
    a0 = inp.alpha0
    if a0 is None or a0 < inp.gamma_max / 0.9:
        raise AnalysisError("harmonic bound needs alpha0 >= gamma_max/0.9")
    if np.any(t < L * T2):
        raise AnalysisError(f"harmonic bound needs t >= L T2 = {L * T2}")
    eta = np.asarray(eta, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(eta)])
    eta_sum = csum[t + 1] - csum[L * T2]
    q, m = np.divmod(t, L)
    eps = consts.epsilon
    half = (q - 1) / 2.0
    idx = np.ceil(half).astype(np.int64) * L
    C = consts.C
    rhs = (
        2 * eps ** (q - T2) * np.asarray(anchor_err, dtype=float)[m]
        + C["C3"] * (a0 * eps**half + a0 / (idx + 1.0))
        + (C["C4"] * np.log(t / a0) ** 2 + C["C5"] * eta_sum + C["C6"]) / t
    )
    return float(rhs) if scalar else rhs


def bound_rhs_push(t, consts: BoundConstants, mu):
    """Push-SA bound on ``sum_i E||theta_{t+1}^i - theta*||^2`` for ``t >= T_bar``.

    Evaluated at the upper bound of ``epsilon_bar``; the right-hand side is
    increasing in it, so the bound stays valid.
    """
    t, scalar = _as_times(t)
    inp, Tb = consts.inputs, consts.T_bar
    if np.any(t < Tb):
        raise AnalysisError(f"push bound needs t >= T_bar = {Tb}")
    a0 = inp.alpha0
    eb = consts.epsilon_bar_upper
    mu = np.asarray(mu, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(mu)])
    mu_sum = csum[t + 1] - csum[Tb]
    C = consts.C
    rhs = (
        C["C7"] * eb**t
        + C["C8"] * (a0 * eb ** (t / 2.0) + a0 / (np.ceil(t / 2.0) + 1.0))
        + C["C9"] * a0 / (t + 1.0)
        + (C["C10"] * np.log(t / a0) ** 2 + C["C11"] * mu_sum + C["C12"]) / t
    )
    return float(rhs) if scalar else rhs


# ---------------------------------------------------------------------------
# empirical error series


def mean_and_se(values, axis=0):
    """Monte-Carlo mean and standard error (zero for a single trial)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    se = values.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


@dataclass
class ErrorSeries:
    times: np.ndarray
    trials: int
    mse_mean: np.ndarray
    mse_se: np.ndarray
    consensus_mean: np.ndarray
    consensus_se: np.ndarray
    weighted: bool
    mu_mean: np.ndarray | None = None
    mu_se: np.ndarray | None = None
    eta: np.ndarray | None = None


def error_series(snapshots, theta_star, weights=None, mu=None, eta=None, times=None) -> ErrorSeries:
    """Per-time ensemble statistics from state snapshots of shape ``(trials, R, N, K)``.

    With ``weights`` (shape ``(R, N)``) the squared error is the weighted sum
    ``sum_i w_i ||theta^i - theta*||^2`` and the consensus error is measured
    around the weighted average; without, the plain sum over agents is used and
    the consensus error is measured around the uniform average with weights
    ``1/N``.
    """
    X = np.asarray(snapshots, dtype=float)
    if X.ndim == 3:
        X = X[None]
    trials, R, N, K = X.shape
    star = np.asarray(theta_star, dtype=float).reshape(K)
    sq = np.sum((X - star) ** 2, axis=3)
    if weights is None:
        mse = sq.sum(axis=2)
        w = np.full((R, N), 1.0 / N)
    else:
        w = np.asarray(weights, dtype=float).reshape(R, N)
        mse = np.einsum("rn,arn->ar", w, sq)
    avg = np.einsum("rn,arnk->ark", w, X)
    ce = np.einsum("rn,arn->ar", w, np.sum((X - avg[:, :, None, :]) ** 2, axis=3))
    m_mean, m_se = mean_and_se(mse)
    c_mean, c_se = mean_and_se(ce)
    mu_mean = mu_se = None
    if mu is not None:
        mu_mean, mu_se = mean_and_se(np.asarray(mu, dtype=float).reshape(trials, -1))
    return ErrorSeries(
        times=np.arange(R) if times is None else np.asarray(times),
        trials=trials,
        mse_mean=m_mean,
        mse_se=m_se,
        consensus_mean=c_mean,
        consensus_se=c_se,
        weighted=weights is not None,
        mu_mean=mu_mean,
        mu_se=mu_se,
        eta=None if eta is None else np.asarray(eta),
    )
