"""Instance analysis, Monte-Carlo ensembles, bound pipelines and the verification suite."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as An
from . import engines as E
from . import graphs as G
from . import noise as Nz
from . import weights as Wt
from .config import ConfigError, Experiment

__all__ = [
    "ALPHA_GRID",
    "InstanceAnalysis",
    "EnsembleResult",
    "BoundReport",
    "analyze",
    "run_ensemble",
    "prepare_bounds",
    "evaluate_bounds",
    "consensus_replay_residual",
    "push_replay_residual",
    "verify_suite",
    "analysis_horizon",
    "run_experiment",
    "build_report",
    "write_outputs",
    "render_report",
]

ALPHA_GRID = np.logspace(-1, -6, 11)
DECAY_TIMES = (10**4, 10**6)
METRIC_NAMES = {
    E.CONSENSUS: ("weighted_mse", "consensus_error", "average_error"),
    E.KUSHNER: ("weighted_mse", "consensus_error", "average_error"),
    E.PUSH: ("mse", "mu", "tilde_average_error", "consensus_error", "state_norm"),
}


@dataclass
class InstanceAnalysis:
    horizon: int
    lyapunov: An.LyapunovSolution
    profile: Nz.MixingProfile
    C: float
    theta_star: np.ndarray | None
    weighting: str
    equilibrium_residual: float = float("nan")
    aps: Wt.AbsoluteProbabilitySequence | None = None
    eta: np.ndarray | None = None
    epsilon1: float | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def pi(self):
        return None if self.aps is None else self.aps.vectors

    @property
    def pi_min(self):
        return None if self.aps is None else self.aps.pi_min

    def tau(self, alpha):
        return self.profile.tau(alpha)


def _left_perron(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eig(W.T)
    v = np.abs(np.real(vecs[:, np.argmin(np.abs(vals - 1.0))]))
    return v / v.sum()


def _aps(weights, horizon: int, burn_in: int = 256, attempts: int = 8) -> Wt.AbsoluteProbabilitySequence:
    """APS with the burn-in doubled (or extrapolated) until the terminal sensitivity certifies."""
    for _ in range(attempts):
        compiled = weights.compile(0, horizon + burn_in)
        bank, idx = compiled
        # start from the left Perron vector of the last matrix: exact for eventually constant schedules
        terminal = _left_perron(bank[idx[-1]])
        try:
            return Wt.absolute_probability_sequence(weights, horizon, burn_in, terminal, compiled=compiled)
        except Wt.BurnInError as exc:
            burn_in = exc.suggested
    raise Wt.BurnInError(float("nan"), burn_in, 2 * burn_in)


def analyze(exp: Experiment, horizon: int | None = None) -> InstanceAnalysis:
    """Limits, Lyapunov quantities, mixing profile and (row engines) the APS up to ``horizon + 1``."""
    T = exp.horizon if horizon is None else horizon
    noise = exp.noise
    lyap = An.solve_lyapunov(noise.A_limit)
    profile = Nz.MixingProfile(noise, alpha_floor=float(ALPHA_GRID.min()))
    C = Nz.geometric_rate_constant(noise, ALPHA_GRID, profile)
    out = InstanceAnalysis(horizon=T, lyapunov=lyap, profile=profile, C=C, theta_star=None, weighting="uniform")
    if exp.weights.orientation == Wt.ROW:
        aps = _aps(exp.weights, T + 1)
        out.aps = aps
        if aps.limit_detected:
            out.eta = Wt.eta_series(aps)
            eq = An.solve_equilibrium(noise.A_limit, noise.b_limits, aps.pi_infinity)
            out.theta_star, out.weighting, out.equilibrium_residual = eq.theta_star, "pi_infinity", eq.residual
        else:
            out.diagnostics.append(("pi-limit", "absolute probability sequence has no detectable limit: "
                                    "equilibrium and bounds refused"))
    else:
        out.epsilon1 = Wt.epsilon1(exp.weights, max(T, 1), exp.L)
        eq = An.solve_equilibrium(noise.A_limit, noise.b_limits, "uniform")
        out.theta_star, out.equilibrium_residual = eq.theta_star, eq.residual
    return out


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleResult:
    engine: str
    horizon: int
    times: np.ndarray
    seeds: list
    metric_names: tuple
    metric_mean: np.ndarray
    metric_se: np.ndarray
    metric_max: np.ndarray
    theta: np.ndarray
    theta0: np.ndarray
    x0: np.ndarray
    theta_tilde: np.ndarray | None = None
    y: np.ndarray | None = None
    mass_residual: float = 0.0
    has_target: bool = True
    wall_clock: float = 0.0

    @property
    def trials(self) -> int:
        return len(self.seeds)

    def column(self, name: str):
        k = self.metric_names.index(name)
        return self.metric_mean[:, k], self.metric_se[:, k]


def run_ensemble(exp: Experiment, an: InstanceAnalysis, trials: int | None = None, workers: int = 1,
                 horizon: int | None = None, record_times=None, seeds=None) -> EnsembleResult:
    """Run trials with per-trial seeds and fold per-step metrics in trial order (Welford)."""
    T = exp.horizon if horizon is None else horizon
    seeds = list(exp.seeds() if seeds is None else seeds)
    if trials is not None:
        seeds = seeds[:trials]
    times = E.default_record_times(T, exp.stride) if record_times is None else np.asarray(record_times, np.int64)
    compiled = exp.weights.compile(0, max(T, 1))
    pi = None
    if exp.engine != E.PUSH:
        pi = an.pi[: T + 1] if an.pi is not None else np.full((T + 1, exp.n_agents), 1.0 / exp.n_agents)
    star = an.theta_star if an.theta_star is not None else np.zeros(exp.dim)

    def one(seed):
        return E.run(exp.engine, exp.weights, exp.noise, exp.steps, T, seed, record_times=times, theta_star=star,
                     pi=pi, compiled=compiled, keep_path=False, fingerprint=exp.fingerprint,
                     initial_scale=exp.initial_scale)

    start = time.perf_counter()
    mean = m2 = mx = None
    snaps, tildes, ys, theta0, x0 = [], [], [], [], []
    mass = 0.0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        results = pool.map(one, seeds) if pool else map(one, seeds)
        for n, tr in enumerate(results, start=1):
            x = tr.metrics
            if mean is None:
                mean = np.zeros_like(x)
                m2 = np.zeros_like(x)
                mx = np.full(x.shape[1], -np.inf)
            d = x - mean
            mean += d / n
            m2 += d * (x - mean)
            mx = np.maximum(mx, x.max(axis=0))
            snaps.append(tr.theta)
            theta0.append(tr.theta0)
            x0.append(tr.x0)
            if tr.theta_tilde is not None:
                tildes.append(tr.theta_tilde)
                ys.append(tr.y)
            mass = max(mass, tr.mass_residual)
    finally:
        if pool:
            pool.shutdown()
    n = len(seeds)
    se = np.sqrt(m2 / (n - 1) / n) if n > 1 else np.zeros_like(mean)
    return EnsembleResult(
        engine=exp.engine,
        horizon=T,
        times=times,
        seeds=seeds,
        metric_names=METRIC_NAMES[exp.engine],
        metric_mean=mean,
        metric_se=se,
        metric_max=mx,
        theta=np.stack(snaps),
        theta0=np.stack(theta0),
        x0=np.asarray(x0),
        theta_tilde=np.stack(tildes) if tildes else None,
        y=np.stack(ys) if ys else None,
        mass_residual=mass,
        has_target=an.theta_star is not None,
        wall_clock=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# bounds


class BoundsRefused(RuntimeError):
    def __init__(self, assumption: str, message: str):
        self.assumption = assumption
        super().__init__(f"[{assumption}] {message}")


@dataclass
class BoundReport:
    kind: str
    constants: An.BoundConstants
    anchor: int
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    rhs: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> np.ndarray:
        return self.mean + 2 * self.se <= self.rhs

    @property
    def verdict(self) -> float:
        return float(self.ok.mean()) if len(self.ok) else float("nan")


def bound_kind(exp: Experiment) -> str | None:
    if exp.engine == E.KUSHNER:
        return None
    if exp.engine == E.PUSH:
        return "push"
    return "fixed" if exp.steps.kind == "fixed" else "harmonic"


def _inputs(exp: Experiment, an: InstanceAnalysis) -> An.BoundInputs:
    noise = exp.noise
    return An.BoundInputs(
        n_agents=exp.n_agents,
        dim=exp.dim,
        L=exp.L,
        A_max=noise.A_max,
        b_max=noise.b_max,
        gamma_max=an.lyapunov.gamma_max,
        gamma_min=an.lyapunov.gamma_min,
        C=an.C,
        theta_star_norm=float(np.linalg.norm(an.theta_star)),
        pi_min=an.pi_min,
        beta=exp.beta,
        delta_max=exp.delta_max,
    )


def prepare_bounds(exp: Experiment, an: InstanceAnalysis) -> An.BoundConstants | None:
    """Structural constants checked before running; raises ``ConfigError`` on infeasible step sizes."""
    kind = bound_kind(exp)
    if kind is None:
        return None
    if an.theta_star is None:
        raise BoundsRefused("pi-limit", "no detectable limit of the absolute probability sequence")
    inp = _inputs(exp, an)
    g = inp.gamma_max
    if kind == "fixed":
        inp.alpha = exp.steps.value
        inp.tau_alpha = int(an.tau(inp.alpha))
        consts = An.consensus_bound_constants(inp, an.eta, an.tau, fixed=False)
        if not consts.alpha_feasible:
            raise ConfigError([("step-size-feasibility",
                                f"alpha={inp.alpha:.6g} must lie below min{{K1, log2/(A_max tau(alpha)), "
                                f"0.1/(K2 gamma_max)}} = {consts.alpha_feasible_max:.6g}")])
        return consts
    inp.alpha0 = exp.steps.value
    if inp.alpha0 < g / 0.9:
        raise ConfigError([("step-size-feasibility",
                            f"alpha0={inp.alpha0:.6g} below gamma_max/0.9 = {g / 0.9:.6g}")])
    if kind == "push":
        return None
    z1 = An.zeta1(inp.A_max, inp.b_max, inp.pi_min, inp.beta, exp.L, exp.delta_max)
    if "alpha" in exp.bounds:
        alpha = float(exp.bounds["alpha"])
    else:
        alpha = float(exp.bounds.get("alpha_fraction", 0.5)) * An.max_feasible_alpha(
            an.tau, inp.A_max, inp.b_max, g, z1)
    inp.alpha = alpha
    inp.tau_alpha = int(an.tau(alpha)) if alpha > 0 else 0
    if not alpha > 0 or not alpha < An.feasibility_limit(alpha, inp.tau_alpha, inp.A_max, inp.b_max, g, z1):
        raise ConfigError([("step-size-feasibility", f"reference alpha={alpha:.6g} is not feasible")])
    return An.consensus_bound_constants(inp, an.eta, an.tau, fixed=False)


def _times_from(recorded, anchor, last):
    """Recorded times in ``[anchor, last]`` plus the anchor itself."""
    sel = recorded[(recorded >= anchor) & (recorded <= last)]
    return np.union1d(sel, [anchor]).astype(np.int64) if anchor <= last else sel


def _decay(fn, consts, anchor, limit):
    out = {}
    for t in DECAY_TIMES:
        if anchor <= t <= limit:
            out[str(t)] = fn(t)
    if len(out) == 2:
        out["decreasing"] = bool(out[str(DECAY_TIMES[1])] < out[str(DECAY_TIMES[0])])
    return out


def evaluate_bounds(exp: Experiment, an: InstanceAnalysis, ens: EnsembleResult) -> BoundReport | None:
    """Complete the ledger with ensemble quantities and evaluate the bound at the recorded times."""
    kind = bound_kind(exp)
    if kind is None:
        return None
    pre = prepare_bounds(exp, an)
    T = ens.horizon
    mean, se = ens.metric_mean, ens.metric_se
    if kind == "fixed":
        consts = An.consensus_bound_constants(pre.inputs, an.eta, an.tau, avg_sq_err=mean[:, 2], fixed=True)
        anchor = consts.T1
        times = _times_from(ens.times, anchor, T)
        ce = mean[: exp.L, 1]
        rhs = An.bound_rhs_fixed(times, consts, an.eta, ce) if len(times) else np.array([])
        extra = {
            "long_run": {
                "t": int(T),
                "mean": float(mean[T, 0]),
                "C2": consts.C["C2"],
                "ok": bool(mean[T, 0] <= consts.C["C2"]),
            }
        }
        return BoundReport(kind, consts, anchor, times, mean[times, 0], se[times, 0], np.atleast_1d(rhs), extra)
    if kind == "harmonic":
        consts = An.consensus_bound_constants(pre.inputs, an.eta, an.tau, avg_sq_err=mean[:, 2], fixed=False, harmonic=True)
        L, T2 = exp.L, consts.T2
        anchor = L * T2
        if anchor + L - 1 > T:
            raise BoundsRefused("horizon", f"anchor L*T2={anchor} beyond horizon {T}")
        anchor_err = mean[anchor: anchor + L, 1]
        times = _times_from(ens.times, anchor, T)
        rhs = An.bound_rhs_timevarying(times, consts, an.eta, anchor_err)
        limit = len(an.eta) - 1
        extra = {"rhs_decay": _decay(lambda t: An.bound_rhs_timevarying(t, consts, an.eta, anchor_err),
                                     consts, anchor, limit)}
        return BoundReport(kind, consts, anchor, times, mean[times, 0], se[times, 0], np.atleast_1d(rhs), extra)
    # push
    inp = _inputs(exp, an)
    inp.alpha0 = exp.steps.value
    inp.theta_star_norm_push = inp.theta_star_norm
    a0 = inp.alpha0
    A_states, b_states = exp.noise.A_states, exp.noise.b_states
    init = [np.linalg.norm(np.sum(th + a0 * th @ A_states[x].T + a0 * b_states[x], axis=0))
            for th, x in zip(ens.theta0, ens.x0)]
    C_theta = 1.1 * float(ens.metric_max[4])
    mu = mean[:, 1]
    consts = An.push_bound_constants(inp, an.tau, an.epsilon1, C_theta, mu, float(np.mean(init)), mean[:, 2])
    consts.notes["C_theta"] = "empirical: 1.1 x max over trials and steps of ||Theta_t||_F"
    consts.notes["epsilon_bar"] = "bound evaluated at the upper bound of epsilon_bar"
    anchor = consts.T_bar
    if anchor + 1 > T:
        raise BoundsRefused("horizon", f"T_bar={anchor} beyond horizon {T}")
    times = _times_from(ens.times, anchor, T - 1)
    rhs = An.bound_rhs_push(times, consts, mu)
    extra = {"rhs_decay": _decay(lambda t: An.bound_rhs_push(t, consts, mu), consts, anchor, T),
             "compared": "sum_i E||theta_{t+1}^i - theta*||^2 against the bound at t"}
    return BoundReport(kind, consts, anchor, times, mean[times + 1, 0], se[times + 1, 0], np.atleast_1d(rhs), extra)


def analysis_horizon(exp: Experiment) -> int:
    """Horizon for the APS: time-varying bounds need ``eta`` out to the decay check."""
    if exp.bounds_enabled and bound_kind(exp) == "harmonic":
        return max(exp.horizon, DECAY_TIMES[-1])
    return exp.horizon


@dataclass
class RunResult:
    experiment: Experiment
    analysis: InstanceAnalysis
    ensemble: EnsembleResult
    bound: BoundReport | None
    bound_error: tuple | None
    report: dict


def run_experiment(exp: Experiment, workers: int = 1) -> RunResult:
    """Analysis, step-size validation, ensemble and (when enabled) bound evaluation.

    Infeasible step sizes raise ``ConfigError`` before any trial runs; a bound
    that cannot be evaluated on this horizon is recorded in the report.
    """
    start = time.perf_counter()
    an = analyze(exp, analysis_horizon(exp))
    bound, err = None, None
    if exp.bounds_enabled:
        try:
            prepare_bounds(exp, an)
        except BoundsRefused as exc:
            err = (exc.assumption, str(exc))
    ens = run_ensemble(exp, an, workers=workers)
    if exp.bounds_enabled and err is None:
        try:
            bound = evaluate_bounds(exp, an, ens)
        except BoundsRefused as exc:
            err = (exc.assumption, str(exc))
        except An.AnalysisError as exc:
            err = ("horizon", str(exc))
    report = build_report(exp, an, ens, bound, None if err is None else err[1], wall_clock=time.perf_counter() - start)
    return RunResult(exp, an, ens, bound, err, report)


# ---------------------------------------------------------------------------
# identity replays


def consensus_replay_residual(traj: E.Trajectory, pi, noise: Nz.NoiseModel, steps: E.StepSchedule) -> float:
    """Max over t of ``||<th>_{t+1} - <th>_t - a_t A(X_t) <th>_t - a_t B(X_t)^T pi_{t+1}||``.

    Needs a trajectory recorded at every step with its noise path.
    """
    T = traj.horizon
    theta, path = traj.theta, traj.noise_path
    alphas = steps.alphas(T)
    avg = np.einsum("tn,tnk->tk", pi[: T + 1], theta)
    worst = 0.0
    for t in range(T):
        x = path[t]
        pred = avg[t] + alphas[t] * noise.A_states[x] @ avg[t] + alphas[t] * noise.b_states[x].T @ pi[t + 1]
        worst = max(worst, float(np.linalg.norm(avg[t + 1] - pred)))
    return worst


def push_replay_residual(traj: E.Trajectory, noise: Nz.NoiseModel, steps: E.StepSchedule) -> float:
    """Max over t of ``||<th~>_{t+1} - <th~>_t - a_t A(X_t) <th>_t - (a_t/N) sum_i b^i(X_t)||``."""
    T = traj.horizon
    tilde = traj.theta_tilde.mean(axis=1)
    plain = traj.theta.mean(axis=1)
    alphas = steps.alphas(T)
    path = traj.noise_path
    worst = 0.0
    for t in range(T):
        x = path[t]
        pred = tilde[t] + alphas[t] * noise.A_states[x] @ plain[t] + alphas[t] * noise.b_states[x].mean(axis=0)
        worst = max(worst, float(np.linalg.norm(tilde[t + 1] - pred)))
    return worst


# ---------------------------------------------------------------------------
# verification suite


def _check(name, value, tol, status=None, detail=""):
    if status is None:
        status = "pass" if value <= tol else "fail"
    return {"name": name, "status": status, "value": float(value), "tol": tol, "detail": detail}


def verify_suite(exp: Experiment, an: InstanceAnalysis | None = None, n_seeds: int = 4,
                 replay_horizon: int = 300, decay_trials: int = 8) -> list[dict]:
    """Named invariants with measured residuals; failures are report content, not exceptions."""
    an = an or analyze(exp)
    T = max(exp.horizon, exp.L)
    out = []
    adj = exp.graphs.adjacency_stack(0, min(T, 4096))
    out.append(_check("self-arcs", float(np.sum(~np.diagonal(adj, axis1=1, axis2=2))), 0.0))
    usc = G.verify_uniform_strong_connectivity(exp.graphs, exp.L, T)
    out.append(_check("uniform-strong-connectivity", 0.0 if usc else 1.0, 0.0, detail=f"L={exp.L}"))
    bank, idx = exp.weights.compile(0, T)
    used = bank[np.unique(idx)]
    axis = 1 if exp.weights.orientation == Wt.ROW else 0
    out.append(_check("stochasticity", float(np.max(np.abs(used.sum(axis=1 + axis) - 1.0))), 1e-12,
                      detail=f"{exp.weights.orientation}-stochastic"))
    out.append(_check("lyapunov-residual", an.lyapunov.residual, 1e-10))
    out.append(_check("hurwitz-mean", exp.noise.hurwitz_margin(), -1e-9))
    prof = an.profile
    out.append(_check("mixing-envelope", float(np.max(prof.dev - prof.envelope)), 1e-12))
    if an.theta_star is not None:
        out.append(_check("equilibrium-residual", an.equilibrium_residual, 1e-10))

    if exp.weights.orientation == Wt.ROW:
        out.append(_check("aps-recursion", an.aps.recursion_residual, 1e-10))
        if an.aps.limit_detected:
            out.append(_check("pi-limit", 0.0, 0.0, detail="limit detected"))
        else:
            out.append(_check("pi-limit", 1.0, 0.0, status="flagged", detail="pi-limit assumption violated"))
    else:
        h = min(T, 400)
        ids = Wt.verify_push_identities(exp.weights, h)
        out.append(_check("push-product-identity", ids["product"], 1e-8))
        out.append(_check("push-ratio-identity", ids["ratio"], 1e-8))
        out.append(_check("push-tilde-limit", ids["limit"], 1e-6))
        out.append(_check("push-weight-mass", ids["mass"], 1e-10))

    seeds = exp.seeds()[:n_seeds]
    Tr = min(replay_horizon, exp.horizon)
    times = np.arange(Tr + 1)
    worst, mass = 0.0, 0.0
    for s in seeds:
        tr = E.run(exp.engine, exp.weights, exp.noise, exp.steps, Tr, s, record_times=times,
                   theta_star=an.theta_star, pi=None if an.pi is None else an.pi[: Tr + 1],
                   initial_scale=exp.initial_scale)
        if exp.engine == E.CONSENSUS:
            worst = max(worst, consensus_replay_residual(tr, an.pi, exp.noise, exp.steps))
        elif exp.engine == E.PUSH:
            worst = max(worst, push_replay_residual(tr, exp.noise, exp.steps))
            mass = max(mass, tr.mass_residual)
    if exp.engine == E.CONSENSUS:
        out.append(_check("weighted-average-replay", worst, 1e-9, detail=f"{len(seeds)} seeds x {Tr} steps"))
    elif exp.engine == E.PUSH:
        out.append(_check("push-average-replay", worst, 1e-9, detail=f"{len(seeds)} seeds x {Tr} steps"))
        out.append(_check("push-mass-conservation", mass, 1e-10))

    ens = run_ensemble(exp, an, trials=min(decay_trials, exp.trials), record_times=[0, exp.horizon])
    ce_name = "consensus_error"
    ce, _ = ens.column(ce_name)
    t0 = min(10, exp.horizon)
    ratio = float(ce[exp.horizon] / ce[t0]) if ce[t0] > 0 else 0.0
    out.append(_check("consensus-decay", ratio, 1e-2, detail=f"consensus error at T over value at t={t0}"))
    return out


# ---------------------------------------------------------------------------
# reports and files


def _f(x):
    return None if x is None else float(x)


def build_report(exp: Experiment, an: InstanceAnalysis, ens: EnsembleResult, bound: BoundReport | None,
                 bound_error: str | None = None, wall_clock: float | None = None) -> dict:
    T = ens.horizon
    names = ens.metric_names
    final = {n: {"mean": float(ens.metric_mean[T, k]), "stderr": float(ens.metric_se[T, k])}
             for k, n in enumerate(names)}
    if not ens.has_target:
        for n in names:
            if n in ("weighted_mse", "mse", "average_error", "tilde_average_error"):
                final[n] = "n/a: equilibrium undefined"
    rep = {
        "name": exp.name,
        "fingerprint": exp.fingerprint,
        "engine": exp.engine,
        "horizon": T,
        "trials": ens.trials,
        "seed": exp.seed,
        "steps": {"kind": exp.steps.kind, "value": exp.steps.value,
                  "shape_verified": exp.steps.assumption_verified},
        "analysis": {
            "N": exp.n_agents,
            "K": exp.dim,
            "L": exp.L,
            "beta": exp.beta,
            "delta_max": exp.delta_max,
            "A_max": exp.noise.A_max,
            "b_max": exp.noise.b_max,
            "gamma_max": an.lyapunov.gamma_max,
            "gamma_min": an.lyapunov.gamma_min,
            "C": an.C,
            "pi_min": _f(an.pi_min),
            "pi_min_note": "minimum over the computed horizon; the infimum over all t can be smaller",
            "pi_infinity": None if an.aps is None or an.aps.pi_infinity is None else an.aps.pi_infinity.tolist(),
            "theta_star": None if an.theta_star is None else an.theta_star.tolist(),
            "target_weighting": an.weighting,
            "epsilon1": _f(an.epsilon1),
            "diagnostics": [{"assumption": a, "message": m} for a, m in an.diagnostics],
        },
        "final": final,
        "mass_residual": ens.mass_residual if exp.engine == E.PUSH else None,
        "notes": list(exp.notes),
        "wall_clock_s": ens.wall_clock if wall_clock is None else wall_clock,
    }
    if bound is None:
        rep["bound"] = {"status": "n/a" if bound_error is None else "refused"}
        if bound_error:
            rep["bound"]["reason"] = bound_error
        elif exp.engine == E.KUSHNER:
            rep["bound"]["reason"] = "no finite-time bound covers the combine-after-adapt variant"
    else:
        rep["bound"] = {
            "status": "evaluated",
            "kind": bound.kind,
            "anchor": int(bound.anchor),
            "checked": int(len(bound.times)),
            "dominated": int(bound.ok.sum()),
            "verdict": bound.verdict,
            "rule": "mean + 2 stderr <= rhs",
            "table": [{"t": int(t), "mean": float(m), "stderr": float(s), "rhs": float(r)}
                      for t, m, s, r in zip(bound.times, bound.mean, bound.se, bound.rhs)],
            **An._jsonable(bound.extra),
        }
    return rep


def _fmt(x) -> str:
    return repr(float(x))


def write_outputs(out_dir, exp: Experiment, an: InstanceAnalysis, ens: EnsembleResult, report: dict,
                  bound: BoundReport | None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    path = out / "trajectory.csv"
    trials, R, N, K = ens.theta.shape
    with path.open("w", newline="") as fh:
        fh.write("t,trial,agent,k,value\n")
        for a in range(trials):
            for r in range(R):
                t = int(ens.times[r])
                for i in range(N):
                    for k in range(K):
                        fh.write(f"{t},{a},{i + 1},{k + 1},{_fmt(ens.theta[a, r, i, k])}\n")
    files.append(path)

    path = out / "errors.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "metric", "mean", "stderr", "trials"])
        for t in ens.times:
            for k, name in enumerate(ens.metric_names):
                w.writerow([int(t), name, _fmt(ens.metric_mean[t, k]), _fmt(ens.metric_se[t, k]), ens.trials])
            if an.eta is not None and t < len(an.eta):
                w.writerow([int(t), "eta", _fmt(an.eta[t]), _fmt(0.0), ens.trials])
    files.append(path)

    if an.aps is not None:
        files.append(Wt.dump_aps_csv(an.aps, out / "aps.csv"))

    if bound is not None:
        path = out / "bound.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "mean", "stderr", "rhs", "dominated"])
            for t, m, s, r, ok in zip(bound.times, bound.mean, bound.se, bound.rhs, bound.ok):
                w.writerow([int(t), _fmt(m), _fmt(s), _fmt(r), int(ok)])
        files.append(path)
        path = out / "ledger.json"
        path.write_text(json.dumps(bound.constants.to_json(), indent=2, sort_keys=True) + "\n")
        files.append(path)

    path = out / "report.json"
    path.write_text(json.dumps(An._jsonable(report), indent=2) + "\n")
    files.append(path)
    return files


def render_report(out_dir) -> dict:
    """Re-derive the dominance verdict and final errors from the stored CSV files."""
    out = Path(out_dir)
    report = json.loads((out / "report.json").read_text())
    summary = {"name": report.get("name"), "fingerprint": report.get("fingerprint"), "engine": report.get("engine")}
    finals = {}
    with (out / "errors.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    if rows:
        last_t = max(int(r["t"]) for r in rows)
        for r in rows:
            if int(r["t"]) == last_t:
                finals[r["metric"]] = {"mean": float(r["mean"]), "stderr": float(r["stderr"]), "t": last_t}
    summary["final"] = finals
    bpath = out / "bound.csv"
    if bpath.is_file():
        with bpath.open() as fh:
            brows = list(csv.DictReader(fh))
        ok = [float(r["mean"]) + 2 * float(r["stderr"]) <= float(r["rhs"]) for r in brows]
        summary["bound"] = {
            "checked": len(ok),
            "dominated": int(sum(ok)),
            "verdict": (sum(ok) / len(ok)) if ok else None,
            "anchor": int(brows[0]["t"]) if brows else None,
        }
    else:
        summary["bound"] = report.get("bound", {"status": "n/a"})
    return summary
