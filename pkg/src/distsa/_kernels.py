"""Hot loops: numba-compiled kernels with a pure-numpy fallback.

The fallback is selected by setting ``DISTSA_DISABLE_JIT=1`` (or when numba
is not importable).  Both variants are always importable under explicit
names (``*_jit`` / ``*_np``) so they can be compared against each other; the
unsuffixed names point at the selected variant.

Status codes returned by the engine loops: 0 ok, 1 divergence (non-finite or
an agent norm above ``DIVERGENCE_NORM``), 2 non-positive push-sum weight.
"""

from __future__ import annotations

import os

import numpy as np

DIVERGENCE_NORM = 1e12

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

JIT_ENABLED = _HAVE_NUMBA and os.environ.get("DISTSA_DISABLE_JIT", "").strip() not in ("1", "true", "yes")


def _njit(fn):
    if not _HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# pure-numpy reference versions


def aps_backward_np(bank, idx, V, keep):
    """Backward recursion ``V_t = W_t^T V_{t+1}`` from ``V_M = V``, M = len(idx).

    Returns the first column of ``V_t`` for t = 0..keep-1 (keep <= M + 1) and
    the full block ``V_{keep-1}``.
    """
    M = idx.shape[0]
    n = V.shape[0]
    out = np.empty((keep, n))
    cur = V.copy()
    at_keep = V.copy()
    if keep == M + 1:
        out[M] = cur[:, 0]
    for t in range(M - 1, -1, -1):
        cur = bank[idx[t]].T @ cur
        if t < keep:
            out[t] = cur[:, 0]
            if t == keep - 1:
                at_keep = cur.copy()
    return out, at_keep


def forward_apply_np(bank, idx, v0):
    """``v_{t+1} = W_t v_t`` for every t; returns ``v_0..v_T``."""
    T = idx.shape[0]
    out = np.empty((T + 1, v0.shape[0]))
    out[0] = v0
    v = v0.copy()
    for t in range(T):
        v = bank[idx[t]] @ v
        out[t + 1] = v
    return out


def sample_path_np(cdf, x0, u):
    path = np.empty(u.shape[0] + 1, dtype=np.int64)
    path[0] = x0
    x = x0
    last = cdf.shape[1] - 1
    for t in range(u.shape[0]):
        x = min(int(np.searchsorted(cdf[x], u[t], side="right")), last)
        path[t + 1] = x
    return path


def consensus_loop_np(theta0, bank, widx, A_bank, B_bank, path, alphas, variant, pi, theta_star, rec):
    N, K = theta0.shape
    T = alphas.shape[0]
    snaps = np.zeros((rec.shape[0], N, K))
    metrics = np.zeros((T + 1, 3))
    theta = theta0.copy()
    r = 0
    for t in range(T + 1):
        avg = theta.T @ pi[t]
        metrics[t, 0] = pi[t] @ np.sum((theta - theta_star) ** 2, axis=1)
        metrics[t, 1] = pi[t] @ np.sum((theta - avg) ** 2, axis=1)
        metrics[t, 2] = np.sum((avg - theta_star) ** 2)
        while r < rec.shape[0] and rec[r] == t:
            snaps[r] = theta
            r += 1
        if t == T:
            break
        W = bank[widx[t]]
        A = A_bank[path[t]]
        mixed = W @ theta
        src = mixed if variant == 0 else theta
        theta = mixed + alphas[t] * (src @ A.T) + alphas[t] * B_bank[path[t]]
        norms = np.sqrt(np.sum(theta**2, axis=1))
        if not np.all(np.isfinite(theta)) or norms.max() > DIVERGENCE_NORM:
            return snaps, metrics, 1, t + 1, theta
    return snaps, metrics, 0, -1, theta


def push_loop_np(tilde0, bank, widx, A_bank, B_bank, path, alphas, theta_star, rec):
    N, K = tilde0.shape
    T = alphas.shape[0]
    R = rec.shape[0]
    snaps_theta = np.zeros((R, N, K))
    snaps_tilde = np.zeros((R, N, K))
    snaps_y = np.zeros((R, N))
    metrics = np.zeros((T + 1, 5))
    tilde = tilde0.copy()
    y = np.ones(N)
    theta = tilde / y[:, None]
    mass_res = 0.0
    r = 0
    for t in range(T + 1):
        avg_theta = theta.mean(axis=0)
        avg_tilde = tilde.mean(axis=0)
        A = A_bank[path[t]]
        metrics[t, 0] = np.sum((theta - theta_star) ** 2)
        metrics[t, 1] = np.sqrt(np.sum((A @ (avg_theta - avg_tilde)) ** 2))
        metrics[t, 2] = np.sum((avg_tilde - theta_star) ** 2)
        metrics[t, 3] = np.sum((theta - avg_theta) ** 2) / N
        metrics[t, 4] = np.sqrt(np.sum(theta**2))
        mass_res = max(mass_res, abs(y.sum() - N))
        while r < R and rec[r] == t:
            snaps_theta[r] = theta
            snaps_tilde[r] = tilde
            snaps_y[r] = y
            r += 1
        if t == T:
            break
        W = bank[widx[t]]
        msg = tilde + alphas[t] * (theta @ A.T + B_bank[path[t]])
        tilde = W @ msg
        y = W @ y
        if np.any(y <= 0.0):
            return snaps_theta, snaps_tilde, snaps_y, metrics, mass_res, 2, t + 1
        theta = tilde / y[:, None]
        norms = np.sqrt(np.sum(theta**2, axis=1))
        if not np.all(np.isfinite(theta)) or norms.max() > DIVERGENCE_NORM:
            return snaps_theta, snaps_tilde, snaps_y, metrics, mass_res, 1, t + 1
    return snaps_theta, snaps_tilde, snaps_y, metrics, mass_res, 0, -1


# ---------------------------------------------------------------------------
# numba versions: explicit loops, same contracts


@_njit
def aps_backward_jit(bank, idx, V, keep):
    M = idx.shape[0]
    n, c = V.shape
    out = np.empty((keep, n))
    cur = V.copy()
    nxt = np.empty_like(cur)
    at_keep = V.copy()
    if keep == M + 1:
        for j in range(n):
            out[M, j] = cur[j, 0]
    for t in range(M - 1, -1, -1):
        W = bank[idx[t]]
        for j in range(n):
            for col in range(c):
                s = 0.0
                for i in range(n):
                    s += W[i, j] * cur[i, col]
                nxt[j, col] = s
        cur, nxt = nxt, cur
        if t < keep:
            for j in range(n):
                out[t, j] = cur[j, 0]
            if t == keep - 1:
                at_keep[:, :] = cur
    return out, at_keep


@_njit
def forward_apply_jit(bank, idx, v0):
    T = idx.shape[0]
    n = v0.shape[0]
    out = np.empty((T + 1, n))
    out[0] = v0
    for t in range(T):
        W = bank[idx[t]]
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += W[i, j] * out[t, j]
            out[t + 1, i] = s
    return out


@_njit
def sample_path_jit(cdf, x0, u):
    path = np.empty(u.shape[0] + 1, dtype=np.int64)
    path[0] = x0
    x = x0
    last = cdf.shape[1] - 1
    for t in range(u.shape[0]):
        x = min(np.searchsorted(cdf[x], u[t], side="right"), last)
        path[t + 1] = x
    return path


@_njit
def consensus_loop_jit(theta0, bank, widx, A_bank, B_bank, path, alphas, variant, pi, theta_star, rec):
    N, K = theta0.shape
    T = alphas.shape[0]
    R = rec.shape[0]
    snaps = np.zeros((R, N, K))
    metrics = np.zeros((T + 1, 3))
    theta = theta0.copy()
    mixed = np.empty((N, K))
    new = np.empty((N, K))
    avg = np.empty(K)
    r = 0
    for t in range(T + 1):
        for k in range(K):
            s = 0.0
            for i in range(N):
                s += pi[t, i] * theta[i, k]
            avg[k] = s
        wmse = 0.0
        ce = 0.0
        for i in range(N):
            e1 = 0.0
            e2 = 0.0
            for k in range(K):
                d1 = theta[i, k] - theta_star[k]
                d2 = theta[i, k] - avg[k]
                e1 += d1 * d1
                e2 += d2 * d2
            wmse += pi[t, i] * e1
            ce += pi[t, i] * e2
        ae = 0.0
        for k in range(K):
            d = avg[k] - theta_star[k]
            ae += d * d
        metrics[t, 0] = wmse
        metrics[t, 1] = ce
        metrics[t, 2] = ae
        while r < R and rec[r] == t:
            snaps[r] = theta
            r += 1
        if t == T:
            break
        W = bank[widx[t]]
        A = A_bank[path[t]]
        B = B_bank[path[t]]
        a = alphas[t]
        for i in range(N):
            for k in range(K):
                s = 0.0
                for j in range(N):
                    s += W[i, j] * theta[j, k]
                mixed[i, k] = s
        worst = 0.0
        ok = True
        for i in range(N):
            nrm = 0.0
            for k in range(K):
                s = 0.0
                if variant == 0:
                    for l in range(K):
                        s += mixed[i, l] * A[k, l]
                else:
                    for l in range(K):
                        s += theta[i, l] * A[k, l]
                v = mixed[i, k] + a * s + a * B[i, k]
                new[i, k] = v
                if not np.isfinite(v):
                    ok = False
                nrm += v * v
            worst = max(worst, nrm)
        theta, new = new, theta
        if not ok or np.sqrt(worst) > DIVERGENCE_NORM:
            return snaps, metrics, 1, t + 1, theta
    return snaps, metrics, 0, -1, theta


@_njit
def push_loop_jit(tilde0, bank, widx, A_bank, B_bank, path, alphas, theta_star, rec):
    N, K = tilde0.shape
    T = alphas.shape[0]
    R = rec.shape[0]
    snaps_theta = np.zeros((R, N, K))
    snaps_tilde = np.zeros((R, N, K))
    snaps_y = np.zeros((R, N))
    metrics = np.zeros((T + 1, 5))
    tilde = tilde0.copy()
    y = np.ones(N)
    theta = tilde.copy()
    msg = np.empty((N, K))
    ynew = np.empty(N)
    avg_theta = np.empty(K)
    avg_tilde = np.empty(K)
    mass_res = 0.0
    r = 0
    for t in range(T + 1):
        for k in range(K):
            s1 = 0.0
            s2 = 0.0
            for i in range(N):
                s1 += theta[i, k]
                s2 += tilde[i, k]
            avg_theta[k] = s1 / N
            avg_tilde[k] = s2 / N
        A = A_bank[path[t]]
        mse = 0.0
        ce = 0.0
        fro = 0.0
        for i in range(N):
            for k in range(K):
                d1 = theta[i, k] - theta_star[k]
                d2 = theta[i, k] - avg_theta[k]
                mse += d1 * d1
                ce += d2 * d2
                fro += theta[i, k] * theta[i, k]
        mu = 0.0
        te = 0.0
        for k in range(K):
            s = 0.0
            for l in range(K):
                s += A[k, l] * (avg_theta[l] - avg_tilde[l])
            mu += s * s
            d = avg_tilde[k] - theta_star[k]
            te += d * d
        metrics[t, 0] = mse
        metrics[t, 1] = np.sqrt(mu)
        metrics[t, 2] = te
        metrics[t, 3] = ce / N
        metrics[t, 4] = np.sqrt(fro)
        ysum = 0.0
        for i in range(N):
            ysum += y[i]
        mass_res = max(mass_res, abs(ysum - N))
        while r < R and rec[r] == t:
            snaps_theta[r] = theta
            snaps_tilde[r] = tilde
            snaps_y[r] = y
            r += 1
        if t == T:
            break
        W = bank[widx[t]]
        B = B_bank[path[t]]
        a = alphas[t]
        for j in range(N):
            for k in range(K):
                s = 0.0
                for l in range(K):
                    s += A[k, l] * theta[j, l]
                msg[j, k] = tilde[j, k] + a * (s + B[j, k])
        for i in range(N):
            s = 0.0
            for j in range(N):
                s += W[i, j] * y[j]
            ynew[i] = s
            for k in range(K):
                s = 0.0
                for j in range(N):
                    s += W[i, j] * msg[j, k]
                tilde[i, k] = s
        worst = 0.0
        ok = True
        for i in range(N):
            y[i] = ynew[i]
            if y[i] <= 0.0:
                return snaps_theta, snaps_tilde, snaps_y, metrics, mass_res, 2, t + 1
            nrm = 0.0
            for k in range(K):
                v = tilde[i, k] / y[i]
                theta[i, k] = v
                if not np.isfinite(v):
                    ok = False
                nrm += v * v
            worst = max(worst, nrm)
        if not ok or np.sqrt(worst) > DIVERGENCE_NORM:
            return snaps_theta, snaps_tilde, snaps_y, metrics, mass_res, 1, t + 1
    return snaps_theta, snaps_tilde, snaps_y, metrics, mass_res, 0, -1


if JIT_ENABLED:
    aps_backward = aps_backward_jit
    forward_apply = forward_apply_jit
    sample_path = sample_path_jit
    consensus_loop = consensus_loop_jit
    push_loop = push_loop_jit
else:
    aps_backward = aps_backward_np
    forward_apply = forward_apply_np
    sample_path = sample_path_np
    consensus_loop = consensus_loop_np
    push_loop = push_loop_np
