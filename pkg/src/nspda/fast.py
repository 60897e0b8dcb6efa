"""Compiled NSPDA gradients for the training loop.

:func:`nspda_gradient` returns the same vector as the numpy reference in
:mod:`nspda.learning` (BPTT, truncated BPTT, UORO) for the same random
streams; the test suite checks this.  The feature vector v has at most L + 1
nonzero entries (one-hot input), which the kernels exploit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._kernels import _fill_read, _select_action, _sigmoid
from .exceptions import InputError
from .learning import EPS, RHO_FLOOR, _steps
from .model import ModelParams

ALGO_CODES = {"bptt": 0, "tbptt": 1, "uoro": 2}


@njit(cache=True)
def _forward(Ws, Wa, b_s, b_a, W_o, b_o, third, start, steps, U):
    N = steps.shape[0]
    J = Ws.shape[0]
    L = Wa.shape[0]
    nv = L if third else L + 1
    Z = np.zeros((N + 1, J))
    R = np.empty((N + 1, L))
    VI = np.empty((N, nv), dtype=np.int64)
    VV = np.empty((N, nv))
    GP = np.empty((N, J))
    FP = np.empty((N, L))
    Y = np.empty(N)
    Z[0, start] = 1.0
    _fill_read(R[0], U[0], -1, -1)
    stack = np.empty(N + 1, dtype=np.int64)
    depth = 0
    u = np.empty(L)
    for t in range(N):
        l = steps[t]
        for k in range(L):
            VI[t, k] = k * L + l if third else k
            VV[t, k] = R[t, k]
        if not third:
            VI[t, L] = L + l
            VV[t, L] = 1.0
        for i in range(J):
            acc = b_s[i]
            for j in range(J):
                tt = 0.0
                for q in range(nv):
                    tt += Ws[i, j, VI[t, q]] * VV[t, q]
                acc += Z[t, j] * tt
            zi = _sigmoid(acc)
            Z[t + 1, i] = zi
            GP[t, i] = zi * (1.0 - zi)
        for c in range(L):
            acc = b_a[c]
            for j in range(J):
                tt = 0.0
                for q in range(nv):
                    tt += Wa[c, j, VI[t, q]] * VV[t, q]
                acc += Z[t, j] * tt
            u[c] = acc
            su = _sigmoid(acc)
            FP[t, c] = 2.0 * su * (1.0 - su)
        c, sign = _select_action(u)
        popped = -1
        if sign > 0:
            depth += 1
            stack[depth] = c
        elif sign < 0 and depth > 0:
            popped = stack[depth]
            depth -= 1
        top = stack[depth] if depth > 0 else -1
        _fill_read(R[t + 1], U[t + 1], top, popped)
        acc = b_o
        for j in range(J):
            acc += W_o[j] * Z[t + 1, j]
        Y[t] = _sigmoid(acc)
    return Z, R, VI, VV, GP, FP, Y


@njit(cache=True)
def _dloss(yhat, y):
    if yhat < EPS or yhat > 1.0 - EPS:
        return 0.0
    return -y / yhat + (1.0 - y) / (1.0 - yhat)


@njit(cache=True)
def _loss(yhat, y):
    p = min(max(yhat, EPS), 1.0 - EPS)
    return -y * np.log(p) - (1.0 - y) * np.log(1.0 - p)


@njit(cache=True)
def _read_index(third, k, l, L):
    return k * L + l if third else k


@njit(cache=True)
def _acc_params(g, Ws, Wa, Z, VI, VV, GP, FP, t, delta, c, scale):
    # g += scale * (immediate d h' / d theta)^T delta
    J = Ws.shape[0]
    L = Wa.shape[0]
    V = Ws.shape[2]
    nv = VI.shape[1]
    o_wa = J * J * V
    o_bs = o_wa + L * J * V
    o_ba = o_bs + J
    for i in range(J):
        a = scale * delta[i] * GP[t, i]
        if a == 0.0:
            continue
        for j in range(J):
            azj = a * Z[t, j]
            base = (i * J + j) * V
            for q in range(nv):
                g[base + VI[t, q]] += azj * VV[t, q]
        g[o_bs + i] += a
    if c != 0.0:
        for i in range(L):
            b = scale * c * delta[J + i] * FP[t, i]
            if b == 0.0:
                continue
            for j in range(J):
                bzj = b * Z[t, j]
                base = o_wa + (i * J + j) * V
                for q in range(nv):
                    g[base + VI[t, q]] += bzj * VV[t, q]
            g[o_ba + i] += b


@njit(cache=True)
def _state_matvec(Ws, Wa, Z, VI, VV, GP, FP, t, vec, c, third, l, transpose, out):
    # out = J_t vec  (or J_t^T vec when transpose)
    J = Ws.shape[0]
    L = Wa.shape[0]
    nv = VI.shape[1]
    n = out.shape[0]
    for i in range(n):
        out[i] = 0.0
    for i in range(J):
        for j in range(J):
            a = 0.0
            for q in range(nv):
                a += Ws[i, j, VI[t, q]] * VV[t, q]
            a *= GP[t, i]
            if transpose:
                out[j] += a * vec[i]
            else:
                out[i] += a * vec[j]
        if c != 0.0:
            for k in range(L):
                d = 0.0
                idx = _read_index(third, k, l, L)
                for j in range(J):
                    d += Ws[i, j, idx] * Z[t, j]
                d *= GP[t, i]
                if transpose:
                    out[J + k] += d * vec[i]
                else:
                    out[i] += d * vec[J + k]
    if c != 0.0:
        for i in range(L):
            for j in range(J):
                a = 0.0
                for q in range(nv):
                    a += Wa[i, j, VI[t, q]] * VV[t, q]
                a *= c * FP[t, i]
                if transpose:
                    out[j] += a * vec[J + i]
                else:
                    out[J + i] += a * vec[j]
            for k in range(L):
                d = 0.0
                idx = _read_index(third, k, l, L)
                for j in range(J):
                    d += Wa[i, j, idx] * Z[t, j]
                d *= c * FP[t, i]
                if transpose:
                    out[J + k] += d * vec[J + i]
                else:
                    out[J + i] += d * vec[J + k]


@njit(cache=True)
def _gradient(Ws, Wa, b_s, b_a, W_o, b_o, third, start, steps, label, U, NU, algo, window, c, LW):
    Z, R, VI, VV, GP, FP, Y = _forward(Ws, Wa, b_s, b_a, W_o, b_o, third, start, steps, U)
    N = steps.shape[0]
    J = Ws.shape[0]
    L = Wa.shape[0]
    V = Ws.shape[2]
    P = J * J * V + L * J * V + J + L + J + 1
    o_wo = P - J - 1
    nh = J + L if c != 0.0 else J
    g = np.zeros(P)
    loss = 0.0
    y = float(label)
    delta = np.zeros(nh)
    tmp = np.zeros(nh)
    dys = np.empty(N)
    for t in range(N):
        if LW[t] == 0.0:
            dys[t] = 0.0
            continue
        loss += LW[t] * _loss(Y[t], y)
        dy = LW[t] * _dloss(Y[t], y) * Y[t] * (1.0 - Y[t])
        dys[t] = dy
        for j in range(J):
            g[o_wo + j] += dy * Z[t + 1, j]
        g[P - 1] += dy
    if algo == 0 or (algo == 1 and window >= N):
        for t in range(N - 1, -1, -1):
            for j in range(J):
                delta[j] += dys[t] * W_o[j]
            _acc_params(g, Ws, Wa, Z, VI, VV, GP, FP, t, delta, c, 1.0)
            _state_matvec(Ws, Wa, Z, VI, VV, GP, FP, t, delta, c, third, steps[t], True, tmp)
            for i in range(nh):
                delta[i] = tmp[i]
    elif algo == 1:
        for tau in range(N):
            for i in range(nh):
                delta[i] = 0.0
            for j in range(J):
                delta[j] = dys[tau] * W_o[j]
            s = tau
            while s > tau - window and s >= 0:
                _acc_params(g, Ws, Wa, Z, VI, VV, GP, FP, s, delta, c, 1.0)
                _state_matvec(Ws, Wa, Z, VI, VV, GP, FP, s, delta, c, third, steps[s], True, tmp)
                for i in range(nh):
                    delta[i] = tmp[i]
                s -= 1
    else:
        # theta~ is kept as scale * raw so the division by rho0 costs O(1);
        # nu^T M is sparse and its norm factorizes, so it never touches all P entries
        zt = np.zeros(nh)
        raw = np.zeros(P)
        scale = 1.0
        sq = 0.0  # squared norm of raw
        Jz = np.zeros(nh)
        nv = VI.shape[1]
        for t in range(N):
            _state_matvec(Ws, Wa, Z, VI, VV, GP, FP, t, zt, c, third, steps[t], False, Jz)
            nu = NU[t]
            zz = 0.0
            for j in range(J):
                zz += Z[t, j] * Z[t, j]
            vv = 0.0
            for q in range(nv):
                vv += VV[t, q] * VV[t, q]
            aa = 0.0
            for i in range(J):
                a = nu[i] * GP[t, i]
                aa += a * a
            bb = 0.0
            if c != 0.0:
                for i in range(L):
                    b = c * nu[J + i] * FP[t, i]
                    bb += b * b
            n_nm = np.sqrt((aa + bb) * (1.0 + zz * vv))
            n_tt = abs(scale) * np.sqrt(max(sq, 0.0))
            n_jz = np.sqrt(np.sum(Jz * Jz))
            n_nu = np.sqrt(np.sum(nu * nu))
            rho0 = np.sqrt(max(n_tt, RHO_FLOOR) / max(n_jz, RHO_FLOOR))
            rho1 = np.sqrt(max(n_nm, RHO_FLOOR) / max(n_nu, RHO_FLOOR))
            for i in range(nh):
                zt[i] = rho0 * Jz[i] + rho1 * nu[i]
            scale /= rho0
            if scale > 1e150 or scale < 1e-150:
                for p in range(P):
                    raw[p] *= scale
                sq *= scale * scale
                scale = 1.0
            w = 1.0 / (rho1 * scale)
            # sparse update raw += w * nu^T M, tracking the squared norm
            o_wa = J * J * V
            o_bs = o_wa + L * J * V
            o_ba = o_bs + J
            for i in range(J):
                a = w * nu[i] * GP[t, i]
                for j in range(J):
                    azj = a * Z[t, j]
                    base = (i * J + j) * V
                    for q in range(nv):
                        idx = base + VI[t, q]
                        d = azj * VV[t, q]
                        sq += 2.0 * raw[idx] * d + d * d
                        raw[idx] += d
                sq += 2.0 * raw[o_bs + i] * a + a * a
                raw[o_bs + i] += a
            if c != 0.0:
                for i in range(L):
                    b = w * c * nu[J + i] * FP[t, i]
                    for j in range(J):
                        bzj = b * Z[t, j]
                        base = o_wa + (i * J + j) * V
                        for q in range(nv):
                            idx = base + VI[t, q]
                            d = bzj * VV[t, q]
                            sq += 2.0 * raw[idx] * d + d * d
                            raw[idx] += d
                    sq += 2.0 * raw[o_ba + i] * b + b * b
                    raw[o_ba + i] += b
            proj = 0.0
            for j in range(J):
                proj += dys[t] * W_o[j] * zt[j]
            if proj != 0.0:
                f = proj * scale
                for p in range(P):
                    g[p] += f * raw[p]
    return g, loss


def nspda_gradient(params: ModelParams, tokens, label: int, schedule, algorithm: str, rng,
                   sign_rng=None, read_gain: float = 0.0, window: int = 50,
                   loss_weights=None) -> tuple[np.ndarray, float]:
    """Flat gradient vector and sequence loss; read noise from ``rng``.

    ``loss_weights`` holds one weight per effective step (default all ones).
    """
    if algorithm not in ALGO_CODES:
        raise InputError(f"compiled gradients support {tuple(ALGO_CODES)}, not {algorithm!r}")
    steps = np.asarray(_steps(tokens, schedule), dtype=np.int64)
    N, L = len(steps), params.L
    U = rng.random((N + 1, L))
    nh = params.J + (L if read_gain else 0)
    if algorithm == "uoro":
        if sign_rng is None:
            sign_rng = rng.spawn(1)[0]
        NU = np.where(sign_rng.random((N, nh)) < 0.5, -1.0, 1.0)
    else:
        NU = np.zeros((1, nh))
    LW = np.ones(N) if loss_weights is None else np.asarray(loss_weights, dtype=float)
    if LW.shape != (N,):
        raise InputError("loss_weights needs one entry per effective step")
    Ws, Wa = params.flat_views()
    return _gradient(np.ascontiguousarray(Ws), np.ascontiguousarray(Wa), params.b_s, params.b_a,
                     params.W_o, params.b_o, params.order == "third", params.start, steps, int(label),
                     U, NU, ALGO_CODES[algorithm], int(window), float(read_gain), LW)
