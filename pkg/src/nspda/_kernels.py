"""Compiled inner loops.  Each kernel mirrors a numpy reference elsewhere in the
package and is tested against it; they exist only for speed."""

from __future__ import annotations

import numpy as np
from numba import njit

A1_LO, A1_HI = 0.0001, 0.008
A2_LO, A2_HI = 0.901, 0.992
A3_LO, A3_HI = 0.025, 0.110


@njit(cache=True)
def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


@njit(cache=True)
def _fill_read(r, u, top, popped):
    L = r.shape[0]
    for k in range(L):
        r[k] = A1_LO + u[k] * (A1_HI - A1_LO)
    if popped >= 0 and popped != top:
        r[popped] = A3_LO + u[popped] * (A3_HI - A3_LO)
    if top >= 0:
        r[top] = A2_LO + u[top] * (A2_HI - A2_LO)


@njit(cache=True)
def _contract(W, z, r, l, third, out, bias):
    # out[i] = bias[i] + sum_j z[j] * sum_v W[i, j, v] * v_feature
    rows, J, V = W.shape
    L = r.shape[0]
    for i in range(rows):
        acc = bias[i]
        for j in range(J):
            zj = z[j]
            if zj == 0.0:
                continue
            t = 0.0
            if third:
                for k in range(L):
                    t += W[i, j, k * L + l] * r[k]
            else:
                for k in range(L):
                    t += W[i, j, k] * r[k]
                t += W[i, j, L + l]
            acc += zj * t
        out[i] = acc


@njit(cache=True)
def _select_action(u):
    # quantize with f and keep the largest |u| (first index on ties); returns (index, sign)
    best = -1
    sign = 0
    best_mag = -1.0
    for c in range(u.shape[0]):
        fh = 2.0 * _sigmoid(u[c]) - 1.0
        q = 0
        if fh > 0.13:
            q = 1
        elif fh < -0.09:
            q = -1
        if q != 0 and abs(u[c]) > best_mag:
            best_mag = abs(u[c])
            best = c
            sign = q
    return best, sign


@njit(cache=True)
def classify_flat(Ws, Wa, b_s, b_a, W_o, b_o, third, start, toks, offsets, U):
    """Quantized forward pass over concatenated sequences; returns final ŷ per sequence.

    Ws/Wa must already be discretized.  Sequence b reads noise rows
    offsets[b] + b .. offsets[b + 1] + b of U (one row for the initial read,
    then one per step).
    """
    B = offsets.shape[0] - 1
    J = Ws.shape[0]
    L = Wa.shape[0]
    out = np.empty(B)
    z = np.empty(J)
    s = np.empty(J)
    u = np.empty(L)
    r = np.empty(L)
    for b in range(B):
        T = offsets[b + 1] - offsets[b]
        row = offsets[b] + b
        stack = np.empty(T + 1, dtype=np.int64)
        depth = 0
        for j in range(J):
            z[j] = 0.0
        z[start] = 1.0
        _fill_read(r, U[row], -1, -1)
        for t in range(T):
            l = toks[offsets[b] + t]
            _contract(Ws, z, r, l, third, s, b_s)
            _contract(Wa, z, r, l, third, u, b_a)
            for j in range(J):
                z[j] = 1.0 if _sigmoid(s[j]) > 0.5 else 0.0
            c, sign = _select_action(u)
            popped = -1
            if sign > 0:
                depth += 1
                stack[depth] = c
            elif sign < 0 and depth > 0:
                popped = stack[depth]
                depth -= 1
            top = stack[depth] if depth > 0 else -1
            _fill_read(r, U[row + t + 1], top, popped)
        acc = b_o
        for j in range(J):
            acc += W_o[j] * z[j]
        out[b] = _sigmoid(acc)
    return out
