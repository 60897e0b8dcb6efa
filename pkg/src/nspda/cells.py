"""Differentiable one-step views of the recurrent models.

A cell exposes what the gradient procedures need from one time step: the
state Jacobian, the immediate parameter Jacobian (dense or as a
vector-Jacobian product) and the output derivatives.  All quantities refer to
the flat parameter vector of the model (``params.to_vector()`` order).

The NSPDA hidden vector is z alone when reads are treated as exogenous (the
default).  With a nonzero ``read_gain`` c the read vector joins the hidden
vector and gets a straight-through derivative: its value is the actual stack
read, but it is differentiated as if it were ``c * f_hat(u)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, ModelState, f, g_hat, initial_state
from .stack import ALPHA_POPPED, ALPHA_TOP, apply_action, arbitrate_action, noise_uniforms, read_from_uniforms

# gain that maps f_hat in [-1, 1] onto roughly the spread between a top read
# and a just-popped read
STRAIGHT_THROUGH_GAIN = ((ALPHA_TOP[0] + ALPHA_TOP[1]) - (ALPHA_POPPED[0] + ALPHA_POPPED[1])) / 4.0


@dataclass
class StepCache:
    h: np.ndarray          # hidden vector after the step
    yhat: float
    data: dict


class NSPDACell:
    def __init__(self, params: ModelParams, read_gain: float = 0.0, noise: str = "sample"):
        self.params = params
        self.c = float(read_gain)
        self.noise = noise
        self.J, self.L, self.V = params.J, params.L, params.V
        self.Ws, self.Wa = params.flat_views()
        self.n_hidden = self.J + (self.L if self.c else 0)
        self.n_params = params.n_params
        J, L, V = self.J, self.L, self.V
        self.o_Ws = 0
        self.o_Wa = J * J * V
        self.o_bs = self.o_Wa + L * J * V
        self.o_ba = self.o_bs + J
        self.o_Wo = self.o_ba + L
        self.o_bo = self.o_Wo + J
        self._eye = np.eye(L)
        D = np.zeros((L, V, L))  # D[l] = dv/dr for input l
        for l in range(L):
            for k in range(L):
                D[l, k * L + l if params.order == "third" else k, k] = 1.0
        self._D = D

    def start(self, rng) -> ModelState:
        return initial_state(self.params, rng, self.noise)

    def hidden(self, state: ModelState) -> np.ndarray:
        return np.concatenate([state.z, state.r]) if self.c else state.z.copy()

    def forward(self, state: ModelState, l: int, rng) -> tuple[ModelState, StepCache]:
        p = self.params
        z, r = state.z, state.r
        x = self._eye[l]
        v = np.outer(r, x).ravel() if p.order == "third" else np.concatenate([r, x])
        A_s = self.Ws @ v
        A_a = self.Wa @ v
        s = A_s @ z + p.b_s
        u = A_a @ z + p.b_a
        zn = g_hat(s)
        su = g_hat(u)
        a = arbitrate_action(u, f(u))
        stack, popped = apply_action(state.stack, a)
        rn = read_from_uniforms(stack.top, popped, noise_uniforms(self.L, self.noise, rng))
        yhat = float(g_hat(p.W_o @ zn + p.b_o))
        new = ModelState(zn, stack, rn, a, state.t + 1, popped)
        data = dict(z=z, v=v, l=l, A_s=A_s, A_a=A_a, gp=zn * (1 - zn), fp=2 * su * (1 - su), zn=zn)
        return new, StepCache(self.hidden(new), yhat, data)

    # -- Jacobians ---------------------------------------------------------

    def state_jacobian(self, cache: StepCache) -> np.ndarray:
        d = cache.data
        Jzz = d["gp"][:, None] * d["A_s"]
        if not self.c:
            return Jzz
        D = self._D[d["l"]]
        z = d["z"]
        dsdr = np.einsum("ijv,j->iv", self.Ws, z) @ D
        dudr = np.einsum("ijv,j->iv", self.Wa, z) @ D
        top = np.hstack([Jzz, d["gp"][:, None] * dsdr])
        bottom = np.hstack([self.c * d["fp"][:, None] * d["A_a"], self.c * d["fp"][:, None] * dudr])
        return np.vstack([top, bottom])

    def param_jacobian(self, cache: StepCache) -> np.ndarray:
        d = cache.data
        J, L, V = self.J, self.L, self.V
        M = np.zeros((self.n_hidden, self.n_params))
        zv = np.outer(d["z"], d["v"]).ravel()
        for i in range(J):
            base = self.o_Ws + i * J * V
            M[i, base : base + J * V] = d["gp"][i] * zv
            M[i, self.o_bs + i] = d["gp"][i]
        if self.c:
            for i in range(L):
                base = self.o_Wa + i * J * V
                M[J + i, base : base + J * V] = self.c * d["fp"][i] * zv
                M[J + i, self.o_ba + i] = self.c * d["fp"][i]
        return M

    def vjp_params(self, cache: StepCache, w: np.ndarray) -> np.ndarray:
        """w^T (d h' / d theta) for the immediate dependence."""
        d = cache.data
        out = np.zeros(self.n_params)
        zv = np.outer(d["z"], d["v"]).ravel()
        a = w[: self.J] * d["gp"]
        out[self.o_Ws : self.o_Wa] = np.outer(a, zv).ravel()
        out[self.o_bs : self.o_ba] = a
        if self.c:
            b = self.c * w[self.J :] * d["fp"]
            out[self.o_Wa : self.o_bs] = np.outer(b, zv).ravel()
            out[self.o_ba : self.o_Wo] = b
        return out

    def output_grads(self, cache: StepCache) -> tuple[np.ndarray, np.ndarray]:
        """(d ŷ / d h', direct d ŷ / d theta)."""
        y = cache.yhat
        s = y * (1 - y)
        dh = np.zeros(self.n_hidden)
        dh[: self.J] = s * self.params.W_o
        dth = np.zeros(self.n_params)
        dth[self.o_Wo : self.o_bo] = s * cache.data["zn"]
        dth[self.o_bo] = s
        return dh, dth
