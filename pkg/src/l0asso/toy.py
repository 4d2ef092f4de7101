"""Convex least-squares toy for checking the penalty method's guarantees.

A single bias-free linear layer ``W`` (m x d) is fit by least squares on
full-batch data. With V fixed, the W-block of F_beta is strongly convex, so
it can be minimized to high accuracy with Newton's method; together with
the exact V update this realizes exact alternating block minimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import regularizers as reg
from .model import LayerParams, NetworkParams, extract_groups
from .optim import PenaltyState, f_beta_value, inner_step_V, loss_and_grads


@dataclass
class LeastSquaresToy:
    x: np.ndarray
    y: np.ndarray
    net: NetworkParams

    @classmethod
    def make(cls, n=100, d=8, m=3, seed=0, noise=0.1, grouping="output"):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, d))
        w_true = rng.choice([-1.0, 0.0, 1.0], size=(m, d), p=[0.35, 0.3, 0.35])
        y = x @ w_true.T + noise * rng.normal(size=(n, m))
        w0 = 0.1 * rng.normal(size=(m, d))
        layer = LayerParams("affine", w0, None, 0, relu=False)
        return cls(x, y, NetworkParams([layer], "toy-linear", grouping))

    @property
    def partition(self):
        return extract_groups(self.net, self.net.grouping)

    @property
    def weight(self):
        return self.net.layers[0].weight

    def loss(self, w):
        r = self.x @ w.T - self.y
        return 0.5 * float(np.sum(r * r)) / len(self.x)

    def f_beta(self, w, v, lam, beta):
        return f_beta_value(self.loss(w), [w], [v], lam, beta, self.partition)

    def block_gradient(self, w, v, lam, beta):
        """Gradient of F_beta in W (GL part requires nonzero groups)."""
        probe = self.net.copy()
        probe.layers[0].weight = w
        _, (g,) = loss_and_grads(probe, self.x, self.y, loss="mse")
        return g + lam * reg.group_lasso_subgrad(w, self.partition.layers[0]) + beta * (w - v)

    def _block_hessian(self, w, lam, beta):
        m, d = w.shape
        H = np.kron(np.eye(m), self.x.T @ self.x / len(self.x)) + beta * np.eye(m * d)
        groups = self.partition.layers[0]
        flat = w.reshape(-1)
        for idx in groups.index_sets():
            wg = flat[idx]
            nrm = np.linalg.norm(wg)
            if nrm > 0:
                c = lam * np.sqrt(idx.size)
                H[np.ix_(idx, idx)] += c * (np.eye(idx.size) / nrm - np.outer(wg, wg) / nrm ** 3)
        return H

    def solve_w_block(self, v, lam, beta, w0, tol=1e-9, max_iter=100):
        """Damped Newton on W -> F_beta(V, W) until ||grad|| < tol.

        Returns ``(w, grad_norm)``.
        """
        w = w0.copy()
        f = self.f_beta(w, v, lam, beta)
        g = self.block_gradient(w, v, lam, beta)
        for _ in range(max_iter):
            gnorm = float(np.linalg.norm(g))
            if gnorm < tol:
                break
            step = np.linalg.solve(self._block_hessian(w, lam, beta), g.reshape(-1)).reshape(w.shape)
            # near the optimum the decrease in f drops below its rounding
            # error, so a step that shrinks the gradient is also accepted
            t = 1.0
            while t > 1e-12:
                cand = w - t * step
                fc = self.f_beta(cand, v, lam, beta)
                gc = self.block_gradient(cand, v, lam, beta)
                if fc <= f or np.linalg.norm(gc) < gnorm:
                    break
                t *= 0.5
            w, f, g = cand, fc, gc
        return w, float(np.linalg.norm(g))


def exact_alternation(toy, state, tol=1e-9):
    """W <- argmin_W F_beta(V, W), then V <- argmin_V F_beta(V, W)."""
    w, gnorm = toy.solve_w_block(state.aux[0], state.lam, state.beta, toy.weight, tol)
    toy.net.layers[0].weight = w
    inner_step_V(state)
    state.k += 1
    return gnorm


def make_state(toy, lam, beta):
    state = PenaltyState(net=toy.net, aux=[], lam=lam, beta=beta, sigma=2.0, lr=0.0,
                         partition=toy.partition)
    inner_step_V(state)
    return state


def alternating_minimization(toy, lam, beta, alternations, tol=1e-9):
    """Exact block minimization at fixed beta; returns the F_beta sequence.

    The first entry is F_beta at the starting point.
    """
    state = make_state(toy, lam, beta)
    values = [toy.f_beta(toy.weight, state.aux[0], lam, beta)]
    grad_norms = []
    for _ in range(alternations):
        grad_norms.append(exact_alternation(toy, state, tol))
        values.append(toy.f_beta(toy.weight, state.aux[0], lam, beta))
    return values, grad_norms


def penalty_decomposition(toy, lam, beta0, sigma, outer, inner=50, tol=1e-9):
    """Outer loop with beta <- sigma*beta, exact alternations inside.

    Each outer iteration alternates until V stops changing and W moves less
    than 1e-13 (or ``inner`` alternations). Returns one dict per outer
    iteration, taken at its end, before beta is escalated.
    """
    state = make_state(toy, lam, beta0)
    state.sigma = sigma
    history = []
    for j in range(outer):
        if j:
            state.escalate()
        for _ in range(inner):
            w_prev, v_prev = toy.weight.copy(), state.aux[0].copy()
            exact_alternation(toy, state, tol)
            if np.array_equal(v_prev, state.aux[0]) and np.max(np.abs(toy.weight - w_prev)) < 1e-13:
                break
        gap = toy.weight - state.aux[0]
        history.append({
            "outer": state.j,
            "beta": state.beta,
            "gap_sq": float(np.sum(gap * gap)),
            "gap_inf": float(np.max(np.abs(gap))),
            "f_beta": toy.f_beta(toy.weight, state.aux[0], lam, state.beta),
            "nonzeros": reg.l0_count(state.aux[0]),
        })
    return history, state
