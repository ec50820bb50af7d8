"""Independent oracle implementations used only by the tests.

Everything here is written straight-line, without reference to the package
internals, so fitted/learned results can be checked against a second route:
a naive Efron partial likelihood, a nested grid maximizer, a loop-based MLP
forward pass, and central finite differences.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def efron_log_partial_likelihood(X, durations, events, beta, penalty):
    """Naive double-loop Efron log partial likelihood with ridge penalty."""
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = len(durations)
    ll = 0.0
    for tau in sorted({durations[i] for i in range(n) if events[i]}):
        dead = [i for i in range(n) if durations[i] == tau and events[i]]
        risk = [i for i in range(n) if durations[i] >= tau]
        d = len(dead)
        s_dead = sum(math.exp(float(X[i] @ beta)) for i in dead)
        s_risk = sum(math.exp(float(X[i] @ beta)) for i in risk)
        ll += sum(float(X[i] @ beta) for i in dead)
        for ell in range(d):
            ll -= math.log(s_risk - (ell / d) * s_dead)
    return ll - 0.5 * penalty * float(beta @ beta)


def grid_maximize(f, dim, span=4.0, iters=10, points=21):
    """Nested full-grid refinement of f over R^dim (dim <= 3)."""
    center = np.zeros(dim)
    for _ in range(iters):
        axes = [np.linspace(c - span, c + span, points) for c in center]
        best_val, best_pt = -math.inf, center
        for pt in itertools.product(*axes):
            val = f(np.array(pt))
            if val > best_val:
                best_val, best_pt = val, np.array(pt)
        center = best_pt
        span *= 2.0 / (points - 1) * 2.0  # keep a 2-cell margin around the best point
    return center


def brute_force_cox_beta(X, durations, events, penalty, dim):
    return grid_maximize(
        lambda b: efron_log_partial_likelihood(X, durations, events, b, penalty),
        dim,
    )


def breslow_cumhaz_at(X, durations, events, beta, t):
    """Direct Breslow cumulative baseline hazard at integer month t."""
    X = np.asarray(X, dtype=float)
    n = len(durations)
    total = 0.0
    for tau in sorted({durations[i] for i in range(n) if events[i]}):
        if tau > t:
            continue
        d = sum(1 for i in range(n) if durations[i] == tau and events[i])
        s_risk = sum(math.exp(float(X[i] @ beta)) for i in range(n) if durations[i] >= tau)
        total += d / s_risk
    return total


def mlp_forward_loops(weights, biases, x):
    """Straight-line re-implementation of the rectifier MLP forward pass."""
    h = [float(v) for v in x]
    n_layers = len(weights)
    for layer in range(n_layers):
        w, b = weights[layer], biases[layer]
        out = []
        for j in range(w.shape[1]):
            acc = b[j]
            for i in range(w.shape[0]):
                acc += h[i] * w[i, j]
            if layer < n_layers - 1:
                acc = max(0.0, acc)
            out.append(acc)
        h = out
    return np.array(h)


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at vector x."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(len(x)):
        hi = np.zeros_like(x)
        hi[i] = h
        grad[i] = (f(x + hi) - f(x - hi)) / (2.0 * h)
    return grad
