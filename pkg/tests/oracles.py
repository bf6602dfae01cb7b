"""Independent reference implementations used by the tests.

These deliberately avoid the package's vectorised code paths: explicit
loops over risk sets and observations, and grid search followed by a
hand-written Newton polish.
"""
import math

import numpy as np


def cox_loglik_enumerated(b, time, event, w_arm):
    """Breslow partial log-likelihood for a single covariate by explicit risk-set enumeration."""
    total = 0.0
    n = len(time)
    for i in range(n):
        if not event[i]:
            continue
        denom = 0.0
        for j in range(n):
            if time[j] >= time[i]:
                denom += math.exp(b * w_arm[j])
        total += b * w_arm[i] - math.log(denom)
    return total


def grid_maximize(f, lo=-6.0, hi=6.0, points=1201, rounds=8):
    """Maximise a unimodal scalar function by repeatedly refined grids."""
    for _ in range(rounds):
        xs = np.linspace(lo, hi, points)
        vals = [f(x) for x in xs]
        k = int(np.argmax(vals))
        step = xs[1] - xs[0]
        lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, points - 1)]
        if step < 1e-12:
            break
    return 0.5 * (lo + hi)


def logistic_loglik(beta, Z, y):
    total = 0.0
    for zi, yi in zip(Z, y):
        eta = sum(b * z for b, z in zip(beta, zi))
        total += yi * eta - math.log1p(math.exp(eta)) if eta < 30 else yi * eta - eta
    return total


def logistic_oracle(X, y, grid=np.linspace(-4, 4, 33)):
    """Coarse grid over all coefficients, then Newton polish with loop-computed derivatives."""
    n = len(y)
    Z = [[1.0, *row] for row in np.asarray(X, dtype=float).tolist()]
    p = len(Z[0])
    best, best_val = None, -math.inf
    mesh = np.meshgrid(*([grid] * p), indexing="ij")
    for beta in zip(*(m.ravel() for m in mesh)):
        v = logistic_loglik(beta, Z, y)
        if v > best_val:
            best, best_val = list(beta), v
    beta = best
    for _ in range(100):
        g = [0.0] * p
        H = [[0.0] * p for _ in range(p)]
        for i in range(n):
            eta = sum(b * z for b, z in zip(beta, Z[i]))
            mu = 1.0 / (1.0 + math.exp(-eta))
            for a in range(p):
                g[a] += (y[i] - mu) * Z[i][a]
                for c in range(p):
                    H[a][c] += mu * (1 - mu) * Z[i][a] * Z[i][c]
        step = np.linalg.solve(np.array(H), np.array(g))
        beta = [b + s for b, s in zip(beta, step)]
        if max(abs(s) for s in step) < 1e-13:
            break
    return np.array(beta)
