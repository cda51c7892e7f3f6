"""Independent reference computations used by the tests."""

from itertools import combinations

import numpy as np


def lp_by_vertices(R, K, rhs, allow_skip):
    """Best objective over the vertices of the round-wise polytope.

    Every inequality (x >= 0, budget rows, per-round caps) is written as
    ``G x <= h``; with ``allow_skip`` false the per-round sums are equalities
    and are always active. Each choice of ``n - n_eq`` active inequalities is
    solved, infeasible points are dropped. Returns ``None`` when empty.
    """
    R = np.asarray(R, float)
    T, A = R.shape
    K = np.asarray(K, float).reshape(T, A, -1)
    n = T * A
    budget = K.reshape(n, -1).T
    rounds = np.kron(np.eye(T), np.ones((1, A)))
    G = [-np.eye(n), budget]
    h = [np.zeros(n), np.asarray(rhs, float)]
    if allow_skip:
        G.append(rounds)
        h.append(np.ones(T))
        E, e = np.zeros((0, n)), np.zeros(0)
    else:
        E, e = rounds, np.ones(T)
    G, h = np.vstack(G), np.concatenate(h)
    need = n - E.shape[0]
    combos = list(combinations(range(G.shape[0]), need))
    subsets = np.array(combos, dtype=int).reshape(len(combos), need)
    M = np.concatenate([np.broadcast_to(E, (len(subsets),) + E.shape), G[subsets]], axis=1)
    b = np.concatenate([np.broadcast_to(e, (len(subsets), E.shape[0])), h[subsets]], axis=1)
    ok = np.abs(np.linalg.det(M)) > 1e-10
    if not ok.any():
        return None
    x = np.linalg.solve(M[ok], b[ok][..., None])[..., 0]
    feas = np.all(x @ G.T <= h + 1e-9, axis=1)
    if E.shape[0]:
        feas &= np.all(np.abs(x @ E.T - e) <= 1e-9, axis=1)
    if not feas.any():
        return None
    return float(np.max(x[feas] @ R.reshape(-1)))


def normal_equations(X, Y, eta, prior):
    """Ridge minimiser via least squares on the stacked system ``[X/sqrt(n); sqrt(eta) I]``."""
    n, d = X.shape
    lhs = np.vstack([X / np.sqrt(n), np.sqrt(eta) * np.eye(d)])
    rhs = np.vstack([Y / np.sqrt(n), np.sqrt(eta) * prior])
    return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def eg_closed_form(lam0, slack0, radius, rate, gradients):
    """Exponentiated gradient after k steps: weights scale by exp(-rate * cumulative gradient)."""
    cum = np.sum(np.asarray(gradients, float), axis=0)
    w = np.asarray(lam0, float) * np.exp(-rate * cum)
    total = w.sum() + slack0
    return radius * w / total, radius * slack0 / total
