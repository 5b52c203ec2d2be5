"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np


def brute_force_dual(K, y, C, feas_tol=1e-10):
    """Exact maximum of the C-SVC dual for a handful of points.

    Every variable is assigned to {0, C, free}; for each assignment the
    stationarity conditions of the free variables plus the equality
    constraint form a linear system.  With a positive definite kernel the
    optimum is the best feasible solution over all assignments.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    Q = np.outer(y, y) * K
    best, best_alpha = -np.inf, None
    for assign in itertools.product((0, 1, 2), repeat=n):
        assign = np.array(assign)
        free = np.flatnonzero(assign == 2)
        alpha = np.where(assign == 1, C, 0.0).astype(float)
        if free.size == 0:
            if abs(alpha @ y) > feas_tol:
                continue
        else:
            fixed = np.flatnonzero(assign != 2)
            nf = free.size
            A = np.zeros((nf + 1, nf + 1))
            A[:nf, :nf] = Q[np.ix_(free, free)]
            A[:nf, nf] = y[free]
            A[nf, :nf] = y[free]
            rhs = np.empty(nf + 1)
            rhs[:nf] = 1.0 - Q[np.ix_(free, fixed)] @ alpha[fixed]
            rhs[nf] = -(y[fixed] @ alpha[fixed])
            try:
                sol = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                continue
            a_free = sol[:nf]
            if np.any(a_free < -feas_tol) or np.any(a_free > C + feas_tol):
                continue
            alpha[free] = np.clip(a_free, 0, C)
        obj = alpha.sum() - 0.5 * alpha @ Q @ alpha
        if obj > best:
            best, best_alpha = obj, alpha
    return best, best_alpha
