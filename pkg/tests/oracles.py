"""Independent reference implementations: dense matrices built in plain numpy."""

import math

import numpy as np


def level_matrices(n, h, g):
    """One periodic analysis level as two (n/2, n) matrices."""
    a = np.zeros((n // 2, n))
    d = np.zeros((n // 2, n))
    for i in range(n // 2):
        for k in range(len(h)):
            a[i, (2 * i + k) % n] += h[k]
            d[i, (2 * i + k) % n] += g[k]
    return a, d


def oracle_2d(x, fam, levels):
    cur = x
    details = []
    for _ in range(levels):
        ar, dr = level_matrices(cur.shape[0], fam.h, fam.g)
        ac, dc = level_matrices(cur.shape[1], fam.h, fam.g)
        lo, hi = cur @ ac.T, cur @ dc.T
        details.append((dr @ lo, ar @ hi, dr @ hi))  # h, v, d
        cur = ar @ lo
    parts = [cur.ravel()]
    for bh, bv, bd in reversed(details):
        parts += [bh.ravel(), bv.ravel(), bd.ravel()]
    return np.concatenate(parts)


def oracle_1d(x, fam, levels):
    cur = x
    details = []
    for _ in range(levels):
        a, d = level_matrices(len(cur), fam.h, fam.g)
        details.append(d @ cur)
        cur = a @ cur
    return np.concatenate([cur] + details[::-1])


def analysis_matrix(shape, fam, levels):
    """W with W @ x.ravel() = coefficients; its rows are the atoms."""
    dim = math.prod(shape)
    f = oracle_2d if len(shape) == 2 else oracle_1d
    cols = [f(np.eye(dim)[i].reshape(shape), fam, levels) for i in range(dim)]
    return np.array(cols).T


def dense_blur(spec):
    """H assembled entry by entry through kernel_eval."""
    from wavblur.blurop import kernel_eval

    coords = list(np.ndindex(*spec.shape))
    return np.array([[kernel_eval(spec, x, y) for y in coords] for x in coords])


def gram_theta(spec, fam, levels):
    """theta[r, c] = <H a_c, a_r> from explicit atoms and dense H."""
    w = analysis_matrix(spec.shape, fam, levels)
    return w @ dense_blur(spec) @ w.T


def reference_tv_solution(h, v, eps):
    """Constrained TV minimum from a generic conic solver: min TV(u) s.t. ||H u - v|| <= eps."""
    import cvxpy as cp

    n, m = v.shape
    u = cp.Variable((n, m))
    dy = cp.vec(cp.vstack([u[1:, :] - u[:-1, :], cp.reshape(u[0, :] - u[-1, :], (1, m), order="C")]), order="C")
    dx = cp.vec(cp.hstack([u[:, 1:] - u[:, :-1], cp.reshape(u[:, 0] - u[:, -1], (n, 1), order="C")]), order="C")
    tv = cp.sum(cp.norm(cp.vstack([dy, dx]), 2, axis=0))
    prob = cp.Problem(cp.Minimize(tv), [cp.norm(h @ cp.vec(u, order="C") - v.ravel(), 2) <= eps])
    prob.solve(solver="CLARABEL")
    return prob.value, u.value
