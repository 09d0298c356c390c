"""Compiled inner loops: periodic two-channel filter banks and CSR products.

Filter-bank arrays are 3D ``(batch, rows, cols)``; ``*_last`` kernels filter
along axis 2 and ``*_mid`` kernels along axis 1. Synthesis kernels accumulate
into their (zeroed) output.
"""

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True, fastmath=False)


@_jit
def analyze_last(x, h, g, a, d):
    nb_, nr, n = x.shape
    half = n // 2
    L = h.shape[0]
    # outputs whose taps stay inside [0, n) skip the periodic wrap
    inner = max(0, min(half, (n - L) // 2 + 1))
    for b in range(nb_):
        for r in range(nr):
            xr = x[b, r]
            ar = a[b, r]
            dr = d[b, r]
            ar[:] = 0.0
            dr[:] = 0.0
            # tap-outer order lets the interior vectorize
            for k in range(L):
                hk = h[k]
                gk = g[k]
                for i in range(inner):
                    v = xr[2 * i + k]
                    ar[i] += hk * v
                    dr[i] += gk * v
            for i in range(inner, half):
                sa = 0.0
                sd = 0.0
                base = 2 * i
                for k in range(L):
                    v = xr[(base + k) % n]
                    sa += h[k] * v
                    sd += g[k] * v
                a[b, r, i] = sa
                d[b, r, i] = sd


@_jit
def analyze_mid(x, h, g, a, d):
    nb_, n, nc = x.shape
    half = n // 2
    L = h.shape[0]
    for b in range(nb_):
        for i in range(half):
            ai = a[b, i]
            di = d[b, i]
            ai[:] = 0.0
            di[:] = 0.0
            for k in range(L):
                row = 2 * i + k
                if row >= n:
                    row %= n
                xk = x[b, row]
                hk = h[k]
                gk = g[k]
                for c in range(nc):
                    v = xk[c]
                    ai[c] += hk * v
                    di[c] += gk * v


@_jit
def synthesize_last(a, d, h, g, x):
    nb_, nr, half = a.shape
    n = 2 * half
    L = h.shape[0]
    inner = max(0, min(half, (n - L) // 2 + 1))
    for b in range(nb_):
        for r in range(nr):
            xr = x[b, r]
            ar = a[b, r]
            dr = d[b, r]
            for k in range(L):
                hk = h[k]
                gk = g[k]
                for i in range(inner):
                    xr[2 * i + k] += hk * ar[i] + gk * dr[i]
            for i in range(inner, half):
                av = ar[i]
                dv = dr[i]
                base = 2 * i
                for k in range(L):
                    xr[(base + k) % n] += h[k] * av + g[k] * dv


@_jit
def synthesize_mid(a, d, h, g, x):
    nb_, half, nc = a.shape
    n = 2 * half
    L = h.shape[0]
    for b in range(nb_):
        for i in range(half):
            ai = a[b, i]
            di = d[b, i]
            for k in range(L):
                row = 2 * i + k
                if row >= n:
                    row %= n
                xk = x[b, row]
                hk = h[k]
                gk = g[k]
                for c in range(nc):
                    xk[c] += hk * ai[c] + gk * di[c]


@_jit
def csr_matvec(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for r in range(n):
        s = 0.0
        for p in range(indptr[r], indptr[r + 1]):
            s += data[p] * x[indices[p]]
        out[r] = s


@_jit
def csr_rmatvec(indptr, indices, data, x, out):
    """out = A^T x for CSR ``A``."""
    for c in range(out.shape[0]):
        out[c] = 0.0
    n = indptr.shape[0] - 1
    for r in range(n):
        xr = x[r]
        if xr == 0.0:
            continue
        for p in range(indptr[r], indptr[r + 1]):
            out[indices[p]] += data[p] * xr


@_jit
def dwt2_forward(x, h, g, levels, out):
    """Full multilevel 2D analysis of ``x`` (batch, rows, cols) into ``out`` (batch, dim).

    Coefficients land in the canonical order: coarsest approximation first,
    then (h, v, d) per level from coarse to fine.
    """
    nb_, nr0, nc0 = x.shape
    for b in range(nb_):
        cur = x[b : b + 1].copy()
        nr, nc = nr0, nc0
        for _ in range(levels):
            r2, c2 = nr // 2, nc // 2
            s = r2 * c2
            lo = np.empty((1, nr, c2))
            hi = np.empty((1, nr, c2))
            analyze_last(cur, h, g, lo, hi)
            ll = np.empty((1, r2, c2))
            bh = np.empty((1, r2, c2))
            bv = np.empty((1, r2, c2))
            bd = np.empty((1, r2, c2))
            analyze_mid(lo, h, g, ll, bh)
            analyze_mid(hi, h, g, bv, bd)
            out[b, s : 2 * s] = bh.ravel()
            out[b, 2 * s : 3 * s] = bv.ravel()
            out[b, 3 * s : 4 * s] = bd.ravel()
            cur = ll
            nr, nc = r2, c2
        out[b, : nr * nc] = cur.ravel()


@_jit
def dwt2_inverse(c, h, g, levels, nr0, nc0, x):
    """Inverse of :func:`dwt2_forward`; ``x`` is (batch, rows, cols)."""
    nb_ = c.shape[0]
    for b in range(nb_):
        nr, nc = nr0 >> levels, nc0 >> levels
        s = nr * nc
        cur = c[b, :s].copy().reshape((1, nr, nc))
        for _ in range(levels):
            s = nr * nc
            bh = c[b, s : 2 * s].copy().reshape((1, nr, nc))
            bv = c[b, 2 * s : 3 * s].copy().reshape((1, nr, nc))
            bd = c[b, 3 * s : 4 * s].copy().reshape((1, nr, nc))
            lo = np.zeros((1, 2 * nr, nc))
            hi = np.zeros((1, 2 * nr, nc))
            synthesize_mid(cur, bh, h, g, lo)
            synthesize_mid(bv, bd, h, g, hi)
            nxt = np.zeros((1, 2 * nr, 2 * nc))
            synthesize_last(lo, hi, h, g, nxt)
            cur = nxt
            nr, nc = 2 * nr, 2 * nc
        x[b] = cur[0]


@_jit
def theta_apply2d(x, h, g, levels, indptr, indices, data, transpose, out):
    """``out = W^T M W x`` (or ``W^T M^T W x``) for one 2D image in a single call."""
    nr, nc = x.shape
    c = np.empty((1, nr * nc))
    dwt2_forward(x.reshape((1, nr, nc)), h, g, levels, c)
    y = np.empty((1, nr * nc))
    if transpose:
        csr_rmatvec(indptr, indices, data, c[0], y[0])
    else:
        csr_matvec(indptr, indices, data, c[0], y[0])
    dwt2_inverse(y, h, g, levels, nr, nc, out.reshape((1, nr, nc)))
