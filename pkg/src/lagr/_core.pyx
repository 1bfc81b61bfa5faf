# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_core_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

from .errors import NumericalError

cnp.import_array()

cdef double ROOT_TOL = 1e-12
cdef int MAX_ROOT_ITER = 200


cdef int _group_solve(const double[:] a, const double[:, :] q, double b0, double b1,
                      double b2, double phi, double* out) except -1:
    cdef double a0 = a[0], a1 = a[1], a2 = a[2]
    cdef double amin = a0, amax = a0
    cdef double c0, c1, c2, f0, f1, f2, nb, s0, s1, s2, lo, hi, t, tn
    cdef double d0, d1, d2, g, dg
    cdef int it
    if a1 < amin: amin = a1
    if a2 < amin: amin = a2
    if a1 > amax: amax = a1
    if a2 > amax: amax = a2
    if amin <= 0.0:
        raise NumericalError("group block is not positive definite (min eigenvalue %.3g)" % amin)
    c0 = q[0, 0] * b0 + q[1, 0] * b1 + q[2, 0] * b2
    c1 = q[0, 1] * b0 + q[1, 1] * b1 + q[2, 1] * b2
    c2 = q[0, 2] * b0 + q[1, 2] * b1 + q[2, 2] * b2
    if phi == 0.0:
        f0 = c0 / a0
        f1 = c1 / a1
        f2 = c2 / a2
    else:
        nb = sqrt(b0 * b0 + b1 * b1 + b2 * b2)
        if nb <= phi:
            out[0] = 0.0
            out[1] = 0.0
            out[2] = 0.0
            return 0
        s0 = c0 * c0
        s1 = c1 * c1
        s2 = c2 * c2
        lo = (nb - phi) / amax
        hi = (nb - phi) / amin
        t = lo
        for it in range(MAX_ROOT_ITER):
            d0 = a0 * t + phi
            d1 = a1 * t + phi
            d2 = a2 * t + phi
            g = s0 / (d0 * d0) + s1 / (d1 * d1) + s2 / (d2 * d2) - 1.0
            if g > 0.0:
                lo = t
            elif g < 0.0:
                hi = t
            else:
                break
            dg = -2.0 * (s0 * a0 / (d0 * d0 * d0) + s1 * a1 / (d1 * d1 * d1) + s2 * a2 / (d2 * d2 * d2))
            if dg < 0.0:
                tn = t - g / dg
            else:
                tn = 0.5 * (lo + hi)
            if not (lo < tn < hi):
                tn = 0.5 * (lo + hi)
            if fabs(tn - t) <= ROOT_TOL * tn or hi - lo <= ROOT_TOL * hi:
                t = tn
                break
            t = tn
        f0 = c0 * t / (a0 * t + phi)
        f1 = c1 * t / (a1 * t + phi)
        f2 = c2 * t / (a2 * t + phi)
    out[0] = q[0, 0] * f0 + q[0, 1] * f1 + q[0, 2] * f2
    out[1] = q[1, 0] * f0 + q[1, 1] * f1 + q[1, 2] * f2
    out[2] = q[2, 0] * f0 + q[2, 1] * f1 + q[2, 2] * f2
    return 0


def group_update(evals, evecs, b, double phi):
    """Minimise ``0.5 z'Az - b'z + phi*||z||`` over a 3-vector ``z``."""
    cdef double[:] a = np.ascontiguousarray(evals, dtype=np.float64)
    cdef double[:, :] q = np.ascontiguousarray(evecs, dtype=np.float64)
    cdef double res[3]
    _group_solve(a, q, float(b[0]), float(b[1]), float(b[2]), phi, res)
    return np.array([res[0], res[1], res[2]])


cdef void _residual(const double[:, :] G, const double[:] c, const double[:] z, double[:] r) noexcept nogil:
    cdef Py_ssize_t i, k, d = z.shape[0]
    cdef double acc
    for i in range(d):
        acc = 0.0
        for k in range(d):
            acc += G[i, k] * z[k]
        r[i] = c[i] - acc


def bcd_solve(G, c, phi, evals, evecs, zeta, double half_yWy, double tol, int max_sweeps):
    """Cyclic blockwise coordinate descent; same contract as ``_core_py.bcd_solve``."""
    cdef double[:, :] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double[:, :] ev = np.ascontiguousarray(evals, dtype=np.float64)
    cdef double[:, :, :] Q = np.ascontiguousarray(evecs, dtype=np.float64)
    z_arr = np.array(zeta, dtype=np.float64)
    cdef double[:] z = z_arr
    cdef Py_ssize_t d = z.shape[0]
    cdef Py_ssize_t m = ph.shape[0]
    r_arr = np.empty(d)
    cdef double[:] r = r_arr
    trace_arr = np.empty(max(max_sweeps, 1))
    cdef double[:] trace = trace_arr
    cdef double res[3]
    cdef double b0, b1, b2, dl0, dl1, dl2, dmax, maxdelta, pen, obj, zn
    cdef Py_ssize_t j, i, o
    cdef int sweep, sweeps = 0
    cdef bint converged = False
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        _residual(Gv, cv, z, r)
        maxdelta = 0.0
        for j in range(m):
            o = 3 * j
            b0 = r[o] + Gv[o, o] * z[o] + Gv[o, o + 1] * z[o + 1] + Gv[o, o + 2] * z[o + 2]
            b1 = r[o + 1] + Gv[o + 1, o] * z[o] + Gv[o + 1, o + 1] * z[o + 1] + Gv[o + 1, o + 2] * z[o + 2]
            b2 = r[o + 2] + Gv[o + 2, o] * z[o] + Gv[o + 2, o + 1] * z[o + 1] + Gv[o + 2, o + 2] * z[o + 2]
            _group_solve(ev[j], Q[j], b0, b1, b2, ph[j], res)
            dl0 = res[0] - z[o]
            dl1 = res[1] - z[o + 1]
            dl2 = res[2] - z[o + 2]
            dmax = fabs(dl0)
            if fabs(dl1) > dmax: dmax = fabs(dl1)
            if fabs(dl2) > dmax: dmax = fabs(dl2)
            if dmax > 0.0:
                for i in range(d):
                    r[i] -= Gv[i, o] * dl0 + Gv[i, o + 1] * dl1 + Gv[i, o + 2] * dl2
                z[o] = res[0]
                z[o + 1] = res[1]
                z[o + 2] = res[2]
                if dmax > maxdelta:
                    maxdelta = dmax
        _residual(Gv, cv, z, r)
        pen = 0.0
        for j in range(m):
            if ph[j] != 0.0:
                o = 3 * j
                zn = sqrt(z[o] * z[o] + z[o + 1] * z[o + 1] + z[o + 2] * z[o + 2])
                pen += ph[j] * zn
        obj = 0.0
        for i in range(d):
            obj += z[i] * (cv[i] + r[i])
        trace[sweep] = -0.5 * obj + half_yWy + pen
        if maxdelta < tol:
            converged = True
            break
    return z_arr, trace_arr[:sweeps].copy(), sweeps, converged


def nn_bandwidth(dist, double target, double lo, double hi, int max_expand=60, int max_iter=200):
    """Largest ``h`` in the bracket with ``mean(K(dist/h)) <= target``."""
    cdef double[:] dv = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = dv.shape[0]
    cdef int expand = 0, it
    cdef double mid
    if _ratio(dv, n, lo) > target:
        return lo
    while _ratio(dv, n, hi) <= target:
        if expand >= max_expand:
            raise NumericalError("bandwidth bracket not found after %d expansions" % max_expand)
        lo = hi
        hi *= 2.0
        expand += 1
    for it in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _ratio(dv, n, mid) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * hi:
            break
    return lo


cdef double _ratio(const double[:] dv, Py_ssize_t n, double h) noexcept nogil:
    cdef Py_ssize_t i
    cdef double x, acc = 0.0
    for i in range(n):
        x = dv[i] / h
        if x < 1.0:
            acc += 0.75 * (1.0 - x * x)
    return acc / n
