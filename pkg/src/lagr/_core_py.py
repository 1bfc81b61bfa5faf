"""Pure-Python implementation of the hot kernels.

Mirrors ``_core.pyx`` operation for operation so the two backends agree to
rounding.  Everything here works on the *group-major* ordering where group
``j`` occupies entries ``3j, 3j+1, 3j+2``.
"""
import math

import numpy as np

from .errors import NumericalError

ROOT_TOL = 1e-12
MAX_ROOT_ITER = 200


def _epanechnikov(x):
    return 0.75 * (1.0 - x * x) if x < 1.0 else 0.0


def group_update(evals, evecs, b, phi):
    """Minimise ``0.5 z'Az - b'z + phi*||z||`` over a 3-vector ``z``.

    ``A`` is given through its eigen-decomposition ``evecs @ diag(evals) @ evecs.T``.
    """
    a0, a1, a2 = float(evals[0]), float(evals[1]), float(evals[2])
    amin = min(a0, a1, a2)
    amax = max(a0, a1, a2)
    if amin <= 0.0:
        raise NumericalError("group block is not positive definite (min eigenvalue %.3g)" % amin)
    b0, b1, b2 = float(b[0]), float(b[1]), float(b[2])
    q = evecs
    # coordinates of b in the eigenbasis
    c0 = q[0, 0] * b0 + q[1, 0] * b1 + q[2, 0] * b2
    c1 = q[0, 1] * b0 + q[1, 1] * b1 + q[2, 1] * b2
    c2 = q[0, 2] * b0 + q[1, 2] * b1 + q[2, 2] * b2
    out = np.zeros(3)
    if phi == 0.0:
        f0, f1, f2 = c0 / a0, c1 / a1, c2 / a2
    else:
        nb = math.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
        if nb <= phi:
            return out
        s0, s1, s2 = c0 * c0, c1 * c1, c2 * c2
        lo = (nb - phi) / amax
        hi = (nb - phi) / amin
        t = lo
        for _ in range(MAX_ROOT_ITER):
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
            tn = t - g / dg if dg < 0.0 else 0.5 * (lo + hi)
            if not (lo < tn < hi):
                tn = 0.5 * (lo + hi)
            if abs(tn - t) <= ROOT_TOL * tn or hi - lo <= ROOT_TOL * hi:
                t = tn
                break
            t = tn
        f0 = c0 * t / (a0 * t + phi)
        f1 = c1 * t / (a1 * t + phi)
        f2 = c2 * t / (a2 * t + phi)
    out[0] = q[0, 0] * f0 + q[0, 1] * f1 + q[0, 2] * f2
    out[1] = q[1, 0] * f0 + q[1, 1] * f1 + q[1, 2] * f2
    out[2] = q[2, 0] * f0 + q[2, 1] * f1 + q[2, 2] * f2
    return out


def bcd_solve(G, c, phi, evals, evecs, zeta, half_yWy, tol, max_sweeps):
    """Cyclic blockwise coordinate descent on ``0.5 z'Gz - c'z + sum phi_j ||z_j||``.

    Returns ``(zeta, trace, sweeps, converged)``; ``trace`` holds the full
    objective (including ``half_yWy``) after every sweep.
    """
    G = np.asarray(G, dtype=float)
    c = np.asarray(c, dtype=float)
    z = np.array(zeta, dtype=float)
    m = len(phi)
    trace = []
    converged = False
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        r = c - G @ z
        maxdelta = 0.0
        for j in range(m):
            sl = slice(3 * j, 3 * j + 3)
            zj = z[sl]
            b = r[sl] + G[sl, sl] @ zj
            new = group_update(evals[j], evecs[j], b, phi[j])
            delta = new - zj
            dmax = float(np.max(np.abs(delta)))
            if dmax > 0.0:
                r -= G[:, sl] @ delta
                z[sl] = new
                if dmax > maxdelta:
                    maxdelta = dmax
        r = c - G @ z
        pen = 0.0
        for j in range(m):
            if phi[j] != 0.0:
                zj = z[3 * j:3 * j + 3]
                pen += phi[j] * math.sqrt(zj[0] * zj[0] + zj[1] * zj[1] + zj[2] * zj[2])
        obj = -0.5 * float(z @ (c + r)) + half_yWy + pen
        trace.append(obj)
        if maxdelta < tol:
            converged = True
            break
    return z, np.asarray(trace), sweeps, converged


def nn_bandwidth(dist, target, lo, hi, max_expand=60, max_iter=200):
    """Largest ``h`` in the bracket with ``mean(K(dist/h)) <= target``.

    ``K`` is the Epanechnikov profile.  The ratio is nondecreasing in ``h``;
    ``hi`` is doubled until it overshoots the target.  Returns ``lo`` when
    the ratio already exceeds the target at the lower end of the bracket.
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]

    def ratio(h):
        x = dist / h
        return float(np.sum(np.where(x < 1.0, 0.75 * (1.0 - x * x), 0.0))) / n

    if ratio(lo) > target:
        return lo
    expand = 0
    while ratio(hi) <= target:
        if expand >= max_expand:
            raise NumericalError("bandwidth bracket not found after %d expansions" % max_expand)
        lo = hi
        hi *= 2.0
        expand += 1
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if ratio(mid) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * hi:
            break
    return lo
