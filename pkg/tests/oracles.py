"""Independent reference minimisers used by the test suite."""
import itertools

import numpy as np
from scipy import optimize


def support_enumeration_min(smooth, phi, p, rng, starts=4, free=(0,), scale=1.0):
    """Global minimum of ``smooth(z) + sum_j phi_j ||z_j||`` for convex ``smooth``.

    ``smooth(z)`` returns ``(value, gradient)`` for a block-ordered ``z`` of
    length ``3p``.  The penalized objective is differentiable wherever every
    group in a given "support" is nonzero, so each support is minimised by
    BFGS with an analytic gradient from several random starts (groups off
    the support fixed at zero).  The best value over all supports is the
    global minimum.  ``free`` groups are always in the support.
    """
    pen = [j for j in range(p) if j not in free]
    best = (np.inf, None)
    for k in range(len(pen) + 1):
        for extra in itertools.combinations(pen, k):
            groups = sorted(set(free) | set(extra))
            if any(not np.isfinite(phi[j]) for j in groups):
                continue
            cols = np.array([[j, p + j, 2 * p + j] for j in groups]).T.ravel()
            ph = np.array([phi[j] for j in groups])
            m = len(groups)

            def fg(x):
                z = np.zeros(3 * p)
                z[cols] = x
                val, grad = smooth(z)
                xs = x.reshape(3, m)
                nrm = np.linalg.norm(xs, axis=0)
                with np.errstate(invalid="ignore", divide="ignore"):
                    u = np.where(nrm > 0, xs / nrm, 0.0)
                return val + float(ph @ nrm), grad[cols] + (ph * u).ravel()

            for _ in range(starts):
                x0 = scale * rng.normal(size=cols.size)
                r = optimize.minimize(fg, x0, jac=True, method="BFGS", options=dict(gtol=1e-12, maxiter=5000))
                if r.fun < best[0]:
                    z = np.zeros(3 * p)
                    z[cols] = r.x
                    best = (r.fun, z)
    return best


def gaussian_smooth(G, c, const):
    """``0.5 z'Gz - c'z + const`` with its gradient."""
    return lambda z: (0.5 * z @ G @ z - c @ z + const, G @ z - c)


def poisson_smooth(Z, w, y):
    """Negative weighted Poisson quasi-likelihood ``sum w (exp(eta) - y eta)``."""
    def f(z):
        eta = Z @ z
        mu = np.exp(np.minimum(eta, 30.0))
        return float(np.sum(w * (mu - y * eta))), Z.T @ (w * (mu - y))
    return f
