"""Local quasi-likelihood fits for varying coefficient GLMs with canonical links.

With a canonical link the quasi-score in the linear predictor is ``y - mu``
and its derivative is ``-V(mu)``, so both the Newton pilot fit and the
penalized fit reduce to weighted least squares problems with working
weights ``w_i V(mu_i)`` and working response ``eta_i + (y_i - mu_i)/V(mu_i)``.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .design import LocalCoefficients, _normal_equations, local_problem
from .errors import ConfigurationError, InputError, NonConvergenceError, SingularDesignError
from .kernels import EPANECHNIKOV
from .solver import DEFAULT_MAX_SWEEPS, DEFAULT_TOL, FitResult, adaptive_penalties, solve_gram

ETA_MAX = 30.0
MAX_HALVINGS = 30


@dataclass(frozen=True)
class Family:
    name: str
    inverse_link: Callable
    link: Callable
    variance: Callable
    quasi: Callable  # Q(mu, y) in closed form, as a function of (eta, y)
    clamp: tuple

    def clip(self, eta):
        lo, hi = self.clamp
        return np.clip(eta, lo, hi)

    def check_response(self, y):
        y = np.asarray(y, dtype=float)
        if self.name == "poisson" and np.any(y < 0):
            raise InputError("poisson responses must be nonnegative counts")
        if self.name == "binomial" and np.any((y < 0) | (y > 1)):
            raise InputError("binomial responses must lie in [0, 1]")
        return y

    def saturated(self, y):
        """``Q(y, y)``, the per-observation maximum of the quasi-likelihood."""
        y = np.asarray(y, dtype=float)
        if self.name == "gaussian":
            return np.zeros_like(y)
        if self.name == "poisson":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(y > 0, y * np.log(y) - y, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(y > 0, y * np.log(y), 0.0)
            b = np.where(y < 1, (1 - y) * np.log1p(-y), 0.0)
        return a + b


def _binomial_q(eta, y):
    # y*eta - log(1 + e^eta), stable for large |eta|
    return y * eta - np.logaddexp(0.0, eta)


GAUSSIAN = Family(
    "gaussian",
    inverse_link=lambda eta: eta,
    link=lambda mu: mu,
    variance=lambda mu: np.ones_like(mu),
    quasi=lambda eta, y: -0.5 * (y - eta) ** 2,
    clamp=(-np.inf, np.inf),
)
POISSON = Family(
    "poisson",
    inverse_link=np.exp,
    link=np.log,
    variance=lambda mu: mu,
    quasi=lambda eta, y: y * eta - np.exp(eta),
    clamp=(-np.inf, ETA_MAX),
)
BINOMIAL = Family(
    "binomial",
    inverse_link=expit,
    link=lambda mu: np.log(mu) - np.log1p(-mu),
    variance=lambda mu: mu * (1.0 - mu),
    quasi=_binomial_q,
    clamp=(-ETA_MAX, ETA_MAX),
)
FAMILIES = {f.name: f for f in (GAUSSIAN, POISSON, BINOMIAL)}


def get_family(family):
    if isinstance(family, Family):
        return family
    try:
        return FAMILIES[str(family).lower()]
    except KeyError:
        raise ConfigurationError("unknown family %r (choose from %s)" % (family, sorted(FAMILIES))) from None


@dataclass(frozen=True)
class QEvaluation:
    q1: float
    q2: float
    mu: float


def q_eval(family, eta, y):
    """First and second derivatives of ``Q(g^-1(eta), y)`` in ``eta``."""
    fam = get_family(family)
    if not np.isfinite(eta):
        raise InputError("linear predictor must be finite")
    y = float(fam.check_response(np.array([y]))[0])
    mu = float(fam.inverse_link(fam.clip(float(eta))))
    return QEvaluation(y - mu, -float(fam.variance(mu)), mu)


def local_quasi_likelihood(zeta, Z, W, y, family):
    """``sum_i w_i Q(g^-1(z_i'zeta), y_i)``."""
    fam = get_family(family)
    z = zeta.zeta if isinstance(zeta, LocalCoefficients) else np.asarray(zeta, dtype=float)
    Zm = getattr(Z, "Z", Z)
    w = getattr(W, "weights", W)
    y = fam.check_response(y)
    eta = fam.clip(Zm @ z)
    return float(np.sum(np.asarray(w) * fam.quasi(eta, y)))


def quasi_score(zeta, Z, W, y, family):
    """Gradient ``sum_i w_i (y_i - mu_i) z_i`` of the local quasi-likelihood."""
    fam = get_family(family)
    z = zeta.zeta if isinstance(zeta, LocalCoefficients) else np.asarray(zeta, dtype=float)
    Zm = getattr(Z, "Z", Z)
    w = np.asarray(getattr(W, "weights", W))
    mu = fam.inverse_link(fam.clip(Zm @ z))
    return Zm.T @ (w * (np.asarray(y, dtype=float) - mu))


def _start(fam, y):
    if fam.name == "gaussian":
        return y.copy()
    if fam.name == "poisson":
        return np.log((y + np.mean(y)) / 2.0 + 1e-8)
    mu = (y + 0.5) / 2.0
    return np.log(mu) - np.log1p(-mu)


def pilot_glm_problem(problem, family, tol=1e-10, max_iter=100):
    """Newton-Raphson maximiser of the local quasi-likelihood on a prepared problem."""
    fam = get_family(family)
    Z, w, y = problem.Z, problem.w, fam.check_response(problem.y)
    layout = problem.layout
    if problem.n_support < Z.shape[1]:
        return problem.pilot()  # raises the degenerate-neighbourhood error
    if fam.name == "gaussian":
        return problem.pilot()
    scale = max(1.0, float(np.max(np.abs(Z.T @ (w * y)))))
    eta0 = _start(fam, y)
    V0 = fam.variance(fam.inverse_link(eta0))
    ZW = Z.T * (w * V0)
    zeta = _normal_equations(ZW @ Z, ZW @ eta0, layout)
    ell = local_quasi_likelihood(zeta, Z, w, y, fam)
    for _ in range(max_iter):
        eta = fam.clip(Z @ zeta)
        mu = fam.inverse_link(eta)
        grad = Z.T @ (w * (y - mu))
        if np.max(np.abs(grad)) <= tol * scale:
            _check_separation(fam, y, mu, problem)
            return LocalCoefficients(zeta, layout)
        V = fam.variance(mu)
        if np.any(V <= 0):
            raise NonConvergenceError("local quasi-likelihood has no interior maximiser (fitted means saturate)")
        H = (Z.T * (w * V)) @ Z
        try:
            step = _normal_equations(H, grad, layout)
        except SingularDesignError as exc:
            raise NonConvergenceError(
                "Newton step undefined at (%g, %g): %s" % (problem.center[0], problem.center[1], exc)
            ) from exc
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = zeta + t * step
            ell_new = local_quasi_likelihood(cand, Z, w, y, fam)
            if ell_new >= ell - 1e-12 * abs(ell):
                break
            t *= 0.5
        else:
            raise NonConvergenceError("step halving exhausted in local quasi-likelihood Newton iteration")
        zeta, ell = cand, ell_new
    raise NonConvergenceError("local quasi-likelihood Newton iteration did not converge in %d steps" % max_iter)


def _check_separation(fam, y, mu, problem):
    # binary responses reproduced to within 1e-6: the maximiser sits at infinity
    if fam.name == "binomial" and np.all((y == 0) | (y == 1)) and np.max(np.abs(y - mu)) < 1e-6:
        raise NonConvergenceError(
            "responses are perfectly separated near (%g, %g); the local quasi-likelihood has no finite maximiser"
            % (problem.center[0], problem.center[1])
        )


def fit_local_glm(dataset, s, bw, family, tol=1e-10, max_iter=100, kernel=EPANECHNIKOV):
    """Unpenalized local quasi-likelihood estimate at ``s``."""
    return pilot_glm_problem(local_problem(dataset, s, bw, kernel), family, tol, max_iter)


def penalized_quasi_objective(zeta, problem, phi, family):
    """``-l*(zeta) + sum_j phi_j ||zeta_j||``."""
    fam = get_family(family)
    z = zeta.zeta if isinstance(zeta, LocalCoefficients) else zeta
    ell = local_quasi_likelihood(z, problem.Z, problem.w, problem.y, fam)
    norms = problem.layout.group_norms(z)
    pen = sum(ph * nm for ph, nm in zip(phi.phi, norms) if nm > 0)
    return -ell + pen


def fit_glm_problem(problem, pilot, spec, family, tol=DEFAULT_TOL, max_outer=100,
                    max_sweeps=DEFAULT_MAX_SWEEPS, init=None):
    """LAGR penalized quasi-likelihood by iteratively reweighted group descent.

    Each outer step minimises the quadratic surrogate of the negative local
    quasi-likelihood at the current iterate with the penalty intact, then
    halves the step until the penalized objective does not increase.
    """
    fam = get_family(family)
    layout = problem.layout
    Z, w, y = problem.Z, problem.w, fam.check_response(problem.y)
    weights = adaptive_penalties(pilot, spec)
    inf_cols = np.repeat(np.isinf(weights.phi)[None, :], 3, axis=0).ravel()
    zeta = np.where(inf_cols, 0.0, pilot.zeta if init is None else np.asarray(init, dtype=float))
    F = penalized_quasi_objective(zeta, problem, weights, fam)
    trace = [F]
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        eta = fam.clip(Z @ zeta)
        mu = fam.inverse_link(eta)
        V = fam.variance(mu)
        if np.any(V <= 0):
            raise NonConvergenceError("fitted means saturate; penalized quasi-likelihood has no interior solution")
        ww = w * V
        work = eta + (y - mu) / V
        ZW = Z.T * ww
        out = solve_gram(ZW @ Z, ZW @ work, 0.5 * float(np.sum(ww * work * work)), layout, weights, zeta,
                         tol, max_sweeps)
        new = out.zeta
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = new if t == 1.0 else zeta + t * (new - zeta)
            F_new = penalized_quasi_objective(cand, problem, weights, fam)
            if F_new <= F + 1e-12 * max(1.0, abs(F)):
                break
            t *= 0.5
        else:
            break
        delta = float(np.max(np.abs(cand - zeta)))
        zeta, F = cand, min(F_new, F) if t != 1.0 else F_new
        trace.append(F_new)
        if delta < tol:
            converged = True
            break
    zh = LocalCoefficients(zeta, layout)
    return FitResult(
        zeta_hat=zh,
        active=zh.norms() > 0,
        lam=float(spec.lam),
        objective_trace=trace,
        iterations=outer,
        converged=converged,
        phi=weights,
        pilot=pilot,
        center=problem.center,
        bandwidth=problem.bandwidth,
        extra={"family": fam.name},
    )


def fit_lagr_glm(dataset, s, bw, family, spec, tol=DEFAULT_TOL, max_outer=100, kernel=EPANECHNIKOV):
    """LAGR fit for a quasi-likelihood family at ``s``."""
    problem = local_problem(dataset, s, bw, kernel)
    pilot = pilot_glm_problem(problem, family)
    return fit_glm_problem(problem, pilot, spec, family, tol, max_outer)


def glm_kkt_violation(problem, zeta, phi, family):
    """Stationarity residual with the quasi-score in place of the linear residual correlation."""
    fam = get_family(family)
    z = zeta.zeta if isinstance(zeta, LocalCoefficients) else zeta
    g = quasi_score(z, problem.Z, problem.w, problem.y, fam)
    out = np.zeros(problem.layout.p)
    ph = getattr(phi, "phi", phi)
    for j in range(problem.layout.p):
        cols = problem.layout.columns(j)
        zj, gj = z[cols], g[cols]
        nz = np.linalg.norm(zj)
        if nz > 0:
            out[j] = np.linalg.norm(gj - ph[j] * zj / nz)
        elif np.isfinite(ph[j]):
            out[j] = max(0.0, np.linalg.norm(gj) - ph[j])
    return out
