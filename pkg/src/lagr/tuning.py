"""Per-location choice of the LAGR penalty by approximate degrees of freedom and AIC.

The path runs over a log-spaced grid from ``lam_max`` (every penalized group
zero) downward, warm-starting each fit from the previous solution.
"""
from dataclasses import dataclass

import numpy as np

from .design import LocalCoefficients, _normal_equations, estimate_sigma2, local_problem
from .errors import ConfigurationError, LagrError, NumericalError, TuningError
from .glm import fit_glm_problem, get_family, pilot_glm_problem, quasi_score
from .kernels import EPANECHNIKOV
from .solver import DEFAULT_MAX_SWEEPS, DEFAULT_TOL, FitResult, PenaltySpec, check_gamma, fit_problem

DEFAULT_POINTS = 50
DEFAULT_RATIO = 1e-3


@dataclass(frozen=True)
class GridSpec:
    """How to build the penalty grid: ``n_points`` log-spaced values down to ``ratio * lam_max``.

    ``lambdas`` overrides the automatic construction with an explicit list.
    """

    n_points: int = DEFAULT_POINTS
    ratio: float = DEFAULT_RATIO
    lambdas: tuple = None

    def __post_init__(self):
        if self.lambdas is not None:
            lam = np.asarray(self.lambdas, dtype=float)
            if lam.ndim != 1 or lam.size == 0 or np.any(~np.isfinite(lam)) or np.any(lam < 0):
                raise ConfigurationError("explicit lambda grid must be a nonempty list of finite values >= 0")
            object.__setattr__(self, "lambdas", tuple(float(v) for v in lam))
            return
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ConfigurationError("grid needs a positive integer number of points, got %r" % self.n_points)
        if not 0 < self.ratio < 1:
            raise ConfigurationError("grid ratio lam_min/lam_max must lie in (0, 1), got %r" % self.ratio)


@dataclass(frozen=True)
class TuningGrid:
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.size > 1 and np.any(np.diff(lam) >= 0):
            raise ConfigurationError("tuning grid must be strictly decreasing")
        object.__setattr__(self, "lambdas", lam)

    @property
    def n_points(self):
        return int(self.lambdas.size)

    @property
    def ratio(self):
        return float(self.lambdas[-1] / self.lambdas[0]) if self.lambdas[0] > 0 else float("nan")


@dataclass(eq=False)
class AicRecord:
    lam: float
    df_hat: float
    weighted_deviance: float
    aic: float
    fit: FitResult


def _intercept_only_score(problem, pilot, family):
    """Quasi-score at the best fit using the unpenalized groups alone."""
    fam = get_family(family)
    layout = problem.layout
    free = np.flatnonzero(~layout.penalized)
    zeta = np.zeros(3 * layout.p)
    if free.size:
        cols = np.concatenate([layout.columns(j) for j in free])
        if fam.name == "gaussian":
            zeta[cols] = _normal_equations(problem.G[np.ix_(cols, cols)], problem.c[cols])
        else:
            sub = _SubProblem(problem, cols)
            zeta[cols] = pilot_glm_problem(sub, fam).zeta
    if fam.name == "gaussian":
        return problem.c - problem.G @ zeta
    return quasi_score(zeta, problem.Z, problem.w, problem.y, fam)


class _SubProblem:
    """Column-restricted view of a local problem for the unpenalized-only GLM fit."""

    def __init__(self, problem, cols):
        from .design import GroupLayout

        self.Z = problem.Z[:, cols]
        self.w = problem.w
        self.y = problem.y
        self.center = problem.center
        self.layout = GroupLayout(len(cols) // 3, False)
        self.n_support = problem.n_support
        ZW = self.Z.T * self.w
        self.G = ZW @ self.Z
        self.c = ZW @ self.y

    def pilot(self):
        return LocalCoefficients(_normal_equations(self.G, self.c, self.layout), self.layout)


def lambda_max(problem, pilot, gamma, family="gaussian"):
    """Smallest penalty at which the zero-group optimality bound holds for every penalized group.

    ``max_j ||g_j|| * ||zeta_tilde_(j)||**gamma`` with ``g`` the score at
    the fit that uses only the unpenalized groups.
    """
    g = _intercept_only_score(problem, pilot, family)
    layout = problem.layout
    norms = pilot.norms()
    best = 0.0
    for j in np.flatnonzero(layout.penalized):
        if norms[j] > 0:
            best = max(best, float(np.linalg.norm(g[layout.columns(j)])) * norms[j] ** gamma)
    return best


def _fit(problem, pilot, spec, family, init=None, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS):
    if get_family(family).name == "gaussian":
        return fit_problem(problem, pilot, spec, tol, max_sweeps, init=init)
    return fit_glm_problem(problem, pilot, spec, family, tol, max_sweeps=max_sweeps, init=init)


def build_grid(problem, pilot, gamma, grid_spec=None, family="gaussian", enforce_gamma=True):
    """Construct the decreasing penalty grid and check that its top zeroes every penalized group."""
    grid_spec = grid_spec or GridSpec()
    if grid_spec.lambdas is not None:
        lam = np.array(sorted(set(grid_spec.lambdas), reverse=True))
        return TuningGrid(lam)
    top = lambda_max(problem, pilot, gamma, family)
    pen = problem.layout.penalized
    if top <= 0:
        # nothing to select (no penalized group, or all pilot norms zero)
        return TuningGrid(np.array([0.0]))
    for _ in range(20):
        fit = _fit(problem, pilot, PenaltySpec(top, gamma, enforce_gamma), family)
        if not np.any(fit.active[pen]):
            break
        top *= 1.01  # roundoff at the boundary
    else:
        raise NumericalError("lambda_max = %.6g fails to zero all penalized groups" % top)
    if grid_spec.n_points == 1:
        return TuningGrid(np.array([top]))
    return TuningGrid(np.geomspace(top, top * grid_spec.ratio, grid_spec.n_points))


def df_hat(fit, zeta_tilde, d=2):
    """Approximate degrees of freedom of an adaptive group Lasso fit.

    ``sum_j I(||zeta_hat_(j)|| > 0) + d * sum_j ||zeta_hat_(j)|| / ||zeta_tilde_(j)||``
    over penalized groups, plus ``d + 1`` for each unpenalized group.
    """
    layout = fit.zeta_hat.layout
    nh = fit.zeta_hat.norms()
    nt = zeta_tilde.norms()
    pen = layout.penalized
    act = pen & (nh > 0)
    if np.any(nt[act] <= 0):
        raise LagrError("active group with zero pilot norm; adaptive penalties should forbid this")
    total = float(np.count_nonzero(act)) + d * float(np.sum(nh[act] / nt[act]))
    return total + (d + 1) * float(np.count_nonzero(~pen))


def penalized_df(fit, zeta_tilde, d=2):
    """:func:`df_hat` without the unpenalized-group constant."""
    pen = fit.zeta_hat.layout.penalized
    return df_hat(fit, zeta_tilde, d) - (d + 1) * float(np.count_nonzero(~pen))


def _deviance(zeta, Z, w, y, sigma2, family):
    fam = get_family(family)
    if fam.name == "gaussian":
        if not sigma2 > 0:
            raise ConfigurationError("AIC needs a positive error variance, got %r" % sigma2)
        r = y - Z @ zeta
        return float(np.sum(w * r * r)) / sigma2
    eta = fam.clip(Z @ zeta)
    return 2.0 * float(np.sum(w * (fam.saturated(y) - fam.quasi(eta, y))))


def _record(fit, Z, w, y, sigma2, family, d=2):
    df = df_hat(fit, fit.pilot, d)
    a = _deviance(fit.zeta_hat.zeta, Z, w, y, sigma2, family) + 2.0 * df
    # stored so that aic - 2 df reproduces it exactly
    return AicRecord(fit.lam, df, a - 2.0 * df, a, fit)


def aic(fit, dataset, s, W, sigma2, family="gaussian"):
    """AIC record of ``fit`` at ``s`` with kernel weights ``W``.

    Gaussian: ``sum_i w_i (y_i - z_i'zeta_hat)**2 / sigma2 + 2 df_hat``.
    Other families use the weighted quasi-deviance
    ``2 sum_i w_i (Q(y_i, y_i) - Q(mu_i, y_i))`` for the first term.
    """
    from .design import augment

    w = np.asarray(getattr(W, "weights", W), dtype=float)
    Z = augment(dataset, s).Z
    return _record(fit, Z, w, dataset.y, sigma2, family)


def pilot_sigma2(problem, pilot):
    """Error variance from the unpenalized local fit, held fixed along the path."""
    df = 3.0 * problem.layout.p
    return estimate_sigma2(problem.residuals(pilot), problem.w, df)


def tune_problem(problem, gamma=2.0, grid_spec=None, family="gaussian", pilot=None, sigma2=None,
                 tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS, enforce_gamma=True):
    """AIC path on a prepared local problem; returns ``(best, path)``."""
    if enforce_gamma:
        check_gamma(gamma)
    fam = get_family(family)
    if pilot is None:
        pilot = problem.pilot() if fam.name == "gaussian" else pilot_glm_problem(problem, fam)
    if fam.name == "gaussian" and sigma2 is None:
        try:
            sigma2 = pilot_sigma2(problem, pilot)
        except LagrError as exc:
            raise TuningError("at (%g, %g): %s" % (problem.center[0], problem.center[1], exc)) from exc
        if not sigma2 > 0:
            raise TuningError(
                "pilot fit interpolates the data at (%g, %g); error variance is zero"
                % (problem.center[0], problem.center[1])
            )
    grid = build_grid(problem, pilot, gamma, grid_spec, fam, enforce_gamma)
    path = []
    init = None
    errors = []
    for lam in grid.lambdas:
        try:
            fit = _fit(problem, pilot, PenaltySpec(float(lam), gamma, enforce_gamma), fam, init, tol, max_sweeps)
        except (NumericalError, ArithmeticError) as exc:
            errors.append("lambda=%.6g: %s" % (lam, exc))
            continue
        init = fit.zeta_hat.zeta
        path.append(_record(fit, problem.Z, problem.w, problem.y, sigma2, fam))
    if not path:
        raise TuningError("every fit on the lambda grid failed: " + "; ".join(errors))
    best = path[0]
    for rec in path[1:]:
        if rec.aic < best.aic:  # strict: ties stay with the larger lambda
            best = rec
    return best, path


def select_lambda(dataset, s, bw, gamma=2.0, grid_spec=None, family="gaussian", kernel=EPANECHNIKOV,
                  tol=DEFAULT_TOL):
    """Tune the LAGR penalty at ``s`` by minimising AIC over the grid."""
    return tune_problem(local_problem(dataset, s, bw, kernel), gamma, grid_spec, family, tol=tol)


@dataclass(frozen=True)
class LambdaRateReport:
    n: int
    lam: float
    gamma: float
    alpha: float
    lower: float
    upper: float
    inside: bool
    message: str


def validate_lambda_rate(n, lam, gamma):
    """Check whether ``lam = n**alpha`` falls in the rate window ``(2 - gamma)/3 < alpha < 1/3``.

    Advisory only.
    """
    if n < 2 or not lam > 0:
        raise ConfigurationError("rate check needs n >= 2 and lambda > 0")
    alpha = float(np.log(lam) / np.log(n))
    lower, upper = (2.0 - gamma) / 3.0, 1.0 / 3.0
    inside = bool(lower < alpha < upper)
    if lower >= upper:
        msg = "rate window is empty for gamma = %g; gamma > 1 is required" % gamma
    elif inside:
        msg = "alpha = %.4g lies inside (%.4g, %.4g)" % (alpha, lower, upper)
    else:
        msg = "alpha = %.4g lies outside (%.4g, %.4g)" % (alpha, lower, upper)
    return LambdaRateReport(int(n), float(lam), float(gamma), alpha, lower, upper, inside, msg)
