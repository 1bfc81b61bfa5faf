"""Coefficient surfaces: the local fit repeated over a set of evaluation locations.

Locations are independent, so they are farmed out to worker processes in
contiguous chunks; results are reassembled in input order, which makes the
output independent of the worker count.
"""
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import Dataset, local_problem
from .errors import LagrError
from .glm import fit_glm_problem, get_family, pilot_glm_problem
from .kernels import EPANECHNIKOV
from .solver import DEFAULT_TOL, PenaltySpec, check_gamma, fit_problem
from .tuning import GridSpec, df_hat, tune_problem


@dataclass(frozen=True)
class FitConfig:
    """What to fit at each location.

    ``lam`` is either the string ``"aic"`` (tune per location) or a fixed
    nonnegative penalty; ``method="vcr"`` ignores it and returns the
    unpenalized fit.
    """

    bandwidth: object
    gamma: float = 2.0
    lam: object = "aic"
    grid: GridSpec = field(default_factory=GridSpec)
    family: str = "gaussian"
    method: str = "lagr"
    kernel: object = EPANECHNIKOV
    tol: float = DEFAULT_TOL
    keep_path: bool = False
    enforce_gamma: bool = True
    # fit on unit-variance covariates and report coefficients on the original scale
    standardize: bool = False

    def __post_init__(self):
        get_family(self.family)
        if self.method not in ("lagr", "vcr"):
            raise LagrError("method must be 'lagr' or 'vcr', got %r" % self.method)
        if self.lam != "aic":
            PenaltySpec(float(self.lam), self.gamma, self.enforce_gamma)
        elif self.enforce_gamma:
            check_gamma(self.gamma)


@dataclass
class LocationFit:
    index: int
    zeta: np.ndarray = None
    active: np.ndarray = None
    lam: float = float("nan")
    df: float = float("nan")
    converged: bool = False
    bandwidth: float = float("nan")
    path: list = None  # (lambda, df_hat, deviance, aic) rows
    error: str = None


@dataclass(eq=False)
class CoefficientSurface:
    locations: np.ndarray
    names: tuple
    zeta: np.ndarray  # (m, 3p) block order, NaN at failed locations
    active: np.ndarray
    lam: np.ndarray
    df: np.ndarray
    converged: np.ndarray
    bandwidth: np.ndarray
    failures: list
    paths: list = None
    scale: np.ndarray = None

    @property
    def p(self):
        return len(self.names)

    @property
    def beta(self):
        return self.zeta[:, : self.p]

    @property
    def grad_u(self):
        return self.zeta[:, self.p: 2 * self.p]

    @property
    def grad_v(self):
        return self.zeta[:, 2 * self.p:]

    @property
    def ok(self):
        return not self.failures


def fit_location(dataset, s, config, index=0):
    """Fit one location, converting model errors into a failure record."""
    out = LocationFit(index)
    try:
        problem = local_problem(dataset, s, config.bandwidth, config.kernel)
        out.bandwidth = problem.bandwidth
        fam = get_family(config.family)
        pilot = problem.pilot() if fam.name == "gaussian" else pilot_glm_problem(problem, fam)
        if config.method == "vcr":
            z = pilot.zeta
            out.zeta, out.lam, out.converged = z, 0.0, True
            out.active = pilot.norms() > 0
            out.df = 3.0 * dataset.p
        elif config.lam == "aic":
            best, path = tune_problem(problem, config.gamma, config.grid, fam, pilot=pilot, tol=config.tol,
                                      enforce_gamma=config.enforce_gamma)
            fit = best.fit
            out.zeta, out.active, out.lam = fit.zeta_hat.zeta, fit.active, best.lam
            out.df, out.converged = best.df_hat, fit.converged
            if config.keep_path:
                out.path = [(r.lam, r.df_hat, r.weighted_deviance, r.aic) for r in path]
        else:
            spec = PenaltySpec(float(config.lam), config.gamma, config.enforce_gamma)
            if fam.name == "gaussian":
                fit = fit_problem(problem, pilot, spec, config.tol)
            else:
                fit = fit_glm_problem(problem, pilot, spec, fam, config.tol)
            out.zeta, out.active, out.lam = fit.zeta_hat.zeta, fit.active, fit.lam
            out.df, out.converged = df_hat(fit, pilot), fit.converged
    except (LagrError, ArithmeticError, ValueError) as exc:
        out.error = "%s: %s" % (type(exc).__name__, exc)
    return out


_WORKER = {}


def _init_worker(dataset, config):
    _WORKER["dataset"] = dataset
    _WORKER["config"] = config


def _run_chunk(chunk):
    ds, cfg = _WORKER["dataset"], _WORKER["config"]
    return [fit_location(ds, s, cfg, i) for i, s in chunk]


def default_workers():
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def fit_surface(dataset, config, locations=None, workers=1):
    """Fit ``config`` at every evaluation location (default: the observation locations)."""
    locs = dataset.locations if locations is None else np.asarray(locations, dtype=float)
    if locs.ndim != 2 or locs.shape[1] != 2:
        raise LagrError("evaluation locations must be an (m, 2) array")
    m = locs.shape[0]
    scale = None
    if config.standardize:
        dataset, scale = standardize(dataset)
    items = list(enumerate(locs))
    workers = int(workers or 1)
    if workers <= 1 or m < 2:
        results = [fit_location(dataset, s, config, i) for i, s in items]
    else:
        size = max(1, -(-m // (4 * workers)))
        chunks = [items[k:k + size] for k in range(0, m, size)]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(dataset, config)) as pool:
            results = [r for part in pool.map(_run_chunk, chunks) for r in part]
    surf = assemble(locs, dataset.covariate_names, results, config.keep_path)
    if scale is not None:
        surf.zeta = surf.zeta / np.tile(scale, 3)
        surf.scale = scale
    return surf


def standardize(dataset):
    """Rescale every non-intercept covariate to unit sample standard deviation.

    Returns the rescaled dataset and the per-column divisors (1 for the
    intercept).  Dividing fitted groups by the divisors maps them back.
    Constant columns are left as they are; the local fits then report
    them as singular.
    """
    X = dataset.X
    sd = X.std(axis=0, ddof=1) if dataset.n > 1 else np.zeros(dataset.p)
    start = 1 if dataset.intercept_included else 0
    scale = np.ones(dataset.p)
    scale[start:] = np.where(sd[start:] > 0, sd[start:], 1.0)
    ds = Dataset(dataset.locations, X / scale, dataset.y, dataset.covariate_names, dataset.intercept_included)
    return ds, scale


def assemble(locs, names, results, keep_path=False):
    m, p = locs.shape[0], len(names)
    zeta = np.full((m, 3 * p), np.nan)
    active = np.zeros((m, p), dtype=bool)
    lam = np.full(m, np.nan)
    df = np.full(m, np.nan)
    conv = np.zeros(m, dtype=bool)
    bw = np.full(m, np.nan)
    failures = []
    paths = [None] * m if keep_path else None
    for r in results:
        i = r.index
        bw[i] = r.bandwidth
        if r.error is not None:
            failures.append((i, (float(locs[i, 0]), float(locs[i, 1])), r.error))
            continue
        zeta[i], active[i], lam[i], df[i], conv[i] = r.zeta, r.active, r.lam, r.df, r.converged
        if keep_path:
            paths[i] = r.path
    return CoefficientSurface(locs, tuple(names), zeta, active, lam, df, conv, bw, failures, paths)
