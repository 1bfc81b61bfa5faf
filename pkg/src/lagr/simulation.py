"""Simulation study: Gaussian random field covariates and coefficients on a 20x20 grid.

Every random quantity comes from its own Philox stream, keyed by a
``SeedSequence`` spawn key built from the study seed, the setting, the
replicate and the field, so results do not depend on execution order or
on how work is split across processes.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .design import Dataset, local_problem
from .errors import ConfigurationError, InputError, LagrError, NumericalError
from .kernels import BandwidthSpec, default_bandwidth, kernel_moments
from .surface import FitConfig, fit_location, fit_surface
from .tuning import GridSpec, tune_problem, validate_lambda_rate

GRID_SIDE = 20
N_GRID = GRID_SIDE * GRID_SIDE
N_COEF = 4
TRUTH_VARIANCES = (10.0, 1.0, 0.1)
TRUTH_RANGE = 1.0
X_VARIANCE, X_RANGE, X_NUGGET = 1.0, 0.1, 0.2
COEF_NAMES = tuple("X%d" % (j + 1) for j in range(N_COEF))

# spawn-key tags
_TRUTH, _DATA, _SUBSAMPLE, _ORACLE = 1, 2, 3, 4


def grid_locations(side=GRID_SIDE):
    """Cell centres ``((i - 0.5)/side, (j - 0.5)/side)``, row-major in ``u``."""
    c = (np.arange(1, side + 1) - 0.5) / side
    u, v = np.meshgrid(c, c, indexing="ij")
    return np.column_stack([u.ravel(), v.ravel()])


def stream(seed, *key):
    """Independent Philox generator for ``(seed, key...)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GrfSpec:
    variance: float = 1.0
    range: float = 0.1
    nugget: float = 0.0
    mean: float = 0.0
    # "exponential" is the study default; "gaussian" gives an infinitely smooth field
    covariance: str = "exponential"

    def __post_init__(self):
        if not (self.variance >= 0 and self.nugget >= 0 and self.range > 0):
            raise ConfigurationError("GRF needs variance >= 0, nugget >= 0 and range > 0")
        if self.covariance not in ("exponential", "gaussian"):
            raise ConfigurationError("unknown covariance %r" % self.covariance)

    def cov(self, locations):
        d = cdist(locations, locations)
        if self.covariance == "exponential":
            C = self.variance * np.exp(-d / self.range)
        else:
            C = self.variance * np.exp(-((d / self.range) ** 2))
        C[np.diag_indices_from(C)] += self.nugget
        return C


def _grf_factor(locations, spec):
    C = spec.cov(locations)
    if not np.any(C):
        return None
    try:
        return linalg.cholesky(C, lower=False, check_finite=False)
    except linalg.LinAlgError:
        jit = 1e-10 * max(spec.variance, spec.nugget)
        try:
            return linalg.cholesky(C + jit * np.eye(C.shape[0]), lower=False, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError("GRF covariance is not factorizable even with jitter %.3g" % jit) from exc


def simulate_grf(locations, spec, rng, size=None, factor=None):
    """Draw ``mean + R'eps`` with ``R'R`` the covariance Cholesky factor.

    ``size`` draws independent realisations as rows of a ``(size, n)``
    array; by default one field of length ``n`` is returned.
    """
    locs = np.asarray(locations, dtype=float)
    n = locs.shape[0]
    R = _grf_factor(locs, spec) if factor is None else factor
    k = 1 if size is None else int(size)
    eps = rng.standard_normal((k, n))
    out = np.full((k, n), float(spec.mean)) if R is None else spec.mean + eps @ R
    return out[0] if size is None else out


def equicorrelation(p, rho):
    return np.full((p, p), float(rho)) + (1.0 - float(rho)) * np.eye(p)


def induce_correlation(X, rho):
    """Multiply ``X`` by the upper Cholesky factor ``R`` of the equicorrelation matrix."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    lo = -1.0 / (p - 1) if p > 1 else -np.inf
    if not lo < rho < 1.0:
        raise ConfigurationError("rho = %r makes the %d x %d equicorrelation matrix singular or indefinite" % (rho, p, p))
    if rho == 0:
        return X.copy()
    R = linalg.cholesky(equicorrelation(p, rho), lower=False)
    return X @ R


@dataclass(frozen=True)
class ScenarioSpec:
    subsample_n: int = N_GRID
    rho: float = 0.0
    sigma_eps: float = 0.5
    replicates: int = 5
    seed: int = 1
    truth_covariance: str = "exponential"

    def __post_init__(self):
        if self.subsample_n not in range(4, N_GRID + 1):
            raise ConfigurationError("subsample_n must lie in [4, %d], got %r" % (N_GRID, self.subsample_n))
        if not self.sigma_eps >= 0:
            raise ConfigurationError("sigma_eps must be nonnegative, got %r" % self.sigma_eps)
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ConfigurationError("replicates must be a positive integer, got %r" % self.replicates)
        if not -1.0 / (N_COEF - 1) < self.rho < 1.0:
            raise ConfigurationError("rho must lie in (-1/3, 1), got %r" % self.rho)
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit nonnegative integer, got %r" % self.seed)
        if self.truth_covariance not in ("exponential", "gaussian"):
            raise ConfigurationError("truth_covariance must be 'exponential' or 'gaussian'")

    @property
    def setting_code(self):
        return (int(round(self.rho * 1000)) % 2 ** 32, int(round(self.sigma_eps * 1000)))


@dataclass(eq=False)
class TruthSurfaces:
    locations: np.ndarray
    beta: np.ndarray  # (N_GRID, 4)
    spec: GrfSpec = None

    def at(self, rows):
        return self.beta[np.asarray(rows)]


def truth_spec(j, covariance="exponential"):
    return GrfSpec(TRUTH_VARIANCES[j], TRUTH_RANGE, 0.0, 0.0, covariance)


def generate_truth(seed, covariance="exponential", locations=None):
    """Coefficient fields drawn once per study seed; the fourth is identically zero."""
    locs = grid_locations() if locations is None else locations
    beta = np.zeros((locs.shape[0], N_COEF))
    for j in range(3):
        spec = truth_spec(j, covariance)
        fac = _factor(spec) if locations is None else None
        beta[:, j] = simulate_grf(locs, spec, stream(seed, _TRUTH, j), factor=fac)
    return TruthSurfaces(locs, beta, GrfSpec(covariance=covariance))


_X_SPEC = GrfSpec(X_VARIANCE, X_RANGE, X_NUGGET)
_FACTORS = {}


def _factor(spec, side=GRID_SIDE):
    key = (spec, side)
    if key not in _FACTORS:
        _FACTORS[key] = _grf_factor(grid_locations(side), spec)
    return _FACTORS[key]


def _full_replicate(spec, replicate, truth):
    locs = truth.locations
    code = spec.setting_code
    X = np.column_stack([
        simulate_grf(locs, _X_SPEC, stream(spec.seed, _DATA, *code, replicate, j), factor=_factor(_X_SPEC))
        for j in range(N_COEF)
    ])
    X = induce_correlation(X, spec.rho)
    noise = stream(spec.seed, _DATA, *code, replicate, N_COEF).standard_normal(locs.shape[0])
    y = np.sum(X * truth.beta, axis=1) + spec.sigma_eps * noise
    return X, y


def generate_scenario(spec, replicate=0, truth=None):
    """One simulated dataset and the truth it was drawn from.

    Returns ``(dataset, truth, rows)`` where ``rows`` indexes the sampled
    grid cells (sorted), so ``truth.at(rows)`` aligns with the dataset.
    """
    if truth is None:
        truth = generate_truth(spec.seed, spec.truth_covariance)
    X, y = _full_replicate(spec, replicate, truth)
    if spec.subsample_n < N_GRID:
        rng = stream(spec.seed, _SUBSAMPLE, *spec.setting_code, replicate, spec.subsample_n)
        rows = np.sort(rng.choice(N_GRID, size=spec.subsample_n, replace=False))
    else:
        rows = np.arange(N_GRID)
    ds = Dataset.from_arrays(truth.locations[rows], X[rows], y[rows], COEF_NAMES)
    return ds, truth, rows


def mise(estimate, truth):
    """Mean squared difference over evaluation locations."""
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise InputError("estimate and truth must cover the same nonempty location set (%r vs %r)" % (a.shape, b.shape))
    return float(np.mean((a - b) ** 2))


def zero_frequency(group_values):
    """Fraction of locations where a coefficient group is exactly zero.

    Accepts an ``(m,)`` array of coefficient values or an ``(m, 3)`` array
    of full groups (value and both gradients).
    """
    g = np.asarray(group_values, dtype=float)
    if g.size == 0:
        raise InputError("zero_frequency needs a nonempty surface")
    if g.ndim == 1:
        g = g[:, None]
    return float(np.mean(np.all(g == 0.0, axis=1)))


@dataclass(eq=False)
class MetricsReport:
    spec: ScenarioSpec
    method: str
    mise: np.ndarray  # (4,), averaged over replicates
    zero_freq: np.ndarray
    per_replicate: list  # dicts with replicate, mise, zero_freq, failures
    failures: list = field(default_factory=list)

    def rows(self):
        for j, name in enumerate(COEF_NAMES):
            yield {
                "n": self.spec.subsample_n, "rho": self.spec.rho, "sigma_eps": self.spec.sigma_eps,
                "method": self.method, "coefficient": "beta%d" % (j + 1),
                "mise": float(self.mise[j]), "zero_freq": float(self.zero_freq[j]),
            }


def study_config(n, method, gamma=2.0, grid=None, bandwidth=None):
    bw = bandwidth or BandwidthSpec.nearest_neighbor(default_bandwidth(n))
    return FitConfig(bw, gamma=gamma, lam="aic", grid=grid or GridSpec(), method=method.lower())


def replicate_metrics(spec, replicate, methods=("LAGR", "VCR"), gamma=2.0, grid=None, bandwidth=None):
    """Metrics of each method on one simulated dataset."""
    ds, truth, rows = generate_scenario(spec, replicate)
    bt = truth.at(rows)
    out = {}
    for method in methods:
        surf = fit_surface(ds, study_config(spec.subsample_n, method, gamma, grid, bandwidth))
        ok = np.ones(ds.n, dtype=bool)
        for i, _, _ in surf.failures:
            ok[i] = False
        m = np.full(N_COEF, np.nan)
        z = np.full(N_COEF, np.nan)
        if np.any(ok):
            p = surf.p
            for j in range(N_COEF):
                col = j + 1  # skip the intercept
                m[j] = mise(surf.beta[ok, col], bt[ok, j])
                z[j] = zero_frequency(surf.zeta[ok][:, [col, p + col, 2 * p + col]])
        out[method] = {"replicate": replicate, "mise": m, "zero_freq": z,
                       "failures": [(i, loc, msg) for i, loc, msg in surf.failures]}
    return out


def _replicate_task(args):
    spec, rep, methods, gamma, grid, bandwidth = args
    return replicate_metrics(spec, rep, methods, gamma, grid, bandwidth)


def run_study(settings, methods=("LAGR", "VCR"), workers=1, gamma=2.0, grid=None, bandwidth=None):
    """Monte Carlo study over the given settings; one :class:`MetricsReport` per (setting, method).

    Replicates across all settings are distributed over ``workers``
    processes; aggregation happens afterwards in a fixed order.
    """
    settings = list(settings)
    if not settings:
        raise ConfigurationError("run_study needs at least one setting")
    methods = tuple(m.upper() for m in methods)
    for m in methods:
        if m not in ("LAGR", "VCR"):
            raise ConfigurationError("unknown method %r (choose LAGR or VCR)" % m)
    tasks = [(s, r, methods, gamma, grid, bandwidth) for s in settings for r in range(s.replicates)]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_replicate_task, tasks))
    else:
        results = [_replicate_task(t) for t in tasks]
    reports = []
    k = 0
    for s in settings:
        chunk = results[k:k + s.replicates]
        k += s.replicates
        for m in methods:
            reps = [c[m] for c in chunk]
            M = np.array([r["mise"] for r in reps])
            Zf = np.array([r["zero_freq"] for r in reps])
            fails = [(r["replicate"],) + f for r in reps for f in r["failures"]]
            with np.errstate(all="ignore"):
                reports.append(MetricsReport(s, m, np.nanmean(M, axis=0), np.nanmean(Zf, axis=0), reps, fails))
    return reports


def full_grid_settings(replicates=5, seed=1, truth_covariance="exponential"):
    """The 18 cells: n in (100, 200, 400) x rho in (0, 0.5, 0.9) x sigma_eps in (0.5, 1)."""
    return [ScenarioSpec(n, rho, sig, replicates, seed, truth_covariance)
            for sig in (0.5, 1.0) for rho in (0.0, 0.5, 0.9) for n in (400, 200, 100)]


# ---------------------------------------------------------------------------
# oracle-property diagnostics

ORACLE_POINT = (0.475, 0.475)


def laplacian_fd(truth, j, point=ORACLE_POINT, side=GRID_SIDE):
    """Central second differences of truth surface ``j`` at a grid node, step ``1/side``."""
    locs = truth.locations
    step = 1.0 / side
    idx = int(np.argmin(np.sum((locs - np.asarray(point)) ** 2, axis=1)))
    grid = truth.beta[:, j].reshape(side, side)
    a, b = divmod(idx, side)
    if not (0 < a < side - 1 and 0 < b < side - 1):
        raise ConfigurationError("finite differences need an interior grid point")
    lap = (grid[a + 1, b] - 2 * grid[a, b] + grid[a - 1, b]) + (grid[a, b + 1] - 2 * grid[a, b] + grid[a, b - 1])
    return float(lap / step ** 2), idx


@dataclass(eq=False)
class OracleReport:
    gamma: float
    gamma_ok: bool
    gamma_message: str
    lambda_rule: str
    levels: list  # one dict per n
    settings: dict

    def gap_ok(self, threshold=0.5):
        return all(lv["zero_freq_gap"] >= threshold for lv in self.levels)


def _lambda_for(rule, n):
    if rule == "aic":
        return "aic"
    if rule.startswith("rate:"):
        return float(n) ** float(rule.split(":", 1)[1])
    return float(rule)


def _oracle_point_task(args):
    """Standardized first-coefficient statistic at the oracle point for one replicate."""
    spec, rep, gamma, rule, moments, lap, idx, enforce = args
    ds, truth, rows = generate_scenario(spec, rep)
    n = ds.n
    bw = BandwidthSpec.nearest_neighbor(default_bandwidth(n))
    pt = truth.locations[idx]
    cfg = FitConfig(bw, gamma=gamma, lam=_lambda_for(rule, n), enforce_gamma=enforce)
    res = fit_location(ds, pt, cfg)
    if res.error is not None:
        return {"replicate": rep, "error": res.error}
    problem = local_problem(ds, pt, bw)
    h = problem.bandwidth
    # kernel-weighted second moment of (1, X1, X2, X3), the truly active covariates
    Xa = ds.X[problem.rows][:, :4]
    w = problem.w
    psi = (Xa.T * w) @ Xa / np.sum(w)
    k0, k2, nu0 = moments.kappa0, moments.kappa2, moments.nu0
    var = nu0 * spec.sigma_eps ** 2 * np.linalg.inv(psi)[1, 1] / k0 ** 2
    bias = k2 / (2 * k0) * h * h * lap
    err = res.zeta[1] - truth.beta[idx, 0]
    T = math.sqrt(h * h * n) * (err - bias) / math.sqrt(var)
    return {"replicate": rep, "T": T, "h": h, "estimate": float(res.zeta[1]), "bias_term": bias,
            "active": [bool(a) for a in res.active]}


def oracle_check(gamma=2.0, lambda_rule="aic", ns=(100, 200, 400), replicates=200, seed=1,
                 surface_replicates=5, rho=0.0, sigma_eps=0.5, truth_covariance="exponential", workers=1):
    """Empirical checks of selection consistency and asymptotic normality.

    For each ``n``: (a) zero frequency of the first and last coefficient
    over full surfaces from ``surface_replicates`` datasets; (b) the Monte
    Carlo mean and variance, over ``replicates`` datasets, of the
    bias-corrected standardized estimate of the first coefficient at the
    grid node nearest ``(0.475, 0.475)``.  The prediction is mean 0 and
    variance 1.  ``gamma <= 1`` is flagged and the check still runs.
    """
    gamma = float(gamma)
    enforce = gamma > 1.0
    rate = validate_lambda_rate(400, 1.0, gamma)
    gamma_msg = "gamma = %g satisfies gamma > 1" % gamma if enforce else (
        "gamma = %g violates the gamma > 1 requirement; results are outside the theory" % gamma)
    if not enforce:
        gamma_msg += " (" + rate.message + ")"
    moments = kernel_moments()
    truth = generate_truth(seed, truth_covariance)
    lap, idx = laplacian_fd(truth, 0)
    if not (lambda_rule == "aic" or lambda_rule.startswith("rate:")):
        float(lambda_rule)
    levels = []
    for n in ns:
        spec = ScenarioSpec(n, rho, sigma_eps, max(replicates, surface_replicates), seed, truth_covariance)
        # (a) selection frequencies from full surfaces
        cfg = FitConfig(BandwidthSpec.nearest_neighbor(default_bandwidth(n)), gamma=gamma,
                        lam=_lambda_for(lambda_rule, n), enforce_gamma=enforce)
        zf1, zf4 = [], []
        for rep in range(surface_replicates):
            ds, _, _ = generate_scenario(spec, rep, truth)
            surf = fit_surface(ds, cfg, workers=workers)
            ok = np.array([i not in {f[0] for f in surf.failures} for i in range(ds.n)])
            p = surf.p
            zf1.append(zero_frequency(surf.zeta[ok][:, [1, p + 1, 2 * p + 1]]))
            zf4.append(zero_frequency(surf.zeta[ok][:, [4, p + 4, 2 * p + 4]]))
        # (b) standardized statistic at the oracle point
        tasks = [(spec, rep, gamma, lambda_rule, moments, lap, idx, enforce) for rep in range(replicates)]
        if workers and workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                stats = list(pool.map(_oracle_point_task, tasks, chunksize=8))
        else:
            stats = [_oracle_point_task(t) for t in tasks]
        T = np.array([s["T"] for s in stats if "T" in s])
        levels.append({
            "n": int(n),
            "zero_freq_beta1": float(np.mean(zf1)),
            "zero_freq_beta4": float(np.mean(zf4)),
            "zero_freq_gap": float(np.mean(zf4) - np.mean(zf1)),
            "t_mean": float(np.mean(T)) if T.size else float("nan"),
            "t_var": float(np.var(T, ddof=1)) if T.size > 1 else float("nan"),
            "t_count": int(T.size),
            "t_failures": [s["error"] for s in stats if "error" in s],
            "predicted_var": 1.0,
            "bandwidth_mean": float(np.mean([s["h"] for s in stats if "h" in s])) if T.size else float("nan"),
            "bias_term_mean": float(np.mean([s["bias_term"] for s in stats if "bias_term" in s])) if T.size else float("nan"),
        })
    settings = {"ns": [int(n) for n in ns], "replicates": int(replicates), "surface_replicates": int(surface_replicates),
                "seed": int(seed), "rho": float(rho), "sigma_eps": float(sigma_eps),
                "truth_covariance": truth_covariance, "point": [float(v) for v in truth.locations[idx]],
                "laplacian_fd": lap}
    return OracleReport(gamma, enforce, gamma_msg, lambda_rule, levels, settings)
