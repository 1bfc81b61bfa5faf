"""Augmented locally linear design and the unpenalized local fit.

At a centre ``s = (u, v)`` the design is ``Z = [X | L X | M X]`` with
``L = diag(u_i - u)`` and ``M = diag(v_i - v)``.  Coefficient vectors use
the same block order, ``zeta = (beta, grad_u beta, grad_v beta)``, so the
group of covariate ``j`` is the strided slice ``zeta[j::p]``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DegenerateNeighborhoodError, InputError, SingularDesignError
from .kernels import EPANECHNIKOV, WeightVector, _as_location, local_weights

JITTER = 1e-10
RCOND_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    locations: np.ndarray
    X: np.ndarray
    y: np.ndarray
    covariate_names: tuple
    intercept_included: bool = False

    def __post_init__(self):
        locs = np.array(self.locations, dtype=float)
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X[:, None]
        n = y.shape[0]
        if n < 1:
            raise InputError("a dataset needs at least one observation")
        if locs.shape != (n, 2) or X.shape[0] != n:
            raise InputError(
                "shape mismatch: locations %r, X %r, y %r" % (locs.shape, X.shape, y.shape)
            )
        names = tuple(str(c) for c in self.covariate_names)
        if len(names) != X.shape[1]:
            raise InputError("%d covariate names for %d columns" % (len(names), X.shape[1]))
        if len(set(names)) != len(names):
            raise InputError("covariate names must be unique, got %r" % (names,))
        for arr, label in ((locs, "locations"), (X, "X"), (y, "y")):
            if not np.all(np.isfinite(arr)):
                raise InputError("%s contains non-finite values" % label)
        if self.intercept_included and not np.all(X[:, 0] == 1.0):
            raise InputError("intercept_included is set but column 0 is not identically 1")
        for arr in (locs, X, y):
            arr.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_arrays(cls, locations, X, y, covariate_names=None, intercept=True):
        """Build a dataset, prepending an unpenalized intercept column unless one is present."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if covariate_names is None:
            covariate_names = ["X%d" % (j + 1) for j in range(X.shape[1])]
        ds = cls(locations, X, y, tuple(covariate_names), False)
        return ds.with_intercept() if intercept else ds

    def with_intercept(self, name="(Intercept)"):
        if self.intercept_included:
            return self
        X = np.column_stack([np.ones(self.n), self.X])
        return Dataset(self.locations, X, self.y, (name,) + self.covariate_names, True)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.locations[rows], self.X[rows], self.y[rows], self.covariate_names, self.intercept_included)

    def layout(self):
        return GroupLayout(self.p, self.intercept_included)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.covariate_names == other.covariate_names
            and self.intercept_included == other.intercept_included
            and np.array_equal(self.locations, other.locations)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True)
class GroupLayout:
    """Group ``j`` owns columns ``{j, p + j, 2p + j}``; group 0 is the intercept when present."""

    p: int
    intercept_included: bool = True

    @property
    def penalized(self):
        pen = np.ones(self.p, dtype=bool)
        if self.intercept_included:
            pen[0] = False
        return pen

    def columns(self, j):
        return np.array([j, self.p + j, 2 * self.p + j])

    @property
    def group_major(self):
        """Permutation taking block order to group-major order (group ``j`` at ``3j:3j+3``)."""
        p = self.p
        return (np.arange(3)[None, :] * p + np.arange(p)[:, None]).ravel()

    def group_norms(self, zeta):
        return np.sqrt(np.sum(np.asarray(zeta).reshape(3, self.p) ** 2, axis=0))


@dataclass(frozen=True, eq=False)
class LocalCoefficients:
    zeta: np.ndarray
    layout: GroupLayout

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float)
        if z.shape != (3 * self.layout.p,):
            raise InputError("zeta must have length 3p = %d, got %r" % (3 * self.layout.p, z.shape))
        object.__setattr__(self, "zeta", z)

    def group(self, j):
        return self.zeta[j::self.layout.p]

    @property
    def beta(self):
        return self.zeta[: self.layout.p]

    @property
    def grad_u(self):
        return self.zeta[self.layout.p: 2 * self.layout.p]

    @property
    def grad_v(self):
        return self.zeta[2 * self.layout.p:]

    def norms(self):
        return self.layout.group_norms(self.zeta)


@dataclass(frozen=True, eq=False)
class AugmentedDesign:
    Z: np.ndarray
    center: np.ndarray


def augment(dataset, s):
    """Locally linear design ``[X | L X | M X]`` at centre ``s``."""
    s = _as_location(s)
    d = dataset.locations - s
    X = dataset.X
    return AugmentedDesign(np.hstack([X, X * d[:, :1], X * d[:, 1:]]), s)


def _normal_equations(G, rhs, layout=None):
    """Solve ``G x = rhs`` for SPD ``G`` with the single-jitter policy."""
    G = np.asarray(G, dtype=float)
    scale = np.sqrt(np.diag(G))
    if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
        bad = np.flatnonzero(~(scale > 0))
        raise SingularDesignError(
            "weighted design has all-zero columns %s" % bad.tolist(), _groups_of(bad, layout)
        )
    C = G / np.outer(scale, scale)
    evals, evecs = np.linalg.eigh(C)
    if evals[0] < RCOND_MIN * evals[-1]:
        null = evecs[:, 0]
        cols = np.flatnonzero(np.abs(null) > 0.1)
        groups = _groups_of(cols, layout)
        raise SingularDesignError(
            "weighted Gram matrix is singular (reciprocal condition %.2e); offending groups %s"
            % (max(evals[0], 0.0) / evals[-1], groups),
            groups,
        )
    try:
        factor = linalg.cho_factor(G, lower=True, check_finite=False)
    except linalg.LinAlgError:
        jitter = JITTER * np.trace(G) / G.shape[0]
        try:
            factor = linalg.cho_factor(G + jitter * np.eye(G.shape[0]), lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SingularDesignError("weighted Gram matrix is not positive definite", []) from exc
    return linalg.cho_solve(factor, rhs, check_finite=False)


def _groups_of(cols, layout):
    if layout is None:
        return []
    return sorted({int(c) % layout.p for c in cols})


def wls_fit(Z, W, y, layout=None):
    """Locally weighted least squares ``(Z'WZ)^-1 Z'Wy``."""
    Zm = Z.Z if isinstance(Z, AugmentedDesign) else np.asarray(Z, dtype=float)
    w = W.weights if isinstance(W, WeightVector) else np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)
    if layout is None:
        layout = GroupLayout(Zm.shape[1] // 3, False)
    keep = w > 0
    if not np.any(keep):
        raise DegenerateNeighborhoodError("no observation has positive weight")
    if np.count_nonzero(keep) < Zm.shape[1]:
        raise DegenerateNeighborhoodError(
            "%d observations with positive weight cannot identify %d local coefficients"
            % (np.count_nonzero(keep), Zm.shape[1])
        )
    Zk, wk, yk = Zm[keep], w[keep], y[keep]
    ZW = Zk.T * wk
    zeta = _normal_equations(ZW @ Zk, ZW @ yk, layout)
    return LocalCoefficients(zeta, layout)


def estimate_sigma2(residuals, W, df_used):
    """Weighted residual mean square with an effective-sample correction.

    ``sum w r**2 / (sum w - df_used * sum w**2 / sum w)``.
    """
    r = np.asarray(residuals, dtype=float)
    w = W.weights if isinstance(W, WeightVector) else np.asarray(W, dtype=float)
    sw = float(np.sum(w))
    if sw <= 0:
        raise DegenerateNeighborhoodError("weights sum to zero")
    denom = sw - df_used * float(np.sum(w * w)) / sw
    if denom <= 0:
        raise DegenerateNeighborhoodError(
            "error variance undefined: %.3g local parameters exceed the effective sample size %.3g"
            % (df_used, sw * sw / float(np.sum(w * w)))
        )
    return float(np.sum(w * r * r)) / denom


def predict(zeta, x, at, center):
    """Locally linear prediction ``sum_j x_j (beta_j + grad_u_j du + grad_v_j dv)``."""
    z = zeta.zeta if isinstance(zeta, LocalCoefficients) else np.asarray(zeta, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    if z.shape[0] != 3 * x.shape[0]:
        raise InputError("covariate row of length %d does not match %d coefficients" % (x.shape[0], z.shape[0]))
    du, dv = _as_location(at) - _as_location(center)
    p = x.shape[0]
    return float(x @ (z[:p] + z[p:2 * p] * du + z[2 * p:] * dv))


@dataclass(eq=False)
class LocalProblem:
    """Everything needed to fit at one location, restricted to the kernel support.

    Building this once per location lets a whole tuning path reuse the
    Gram matrix ``Z'WZ`` and cross product ``Z'Wy``.
    """

    center: np.ndarray
    layout: GroupLayout
    rows: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    y: np.ndarray
    bandwidth: float
    full_weights: np.ndarray
    G: np.ndarray = field(init=False)
    c: np.ndarray = field(init=False)
    yWy: float = field(init=False)

    def __post_init__(self):
        ZW = self.Z.T * self.w
        self.G = ZW @ self.Z
        self.c = ZW @ self.y
        self.yWy = float(np.sum(self.w * self.y * self.y))

    @property
    def n_support(self):
        return self.rows.shape[0]

    def pilot(self):
        if self.n_support < self.Z.shape[1]:
            raise DegenerateNeighborhoodError(
                "%d observations with positive weight at (%g, %g) cannot identify %d local coefficients"
                % (self.n_support, self.center[0], self.center[1], self.Z.shape[1])
            )
        try:
            zeta = _normal_equations(self.G, self.c, self.layout)
        except SingularDesignError as exc:
            raise SingularDesignError(
                "at location (%g, %g): %s" % (self.center[0], self.center[1], exc), exc.groups
            ) from exc
        return LocalCoefficients(zeta, self.layout)

    def residuals(self, zeta):
        z = zeta.zeta if isinstance(zeta, LocalCoefficients) else zeta
        return self.y - self.Z @ z

    def weight_vector(self):
        return WeightVector(self.w, self.bandwidth, self.n_support)


def local_problem(dataset, s, bw, kernel=EPANECHNIKOV):
    """Weights, support-restricted design and cross products at ``s``."""
    s = _as_location(s)
    W = local_weights(s, dataset.locations, bw, kernel)
    rows = W.support
    Z = augment(dataset, s).Z[rows]
    return LocalProblem(s, dataset.layout(), rows, Z, W.weights[rows], dataset.y[rows], W.bandwidth_used, W.weights)
