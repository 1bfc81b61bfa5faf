import numpy as np
import pytest
from scipy import optimize

from lagr import (BandwidthSpec, ConfigurationError, Dataset, GroupLayout, InputError, NonConvergenceError,
                  PenaltySpec, fit_lagr_glm, fit_local_glm, get_family, local_quasi_likelihood, q_eval)
from lagr.design import LocalProblem, local_problem
from lagr.glm import fit_glm_problem, glm_kkt_violation, penalized_quasi_objective, pilot_glm_problem, quasi_score
from lagr.solver import fit_problem

from conftest import random_dataset

cp = pytest.importorskip("cvxpy")


@pytest.mark.parametrize("fam, eta, y, q1, q2, mu", [
    ("gaussian", 2.0, 3.0, 1.0, -1.0, 2.0),
    ("poisson", 0.0, 1.0, 0.0, -1.0, 1.0),
    ("binomial", 0.0, 1.0, 0.5, -0.25, 0.5),
])
def test_q_eval_examples(fam, eta, y, q1, q2, mu):
    q = q_eval(fam, eta, y)
    assert (q.q1, q.q2, q.mu) == pytest.approx((q1, q2, mu), abs=1e-15)


def test_q_eval_response_range():
    with pytest.raises(InputError):
        q_eval("poisson", 0.0, -1.0)
    with pytest.raises(InputError):
        q_eval("binomial", 0.0, 1.5)
    with pytest.raises(ConfigurationError):
        get_family("gamma")


def test_q_eval_clamps_large_predictors():
    assert np.isfinite(q_eval("poisson", 500.0, 1.0).mu)
    assert q_eval("binomial", -500.0, 0.0).mu > 0


def _poisson_data(seed=0, n=80, p=2):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(size=(n, 2))
    X = rng.normal(size=(n, p))
    eta = 0.3 + 0.5 * X[:, 0] + 0.2 * locs[:, 0]
    return Dataset.from_arrays(locs, X, rng.poisson(np.exp(eta)).astype(float))


def _binomial_data(seed=0, n=120, p=2):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(size=(n, 2))
    X = rng.normal(size=(n, p))
    eta = -0.2 + 0.8 * X[:, 0]
    return Dataset.from_arrays(locs, X, rng.binomial(1, 1 / (1 + np.exp(-eta))).astype(float))


def test_poisson_quasi_likelihood_hand_sum():
    Z = np.array([[1.0, 0.5], [1.0, -1.0], [1.0, 2.0]])
    z = np.array([0.2, 0.3])
    w = np.array([1.0, 0.5, 0.25])
    y = np.array([1.0, 0.0, 3.0])
    eta = Z @ z
    hand = sum(wi * (yi * e - np.exp(e)) for wi, yi, e in zip(w, y, eta))
    assert local_quasi_likelihood(z, Z, w, y, "poisson") == pytest.approx(hand, rel=1e-14)


def test_gaussian_quasi_likelihood_is_scaled_rss():
    rng = np.random.default_rng(1)
    Z, w, y = rng.normal(size=(10, 3)), rng.uniform(size=10), rng.normal(size=10)
    z = rng.normal(size=3)
    assert local_quasi_likelihood(z, Z, w, y, "gaussian") == pytest.approx(-0.5 * np.sum(w * (y - Z @ z) ** 2))


@pytest.mark.parametrize("fam", ["gaussian", "poisson", "binomial"])
def test_perfect_fit_is_quasi_maximum(fam):
    y = np.array([0.7]) if fam == "binomial" else np.array([2.0])
    f = get_family(fam)
    eta = np.array([[float(f.link(y[0]))]])
    top = local_quasi_likelihood(np.array([1.0]), eta, [1.0], y, fam)
    assert top == pytest.approx(float(f.saturated(y)[0]), abs=1e-12)
    for d in (-0.1, 0.1):
        assert local_quasi_likelihood(np.array([1.0 + d]), eta, [1.0], y, fam) < top


@pytest.mark.parametrize("fam", ["gaussian", "poisson", "binomial"])
def test_quasi_score_matches_finite_differences(fam):
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(15, 6)) * 0.5
    w = rng.uniform(0.1, 1, size=15)
    y = {"gaussian": rng.normal(size=15), "poisson": rng.poisson(2, size=15).astype(float),
         "binomial": rng.integers(0, 2, size=15).astype(float)}[fam]
    for _ in range(50):
        z = rng.normal(size=6) * 0.5
        g = quasi_score(z, Z, w, y, fam)
        fd = np.array([(local_quasi_likelihood(z + 1e-6 * e, Z, w, y, fam)
                        - local_quasi_likelihood(z - 1e-6 * e, Z, w, y, fam)) / 2e-6 for e in np.eye(6)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7 * max(1.0, np.abs(g).max()))


def test_gaussian_pilot_equals_wls():
    rng = np.random.default_rng(3)
    ds = random_dataset(rng, n=40)
    prob = local_problem(ds, (0.5, 0.5), BandwidthSpec.fixed(0.8))
    np.testing.assert_allclose(fit_local_glm(ds, (0.5, 0.5), BandwidthSpec.fixed(0.8), "gaussian").zeta,
                               prob.pilot().zeta, atol=1e-8)


def test_poisson_scalar_regression_against_bisection():
    rng = np.random.default_rng(4)
    x = np.repeat(rng.uniform(0.2, 1.5, size=8), 4)
    y = np.repeat(rng.poisson(np.exp(0.7 * x[::4])).astype(float), 4)
    # each observation is replicated at four symmetric offsets, so the fitted gradients vanish
    # and the slope solves the scalar score equation
    offsets = np.tile([[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]], (8, 1))
    ds = Dataset.from_arrays(0.5 + offsets, x, y, intercept=False)
    z = fit_local_glm(ds, (0.5, 0.5), BandwidthSpec.fixed(1.0), "poisson").zeta
    np.testing.assert_allclose(z[1:], 0.0, atol=1e-10)
    score = lambda b: float(np.sum((y - np.exp(b * x)) * x))
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if score(mid) > 0 else (lo, mid)
    assert z[0] == pytest.approx(0.5 * (lo + hi), abs=1e-9)


def test_binomial_separation_is_reported():
    rng = np.random.default_rng(5)
    locs = rng.uniform(size=(40, 2))
    x = rng.normal(size=40)
    ds = Dataset.from_arrays(locs, x, (x > 0).astype(float))
    with pytest.raises(NonConvergenceError):
        fit_local_glm(ds, (0.5, 0.5), BandwidthSpec.fixed(2.0), "binomial")


@pytest.mark.parametrize("fam, maker", [("poisson", _poisson_data), ("binomial", _binomial_data)])
def test_pilot_hessian_negative_definite(fam, maker):
    ds = maker(6)
    prob = local_problem(ds, (0.5, 0.5), BandwidthSpec.fixed(0.9))
    z = pilot_glm_problem(prob, fam).zeta
    f = get_family(fam)
    V = f.variance(f.inverse_link(prob.Z @ z))
    H = -(prob.Z.T * (prob.w * V)) @ prob.Z
    assert np.linalg.eigvalsh(H).max() < 0
    assert np.abs(quasi_score(z, prob.Z, prob.w, prob.y, fam)).max() < 1e-8 * max(1.0, np.abs(prob.c).max())


@pytest.mark.parametrize("lam", [0.0, 0.05, 1.0])
def test_gaussian_glm_path_equals_linear(lam):
    rng = np.random.default_rng(7)
    ds = random_dataset(rng, n=50, p=3)
    prob = local_problem(ds, (0.5, 0.5), BandwidthSpec.fixed(0.8))
    pilot = prob.pilot()
    a = fit_problem(prob, pilot, PenaltySpec(lam), tol=1e-10)
    b = fit_glm_problem(prob, pilot, PenaltySpec(lam), "gaussian", tol=1e-10)
    np.testing.assert_allclose(b.zeta_hat.zeta, a.zeta_hat.zeta, atol=1e-6)
    assert b.active.tolist() == a.active.tolist()


@pytest.mark.parametrize("fam, maker", [("poisson", _poisson_data), ("binomial", _binomial_data)])
def test_glm_descent_and_kkt(fam, maker):
    ds = maker(8)
    prob = local_problem(ds, (0.5, 0.5), BandwidthSpec.fixed(0.9))
    pilot = pilot_glm_problem(prob, fam)
    fit = fit_glm_problem(prob, pilot, PenaltySpec(0.05), fam, tol=1e-10)
    assert fit.converged
    tr = fit.objective_trace
    assert all(b <= a + 1e-12 * max(1, abs(a)) for a, b in zip(tr, tr[1:]))
    scale = max(1.0, np.abs(prob.Z.T @ (prob.w * prob.y)).max())
    assert glm_kkt_violation(prob, fit.zeta_hat, fit.phi, fam).max() <= 1e-6 * scale


def test_glm_huge_lambda_gives_intercept_only_fit():
    ds = _poisson_data(9)
    bw = BandwidthSpec.fixed(0.9)
    fit = fit_lagr_glm(ds, (0.5, 0.5), bw, "poisson", PenaltySpec(1e12), tol=1e-11)
    assert fit.active.tolist() == [True, False, False]
    prob = local_problem(ds, (0.5, 0.5), bw)
    cols = prob.layout.columns(0)
    sub = LocalProblem(prob.center, GroupLayout(1, True), prob.rows, prob.Z[:, cols], prob.w, prob.y, 0.9, prob.w)
    ref = pilot_glm_problem(sub, "poisson").zeta
    np.testing.assert_allclose(fit.zeta_hat.group(0), ref, atol=1e-7)


def test_poisson_penalized_matches_cvxpy_and_multistart():
    rng = np.random.default_rng(10)
    locs = rng.uniform(size=(12, 2))
    X = rng.normal(size=(12, 2))
    y = rng.poisson(np.exp(0.2 + 0.4 * X[:, 0])).astype(float)
    ds = Dataset.from_arrays(locs, X, y)
    prob = local_problem(ds, (0.5, 0.5), BandwidthSpec.fixed(3.0))
    pilot = pilot_glm_problem(prob, "poisson")
    fit = fit_glm_problem(prob, pilot, PenaltySpec(0.3, 2.0), "poisson", tol=1e-12)
    phi = fit.phi

    z = cp.Variable(9)
    eta = prob.Z @ z
    pen = sum(phi.phi[j] * cp.norm(cp.hstack([z[j], z[3 + j], z[6 + j]])) for j in (1, 2))
    obj = cp.sum(cp.multiply(prob.w, cp.exp(eta) - cp.multiply(prob.y, eta))) + pen
    cp.Problem(cp.Minimize(obj)).solve(solver="CLARABEL")
    f = lambda v: penalized_quasi_objective(v, prob, phi, "poisson")
    best = f(z.value)
    for _ in range(16):
        res = optimize.minimize(f, pilot.zeta + rng.normal(scale=0.5, size=9), method="Powell",
                                options=dict(xtol=1e-10, ftol=1e-15, maxiter=100000))
        best = min(best, res.fun)
    assert fit.objective == pytest.approx(best, abs=1e-5)
    assert fit.objective <= best + 1e-7
