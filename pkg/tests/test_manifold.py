import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from wbcog.manifold import (
    ManifoldBeamformer,
    NumericError,
    comm_sinr_lifted,
    euclidean_gradient,
    fp_objective,
    fp_update_mu,
    initial_point,
    lift_channels,
    project_tangent,
    ratio_objective,
    rcg_solve,
    recover_precoders,
    retract,
    write_trace_csv,
)

from conftest import crandn

SIGMA2 = 3.9810717055349694e-10


def _sinr_scalar(V, H_hat, k, sigma2):
    # Independent path: explicit loops over entries, no shared helpers.
    K, M1 = H_hat.shape
    def coup(i):
        acc = 0j
        for m in range(M1):
            acc += np.conj(H_hat[k, m]) * V[m, i]
        return abs(acc) ** 2
    others = sum(coup(i) for i in range(V.shape[1]) if i != k)
    return coup(k) / (others + sigma2)


def _random_point(rng, M, K):
    V = crandn(rng, M + 1, K)
    return V / np.linalg.norm(V)


def test_sinr_examples():
    H = np.array([[1.0 + 0j, 0.0]])
    V = np.array([[1.0 + 0j], [0.0]])
    sigma2 = 1.0
    assert comm_sinr_lifted(V, H, 0, sigma2) == pytest.approx(1.0)
    assert np.array_equal(fp_update_mu(V, H, sigma2), [1.0])
    V_orth = np.array([[0.0 + 0j], [1.0]])
    assert comm_sinr_lifted(V_orth, H, 0, sigma2) == 0.0


def test_sinr_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        H_hat = lift_channels(crandn(rng, 2, 4), 3.0)
        V = _random_point(rng, 4, 2)
        for k in range(2):
            assert comm_sinr_lifted(V, H_hat, k, 0.7) == pytest.approx(_sinr_scalar(V, H_hat, k, 0.7), rel=1e-12)


def test_mu_zero_when_signal_rows_vanish():
    rng = np.random.default_rng(1)
    H_hat = lift_channels(crandn(rng, 3, 4), 10.0)
    V = np.zeros((5, 3), complex)
    V[-1] = 1 / np.sqrt(3)
    assert np.all(fp_update_mu(V, H_hat, 1.0) == 0)
    assert np.all(euclidean_gradient(V, np.ones(3) * 2, H_hat, 1.0) == 0)


def test_fp_objective_recovers_sum_rate():
    rng = np.random.default_rng(2)
    for _ in range(10):
        H_hat = lift_channels(crandn(rng, 3, 4), 1e3 * SIGMA2 / 1e-9)
        V = _random_point(rng, 4, 3)
        mu = fp_update_mu(V, H_hat, SIGMA2)
        scale = (400 - 3) / 400
        expect = scale * np.sum(np.log2(1 + np.array([_sinr_scalar(V, H_hat, k, SIGMA2) for k in range(3)])))
        assert fp_objective(V, mu, H_hat, SIGMA2, scale) == pytest.approx(expect, rel=1e-9)


def _fd_error(V, mu_hat, H_hat, sigma2, h=1e-6):
    G = euclidean_gradient(V, mu_hat, H_hat, sigma2)
    fd = np.zeros_like(G)
    for idx in np.ndindex(V.shape):
        for unit in (1.0, 1j):
            E = np.zeros_like(V)
            E[idx] = unit * h
            d = (ratio_objective(V + E, mu_hat, H_hat, sigma2)
                 - ratio_objective(V - E, mu_hat, H_hat, sigma2)) / (2 * h)
            fd[idx] += d * (1.0 if unit == 1.0 else 1j)
    return np.max(np.abs(fd - G)) / max(np.max(np.abs(G)), 1e-300)


@pytest.mark.parametrize("M,K", [(2, 1), (4, 2), (8, 3)])
def test_gradient_matches_finite_differences(M, K):
    rng = np.random.default_rng(M * 10 + K)
    H_hat = lift_channels(crandn(rng, K, M), 1.0)
    V = _random_point(rng, M, K)
    mu_hat = 1.0 + rng.uniform(0, 3, K)
    assert _fd_error(V, mu_hat, H_hat, 0.5) < 1e-5


def test_gradient_interference_free_limit():
    rng = np.random.default_rng(3)
    h = lift_channels(crandn(rng, 1, 4), 1.0)
    V = _random_point(rng, 4, 1)
    mu_hat = np.array([2.5])
    sigma2 = 1e8
    G = euclidean_gradient(V, mu_hat, h, sigma2)
    approx = -(2 * mu_hat[0] / sigma2) * np.outer(h[0], h[0].conj()) @ V
    np.testing.assert_allclose(G, approx, rtol=1e-6)


def test_tangent_projection():
    rng = np.random.default_rng(4)
    X = _random_point(rng, 4, 2)
    assert np.allclose(project_tangent(X, X), 0, atol=1e-14)
    G = crandn(rng, 5, 2)
    T = project_tangent(X, G)
    assert abs(np.real(np.vdot(X, T))) < 1e-12
    np.testing.assert_allclose(project_tangent(X, T), T, atol=1e-13)


def test_retraction():
    rng = np.random.default_rng(5)
    X = _random_point(rng, 3, 2)
    np.testing.assert_allclose(retract(X, 0.0, crandn(rng, 4, 2)), X)
    Y = retract(X, 0.7, project_tangent(X, crandn(rng, 4, 2)))
    assert np.linalg.norm(Y) == pytest.approx(1.0, abs=1e-12)
    e1, e2 = np.array([[1.0 + 0j], [0]]), np.array([[0j], [1.0]])
    np.testing.assert_allclose(retract(e1, 1.0, e2), np.array([[1], [1]]) / np.sqrt(2))
    with pytest.raises(NumericError):
        retract(e1, -1.0, e1)
    Z = retract(X, 0.3, crandn(rng, 4, 2), kind="elementwise")
    np.testing.assert_allclose(np.abs(Z), 1 / np.sqrt(Z.size))


def test_initial_point_on_sphere():
    rng = np.random.default_rng(6)
    V = initial_point(lift_channels(crandn(rng, 3, 8), 1e3))
    assert np.linalg.norm(V) == pytest.approx(1.0)
    assert np.all(np.abs(V[-1]) > 0)


def test_single_user_is_mrt_at_full_power():
    rng = np.random.default_rng(7)
    p_max = 1000.0
    for _ in range(5):
        h = 3e-5 * crandn(rng, 1, 8)
        res = rcg_solve(lift_channels(h, p_max), SIGMA2)
        w = recover_precoders(res.V, p_max)[:, 0]
        cos = abs(np.vdot(h[0], w)) / (np.linalg.norm(h) * np.linalg.norm(w))
        assert cos > 0.999
        assert np.linalg.norm(w) ** 2 == pytest.approx(p_max, rel=1e-3)


def test_orthogonal_users_split_power_evenly():
    # Two orthogonal equal-gain users at high SNR: the optimum splits p_max in half.
    p_max, g = 1000.0, 1e-4
    H = np.zeros((2, 4), complex)
    H[0, 0] = H[1, 1] = np.sqrt(g)
    res = rcg_solve(lift_channels(H, p_max), SIGMA2)
    W = recover_precoders(res.V, p_max)
    powers = np.sum(np.abs(W) ** 2, axis=0)
    grid = np.linspace(0.01, 0.99, 981)
    rates = np.log2(1 + grid * p_max * g / SIGMA2) + np.log2(1 + (1 - grid) * p_max * g / SIGMA2)
    best = grid[np.argmax(rates)]
    assert powers[0] / p_max == pytest.approx(best, rel=0.05)
    assert powers[1] / p_max == pytest.approx(1 - best, rel=0.05)


def test_trace_monotone_and_power_feasible():
    rng = np.random.default_rng(8)
    for _ in range(5):
        h = 3e-5 * crandn(rng, 3, 8)
        res = rcg_solve(lift_channels(h, 1e3), SIGMA2)
        obj = res.objective
        assert np.all(np.diff(obj) <= 1e-9)
        W = recover_precoders(res.V, 1e3)
        assert np.sum(np.abs(W) ** 2) <= 1e3 + 1e-9
        assert res.converged


def test_unassigned_columns_zeroed():
    rng = np.random.default_rng(9)
    V = _random_point(rng, 3, 3)
    W = recover_precoders(V, 4.0, assigned=[1, 0, 1])
    assert np.all(W[:, 1] == 0)
    np.testing.assert_allclose(W[:, 0], 2.0 * V[:3, 0])


def test_non_finite_channel_rejected():
    H = np.full((1, 3), np.nan, complex)
    with pytest.raises(ValueError):
        ManifoldBeamformer().fit(H)


def test_trace_csv(tmp_path):
    rng = np.random.default_rng(10)
    res = rcg_solve(lift_channels(3e-5 * crandn(rng, 2, 4), 1e3), SIGMA2)
    path = tmp_path / "trace.csv"
    write_trace_csv(res.trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,outer,inner,objective,grad_norm"
    assert len(lines) == len(res.trace) + 1


def test_estimator_api():
    rng = np.random.default_rng(11)
    H = 3e-5 * crandn(rng, 2, 8)
    est = ManifoldBeamformer(sigma2=SIGMA2)
    assert est.get_params()["p_max"] == 1000.0
    est.fit(H)
    assert est.coef_.shape == (8, 2)
    assert est.score(H) > 0
    other = clone(est).set_params(p_max=10.0)
    assert other.p_max == 10.0 and not hasattr(other, "coef_")


def test_more_antennas_never_hurt():
    rng = np.random.default_rng(12)
    h = 3e-5 * crandn(rng, 2, 4)
    small = ManifoldBeamformer(sigma2=SIGMA2).fit(h).score(h)
    padded = np.hstack([h, np.zeros((2, 4))])
    big = ManifoldBeamformer(sigma2=SIGMA2).fit(padded).score(padded)
    assert big >= small - 1e-6


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_iterates_stay_on_sphere(M, K, seed):
    rng = np.random.default_rng(seed)
    res = rcg_solve(lift_channels(crandn(rng, K, M), 1.0), 0.1, max_inner=30, max_outer=5)
    assert np.linalg.norm(res.V) == pytest.approx(1.0, abs=1e-9)
    obj = res.objective
    assert np.all(np.diff(obj) <= 1e-9 * np.maximum(1.0, np.abs(obj[:-1])))
