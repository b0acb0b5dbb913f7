import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wbcog.channels import (
    ChannelSet,
    estimated_channels,
    generate_channel_set,
    inject_csi_error,
    path_loss_umi,
    sample_positions,
    sample_rician,
    steering_vector,
)
from wbcog.config import Scenario

from conftest import table1_channels


def test_path_loss_units():
    assert 10 * np.log10(1 / path_loss_umi(1.0, 1e9)) == pytest.approx(32.4)
    assert 10 * np.log10(1 / path_loss_umi(70.0, 28e9)) == pytest.approx(100.09021946714378)
    ratio = path_loss_umi(10.0, 28e9) / path_loss_umi(100.0, 28e9)
    assert ratio == pytest.approx(10 ** 2.1, rel=1e-12)


def test_path_loss_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        path_loss_umi(0.0, 28e9)


def test_steering_examples():
    np.testing.assert_allclose(steering_vector(1, 0.7), [1.0])
    np.testing.assert_allclose(steering_vector(2, 0.0), np.ones(2) / np.sqrt(2))
    n = np.arange(4)
    np.testing.assert_allclose(steering_vector(4, np.pi / 6), 0.5 * np.exp(1j * np.pi * n * 0.5))


@given(st.integers(1, 64), st.floats(-np.pi / 2, np.pi / 2))
def test_steering_unit_norm(N, theta):
    assert np.linalg.norm(steering_vector(N, theta)) == pytest.approx(1.0, abs=1e-12)


def test_rician_limits():
    rng = np.random.default_rng(0)
    los = np.exp(1j * rng.uniform(0, 2 * np.pi, (3, 4)))
    zeta = 2e-9
    pure = sample_rician(3, 4, 1e12, zeta, los, rng)
    np.testing.assert_allclose(pure, np.sqrt(zeta) * los, rtol=1e-5)
    assert np.all(sample_rician(3, 4, 2.0, 0.0, los, rng) == 0)
    with pytest.raises(ValueError):
        sample_rician(3, 3, 2.0, zeta, los, rng)


def test_rician_moments():
    rng = np.random.default_rng(1)
    los = np.ones((1, 100_000))
    nlos = sample_rician(1, 100_000, 0.0, 3.0, los, rng)
    assert np.mean(np.abs(nlos) ** 2) == pytest.approx(3.0, rel=0.03)
    kappa, zeta = 2.0, 1.0
    x = sample_rician(1, 20_000, kappa, zeta, np.ones((1, 20_000)), rng)
    se = np.sqrt(zeta / (kappa + 1) / 20_000)
    assert abs(x.mean() - np.sqrt(kappa * zeta / (kappa + 1))) < 5 * se


def test_channel_set_shapes_and_norms():
    sc = Scenario(K=1, T=1)
    ch = table1_channels(sc, 3)
    assert ch.h.shape == (sc.L, 1, sc.M) and ch.F.shape == (sc.L, sc.M, sc.N)
    assert ch.a.shape == (sc.L, 1, sc.N)
    np.testing.assert_allclose(np.linalg.norm(ch.a, axis=-1), 1.0)
    np.testing.assert_allclose(np.linalg.norm(ch.b, axis=-1), 1.0)
    np.testing.assert_allclose(np.abs(ch.beta), sc.beta_t_mag)
    assert ch.sigma2 == pytest.approx(sc.sigma2)


def test_channel_set_deterministic():
    sc = Scenario()
    a, b = table1_channels(sc, 11), table1_channels(sc, 11)
    for name in ("h", "g", "F", "a", "b", "G_SI", "beta", "theta"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = table1_channels(sc, 12)
    assert not np.array_equal(a.h, c.h)


def test_target_bearing_is_grid_peak():
    sc = Scenario(T=1, target_angles_deg=(10.0,))
    ch = table1_channels(sc, 0)
    grid = np.deg2rad(np.arange(-90, 90.0001, 0.01))
    resp = np.abs(steering_vector(sc.N, grid).conj() @ ch.a[0, 0]) ** 2
    assert np.rad2deg(grid[np.argmax(resp)]) == pytest.approx(10.0, abs=1e-6)


def test_fixed_angle_targets():
    sc = Scenario(T=4, target_angles_deg=(-40.0, -15.0, 10.0, 35.0))
    users, targets = sample_positions(sc, np.random.default_rng(0))
    ch = generate_channel_set(sc, users, targets, 0)
    np.testing.assert_allclose(np.rad2deg(ch.theta), [-40, -15, 10, 35], atol=1e-9)


def test_users_inside_region():
    sc = Scenario(K=200)
    users, _ = sample_positions(sc, np.random.default_rng(0))
    assert np.all(np.hypot(*(users - np.array(sc.user_center)).T) <= sc.user_radius + 1e-12)


def test_csi_error_examples():
    rng = np.random.default_rng(0)
    x = (rng.standard_normal(10) + 1j * rng.standard_normal(10))
    assert np.array_equal(inject_csi_error(x, 1.0, rng), x)
    assert np.all(inject_csi_error(np.zeros(5, complex), 0.3, rng) == 0)
    x = np.full(100_000, 2.0 - 1.0j)
    e = inject_csi_error(x, 0.5, rng) - x
    assert np.mean(np.abs(e) ** 2) / abs(x[0]) ** 2 == pytest.approx(0.5, rel=0.03)
    e = inject_csi_error(x, 0.2, rng, convention="literal") - x
    assert np.mean(np.abs(e) ** 2) / abs(x[0]) ** 2 == pytest.approx(0.2, rel=0.03)
    with pytest.raises(ValueError):
        inject_csi_error(x, 1.2, rng)


def test_estimates_touch_only_h_g_F():
    sc = Scenario()
    ch = table1_channels(sc, 0)
    est = estimated_channels(ch, 0.5, np.random.default_rng(1))
    assert not np.array_equal(est.h, ch.h) and not np.array_equal(est.F, ch.F)
    for name in ("a", "b", "G_SI", "beta"):
        assert np.array_equal(getattr(est, name), getattr(ch, name))


def test_json_round_trip(tmp_path):
    ch = table1_channels(Scenario(), 4)
    path = tmp_path / "ch.json"
    ch.dump(path)
    back = ChannelSet.from_json(json.loads(path.read_text()))
    for name in ("h", "g", "F", "a", "b", "G_SI", "beta", "theta"):
        assert np.array_equal(getattr(back, name), getattr(ch, name))
    assert back.sigma2 == ch.sigma2
