import math

import numpy as np
import pytest

from cartanconv import linalg as la
from cartanconv.errors import DomainError, RangeError, SingularMatrixError


def expm_series(x, terms=30):
    """Truncated power-series oracle for the matrix exponential."""
    acc = np.eye(2)
    term = np.eye(2)
    for k in range(1, terms + 1):
        term = term @ x / k
        acc = acc + term
    return acc


def random_symmetric(rng, scale=1.0, traceless=False):
    a, b, c = rng.standard_normal(3) * scale
    if traceless:
        c = -a
    return np.array([[a, b], [b, c]])


def test_sym_eig_diagonal():
    vals, rot = la.sym_eig(np.diag([3.0, 1.0]))
    np.testing.assert_array_equal(vals, [3.0, 1.0])
    assert rot.angle == 0.0


def test_sym_eig_offdiagonal_hand_solved():
    # characteristic polynomial of [[0,1],[1,0]] gives eigenvalues +-1,
    # eigenvector (1,1)/sqrt(2) at angle pi/4
    vals, rot = la.sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(vals, [1.0, -1.0], atol=1e-15)
    assert abs(rot.angle - math.pi / 4) < 1e-15


def test_sym_eig_isotropic_returns_identity_frame():
    vals, rot = la.sym_eig(2.5 * np.eye(2))
    np.testing.assert_array_equal(vals, [2.5, 2.5])
    assert rot.angle == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_sym_eig_reconstructs(seed):
    rng = np.random.default_rng(seed)
    x = random_symmetric(rng, scale=3.0)
    vals, rot = la.sym_eig(x)
    o = rot.matrix
    recon = o @ np.diag(vals) @ o.T
    assert np.abs(recon - x).max() <= 1e-12 * max(1.0, np.abs(x).max())
    assert vals[0] >= vals[1]


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(DomainError):
        la.sym_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_expm_zero_is_identity():
    np.testing.assert_array_equal(la.expm_sym(np.zeros((2, 2))), np.eye(2))


def test_expm_diagonal():
    out = la.expm_sym(np.diag([1.5, -0.5]))
    np.testing.assert_allclose(out, np.diag([math.exp(1.5), math.exp(-0.5)]), rtol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_expm_matches_series_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    x = random_symmetric(rng, scale=0.7)
    if np.abs(la.eig_sym_batch(x)[0]) > 2.0:
        x *= 2.0 / np.abs(la.eig_sym_batch(x)[0])
    out = la.expm_sym(x)
    np.testing.assert_allclose(out, expm_series(x), rtol=1e-12, atol=1e-12)


def test_expm_overflow_raises():
    with pytest.raises(RangeError):
        la.expm_sym(np.diag([701.0, 0.0]))


def test_logm_identity_is_zero():
    np.testing.assert_array_equal(la.logm_spd(np.eye(2)), np.zeros((2, 2)))


def test_logm_diagonal():
    out = la.logm_spd(np.diag([math.exp(2.0), math.exp(-2.0)]))
    np.testing.assert_allclose(out, np.diag([2.0, -2.0]), atol=1e-14)


def test_logm_rejects_singular():
    with pytest.raises(SingularMatrixError):
        la.logm_spd(np.diag([1.0, 0.0]))


def test_log_exp_round_trip_wide_spectrum():
    # eigenvalues log-uniform in [1e-3, 1e3]
    rng = np.random.default_rng(11)
    for _ in range(1000):
        d = np.exp(rng.uniform(math.log(1e-3), math.log(1e3), size=2))
        theta = rng.uniform(-math.pi, math.pi)
        s = la.from_eig_batch(max(d), min(d), theta)
        x = la.logm_spd(s)
        back = la.expm_sym(x)
        assert np.abs(back - s).max() <= 1e-10 * np.abs(s).max()


@pytest.mark.parametrize("seed", range(10))
def test_exp_log_inverse_on_symmetric(seed):
    rng = np.random.default_rng(300 + seed)
    x = random_symmetric(rng, scale=2.0)
    back = la.logm_spd(la.expm_sym(x))
    assert np.abs(back - x).max() < 1e-10 * max(1.0, np.abs(x).max())
    # trace identity: tr log S = log det S
    s = la.expm_sym(x)
    assert abs(np.trace(la.logm_spd(s)) - math.log(la.det2(s))) < 1e-10


def test_traceless_exp_has_unit_det():
    rng = np.random.default_rng(12)
    for _ in range(100):
        x = random_symmetric(rng, scale=2.0, traceless=True)
        assert abs(la.det2(la.expm_sym(x)) - 1.0) < 1e-12


def test_spd_power_trivial_cases():
    rng = np.random.default_rng(13)
    s = la.expm_sym(random_symmetric(rng))
    np.testing.assert_allclose(la.spd_power(s, 0.0), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(la.spd_power(s, 1.0), s, rtol=1e-14)


def test_spd_power_square_root_diagonal():
    np.testing.assert_allclose(
        la.spd_power(np.diag([4.0, 9.0]), 0.5), np.diag([2.0, 3.0]), rtol=1e-15, atol=1e-15
    )


@pytest.mark.parametrize("seed", range(10))
def test_spd_power_half_squares_back(seed):
    rng = np.random.default_rng(400 + seed)
    s = la.expm_sym(random_symmetric(rng, scale=1.5))
    half = la.spd_power(s, 0.5)
    assert np.abs(half @ half - s).max() < 1e-11 * max(1.0, np.abs(s).max())


@pytest.mark.parametrize("seed", range(10))
def test_spd_power_commutes_over_exponents(seed):
    rng = np.random.default_rng(500 + seed)
    s = la.expm_sym(random_symmetric(rng))
    a, b = rng.uniform(-1.5, 1.5, size=2)
    lhs = la.spd_power(s, a + b)
    rhs = la.spd_power(s, a) @ la.spd_power(s, b)
    assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(lhs).max())


def test_polar_identity():
    p, rot = la.polar_decompose(np.eye(2))
    np.testing.assert_allclose(p, np.eye(2), atol=1e-15)
    assert rot.angle == 0.0


def test_polar_pure_rotation():
    theta = 0.7
    p, rot = la.polar_decompose(la.so2_exp(theta))
    np.testing.assert_allclose(p, np.eye(2), atol=1e-14)
    assert abs(rot.angle - theta) < 1e-14


def test_polar_recovers_constructed_factors():
    p_true = np.diag([2.0, 0.5])
    theta = math.pi / 4
    a = p_true @ la.so2_exp(theta)
    p, rot = la.polar_decompose(a)
    np.testing.assert_allclose(p, p_true, rtol=1e-13, atol=1e-13)
    assert abs(rot.angle - theta) < 1e-13


def test_polar_rejects_negative_det():
    with pytest.raises(DomainError):
        la.polar_decompose(np.diag([1.0, -1.0]))


@pytest.mark.parametrize("seed", range(20))
def test_polar_reconstruction_random(seed):
    rng = np.random.default_rng(600 + seed)
    a = rng.standard_normal((2, 2))
    if la.det2(a) < 0:
        a[0] = -a[0]
    if la.det2(a) <= 1e-3:  # keep well inside the domain
        a = a + 2.0 * np.eye(2)
    p, rot = la.polar_decompose(a)
    vals, _ = la.sym_eig(p)
    assert vals[1] > 0  # SPD factor
    recon = p @ rot.matrix
    assert np.abs(recon - a).max() < 1e-10 * np.abs(a).max()


def test_so2_exp_quarter_turn():
    np.testing.assert_allclose(la.so2_exp(math.pi / 2), np.array([[0.0, -1.0], [1.0, 0.0]]), atol=1e-16)


def test_so2_exp_log_identity():
    assert la.so2_log(np.eye(2)) == 0.0
    np.testing.assert_array_equal(la.so2_exp(0.0), np.eye(2))


@pytest.mark.parametrize("theta", [-3.0, 0.1, 3.1, 4.0])
def test_so2_log_wraps_to_principal_branch(theta):
    # independent wrap oracle
    wrapped = math.remainder(theta, 2 * math.pi)
    if wrapped >= math.pi:
        wrapped -= 2 * math.pi
    assert abs(float(la.so2_log(la.so2_exp(theta))) - wrapped) < 1e-12


def test_wrap_angle_half_open_convention():
    assert la.wrap_angle(math.pi) == -math.pi
    assert la.wrap_angle(-math.pi) == -math.pi
    assert la.wrap_angle(0.0) == 0.0


def test_rotation2_invariants():
    rot = la.Rotation2(1.2)
    m = rot.matrix
    assert np.abs(m.T @ m - np.eye(2)).max() < 1e-12
    assert abs(la.det2(m) - 1.0) < 1e-12
    assert la.Rotation2(math.pi).angle == -math.pi


def test_batch_kernels_match_scalar_api():
    rng = np.random.default_rng(14)
    xs = np.stack([random_symmetric(rng) for _ in range(50)])
    d1, d2, theta = la.eig_sym_batch(xs)
    batch_exp = la.expm_sym_batch(xs)
    for i in range(50):
        np.testing.assert_allclose(batch_exp[i], la.expm_sym(xs[i]), rtol=1e-14)
        vals, rot = la.sym_eig(xs[i])
        assert abs(vals[0] - d1[i]) < 1e-14 and abs(vals[1] - d2[i]) < 1e-14
        assert abs(rot.angle - la.wrap_angle(theta[i])) < 1e-14
