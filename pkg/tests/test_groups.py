import math

import numpy as np
import pytest

from cartanconv import groups as gr
from cartanconv import linalg as la
from cartanconv.errors import DimensionError, DomainError
from cartanconv.groups import AffineElement, GroupElement, GroupKind
from cartanconv.linalg import Rotation2


def random_element(rng, kind, log_scale=0.8):
    """exp(X) R with X symmetric (traceless for SL) and R a random rotation."""
    coords = rng.standard_normal(kind.sym_dim) * log_scale
    x = gr.hat_sym(coords, kind)
    theta = rng.uniform(-math.pi, math.pi)
    return gr.cartan_join(x, Rotation2(theta), kind)


def random_affine(rng, kind):
    return AffineElement(rng.standard_normal(2), random_element(rng, kind))


def test_group_element_validation():
    with pytest.raises(DomainError):
        GroupElement(GroupKind.GL_PLUS, np.diag([1.0, -1.0]))
    with pytest.raises(DomainError):
        GroupElement(GroupKind.SL, np.diag([2.0, 1.0]))
    with pytest.raises(DimensionError):
        GroupElement(GroupKind.SL, np.eye(3))


def test_compose_identity():
    e = AffineElement.identity(GroupKind.SL)
    h = AffineElement(np.array([1.0, 2.0]), GroupElement(GroupKind.SL, la.so2_exp(0.3)))
    out = gr.compose(e, h)
    np.testing.assert_array_equal(out.translation, h.translation)
    np.testing.assert_array_equal(out.linear.mat, h.linear.mat)


def test_compose_with_inverse_gives_identity():
    rng = np.random.default_rng(0)
    g = random_affine(rng, GroupKind.GL_PLUS)
    out = gr.compose(g, gr.inverse(g))
    assert np.abs(out.translation).max() < 1e-12
    assert np.abs(out.linear.mat - np.eye(2)).max() < 1e-12


def test_compose_hand_example():
    # ((1,0), R(pi/2)) * ((1,0), I) = ((1,1), R(pi/2)):
    # translation: (1,0) + R(pi/2) (1,0) = (1,0) + (0,1)
    g = AffineElement(np.array([1.0, 0.0]), GroupElement(GroupKind.SL, la.so2_exp(math.pi / 2)))
    h = AffineElement(np.array([1.0, 0.0]), GroupElement.identity(GroupKind.SL))
    out = gr.compose(g, h)
    np.testing.assert_allclose(out.translation, [1.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(out.linear.mat, la.so2_exp(math.pi / 2), atol=1e-15)


def test_compose_kind_mismatch():
    a = AffineElement.identity(GroupKind.SL)
    b = AffineElement.identity(GroupKind.GL_PLUS)
    with pytest.raises(DomainError):
        gr.compose(a, b)


def test_inverse_trivial_cases():
    e = AffineElement.identity(GroupKind.SL)
    np.testing.assert_array_equal(gr.inverse(e).translation, np.zeros(2))
    t = AffineElement(np.array([3.0, -1.0]), GroupElement.identity(GroupKind.SL))
    np.testing.assert_array_equal(gr.inverse(t).translation, [-3.0, 1.0])


def test_act_on_point():
    e = AffineElement.identity(GroupKind.SL)
    np.testing.assert_array_equal(gr.act_on_point(e, np.array([0.5, 0.25])), [0.5, 0.25])
    shift = AffineElement(np.array([1.0, 0.0]), GroupElement.identity(GroupKind.SL))
    np.testing.assert_array_equal(gr.act_on_point(shift, np.array([0.0, 2.0])), [1.0, 2.0])
    quarter = AffineElement(np.zeros(2), GroupElement(GroupKind.SL, la.so2_exp(math.pi / 2)))
    np.testing.assert_allclose(gr.act_on_point(quarter, np.array([1.0, 0.0])), [0.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("kind", [GroupKind.GL_PLUS, GroupKind.SL])
def test_associativity(kind):
    rng = np.random.default_rng(1)
    for _ in range(25):
        g, h, k = (random_affine(rng, kind) for _ in range(3))
        lhs = gr.compose(gr.compose(g, h), k)
        rhs = gr.compose(g, gr.compose(h, k))
        assert np.abs(lhs.translation - rhs.translation).max() < 1e-12 * max(
            1.0, np.abs(lhs.translation).max()
        )
        assert np.abs(lhs.linear.mat - rhs.linear.mat).max() < 1e-12 * max(
            1.0, np.abs(lhs.linear.mat).max()
        )


def test_cartan_split_identity_and_rotation():
    x, rot = gr.cartan_split(GroupElement.identity(GroupKind.SL))
    assert np.abs(x).max() < 1e-15 and rot.angle == 0.0
    x, rot = gr.cartan_split(GroupElement(GroupKind.SL, la.so2_exp(0.9)))
    assert np.abs(x).max() < 1e-14
    assert abs(rot.angle - 0.9) < 1e-14


def test_cartan_split_diagonal_example():
    # A = diag(e, 1/e): A A^T = diag(e^2, e^-2), X = diag(1, -1), R = I
    a = GroupElement(GroupKind.SL, np.diag([math.e, 1.0 / math.e]))
    x, rot = gr.cartan_split(a)
    np.testing.assert_allclose(x, np.diag([1.0, -1.0]), atol=1e-14)
    assert abs(rot.angle) < 1e-14


def test_cartan_join_trivial():
    assert np.abs(gr.cartan_join(np.zeros((2, 2)), Rotation2(0.0), GroupKind.SL).mat - np.eye(2)).max() == 0.0
    out = gr.cartan_join(np.zeros((2, 2)), Rotation2(1.1), GroupKind.SL)
    np.testing.assert_allclose(out.mat, la.so2_exp(1.1), atol=1e-15)


def test_cartan_join_rejects_trace_for_sl():
    with pytest.raises(DomainError):
        gr.cartan_join(np.eye(2), Rotation2(0.0), GroupKind.SL)


@pytest.mark.parametrize("kind", [GroupKind.GL_PLUS, GroupKind.SL])
def test_cartan_round_trip(kind):
    rng = np.random.default_rng(2)
    for _ in range(50):
        g = random_element(rng, kind)
        x, rot = gr.cartan_split(g)
        back = gr.cartan_join(x, rot, kind)
        assert np.abs(back.mat - g.mat).max() < 1e-10 * np.abs(g.mat).max()
        if kind is GroupKind.SL:
            assert abs(np.trace(x)) < 1e-10
            assert abs(back.det - 1.0) < 1e-10


def test_cartan_consistent_with_polar():
    # exp of the cartan log-part equals the polar SPD factor
    rng = np.random.default_rng(3)
    for _ in range(25):
        g = random_element(rng, GroupKind.GL_PLUS)
        x, _ = gr.cartan_split(g)
        p, _ = gr.polar_split(g)
        assert np.abs(la.expm_sym(x) - p).max() < 1e-10 * np.abs(p).max()


def test_basis_gram_matrix_is_identity():
    for kind in (GroupKind.GL_PLUS, GroupKind.SL):
        gens = gr.basis(kind)
        gram = np.array([[gr.inner_product(a, b) for b in gens] for a in gens])
        assert np.abs(gram - np.eye(kind.algebra_dim)).max() < 1e-12


def test_vee_hat_inverse_on_basis():
    for kind in (GroupKind.GL_PLUS, GroupKind.SL):
        d = kind.algebra_dim
        for i in range(d):
            unit = np.zeros(d)
            unit[i] = 1.0
            z = gr.hat(unit, kind)
            np.testing.assert_allclose(gr.vee(z, kind), unit, atol=1e-15)
        np.testing.assert_array_equal(gr.vee(np.zeros((2, 2)), kind), np.zeros(d))


@pytest.mark.parametrize("kind", [GroupKind.GL_PLUS, GroupKind.SL])
def test_vee_is_isometric(kind):
    rng = np.random.default_rng(4)
    for _ in range(50):
        v = rng.standard_normal(kind.algebra_dim)
        z = gr.hat(v, kind)
        np.testing.assert_allclose(gr.vee(z, kind), v, atol=1e-14)
        assert abs(np.sum(gr.vee(z, kind) ** 2) - gr.inner_product(z, z)) < 1e-12 * max(
            1.0, np.sum(v**2)
        )


def test_xi_inverse_identity_is_zero():
    assert np.abs(gr.xi_inverse(GroupElement.identity(GroupKind.SL))).max() < 1e-15


def test_xi_inverse_pure_rotation_coordinate():
    # theta J projected on J/(2 sqrt 2) gives coordinate 2 sqrt(2) theta
    theta = 0.35
    coords = gr.xi_inverse(GroupElement(GroupKind.SL, la.so2_exp(theta)))
    assert abs(coords[0] - 2.0 * math.sqrt(2.0) * theta) < 1e-12
    assert np.abs(coords[1:]).max() < 1e-12


@pytest.mark.parametrize("kind", [GroupKind.GL_PLUS, GroupKind.SL])
def test_xi_round_trip(kind):
    rng = np.random.default_rng(5)
    for _ in range(50):
        g = random_element(rng, kind)
        x, rot = gr.cartan_split(g)
        coords = gr.xi_inverse(g)
        z = gr.hat(coords, kind)
        # hat reproduces X + theta J exactly
        np.testing.assert_allclose(z, x + rot.angle * gr.J, atol=1e-12)
        back = gr.xi_forward(coords, kind)
        assert np.abs(back.mat - g.mat).max() < 1e-10 * np.abs(g.mat).max()


def test_xi_inverse_batch_matches_scalar():
    rng = np.random.default_rng(6)
    mats = np.stack([random_element(rng, GroupKind.SL).mat for _ in range(20)])
    batch = gr.xi_inverse_batch(mats, GroupKind.SL)
    for i in range(20):
        scalar = gr.xi_inverse(GroupElement(GroupKind.SL, mats[i]))
        np.testing.assert_allclose(batch[i], scalar, atol=1e-14)


def test_bch_abelian_on_rotation_subalgebra():
    # multiples of J commute: log(e^X e^Y) = X + Y on coordinates
    for ta, tb in [(0.2, 0.5), (-0.8, 0.3), (1.2, -0.4)]:
        ga = GroupElement(GroupKind.SL, la.so2_exp(ta))
        gb = GroupElement(GroupKind.SL, la.so2_exp(tb))
        lhs = gr.xi_inverse(ga @ gb)
        rhs = gr.xi_inverse(ga) + gr.xi_inverse(gb)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_gl_to_sl_split_unit_det_passthrough():
    g = GroupElement(GroupKind.SL, la.so2_exp(0.4))
    out, t = gr.gl_to_sl_split(g)
    assert t == 1.0
    np.testing.assert_array_equal(out.mat, g.mat)


def test_gl_to_sl_split_scaled_identity():
    g = GroupElement(GroupKind.GL_PLUS, 2.0 * np.eye(2))
    out, t = gr.gl_to_sl_split(g)
    assert abs(t - 2.0) < 1e-15
    np.testing.assert_allclose(out.mat, np.eye(2), atol=1e-15)


def test_gl_to_sl_split_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(25):
        g = random_element(rng, GroupKind.GL_PLUS)
        sl, t = gr.gl_to_sl_split(g)
        assert abs(sl.det - 1.0) < 1e-12
        assert np.abs(t * sl.mat - g.mat).max() < 1e-12 * np.abs(g.mat).max()


def test_inv2_matches_numpy():
    rng = np.random.default_rng(8)
    mats = np.stack([random_element(rng, GroupKind.GL_PLUS).mat for _ in range(10)])
    np.testing.assert_allclose(gr.inv2(mats), np.linalg.inv(mats), rtol=1e-10, atol=1e-12)
