"""Group element types and the decomposition maps into algebra coordinates.

Covers GL+(2), SL(2) and their affine extensions R^2 x| G: composition and
inversion, the split A = exp(X) R into a symmetric log-part and a rotation
(with its inverse), the polar-style join/split at group level, and the
linear vee/hat maps between tangent vectors and coordinate vectors in a
basis orthonormal under B(X, Y) = 4 tr(X^T Y).

Basis layout (fixed so kernel weights are reproducible across runs):
index 0 the skew direction, 1 the symmetric off-diagonal, 2 the traceless
symmetric diagonal, and (GL+ only) 3 the trace direction.  Each generator
carries the 1/(2 sqrt 2) normalization that makes the Gram matrix under B
the identity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import linalg as la
from .errors import DimensionError, DomainError
from .linalg import Rotation2

Array = np.ndarray

SL_DET_TOL = 1e-10
SL_TRACE_TOL = 1e-10

_NORM = 1.0 / (2.0 * math.sqrt(2.0))

#: skew generator J; exp(theta J) = R(theta)
J = np.array([[0.0, -1.0], [1.0, 0.0]])

E_SKEW = J * _NORM
E_SYM_OFF = np.array([[0.0, 1.0], [1.0, 0.0]]) * _NORM
E_SYM_DIAG = np.array([[1.0, 0.0], [0.0, -1.0]]) * _NORM
E_TRACE = np.eye(2) * _NORM


class GroupKind(enum.Enum):
    GL_PLUS = "gl+(2)"
    SL = "sl(2)"

    @property
    def algebra_dim(self) -> int:
        return 4 if self is GroupKind.GL_PLUS else 3

    @property
    def sym_dim(self) -> int:
        """Dimension of the symmetric factor of the tangent space."""
        return 3 if self is GroupKind.GL_PLUS else 2


def basis(kind: GroupKind) -> Array:
    """Generators [d, 2, 2], orthonormal under B(X, Y) = 4 tr(X^T Y)."""
    gens = [E_SKEW, E_SYM_OFF, E_SYM_DIAG]
    if kind is GroupKind.GL_PLUS:
        gens.append(E_TRACE)
    return np.stack(gens)


def sym_basis(kind: GroupKind) -> Array:
    """Generators of the symmetric factor only (traceless first, then trace)."""
    gens = [E_SYM_OFF, E_SYM_DIAG]
    if kind is GroupKind.GL_PLUS:
        gens.append(E_TRACE)
    return np.stack(gens)


def inner_product(x: Array, y: Array):
    """B(X, Y) = 4 tr(X^T Y), batched over leading axes."""
    return 4.0 * np.einsum("...ij,...ij->...", np.asarray(x), np.asarray(y))


def vee(z: Array, kind: GroupKind) -> Array:
    """Coordinates of a tangent matrix in the orthonormal basis.

    Inverse of :func:`hat`; isometric between B on the algebra and the
    Euclidean norm on coordinates.
    """
    z = np.asarray(z, dtype=np.float64)
    skew = (z[..., 1, 0] - z[..., 0, 1]) * 0.5 / _NORM
    off = (z[..., 0, 1] + z[..., 1, 0]) * 0.5 / _NORM
    diag = (z[..., 0, 0] - z[..., 1, 1]) * 0.5 / _NORM
    coords = [skew, off, diag]
    if kind is GroupKind.GL_PLUS:
        coords.append((z[..., 0, 0] + z[..., 1, 1]) * 0.5 / _NORM)
    return np.stack(coords, axis=-1)


def hat(v: Array, kind: GroupKind) -> Array:
    """Tangent matrix with the given coordinates; inverse of :func:`vee`."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != kind.algebra_dim:
        raise DimensionError(f"hat: expected {kind.algebra_dim} coordinates, got {v.shape[-1]}")
    return np.einsum("...d,dij->...ij", v, basis(kind))


def hat_sym(v: Array, kind: GroupKind) -> Array:
    """Symmetric tangent matrix from coordinates in the symmetric factor."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != kind.sym_dim:
        raise DimensionError(f"hat_sym: expected {kind.sym_dim} coordinates, got {v.shape[-1]}")
    return np.einsum("...d,dij->...ij", v, sym_basis(kind))


@dataclass(frozen=True)
class GroupElement:
    """An element of GL+(2) or SL(2) as its 2x2 matrix."""

    kind: GroupKind
    mat: Array

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=np.float64)
        if mat.shape != (2, 2):
            raise DimensionError(f"GroupElement: expected (2, 2) matrix, got {mat.shape}")
        det = float(la.det2(mat))
        if self.kind is GroupKind.SL:
            if abs(det - 1.0) > SL_DET_TOL:
                raise DomainError(f"SL(2) element must have det 1, got {det!r}")
        elif det <= 0.0:
            raise DomainError(f"GL+(2) element must have det > 0, got {det!r}")
        object.__setattr__(self, "mat", mat)

    @property
    def det(self) -> float:
        return float(la.det2(self.mat))

    def inverse(self) -> "GroupElement":
        return GroupElement(self.kind, inv2(self.mat))

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        if self.kind is not other.kind:
            raise DomainError("cannot compose elements of different group kinds")
        return GroupElement(self.kind, self.mat @ other.mat)

    @classmethod
    def identity(cls, kind: GroupKind) -> "GroupElement":
        return cls(kind, np.eye(2))


def inv2(mat: Array) -> Array:
    """Closed-form inverse of stacked 2x2 matrices."""
    mat = np.asarray(mat, dtype=np.float64)
    det = la.det2(mat)[..., None, None]
    adj = np.empty_like(mat)
    adj[..., 0, 0] = mat[..., 1, 1]
    adj[..., 1, 1] = mat[..., 0, 0]
    adj[..., 0, 1] = -mat[..., 0, 1]
    adj[..., 1, 0] = -mat[..., 1, 0]
    return adj / det


@dataclass(frozen=True)
class AffineElement:
    """(x, A) in R^2 x| G acting by p -> A p + x."""

    translation: Array
    linear: GroupElement

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (2,):
            raise DimensionError(f"AffineElement: translation must be shape (2,), got {t.shape}")
        object.__setattr__(self, "translation", t)

    @property
    def kind(self) -> GroupKind:
        return self.linear.kind

    @classmethod
    def identity(cls, kind: GroupKind) -> "AffineElement":
        return cls(np.zeros(2), GroupElement.identity(kind))


def compose(g: AffineElement, h: AffineElement) -> AffineElement:
    """(x, A)(y, B) = (x + A y, A B)."""
    if g.kind is not h.kind:
        raise DomainError("cannot compose affine elements of different group kinds")
    return AffineElement(g.translation + g.linear.mat @ h.translation, g.linear @ h.linear)


def inverse(g: AffineElement) -> AffineElement:
    """(x, A)^-1 = (-A^-1 x, A^-1)."""
    lin_inv = g.linear.inverse()
    return AffineElement(-(lin_inv.mat @ g.translation), lin_inv)


def act_on_point(g: AffineElement, point: Array) -> Array:
    """g . p = A p + x (the action inside the regular representation)."""
    point = np.asarray(point, dtype=np.float64)
    return g.linear.mat @ point + g.translation


# -- decomposition maps -----------------------------------------------------


def cartan_split(g: GroupElement) -> tuple[Array, Rotation2]:
    """A -> (X, R) with A = exp(X) R, X = 0.5 log(A A^T) symmetric.

    For SL(2) elements X is traceless to rounding.
    """
    x, theta = la.cartan_split_batch(g.mat)
    if not np.all(np.isfinite(x)):
        raise DomainError("cartan_split: A A^T is numerically singular")
    return x, Rotation2(float(theta))


def cartan_join(x: Array, rotation: Rotation2, kind: GroupKind) -> GroupElement:
    """(X, R) -> exp(X) R; requires tr X = 0 for SL(2)."""
    x = np.asarray(x, dtype=np.float64)
    if kind is GroupKind.SL and abs(np.trace(x)) > SL_TRACE_TOL:
        raise DomainError(f"cartan_join: SL(2) requires traceless X, tr = {np.trace(x):.3e}")
    return GroupElement(kind, la.expm_sym(x) @ rotation.matrix)


def polar_split(g: GroupElement) -> tuple[Array, Rotation2]:
    """A -> (P, R) with A = P R, P = sqrt(A A^T) SPD."""
    p, rot = la.polar_decompose(g.mat)
    return p, rot


def polar_join(p: Array, rotation: Rotation2, kind: GroupKind) -> GroupElement:
    """(P, R) -> P R for SPD P."""
    return GroupElement(kind, np.asarray(p, dtype=np.float64) @ rotation.matrix)


def xi_inverse(g: GroupElement) -> Array:
    """Algebra coordinates of A: split A = exp(X) exp(theta J), return vee(X + theta J).

    The rotation log takes the principal branch; hat of the result
    reproduces X + theta J exactly (vee and hat are mutually inverse
    linear maps).
    """
    x, rot = cartan_split(g)
    return vee(x + rot.angle * J, g.kind)


def xi_inverse_batch(mats: Array, kind: GroupKind) -> Array:
    """Vectorized :func:`xi_inverse` on stacked matrices (no validation)."""
    x, theta = la.cartan_split_batch(mats)
    z = x + theta[..., None, None] * J
    return vee(z, kind)


def xi_forward(coords: Array, kind: GroupKind) -> GroupElement:
    """Inverse of :func:`xi_inverse`: coords -> exp(X) exp(theta J)."""
    z = hat(np.asarray(coords, dtype=np.float64), kind)
    x = 0.5 * (z + z.T)
    theta = float(z[1, 0] - z[0, 1]) * 0.5
    return cartan_join(x, Rotation2(theta), kind)


def gl_to_sl_split(g: GroupElement) -> tuple[GroupElement, float]:
    """A -> (A / det(A)^{1/2}, det(A)^{1/2}); reconstruction t * A_sl = A."""
    if g.kind is not GroupKind.GL_PLUS:
        return g, 1.0
    t = math.sqrt(g.det)
    return GroupElement(GroupKind.SL, g.mat / t), t
