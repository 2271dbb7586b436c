"""Closed-form 2x2 matrix routines.

Symmetric spectral decomposition, matrix exponential/logarithm on
symmetric/SPD matrices, SPD powers, SO(2) exp/log, and the left polar
decomposition, all as exact closed forms for n = 2.  The public functions
take single (2, 2) arrays and validate their mathematical preconditions;
the ``*_batch`` kernels operate on stacked [..., 2, 2] arrays without
checks and are shared by the public functions, so there is a single source
of truth for every formula.

The dimension is fixed to 2 throughout: closed-form eigendecomposition and
the principal SO(2) logarithm stay exact.  The module-level tolerances are
the only tunables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, RangeError, SingularMatrixError

Array = np.ndarray

EPS_SPD = 1e-12  # eigenvalue floor below which logm refuses
EXP_LIMIT = 700.0  # exp argument beyond which float64 overflows

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap to the principal branch [-pi, pi); -pi is included, +pi is not."""
    return np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI) - math.pi


def so2_exp(theta) -> Array:
    """Rotation matrices [[cos, -sin], [sin, cos]] for angle(s) theta."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def so2_log(rotation: Array):
    """Principal angle in [-pi, pi) of rotation matrix (or stack of them)."""
    rotation = np.asarray(rotation, dtype=np.float64)
    theta = np.arctan2(rotation[..., 1, 0], rotation[..., 0, 0])
    return wrap_angle(theta)


@dataclass(frozen=True)
class Rotation2:
    """An SO(2) element stored as its principal angle in [-pi, pi)."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(wrap_angle(self.angle)))

    @property
    def matrix(self) -> Array:
        return so2_exp(self.angle)

    def inverse(self) -> "Rotation2":
        return Rotation2(-self.angle)

    @classmethod
    def from_matrix(cls, rotation: Array) -> "Rotation2":
        return cls(float(so2_log(rotation)))


# -- batch kernels (no validation) ----------------------------------------


def sym_parts(x: Array) -> tuple[Array, Array, Array]:
    """Entries (a, b, c) of the symmetrized matrix [[a, b], [b, c]]."""
    a = x[..., 0, 0]
    c = x[..., 1, 1]
    b = 0.5 * (x[..., 0, 1] + x[..., 1, 0])
    return a, b, c


def eig_sym_batch(x: Array) -> tuple[Array, Array, Array]:
    """Eigenvalues d1 >= d2 and frame angle theta of symmetric [..., 2, 2].

    theta is the angle of the SO(2) eigenvector frame; an isotropic matrix
    gets theta = 0.
    """
    a, b, c = sym_parts(x)
    mid = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    return mid + rad, mid - rad, theta


def from_eig_batch(d1: Array, d2: Array, theta: Array) -> Array:
    """Reassemble O diag(d1, d2) O^T for the frame angle theta."""
    c, s = np.cos(theta), np.sin(theta)
    cc, ss, cs = c * c, s * s, c * s
    out = np.empty(np.broadcast(d1, d2, theta).shape + (2, 2))
    out[..., 0, 0] = d1 * cc + d2 * ss
    out[..., 1, 1] = d1 * ss + d2 * cc
    out[..., 0, 1] = (d1 - d2) * cs
    out[..., 1, 0] = out[..., 0, 1]
    return out


def expm_sym_batch(x: Array) -> Array:
    d1, d2, theta = eig_sym_batch(x)
    return from_eig_batch(np.exp(d1), np.exp(d2), theta)


def logm_spd_batch(s: Array) -> Array:
    d1, d2, theta = eig_sym_batch(s)
    return from_eig_batch(np.log(d1), np.log(d2), theta)


def spd_power_batch(s: Array, alpha: float) -> Array:
    d1, d2, theta = eig_sym_batch(s)
    return from_eig_batch(d1**alpha, d2**alpha, theta)


def det2(a: Array) -> Array:
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def gram_eig_batch(a: Array) -> tuple[Array, Array, Array]:
    """Eigen-data of A A^T computed stably from the factor A (det A > 0).

    The small eigenvalue is recovered as det(A)^2 / lambda_1, which avoids
    the cancellation in (mid - rad) when A is ill-conditioned; log of the
    small eigenvalue therefore stays accurate up to condition 1e6 and
    beyond.
    """
    gram = a @ np.swapaxes(a, -1, -2)
    ga, gb, gc = sym_parts(gram)
    mid = 0.5 * (ga + gc)
    rad = np.hypot(0.5 * (ga - gc), gb)
    lam1 = mid + rad
    lam2 = det2(a) ** 2 / lam1
    theta = 0.5 * np.arctan2(2.0 * gb, ga - gc)
    return lam1, lam2, theta


def polar_batch(a: Array) -> tuple[Array, Array]:
    """Left polar factors (P, theta_R) of A = P R for stacked det>0 matrices."""
    lam1, lam2, theta = gram_eig_batch(a)
    sq1, sq2 = np.sqrt(lam1), np.sqrt(lam2)
    p = from_eig_batch(sq1, sq2, theta)
    p_inv = from_eig_batch(1.0 / sq1, 1.0 / sq2, theta)
    theta_r = so2_log(p_inv @ a)
    return p, theta_r


def cartan_split_batch(a: Array) -> tuple[Array, Array]:
    """(X, theta_R) with A = exp(X) R, X = 0.5 log(A A^T), for det>0 stacks."""
    lam1, lam2, theta = gram_eig_batch(a)
    x = from_eig_batch(0.5 * np.log(lam1), 0.5 * np.log(lam2), theta)
    inv_sqrt = from_eig_batch(lam1**-0.5, lam2**-0.5, theta)
    theta_r = so2_log(inv_sqrt @ a)
    return x, theta_r


# -- validated single-matrix API -------------------------------------------


def _check_2x2(x, name: str) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2, 2):
        raise DimensionError(f"{name}: expected a (2, 2) array, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name}: entries must be finite")
    return x


def _check_symmetric(x, name: str) -> Array:
    x = _check_2x2(x, name)
    scale = max(1.0, float(np.abs(x).max()))
    if abs(x[0, 1] - x[1, 0]) > 1e-10 * scale:
        raise DomainError(f"{name}: matrix is not symmetric")
    return x


def sym_eig(x) -> tuple[Array, Rotation2]:
    """Spectral decomposition X = O diag(d1, d2) O^T with d1 >= d2, O in SO(2)."""
    x = _check_symmetric(x, "sym_eig")
    d1, d2, theta = eig_sym_batch(x)
    return np.array([float(d1), float(d2)]), Rotation2(float(theta))


def expm_sym(x) -> Array:
    """exp of a symmetric matrix; SPD by construction, unit det if traceless."""
    x = _check_symmetric(x, "expm_sym")
    d1, d2, theta = eig_sym_batch(x)
    if max(abs(float(d1)), abs(float(d2))) > EXP_LIMIT:
        raise RangeError(f"expm_sym: eigenvalue magnitude exceeds {EXP_LIMIT}")
    return from_eig_batch(np.exp(d1), np.exp(d2), theta)


def logm_spd(s) -> Array:
    """Principal log of an SPD matrix; inverse of expm_sym on its image."""
    s = _check_symmetric(s, "logm_spd")
    d1, d2, theta = eig_sym_batch(s)
    if float(d2) <= EPS_SPD:
        raise SingularMatrixError(
            f"logm_spd: eigenvalue {float(d2):.3e} at or below floor {EPS_SPD}"
        )
    return from_eig_batch(np.log(d1), np.log(d2), theta)


def spd_power(s, alpha: float) -> Array:
    """S^alpha = exp(alpha log S) for SPD S."""
    s = _check_symmetric(s, "spd_power")
    d1, d2, theta = eig_sym_batch(s)
    if float(d2) <= EPS_SPD:
        raise SingularMatrixError(
            f"spd_power: eigenvalue {float(d2):.3e} at or below floor {EPS_SPD}"
        )
    return from_eig_batch(d1 ** float(alpha), d2 ** float(alpha), theta)


def polar_decompose(a) -> tuple[Array, Rotation2]:
    """Left polar factors A = P R with P = sqrt(A A^T) SPD and R in SO(2).

    Only the identity component det A > 0 is admitted.
    """
    a = _check_2x2(a, "polar_decompose")
    det = float(det2(a))
    if det <= 0.0:
        raise DomainError(f"polar_decompose: det(A) = {det:.3e} is not positive")
    p, theta_r = polar_batch(a)
    if not np.all(np.isfinite(p)):
        raise SingularMatrixError("polar_decompose: A A^T numerically singular")
    return p, Rotation2(float(theta_r))
