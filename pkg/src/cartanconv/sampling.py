"""Product samplers for GL+(2), SL(2) and affine extensions, with verifiers.

Sampling follows the factorization A = S^(1/2) R: the symmetric factor S is
log-Normal (an isotropic Gaussian in the orthonormal log-coordinates of the
symmetric part of the tangent space, centered at the identity) and R is
uniform on SO(2), continuous or on an equidistant grid.  The rotation
factor is exactly invariant under left rotations.  The symmetric factor is
a truncated surrogate for the infinite-mass invariant measure, so
full-group invariance checks are meaningful only near the identity; every
report carries that caveat.

Streams are counter-based (Philox) and keyed by (seed, path), so samplers
own independent substreams per use site and are reproducible.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import linalg as la
from .errors import DomainError
from .groups import GroupElement, GroupKind, hat_sym, xi_inverse_batch

Array = np.ndarray

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.35

TRUNCATION_CAVEAT = (
    "log-normal sigma truncates the non-compact factor: the sampler is a "
    "surrogate restriction of the invariant measure, exact only along the "
    "rotation factor; near-identity shifts incur an O(|g|^2) bias"
)


def substream(seed: int, *path) -> np.random.Generator:
    """Independent counter-based stream keyed by (seed, path)."""
    digest = hashlib.sha256(repr(path).encode()).digest()
    sub = int.from_bytes(digest[:8], "little")
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(sub)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SamplerConfig:
    """Log-normal spread and rotation mode of the product sampler."""

    sigma: float = DEFAULT_SIGMA
    so2_mode: str = "continuous"  # or "equidistant"
    so2_k: int = 8

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.so2_mode not in ("continuous", "equidistant"):
            raise DomainError(f"unknown so2 mode {self.so2_mode!r}")
        if self.so2_mode == "equidistant" and self.so2_k < 1:
            raise DomainError("equidistant mode needs so2_k >= 1")


def sample_so2(rng: np.random.Generator, mode: str = "continuous",
               k: int = 8, size=None) -> Array:
    """Rotation angles: Uniform[-pi, pi) or a uniformly chosen grid point 2 pi j / k."""
    if mode == "continuous":
        return rng.uniform(-math.pi, math.pi, size=size)
    if mode == "equidistant":
        if k < 1:
            raise DomainError("equidistant mode needs k >= 1")
        return la.wrap_angle(rng.integers(0, k, size=size) * (2.0 * math.pi / k))
    raise DomainError(f"unknown so2 mode {mode!r}")


def sample_spd(rng: np.random.Generator, sigma: float = DEFAULT_SIGMA,
               unit_det: bool = False, size=None) -> Array:
    """exp of a Gaussian in the orthonormal log-coordinates of the symmetric factor.

    ``unit_det`` restricts to the traceless coordinates, so every sample has
    determinant 1.  Draws whose exponential would overflow are resampled
    (and logged), keeping the distribution clean rather than clamped.
    """
    kind = GroupKind.SL if unit_det else GroupKind.GL_PLUS
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    coords = rng.normal(0.0, sigma, size=shape + (kind.sym_dim,))
    # eigenvalue magnitude of hat(v) is at most |v|/2 in these coordinates
    for _ in range(100):
        bad = np.linalg.norm(coords, axis=-1) / 2.0 > la.EXP_LIMIT
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        logger.warning("sample_spd: resampling %d overflow draws", n_bad)
        coords[bad] = rng.normal(0.0, sigma, size=(n_bad, kind.sym_dim))
    return la.expm_sym_batch(hat_sym(coords, kind))


def sample_group(rng: np.random.Generator, kind: GroupKind,
                 cfg: SamplerConfig = SamplerConfig(), size=None) -> Array:
    """A = S^(1/2) R with S log-normal and R uniform; stacked [size, 2, 2]."""
    s = sample_spd(rng, sigma=cfg.sigma, unit_det=(kind is GroupKind.SL), size=size)
    theta = sample_so2(rng, mode=cfg.so2_mode, k=cfg.so2_k, size=size)
    return la.spd_power_batch(s, 0.5) @ la.so2_exp(theta)


def sample_group_element(rng: np.random.Generator, kind: GroupKind,
                         cfg: SamplerConfig = SamplerConfig()) -> GroupElement:
    return GroupElement(kind, sample_group(rng, kind, cfg))


def sample_affine(rng: np.random.Generator, kind: GroupKind,
                  cfg: SamplerConfig = SamplerConfig(),
                  box: tuple = ((-1.0, 1.0), (-1.0, 1.0)), size=None) -> tuple[Array, Array]:
    """Translations uniform over ``box`` paired with linear samples."""
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    lo = np.array([box[0][0], box[1][0]])
    hi = np.array([box[0][1], box[1][1]])
    x = lo + (hi - lo) * rng.uniform(0.0, 1.0, size=shape + (2,))
    return x, sample_group(rng, kind, cfg, size=size)


def delta_weight(a) -> float:
    """delta(A) = |det A|; identically 1 on SL(2)."""
    mat = a.mat if isinstance(a, GroupElement) else np.asarray(a, dtype=np.float64)
    return float(abs(la.det2(mat)))


@dataclass(frozen=True)
class GroupSampleSet:
    """N sampled group elements with their cross-correlation delta weights.

    ``delta_weights[i]`` is delta(S_i^(-1/2)) = |det S_i|^(-1/2); it is set
    to exactly 1.0 for SL(2), where it is 1 by the group law.
    """

    kind: GroupKind
    mats: Array
    delta_weights: Array
    seed: int

    def __post_init__(self):
        if len(self.mats) != len(self.delta_weights):
            raise DomainError("sample set: elements and weights must have equal length")
        if np.any(self.delta_weights <= 0):
            raise DomainError("sample set: delta weights must be positive")

    def __len__(self) -> int:
        return len(self.mats)

    def permuted(self, perm) -> "GroupSampleSet":
        perm = np.asarray(perm)
        return GroupSampleSet(self.kind, self.mats[perm], self.delta_weights[perm], self.seed)


def sample_group_set(seed: int, kind: GroupKind, cfg: SamplerConfig, n: int,
                     stream: tuple = ("sample-set",)) -> GroupSampleSet:
    rng = substream(seed, *stream)
    mats = sample_group(rng, kind, cfg, size=n)
    if kind is GroupKind.SL:
        weights = np.ones(n)
    else:
        # det(S^{1/2} R) = det(S)^{1/2}, so delta(S^{-1/2}) = 1 / det(A)
        weights = 1.0 / np.abs(la.det2(mats))
    return GroupSampleSet(kind, mats, weights, seed)


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_samples: int
    n_excluded: int = 0

    def __post_init__(self):
        if self.std_error < 0:
            raise DomainError("std_error must be nonnegative")


def mc_integrate(f, n: int, rng: np.random.Generator, kind: GroupKind,
                 cfg: SamplerConfig = SamplerConfig(), chunk: int = 200_000) -> McEstimate:
    """Sample mean and standard error of ``f`` over n product-sampler draws.

    ``f`` maps stacked matrices [m, 2, 2] to values [m].  Weights are 1
    relative to the sampler's own base measure.  Non-finite values are
    excluded and counted.
    """
    total = 0.0
    total_sq = 0.0
    kept = 0
    excluded = 0
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        vals = np.asarray(f(sample_group(rng, kind, cfg, size=m)), dtype=np.float64)
        finite = np.isfinite(vals)
        excluded += int(m - finite.sum())
        vals = vals[finite]
        kept += vals.size
        total += vals.sum()
        total_sq += np.sum(vals * vals)
    if kept == 0:
        raise DomainError("mc_integrate: no finite values")
    mean = total / kept
    var = max(total_sq / kept - mean * mean, 0.0)
    se = math.sqrt(var / kept)
    return McEstimate(mean, se, kept, excluded)


# -- statistical verifiers --------------------------------------------------


def invariance_test(f, g_mat: Array, n: int, seed: int, kind: GroupKind,
                    cfg: SamplerConfig = SamplerConfig()) -> dict:
    """Compare the estimates of integral(f) and integral(f o g^-1 shift).

    Independent streams for the two estimates (no common-random-number
    variance reduction).  PASS iff the difference is within 3 combined
    standard errors.  Valid as an invariance check only near the identity;
    the truncation caveat is always attached.
    """
    g_mat = np.asarray(g_mat, dtype=np.float64)
    g_inv = np.linalg.inv(g_mat)
    est_f = mc_integrate(f, n, substream(seed, "invariance", 0), kind, cfg)
    est_shift = mc_integrate(lambda mats: f(g_inv @ mats), n,
                             substream(seed, "invariance", 1), kind, cfg)
    diff = est_shift.value - est_f.value
    combined_se = math.hypot(est_f.std_error, est_shift.std_error)
    z = diff / combined_se if combined_se > 0 else 0.0
    return {
        "test_name": f"invariance[{kind.value}]",
        "statistic": diff,
        "z": z,
        "pass": bool(abs(diff) < 3.0 * combined_se),
        "estimate": est_f.value,
        "shifted_estimate": est_shift.value,
        "combined_se": combined_se,
        "n_samples": n,
        "caveat": TRUNCATION_CAVEAT,
    }


def so2_marginal_invariance_test(g_angle: float, n: int, seed: int, kind: GroupKind,
                                 cfg: SamplerConfig = SamplerConfig(),
                                 bins: int = 24) -> dict:
    """Two-sample chi-square: rotation-angle pushforward vs its left-rotated copy.

    Invariance of the compact factor is exact, so this passes at any shift
    angle, not only near the identity.
    """
    a1 = sample_group(substream(seed, "so2-marginal", 0), kind, cfg, size=n)
    a2 = sample_group(substream(seed, "so2-marginal", 1), kind, cfg, size=n)
    rot = la.so2_exp(g_angle)
    _, theta1 = la.polar_batch(a1)
    _, theta2 = la.polar_batch(rot @ a2)
    edges = np.linspace(-math.pi, math.pi, bins + 1)
    h1, _ = np.histogram(theta1, bins=edges)
    h2, _ = np.histogram(theta2, bins=edges)
    stat, p, _, _ = stats.chi2_contingency(np.stack([h1, h2]))
    return {
        "test_name": f"so2-marginal-invariance[{kind.value}]",
        "statistic": float(stat),
        "p_value": float(p),
        "pass": bool(p > 0.01),
        "n_samples": n,
        "shift_angle": g_angle,
    }


def angle_uniformity_test(theta: Array, bins: int = 36, name: str = "angle-uniformity") -> dict:
    """Chi-square test of angles against Uniform[-pi, pi)."""
    edges = np.linspace(-math.pi, math.pi, bins + 1)
    counts, _ = np.histogram(theta, bins=edges)
    stat, p = stats.chisquare(counts)
    return {
        "test_name": name,
        "statistic": float(stat),
        "p_value": float(p),
        "pass": bool(p > 0.01),
        "n_samples": int(theta.size),
    }


def factor_independence_test(n: int, seed: int, kind: GroupKind = GroupKind.GL_PLUS,
                             cfg: SamplerConfig = SamplerConfig(),
                             corr_threshold: float = 0.02) -> dict:
    """Recompute (S, R) from samples and check R-uniformity and decorrelation.

    From each sample A: S = A A^T and R = (A A^T)^(-1/2) A.  Checks
    (a) the angle of R is uniform (chi-square), (b) |corr(log lambda_1(S),
    theta)| and (c) |corr(log det S, theta)| are below ``corr_threshold``.
    (a) is skipped as degenerate for a one-point rotation grid; (c) is
    vacuous on SL(2) and skipped there.
    """
    mats = sample_group(substream(seed, "factor-independence"), kind, cfg, size=n)
    lam1, lam2, _ = la.gram_eig_batch(mats)
    _, theta = la.polar_batch(mats)

    checks = []
    degenerate_rotation = cfg.so2_mode == "equidistant" and cfg.so2_k == 1
    if degenerate_rotation:
        checks.append({"test_name": "rotation-angle-uniform", "pass": True,
                       "skipped": "degenerate one-point rotation grid"})
        checks.append({"test_name": "corr(log lambda1, theta)", "pass": True,
                       "skipped": "degenerate one-point rotation grid"})
        corr_lam = 0.0
    else:
        checks.append(angle_uniformity_test(theta, name="rotation-angle-uniform"))
        corr_lam = float(stats.pearsonr(np.log(lam1), theta)[0])
        checks.append({
            "test_name": "corr(log lambda1, theta)",
            "statistic": corr_lam,
            "pass": bool(abs(corr_lam) < corr_threshold),
        })

    if kind is GroupKind.SL:
        checks.append({"test_name": "corr(log det S, theta)", "pass": True,
                       "skipped": "det identically 1 on SL(2)"})
    elif degenerate_rotation:
        checks.append({"test_name": "corr(log det S, theta)", "pass": True,
                       "skipped": "degenerate one-point rotation grid"})
    else:
        corr_det = float(stats.pearsonr(np.log(lam1 * lam2), theta)[0])
        checks.append({
            "test_name": "corr(log det S, theta)",
            "statistic": corr_det,
            "pass": bool(abs(corr_det) < corr_threshold),
        })

    return {
        "test_name": f"factor-independence[{kind.value}]",
        "statistic": corr_lam,
        "pass": all(c["pass"] for c in checks),
        "checks": checks,
        "n_samples": n,
    }


def gaussian_bump(kind: GroupKind, width: float = 1.0):
    """f(A) = exp(-B(xi^-1 A, xi^-1 A) / width^2), a bump at the identity."""

    def f(mats):
        coords = xi_inverse_batch(np.asarray(mats, dtype=np.float64), kind)
        return np.exp(-np.sum(coords * coords, axis=-1) / width**2)

    return f


def se_scaling_test(seed: int, kind: GroupKind = GroupKind.GL_PLUS,
                    cfg: SamplerConfig = SamplerConfig(),
                    sizes: tuple = (1_000, 10_000, 100_000),
                    tolerance_factor: float = 1.5) -> dict:
    """Standard errors across sample sizes follow n^(-1/2) within a factor."""
    f = gaussian_bump(kind)
    estimates = [mc_integrate(f, n, substream(seed, "se-scaling", n), kind, cfg) for n in sizes]
    ratios = []
    ok = True
    for (n_small, e_small), (n_big, e_big) in zip(
        zip(sizes, estimates), zip(sizes[1:], estimates[1:])
    ):
        expected = math.sqrt(n_big / n_small)
        observed = e_small.std_error / e_big.std_error
        ratios.append(observed / expected)
        ok = ok and (1.0 / tolerance_factor <= observed / expected <= tolerance_factor)
    return {
        "test_name": f"se-scaling[{kind.value}]",
        "statistic": max(abs(math.log(r)) for r in ratios),
        "pass": bool(ok),
        "ratio_to_expected": ratios,
        "sizes": list(sizes),
    }


# -- constants ---------------------------------------------------------------


def multivariate_gamma(n: int, a: float) -> float:
    """Gamma_n(a) = pi^(n(n-1)/4) prod_j Gamma(a + (1 - j)/2), j = 1..n."""
    out = math.pi ** (n * (n - 1) / 4.0)
    for j in range(1, n + 1):
        out *= math.gamma(a + (1.0 - j) / 2.0)
    return out


def orthogonal_group_volume(n: int) -> float:
    """Vol(O(n)) = 2^n pi^(n^2/2) / Gamma_n(n/2) for n in {1, 2, 3}."""
    if n not in (1, 2, 3):
        raise DomainError(f"orthogonal_group_volume: unsupported dimension {n}")
    return 2.0**n * math.pi ** (n * n / 2.0) / multivariate_gamma(n, n / 2.0)


def beta_constant(n: int) -> float:
    """beta_n = Vol(O(n)) / 2^n, the product-measure normalization."""
    return orthogonal_group_volume(n) / 2.0**n
