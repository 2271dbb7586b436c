"""Dataset ingestion and geometric perturbation.

IDX files are parsed bit-exactly (big-endian magic and dimensions, unsigned
byte payload); 28x28 images are zero-padded centered into a 40x40 frame and
scaled to [0, 1].  Affine and homography perturbations share one
inverse-warp path with bilinear interpolation and zero background.

``synthetic_digits`` renders a procedural MNIST-style glyph set.  It exists
because this environment ships no MNIST files and has no network access:
the desk-scale experiments run on generated digits written through the same
IDX pipeline as real data would be.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import DimensionError, DomainError, IdxFormatError

Array = np.ndarray

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Images [n, 1, H, W] in [0, 1] with integer labels and a provenance tag."""

    images: Array
    labels: Array
    provenance: str = "clean"

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4 or images.shape[1] != 1:
            raise DimensionError(f"dataset images must be [n, 1, H, W], got {images.shape}")
        if len(images) == 0:
            raise DomainError("dataset must be non-empty")
        if labels.shape != (len(images),):
            raise DimensionError("labels must align with images")
        if images.min() < 0.0 or images.max() > 1.0:
            raise DomainError("image values must lie in [0, 1]")
        if labels.min() < 0 or labels.max() > 9:
            raise DomainError("labels must lie in 0..9")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices], self.provenance)


# -- IDX format ---------------------------------------------------------------


def read_idx_images(path) -> Array:
    """Raw uint8 image stack [n, rows, cols] from an IDX3 file."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise IdxFormatError(f"{path}: truncated header at offset {len(header)}")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"{path}: bad image magic {magic:#010x} at offset 0")
        payload = fh.read(n * rows * cols)
        if len(payload) != n * rows * cols:
            raise IdxFormatError(f"{path}: truncated payload at offset {16 + len(payload)}")
        if fh.read(1):
            raise IdxFormatError(f"{path}: trailing bytes at offset {16 + len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> Array:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise IdxFormatError(f"{path}: truncated header at offset {len(header)}")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(f"{path}: bad label magic {magic:#010x} at offset 0")
        payload = fh.read(n)
        if len(payload) != n:
            raise IdxFormatError(f"{path}: truncated payload at offset {8 + len(payload)}")
        if fh.read(1):
            raise IdxFormatError(f"{path}: trailing bytes at offset {8 + len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).copy()


def write_idx_images(path, images: Array) -> None:
    images = np.asarray(images)
    if images.ndim != 3:
        raise DimensionError(f"write_idx_images expects [n, rows, cols], got {images.shape}")
    images = images.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: Array) -> None:
    labels = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def pad_centered(images: Array, size: int) -> Array:
    """Zero-pad [n, h, w] images centered into [n, size, size]."""
    n, h, w = images.shape
    if h > size or w > size:
        raise DimensionError(f"cannot pad {h}x{w} into {size}x{size}")
    top = (size - h) // 2
    left = (size - w) // 2
    out = np.zeros((n, size, size), dtype=images.dtype)
    out[:, top : top + h, left : left + w] = images
    return out


def load_mnist_idx(images_path, labels_path, frame: int = 40) -> Dataset:
    """IDX image/label pair -> Dataset, padded centered and scaled to [0, 1]."""
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(raw) != len(labels):
        raise IdxFormatError(
            f"image count {len(raw)} != label count {len(labels)}"
        )
    padded = pad_centered(raw, frame).astype(np.float64) / 255.0
    return Dataset(padded[:, None], labels, provenance="clean")


# -- warps ---------------------------------------------------------------------


def warp_image(image: Array, src_coords: Array) -> Array:
    """Bilinear resample of [H, W] at source coords [2, H, W]; zero outside."""
    return ndimage.map_coordinates(image, src_coords, order=1, mode="constant", cval=0.0)


def _pixel_grid(h: int, w: int) -> Array:
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    return np.stack([rr, cc])


def affine_source_coords(mat: Array, translation: Array, h: int, w: int) -> Array:
    """Source coordinates realizing out(p) = in(A^-1 (p - c - t) + c)."""
    grid = _pixel_grid(h, w)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shifted = grid - (center + np.asarray(translation, dtype=np.float64))[:, None, None]
    inv = np.linalg.inv(np.asarray(mat, dtype=np.float64))
    src = np.einsum("ab,bhw->ahw", inv, shifted)
    return src + center[:, None, None]


def homography_source_coords(hmat: Array, h: int, w: int) -> Array:
    """Source coordinates for a 3x3 projective map acting on centered pixels."""
    grid = _pixel_grid(h, w)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    pts = grid - center[:, None, None]
    inv = np.linalg.inv(np.asarray(hmat, dtype=np.float64))
    ones = np.ones_like(pts[0])
    hom = np.einsum("ab,bhw->ahw", inv, np.stack([pts[0], pts[1], ones]))
    return hom[:2] / hom[2] + center[:, None, None]


def solve_homography(src: Array, dst: Array) -> Array:
    """3x3 map taking src corners to dst corners (direct linear transform).

    Four correspondences give the 8x8 linear system for the entries with
    h33 = 1; a singular system raises so callers can redraw.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise DimensionError("solve_homography expects four 2-D correspondences")
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rhs.append(u)
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.append(v)
    try:
        sol = np.linalg.solve(np.array(rows), np.array(rhs))
    except np.linalg.LinAlgError as exc:
        raise DomainError("degenerate correspondences") from exc
    return np.array([
        [sol[0], sol[1], sol[2]],
        [sol[3], sol[4], sol[5]],
        [sol[6], sol[7], 1.0],
    ])


@dataclass(frozen=True)
class PerturbConfig:
    """Ranges of the random perturbation families.

    The affine defaults (rotation +-20 deg, shear +-0.2, scale 0.8..1.2,
    translation +-6 px subject to the in-frame check) approximate the usual
    affine-robustness benchmark family; the homography corner jitter is a
    fraction of the frame half-width.
    """

    rotation_deg: float = 20.0
    shear: float = 0.2
    scale_low: float = 0.8
    scale_high: float = 1.2
    translate_px: float = 6.0
    corner_jitter: float = 0.15
    seed: int = 0
    max_retries: int = 10

    def __post_init__(self):
        for name in ("rotation_deg", "shear", "translate_px", "corner_jitter"):
            if not math.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise DomainError(f"{name} must be finite and nonnegative")
        if not 0 < self.scale_low <= self.scale_high:
            raise DomainError("scale range must satisfy 0 < low <= high")


def _sample_affine_map(rng: np.random.Generator, cfg: PerturbConfig) -> tuple[Array, Array]:
    theta = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    sh = rng.uniform(-cfg.shear, cfg.shear)
    sx, sy = rng.uniform(cfg.scale_low, cfg.scale_high, size=2)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    mat = rot @ shear @ np.diag([sx, sy])
    translation = rng.uniform(-cfg.translate_px, cfg.translate_px, size=2)
    return mat, translation


def _content_bbox(image: Array, threshold: float = 0.05) -> Array | None:
    """Corners [4, 2] of the bounding box of bright pixels, centered coords."""
    rows, cols = np.nonzero(image > threshold)
    if rows.size == 0:
        return None
    h, w = image.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    r0, r1 = rows.min(), rows.max()
    c0, c1 = cols.min(), cols.max()
    return np.array([[r0, c0], [r0, c1], [r1, c0], [r1, c1]], dtype=np.float64) - center


def _bbox_in_frame(corners: Array, mat: Array, translation: Array, h: int, w: int) -> bool:
    mapped = corners @ mat.T + translation
    half = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    return bool(np.all(np.abs(mapped) <= half))


def perturb_affine(ds: Dataset, cfg: PerturbConfig) -> Dataset:
    """Random rotation-shear-scale plus translation per image, inverse-warped.

    The digit bounding box must stay inside the frame: violating draws are
    resampled up to ``max_retries`` times, after which the translation is
    clamped to zero.
    """
    rng = np.random.default_rng(cfg.seed)
    n, _, h, w = ds.images.shape
    out = np.empty_like(ds.images)
    for i in range(n):
        image = ds.images[i, 0]
        corners = _content_bbox(image)
        mat, translation = _sample_affine_map(rng, cfg)
        if corners is not None:
            for _ in range(cfg.max_retries):
                if _bbox_in_frame(corners, mat, translation, h, w):
                    break
                mat, translation = _sample_affine_map(rng, cfg)
            else:
                translation = np.zeros(2)
        out[i, 0] = warp_image(image, affine_source_coords(mat, translation, h, w))
    params = (f"rot<={cfg.rotation_deg}deg shear<={cfg.shear} "
              f"scale[{cfg.scale_low},{cfg.scale_high}] t<={cfg.translate_px}px seed={cfg.seed}")
    return Dataset(np.clip(out, 0.0, 1.0), ds.labels, provenance=f"affine({params})")


def perturb_homography(ds: Dataset, cfg: PerturbConfig) -> Dataset:
    """Random projective map from jittered unit-square corners per image."""
    rng = np.random.default_rng(cfg.seed)
    n, _, h, w = ds.images.shape
    half = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    base = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]) * half
    out = np.empty_like(ds.images)
    for i in range(n):
        for _ in range(cfg.max_retries + 1):
            jitter = rng.uniform(-cfg.corner_jitter, cfg.corner_jitter, size=(4, 2)) * half
            try:
                hmat = solve_homography(base, base + jitter)
            except DomainError:
                continue
            if abs(np.linalg.det(hmat)) > 1e-6:
                break
        out[i, 0] = warp_image(ds.images[i, 0], homography_source_coords(hmat, h, w))
    return Dataset(np.clip(out, 0.0, 1.0), ds.labels,
                   provenance=f"homography(jitter<={cfg.corner_jitter} seed={cfg.seed})")


# -- procedural digits ---------------------------------------------------------


def _arc(cx, cy, rx, ry, a0, a1, n=40):
    t = np.linspace(a0, a1, n)
    return np.stack([cy + ry * np.sin(t), cx + rx * np.cos(t)], axis=1)  # (row, col)


def _line(p0, p1, n=24):
    t = np.linspace(0.0, 1.0, n)[:, None]
    a = np.array([p0[1], p0[0]], dtype=np.float64)  # (row, col) from (x, y)
    b = np.array([p1[1], p1[0]], dtype=np.float64)
    return a + t * (b - a)


def _glyph_strokes(digit: int) -> list[Array]:
    """Stroke point lists (row, col) in the unit square, y down."""
    tau = 2.0 * math.pi
    if digit == 0:
        return [_arc(0.5, 0.5, 0.26, 0.36, 0.0, tau, 72)]
    if digit == 1:
        return [_line((0.52, 0.12), (0.52, 0.88)), _line((0.36, 0.3), (0.52, 0.12))]
    if digit == 2:
        return [
            _arc(0.5, 0.32, 0.24, 0.2, math.pi, tau * 0.95, 36),
            _line((0.72, 0.45), (0.26, 0.84)),
            _line((0.26, 0.84), (0.78, 0.84)),
        ]
    if digit == 3:
        return [
            _arc(0.48, 0.3, 0.22, 0.17, -math.pi * 0.7, math.pi * 0.5, 36),
            _arc(0.48, 0.66, 0.24, 0.2, -math.pi * 0.5, math.pi * 0.75, 40),
        ]
    if digit == 4:
        return [
            _line((0.66, 0.12), (0.24, 0.62)),
            _line((0.24, 0.62), (0.82, 0.62)),
            _line((0.66, 0.12), (0.66, 0.9)),
        ]
    if digit == 5:
        return [
            _line((0.76, 0.14), (0.32, 0.14)),
            _line((0.32, 0.14), (0.3, 0.45)),
            _arc(0.48, 0.65, 0.24, 0.22, -math.pi * 0.55, math.pi * 0.7, 44),
        ]
    if digit == 6:
        return [
            _arc(0.48, 0.66, 0.2, 0.2, 0.0, tau, 56),
            _arc(0.56, 0.38, 0.3, 0.3, math.pi * 0.75, math.pi * 1.35, 28),
        ]
    if digit == 7:
        return [_line((0.24, 0.15), (0.8, 0.15)), _line((0.8, 0.15), (0.4, 0.88))]
    if digit == 8:
        return [
            _arc(0.5, 0.3, 0.18, 0.16, 0.0, tau, 48),
            _arc(0.5, 0.68, 0.22, 0.2, 0.0, tau, 56),
        ]
    if digit == 9:
        return [
            _arc(0.5, 0.34, 0.2, 0.19, 0.0, tau, 52),
            _line((0.7, 0.4), (0.58, 0.88)),
        ]
    raise DomainError(f"no glyph for digit {digit}")


def _render_glyph(points: Array, content: int, thickness: float) -> Array:
    """Soft-brush rasterization of stroke points given in [0, 1]^2."""
    px = points * (content - 1)
    rr, cc = np.meshgrid(np.arange(content, dtype=np.float64),
                         np.arange(content, dtype=np.float64), indexing="ij")
    pix = np.stack([rr.ravel(), cc.ravel()], axis=1)
    d2 = ((pix[:, None, :] - px[None, :, :]) ** 2).sum(-1)
    dmin = np.sqrt(d2.min(axis=1)).reshape(content, content)
    sigma = max(thickness, 0.4)
    return np.exp(-((dmin / sigma) ** 2))


def synthetic_digits(n: int, seed: int = 0, frame: int = 40, content: int = 28) -> Dataset:
    """Procedural MNIST-style digits: jittered glyph strokes, soft brush,
    centered in a zero-padded frame."""
    if n < 1:
        raise DomainError("need at least one image")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    images = np.empty((n, frame, frame))
    for i, digit in enumerate(labels):
        points = np.concatenate(_glyph_strokes(int(digit)), axis=0)
        center = points.mean(axis=0)
        theta = math.radians(rng.uniform(-8.0, 8.0))
        slant = rng.uniform(-0.15, 0.15)
        s = rng.uniform(0.85, 1.1)
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        shear = np.array([[1.0, slant], [0.0, 1.0]])
        jittered = (points - center) @ (rot @ shear).T * s + center
        jittered += rng.normal(0.0, 0.008, size=jittered.shape)
        jittered += rng.uniform(-0.04, 0.04, size=(1, 2))
        thickness = rng.uniform(0.8, 1.4)
        glyph = _render_glyph(np.clip(jittered, 0.02, 0.98), content, thickness)
        images[i] = pad_centered(glyph[None], frame)[0]
    return Dataset(np.clip(images, 0.0, 1.0)[:, None], labels, provenance="synthetic")
