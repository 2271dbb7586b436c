"""Monte Carlo group-equivariant layers with sinusoidal MLP kernels.

A forward pass owns one :class:`~cartanconv.sampling.GroupSampleSet` shared
by the lifting layer and all group cross-correlation layers, so features
are always known at the kernel evaluation points.  Spatial integration
uses a fixed odd k x k quadrature grid in [-1, 1]^2, which makes discrete
translation equivariance exact in the interior; the group integral is the
Monte Carlo sum over the sample set with per-sample delta weights.

Layout conventions: images and feature maps are [B, C, H, W] and
[B, C, N, H, W]; kernel stencils treat the first spatial coordinate as the
row offset.  Per-layer learnable output scalars absorb the constant volume
factors of the integral factorization.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, DimensionError, LayerEvalError
from .groups import GroupKind, inv2, xi_inverse_batch
from .sampling import GroupSampleSet, SamplerConfig, sample_group_set, substream

Array = np.ndarray


def kernel_grid(k: int) -> Array:
    """Row-major (row, col) offsets of the k x k stencil spanning [-1, 1]^2."""
    if k < 1 or k % 2 == 0:
        raise DimensionError(f"kernel grid size must be odd and positive, got {k}")
    if k == 1:
        return np.zeros((1, 2))
    lin = np.linspace(-1.0, 1.0, k)
    rr, cc = np.meshgrid(lin, lin, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=-1)


class SirenKernel:
    """MLP with sin(omega0 .) hidden activations and a linear output layer.

    First layer weights are Uniform(-1/fan_in, 1/fan_in); deeper layers use
    Uniform(+-sqrt(6/fan_in)/omega0).
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 60, depth: int = 2,
                 omega0: float = 10.0, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.omega0 = float(omega0)
        widths = [in_dim] + [hidden] * depth + [out_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            if i == 0:
                bound = 1.0 / fan_in
            else:
                bound = math.sqrt(6.0 / fan_in) / self.omega0
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def __call__(self, points: Array) -> Tensor:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.in_dim:
            raise DimensionError(
                f"kernel expects [P, {self.in_dim}] inputs, got {points.shape}"
            )
        h = Tensor(points)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = ad.matmul(h, w)
            z = ad.add(z, ad.broadcast_to(ad.reshape(b, (1, b.size)), z.shape))
            h = ad.sin(z, omega=self.omega0) if i != last else z
        return h

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


@dataclass
class LiftedFeatureMap:
    """[B, C, N, H, W] features indexed by the sample set along the N axis."""

    data: Tensor
    samples: GroupSampleSet

    def __post_init__(self):
        if self.data.ndim != 5:
            raise DimensionError(f"lifted feature map must be 5-D, got {self.data.shape}")
        if self.data.shape[2] != len(self.samples):
            raise DimensionError(
                f"N axis {self.data.shape[2]} != sample set size {len(self.samples)}"
            )


def _delta_factor(weights: Array, shape: tuple[int, ...], axis: int) -> Tensor:
    """Constant tensor broadcasting per-sample weights over a stencil shape."""
    view = [1] * len(shape)
    view[axis] = len(weights)
    return Tensor(np.broadcast_to(weights.reshape(view), shape).copy())


class LiftingLayer:
    """Cross-correlation from an image signal to a signal on the sample set.

    For each sample A_j the k x k stencil holds the kernel at the
    transformed grid points A_j^-1 x, weighted by delta(A_j^-1); the
    translation action is a discrete same-padding cross-correlation.
    """

    def __init__(self, cin: int, cout: int, ksize: int = 5, hidden: int = 60,
                 depth: int = 2, omega0: float = 10.0,
                 rng: np.random.Generator | None = None,
                 use_delta_weights: bool = True):
        self.cin = cin
        self.cout = cout
        self.ksize = ksize
        self.use_delta_weights = use_delta_weights
        self.kernel = SirenKernel(2, cout * cin, hidden=hidden, depth=depth,
                                  omega0=omega0, rng=rng)
        self.scale = Tensor(np.ones(()), requires_grad=True)
        self.grid = kernel_grid(ksize)

    def forward(self, images: Tensor, samples: GroupSampleSet) -> LiftedFeatureMap:
        if images.ndim != 4 or images.shape[1] != self.cin:
            raise DimensionError(f"lifting expects [B, {self.cin}, H, W], got {images.shape}")
        n = len(samples)
        k = self.ksize
        bsz, _, h, w = images.shape

        inv = inv2(samples.mats)  # A_j^-1
        points = np.einsum("jab,pb->jpa", inv, self.grid).reshape(n * k * k, 2)
        stencil = self.kernel(points)
        stencil = ad.reshape(stencil, (n, k, k, self.cout, self.cin))
        stencil = ad.transpose(stencil, (0, 3, 4, 1, 2))  # [N, cout, cin, k, k]
        if self.use_delta_weights:
            stencil = ad.mul(stencil, _delta_factor(samples.delta_weights, stencil.shape, 0))
        folded = ad.reshape(stencil, (n * self.cout, self.cin, k, k))

        out = ad.conv2d(images, folded, padding="same")  # [B, N*cout, H, W]
        out = ad.reshape(out, (bsz, n, self.cout, h, w))
        out = ad.transpose(out, (0, 2, 1, 3, 4))
        out = ad.mul(out, self.scale)
        return LiftedFeatureMap(out, samples)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = self.kernel.named_parameters(prefix + "kernel.")
        out[prefix + "scale"] = self.scale
        return out


class GroupConvLayer:
    """Monte Carlo group cross-correlation over the shared sample set.

    Output at sample j is (scale / N) sum_i [F_i (*) K(H_j^-1 x,
    xi^-1(H_j^-1 H_i))] delta_i, evaluated by folding the (j, i) stencils
    into one dense convolution.  ``out_samples`` moves the output onto a
    different set of group points (used by the equivariance probes);
    by default the output lives on the input's sample set.
    """

    def __init__(self, cin: int, cout: int, kind: GroupKind, ksize: int = 5,
                 hidden: int = 60, depth: int = 2, omega0: float = 10.0,
                 rng: np.random.Generator | None = None,
                 use_delta_weights: bool = True):
        self.cin = cin
        self.cout = cout
        self.kind = kind
        self.ksize = ksize
        self.use_delta_weights = use_delta_weights
        self.kernel = SirenKernel(2 + kind.algebra_dim, cout * cin, hidden=hidden,
                                  depth=depth, omega0=omega0, rng=rng)
        self.scale = Tensor(np.ones(()), requires_grad=True)
        self.grid = kernel_grid(ksize)

    def stencil_points(self, in_samples: GroupSampleSet,
                       out_samples: GroupSampleSet) -> Array:
        """Kernel inputs [(j, i, p), 2 + d]: transformed grid and algebra offsets."""
        n_in, n_out = len(in_samples), len(out_samples)
        k2 = self.grid.shape[0]
        d = self.kind.algebra_dim
        out_inv = inv2(out_samples.mats)
        spatial = np.einsum("jab,pb->jpa", out_inv, self.grid)  # [No, k2, 2]
        offsets = np.einsum("jab,ibc->jiac", out_inv, in_samples.mats)  # H_j^-1 H_i
        algebra = xi_inverse_batch(offsets, self.kind)  # [No, Ni, d]
        if not np.all(np.isfinite(algebra)):
            j, i = np.argwhere(~np.isfinite(algebra).all(axis=-1))[0]
            raise LayerEvalError(
                f"xi^-1 failed on sample pair (i={int(i)}, j={int(j)})"
            )
        points = np.empty((n_out, n_in, k2, 2 + d))
        points[..., :2] = spatial[:, None, :, :]
        points[..., 2:] = algebra[:, :, None, :]
        return points.reshape(n_out * n_in * k2, 2 + d)

    def forward(self, fmap: LiftedFeatureMap,
                out_samples: GroupSampleSet | None = None) -> LiftedFeatureMap:
        in_samples = fmap.samples
        out_s = in_samples if out_samples is None else out_samples
        n_in, n_out = len(in_samples), len(out_s)
        bsz, c, _, h, w = fmap.data.shape
        if c != self.cin:
            raise DimensionError(f"group conv expects {self.cin} channels, got {c}")
        k = self.ksize

        stencil = self.kernel(self.stencil_points(in_samples, out_s))
        stencil = ad.reshape(stencil, (n_out, n_in, k, k, self.cout, self.cin))
        stencil = ad.transpose(stencil, (0, 4, 1, 5, 2, 3))  # [No, cout, Ni, cin, k, k]
        if self.use_delta_weights:
            stencil = ad.mul(stencil, _delta_factor(in_samples.delta_weights, stencil.shape, 2))
        folded = ad.reshape(stencil, (n_out * self.cout, n_in * self.cin, k, k))

        x = ad.transpose(fmap.data, (0, 2, 1, 3, 4))  # [B, Ni, C, H, W]
        x = ad.reshape(x, (bsz, n_in * self.cin, h, w))
        out = ad.conv2d(x, folded, padding="same")  # [B, No*cout, H, W]
        out = ad.reshape(out, (bsz, n_out, self.cout, h, w))
        out = ad.transpose(out, (0, 2, 1, 3, 4))
        out = ad.scale(out, 1.0 / n_in)
        out = ad.mul(out, self.scale)
        return LiftedFeatureMap(out, out_s)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = self.kernel.named_parameters(prefix + "kernel.")
        out[prefix + "scale"] = self.scale
        return out


class ChannelNorm:
    """Layer normalization over the channel axis with per-channel affine."""

    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, axes=1)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "gamma": self.gamma, prefix + "beta": self.beta}


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(in_dim)
        self.w = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        z = ad.matmul(x, self.w)
        return ad.add(z, ad.broadcast_to(ad.reshape(self.b, (1, self.b.size)), z.shape))

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "w": self.w, prefix + "b": self.b}


class ChannelMix:
    """1x1 channel projection on [B, C, N, H, W], used by mismatched skips."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(cin)
        self.w = Tensor(rng.uniform(-bound, bound, size=(cin, cout)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, n, h, w = x.shape
        flat = ad.reshape(ad.transpose(x, (0, 2, 3, 4, 1)), (b * n * h * w, c))
        mixed = ad.matmul(flat, self.w)
        return ad.transpose(ad.reshape(mixed, (b, n, h, w, self.w.shape[1])), (0, 4, 1, 2, 3))

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "w": self.w}


def global_invariant_pool(fmap: LiftedFeatureMap) -> Tensor:
    """Mean over the sample and spatial axes: [B, C, N, H, W] -> [B, C]."""
    return ad.tensor_mean(fmap.data, axis=(2, 3, 4))


@dataclass(frozen=True)
class ModelConfig:
    kind: GroupKind = GroupKind.SL
    in_channels: int = 1
    channels: int = 42
    n_classes: int = 10
    n_samples: int = 10
    ksize: int = 5
    hidden: int = 60
    depth: int = 2
    omega0: float = 10.0
    block_channels: int = 0  # 0: same as channels
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    use_delta_weights: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise DimensionError("n_samples must be >= 1")
        if self.ksize % 2 == 0:
            raise DimensionError("ksize must be odd")

    @property
    def width(self) -> int:
        return self.block_channels if self.block_channels else self.channels


class Model:
    """Lifting, one residual block of two group convolutions with spatial
    max-pooling, a final group convolution, invariant pooling, and a linear
    classifier head.  Every cross-correlation is followed by channel
    normalization and a GeLU."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = substream(cfg.init_seed, "model-init")
        c, cw = cfg.channels, cfg.width
        mk = dict(ksize=cfg.ksize, hidden=cfg.hidden, depth=cfg.depth,
                  omega0=cfg.omega0, use_delta_weights=cfg.use_delta_weights)
        self.lift = LiftingLayer(cfg.in_channels, c, rng=rng, **mk)
        self.norm_lift = ChannelNorm(c)
        self.gc1 = GroupConvLayer(c, cw, cfg.kind, rng=rng, **mk)
        self.norm1 = ChannelNorm(cw)
        self.gc2 = GroupConvLayer(cw, c, cfg.kind, rng=rng, **mk)
        self.norm2 = ChannelNorm(c)
        self.gc_final = GroupConvLayer(c, c, cfg.kind, rng=rng, **mk)
        self.norm_final = ChannelNorm(c)
        self.head = Linear(c, cfg.n_classes, rng)

    def sample_set(self, seed: int) -> GroupSampleSet:
        return sample_group_set(seed, self.cfg.kind, self.cfg.sampler, self.cfg.n_samples)

    def forward(self, images, samples: GroupSampleSet) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
        lifted = self.lift.forward(x, samples)
        y = ad.gelu(self.norm_lift(lifted.data))

        h = self.gc1.forward(LiftedFeatureMap(y, samples))
        h = ad.gelu(self.norm1(h.data))
        h = self.gc2.forward(LiftedFeatureMap(h, samples))
        h = ad.gelu(self.norm2(h.data))
        y = ad.add(y, h)
        y = ad.max_pool2d(y, window=2)

        h = self.gc_final.forward(LiftedFeatureMap(y, samples))
        h = ad.gelu(self.norm_final(h.data))
        pooled = global_invariant_pool(LiftedFeatureMap(h, samples))
        return self.head(pooled)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.lift.named_parameters("lift."))
        out.update(self.norm_lift.named_parameters("norm_lift."))
        out.update(self.gc1.named_parameters("gc1."))
        out.update(self.norm1.named_parameters("norm1."))
        out.update(self.gc2.named_parameters("gc2."))
        out.update(self.norm2.named_parameters("norm2."))
        out.update(self.gc_final.named_parameters("gc_final."))
        out.update(self.norm_final.named_parameters("norm_final."))
        out.update(self.head.named_parameters("head."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_state(self, state: dict[str, Array]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise CheckpointError(f"state mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {value.shape} vs model {tensor.shape}"
                )
            tensor.data = value.copy()


# -- checkpoint container ----------------------------------------------------

_CHECKPOINT_MAGIC = b"CCK1"
_CHECKPOINT_VERSION = 1


def config_echo(cfg: ModelConfig) -> str:
    lines = [
        f"kind = {cfg.kind.value}",
        f"in_channels = {cfg.in_channels}",
        f"channels = {cfg.channels}",
        f"n_classes = {cfg.n_classes}",
        f"n_samples = {cfg.n_samples}",
        f"ksize = {cfg.ksize}",
        f"hidden = {cfg.hidden}",
        f"depth = {cfg.depth}",
        f"omega0 = {cfg.omega0!r}",
        f"block_channels = {cfg.block_channels}",
        f"sigma = {cfg.sampler.sigma!r}",
        f"so2_mode = {cfg.sampler.so2_mode}",
        f"so2_k = {cfg.sampler.so2_k}",
        f"use_delta_weights = {int(cfg.use_delta_weights)}",
        f"init_seed = {cfg.init_seed}",
    ]
    return "\n".join(lines) + "\n"


def config_from_echo(text: str) -> ModelConfig:
    values: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    try:
        kind = GroupKind(values["kind"])
    except ValueError as exc:
        raise CheckpointError(f"unknown group kind {values['kind']!r}") from exc
    sampler = SamplerConfig(sigma=float(values["sigma"]), so2_mode=values["so2_mode"],
                            so2_k=int(values["so2_k"]))
    return ModelConfig(
        kind=kind,
        in_channels=int(values["in_channels"]),
        channels=int(values["channels"]),
        n_classes=int(values["n_classes"]),
        n_samples=int(values["n_samples"]),
        ksize=int(values["ksize"]),
        hidden=int(values["hidden"]),
        depth=int(values["depth"]),
        omega0=float(values["omega0"]),
        block_channels=int(values["block_channels"]),
        sampler=sampler,
        use_delta_weights=bool(int(values["use_delta_weights"])),
        init_seed=int(values["init_seed"]),
    )


def save_checkpoint(path, cfg: ModelConfig, state: dict[str, Array],
                    seeds: dict[str, int]) -> None:
    """Versioned binary container: config echo, named float64 LE tensors, seeds."""
    buf = io.BytesIO()
    buf.write(_CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", _CHECKPOINT_VERSION))
    blob = config_echo(cfg).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(seeds)))
    for name, value in sorted(seeds.items()):
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<q", int(value)))
    buf.write(struct.pack("<I", len(state)))
    for name, value in state.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        value = np.asarray(value, dtype="<f8")
        buf.write(struct.pack("<I", value.ndim))
        for dim in value.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(value.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, Array], dict[str, int]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)

    def read(fmt: str):
        size = struct.calcsize(fmt)
        chunk = buf.read(size)
        if len(chunk) != size:
            raise CheckpointError(f"truncated checkpoint at offset {buf.tell()}")
        return struct.unpack(fmt, chunk)

    if buf.read(4) != _CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = read("<I")
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blob_len,) = read("<I")
    cfg = config_from_echo(buf.read(blob_len).decode("utf-8"))
    (n_seeds,) = read("<I")
    seeds = {}
    for _ in range(n_seeds):
        (name_len,) = read("<I")
        name = buf.read(name_len).decode("utf-8")
        (value,) = read("<q")
        seeds[name] = value
    (n_tensors,) = read("<I")
    state = {}
    for _ in range(n_tensors):
        (name_len,) = read("<I")
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = read("<I")
        shape = tuple(read("<I")[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = buf.read(count * 8)
        if len(data) != count * 8:
            raise CheckpointError(f"truncated tensor payload for {name}")
        state[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    return cfg, state, seeds


def model_from_checkpoint(path) -> tuple[Model, dict[str, int]]:
    cfg, state, seeds = load_checkpoint(path)
    model = Model(cfg)
    model.load_state(state)
    return model, seeds
