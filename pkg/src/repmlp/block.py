"""The re-parameterizable MLP block in its training form.

A block maps (N, C, H, W) to (N, O, H, W) by cutting each image into
part_h x part_w tiles and running three parallel paths over the tile batch:

* global path: pool each tile to a vector, push it through BN and a small
  two-layer MLP, and add the result back onto the tile (skipped entirely
  when the tile covers the whole image);
* local path: a set of parallel conv+BN branches with odd square kernels;
* tilewise fully connected path: one big grouped FC over the flattened
  tile followed by a 1-D BN.

The local and FC paths are summed and the tiles are reassembled. The conv
branches and the big FC never carry a bias; their BNs provide the affine
freedom that conversion later folds away.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    BnParams,
    ConvSpec,
    FcSpec,
    ShapeError,
    avg_pool_global,
    batchnorm_inference,
    check_feature_map,
    conv2d,
    grouped_fc,
    inverse_partition,
    partition,
)

GP_NONLINEARITIES = ("relu", "identity")


@dataclass(frozen=True)
class RepMLPConfig:
    """Static block hyper-parameters.

    part_h/part_w are the tile sizes; every branch kernel K must be odd and
    no larger than min(part_h, part_w) so that same-resolution padding
    K // 2 keeps tile dims. groups must divide both channel counts.
    gp_internal_dim defaults to max(1, in_channels // 4) when left None.
    """

    in_channels: int
    out_channels: int
    height: int
    width: int
    part_h: int
    part_w: int
    groups: int = 1
    branch_kernels: tuple[int, ...] = ()
    gp_internal_dim: int | None = None
    gp_nonlinearity: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "branch_kernels", tuple(self.branch_kernels))
        for name in ("in_channels", "out_channels", "height", "width", "part_h", "part_w", "groups"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"groups {self.groups} must divide in_channels {self.in_channels} "
                f"and out_channels {self.out_channels}")
        if self.height % self.part_h or self.width % self.part_w:
            raise ShapeError(
                f"input ({self.height}, {self.width}) not divisible by "
                f"tile ({self.part_h}, {self.part_w})")
        for k in self.branch_kernels:
            if k < 1 or k % 2 == 0:
                raise ShapeError(f"branch kernel {k} must be odd and positive")
            if k > min(self.part_h, self.part_w):
                raise ShapeError(f"branch kernel {k} exceeds tile size "
                                 f"({self.part_h}, {self.part_w})")
        if len(set(self.branch_kernels)) != len(self.branch_kernels):
            raise ShapeError("duplicate branch kernel sizes")
        if self.gp_internal_dim is not None and self.gp_internal_dim < 1:
            raise ShapeError("gp_internal_dim must be >= 1")
        if self.gp_nonlinearity not in GP_NONLINEARITIES:
            raise ShapeError(f"gp_nonlinearity must be one of {GP_NONLINEARITIES}")

    @property
    def parts_h(self) -> int:
        return self.height // self.part_h

    @property
    def parts_w(self) -> int:
        return self.width // self.part_w

    @property
    def num_parts(self) -> int:
        return self.parts_h * self.parts_w

    @property
    def has_global_path(self) -> bool:
        """The global path exists only when a tile is smaller than the image."""
        return self.num_parts > 1

    @property
    def gp_hidden(self) -> int:
        if self.gp_internal_dim is not None:
            return self.gp_internal_dim
        return max(1, self.in_channels // 4)

    @property
    def fc_in_dim(self) -> int:
        return self.in_channels * self.part_h * self.part_w

    @property
    def fc_out_dim(self) -> int:
        return self.out_channels * self.part_h * self.part_w


@dataclass(frozen=True)
class RepMLPTrainWeights:
    """Training-form weights. gp_* / fc1 / fc2 may be None when the global
    path is inactive; branches are (conv, bn) pairs in any order."""

    fc3: FcSpec
    fc3_bn: BnParams
    branches: tuple[tuple[ConvSpec, BnParams], ...] = ()
    gp_bn: BnParams | None = None
    fc1: FcSpec | None = None
    fc2: FcSpec | None = None


def check_train_weights(cfg: RepMLPConfig, w: RepMLPTrainWeights) -> None:
    """Validate weight shapes against the config. Raises ShapeError."""
    if w.fc3.bias is not None:
        raise ShapeError("fc3 must not carry a bias; its BN provides the affine part")
    if (w.fc3.in_dim, w.fc3.out_dim, w.fc3.groups) != (cfg.fc_in_dim, cfg.fc_out_dim, cfg.groups):
        raise ShapeError(
            f"fc3 dims ({w.fc3.in_dim} -> {w.fc3.out_dim}, g={w.fc3.groups}) do not match "
            f"config ({cfg.fc_in_dim} -> {cfg.fc_out_dim}, g={cfg.groups})")
    if w.fc3_bn.num_features != cfg.fc_out_dim:
        raise ShapeError("fc3_bn feature count must equal out_channels * part_h * part_w")
    seen = set()
    for conv, bn in w.branches:
        kh, kw = conv.kernel_size
        if kh != kw:
            raise ShapeError(f"branch kernels must be square, got ({kh}, {kw})")
        if kh not in cfg.branch_kernels:
            raise ShapeError(f"branch kernel {kh} not declared in config {cfg.branch_kernels}")
        if kh in seen:
            raise ShapeError(f"duplicate branch for kernel {kh}")
        seen.add(kh)
        if conv.bias is not None:
            raise ShapeError("branch convs must not carry a bias")
        if conv.groups != cfg.groups:
            raise ShapeError("branch conv groups must equal config groups")
        if conv.in_channels != cfg.in_channels or conv.out_channels != cfg.out_channels:
            raise ShapeError("branch conv channels do not match config")
        if conv.padding != (kh // 2, kw // 2):
            raise ShapeError("branch conv padding must be K // 2 (resolution preserving)")
        if bn.num_features != cfg.out_channels:
            raise ShapeError("branch bn feature count must equal out_channels")
    if seen != set(cfg.branch_kernels):
        raise ShapeError(f"branches {sorted(seen)} do not cover config {cfg.branch_kernels}")
    if cfg.has_global_path:
        if w.gp_bn is None or w.fc1 is None or w.fc2 is None:
            raise ShapeError("global path is active; gp_bn, fc1, fc2 are required")
        if w.gp_bn.num_features != cfg.in_channels:
            raise ShapeError("gp_bn feature count must equal in_channels")
        if w.fc1.groups != 1 or w.fc2.groups != 1:
            raise ShapeError("fc1 and fc2 must be dense (groups = 1)")
        if (w.fc1.in_dim, w.fc1.out_dim) != (cfg.in_channels, cfg.gp_hidden):
            raise ShapeError(f"fc1 must map {cfg.in_channels} -> {cfg.gp_hidden}")
        if (w.fc2.in_dim, w.fc2.out_dim) != (cfg.gp_hidden, cfg.in_channels):
            raise ShapeError(f"fc2 must map {cfg.gp_hidden} -> {cfg.in_channels}")


def check_block_input(x: np.ndarray, cfg: RepMLPConfig) -> None:
    check_feature_map(x)
    n, c, h, w = x.shape
    if (c, h, w) != (cfg.in_channels, cfg.height, cfg.width):
        raise ShapeError(
            f"block input {(c, h, w)} does not match config "
            f"{(cfg.in_channels, cfg.height, cfg.width)}")


def apply_nonlinearity(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(v, v.dtype.type(0))
    if kind == "identity":
        return v
    raise ShapeError(f"unknown nonlinearity {kind!r}")


def gp_mlp_add(pmap: np.ndarray, cfg: RepMLPConfig, fc1: FcSpec, fc2: FcSpec,
               bn: BnParams | None) -> np.ndarray:
    """Shared global-path body: pool tiles, optional BN, FC1, nonlinearity,
    FC2, broadcast-add onto the tile map. bn=None is the converted form."""
    pooled = avg_pool_global(pmap)
    if bn is not None:
        pooled = batchnorm_inference(pooled, bn)
    v = pooled.reshape(pooled.shape[0], cfg.in_channels)
    v = grouped_fc(v, fc1)
    v = apply_nonlinearity(v, cfg.gp_nonlinearity)
    v = grouped_fc(v, fc2)
    return pmap + v.reshape(-1, cfg.in_channels, 1, 1)


def global_perceptron(x: np.ndarray, cfg: RepMLPConfig, w: RepMLPTrainWeights) -> np.ndarray:
    """Partition the input and add the pooled-MLP correction to every tile.

    When the tile covers the whole image the path is skipped and the output
    is just the partition of x; fc1/fc2/gp_bn are never touched then.
    """
    check_block_input(x, cfg)
    pmap = partition(x, cfg.part_h, cfg.part_w)
    if not cfg.has_global_path:
        return pmap
    check_train_weights(cfg, w)
    return gp_mlp_add(pmap, cfg, w.fc1, w.fc2, w.gp_bn)


def local_perceptron(pmap: np.ndarray, cfg: RepMLPConfig, w: RepMLPTrainWeights) -> np.ndarray:
    """Sum of all conv+BN branches applied to the tile map.

    An empty branch list contributes an exact zero tensor.
    """
    check_feature_map(pmap)
    b = pmap.shape[0]
    out = np.zeros((b, cfg.out_channels, cfg.part_h, cfg.part_w), dtype=pmap.dtype)
    for conv, bn in w.branches:
        out += batchnorm_inference(conv2d(pmap, conv), bn)
    return out


def partition_perceptron(pmap: np.ndarray, cfg: RepMLPConfig, w: RepMLPTrainWeights) -> np.ndarray:
    """Grouped FC over flattened tiles followed by 1-D BN over all
    out_channels * part_h * part_w output features."""
    check_feature_map(pmap)
    b = pmap.shape[0]
    flat = pmap.reshape(b, cfg.fc_in_dim)
    y = grouped_fc(flat, w.fc3)
    y = batchnorm_inference(y.reshape(b, cfg.fc_out_dim, 1, 1), w.fc3_bn)
    return y.reshape(b, cfg.out_channels, cfg.part_h, cfg.part_w)


def forward_train(x: np.ndarray, cfg: RepMLPConfig, w: RepMLPTrainWeights) -> np.ndarray:
    """Training-form block forward: (N, C, H, W) -> (N, O, H, W)."""
    check_train_weights(cfg, w)
    pmap = global_perceptron(x, cfg, w)
    out = local_perceptron(pmap, cfg, w) + partition_perceptron(pmap, cfg, w)
    return inverse_partition(out, x.shape[0], cfg.height, cfg.width)


def _uniform(rng: np.random.Generator, shape, lo: float, hi: float, dtype) -> np.ndarray:
    return rng.uniform(lo, hi, size=shape).astype(dtype)


def random_bn(rng: np.random.Generator, features: int, dtype=np.float32,
              positive_gamma: bool = False) -> BnParams:
    """BN stats for randomized tests: variance in [0.5, 1.5], mean in
    [-0.1, 0.1], affine params in [-0.5, 0.5] (gamma in [0.5, 1.5] when
    positive_gamma keeps the channel sign)."""
    glo, ghi = (0.5, 1.5) if positive_gamma else (-0.5, 0.5)
    return BnParams(
        mean=_uniform(rng, features, -0.1, 0.1, dtype),
        var=_uniform(rng, features, 0.5, 1.5, dtype),
        gamma=_uniform(rng, features, glo, ghi, dtype),
        beta=_uniform(rng, features, -0.5, 0.5, dtype),
    )


def random_train_weights(cfg: RepMLPConfig, rng: np.random.Generator, dtype=np.float32,
                         positive_branches: bool = False) -> RepMLPTrainWeights:
    """Weights for randomized tests: independent uniform on [-0.5, 0.5].

    positive_branches draws branch conv kernels from [0.25, 0.75] with
    positive BN gammas, biasing the local path toward positive mass.
    """
    dtype = np.dtype(dtype).type
    c, o, g = cfg.in_channels, cfg.out_channels, cfg.groups
    branches = []
    blo, bhi = (0.25, 0.75) if positive_branches else (-0.5, 0.5)
    for k in cfg.branch_kernels:
        conv = ConvSpec(
            kernel=_uniform(rng, (o, c // g, k, k), blo, bhi, dtype),
            bias=None,
            padding=(k // 2, k // 2),
            groups=g,
        )
        branches.append((conv, random_bn(rng, o, dtype, positive_gamma=positive_branches)))
    fc3 = FcSpec(
        kernel=_uniform(rng, (cfg.fc_out_dim, cfg.fc_in_dim // g), -0.5, 0.5, dtype),
        bias=None, groups=g, in_dim=cfg.fc_in_dim, out_dim=cfg.fc_out_dim,
    )
    gp_bn = fc1 = fc2 = None
    if cfg.has_global_path:
        gp_bn = random_bn(rng, c, dtype)
        d = cfg.gp_hidden
        fc1 = FcSpec(kernel=_uniform(rng, (d, c), -0.5, 0.5, dtype),
                     bias=_uniform(rng, d, -0.5, 0.5, dtype), groups=1, in_dim=c, out_dim=d)
        fc2 = FcSpec(kernel=_uniform(rng, (c, d), -0.5, 0.5, dtype),
                     bias=_uniform(rng, c, -0.5, 0.5, dtype), groups=1, in_dim=d, out_dim=c)
    return RepMLPTrainWeights(
        fc3=fc3,
        fc3_bn=random_bn(rng, cfg.fc_out_dim, dtype, positive_gamma=positive_branches),
        branches=tuple(branches),
        gp_bn=gp_bn, fc1=fc1, fc2=fc2,
    )
