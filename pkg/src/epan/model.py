"""Dual-branch deblurring network: content branch, edge branch and fusion.

The content branch (CDN) is a U-shaped encoder/decoder over the blurry RGB
image. The edge branch (EEN) mirrors its topology on the single-channel
blurry edge map at a quarter of the width. After every decoder convolution
of the content branch the same-resolution edge-branch feature is fused in,
using one of four modes selected by the ablation variant.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor


class FusionMode(str, enum.Enum):
    NONE = "none"
    CONCAT = "concat"
    ADD = "add"
    ATTENTIVE = "attentive"


VARIANTS = ("phi", "phi_cat", "phi_add", "phi_att", "phi_eal", "epan")

VARIANT_FUSION = {
    "phi": FusionMode.NONE,
    "phi_eal": FusionMode.NONE,
    "phi_cat": FusionMode.CONCAT,
    "phi_add": FusionMode.ADD,
    "phi_att": FusionMode.ATTENTIVE,
    "epan": FusionMode.ATTENTIVE,
}


def variant_has_een(variant: str) -> bool:
    return VARIANT_FUSION[variant] is not FusionMode.NONE


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "epan"
    levels: int = 3
    cdn_base_channels: int = 32
    een_channel_divisor: int = 4
    convs_per_level: int = 2
    kernel_size: int = 3
    in_channels: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.levels < 2:
            raise ConfigurationError(f"levels must be >= 2, got {self.levels}")
        if self.convs_per_level < 1:
            raise ConfigurationError(f"convs_per_level must be >= 1, got {self.convs_per_level}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.een_channel_divisor != 4:
            raise ConfigurationError("een_channel_divisor is fixed at 4")
        if self.cdn_base_channels < 1 or self.cdn_base_channels % self.een_channel_divisor:
            raise ConfigurationError(
                f"cdn_base_channels={self.cdn_base_channels} is not divisible by "
                f"een_channel_divisor={self.een_channel_divisor}")
        if self.in_channels < 1:
            raise ConfigurationError(f"in_channels must be >= 1, got {self.in_channels}")

    @property
    def fusion(self) -> FusionMode:
        return VARIANT_FUSION[self.variant]

    @property
    def has_een(self) -> bool:
        return variant_has_een(self.variant)

    @property
    def spatial_divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def cdn_channels(self, level: int) -> int:
        return self.cdn_base_channels * 2 ** level

    def een_channels(self, level: int) -> int:
        return self.cdn_channels(level) // self.een_channel_divisor

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ConvSpec:
    name: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1


def _branch_specs(prefix: str, cfg: ModelConfig, in_ch: int, out_ch: int,
                  width) -> tuple[list[ConvSpec], list[ConvSpec], ConvSpec]:
    """Encoder convs, decoder convs (execution order) and the output conv."""
    k = cfg.kernel_size
    enc = []
    for lvl in range(cfg.levels):
        for j in range(cfg.convs_per_level):
            if j == 0:
                src = in_ch if lvl == 0 else width(lvl - 1)
            else:
                src = width(lvl)
            stride = 2 if (lvl > 0 and j == 0) else 1
            enc.append(ConvSpec(f"{prefix}.enc{lvl}.conv{j}", src, width(lvl), k, stride))
    dec = []
    for lvl in reversed(range(cfg.levels - 1)):
        dec.append(ConvSpec(f"{prefix}.dec{lvl}.up", width(lvl + 1), width(lvl), k))
        dec.append(ConvSpec(f"{prefix}.dec{lvl}.conv0", 2 * width(lvl), width(lvl), k))
        for j in range(1, cfg.convs_per_level):
            dec.append(ConvSpec(f"{prefix}.dec{lvl}.conv{j}", width(lvl), width(lvl), k))
    out = ConvSpec(f"{prefix}.out", width(0), out_ch, k)
    return enc, dec, out


def _fusion_specs(cfg: ModelConfig, cdn_dec: list[ConvSpec], een_dec: list[ConvSpec]) -> list[ConvSpec]:
    mode = cfg.fusion
    specs = []
    for c, e in zip(cdn_dec, een_dec):
        site = "fuse" + c.name[len("cdn"):]
        if mode is FusionMode.ATTENTIVE:
            specs.append(ConvSpec(site, e.out_ch, 1, cfg.kernel_size))
        elif mode is FusionMode.ADD:
            specs.append(ConvSpec(site, e.out_ch, c.out_ch, 1))
        elif mode is FusionMode.CONCAT:
            specs.append(ConvSpec(site, c.out_ch + e.out_ch, c.out_ch, 1))
    return specs


def _init_conv(spec: ConvSpec, seed: int, dtype) -> tuple[Tensor, Tensor]:
    # one independent stream per parameter name, so variants sharing a layer
    # name also share its initial values
    rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(spec.name.encode())]))
    fan_in = spec.in_ch * spec.kernel * spec.kernel
    w = rng.standard_normal((spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)) * np.sqrt(2.0 / fan_in)
    weight = Tensor(w.astype(dtype), requires_grad=True, name=spec.name + ".weight")
    bias = Tensor(np.zeros(spec.out_ch, dtype=dtype), requires_grad=True, name=spec.name + ".bias")
    return weight, bias


class Network:
    """Parameters plus the forward pass for one ablation variant."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        cfg = config
        self.cdn_enc, self.cdn_dec, self.cdn_out = _branch_specs(
            "cdn", cfg, cfg.in_channels, cfg.in_channels, cfg.cdn_channels)
        if cfg.has_een:
            self.een_enc, self.een_dec, self.een_out = _branch_specs("een", cfg, 1, 1, cfg.een_channels)
            self.fuse_specs = _fusion_specs(cfg, self.cdn_dec, self.een_dec)
        else:
            self.een_enc, self.een_dec, self.een_out = [], [], None
            self.fuse_specs = []

    # -- parameter access ------------------------------------------------
    def all_specs(self) -> list[ConvSpec]:
        specs = self.cdn_enc + self.cdn_dec + [self.cdn_out]
        if self.een_out is not None:
            specs += self.een_enc + self.een_dec + [self.een_out]
        return specs + self.fuse_specs

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.params.items()

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def count_parameters(self, prefix: str = "") -> int:
        return int(sum(p.size for n, p in self.params.items() if n.startswith(prefix)))

    def parameter_counts(self) -> dict[str, int]:
        return {
            "cdn": self.count_parameters("cdn."),
            "een": self.count_parameters("een."),
            "fusion": self.count_parameters("fuse."),
            "total": self.count_parameters(),
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> Network:
        params = {n: Tensor(p.data.astype(dtype), requires_grad=True, name=n) for n, p in self.params.items()}
        return Network(self.config, params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    # -- forward -----------------------------------------------------------
    def _conv(self, x: Tensor, spec: ConvSpec) -> Tensor:
        return T.conv2d(x, self.params[spec.name + ".weight"], self.params[spec.name + ".bias"],
                        stride=spec.stride, padding=spec.kernel // 2)

    def _run_branch(self, x: Tensor, enc, dec, out_spec, edge_feats=None, fuse_specs=None):
        cfg = self.config
        inp = x
        skips = []
        i = 0
        for lvl in range(cfg.levels):
            for _ in range(cfg.convs_per_level):
                x = T.relu(self._conv(x, enc[i]))
                i += 1
            skips.append(x)
        feats = []
        i = 0
        for lvl in reversed(range(cfg.levels - 1)):
            for j in range(cfg.convs_per_level + 1):
                if j == 0:
                    x = T.upsample_nearest(x, 2)
                elif j == 1:
                    x = T.concat_channels(x, skips[lvl])
                x = T.relu(self._conv(x, dec[i]))
                if edge_feats is not None:
                    x = self._fuse_at(i, edge_feats[i], x, fuse_specs)
                feats.append(x)
                i += 1
        delta = self._conv(x, out_spec)
        if out_spec is self.een_out:
            # edge maps are near-binary; a sigmoid head keeps gradients alive where
            # a clamped residual would saturate
            return T.sigmoid(delta), feats
        return T.clamp(inp + delta, 0.0, 1.0), feats

    def _fuse_at(self, i, x_e, x_c, fuse_specs):
        mode = self.config.fusion
        if mode is FusionMode.NONE:
            return x_c
        spec = fuse_specs[i]
        return fuse(mode, x_e, x_c, self.params[spec.name + ".weight"], self.params[spec.name + ".bias"])

    def check_input(self, image: Tensor, edges: Tensor | None) -> None:
        cfg = self.config
        if image.ndim != 4 or image.shape[1] != cfg.in_channels:
            raise DimensionError(
                f"blurry image must be (N, {cfg.in_channels}, H, W), got {image.shape}")
        d = cfg.spatial_divisor
        h, w = image.shape[2:]
        if h % d or w % d:
            raise DimensionError(
                f"spatial extents {h}x{w} must be divisible by {d} (2^(levels-1)) for levels={cfg.levels}")
        if cfg.has_een:
            if edges is None:
                raise ContractError(f"variant {cfg.variant} needs a blurry edge map")
            if edges.shape != (image.shape[0], 1, h, w):
                raise DimensionError(
                    f"edge map must be ({image.shape[0]}, 1, {h}, {w}), got {edges.shape}")

    def forward(self, image, edges=None) -> tuple[Tensor, Tensor | None]:
        """Return (deblurred image, enhanced edge map or None)."""
        image = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        if edges is not None and not isinstance(edges, Tensor):
            edges = Tensor(np.asarray(edges, dtype=self.dtype))
        self.check_input(image, edges)
        edge_out, edge_feats = None, None
        if self.config.has_een:
            edge_out, edge_feats = self._run_branch(edges, self.een_enc, self.een_dec, self.een_out)
        deblurred, _ = self._run_branch(image, self.cdn_enc, self.cdn_dec, self.cdn_out,
                                        edge_feats, self.fuse_specs)
        return deblurred, edge_out

    __call__ = forward

    def decoder_features(self, image, edges=None) -> dict[str, list[Tensor]]:
        """Per-decoder-layer features of both branches (for inspection and tests)."""
        image = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        out = {"een": []}
        if self.config.has_een:
            edges = edges if isinstance(edges, Tensor) else Tensor(np.asarray(edges, dtype=self.dtype))
            _, out["een"] = self._run_branch(edges, self.een_enc, self.een_dec, self.een_out)
        _, out["cdn"] = self._run_branch(image, self.cdn_enc, self.cdn_dec, self.cdn_out,
                                         out["een"] or None, self.fuse_specs)
        return out


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Network:
    """Create a network with He-normal weights and zero biases drawn from ``seed``."""
    shell = Network(config, {})
    params: dict[str, Tensor] = {}
    for spec in shell.all_specs():
        w, b = _init_conv(spec, seed, dtype)
        params[w.name] = w
        params[b.name] = b
    return Network(config, params)


def attentive_fuse(x_e: Tensor, x_c: Tensor, g_weight: Tensor, g_bias: Tensor) -> Tensor:
    """Gate content features with a sigmoid spatial mask computed from edge features."""
    _check_spatial(x_e, x_c)
    if g_weight.shape[0] != 1:
        raise DimensionError(f"mask projection must output 1 channel, got {g_weight.shape[0]}")
    mask = T.sigmoid(T.conv2d(x_e, g_weight, g_bias, stride=1, padding=g_weight.shape[2] // 2))
    return T.mul(mask, x_c)


def fuse(mode: FusionMode | str, x_e: Tensor | None, x_c: Tensor,
         weight: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Combine an edge feature into a content feature; output shape equals ``x_c``'s."""
    mode = FusionMode(mode)
    if mode is FusionMode.NONE:
        return x_c
    if x_e is None:
        raise ContractError(f"fusion mode {mode.value!r} needs edge-branch features")
    if weight is None or bias is None:
        raise ContractError(f"fusion mode {mode.value!r} needs projection parameters")
    _check_spatial(x_e, x_c)
    if mode is FusionMode.ATTENTIVE:
        return attentive_fuse(x_e, x_c, weight, bias)
    if mode is FusionMode.ADD:
        return T.add(x_c, T.conv2d(x_e, weight, bias))
    return T.conv2d(T.concat_channels(x_c, x_e), weight, bias)


def _check_spatial(x_e: Tensor, x_c: Tensor) -> None:
    if x_e.ndim != 4 or x_c.ndim != 4:
        raise DimensionError("fusion inputs must be 4-D")
    if x_e.shape[0] != x_c.shape[0] or x_e.shape[2:] != x_c.shape[2:]:
        raise DimensionError(
            f"edge feature {x_e.shape} and content feature {x_c.shape} differ in batch/spatial extents")
