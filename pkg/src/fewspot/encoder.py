"""Depthwise-separable convolutional speech encoders.

Two size variants: "s" (64 channels, 4 separable blocks, 64-dim
embeddings) and "l" (256 channels, 5 blocks, 256-dim).  The stack is

    conv 10x4 (strided) -> BN -> ReLU -> blocks of
    [3x3 depthwise -> BN -> ReLU -> 1x1 pointwise -> BN -> ReLU]

followed by a global average pool.  The head variant controls what the
pool sees in the last block:

    conv: the pointwise output itself (no final BN/ReLU);
    relu: the full block output, so embeddings are non-negative;
    norm: LayerNorm over channels replaces the final BN, no final
          ReLU, and the pooled vector is L2-normalized to the sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import DataFormatError, ValidationError
from .nn import autograd
from .nn.autograd import Tensor
from .nn.layers import (
    BatchNorm2d,
    Conv2d,
    DepthwiseConv3x3,
    LayerNormChannels,
    Module,
    PointwiseConv,
    global_avg_pool,
)
from .seeding import INIT_STREAM, rng_for

_VARIANTS = {
    "s": {"channels": 64, "num_ds_blocks": 4, "first_conv_stride": (2, 2)},
    "l": {"channels": 256, "num_ds_blocks": 5, "first_conv_stride": (2, 1)},
}
_HEADS = ("conv", "relu", "norm")

L2_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    size_variant: str = "s"
    head_variant: str = "conv"
    # Overrides for reduced test instances; None means "per size_variant".
    channels: int | None = None
    num_ds_blocks: int | None = None
    # float32 halves training time; float64 is the default for exactness.
    dtype: str = "float64"

    def __post_init__(self):
        if self.size_variant not in _VARIANTS:
            raise ValidationError(f"unknown size_variant {self.size_variant!r}")
        if self.head_variant not in _HEADS:
            raise ValidationError(f"unknown head_variant {self.head_variant!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"unknown dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def resolved_channels(self) -> int:
        return self.channels or _VARIANTS[self.size_variant]["channels"]

    @property
    def resolved_blocks(self) -> int:
        return self.num_ds_blocks or _VARIANTS[self.size_variant]["num_ds_blocks"]

    @property
    def first_conv_stride(self) -> tuple[int, int]:
        return _VARIANTS[self.size_variant]["first_conv_stride"]

    @property
    def embedding_dim(self) -> int:
        return self.resolved_channels

    def to_dict(self) -> dict:
        return {
            "size_variant": self.size_variant,
            "head_variant": self.head_variant,
            "channels": self.resolved_channels,
            "num_ds_blocks": self.resolved_blocks,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            size_variant=d["size_variant"],
            head_variant=d["head_variant"],
            channels=d.get("channels"),
            num_ds_blocks=d.get("num_ds_blocks"),
            dtype=d.get("dtype", "float64"),
        )


class _DSBlock(Module):
    """One separable block; `tail` selects how it ends (see module doc)."""

    def __init__(self, channels, rng, name, tail, dtype):
        self.tail = tail
        self.dw = DepthwiseConv3x3(channels, rng, f"{name}.dw", dtype=dtype)
        self.bn1 = BatchNorm2d(channels, f"{name}.bn1", dtype=dtype)
        self.pw = PointwiseConv(channels, channels, rng, f"{name}.pw", dtype=dtype)
        if tail == "full":
            self.bn2 = BatchNorm2d(channels, f"{name}.bn2", dtype=dtype)
        elif tail == "layernorm":
            self.ln = LayerNormChannels(channels, f"{name}.ln", dtype=dtype)
        elif tail != "bare":
            raise ValueError(f"unknown tail {tail!r}")

    def __call__(self, x, *, training, update_stats):
        x = autograd.relu(self.bn1(self.dw(x), training=training, update_stats=update_stats))
        x = self.pw(x)
        if self.tail == "full":
            x = autograd.relu(self.bn2(x, training=training, update_stats=update_stats))
        elif self.tail == "layernorm":
            x = self.ln(x)
        return x


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        ch = cfg.resolved_channels
        dt = cfg.np_dtype
        rng = rng_for(self.seed, INIT_STREAM)
        self.conv0 = Conv2d(1, ch, (10, 4), cfg.first_conv_stride, rng, "conv0", dtype=dt)
        self.bn0 = BatchNorm2d(ch, "bn0", dtype=dt)
        last_tail = {"conv": "bare", "relu": "full", "norm": "layernorm"}[cfg.head_variant]
        self.blocks = [
            _DSBlock(
                ch,
                rng,
                f"block{i}",
                last_tail if i == cfg.resolved_blocks - 1 else "full",
                dt,
            )
            for i in range(cfg.resolved_blocks)
        ]

    @property
    def embedding_dim(self) -> int:
        return self.cfg.embedding_dim

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def forward(
        self,
        features,
        *,
        training: bool = False,
        update_stats: bool = True,
        return_prepool: bool = False,
    ):
        """Map (B, 49, 10) feature maps to (B, embedding_dim) embeddings.

        In eval mode running batch-norm statistics are used and nothing
        is mutated; in train mode batch statistics are used and running
        stats are updated unless update_stats is off.
        """
        if isinstance(features, Tensor):
            x = features
        else:
            x = Tensor(np.asarray(features, dtype=self.cfg.np_dtype))
        if x.ndim == 3:
            x = x.reshape((x.shape[0], 1, x.shape[1], x.shape[2]))
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValidationError(f"expected (B, H, W) feature maps, got {x.shape}")
        update_stats = update_stats and training
        x = autograd.relu(self.bn0(self.conv0(x), training=training, update_stats=update_stats))
        for block in self.blocks:
            x = block(x, training=training, update_stats=update_stats)
        prepool = x
        e = global_avg_pool(x)
        if self.cfg.head_variant == "norm":
            norm = autograd.sqrt((e * e).sum(axis=1, keepdims=True) + L2_EPS)
            e = e / norm
        if not np.all(np.isfinite(e.data)):
            raise ValidationError("non-finite encoder output")
        if return_prepool:
            return e, prepool
        return e

    def embed(self, features) -> np.ndarray:
        """Eval-mode forward without graph construction; returns ndarray."""
        with autograd.no_grad():
            return self.forward(features, training=False).data

    def __call__(self, features, **kw):
        return self.forward(features, **kw)


def build_encoder(cfg: EncoderConfig, seed: int) -> Encoder:
    return Encoder(cfg, seed)


def save_checkpoint(encoder: Encoder, path, extra_config=None, extra_tensors=None) -> None:
    config = {"kind": "encoder", "seed": encoder.seed, "encoder": encoder.cfg.to_dict()}
    if extra_config:
        config.update(extra_config)
    tensors = encoder.state_tensors("enc.")
    if extra_tensors:
        tensors.update(extra_tensors)
    write_container(path, config, tensors)


def load_checkpoint(path):
    """Returns (encoder, config dict, full tensor dict)."""
    config, tensors = read_container(path)
    if config.get("kind") != "encoder":
        raise DataFormatError(f"{path}: not an encoder checkpoint")
    encoder = Encoder(EncoderConfig.from_dict(config["encoder"]), config.get("seed", 0))
    try:
        encoder.load_state_tensors(tensors, "enc.")
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing tensor {exc.args[0]}") from exc
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    return encoder, config, tensors
