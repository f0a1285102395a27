"""Windowed-attention spotting network over padded snippet sequences.

Forward structure:

* an embedding stack of temporal convolutions with ReLU,
* encoder blocks: pre-norm windowed multi-head self-attention and a pointwise
  GELU MLP, both with residual connections,
* pyramid blocks: one more encoder block, a stride-2 pointwise downsampling
  convolution, then a windowed attention pass with its own weights,
* a shared sigmoid decode head applied to every pyramid level; coarse levels
  are upsampled by repetition and all levels valid at a timestamp are
  averaged into one foreground probability per timestamp.

Attention is computed inside consecutive non-overlapping windows of fixed
length (the last window may be shorter). Positions masked as padding are
zeroed at entry and after every block, attention never attends to masked
keys, and a window with no valid key passes through as zeros, so outputs at
valid positions are bit-identical regardless of what the padding contains.
No positional embeddings are used; window geometry is the only notion of
locality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterator, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .snippets import FeatureSequence


@dataclass(frozen=True)
class SpotterConfig:
    """Architecture hyperparameters; every field is covered by validate()."""

    input_width: int
    embed_dim: int
    duration: int
    embed_blocks: int = 2
    encoder_blocks: int = 2
    pyramid_blocks: int = 1
    heads: int = 4
    window: int = 19
    embed_kernel: int = 3
    decoder_kernel: int = 3
    full_width_scale: bool = False  # scale scores by 1/sqrt(embed_dim) instead
    # of the per-head default 1/sqrt(embed_dim / heads)

    def validate(self) -> None:
        if self.input_width < 1 or self.embed_dim < 1 or self.duration < 1:
            raise ConfigError(f"widths/duration must be positive: {self}")
        if self.embed_blocks < 1:
            raise ConfigError("at least one embedding block is required")
        if self.encoder_blocks < 0 or self.pyramid_blocks < 0:
            raise ConfigError("block counts must be non-negative")
        if self.heads < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must divide into {self.heads} heads"
            )
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        for name in ("embed_kernel", "decoder_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 1, got {k}")
        if self.duration >> self.pyramid_blocks < 1:
            raise ConfigError(
                f"duration {self.duration} too short for {self.pyramid_blocks} "
                "pyramid halvings"
            )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SpotterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class ConvParams:
    w: Tensor  # (k, d_in, d_out)
    b: Tensor  # (d_out,)


@dataclass
class NormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class MlpParams:
    w1: Tensor  # (d, 4d) pointwise conv
    b1: Tensor
    w2: Tensor  # (4d, d)
    b2: Tensor


@dataclass
class BlockParams:
    norm1: NormParams
    attn: AttentionParams
    norm2: NormParams
    mlp: MlpParams


@dataclass
class PyramidParams:
    block: BlockParams
    down: ConvParams  # width-1 stride-2 convolution
    attn: AttentionParams  # separate weights for the post-downsampling pass


@dataclass
class SpotterParams:
    embed: list[ConvParams]
    encoder: list[BlockParams]
    pyramid: list[PyramidParams]
    head: ConvParams

    def named(self) -> Iterator[tuple[str, Tensor]]:
        """Stable (name, tensor) walk used by the optimizer and checkpoints."""
        for i, c in enumerate(self.embed):
            yield f"embed.{i}.w", c.w
            yield f"embed.{i}.b", c.b
        for prefix, blocks in (("enc", self.encoder),):
            for i, blk in enumerate(blocks):
                yield from _named_block(f"{prefix}.{i}", blk)
        for i, pyr in enumerate(self.pyramid):
            yield from _named_block(f"pyr.{i}.block", pyr.block)
            yield f"pyr.{i}.down.w", pyr.down.w
            yield f"pyr.{i}.down.b", pyr.down.b
            yield from _named_attn(f"pyr.{i}.attn", pyr.attn)
        yield "head.w", self.head.w
        yield "head.b", self.head.b

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self.named())


def _named_attn(prefix: str, a: AttentionParams) -> Iterator[tuple[str, Tensor]]:
    for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
        yield f"{prefix}.{n}", getattr(a, n)


def _named_block(prefix: str, blk: BlockParams) -> Iterator[tuple[str, Tensor]]:
    yield f"{prefix}.ln1.gain", blk.norm1.gain
    yield f"{prefix}.ln1.bias", blk.norm1.bias
    yield from _named_attn(f"{prefix}.attn", blk.attn)
    yield f"{prefix}.ln2.gain", blk.norm2.gain
    yield f"{prefix}.ln2.bias", blk.norm2.bias
    yield f"{prefix}.mlp.w1", blk.mlp.w1
    yield f"{prefix}.mlp.b1", blk.mlp.b1
    yield f"{prefix}.mlp.w2", blk.mlp.w2
    yield f"{prefix}.mlp.b2", blk.mlp.b2


DECODER_BIAS_INIT = -2.0  # initial foreground probability sigmoid(-2) ~ 0.12


def init_params(config: SpotterConfig, rng: np.random.Generator) -> SpotterParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    config.validate()
    d = config.embed_dim

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=True)

    def conv(k, d_in, d_out):
        return ConvParams(uniform((k, d_in, d_out), k * d_in), zeros(d_out))

    def attention():
        return AttentionParams(
            uniform((d, d), d), zeros(d),
            uniform((d, d), d), zeros(d),
            uniform((d, d), d), zeros(d),
            uniform((d, d), d), zeros(d),
        )

    def block():
        return BlockParams(
            NormParams(ones(d), zeros(d)),
            attention(),
            NormParams(ones(d), zeros(d)),
            MlpParams(
                uniform((d, 4 * d), d), zeros(4 * d),
                uniform((4 * d, d), 4 * d), zeros(d),
            ),
        )

    embed = []
    width = config.input_width
    for _ in range(config.embed_blocks):
        embed.append(conv(config.embed_kernel, width, d))
        width = d
    encoder = [block() for _ in range(config.encoder_blocks)]
    pyramid = [
        PyramidParams(block(), conv(1, d, d), attention())
        for _ in range(config.pyramid_blocks)
    ]
    head = conv(config.decoder_kernel, d, 1)
    head.b.data[:] = DECODER_BIAS_INIT
    return SpotterParams(embed, encoder, pyramid, head)


def count_params(config: SpotterConfig) -> int:
    """Closed-form parameter count; tests assert it matches the real tree."""
    d = config.embed_dim
    embed = config.embed_kernel * config.input_width * d + d
    embed += (config.embed_blocks - 1) * (config.embed_kernel * d * d + d)
    attn = 4 * (d * d + d)
    block = 2 * (2 * d) + attn + (d * 4 * d + 4 * d) + (4 * d * d + d)
    pyramid = block + (d * d + d) + attn
    head = config.decoder_kernel * d + 1
    return (
        embed
        + config.encoder_blocks * block
        + config.pyramid_blocks * pyramid
        + head
    )


class AttentionWindow(NamedTuple):
    """Debug record of one window/head attention matrix (test hook)."""

    level: int
    window: int
    head: int
    matrix: np.ndarray
    key_mask: np.ndarray


@dataclass
class AttentionTrace:
    windows: list[AttentionWindow] = field(default_factory=list)
    level: int = 0


def windowed_attention(
    x: Tensor,
    key_mask: np.ndarray,
    p: AttentionParams,
    config: SpotterConfig,
    trace: AttentionTrace | None = None,
) -> Tensor:
    """Multi-head self-attention inside non-overlapping fixed-length windows.

    ``key_mask`` is boolean per row; masked keys receive zero attention. A
    window with no valid key contributes zeros. The final window may be
    shorter than the configured length and is attended as-is.
    """
    t_len, d = x.data.shape
    n_heads = config.heads
    head_dim = d // n_heads
    scale = 1.0 / math.sqrt(d if config.full_width_scale else head_dim)
    q = ad.add_bias(ad.matmul(x, p.wq), p.bq)
    k = ad.add_bias(ad.matmul(x, p.wk), p.bk)
    v = ad.add_bias(ad.matmul(x, p.wv), p.bv)
    window_rows = []
    for w0 in range(0, t_len, config.window):
        w1 = min(w0 + config.window, t_len)
        wmask = key_mask[w0:w1]
        if not wmask.any():
            window_rows.append(ad.Tensor(np.zeros((w1 - w0, d))))
            continue
        softmax_mask = None if wmask.all() else wmask
        heads = []
        for h in range(n_heads):
            c0 = h * head_dim
            qs = ad.slice2d(q, w0, w1, c0, c0 + head_dim)
            ks = ad.slice2d(k, w0, w1, c0, c0 + head_dim)
            vs = ad.slice2d(v, w0, w1, c0, c0 + head_dim)
            scores = ad.mul_const(ad.matmul(qs, ad.transpose(ks)), scale)
            attn = ad.softmax_lastdim(scores, softmax_mask)
            if trace is not None:
                trace.windows.append(
                    AttentionWindow(
                        trace.level, w0 // config.window, h,
                        attn.data.copy(), wmask.copy(),
                    )
                )
            heads.append(ad.matmul(attn, vs))
        window_rows.append(ad.concat_cols(heads))
    merged = ad.concat_rows(window_rows)
    return ad.add_bias(ad.matmul(merged, p.wo), p.bo)


def _remask(x: Tensor, mask: np.ndarray) -> Tensor:
    return ad.mul_const(x, mask[:, None])


def embed_features(
    x: Tensor, mask: np.ndarray, params: SpotterParams, config: SpotterConfig
) -> Tensor:
    h = _remask(x, mask)
    for conv in params.embed:
        h = ad.relu(ad.conv1d(h, conv.w, conv.b, stride=1, padding="same"))
        h = _remask(h, mask)
    return h


def transformer_block(
    x: Tensor,
    mask: np.ndarray,
    blk: BlockParams,
    config: SpotterConfig,
    trace: AttentionTrace | None = None,
) -> Tensor:
    key_mask = mask > 0.5
    normed = ad.layer_norm(x, blk.norm1.gain, blk.norm1.bias)
    x = ad.add(windowed_attention(normed, key_mask, blk.attn, config, trace), x)
    normed = ad.layer_norm(x, blk.norm2.gain, blk.norm2.bias)
    h = ad.gelu(ad.add_bias(ad.matmul(normed, blk.mlp.w1), blk.mlp.b1))
    h = ad.add_bias(ad.matmul(h, blk.mlp.w2), blk.mlp.b2)
    return _remask(ad.add(h, x), mask)


def downsample_mask(mask: np.ndarray) -> np.ndarray:
    """Halve a validity mask; a coarse slot is valid if either source is."""
    out = mask[0::2].copy()
    tail = mask[1::2]
    out[: tail.shape[0]] = np.maximum(out[: tail.shape[0]], tail)
    return out


def pyramid_block(
    x: Tensor,
    mask: np.ndarray,
    pyr: PyramidParams,
    config: SpotterConfig,
    trace: AttentionTrace | None = None,
) -> tuple[Tensor, np.ndarray]:
    h = transformer_block(x, mask, pyr.block, config, trace)
    z = ad.conv1d(h, pyr.down.w, pyr.down.b, stride=2, padding="same")
    down = downsample_mask(mask)
    z = windowed_attention(z, down > 0.5, pyr.attn, config, trace)
    return _remask(z, down), down


def decode_head(
    levels: list[tuple[Tensor, np.ndarray]],
    head: ConvParams,
    config: SpotterConfig,
) -> Tensor:
    """Shared conv+sigmoid per level, upsample, average valid levels.

    Returns a (duration,) probability vector that is exactly zero at padded
    timestamps.
    """
    duration = config.duration
    base_mask = levels[0][1]
    upsampled = []
    up_masks = []
    for i, (feats, mask) in enumerate(levels):
        logits = ad.conv1d(feats, head.w, head.b, stride=1, padding="same")
        probs = ad.reshape(ad.sigmoid(logits), (feats.data.shape[0],))
        factor = 1 << i
        if factor > 1:
            probs = ad.repeat_rows(probs, factor, duration)
            up_mask = np.repeat(mask, factor)[:duration]
        else:
            up_mask = mask
        upsampled.append(probs)
        up_masks.append(up_mask)
    coverage = np.sum(up_masks, axis=0)
    weights = [
        base_mask * m / np.maximum(coverage, 1.0) for m in up_masks
    ]
    out = ad.mul_const(upsampled[0], weights[0])
    for probs, w in zip(upsampled[1:], weights[1:]):
        out = ad.add(out, ad.mul_const(probs, w))
    return out


def forward(
    seq: FeatureSequence,
    params: SpotterParams,
    config: SpotterConfig,
    trace: AttentionTrace | None = None,
) -> Tensor:
    """Full forward pass: (duration,) foreground probabilities."""
    if seq.features.shape != (config.duration, config.input_width):
        raise ShapeError(
            f"features {seq.features.shape} vs configured "
            f"({config.duration}, {config.input_width})"
        )
    # Kill padded rows before the first convolution so arbitrary padding
    # values can never reach a valid output.
    x = Tensor(seq.features * seq.mask[:, None])
    h = embed_features(x, seq.mask, params, config)
    for blk in params.encoder:
        if trace is not None:
            trace.level = 0
        h = transformer_block(h, seq.mask, blk, config, trace)
    levels = [(h, seq.mask)]
    z, mask = h, seq.mask
    for i, pyr in enumerate(params.pyramid):
        if trace is not None:
            trace.level = i + 1
        z, mask = pyramid_block(z, mask, pyr, config, trace)
        levels.append((z, mask))
    return decode_head(levels, params.head, config)
