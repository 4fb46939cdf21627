"""A compact vision transformer: convolutional tokenizer, sinusoidal
positional embedding, pre-norm encoder layers, sequence pooling, head.

Attention projections are stored as separate per-head matrices of shape
(embed_dim, head_dim) because task adaptation convolves each head's
matrix independently. All forward functions take an explicit weight
view so adapted weights can be swapped in without touching the trunk.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, UsageError


@dataclass
class TokenizerStage:
    """One conv stage of the tokenizer stem."""

    out_channels: int
    kernel: int = 3
    stride: int = 2
    padding: int = 3
    pooling: bool = True  # 3x3 stride-2 max pool after the ReLU


@dataclass
class ModelConfig:
    embed_dim: int = 256
    layers: int = 6
    heads: int = 4
    ffn_ratio: float = 2.0
    tokenizer: list[TokenizerStage] = field(
        default_factory=lambda: [TokenizerStage(out_channels=256)]
    )
    attn_dropout_p: float = 0.1
    stochastic_depth_p: float = 0.1
    image_height: int = 32
    image_width: int = 32
    image_channels: int = 3
    classes_first_task: int = 10
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.embed_dim % 2 != 0:
            raise ConfigError("embed_dim must be even for sinusoidal embeddings")
        for p in (self.attn_dropout_p, self.stochastic_depth_p):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout probability {p} outside [0, 1)")
        if not self.tokenizer:
            raise ConfigError("tokenizer needs at least one stage")
        if self.tokenizer[-1].out_channels != self.embed_dim:
            raise ConfigError(
                "last tokenizer stage must emit embed_dim channels, got "
                f"{self.tokenizer[-1].out_channels} vs {self.embed_dim}"
            )
        token_grid(self)  # rejects configs whose spatial extent collapses

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def token_grid(config: ModelConfig) -> tuple[int, int]:
    """Spatial grid of the tokenizer output; errors if it collapses."""
    h, w = config.image_height, config.image_width
    for stage in config.tokenizer:
        h = conv_output_size(h, stage.kernel, stage.stride, stage.padding)
        w = conv_output_size(w, stage.kernel, stage.stride, stage.padding)
        if stage.pooling:
            h = conv_output_size(h, 3, 2, 1)
            w = conv_output_size(w, 3, 2, 1)
        if h < 1 or w < 1:
            raise ConfigError(
                f"tokenizer collapses the image to {h}x{w}; "
                "reduce stages or strides"
            )
    return h, w


def token_count(config: ModelConfig) -> int:
    h, w = token_grid(config)
    return h * w


def sinusoidal_pos_embed(n: int, d: int, dtype=np.float32) -> Tensor:
    """Fixed positional embedding: interleaved sin/cos of geometric frequencies."""
    if d % 2 != 0:
        raise ConfigError(f"positional embedding needs even width, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)[None, :]
    arg = pos * freq
    pe = np.empty((n, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(arg)
    pe[:, 1::2] = np.cos(arg)
    return Tensor(pe.astype(dtype))


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal draw re-sampled until every value lies within two sigmas."""
    x = rng.normal(0.0, std, size=shape)
    while True:
        bad = np.abs(x) > 2.0 * std
        if not bad.any():
            break
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return x.astype(np.float32)


@dataclass
class LayerWeights:
    """Effective tensors of one encoder layer, base or task-adapted."""

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor
    wo_bias: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


@dataclass
class ForwardWeights:
    """Everything a forward pass consumes beyond the frozen tokenizer."""

    layers: list[LayerWeights]
    final_ln_gamma: Tensor
    final_ln_beta: Tensor
    pool_w: Tensor
    pool_b: Tensor
    head_w: Tensor
    head_b: Tensor


class BaseBackbone:
    """Trainable transformer trunk; frozen after first-task training.

    Once frozen, every tensor is immutable: later task training must
    leave the content digest bit-identical.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.frozen = False
        self.class_list: list[int] = list(range(config.classes_first_task))
        rng = np.random.default_rng([seed, 0])
        d, heads, dk = config.embed_dim, config.heads, config.head_dim

        self.tokenizer_w: list[Tensor] = []
        self.tokenizer_b: list[Tensor] = []
        in_ch = config.image_channels
        for stage in config.tokenizer:
            fan_in = in_ch * stage.kernel * stage.kernel
            w = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                           size=(stage.out_channels, in_ch, stage.kernel, stage.kernel))
            self.tokenizer_w.append(Tensor(w.astype(np.float32), requires_grad=True))
            self.tokenizer_b.append(
                Tensor(np.zeros(stage.out_channels, dtype=np.float32), requires_grad=True)
            )
            in_ch = stage.out_channels

        self.num_tokens = token_count(config)
        self.pos_embed = sinusoidal_pos_embed(self.num_tokens, d)

        hidden = int(round(config.ffn_ratio * d))
        self.wq: list[list[Tensor]] = []
        self.wk: list[list[Tensor]] = []
        self.wv: list[list[Tensor]] = []
        self.wo: list[Tensor] = []
        self.wo_b: list[Tensor] = []
        self.ln1_g: list[Tensor] = []
        self.ln1_b: list[Tensor] = []
        self.ln2_g: list[Tensor] = []
        self.ln2_b: list[Tensor] = []
        self.ffn_w1: list[Tensor] = []
        self.ffn_b1: list[Tensor] = []
        self.ffn_w2: list[Tensor] = []
        self.ffn_b2: list[Tensor] = []
        for _ in range(config.layers):
            self.wq.append([Tensor(_trunc_normal(rng, (d, dk)), requires_grad=True)
                            for _ in range(heads)])
            self.wk.append([Tensor(_trunc_normal(rng, (d, dk)), requires_grad=True)
                            for _ in range(heads)])
            self.wv.append([Tensor(_trunc_normal(rng, (d, dk)), requires_grad=True)
                            for _ in range(heads)])
            self.wo.append(Tensor(_trunc_normal(rng, (d, d)), requires_grad=True))
            self.wo_b.append(Tensor(np.zeros(d, dtype=np.float32), requires_grad=True))
            self.ln1_g.append(Tensor(np.ones(d, dtype=np.float32), requires_grad=True))
            self.ln1_b.append(Tensor(np.zeros(d, dtype=np.float32), requires_grad=True))
            self.ln2_g.append(Tensor(np.ones(d, dtype=np.float32), requires_grad=True))
            self.ln2_b.append(Tensor(np.zeros(d, dtype=np.float32), requires_grad=True))
            self.ffn_w1.append(Tensor(_trunc_normal(rng, (d, hidden)), requires_grad=True))
            self.ffn_b1.append(Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True))
            self.ffn_w2.append(Tensor(_trunc_normal(rng, (hidden, d)), requires_grad=True))
            self.ffn_b2.append(Tensor(np.zeros(d, dtype=np.float32), requires_grad=True))

        self.final_ln_g = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.final_ln_b = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)
        self.pool_w = Tensor(_trunc_normal(rng, (d, 1)), requires_grad=True)
        self.pool_b = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        self.head_w = Tensor(
            _trunc_normal(rng, (d, config.classes_first_task)), requires_grad=True
        )
        self.head_b = Tensor(
            np.zeros(config.classes_first_task, dtype=np.float32), requires_grad=True
        )

        # per-channel standardization stats, set from first-task data
        c = config.image_channels
        self.input_mean = Tensor(np.zeros(c, dtype=np.float32))
        self.input_std = Tensor(np.ones(c, dtype=np.float32))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params: list[tuple[str, Tensor]] = []
        for i, (w, b) in enumerate(zip(self.tokenizer_w, self.tokenizer_b)):
            params.append((f"tokenizer.{i}.weight", w))
            params.append((f"tokenizer.{i}.bias", b))
        for l in range(self.config.layers):
            for h in range(self.config.heads):
                params.append((f"enc.{l}.attn.q{h}", self.wq[l][h]))
                params.append((f"enc.{l}.attn.k{h}", self.wk[l][h]))
                params.append((f"enc.{l}.attn.v{h}", self.wv[l][h]))
            params.append((f"enc.{l}.attn.out.weight", self.wo[l]))
            params.append((f"enc.{l}.attn.out.bias", self.wo_b[l]))
            params.append((f"enc.{l}.ln1.gamma", self.ln1_g[l]))
            params.append((f"enc.{l}.ln1.beta", self.ln1_b[l]))
            params.append((f"enc.{l}.ln2.gamma", self.ln2_g[l]))
            params.append((f"enc.{l}.ln2.beta", self.ln2_b[l]))
            params.append((f"enc.{l}.ffn.w1", self.ffn_w1[l]))
            params.append((f"enc.{l}.ffn.b1", self.ffn_b1[l]))
            params.append((f"enc.{l}.ffn.w2", self.ffn_w2[l]))
            params.append((f"enc.{l}.ffn.b2", self.ffn_b2[l]))
        params.append(("final_ln.gamma", self.final_ln_g))
        params.append(("final_ln.beta", self.final_ln_b))
        params.append(("pool.weight", self.pool_w))
        params.append(("pool.bias", self.pool_b))
        params.append(("head.weight", self.head_w))
        params.append(("head.bias", self.head_b))
        return params

    def named_buffers(self) -> list[tuple[str, Tensor]]:
        return [
            ("input_mean", self.input_mean),
            ("input_std", self.input_std),
            ("pos_embed", self.pos_embed),
        ]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return self.named_parameters() + self.named_buffers()

    def digest(self) -> str:
        """Content hash over every tensor; bit-stable while frozen."""
        h = hashlib.sha256()
        for name, t in self.named_tensors():
            h.update(name.encode())
            h.update(str(t.shape).encode())
            h.update(t.dtype.name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def set_input_stats(self, mean, std) -> None:
        if self.frozen:
            raise UsageError("cannot change input stats on a frozen backbone")
        c = self.config.image_channels
        mean = np.asarray(mean, dtype=np.float32).reshape(c)
        std = np.asarray(std, dtype=np.float32).reshape(c)
        self.input_mean = Tensor(mean)
        self.input_std = Tensor(np.maximum(std, 1e-6))

    def freeze(self) -> None:
        for _, t in self.named_parameters():
            t.requires_grad = False
        self.frozen = True
        self._frozen_digest = self.digest()

    def forward_weights(self) -> ForwardWeights:
        layers = [
            LayerWeights(
                wq=self.wq[l], wk=self.wk[l], wv=self.wv[l],
                wo=self.wo[l], wo_bias=self.wo_b[l],
                ln1_gamma=self.ln1_g[l], ln1_beta=self.ln1_b[l],
                ln2_gamma=self.ln2_g[l], ln2_beta=self.ln2_b[l],
                ffn_w1=self.ffn_w1[l], ffn_b1=self.ffn_b1[l],
                ffn_w2=self.ffn_w2[l], ffn_b2=self.ffn_b2[l],
            )
            for l in range(self.config.layers)
        ]
        return ForwardWeights(
            layers=layers,
            final_ln_gamma=self.final_ln_g,
            final_ln_beta=self.final_ln_b,
            pool_w=self.pool_w,
            pool_b=self.pool_b,
            head_w=self.head_w,
            head_b=self.head_b,
        )


# ---------------------------------------------------------------------------
# forward computation


def _as_batch(images, dtype) -> np.ndarray:
    arr = images.data if isinstance(images, Tensor) else np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ConfigError(f"expected (channels, h, w) or batched images, got {arr.shape}")
    return arr.astype(dtype, copy=False)


def tokenize(images, backbone: BaseBackbone, train: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
    """Images to token embeddings: standardize, conv stem, flatten, add positions.

    Accepts a single (C, H, W) image or a batch; returns (batch, n, d).
    The image itself is treated as a constant; gradients flow only into
    tokenizer weights.
    """
    del train, rng  # tokenizer has no stochastic pieces
    dtype = backbone.tokenizer_w[0].dtype  # f32 training, f64 gradient checking
    arr = _as_batch(images, dtype)
    cfg = backbone.config
    if arr.shape[1:] != (cfg.image_channels, cfg.image_height, cfg.image_width):
        raise ConfigError(
            f"image dims {arr.shape[1:]} do not match configured "
            f"({cfg.image_channels}, {cfg.image_height}, {cfg.image_width})"
        )
    mean = backbone.input_mean.data.astype(dtype)[None, :, None, None]
    std = backbone.input_std.data.astype(dtype)[None, :, None, None]
    x = Tensor((arr - mean) / std)
    for stage, w, b in zip(cfg.tokenizer, backbone.tokenizer_w, backbone.tokenizer_b):
        x = ad.conv2d(x, w, b, stride=stage.stride, padding=stage.padding)
        x = ad.activation(x, "relu")
        if stage.pooling:
            x = ad.maxpool2d(x, size=3, stride=2, padding=1)
    bsz, ch, h, w_ = x.shape
    tokens = ad.transpose_last2(ad.reshape(x, (bsz, ch, h * w_)))
    return ad.add(tokens, backbone.pos_embed)


def attention_head(z: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                   attn_dropout_p: float = 0.0, train: bool = False,
                   rng: np.random.Generator | None = None,
                   probe: list | None = None) -> Tensor:
    """Scaled dot-product attention for one head over (batch, n, d) tokens."""
    dk = wq.shape[-1]
    q = ad.matmul(z, wq)
    k = ad.matmul(z, wk)
    v = ad.matmul(z, wv)
    scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / math.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    if probe is not None:
        probe.append(attn.data.copy())
    if train and attn_dropout_p > 0.0:
        attn = ad.dropout(attn, attn_dropout_p, rng)
    return ad.matmul(attn, v)


def mhsa(z: Tensor, lw: LayerWeights, attn_dropout_p: float = 0.0,
         train: bool = False, rng: np.random.Generator | None = None,
         probe: list | None = None) -> Tensor:
    heads = [
        attention_head(z, lw.wq[h], lw.wk[h], lw.wv[h],
                       attn_dropout_p=attn_dropout_p, train=train, rng=rng,
                       probe=probe)
        for h in range(len(lw.wq))
    ]
    cat = heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)
    return ad.add(ad.matmul(cat, lw.wo), lw.wo_bias)


def _ffn(z: Tensor, lw: LayerWeights) -> Tensor:
    h = ad.activation(ad.add(ad.matmul(z, lw.ffn_w1), lw.ffn_b1), "gelu")
    return ad.add(ad.matmul(h, lw.ffn_w2), lw.ffn_b2)


def _drop_path(branch: Tensor, p: float, train: bool,
               rng: np.random.Generator | None) -> Tensor:
    if not train or p <= 0.0:
        return branch
    bsz = branch.shape[0]
    keep = (rng.random(bsz) >= p).astype(branch.data.dtype) / (1.0 - p)
    mask = Tensor(keep[:, None, None])
    return ad.mul(branch, mask)


def encoder_layer(z: Tensor, lw: LayerWeights, config: ModelConfig,
                  train: bool = False, rng: np.random.Generator | None = None,
                  probe: list | None = None) -> Tensor:
    """Pre-norm block: attention and FFN branches with stochastic depth."""
    eps = config.layer_norm_eps
    a = mhsa(ad.layer_norm(z, lw.ln1_gamma, lw.ln1_beta, eps),
             lw, attn_dropout_p=config.attn_dropout_p, train=train, rng=rng,
             probe=probe)
    u = ad.add(z, _drop_path(a, config.stochastic_depth_p, train, rng))
    f = _ffn(ad.layer_norm(u, lw.ln2_gamma, lw.ln2_beta, eps), lw)
    return ad.add(u, _drop_path(f, config.stochastic_depth_p, train, rng))


def sequence_pool(z: Tensor, pool_w: Tensor, pool_b: Tensor) -> Tensor:
    """Attention-weighted mean of token embeddings: (batch, n, d) -> (batch, d)."""
    squeeze = z.ndim == 2
    if squeeze:
        z = ad.reshape(z, (1,) + z.shape)
    scores = ad.add(ad.matmul(z, pool_w), pool_b)  # (batch, n, 1)
    w = ad.softmax(scores, axis=1)
    pooled = ad.matmul(ad.transpose_last2(w), z)  # (batch, 1, d)
    out = ad.reshape(pooled, (pooled.shape[0], pooled.shape[2]))
    if squeeze:
        out = ad.reshape(out, (out.shape[1],))
    return out


def forward_pooled(images, backbone: BaseBackbone, weights: ForwardWeights,
                   train: bool = False, rng: np.random.Generator | None = None,
                   probe: list | None = None) -> Tensor:
    """Pooled token representation after the final layernorm."""
    z = tokenize(images, backbone, train=train, rng=rng)
    for lw in weights.layers:
        z = encoder_layer(z, lw, backbone.config, train=train, rng=rng, probe=probe)
    z = ad.layer_norm(z, weights.final_ln_gamma, weights.final_ln_beta,
                      backbone.config.layer_norm_eps)
    return sequence_pool(z, weights.pool_w, weights.pool_b)


def forward_logits(images, backbone: BaseBackbone, weights: ForwardWeights,
                   train: bool = False, rng: np.random.Generator | None = None,
                   probe: list | None = None) -> Tensor:
    """Class logits for a batch of [0, 1] images. Eval mode is deterministic."""
    pooled = forward_pooled(images, backbone, weights, train=train, rng=rng,
                            probe=probe)
    return ad.add(ad.matmul(pooled, weights.head_w), weights.head_b)
