"""Per-task adaptation of a frozen backbone.

Each task owns small square kernels convolved over the frozen per-head
query/key/value matrices, a scalar sigmoid skip-gate per matrix, and
replacement layernorm, pooling, and head parameters. The attention
output projection, FFN, and tokenizer stay shared and untouched; the
adapted weights are always derived from the first-task backbone, never
chained through intermediate tasks.

A freshly initialized adapter reproduces the base model exactly: the
kernel starts as half a delta kernel and the gate at sigmoid(0) = 1/2,
so conv(W) + gate * W == W/2 + W/2 == W.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .backbone import (
    BaseBackbone,
    ForwardWeights,
    LayerWeights,
    ModelConfig,
    _trunc_normal,
    forward_logits,
    forward_pooled,
)
from .errors import ConfigError, UsageError

GATE_MODES = ("learnable", "always_on", "off")
PROJECTION_KINDS = ("q", "k", "v")


@dataclass
class ParamLedger:
    """Exact trainable-scalar accounting for one task adapter."""

    kernels: int
    gates: int
    layernorms: int
    pool: int
    head: int

    @property
    def total(self) -> int:
        return self.kernels + self.gates + self.layernorms + self.pool + self.head


def count_task_params(config: ModelConfig, kernel_size: int, classes_t: int) -> ParamLedger:
    """Closed-form count of per-task trainable scalars."""
    layers, heads, d = config.layers, config.heads, config.embed_dim
    return ParamLedger(
        kernels=3 * layers * heads * kernel_size * kernel_size,
        gates=3 * layers * heads,
        layernorms=2 * d * (2 * layers + 1),
        pool=d + 1,
        head=d * classes_t + classes_t,
    )


class TaskAdapter:
    """Trainable per-task parameter set over a fixed backbone geometry."""

    def __init__(self, config: ModelConfig, task_id: int, class_list,
                 kernel_size: int = 15, gate_mode: str = "learnable"):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd and >= 1, got {kernel_size}")
        if gate_mode not in GATE_MODES:
            raise ConfigError(f"gate_mode must be one of {GATE_MODES}, got '{gate_mode}'")
        self.config = config
        self.task_id = int(task_id)
        self.class_list = [int(c) for c in class_list]
        self.kernel_size = int(kernel_size)
        self.gate_mode = gate_mode
        d, k = config.embed_dim, kernel_size
        classes = len(self.class_list)

        def zeros(shape):
            return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

        self.kernels = [
            [{kind: zeros((k, k)) for kind in PROJECTION_KINDS}
             for _ in range(config.heads)]
            for _ in range(config.layers)
        ]
        self.gates = [
            [{kind: zeros(()) for kind in PROJECTION_KINDS}
             for _ in range(config.heads)]
            for _ in range(config.layers)
        ]
        self.ln1_g = [zeros(d) for _ in range(config.layers)]
        self.ln1_b = [zeros(d) for _ in range(config.layers)]
        self.ln2_g = [zeros(d) for _ in range(config.layers)]
        self.ln2_b = [zeros(d) for _ in range(config.layers)]
        self.final_ln_g = zeros(d)
        self.final_ln_b = zeros(d)
        self.pool_w = zeros((d, 1))
        self.pool_b = zeros(1)
        self.head_w = zeros((d, classes))
        self.head_b = zeros(classes)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params: list[tuple[str, Tensor]] = []
        for l in range(self.config.layers):
            for h in range(self.config.heads):
                for kind in PROJECTION_KINDS:
                    params.append((f"enc.{l}.h{h}.{kind}.kernel", self.kernels[l][h][kind]))
        for l in range(self.config.layers):
            for h in range(self.config.heads):
                for kind in PROJECTION_KINDS:
                    params.append((f"enc.{l}.h{h}.{kind}.gate", self.gates[l][h][kind]))
        for l in range(self.config.layers):
            params.append((f"enc.{l}.ln1.gamma", self.ln1_g[l]))
            params.append((f"enc.{l}.ln1.beta", self.ln1_b[l]))
            params.append((f"enc.{l}.ln2.gamma", self.ln2_g[l]))
            params.append((f"enc.{l}.ln2.beta", self.ln2_b[l]))
        params.append(("final_ln.gamma", self.final_ln_g))
        params.append(("final_ln.beta", self.final_ln_b))
        params.append(("pool.weight", self.pool_w))
        params.append(("pool.bias", self.pool_b))
        params.append(("head.weight", self.head_w))
        params.append(("head.bias", self.head_b))
        return params

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())


def init_adapter(backbone: BaseBackbone, classes_t, kernel_size: int = 15,
                 gate_mode: str = "learnable", seed: int = 0,
                 task_id: int = 2) -> TaskAdapter:
    """Identity-start adapter for one new task.

    Kernels start as half a delta kernel and gates at zero, so the
    adapted weights equal the base weights exactly. Layernorm and pool
    parameters are copied from the base; only the head is re-drawn.
    """
    if not backbone.frozen:
        raise UsageError("backbone must be frozen before adapters are created")
    adapter = TaskAdapter(backbone.config, task_id, classes_t,
                          kernel_size=kernel_size, gate_mode=gate_mode)
    k = adapter.kernel_size
    center = np.zeros((k, k), dtype=np.float32)
    center[k // 2, k // 2] = 0.5
    for l in range(backbone.config.layers):
        for h in range(backbone.config.heads):
            for kind in PROJECTION_KINDS:
                adapter.kernels[l][h][kind].data = center.copy()
        adapter.ln1_g[l].data = backbone.ln1_g[l].data.copy()
        adapter.ln1_b[l].data = backbone.ln1_b[l].data.copy()
        adapter.ln2_g[l].data = backbone.ln2_g[l].data.copy()
        adapter.ln2_b[l].data = backbone.ln2_b[l].data.copy()
    adapter.final_ln_g.data = backbone.final_ln_g.data.copy()
    adapter.final_ln_b.data = backbone.final_ln_b.data.copy()
    adapter.pool_w.data = backbone.pool_w.data.copy()
    adapter.pool_b.data = backbone.pool_b.data.copy()
    rng = np.random.default_rng([seed, adapter.task_id])
    adapter.head_w.data = _trunc_normal(rng, adapter.head_w.shape)
    return adapter


def adapt_weight(w: Tensor, kernel: Tensor, alpha: Tensor,
                 gate_mode: str = "learnable") -> Tensor:
    """Convolve a frozen projection matrix and mix the original back in.

    Returns ``conv(w, kernel) + g * w`` with gate ``g`` either
    ``sigmoid(alpha)`` (learnable), exactly 1 (always_on), or exactly 0
    (off). Differentiable in ``kernel`` and ``alpha``; ``w`` never
    receives gradient.
    """
    base = Tensor(w.data if isinstance(w, Tensor) else w)  # detached view
    conv = ad.conv2d_same(base, kernel)
    if gate_mode == "learnable":
        gate = ad.activation(alpha, "sigmoid")
        return ad.add(conv, ad.mul(base, gate))
    if gate_mode == "always_on":
        return ad.add(conv, base)
    if gate_mode == "off":
        return conv
    raise ConfigError(f"gate_mode must be one of {GATE_MODES}, got '{gate_mode}'")


def _check_compatible(backbone: BaseBackbone, adapter: TaskAdapter) -> None:
    b, a = backbone.config, adapter.config
    same = (
        b.embed_dim == a.embed_dim
        and b.layers == a.layers
        and b.heads == a.heads
        and b.head_dim == a.head_dim
    )
    if not same:
        raise ConfigError(
            "adapter geometry (d={}, L={}, H={}, dk={}) does not match backbone "
            "(d={}, L={}, H={}, dk={})".format(
                a.embed_dim, a.layers, a.heads, a.head_dim,
                b.embed_dim, b.layers, b.heads, b.head_dim,
            )
        )


def adapted_forward_weights(backbone: BaseBackbone, adapter: TaskAdapter) -> ForwardWeights:
    """Weight view with adapted projections, built inside the active tape.

    Used during adapter training so gradients flow into kernels and
    gates; shared tensors (attention output, FFN) come straight from the
    frozen backbone.
    """
    _check_compatible(backbone, adapter)
    layers = []
    for l in range(backbone.config.layers):
        wq, wk, wv = [], [], []
        for h in range(backbone.config.heads):
            kern = adapter.kernels[l][h]
            gate = adapter.gates[l][h]
            wq.append(adapt_weight(backbone.wq[l][h], kern["q"], gate["q"], adapter.gate_mode))
            wk.append(adapt_weight(backbone.wk[l][h], kern["k"], gate["k"], adapter.gate_mode))
            wv.append(adapt_weight(backbone.wv[l][h], kern["v"], gate["v"], adapter.gate_mode))
        layers.append(LayerWeights(
            wq=wq, wk=wk, wv=wv,
            wo=backbone.wo[l], wo_bias=backbone.wo_b[l],
            ln1_gamma=adapter.ln1_g[l], ln1_beta=adapter.ln1_b[l],
            ln2_gamma=adapter.ln2_g[l], ln2_beta=adapter.ln2_b[l],
            ffn_w1=backbone.ffn_w1[l], ffn_b1=backbone.ffn_b1[l],
            ffn_w2=backbone.ffn_w2[l], ffn_b2=backbone.ffn_b2[l],
        ))
    return ForwardWeights(
        layers=layers,
        final_ln_gamma=adapter.final_ln_g,
        final_ln_beta=adapter.final_ln_b,
        pool_w=adapter.pool_w,
        pool_b=adapter.pool_b,
        head_w=adapter.head_w,
        head_b=adapter.head_b,
    )


@dataclass
class TaskModel:
    """Immutable evaluation view of one task: frozen trunk + effective weights."""

    task_id: int
    class_list: list[int]
    backbone: BaseBackbone
    weights: ForwardWeights

    def __post_init__(self):
        if self.weights.head_w.shape[1] != len(self.class_list):
            raise ConfigError(
                f"head emits {self.weights.head_w.shape[1]} classes but task "
                f"{self.task_id} lists {len(self.class_list)}"
            )

    def predict_logits(self, images) -> np.ndarray:
        """Eval-mode logits for a batch (or single image) in [0, 1]."""
        with no_grad():
            return forward_logits(images, self.backbone, self.weights).data

    def pooled_features(self, images) -> np.ndarray:
        with no_grad():
            return forward_pooled(images, self.backbone, self.weights).data


def materialize(backbone: BaseBackbone, adapter: TaskAdapter) -> TaskModel:
    """Bake the adapter into constant effective weights for evaluation."""
    _check_compatible(backbone, adapter)
    with no_grad():
        view = adapted_forward_weights(backbone, adapter)
    frozen_view = ForwardWeights(
        layers=[
            LayerWeights(
                wq=[Tensor(t.data.copy()) for t in lw.wq],
                wk=[Tensor(t.data.copy()) for t in lw.wk],
                wv=[Tensor(t.data.copy()) for t in lw.wv],
                wo=lw.wo, wo_bias=lw.wo_bias,
                ln1_gamma=Tensor(lw.ln1_gamma.data.copy()),
                ln1_beta=Tensor(lw.ln1_beta.data.copy()),
                ln2_gamma=Tensor(lw.ln2_gamma.data.copy()),
                ln2_beta=Tensor(lw.ln2_beta.data.copy()),
                ffn_w1=lw.ffn_w1, ffn_b1=lw.ffn_b1,
                ffn_w2=lw.ffn_w2, ffn_b2=lw.ffn_b2,
            )
            for lw in view.layers
        ],
        final_ln_gamma=Tensor(view.final_ln_gamma.data.copy()),
        final_ln_beta=Tensor(view.final_ln_beta.data.copy()),
        pool_w=Tensor(view.pool_w.data.copy()),
        pool_b=Tensor(view.pool_b.data.copy()),
        head_w=Tensor(view.head_w.data.copy()),
        head_b=Tensor(view.head_b.data.copy()),
    )
    return TaskModel(adapter.task_id, list(adapter.class_list), backbone, frozen_view)


def base_task_model(backbone: BaseBackbone, task_id: int = 1,
                    class_list=None) -> TaskModel:
    """The first task's model is the frozen backbone itself."""
    classes = list(backbone.class_list if class_list is None else class_list)
    return TaskModel(task_id, classes, backbone, backbone.forward_weights())
