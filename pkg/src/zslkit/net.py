"""Residual graph-convolutional network with hand-written backward pass.

A model is: first GCN layer -> residual blocks -> final GCN layer (no
activation) -> row-wise L2 normalization. Every GCN layer computes
act(adj @ dropout(H) @ W); identity blocks add their input to the branch
output, projection blocks add adj @ X_in @ W_proj instead.

Weight order (frozen, used by checkpoints): first layer, then for each block
its branch layers in order followed by its projection weight if any, then
the final layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .tensor import (
    Rng,
    SparseAdjacency,
    as_matrix,
    dropout,
    leaky_relu,
    leaky_relu_grad,
    matmul,
    spmm,
)

IDENTITY = "identity"
PROJECTION = "projection"


@dataclass(frozen=True)
class BlockSpec:
    """One residual block: 1-3 stacked GCN layers plus a shortcut."""

    layer_dims: tuple
    shortcut: str

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if not 1 <= len(self.layer_dims) <= 3:
            raise ConfigError(f"a block stacks 1-3 layers, got {len(self.layer_dims)}")
        if self.shortcut not in (IDENTITY, PROJECTION):
            raise ConfigError(f"unknown shortcut kind {self.shortcut!r}")


@dataclass(frozen=True)
class ArchSpec:
    """Declarative network shape; weight shapes derive from it."""

    input_dim: int
    first_layer_dim: int
    blocks: tuple
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        width = self.first_layer_dim
        for pos, block in enumerate(self.blocks):
            out = block.layer_dims[-1]
            if block.shortcut == IDENTITY and out != width:
                raise ConfigError(
                    f"identity block {pos} maps {width} -> {out}; dims must match"
                )
            width = out

    def weight_shapes(self) -> list:
        """(rows, cols) per weight in the frozen declaration order."""
        shapes = [(self.input_dim, self.first_layer_dim)]
        width = self.first_layer_dim
        for block in self.blocks:
            d = width
            for out in block.layer_dims:
                shapes.append((d, out))
                d = out
            if block.shortcut == PROJECTION:
                shapes.append((width, block.layer_dims[-1]))
            width = block.layer_dims[-1]
        shapes.append((width, self.output_dim))
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "first_layer_dim": self.first_layer_dim,
            "blocks": [
                {"layer_dims": list(b.layer_dims), "shortcut": b.shortcut}
                for b in self.blocks
            ],
            "output_dim": self.output_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            first_layer_dim=int(d["first_layer_dim"]),
            blocks=tuple(
                BlockSpec(tuple(b["layer_dims"]), b["shortcut"]) for b in d["blocks"]
            ),
            output_dim=int(d["output_dim"]),
        )


# Architecture table, models 1-5. Entries are (first_layer_dim, blocks);
# block dims are branch-layer output widths.
MODEL_TABLE = {
    1: (1024, ((IDENTITY, (1024,)), (PROJECTION, (2048,)))),
    2: (2048, ((PROJECTION, (2048, 1024)), (IDENTITY, (1024, 1024)))),
    3: (2048, ((IDENTITY, (2048, 2048)), (PROJECTION, (2048, 1024)))),
    4: (1024, ((IDENTITY, (1024, 1024, 1024)),)),
    5: (1024, ((IDENTITY, (1024, 2048, 1024)),)),
}

DEFAULT_MODEL_ID = 4


@dataclass
class Hyper:
    lr: float = 0.001
    weight_decay: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    dropout_rate: float = 0.5
    slope: float = 0.2

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "weight_decay": self.weight_decay,
            "beta1": self.beta1, "beta2": self.beta2, "eps_adam": self.eps_adam,
            "dropout_rate": self.dropout_rate, "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyper":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class ModelState:
    """Weights plus Adam moment buffers; owned by one training loop."""

    weights: list
    adam_m: list
    adam_v: list
    step: int
    hyper: Hyper


def glorot_uniform(shape, rng: Rng) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, shape)


def arch_for_model(model_id: int, input_dim: int, output_dim: int,
                   width_divisor: int = 1) -> ArchSpec:
    """ArchSpec for one of the registered models 1-5.

    width_divisor shrinks every table width (used by the gradient checker,
    where full widths would be wasteful).
    """
    if model_id not in MODEL_TABLE:
        raise ConfigError(f"unknown model id {model_id}, expected one of {sorted(MODEL_TABLE)}")
    if width_divisor < 1:
        raise ConfigError(f"width_divisor must be >= 1, got {width_divisor}")

    def shrink(d):
        reduced = d // width_divisor
        if reduced < 1:
            raise ConfigError(f"width_divisor {width_divisor} collapses width {d}")
        return reduced

    first, blocks = MODEL_TABLE[model_id]
    return ArchSpec(
        input_dim=input_dim,
        first_layer_dim=shrink(first),
        blocks=tuple(
            BlockSpec(tuple(shrink(d) for d in dims), kind) for kind, dims in blocks
        ),
        output_dim=output_dim,
    )


def init_state(arch: ArchSpec, rng: Rng, hyper: Hyper | None = None) -> ModelState:
    """Seeded Glorot-uniform weights, zero moments."""
    weights = [glorot_uniform(s, rng) for s in arch.weight_shapes()]
    return ModelState(
        weights=weights,
        adam_m=[np.zeros_like(w) for w in weights],
        adam_v=[np.zeros_like(w) for w in weights],
        step=0,
        hyper=hyper or Hyper(),
    )


def build_model(model_id: int, input_dim: int, output_dim: int, rng: Rng,
                width_divisor: int = 1, hyper: Hyper | None = None):
    arch = arch_for_model(model_id, input_dim, output_dim, width_divisor)
    return arch, init_state(arch, rng, hyper)


@dataclass
class LayerCache:
    mask: np.ndarray          # scaled dropout keep-mask (all ones when off)
    aggregated: np.ndarray    # adj @ dropout(H)
    weight: np.ndarray
    pre_activation: np.ndarray | None  # None when the layer has no activation
    slope: float
    adj_t: SparseAdjacency


def gcn_layer_forward(adj: SparseAdjacency, h: np.ndarray, w: np.ndarray, *,
                      activate: bool, dropout_rate: float, rng: Rng | None,
                      training: bool, slope: float = 0.2,
                      adj_t: SparseAdjacency | None = None):
    """One propagation layer: act(adj @ dropout(H) @ W)."""
    h = as_matrix(h, "layer input")
    w = as_matrix(w, "layer weight")
    if h.shape[1] != w.shape[0]:
        raise ShapeError(
            f"gcn layer: input width {h.shape[1]} does not match weight rows {w.shape[0]}"
        )
    h_drop, mask = dropout(h, dropout_rate, rng, training)
    aggregated = spmm(adj, h_drop)
    z = matmul(aggregated, w)
    pre_activation = None
    if activate:
        pre_activation = z
        z = leaky_relu(z, slope)
    cache = LayerCache(
        mask=mask, aggregated=aggregated, weight=w,
        pre_activation=pre_activation, slope=slope,
        adj_t=adj_t if adj_t is not None else adj.transpose(),
    )
    return z, cache


def gcn_layer_backward(grad_z: np.ndarray, cache: LayerCache):
    """Adjoint of gcn_layer_forward; returns (grad_input, grad_weight)."""
    grad_z = as_matrix(grad_z, "output gradient")
    if grad_z.shape != (cache.aggregated.shape[0], cache.weight.shape[1]):
        raise ShapeError(
            f"gradient shape {grad_z.shape} does not match layer output "
            f"({cache.aggregated.shape[0]}, {cache.weight.shape[1]})"
        )
    if cache.pre_activation is not None:
        grad_z = grad_z * leaky_relu_grad(cache.pre_activation, cache.slope)
    grad_w = matmul(cache.aggregated.T, grad_z)
    grad_aggregated = matmul(grad_z, cache.weight.T)
    grad_h = spmm(cache.adj_t, grad_aggregated) * cache.mask
    return grad_h, grad_w


@dataclass
class BlockCache:
    shortcut: str
    layer_caches: list
    proj_aggregated: np.ndarray | None  # adj @ X_in, projection blocks only
    proj_weight: np.ndarray | None
    adj_t: SparseAdjacency


def residual_block_forward(adj: SparseAdjacency, x_in: np.ndarray, block_weights: list,
                           shortcut_kind: str, *, proj_weight: np.ndarray | None = None,
                           dropout_rate: float = 0.0, rng: Rng | None = None,
                           training: bool = False, slope: float = 0.2,
                           adj_t: SparseAdjacency | None = None):
    """Branch of stacked activated GCN layers plus the shortcut addition."""
    if adj_t is None:
        adj_t = adj.transpose()
    h = x_in
    caches = []
    for w in block_weights:
        h, cache = gcn_layer_forward(
            adj, h, w, activate=True, dropout_rate=dropout_rate,
            rng=rng, training=training, slope=slope, adj_t=adj_t,
        )
        caches.append(cache)
    if shortcut_kind == IDENTITY:
        if h.shape != x_in.shape:
            raise ShapeError(
                f"identity shortcut: branch output {h.shape} vs input {x_in.shape}"
            )
        x_out = h + x_in
        proj_aggregated = None
    elif shortcut_kind == PROJECTION:
        if proj_weight is None:
            raise ConfigError("projection block without a projection weight")
        proj_aggregated = spmm(adj, x_in)
        shortcut = matmul(proj_aggregated, proj_weight)
        if h.shape != shortcut.shape:
            raise ShapeError(
                f"projection shortcut: branch output {h.shape} vs shortcut {shortcut.shape}"
            )
        x_out = h + shortcut
    else:
        raise ConfigError(f"unknown shortcut kind {shortcut_kind!r}")
    cache = BlockCache(
        shortcut=shortcut_kind, layer_caches=caches,
        proj_aggregated=proj_aggregated, proj_weight=proj_weight, adj_t=adj_t,
    )
    return x_out, cache


def residual_block_backward(grad_out: np.ndarray, cache: BlockCache):
    """Returns (grad_x_in, branch weight grads in layer order, proj grad or None)."""
    g = grad_out
    grads_w = []
    for layer_cache in reversed(cache.layer_caches):
        g, gw = gcn_layer_backward(g, layer_cache)
        grads_w.append(gw)
    grads_w.reverse()
    if cache.shortcut == IDENTITY:
        return g + grad_out, grads_w, None
    grad_proj = matmul(cache.proj_aggregated.T, grad_out)
    grad_x_in = g + spmm(cache.adj_t, matmul(grad_out, cache.proj_weight.T))
    return grad_x_in, grads_w, grad_proj


@dataclass
class ForwardTape:
    first: LayerCache
    blocks: list
    final: LayerCache
    pre_norm: np.ndarray
    norms: np.ndarray
    output: np.ndarray
    norm_eps: float


def _split_weights(arch: ArchSpec, weights: list):
    """Slice the flat weight list into (first, per-block, final) views."""
    expected = len(arch.weight_shapes())
    if len(weights) != expected:
        raise ShapeError(f"model has {expected} weights, got {len(weights)}")
    pos = 0
    first = weights[pos]
    pos += 1
    blocks = []
    for block in arch.blocks:
        branch = weights[pos:pos + len(block.layer_dims)]
        pos += len(block.layer_dims)
        proj = None
        if block.shortcut == PROJECTION:
            proj = weights[pos]
            pos += 1
        blocks.append((branch, proj))
    return first, blocks, weights[pos]


def forward_model(arch: ArchSpec, state: ModelState, adj: SparseAdjacency,
                  p: np.ndarray, *, training: bool, rng: Rng | None = None,
                  final_activation: bool = False, norm_eps: float = 1e-12):
    """Full network forward; returns (row-normalized output, tape)."""
    p = as_matrix(p, "embedding matrix")
    if p.shape[0] != adj.n:
        raise ShapeError(
            f"embedding matrix has {p.shape[0]} rows, adjacency is {adj.n}x{adj.n}"
        )
    if p.shape[1] != arch.input_dim:
        raise ShapeError(
            f"embedding dim {p.shape[1]} does not match arch input_dim {arch.input_dim}"
        )
    hyper = state.hyper
    rate = hyper.dropout_rate if training else 0.0
    adj_t = adj.transpose()
    w_first, block_weights, w_final = _split_weights(arch, state.weights)

    h, first_cache = gcn_layer_forward(
        adj, p, w_first, activate=True, dropout_rate=rate, rng=rng,
        training=training, slope=hyper.slope, adj_t=adj_t,
    )
    block_caches = []
    for block, (branch, proj) in zip(arch.blocks, block_weights):
        h, cache = residual_block_forward(
            adj, h, branch, block.shortcut, proj_weight=proj,
            dropout_rate=rate, rng=rng, training=training,
            slope=hyper.slope, adj_t=adj_t,
        )
        block_caches.append(cache)
    h, final_cache = gcn_layer_forward(
        adj, h, w_final, activate=final_activation, dropout_rate=rate,
        rng=rng, training=training, slope=hyper.slope, adj_t=adj_t,
    )
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    out = h / np.maximum(norms, norm_eps)[:, None]
    tape = ForwardTape(
        first=first_cache, blocks=block_caches, final=final_cache,
        pre_norm=h, norms=norms, output=out, norm_eps=norm_eps,
    )
    return out, tape


def backward_model(arch: ArchSpec, grad_out: np.ndarray, tape: ForwardTape) -> list:
    """Gradients for every weight, aligned with the frozen weight order."""
    grad_out = as_matrix(grad_out, "output gradient")
    if grad_out.shape != tape.output.shape:
        raise ShapeError(
            f"gradient shape {grad_out.shape} does not match output {tape.output.shape}"
        )
    # adjoint of x / max(|x|, eps): rows at or above eps follow the quotient
    # rule, tiny rows are a constant 1/eps scaling
    scale = np.maximum(tape.norms, tape.norm_eps)[:, None]
    live = (tape.norms >= tape.norm_eps)[:, None]
    y = tape.output
    inner = np.einsum("ij,ij->i", y, grad_out)[:, None]
    grad_h = np.where(live, (grad_out - y * inner) / scale, grad_out / scale)

    grad_h, grad_final = gcn_layer_backward(grad_h, tape.final)
    block_grads = []
    for cache in reversed(tape.blocks):
        grad_h, grads_w, grad_proj = residual_block_backward(grad_h, cache)
        block_grads.append((grads_w, grad_proj))
    block_grads.reverse()
    _, grad_first = gcn_layer_backward(grad_h, tape.first)

    grads = [grad_first]
    for grads_w, grad_proj in block_grads:
        grads.extend(grads_w)
        if grad_proj is not None:
            grads.append(grad_proj)
    grads.append(grad_final)
    return grads


def mse_loss_masked(f_pred: np.ndarray, f_gt: np.ndarray, seen_mask: np.ndarray):
    """Mean-square error over seen rows only; returns (loss, grad wrt f_pred)."""
    f_pred = as_matrix(f_pred, "predicted classifiers")
    f_gt = as_matrix(f_gt, "ground-truth classifiers")
    if f_pred.shape != f_gt.shape:
        raise ShapeError(f"prediction {f_pred.shape} vs ground truth {f_gt.shape}")
    seen_mask = np.asarray(seen_mask, dtype=bool)
    if seen_mask.shape != (f_pred.shape[0],):
        raise ShapeError(
            f"mask has shape {seen_mask.shape}, expected ({f_pred.shape[0]},)"
        )
    m = int(seen_mask.sum())
    if m == 0:
        raise ConfigError("masked MSE needs at least one seen row")
    d = f_pred.shape[1]
    diff = (f_pred - f_gt) * seen_mask[:, None]
    loss = float(np.einsum("ij,ij->", diff, diff) / (m * d))
    grad = 2.0 * diff / (m * d)
    return loss, grad


def adam_step(state: ModelState, grads: list) -> ModelState:
    """Classic Adam with L2 weight decay folded into the gradient.

    Mutates `state` in place (single-owner contract) and returns it.
    """
    if len(grads) != len(state.weights):
        raise ShapeError(f"{len(state.weights)} weights but {len(grads)} gradients")
    h = state.hyper
    t = state.step + 1
    bc1 = 1.0 - h.beta1 ** t
    bc2 = 1.0 - h.beta2 ** t
    for i, (w, g) in enumerate(zip(state.weights, grads)):
        if g.shape != w.shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, weight {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in weight {i}")
        m = state.adam_m[i]
        v = state.adam_v[i]
        # one scratch array; everything else updates in place
        g_eff = g + h.weight_decay * w
        m *= h.beta1
        m += (1.0 - h.beta1) * g_eff
        np.multiply(g_eff, g_eff, out=g_eff)
        v *= h.beta2
        v += (1.0 - h.beta2) * g_eff
        np.divide(v, bc2, out=g_eff)
        np.sqrt(g_eff, out=g_eff)
        g_eff += h.eps_adam
        np.divide(m, g_eff, out=g_eff)
        g_eff *= h.lr / bc1
        w -= g_eff
    state.step = t
    return state


def clone_state(state: ModelState) -> ModelState:
    """Deep copy, e.g. for snapshotting before further training."""
    return ModelState(
        weights=[w.copy() for w in state.weights],
        adam_m=[m.copy() for m in state.adam_m],
        adam_v=[v.copy() for v in state.adam_v],
        step=state.step,
        hyper=replace(state.hyper),
    )
