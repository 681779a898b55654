"""Feed-forward network split into a mapping function and a softmax layer.

The hidden stack (the mapping function) produces the learned
representation; a bias-free linear layer on top produces logits. Forward
and backward passes are written out by hand so the gradient of every
composite objective stays inspectable and testable against finite
differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core_math import SeededRng, softmax_rows
from .errors import DataFormatError, ParameterError, ShapeError

ACTIVATION_TAGS = {"identity": 0, "relu": 1, "tanh": 2}
_TAG_NAMES = {v: k for k, v in ACTIVATION_TAGS.items()}

CHECKPOINT_MAGIC = b"SNCK"
CHECKPOINT_VERSION = 1


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    if name == "identity":
        return pre
    raise ParameterError(f"unknown activation '{name}'")


def _activate_grad(name: str, pre: np.ndarray, act: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - act * act
    if name == "identity":
        return np.ones_like(pre)
    raise ParameterError(f"unknown activation '{name}'")


@dataclass
class HiddenLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str


@dataclass
class NetworkParams:
    """All parameters: hidden layers (mapping function) plus the bias-free
    output weight matrix of shape (K, T)."""

    hidden: list[HiddenLayer]
    output_weights: np.ndarray
    input_dim: int

    def __post_init__(self):
        dim = self.input_dim
        for i, layer in enumerate(self.hidden):
            if layer.weights.shape[1] != dim:
                raise ShapeError(f"hidden layer {i} expects input {layer.weights.shape[1]}, chain gives {dim}")
            if layer.bias.shape != (layer.weights.shape[0],):
                raise ShapeError(f"hidden layer {i} bias shape mismatch")
            dim = layer.weights.shape[0]
        if self.output_weights.ndim != 2 or self.output_weights.shape[1] != dim:
            raise ShapeError(
                f"output layer expects width {dim}, got {self.output_weights.shape}"
            )
        for block in self.blocks():
            if not np.isfinite(block).all():
                raise ShapeError("non-finite network parameter")

    @property
    def n_classes(self) -> int:
        return self.output_weights.shape[0]

    @property
    def repr_dim(self) -> int:
        return self.output_weights.shape[1]

    def blocks(self) -> list[np.ndarray]:
        """Parameter buffers in a fixed order (views, not copies)."""
        out = []
        for layer in self.hidden:
            out.append(layer.weights)
            out.append(layer.bias)
        out.append(self.output_weights)
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [HiddenLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.hidden],
            self.output_weights.copy(),
            self.input_dim,
        )


@dataclass
class GradientSet:
    """Gradient buffers mirroring NetworkParams block for block."""

    hidden: list[tuple[np.ndarray, np.ndarray]]
    output: np.ndarray

    def blocks(self) -> list[np.ndarray]:
        out = []
        for gw, gb in self.hidden:
            out.append(gw)
            out.append(gb)
        out.append(self.output)
        return out

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "GradientSet":
        return cls(
            [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.hidden],
            np.zeros_like(params.output_weights),
        )

    def add_scaled(self, other: "GradientSet", scale: float = 1.0) -> None:
        for mine, theirs in zip(self.blocks(), other.blocks()):
            mine += scale * theirs


@dataclass
class ForwardTrace:
    """Everything the forward pass computed, kept for the backward pass."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    representation: np.ndarray  # (N, T)
    logits: np.ndarray  # (N, K)
    outputs: np.ndarray  # (N, K), rows sum to 1


def init_params(
    input_dim: int,
    hidden_dims: list[int],
    n_classes: int,
    rng: SeededRng,
    activation: str = "relu",
    init_stdev: float | None = None,
) -> NetworkParams:
    """He-style gaussian init: stdev sqrt(2 / fan_in) unless overridden."""
    if n_classes < 1:
        raise ParameterError("need at least one output class")
    hidden = []
    dim = input_dim
    for width in hidden_dims:
        stdev = init_stdev if init_stdev is not None else np.sqrt(2.0 / dim)
        w = rng.normal(width * dim, 0.0, stdev).reshape(width, dim)
        hidden.append(HiddenLayer(w, np.zeros(width), activation))
        dim = width
    stdev = init_stdev if init_stdev is not None else np.sqrt(2.0 / dim)
    out = rng.normal(n_classes * dim, 0.0, stdev).reshape(n_classes, dim)
    return NetworkParams(hidden, out, input_dim)


def _as_batch(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"inputs must be a vector or (N, D) matrix, got ndim={a.ndim}")
    return a


def phi_forward(params: NetworkParams, x) -> tuple[list, list, np.ndarray]:
    """Run only the mapping function; returns (pre_activations, activations,
    representation)."""
    a = _as_batch(x)
    if a.shape[1] != params.input_dim:
        raise ShapeError(f"input dim {a.shape[1]} != network input {params.input_dim}")
    pres, acts = [], []
    for layer in params.hidden:
        pre = a @ layer.weights.T + layer.bias
        a = _activate(layer.activation, pre)
        pres.append(pre)
        acts.append(a)
    return pres, acts, a


def forward(params: NetworkParams, x) -> ForwardTrace:
    """Full forward pass; accepts one feature vector or an (N, D) batch."""
    inputs = _as_batch(x)
    pres, acts, rep = phi_forward(params, inputs)
    logits = rep @ params.output_weights.T
    outputs = softmax_rows(logits)
    return ForwardTrace(inputs, pres, acts, rep, logits, outputs)


def cross_entropy(outputs, one_hot) -> float:
    """Mean cross-entropy over the batch; log arguments clamped at 1e-300 so
    a confidently wrong prediction yields a large finite loss."""
    o = np.asarray(outputs, dtype=np.float64)
    y = np.asarray(one_hot, dtype=np.float64)
    if o.ndim == 1:
        o = o[None, :]
    if y.ndim == 1:
        y = y[None, :]
    if o.shape != y.shape:
        raise ShapeError(f"outputs {o.shape} vs labels {y.shape}")
    clamped = np.maximum(o, 1e-300)
    return float(-(y * np.log(clamped)).sum() / o.shape[0])


def phi_backward(
    params: NetworkParams,
    inputs: np.ndarray,
    pre_activations: list[np.ndarray],
    activations: list[np.ndarray],
    d_representation: np.ndarray,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backpropagate an upstream gradient on the representation through the
    hidden stack; returns per-layer (dW, db)."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.hidden)
    da = d_representation
    for i in range(len(params.hidden) - 1, -1, -1):
        layer = params.hidden[i]
        dpre = da * _activate_grad(layer.activation, pre_activations[i], activations[i])
        below = activations[i - 1] if i > 0 else inputs
        grads[i] = (dpre.T @ below, dpre.sum(axis=0))
        if i > 0:
            da = dpre @ layer.weights
    return grads


def backward_from_trace(
    params: NetworkParams,
    trace: ForwardTrace,
    one_hot: np.ndarray,
    extra_rep_grad: np.ndarray | None = None,
) -> GradientSet:
    """Gradient of the mean cross-entropy given an existing trace.

    ``extra_rep_grad``, when given, is added to the gradient flowing into
    the representation; composite objectives that penalize the
    representation directly reuse the same backward sweep this way.
    """
    y = np.asarray(one_hot, dtype=np.float64)
    if y.shape != trace.outputs.shape:
        raise ShapeError(f"labels {y.shape} vs outputs {trace.outputs.shape}")
    n = trace.outputs.shape[0]
    dz = (trace.outputs - y) / n  # (N, K)
    g_out = dz.T @ trace.representation
    d_rep = dz @ params.output_weights
    if extra_rep_grad is not None:
        d_rep = d_rep + extra_rep_grad
    phi_grads = phi_backward(
        params, trace.inputs, trace.pre_activations, trace.activations, d_rep
    )
    return GradientSet(phi_grads, g_out)


def backward(params: NetworkParams, features, one_hot) -> GradientSet:
    """Gradient of the mean cross-entropy loss for a batch."""
    f = _as_batch(features)
    if f.shape[0] == 0:
        raise ShapeError("empty batch")
    return backward_from_trace(params, forward(params, f), np.atleast_2d(one_hot))


def last_layer_gradient_formula(outputs, one_hot, representations) -> np.ndarray:
    """Closed-form negative gradient of the loss on the output weights:
    entry (i, j) = (1/N) sum_n (y_ni - o_ni) * rep_nj.

    Kept separate from ``backward`` as a cross-check; the two must agree
    up to sign on the output block.
    """
    o = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    y = np.atleast_2d(np.asarray(one_hot, dtype=np.float64))
    rep = np.atleast_2d(np.asarray(representations, dtype=np.float64))
    if o.shape != y.shape or o.shape[0] != rep.shape[0]:
        raise ShapeError("inconsistent shapes")
    return (y - o).T @ rep / o.shape[0]


@dataclass
class MomentumState:
    """Classical momentum buffers: v <- mu*v + g, params <- params - lr*v."""

    coefficient: float
    velocity: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: NetworkParams, coefficient: float = 0.9) -> "MomentumState":
        return cls(coefficient, [np.zeros_like(b) for b in params.blocks()])


def sgd_step(
    params: NetworkParams,
    grads: GradientSet,
    learning_rate: float,
    momentum_state: MomentumState,
) -> NetworkParams:
    """One in-place momentum SGD update; returns the same params object."""
    if learning_rate <= 0:
        raise ParameterError("learning rate must be positive")
    mu = momentum_state.coefficient
    for buf, v, g in zip(params.blocks(), momentum_state.velocity, grads.blocks()):
        if buf.shape != g.shape or buf.shape != v.shape:
            raise ShapeError("gradient/velocity shapes do not mirror params")
        v *= mu
        v += g
        buf -= learning_rate * v
    return params


def expand_output_layer(
    params: NetworkParams,
    new_total_classes: int,
    rng: SeededRng,
    init_stdev: float = 0.01,
) -> NetworkParams:
    """Grow the output layer to ``new_total_classes`` rows.

    Existing rows are preserved bit for bit; new rows are drawn
    gaussian(0, init_stdev) so the fresh classes start near-neutral.
    """
    k_old = params.n_classes
    if new_total_classes <= k_old:
        raise ParameterError(
            f"cannot shrink or keep output width: {k_old} -> {new_total_classes}"
        )
    t = params.repr_dim
    new_rows = rng.normal((new_total_classes - k_old) * t, 0.0, init_stdev).reshape(-1, t)
    out = np.vstack([params.output_weights, new_rows])
    return NetworkParams(params.hidden, out, params.input_dim)


def predict(params: NetworkParams, features, chunk: int = 4096) -> np.ndarray:
    """Argmax class predictions, evaluated in chunks to bound memory. Ties
    resolve to the lowest class index."""
    f = _as_batch(features)
    out = np.empty(f.shape[0], dtype=np.int64)
    for start in range(0, f.shape[0], chunk):
        stop = min(start + chunk, f.shape[0])
        trace = forward(params, f[start:stop])
        out[start:stop] = np.argmax(trace.outputs, axis=1)
    return out


def _write_params(f, params: NetworkParams) -> None:
    f.write(struct.pack("<I", len(params.hidden)))
    f.write(struct.pack("<I", params.input_dim))
    for layer in params.hidden:
        out_dim, in_dim = layer.weights.shape
        f.write(struct.pack("<IIB", out_dim, in_dim, ACTIVATION_TAGS[layer.activation]))
        f.write(layer.weights.astype("<f8").tobytes())
        f.write(layer.bias.astype("<f8").tobytes())
    k, t = params.output_weights.shape
    f.write(struct.pack("<II", k, t))
    f.write(params.output_weights.astype("<f8").tobytes())


def _read_params(f) -> NetworkParams:
    (n_hidden,) = struct.unpack("<I", f.read(4))
    (input_dim,) = struct.unpack("<I", f.read(4))
    hidden = []
    for _ in range(n_hidden):
        out_dim, in_dim, tag = struct.unpack("<IIB", f.read(9))
        w = np.frombuffer(f.read(out_dim * in_dim * 8), dtype="<f8").reshape(out_dim, in_dim).copy()
        b = np.frombuffer(f.read(out_dim * 8), dtype="<f8").copy()
        hidden.append(HiddenLayer(w, b, _TAG_NAMES[tag]))
    k, t = struct.unpack("<II", f.read(8))
    out = np.frombuffer(f.read(k * t * 8), dtype="<f8").reshape(k, t).copy()
    return NetworkParams(hidden, out, input_dim)


def save_checkpoint(path, params: NetworkParams, state=None) -> None:
    """Versioned binary checkpoint; optionally appends a consolidation-state
    section. Round-trips are bit-exact (raw little-endian float64)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IB", CHECKPOINT_VERSION, 1 if state is not None else 0))
        _write_params(f, params)
        if state is not None:
            _write_params(f, state.theta_old)
            for block in state.fisher:
                f.write(block.astype("<f8").tobytes())
            n, t = state.support_reps_old.shape if state.support_reps_old.size else (0, state.theta_old.repr_dim)
            f.write(struct.pack("<II", n, t))
            f.write(state.support_reps_old.astype("<f8").tobytes())
            f.write(struct.pack("<dd", state.lambda_f, state.lambda_ewc))


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns (params, state_or_None)."""
    from .consolidation import ConsolidationState  # avoid import cycle

    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: bad checkpoint magic {magic!r}")
        version, has_state = struct.unpack("<IB", f.read(5))
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        params = _read_params(f)
        state = None
        if has_state:
            theta_old = _read_params(f)
            fisher = []
            for block in theta_old.blocks():
                raw = np.frombuffer(f.read(block.size * 8), dtype="<f8")
                fisher.append(raw.reshape(block.shape).copy())
            n, t = struct.unpack("<II", f.read(8))
            reps = np.frombuffer(f.read(n * t * 8), dtype="<f8").reshape(n, t).copy()
            lam_f, lam_ewc = struct.unpack("<dd", f.read(16))
            state = ConsolidationState(theta_old, fisher, reps, lam_f, lam_ewc)
    return params, state
