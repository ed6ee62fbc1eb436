"""Dense ReLU network with truncated scalar output, backprop, and Adam.

The function class is a fully connected net with layer widths
(d, N, ..., N, 1) — L hidden ReLU layers followed by a linear output —
whose scalar output is clamped to [-R, R]. Everything is float64 numpy;
no autodiff framework, the architecture is fixed so the backward pass is
written out directly.

Subgradient conventions (fixed for determinism): ReLU'(0) = 0, and the
output clamp has derivative 0 at |pre-activation| >= R.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError

NET_FORMAT_VERSION = "cindes-net-v1"


@dataclass(frozen=True)
class NetworkShape:
    """Architecture descriptor: input dim, hidden depth/width, output clamp."""

    input_dim: int
    depth: int
    width: int
    truncation: float

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if not self.truncation > 0:
            raise ValueError(f"truncation must be > 0, got {self.truncation}")

    def layer_dims(self):
        """Dims (d_0, ..., d_{L+1}) = (input_dim, width, ..., width, 1)."""
        return (self.input_dim,) + (self.width,) * self.depth + (1,)


@dataclass
class NetworkParams:
    """Weights W_i (d_i x d_{i-1}) and biases b_i (d_i,) for each affine layer."""

    shape: NetworkShape
    weights: list = field(repr=False)
    biases: list = field(repr=False)

    def __post_init__(self):
        dims = self.shape.layer_dims()
        n_layers = len(dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("layer count inconsistent with shape")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i + 1} dims inconsistent with shape")

    def copy(self):
        return NetworkParams(
            self.shape,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_params(shape, rng):
    """He-initialized parameters: W ~ N(0, 2/fan_in), biases zero."""
    dims = shape.layer_dims()
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(shape, weights, biases)


def zero_params(shape):
    """All-zero parameters (the constant-zero network)."""
    dims = shape.layer_dims()
    return NetworkParams(
        shape,
        [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
        [np.zeros(o) for o in dims[1:]],
    )


def zeros_like_params(params):
    return NetworkParams(
        params.shape,
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


# rows per forward chunk: keeps the (rows, width) hidden activations resident
# in cache, which dominates throughput for large evaluation batches
_FORWARD_CHUNK = 1024


def _forward_block(params, block):
    z = block
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = z @ w.T + b
        np.maximum(z, 0.0, out=z)
    out = z @ params.weights[-1].T + params.biases[-1]
    r = params.shape.truncation
    return np.clip(out[:, 0], -r, r)


def forward_many(params, inputs):
    """Vectorized truncated forward pass on an (n, d) matrix -> (n,) outputs.

    This is the evaluator used by training, scoring and evaluation. It runs
    on BLAS matmuls over fixed-size row chunks, which on some builds are not
    bitwise row-consistent across batch sizes; results can differ from
    forward() in the last ulp. Use forward_batch() where exact row-wise
    agreement with forward() matters.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != params.shape.input_dim:
        raise ValueError(
            f"expected (n, {params.shape.input_dim}) inputs, got {inputs.shape}"
        )
    n = inputs.shape[0]
    if n <= _FORWARD_CHUNK:
        return _forward_block(params, inputs)
    out = np.empty(n)
    for start in range(0, n, _FORWARD_CHUNK):
        stop = start + _FORWARD_CHUNK
        out[start:stop] = _forward_block(params, inputs[start:stop])
    return out


def forward(params, x):
    """Truncated network output T_R(g(x)) for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != params.shape.input_dim:
        raise ValueError(f"expected length-{params.shape.input_dim} input, got {x.shape}")
    return float(forward_many(params, x[None, :])[0])


def forward_batch(params, inputs):
    """Row-wise forward(); identical values to n single calls by construction."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != params.shape.input_dim:
        raise ValueError(
            f"expected (n, {params.shape.input_dim}) inputs, got {inputs.shape}"
        )
    return np.array([forward(params, row) for row in inputs])


def _forward_cached(params, inputs):
    """Forward pass retaining per-layer activations for backprop."""
    activations = [inputs]  # inputs to each affine layer
    pre_acts = []  # hidden pre-activations
    z = inputs
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        p = z @ w.T + b
        pre_acts.append(p)
        z = np.maximum(p, 0.0)
        activations.append(z)
    out_pre = (z @ params.weights[-1].T + params.biases[-1])[:, 0]
    return activations, pre_acts, out_pre


def backward(params, inputs, output_grads):
    """Parameter gradients for sum_i output_grads[i] * forward(inputs[i]).

    output_grads[i] is dloss/d(network output on row i); the returned
    structure matches NetworkParams and is summed over the batch.
    """
    inputs = np.asarray(inputs, dtype=float)
    output_grads = np.asarray(output_grads, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != params.shape.input_dim:
        raise ValueError(
            f"expected (n, {params.shape.input_dim}) inputs, got {inputs.shape}"
        )
    if output_grads.shape != (inputs.shape[0],):
        raise ValueError("output_grads length must match the number of rows")

    activations, pre_acts, out_pre = _forward_cached(params, inputs)
    r = params.shape.truncation

    grads = zeros_like_params(params)
    # clamp passes gradient only strictly inside (-R, R)
    g = np.where(np.abs(out_pre) < r, output_grads, 0.0)[:, None]
    grads.weights[-1][:] = g.T @ activations[-1]
    grads.biases[-1][:] = g.sum(axis=0)
    g = g @ params.weights[-1]
    for i in range(len(pre_acts) - 1, -1, -1):
        g = g * (pre_acts[i] > 0.0)
        grads.weights[i][:] = g.T @ activations[i]
        grads.biases[i][:] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i]
    return grads


@dataclass
class AdamState:
    """Adam moment accumulators and step counter for one NetworkParams."""

    m: NetworkParams
    v: NetworkParams
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(
        m=zeros_like_params(params),
        v=zeros_like_params(params),
        t=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params, grads, state, weight_decay=0.0):
    """One in-place Adam update with bias correction.

    The L2 penalty is decoupled from the loss: weight_decay * param is added
    to the gradient here, not inside the loss evaluation.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    arrays = zip(
        params.weights + params.biases,
        grads.weights + grads.biases,
        state.m.weights + state.m.biases,
        state.v.weights + state.v.biases,
    )
    for p, g, m, v in arrays:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient in Adam step")
        if weight_decay != 0.0:
            g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def params_to_dict(params):
    """JSON-ready dict, stable field order (cindes-net-v1)."""
    return {
        "version": NET_FORMAT_VERSION,
        "shape": {
            "input_dim": params.shape.input_dim,
            "depth": params.shape.depth,
            "width": params.shape.width,
            "truncation": params.shape.truncation,
        },
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(doc):
    if doc.get("version") != NET_FORMAT_VERSION:
        raise ValueError(f"unsupported network format: {doc.get('version')!r}")
    s = doc["shape"]
    shape = NetworkShape(s["input_dim"], s["depth"], s["width"], s["truncation"])
    weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    return NetworkParams(shape, weights, biases)
