"""NTK-parameterized feedforward networks: specs, parameters, forward and
backward passes.

Pre-activations follow z_l = W_l sigma(z_{l-1}) / sqrt(fan_in) + b_l with
weights drawn i.i.d. N(0, 1) and biases zero, so the width scaling lives in
the forward pass rather than the draw. The output is f(x) = z_N(x); no
activation is applied after the last layer.

The backward machinery is shared by every learning rule: `backward_deltas`
propagates output errors through a chosen feedback path (a parameter set and
its forward trace), and `param_grads` forms the weight updates from those
deltas and a chosen set of input activations. Gradient descent uses the
current network for both; the Align rules use the frozen time-0 network for
the feedback path.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .activations import get_activation


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "conv2d" | "readout"
    fan_in: int
    fan_out: int
    activation: str = "relu"
    # conv2d only
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    in_hw: tuple = ()
    out_hw: tuple = ()

    def __post_init__(self):
        if self.kind not in ("dense", "conv2d", "readout"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.fan_in <= 0 or self.fan_out <= 0:
            raise ValueError("layer fan-in and fan-out must be positive")
        get_activation(self.activation)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("network must have at least one layer")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def is_dense(self) -> bool:
        return all(l.kind == "dense" for l in self.layers)


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int,
        activation: str = "relu") -> NetworkSpec:
    """Fully connected network; the final layer output is left linear."""
    dims = [in_dim, *hidden, out_dim]
    layers = []
    for i in range(len(dims) - 1):
        act = activation if i < len(dims) - 2 else "identity"
        layers.append(LayerSpec("dense", dims[i], dims[i + 1], act))
    return NetworkSpec(tuple(layers))


def cnn(in_hw: tuple, in_channels: int, filters: Sequence[int],
        strides: Sequence[int], out_dim: int,
        activation: str = "relu", kernel: int = 3) -> NetworkSpec:
    """Stack of 3x3 convolutions followed by global average pooling and a
    fully connected readout. Convolutions use padding kernel//2."""
    if len(filters) != len(strides):
        raise ValueError("filters and strides must have equal length")
    layers = []
    h, w = in_hw
    cin = in_channels
    for nf, st in zip(filters, strides):
        pad = kernel // 2
        oh = (h + 2 * pad - kernel) // st + 1
        ow = (w + 2 * pad - kernel) // st + 1
        layers.append(LayerSpec(
            "conv2d", kernel * kernel * cin, nf, activation,
            in_channels=cin, out_channels=nf, kernel=kernel, stride=st,
            in_hw=(h, w), out_hw=(oh, ow)))
        cin, h, w = nf, oh, ow
    layers.append(LayerSpec("readout", cin, out_dim, "identity"))
    return NetworkSpec(tuple(layers))


@dataclass
class ParamSet:
    weights: list
    biases: list
    t: int = 0

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.t)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and \
            all(np.all(np.isfinite(b)) for b in self.biases)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ParamSet:
    """Neural tangent initialization: W entries N(0,1), biases zero."""
    weights, biases = [], []
    for layer in spec.layers:
        weights.append(rng.standard_normal((layer.fan_out, layer.fan_in)))
        biases.append(np.zeros(layer.fan_out))
    return ParamSet(weights, biases, t=0)


# ---------------------------------------------------------------------------
# conv plumbing

def _im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, L) patch matrix."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, k, k)
    bo, co, ho, wo, _, _ = win.shape
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(bo, co * kernel * kernel, ho * wo)
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, x_shape: tuple, kernel: int, stride: int,
            pad: int) -> np.ndarray:
    """Scatter-add inverse of `_im2col`."""
    b, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - kernel) // stride + 1
    wo = (wp - kernel) // stride + 1
    xp = np.zeros((b, c, hp, wp))
    cols6 = cols.reshape(b, c, kernel, kernel, ho, wo)
    for ki in range(kernel):
        for kj in range(kernel):
            xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                cols6[:, :, ki, kj]
    return xp[:, :, pad:pad + h, pad:pad + w]


# ---------------------------------------------------------------------------
# forward / backward

@dataclass
class ForwardTrace:
    zs: list          # pre-activations per layer
    acts: list        # acts[l] = input to layer l (acts[0] is the raw input)
    f: np.ndarray     # network output, (B, m_N)


def forward(params: ParamSet, spec: NetworkSpec, x: np.ndarray) -> ForwardTrace:
    zs, acts = [], [np.asarray(x, dtype=np.float64)]
    a = acts[0]
    for i, layer in enumerate(spec.layers):
        w, b = params.weights[i], params.biases[i]
        scale = 1.0 / np.sqrt(layer.fan_in)
        if layer.kind == "dense":
            if a.shape[1] != layer.fan_in:
                raise ValueError(
                    f"layer {i}: expected input dim {layer.fan_in}, got {a.shape[1]}")
            z = scale * (a @ w.T) + b
        elif layer.kind == "conv2d":
            cols = _im2col(a, layer.kernel, layer.stride, layer.kernel // 2)
            z = scale * np.einsum("oc,bcl->bol", w, cols) + b[None, :, None]
            z = z.reshape(a.shape[0], layer.out_channels, *layer.out_hw)
        elif layer.kind == "readout":
            pooled = a.mean(axis=(2, 3))  # global average pool
            z = scale * (pooled @ w.T) + b
        zs.append(z)
        if i < spec.depth - 1:
            act = get_activation(layer.activation)
            a = act.fn(z)
            acts.append(a)
    f = zs[-1]
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("non-finite values in network output")
    return ForwardTrace(zs, acts, f)


def output_errors(f: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batch-mean gradient of L = 1/2 ||f - y||^2 at the output layer."""
    return (f - y) / f.shape[0]


def batch_loss(f: np.ndarray, y: np.ndarray) -> float:
    return float(0.5 * np.sum((f - y) ** 2) / f.shape[0])


def _propagate_through(layer: LayerSpec, w: np.ndarray, delta: np.ndarray,
                       prev_shape: tuple) -> np.ndarray:
    """Map a delta at this layer's output to the previous post-activation."""
    scale = 1.0 / np.sqrt(layer.fan_in)
    if layer.kind == "dense":
        return scale * (delta @ w)
    if layer.kind == "readout":
        da_pool = scale * (delta @ w)  # (B, C)
        b, c, h, wd = prev_shape
        return np.broadcast_to(
            da_pool[:, :, None, None] / (h * wd), prev_shape).copy()
    # conv2d
    b = delta.shape[0]
    dflat = delta.reshape(b, layer.out_channels, -1)
    dcols = scale * np.einsum("oc,bol->bcl", w, dflat)
    return _col2im(dcols, prev_shape, layer.kernel, layer.stride, layer.kernel // 2)


def backward_deltas(spec: NetworkSpec, params: ParamSet, trace: ForwardTrace,
                    out_err: np.ndarray,
                    feedback_weights: Optional[list] = None) -> list:
    """Deltas d_l = (dz_l-shaped error signal) for l = 1..N.

    `params`/`trace` define the feedback path (use the time-0 network for
    Align rules). `feedback_weights` substitutes fixed random matrices for
    the transposed forward weights (feedback alignment)."""
    n = spec.depth
    deltas = [None] * n
    deltas[n - 1] = out_err
    for i in range(n - 2, -1, -1):
        layer_up = spec.layers[i + 1]
        w_up = params.weights[i + 1] if feedback_weights is None else feedback_weights[i + 1]
        da = _propagate_through(layer_up, w_up, deltas[i + 1], trace.zs[i].shape)
        sp = get_activation(spec.layers[i].activation).deriv(trace.zs[i])
        deltas[i] = sp * da
    return deltas


def param_grads(spec: NetworkSpec, deltas: list, acts: list) -> list:
    """Per-layer (dW, db) from deltas and the input activations `acts`
    (acts[l] feeds layer l). Deltas are assumed batch-mean scaled."""
    grads = []
    for i, layer in enumerate(spec.layers):
        scale = 1.0 / np.sqrt(layer.fan_in)
        d, a = deltas[i], acts[i]
        if layer.kind == "dense":
            dw = scale * (d.T @ a)
            db = d.sum(axis=0)
        elif layer.kind == "readout":
            pooled = a.mean(axis=(2, 3))
            dw = scale * (d.T @ pooled)
            db = d.sum(axis=0)
        else:  # conv2d
            cols = _im2col(a, layer.kernel, layer.stride, layer.kernel // 2)
            dflat = d.reshape(d.shape[0], layer.out_channels, -1)
            dw = scale * np.einsum("bol,bcl->oc", dflat, cols)
            db = dflat.sum(axis=(0, 2))
        grads.append((dw, db))
    return grads


def backprop_grads(params: ParamSet, spec: NetworkSpec, x: np.ndarray,
                   y: np.ndarray) -> list:
    """Exact gradient of the batch-mean squared-error loss."""
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    trace = forward(params, spec, x)
    deltas = backward_deltas(spec, params, trace, output_errors(trace.f, y))
    return param_grads(spec, deltas, trace.acts)


# ---------------------------------------------------------------------------
# frozen time-0 state

@dataclass
class InitSnapshot:
    """Frozen time-0 quantities for a dataset: parameters, per-example
    forward traces, and per-example feedback Jacobians g_l(x)."""
    params0: ParamSet
    spec: NetworkSpec
    zs0: list         # zs0[l]: (n, m_l)
    acts0: list       # acts0[l]: input activations of layer l, acts0[0] = X
    g: Optional[list] = None   # g[l]: (n, m_l, m_N); dense specs only

    def batch_trace(self, idx: np.ndarray) -> ForwardTrace:
        zs = [z[idx] for z in self.zs0]
        acts = [a[idx] for a in self.acts0]
        return ForwardTrace(zs, acts, zs[-1])


def snapshot(params0: ParamSet, spec: NetworkSpec, x: np.ndarray,
             with_jacobians: bool = True) -> InitSnapshot:
    """Cache time-0 activations (and, for dense specs, explicit feedback
    Jacobians) for every example in `x`."""
    if params0.t != 0:
        raise ValueError("snapshot requires time-0 parameters")
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    trace = forward(params0, spec, x)
    g = None
    if with_jacobians:
        if not spec.is_dense:
            raise ValueError("explicit feedback Jacobians require a dense network")
        g = feedback_jacobians(params0, spec, trace)
    return InitSnapshot(params0.copy(), spec, trace.zs, trace.acts, g)


def feedback_jacobians(params0: ParamSet, spec: NetworkSpec,
                       trace: ForwardTrace) -> list:
    """g_l(x) = transposed Jacobian of f w.r.t. z_l, per example, computed by
    the backward recursion g_N = I, g_l = diag(sigma'(z_l)) W_{l+1}^T g_{l+1}
    / sqrt(m_l). Returns g[l] of shape (n, m_l, m_N) for l = 1..N."""
    n_ex = trace.f.shape[0]
    m_out = spec.out_dim
    depth = spec.depth
    g = [None] * depth
    g[depth - 1] = np.broadcast_to(np.eye(m_out), (n_ex, m_out, m_out)).copy()
    for i in range(depth - 2, -1, -1):
        layer_up = spec.layers[i + 1]
        scale = 1.0 / np.sqrt(layer_up.fan_in)
        back = scale * np.einsum("oc,noj->ncj", params0.weights[i + 1], g[i + 1])
        sp = get_activation(spec.layers[i].activation).deriv(trace.zs[i])
        g[i] = sp[:, :, None] * back
    return g
