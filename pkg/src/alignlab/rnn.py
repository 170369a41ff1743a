"""Recurrent network for sequence regression, with backprop-through-time and
the frozen-feedback (Align) variants.

The cell follows the NTK convention used by the feedforward stack:

    z_{k+1} = W_h sigma(z_k) / sqrt(m) + b_h + W_i x_k / sqrt(in_dim)
    yhat_k  = W_o sigma(z_k) / sqrt(m) + b_o

with z_0 = 0 and tied weights across steps. The prediction for label index t
(0-based) reads out state z_{t+1}. Tied-weight updates sum over every
(site, loss-step) pair; by default the same-step pair is included so the
frozen-feedback rules coincide with exact BPTT at time 0. `strict_pairs`
drops the same-step pair, keeping only strictly later losses.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .activations import get_activation
from .rng import make_rng

RNN_RULES = ("normal", "align-zero", "align-ada", "readout-only")


@dataclass(frozen=True)
class RNNSpec:
    hidden: int
    in_dim: int = 1
    out_dim: int = 1
    activation: str = "relu"


@dataclass
class RNNParams:
    w_h: np.ndarray
    b_h: np.ndarray
    w_i: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    t: int = 0

    def copy(self):
        return RNNParams(self.w_h.copy(), self.b_h.copy(), self.w_i.copy(),
                         self.w_o.copy(), self.b_o.copy(), self.t)

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in
                   (self.w_h, self.b_h, self.w_i, self.w_o, self.b_o))


def init_rnn(spec: RNNSpec, rng: np.random.Generator) -> RNNParams:
    m = spec.hidden
    return RNNParams(
        w_h=rng.standard_normal((m, m)),
        b_h=np.zeros(m),
        w_i=rng.standard_normal((m, spec.in_dim)),
        w_o=rng.standard_normal((spec.out_dim, m)),
        b_o=np.zeros(spec.out_dim),
        t=0,
    )


def _as_3d(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.shape[2] != dim:
        raise ValueError(f"sequence feature dim {x.shape[2]} != {dim}")
    return x


@dataclass
class RNNTrace:
    states: np.ndarray   # (B, K+1, m) pre-activation states, states[:,0] = 0
    yhat: np.ndarray     # (B, K, out), yhat[:, t] reads out states[:, t+1]


def rnn_unroll(params: RNNParams, spec: RNNSpec, x: np.ndarray) -> RNNTrace:
    x = _as_3d(x, spec.in_dim)
    b, k, _ = x.shape
    if k == 0:
        raise ValueError("empty sequence")
    m = spec.hidden
    act = get_activation(spec.activation)
    s_h = 1.0 / np.sqrt(m)
    s_i = 1.0 / np.sqrt(spec.in_dim)
    states = np.zeros((b, k + 1, m))
    for step in range(k):
        prev = act.fn(states[:, step])
        states[:, step + 1] = (s_h * prev @ params.w_h.T + params.b_h
                               + s_i * x[:, step] @ params.w_i.T)
    post = act.fn(states[:, 1:])
    yhat = s_h * post @ params.w_o.T + params.b_o
    if not np.all(np.isfinite(yhat)):
        raise FloatingPointError("non-finite values in RNN output")
    return RNNTrace(states, yhat)


def rnn_training_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Sum of per-step 1/2 squared errors, mean over the batch."""
    y = _as_3d(y, yhat.shape[2])
    return float(0.5 * np.sum((yhat - y) ** 2) / yhat.shape[0])


def add_task_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Reporting convention: mean over output dims, sum over steps, mean
    over batch (constant-predictor chance level near 9.36 on the Add task)."""
    y = _as_3d(y, yhat.shape[2])
    return float(np.mean(np.sum(np.mean((yhat - y) ** 2, axis=2), axis=1)))


def rnn_grads(rule: str, spec: RNNSpec, params: RNNParams, x: np.ndarray,
              y: np.ndarray, *,
              params0: Optional[RNNParams] = None,
              init_trace: Optional[RNNTrace] = None,
              strict_pairs: bool = False,
              trace: Optional[RNNTrace] = None) -> dict:
    """Batch-mean parameter gradients for one rule.

    For align rules, `params0`/`init_trace` supply the frozen time-0
    feedback path; output errors always come from the current network."""
    if rule not in RNN_RULES:
        raise ValueError(f"unknown RNN rule {rule!r}")
    x = _as_3d(x, spec.in_dim)
    b, k, _ = x.shape
    act = get_activation(spec.activation)
    m = spec.hidden
    s_h = 1.0 / np.sqrt(m)
    s_i = 1.0 / np.sqrt(spec.in_dim)

    if trace is None:
        trace = rnn_unroll(params, spec, x)
    y = _as_3d(y, spec.out_dim)
    eps = (trace.yhat - y) / b  # (B, K, out)

    if rule in ("align-zero", "align-ada"):
        if params0 is None or init_trace is None:
            raise ValueError("align rules need the frozen time-0 parameters and trace")
        path_params, path_states = params0, init_trace.states
    else:
        path_params, path_states = params, trace.states
    act_states = init_trace.states if rule == "align-zero" else trace.states

    post_act = act.fn(act_states)  # (B, K+1, m), index k = sigma(z_k)

    grads = {
        "w_h": np.zeros_like(params.w_h), "b_h": np.zeros_like(params.b_h),
        "w_i": np.zeros_like(params.w_i),
        "w_o": np.zeros_like(params.w_o), "b_o": np.zeros_like(params.b_o),
    }
    # readout gradients (exact for normal/readout-only; frozen activations
    # for align-zero)
    grads["w_o"] = s_h * np.einsum("bto,btm->om", eps, post_act[:, 1:])
    grads["b_o"] = eps.sum(axis=(0, 1))
    if rule == "readout-only":
        return grads

    sp = act.deriv(path_states)  # sigma'(z_k) along the feedback path
    d_next = np.zeros((b, m))
    for step in range(k, 0, -1):
        carry = s_h * d_next @ path_params.w_h  # from strictly later losses
        direct = s_h * eps[:, step - 1] @ path_params.w_o
        d_k = sp[:, step] * (carry + direct)
        c_k = sp[:, step] * carry if strict_pairs else d_k
        prev = post_act[:, step - 1]
        grads["w_h"] += s_h * c_k.T @ prev
        grads["b_h"] += c_k.sum(axis=0)
        grads["w_i"] += s_i * c_k.T @ x[:, step - 1]
        d_next = d_k
    return grads


def apply_rnn_grads(params: RNNParams, grads: dict, lr: float) -> RNNParams:
    return RNNParams(
        params.w_h - lr * grads["w_h"], params.b_h - lr * grads["b_h"],
        params.w_i - lr * grads["w_i"],
        params.w_o - lr * grads["w_o"], params.b_o - lr * grads["b_o"],
        t=params.t + 1,
    )


class RNNTrainer:
    """Minibatch training of the recurrent cell on a fixed sequence set."""

    def __init__(self, spec: RNNSpec, rule: str, lr: float, batch_size: int,
                 seed: int, x: np.ndarray, y: np.ndarray, *,
                 params: Optional[RNNParams] = None,
                 cache_init: bool = True,
                 strict_pairs: bool = False):
        if rule not in RNN_RULES:
            raise ValueError(f"unknown RNN rule {rule!r}")
        self.spec, self.rule, self.lr = spec, rule, lr
        self.batch_size = batch_size
        self.x = _as_3d(x, spec.in_dim)
        self.y = _as_3d(y, spec.out_dim)
        if batch_size > self.x.shape[0]:
            raise ValueError("batch size exceeds dataset size")
        self.params = params.copy() if params is not None else \
            init_rnn(spec, make_rng(seed, 0))
        if self.params.t != 0:
            raise ValueError("trainer must start from time-0 parameters")
        self.params0 = self.params.copy()
        self.rng = make_rng(seed, 1)
        self.strict_pairs = strict_pairs
        self._init_states = None
        if rule in ("align-zero", "align-ada") and cache_init:
            self._init_states = rnn_unroll(self.params0, spec, self.x).states

    def init_trace_for(self, idx: np.ndarray) -> Optional[RNNTrace]:
        if self.rule not in ("align-zero", "align-ada"):
            return None
        if self._init_states is not None:
            return RNNTrace(self._init_states[idx], None)
        return rnn_unroll(self.params0, self.spec, self.x[idx])

    def step(self, idx: np.ndarray) -> float:
        xb, yb = self.x[idx], self.y[idx]
        trace = rnn_unroll(self.params, self.spec, xb)
        grads = rnn_grads(self.rule, self.spec, self.params, xb, yb,
                          params0=self.params0,
                          init_trace=self.init_trace_for(idx),
                          strict_pairs=self.strict_pairs, trace=trace)
        loss = add_task_loss(trace.yhat, yb)
        self.params = apply_rnn_grads(self.params, grads, self.lr)
        return loss

    def run_epoch(self) -> float:
        n = self.x.shape[0]
        order = self.rng.permutation(n)
        losses = []
        for start in range(0, n - self.batch_size + 1, self.batch_size):
            losses.append(self.step(order[start:start + self.batch_size]))
        return float(np.mean(losses))

    def evaluate(self, x, y) -> float:
        yhat = rnn_unroll(self.params, self.spec, _as_3d(x, self.spec.in_dim)).yhat
        return add_task_loss(yhat, _as_3d(y, self.spec.out_dim))
