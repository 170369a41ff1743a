"""Learning rules for feedforward networks.

Every rule is a gradient-descent-shaped update W <- W - lr * dW where dW is
an outer product of an error signal (delta) with input activations. The
rules differ only in which network supplies the feedback path and the
activations:

  normal       current Jacobian, current activations (exact backprop)
  align-zero   frozen time-0 Jacobian, frozen time-0 activations
  align-ada    frozen time-0 Jacobian, current activations
  fa           fixed random backward matrices, current activations
  dfa          fixed random direct error projection, current activations
  last-layer   exact gradient on the final layer only

The output error is always taken from the network actually being trained.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import (
    ForwardTrace, InitSnapshot, NetworkSpec, ParamSet, backward_deltas,
    batch_loss, forward, init_params, output_errors, param_grads, snapshot,
)
from .rng import make_rng

RULE_KINDS = ("normal", "align-zero", "align-ada", "fa", "dfa",
              "last-layer", "readout-only")
ALIGN_RULES = ("align-zero", "align-ada")
FEEDBACK_RULES = ("fa", "dfa")
FROZEN_BODY_RULES = ("last-layer", "readout-only")


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    batch_size: int
    epochs: int
    rule: str
    seed: int

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.rule not in RULE_KINDS:
            raise ValueError(f"unknown rule {self.rule!r}")


@dataclass
class FixedFeedback:
    """Fixed random feedback matrices, drawn once and never updated."""
    backward: Optional[list] = None  # FA: same shapes as the forward weights
    direct: Optional[list] = None    # DFA: (m_l, m_N) per hidden layer


def init_fixed_feedback(spec: NetworkSpec, rng: np.random.Generator,
                        kind: str) -> FixedFeedback:
    if kind == "fa":
        mats = [rng.standard_normal(w_shape) for w_shape in
                ((l.fan_out, l.fan_in) for l in spec.layers)]
        return FixedFeedback(backward=mats)
    if kind == "dfa":
        m_out = spec.out_dim
        direct = []
        for i, layer in enumerate(spec.layers):
            if i == spec.depth - 1:
                direct.append(None)  # final layer keeps the exact identity feedback
            else:
                m_l = _layer_units(layer)
                direct.append(rng.standard_normal((m_l, m_out)))
        return FixedFeedback(direct=direct)
    raise ValueError(f"no fixed feedback for rule {kind!r}")


def _layer_units(layer) -> int:
    if layer.kind == "conv2d":
        return layer.out_channels * layer.out_hw[0] * layer.out_hw[1]
    return layer.fan_out


@dataclass
class TrainState:
    params: ParamSet
    step: int
    rng: np.random.Generator

    def __post_init__(self):
        if self.params.t != self.step:
            raise ValueError("params time-tag out of sync with step counter")


# ---------------------------------------------------------------------------
# single-step updates

def _apply(state: TrainState, grads: list, lr: float) -> TrainState:
    p = state.params
    new = ParamSet(
        [w - lr * dw for w, (dw, _) in zip(p.weights, grads)],
        [b - lr * db for b, (_, db) in zip(p.biases, grads)],
        t=p.t + 1,
    )
    return TrainState(new, state.step + 1, state.rng)


def normal_grads(spec, params, trace, out_err):
    deltas = backward_deltas(spec, params, trace, out_err)
    return param_grads(spec, deltas, trace.acts)


def align_grads(spec, params0, init_trace, out_err, act_trace):
    """Shared core of Align-zero / Align-ada: frozen feedback path, output
    errors from the trained network, activations from `act_trace`."""
    deltas = backward_deltas(spec, params0, init_trace, out_err)
    return param_grads(spec, deltas, act_trace.acts)


def fa_grads(spec, params, trace, out_err, fb: FixedFeedback):
    deltas = backward_deltas(spec, params, trace, out_err,
                             feedback_weights=fb.backward)
    return param_grads(spec, deltas, trace.acts)


def dfa_grads(spec, trace, out_err, fb: FixedFeedback):
    m_out = out_err.shape[1]
    scale = 1.0 / np.sqrt(m_out)
    deltas = []
    for i in range(spec.depth):
        if fb.direct[i] is None:
            deltas.append(out_err)
        else:
            d = scale * (out_err @ fb.direct[i].T)
            deltas.append(d.reshape(trace.zs[i].shape))
    return param_grads(spec, deltas, trace.acts)


def frozen_body_grads(spec, trace, out_err):
    """Exact gradient on the final layer; zero elsewhere."""
    grads = [(np.zeros((l.fan_out, l.fan_in)), np.zeros(l.fan_out))
             for l in spec.layers]
    grads[-1] = param_grads(
        spec, [np.zeros_like(z) for z in trace.zs[:-1]] + [out_err],
        trace.acts)[-1]
    return grads


def compute_grads(rule: str, spec: NetworkSpec, params: ParamSet,
                  xb: np.ndarray, yb: np.ndarray, *,
                  params0: Optional[ParamSet] = None,
                  init_trace: Optional[ForwardTrace] = None,
                  feedback: Optional[FixedFeedback] = None):
    """Per-rule parameter gradients for one minibatch.

    Returns (grads, raw_errors, loss) where raw_errors = f - y per example
    (no batch scaling), as logged for the alignment oracle."""
    if xb.shape[0] == 0:
        raise ValueError("empty batch")
    trace = forward(params, spec, xb)
    err = output_errors(trace.f, yb)
    raw = trace.f - yb
    loss = batch_loss(trace.f, yb)
    if rule == "normal":
        grads = normal_grads(spec, params, trace, err)
    elif rule in ALIGN_RULES:
        if init_trace is None or params0 is None:
            raise ValueError("align rules need the frozen time-0 parameters and trace")
        act_trace = init_trace if rule == "align-zero" else trace
        grads = align_grads(spec, params0, init_trace, err, act_trace)
    elif rule == "fa":
        grads = fa_grads(spec, params, trace, err, feedback)
    elif rule == "dfa":
        grads = dfa_grads(spec, trace, err, feedback)
    elif rule in FROZEN_BODY_RULES:
        grads = frozen_body_grads(spec, trace, err)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return grads, raw, loss


def step_normal(state, spec, xb, yb, lr):
    grads, _, _ = compute_grads("normal", spec, state.params, xb, yb)
    return _apply(state, grads, lr)


def _step_align(rule, state, snap: InitSnapshot, spec, idx, yb, lr):
    idx = np.asarray(idx)
    if idx.size == 0:
        raise ValueError("empty batch")
    if idx.max() >= snap.acts0[0].shape[0]:
        raise ValueError("batch example missing from snapshot")
    xb = snap.acts0[0][idx]
    grads, _, _ = compute_grads(rule, spec, state.params, xb, yb,
                                params0=snap.params0,
                                init_trace=snap.batch_trace(idx))
    return _apply(state, grads, lr)


def step_align_zero(state, snap, spec, idx, yb, lr):
    return _step_align("align-zero", state, snap, spec, idx, yb, lr)


def step_align_ada(state, snap, spec, idx, yb, lr):
    return _step_align("align-ada", state, snap, spec, idx, yb, lr)


def step_frozen_body(state, spec, xb, yb, lr):
    grads, _, _ = compute_grads("last-layer", spec, state.params, xb, yb)
    return _apply(state, grads, lr)


def step_fa(state, fb, spec, xb, yb, lr):
    grads, _, _ = compute_grads("fa", spec, state.params, xb, yb, feedback=fb)
    return _apply(state, grads, lr)


def step_dfa(state, fb, spec, xb, yb, lr):
    grads, _, _ = compute_grads("dfa", spec, state.params, xb, yb, feedback=fb)
    return _apply(state, grads, lr)


class Trainer:
    """Owns one training run: parameters, data order, rule bookkeeping.

    `X`/`Y` is the full training set. Align rules build their frozen time-0
    cache over the whole set before step 0; with `cache_init=False` the
    time-0 trace is recomputed per batch from the stored initial parameters
    instead (same values, lower memory)."""

    def __init__(self, spec: NetworkSpec, config: TrainConfig,
                 X: np.ndarray, Y: np.ndarray, *,
                 params: Optional[ParamSet] = None,
                 cache_init: bool = True,
                 on_step=None):
        if config.batch_size > X.shape[0]:
            raise ValueError("batch size exceeds dataset size")
        self.spec = spec
        self.config = config
        self.X, self.Y = X, Y
        self.rule = config.rule
        rng = make_rng(config.seed, 0)
        p0 = params.copy() if params is not None else init_params(spec, rng)
        if p0.t != 0:
            raise ValueError("trainer must start from time-0 parameters")
        self.params0 = p0.copy()
        self.state = TrainState(p0, 0, make_rng(config.seed, 1))
        self.on_step = on_step
        self.feedback = None
        self._init_traces = None
        self._cache_init = cache_init
        if self.rule in FEEDBACK_RULES:
            self.feedback = init_fixed_feedback(spec, make_rng(config.seed, 2),
                                                self.rule)
        if self.rule in ALIGN_RULES and cache_init:
            full = forward(self.params0, spec, X)
            self._init_traces = full

    @property
    def params(self) -> ParamSet:
        return self.state.params

    def init_trace_for(self, idx: np.ndarray) -> ForwardTrace:
        if self._init_traces is not None:
            tr = self._init_traces
            zs = [z[idx] for z in tr.zs]
            acts = [a[idx] for a in tr.acts]
            return ForwardTrace(zs, acts, zs[-1])
        return forward(self.params0, self.spec, self.X[idx])

    def step(self, idx: np.ndarray) -> float:
        """One minibatch update on the examples at `idx`. Returns the loss."""
        xb, yb = self.X[idx], self.Y[idx]
        init_trace = None
        if self.rule in ALIGN_RULES:
            init_trace = self.init_trace_for(idx)
        grads, raw, loss = compute_grads(
            self.rule, self.spec, self.state.params, xb, yb,
            params0=self.params0, init_trace=init_trace,
            feedback=self.feedback)
        if self.on_step is not None:
            self.on_step(self, idx, raw)
        self.state = _apply(self.state, grads, self.config.lr)
        return loss

    def epoch_batches(self):
        n = self.X.shape[0]
        order = self.state.rng.permutation(n)
        bs = self.config.batch_size
        for start in range(0, n - bs + 1, bs):
            yield order[start:start + bs]

    def run_epoch(self) -> float:
        losses = [self.step(idx) for idx in self.epoch_batches()]
        return float(np.mean(losses))

    def evaluate(self, X, Y):
        """(loss, accuracy) on a held-out set; accuracy by argmax."""
        f = forward(self.state.params, self.spec, X).f
        loss = batch_loss(f, Y)
        acc = float(np.mean(np.argmax(f, axis=1) == np.argmax(Y, axis=1)))
        return loss, acc
