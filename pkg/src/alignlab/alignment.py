"""Input-weight alignment measurement.

Two symmetric PSD operators are compared per layer:

  delta: (W_t - W_0)^T (W_t - W_0), correlation of the weight change
  sigma: m_in (W* - W_0)^T (W* - W_0), the error-weighted input correlation
         evaluated through companion weights W*

The companion weights accumulate the frozen-feedback dynamics driven by the
monitored network's output errors; they equal the align-zero trajectory when
the monitored network itself trains with align-zero. The alignment score is
the cosine between the two operators in the space of symmetric matrices,
computed densely (small widths) or with shared Gaussian probes.

`oracle_sigma_dense` rebuilds sigma from first principles (integrated
errors, layerwise Jacobian kernel, pairwise weighting) as an independent
cross-check of the companion route; the two agree exactly in full-batch
training.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import InitSnapshot, NetworkSpec, ParamSet
from .rules import align_grads

DENSE_CAP = 512


class ZeroOperatorError(ValueError):
    """Raised when a correlation operator is identically zero (untrained
    network): the alignment score is undefined, not zero."""


# ---------------------------------------------------------------------------
# companion weights

@dataclass
class CompanionState:
    w_star: list
    step: int = 0


def companion_init(params0: ParamSet) -> CompanionState:
    return CompanionState([w.copy() for w in params0.weights], step=0)


def companion_step(companion: CompanionState, snap: InitSnapshot,
                   idx: np.ndarray, raw_errors: np.ndarray,
                   lr: float, monitor_step: Optional[int] = None) -> CompanionState:
    """Advance W* by one step of the frozen-feedback dynamics.

    `raw_errors` are the monitored network's per-example output errors
    f(x) - y(x) for the batch `idx` (batch-mean scaling applied here).
    Call exactly once per monitored training step."""
    if monitor_step is not None and monitor_step != companion.step:
        raise ValueError(
            f"companion at step {companion.step} but monitored trainer at "
            f"{monitor_step}")
    idx = np.asarray(idx)
    err = raw_errors / idx.size
    init_trace = snap.batch_trace(idx)
    grads = align_grads(snap.spec, snap.params0, init_trace, err, init_trace)
    new = [w - lr * dw for w, (dw, _) in zip(companion.w_star, grads)]
    return CompanionState(new, companion.step + 1)


class CompanionTracker:
    """Adapter hooking `companion_step` into a Trainer as its on_step
    callback; keeps W* in lockstep with the monitored parameters."""

    def __init__(self, snap: InitSnapshot, lr: float):
        self.snap = snap
        self.lr = lr
        self.state = companion_init(snap.params0)

    def __call__(self, trainer, idx, raw_errors):
        self.state = companion_step(self.state, self.snap, idx, raw_errors,
                                    self.lr, monitor_step=trainer.state.step)


# ---------------------------------------------------------------------------
# correlation operators

@dataclass
class CorrelationOperator:
    """Matrix-free symmetric PSD map z -> scale * A^T (A z)."""
    role: str
    layer: int
    a: np.ndarray
    scale: float = 1.0

    def apply(self, z: np.ndarray) -> np.ndarray:
        return self.scale * (self.a.T @ (self.a @ z))

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    def is_zero(self) -> bool:
        return not np.any(self.a)

    def materialize(self, cap: int = DENSE_CAP) -> np.ndarray:
        if self.dim > cap:
            raise ValueError(
                f"operator dimension {self.dim} exceeds dense cap {cap}")
        return self.scale * (self.a.T @ self.a)


def delta_operator(params_t: ParamSet, params0: ParamSet,
                   layer: int) -> CorrelationOperator:
    return CorrelationOperator("delta", layer,
                               params_t.weights[layer] - params0.weights[layer])


def sigma_operator(companion: CompanionState, params0: ParamSet,
                   spec: NetworkSpec, layer: int) -> CorrelationOperator:
    fan_in = spec.layers[layer].fan_in
    return CorrelationOperator("sigma", layer,
                               companion.w_star[layer] - params0.weights[layer],
                               scale=float(fan_in))


# ---------------------------------------------------------------------------
# scores

@dataclass
class AlignmentReport:
    score: float
    probes: int
    variance: float


def alignment_score_dense(delta_op: CorrelationOperator,
                          sigma_op: CorrelationOperator,
                          cap: int = DENSE_CAP) -> float:
    if delta_op.is_zero() or sigma_op.is_zero():
        raise ZeroOperatorError("alignment score undefined for a zero operator")
    d = delta_op.materialize(cap)
    s = sigma_op.materialize(cap)
    num = float(np.sum(d * s))  # tr(DS) for symmetric D, S
    den = np.sqrt(float(np.sum(d * d))) * np.sqrt(float(np.sum(s * s)))
    return num / den


def alignment_score_stochastic(delta_op: CorrelationOperator,
                               sigma_op: CorrelationOperator,
                               probes: int,
                               rng: np.random.Generator) -> AlignmentReport:
    """Probe-based score estimate; the same Gaussian probes are shared by
    the numerator and both denominator terms, which makes the estimate
    exactly 1 when the operators coincide."""
    if probes < 1:
        raise ValueError("need at least one probe")
    if delta_op.is_zero() or sigma_op.is_zero():
        raise ZeroOperatorError("alignment score undefined for a zero operator")
    z = rng.standard_normal((delta_op.dim, probes))
    dz = delta_op.apply(z)
    sz = sigma_op.apply(z)
    num = np.sum(dz * sz, axis=0)       # z^T Delta Sigma z per probe
    dn = np.sum(dz * dz, axis=0)
    sn = np.sum(sz * sz, axis=0)
    score = float(np.mean(num) / np.sqrt(np.mean(dn) * np.mean(sn)))
    if probes == 1:
        return AlignmentReport(score, probes, float("inf"))
    # jackknife over probes
    p = probes
    loo_num = (num.sum() - num) / (p - 1)
    loo_dn = (dn.sum() - dn) / (p - 1)
    loo_sn = (sn.sum() - sn) / (p - 1)
    loo = loo_num / np.sqrt(loo_dn * loo_sn)
    var = float((p - 1) / p * np.sum((loo - loo.mean()) ** 2))
    return AlignmentReport(score, probes, var)


# ---------------------------------------------------------------------------
# brute-force oracle

@dataclass
class OracleTensors:
    delta: np.ndarray   # integrated error per example, (n, m_N)
    gamma: np.ndarray   # layerwise Jacobian kernel, (n, n, m_N, m_N)
    q: np.ndarray       # pairwise weighting, (n, n)
    sigma: np.ndarray   # dense error-weighted input correlation


def oracle_sigma_dense(snap: InitSnapshot, error_log: np.ndarray,
                       layer: int, lr: float) -> OracleTensors:
    """Assemble sigma from its definition: integrated per-example errors,
    the time-0 Jacobian kernel, and the pairwise error weighting.

    `error_log` has shape (steps, n, m_N): every step's raw output errors
    f - y for the FULL training set, in order. Minibatch logs are rejected
    because the per-example step weighting would be ambiguous."""
    if snap.g is None:
        raise ValueError("oracle requires a snapshot with explicit Jacobians")
    error_log = np.asarray(error_log)
    n = snap.acts0[0].shape[0]
    if error_log.ndim != 3 or error_log.shape[1] != n:
        raise ValueError(
            "error log must cover the full training set at every step")
    delta = lr * error_log.sum(axis=0) / n          # (n, m_N)
    g = snap.g[layer]                               # (n, m_l, m_N)
    gamma = np.einsum("aik,bil->abkl", g, g)        # (n, n, m_N, m_N)
    q = np.einsum("ak,abkl,bl->ab", delta, gamma, delta)
    acts = snap.acts0[layer]                        # (n, m_{l-1})
    sigma = np.einsum("ab,ai,bj->ij", q, acts, acts)
    return OracleTensors(delta, gamma, q, sigma)


# ---------------------------------------------------------------------------
# permuted-weight baseline

def permuted_score(params_t: ParamSet, params0: ParamSet,
                   sigma_op: CorrelationOperator, layer: int,
                   rng: Optional[np.random.Generator] = None,
                   permutation: Optional[np.ndarray] = None,
                   cap: int = DENSE_CAP) -> float:
    """Dense score after permuting the entries of the weight change at
    `layer`; the sigma side is left untouched."""
    diff = params_t.weights[layer] - params0.weights[layer]
    flat = diff.ravel()
    if permutation is None:
        if rng is None:
            raise ValueError("need an rng or an explicit permutation")
        permutation = rng.permutation(flat.size)
    perm_op = CorrelationOperator("delta", layer,
                                  flat[permutation].reshape(diff.shape))
    return alignment_score_dense(perm_op, sigma_op, cap)
