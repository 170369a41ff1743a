"""Shared independent oracles for the test suite.

These stay deliberately naive (nested loops, central differences) so they
check the library implementations along a different computational path.
"""

import numpy as np

from alignlab.activations import get_activation
from alignlab.network import NetworkSpec, ParamSet, batch_loss, forward


def straight_line_forward(params, spec, x):
    """Direct per-example evaluation of the layer recursion for dense nets."""
    outs = []
    for xi in x:
        a = xi
        for i, layer in enumerate(spec.layers):
            z = params.weights[i] @ a / np.sqrt(layer.fan_in) + params.biases[i]
            if i < spec.depth - 1:
                a = get_activation(layer.activation).fn(z)
        outs.append(z)
    return np.array(outs)


def fd_param_grads(params, spec, x, y, step=1e-5):
    """Central finite differences of the batch-mean squared-error loss."""
    def loss(p):
        return batch_loss(forward(p, spec, x).f, y)

    grads = []
    for li in range(spec.depth):
        dw = np.zeros_like(params.weights[li])
        for idx in np.ndindex(*dw.shape):
            p = params.copy()
            p.weights[li][idx] += step
            up = loss(p)
            p.weights[li][idx] -= 2 * step
            down = loss(p)
            dw[idx] = (up - down) / (2 * step)
        db = np.zeros_like(params.biases[li])
        for idx in np.ndindex(*db.shape):
            p = params.copy()
            p.biases[li][idx] += step
            up = loss(p)
            p.biases[li][idx] -= 2 * step
            down = loss(p)
            db[idx] = (up - down) / (2 * step)
        grads.append((dw, db))
    return grads


def rel_err(a, b, floor=1e-8):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def conv2d_reference(x, w, b, kernel, stride, fan_in):
    """Nested-loop 2-D convolution with padding kernel//2, matching the
    matricized kernel layout (out_ch, in_ch * k * k)."""
    bsz, cin, h, wd = x.shape
    cout = w.shape[0]
    pad = kernel // 2
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (wd + 2 * pad - kernel) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w4 = w.reshape(cout, cin, kernel, kernel)
    out = np.zeros((bsz, cout, oh, ow))
    for n in range(bsz):
        for o in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(cin):
                        for ki in range(kernel):
                            for kj in range(kernel):
                                acc += w4[o, c, ki, kj] * \
                                    xp[n, c, i * stride + ki, j * stride + kj]
                    out[n, o, i, j] = acc / np.sqrt(fan_in) + b[o]
    return out
