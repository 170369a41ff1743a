"""Pointwise activation functions and their derivatives."""

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    # True when first and second derivatives are bounded; relu is not.
    smooth: bool


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_deriv(z):
    # derivative at exactly 0 defined as 0
    return (z > 0.0).astype(np.float64)


def _tanh_deriv(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _erf_deriv(z):
    return 2.0 * _INV_SQRT_PI * np.exp(-z * z)


ACTIVATIONS = {
    "relu": Activation("relu", _relu, _relu_deriv, smooth=False),
    "tanh": Activation("tanh", np.tanh, _tanh_deriv, smooth=True),
    "erf": Activation("erf", lambda z: _erf(z), _erf_deriv, smooth=True),
    "identity": Activation("identity", lambda z: z, lambda z: np.ones_like(z), smooth=True),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None
