"""Activation functions that can be programmed into the nonlinear ramp.

Each activation carries its forward map, its inverse (the ramp shape) and the
output span that the converter's codes cover.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .errors import ConfigError, DomainError, RangeError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

# Bounded activations span their full (open) image. Unbounded ones need a clip
# range; with a fitted anchor these keep every 5-bit level within 1 output LSB.
DEFAULT_RANGES = {
    "sigmoid": (0.0, 1.0),
    "tanh": (-1.0, 1.0),
    "softsign": (-1.0, 1.0),
    "linear": (-1.0, 1.0),
    "elu": (-1.0, 4.0),
    "selu": (-1.6, 0.5),
    "softplus": (0.02, 5.25),
}

# Open images; sample points must fall strictly inside them.
_IMAGES = {
    "sigmoid": lambda p: (0.0, 1.0),
    "tanh": lambda p: (-1.0, 1.0),
    "softsign": lambda p: (-1.0, 1.0),
    "linear": lambda p: (-np.inf, np.inf),
    "elu": lambda p: (-p.get("alpha", 1.0), np.inf),
    "selu": lambda p: (-p.get("scale", SELU_LAMBDA) * p.get("alpha", SELU_ALPHA), np.inf),
    "softplus": lambda p: (0.0, np.inf),
    "custom": lambda p: (-np.inf, np.inf),
}


@dataclass(frozen=True)
class ActivationSpec:
    name: str
    forward: Callable = field(compare=False, repr=False)
    inverse: Callable = field(compare=False, repr=False)
    output_range: tuple[float, float]
    params: tuple = ()

    @property
    def f_min(self) -> float:
        return self.output_range[0]

    @property
    def f_max(self) -> float:
        return self.output_range[1]

    def output_lsb(self, n_bits: int) -> float:
        """Width of one output code in activation-output units."""
        return (self.f_max - self.f_min) / 2**n_bits

    def derivative(self, x, h=1e-6):
        x = np.asarray(x, dtype=float)
        return (self.forward(x + h) - self.forward(x - h)) / (2 * h)


def _elu(alpha):
    def fwd(x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))

    def inv(t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, t, np.log1p(np.minimum(t, 0.0) / alpha))

    return fwd, inv


def _selu(alpha, scale):
    def fwd(x):
        x = np.asarray(x, dtype=float)
        return scale * np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))

    def inv(t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, t / scale, np.log1p(np.minimum(t, 0.0) / (scale * alpha)))

    return fwd, inv


def _softsign_inv(t):
    t = np.asarray(t, dtype=float)
    return t / (1.0 - np.abs(t))


def _softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=float))


def bisect_inverse(forward: Callable, tol: float = 1e-12) -> Callable:
    """Build an inverse of a monotone increasing scalar map by bracketing + Brent."""

    def solve(t):
        t = float(t)
        lo, hi = -1.0, 1.0
        for _ in range(64):
            if forward(lo) < t:
                break
            lo *= 2.0
        else:
            raise RangeError(f"cannot bracket inverse at t={t!r} (lower side)")
        for _ in range(64):
            if forward(hi) > t:
                break
            hi *= 2.0
        else:
            raise RangeError(f"cannot bracket inverse at t={t!r} (upper side)")
        if not (lo < hi and np.isfinite(lo) and np.isfinite(hi)):
            raise RangeError(f"cannot bracket inverse at t={t!r}")
        return brentq(lambda x: float(forward(x)) - t, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)

    def inv(t):
        arr = np.asarray(t, dtype=float)
        if arr.ndim == 0:
            return np.float64(solve(arr))
        return np.array([solve(v) for v in arr.ravel()]).reshape(arr.shape)

    return inv


def make_activation(name: str, output_range=None, **params) -> ActivationSpec:
    """Build a named activation. ``custom`` needs ``forward=`` (and optionally ``inverse=``)."""
    name = name.lower()
    if name == "sigmoid":
        fwd, inv = expit, logit
    elif name == "tanh":
        fwd, inv = np.tanh, np.arctanh
    elif name == "softsign":
        fwd, inv = (lambda x: np.asarray(x, dtype=float) / (1.0 + np.abs(x))), _softsign_inv
    elif name == "linear":
        fwd = inv = lambda x: np.asarray(x, dtype=float)
    elif name == "elu":
        fwd, inv = _elu(float(params.get("alpha", 1.0)))
    elif name == "selu":
        fwd, inv = _selu(float(params.get("alpha", SELU_ALPHA)), float(params.get("scale", SELU_LAMBDA)))
    elif name == "softplus":
        fwd = _softplus
        inv = bisect_inverse(_softplus)
    elif name == "custom":
        fwd = params.pop("forward", None)
        if fwd is None:
            raise ConfigError("custom activation needs a forward callable")
        inv = params.pop("inverse", None) or bisect_inverse(fwd)
    else:
        raise ConfigError(f"unknown activation {name!r}")

    if output_range is None:
        if name not in DEFAULT_RANGES:
            raise ConfigError(f"activation {name!r} needs an explicit output_range")
        output_range = DEFAULT_RANGES[name]
    lo, hi = (float(v) for v in output_range)
    if not lo < hi:
        raise ConfigError(f"output_range must be increasing, got {output_range!r}")
    img_lo, img_hi = _IMAGES[name](params)
    if lo < img_lo or hi > img_hi:
        raise RangeError(f"output_range {output_range!r} leaves the image ({img_lo}, {img_hi}) of {name}")
    return ActivationSpec(name, fwd, inv, (lo, hi), tuple(sorted(params.items())))


def check_monotone(act: ActivationSpec, x_lo: float, x_hi: float, samples: int = 2049) -> None:
    xs = np.linspace(x_lo, x_hi, samples)
    ys = np.asarray(act.forward(xs), dtype=float)
    if not np.all(np.diff(ys) > 0):
        raise DomainError(f"{act.name} is not strictly increasing on [{x_lo}, {x_hi}]")


ACTIVATION_NAMES = ("sigmoid", "tanh", "elu", "selu", "softsign", "softplus", "linear")
BENCHMARK_ACTIVATIONS = ("sigmoid", "tanh", "elu", "selu", "softsign", "softplus")
