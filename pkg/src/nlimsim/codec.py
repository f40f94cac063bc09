"""Weight quantization and multi-bit encoding onto ternary bitcells.

A signed n_w-bit weight is stored sign-magnitude across a small group of
ternary cells. Each cell's significance is its rail current ratio times its
input pulse multiplier, so a 5-bit weight needs four cells with
significances 8, 4, 2, 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .analog import Rail
from .errors import ConfigError, InvalidEncoding, RangeError

TERNARY_THRESHOLD = 0.7


@dataclass(frozen=True)
class MultiBitScheme:
    n_w: int
    pulse_multipliers: tuple[int, ...]
    rail_assignment: tuple[Rail, ...]
    n_bwr: float

    @property
    def cells_per_weight(self) -> int:
        return len(self.pulse_multipliers)

    @property
    def latency_clocks(self) -> int:
        return max(self.pulse_multipliers)

    @property
    def magnitudes(self) -> tuple[int, ...]:
        return tuple(int(round(p * (self.n_bwr if r is Rail.MSB else 1.0)))
                     for p, r in zip(self.pulse_multipliers, self.rail_assignment))

    @property
    def max_value(self) -> int:
        return 2 ** (self.n_w - 1) - 1

    def rail_ratios(self) -> np.ndarray:
        return np.array([self.n_bwr if r is Rail.MSB else 1.0 for r in self.rail_assignment])


_SCHEMES = {
    2: ((1,), (Rail.LSB,), 1.0),
    3: ((1, 1), (Rail.MSB, Rail.LSB), 2.0),
    4: ((2, 1, 1), (Rail.MSB, Rail.MSB, Rail.LSB), 2.0),
    5: ((2, 1, 2, 1), (Rail.MSB, Rail.MSB, Rail.LSB, Rail.LSB), 4.0),
}


def scheme_for(n_w: int) -> MultiBitScheme:
    if n_w not in _SCHEMES:
        raise ConfigError(f"weight precision must be 2..5 bits, got {n_w}")
    pulses, rails, n_bwr = _SCHEMES[n_w]
    return MultiBitScheme(n_w, pulses, rails, n_bwr)


@dataclass(frozen=True)
class EncodedWeight:
    cell_weights: tuple[int, ...]
    scheme: MultiBitScheme


def ternarize(weights) -> np.ndarray:
    """+1 above 0.7*m, -1 below -0.7*m, else 0; m is the mean |w| of the whole matrix."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("empty weight matrix")
    thr = TERNARY_THRESHOLD * np.mean(np.abs(w))
    return np.where(w > thr, 1, np.where(w < -thr, -1, 0)).astype(np.int64)


def quant_step(weights, n_w: int) -> float:
    """Step between adjacent integer levels. For 2 bits half a step equals 0.7*m."""
    m = float(np.mean(np.abs(np.asarray(weights, dtype=float))))
    return 2 * TERNARY_THRESHOLD * m / 2 ** (n_w - 2)


def quantize_weights(weights, n_w: int):
    """Integer weights in [-(2^(n_w-1)-1), 2^(n_w-1)-1] and the step they are scaled by."""
    w = np.asarray(weights, dtype=float)
    if n_w == 2:
        return ternarize(w), quant_step(w, 2)
    step = quant_step(w, n_w)
    qmax = 2 ** (n_w - 1) - 1
    if step == 0:
        return np.zeros(w.shape, dtype=np.int64), 0.0
    q = np.clip(np.sign(w) * np.floor(np.abs(w) / step + 0.5), -qmax, qmax)
    return q.astype(np.int64), step


def encode_multibit(w: int, scheme: MultiBitScheme) -> EncodedWeight:
    w = int(w)
    if abs(w) > scheme.max_value:
        raise RangeError(f"{w} does not fit a signed {scheme.n_w}-bit weight")
    sign = 1 if w > 0 else -1
    rem = abs(w)
    cells = []
    for mag in scheme.magnitudes:
        if rem >= mag:
            cells.append(sign)
            rem -= mag
        else:
            cells.append(0)
    return EncodedWeight(tuple(cells), scheme)


def decode_multibit(e: EncodedWeight) -> int:
    nz = {c for c in e.cell_weights if c != 0}
    if len(nz) > 1:
        raise InvalidEncoding(f"mixed-sign cells {e.cell_weights!r}")
    if any(c not in (-1, 0, 1) for c in e.cell_weights):
        raise InvalidEncoding(f"non-ternary cell values {e.cell_weights!r}")
    return int(sum(c * m for c, m in zip(e.cell_weights, e.scheme.magnitudes)))


def encode_matrix(w_int, scheme: MultiBitScheme) -> np.ndarray:
    """(rows, cols) integers -> (rows, cells_per_weight, cols) ternary cell values."""
    w = np.asarray(w_int, dtype=np.int64)
    if np.any(np.abs(w) > scheme.max_value):
        raise RangeError(f"weights exceed the signed {scheme.n_w}-bit range")
    sign = np.sign(w)
    rem = np.abs(w)
    out = np.zeros((w.shape[0], scheme.cells_per_weight, w.shape[1]), dtype=np.int64)
    for j, mag in enumerate(scheme.magnitudes):
        bit = rem >= mag
        out[:, j, :] = np.where(bit, sign, 0)
        rem = rem - bit * mag
    return out


def decode_matrix(cells, scheme: MultiBitScheme) -> np.ndarray:
    c = np.asarray(cells, dtype=np.int64)
    mags = np.array(scheme.magnitudes)[None, :, None]
    pos = (c > 0).any(axis=1)
    neg = (c < 0).any(axis=1)
    if np.any(pos & neg):
        raise InvalidEncoding("mixed-sign cells in encoded matrix")
    return (c * mags).sum(axis=1)


def scheme_costs(n_w: int, method: str = "proposed") -> tuple[int, int]:
    """(cells, input latency in clocks) to hold one signed n_w-bit weight."""
    if not 2 <= n_w <= 5:
        raise ConfigError("n_w must be 2..5")
    levels = 2 ** (n_w - 1) - 1
    if method == "proposed":
        s = scheme_for(n_w)
        return s.cells_per_weight, s.latency_clocks
    if method == "pwm_only":
        return 1, levels
    if method == "multicell_only":
        return levels, 1
    raise ConfigError(f"unknown method {method!r}")


def read_matrix_csv(path) -> np.ndarray:
    """Row-major numeric matrix; blank lines and lines starting with '#' are skipped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if line.strip() and not line.startswith("#"))]
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def encoded_to_json(cells, scheme: MultiBitScheme) -> str:
    doc = {
        "n_w": scheme.n_w,
        "n_bwr": scheme.n_bwr,
        "magnitudes": list(scheme.magnitudes),
        "pulse_multipliers": list(scheme.pulse_multipliers),
        "rails": [r.value for r in scheme.rail_assignment],
        "cells": np.asarray(cells).tolist(),
    }
    return json.dumps(doc, sort_keys=True, indent=1)
