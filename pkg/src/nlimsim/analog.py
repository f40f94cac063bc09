"""Behavioral model of the bitcell array: signed ternary multiply, bitline
discharge, dynamic range, dual-supply bit weighting, mismatch and PTAT bias.

Sign convention: V_MAC = V_RBLR - V_RBLL. A product of +1 discharges RBLL
(raising V_MAC), a product of -1 discharges RBLR.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.stats import truncnorm

from .config import BOLTZMANN_OVER_Q, DR_PRESETS, MacroConfig
from .errors import ConfigError

TRUNCATE_SIGMAS = 4.0


class Rail(str, Enum):
    MSB = "MSB"
    LSB = "LSB"


@dataclass(frozen=True)
class CellState:
    weight: int
    rail: Rail = Rail.LSB
    mismatch_factor: float = 1.0
    pulse_multiplier: int = 1

    def __post_init__(self):
        if self.weight not in (-1, 0, 1):
            raise ValueError(f"ternary weight expected, got {self.weight!r}")
        if not self.mismatch_factor > 0:
            raise ValueError("mismatch_factor must be positive")


@dataclass(frozen=True)
class SupplyPair:
    v_msb: float
    v_lsb: float
    n_bwr: float

    @classmethod
    def for_ratio(cls, n_bwr: float, cfg: MacroConfig, v_lsb: float = 0.42) -> "SupplyPair":
        return cls(v_lsb + delta_vdd_for_ratio(n_bwr, cfg), v_lsb, float(n_bwr))

    def ratio(self, rail: Rail) -> float:
        return self.n_bwr if rail is Rail.MSB else 1.0


@dataclass
class ColumnTrace:
    v_rbll: np.ndarray
    v_rblr: np.ndarray
    v_mac: float
    dr_violation: bool = False
    discharge_events: int = 0

    def rows(self):
        for c, (vl, vr) in enumerate(zip(self.v_rbll, self.v_rblr)):
            yield c, float(vl), float(vr)


@dataclass(frozen=True)
class DRCheck:
    ok: bool
    min_voltage: float
    floor: float
    first_violation_cycle: int | None = None


def ternary_multiply(input_sign: int, pulse_cycles: int, cell: CellState, rail_ratio: float = 1.0):
    """Discharge (in unit cell-cycles) on (RBLL, RBLR) for one cell."""
    if input_sign not in (-1, 1):
        raise ValueError("input sign must be -1 or +1")
    if pulse_cycles < 0:
        raise ValueError("pulse_cycles must be >= 0")
    amount = pulse_cycles * cell.pulse_multiplier * rail_ratio * cell.mismatch_factor
    product = input_sign * cell.weight
    if product > 0:
        return amount, 0.0
    if product < 0:
        return 0.0, amount
    return 0.0, 0.0


def array_mac_units(weights, signed_pulses, rail_ratio=None, pulse_mult=None, factors=None):
    """Vectorized MAC over an array.

    ``weights`` is (rows, cols) ternary, ``signed_pulses`` is (rows,) signed input
    pulse counts. Returns (left_units, right_units, events) per column, where
    units are unit-cell-cycles. Without ``factors`` every product is an exact
    integer multiple of the rail ratios.
    """
    w = np.asarray(weights)
    x = np.asarray(signed_pulses)
    rows = w.shape[0]
    mult = np.ones(rows) if pulse_mult is None else np.asarray(pulse_mult, dtype=float)
    ratio = np.ones(rows) if rail_ratio is None else np.asarray(rail_ratio, dtype=float)
    drive = (x * mult)[:, None] * w
    current = ratio[:, None] if factors is None else ratio[:, None] * np.asarray(factors, dtype=float)
    contrib = drive * current
    left = np.where(drive > 0, contrib, 0.0).sum(axis=0)
    right = np.where(drive < 0, -contrib, 0.0).sum(axis=0)
    events = (np.abs(x * mult)[:, None] * (w != 0)).sum(axis=0)
    return left, right, events


def mac_voltage(cells: Sequence[CellState], inputs, cfg: MacroConfig, supplies: SupplyPair | None = None,
                with_mismatch: bool = True) -> ColumnTrace:
    """Simulate one column cycle by cycle. ``inputs`` is a sequence of (sign, pulse_cycles)."""
    if len(cells) != len(inputs):
        raise ValueError("one input per cell expected")
    supplies = supplies or SupplyPair(cfg.vdd_core, cfg.vdd_core, 1.0)
    n = len(cells)
    left_i = np.zeros(n)
    right_i = np.zeros(n)
    pulses = np.zeros(n, dtype=np.int64)
    for i, (cell, (sign, p)) in enumerate(zip(cells, inputs)):
        ratio = supplies.ratio(cell.rail)
        if with_mismatch:
            ratio *= cell.mismatch_factor
        l_amt, r_amt = ternary_multiply(sign, 1, CellState(cell.weight, cell.rail, 1.0, 1), ratio)
        left_i[i], right_i[i] = l_amt, r_amt
        pulses[i] = p * cell.pulse_multiplier
    n_cyc = int(pulses.max(initial=0))
    cyc = np.arange(0, n_cyc + 1)
    active = np.minimum(cyc[:, None], pulses[None, :])
    u = cfg.unit_step
    v_rbll = cfg.vdd - u * (active @ left_i)
    v_rblr = cfg.vdd - u * (active @ right_i)
    left_total = float(left_i @ pulses)
    right_total = float(right_i @ pulses)
    trace = ColumnTrace(
        v_rbll=v_rbll,
        v_rblr=v_rblr,
        v_mac=u * (left_total - right_total),
        discharge_events=int(sum(p for p, c in zip(pulses, cells) if c.weight != 0)),
    )
    trace.dr_violation = not check_dynamic_range(trace, cfg).ok
    return trace


def check_dynamic_range(trace: ColumnTrace, cfg: MacroConfig, preset: str | None = None) -> DRCheck:
    """A column is in range while both bitlines stay at or above VDD - DR limit."""
    limit = DR_PRESETS[preset] if preset is not None else cfg.dr_limit
    floor = cfg.vdd - limit
    lowest = np.minimum(np.asarray(trace.v_rbll), np.asarray(trace.v_rblr))
    bad = np.flatnonzero(lowest < floor - 1e-12)
    return DRCheck(
        ok=bad.size == 0,
        min_voltage=float(lowest.min()),
        floor=floor,
        first_violation_cycle=int(bad[0]) if bad.size else None,
    )


def n_bwr_from_supplies(delta_vdd: float, cfg: MacroConfig) -> float:
    """Subthreshold current ratio for a supply step: exp(kappa * dV / U_T)."""
    if delta_vdd < 0:
        raise ValueError("delta_vdd must be >= 0")
    return float(np.exp(cfg.kappa * delta_vdd / cfg.thermal_voltage))


def delta_vdd_for_ratio(n_bwr: float, cfg: MacroConfig) -> float:
    return float(cfg.thermal_voltage / cfg.kappa * np.log(n_bwr))


def sample_mismatch(cfg: MacroConfig, seed, shape=(), sigma: float | None = None) -> np.ndarray:
    """Unit-current multipliers, normal around 1 and truncated at +/-4 sigma."""
    sigma = cfg.sigma_iu if sigma is None else sigma
    if not 0 <= sigma < 0.25:
        raise ConfigError("mismatch sigma must be in [0, 0.25)")
    if sigma == 0:
        return np.ones(shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return truncnorm.rvs(-TRUNCATE_SIGMAS, TRUNCATE_SIGMAS, loc=1.0, scale=sigma, size=shape, random_state=rng)


def sigma_for_ratio_spread(relative_std: float) -> float:
    """Per-cell sigma that gives a MSB/LSB current ratio with the requested relative spread."""
    return relative_std / np.sqrt(2.0)


def sample_n_bwr(target: float, cfg: MacroConfig, seed, count: int, sigma: float | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    msb = sample_mismatch(cfg, rng, (count,), sigma)
    lsb = sample_mismatch(cfg, rng, (count,), sigma)
    return target * msb / lsb


def ptat_n_bwr(temperature: float, r_ohms: float, iptat_coeff: float, cfg: MacroConfig,
               slope_error: float = 0.0, t_ref: float = 300.0) -> float:
    """Bit-weighting ratio when V_MSB - V_LSB = I_PTAT * R.

    ``slope_error`` perturbs the PTAT slope around ``t_ref`` (0 is ideal).
    """
    if not 273.15 <= temperature <= 343.15:
        raise ValueError("temperature must lie in [273.15, 343.15] K (0 to 70 C)")
    i_ptat = iptat_coeff * (t_ref + (1.0 + slope_error) * (temperature - t_ref))
    u_t = BOLTZMANN_OVER_Q * temperature
    return float(np.exp(cfg.kappa * r_ohms * i_ptat / u_t))


def ptat_resistor_for(target: float, iptat_coeff: float, cfg: MacroConfig) -> float:
    """Resistor that yields ``target`` under ideal PTAT bias (temperature-independent)."""
    return float(np.log(target) * BOLTZMANN_OVER_Q / (cfg.kappa * iptat_coeff))


def measure_n_bwr(w_cal, signed_pulses, n_bwr_actual: float, msb_factors=None, lsb_factors=None) -> float:
    """On-chip ratio estimate: same inputs and weights, once on the MSB rail and once on LSB.

    Both MAC values are read through a linear converter (one code per unit step).
    """
    w = np.asarray(w_cal)[:, None]
    ml, mr, _ = array_mac_units(w, signed_pulses, np.full(len(w), n_bwr_actual), factors=msb_factors)
    ll, lr, _ = array_mac_units(w, signed_pulses, np.ones(len(w)), factors=lsb_factors)
    msb_code = np.round(ml - mr)[0]
    lsb_code = np.round(ll - lr)[0]
    if lsb_code == 0:
        raise ValueError("calibration weights/inputs give a zero LSB reading")
    return float(msb_code / lsb_code)


def tune_resistor_code(target: float, measure: Callable[[int], float], code_bits: int = 6) -> int:
    """Binary search over a programmable resistor code; ``measure`` must increase with code."""
    lo, hi = 0, 2**code_bits - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if measure(mid) < target:
            lo = mid + 1
        else:
            hi = mid
    if lo > 0 and abs(measure(lo - 1) - target) <= abs(measure(lo) - target):
        return lo - 1
    return lo
