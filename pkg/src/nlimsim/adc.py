"""Nonlinear in-memory ramp converter: conversion, zero-cross calibration and
error metrology.

Voltages are referred to the differential bitline pair. One MAC integer unit
(one unit cell discharging for one clock) equals one ramp unit step, so the
effective activation is f(scale * MAC) with ``scale`` the ramp unit in
activation-input units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .activations import ActivationSpec
from .analog import ColumnTrace, sample_mismatch
from .config import MacroConfig
from .errors import CalibrationRangeError, ConfigError
from .ramp import (
    InitMode,
    InitPlan,
    Mode,
    QuantizedSteps,
    RampSchedule,
    SamplePoints,
    build_schedule,
    init_plan,
    input_referred_error,
    ramp_levels_units,
    ramp_steps,
    round_half_away,
)


@dataclass(frozen=True)
class AdcConfig:
    activation: ActivationSpec
    n_bits: int = 5
    mode: Mode = Mode.PWM
    calib_rows: int = 3
    calib_pulses: tuple[int, ...] = (1, 2, 4)
    calib_unit: float = 1.0  # ramp unit steps per calibration pulse-cycle
    init_mode: InitMode = InitMode.HALF_SUM
    granularity: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "init_mode", InitMode.parse(self.init_mode))
        object.__setattr__(self, "calib_pulses", tuple(int(p) for p in self.calib_pulses))
        if not 1 <= self.n_bits <= 5:
            raise ConfigError("n_bits must be 1..5")
        if len(self.calib_pulses) != self.calib_rows:
            raise ConfigError("need one calibration pulse count per calibration row")
        if self.calib_unit <= 0:
            raise ConfigError("calib_unit must be positive")

    @property
    def n_levels(self) -> int:
        return 2**self.n_bits - 1

    @property
    def midcode(self) -> int:
        return 2 ** (self.n_bits - 1) - 1

    @property
    def calib_range_steps(self) -> float:
        return sum(self.calib_pulses) * self.calib_unit


@dataclass(frozen=True)
class RampDesign:
    pts: SamplePoints
    qs: QuantizedSteps
    schedule: RampSchedule
    plan: InitPlan
    levels_units: np.ndarray  # ideal ramp levels p = 0 .. 2^n-2, unit steps
    cell_to_step: np.ndarray  # (cells, steps) pulse-cycles each cell adds to each step
    init_vec: np.ndarray  # (cells,) pulse-cycles each cell adds to the initial level
    zero_code: int  # ideal code for a zero pre-activation

    @property
    def scale(self) -> float:
        return self.qs.unit


@lru_cache(maxsize=64)
def design(adc: AdcConfig) -> RampDesign:
    pts, qs = ramp_steps(adc.activation, adc.n_bits, adc.granularity)
    sched = build_schedule(qs, adc.mode, adc.n_bits, adc.init_mode, pts)
    plan = init_plan(qs, adc.n_bits, adc.mode, adc.init_mode, pts)
    n_cells, n_steps = sched.total_cells, qs.n_steps
    m = np.zeros((n_cells, n_steps))
    m[np.arange(n_cells), list(sched.cell_step)] = sched.cell_pulse
    init_vec = np.zeros(n_cells)
    init_vec[list(plan.cells)] = plan.pulses
    act = adc.activation
    zero_code = int(np.sum(pts.t < float(act.forward(0.0))))
    for arr in (m, init_vec):
        arr.setflags(write=False)
    levels = ramp_levels_units(qs, plan.offset_units)
    levels.setflags(write=False)
    return RampDesign(pts, qs, sched, plan, levels, m, init_vec, zero_code)


def check_budget(adc: AdcConfig, cfg: MacroConfig) -> None:
    d = design(adc)
    if d.schedule.total_cells > cfg.adc_rows:
        raise ConfigError(
            f"{adc.n_bits}-bit {adc.mode.value} ramp needs {d.schedule.total_cells} cells, "
            f"the converter block has {cfg.adc_rows} rows"
        )


def mac_rows_available(adc: AdcConfig, cfg: MacroConfig) -> int:
    """MAC rows left after calibration rows (which use spare converter rows when there are enough)."""
    spare = cfg.adc_rows - design(adc).schedule.total_cells
    return cfg.rows if spare >= adc.calib_rows else cfg.rows - adc.calib_rows


@dataclass(frozen=True)
class InitRamp:
    offset_units: int
    offset_volts: float
    plan: InitPlan


def generate_init_ramp(adc: AdcConfig, cfg: MacroConfig) -> InitRamp:
    check_budget(adc, cfg)
    plan = design(adc).plan
    return InitRamp(plan.offset_units, plan.offset_units * cfg.unit_step, plan)


@dataclass(frozen=True)
class Column:
    """Per-column nonidealities: ramp cell currents, calibration cell currents, comparator offset (V)."""

    ramp_factors: np.ndarray
    calib_factors: np.ndarray
    offset: float = 0.0


@dataclass
class ColumnPopulation:
    ramp_factors: np.ndarray  # (columns, ramp cells)
    calib_factors: np.ndarray  # (columns, calibration rows)
    offsets: np.ndarray  # (columns,) volts

    def __len__(self):
        return len(self.offsets)

    def column(self, i: int) -> Column:
        return Column(self.ramp_factors[i], self.calib_factors[i], float(self.offsets[i]))


def ideal_column(adc: AdcConfig, cfg: MacroConfig | None = None) -> Column:
    d = design(adc)
    return Column(np.ones(d.schedule.total_cells), np.ones(adc.calib_rows), cfg.sa_offset if cfg else 0.0)


def sample_columns(adc: AdcConfig, cfg: MacroConfig, n_columns: int, seed: int,
                   sigma: float | None = None, offset_sigma: float | None = None) -> ColumnPopulation:
    """Seeded columns; column i depends only on (seed, i), not on the population size."""
    check_budget(adc, cfg)
    d = design(adc)
    offset_sigma = cfg.sa_offset_sigma if offset_sigma is None else offset_sigma
    ramp = np.empty((n_columns, d.schedule.total_cells))
    cal = np.empty((n_columns, adc.calib_rows))
    off = np.empty(n_columns)
    root = np.random.SeedSequence(seed)
    for i in range(n_columns):
        rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(i,)))
        ramp[i] = sample_mismatch(cfg, rng, (d.schedule.total_cells,), sigma)
        cal[i] = sample_mismatch(cfg, rng, (adc.calib_rows,), sigma)
        off[i] = cfg.sa_offset + (rng.normal(0.0, offset_sigma) if offset_sigma > 0 else 0.0)
    return ColumnPopulation(ramp, cal, off)


@dataclass(frozen=True)
class CalibState:
    weights: tuple[int, ...]
    pulses: tuple[int, ...] = (1, 2, 4)
    unit: float = 1.0

    @property
    def offset_steps(self) -> float:
        return self.unit * sum(w * p for w, p in zip(self.weights, self.pulses))

    @classmethod
    def zero(cls, adc: AdcConfig) -> "CalibState":
        return cls((0,) * adc.calib_rows, adc.calib_pulses, adc.calib_unit)


def ramp_level_units(adc: AdcConfig, ramp_factors=None) -> np.ndarray:
    """Ramp levels (unit steps) for one column or a (columns, cells) stack of current factors."""
    d = design(adc)
    if ramp_factors is None:
        return np.array(d.levels_units)
    f = np.asarray(ramp_factors, dtype=float)
    steps = f @ d.cell_to_step
    init = np.sign(d.plan.offset_units) * (f @ d.init_vec)
    zero = np.zeros(steps.shape[:-1] + (1,))
    return init[..., None] + np.concatenate([zero, np.cumsum(steps, axis=-1)], axis=-1)


def calibration_units(calib: CalibState | None, calib_factors=None) -> float:
    if calib is None:
        return 0.0
    f = np.ones(len(calib.weights)) if calib_factors is None else np.asarray(calib_factors)
    return calib.unit * float(np.sum(np.array(calib.weights) * np.array(calib.pulses) * f))


def thresholds(adc: AdcConfig, cfg: MacroConfig, column: Column | None = None,
               calib: CalibState | None = None) -> np.ndarray:
    """Column-referred comparator thresholds (V): code = #{thresholds < v_mac}."""
    u = cfg.unit_step
    if column is None:
        return u * ramp_level_units(adc) - u * calibration_units(calib)
    levels = ramp_level_units(adc, column.ramp_factors)
    return u * levels + column.offset - u * calibration_units(calib, column.calib_factors)


def population_thresholds(adc: AdcConfig, cfg: MacroConfig, pop: ColumnPopulation, calibs=None) -> np.ndarray:
    u = cfg.unit_step
    thr = u * ramp_level_units(adc, pop.ramp_factors) + pop.offsets[:, None]
    if calibs is not None:
        cal = np.array([calibration_units(c, pop.calib_factors[i]) for i, c in enumerate(calibs)])
        thr = thr - u * cal[:, None]
    return thr


def codes_from_thresholds(v_mac, thr) -> np.ndarray:
    """Count of thresholds strictly below each input (ties resolve to the lower code)."""
    thr = np.asarray(thr)
    v = np.asarray(v_mac, dtype=float)
    if thr.ndim == 1:
        return np.searchsorted(thr, v, side="left")
    return (thr < v[..., None]).sum(axis=-1)


@dataclass(frozen=True)
class ConversionResult:
    code: int
    threshold_cycle: int
    trace: ColumnTrace | None = field(default=None, compare=False)


def threshold_cycle(adc: AdcConfig, code: int) -> int:
    """Ramp-phase clock cycle at which the comparator flips for ``code`` (= ramp length at saturation)."""
    d = design(adc)
    q = d.qs.quantized
    if adc.mode is Mode.PWM:
        return int(np.sum(q[:code]))
    return int(min(code, len(q)))


def convert(v_mac: float, adc: AdcConfig, cfg: MacroConfig, column: Column | None = None,
            calib: CalibState | None = None, trace: ColumnTrace | None = None) -> ConversionResult:
    thr = thresholds(adc, cfg, column, calib)
    code = int(codes_from_thresholds(v_mac, thr))
    return ConversionResult(code, threshold_cycle(adc, code), trace)


def realize_correction(steps: float, adc: AdcConfig, saturate: bool = False) -> tuple[int, ...]:
    """Ternary calibration weights whose pulses sum to ``steps`` ramp steps (greedy over pulses)."""
    units = int(round_half_away(steps / adc.calib_unit))
    mag = abs(units)
    if saturate:
        mag = min(mag, sum(adc.calib_pulses))
    elif mag > sum(adc.calib_pulses):
        raise CalibrationRangeError(
            f"offset of {steps:g} steps exceeds the calibration range of +/-{adc.calib_range_steps:g}"
        )
    sign = 1 if units > 0 else -1
    weights = [0] * adc.calib_rows
    for idx in sorted(range(adc.calib_rows), key=lambda i: -adc.calib_pulses[i]):
        if adc.calib_pulses[idx] <= mag:
            weights[idx] = sign
            mag -= adc.calib_pulses[idx]
    if mag:
        raise CalibrationRangeError(f"pulses {adc.calib_pulses} cannot realize {units} units")
    return tuple(weights)


def calibrate_column(column: Column | None, adc: AdcConfig, cfg: MacroConfig, max_iter: int = 3,
                     saturate: bool = False) -> CalibState:
    """Zero-cross calibration: read the code at MAC = 0 and cancel its deviation.

    Starts from zero calibration weights every time, so repeated calls agree.
    Offsets beyond the calibration range raise, or clamp to full scale with
    ``saturate``.
    """
    target = design(adc).zero_code
    state = CalibState.zero(adc)
    correction = 0.0
    for _ in range(max_iter):
        d = convert(0.0, adc, cfg, column, state).code - target
        if d == 0:
            break
        correction -= d
        state = CalibState(realize_correction(correction, adc, saturate), adc.calib_pulses, adc.calib_unit)
    return state


def calibrate_population(pop: ColumnPopulation, adc: AdcConfig, cfg: MacroConfig,
                         saturate: bool = True) -> list[CalibState]:
    return [calibrate_column(pop.column(i), adc, cfg, saturate=saturate) for i in range(len(pop))]


def output_level_errors(adc: AdcConfig, cfg: MacroConfig, thr) -> np.ndarray:
    """Deviation of each code transition from the ideal transfer, in output LSBs."""
    d = design(adc)
    x = np.asarray(thr) / cfg.unit_step * d.scale
    act = adc.activation
    return (np.asarray(act.forward(x), dtype=float) - d.pts.t) / act.output_lsb(adc.n_bits)


def sweep_transitions(thr, sweep_points: int, n_levels: int) -> np.ndarray:
    """Estimate transition voltages from a dense input sweep (first point reaching each code)."""
    thr = np.atleast_2d(thr)
    span = thr[:, -1] - thr[:, 0]
    lo = thr[:, 0] - 0.05 * span - 1e-6
    hi = thr[:, -1] + 0.05 * span + 1e-6
    out = np.empty_like(thr)
    for c in range(thr.shape[0]):
        v = np.linspace(lo[c], hi[c], sweep_points)
        codes = codes_from_thresholds(v, thr[c])
        for i in range(n_levels):
            idx = np.searchsorted(codes, i + 1, side="left")
            out[c, i] = v[min(idx, sweep_points - 1)]
    return out


def measure_inl(adc: AdcConfig, cfg: MacroConfig, thr, sweep_points: int | None = None) -> float:
    """Average INL (LSB): mean |error| over the 2^n - 1 transitions, averaged over columns."""
    thr = np.atleast_2d(thr)
    if sweep_points:
        thr = sweep_transitions(thr, sweep_points, adc.n_levels)
    return float(np.mean(np.abs(output_level_errors(adc, cfg, thr))))


def column_rmse(adc: AdcConfig, cfg: MacroConfig, thr) -> np.ndarray:
    """Per-column RMS transfer error in output LSBs."""
    e = output_level_errors(adc, cfg, np.atleast_2d(thr))
    return np.sqrt(np.mean(e**2, axis=-1))


@dataclass(frozen=True)
class CalibrationStudy:
    pre_rmse: np.ndarray
    post_rmse: np.ndarray
    inl_pre: float
    inl_post: float
    calibs: list

    @property
    def improvement(self) -> float:
        return float(np.mean(self.pre_rmse) / np.mean(self.post_rmse))


def calibration_study(adc: AdcConfig, cfg: MacroConfig, n_columns: int, seed: int, sigma=None,
                      offset_sigma=None) -> CalibrationStudy:
    pop = sample_columns(adc, cfg, n_columns, seed, sigma, offset_sigma)
    calibs = calibrate_population(pop, adc, cfg)
    pre = population_thresholds(adc, cfg, pop)
    post = population_thresholds(adc, cfg, pop, calibs)
    return CalibrationStudy(
        column_rmse(adc, cfg, pre),
        column_rmse(adc, cfg, post),
        measure_inl(adc, cfg, pre),
        measure_inl(adc, cfg, post),
        calibs,
    )


def error_decomposition(act: ActivationSpec, cfg: MacroConfig, n_runs: int, seed: int,
                        bits=(1, 2, 3, 4, 5), mode=Mode.PWM, granularity: int = 1,
                        sigma: float | None = None) -> list[dict]:
    """Quantization vs. mismatch error of the ramp, per resolution, in ramp LSBs.

    Quantization error compares the integer ramp with the ideal inverse;
    mismatch error compares a Monte Carlo ramp with the integer ramp.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    rows = []
    for n in bits:
        adc = AdcConfig(act, n_bits=n, mode=mode, calib_rows=0, calib_pulses=(), granularity=granularity)
        d = design(adc)
        q_err = input_referred_error(d.pts, d.qs, d.levels_units)
        rng = np.random.default_rng([seed, n])
        factors = sample_mismatch(cfg, rng, (n_runs, d.schedule.total_cells), sigma)
        mm = (ramp_level_units(adc, factors) - d.levels_units) * d.qs.unit / d.qs.lsb
        mm_rmse = np.sqrt(np.mean(mm**2, axis=-1))
        rows.append({
            "bits": n,
            "cells": int(d.qs.total) if d.qs.n_steps else 0,
            "quant_rmse": float(np.sqrt(np.mean(q_err**2))),
            "mismatch_mean": float(mm_rmse.mean()),
            "mismatch_std": float(mm_rmse.std()),
        })
    return rows


def inl_rows(adc: AdcConfig, cfg: MacroConfig, thr, sweep_points: int | None = None, first_column: int = 0):
    """(column, code, ideal, measured, inl) per transition; levels in LSB above f_min."""
    thr = np.atleast_2d(thr)
    if sweep_points:
        thr = sweep_transitions(thr, sweep_points, adc.n_levels)
    d = design(adc)
    act = adc.activation
    lsb = act.output_lsb(adc.n_bits)
    x = thr / cfg.unit_step * d.scale
    measured = (np.asarray(act.forward(x), dtype=float) - act.f_min) / lsb
    rows = []
    for c in range(thr.shape[0]):
        for i in range(adc.n_levels):
            ideal = i + 1
            rows.append((first_column + c, i + 1, ideal, measured[c, i], abs(measured[c, i] - ideal)))
    return rows


def calibration_to_json(chip_seed: int, calibs, adc: AdcConfig) -> dict:
    return {
        "chip_seed": int(chip_seed),
        "calib_pulses": list(adc.calib_pulses),
        "calib_unit": adc.calib_unit,
        "columns": {str(i): list(c.weights) for i, c in enumerate(calibs)},
    }


def calibration_from_json(doc: dict) -> dict:
    """{(chip_seed, column): CalibState}"""
    pulses = tuple(doc["calib_pulses"])
    unit = float(doc["calib_unit"])
    seed = int(doc["chip_seed"])
    return {(seed, int(k)): CalibState(tuple(v), pulses, unit) for k, v in doc["columns"].items()}
