"""Construction of the stepped nonlinear ramp reference.

The ramp is the inverse of the target activation, sampled at equidistant
output levels, differenced, and quantized to integer multiples of the
smallest step. Each integer step is realized either as one bitcell driven
for several cycles (PWM) or as several bitcells driven for one cycle (MCL).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .activations import ActivationSpec, check_monotone
from .errors import ConfigError, DomainError

MAX_BITS = 5


class Mode(str, Enum):
    PWM = "PWM"
    MCL = "MCL"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown ramp mode {value!r} (expected pwm or mcl)") from None


class InitMode(str, Enum):
    HALF_SUM = "half_sum"  # half of the total step sum
    FIRST_STEPS = "first_steps"  # sum of the first 2^(n-1)-1 steps
    FIT = "fit"  # least-squares anchor against the ideal inverse

    @classmethod
    def parse(cls, value) -> "InitMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown init mode {value!r}") from None


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class SamplePoints:
    n_bits: int
    t: np.ndarray
    v: np.ndarray

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class QuantizedSteps:
    deltas: np.ndarray
    lsb: float
    quantized: np.ndarray | None = None
    granularity: int = 1

    @property
    def unit(self) -> float:
        """Activation-input distance realized by one unit cell-cycle."""
        return self.lsb / self.granularity

    @property
    def total(self) -> int:
        return int(np.sum(self.quantized))

    @property
    def n_steps(self) -> int:
        return len(self.deltas)


@dataclass(frozen=True)
class InitPlan:
    """Cells fired together before the ramp to set the negative starting level.

    ``offset_units`` is the signed starting level of the ramp in unit steps;
    the cells are the first ramp cells, reused on the opposite bitline.
    """

    offset_units: int
    cells: tuple[int, ...]
    pulses: tuple[int, ...]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def cycles(self) -> int:
        return max(self.pulses, default=0)


@dataclass(frozen=True)
class RampSchedule:
    mode: Mode
    per_step: tuple[tuple[int, int], ...]  # (cell_count, pulse_cycles) per step
    init_cells: int
    init_pulse_cycles: int
    total_cells: int
    total_cycles: int
    cell_step: tuple[int, ...]  # ramp step driven by each physical cell
    cell_pulse: tuple[int, ...]  # cycles each physical cell is driven during the ramp


def sample_inverse(act: ActivationSpec, n_bits: int) -> SamplePoints:
    if not 1 <= n_bits <= MAX_BITS:
        raise ConfigError(f"n_bits must be in 1..{MAX_BITS}, got {n_bits}")
    k = np.arange(1, 2**n_bits)
    t = act.f_min + k * (act.f_max - act.f_min) / 2**n_bits
    v = np.asarray(act.inverse(t), dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{act.name} inverse is not finite on the sampled span")
    if len(v) > 1:
        if not np.all(np.diff(v) > 0):
            raise DomainError(f"{act.name} inverse samples are not strictly increasing")
        check_monotone(act, v[0], v[-1])
    return SamplePoints(n_bits, t, v)


def step_deltas(pts: SamplePoints) -> QuantizedSteps:
    deltas = np.diff(pts.v)
    if len(deltas) and not np.all(deltas > 0):
        raise DomainError("ramp steps must be strictly positive")
    # A 1-bit ramp has no steps; one unit is then one activation-input unit.
    lsb = float(deltas.min()) if len(deltas) else 1.0
    return QuantizedSteps(deltas=deltas, lsb=lsb)


def quantize_steps(qs: QuantizedSteps, granularity: int = 1) -> QuantizedSteps:
    """Fill in integer step weights. ``granularity`` > 1 splits the LSB into finer unit cells."""
    if granularity < 1:
        raise ConfigError("granularity must be >= 1")
    unit = qs.lsb / granularity
    q = round_half_away(qs.deltas / unit).astype(np.int64)
    return replace(qs, quantized=q, granularity=int(granularity))


def ramp_steps(act: ActivationSpec, n_bits: int, granularity: int = 1):
    """Shortcut: sample, difference and quantize in one call."""
    pts = sample_inverse(act, n_bits)
    return pts, quantize_steps(step_deltas(pts), granularity)


def init_target_units(qs: QuantizedSteps, n_bits: int, init_mode=InitMode.HALF_SUM, pts: SamplePoints | None = None) -> int:
    """Number of unit steps the ramp starts below zero."""
    init_mode = InitMode.parse(init_mode)
    q = qs.quantized
    n_init = 2 ** (n_bits - 1) - 1
    if n_init == 0:
        return 0
    if init_mode is InitMode.HALF_SUM:
        return int(round_half_away(q.sum() / 2))
    if init_mode is InitMode.FIRST_STEPS:
        return int(q[:n_init].sum())
    if pts is None:
        raise ConfigError("fit init mode needs the sample points")
    cum = np.concatenate([[0], np.cumsum(q)])
    return int(round_half_away(np.mean(cum - pts.v / qs.unit)))


def init_plan(qs: QuantizedSteps, n_bits: int, mode=Mode.PWM, init_mode=InitMode.HALF_SUM, pts=None) -> InitPlan:
    mode = Mode.parse(mode)
    n_init = 2 ** (n_bits - 1) - 1
    target = init_target_units(qs, n_bits, init_mode, pts)
    q = qs.quantized
    cells = tuple(range(n_init))
    if mode is Mode.PWM and target == int(q[:n_init].sum()):
        pulses = tuple(int(v) for v in q[:n_init])
    elif n_init:
        base, rem = divmod(abs(target), n_init)
        pulses = tuple([base + 1] * rem + [base] * (n_init - rem))
    else:
        pulses = ()
    return InitPlan(offset_units=-target, cells=cells, pulses=pulses)


def build_schedule(qs: QuantizedSteps, mode, n_bits: int | None = None, init_mode=InitMode.HALF_SUM, pts=None) -> RampSchedule:
    mode = Mode.parse(mode)
    q = [int(v) for v in qs.quantized]
    if n_bits is None:
        n_bits = int(round(math.log2(len(q) + 2)))
    if mode is Mode.PWM:
        per_step = tuple((1, v) for v in q)
        cell_step = tuple(range(len(q)))
        cell_pulse = tuple(q)
    else:
        per_step = tuple((v, 1) for v in q)
        cell_step = tuple(k for k, v in enumerate(q) for _ in range(v))
        cell_pulse = (1,) * sum(q)
    plan = init_plan(qs, n_bits, mode, init_mode, pts)
    return RampSchedule(
        mode=mode,
        per_step=per_step,
        init_cells=plan.n_cells,
        init_pulse_cycles=plan.cycles,
        total_cells=sum(c for c, _ in per_step),
        total_cycles=sum(p for _, p in per_step),
        cell_step=cell_step,
        cell_pulse=cell_pulse,
    )


def schedule_latency(sched: RampSchedule) -> int:
    """Ramp-phase clock cycles (the initial ramp overlaps the MAC phase and is not counted)."""
    return sched.total_cycles


def ideal_ramp(qs: QuantizedSteps, cfg=None, unit_step: float | None = None) -> np.ndarray:
    """Ramp voltage at clock cycles p = 0 .. 2^n - 2 (p = 0 is the initial level).

    The initial level is minus half the total step sum, so the last level is
    its mirror image.
    """
    if unit_step is None:
        unit_step = cfg.unit_step if cfg is not None else 1.0
    q = np.asarray(qs.quantized, dtype=float)
    v_init = -unit_step * q.sum() / 2
    return v_init + unit_step * np.concatenate([[0.0], np.cumsum(q)])


def ramp_levels_units(qs: QuantizedSteps, offset_units: float) -> np.ndarray:
    return offset_units + np.concatenate([[0], np.cumsum(qs.quantized)]).astype(float)


def input_referred_error(pts: SamplePoints, qs: QuantizedSteps, levels_units) -> np.ndarray:
    """Per-level ramp error in ramp LSBs (multiples of the smallest inverse step)."""
    return (np.asarray(levels_units) * qs.unit - pts.v) / qs.lsb


def output_referred_error(act: ActivationSpec, pts: SamplePoints, qs: QuantizedSteps, levels_units) -> np.ndarray:
    """Per-level error mapped through the activation, in output LSBs."""
    x = np.asarray(levels_units) * qs.unit
    return (np.asarray(act.forward(x), dtype=float) - pts.t) / act.output_lsb(pts.n_bits)


def quantization_rmse(pts: SamplePoints, qs: QuantizedSteps) -> float:
    """RMSE of the symmetric half-sum ramp against the ideal inverse, in ramp LSBs."""
    levels = ideal_ramp(qs, unit_step=1.0)
    return float(np.sqrt(np.mean(input_referred_error(pts, qs, levels) ** 2)))


STEP_TABLE_HEADER = ("k", "t_k", "V_k", "dV_k", "Qnt")


def step_table_rows(pts: SamplePoints, qs: QuantizedSteps):
    """Rows k, t_k, V_k, dV_k, Qnt (the last sample point has no step)."""
    rows = []
    for i, (t, v) in enumerate(zip(pts.t, pts.v)):
        if i < qs.n_steps:
            rows.append((i + 1, f"{t:.10g}", f"{v:.10g}", f"{qs.deltas[i]:.10g}", int(qs.quantized[i])))
        else:
            rows.append((i + 1, f"{t:.10g}", f"{v:.10g}", "", ""))
    return rows


def write_step_table(path, pts: SamplePoints, qs: QuantizedSteps, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_TABLE_HEADER)
        w.writerows(step_table_rows(pts, qs))
