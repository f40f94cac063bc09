"""LSTM layer on the macro: gate MACs and activations in-memory, element-wise
update in a fixed-point PE pipeline, plus op and latency accounting.

Fixed-point conventions (all integers):
  gate values and h_t are Q6 (64 == 1.0); c_t is signed 12-bit Q6;
  tanh(c_t) comes from a 64-segment piecewise-linear table over [-4, 4].
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .activations import make_activation
from .adc import (
    AdcConfig,
    calibrate_population,
    codes_from_thresholds,
    design,
    mac_rows_available,
    population_thresholds,
    sample_columns,
)
from .analog import array_mac_units, sample_mismatch
from .codec import MultiBitScheme, encode_matrix, scheme_for
from .config import MacroConfig
from .errors import DynamicRangeWarning, InputError, MappingError
from .ramp import Mode

GATES = ("i", "f", "g", "o")
FRAC_BITS = 6
ONE = 1 << FRAC_BITS
C_MIN, C_MAX = -2048, 2047
TANH_SEGMENTS = 64
TANH_SPAN = 4.0
MAX_ROW_SPLITS = 4


def rshift_round(x, s: int):
    """Divide by 2^s rounding half up; works on ints and integer arrays."""
    return (x + (1 << (s - 1))) >> s


def _tanh_table() -> np.ndarray:
    knots = np.linspace(-TANH_SPAN, TANH_SPAN, TANH_SEGMENTS + 1)
    return np.array([int(math.floor(math.tanh(k) * ONE + 0.5)) for k in knots], dtype=np.int64)


TANH_TABLE = _tanh_table()
_TANH_LO = -int(TANH_SPAN * ONE)
_TANH_SHIFT = int(round(math.log2(2 * TANH_SPAN * ONE / TANH_SEGMENTS)))


def tanh_pwl(c):
    """Piecewise-linear tanh of a Q6 integer (array), returned in Q6."""
    c = np.clip(np.asarray(c, dtype=np.int64), _TANH_LO, -_TANH_LO)
    off = c - _TANH_LO
    idx = off >> _TANH_SHIFT
    frac = off & ((1 << _TANH_SHIFT) - 1)
    nxt = np.minimum(idx + 1, TANH_SEGMENTS)
    return TANH_TABLE[idx] + rshift_round((TANH_TABLE[nxt] - TANH_TABLE[idx]) * frac, _TANH_SHIFT)


def sigmoid_value(code, n_bits: int):
    """Q6 value of a sigmoid converter code (upper edge of its output interval)."""
    return (np.asarray(code, dtype=np.int64) + 1) << (FRAC_BITS - n_bits)


def tanh_value(code, n_bits: int):
    return -ONE + ((np.asarray(code, dtype=np.int64) + 1) << (FRAC_BITS + 1 - n_bits))


@dataclass
class LstmModel:
    """Bias-free LSTM layer plus FC head, integer weights.

    ``w_cat`` is (input_dim + hidden_dim, 4 * hidden_dim) with gate blocks
    ordered [i | f | g | o]; ``fc`` is (hidden_dim, n_classes).
    """

    w_cat: np.ndarray
    fc: np.ndarray
    input_dim: int
    hidden_dim: int
    n_w: int = 3
    x_bits: int = 5

    def __post_init__(self):
        self.w_cat = np.asarray(self.w_cat, dtype=np.int64)
        self.fc = np.asarray(self.fc, dtype=np.int64)
        if self.w_cat.shape != (self.input_dim + self.hidden_dim, 4 * self.hidden_dim):
            raise InputError(f"w_cat shape {self.w_cat.shape} does not match dims")
        if self.fc.ndim != 2 or self.fc.shape[0] != self.hidden_dim:
            raise InputError("fc must be (hidden_dim, n_classes)")
        wmax = 2 ** (self.n_w - 1) - 1
        if self.w_cat.size and np.abs(self.w_cat).max() > wmax:
            raise InputError(f"weights exceed the signed {self.n_w}-bit range")
        if not 2 <= self.x_bits <= 8:
            raise InputError("x_bits must be 2..8")

    @property
    def x_max(self) -> int:
        return 2 ** (self.x_bits - 1) - 1

    @property
    def n_classes(self) -> int:
        return self.fc.shape[1]

    @property
    def n_params(self) -> int:
        return int(self.w_cat.size)

    @classmethod
    def random(cls, input_dim=40, hidden_dim=38, n_classes=12, n_w=3, x_bits=5, seed=0, density=0.5):
        rng = np.random.default_rng(seed)
        wmax = 2 ** (n_w - 1) - 1
        w = rng.integers(-wmax, wmax + 1, size=(input_dim + hidden_dim, 4 * hidden_dim))
        w = w * (rng.random(w.shape) < density)
        fc = rng.integers(-8, 9, size=(hidden_dim, n_classes))
        return cls(w, fc, input_dim, hidden_dim, n_w, x_bits)


@dataclass(frozen=True)
class ColumnTile:
    pass_index: int
    col_start: int  # logical gate column range [start, stop)
    col_stop: int
    gate: str


@dataclass(frozen=True)
class LayerMapping:
    tiles: tuple[ColumnTile, ...]
    n_passes: int
    mac_rows: int
    calib_rows: int
    adc_rows: int
    cells_per_weight: int
    rows_per_column: int
    row_splits: int
    scheme: MultiBitScheme

    def describe(self) -> str:
        lines = [
            f"passes: {self.n_passes}",
            f"cells per weight: {self.cells_per_weight}",
            f"cell rows per column: {self.rows_per_column}",
            f"MAC rows: {self.mac_rows}  calibration rows: {self.calib_rows}  converter rows: {self.adc_rows}",
            f"row splits: {self.row_splits}",
        ]
        lines += [f"pass {t.pass_index}: columns {t.col_start}-{t.col_stop - 1} gate {t.gate}" for t in self.tiles]
        return "\n".join(lines)


def map_layer(model: LstmModel, cfg: MacroConfig, adc: AdcConfig, scheme: MultiBitScheme | None = None) -> LayerMapping:
    """Tile the 4*hidden gate columns over macro passes and split rows that exceed the budget.

    Each rail feeds one half of the array rows, so cells on a single rail are
    limited to rows // 2 per split when both rails are in use.
    """
    scheme = scheme or scheme_for(model.n_w)
    if model.hidden_dim <= 0 or model.input_dim <= 0:
        raise MappingError("layer dimensions must be positive")
    in_rows = model.input_dim + model.hidden_dim
    budget = mac_rows_available(adc, cfg)
    cpw = scheme.cells_per_weight
    rows_per_col = in_rows * cpw
    splits = math.ceil(rows_per_col / budget)
    rails = set(scheme.rail_assignment)
    if len(rails) > 1:
        rail_cap = cfg.rows // 2
        for r in rails:
            per_rail = in_rows * sum(1 for a in scheme.rail_assignment if a is r)
            splits = max(splits, math.ceil(per_rail / rail_cap))
    if splits > MAX_ROW_SPLITS:
        raise MappingError(f"{rows_per_col} cell rows per column need {splits} splits (max {MAX_ROW_SPLITS})")
    n_cols = 4 * model.hidden_dim
    n_passes = math.ceil(n_cols / cfg.cols)
    tiles = []
    for p in range(n_passes):
        lo, hi = p * cfg.cols, min(n_cols, (p + 1) * cfg.cols)
        start = lo
        while start < hi:
            g = start // model.hidden_dim
            stop = min(hi, (g + 1) * model.hidden_dim)
            tiles.append(ColumnTile(p, start, stop, GATES[g]))
            start = stop
    used_adc = design(adc).schedule.total_cells
    return LayerMapping(
        tiles=tuple(tiles),
        n_passes=n_passes,
        mac_rows=budget,
        calib_rows=adc.calib_rows,
        adc_rows=used_adc,
        cells_per_weight=cpw,
        rows_per_column=rows_per_col,
        row_splits=splits,
        scheme=scheme,
    )


@dataclass(frozen=True)
class PipelineModel:
    pe_count: int = 19
    dims_per_pe: int = 2
    stage_latency: int = 4
    total_latency: int = 5
    tanh_impl: str = "pwl64"

    def check(self, hidden_dim: int) -> None:
        if self.pe_count * self.dims_per_pe != hidden_dim:
            raise MappingError(f"{self.pe_count} PEs x {self.dims_per_pe} dims != hidden size {hidden_dim}")


@dataclass(frozen=True)
class StepResult:
    h: np.ndarray  # Q6
    c: np.ndarray  # Q6, 12-bit
    h_pulses: np.ndarray  # next-step signed input pulses
    codes: np.ndarray  # (4, hidden) converter codes
    dr_violations: int = 0


def pe_update(codes, c_prev, n_bits: int, x_max: int):
    """Element-wise c/h update from the four gate code vectors (fixed point)."""
    codes = np.asarray(codes, dtype=np.int64)
    i, f, o = (sigmoid_value(codes[k], n_bits) for k in (0, 1, 3))
    g = tanh_value(codes[2], n_bits)
    c = np.clip(rshift_round(f * np.asarray(c_prev, dtype=np.int64) + i * g, FRAC_BITS), C_MIN, C_MAX)
    h = rshift_round(o * tanh_pwl(c), FRAC_BITS)
    hp = np.clip(rshift_round(h * x_max, FRAC_BITS), -x_max, x_max)
    return h, c, hp


class MacroLstm:
    """One LSTM layer programmed onto the simulated macro.

    In ideal mode every MAC is an exact integer and the converter thresholds are
    the integer ramp levels. Otherwise cell currents, ramp cells and comparator
    offsets are sampled per column from ``seed`` and each column is
    zero-cross calibrated once at construction.
    """

    def __init__(self, model: LstmModel, cfg: MacroConfig, n_bits: int = 5, mode=Mode.PWM,
                 ideal: bool = True, seed: int = 0, calib_unit: float = 1.0):
        self.model = model
        self.cfg = cfg
        self.ideal = ideal
        sig = make_activation("sigmoid")
        self.adc = AdcConfig(sig, n_bits=n_bits, mode=mode, calib_unit=calib_unit)
        self.tanh_adc = AdcConfig(make_activation("tanh"), n_bits=n_bits, mode=mode, calib_unit=calib_unit)
        self.scheme = scheme_for(model.n_w)
        self.mapping = map_layer(model, cfg, self.adc, self.scheme)
        d = design(self.adc)
        if not np.array_equal(d.levels_units, design(self.tanh_adc).levels_units):
            raise MappingError("sigmoid and tanh ramps differ; the gate columns cannot share a ramp")
        self.scale = d.scale  # pre-activation per MAC unit for sigmoid gates; tanh gates use half
        cells = encode_matrix(model.w_cat, self.scheme)  # (rows, cpw, cols)
        n_rows, cpw, n_cols = cells.shape
        self.cells = cells.reshape(n_rows * cpw, n_cols)
        self.row_input = np.repeat(np.arange(n_rows), cpw)
        self.row_mult = np.tile(np.array(self.scheme.pulse_multipliers, dtype=float), n_rows)
        self.row_ratio = np.tile(self.scheme.rail_ratios(), n_rows)
        self.splits = np.array_split(np.arange(n_rows * cpw), self.mapping.row_splits)
        if ideal:
            self.factors = None
            self.thresholds = np.asarray(d.levels_units, dtype=float) * cfg.unit_step
            self.calibs = None
        else:
            rng = np.random.default_rng([seed, 1])
            self.factors = sample_mismatch(cfg, rng, self.cells.shape)
            pop = sample_columns(self.adc, cfg, n_cols, seed)
            self.calibs = calibrate_population(pop, self.adc, cfg)
            self.thresholds = population_thresholds(self.adc, cfg, pop, self.calibs)

    def mac(self, pulses):
        """Bitline MAC for signed row pulses: (v_mac per column, DR violation count)."""
        p = np.asarray(pulses)[self.row_input]
        left = np.zeros(self.cells.shape[1])
        right = np.zeros_like(left)
        for rows in self.splits:
            f = None if self.factors is None else self.factors[rows]
            lft, rgt, _ = array_mac_units(self.cells[rows], p[rows], self.row_ratio[rows], self.row_mult[rows], f)
            left += lft
            right += rgt
        u = self.cfg.unit_step
        floor = self.cfg.vdd - self.cfg.dr_limit
        lowest = self.cfg.vdd - u * np.maximum(left, right)
        return u * (left - right), int(np.sum(lowest < floor - 1e-12))

    def step(self, x_pulses, h_pulses, c_prev, warn: bool = True) -> StepResult:
        m = self.model
        inp = np.concatenate([np.asarray(x_pulses, dtype=np.int64), np.asarray(h_pulses, dtype=np.int64)])
        v_mac, bad = self.mac(inp)
        if bad and warn:
            warnings.warn(f"{bad} columns exceeded the bitline dynamic range", DynamicRangeWarning, stacklevel=2)
        codes = codes_from_thresholds(v_mac, self.thresholds).reshape(4, m.hidden_dim)
        h, c, hp = pe_update(codes, c_prev, self.adc.n_bits, m.x_max)
        return StepResult(h, c, hp, codes, bad)

    def zero_state(self):
        z = np.zeros(self.model.hidden_dim, dtype=np.int64)
        return z, z.copy()


def check_features(model: LstmModel, features) -> np.ndarray:
    f = np.asarray(features)
    if f.ndim != 2 or f.shape[1] != model.input_dim:
        raise InputError(f"features must be (steps, {model.input_dim}), got {f.shape}")
    if not np.all(f == np.round(f)):
        raise InputError("features must be integer pulse counts")
    f = f.astype(np.int64)
    if np.abs(f).max(initial=0) > model.x_max:
        raise InputError(f"feature pulses exceed +/-{model.x_max}")
    return f


@dataclass
class SequenceResult:
    logits: np.ndarray
    label: int
    steps: list = field(default_factory=list)
    dr_violations: int = 0


def run_sequence(model: LstmModel, features, cfg: MacroConfig, n_bits: int = 5, seed: int = 0,
                 ideal: bool = True, engine: MacroLstm | None = None, keep_steps: bool = False) -> SequenceResult:
    """Recurrent steps over the feature sequence, then an integer FC head on h_T."""
    feats = check_features(model, features)
    eng = engine or MacroLstm(model, cfg, n_bits=n_bits, ideal=ideal, seed=seed)
    hp, c = eng.zero_state()
    h = np.zeros_like(c)
    steps, bad = [], 0
    for x in feats:
        r = eng.step(x, hp, c, warn=False)
        h, c, hp = r.h, r.c, r.h_pulses
        bad += r.dr_violations
        if keep_steps:
            steps.append(r)
    if bad:
        warnings.warn(f"{bad} column conversions exceeded the bitline dynamic range", DynamicRangeWarning, stacklevel=2)
    logits = h @ model.fc
    return SequenceResult(logits, int(np.argmax(logits)), steps, bad)


def float_step(model: LstmModel, x_pulses, h_in, c_prev, scale: float):
    """Real-valued reference on the same integer weights: exact activations, no converter.

    ``h_in`` are the (possibly fractional) input pulses for the recurrent rows.
    """
    inp = np.concatenate([np.asarray(x_pulses, dtype=float), np.asarray(h_in, dtype=float)])
    mac = inp @ model.w_cat
    H = model.hidden_dim
    i, f, g, o = (mac[k * H:(k + 1) * H] for k in range(4))
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    c = sig(scale * f) * c_prev + sig(scale * i) * np.tanh(scale / 2 * g)
    h = sig(scale * o) * np.tanh(c)
    return h, c


def float_sequence(model: LstmModel, features, scale: float):
    feats = np.asarray(features, dtype=float)
    h = np.zeros(model.hidden_dim)
    c = np.zeros(model.hidden_dim)
    for x in feats:
        h, c = float_step(model, x, h * model.x_max, c, scale)
    logits = h @ model.fc
    return logits, int(np.argmax(logits))


@dataclass(frozen=True)
class OpBreakdown:
    linear_on: int
    linear_off: int
    nl_on: int
    nl_off: int

    @property
    def linear_fraction(self) -> Fraction:
        return Fraction(self.linear_on, self.linear_on + self.linear_off)

    @property
    def nl_fraction(self) -> Fraction:
        return Fraction(self.nl_on, self.nl_on + self.nl_off)

    def rows(self):
        yield "linear", self.linear_on, self.linear_off, float(self.linear_fraction)
        yield "nonlinear", self.nl_on, self.nl_off, float(self.nl_fraction)


def op_breakdown(model_or_dims) -> OpBreakdown:
    """Per-timestep operation counts. A MAC counts as a multiply and an add.

    Off-macro per hidden unit: f*c, i*g, o*tanh(c) and one add; one tanh.
    """
    if isinstance(model_or_dims, LstmModel):
        n_in, n_h = model_or_dims.input_dim, model_or_dims.hidden_dim
    else:
        n_in, n_h = model_or_dims
    return OpBreakdown(
        linear_on=2 * (n_in + n_h) * 4 * n_h,
        linear_off=4 * n_h,
        nl_on=4 * n_h,
        nl_off=n_h,
    )


@dataclass(frozen=True)
class LatencyReport:
    items: tuple[tuple[str, int], ...]
    per_timestep: int
    per_sequence: int

    def rows(self):
        yield from self.items
        yield "per_timestep", self.per_timestep
        yield "per_sequence", self.per_sequence


def latency_report(mapping: LayerMapping, pipeline: PipelineModel, adc: AdcConfig, x_bits: int = 5,
                   seq_len: int = 49) -> LatencyReport:
    """Cycle accounting for one timestep.

    Per pass, the initial ramp overlaps the MAC phase; split rows repeat the
    MAC phase before the single conversion. The PE pipeline adds its latency once.
    """
    x_max = 2 ** (x_bits - 1) - 1
    mac_phase = x_max * mapping.scheme.latency_clocks
    d = design(adc)
    init = d.plan.cycles
    ramp = d.schedule.total_cycles
    per_pass = max(mapping.row_splits * mac_phase, init) + ramp
    macro = mapping.n_passes * per_pass
    total = macro + pipeline.total_latency
    items = (
        ("mac_phase", mac_phase),
        ("row_splits", mapping.row_splits),
        ("init_ramp", init),
        ("ramp", ramp),
        ("passes", mapping.n_passes),
        ("macro", macro),
        ("pipeline", pipeline.total_latency),
    )
    return LatencyReport(items, total, total * seq_len)
