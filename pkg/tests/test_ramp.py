import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlimsim.activations import BENCHMARK_ACTIVATIONS, make_activation
from nlimsim.errors import ConfigError, DomainError
from nlimsim.ramp import (
    InitMode,
    Mode,
    build_schedule,
    ideal_ramp,
    init_plan,
    quantization_rmse,
    ramp_steps,
    round_half_away,
    sample_inverse,
    step_deltas,
    write_step_table,
)

SIG5 = [6, 4, 3, 2, 2, 2] + [1] * 18 + [2, 2, 2, 3, 4, 6]
SIG4 = [3, 2] + [1] * 10 + [2, 3]


def _oracle_steps(n):
    # logit samples, differences and rounding with plain floats
    v = [math.log(k / (2**n - k)) for k in range(1, 2**n)]
    d = [b - a for a, b in zip(v, v[1:])]
    lsb = min(d)
    return [int(math.floor(x / lsb + 0.5)) for x in d]


def test_sigmoid_steps_match_oracle():
    assert _oracle_steps(5) == SIG5
    assert _oracle_steps(4) == SIG4
    _, qs5 = ramp_steps(make_activation("sigmoid"), 5)
    _, qs4 = ramp_steps(make_activation("sigmoid"), 4)
    assert qs5.quantized.tolist() == SIG5
    assert qs4.quantized.tolist() == SIG4


def test_linear_equidistant():
    pts = sample_inverse(make_activation("linear", (0.0, 1.0)), 4)
    assert np.allclose(np.diff(pts.v), 1 / 16)
    qs = step_deltas(pts)
    assert qs.lsb == pytest.approx(1 / 16)


def test_one_bit_has_no_steps():
    pts, qs = ramp_steps(make_activation("sigmoid"), 1)
    assert len(pts) == 1 and qs.n_steps == 0 and qs.total == 0
    sched = build_schedule(qs, "pwm", 1)
    assert sched.total_cells == 0 and sched.init_cells == 0


@pytest.mark.parametrize("n", [0, 6])
def test_bits_out_of_range(n):
    with pytest.raises(ConfigError):
        sample_inverse(make_activation("sigmoid"), n)


def test_nonmonotone_inverse_rejected():
    act = make_activation("custom", (-0.5, 0.5), forward=np.sin, inverse=lambda t: np.cos(np.asarray(t) * 3))
    with pytest.raises(DomainError):
        sample_inverse(act, 3)


@pytest.mark.parametrize("n,mode,cells,cycles", [(5, "pwm", 30, 56), (5, "mcl", 56, 30), (4, "pwm", 14, 20),
                                                 (4, "mcl", 20, 14)])
def test_schedule_budget(n, mode, cells, cycles):
    _, qs = ramp_steps(make_activation("sigmoid"), n)
    s = build_schedule(qs, mode, n)
    assert (s.total_cells, s.total_cycles) == (cells, cycles)


def test_mode_parse():
    assert Mode.parse("mcl") is Mode.MCL
    with pytest.raises(ConfigError):
        Mode.parse("slope")


def test_init_plan_half_sum():
    _, qs = ramp_steps(make_activation("sigmoid"), 5)
    plan = init_plan(qs, 5)
    assert plan.offset_units == -28 and plan.n_cells == 15
    assert sum(plan.pulses) == 28 and plan.pulses == tuple(SIG5[:15])
    _, qs4 = ramp_steps(make_activation("sigmoid"), 4)
    assert init_plan(qs4, 4).offset_units == -10


def test_init_plan_mcl_spreads_pulses():
    _, qs = ramp_steps(make_activation("sigmoid"), 5)
    plan = init_plan(qs, 5, Mode.MCL)
    assert sum(plan.pulses) == 28 and max(plan.pulses) - min(plan.pulses) <= 1


def test_ideal_ramp_symmetric():
    _, qs = ramp_steps(make_activation("sigmoid"), 5)
    r = ideal_ramp(qs, unit_step=1.0)
    assert r[0] == -28 and r[-1] == 28 and r[15] == 0
    assert np.allclose(r, -r[::-1])


def test_quantization_rmse_value():
    pts, qs = ramp_steps(make_activation("sigmoid"), 5)
    assert quantization_rmse(pts, qs) == pytest.approx(0.49821, abs=1e-4)


def test_round_half_away():
    assert round_half_away([0.5, 1.5, -0.5, -2.5, 2.49]).tolist() == [1, 2, -1, -3, 2]


def test_step_table_csv(tmp_path):
    pts, qs = ramp_steps(make_activation("sigmoid"), 5)
    path = tmp_path / "t.csv"
    write_step_table(path, pts, qs, "demo")
    rows = list(csv.reader(l for l in path.read_text().splitlines() if not l.startswith("#")))
    assert rows[0] == ["k", "t_k", "V_k", "dV_k", "Qnt"]
    assert sum(int(r[4]) for r in rows[1:] if r[4]) == 56


@given(st.sampled_from(BENCHMARK_ACTIVATIONS + ("linear",)), st.integers(2, 5), st.integers(1, 4))
def test_steps_positive_and_bounded(name, n, g):
    pts, qs = ramp_steps(make_activation(name), n, g)
    q = qs.quantized
    assert np.all(q >= 1)
    # each integer step is within half a unit of the ideal increment
    assert np.all(np.abs(q * qs.unit - qs.deltas) <= qs.unit / 2 + 1e-12)
    assert q.min() == g  # the smallest step is exactly one LSB of g unit cells


@given(st.sampled_from(BENCHMARK_ACTIVATIONS), st.integers(2, 5), st.sampled_from(list(InitMode)))
def test_init_plan_consistent(name, n, im):
    pts, qs = ramp_steps(make_activation(name), n)
    for mode in Mode:
        plan = init_plan(qs, n, mode, im, pts)
        assert plan.n_cells == 2 ** (n - 1) - 1
        assert sum(plan.pulses) == abs(plan.offset_units)
