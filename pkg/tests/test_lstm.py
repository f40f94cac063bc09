import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlimsim import golden
from nlimsim.activations import make_activation
from nlimsim.adc import AdcConfig, design
from nlimsim.errors import InputError, MappingError
from nlimsim.lstm import (
    C_MAX,
    C_MIN,
    LstmModel,
    MacroLstm,
    PipelineModel,
    float_step,
    latency_report,
    map_layer,
    op_breakdown,
    rshift_round,
    run_sequence,
    tanh_pwl,
)

SIG5 = AdcConfig(make_activation("sigmoid"), n_bits=5)


def _toy(seed, n_in=3, n_h=4, n_w=3, density=0.6):
    return LstmModel.random(n_in, n_h, 3, n_w=n_w, x_bits=5, seed=seed, density=density)


@given(st.integers(-10_000, 10_000), st.integers(1, 10))
def test_rshift_round_is_round_half_up(x, s):
    assert rshift_round(x, s) == int(np.floor(x / 2**s + 0.5))


def test_tanh_table_matches_reference():
    c = np.arange(-400, 401)
    assert tanh_pwl(c).tolist() == [golden.tanh_q6(int(v)) for v in c]
    assert np.max(np.abs(tanh_pwl(c) - np.round(64 * np.tanh(c / 64)))) <= 1


@pytest.mark.parametrize("n_w,rows,splits", [(3, 156, 1), (4, 234, 2), (5, 312, 2)])
def test_mapping_40_38_layer(n_w, rows, splits, ideal_cfg):
    m = LstmModel.random(40, 38, 12, n_w=n_w, seed=0)
    lm = map_layer(m, ideal_cfg, SIG5)
    assert (lm.rows_per_column, lm.row_splits, lm.n_passes) == (rows, splits, 2)
    assert sum(t.col_stop - t.col_start for t in lm.tiles) == 152
    assert "passes: 2" in lm.describe()


def test_mapping_rejects_empty(ideal_cfg):
    with pytest.raises((MappingError, InputError)):
        map_layer(LstmModel(np.zeros((3, 0)), np.zeros((0, 2)), 3, 0), ideal_cfg, SIG5)


def test_golden_equivalence(ideal_cfg):
    steps = design(SIG5).qs.quantized.tolist()
    rng = np.random.default_rng(1)
    mismatches = 0
    for trial in range(200):
        model = _toy(trial, n_w=int(rng.integers(2, 6)))
        eng = MacroLstm(model, ideal_cfg)
        for _ in range(5):
            x = rng.integers(-15, 16, model.input_dim)
            hp = rng.integers(-15, 16, model.hidden_dim)
            c = rng.integers(-300, 300, model.hidden_dim)
            r = eng.step(x, hp, c, warn=False)
            h, cc, hq, codes = golden.golden_step(model.w_cat.tolist(), x.tolist(), hp.tolist(), c.tolist(),
                                                  steps, 5, model.x_max)
            mismatches += (r.h.tolist() != h) + (r.c.tolist() != cc) + (r.h_pulses.tolist() != hq)
            mismatches += r.codes.tolist() != codes
    assert mismatches == 0


def test_zero_weights_halve_cell_state(ideal_cfg):
    model = LstmModel(np.zeros((5, 8), dtype=int), np.zeros((2, 2), dtype=int), 3, 2)
    eng = MacroLstm(model, ideal_cfg)
    c = np.array([640, -640])
    r = eng.step(np.zeros(3, int), np.zeros(2, int), c)
    # f = i = 1/2 at the middle code and g = 0
    assert r.c.tolist() == [320, -320]
    assert np.all(r.codes == 15)


def test_cell_state_clamped(ideal_cfg):
    model = LstmModel(np.full((2, 4), 3), np.zeros((1, 1), dtype=int), 1, 1)
    eng = MacroLstm(model, ideal_cfg)
    r = eng.step([15], [15], [C_MAX])
    assert C_MIN <= r.c[0] <= C_MAX


@pytest.mark.parametrize("n_bits", [4, 5])
def test_float_reference_within_two_lsb(n_bits, ideal_cfg):
    lsb = 2 / 2**n_bits
    worst = 0.0
    for seed in range(30):
        model = _toy(seed, n_w=2, density=0.4)
        eng = MacroLstm(model, ideal_cfg, n_bits=n_bits)
        rng = np.random.default_rng(seed)
        hp, c = eng.zero_state()
        for _ in range(6):
            x = rng.integers(-15, 16, model.input_dim)
            r = eng.step(x, hp, c, warn=False)
            h_ref, _ = float_step(model, x, hp, c / 64, eng.scale)
            worst = max(worst, np.max(np.abs(r.h / 64 - h_ref)))
            hp, c = r.h_pulses, r.c
    assert worst <= 2 * lsb


def test_op_breakdown_exact():
    ob = op_breakdown((40, 38))
    assert ob.nl_fraction == pytest.approx(0.8) and str(ob.nl_fraction) == "4/5"
    assert ob.linear_fraction >= 0.99
    one = op_breakdown((1, 1))
    assert (one.linear_on, one.linear_off, one.nl_on, one.nl_off) == (16, 4, 4, 1)


def test_latency(ideal_cfg):
    m = LstmModel.random(40, 38, 12, seed=0)
    rep = latency_report(map_layer(m, ideal_cfg, SIG5), PipelineModel(), SIG5)
    assert rep.per_timestep == 147 and rep.per_sequence == 147 * 49
    m5 = LstmModel.random(40, 38, 12, n_w=5, seed=0)
    rep5 = latency_report(map_layer(m5, ideal_cfg, SIG5), PipelineModel(), SIG5)
    items = dict(rep5.items)
    assert items["mac_phase"] == 30 and items["row_splits"] == 2
    assert rep5.per_timestep > rep.per_timestep
    PipelineModel().check(38)
    with pytest.raises(MappingError):
        PipelineModel().check(40)


def test_input_validation(ideal_cfg):
    m = _toy(0)
    with pytest.raises(InputError):
        run_sequence(m, np.zeros((4, 5)), ideal_cfg)
    with pytest.raises(InputError):
        run_sequence(m, np.full((4, 3), 16), ideal_cfg)
    with pytest.raises(InputError):
        run_sequence(m, np.full((4, 3), 0.5), ideal_cfg)
    with pytest.raises(InputError):
        LstmModel(np.full((7, 16), 4), np.zeros((4, 3)), 3, 4, n_w=3)


def test_sequence_deterministic(cfg):
    m = _toy(3)
    feats = np.random.default_rng(0).integers(-15, 16, (10, 3))
    a = run_sequence(m, feats, cfg, ideal=False, seed=4)
    b = run_sequence(m, feats, cfg, ideal=False, seed=4)
    assert np.array_equal(a.logits, b.logits) and a.label == b.label


def test_dynamic_range_warning(ideal_cfg):
    m = LstmModel.random(40, 38, 12, seed=0, density=1.0)
    feats = np.full((2, 40), 15)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        r = run_sequence(m, feats, ideal_cfg)
    assert r.dr_violations > 0 and w
