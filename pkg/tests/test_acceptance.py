"""Acceptance criteria, one check per criterion.

Each check returns (ok, detail) and includes its runtime bound. Under pytest the
outcomes are collected in RESULTS and printed as a block at the end of the
session; run this file directly to print the same lines without pytest.
"""

import filecmp
import os
import sys
import time
import warnings
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlimsim import golden
from nlimsim.activations import BENCHMARK_ACTIVATIONS, make_activation
from nlimsim.adc import AdcConfig, calibration_study, convert, design
from nlimsim.analog import (
    array_mac_units,
    ptat_n_bwr,
    ptat_resistor_for,
    sample_n_bwr,
    sigma_for_ratio_spread,
)
from nlimsim.codec import decode_matrix, encode_matrix, scheme_for
from nlimsim.config import MacroConfig
from nlimsim.hwat import TrainConfig, evaluate, make_task, train_toy
from nlimsim.lstm import LstmModel, MacroLstm, op_breakdown
from nlimsim.ramp import (
    InitMode,
    Mode,
    build_schedule,
    init_target_units,
    output_referred_error,
    quantization_rmse,
    ramp_levels_units,
    ramp_steps,
)

RESULTS: dict[int, tuple[bool, str]] = {}

SIG = make_activation("sigmoid")
TANH = make_activation("tanh")


def check_1():
    expected = {(5, "PWM"): (30, 56), (5, "MCL"): (56, 30), (4, "PWM"): (14, 20), (4, "MCL"): (20, 14)}
    got = {}
    for (bits, mode) in expected:
        _, qs = ramp_steps(SIG, bits)
        s = build_schedule(qs, Mode.parse(mode), bits)
        got[(bits, mode)] = (s.total_cells, s.total_cycles)
    ok = got == expected
    return ok, " ".join(f"{b}b-{m}={c}/{y}" for (b, m), (c, y) in got.items()), 1.0


def check_2():
    pts, qs = ramp_steps(SIG, 5)
    rmse = quantization_rmse(pts, qs)
    return abs(rmse - 0.48) <= 0.05, f"RMSE {rmse:.4f} LSB (target 0.48 +/- 0.05)", 1.0


def _fit_level_error(name: str, bits: int) -> float:
    act = make_activation(name)
    pts, qs = ramp_steps(act, bits)
    levels = ramp_levels_units(qs, -init_target_units(qs, bits, InitMode.FIT, pts))
    return float(np.max(np.abs(output_referred_error(act, pts, qs, levels))))


@settings(max_examples=60, deadline=None, derandomize=True)
@given(st.sampled_from(BENCHMARK_ACTIVATIONS), st.integers(1, 5))
def _sub_lsb_property(name, bits):
    assert _fit_level_error(name, bits) < 1.0


def check_3():
    try:
        _sub_lsb_property()
        ok = True
    except AssertionError:
        ok = False
    worst = {n: _fit_level_error(n, 5) for n in BENCHMARK_ACTIVATIONS}
    return ok, "5-bit max |err| " + " ".join(f"{n}={v:.3f}" for n, v in worst.items()), 1.0


def check_4():
    cfg = MacroConfig(sigma_iu=0.05)
    s = calibration_study(AdcConfig(SIG), cfg, 1000, seed=0)
    pre, post = float(np.mean(s.pre_rmse)), float(np.mean(s.post_rmse))
    return post <= pre / 3, f"mean RMSE {pre:.3f} -> {post:.3f} LSB ({s.improvement:.2f}x)", 60.0


def check_5():
    inls = {}
    for act in (SIG, TANH):
        for sigma in (0.03, 0.05, 0.07):
            s = calibration_study(AdcConfig(act), MacroConfig(sigma_iu=sigma), 300, seed=1)
            inls[(act.name, sigma)] = s.inl_post
    ok = all(0.4 <= v <= 1.2 for v in inls.values())
    return ok, "avg INL " + " ".join(f"{n}@{s}={v:.3f}" for (n, s), v in inls.items()), 60.0


def check_6():
    for n in (2, 3, 4, 5):
        s = scheme_for(n)
        w = np.arange(-s.max_value, s.max_value + 1)[None, :]
        if not np.array_equal(decode_matrix(encode_matrix(w, s), s), w):
            return False, f"{n}-bit round trip failed", 10.0
    rng = np.random.default_rng(0)
    bad = 0
    total = 0
    for n in (2, 3, 4, 5):
        s = scheme_for(n)
        rows, cols = 16, 2500
        w = rng.integers(-s.max_value, s.max_value + 1, (rows, cols))
        x = rng.integers(-15, 16, rows)
        cells = encode_matrix(w, s).reshape(rows * s.cells_per_weight, cols)
        left, right, _ = array_mac_units(cells, np.repeat(x, s.cells_per_weight),
                                         np.tile(s.rail_ratios(), rows), np.tile(s.pulse_multipliers, rows))
        bad += int(np.sum((left - right) != x @ w))
        total += cols
    return bad == 0, f"round trip exact for 2-5 bit; {total} columns, {bad} MAC mismatches", 10.0


def check_7():
    target_rel = 0.078 / 2.011
    r = sample_n_bwr(2.0, MacroConfig(), 0, 200_000, sigma=sigma_for_ratio_spread(target_rel))
    mean, rel = float(r.mean()), float(r.std() / r.mean())
    cfg = MacroConfig()
    coeff = 1e-7
    res = ptat_resistor_for(2.0, coeff, cfg)
    temps = np.linspace(273.15, 343.15, 71)
    ptat = [ptat_n_bwr(t, res, coeff, cfg, slope_error=e) for t in temps for e in (-0.02, 0.0, 0.02)]
    ok = abs(mean - 2.0) <= 0.05 and abs(rel / target_rel - 1) <= 0.2 and 1.99 <= min(ptat) and max(ptat) <= 2.02
    return ok, (f"mean {mean:.4f}, rel std {rel:.4f} (target {target_rel:.4f}); "
                f"PTAT 0-70C range [{min(ptat):.4f}, {max(ptat):.4f}]"), 10.0


def check_8():
    changed = 0
    checked = 0
    ideal = MacroConfig().ideal()
    for bits in (4, 5):
        adc = AdcConfig(SIG, n_bits=bits)
        lv = design(adc).levels_units
        for gain in (0.7, 1.3):
            scaled = replace(ideal, i_u=ideal.i_u * gain)
            for m in range(int(lv[0]), int(lv[-1]) + 1):
                a = convert(m * ideal.unit_step, adc, ideal).code
                b = convert(m * scaled.unit_step, adc, scaled).code
                changed += a != b
                checked += 1
    return changed == 0, f"{checked} conversions at I_u x0.7/x1.3, {changed} code changes", 10.0


def check_9():
    ob = op_breakdown((40, 38))
    ok = ob.nl_fraction == Fraction(4, 5) and ob.linear_fraction >= Fraction(99, 100)
    return ok, (f"NL on-macro {ob.nl_fraction} = {float(ob.nl_fraction):.1%}, "
                f"linear on-macro {ob.linear_fraction} = {float(ob.linear_fraction):.2%}"), 1.0


def check_10():
    cfg = MacroConfig().ideal()
    rng = np.random.default_rng(10)
    steps_cache = {}
    n_steps = 0
    mismatches = 0
    for trial in range(250):
        n_in, n_h = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        n_w = int(rng.integers(2, 6))
        bits = int(rng.integers(3, 6))
        model = LstmModel.random(n_in, n_h, 2, n_w=n_w, seed=trial, density=float(rng.uniform(0.2, 1.0)))
        eng = MacroLstm(model, cfg, n_bits=bits)
        if bits not in steps_cache:
            steps_cache[bits] = design(eng.adc).qs.quantized.tolist()
        hp, c = eng.zero_state()
        for _ in range(4):
            x = rng.integers(-15, 16, n_in)
            r = eng.step(x, hp, c, warn=False)
            h, cc, hq, codes = golden.golden_step(model.w_cat.tolist(), x.tolist(), hp.tolist(), c.tolist(),
                                                  steps_cache[bits], bits, model.x_max)
            same = (r.h.tolist() == h and r.c.tolist() == cc and r.h_pulses.tolist() == hq
                    and r.codes.tolist() == codes)
            mismatches += not same
            n_steps += 1
            hp, c = r.h_pulses, r.c
    return mismatches == 0 and n_steps >= 1000, f"{n_steps} steps, {mismatches} mismatches", 60.0


HWAT_SIGMA = 0.15
HWAT_SEEDS = (0, 1, 2, 3, 4)


def check_11():
    from test_hwat import finite_difference_error

    grad_err = finite_difference_error()
    diffs = []
    for seed in HWAT_SEEDS:
        accs = []
        for train_sigma in (0.0, HWAT_SIGMA):
            cfg = TrainConfig(seed=seed, noise_sigma=train_sigma)
            res = train_toy(cfg, eval_sigma=HWAT_SIGMA, log_every=cfg.epochs)
            x, y = make_task(cfg.task, seed, "test")
            accs.append(evaluate(res.net, x, y, cfg, HWAT_SIGMA, seed=100 + seed, draws=10))
        diffs.append(accs[1] - accs[0])
    mean = float(np.mean(diffs))
    wins = sum(d > 0 for d in diffs)
    ok = grad_err < 1e-4 and mean > 0 and wins > len(diffs) / 2
    return ok, (f"grad rel err {grad_err:.1e}; noisy-eval gain at sigma {HWAT_SIGMA}: mean {mean:+.3f}, "
                f"{wins}/{len(diffs)} seeds ahead ({' '.join(f'{d:+.3f}' for d in diffs)})"), 600.0


def _cli_runs(root: Path):
    w = root / "weights.csv"
    np.savetxt(w, np.random.default_rng(0).normal(size=(6, 8)), fmt="%.6f", delimiter=",")
    feats = root / "features.csv"
    np.savetxt(feats, np.random.default_rng(1).integers(-15, 16, (6, 40)), fmt="%d", delimiter=",")
    return [
        ["ramp", "--plot"],
        ["ramp", "--activation", "softplus", "--bits", "4", "--mode", "mcl", "--init-mode", "fit"],
        ["convert-sweep", "--column", "2", "--points", "300"],
        ["calibrate", "--columns", "60", "--plot"],
        ["inl", "--columns", "20", "--sweep-points", "2000", "--plot"],
        ["mc-mismatch", "--runs", "20", "--granularity", "1,2,4", "--plot"],
        ["encode", "--weights", str(w), "--n-w", "3"],
        ["map", "--n-w", "5"],
        ["run-lstm", "--features", str(feats), "--mismatch"],
        ["train", "--epochs", "2", "--noise-sigma", "0.1"],
        ["latency-table"],
    ]


def check_12(tmp_root: Path):
    from nlimsim.cli import main

    runs = _cli_runs(tmp_root)
    failures = []
    n_files = 0
    for i, argv in enumerate(runs):
        dirs = []
        for rep in range(2):
            out = tmp_root / f"run{i}_{rep}"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                code = main(argv + ["--seed", "3", "--out", str(out)])
            if code != 0:
                failures.append(f"{argv[0]} exit {code}")
            dirs.append(out)
        a = sorted(p.name for p in dirs[0].iterdir())
        b = sorted(p.name for p in dirs[1].iterdir())
        _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], a, shallow=False)
        if a != b or mismatch or errors:
            failures.append(f"{argv[0]}: {mismatch + errors or 'file sets differ'}")
        n_files += len(a)
    ok = not failures
    detail = f"{len(runs)} commands x2, {n_files} artifacts byte-identical" if ok else "; ".join(failures)
    return ok, detail, 60.0


def _record(n, fn, *args):
    t0 = time.perf_counter()
    ok, detail, budget = fn(*args)
    dt = time.perf_counter() - t0
    ok = bool(ok) and dt < budget
    RESULTS[n] = (ok, f"{detail} [{dt:.1f}s / {budget:.0f}s]")
    return ok, RESULTS[n][1]


@pytest.mark.parametrize("n", range(1, 12))
def test_criterion(n):
    ok, detail = _record(n, globals()[f"check_{n}"])
    assert ok, detail


def test_criterion_12(tmp_path):
    ok, detail = _record(12, check_12, tmp_path)
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    sys.path.insert(0, os.path.dirname(__file__))
    for n in range(1, 13):
        if n == 12:
            with tempfile.TemporaryDirectory() as d:
                _record(n, check_12, Path(d))
        else:
            _record(n, globals()[f"check_{n}"])
        ok, detail = RESULTS[n]
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
