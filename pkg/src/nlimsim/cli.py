"""Command-line entry point: ``nlimsim <command> [options]``.

Every command writes its artifacts into ``--out`` (default ``$NLIMSIM_OUT``
or ``./nlimsim_out``) together with ``manifest_<command>.json``. Exit codes: 0 ok,
1 other error, 2 usage, 3 config/input, 4 mapping, 5 calibration range.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import adc as adcm
from .activations import ACTIVATION_NAMES, make_activation
from .codec import encode_matrix, encoded_to_json, quantize_weights, read_matrix_csv, scheme_for
from .config import load_toml, macro_from_dict
from .errors import CalibrationRangeError, ConfigError, DomainError, InputError, MappingError, NlimError, RangeError
from .hwat import TaskSpec, TrainConfig, dump_export, export_for_macro, model_from_export, train_toy
from .lstm import LstmModel, MacroLstm, PipelineModel, latency_report, map_layer, op_breakdown, run_sequence
from .ramp import STEP_TABLE_HEADER, InitMode, Mode, step_table_rows
from .reports import Manifest, atomic_write, emit_plotdata, sha256_file, write_csv, write_json

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_CONFIG, EXIT_MAPPING, EXIT_CALIB = 0, 1, 2, 3, 4, 5

COMMANDS = ("ramp", "convert-sweep", "calibrate", "inl", "mc-mismatch", "encode", "map", "run-lstm", "train",
            "latency-table")


@dataclass
class ExperimentSpec:
    command: str
    config_paths: list = field(default_factory=list)
    out_dir: str = "nlimsim_out"
    seed: int = 0
    runs: int = 1
    args: dict = field(default_factory=dict)
    plot: bool = False


def _csv_list(kind):
    def parse(s):
        try:
            return [kind(v) for v in s.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {s!r}") from None

    return parse


def _range(s):
    try:
        lo, hi = (float(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("range must be LO,HI") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlimsim", description="Compute-in-memory macro and nonlinear ramp converter simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[], help="TOML config file (repeatable, later wins)")
    common.add_argument("--out", default=None, help="output directory (default $NLIMSIM_OUT or ./nlimsim_out)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--plot", action="store_true", help="also render PNG figures")

    act = argparse.ArgumentParser(add_help=False)
    act.add_argument("--activation", choices=ACTIVATION_NAMES, default=None)
    act.add_argument("--bits", type=int, default=None)
    act.add_argument("--mode", choices=["pwm", "mcl"], default=None)
    act.add_argument("--range", type=_range, default=None, dest="output_range", help="clip range LO,HI")
    act.add_argument("--init-mode", choices=[m.value for m in InitMode], default=None)
    act.add_argument("--calib-unit", type=float, default=None, help="ramp steps per calibration pulse-cycle")

    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("ramp", parents=[common, act], help="ramp step table")
    s.add_argument("--granularity", type=int, default=1)

    s = sub.add_parser("convert-sweep", parents=[common, act], help="transfer curve vs. ideal quantizer")
    s.add_argument("--points", type=int, default=1000)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--column", type=int, default=None, help="simulate this mismatched, calibrated column")

    s = sub.add_parser("calibrate", parents=[common, act], help="zero-cross calibration over many columns")
    s.add_argument("--columns", type=int, default=1000)
    s.add_argument("--sigma", type=float, default=None)

    s = sub.add_parser("inl", parents=[common, act], help="average INL of calibrated columns")
    s.add_argument("--columns", type=int, default=100)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--sweep-points", type=int, default=None)
    s.add_argument("--uncalibrated", action="store_true")

    s = sub.add_parser("mc-mismatch", parents=[common, act], help="quantization vs. mismatch error per resolution")
    s.add_argument("--runs", type=int, default=100)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--granularity", type=_csv_list(int), default=None, help="also sweep unit-cell granularity")

    s = sub.add_parser("encode", parents=[common], help="quantize and encode a weight matrix")
    s.add_argument("--weights", required=True, help="CSV weight matrix")
    s.add_argument("--n-w", type=int, default=3)
    s.add_argument("--integer", action="store_true", help="weights are already integers")

    s = sub.add_parser("map", parents=[common, act], help="LSTM layer mapping and op breakdown")
    s.add_argument("--n-w", type=int, default=3)
    s.add_argument("--input-dim", type=int, default=40)
    s.add_argument("--hidden-dim", type=int, default=38)

    s = sub.add_parser("run-lstm", parents=[common], help="LSTM inference on the macro")
    s.add_argument("--model", default=None, help="exported model JSON (default: random 40/38/12 model)")
    s.add_argument("--features", default=None, help="CSV of integer pulses, one row per timestep")
    s.add_argument("--steps", type=int, default=49)
    s.add_argument("--adc-bits", type=int, default=5)
    s.add_argument("--mismatch", action="store_true", help="sample and calibrate column nonidealities")

    s = sub.add_parser("train", parents=[common], help="train the toy LSTM with noise in the loop")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--noise-sigma", type=float, default=None)
    s.add_argument("--quant-bits", type=int, default=None)
    s.add_argument("--eval-sigma", type=float, default=None)

    s = sub.add_parser("latency-table", parents=[common], help="ramp cell/cycle budget table")
    s.add_argument("--activation", choices=ACTIVATION_NAMES, default="sigmoid")
    s.add_argument("--bits", type=_csv_list(int), default=[4, 5])
    s.add_argument("--modes", type=_csv_list(str), default=["pwm", "mcl"])
    return p


def merged_config(paths) -> dict:
    out: dict = {}
    for path in paths:
        for section, body in load_toml(path).items():
            if not isinstance(body, dict):
                raise ConfigError(f"{path}: top-level key {section!r} must be a table")
            out.setdefault(section, {}).update(body)
    known = {"macro", "adc", "train"}
    extra = sorted(set(out) - known)
    if extra:
        raise ConfigError(f"unknown config sections: {', '.join(extra)}")
    return out


def adc_from(conf: dict, a) -> adcm.AdcConfig:
    d = dict(conf.get("adc", {}))
    allowed = {"activation", "bits", "mode", "output_range", "init_mode", "calib_unit", "calib_rows",
               "calib_pulses", "granularity"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown [adc] keys: {', '.join(unknown)}")
    for key in ("activation", "bits", "mode", "output_range", "init_mode", "calib_unit"):
        v = getattr(a, key, None)
        if v is not None:
            d[key] = v
    g = getattr(a, "granularity", None)
    if isinstance(g, int):
        d["granularity"] = g
    name = d.get("activation", "sigmoid")
    act = make_activation(name, d.get("output_range"))
    kw = dict(
        n_bits=int(d.get("bits", 5)),
        mode=d.get("mode", "pwm"),
        init_mode=d.get("init_mode", InitMode.HALF_SUM),
        calib_unit=float(d.get("calib_unit", 1.0)),
        granularity=int(d.get("granularity", 1)),
    )
    if "calib_pulses" in d:
        kw["calib_pulses"] = tuple(d["calib_pulses"])
        kw["calib_rows"] = len(kw["calib_pulses"])
    return adcm.AdcConfig(act, **kw)


def train_from(conf: dict, a) -> TrainConfig:
    d = dict(conf.get("train", {}))
    task = TaskSpec(**d.pop("task", {})) if "task" in d else TaskSpec()
    known = {f.name for f in fields(TrainConfig)} - {"task"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown [train] keys: {', '.join(unknown)}")
    try:
        cfg = TrainConfig(task=task, **d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    over = {k: getattr(a, k) for k in ("epochs", "noise_sigma", "quant_bits") if getattr(a, k, None) is not None}
    return replace(cfg, seed=a.seed, **over)


def _tag(adc: adcm.AdcConfig) -> str:
    return f"{adc.activation.name}_{adc.n_bits}b_{adc.mode.value.lower()}"


def cmd_ramp(spec, conf, a, cfg, man):
    adc = adc_from(conf, a)
    d = adcm.design(adc)
    out = Path(spec.out_dir)
    path = out / f"ramp_{_tag(adc)}.csv"
    man.add(write_csv(path, STEP_TABLE_HEADER, step_table_rows(d.pts, d.qs),
                      [f"seed={spec.seed} granularity={adc.granularity}"]))
    s = d.schedule
    summary = {
        "activation": adc.activation.name,
        "output_range": list(adc.activation.output_range),
        "bits": adc.n_bits,
        "mode": adc.mode.value,
        "steps": d.qs.n_steps,
        "step_sum": d.qs.total,
        "cells": s.total_cells,
        "cycles": s.total_cycles,
        "init_cells": s.init_cells,
        "init_offset_units": d.plan.offset_units,
        "init_pulses": list(d.plan.pulses),
        "scale": d.scale,
        "unit_step_volts": cfg.unit_step,
    }
    man.add(write_json(out / f"ramp_{_tag(adc)}.json", summary))
    if spec.plot:
        from .plots import plot_ramp

        ideal = d.pts.v / d.qs.unit
        man.add(plot_ramp(d.levels_units, ideal, out / f"ramp_{_tag(adc)}.png", adc.activation.name))
    print(f"{d.qs.n_steps} steps, sum {d.qs.total}; {s.total_cells} cells, {s.total_cycles} cycles")


def _column(adc, cfg, a, seed):
    if a.column is None:
        return None, None
    pop = adcm.sample_columns(adc, cfg, a.column + 1, seed, a.sigma)
    col = pop.column(a.column)
    return col, adcm.calibrate_column(col, adc, cfg)


def cmd_convert_sweep(spec, conf, a, cfg, man):
    adc = adc_from(conf, a)
    adcm.check_budget(adc, cfg)
    d = adcm.design(adc)
    col, cal = _column(adc, cfg, a, spec.seed)
    thr = adcm.thresholds(adc, cfg, col, cal)
    lo, hi = d.levels_units[0] - 2, d.levels_units[-1] + 2
    units = np.linspace(lo, hi, a.points)
    v = units * cfg.unit_step
    codes = adcm.codes_from_thresholds(v, thr)
    act = adc.activation
    y = np.asarray(act.forward(units * d.scale), dtype=float)
    oracle = np.clip(np.floor((y - act.f_min) / act.output_lsb(adc.n_bits)), 0, 2**adc.n_bits - 1).astype(int)
    rows = list(zip(v, units, codes, oracle))
    path = emit_plotdata("transfer", rows, Path(spec.out_dir) / f"transfer_{_tag(adc)}.csv",
                         comments=[f"seed={spec.seed}", f"column={a.column}"])
    man.add(path)
    print(f"max |code - oracle| = {int(np.max(np.abs(codes - oracle)))}")


def cmd_calibrate(spec, conf, a, cfg, man):
    adc = adc_from(conf, a)
    study = adcm.calibration_study(adc, cfg, a.columns, spec.seed, a.sigma)
    out = Path(spec.out_dir)
    rows = [(i, study.pre_rmse[i], study.post_rmse[i], c.offset_steps) for i, c in enumerate(study.calibs)]
    man.add(emit_plotdata("calibration", rows, out / f"calibration_{_tag(adc)}.csv", [f"seed={spec.seed}"]))
    man.add(write_json(out / f"calib_state_{_tag(adc)}.json", adcm.calibration_to_json(spec.seed, study.calibs, adc)))
    summary = {
        "columns": a.columns,
        "pre_rmse_mean": float(np.mean(study.pre_rmse)),
        "post_rmse_mean": float(np.mean(study.post_rmse)),
        "improvement": study.improvement,
        "inl_pre": study.inl_pre,
        "inl_post": study.inl_post,
        "saturated_columns": int(sum(abs(c.offset_steps) >= adc.calib_range_steps for c in study.calibs)),
    }
    man.add(write_json(out / f"calibration_summary_{_tag(adc)}.json", summary))
    if spec.plot:
        from .plots import plot_calibration

        man.add(plot_calibration(study.pre_rmse, study.post_rmse, out / f"calibration_{_tag(adc)}.png"))
    print(f"RMSE {summary['pre_rmse_mean']:.3f} -> {summary['post_rmse_mean']:.3f} LSB "
          f"({summary['improvement']:.2f}x)")


def cmd_inl(spec, conf, a, cfg, man):
    adc = adc_from(conf, a)
    pop = adcm.sample_columns(adc, cfg, a.columns, spec.seed, a.sigma)
    calibs = None if a.uncalibrated else adcm.calibrate_population(pop, adc, cfg)
    thr = adcm.population_thresholds(adc, cfg, pop, calibs)
    rows = adcm.inl_rows(adc, cfg, thr, a.sweep_points)
    out = Path(spec.out_dir)
    man.add(emit_plotdata("inl", rows, out / f"inl_{_tag(adc)}.csv", [f"seed={spec.seed}"]))
    avg = adcm.measure_inl(adc, cfg, thr, a.sweep_points)
    man.add(write_csv(out / f"inl_summary_{_tag(adc)}.csv", ("activation", "bits", "columns", "calibrated", "avg_inl"),
                      [(adc.activation.name, adc.n_bits, a.columns, not a.uncalibrated, avg)]))
    if spec.plot:
        from .plots import plot_inl

        man.add(plot_inl(rows, out / f"inl_{_tag(adc)}.png", adc.activation.name))
    print(f"average INL {avg:.3f} LSB")


def cmd_mc(spec, conf, a, cfg, man):
    adc = adc_from(conf, a)
    out = Path(spec.out_dir)
    rows = adcm.error_decomposition(adc.activation, cfg, a.runs, spec.seed, mode=adc.mode, sigma=a.sigma)
    man.add(emit_plotdata("error_decomposition", rows, out / f"error_decomposition_{adc.activation.name}.csv",
                          [f"seed={spec.seed}", f"runs={a.runs}"]))
    if a.granularity:
        grows = []
        for g in a.granularity:
            r = adcm.error_decomposition(adc.activation, cfg, a.runs, spec.seed, bits=(adc.n_bits,), mode=adc.mode,
                                         granularity=g, sigma=a.sigma)[0]
            grows.append({**r, "granularity": g})
        man.add(emit_plotdata("granularity", grows, out / f"granularity_{_tag(adc)}.csv", [f"seed={spec.seed}"]))
    if spec.plot:
        from .plots import plot_error_decomposition

        man.add(plot_error_decomposition(rows, out / f"error_decomposition_{adc.activation.name}.png"))
    for r in rows:
        print(f"{r['bits']} bits: quant {r['quant_rmse']:.3f}  mismatch {r['mismatch_mean']:.3f} "
              f"+/- {r['mismatch_std']:.3f}")


def cmd_encode(spec, conf, a, cfg, man):
    w = read_matrix_csv(a.weights)
    scheme = scheme_for(a.n_w)
    if a.integer:
        if not np.all(w == np.round(w)):
            raise InputError("--integer given but the matrix has fractional entries")
        w_int, step = w.astype(np.int64), 1.0
    else:
        w_int, step = quantize_weights(w, a.n_w)
    cells = encode_matrix(w_int, scheme)
    out = Path(spec.out_dir)
    man.add(atomic_write(out / f"encoded_{a.n_w}b.json", encoded_to_json(cells, scheme)))
    man.add(write_csv(out / f"weights_int_{a.n_w}b.csv", [f"c{j}" for j in range(w_int.shape[1])], w_int.tolist(),
                      [f"step={step:.10g}"]))
    print(f"{w_int.size} weights, {float(np.mean(w_int == 0)):.1%} zero, {scheme.cells_per_weight} cells each")


def cmd_map(spec, conf, a, cfg, man):
    adc = adc_from(conf, a)
    model = LstmModel(np.zeros((a.input_dim + a.hidden_dim, 4 * a.hidden_dim), dtype=int),
                      np.zeros((a.hidden_dim, 1), dtype=int), a.input_dim, a.hidden_dim, a.n_w)
    mapping = map_layer(model, cfg, adc)
    out = Path(spec.out_dir)
    man.add(atomic_write(out / "mapping.txt", mapping.describe() + "\n"))
    lat = latency_report(mapping, PipelineModel(), adc)
    man.add(write_csv(out / "latency.csv", ("item", "cycles"), lat.rows()))
    ob = op_breakdown(model)
    man.add(write_csv(out / "op_breakdown.csv", ("category", "on_macro", "off_macro", "on_fraction"), ob.rows()))
    print(mapping.describe())
    print(f"per timestep {lat.per_timestep} cycles; NL on-macro {float(ob.nl_fraction):.1%}, "
          f"linear on-macro {float(ob.linear_fraction):.2%}")


def cmd_run_lstm(spec, conf, a, cfg, man):
    inputs = {}
    if a.model:
        import json

        with open(a.model) as fh:
            try:
                model = model_from_export(json.load(fh))
            except (KeyError, ValueError) as exc:
                raise InputError(f"{a.model}: {exc}") from None
        inputs["model"] = sha256_file(a.model)
    else:
        model = LstmModel.random(seed=spec.seed)
    if a.features:
        feats = read_matrix_csv(a.features)
        inputs["features"] = sha256_file(a.features)
    else:
        rng = np.random.default_rng([spec.seed, 5])
        feats = rng.integers(-model.x_max, model.x_max + 1, (a.steps, model.input_dim))
    eng = MacroLstm(model, cfg if a.mismatch else cfg.ideal(), n_bits=a.adc_bits, ideal=not a.mismatch, seed=spec.seed)
    res = run_sequence(model, feats, None, engine=eng, keep_steps=True)
    out = Path(spec.out_dir)
    man.add(write_csv(out / "logits.csv", ("class", "logit"), enumerate(res.logits.tolist()),
                      [f"seed={spec.seed}", f"label={res.label}"]))
    trace = [(t, k, int(r.h[k]), int(r.c[k]), *[int(v) for v in r.codes[:, k]])
             for t, r in enumerate(res.steps) for k in range(model.hidden_dim)]
    man.add(write_csv(out / "steps.csv", ("t", "unit", "h_q6", "c_q6", "code_i", "code_f", "code_g", "code_o"), trace))
    man.doc["inputs"].update(inputs)
    print(f"label {res.label}; dynamic-range violations {res.dr_violations}")


def cmd_train(spec, conf, a, cfg, man):
    tc = train_from(conf, a)
    eval_sigma = a.eval_sigma if a.eval_sigma is not None else tc.noise_sigma or 0.05
    res = train_toy(tc, eval_sigma=eval_sigma)
    out = Path(spec.out_dir)
    man.add(write_csv(out / "metrics.csv", ("epoch", "loss", "clean_acc", "noisy_acc"), res.history,
                      [f"seed={tc.seed}", f"eval_sigma={eval_sigma}"]))
    man.add(atomic_write(out / "weights.json", dump_export(export_for_macro(res.net, tc))))
    print(f"clean {res.clean_acc:.3f}  noisy {res.noisy_acc:.3f}")


def cmd_latency_table(spec, conf, a, cfg, man):
    rows = []
    act = make_activation(a.activation)
    for n in a.bits:
        for m in a.modes:
            adc = adcm.AdcConfig(act, n_bits=n, mode=Mode.parse(m))
            s = adcm.design(adc).schedule
            rows.append((n, adc.mode.value, s.total_cells, s.total_cycles, s.init_cells))
    man.add(write_csv(Path(spec.out_dir) / f"latency_table_{a.activation}.csv",
                      ("bits", "mode", "cells", "cycles", "init_cells"), rows))
    for r in rows:
        print(f"{r[0]}-bit {r[1]}: {r[2]} cells, {r[3]} cycles")


HANDLERS = {
    "ramp": cmd_ramp,
    "convert-sweep": cmd_convert_sweep,
    "calibrate": cmd_calibrate,
    "inl": cmd_inl,
    "mc-mismatch": cmd_mc,
    "encode": cmd_encode,
    "map": cmd_map,
    "run-lstm": cmd_run_lstm,
    "train": cmd_train,
    "latency-table": cmd_latency_table,
}


def _normalized_args(ns) -> dict:
    skip = {"config", "out", "plot", "command"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(ns).items()) if k not in skip}


def run_experiment(spec: ExperimentSpec, ns) -> tuple[int, Manifest | None]:
    conf = merged_config(spec.config_paths)
    cfg = macro_from_dict(conf.get("macro"))
    inputs = {f"config:{Path(p).name}": sha256_file(p) for p in spec.config_paths}
    Path(spec.out_dir).mkdir(parents=True, exist_ok=True)
    man = Manifest(spec.out_dir, spec.command, spec.seed, spec.args, inputs)
    HANDLERS[spec.command](spec, conf, ns, cfg, man)
    man.write()
    return EXIT_OK, man


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    out = ns.out or os.environ.get("NLIMSIM_OUT") or "nlimsim_out"
    spec = ExperimentSpec(ns.command, list(ns.config), out, ns.seed, getattr(ns, "runs", 1),
                          _normalized_args(ns), ns.plot)
    try:
        status, _ = run_experiment(spec, ns)
        return status
    except (ConfigError, InputError, DomainError, RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MappingError as exc:
        print(f"mapping error: {exc}", file=sys.stderr)
        return EXIT_MAPPING
    except CalibrationRangeError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIB
    except (NlimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
