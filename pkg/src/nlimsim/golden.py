"""Plain-integer reference for one LSTM timestep on the macro.

Written without numpy so it can serve as an independent check of the
simulated datapath: integer MAC, integer ramp comparison, fixed-point update.
"""

from __future__ import annotations

import math


def _rsr(x: int, s: int) -> int:
    return (x + (1 << (s - 1))) >> s


def ramp_levels(steps) -> list[int]:
    """Integer ramp levels: start at minus half the step sum (rounded away from zero)."""
    total = sum(steps)
    start = -((total + 1) // 2)  # steps are positive, so this rounds half away from zero
    levels = [start]
    for q in steps:
        levels.append(levels[-1] + q)
    return levels


def tanh_table(segments: int = 64, span: float = 4.0) -> list[int]:
    out = []
    for j in range(segments + 1):
        x = -span + 2 * span * j / segments
        out.append(math.floor(math.tanh(x) * 64 + 0.5))
    return out


_TABLE = tanh_table()


def tanh_q6(c: int) -> int:
    c = max(-256, min(256, c))
    off = c + 256
    j, frac = off // 8, off % 8
    if j == 64:
        return _TABLE[64]
    return _TABLE[j] + _rsr((_TABLE[j + 1] - _TABLE[j]) * frac, 3)


def golden_step(w_cat, x, h_pulses, c_prev, steps, n_bits: int, x_max: int):
    """Returns (h, c, next pulses, codes) as Python lists; codes are gate-major [i, f, g, o]."""
    levels = ramp_levels(steps)
    inp = list(x) + list(h_pulses)
    n_cols = len(w_cat[0])
    hidden = n_cols // 4
    codes = []
    for col in range(n_cols):
        mac = sum(int(w_cat[r][col]) * int(inp[r]) for r in range(len(inp)))
        codes.append(sum(1 for lv in levels if lv < mac))
    sh_s, sh_t = 6 - n_bits, 7 - n_bits
    h, c, hp = [], [], []
    for k in range(hidden):
        ci, cf, cg, co = (codes[g * hidden + k] for g in range(4))
        i = (ci + 1) << sh_s
        f = (cf + 1) << sh_s
        o = (co + 1) << sh_s
        g = -64 + ((cg + 1) << sh_t)
        ck = max(-2048, min(2047, _rsr(f * int(c_prev[k]) + i * g, 6)))
        hk = _rsr(o * tanh_q6(ck), 6)
        c.append(ck)
        h.append(hk)
        hp.append(max(-x_max, min(x_max, _rsr(hk * x_max, 6))))
    gate_codes = [codes[g * hidden:(g + 1) * hidden] for g in range(4)]
    return h, c, hp, gate_codes
