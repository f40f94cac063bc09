import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlimsim.analog import Rail, array_mac_units
from nlimsim.codec import (
    EncodedWeight,
    decode_matrix,
    decode_multibit,
    encode_matrix,
    encode_multibit,
    encoded_to_json,
    quantize_weights,
    read_matrix_csv,
    scheme_costs,
    scheme_for,
    ternarize,
)
from nlimsim.errors import ConfigError, InvalidEncoding, RangeError


def test_ternarize_example():
    assert ternarize([1.0, -1.0, 0.1, -0.1]).tolist() == [1, -1, 0, 0]
    assert ternarize(np.zeros((2, 3))).tolist() == [[0] * 3] * 2
    with pytest.raises(ValueError):
        ternarize([])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.floats(0.01, 100))
def test_ternarize_scale_invariant(w, c):
    w = np.array(w)
    assert np.array_equal(ternarize(c * w), ternarize(w))


@pytest.mark.parametrize("n,cells,clocks,bwr", [(2, 1, 1, 1.0), (3, 2, 1, 2.0), (4, 3, 2, 2.0), (5, 4, 2, 4.0)])
def test_scheme_table(n, cells, clocks, bwr):
    s = scheme_for(n)
    assert (s.cells_per_weight, s.latency_clocks, s.n_bwr) == (cells, clocks, bwr)
    assert sorted(s.magnitudes) == [2**k for k in range(n - 1)]


def test_five_bit_cell_map():
    s = scheme_for(5)
    assert s.magnitudes == (8, 4, 2, 1)
    assert s.rail_assignment == (Rail.MSB, Rail.MSB, Rail.LSB, Rail.LSB)


@pytest.mark.parametrize("w,cells", [(-15, (-1, -1, -1, -1)), (-14, (-1, -1, -1, 0)), (0, (0, 0, 0, 0)),
                                     (5, (0, 1, 0, 1)), (15, (1, 1, 1, 1))])
def test_five_bit_examples(w, cells):
    e = encode_multibit(w, scheme_for(5))
    assert e.cell_weights == cells
    assert decode_multibit(e) == w


def test_encode_errors():
    with pytest.raises(RangeError):
        encode_multibit(16, scheme_for(5))
    with pytest.raises(InvalidEncoding):
        decode_multibit(EncodedWeight((1, -1, 0, 0), scheme_for(5)))
    with pytest.raises(ConfigError):
        scheme_for(6)


def test_scheme_costs():
    assert scheme_costs(5) == (4, 2)
    assert scheme_costs(5, "multicell_only") == (15, 1)
    assert scheme_costs(5, "pwm_only") == (1, 15)
    with pytest.raises(ConfigError):
        scheme_costs(5, "capacitor")


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_matrix_roundtrip(n):
    s = scheme_for(n)
    m = s.max_value
    w = np.arange(-m, m + 1).reshape(-1, 1).repeat(3, axis=1)
    assert np.array_equal(decode_matrix(encode_matrix(w, s), s), w)


def test_quantize_weights_levels():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(30, 30))
    for n in (2, 3, 4, 5):
        q, step = quantize_weights(w, n)
        assert np.abs(q).max() <= 2 ** (n - 1) - 1
        assert step == pytest.approx(1.4 * np.mean(np.abs(w)) / 2 ** (n - 2))
    q2, _ = quantize_weights(w, 2)
    assert np.array_equal(q2, ternarize(w))


def test_csv_and_json(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("# header\n1,2\n-3,0.5\n\n")
    assert read_matrix_csv(p).tolist() == [[1, 2], [-3, 0.5]]
    s = scheme_for(3)
    doc = json.loads(encoded_to_json(encode_matrix(np.array([[3, -2]]), s), s))
    assert doc["cells"] == [[[1, -1], [1, 0]]]
    p.write_text("1,x\n")
    with pytest.raises(ConfigError):
        read_matrix_csv(p)


@given(st.integers(3, 5), st.data())
def test_encoded_mac_equals_integer_dot(n, data):
    s = scheme_for(n)
    rows = data.draw(st.integers(1, 12))
    w = np.array(data.draw(st.lists(st.integers(-s.max_value, s.max_value), min_size=rows, max_size=rows)))
    x = np.array(data.draw(st.lists(st.integers(-15, 15), min_size=rows, max_size=rows)))
    cells = encode_matrix(w[:, None], s).reshape(rows * s.cells_per_weight, 1)
    mult = np.tile(s.pulse_multipliers, rows)
    ratio = np.tile(s.rail_ratios(), rows)
    left, right, _ = array_mac_units(cells, np.repeat(x, s.cells_per_weight), ratio, mult)
    assert left[0] - right[0] == int(w @ x)
