import itertools
import json
import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latent.encoding import (
    EncodingSpec,
    MergedString,
    NormStats,
    decode_matrix,
    decode_value,
    encode_matrix,
    encode_value,
    encode_vector,
    fit_zscore,
    sensitivity_of,
)

SPEC = EncodingSpec(4, 5)


def oracle_encode(x: float, n: int, m: int) -> str:
    """String-building reference: sign, then floor(|x| * 2^m) in n+m binary digits."""
    sign = "1" if math.copysign(1.0, x) < 0 else "0"
    code = math.floor(Fraction(abs(x)) * 2**m)
    code = min(code, 2 ** (n + m) - 1)
    return sign + format(code, f"0{n + m}b")


def as_str(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def test_worked_examples():
    assert as_str(encode_value(-1.40625, SPEC)) == "1000101101"
    assert as_str(encode_value(2.5, SPEC)) == "0001010000"
    assert decode_value([1, 0, 0, 0, 1, 0, 1, 1, 0, 1], SPEC) == -1.40625


def test_spec_properties():
    assert SPEC.length == 10
    assert SPEC.resolution == 2**-5
    assert SPEC.max_magnitude == 16 - 2**-5
    for bad in [(-1, 2), (0, 0), (40, 30), (1.5, 2)]:
        with pytest.raises(ValueError):
            EncodingSpec(*bad)


def test_saturation_and_truncation():
    assert as_str(encode_value(100.0, SPEC)) == "0111111111"
    assert as_str(encode_value(-100.0, SPEC)) == "1111111111"
    # truncation toward zero, not rounding
    assert decode_value(encode_value(0.0312, SPEC), SPEC) == 0.0
    assert decode_value(encode_value(-0.99, SPEC), SPEC) == -0.96875


def test_exhaustive_decode_encode_identity():
    patterns = np.array(list(itertools.product((0, 1), repeat=10)), dtype=np.uint8)
    values = decode_matrix(patterns, SPEC)
    assert values.shape == (1024, 1)
    assert np.array_equal(encode_matrix(values, SPEC), patterns)


def test_negative_zero_pattern():
    v = decode_value([1] + [0] * 9, SPEC)
    assert v == 0.0 and math.copysign(1.0, v) == -1.0


@given(st.floats(-20, 20, allow_nan=False), st.integers(0, 6), st.integers(0, 8))
def test_matches_string_oracle(x, n, m):
    if n + m == 0:
        return
    spec = EncodingSpec(n, m)
    assert as_str(encode_value(x, spec)) == oracle_encode(x, n, m)


@given(st.floats(-15.96875, 15.96875, allow_nan=False))
def test_round_trip_error_below_resolution(x):
    y = decode_value(encode_value(x, SPEC), SPEC)
    assert abs(y - x) < SPEC.resolution
    assert abs(y) <= abs(x)


def test_rejects_non_finite():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ValueError):
            encode_value(bad, SPEC)
    with pytest.raises(ValueError):
        encode_matrix(np.array([1.0, np.nan]), SPEC)
    with pytest.raises(ValueError):
        encode_matrix(np.float64(1.0), SPEC)


def test_matrix_layout_is_feature_major():
    v = np.array([-1.40625, 2.5, 0.0])
    bits = encode_matrix(v, SPEC)
    assert as_str(bits) == "1000101101" + "0001010000" + "0000000000"
    batch = encode_matrix(np.stack([v, -v]), SPEC)
    assert batch.shape == (2, 30)
    assert np.array_equal(batch[0], bits)


def test_merged_string():
    ms = encode_vector(np.arange(7) / 3, SPEC)
    assert ms.r == 7 and ms.payload.size == 70
    assert not ms.payload.flags.writeable
    with pytest.raises(ValueError):
        MergedString(ms.payload[:69], 7, SPEC)
    with pytest.raises(ValueError):
        encode_vector(np.zeros((2, 2)), SPEC)


def test_sensitivity_law():
    assert sensitivity_of(SPEC, 9216) == 92160
    assert sensitivity_of(EncodingSpec(2, 3), 1) == 6
    with pytest.raises(ValueError):
        sensitivity_of(SPEC, 0)


def test_fit_zscore_population_std():
    data = np.array([[1.0, 10.0], [3.0, 10.0], [5.0, 10.0]])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        stats = fit_zscore(data)
    assert any("zero-variance" in str(w.message) for w in caught)
    assert np.allclose(stats.mean, [3.0, 10.0])
    assert np.allclose(stats.std, [math.sqrt(8 / 3), 1.0])
    z = stats.transform(data)
    assert np.allclose(z[:, 0].mean(), 0) and np.allclose(z[:, 0].std(), 1)
    assert np.allclose(z[:, 1], 0)


def test_fit_zscore_rejects_small_input():
    with pytest.raises(ValueError):
        fit_zscore(np.ones((1, 3)))
    with pytest.raises(ValueError):
        fit_zscore(np.ones((0, 3)))


def test_norm_stats_io(tmp_path):
    stats = NormStats([0.5, -1.0], [2.0, 0.25])
    path = tmp_path / "stats.json"
    stats.save(path)
    doc = json.loads(path.read_text())
    assert doc == {"0": {"mean": 0.5, "std": 2.0}, "1": {"mean": -1.0, "std": 0.25}}
    again = NormStats.load(path)
    assert np.array_equal(again.mean, stats.mean) and np.array_equal(again.std, stats.std)
    assert not stats.mean.flags.writeable
    with pytest.raises(ValueError):
        NormStats([0.0], [0.0])
    with pytest.raises(ValueError):
        NormStats.from_dict({"0": {"mean": 0, "std": 1}, "2": {"mean": 0, "std": 1}})
    with pytest.raises(ValueError):
        stats.transform(np.zeros(3))
