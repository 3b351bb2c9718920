import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from mrplane import fixpoint as fx
from mrplane.fixpoint import FIX8, FIX16, FIX32, FixedFormat, FixedPointError, FixedValue

from strategies import RAW8

ALL8 = range(FIX8.min_raw, FIX8.max_raw + 1)
FORMATS = st.sampled_from([FIX8, FIX16, FIX32, FixedFormat(8, 0), FixedFormat(16, 3)])


def exact_round(q: Fraction, fmt: FixedFormat) -> int:
    # oracle: Python rounds Fractions half to even
    return fmt.saturate(round(q))


def test_format_ranges():
    assert (FIX8.min_raw, FIX8.max_raw) == (-128, 127)
    assert (FIX16.frac_bits, FIX32.frac_bits) == (8, 16)
    assert FixedFormat.parse("fix8") == FIX8
    assert FixedFormat.parse("fix16.3") == FixedFormat(16, 3)
    with pytest.raises(FixedPointError):
        FixedFormat(12, 4)
    with pytest.raises(FixedPointError):
        FixedFormat(8, 8)
    with pytest.raises(FixedPointError):
        FixedValue(128, FIX8)


def test_quantize_examples():
    assert fx.quantize(0.0).raw == 0
    assert fx.quantize(1.0).raw == 16
    assert fx.quantize(100.0).raw == 127
    assert fx.quantize(-100.0).raw == -128
    # ties go to even
    assert fx.quantize_raw(0.5 / 16) == 0
    assert fx.quantize_raw(1.5 / 16) == 2
    assert fx.quantize_raw(math.inf) == 127
    with pytest.raises(FixedPointError):
        fx.quantize_raw(math.nan)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), FORMATS)
def test_quantize_monotone(a, b, fmt):
    lo, hi = sorted((a, b))
    assert fx.quantize_raw(lo, fmt) <= fx.quantize_raw(hi, fmt)


@given(st.floats(-300, 300, allow_nan=False), FORMATS)
def test_quantize_matches_exact_rounding(x, fmt):
    assert fx.quantize_raw(x, fmt) == exact_round(Fraction(x) * fmt.scale, fmt)


def test_add_mul_examples():
    one = fx.quantize(1.0)
    assert fx.fx_add(FixedValue(16), FixedValue(-16)).raw == 0
    assert fx.fx_mul(one, one) == one
    assert fx.fx_add(FixedValue(127), FixedValue(127)).raw == 127
    with pytest.raises(FixedPointError):
        fx.fx_add(FixedValue(1, FIX8), FixedValue(1, FIX16))


def test_fix8_exhaustive_saturation_and_commutativity():
    for a in ALL8:
        for b in ALL8:
            s = fx.add_raw(a, b, FIX8)
            m = fx.mul_raw(a, b, FIX8)
            assert s == fx.add_raw(b, a, FIX8)
            assert m == fx.mul_raw(b, a, FIX8)
            assert -128 <= s <= 127 and -128 <= m <= 127
            assert s == FIX8.saturate(a + b)
            assert m == exact_round(Fraction(a * b, 16), FIX8)


def test_mul_by_one_is_identity_fix8():
    one = fx.quantize(1.0).raw
    assert all(fx.mul_raw(a, one, FIX8) == a for a in ALL8)


@given(st.integers(-(1 << 40), 1 << 40), st.integers(0, 20))
def test_rne_shift_matches_fraction(v, k):
    assert fx.rne_shift(v, k) == round(Fraction(v, 1 << k))


@given(st.integers(-(1 << 30), 1 << 30), st.integers(1, 1 << 12))
def test_rne_div_matches_fraction(n, d):
    assert fx.rne_div(n, d) == round(Fraction(n, d))


def test_reduce_examples():
    x = fx.quantize(1.25)
    assert fx.reduce_vector([x]) == x
    ones16 = [fx.quantize(1.0, FIX16)] * 12
    assert fx.reduce_vector(ones16) == fx.quantize(12.0, FIX16)
    # widened sum is 12 * 16 = 192 raw, above the fix8 maximum
    ones8 = [fx.quantize(1.0)] * 12
    assert sum(v.raw for v in ones8) == 192
    assert fx.reduce_vector(ones8).raw == FIX8.max_raw
    with pytest.raises(FixedPointError):
        fx.reduce_vector([])
    with pytest.raises(FixedPointError):
        fx.reduce_raw([1, 2], "sub", FIX8)


@given(st.lists(RAW8, min_size=1, max_size=40), st.sampled_from(fx.COMBINE_OPS), st.randoms())
def test_reduce_permutation_invariant(raws, op, rnd):
    shuffled = list(raws)
    rnd.shuffle(shuffled)
    assert fx.reduce_raw(raws, op, FIX8) == fx.reduce_raw(shuffled, op, FIX8)


@given(st.lists(RAW8, min_size=2, max_size=40), st.sampled_from(fx.COMBINE_OPS), st.data())
def test_partials_merge_like_one_pass(raws, op, data):
    cut = data.draw(st.integers(1, len(raws) - 1))
    parts = [fx.partial_reduce(raws[:cut], op), fx.partial_reduce(raws[cut:], op)]
    assert fx.finish_partial(fx.merge_partials(parts, op), op, FIX8) == fx.reduce_raw(raws, op, FIX8)


@given(st.lists(RAW8, min_size=1, max_size=6))
def test_mul_reduce_matches_exact_product(raws):
    exact = Fraction(math.prod(raws), 16 ** (len(raws) - 1))
    assert fx.reduce_raw(raws, "mul", FIX8) == exact_round(exact, FIX8)


def test_relu_and_leaky_examples():
    assert fx.relu(FixedValue(-40)).raw == 0
    assert fx.relu(FixedValue(40)).raw == 40
    y = fx.leaky_relu(FixedValue(-64), 2 ** -3)
    assert y.raw == -8
    # real-valued oracle: -4.0 * 0.125
    assert y.to_float() == -4.0 * 0.125
    with pytest.raises(FixedPointError):
        fx.leaky_relu(FixedValue(-64), 0.3)


def test_leaky_matches_real_oracle_exhaustive():
    for a in ALL8:
        want = a if a >= 0 else exact_round(Fraction(a, 8), FIX8)
        assert fx.leaky_relu_raw(a, FIX8) == want


def test_lut_shape_and_examples():
    sig = fx.standard_lut("sigmoid")
    tanh = fx.standard_lut("tanh")
    assert len(sig.entries) == fx.LUT_SIZE == 1024
    assert abs(fx.lut_eval(sig, fx.quantize(0.0)).raw - fx.quantize(0.5).raw) <= 1
    assert abs(fx.lut_eval(tanh, fx.quantize(0.0)).raw) <= 1
    # out-of-range inputs return the boundary entries
    assert fx.lut_eval(sig, FixedValue(-128)).raw == sig.entries[0]
    assert fx.lut_eval(sig, FixedValue(127)).raw == sig.entries[int((127 / 16 + 8) / 16 * 1024)]
    with pytest.raises(FixedPointError):
        fx.build_lut(math.tanh, 1.0, 1.0)
    with pytest.raises(FixedPointError):
        fx.Lut((0,) * 10, 0.0, 1.0)


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "exp"])
def test_lut_monotone_entries(name):
    e = fx.standard_lut(name).entries
    assert all(a <= b for a, b in zip(e, e[1:]))


def test_lut_entries_sample_bin_centres():
    lut = fx.build_lut(lambda x: x / 2, -4.0, 4.0)
    w = 8 / 1024
    for k in (0, 1, 511, 512, 1023):
        assert lut.entries[k] == fx.quantize_raw((-4.0 + (k + 0.5) * w) / 2)


@pytest.mark.parametrize("name,slope", [("sigmoid", 0.25), ("tanh", 1.0)])
def test_lut_error_bound_exhaustive_fix8(name, slope):
    lut = fx.standard_lut(name)
    fn = fx.LUT_FUNCTIONS[name]
    lo, hi = fx.LUT_DOMAINS[name]
    bound = (hi - lo) / 1024 * slope + 1 / 16
    for raw in ALL8:
        x = raw / 16
        got = fx.lut_eval(lut, FixedValue(raw)).to_float()
        assert abs(got - fn(x)) <= bound + 1e-12, (raw, got, fn(x))


def test_weights_csv_roundtrip(tmp_path):
    rows = [[0.5, -1.0, 0.03], [7.9, -9.0, 0.0]]
    p = tmp_path / "w.csv"
    fx.write_weights_csv(p, rows)
    got = fx.load_weights_csv(p)
    assert got == [[fx.quantize_raw(v) for v in r] for r in rows]


def test_random_rows_through_fix16_and_fix32():
    rng = random.Random(3)
    for fmt in (FIX16, FIX32):
        for _ in range(500):
            a = rng.randint(fmt.min_raw, fmt.max_raw)
            b = rng.randint(fmt.min_raw, fmt.max_raw)
            assert fx.mul_raw(a, b, fmt) == exact_round(Fraction(a * b, fmt.scale), fmt)
