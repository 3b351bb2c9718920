"""Bit-exact signed fixed-point arithmetic for the 8/16/32-bit fabric data paths.

Values are two's complement integers (``raw``) scaled by ``2**-frac_bits``.
Every operation computes its exact result in unbounded Python integers, then
rounds to nearest-even on the raw grid and saturates at the format bounds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

LUT_SIZE = 1024

COMBINE_OPS = ("add", "mul", "max", "min")


class FixedPointError(ValueError):
    pass


@dataclass(frozen=True)
class FixedFormat:
    total_bits: int = 8
    frac_bits: int = 4

    def __post_init__(self):
        if self.total_bits not in (8, 16, 32):
            raise FixedPointError(f"unsupported width {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise FixedPointError(f"frac_bits {self.frac_bits} out of range for fix{self.total_bits}")

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def name(self) -> str:
        return f"fix{self.total_bits}"

    def saturate(self, raw: int) -> int:
        return max(self.min_raw, min(self.max_raw, raw))

    def __str__(self):
        return f"fix{self.total_bits}.{self.frac_bits}"

    @classmethod
    def parse(cls, text: str) -> "FixedFormat":
        """Parse ``fix8`` (default fraction) or ``fix8.3`` (explicit fraction)."""
        text = text.strip()
        if not text.startswith("fix"):
            raise FixedPointError(f"bad format {text!r}")
        body = text[3:]
        if "." in body:
            bits, frac = body.split(".", 1)
            return cls(int(bits), int(frac))
        return default_format(int(body))


FIX8 = FixedFormat(8, 4)
FIX16 = FixedFormat(16, 8)
FIX32 = FixedFormat(32, 16)

_DEFAULTS = {8: FIX8, 16: FIX16, 32: FIX32}


def default_format(total_bits: int) -> FixedFormat:
    try:
        return _DEFAULTS[total_bits]
    except KeyError:
        raise FixedPointError(f"unsupported width {total_bits}") from None


@dataclass(frozen=True)
class FixedValue:
    raw: int
    format: FixedFormat = FIX8

    def __post_init__(self):
        if not self.format.min_raw <= self.raw <= self.format.max_raw:
            raise FixedPointError(f"raw {self.raw} outside {self.format}")

    def to_float(self) -> float:
        return self.raw / self.format.scale

    def __float__(self):
        return self.to_float()


def rne_shift(value: int, shift: int) -> int:
    """Divide ``value`` by ``2**shift``, rounding half to even."""
    if shift <= 0:
        return value << -shift
    q, r = divmod(value, 1 << shift)
    half = 1 << (shift - 1)
    if r > half or (r == half and q & 1):
        q += 1
    return q


def rne_div(num: int, den: int) -> int:
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q & 1):
        q += 1
    return q


def quantize_raw(x: float, fmt: FixedFormat = FIX8) -> int:
    if math.isnan(x):
        raise FixedPointError("cannot quantize NaN")
    if math.isinf(x):
        return fmt.max_raw if x > 0 else fmt.min_raw
    # scaling by a power of two is exact, so round() is exact round-half-even
    return fmt.saturate(round(x * fmt.scale))


def quantize(x: float, fmt: FixedFormat = FIX8) -> FixedValue:
    return FixedValue(quantize_raw(x, fmt), fmt)


def _check(a: FixedValue, b: FixedValue) -> FixedFormat:
    if a.format != b.format:
        raise FixedPointError(f"format mismatch: {a.format} vs {b.format}")
    return a.format


# Raw-level kernels. The compiler and fabric simulator work on raw ints with a
# format passed alongside; the FixedValue wrappers below delegate here.

def add_raw(a: int, b: int, fmt: FixedFormat) -> int:
    return fmt.saturate(a + b)


def sub_raw(a: int, b: int, fmt: FixedFormat) -> int:
    return fmt.saturate(a - b)


def mul_raw(a: int, b: int, fmt: FixedFormat) -> int:
    return fmt.saturate(rne_shift(a * b, fmt.frac_bits))


def relu_raw(a: int, fmt: FixedFormat) -> int:
    return a if a > 0 else 0


def leaky_relu_raw(a: int, fmt: FixedFormat, shift: int = 3) -> int:
    return a if a >= 0 else fmt.saturate(rne_shift(a, shift))


def select_raw(c: int, a: int, b: int, fmt: FixedFormat) -> int:
    return a if c > 0 else b


def fx_add(a: FixedValue, b: FixedValue) -> FixedValue:
    fmt = _check(a, b)
    return FixedValue(add_raw(a.raw, b.raw, fmt), fmt)


def fx_sub(a: FixedValue, b: FixedValue) -> FixedValue:
    fmt = _check(a, b)
    return FixedValue(sub_raw(a.raw, b.raw, fmt), fmt)


def fx_mul(a: FixedValue, b: FixedValue) -> FixedValue:
    fmt = _check(a, b)
    return FixedValue(mul_raw(a.raw, b.raw, fmt), fmt)


def relu(x: FixedValue) -> FixedValue:
    return FixedValue(relu_raw(x.raw, x.format), x.format)


def slope_shift(slope: float) -> int:
    shift = -math.log2(slope)
    if slope <= 0 or shift != int(shift) or shift < 0:
        raise FixedPointError(f"leaky slope must be 2**-k, got {slope}")
    return int(shift)


def leaky_relu(x: FixedValue, slope: float = 0.125) -> FixedValue:
    return FixedValue(leaky_relu_raw(x.raw, x.format, slope_shift(slope)), x.format)


# Wide-accumulator reduction. A partial accumulator is ``(value, count)`` where
# for ``mul`` the value carries ``count * frac_bits`` fractional bits. Partials
# from any split of the input combine to the same result as one pass, so the
# final saturation happens exactly once regardless of order or tiling.

def partial_reduce(raws: Iterable[int], op: str) -> tuple[int, int]:
    raws = list(raws)
    if not raws:
        raise FixedPointError("reduce over empty vector")
    if op == "add":
        return sum(raws), len(raws)
    if op == "mul":
        return math.prod(raws), len(raws)
    if op == "max":
        return max(raws), len(raws)
    if op == "min":
        return min(raws), len(raws)
    raise FixedPointError(f"non-associative combine {op!r}")


def merge_partials(parts: Sequence[tuple[int, int]], op: str) -> tuple[int, int]:
    if not parts:
        raise FixedPointError("reduce over empty vector")
    count = sum(c for _, c in parts)
    values = [v for v, _ in parts]
    if op == "add":
        return sum(values), count
    if op == "mul":
        return math.prod(values), count
    if op == "max":
        return max(values), count
    if op == "min":
        return min(values), count
    raise FixedPointError(f"non-associative combine {op!r}")


def finish_partial(part: tuple[int, int], op: str, fmt: FixedFormat) -> int:
    value, count = part
    if op == "mul":
        value = rne_shift(value, fmt.frac_bits * (count - 1))
    return fmt.saturate(value)


def reduce_raw(raws: Sequence[int], op: str, fmt: FixedFormat) -> int:
    return finish_partial(partial_reduce(raws, op), op, fmt)


def reduce_vector(v: Sequence[FixedValue], op: str = "add") -> FixedValue:
    if not v:
        raise FixedPointError("reduce over empty vector")
    fmt = v[0].format
    for x in v[1:]:
        _check(v[0], x)
    return FixedValue(reduce_raw([x.raw for x in v], op, fmt), fmt)


@dataclass(frozen=True)
class Lut:
    """A 1024-entry table sampling a real function at bin centres of [lo, hi)."""

    entries: tuple[int, ...]
    input_lo: float
    input_hi: float
    format: FixedFormat = FIX8
    name: str = ""

    def __post_init__(self):
        if len(self.entries) != LUT_SIZE:
            raise FixedPointError(f"LUT must have {LUT_SIZE} entries, got {len(self.entries)}")

    def index_of(self, raw: int) -> int:
        # exact rational arithmetic: floor((x - lo) / (hi - lo) * 1024)
        x = Fraction(raw, self.format.scale)
        lo, hi = Fraction(self.input_lo), Fraction(self.input_hi)
        k = math.floor((x - lo) * LUT_SIZE / (hi - lo))
        return max(0, min(LUT_SIZE - 1, k))

    def lookup_raw(self, raw: int) -> int:
        return self.entries[self.index_of(raw)]


def build_lut(fn: Callable[[float], float], lo: float, hi: float,
              fmt: FixedFormat = FIX8, name: str = "") -> Lut:
    if not lo < hi:
        raise FixedPointError("LUT domain needs lo < hi")
    width = (hi - lo) / LUT_SIZE
    entries = tuple(quantize_raw(fn(lo + (k + 0.5) * width), fmt) for k in range(LUT_SIZE))
    return Lut(entries, lo, hi, fmt, name)


def lut_eval(lut: Lut, x: FixedValue) -> FixedValue:
    if x.format != lut.format:
        raise FixedPointError(f"format mismatch: {x.format} vs {lut.format}")
    return FixedValue(lut.lookup_raw(x.raw), lut.format)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _recip(x: float) -> float:
    return math.inf if x == 0 else 1.0 / x


LUT_FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sigmoid": _sigmoid,
    "tanh": math.tanh,
    "exp": _exp,
    "recip": _recip,
}

# Default domains. sigmoid/tanh sit within one fix8 ulp of their asymptotes
# outside [-8, 8); recip is only meaningful on positive inputs.
LUT_DOMAINS: dict[str, tuple[float, float]] = {
    "sigmoid": (-8.0, 8.0),
    "tanh": (-8.0, 8.0),
    "exp": (-8.0, 8.0),
    "recip": (0.0, 8.0),
}


def standard_lut(name: str, fmt: FixedFormat = FIX8,
                 lo: float | None = None, hi: float | None = None) -> Lut:
    if name not in LUT_FUNCTIONS:
        raise FixedPointError(f"unknown LUT function {name!r}")
    dlo, dhi = LUT_DOMAINS[name]
    return build_lut(LUT_FUNCTIONS[name], dlo if lo is None else lo,
                     dhi if hi is None else hi, fmt, name)


def load_weights_csv(path, fmt: FixedFormat = FIX8) -> list[list[int]]:
    """Read a weights CSV (one row per tensor row) and quantize to raw ints."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            cells = [c.strip() for c in row if c.strip()]
            if not cells or cells[0].startswith("#"):
                continue
            rows.append([quantize_raw(float(c), fmt) for c in cells])
    return rows


def write_weights_csv(path, rows: Sequence[Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
