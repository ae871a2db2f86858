"""HyperLogLog counters and the exact counter sharing their interface.

Hashing is a splitmix64 finaliser applied to ``item XOR seed``: the top ``b``
bits of the 64-bit hash select a register, the rank is one plus the number of
leading zeros of the remaining ``64 - b`` bits (so at most ``64 - b + 1``).
Registers are stored one byte each and combined with a register-wise max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .errors import IncompatibleSketchError, ParameterError, ParseError
from .logger import get_log_level_from_env, setup_logger

logger = setup_logger("fieldanf", get_log_level_from_env())

MIN_B = 4
MAX_B = 16

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Small-k bias constants; larger k use 0.7213 / (1 + 1.079 / k)
_ALPHA = {16: 0.673, 32: 0.697, 64: 0.709}


def hash64(item: int, seed: int) -> int:
    """Reference scalar hash: splitmix64 finaliser of ``item ^ seed``"""
    z = (item ^ seed) & _MASK64
    z = (z + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def hash64_array(items: Union[Iterable[int], np.ndarray], seed: int) -> np.ndarray:
    """Vectorised `hash64`; uint64 arithmetic wraps modulo 2**64"""
    try:
        z = np.atleast_1d(np.asarray(items, dtype=np.uint64))
    except (OverflowError, ValueError) as err:
        logger.error("Cannot hash items as uint64: %s", err)
        raise ParameterError(f"items must be 64-bit unsigned integers: {err}") from err
    z = z ^ np.uint64(seed)
    z = z + np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _bit_length(values: np.ndarray) -> np.ndarray:
    values = values.copy()
    length = np.zeros(values.shape, dtype=np.int64)
    for shift in (32, 16, 8, 4, 2, 1):
        big = values >= np.uint64(1 << shift)
        length[big] += shift
        values[big] = values[big] >> np.uint64(shift)
    length += values > 0
    return length


def register_updates(
    items: Union[Iterable[int], np.ndarray], b: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """(register index, rank) pairs the items contribute to a sketch"""
    hashes = hash64_array(items, seed)
    suffix_bits = 64 - b
    index = (hashes >> np.uint64(suffix_bits)).astype(np.intp)
    suffix = hashes & np.uint64((1 << suffix_bits) - 1)
    rank = (suffix_bits - _bit_length(suffix) + 1).astype(np.uint8)
    return index, rank


def alpha(k: int) -> float:
    return _ALPHA.get(k, 0.7213 / (1 + 1.079 / k))


def estimate_registers(registers: np.ndarray) -> np.ndarray:
    """Estimates for a (rows, k) register matrix, one per row.

    Raw harmonic-mean estimate, replaced by linear counting k*ln(k/V0) when
    it is at most 5k/2 and V0 (zero registers) is positive.
    """
    registers = np.atleast_2d(registers)
    k = registers.shape[1]
    indicator = np.ldexp(1.0, -registers.astype(np.int32)).sum(axis=1)
    raw = alpha(k) * k * k / indicator
    zeros = np.count_nonzero(registers == 0, axis=1)
    with np.errstate(divide="ignore"):
        linear = k * np.log(k / np.maximum(zeros, 1))
    return np.where((raw <= 2.5 * k) & (zeros > 0), linear, raw)


def raw_estimate_registers(registers: np.ndarray) -> np.ndarray:
    registers = np.atleast_2d(registers)
    k = registers.shape[1]
    indicator = np.ldexp(1.0, -registers.astype(np.int32)).sum(axis=1)
    return alpha(k) * k * k / indicator


def _check_b(b: int) -> None:
    if not MIN_B <= b <= MAX_B:
        raise ParameterError(f"register exponent b must be in [{MIN_B}, {MAX_B}], got {b}")


def _check_seed(seed: int) -> None:
    if not 0 <= seed <= _MASK64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")


@dataclass(frozen=True)
class CounterKind:
    """Which counter a computation uses; every counter in it shares the kind"""

    tag: str
    b: Optional[int] = None
    seed: Optional[int] = None

    @classmethod
    def hyperloglog(cls, b: int = 8, seed: int = 0) -> "CounterKind":
        _check_b(b)
        _check_seed(seed)
        return cls("hyperloglog", b, seed)

    @classmethod
    def exact(cls) -> "CounterKind":
        return cls("exact")

    @property
    def is_exact(self) -> bool:
        return self.tag == "exact"

    def empty(self) -> "Counter":
        if self.is_exact:
            return ExactCounter()
        return HllSketch(self.b, self.seed)

    def singleton(self, member: int) -> "Counter":
        return self.empty().add(member)

    def __str__(self) -> str:
        if self.is_exact:
            return "exact"
        return f"hyperloglog(b={self.b}, seed={self.seed})"


class HllSketch:
    """HyperLogLog counter with 2**b one-byte registers"""

    __slots__ = ("b", "seed", "registers")

    def __init__(
        self, b: int, seed: int = 0, registers: Optional[np.ndarray] = None
    ) -> None:
        _check_b(b)
        _check_seed(seed)
        self.b: int = b
        self.seed: int = seed
        if registers is None:
            self.registers: np.ndarray = np.zeros(1 << b, dtype=np.uint8)
        else:
            registers = np.asarray(registers, dtype=np.uint8)
            if registers.shape != (1 << b,):
                raise ParameterError(
                    f"expected {1 << b} registers, got shape {registers.shape}"
                )
            self.registers = registers

    @property
    def k(self) -> int:
        return 1 << self.b

    @property
    def max_rank(self) -> int:
        return 64 - self.b + 1

    @property
    def kind(self) -> CounterKind:
        return CounterKind("hyperloglog", self.b, self.seed)

    def relative_standard_error(self) -> float:
        return 1.06 / math.sqrt(self.k)

    def add(self, item: int) -> "HllSketch":
        self.add_many([item])
        return self

    def add_many(self, items: Union[Iterable[int], np.ndarray]) -> "HllSketch":
        index, rank = register_updates(items, self.b, self.seed)
        np.maximum.at(self.registers, index, rank)
        return self

    def _check_compatible(self, other: "Counter") -> None:
        if not isinstance(other, HllSketch):
            raise IncompatibleSketchError(
                f"cannot combine {self.kind} with {type(other).__name__}"
            )
        if other.b != self.b or other.seed != self.seed:
            raise IncompatibleSketchError(
                f"cannot combine {self.kind} with {other.kind}"
            )

    def union(self, other: "Counter") -> "HllSketch":
        self._check_compatible(other)
        return HllSketch(self.b, self.seed, np.maximum(self.registers, other.registers))

    def union_update(self, other: "Counter") -> "HllSketch":
        self._check_compatible(other)
        np.maximum(self.registers, other.registers, out=self.registers)
        return self

    def estimate(self) -> float:
        return float(estimate_registers(self.registers)[0])

    def raw_estimate(self) -> float:
        return float(raw_estimate_registers(self.registers)[0])

    def is_empty(self) -> bool:
        return not self.registers.any()

    def copy(self) -> "HllSketch":
        return HllSketch(self.b, self.seed, self.registers.copy())

    def to_bytes(self) -> bytes:
        return bytes([self.b]) + self.seed.to_bytes(8, "little") + self.registers.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HllSketch":
        if len(data) < 9:
            raise ParseError(f"sketch record too short ({len(data)} bytes)")
        b = data[0]
        if not MIN_B <= b <= MAX_B:
            raise ParseError(f"invalid register exponent {b} in sketch record")
        if len(data) != 9 + (1 << b):
            raise ParseError(
                f"sketch record for b={b} must be {9 + (1 << b)} bytes, got {len(data)}"
            )
        seed = int.from_bytes(data[1:9], "little")
        registers = np.frombuffer(data[9:], dtype=np.uint8).copy()
        if registers.max() > 64 - b + 1:
            raise ParseError(f"register value above cap {64 - b + 1}")
        return cls(b, seed, registers)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HllSketch):
            return NotImplemented
        return (
            self.b == other.b
            and self.seed == other.seed
            and np.array_equal(self.registers, other.registers)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"HllSketch(b={self.b}, seed={self.seed}, estimate={self.estimate():.3f})"


class ExactCounter:
    """Exact set of item ids behind the counter interface (debug oracle)"""

    __slots__ = ("members",)

    def __init__(self, members: Iterable[int] = ()) -> None:
        self.members: set[int] = set(members)

    @property
    def kind(self) -> CounterKind:
        return CounterKind.exact()

    def add(self, item: int) -> "ExactCounter":
        self.members.add(item)
        return self

    def add_many(self, items: Iterable[int]) -> "ExactCounter":
        self.members.update(int(item) for item in items)
        return self

    def _check_compatible(self, other: "Counter") -> None:
        if not isinstance(other, ExactCounter):
            raise IncompatibleSketchError(
                f"cannot combine exact counter with {type(other).__name__}"
            )

    def union(self, other: "Counter") -> "ExactCounter":
        self._check_compatible(other)
        return ExactCounter(self.members | other.members)

    def union_update(self, other: "Counter") -> "ExactCounter":
        self._check_compatible(other)
        self.members |= other.members
        return self

    def estimate(self) -> float:
        return float(len(self.members))

    def is_empty(self) -> bool:
        return not self.members

    def copy(self) -> "ExactCounter":
        return ExactCounter(self.members)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExactCounter):
            return NotImplemented
        return self.members == other.members

    __hash__ = None

    def __repr__(self) -> str:
        return f"ExactCounter({sorted(self.members)})"


Counter = Union[HllSketch, ExactCounter]


def hll_new(b: int, seed: int = 0) -> HllSketch:
    return HllSketch(b, seed)


def hll_add(sketch: HllSketch, item: int) -> HllSketch:
    return sketch.add(item)


def hll_union(a: HllSketch, c: HllSketch) -> HllSketch:
    return a.union(c)


def hll_estimate(sketch: HllSketch) -> float:
    return sketch.estimate()


def counter_init(kind: CounterKind, member: Optional[int] = None) -> Counter:
    """Empty counter of `kind`, or one holding exactly `member`"""
    if member is None:
        return kind.empty()
    return kind.singleton(member)


def union_all(counters: Iterable[Counter], kind: CounterKind) -> Counter:
    """Union of `counters` as a fresh counter; empty of `kind` when none given"""
    result = kind.empty()
    for counter in counters:
        result.union_update(counter)
    return result
