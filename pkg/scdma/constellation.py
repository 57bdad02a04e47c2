"""
QPSK alphabet, the symbol-difference alphabet, and their pair multiplicities.

Symbol indices 0..3 carry 2 data bits each in Gray order: bit 0 selects the
sign of the real part, bit 1 the sign of the imaginary part (0 -> +, 1 -> -).
"""

import itertools
from typing import List, NamedTuple

import numpy as np

SQRT2 = float(np.sqrt(2.0))
BITS_PER_SYMBOL = 2
ALPHABET_SIZE = 4

# Quadrant order I, IV, II, III
QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j], dtype=np.complex128) / SQRT2

# Difference values sqrt(2)*(a + b i) for (a, b) in lexicographic order over
# {-1, 0, 1}^2; entry i and entry 8 - i are negations of each other.
DIFF_VALUES = np.array(
    [SQRT2 * complex(a, b) for a, b in itertools.product((-1, 0, 1), repeat=2)],
    dtype=np.complex128,
)
ZERO_DIFF_INDEX = 4
DIFF_SIZE = len(DIFF_VALUES)

# Gray bits per symbol index
SYMBOL_BITS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.int8)


class Symbol(NamedTuple):
    re: float
    im: float

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


class DiffSymbol(NamedTuple):
    re: float
    im: float
    pair_count: int

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


def _count_pairs() -> np.ndarray:
    counts = np.zeros(DIFF_SIZE, dtype=np.int64)
    for x, x_prime in itertools.product(QPSK, repeat=2):
        delta = x - x_prime
        idx = int(np.argmin(np.abs(DIFF_VALUES - delta)))
        counts[idx] += 1
    return counts


PAIR_COUNTS = _count_pairs()


def qpsk_alphabet() -> List[Symbol]:
    """The 4 unit-energy QPSK points in index order"""
    return [Symbol(float(x.real), float(x.imag)) for x in QPSK]


def difference_alphabet() -> List[DiffSymbol]:
    """
    All 9 values x - x' over ordered QPSK pairs, with the number of pairs
    producing each value. Counts sum to 16.
    """
    return [
        DiffSymbol(float(d.real), float(d.imag), int(c))
        for d, c in zip(DIFF_VALUES, PAIR_COUNTS)
    ]


def negate_index(idx):
    """Index of -delta given the index of delta (works on arrays)"""
    return DIFF_SIZE - 1 - idx


def index_to_bits(indices: np.ndarray) -> np.ndarray:
    """Map symbol indices of any shape to Gray bits, adding a trailing axis of 2"""
    return SYMBOL_BITS[np.asarray(indices)]


def bit_errors(sent: np.ndarray, decided: np.ndarray) -> np.ndarray:
    """Differing bits between two (..., K) symbol-index arrays, summed over users"""
    diff = index_to_bits(sent) != index_to_bits(decided)
    return diff.sum(axis=(-1, -2))


def symbols_from_indices(indices: np.ndarray) -> np.ndarray:
    return QPSK[np.asarray(indices)]


def nearest_index(values: np.ndarray) -> np.ndarray:
    """Index of the QPSK point nearest to each complex value"""
    values = np.asarray(values, dtype=np.complex128)
    return np.argmin(np.abs(values[..., None] - QPSK), axis=-1)
