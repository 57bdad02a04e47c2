"""
Code distances of an SCDMA code.

Every codeword pair (c, c') differs by S u with u a difference vector, so
distances, the minimum distance and the distance enumerator are computed by
walking difference vectors instead of codeword pairs:

    A(d) = (1/4^K) * sum over u != 0 with F(S, u) = d of prod_k pair_count(u_k)

F(S, u) and the pair weight are both unchanged when u is multiplied by i, so
only one vector per orbit {u, iu, -u, -iu} is visited and its weight counted
four times. Vector u is addressed by its base-9 index (user 0 is the most
significant digit); the visited representatives are the indices below
(9^K - 1) / 2 whose first nonzero entry is -sqrt(2) - sqrt(2) i or -sqrt(2).
"""

from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
import functools
import itertools
import logging
import math
from typing import Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import erfc

from scdma.config import config
from scdma.constellation import DIFF_SIZE, DIFF_VALUES, PAIR_COUNTS, QPSK, SQRT2, ZERO_DIFF_INDEX
from scdma.errors import EnumerationLimitError, InvalidInputError
from scdma.graph import FactorGraph
from scdma.signature import SignatureMatrix

logger = logging.getLogger(__name__)

# Orbit size of u under multiplication by powers of i
ORBIT = 4
# Leading digits that pick one representative per orbit
_LEADING_DIGITS = (0, 1)
# Representatives kept in memory per difference space; larger spaces are regenerated per pass
_CACHE_VECTORS = 2 ** 21


def check_cap(n_users: int, cap: Optional[int] = None) -> None:
    cap = config.ENUMERATION_CAP if cap is None else cap
    if n_users > cap:
        raise EnumerationLimitError(n_users, cap)


def q_function(x):
    """Gaussian tail probability, Q(x) = erfc(x / sqrt(2)) / 2"""
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / SQRT2)


class DminResult(NamedTuple):
    d_min: float
    argmin_u: np.ndarray  # complex difference vector achieving d_min


class Block(NamedTuple):
    indices: np.ndarray  # base-9 indices of the representatives
    vectors: np.ndarray  # (B, K) complex
    weights: np.ndarray  # (B,) int64, prod_k pair_count(u_k)


class DifferenceSpace:
    """
    Orbit representatives of the nonzero difference vectors for K users,
    split into blocks.
    """

    def __init__(self, n_users: int, chunk_size: Optional[int] = None):
        self.n_users = n_users
        self.half_size = (DIFF_SIZE ** n_users - 1) // 2
        self.chunk_size = chunk_size or config.CHUNK_SIZE
        self._powers = DIFF_SIZE ** np.arange(n_users - 1, -1, -1, dtype=np.int64)
        self._ranges = [
            (start, min(start + self.chunk_size, self.half_size))
            for start in range(0, self.half_size, self.chunk_size)
        ]
        self._cached: Optional[List[Block]] = None
        if self.half_size <= _CACHE_VECTORS:
            self._cached = [self._make_block(s, e) for s, e in self._ranges]

    @property
    def n_blocks(self) -> int:
        return len(self._ranges)

    def digits(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        return (indices[..., None] // self._powers) % DIFF_SIZE

    def vector(self, index: int) -> np.ndarray:
        return DIFF_VALUES[self.digits(np.array([index]))[0]]

    def _make_block(self, start: int, stop: int) -> Block:
        indices = np.arange(start, stop, dtype=np.int64)
        digits = self.digits(indices)
        # below the midpoint the first non-zero digit is always < 4
        leading = digits[np.arange(len(indices)), np.argmax(digits != ZERO_DIFF_INDEX, axis=1)]
        keep = np.isin(leading, _LEADING_DIGITS)
        digits = digits[keep]
        return Block(indices[keep], DIFF_VALUES[digits], np.prod(PAIR_COUNTS[digits], axis=1))

    def block(self, i: int) -> Block:
        if self._cached is not None:
            return self._cached[i]
        return self._make_block(*self._ranges[i])

    def map_blocks(self, func, threads: Optional[int] = None) -> list:
        """Apply func(block) to every block; results come back in block order"""
        threads = config.THREADS if threads is None else threads

        def run(i):
            return func(self.block(i))

        if threads <= 1 or self.n_blocks <= 1:
            return [run(i) for i in range(self.n_blocks)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, range(self.n_blocks)))

    def min_sq_distances(self, values_batch: np.ndarray, threads: Optional[int] = None) -> np.ndarray:
        """
        Minimum of F(S, u)^2 over u != 0 for each matrix in a (P, N, K) batch
        of complex signature matrices.
        """
        values_batch = np.asarray(values_batch, dtype=np.complex128)
        P, N, K = values_batch.shape
        stacked = values_batch.reshape(P * N, K).T  # (K, P*N)
        # keep each product under ~4M complex entries
        rows_per_step = max(1, (1 << 22) // max(1, P * N))

        def best_in_block(block: Block):
            best = np.full(P, np.inf)
            for lo in range(0, block.vectors.shape[0], rows_per_step):
                prod = block.vectors[lo:lo + rows_per_step] @ stacked
                sq = (prod.real ** 2 + prod.imag ** 2).reshape(-1, P, N).sum(axis=2)
                np.minimum(best, sq.min(axis=0), out=best)
            return best

        partial = self.map_blocks(best_in_block, threads)
        return np.min(np.vstack(partial), axis=0)


@functools.lru_cache(maxsize=8)
def difference_space(n_users: int) -> DifferenceSpace:
    check_cap(n_users)
    return DifferenceSpace(n_users)


def f_distance(matrix: SignatureMatrix, u) -> float:
    """F(S, u) = sqrt(sum_n |sum_k s_{n,k} u_k|^2)"""
    u = np.asarray(u, dtype=np.complex128).reshape(-1)
    if u.size != matrix.n_cols:
        raise InvalidInputError(
            f"distance: difference vector has length {u.size}, matrix has {matrix.n_cols} columns"
        )
    c = matrix.values @ u
    return float(np.sqrt(np.sum(np.abs(c) ** 2)))


def min_distance(matrix: SignatureMatrix, threads: Optional[int] = None) -> DminResult:
    """Exact minimum of F(S, u) over all nonzero difference vectors"""
    space = difference_space(matrix.n_cols)
    values_t = matrix.values.T

    def best_in_block(block: Block):
        if block.indices.size == 0:
            return math.inf, -1
        prod = block.vectors @ values_t
        sq = np.sum(prod.real ** 2 + prod.imag ** 2, axis=1)
        i = int(np.argmin(sq))
        return float(sq[i]), int(block.indices[i])

    partial = space.map_blocks(best_in_block, threads)
    # min() keeps the earliest block on ties, so the answer does not depend on thread count
    _, best_index = min(partial, key=lambda r: r[0])
    u = space.vector(best_index)
    d_min = f_distance(matrix, u)
    logger.debug(f"d_min = {d_min:.6f} (argmin index {best_index})")
    return DminResult(d_min, u)


def _bucket(distances: np.ndarray, weights: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Merge sorted distances whose consecutive gaps are within tol; keep the first as key"""
    if distances.size == 0:
        return distances, weights
    order = np.argsort(distances, kind="stable")
    d = distances[order]
    w = weights[order]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(d) > tol) + 1))
    return d[starts], np.add.reduceat(w, starts)


class DistanceEnumerator:
    """
    A(S, Z) = sum_d A(d) Z^d with A(d) = numerator / 4^K held exactly.
    Terms are sorted by distance and only carry A(d) > 0.
    """

    def __init__(self, n_users: int, distances: Sequence[float], numerators: Sequence[int]):
        self.n_users = n_users
        self.denominator = 4 ** n_users
        pairs = sorted(
            ((float(d), int(n)) for d, n in zip(distances, numerators) if int(n) > 0),
            key=lambda p: p[0],
        )
        if any(d < 0 for d, _ in pairs):
            raise InvalidInputError("distance: negative distance in enumerator")
        self._distances = [d for d, _ in pairs]
        self._numerators = [n for _, n in pairs]

    @property
    def terms(self) -> List[Tuple[float, Fraction]]:
        return [(d, Fraction(n, self.denominator)) for d, n in zip(self._distances, self._numerators)]

    @property
    def distances(self) -> np.ndarray:
        return np.array(self._distances)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array(self._numerators, dtype=np.float64) / self.denominator

    def __len__(self) -> int:
        return len(self._distances)

    def coefficient(self, d: float, tol: Optional[float] = None) -> Fraction:
        tol = config.DISTANCE_TOL if tol is None else tol
        total = sum(n for dist, n in zip(self._distances, self._numerators) if abs(dist - d) <= tol)
        return Fraction(total, self.denominator)

    def a_zero(self, tol: Optional[float] = None) -> Fraction:
        return self.coefficient(0.0, tol)

    def total(self) -> Fraction:
        return Fraction(sum(self._numerators), self.denominator)

    def d_min(self, tol: Optional[float] = None) -> float:
        """Smallest positive distance with A(d) > 0"""
        tol = config.DISTANCE_TOL if tol is None else tol
        positive = [d for d in self._distances if d > tol]
        return positive[0] if positive else 0.0

    def matches(self, other: "DistanceEnumerator", tol: float = 1e-9) -> bool:
        """Term-by-term equality: distances within tol, coefficients within tol"""
        if len(self) != len(other):
            return False
        for (d1, a1), (d2, a2) in zip(self.terms, other.terms):
            if abs(d1 - d2) > tol or abs(float(a1) - float(a2)) > tol:
                return False
        return True

    def to_records(self) -> List[dict]:
        records = []
        for d, a in self.terms:
            records.append({"d": d, "num": a.numerator, "den": a.denominator})
        return records

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"d": self.distances, "A_d": self.coefficients})

    def __repr__(self) -> str:
        shown = " + ".join(f"{a}Z^{d:.4f}" for d, a in self.terms[:6])
        more = " + ..." if len(self) > 6 else ""
        return f"DistanceEnumerator({shown}{more})"


def distance_enumerator(matrix: SignatureMatrix, threads: Optional[int] = None,
                        tol: Optional[float] = None) -> DistanceEnumerator:
    """Distance enumerator from difference vectors and their pair weights"""
    tol = config.DISTANCE_TOL if tol is None else tol
    space = difference_space(matrix.n_cols)
    values_t = matrix.values.T

    def block_terms(block: Block):
        prod = block.vectors @ values_t
        d = np.sqrt(np.sum(prod.real ** 2 + prod.imag ** 2, axis=1))
        return _bucket(d, block.weights, tol)

    partial = space.map_blocks(block_terms, threads)
    d_all = np.concatenate([p[0] for p in partial])
    w_all = np.concatenate([p[1] for p in partial])
    d, w = _bucket(d_all, w_all, tol)
    return DistanceEnumerator(matrix.n_cols, d.tolist(), (ORBIT * w).tolist())


def direct_enumerator(matrix: SignatureMatrix, cap: int = 3,
                      tol: Optional[float] = None) -> DistanceEnumerator:
    """
    Enumerator from the definition: every ordered pair of distinct codewords,
    averaged over the 4^K transmitted codewords.
    """
    tol = config.DISTANCE_TOL if tol is None else tol
    check_cap(matrix.n_cols, cap)
    symbols = np.array(list(itertools.product(QPSK, repeat=matrix.n_cols)))
    codewords = matrix.encode(symbols)
    gaps = codewords[:, None, :] - codewords[None, :, :]
    d = np.sqrt(np.sum(np.abs(gaps) ** 2, axis=2))
    off_diagonal = ~np.eye(len(codewords), dtype=bool)
    distances = d[off_diagonal]
    bucket_d, bucket_w = _bucket(distances, np.ones(distances.size, dtype=np.int64), tol)
    return DistanceEnumerator(matrix.n_cols, bucket_d.tolist(), bucket_w.tolist())


def union_bound(enumerator: DistanceEnumerator, n0, tol: Optional[float] = None):
    """
    Word error rate bound for ML detection,
    A(0) + sum_{d > 0} A(d) Q(d / sqrt(2 N0)).
    Not clamped to 1.
    """
    tol = config.DISTANCE_TOL if tol is None else tol
    n0_arr = np.asarray(n0, dtype=np.float64)
    if np.any(n0_arr <= 0):
        raise InvalidInputError("distance: noise variance N0 must be positive")
    d = enumerator.distances
    a = enumerator.coefficients
    zero = d <= tol
    bound = np.full(n0_arr.shape, float(a[zero].sum()))
    if np.any(~zero):
        args = d[~zero][:, None] / np.sqrt(2.0 * n0_arr.reshape(1, -1))
        bound = bound + (a[~zero][:, None] * q_function(args)).sum(axis=0).reshape(n0_arr.shape)
    return bound if bound.ndim else float(bound)


def upper_bound_spreading(matrix: SignatureMatrix) -> float:
    """sqrt(2 w) with w the minimum effective spreading length"""
    return math.sqrt(2.0 * int(matrix.spreading_lengths.min()))


def lower_bound_regular(graph: FactorGraph, q: Optional[int] = None,
                        delta_table: Optional[Mapping[int, float]] = None) -> float:
    """
    Minimum-distance lower bound for a code-node regular graph of degree q
    labeled with per-row single-resource optima:
    min over proper subsets alpha of sqrt(n1 delta_1^2 + n2 delta_q^2).

    Only subsets that leave every code node outside alpha with at least
    one edge are taken: those are the row sets a nonzero difference vector
    can be confined to.
    """
    regular = graph.regular_degree()
    if regular is None:
        raise InvalidInputError("distance: lower bound needs a code-node regular graph")
    q = regular if q is None else q
    if q != regular:
        raise InvalidInputError(f"distance: graph is regular of degree {regular}, not {q}")
    if delta_table is None:
        from scdma.presets import single_resource_deltas
        delta_table = single_resource_deltas()
    if 1 not in delta_table or q not in delta_table:
        raise InvalidInputError(f"distance: delta table needs entries for degrees 1 and {q}")

    d1_sq = delta_table[1] ** 2
    dq_sq = delta_table[q] ** 2
    best = math.inf
    for size in range(graph.n_code):
        for alpha in itertools.combinations(range(graph.n_code), size):
            n1, n2 = graph.delete_around_code_nodes(alpha)
            if n1 + n2 != graph.n_code - size:
                continue
            best = min(best, math.sqrt(n1 * d1_sq + n2 * dq_sq))
    return best


def concatenation_lower_bound(matrices: Iterable[SignatureMatrix]) -> float:
    """sqrt(sum_j d_min(S_j)^2)"""
    return math.sqrt(sum(min_distance(m).d_min ** 2 for m in matrices))


def two_user_min_distance(theta: float) -> float:
    """d_min of [1, e^{i theta}] for theta in [0, pi/4]"""
    s2 = complex(math.cos(theta), math.sin(theta))
    return SQRT2 * min(abs(1 - s2), abs(1 + 1j - s2))
