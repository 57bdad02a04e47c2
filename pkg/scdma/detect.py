"""
Multiuser detectors for y = h S x + z with z ~ CN(0, N0 I).

All detectors work on y' = y / h with noise variance N0' = N0 / |h|^2 and
accept a batch of observations (leading axis). Message passing runs in the
log domain; every message is a normalized log-probability over the 4 QPSK
symbols.
"""

import itertools
import logging
import math
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from scdma.config import config
from scdma.constellation import ALPHABET_SIZE, QPSK, Symbol
from scdma.distance import check_cap
from scdma.errors import InvalidInputError
from scdma.signature import SignatureMatrix

logger = logging.getLogger(__name__)

UNIFORM_LOG = -math.log(ALPHABET_SIZE)
# Keeps matrix-vector chunks under ~4M complex entries
_CHUNK_ENTRIES = 1 << 22


class Observation:
    """
    Received samples `y` (shape (N,) or (B, N)), channel gain `h` and total
    complex noise variance `n0`.
    """

    def __init__(self, y, h: complex = 1.0, n0: float = 1.0):
        y = np.asarray(y, dtype=np.complex128)
        if y.ndim not in (1, 2) or y.shape[-1] == 0:
            raise InvalidInputError("detect: y must be a vector or a batch of vectors")
        if h == 0:
            raise InvalidInputError("detect: channel gain must be nonzero")
        if not n0 >= 0:
            raise InvalidInputError("detect: noise variance must be non-negative")
        self.y = y
        self.h = complex(h)
        self.n0 = float(n0)

    @property
    def is_batch(self) -> bool:
        return self.y.ndim == 2

    @property
    def n_samples(self) -> int:
        return self.y.shape[-1]

    def normalized(self) -> Tuple[np.ndarray, float]:
        """(y / h as a (B, N) batch, N0 / |h|^2)"""
        return np.atleast_2d(self.y / self.h), self.n0 / abs(self.h) ** 2


class Decision(NamedTuple):
    indices: np.ndarray  # (K,) or (B, K) QPSK symbol indices
    posteriors: Optional[np.ndarray]  # (K, 4) or (B, K, 4)
    tie_flag: np.ndarray  # bool, () or (B,)

    @property
    def values(self) -> np.ndarray:
        return QPSK[self.indices]

    @property
    def symbols(self) -> List[Symbol]:
        if self.indices.ndim != 1:
            raise InvalidInputError("detect: symbols are listed for a single observation only")
        return [Symbol(float(x.real), float(x.imag)) for x in self.values]


def _check_shape(matrix: SignatureMatrix, obs: Observation) -> None:
    if obs.n_samples != matrix.n_rows:
        raise InvalidInputError(
            f"detect: observation has {obs.n_samples} samples, matrix has {matrix.n_rows} rows"
        )


def _positive_noise(n0: float) -> None:
    if n0 <= 0:
        raise InvalidInputError("detect: soft detection needs a positive noise variance")


def _finish(obs: Observation, indices, posteriors, ties) -> Decision:
    if obs.is_batch:
        return Decision(indices, posteriors, ties)
    return Decision(indices[0], None if posteriors is None else posteriors[0], ties[0])


def all_symbol_vectors(n_users: int) -> np.ndarray:
    """(4^K, K) symbol indices in lexicographic order"""
    return np.array(list(itertools.product(range(ALPHABET_SIZE), repeat=n_users)),
                    dtype=np.int64).reshape(-1, n_users)


def _sq_distances(y: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """(B, M) squared distances between observations and codewords, chunked over B"""
    B = y.shape[0]
    M, N = codewords.shape
    rows = max(1, _CHUNK_ENTRIES // max(1, M * N))
    out = np.empty((B, M))
    for lo in range(0, B, rows):
        gap = y[lo:lo + rows, None, :] - codewords[None, :, :]
        out[lo:lo + rows] = np.sum(gap.real ** 2 + gap.imag ** 2, axis=2)
    return out


def ml_detect(matrix: SignatureMatrix, obs: Observation,
              rng: Optional[np.random.Generator] = None) -> Decision:
    """
    Minimum-distance decision over all 4^K symbol vectors. Codewords whose
    distance is within TIE_TOL of the minimum are tied and one of them is
    drawn uniformly with `rng`.
    """
    check_cap(matrix.n_cols)
    _check_shape(matrix, obs)
    rng = np.random.default_rng(0) if rng is None else rng
    y, _ = obs.normalized()

    candidates = all_symbol_vectors(matrix.n_cols)
    codewords = matrix.encode(QPSK[candidates])
    dist = _sq_distances(y, codewords)

    best = np.argmin(dist, axis=1)
    lowest = dist[np.arange(len(best)), best]
    tied = dist <= lowest[:, None] + config.TIE_TOL
    ties = tied.sum(axis=1) > 1
    for b in np.flatnonzero(ties):
        best[b] = rng.choice(np.flatnonzero(tied[b]))
    if ties.any():
        logger.debug(f"ML ties broken at random in {int(ties.sum())} observation(s)")
    return _finish(obs, candidates[best], None, ties)


def exact_marginals(matrix: SignatureMatrix, obs: Observation) -> np.ndarray:
    """
    P(x_k = alpha | y) by summing exp(-||y - h S x||^2 / N0) over every
    symbol vector; shape (K, 4), or (B, K, 4) for a batch.
    """
    check_cap(matrix.n_cols)
    _check_shape(matrix, obs)
    y, n0 = obs.normalized()
    _positive_noise(n0)

    candidates = all_symbol_vectors(matrix.n_cols)
    loglik = -_sq_distances(y, matrix.encode(QPSK[candidates])) / n0
    out = np.empty((y.shape[0], matrix.n_cols, ALPHABET_SIZE))
    for k in range(matrix.n_cols):
        for a in range(ALPHABET_SIZE):
            out[:, k, a] = logsumexp(loglik[:, candidates[:, k] == a], axis=1)
    out = np.exp(_normalize(out))
    return out if obs.is_batch else out[0]


def _normalize(logp: np.ndarray) -> np.ndarray:
    return logp - logsumexp(logp, axis=-1, keepdims=True)


def gaussian_interference(coeffs: np.ndarray, means: np.ndarray, n0: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and variance of sum_j s_j x_j + z for independent interferers with
    E[x_j] = means[..., j], E|x_j|^2 = 1 and noise variance n0.
    """
    mu = np.sum(coeffs * means, axis=-1)
    var = np.sum(1.0 - np.abs(means) ** 2, axis=-1) + n0
    return mu, var


class BeliefState:
    """
    Log-domain messages on every edge, stored per code node n as (B, d_n, 4)
    arrays ordered like the node's neighbors: `to_code[n]` holds the
    data-to-code messages and `to_data[n]` the code-to-data messages.
    """

    def __init__(self, degrees: List[int], batch: int):
        self.to_code = [np.full((batch, d, ALPHABET_SIZE), UNIFORM_LOG) for d in degrees]
        self.to_data = [np.full((batch, d, ALPHABET_SIZE), UNIFORM_LOG) for d in degrees]

    def probabilities(self, direction: str, n: int) -> np.ndarray:
        messages = self.to_code if direction == "to_code" else self.to_data
        return np.exp(messages[n])

    def set_to_code(self, n: int, position: int, probabilities) -> None:
        """Overwrite one data-to-code message with the given distribution"""
        p = np.asarray(probabilities, dtype=np.float64)
        with np.errstate(divide="ignore"):
            self.to_code[n][:, position] = _normalize(np.log(p / p.sum(axis=-1, keepdims=True)))


class MessagePassingDetector:
    """
    Flooding belief propagation on the factor graph of `matrix`. With
    `approximate`, each code node models the interference seen by a user as
    a complex Gaussian instead of summing over neighbor symbols.
    """

    def __init__(self, matrix: SignatureMatrix, approximate: bool = False):
        self.matrix = matrix
        self.approximate = approximate
        graph = matrix.graph
        values = matrix.values
        self.neighbors = [list(graph.code_neighbors(n)) for n in range(matrix.n_rows)]
        self.coeffs = [values[n, ks] for n, ks in enumerate(self.neighbors)]
        # data node k -> [(code node, position in that node's neighbor list)]
        self.sockets = [
            [(n, self.neighbors[n].index(k)) for n in graph.data_neighbors(k)]
            for k in range(matrix.n_cols)
        ]
        self.combos = []
        self.superposed = []
        if not approximate:
            for coeffs in self.coeffs:
                combos = all_symbol_vectors(len(coeffs))
                self.combos.append(combos)
                self.superposed.append(QPSK[combos] @ coeffs)

    def initial_state(self, batch: int) -> BeliefState:
        return BeliefState([len(ks) for ks in self.neighbors], batch)

    def code_update(self, state: BeliefState, y: np.ndarray, n0: float) -> None:
        for n in range(self.matrix.n_rows):
            if self.approximate:
                out = self._gaussian_node(n, state.to_code[n], y[:, n], n0)
            else:
                out = self._exact_node(n, state.to_code[n], y[:, n], n0)
            state.to_data[n] = _normalize(out)

    def _exact_node(self, n: int, incoming: np.ndarray, y_n: np.ndarray, n0: float) -> np.ndarray:
        combos = self.combos[n]
        gap = y_n[:, None] - self.superposed[n][None, :]
        loglik = -(gap.real ** 2 + gap.imag ** 2) / n0  # (B, M)
        # incoming log-probability of each neighbor's symbol in each combination
        gathered = np.stack([incoming[:, j, combos[:, j]] for j in range(combos.shape[1])], axis=1)
        out = np.empty_like(incoming)
        for j in range(combos.shape[1]):
            others = np.delete(gathered, j, axis=1).sum(axis=1)
            total = loglik + others
            for a in range(ALPHABET_SIZE):
                out[:, j, a] = logsumexp(total[:, combos[:, j] == a], axis=1)
        return out

    def _gaussian_node(self, n: int, incoming: np.ndarray, y_n: np.ndarray, n0: float) -> np.ndarray:
        coeffs = self.coeffs[n]
        means = np.exp(incoming) @ QPSK  # (B, d)
        out = np.empty_like(incoming)
        for j in range(len(coeffs)):
            mu, var = gaussian_interference(np.delete(coeffs, j), np.delete(means, j, axis=1), n0)
            gap = (y_n - mu)[:, None] - coeffs[j] * QPSK[None, :]
            out[:, j] = -(gap.real ** 2 + gap.imag ** 2) / var[:, None]
        return out

    def data_update(self, state: BeliefState) -> None:
        for sockets in self.sockets:
            incoming = [state.to_data[n][:, j] for n, j in sockets]
            for i, (n, j) in enumerate(sockets):
                others = sum((m for t, m in enumerate(incoming) if t != i), np.zeros_like(incoming[i]))
                state.to_code[n][:, j] = _normalize(others)

    def posteriors(self, state: BeliefState) -> np.ndarray:
        """(B, K, 4) beliefs from all incoming code-to-data messages"""
        B = state.to_data[0].shape[0]
        out = np.empty((B, self.matrix.n_cols, ALPHABET_SIZE))
        for k, sockets in enumerate(self.sockets):
            out[:, k] = _normalize(sum(state.to_data[n][:, j] for n, j in sockets))
        return np.exp(out)

    def run(self, obs: Observation, iterations: Optional[int] = None) -> Tuple[Decision, BeliefState]:
        iterations = config.BP_ITERATIONS if iterations is None else iterations
        if iterations < 1:
            raise InvalidInputError("detect: need at least one iteration")
        _check_shape(self.matrix, obs)
        y, n0 = obs.normalized()
        _positive_noise(n0)

        state = self.initial_state(y.shape[0])
        for _ in range(iterations):
            self.code_update(state, y, n0)
            self.data_update(state)
        post = self.posteriors(state)
        # argmax keeps the lowest index on ties
        indices = np.argmax(post, axis=2)
        top = np.take_along_axis(post, indices[..., None], axis=2)
        ties = (np.sum(post >= top - config.TIE_TOL, axis=2) > 1).any(axis=1)
        return _finish(obs, indices, post, ties), state


def bp_detect(matrix: SignatureMatrix, obs: Observation, iterations: Optional[int] = None) -> Decision:
    return MessagePassingDetector(matrix).run(obs, iterations)[0]


def abp_detect(matrix: SignatureMatrix, obs: Observation, iterations: Optional[int] = None) -> Decision:
    return MessagePassingDetector(matrix, approximate=True).run(obs, iterations)[0]


DETECTORS = ("ml", "bp", "abp")


def detect(name: str, matrix: SignatureMatrix, obs: Observation, iterations: Optional[int] = None,
           rng: Optional[np.random.Generator] = None) -> Decision:
    """Dispatch by detector name"""
    if name == "ml":
        return ml_detect(matrix, obs, rng)
    if name == "bp":
        return bp_detect(matrix, obs, iterations)
    if name == "abp":
        return abp_detect(matrix, obs, iterations)
    raise InvalidInputError(f"detect: unknown detector {name!r}; choose from {', '.join(DETECTORS)}")
