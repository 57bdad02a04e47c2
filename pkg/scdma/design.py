"""
Signature design on a fixed factor graph.

`optimize` searches the canonical family of a graph (one phase per column in
[0, pi/2) with the first fixed to 0, plus a free phase in [0, 2 pi) on every
edge left out of the spanning tree) for the labeling with the largest
minimum distance. The code families build structured matrices directly.
"""

from concurrent.futures import ThreadPoolExecutor
import itertools
import logging
import math
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from scdma.config import config
from scdma.distance import DifferenceSpace, check_cap, difference_space, min_distance
from scdma.errors import InvalidInputError
from scdma.graph import Edge, EdgeSubset, FactorGraph
from scdma.signature import HALF_PI, TWO_PI, SignatureMatrix

logger = logging.getLogger(__name__)

# Points per batched distance evaluation
EVAL_BATCH = 256

LATIN_PHASES = (0.0, math.pi / 6, math.pi / 3)
# Searches with at most this many free angles also try diagonal moves
FULL_PATTERN_DIMS = 3


class Parameterization:
    """
    Free angles of the canonical family of a graph: theta_1..theta_{K-1}
    for the columns, then one angle per loop edge in sorted order.
    """

    def __init__(self, graph: FactorGraph, phi: EdgeSubset):
        self.graph = graph
        self.phi = phi
        self.loop_edges: List[Edge] = phi.sorted_edges()
        self.binding: Dict[Edge, Tuple[str, int]] = {}
        for n, k in graph.sorted_edges():
            if (n, k) in phi:
                self.binding[(n, k)] = ("loop", self.loop_edges.index((n, k)))
            else:
                self.binding[(n, k)] = ("column", k)

        edges = graph.sorted_edges()
        self._rows = np.array([n for n, _ in edges], dtype=np.int64)
        self._cols = np.array([k for _, k in edges], dtype=np.int64)
        # position in [0, point...]; slot 0 is the fixed theta_0 = 0
        slots = []
        for edge in edges:
            kind, i = self.binding[edge]
            slots.append(i if kind == "column" else self.n_column + 1 + i)
        self._slots = np.array(slots, dtype=np.int64)

    @property
    def n_column(self) -> int:
        return self.graph.n_data - 1

    @property
    def n_loop(self) -> int:
        return len(self.loop_edges)

    @property
    def free_angles(self) -> int:
        return self.n_column + self.n_loop

    @property
    def periods(self) -> np.ndarray:
        return np.array([HALF_PI] * self.n_column + [TWO_PI] * self.n_loop)

    def join(self, column_params, loop_params) -> np.ndarray:
        point = np.concatenate([np.asarray(column_params, dtype=np.float64).reshape(-1),
                                np.asarray(loop_params, dtype=np.float64).reshape(-1)])
        if point.size != self.free_angles:
            raise InvalidInputError(
                f"design: expected {self.free_angles} free angles, got {point.size}"
            )
        return point

    def values_batch(self, points: np.ndarray) -> np.ndarray:
        """(P, D) parameter points -> (P, N, K) complex signature matrices"""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        P = points.shape[0]
        padded = np.hstack([np.zeros((P, 1)), points])
        out = np.zeros((P, self.graph.n_code, self.graph.n_data), dtype=np.complex128)
        out[:, self._rows, self._cols] = np.exp(1j * padded[:, self._slots])
        return out

    def instantiate(self, point) -> SignatureMatrix:
        point = np.asarray(point, dtype=np.float64).reshape(-1)
        if point.size != self.free_angles:
            raise InvalidInputError(
                f"design: expected {self.free_angles} free angles, got {point.size}"
            )
        theta = np.zeros((self.graph.n_code, self.graph.n_data))
        padded = np.concatenate([[0.0], point])
        theta[self._rows, self._cols] = padded[self._slots]
        return SignatureMatrix(theta, self.graph.support())

    def point_of(self, matrix: SignatureMatrix) -> np.ndarray:
        """Parameters of the canonical form of a matrix on this graph"""
        if matrix.graph != self.graph:
            raise InvalidInputError("design: warm-start matrix has a different factor graph")
        columns, loops = matrix.canonical_parameters(self.phi)
        return self.join(columns, loops)


def parameterize(graph: FactorGraph) -> Parameterization:
    if not graph.is_connected():
        raise InvalidInputError("design: factor graph must be connected")
    if graph.count_cycles(4):
        raise InvalidInputError("design: factor graph has a length-4 cycle")
    param = Parameterization(graph, graph.spanning_tree_complement())
    logger.debug(f"{param.n_column} column angle(s), {param.n_loop} loop angle(s)")
    return param


class SearchLog(BaseModel):
    evaluations: int
    grid_points: int
    starts: int
    restarts: int = 0
    budget: int
    seed: int
    # (evaluations so far, best d_min so far)
    trace: List[Tuple[int, float]] = []


class DesignResult(NamedTuple):
    matrix: SignatureMatrix
    d_min: float
    params: np.ndarray
    search_log: SearchLog

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.to_dict(),
            "d_min": self.d_min,
            "params": self.params.tolist(),
            "search_log": self.search_log.model_dump(),
        }


def _sq_dmin(param: Parameterization, space: DifferenceSpace, points: np.ndarray) -> np.ndarray:
    """Squared minimum distance of every point, evaluated in batches"""
    out = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], EVAL_BATCH):
        batch = points[lo:lo + EVAL_BATCH]
        out[lo:lo + len(batch)] = space.min_sq_distances(param.values_batch(batch), threads=1)
    return out


def _grid_points(param: Parameterization, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """The full grid when it fits in n_points, otherwise n_points random grid nodes"""
    periods = param.periods
    counts = np.maximum(1, np.round(periods / config.GRID_STEP).astype(np.int64))
    steps = periods / counts
    if float(np.prod(counts.astype(np.float64))) <= n_points:
        nodes = np.array(list(itertools.product(*(range(c) for c in counts))), dtype=np.float64)
        nodes = nodes.reshape(-1, param.free_angles)
    else:
        nodes = rng.integers(0, counts, size=(n_points, param.free_angles)).astype(np.float64)
    return nodes * steps


def _torus_gaps(points: np.ndarray, x: np.ndarray, periods: np.ndarray) -> np.ndarray:
    """Largest per-angle wrap-around distance from x to each point"""
    d = np.mod(np.atleast_2d(points) - x, periods)
    return np.minimum(d, periods - d).max(axis=1)


def _directions(dim: int) -> np.ndarray:
    """Pattern moves: every nonzero vector of {-1, 0, 1}^D in low dimension, else +-e_i"""
    if dim <= FULL_PATTERN_DIMS:
        moves = [m for m in itertools.product((1, -1, 0), repeat=dim) if any(m)]
        return np.array(moves, dtype=np.float64)
    eye = np.eye(dim)
    return np.stack([eye, -eye], axis=1).reshape(2 * dim, dim)


def _pattern_search(param: Parameterization, space: DifferenceSpace, x: np.ndarray, fx: float,
                    budget: int, rng: np.random.Generator) -> Tuple[np.ndarray, float, int]:
    """
    Pattern search on the torus: try every move of the pattern plus
    2D random unit directions at the current step, go to the best strict
    improvement, halve the step when nothing improves.
    """
    periods = param.periods
    base = _directions(x.size)
    n_random = 2 * x.size
    step = config.GRID_STEP
    used = 0
    while step >= config.REFINE_TOL:
        if used + len(base) + n_random > budget:
            logger.debug(f"Refinement stopped by budget at step {step:.2e}")
            break
        extra = rng.standard_normal((n_random, x.size))
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        moves = np.vstack([base, extra])
        candidates = np.mod(x[None, :] + step * moves, periods)
        values = _sq_dmin(param, space, candidates)
        used += len(moves)
        best = int(np.argmax(values))
        if values[best] > fx:
            x, fx = candidates[best], float(values[best])
        else:
            step /= 2
    return x, fx, used


def optimize(graph: FactorGraph, budget: Optional[int] = None, seed: int = 0,
             warm_starts: Sequence[SignatureMatrix] = (), use_presets: bool = True,
             threads: Optional[int] = None) -> DesignResult:
    """
    Maximize the minimum distance over the canonical family of `graph`.

    Half the budget goes to grid sampling (the whole grid when it is small
    enough). Every warm start and the best well-spaced grid points are then
    refined by pattern search, one start per START_EVALS of remaining budget
    and never fewer than MULTISTART. Whatever budget is left goes to
    restarts from random perturbations of the best point. Deterministic for a
    given seed and budget.
    """
    param = parameterize(graph)
    check_cap(graph.n_data)
    space = difference_space(graph.n_data)
    threads = config.THREADS if threads is None else threads
    budget = config.default_budget(param.free_angles) if budget is None else int(budget)
    if budget < 1:
        raise InvalidInputError("design: budget must allow at least one evaluation")

    if param.free_angles == 0:
        for m in warm_starts:
            param.point_of(m)
        point = np.empty(0)
        matrix = param.instantiate(point)
        d_min = min_distance(matrix, threads).d_min
        log = SearchLog(evaluations=1, grid_points=0, starts=0, budget=budget, seed=seed,
                        trace=[(1, d_min)])
        return DesignResult(matrix, d_min, point, log)

    starts_from = list(warm_starts)
    if use_presets:
        from scdma.presets import presets_on_graph
        starts_from += [p.matrix for p in presets_on_graph(graph)]
    warm = (
        np.array([param.point_of(m) for m in starts_from], dtype=np.float64).reshape(-1, param.free_angles)
        if starts_from else np.empty((0, param.free_angles))
    )

    logger.info(
        f"Optimizing {graph.n_code}x{graph.n_data} labeling: {param.free_angles} free angle(s), "
        f"budget {budget}, seed {seed}, {len(warm)} warm start(s)"
    )
    rng = np.random.default_rng(seed)
    trace: List[Tuple[int, float]] = []

    grid = _grid_points(param, max(1, budget // 2 - len(warm)), rng)
    points = np.vstack([warm, grid])
    batches = [points[lo:lo + EVAL_BATCH] for lo in range(0, len(points), EVAL_BATCH)]
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = np.concatenate(list(pool.map(lambda b: _sq_dmin(param, space, b), batches)))
    else:
        scores = _sq_dmin(param, space, points)
    evaluations = len(points)
    trace.append((evaluations, math.sqrt(float(scores.max()))))
    logger.info(f"Grid stage: {len(grid)} point(s), best d_min {trace[-1][1]:.6f}")

    # warm starts first, then the best grid points at least START_SPACING
    # grid steps apart; stable order breaks ties
    n_starts = max(config.MULTISTART, len(warm),
                   (budget - evaluations) // max(1, config.START_EVALS))
    spacing = config.START_SPACING * config.GRID_STEP
    chosen = list(range(len(warm)))
    order = np.argsort(-scores[len(warm):], kind="stable") + len(warm)
    for i in order:
        if len(chosen) >= n_starts:
            break
        if chosen and _torus_gaps(points[chosen], points[i], param.periods).min() < spacing:
            continue
        chosen.append(int(i))

    share = max(0, budget - evaluations) // max(1, len(chosen))

    def refine(rank_and_index):
        rank, i = rank_and_index
        # generator per start rank, shared by every thread layout
        start_rng = np.random.default_rng([seed, rank])
        return _pattern_search(param, space, points[i].copy(), float(scores[i]), share, start_rng)

    jobs = list(enumerate(chosen))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            refined = list(pool.map(refine, jobs))
    else:
        refined = [refine(job) for job in jobs]

    best_x, best_f = None, -math.inf
    for x, fx, used in refined:
        evaluations += used
        # strict comparison keeps the lowest start index on ties
        if fx > best_f:
            best_x, best_f = x, fx
        trace.append((evaluations, math.sqrt(best_f)))

    # perturb the incumbent and refine again until RESTART_PATIENCE restarts in a row fail
    restart_rng = np.random.default_rng([seed, len(chosen)])
    restarts = stale = 0
    while stale < config.RESTART_PATIENCE and budget - evaluations > 1:
        start = np.mod(best_x + config.RESTART_SCALE * restart_rng.standard_normal(best_x.size),
                       param.periods)
        f0 = float(_sq_dmin(param, space, start[None, :])[0])
        allowance = min(budget - evaluations - 1, max(share, config.START_EVALS))
        x, fx, used = _pattern_search(param, space, start, f0, allowance, restart_rng)
        evaluations += used + 1
        restarts += 1
        if fx > best_f:
            best_x, best_f = x, fx
            stale = 0
            trace.append((evaluations, math.sqrt(best_f)))
        else:
            stale += 1
    if restarts:
        logger.info(f"{restarts} restart(s), best d_min {math.sqrt(best_f):.6f}")

    matrix = param.instantiate(best_x)
    d_min = min_distance(matrix, threads).d_min
    log = SearchLog(evaluations=evaluations, grid_points=len(grid), starts=len(chosen),
                    restarts=restarts, budget=budget, seed=seed, trace=trace)
    logger.info(f"Best d_min {d_min:.6f} after {evaluations} evaluation(s)")
    return DesignResult(matrix, d_min, best_x, log)


# Code families

def cyclic_permutation(q: int) -> np.ndarray:
    """P with P[0, q-1] = 1 and P[i, i-1] = 1"""
    if q < 1:
        raise InvalidInputError("design: block size q must be >= 1")
    return np.roll(np.eye(q, dtype=np.int64), -1, axis=1)


def _check_permutation(p, q: int) -> np.ndarray:
    p = np.asarray(p)
    if p.shape != (q, q) or not np.isin(p, (0, 1)).all() \
            or not (p.sum(axis=0) == 1).all() or not (p.sum(axis=1) == 1).all():
        raise InvalidInputError(f"design: block is not a {q}x{q} permutation matrix")
    return p.astype(np.int64)


def _phase_vector(v, q: int, upper: float, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != q:
        raise InvalidInputError(f"design: {name} must have {q} entries, got {v.size}")
    if np.any(v < -config.PHASE_TOL) or np.any(v >= upper - config.PHASE_TOL):
        raise InvalidInputError(f"design: {name} angles must lie in [0, {upper / math.pi:g} pi)")
    return v


def _place(theta, support, row_block: int, col_block: int, q: int, v: np.ndarray, perm: np.ndarray):
    """Write block diag(e^{i v}) arranged by `perm`: entry (r, c) with perm[r, c] = 1 gets v[c]"""
    for r, c in zip(*np.nonzero(perm)):
        support[row_block * q + r, col_block * q + c] = True
        theta[row_block * q + r, col_block * q + c] = v[c]


def tree_code(n_users: int) -> SignatureMatrix:
    """(K-1) x K bidiagonal tree code; rows alternate [1, e^{i pi/6}] and [e^{i pi/6}, 1]"""
    if n_users < 2:
        raise InvalidInputError("design: tree code needs at least 2 users")
    theta = np.zeros((n_users - 1, n_users))
    support = np.zeros_like(theta, dtype=bool)
    for n in range(n_users - 1):
        support[n, n] = support[n, n + 1] = True
        if n % 2 == 0:
            theta[n, n + 1] = math.pi / 6
        else:
            theta[n, n] = math.pi / 6
    return SignatureMatrix(theta, support)


def construction_1(n_blocks: int, q: int, v: Sequence[Sequence[float]],
                   lead: Optional[Sequence[float]] = None) -> SignatureMatrix:
    """
    Kq-user, (K-1)q-resource code whose graph has a single cycle of length
    2(K-1)q. `v` holds K phase vectors of length q: v_1..v_{K-1} in
    [0, pi/2), and v_K equal to v_{K-1} but for a free last angle.
    `lead` gives the phases of the first identity block (zeros by default).
    """
    K = n_blocks
    if K < 3:
        raise InvalidInputError("design: construction 1 needs K >= 3 blocks")
    if q < 1:
        raise InvalidInputError("design: block size q must be >= 1")
    if len(v) != K:
        raise InvalidInputError(f"design: construction 1 needs {K} phase vectors, got {len(v)}")
    vs = [_phase_vector(vec, q, HALF_PI, f"v_{i + 1}") for i, vec in enumerate(v[:-1])]
    last = _phase_vector(v[-1], q, TWO_PI, f"v_{K}")
    if np.any(np.abs(last[:-1] - vs[-1][:-1]) > config.PHASE_TOL):
        raise InvalidInputError(f"design: v_{K} must equal v_{K - 1} except its last angle")
    vs.append(last)
    lead = np.zeros(q) if lead is None else _phase_vector(lead, q, HALF_PI, "lead")

    eye = np.eye(q, dtype=np.int64)
    P = cyclic_permutation(q)
    theta = np.zeros(((K - 1) * q, K * q))
    support = np.zeros_like(theta, dtype=bool)
    # block indices below are 0-based; vs[i] is v_{i+1}
    _place(theta, support, 0, 0, q, lead, eye)
    _place(theta, support, 0, 1, q, vs[0], eye)
    _place(theta, support, 0, K - 1, q, vs[K - 2], P)
    for r in range(1, K - 1):
        _place(theta, support, r, r, q, vs[r - 1], eye)
        _place(theta, support, r, r + 1, q, vs[r] if r < K - 2 else vs[K - 1], eye)
    return SignatureMatrix(theta, support)


def construction_2(n_blocks: int, q: int, v: Sequence[Sequence[float]],
                   w: Sequence[Sequence[float]],
                   permutations: Optional[Mapping[Tuple[int, int], np.ndarray]] = None,
                   lead: Optional[Sequence[float]] = None) -> SignatureMatrix:
    """
    Kq-user, (K-2)q-resource banded code with three blocks per block row.

    `v` holds v_1..v_{K-1} in [0, pi/2) and `w` holds w_1..w_{K-3} in
    [0, 2 pi). `permutations` maps (block row, slot), both 0-based, to a
    q x q permutation matrix; missing blocks are the identity and the
    default puts the cyclic permutation at (1, 1).
    """
    K = n_blocks
    if K < 4:
        raise InvalidInputError("design: construction 2 needs K >= 4 blocks")
    if q < 1:
        raise InvalidInputError("design: block size q must be >= 1")
    if len(v) != K - 1:
        raise InvalidInputError(f"design: construction 2 needs {K - 1} v vectors, got {len(v)}")
    if len(w) != K - 3:
        raise InvalidInputError(f"design: construction 2 needs {K - 3} w vectors, got {len(w)}")
    vs = [_phase_vector(vec, q, HALF_PI, f"v_{i + 1}") for i, vec in enumerate(v)]
    ws = [_phase_vector(vec, q, TWO_PI, f"w_{i + 1}") for i, vec in enumerate(w)]
    lead = np.zeros(q) if lead is None else _phase_vector(lead, q, HALF_PI, "lead")

    if permutations is None:
        permutations = {(1, 1): cyclic_permutation(q)}
    blocks = {}
    for (r, slot), p in permutations.items():
        if not (0 <= r < K - 2 and 0 <= slot < 3):
            raise InvalidInputError(f"design: no permutation block at ({r}, {slot})")
        blocks[(r, slot)] = _check_permutation(p, q)
    eye = np.eye(q, dtype=np.int64)

    def perm(r, slot):
        return blocks.get((r, slot), eye)

    theta = np.zeros(((K - 2) * q, K * q))
    support = np.zeros_like(theta, dtype=bool)
    _place(theta, support, 0, 0, q, lead, perm(0, 0))
    _place(theta, support, 0, 1, q, vs[0], perm(0, 1))
    _place(theta, support, 0, 2, q, vs[1], perm(0, 2))
    for r in range(1, K - 2):
        _place(theta, support, r, r, q, vs[r - 1], perm(r, 0))
        _place(theta, support, r, r + 1, q, ws[r - 1], perm(r, 1))
        _place(theta, support, r, r + 2, q, vs[r + 1], perm(r, 2))
    return SignatureMatrix(theta, support)


class LatinResult(NamedTuple):
    matrix: SignatureMatrix
    d_min: float
    achieved: List[float]  # distinct d_min values over the searched labelings
    labelings: int


def latin_baseline(graph: FactorGraph, phases: Sequence[float] = LATIN_PHASES,
                   latin_only: bool = True, threads: Optional[int] = None) -> LatinResult:
    """
    Brute force over every per-row assignment of a permutation of `phases`
    to the row's edges (in column order). With `latin_only`, labelings that
    repeat a phase within a column are skipped.
    """
    degree = graph.regular_degree()
    if degree is None or degree != len(phases):
        raise InvalidInputError(
            f"design: Latin labeling needs a code-node regular graph of degree {len(phases)}"
        )
    space = difference_space(graph.n_data)
    rows = [graph.code_neighbors(n) for n in range(graph.n_code)]
    perms = list(itertools.permutations(phases))

    labelings = []
    for choice in itertools.product(perms, repeat=graph.n_code):
        theta = np.zeros((graph.n_code, graph.n_data))
        for n, assigned in enumerate(choice):
            theta[n, list(rows[n])] = assigned
        if latin_only and not _is_latin(theta, graph):
            continue
        labelings.append(theta)
    if not labelings:
        raise InvalidInputError("design: graph admits no Latin labeling")

    support = graph.support()
    stack = np.where(support[None, :, :], np.exp(1j * np.array(labelings)), 0.0)
    batches = [stack[lo:lo + EVAL_BATCH] for lo in range(0, len(stack), EVAL_BATCH)]
    threads = config.THREADS if threads is None else threads
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sq = np.concatenate(list(pool.map(lambda b: space.min_sq_distances(b, threads=1), batches)))
    else:
        sq = np.concatenate([space.min_sq_distances(b, threads=1) for b in batches])

    d = np.sqrt(sq)
    best = int(np.argmax(d))
    distinct = np.sort(d)
    keep = np.concatenate(([True], np.diff(distinct) > config.DISTANCE_TOL))
    matrix = SignatureMatrix(labelings[best], support)
    logger.info(f"Latin baseline: {len(labelings)} labeling(s), best d_min {d[best]:.6f}")
    return LatinResult(matrix, float(d[best]), distinct[keep].tolist(), len(labelings))


def _is_latin(theta: np.ndarray, graph: FactorGraph) -> bool:
    for k in range(graph.n_data):
        column = theta[list(graph.data_neighbors(k)), k]
        if len(np.unique(column)) != len(column):
            return False
    return True
