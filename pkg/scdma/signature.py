"""
Signature matrices: N x K grids whose entries are zero or a unit-modulus
phase e^{i theta}, together with the rotations, concatenation and
canonical relabeling that leave the distance spectrum unchanged.
"""

from collections import deque
import json
import logging
import math
import re
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from scdma.config import config
from scdma.errors import InvalidInputError
from scdma.graph import EdgeSubset, FactorGraph

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi

AngleLike = Union[float, int, str]

_ANGLE_RE = re.compile(
    r"^\s*(?P<sign>[+-])?\s*(?P<coef>\d+(?:\.\d*)?|\.\d+)?\s*\*?\s*pi"
    r"\s*(?:/\s*(?P<den>\d+(?:\.\d*)?))?\s*$",
    re.IGNORECASE,
)


def parse_angle(value: AngleLike) -> float:
    """
    Radians from a number or an exact string such as "pi/6", "-pi/2",
    "0.1431pi" or "2*pi/3".
    """
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise InvalidInputError(f"signature: cannot read angle {value!r}")
    match = _ANGLE_RE.match(value)
    if match:
        coef = float(match.group("coef")) if match.group("coef") else 1.0
        den = float(match.group("den")) if match.group("den") else 1.0
        if den == 0:
            raise InvalidInputError(f"signature: zero denominator in angle {value!r}")
        sign = -1.0 if match.group("sign") == "-" else 1.0
        return sign * coef * math.pi / den
    try:
        return float(value)
    except ValueError:
        raise InvalidInputError(f"signature: cannot read angle {value!r}") from None


def normalize_phase(theta, period: float = TWO_PI):
    """Wrap into [0, period); values within PHASE_TOL below `period` snap to 0"""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64), period)
    wrapped = np.where(period - wrapped < config.PHASE_TOL, 0.0, wrapped)
    return wrapped if wrapped.ndim else float(wrapped)


def phase_distance(a, b):
    """Circular distance between two angles"""
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)


class PhaseEntry(NamedTuple):
    kind: str  # "zero" or "phase"
    theta: float = 0.0

    @property
    def value(self) -> complex:
        return 0j if self.kind == "zero" else complex(math.cos(self.theta), math.sin(self.theta))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"


class EntryModel(BaseModel):
    row: int
    col: int
    theta: AngleLike

    @field_validator("row", "col")
    @classmethod
    def non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("index must be non-negative")
        return v


class MatrixModel(BaseModel):
    """On-disk schema: absent (row, col) pairs are zero"""

    model_config = ConfigDict(extra="forbid")

    n: int
    k: int
    entries: List[EntryModel]


class SignatureMatrix:
    """
    Sparse N x K signature matrix. Stores phases in [0, 2 pi) where the
    support mask is set; no row or column may be all zero.
    """

    def __init__(self, theta: np.ndarray, support: np.ndarray):
        theta = np.asarray(theta, dtype=np.float64)
        support = np.asarray(support, dtype=bool)
        if theta.ndim != 2 or theta.shape != support.shape:
            raise InvalidInputError("signature: phases and support must be matching 2-D arrays")
        n_rows, n_cols = support.shape
        if n_rows == 0 or n_cols == 0:
            raise InvalidInputError("signature: matrix must have at least one row and one column")
        zero_rows = np.flatnonzero(~support.any(axis=1))
        zero_cols = np.flatnonzero(~support.any(axis=0))
        if zero_rows.size:
            raise InvalidInputError(f"signature: row {int(zero_rows[0])} is all zero")
        if zero_cols.size:
            raise InvalidInputError(f"signature: column {int(zero_cols[0])} is all zero")
        if not np.all(np.isfinite(theta[support])):
            raise InvalidInputError("signature: phases must be finite")

        self._support = support.copy()
        self._theta = np.where(support, normalize_phase(np.where(support, theta, 0.0)), 0.0)
        self._support.setflags(write=False)
        self._theta.setflags(write=False)
        self._graph: Optional[FactorGraph] = None

    # Constructors

    @classmethod
    def from_phases(cls, theta, support=None) -> "SignatureMatrix":
        """
        Build from a phase grid. Without `support`, NaN entries are zero;
        with it, phases outside the support are ignored.
        """
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if support is None:
            support = ~np.isnan(theta)
        support = np.atleast_2d(np.asarray(support, dtype=bool))
        return cls(np.nan_to_num(theta), support)

    @classmethod
    def from_complex(cls, values, tol: float = 1e-9) -> "SignatureMatrix":
        """Build from complex entries that are 0 or of unit modulus"""
        values = np.atleast_2d(np.asarray(values, dtype=np.complex128))
        modulus = np.abs(values)
        support = modulus > tol
        if np.any(np.abs(modulus[support] - 1.0) > tol):
            raise InvalidInputError("signature: nonzero entries must have unit modulus")
        return cls(np.angle(values), support)

    @classmethod
    def from_model(cls, model: MatrixModel) -> "SignatureMatrix":
        if model.n < 1 or model.k < 1:
            raise InvalidInputError("signature: n and k must be positive")
        theta = np.zeros((model.n, model.k))
        support = np.zeros((model.n, model.k), dtype=bool)
        for entry in model.entries:
            if entry.row >= model.n or entry.col >= model.k:
                raise InvalidInputError(f"signature: entry ({entry.row}, {entry.col}) out of range")
            if support[entry.row, entry.col]:
                raise InvalidInputError(f"signature: duplicate entry ({entry.row}, {entry.col})")
            support[entry.row, entry.col] = True
            theta[entry.row, entry.col] = parse_angle(entry.theta)
        return cls(theta, support)

    @classmethod
    def from_dict(cls, data: dict) -> "SignatureMatrix":
        try:
            model = MatrixModel.model_validate(data)
        except ValidationError as e:
            raise InvalidInputError(f"signature: malformed matrix JSON: {e}") from None
        return cls.from_model(model)

    @classmethod
    def from_json(cls, text: str) -> "SignatureMatrix":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"signature: malformed matrix JSON: {e}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SignatureMatrix":
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"signature: matrix file {path} not found")
        return cls.from_json(path.read_text())

    # Views

    @property
    def n_rows(self) -> int:
        return self._support.shape[0]

    @property
    def n_cols(self) -> int:
        return self._support.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._support.shape

    @property
    def support(self) -> np.ndarray:
        return self._support

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @property
    def values(self) -> np.ndarray:
        """Complex N x K matrix with exact zeros off the support"""
        return np.where(self._support, np.exp(1j * self._theta), 0.0 + 0.0j)

    @property
    def load_factor(self) -> float:
        return self.n_cols / self.n_rows

    @property
    def spreading_lengths(self) -> np.ndarray:
        """Effective spreading length w_k of every user"""
        return self._support.sum(axis=0)

    @property
    def graph(self) -> FactorGraph:
        if self._graph is None:
            self._graph = FactorGraph.from_signature(self)
        return self._graph

    def entry(self, n: int, k: int) -> PhaseEntry:
        if not self._support[n, k]:
            return PhaseEntry("zero")
        return PhaseEntry("phase", float(self._theta[n, k]))

    def to_dict(self) -> dict:
        rows, cols = np.nonzero(self._support)
        entries = [
            {"row": int(n), "col": int(k), "theta": float(self._theta[n, k])}
            for n, k in zip(rows, cols)
        ]
        return {"n": self.n_rows, "k": self.n_cols, "entries": entries}

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json() + "\n")
        logger.info(f"Wrote {self.n_rows}x{self.n_cols} signature matrix to {path}")

    def allclose(self, other: "SignatureMatrix", tol: Optional[float] = None) -> bool:
        """Same support and every phase within `tol` on the circle"""
        tol = config.PHASE_TOL if tol is None else tol
        if self.shape != other.shape or not np.array_equal(self._support, other._support):
            return False
        gaps = phase_distance(self._theta[self._support], other._theta[other._support])
        return bool(np.all(gaps <= tol))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SignatureMatrix):
            return NotImplemented
        return np.array_equal(self._support, other._support) and np.array_equal(self._theta, other._theta)

    def __repr__(self) -> str:
        return f"SignatureMatrix({self.n_rows}x{self.n_cols}, nnz={int(self._support.sum())})"

    def pretty(self) -> str:
        """Phases as multiples of pi with four decimals, '0' for zero entries"""
        lines = []
        for n in range(self.n_rows):
            cells = [
                f"{self._theta[n, k] / math.pi:.4f}pi" if self._support[n, k] else "0"
                for k in range(self.n_cols)
            ]
            lines.append("  ".join(f"{c:>9}" for c in cells))
        return "\n".join(lines)

    # Codewords

    def encode(self, x) -> np.ndarray:
        """
        Codeword c = S x. `x` is a complex array whose last axis has length K;
        leading axes are treated as a batch.
        """
        x = np.asarray(x, dtype=np.complex128)
        if x.shape[-1] != self.n_cols:
            raise InvalidInputError(
                f"signature: symbol vector has length {x.shape[-1]}, matrix has {self.n_cols} columns"
            )
        return x @ self.values.T

    # Transformations

    def row_rotate(self, theta) -> "SignatureMatrix":
        """s'_{n,k} = e^{i theta_n} s_{n,k}"""
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.n_rows:
            raise InvalidInputError(f"signature: need {self.n_rows} row angles, got {theta.size}")
        return SignatureMatrix(self._theta + theta[:, None], self._support)

    def column_rotate(self, m) -> "SignatureMatrix":
        """s*_{n,k} = e^{i m_k pi/2} s_{n,k} for integer m_k"""
        m = np.asarray(m).reshape(-1)
        if m.size != self.n_cols:
            raise InvalidInputError(f"signature: need {self.n_cols} column rotations, got {m.size}")
        if not np.all(np.equal(np.mod(m, 1), 0)):
            raise InvalidInputError("signature: column rotations must be integer multiples of pi/2")
        return SignatureMatrix(self._theta + HALF_PI * m.astype(np.float64)[None, :], self._support)

    def permute_columns(self, perm: Sequence[int]) -> "SignatureMatrix":
        """Column j of the result is column perm[j] of this matrix"""
        perm = [int(p) for p in perm]
        if sorted(perm) != list(range(self.n_cols)):
            raise InvalidInputError(f"signature: {perm} is not a permutation of 0..{self.n_cols - 1}")
        return SignatureMatrix(self._theta[:, perm], self._support[:, perm])

    def append_column(self, column) -> "SignatureMatrix":
        """Add a user; `column` holds phases with NaN for zero entries"""
        column = np.asarray(column, dtype=np.float64).reshape(-1)
        if column.size != self.n_rows:
            raise InvalidInputError(f"signature: new column needs {self.n_rows} entries")
        support = np.hstack([self._support, ~np.isnan(column)[:, None]])
        theta = np.hstack([self._theta, np.nan_to_num(column)[:, None]])
        return SignatureMatrix(theta, support)

    def append_row(self, row) -> "SignatureMatrix":
        """Add a resource; `row` holds phases with NaN for zero entries"""
        row = np.asarray(row, dtype=np.float64).reshape(-1)
        if row.size != self.n_cols:
            raise InvalidInputError(f"signature: new row needs {self.n_cols} entries")
        support = np.vstack([self._support, ~np.isnan(row)[None, :]])
        theta = np.vstack([self._theta, np.nan_to_num(row)[None, :]])
        return SignatureMatrix(theta, support)

    def canonicalize(self, phi: Optional[EdgeSubset] = None) -> "SignatureMatrix":
        """
        Equivalent matrix in the canonical family: every edge outside `phi`
        in column k carries the same phase theta_k, theta_0 = 0 and
        theta_k in [0, pi/2); edges in `phi` keep a free phase in [0, 2 pi).

        Rows are rotated along the spanning tree left after removing `phi`
        (rooted at data node 0), then each column is rotated by a multiple of
        pi/2 to fold its phase into [0, pi/2).
        """
        column_phase, loop_phase = self._canonical_phases(phi)
        theta = np.zeros(self.shape)
        for (n, k), value in loop_phase.items():
            theta[n, k] = value
        for n, k in zip(*np.nonzero(self._support)):
            if (n, k) not in loop_phase:
                theta[n, k] = column_phase[k]
        return SignatureMatrix(theta, self._support)

    def canonical_parameters(self, phi: Optional[EdgeSubset] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        (theta_1..theta_{K-1}, loop phases in sorted phi order) of the
        canonical form; theta_0 = 0 is omitted.
        """
        phi = self.graph.spanning_tree_complement() if phi is None else phi
        column_phase, loop_phase = self._canonical_phases(phi)
        loops = np.array([loop_phase[e] for e in phi.sorted_edges()], dtype=np.float64)
        return np.asarray(column_phase[1:], dtype=np.float64), loops

    def _canonical_phases(self, phi: Optional[EdgeSubset]):
        graph = self.graph
        if not graph.is_connected():
            raise InvalidInputError("signature: canonicalization needs a connected factor graph")
        if phi is None:
            phi = graph.spanning_tree_complement()
        if phi.graph != graph:
            raise InvalidInputError("signature: edge subset belongs to a different graph")
        if not phi.leaves_spanning_tree():
            raise InvalidInputError("signature: removing the edge subset does not leave a tree")

        values = self.values
        loops = phi.edges
        row_rot: List[Optional[complex]] = [None] * self.n_rows
        col_target: List[Optional[complex]] = [None] * self.n_cols

        # Walk the tree from data node 0: a row rotation is fixed by the first
        # tree edge reaching it, a column phase by the first rotated row.
        col_target[0] = 1.0 + 0.0j
        frontier = deque([("data", 0)])
        while frontier:
            kind, idx = frontier.popleft()
            if kind == "data":
                for n in graph.data_neighbors(idx):
                    if (n, idx) in loops or row_rot[n] is not None:
                        continue
                    row_rot[n] = col_target[idx] / values[n, idx]
                    frontier.append(("code", n))
            else:
                for k in graph.code_neighbors(idx):
                    if (idx, k) in loops or col_target[k] is not None:
                        continue
                    col_target[k] = row_rot[idx] * values[idx, k]
                    frontier.append(("data", k))

        column_phase = []
        fold = []
        for k, target in enumerate(col_target):
            angle = normalize_phase(math.atan2(target.imag, target.real))
            m = math.floor(angle / HALF_PI)
            folded = angle - m * HALF_PI
            if HALF_PI - folded < config.PHASE_TOL:
                folded, m = 0.0, m + 1
            column_phase.append(0.0 if k == 0 else float(folded))
            fold.append(m)

        loop_phase = {}
        for n, k in loops:
            rotated = row_rot[n] * values[n, k] * np.exp(-1j * HALF_PI * fold[k])
            loop_phase[(n, k)] = float(normalize_phase(math.atan2(rotated.imag, rotated.real)))

        logger.debug(f"Canonical column phases (pi units): {np.round(np.array(column_phase) / math.pi, 4)}")
        return column_phase, loop_phase


def concatenate(*matrices: SignatureMatrix) -> SignatureMatrix:
    """Stack matrices with equal column counts vertically"""
    if not matrices:
        raise InvalidInputError("signature: nothing to concatenate")
    for m in matrices:
        if not isinstance(m, SignatureMatrix):
            raise InvalidInputError("signature: can only concatenate signature matrices")
    n_cols = matrices[0].n_cols
    if any(m.n_cols != n_cols for m in matrices):
        raise InvalidInputError("signature: concatenated matrices must have equal column counts")
    theta = np.vstack([m.theta for m in matrices])
    support = np.vstack([m.support for m in matrices])
    return SignatureMatrix(theta, support)


def from_rows(rows: Sequence[Sequence[Optional[AngleLike]]]) -> SignatureMatrix:
    """Build from nested lists of angles, None meaning a zero entry"""
    theta = np.array(
        [[np.nan if a is None else parse_angle(a) for a in row] for row in rows],
        dtype=np.float64,
    )
    return SignatureMatrix.from_phases(theta)
