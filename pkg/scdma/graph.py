"""
Bipartite factor graph of an SCDMA code and the structural analyses the
labeling bounds need: cycles, spanning-tree complements, and subgraphs
obtained by deleting the data nodes around a set of code nodes.

Nodes are addressed by index: code node n in 0..N-1, data node k in 0..K-1.
An edge is the pair (n, k).
"""

from collections import deque
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from scdma.errors import InvalidInputError

if TYPE_CHECKING:
    from scdma.signature import SignatureMatrix

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


class GraphModel(BaseModel):
    """On-disk schema of a factor graph"""

    model_config = ConfigDict(extra="forbid")

    n_code: int
    n_data: int
    edges: List[Tuple[int, int]]


class FactorGraph:
    """
    Immutable bipartite graph with `n_code` code nodes and `n_data` data nodes.
    Every node has degree >= 1 and there are no duplicate edges.
    """

    def __init__(self, n_code: int, n_data: int, edges: Iterable[Edge]):
        if n_code < 1 or n_data < 1:
            raise InvalidInputError("graph: need at least one code node and one data node")
        edge_list = [(int(n), int(k)) for n, k in edges]
        edge_set = frozenset(edge_list)
        if len(edge_set) != len(edge_list):
            raise InvalidInputError("graph: duplicate edges")
        for n, k in edge_set:
            if not (0 <= n < n_code and 0 <= k < n_data):
                raise InvalidInputError(f"graph: edge ({n}, {k}) out of range")

        self._n_code = n_code
        self._n_data = n_data
        self._edges = edge_set
        self._code_adj: List[Tuple[int, ...]] = [
            tuple(sorted(k for m, k in edge_set if m == n)) for n in range(n_code)
        ]
        self._data_adj: List[Tuple[int, ...]] = [
            tuple(sorted(n for n, m in edge_set if m == k)) for k in range(n_data)
        ]

        empty_code = [n for n, adj in enumerate(self._code_adj) if not adj]
        empty_data = [k for k, adj in enumerate(self._data_adj) if not adj]
        if empty_code:
            raise InvalidInputError(f"graph: code node(s) {empty_code} have no edges")
        if empty_data:
            raise InvalidInputError(f"graph: data node(s) {empty_data} have no edges")

    @classmethod
    def from_signature(cls, matrix: "SignatureMatrix") -> "FactorGraph":
        """Edge (n, k) is present iff s_{n,k} != 0"""
        support = np.asarray(matrix.support, dtype=bool)
        rows, cols = np.nonzero(support)
        return cls(support.shape[0], support.shape[1], zip(rows.tolist(), cols.tolist()))

    @classmethod
    def from_dict(cls, data: dict) -> "FactorGraph":
        try:
            model = GraphModel.model_validate(data)
        except ValidationError as e:
            raise InvalidInputError(f"graph: malformed graph JSON: {e}") from None
        return cls(model.n_code, model.n_data, model.edges)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FactorGraph":
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"graph: graph file {path} not found")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"graph: malformed graph JSON: {e}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"n_code": self._n_code, "n_data": self._n_data, "edges": [list(e) for e in self.sorted_edges()]}

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        logger.info(f"Wrote factor graph to {path}")

    @property
    def n_code(self) -> int:
        return self._n_code

    @property
    def n_data(self) -> int:
        return self._n_data

    @property
    def edges(self) -> FrozenSet[Edge]:
        return self._edges

    @property
    def load_factor(self) -> float:
        return self._n_data / self._n_code

    def sorted_edges(self) -> List[Edge]:
        return sorted(self._edges)

    def code_neighbors(self, n: int) -> Tuple[int, ...]:
        return self._code_adj[n]

    def data_neighbors(self, k: int) -> Tuple[int, ...]:
        return self._data_adj[k]

    def degrees(self) -> Tuple[List[int], List[int]]:
        """(code node degrees, data node degrees)"""
        return [len(a) for a in self._code_adj], [len(a) for a in self._data_adj]

    def regular_degree(self) -> Optional[int]:
        """Common code-node degree if the graph is code-node regular, else None"""
        code_degrees, _ = self.degrees()
        return code_degrees[0] if len(set(code_degrees)) == 1 else None

    def support(self) -> np.ndarray:
        mask = np.zeros((self._n_code, self._n_data), dtype=bool)
        for n, k in self._edges:
            mask[n, k] = True
        return mask

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FactorGraph):
            return NotImplemented
        return (self._n_code, self._n_data, self._edges) == (other._n_code, other._n_data, other._edges)

    def __hash__(self) -> int:
        return hash((self._n_code, self._n_data, self._edges))

    def __repr__(self) -> str:
        return f"FactorGraph(n_code={self._n_code}, n_data={self._n_data}, edges={len(self._edges)})"

    # Unified node ids: code node n -> n, data node k -> N + k

    def _neighbors(self, node: int, excluded: FrozenSet[Edge] = frozenset()) -> List[int]:
        N = self._n_code
        if node < N:
            return [N + k for k in self._code_adj[node] if (node, k) not in excluded]
        k = node - N
        return [n for n in self._data_adj[k] if (n, k) not in excluded]

    def _components(self, excluded: FrozenSet[Edge] = frozenset()) -> List[List[int]]:
        total = self._n_code + self._n_data
        seen = [False] * total
        components = []
        for start in range(total):
            if seen[start]:
                continue
            seen[start] = True
            queue = deque([start])
            members = []
            while queue:
                node = queue.popleft()
                members.append(node)
                for nb in self._neighbors(node, excluded):
                    if not seen[nb]:
                        seen[nb] = True
                        queue.append(nb)
            components.append(sorted(members))
        return components

    def connected_components(self) -> List[Tuple[List[int], List[int]]]:
        """Partition into components, each given as (code indices, data indices)"""
        N = self._n_code
        return [
            ([v for v in comp if v < N], [v - N for v in comp if v >= N])
            for comp in self._components()
        ]

    def is_connected(self) -> bool:
        return len(self._components()) == 1

    def is_tree(self) -> bool:
        return self.is_connected() and len(self._edges) == self._n_code + self._n_data - 1

    def is_spanning_tree_after(self, removed: Iterable[Edge]) -> bool:
        """True if deleting `removed` leaves a connected cycle-free graph"""
        removed = frozenset(removed)
        remaining = len(self._edges - removed)
        return (
            remaining == self._n_code + self._n_data - 1
            and len(self._components(removed)) == 1
        )

    def is_forest_after(self, removed: Iterable[Edge]) -> bool:
        """True if deleting `removed` leaves a cycle-free graph"""
        removed = frozenset(removed)
        remaining = len(self._edges - removed)
        n_components = len(self._components(removed))
        return remaining == self._n_code + self._n_data - n_components

    def count_cycles(self, length: int) -> int:
        """
        Number of distinct simple cycles with exactly `length` edges.

        Each cycle is anchored at its smallest node id and found once per
        traversal direction, so the raw count is halved.
        """
        if length < 4 or length % 2:
            raise InvalidInputError(f"graph: cycle length must be even and >= 4, got {length}")

        total = self._n_code + self._n_data
        adjacency = [self._neighbors(v) for v in range(total)]
        found = 0

        for start in range(total):
            on_path = [False] * total
            on_path[start] = True
            # (node, depth, neighbor iterator)
            stack = [(start, 0, iter(adjacency[start]))]
            while stack:
                node, depth, it = stack[-1]
                advanced = False
                for nb in it:
                    if nb == start and depth + 1 == length:
                        found += 1
                        continue
                    if nb <= start or on_path[nb] or depth + 1 >= length:
                        continue
                    on_path[nb] = True
                    stack.append((nb, depth + 1, iter(adjacency[nb])))
                    advanced = True
                    break
                if not advanced:
                    stack.pop()
                    if node != start:
                        on_path[node] = False

        return found // 2

    def girth(self) -> Optional[int]:
        """Length of the shortest cycle, or None for a forest"""
        total = self._n_code + self._n_data
        best: Optional[int] = None
        for start in range(total):
            dist = {start: 0}
            parent = {start: -1}
            queue = deque([start])
            while queue:
                node = queue.popleft()
                for nb in self._neighbors(node):
                    if nb not in dist:
                        dist[nb] = dist[node] + 1
                        parent[nb] = node
                        queue.append(nb)
                    elif parent[node] != nb:
                        cycle = dist[node] + dist[nb] + 1
                        if best is None or cycle < best:
                            best = cycle
        return best

    def diameter(self) -> int:
        """Longest shortest path (in edges) between two nodes; graph must be connected"""
        if not self.is_connected():
            raise InvalidInputError("graph: diameter of a disconnected graph is undefined")
        total = self._n_code + self._n_data
        longest = 0
        for start in range(total):
            dist = {start: 0}
            queue = deque([start])
            while queue:
                node = queue.popleft()
                for nb in self._neighbors(node):
                    if nb not in dist:
                        dist[nb] = dist[node] + 1
                        queue.append(nb)
            longest = max(longest, max(dist.values()))
        return longest

    def spanning_tree_complement(self) -> "EdgeSubset":
        """
        Edges left out of the breadth-first spanning tree rooted at data node 0,
        neighbors visited in index order.
        """
        if not self.is_connected():
            raise InvalidInputError("graph: spanning tree requires a connected graph")

        N = self._n_code
        root = N
        seen = {root}
        tree: Set[Edge] = set()
        queue = deque([root])
        while queue:
            node = queue.popleft()
            for nb in self._neighbors(node):
                if nb in seen:
                    continue
                seen.add(nb)
                queue.append(nb)
                tree.add((node, nb - N) if node < N else (nb, node - N))

        phi = self._edges - tree
        logger.debug(f"Spanning tree complement has {len(phi)} edge(s): {sorted(phi)}")
        return EdgeSubset(self, phi)

    def delete_around_code_nodes(self, alpha: Iterable[int]) -> Tuple[int, int]:
        """
        Delete every data node adjacent to a code node in `alpha` (with its
        edges) and return (n1, n2): the number of remaining code nodes with
        degree exactly 1 and with degree > 1.
        """
        alpha = set(int(a) for a in alpha)
        if any(not 0 <= a < self._n_code for a in alpha):
            raise InvalidInputError(f"graph: code indices {sorted(alpha)} out of range")
        if len(alpha) == self._n_code:
            raise InvalidInputError("graph: alpha must be a proper subset of the code nodes")

        deleted = {k for n in alpha for k in self._code_adj[n]}
        n1 = n2 = 0
        for n in range(self._n_code):
            degree = sum(1 for k in self._code_adj[n] if k not in deleted)
            if degree == 1:
                n1 += 1
            elif degree > 1:
                n2 += 1
        return n1, n2

    def relabel(self, code_perm: List[int], data_perm: List[int]) -> "FactorGraph":
        """Graph with code node n renamed code_perm[n] and data node k renamed data_perm[k]"""
        if sorted(code_perm) != list(range(self._n_code)) or sorted(data_perm) != list(range(self._n_data)):
            raise InvalidInputError("graph: relabeling must be a permutation")
        return FactorGraph(
            self._n_code,
            self._n_data,
            ((code_perm[n], data_perm[k]) for n, k in self._edges),
        )


class EdgeSubset:
    """
    A set of edges of a graph whose removal leaves a cycle-free graph; the
    loop edges that keep their own free phase in a canonical labeling.
    """

    def __init__(self, graph: FactorGraph, edges: Iterable[Edge]):
        edge_set = frozenset((int(n), int(k)) for n, k in edges)
        missing = edge_set - graph.edges
        if missing:
            raise InvalidInputError(f"graph: edges {sorted(missing)} are not in the graph")
        if not graph.is_forest_after(edge_set):
            raise InvalidInputError("graph: removing the edge subset leaves a cycle")
        self._graph = graph
        self._edges = edge_set

    @property
    def graph(self) -> FactorGraph:
        return self._graph

    @property
    def edges(self) -> FrozenSet[Edge]:
        return self._edges

    def sorted_edges(self) -> List[Edge]:
        return sorted(self._edges)

    def leaves_spanning_tree(self) -> bool:
        return self._graph.is_spanning_tree_after(self._edges)

    def __len__(self) -> int:
        return len(self._edges)

    def __contains__(self, edge: object) -> bool:
        return edge in self._edges

    def __iter__(self):
        return iter(self.sorted_edges())

    def __repr__(self) -> str:
        return f"EdgeSubset({self.sorted_edges()})"


def degree_profile(graph: FactorGraph) -> Dict[str, List[int]]:
    code_degrees, data_degrees = graph.degrees()
    return {"code": code_degrees, "data": data_degrees}
