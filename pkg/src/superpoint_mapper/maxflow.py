"""
Max-flow / min-cut by shortest augmenting paths (Edmonds-Karp)
"""

from collections import deque
from collections.abc import Hashable
from dataclasses import dataclass

type Node = Hashable
type Capacity = int | float


@dataclass(frozen=True, slots=True)
class FlowResult:
    """
    Attributes:
        value: Maximum flow value, equal to the minimum cut capacity
        source_side: Nodes reachable from the source in the final residual graph
    """
    value: Capacity
    source_side: frozenset[Node]


class FlowNetwork:
    """
    Directed capacitated network.

    Parallel edges are merged by summing their capacities. Integer capacities keep the
    computation exact.
    """

    def __init__(self, source: Node = "s", sink: Node = "t"):
        if source == sink:
            raise ValueError("Source and sink must differ")
        self.source = source
        self.sink = sink
        self._capacity: dict[Node, dict[Node, Capacity]] = {source: {}, sink: {}}

    def add_node(self, node: Node) -> None:
        self._capacity.setdefault(node, {})

    def add_edge(self, u: Node, v: Node, capacity: Capacity) -> None:
        """
        Raises:
            ValueError: On negative capacity or a self-loop
        """
        if capacity < 0:
            raise ValueError(f"Negative capacity {capacity} on edge {u}->{v}")
        if u == v:
            raise ValueError(f"Self-loop on {u}")
        self.add_node(u)
        self.add_node(v)
        self._capacity[u][v] = self._capacity[u].get(v, 0) + capacity
        self._capacity[v].setdefault(u, 0)

    @property
    def nodes(self) -> list[Node]:
        return list(self._capacity)

    def capacity(self, u: Node, v: Node) -> Capacity:
        return self._capacity.get(u, {}).get(v, 0)

    def cut_capacity(self, source_side: frozenset[Node] | set[Node]) -> Capacity:
        """Total capacity of edges leaving `source_side`"""
        total: Capacity = 0
        for u in source_side:
            for v, c in self._capacity.get(u, {}).items():
                if v not in source_side:
                    total += c
        return total

    def residual(self) -> dict[Node, dict[Node, Capacity]]:
        return {u: dict(out) for u, out in self._capacity.items()}


def _bfs(
    residual: dict[Node, dict[Node, Capacity]], source: Node, sink: Node, tolerance: float
) -> dict[Node, Node | None]:
    parent: dict[Node, Node | None] = {source: None}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v, c in residual[u].items():
            if v not in parent and c > tolerance:
                parent[v] = u
                if v == sink:
                    return parent
                queue.append(v)
    return parent


def max_flow_min_cut(network: FlowNetwork, tolerance: float = 1e-12) -> FlowResult:
    """
    Compute the maximum s-t flow and a minimum cut.

    Args:
        network: Network with non-negative capacities
        tolerance: Residual capacities at or below this count as saturated

    Returns:
        Flow value and the source side of a minimum cut
    """
    residual = network.residual()
    source, sink = network.source, network.sink
    value: Capacity = 0
    while True:
        parent = _bfs(residual, source, sink, tolerance)
        if sink not in parent:
            break
        bottleneck: Capacity | None = None
        v: Node = sink
        while (u := parent[v]) is not None:
            c = residual[u][v]
            bottleneck = c if bottleneck is None or c < bottleneck else bottleneck
            v = u
        assert bottleneck is not None
        v = sink
        while (u := parent[v]) is not None:
            residual[u][v] -= bottleneck
            residual[v][u] += bottleneck
            v = u
        value += bottleneck
    return FlowResult(value, frozenset(parent))
