"""Switch-group analysis and radial configuration enumeration.

Cycle checks treat every substation bus as one shared source node: two
substations are already connected through the transmission system, so a path
of closed lines joining them closes a loop.  This is what makes a load section
that can be fed from two feeders an "at most one closed" group.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import Network


class TopologyError(ValueError):
    """The switchable lines do not decompose into independent groups."""


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of ``a`` and ``b``; False if they were already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


@dataclass(frozen=True)
class SwitchGroup:
    lines: tuple[int, ...]

    def __post_init__(self):
        if not self.lines:
            raise ValueError("empty switch group")
        object.__setattr__(self, "lines", tuple(sorted(int(i) for i in self.lines)))

    @property
    def n_configs(self) -> int:
        return len(self.lines) + 1


@dataclass(frozen=True)
class SwitchConfig:
    """Commanded on/off state of the switchable lines (ascending id order)."""

    switchable_ids: tuple[int, ...]
    closed: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "switchable_ids", tuple(int(i) for i in self.switchable_ids))
        object.__setattr__(self, "closed", tuple(bool(c) for c in self.closed))
        if len(self.closed) != len(self.switchable_ids):
            raise ValueError("closed mask does not match switchable ids")

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.closed, dtype=bool)

    @property
    def closed_ids(self) -> frozenset[int]:
        return frozenset(i for i, c in zip(self.switchable_ids, self.closed) if c)

    @property
    def key(self) -> int:
        return mask_key(self.closed)

    @classmethod
    def from_closed(cls, switchable_ids: Sequence[int], closed_ids: Iterable[int]) -> "SwitchConfig":
        ids = tuple(sorted(switchable_ids))
        closed = set(closed_ids)
        unknown = closed - set(ids)
        if unknown:
            raise ValueError(f"lines {sorted(unknown)} are not switchable")
        return cls(ids, tuple(i in closed for i in ids))

    @classmethod
    def all_open(cls, switchable_ids: Sequence[int]) -> "SwitchConfig":
        ids = tuple(sorted(switchable_ids))
        return cls(ids, (False,) * len(ids))

    def __repr__(self):
        return f"SwitchConfig(closed={sorted(self.closed_ids)})"


def mask_key(bits) -> int:
    """Pack a boolean sequence into an int (bit i = element i)."""
    key = 0
    for i, b in enumerate(bits):
        if b:
            key |= 1 << i
    return key


def _source_map(network: Network) -> list[int]:
    """Bus position -> node index with all substations collapsed onto node 0."""
    node = []
    nxt = 1
    for b in network.buses:
        if b.is_substation:
            node.append(0)
        else:
            node.append(nxt)
            nxt += 1
    return node


def _fixed_components(network: Network):
    node = _source_map(network)
    uf = UnionFind(max(node) + 1)
    for pos, line in enumerate(network.lines):
        if line.switchable:
            continue
        a, b = node[network.from_idx[pos]], node[network.to_idx[pos]]
        if not uf.union(a, b):
            raise TopologyError(f"non-switchable lines already form a loop (line {line.id})")
    return node, uf


def decompose_groups(network: Network) -> list[SwitchGroup]:
    """Split the switchable lines into independent "at most one closed" groups.

    Lines whose endpoints fall in the same pair of fixed-line sections form a
    group.  A switchable line that is the only link between its two sections
    becomes a singleton group.  Raises :class:`TopologyError` when loops
    overlap, i.e. when the section graph spanned by the groups has a cycle.
    """
    node, uf = _fixed_components(network)
    pairs: dict[tuple[int, int], list[int]] = {}
    for pos in network.switchable_pos:
        line = network.lines[pos]
        ca = uf.find(node[network.from_idx[pos]])
        cb = uf.find(node[network.to_idx[pos]])
        if ca == cb:
            raise TopologyError(
                f"switchable line {line.id} closes a loop with fixed lines alone")
        pairs.setdefault((min(ca, cb), max(ca, cb)), []).append(line.id)

    # the section graph must be a forest, otherwise picking one line per group
    # could still close a loop
    sec = UnionFind(max(node) + 1)
    adjacency: dict[int, list[tuple[int, tuple[int, ...]]]] = {}
    for (ca, cb), ids in sorted(pairs.items(), key=lambda kv: min(kv[1])):
        if not sec.union(ca, cb):
            path = _section_path(adjacency, ca, cb)
            cycle = sorted({i for hop in path for i in hop} | set(ids))
            raise TopologyError(f"overlapping loops through switchable lines {cycle}")
        adjacency.setdefault(ca, []).append((cb, tuple(ids)))
        adjacency.setdefault(cb, []).append((ca, tuple(ids)))

    groups = [SwitchGroup(tuple(ids)) for ids in pairs.values()]
    groups.sort(key=lambda g: g.lines[0])
    return groups


def _section_path(adjacency, start, goal):
    # BFS over the section graph; returns the line-id tuples along the path
    prev = {start: None}
    queue = [start]
    while queue:
        cur = queue.pop(0)
        if cur == goal:
            break
        for nxt, ids in adjacency.get(cur, []):
            if nxt not in prev:
                prev[nxt] = (cur, ids)
                queue.append(nxt)
    hops = []
    cur = goal
    while prev.get(cur) is not None:
        cur, ids = prev[cur]
        hops.append(ids)
    return hops


def count_topologies(groups: Sequence[SwitchGroup]) -> int:
    return math.prod(g.n_configs for g in groups)


def _switchable_ids(groups: Sequence[SwitchGroup]) -> tuple[int, ...]:
    return tuple(sorted(i for g in groups for i in g.lines))


def config_from_choices(groups: Sequence[SwitchGroup], choices: Sequence[int]) -> SwitchConfig:
    """Build a config from one index per group.

    ``k = 0`` leaves the whole group open and ``k = j`` closes the j-th line of
    the group in ascending id order.
    """
    if len(choices) != len(groups):
        raise ValueError(f"expected {len(groups)} choices, got {len(choices)}")
    closed = []
    for g, k in zip(groups, choices):
        k = int(k)
        if not 0 <= k < g.n_configs:
            raise IndexError(f"choice {k} out of range for group {g.lines}")
        if k:
            closed.append(g.lines[k - 1])
    return SwitchConfig.from_closed(_switchable_ids(groups), closed)


def choices_from_config(groups: Sequence[SwitchGroup], config: SwitchConfig) -> tuple[int, ...]:
    closed = config.closed_ids
    out = []
    for g in groups:
        hit = [j + 1 for j, lid in enumerate(g.lines) if lid in closed]
        if len(hit) > 1:
            raise ValueError(f"more than one closed line in group {g.lines}")
        out.append(hit[0] if hit else 0)
    return tuple(out)


def enumerate_choices(groups: Sequence[SwitchGroup]):
    return itertools.product(*(range(g.n_configs) for g in groups))


def enumerate_configs(groups: Sequence[SwitchGroup]) -> list[SwitchConfig]:
    return [config_from_choices(groups, ch) for ch in enumerate_choices(groups)]


def is_radial(network: Network, config: SwitchConfig, availability=None) -> bool:
    """True when the energizable lines contain no loop.

    A line takes part if it is available and either fixed or switchable and
    closed.  Connectivity is not required; islanded sections are allowed.
    """
    av = np.ones(network.n_line, dtype=bool) if availability is None else np.asarray(availability, bool)
    closed = config.closed_ids
    node = _source_map(network)
    uf = UnionFind(max(node) + 1)
    for pos, line in enumerate(network.lines):
        if not av[pos]:
            continue
        if line.switchable and line.id not in closed:
            continue
        if not uf.union(node[network.from_idx[pos]], node[network.to_idx[pos]]):
            return False
    return True


def config_for_network(network: Network, closed_ids: Iterable[int]) -> SwitchConfig:
    return SwitchConfig.from_closed(network.switchable_ids, closed_ids)
