"""Sound-word classification from tag co-occurrence.

The pipeline is: build the co-occurrence graph, take an initial partition by
greedy two-level map-equation minimization, split oversized communities with
Louvain modularity optimization, then apply a declarative merge/label map to
obtain the final :class:`~chattymaps.lexicon.Taxonomy`.

All optimizers visit nodes in an order drawn from ``random.Random(seed)`` and
break ties by the lowest community id, so identical input and seed always
give identical partitions.
"""

from __future__ import annotations

import itertools
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from chattymaps.constants import DEFAULT_SIZE_THRESHOLD
from chattymaps.lexicon import Taxonomy, normalize_all

IMPROVEMENT_EPS = 1e-10
_TIE_EPS = 1e-12


@dataclass
class CooccurrenceGraph:
    """Undirected word graph weighted by the number of photos sharing both words."""

    nodes: list[str]
    edges: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.nodes)}

    @classmethod
    def from_edge_list(cls, rows: Iterable[tuple[str, str, int]], nodes: Iterable[str] = ()) -> "CooccurrenceGraph":
        rows = list(rows)
        words = sorted(set(nodes) | {a for a, _, _ in rows} | {b for _, b, _ in rows})
        g = cls(words)
        for a, b, w in rows:
            if a == b:
                raise ValueError(f"self-loop on {a!r}")
            i, j = sorted((g.index[a], g.index[b]))
            g.edges[(i, j)] = g.edges.get((i, j), 0) + int(w)
        return g

    @property
    def total_weight(self) -> int:
        return sum(self.edges.values())

    def weight(self, a: str, b: str) -> int:
        i, j = sorted((self.index[a], self.index[b]))
        return self.edges.get((i, j), 0)

    def rows(self) -> list[tuple[str, str, int]]:
        return [(self.nodes[i], self.nodes[j], w) for (i, j), w in sorted(self.edges.items())]

    def adjacency(self) -> list[dict[int, float]]:
        adj: list[dict[int, float]] = [{} for _ in self.nodes]
        for (i, j), w in self.edges.items():
            adj[i][j] = adj[i].get(j, 0) + w
            adj[j][i] = adj[j].get(i, 0) + w
        return adj

    def subgraph(self, words: Iterable[str]) -> "CooccurrenceGraph":
        keep = sorted(words)
        sub = CooccurrenceGraph(keep)
        for (i, j), w in self.edges.items():
            a, b = self.nodes[i], self.nodes[j]
            if a in sub.index and b in sub.index:
                sub.edges[tuple(sorted((sub.index[a], sub.index[b])))] = w
        return sub


def build_cooccurrence(photos, sound_terms: Iterable[str]) -> CooccurrenceGraph:
    """Each photo adds 1 to every unordered pair of distinct sound words it carries.

    Nodes are the sound words seen on at least one photo.
    """
    terms = set(sound_terms)
    pairs: Counter = Counter()
    seen: set[str] = set()
    for p in photos:
        words = sorted({t for t in normalize_all(p.tags) if t in terms})
        seen.update(words)
        pairs.update(itertools.combinations(words, 2))
    return CooccurrenceGraph.from_edge_list(((a, b, w) for (a, b), w in pairs.items()), seen)


@dataclass
class Partition:
    """Community path per node; a flat partition has paths of length 1.

    Ids at each level are contiguous from 0 (children numbered within their
    parent).
    """

    paths: dict[str, tuple[int, ...]]

    @classmethod
    def from_membership(cls, nodes: Sequence[str], membership: Sequence[int]) -> "Partition":
        relabel: dict[int, int] = {}
        for m in membership:
            relabel.setdefault(m, len(relabel))
        return cls({w: (relabel[m],) for w, m in zip(nodes, membership)})

    def top(self) -> dict[str, int]:
        return {w: p[0] for w, p in self.paths.items()}

    def communities(self, depth: int | None = None) -> dict[tuple[int, ...], list[str]]:
        out: dict[tuple[int, ...], list[str]] = {}
        for w in sorted(self.paths):
            p = self.paths[w] if depth is None else self.paths[w][:depth]
            out.setdefault(p, []).append(w)
        return dict(sorted(out.items()))

    def __len__(self) -> int:
        return len(self.communities())

    def rows(self) -> list[tuple[str, str]]:
        return [(w, ".".join(map(str, self.paths[w]))) for w in sorted(self.paths)]


# -- flow graph shared by the optimizers -------------------------------------


class _WGraph:
    """Weighted undirected graph on 0..n-1 with self-loop weights.

    Aggregating a partition turns intra-community weight into self-loops,
    which keeps degrees, flows and modularity unchanged.
    """

    def __init__(self, adj: list[dict[int, float]], selfw: list[float] | None = None):
        self.n = len(adj)
        self.adj = adj
        self.selfw = selfw if selfw is not None else [0.0] * self.n
        self.strength = [sum(a.values()) for a in adj]
        self.degree = [s + 2 * sw for s, sw in zip(self.strength, self.selfw)]
        self.two_m = float(sum(self.degree))

    @classmethod
    def from_graph(cls, graph: CooccurrenceGraph) -> "_WGraph":
        return cls(graph.adjacency())

    def aggregate(self, membership: Sequence[int]) -> "_WGraph":
        k = max(membership) + 1 if membership else 0
        adj: list[dict[int, float]] = [{} for _ in range(k)]
        selfw = [0.0] * k
        for i in range(self.n):
            a = membership[i]
            selfw[a] += self.selfw[i]
            for j, w in self.adj[i].items():
                b = membership[j]
                if a == b:
                    if i < j:
                        selfw[a] += w
                else:
                    adj[a][b] = adj[a].get(b, 0.0) + w
        return _WGraph(adj, selfw)


def _contiguous(membership: Sequence[int]) -> list[int]:
    relabel: dict[int, int] = {}
    return [relabel.setdefault(m, len(relabel)) for m in membership]


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


# -- map equation -------------------------------------------------------------


def _membership(graph: CooccurrenceGraph, partition) -> list:
    if isinstance(partition, Partition):
        partition = partition.top()
    if isinstance(partition, Mapping):
        return [partition[w] for w in graph.nodes]
    return list(partition)


def map_equation(graph: CooccurrenceGraph, partition) -> float:
    """Two-level map equation (bits) of ``partition`` on ``graph``.

    Node visit rates are weighted degree over total degree; a module's exit
    rate is the flow on edges leaving it. Hierarchical partitions are scored
    by their top level.
    """
    if not graph.edges:
        raise ValueError("map equation undefined on a graph without edges")
    member = _membership(graph, partition)
    g = _WGraph.from_graph(graph)
    exit_flow: dict = {}
    mod_flow: dict = {}
    node_term = 0.0
    for i in range(g.n):
        p = g.degree[i] / g.two_m
        node_term += _plogp(p)
        m = member[i]
        mod_flow[m] = mod_flow.get(m, 0.0) + p
        out = sum(w for j, w in g.adj[i].items() if member[j] != m)
        exit_flow[m] = exit_flow.get(m, 0.0) + out / g.two_m
    q = sum(exit_flow.values())
    return (
        _plogp(q)
        - 2.0 * sum(_plogp(v) for v in exit_flow.values())
        - node_term
        + sum(_plogp(exit_flow[m] + mod_flow[m]) for m in mod_flow)
    )


class _MapState:
    """Incremental map-equation bookkeeping for node moves on a _WGraph."""

    def __init__(self, g: _WGraph, membership: list[int]):
        self.g = g
        self.member = list(membership)
        inv = 1.0 / g.two_m
        self.flow = [d * inv for d in g.degree]
        self.out = [s * inv for s in g.strength]
        self.w = [{j: w * inv for j, w in a.items()} for a in g.adj]
        self.q: dict[int, float] = {}
        self.p: dict[int, float] = {}
        for i, m in enumerate(self.member):
            self.p[m] = self.p.get(m, 0.0) + self.flow[i]
            ext = sum(w for j, w in self.w[i].items() if self.member[j] != m)
            self.q[m] = self.q.get(m, 0.0) + ext
        self.sum_q = sum(self.q.values())

    def delta(self, i: int, a: int, b: int, w_ia: float, w_ib: float) -> float:
        qa, qb = self.q[a], self.q.get(b, 0.0)
        pa, pb = self.p[a], self.p.get(b, 0.0)
        qa2 = max(qa - self.out[i] + 2 * w_ia, 0.0)
        qb2 = max(qb + self.out[i] - 2 * w_ib, 0.0)
        pa2 = max(pa - self.flow[i], 0.0)
        pb2 = pb + self.flow[i]
        sq2 = max(self.sum_q - qa - qb + qa2 + qb2, 0.0)
        return (
            _plogp(sq2) - _plogp(self.sum_q)
            - 2.0 * (_plogp(qa2) + _plogp(qb2) - _plogp(qa) - _plogp(qb))
            + _plogp(qa2 + pa2) + _plogp(qb2 + pb2) - _plogp(qa + pa) - _plogp(qb + pb)
        )

    def move(self, i: int, a: int, b: int, w_ia: float, w_ib: float) -> None:
        qa, qb = self.q[a], self.q.get(b, 0.0)
        qa2 = max(qa - self.out[i] + 2 * w_ia, 0.0)
        qb2 = max(qb + self.out[i] - 2 * w_ib, 0.0)
        self.sum_q = max(self.sum_q - qa - qb + qa2 + qb2, 0.0)
        self.q[a], self.q[b] = qa2, qb2
        self.p[a] = max(self.p[a] - self.flow[i], 0.0)
        self.p[b] = self.p.get(b, 0.0) + self.flow[i]
        self.member[i] = b


def _infomap_moves(g: _WGraph, membership: list[int], rng: random.Random) -> tuple[list[int], bool]:
    """Greedy best single-node moves until no move lowers the description length."""
    st = _MapState(g, membership)
    any_move = False
    order = list(range(g.n))
    for _ in range(1000):
        rng.shuffle(order)
        moved = False
        for i in order:
            a = st.member[i]
            links: dict[int, float] = {}
            for j, w in st.w[i].items():
                m = st.member[j]
                links[m] = links.get(m, 0.0) + w
            w_ia = links.get(a, 0.0)
            best, best_delta = a, -IMPROVEMENT_EPS
            for b in sorted(links):
                if b == a:
                    continue
                d = st.delta(i, a, b, w_ia, links[b])
                if d < best_delta - _TIE_EPS:
                    best, best_delta = b, d
            if best != a:
                st.move(i, a, best, w_ia, links[best])
                moved = any_move = True
        if not moved:
            break
    return st.member, any_move


def _infomap_levels(g: _WGraph, membership: list[int], rng: random.Random) -> list[int]:
    """Repeated move-then-aggregate starting from ``membership``."""
    node_map = _contiguous(membership)
    level = g.aggregate(node_map)
    while True:
        sub, moved = _infomap_moves(level, list(range(level.n)), rng)
        if not moved:
            return node_map
        sub = _contiguous(sub)
        node_map = [sub[m] for m in node_map]
        level = level.aggregate(sub)


def infomap_partition(graph: CooccurrenceGraph, seed: int = 0) -> Partition:
    """Greedy two-level map-equation minimization.

    Starts from singletons, applies best single-node moves, aggregates modules
    and repeats; then fine-tunes single original nodes against the coarse
    result. Stops when a round improves the map equation by at most 1e-10 bits.
    """
    if not graph.nodes:
        raise ValueError("empty graph")
    if not graph.edges:
        return Partition.from_membership(graph.nodes, range(len(graph.nodes)))
    rng = random.Random(seed)
    g = _WGraph.from_graph(graph)
    member = list(range(g.n))
    best = map_equation(graph, member)
    while True:
        member = _infomap_levels(g, member, rng)
        member, _ = _infomap_moves(g, member, rng)
        member = _contiguous(member)
        cur = map_equation(graph, member)
        if best - cur <= IMPROVEMENT_EPS:
            break
        best = cur
    return Partition.from_membership(graph.nodes, member)


# -- modularity ---------------------------------------------------------------


def modularity(graph: CooccurrenceGraph, partition, exact: bool = False):
    """Weighted Newman modularity. ``exact=True`` returns a Fraction."""
    m = graph.total_weight
    if m == 0:
        raise ValueError("modularity undefined on a graph without edges")
    member = _membership(graph, partition)
    internal: Counter = Counter()
    degree: Counter = Counter()
    for (i, j), w in graph.edges.items():
        degree[member[i]] += w
        degree[member[j]] += w
        if member[i] == member[j]:
            internal[member[i]] += w
    if exact:
        return sum((Fraction(internal[c], m) - Fraction(degree[c], 2 * m) ** 2 for c in degree), Fraction(0))
    return sum(internal[c] / m - (degree[c] / (2 * m)) ** 2 for c in degree)


def _wgraph_modularity(g: _WGraph, membership: Sequence[int]) -> float:
    internal: dict = {}
    tot: dict = {}
    for i in range(g.n):
        c = membership[i]
        tot[c] = tot.get(c, 0.0) + g.degree[i]
        internal[c] = internal.get(c, 0.0) + 2 * g.selfw[i]
        for j, w in g.adj[i].items():
            if membership[j] == c:
                internal[c] += w
    return sum(internal[c] / g.two_m - (tot[c] / g.two_m) ** 2 for c in tot)


# -- Louvain ------------------------------------------------------------------


@dataclass
class LouvainResult:
    membership: list[int]
    trace: list[float]


def _louvain_g(g: _WGraph, rng: random.Random, on_move: Callable[[list[int]], None] | None = None) -> LouvainResult:
    """Louvain on a _WGraph; ``trace`` holds Q after every accepted move."""
    node_map = list(range(g.n))
    level = g
    q = _wgraph_modularity(g, node_map)
    trace = [q]
    if g.two_m == 0:
        return LouvainResult(node_map, trace)
    two_m = g.two_m
    while True:
        comm = list(range(level.n))
        tot = list(level.degree)
        order = list(range(level.n))
        improved = False
        while True:
            rng.shuffle(order)
            moved = False
            for i in order:
                c = comm[i]
                k_i = level.degree[i]
                links: dict[int, float] = {}
                for j, w in level.adj[i].items():
                    links[comm[j]] = links.get(comm[j], 0.0) + w
                tot[c] -= k_i
                stay = links.get(c, 0.0) - tot[c] * k_i / two_m
                best, best_gain = c, stay
                for b in sorted(links):
                    if b == c:
                        continue
                    gain = links[b] - tot[b] * k_i / two_m
                    if gain > best_gain + _TIE_EPS:
                        best, best_gain = b, gain
                tot[best] += k_i
                if best != c:
                    comm[i] = best
                    q += 2.0 * (best_gain - stay) / two_m
                    trace.append(q)
                    moved = improved = True
                    if on_move is not None:
                        on_move([comm[node_map[v]] for v in range(g.n)])
            if not moved:
                break
        if not improved:
            break
        comm = _contiguous(comm)
        node_map = [comm[m] for m in node_map]
        level = level.aggregate(comm)
    return LouvainResult(_contiguous(node_map), trace)


def louvain(graph: CooccurrenceGraph, seed: int = 0,
            on_move: Callable[[list[int]], None] | None = None) -> LouvainResult:
    """Louvain modularity maximization on the whole graph.

    ``on_move`` receives the full node membership (graph node order) after
    every accepted move.
    """
    return _louvain_g(_WGraph.from_graph(graph), random.Random(seed), on_move)


def louvain_refine(graph: CooccurrenceGraph, partition: Partition,
                   size_threshold: int = DEFAULT_SIZE_THRESHOLD, seed: int = 0,
                   max_depth: int = 3) -> Partition:
    """Split every community larger than ``size_threshold`` with Louvain.

    Sub-communities become children of the original community; children that
    are still too large are split again, up to ``max_depth`` levels below the
    top. Communities Louvain leaves whole are returned unchanged.
    """
    paths = dict(partition.paths)
    rng = random.Random(seed)

    def refine(words: list[str], prefix: tuple[int, ...]) -> None:
        if len(words) <= size_threshold or len(prefix) > max_depth:
            return
        sub = graph.subgraph(words)
        if not sub.edges:
            return
        res = _louvain_g(_WGraph.from_graph(sub), rng)
        if max(res.membership) == 0:
            return
        children: dict[int, list[str]] = {}
        for w, c in zip(sub.nodes, res.membership):
            paths[w] = prefix + (c,)
            children.setdefault(c, []).append(w)
        for c in sorted(children):
            refine(children[c], prefix + (c,))

    for path, words in partition.communities().items():
        refine(words, path)
    return Partition(paths)


# -- merge / label ------------------------------------------------------------


def _key(text: str) -> tuple[int, ...]:
    text = text.strip()
    if text.startswith("c"):
        text = text[1:]
    try:
        return tuple(int(p) for p in text.split("."))
    except ValueError:
        raise ValueError(f"bad community reference {text!r}") from None


def apply_merge(partition: Partition, merge_rows: Iterable[tuple[str, str, str]] = ()) -> Taxonomy:
    """Turn a (hierarchical) partition into a labeled taxonomy.

    ``merge_rows`` are ``(action, source, target)`` triples. ``merge`` moves
    every word of community ``source`` into community ``target`` (the words
    adopt the target's path); ``label`` names community ``source`` as
    ``target``. Unlabeled communities are called ``c<id>`` with dotted child
    ids, e.g. ``c3.1``.
    """
    prefixes = {p[:k] for p in partition.paths.values() for k in range(1, len(p) + 1)}
    merges: dict[tuple[int, ...], tuple[int, ...]] = {}
    labels: dict[tuple[int, ...], str] = {}
    for action, source, target in merge_rows:
        src = _key(source)
        if src not in prefixes:
            raise ValueError(f"{action} source community c{'.'.join(map(str, src))} does not exist")
        if action == "merge":
            tgt = _key(target)
            if tgt not in prefixes:
                raise ValueError(f"merge target community c{'.'.join(map(str, tgt))} does not exist")
            merges[src] = tgt
        elif action == "label":
            labels[src] = target.strip()
        else:
            raise ValueError(f"unknown merge-map action {action!r}")

    def resolve(path: tuple[int, ...]) -> tuple[int, ...]:
        for _ in range(len(merges) + 1):
            hit = next((path[:k] for k in range(len(path), 0, -1) if path[:k] in merges), None)
            if hit is None:
                return path
            path = merges[hit]
        raise ValueError("merge map contains a cycle")

    out = {}
    for word, path in partition.paths.items():
        path = resolve(path)
        out[word] = tuple(labels.get(path[:k], "c" + ".".join(map(str, path[:k]))) for k in range(1, len(path) + 1))
    return Taxonomy(out)
