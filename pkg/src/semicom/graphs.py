"""Graph data model, file ingestion, and dataset construction.

The :class:`Graph` is an immutable undirected graph over contiguous 0-based
node ids, carrying an original-id map for round-tripping predictions back
to input files, optional raw node features, and the augmented structural
features used by the encoders (degree plus neighbor-degree statistics).

Also provides ego-net / outer-boundary extraction, the pre-processing step
that restricts a labeled network to community nodes and their boundaries,
the cross-link hybrid construction, and a planted-partition generator used
as the desk-scale benchmark substrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# A community is just a frozen set of node ids.
Community = frozenset


class Graph:
    """Immutable undirected graph with derived structural features."""

    __slots__ = ("node_count", "neighbors", "raw_features", "augmented_features",
                 "orig_ids", "degrees", "_orig_to_internal")

    def __init__(self, neighbors, raw_features=None, orig_ids=None):
        """Build from per-node neighbor lists.

        Lists must describe a symmetric simple graph: no self-loops, no
        duplicates, and u in N(v) iff v in N(u). Violations raise ValueError.
        """
        adj = []
        for u, nbrs in enumerate(neighbors):
            arr = np.array(sorted(nbrs), dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= len(neighbors)):
                raise ValueError(f"node {u}: neighbor out of range")
            if np.any(arr == u):
                raise ValueError(f"node {u}: self-loop")
            if arr.size != np.unique(arr).size:
                raise ValueError(f"node {u}: duplicate neighbor")
            adj.append(arr)
        for u, arr in enumerate(adj):
            for v in arr:
                if not np.any(adj[v] == u):
                    raise ValueError(f"asymmetric edge ({u}, {v})")
        self.node_count = len(adj)
        self.neighbors = tuple(arr for arr in adj)
        self.degrees = np.array([arr.size for arr in adj], dtype=np.int64)
        if raw_features is not None:
            raw_features = np.asarray(raw_features, dtype=np.float64)
            if raw_features.shape[0] != self.node_count:
                raise ValueError("raw_features row count != node count")
        self.raw_features = raw_features
        if orig_ids is None:
            orig_ids = np.arange(self.node_count, dtype=np.int64)
        else:
            orig_ids = np.asarray(orig_ids, dtype=np.int64)
            if orig_ids.shape != (self.node_count,):
                raise ValueError("orig_ids length != node count")
        self.orig_ids = orig_ids
        self._orig_to_internal = None
        self.augmented_features = _augment(self.neighbors, self.degrees, self.raw_features)

    @classmethod
    def from_edges(cls, node_count, edges, raw_features=None, orig_ids=None):
        """Build from an iterable of (u, v) pairs; dedup and symmetrize."""
        nbrs = [set() for _ in range(node_count)]
        for u, v in edges:
            if u == v:
                continue
            nbrs[u].add(v)
            nbrs[v].add(u)
        return cls(nbrs, raw_features=raw_features, orig_ids=orig_ids)

    def edge_count(self) -> int:
        return int(self.degrees.sum()) // 2

    def edge_set(self) -> set[tuple[int, int]]:
        """All edges as (min, max) internal-id pairs."""
        return {(u, int(v)) for u in range(self.node_count)
                for v in self.neighbors[u] if u < v}

    def orig_to_internal(self) -> dict[int, int]:
        if self._orig_to_internal is None:
            self._orig_to_internal = {int(o): i for i, o in enumerate(self.orig_ids)}
        return self._orig_to_internal

    def with_features(self, raw_features) -> "Graph":
        """Same structure, new raw feature matrix."""
        return Graph([list(a) for a in self.neighbors], raw_features=raw_features,
                     orig_ids=self.orig_ids)


@dataclass
class CommunitySet:
    """Labeled communities plus disjoint train/validation/test index lists."""

    communities: list[Community]
    train_idx: list[int] = field(default_factory=list)
    val_idx: list[int] = field(default_factory=list)
    test_idx: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.communities:
            raise ValueError("CommunitySet needs at least one community")
        if not self.train_idx and not self.val_idx and not self.test_idx:
            self.train_idx = list(range(len(self.communities)))
        seen: set[int] = set()
        for part in (self.train_idx, self.val_idx, self.test_idx):
            for i in part:
                if not 0 <= i < len(self.communities):
                    raise ValueError(f"split index {i} out of range")
                if i in seen:
                    raise ValueError(f"split index {i} appears twice")
                seen.add(i)
        if not self.train_idx:
            raise ValueError("training split must be non-empty")

    @property
    def train(self) -> list[Community]:
        return [self.communities[i] for i in self.train_idx]

    @property
    def val(self) -> list[Community]:
        return [self.communities[i] for i in self.val_idx]

    @property
    def test(self) -> list[Community]:
        return [self.communities[i] for i in self.test_idx]

    def split(self, train_size: int, val_size: int) -> "CommunitySet":
        """First train_size communities train, next val_size validate, rest test."""
        n = len(self.communities)
        t = min(train_size, n)
        v = min(val_size, n - t)
        return CommunitySet(self.communities,
                            train_idx=list(range(t)),
                            val_idx=list(range(t, t + v)),
                            test_idx=list(range(t + v, n)))


def _augment(neighbors, degrees, raw) -> np.ndarray:
    n = len(neighbors)
    stats = np.zeros((n, 5))
    for u in range(n):
        stats[u, 0] = degrees[u]
        if degrees[u] == 0:
            continue  # isolated: all four neighbor-degree statistics stay 0
        dn = degrees[neighbors[u]]
        stats[u, 1] = dn.max()
        stats[u, 2] = dn.min()
        stats[u, 3] = dn.mean()
        stats[u, 4] = dn.std()  # population std
    if raw is None:
        raw = np.ones((n, 1))
    return np.concatenate([raw, stats], axis=1)


def augment_features(graph: Graph) -> np.ndarray:
    """Per-node [x(u), degree, max/min/mean/std of neighbor degrees].

    With no raw features, x(u) defaults to the scalar 1. Isolated nodes get
    zeros for all four neighbor-degree statistics.
    """
    return _augment(graph.neighbors, graph.degrees, graph.raw_features)


# -- file ingestion -----------------------------------------------------------


def read_community_file(path) -> list[Community]:
    """One community per line, whitespace-separated integer node ids."""
    path = Path(path)
    comms = []
    with path.open() as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                members = frozenset(int(tok) for tok in line.split())
            except ValueError:
                raise ValueError(f"{path}: parse error at line {ln}: non-integer id") from None
            if members:
                comms.append(members)
    return comms


def load_edge_list(path) -> Graph:
    """Parse a `u <ws> v` edge list with `#` comments into a Graph.

    Original ids are remapped to contiguous 0-based internal ids in order
    of first appearance; duplicate edges and self-loops are dropped.
    """
    path = Path(path)
    index: dict[int, int] = {}
    edges: set[tuple[int, int]] = set()
    with path.open() as fh:
        for ln, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            toks = stripped.split()
            if len(toks) != 2:
                raise ValueError(f"{path}: parse error at line {ln}: expected two ids")
            try:
                a, b = int(toks[0]), int(toks[1])
            except ValueError:
                raise ValueError(f"{path}: parse error at line {ln}: non-integer id") from None
            for orig in (a, b):
                if orig not in index:
                    index[orig] = len(index)
            if a == b:
                continue
            u, v = index[a], index[b]
            edges.add((min(u, v), max(u, v)))
    if not index:
        raise ValueError(f"{path}: empty graph")
    orig_ids = np.empty(len(index), dtype=np.int64)
    for orig, internal in index.items():
        orig_ids[internal] = orig
    return Graph.from_edges(len(index), edges, orig_ids=orig_ids)


def load_communities(path, graph: Graph) -> CommunitySet:
    """Load a community file, remapping original ids via the graph's map.

    Unknown node ids are dropped from their community; communities that end
    up empty are removed. Raises if nothing survives.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"community file not found: {path}")
    to_int = graph.orig_to_internal()
    comms = []
    for members in read_community_file(path):
        mapped = frozenset(to_int[m] for m in members if m in to_int)
        if mapped:
            comms.append(mapped)
    if not comms:
        raise ValueError(f"{path}: no usable communities")
    return CommunitySet(comms)


def load_features(path, graph: Graph) -> Graph:
    """Read `id f1 ... ff` lines and attach the matrix to a new Graph."""
    path = Path(path)
    to_int = graph.orig_to_internal()
    rows: dict[int, list[float]] = {}
    width = None
    with path.open() as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            try:
                orig = int(toks[0])
                vals = [float(t) for t in toks[1:]]
            except ValueError:
                raise ValueError(f"{path}: parse error at line {ln}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(f"{path}: line {ln}: expected {width} features")
            if orig in to_int:
                rows[to_int[orig]] = vals
    if width is None:
        raise ValueError(f"{path}: no feature rows")
    mat = np.zeros((graph.node_count, width))
    for internal, vals in rows.items():
        mat[internal] = vals
    return graph.with_features(mat)


# -- neighborhood extraction ----------------------------------------------------


def ego_hops(graph: Graph, center: int, k: int) -> dict[int, int]:
    """BFS hop distance (<= k) from center, center included at hop 0."""
    if not 0 <= center < graph.node_count:
        raise ValueError(f"invalid center node {center}")
    if k < 1:
        raise ValueError("k must be >= 1")
    hops = {center: 0}
    frontier = [center]
    for depth in range(1, k + 1):
        nxt = []
        for u in frontier:
            for v in graph.neighbors[u]:
                v = int(v)
                if v not in hops:
                    hops[v] = depth
                    nxt.append(v)
        frontier = nxt
    return hops


def k_ego_net(graph: Graph, center: int, k: int) -> Community:
    """All nodes within k hops of center (BFS), center included."""
    return frozenset(ego_hops(graph, center, k))


def ego_net_capped(graph: Graph, center: int, k: int, cap: int | None) -> Community:
    """k-ego net truncated to ``cap`` nodes, dropping farthest hops first,
    largest ids first within the cut hop."""
    hops = ego_hops(graph, center, k)
    if cap is None or len(hops) <= cap:
        return frozenset(hops)
    ranked = sorted(hops, key=lambda u: (hops[u], u))
    return frozenset(ranked[:cap])


def boundary(graph: Graph, community: Community, cap: int | None = None) -> Community:
    """Outer boundary: nodes outside the community with a neighbor inside.

    When larger than ``cap``, keeps the cap nodes with the most links into
    the community, breaking ties by smaller node id.
    """
    links: dict[int, int] = {}
    for u in community:
        for v in graph.neighbors[u]:
            v = int(v)
            if v not in community:
                links[v] = links.get(v, 0) + 1
    if cap is not None and len(links) > cap:
        kept = sorted(links, key=lambda v: (-links[v], v))[:cap]
        return frozenset(kept)
    return frozenset(links)


# -- dataset construction --------------------------------------------------------


def size_percentile(sizes, fraction: float) -> int:
    """Nearest-rank percentile of a size list (rank = floor(fraction * n))."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("percentile fraction must be in (0, 1]")
    ordered = sorted(sizes)
    rank = max(1, math.floor(fraction * len(ordered)))
    return ordered[rank - 1]


def preprocess(graph: Graph, comms: CommunitySet, percentile: float = 0.9,
               sample_count: int = 1000, seed: int = 0) -> tuple[Graph, CommunitySet]:
    """Restrict a labeled network to its community nodes and their boundaries.

    Drops communities with size above the ``percentile`` nearest-rank
    threshold, uniformly samples at most ``sample_count`` of the survivors,
    then returns the induced subgraph on the sampled communities' nodes plus
    their outer boundaries (ids remapped, original-id map composed).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    threshold = size_percentile([len(c) for c in comms.communities], percentile)
    kept = [c for c in comms.communities if len(c) <= threshold]
    if not kept:
        raise ValueError("no communities survive the size filter")
    rng = np.random.default_rng(seed)
    if sample_count < len(kept):
        chosen = sorted(rng.choice(len(kept), size=sample_count, replace=False).tolist())
        kept = [kept[i] for i in chosen]
    node_set: set[int] = set()
    for c in kept:
        node_set.update(c)
        node_set.update(boundary(graph, c))
    retained = sorted(node_set)
    remap = {old: new for new, old in enumerate(retained)}
    nbrs = [[remap[int(v)] for v in graph.neighbors[old] if int(v) in remap]
            for old in retained]
    raw = graph.raw_features[retained] if graph.raw_features is not None else None
    sub = Graph(nbrs, raw_features=raw, orig_ids=graph.orig_ids[retained])
    new_comms = [frozenset(remap[u] for u in c) for c in kept]
    return sub, CommunitySet(new_comms)


def build_hybrid(a: Graph, b: Graph, link_count: int, seed: int = 0) -> Graph:
    """Disjoint union of two graphs plus seeded random cross links.

    b's ids are offset by a.node_count; the ``link_count`` cross edges are
    sampled uniformly without duplicates, one endpoint per side.
    """
    if a.node_count == 0 or b.node_count == 0:
        raise ValueError("both graphs must be non-empty")
    if link_count > a.node_count * b.node_count:
        raise ValueError("link_count exceeds the number of possible cross pairs")
    offset = a.node_count
    edges = list(a.edge_set())
    edges += [(u + offset, v + offset) for u, v in b.edge_set()]
    rng = np.random.default_rng(seed)
    cross: set[tuple[int, int]] = set()
    while len(cross) < link_count:
        u = int(rng.integers(a.node_count))
        v = int(rng.integers(b.node_count)) + offset
        cross.add((u, v))
    edges += sorted(cross)
    if (a.raw_features is None) != (b.raw_features is None):
        raise ValueError("cannot mix featured and featureless graphs")
    raw = None
    if a.raw_features is not None:
        if a.raw_features.shape[1] != b.raw_features.shape[1]:
            raise ValueError("feature widths differ")
        raw = np.vstack([a.raw_features, b.raw_features])
    orig = np.concatenate([a.orig_ids, b.orig_ids + (a.orig_ids.max() + 1)])
    return Graph.from_edges(a.node_count + b.node_count, edges,
                            raw_features=raw, orig_ids=orig)


def synth_planted(n_comms: int, size_range: tuple[int, int], p_in: float,
                  p_out_links: int, seed: int = 0) -> tuple[Graph, CommunitySet]:
    """Planted-partition benchmark: dense disjoint groups, sparse cross links.

    Each group's internal edges appear with probability ``p_in`` (redrawn
    until the group is connected); ``p_out_links`` inter-group edges are then
    added uniformly. The groups are returned as ground-truth communities.
    """
    lo, hi = size_range
    if n_comms < 1 or lo < 3 or hi < lo:
        raise ValueError("need n_comms >= 1 and 3 <= lo <= hi")
    if not 0.0 < p_in <= 1.0:
        raise ValueError("p_in must be in (0, 1]")
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(lo, hi + 1)) for _ in range(n_comms)]
    groups = []
    start = 0
    for s in sizes:
        groups.append(list(range(start, start + s)))
        start += s
    n = start
    edges: set[tuple[int, int]] = set()
    for nodes in groups:
        for _ in range(10_000):
            local = _draw_group_edges(nodes, p_in, rng)
            if _connected(nodes, local):
                edges.update(local)
                break
        else:
            raise ValueError("could not draw a connected group; p_in too small")
    max_cross = sum(sizes[i] * sizes[j] for i in range(n_comms) for j in range(i + 1, n_comms))
    if p_out_links > max_cross:
        raise ValueError("p_out_links exceeds the number of possible inter-group pairs")
    group_of = np.empty(n, dtype=np.int64)
    for gi, nodes in enumerate(groups):
        group_of[nodes] = gi
    cross: set[tuple[int, int]] = set()
    while len(cross) < p_out_links:
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if group_of[u] == group_of[v]:
            continue
        cross.add((min(u, v), max(u, v)))
    edges.update(cross)
    graph = Graph.from_edges(n, edges)
    return graph, CommunitySet([frozenset(g) for g in groups])


def _draw_group_edges(nodes, p_in, rng) -> set[tuple[int, int]]:
    out = set()
    for i, u in enumerate(nodes):
        for v in nodes[i + 1:]:
            if p_in >= 1.0 or rng.random() < p_in:
                out.add((u, v))
    return out


def _connected(nodes, edges) -> bool:
    nbrs = {u: [] for u in nodes}
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        for v in nbrs[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


# -- writers ---------------------------------------------------------------------


def write_edge_list(path, graph: Graph) -> None:
    """Write `u <tab> v` lines in original ids, one per undirected edge."""
    with Path(path).open("w") as fh:
        for u, v in sorted(graph.edge_set()):
            fh.write(f"{graph.orig_ids[u]}\t{graph.orig_ids[v]}\n")


def write_communities(path, communities, graph: Graph | None = None) -> None:
    """Write one community per line; remaps to original ids when a graph is given."""
    with Path(path).open("w") as fh:
        for members in communities:
            if graph is not None:
                ids = sorted(int(graph.orig_ids[u]) for u in members)
            else:
                ids = sorted(members)
            fh.write(" ".join(str(i) for i in ids) + "\n")


def write_id_map(path, graph: Graph) -> None:
    """Persist the original-id <-> internal-id map as two-column text."""
    with Path(path).open("w") as fh:
        for internal, orig in enumerate(graph.orig_ids):
            fh.write(f"{orig}\t{internal}\n")
