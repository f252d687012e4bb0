"""Community order embedding: encoder, margin training, candidate matching.

Communities are encoded by summing per-node vectors produced by an input
linear transform, k graph-convolution layers over the community's induced
subgraph, and an output transform over the concatenated layer outputs. The
embedding space is trained so a subgraph's vector sits elementwise below
its supergraph's; the hinge penalty measures violations, and candidates
(the capped k-ego net of every node) are matched to training communities
by embedding distance.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autograd import Adam, Array, Tape, glorot, load_arrays, save_arrays
from .graphs import Community, CommunitySet, Graph, ego_net_capped


@dataclass
class EncoderParams:
    """Trainable weights: input transform, k conv layers, output transform."""

    w_in: Array
    gcn: list[Array]
    w_out: Array

    @property
    def k(self) -> int:
        return len(self.gcn)

    @property
    def dim(self) -> int:
        return self.w_out.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.w_in.shape[0]

    def all(self) -> list[Array]:
        return [self.w_in, *self.gcn, self.w_out]

    def save(self, path) -> None:
        named = {"w_in": self.w_in, "w_out": self.w_out}
        for i, w in enumerate(self.gcn):
            named[f"gcn_{i}"] = w
        save_arrays(path, named)

    @classmethod
    def load(cls, path) -> "EncoderParams":
        named = load_arrays(path)
        gcn = []
        while f"gcn_{len(gcn)}" in named:
            gcn.append(Array(named[f"gcn_{len(gcn)}"]))
        return cls(w_in=Array(named["w_in"]), gcn=gcn, w_out=Array(named["w_out"]))


def init_encoder(feat_dim: int, dim: int, k: int, seed: int = 0) -> EncoderParams:
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    rng = np.random.default_rng(seed)
    return EncoderParams(
        w_in=glorot(feat_dim, dim, rng),
        gcn=[glorot(dim, dim, rng) for _ in range(k)],
        w_out=glorot((k + 1) * dim, dim, rng),
    )


def _forward_nodes(tape: Tape, graph: Graph, nodes: list[int], params: EncoderParams,
                   training: bool = False, dropout_rate: float = 0.0, rng=None) -> Array:
    """Per-node embeddings over the induced subgraph on ``nodes`` (sorted)."""
    pos = {u: i for i, u in enumerate(nodes)}
    adj = [[pos[int(v)] for v in graph.neighbors[u] if int(v) in pos] for u in nodes]
    feats = Array(graph.augmented_features[nodes])
    z0 = tape.matmul(feats, params.w_in)
    z0 = tape.dropout(z0, dropout_rate, training, rng)
    layers = [z0]
    h = z0
    for w in params.gcn:
        h = tape.gcn_layer(h, adj, w)
        layers.append(h)
    return tape.matmul(tape.concat_cols(layers), params.w_out)


def encode_community(graph: Graph, community: Community, params: EncoderParams,
                     tape: Tape | None = None, training: bool = False,
                     dropout_rate: float = 0.0, rng=None) -> Array:
    """Sum-pooled community embedding (1 x d) over its induced subgraph."""
    if not community:
        raise ValueError("cannot encode an empty community")
    if tape is None:
        tape = Tape()
    nodes = sorted(community)
    z = _forward_nodes(tape, graph, nodes, params, training, dropout_rate, rng)
    return tape.sum_rows(z, range(len(nodes)))


def node_embeddings(graph: Graph, nodes, params: EncoderParams) -> dict[int, np.ndarray]:
    """Inference-mode per-node vectors over the induced subgraph on ``nodes``."""
    ordered = sorted(nodes)
    z = _forward_nodes(Tape(), graph, ordered, params)
    return {u: z.data[i].copy() for i, u in enumerate(ordered)}


def order_penalty(z_a, z_b) -> float:
    """Squared hinge violation of z_a sitting elementwise below z_b."""
    va = np.asarray(z_a.data if isinstance(z_a, Array) else z_a, dtype=np.float64).ravel()
    vb = np.asarray(z_b.data if isinstance(z_b, Array) else z_b, dtype=np.float64).ravel()
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch {va.shape} vs {vb.shape}")
    d = np.clip(va - vb, 0.0, None)
    return float((d * d).sum())


def penalty_node(tape: Tape, z_a: Array, z_b: Array) -> Array:
    """Tape-recorded order penalty, differentiable through both embeddings."""
    if z_a.shape != z_b.shape:
        raise ValueError(f"dimension mismatch {z_a.shape} vs {z_b.shape}")
    r = tape.relu(tape.sub(z_a, z_b))
    return tape.sum_all(tape.mul(r, r))


def margin_loss(tape: Tape, positives, negatives, alpha: float) -> Array:
    """Sum of positive penalties plus hinged negative penalties.

    ``positives`` and ``negatives`` are sequences of (z_sub, z_super) /
    (z_a, z_b) embedding pairs already recorded on ``tape``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not positives and not negatives:
        raise ValueError("empty batch")
    total: Array | None = None
    for za, zb in positives:
        term = penalty_node(tape, za, zb)
        total = term if total is None else tape.add(total, term)
    for za, zb in negatives:
        e = penalty_node(tape, za, zb)
        term = tape.relu(tape.affine(e, -1.0, alpha))
        total = term if total is None else tape.add(total, term)
    return total


@dataclass
class PairBatch:
    """Positive (sub, super) pairs and verified non-nested negative pairs."""

    positives: list[tuple[Community, Community]]
    negatives: list[tuple[Community, Community]]


def _grow_connected(graph: Graph, within: Community, size: int, rng) -> Community:
    """Randomized BFS growth of a connected subgraph inside ``within``."""
    nodes = sorted(within)
    members = {nodes[int(rng.integers(len(nodes)))]}
    frontier = set()
    for u in members:
        frontier.update(int(v) for v in graph.neighbors[u] if int(v) in within)
    frontier -= members
    while len(members) < size and frontier:
        options = sorted(frontier)
        pick = options[int(rng.integers(len(options)))]
        members.add(pick)
        frontier.update(int(v) for v in graph.neighbors[pick] if int(v) in within)
        frontier -= members
    return frozenset(members)


def sample_pairs(graph: Graph, train, per_batch: int, seed=0) -> PairBatch:
    """Draw ``per_batch`` positive and negative community pairs.

    Positives grow a connected subgraph of a training community, then a
    proper connected subgraph of that. Negatives grow subgraphs of two
    different training communities and keep them only when the first is
    verified not to be contained in the second.
    """
    comms = train.train if isinstance(train, CommunitySet) else list(train)
    rng = np.random.default_rng(seed)
    eligible = [c for c in comms if len(c) >= 2]
    if not eligible:
        raise ValueError("positive pairs need a training community of size >= 2")
    positives = []
    guard = 0
    while len(positives) < per_batch:
        if (guard := guard + 1) > 200 * per_batch:
            raise ValueError("could not sample positive pairs")
        ck = eligible[int(rng.integers(len(eligible)))]
        super_size = int(rng.integers(2, len(ck) + 1))
        cj = _grow_connected(graph, ck, super_size, rng)
        if len(cj) < 2:
            continue
        sub_size = int(rng.integers(1, len(cj)))
        ci = _grow_connected(graph, cj, sub_size, rng)
        positives.append((ci, cj))
    if len(comms) < 2:
        raise ValueError("negative pairs need at least two training communities")
    negatives = []
    guard = 0
    while len(negatives) < per_batch:
        if (guard := guard + 1) > 200 * per_batch:
            raise ValueError("no valid negatives constructible")
        p = int(rng.integers(len(comms)))
        q = int(rng.integers(len(comms)))
        if p == q:
            continue
        cp, cq = comms[p], comms[q]
        ci = _grow_connected(graph, cp, int(rng.integers(1, len(cp) + 1)), rng)
        cj = _grow_connected(graph, cq, int(rng.integers(1, len(cq) + 1)), rng)
        if ci <= cj:
            continue
        negatives.append((ci, cj))
    return PairBatch(positives, negatives)


@dataclass
class LocatorHyper:
    dim: int = 64
    k: int = 2
    margin: float = 0.4
    lr: float = 1e-4
    batches_per_epoch: int = 32
    pairs_per_batch: int = 50
    epochs: int = 2
    dropout: float = 0.2
    seed: int = 0


def train_locator(graph: Graph, comms, hyper: LocatorHyper,
                  on_batch=None) -> EncoderParams:
    """Margin training loop: sample pairs, encode, hinge loss, Adam step."""
    train = comms.train if isinstance(comms, CommunitySet) else list(comms)
    if not train:
        raise ValueError("no training communities")
    feat_dim = graph.augmented_features.shape[1]
    params = init_encoder(feat_dim, hyper.dim, hyper.k, hyper.seed)
    opt = Adam(params.all(), lr=hyper.lr)
    master = np.random.default_rng(hyper.seed)
    n_batches = hyper.epochs * hyper.batches_per_epoch
    batch_seeds = master.integers(2**63, size=n_batches)
    drop_seeds = master.integers(2**63, size=n_batches)
    step = 0
    for epoch in range(hyper.epochs):
        for b in range(hyper.batches_per_epoch):
            batch = sample_pairs(graph, train, hyper.pairs_per_batch,
                                 seed=int(batch_seeds[step]))
            tape = Tape()
            drop_rng = np.random.default_rng(int(drop_seeds[step]))

            def enc(c):
                return encode_community(graph, c, params, tape=tape, training=True,
                                        dropout_rate=hyper.dropout, rng=drop_rng)

            pos = [(enc(a), enc(b_)) for a, b_ in batch.positives]
            neg = [(enc(a), enc(b_)) for a, b_ in batch.negatives]
            loss = margin_loss(tape, pos, neg, hyper.margin)
            grads = tape.backward(loss, params.all())
            opt.step(grads)
            if on_batch is not None:
                on_batch(epoch, b, float(loss.data[0, 0]))
            step += 1
    return params


@dataclass
class CandidateTable:
    """Embedding and member set of every node's capped k-ego candidate."""

    embeddings: np.ndarray  # |V| x d
    communities: list[Community]  # index = center node


@dataclass
class LocatedCommunity:
    pattern: int
    center: int
    distance: float
    members: Community


def _encode_range(graph: Graph, params: EncoderParams, k: int,
                  size_cap: int | None, lo: int, hi: int):
    embs = np.empty((hi - lo, params.dim))
    comms = []
    for u in range(lo, hi):
        ego = ego_net_capped(graph, u, k, size_cap)
        embs[u - lo] = encode_community(graph, ego, params).data[0]
        comms.append(ego)
    return embs, comms


def encode_all_candidates(graph: Graph, params: EncoderParams, k: int,
                          size_cap: int | None = None, workers: int = 1) -> CandidateTable:
    """Embed the capped k-ego net of every node, in node-id order."""
    n = graph.node_count
    if workers <= 1 or n < 64:
        embs, comms = _encode_range(graph, params, k, size_cap, 0, n)
        return CandidateTable(embs, comms)
    bounds = np.linspace(0, n, workers + 1, dtype=int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_encode_range,
                              *zip(*[(graph, params, k, size_cap, lo, hi)
                                     for lo, hi in chunks])))
    embs = np.vstack([p[0] for p in parts])
    comms = [c for p in parts for c in p[1]]
    return CandidateTable(embs, comms)


def _pattern_distances(pattern: np.ndarray, table: CandidateTable,
                       metric: str) -> np.ndarray:
    if metric == "euclidean":
        diff = table.embeddings - pattern
        return (diff * diff).sum(axis=1)
    if metric == "order":
        # hinge violation of the candidate containing the pattern
        d = np.clip(pattern - table.embeddings, 0.0, None)
        return (d * d).sum(axis=1)
    raise ValueError(f"unknown metric {metric!r}")


def match(pattern_embs: np.ndarray, table: CandidateTable,
          n_per_pattern, metric: str = "euclidean") -> list[LocatedCommunity]:
    """Closest candidates per pattern, deduplicated across patterns.

    Ties break toward the smaller center id; a candidate claimed by an
    earlier pattern is skipped and the next-nearest one is taken instead.
    """
    m = pattern_embs.shape[0]
    counts = [n_per_pattern] * m if np.isscalar(n_per_pattern) else list(n_per_pattern)
    if len(counts) != m or any(c < 1 for c in counts):
        raise ValueError("need a positive candidate count per pattern")
    n = len(table.communities)
    if sum(counts) > n:
        raise ValueError(f"requested {sum(counts)} candidates from {n} nodes")
    claimed: set[int] = set()
    out = []
    for pi in range(m):
        d2 = _pattern_distances(pattern_embs[pi], table, metric)
        order = np.lexsort((np.arange(n), d2))
        taken = 0
        for c in order:
            c = int(c)
            if c in claimed:
                continue
            claimed.add(c)
            out.append(LocatedCommunity(pattern=pi, center=c,
                                        distance=float(np.sqrt(d2[c])),
                                        members=table.communities[c]))
            taken += 1
            if taken == counts[pi]:
                break
    return out


def match_threshold(pattern_embs: np.ndarray, table: CandidateTable, eta: float,
                    metric: str = "euclidean") -> list[LocatedCommunity]:
    """All candidates within distance ``eta`` of their closest pattern,
    sorted ascending by that distance (center id breaks ties)."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    m = pattern_embs.shape[0]
    n = len(table.communities)
    d2 = np.empty((m, n))
    for pi in range(m):
        d2[pi] = _pattern_distances(pattern_embs[pi], table, metric)
    best_pattern = d2.argmin(axis=0)
    best = np.sqrt(d2[best_pattern, np.arange(n)])
    keep = [c for c in range(n) if best[c] <= eta]
    keep.sort(key=lambda c: (best[c], c))
    return [LocatedCommunity(pattern=int(best_pattern[c]), center=c,
                             distance=float(best[c]), members=table.communities[c])
            for c in keep]
