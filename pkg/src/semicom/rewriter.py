"""Refinement of located communities by a learned rewriting agent.

An episode starts from a located community plus its (capped) outer
boundary. At every step one policy network scores current members for
exclusion and another scores boundary nodes for expansion, each over a
masked softmax whose action space includes an isolated all-zero virtual
node meaning STOP. After both actions apply, every node representation is
refreshed by one sum-aggregation graph pass and re-tagged with its new
membership indicator. Per-step rewards are pair-F1 differences against the
ground-truth community, and the agent trains by plain policy gradient on
the log-probability-weighted rewards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autograd import Adam, Array, Tape, glorot, load_arrays, save_arrays
from .graphs import Community, CommunitySet, Graph, boundary, ego_net_capped
from .locator import EncoderParams, node_embeddings
from .metrics import f1_pair

STOP = -1  # virtual-node action id


@dataclass
class MLP:
    w1: Array
    b1: Array
    w2: Array
    b2: Array

    def all(self) -> list[Array]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class AgentParams:
    """Rewriter weights: representation updater plus the two policy heads."""

    theta: Array  # (d+1) x d sum-aggregation updater
    phi: MLP      # exclude head, (d+1) -> hidden -> 1
    psi: MLP      # expand head

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    def all(self) -> list[Array]:
        return [self.theta, *self.phi.all(), *self.psi.all()]

    def save(self, path) -> None:
        named = {"theta": self.theta}
        for tag, mlp in (("phi", self.phi), ("psi", self.psi)):
            named[f"{tag}_w1"] = mlp.w1
            named[f"{tag}_b1"] = mlp.b1
            named[f"{tag}_w2"] = mlp.w2
            named[f"{tag}_b2"] = mlp.b2
        save_arrays(path, named)

    @classmethod
    def load(cls, path) -> "AgentParams":
        named = load_arrays(path)

        def mlp(tag):
            return MLP(*(Array(named[f"{tag}_{part}"]) for part in ("w1", "b1", "w2", "b2")))

        return cls(theta=Array(named["theta"]), phi=mlp("phi"), psi=mlp("psi"))


def init_agent(dim: int = 64, hidden: int = 32, seed: int = 0) -> AgentParams:
    rng = np.random.default_rng(seed)
    rep = dim + 1

    def bias(fan_in, n):
        # nonzero init keeps the all-zero virtual row off the ReLU kink
        limit = 1.0 / np.sqrt(fan_in)
        return Array(rng.uniform(-limit, limit, size=(1, n)))

    def head():
        return MLP(w1=glorot(rep, hidden, rng), b1=bias(rep, hidden),
                   w2=glorot(hidden, 1, rng), b2=bias(hidden, 1))

    return AgentParams(theta=glorot(rep, dim, rng), phi=head(), psi=head())


@dataclass
class EpisodeState:
    """Current community, boundary, and per-node representations.

    ``order`` lists the real nodes of C_t | boundary sorted ascending with
    the virtual node last; ``reps`` holds one row per entry, the final
    column being the membership indicator and the virtual row all zeros.
    """

    members: Community
    bound: Community
    order: tuple[int, ...]
    reps: Array
    tape: Tape
    exclude_done: bool = False
    expand_done: bool = False
    step: int = 1


def init_state(graph: Graph, community: Community, node_z, tape: Tape | None = None,
               boundary_cap: int = 10) -> EpisodeState:
    """Build step-1 representations: first-stage embedding plus indicator."""
    if not community:
        raise ValueError("cannot start an episode from an empty community")
    if tape is None:
        tape = Tape()
    bound = boundary(graph, community, cap=boundary_cap)
    real = sorted(community | bound)
    dim = len(node_z[real[0]])
    rows = np.zeros((len(real) + 1, dim + 1))
    for i, u in enumerate(real):
        rows[i, :dim] = node_z[u]
        rows[i, dim] = 1.0 if u in community else 0.0
    return EpisodeState(members=frozenset(community), bound=bound,
                        order=tuple(real) + (STOP,), reps=Array(rows), tape=tape)


def _head_logits(tape: Tape, reps: Array, head: MLP) -> Array:
    h = tape.relu(tape.apply_linear(reps, head.w1, head.b1))
    return tape.transpose(tape.apply_linear(h, head.w2, head.b2))


def _pick(tape: Tape, probs: Array, order, mode: str, rng, forced: int | None):
    if forced is not None:
        idx = order.index(forced)
    elif mode == "greedy":
        idx = int(np.argmax(probs.data[0]))
    elif mode == "sample":
        idx = int(rng.choice(len(order), p=probs.data[0]))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    lp = tape.log(tape.select(probs, 0, idx))
    return order[idx], lp


def step_policy(state: EpisodeState, params: AgentParams, mode: str = "sample",
                rng=None, size_cap: int | None = None, forced_pair=None):
    """Choose one exclude and one expand action (node id or STOP).

    A finished sub-policy emits STOP deterministically, as does exclude at
    community size 1 and expand at the size cap or an empty boundary; those
    forced stops carry no log-probability. Returns (a_ex, a_exp, lp_ex, lp_exp).
    """
    if state.exclude_done and state.expand_done:
        raise ValueError("episode already finished")
    tape = state.tape
    forced_ex = forced_pair[0] if forced_pair is not None else None
    forced_exp = forced_pair[1] if forced_pair is not None else None

    if state.exclude_done or len(state.members) <= 1:
        a_ex, lp_ex = STOP, None
    else:
        logits = _head_logits(tape, state.reps, params.phi)
        mask = [u in state.members for u in state.order[:-1]] + [True]
        probs = tape.masked_softmax(logits, mask)
        a_ex, lp_ex = _pick(tape, probs, state.order, mode, rng, forced_ex)

    at_cap = size_cap is not None and len(state.members) >= size_cap
    if state.expand_done or at_cap or not state.bound:
        a_exp, lp_exp = STOP, None
    else:
        logits = _head_logits(tape, state.reps, params.psi)
        mask = [u in state.bound for u in state.order[:-1]] + [True]
        probs = tape.masked_softmax(logits, mask)
        a_exp, lp_exp = _pick(tape, probs, state.order, mode, rng, forced_exp)
    return a_ex, a_exp, lp_ex, lp_exp


def apply_actions(graph: Graph, state: EpisodeState, a_ex: int, a_exp: int,
                  theta: Array, boundary_cap: int = 10) -> EpisodeState:
    """Update membership, recompute the boundary, refresh representations.

    STOP is a no-op on its side and latches that side's done flag. Unless
    both sides stopped, every surviving representation passes through one
    sum-aggregation layer over the induced subgraph on the new node set
    (newcomers enter with the virtual node's all-zero row) and gets its new
    membership indicator re-attached.
    """
    if a_ex != STOP and a_ex not in state.members:
        raise ValueError(f"exclude action {a_ex} not in the community")
    if a_exp != STOP and a_exp not in state.bound:
        raise ValueError(f"expand action {a_exp} not in the boundary")
    ex_done = state.exclude_done or a_ex == STOP
    exp_done = state.expand_done or a_exp == STOP
    if a_ex == STOP and a_exp == STOP:
        return replace(state, exclude_done=ex_done, expand_done=exp_done,
                       step=state.step + 1)
    members = set(state.members)
    if a_ex != STOP:
        members.discard(a_ex)
    if a_exp != STOP:
        members.add(a_exp)
    new_members = frozenset(members)
    new_bound = boundary(graph, new_members, cap=boundary_cap)
    real = sorted(new_members | new_bound)
    tape = state.tape
    old_pos = {u: i for i, u in enumerate(state.order)}
    virtual_row = len(state.order) - 1
    idx = [old_pos.get(u, virtual_row) for u in real] + [virtual_row]
    gathered = tape.gather_rows(state.reps, idx)
    pos = {u: i for i, u in enumerate(real)}
    adj = [[pos[int(v)] for v in graph.neighbors[u] if int(v) in pos] for u in real]
    adj.append([])  # virtual node stays isolated
    updated = tape.gin_layer(gathered, adj, theta)
    indicator = Array(np.array([[1.0 if u in new_members else 0.0] for u in real] + [[0.0]]))
    reps = tape.concat_cols([updated, indicator])
    return EpisodeState(members=new_members, bound=new_bound,
                        order=tuple(real) + (STOP,), reps=reps, tape=tape,
                        exclude_done=ex_done, expand_done=exp_done,
                        step=state.step + 1)


def reward(prev: Community, nxt: Community, truth: Community) -> float:
    """Pair-F1 difference brought by one transition."""
    if not truth:
        raise ValueError("reward needs a non-empty ground-truth community")
    return f1_pair(nxt, truth) - f1_pair(prev, truth)


@dataclass
class TrajectoryStep:
    a_exclude: int
    a_expand: int
    lp_exclude: Array | None
    lp_expand: Array | None
    r_exclude: float
    r_expand: float


@dataclass
class Trajectory:
    steps: list[TrajectoryStep]
    tape: Tape

    def total_return(self) -> float:
        return sum(s.r_exclude + s.r_expand for s in self.steps)


@dataclass
class TrainingSample:
    """A located-community stand-in: capped ego net, boundary, and its truth."""

    members: Community
    bound: Community
    truth: Community
    center: int


def rollout(graph: Graph, members: Community, node_z, params: AgentParams, *,
            truth: Community | None = None, mode: str = "sample",
            size_cap: int | None = None, boundary_cap: int = 10,
            step_cap: int | None = None, rng=None, tape: Tape | None = None,
            forced=None) -> tuple[Community, Trajectory]:
    """Run one episode; returns the final community and its trajectory.

    Rewards are computed only when ``truth`` is given: the exclude action is
    scored against the intermediate (post-exclude) set and the expand action
    against the set it produces from there, so the two sub-rewards of a step
    telescope to the step's total F1 change. ``forced`` replays a fixed
    action sequence (used by gradient checks).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if tape is None:
        tape = Tape()
    if step_cap is None:
        step_cap = max(size_cap or 0, 20)
    state = init_state(graph, members, node_z, tape=tape, boundary_cap=boundary_cap)
    steps: list[TrajectoryStep] = []
    while not (state.exclude_done and state.expand_done) and len(steps) < step_cap:
        forced_pair = None
        if forced is not None:
            if len(steps) >= len(forced):
                break
            forced_pair = forced[len(steps)]
        a_ex, a_exp, lp_ex, lp_exp = step_policy(state, params, mode, rng,
                                                 size_cap, forced_pair)
        r_ex = r_exp = 0.0
        if truth is not None:
            inter = state.members - {a_ex} if a_ex != STOP else state.members
            r_ex = reward(state.members, inter, truth)
            nxt = (inter | {a_exp}) if a_exp != STOP else inter
            r_exp = reward(inter, nxt, truth)
        state = apply_actions(graph, state, a_ex, a_exp, params.theta, boundary_cap)
        steps.append(TrajectoryStep(a_ex, a_exp, lp_ex, lp_exp, r_ex, r_exp))
    return state.members, Trajectory(steps, tape)


def episode_surrogate(traj: Trajectory) -> Array | None:
    """Negated policy-gradient objective of one trajectory, on its tape.

    Each action's log-probability is weighted by its return-to-go (the sum
    of all sub-rewards from that action onward, which telescopes to the F1
    still to be gained), so actions that enable later improvement get
    credit. Returns None when every action was a forced stop (nothing to
    differentiate).
    """
    tape = traj.tape
    total: Array | None = None
    future = 0.0
    weighted: list[tuple[Array, float]] = []
    for s in reversed(traj.steps):
        g_expand = s.r_expand + future
        g_exclude = s.r_exclude + g_expand
        if s.lp_expand is not None:
            weighted.append((s.lp_expand, g_expand))
        if s.lp_exclude is not None:
            weighted.append((s.lp_exclude, g_exclude))
        future = g_exclude
    for lp, g in weighted:
        term = tape.affine(lp, -g)
        total = term if total is None else tape.add(total, term)
    return total


def policy_update(trajectories, params: AgentParams, opt: Adam) -> AgentParams:
    """One ascent step from a batch of trajectories (REINFORCE via Adam)."""
    if not trajectories:
        raise ValueError("empty trajectory batch")
    targets = params.all()
    total: dict[Array, np.ndarray] = {}
    for traj in trajectories:
        loss = episode_surrogate(traj)
        if loss is None:
            continue
        grads = traj.tape.backward(loss, targets)
        for p in targets:
            g = grads[p]
            if p in total:
                total[p] += g
            else:
                total[p] = g
    opt.step(total)
    return params


def make_training_samples(graph: Graph, comms, k: int, count: int, seed=0,
                          size_cap: int | None = None,
                          boundary_cap: int = 10) -> list[TrainingSample]:
    """Seeded draws of (capped k-ego net of a community member, its truth)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    train = comms.train if isinstance(comms, CommunitySet) else list(comms)
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        truth = train[int(rng.integers(len(train)))]
        ordered = sorted(truth)
        u = ordered[int(rng.integers(len(ordered)))]
        ego = ego_net_capped(graph, u, k, size_cap)
        samples.append(TrainingSample(members=ego,
                                      bound=boundary(graph, ego, cap=boundary_cap),
                                      truth=truth, center=u))
    return samples


@dataclass
class RewriterHyper:
    lr: float = 1e-3
    epochs: int = 1200
    episodes_per_epoch: int = 20
    k: int = 2
    hidden: int = 32
    boundary_cap: int = 10
    step_cap: int | None = None
    seed: int = 0


def train_rewriter(graph: Graph, comms, encoder: EncoderParams,
                   hyper: RewriterHyper, on_epoch=None) -> AgentParams:
    """Policy-gradient training loop over sampled rewriting episodes."""
    train = comms.train if isinstance(comms, CommunitySet) else list(comms)
    if not train:
        raise ValueError("no training communities")
    size_cap = max(len(c) for c in train)
    agent = init_agent(encoder.dim, hyper.hidden, hyper.seed)
    opt = Adam(agent.all(), lr=hyper.lr)
    master = np.random.default_rng(hyper.seed)
    sample_seeds = master.integers(2**63, size=hyper.epochs)
    roll_seeds = master.integers(2**63, size=hyper.epochs * hyper.episodes_per_epoch)
    z_cache: dict[Community, dict[int, np.ndarray]] = {}
    for epoch in range(hyper.epochs):
        samples = make_training_samples(graph, train, hyper.k,
                                        hyper.episodes_per_epoch,
                                        seed=int(sample_seeds[epoch]),
                                        size_cap=size_cap,
                                        boundary_cap=hyper.boundary_cap)
        returns, lengths = [], []
        for i, sample in enumerate(samples):
            node_z = z_cache.get(sample.members)
            if node_z is None:
                node_z = node_embeddings(graph, sample.members | sample.bound, encoder)
                z_cache[sample.members] = node_z
            rng = np.random.default_rng(int(roll_seeds[epoch * hyper.episodes_per_epoch + i]))
            _, traj = rollout(graph, sample.members, node_z, agent,
                              truth=sample.truth, mode="sample", size_cap=size_cap,
                              boundary_cap=hyper.boundary_cap,
                              step_cap=hyper.step_cap, rng=rng)
            policy_update([traj], agent, opt)
            returns.append(traj.total_return())
            lengths.append(len(traj.steps))
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(returns)), float(np.mean(lengths)))
    return agent


def rewrite(graph: Graph, located: Community, encoder: EncoderParams,
            agent: AgentParams, size_cap: int | None = None,
            boundary_cap: int = 10, step_cap: int | None = None) -> Community:
    """Greedily refine one located community with a trained agent."""
    bound = boundary(graph, located, cap=boundary_cap)
    node_z = node_embeddings(graph, located | bound, encoder)
    final, _ = rollout(graph, located, node_z, agent, mode="greedy",
                       size_cap=size_cap, boundary_cap=boundary_cap,
                       step_cap=step_cap)
    return final
