"""Semi-supervised community detection toolkit.

Given a network and a handful of labeled communities, locates similar
communities by matching order-embedded candidate subgraphs against the
labeled ones, then refines each located community with a policy-gradient
rewriting agent that absorbs boundary nodes and drops members.
"""

from .autograd import Adam, Array, Tape, load_arrays, save_arrays
from .graphs import (
    Community,
    CommunitySet,
    Graph,
    augment_features,
    boundary,
    build_hybrid,
    ego_net_capped,
    k_ego_net,
    load_communities,
    load_edge_list,
    load_features,
    preprocess,
    synth_planted,
)
from .locator import (
    CandidateTable,
    EncoderParams,
    LocatorHyper,
    encode_all_candidates,
    encode_community,
    init_encoder,
    margin_loss,
    match,
    match_threshold,
    order_penalty,
    sample_pairs,
    train_locator,
)
from .metrics import (
    ScoreReport,
    bimatch,
    f1_pair,
    filter_overlap,
    jaccard_pair,
    onmi,
    score_report,
)
from .rewriter import (
    STOP,
    AgentParams,
    RewriterHyper,
    init_agent,
    make_training_samples,
    policy_update,
    reward,
    rewrite,
    rollout,
    train_rewriter,
)

__version__ = "0.1.0"
