"""Command-line orchestration of the detection pipeline.

Subcommands: ``pipeline`` (preprocess, train both stages, detect, score),
``train-locator``, ``train-rewriter``, ``detect``, ``eval``, ``synth``, and
``ablate``. Every stage failure aborts with a stage-tagged nonzero exit
status. Report paths write delimited output plus rendered figures; every
output directory carries a manifest naming the config hash and seeds.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import plots
from .config import RunConfig, config_hash, read_config, write_config
from .graphs import (
    CommunitySet,
    Graph,
    ego_net_capped,
    load_communities,
    load_edge_list,
    load_features,
    preprocess,
    read_community_file,
    synth_planted,
    write_communities,
    write_edge_list,
    write_id_map,
)
from .locator import (
    EncoderParams,
    LocatorHyper,
    encode_all_candidates,
    encode_community,
    match,
    match_threshold,
    train_locator,
)
from .metrics import filter_overlap, score_report
from .rewriter import AgentParams, RewriterHyper, rewrite, train_rewriter

log = logging.getLogger("semicom")

STAGES = ("config", "ingest", "preprocess", "locator-train", "candidates",
          "match", "rewriter-train", "rewrite", "filter", "report",
          "synth", "eval")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.exit_code = 10 + STAGES.index(stage)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# -- shared pipeline pieces -----------------------------------------------------


def _load_inputs(cfg: RunConfig) -> tuple[Graph, CommunitySet]:
    graph = load_edge_list(cfg.edges)
    if cfg.features:
        graph = load_features(cfg.features, graph)
    comms = load_communities(cfg.communities, graph)
    log.info("loaded %d nodes, %d edges, %d communities",
             graph.node_count, graph.edge_count(), len(comms.communities))
    return graph, comms


def _prepare(cfg: RunConfig) -> tuple[Graph, CommunitySet]:
    graph, comms = _stage("ingest", _load_inputs, cfg)

    def prep():
        g, c = graph, comms
        if cfg.preprocess:
            g, c = preprocess(g, c, percentile=cfg.percentile,
                              sample_count=cfg.sample_count, seed=cfg.seed)
            log.info("preprocessed to %d nodes, %d communities",
                     g.node_count, len(c.communities))
        return g, c.split(cfg.train_size, cfg.val_size)

    return _stage("preprocess", prep)


def _size_cap(comms: CommunitySet) -> int:
    return max(len(c) for c in comms.train)


def _locator_hyper(cfg: RunConfig) -> LocatorHyper:
    return LocatorHyper(dim=cfg.dim, k=cfg.k, margin=cfg.margin,
                        lr=cfg.locator_lr, batches_per_epoch=cfg.locator_batches,
                        pairs_per_batch=cfg.locator_pairs, epochs=cfg.locator_epochs,
                        dropout=cfg.dropout, seed=cfg.seed)


def _rewriter_hyper(cfg: RunConfig) -> RewriterHyper:
    return RewriterHyper(lr=cfg.rewriter_lr, epochs=cfg.rewriter_epochs,
                         episodes_per_epoch=cfg.rewriter_episodes, k=cfg.k,
                         boundary_cap=cfg.boundary_cap,
                         step_cap=cfg.step_cap or None, seed=cfg.seed)


def _train_locator_stage(cfg: RunConfig, out: Path, graph, comms) -> EncoderParams:
    def run():
        losses = []
        params = train_locator(graph, comms, _locator_hyper(cfg),
                               on_batch=lambda e, b, v: losses.append(v))
        params.save(out / "encoder.ckpt")
        with (out / "locator_loss.tsv").open("w") as fh:
            for i, v in enumerate(losses):
                fh.write(f"{i}\t{v:.6f}\n")
        plots.save_loss_curve(out / "locator_loss.png", losses)
        log.info("locator trained: %d batches, final loss %.4f", len(losses), losses[-1])
        return params

    return _stage("locator-train", run)


def _train_rewriter_stage(cfg: RunConfig, out: Path, graph, comms,
                          encoder: EncoderParams) -> AgentParams:
    def run():
        history = []
        agent = train_rewriter(graph, comms, encoder, _rewriter_hyper(cfg),
                               on_epoch=lambda e, r, l: history.append((e, r, l)))
        agent.save(out / "agent.ckpt")
        with (out / "rewriter_log.tsv").open("w") as fh:
            for e, r, l in history:
                fh.write(f"{e}\t{r:.6f}\t{l:.3f}\n")
        plots.save_return_curve(out / "rewriter_returns.png",
                                [r for _, r, _ in history], [l for _, _, l in history])
        log.info("rewriter trained: %d epochs, final mean return %.4f",
                 len(history), history[-1][1])
        return agent

    return _stage("rewriter-train", run)


def _pattern_counts(n_outputs: int, m: int) -> list[int]:
    base = n_outputs // m
    extra = n_outputs % m
    return [base + 1 if i < extra else base for i in range(m)]


def _locate_stage(cfg: RunConfig, out: Path, graph, comms,
                  encoder: EncoderParams):
    cap = _size_cap(comms)

    def candidates():
        return encode_all_candidates(graph, encoder, k=cfg.k, size_cap=cap,
                                     workers=cfg.workers)

    table = _stage("candidates", candidates)

    def run_match():
        patterns = np.vstack([encode_community(graph, c, encoder).data[0]
                              for c in comms.train])
        if cfg.eta >= 0:
            located = match_threshold(patterns, table, cfg.eta)
        else:
            n_out = cfg.n_outputs or 10 * len(comms.train)
            located = match(patterns, table, _pattern_counts(n_out, len(comms.train)))
        write_communities(out / "located.cmty", [l.members for l in located], graph)
        with (out / "located_matches.tsv").open("w") as fh:
            for l in located:
                fh.write(f"{l.pattern}\t{graph.orig_ids[l.center]}\t{l.distance:.6f}\n")
        log.info("located %d candidate communities", len(located))
        return located

    return table, _stage("match", run_match), cap


def _rewrite_stage(cfg: RunConfig, graph, encoder, agent, located, cap):
    def run():
        return [rewrite(graph, l.members, encoder, agent, size_cap=cap,
                        boundary_cap=cfg.boundary_cap,
                        step_cap=cfg.step_cap or None) for l in located]

    return _stage("rewrite", run)


def _report_stage(cfg: RunConfig, out: Path, graph, comms, preds) -> None:
    def run():
        if cfg.filter_overlap:
            reference = comms.train + comms.val
            before = len(preds)
            kept = filter_overlap(preds, reference, cfg.filter_threshold)
            log.info("overlap filter kept %d of %d predictions", len(kept), before)
        else:
            kept = list(preds)
        write_communities(out / "predictions.cmty", kept, graph)
        if comms.test:
            rep = score_report(kept, comms.test)
            (out / "scores.tsv").write_text(rep.as_tsv())
            (out / "scores.txt").write_text(rep.as_text())
            plots.save_metric_bars(out / "scores.png",
                                   {k: v for k, v in rep.rows()})
            for name, value in rep.rows():
                print(f"{name}\t{value:.6f}")

    _stage("report", run)


def _write_manifest(cfg: RunConfig, out: Path, command: str) -> None:
    artifacts = sorted(p.name for p in out.iterdir()
                       if p.is_file() and p.name != "manifest.txt")
    lines = [f"command = {command}",
             f"config_hash = {config_hash(cfg)}",
             f"seed = {cfg.seed}",
             "artifacts = " + ", ".join(artifacts)]
    (out / "manifest.txt").write_text("".join(line + "\n" for line in lines))
    (out / "config_used.txt").write_text(write_config(cfg))


def _load_config(args) -> tuple[RunConfig, Path]:
    def run():
        cfg = read_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.out is not None:
            cfg.out_dir = args.out
        cfg.validate()
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return cfg, out

    return _stage("config", run)


# -- commands ---------------------------------------------------------------------


def cmd_pipeline(args) -> int:
    cfg, out = _load_config(args)
    graph, comms = _prepare(cfg)
    write_id_map(out / "idmap.tsv", graph)
    encoder = _train_locator_stage(cfg, out, graph, comms)
    _, located, cap = _locate_stage(cfg, out, graph, comms, encoder)
    agent = _train_rewriter_stage(cfg, out, graph, comms, encoder)
    preds = _rewrite_stage(cfg, graph, encoder, agent, located, cap)
    _report_stage(cfg, out, graph, comms, preds)
    _write_manifest(cfg, out, "pipeline")
    return 0


def cmd_train_locator(args) -> int:
    cfg, out = _load_config(args)
    graph, comms = _prepare(cfg)
    write_id_map(out / "idmap.tsv", graph)
    _train_locator_stage(cfg, out, graph, comms)
    _write_manifest(cfg, out, "train-locator")
    return 0


def cmd_train_rewriter(args) -> int:
    cfg, out = _load_config(args)
    graph, comms = _prepare(cfg)
    encoder = _stage("rewriter-train",
                     lambda: EncoderParams.load(out / "encoder.ckpt"))
    _train_rewriter_stage(cfg, out, graph, comms, encoder)
    _write_manifest(cfg, out, "train-rewriter")
    return 0


def cmd_detect(args) -> int:
    cfg, out = _load_config(args)
    graph, comms = _prepare(cfg)
    encoder = _stage("match", lambda: EncoderParams.load(out / "encoder.ckpt"))
    agent = _stage("rewrite", lambda: AgentParams.load(out / "agent.ckpt"))
    _, located, cap = _locate_stage(cfg, out, graph, comms, encoder)
    preds = _rewrite_stage(cfg, graph, encoder, agent, located, cap)
    _report_stage(cfg, out, graph, comms, preds)
    _write_manifest(cfg, out, "detect")
    return 0


def cmd_eval(args) -> int:
    def run():
        preds = read_community_file(args.predictions)
        truths = read_community_file(args.truths)
        if not preds or not truths:
            raise ValueError("empty prediction or truth file")
        return score_report(preds, truths)

    rep = _stage("eval", run)
    for name, value in rep.rows():
        print(f"{name}\t{value:.6f}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.tsv").write_text(rep.as_tsv())
        (out / "scores.txt").write_text(rep.as_text())
        with (out / "best_matches.tsv").open("w") as fh:
            for pred_i, truth_j, value in rep.best_matches:
                fh.write(f"{pred_i}\t{truth_j}\t{value:.6f}\n")
        plots.save_metric_bars(out / "scores.png", {k: v for k, v in rep.rows()})
    return 0


def cmd_synth(args) -> int:
    def run():
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        graph, comms = synth_planted(args.n_comms, (args.size_lo, args.size_hi),
                                     p_in=args.p_in, p_out_links=args.cross_links,
                                     seed=args.seed)
        write_edge_list(out / "edges.txt", graph)
        write_communities(out / "comms.txt", comms.communities, graph)
        manifest = (f"command = synth\nn_comms = {args.n_comms}\n"
                    f"size_lo = {args.size_lo}\nsize_hi = {args.size_hi}\n"
                    f"p_in = {args.p_in!r}\ncross_links = {args.cross_links}\n"
                    f"seed = {args.seed}\n"
                    f"nodes = {graph.node_count}\nedges = {graph.edge_count()}\n")
        (out / "manifest.txt").write_text(manifest)
        log.info("wrote %d nodes, %d edges, %d communities to %s",
                 graph.node_count, graph.edge_count(), len(comms.communities), out)

    _stage("synth", run)
    return 0


def cmd_ablate(args) -> int:
    cfg, out = _load_config(args)
    graph, comms = _prepare(cfg)
    if not comms.test:
        raise StageError("report", ValueError("ablation needs a non-empty test split"))
    encoder = _train_locator_stage(cfg, out, graph, comms)
    _, located, cap = _locate_stage(cfg, out, graph, comms, encoder)
    agent = _train_rewriter_stage(cfg, out, graph, comms, encoder)
    rewritten = _rewrite_stage(cfg, graph, encoder, agent, located, cap)

    def run_report():
        rng = np.random.default_rng(cfg.seed)
        centers = rng.choice(graph.node_count, size=min(len(located), graph.node_count),
                             replace=False)
        random_preds = [ego_net_capped(graph, int(u), cfg.k, cap) for u in centers]
        rows = {}
        for name, preds in (("random-k-ego", random_preds),
                            ("locator", [l.members for l in located]),
                            ("locator+rewriter", rewritten)):
            rep = score_report(preds, comms.test)
            rows[name] = {"f1": rep.f1, "jaccard": rep.jaccard, "onmi": rep.onmi}
        with (out / "ablation.tsv").open("w") as fh:
            fh.write("variant\tf1\tjaccard\tonmi\n")
            for name, r in rows.items():
                fh.write(f"{name}\t{r['f1']:.6f}\t{r['jaccard']:.6f}\t{r['onmi']:.6f}\n")
                print(f"{name}\t{r['f1']:.6f}\t{r['jaccard']:.6f}\t{r['onmi']:.6f}")
        plots.save_ablation_bars(out / "ablation.png", rows)

    _stage("report", run_report)
    _write_manifest(cfg, out, "ablate")
    return 0


# -- entry point -------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--workers", type=int, default=None, help="override worker count")
    p.add_argument("--out", default=None, help="override output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semicom",
        description="Semi-supervised community detection: locate and rewrite.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("pipeline", cmd_pipeline),
                     ("train-locator", cmd_train_locator),
                     ("train-rewriter", cmd_train_rewriter),
                     ("detect", cmd_detect),
                     ("ablate", cmd_ablate)):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="score a prediction file against ground truth")
    p.add_argument("predictions")
    p.add_argument("truths")
    p.add_argument("--out", default=None, help="directory for report files")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synth", help="generate a planted-partition benchmark")
    p.add_argument("--n-comms", type=int, required=True)
    p.add_argument("--size-lo", type=int, default=6)
    p.add_argument("--size-hi", type=int, default=12)
    p.add_argument("--p-in", type=float, default=0.6)
    p.add_argument("--cross-links", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SEMICOM_LOG", "info").lower()
    logging.basicConfig(
        level={"debug": logging.DEBUG, "info": logging.INFO,
               "quiet": logging.ERROR}.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as err:
        print(f"semicom: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
