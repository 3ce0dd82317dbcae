"""Command-line pipeline: one subcommand per stage, JSON artifacts between
stages, deterministic given config + seed.

    synth -> ingest -> embed -> train -> fuse -> partition -> tune -> eval
                                                                   -> project

Every failure maps to a single-line ``error: <Type>: <detail>`` on stderr
and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import artifacts, fusion, metrics, states, synthgen, tasks, telemetry
from .config import RunConfig, load_config
from .embedding import embed_corpus
from .errors import BadArtifact, BadConfig, EmptyInput, RslicerError


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_scenario(cfg: RunConfig) -> synthgen.ScenarioConfig:
    if cfg.scenario_file:
        return artifacts.scenario_from_json(
            artifacts.load(cfg.scenario_file, "scenario"))
    return synthgen.default_scenario(cfg.synth_regimes, cfg.synth_faults, cfg.seed)


def cmd_synth(args) -> None:
    cfg = load_config(args.config, args.seed)
    scenario = _load_scenario(cfg)
    metrics_rows, spans, logs, labels = synthgen.generate(scenario)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "metrics.csv"),
                telemetry.write_metrics_csv(metrics_rows))
    _write_text(os.path.join(args.out, "traces.jsonl"),
                telemetry.write_traces_jsonl(spans))
    _write_text(os.path.join(args.out, "logs.jsonl"),
                telemetry.write_logs_jsonl(logs))
    _write_text(os.path.join(args.out, "labels.jsonl"),
                telemetry.write_fault_labels_jsonl(labels))
    artifacts.save(os.path.join(args.out, "scenario.json"),
                   artifacts.scenario_to_json(scenario))
    print(f"synth: {len(metrics_rows)} metrics, {len(spans)} spans, "
          f"{len(logs)} logs, {len(labels)} faults -> {args.out}")


def cmd_ingest(args) -> None:
    cfg = load_config(args.config, args.seed)
    metric_rows = telemetry.parse_metrics(_read(args.metrics))
    spans = telemetry.parse_traces(_read(args.traces))
    logs = telemetry.parse_logs(_read(args.logs))
    faults = telemetry.parse_fault_labels(_read(args.labels)) if args.labels else None
    corpus = telemetry.build_windows(metric_rows, spans, logs,
                                     cfg.window_len_us, cfg.stride_us,
                                     labels=faults)
    artifacts.save(args.out, artifacts.corpus_to_json(corpus))
    print(f"ingest: {len(corpus.observations)} windows -> {args.out}")


def cmd_embed(args) -> None:
    cfg = load_config(args.config, args.seed)
    corpus = artifacts.corpus_from_json(artifacts.load(args.corpus, "corpus"))
    embedded = embed_corpus(cfg.backbone(), corpus.observations)
    dim = int(embedded[0].e_m.shape[0]) if embedded else cfg.backbone_dim
    artifacts.save(args.out, artifacts.embeddings_to_json(
        embedded, cfg.backbone_kind, dim))
    print(f"embed: {len(embedded)} windows, dim {dim} -> {args.out}")


def cmd_train(args) -> None:
    cfg = load_config(args.config, args.seed)
    embedded = artifacts.embeddings_from_json(
        artifacts.load(args.embeddings, "embeddings"))
    train_cfg = cfg.train_config()
    params, trace = fusion.train(embedded, train_cfg)
    for i, loss in enumerate(trace):
        print(f"epoch {i + 1}/{len(trace)} loss {loss:.6f}")
    artifacts.save(args.out, artifacts.model_to_json(params, train_cfg))
    print(f"train: model -> {args.out}")


def cmd_fuse(args) -> None:
    embedded = artifacts.embeddings_from_json(
        artifacts.load(args.embeddings, "embeddings"))
    params, _ = artifacts.model_from_json(
        artifacts.load(args.model, "fusion-model"))
    fused = fusion.fuse_corpus(params, embedded)
    artifacts.save(args.out, artifacts.states_to_json(fused))
    print(f"fuse: {len(fused)} state embeddings -> {args.out}")


def cmd_partition(args) -> None:
    cfg = load_config(args.config, args.seed)
    fused = artifacts.states_from_json(artifacts.load(args.states, "states"))
    part = states.partition(fused, cfg.k_min, cfg.k_max, cfg.seed)
    artifacts.save(args.out, artifacts.partition_to_json(part))
    chosen = " ".join(f"K={k}:{v:.4f}" for k, v in sorted(part.silhouette_by_k.items()))
    print(f"partition: chose K={part.k} ({chosen}) -> {args.out}")


def _ordered(fused: list) -> list:
    return sorted(fused, key=lambda s: (s.window.start, s.window_id))


def _split_point(n: int, fraction: float) -> int:
    return int(fraction * n)


def cmd_tune(args) -> None:
    cfg = load_config(args.config, args.seed)
    fused = _ordered(artifacts.states_from_json(artifacts.load(args.states, "states")))
    part = artifacts.partition_from_json(artifacts.load(args.partition, "partition"))
    n_train = _split_point(len(fused), cfg.split_fraction)
    train_states = fused[:n_train]
    if args.task == "ad":
        bundle = tasks.tune_anomaly(part, train_states, cfg.min_samples,
                                    cfg.quantile_q)
    elif args.task == "loc":
        if not args.model:
            raise BadConfig("tune --task loc requires --model FUSION_MODEL")
        params, _ = artifacts.model_from_json(
            artifacts.load(args.model, "fusion-model"))
        corpus = artifacts.corpus_from_json(artifacts.load(args.corpus, "corpus"))
        bundle = tasks.tune_localizer(cfg.backbone(), params, part, train_states,
                                      corpus.observations, cfg.min_samples)
    else:
        bundle = tasks.tune_classifier(part, train_states, cfg.min_samples)
    artifacts.save(args.out, artifacts.bundle_to_json(bundle, part))
    print(f"tune[{args.task}]: fitted on {n_train} windows -> {args.out}")


def _stamp_truth(fused: list, faults: list) -> list:
    stamped = []
    for s in fused:
        label = telemetry._label_for_window(s.window, faults, None)
        stamped.append(fusion.SystemStateEmbedding(s.vector, s.window, label))
    return stamped


def cmd_eval(args) -> None:
    cfg = load_config(args.config, args.seed)
    bundle, part = artifacts.bundle_from_json(artifacts.load(args.bundle, "task-bundle"))
    fused = _ordered(artifacts.states_from_json(artifacts.load(args.states, "states")))
    faults = telemetry.parse_fault_labels(_read(args.truth))
    test = _stamp_truth(fused[_split_point(len(fused), cfg.split_fraction):], faults)
    if not test:
        raise EmptyInput("no test windows after the split")

    if args.task == "ad":
        preds = [tasks.score_anomaly(bundle, part, s)[1] for s in test]
        truth = [s.label.anomalous for s in test]
        precision, recall, f1 = metrics.precision_recall_f1(preds, truth)
        tp = sum(1 for p, t in zip(preds, truth) if p and t)
        fp = sum(1 for p, t in zip(preds, truth) if p and not t)
        fn = sum(1 for p, t in zip(preds, truth) if not p and t)
        report = metrics.EvalReport("ad", precision, recall, f1, None,
                                    tp, fp, fn, len(test))
    else:
        queries = [s for s in test if s.label.anomalous]
        if not queries:
            raise EmptyInput("no anomalous windows in the test slice")
        if args.task == "loc":
            if not args.model:
                raise BadConfig("eval --task loc requires --model FUSION_MODEL")
            params, _ = artifacts.model_from_json(
                artifacts.load(args.model, "fusion-model"))
            corpus = artifacts.corpus_from_json(artifacts.load(args.corpus, "corpus"))
            by_id = {o.window.window_id: o for o in corpus.observations}
            ranked_lists, truths = [], []
            for s in queries:
                obs = by_id.get(s.window_id)
                if obs is None:
                    raise BadArtifact(f"window {s.window_id} missing from corpus")
                ranked = tasks.localize(bundle, part, obs, cfg.backbone(), params)
                ranked_lists.append([c for c, _ in ranked])
                truths.append(s.label.root_cause_component)
        else:
            ranked_lists, truths = [], []
            for s in queries:
                ranked = tasks.classify_ranked(bundle, part, s)
                ranked_lists.append([t for t, _ in ranked])
                truths.append(s.label.failure_type)
        mrr_val = metrics.mrr(ranked_lists, truths)
        correct = sum(1 for r, t in zip(ranked_lists, truths) if r and r[0] == t)
        wrong = len(queries) - correct
        # Single-label ranking: micro precision/recall/F1 all equal top-1
        # accuracy.
        acc = correct / len(queries)
        report = metrics.EvalReport(args.task, acc, acc, acc, mrr_val,
                                    correct, wrong, wrong, len(queries))
    artifacts.save(args.out, artifacts.report_to_json(report))
    print(report.row())


def cmd_project(args) -> None:
    fused = artifacts.states_from_json(artifacts.load(args.states, "states"))
    points, explained = metrics.project_2d(fused)
    part = None
    if args.partition:
        part = artifacts.partition_from_json(artifacts.load(args.partition, "partition"))
    lines = ["x,y,window_id,label,cluster"]
    for s, (x, y) in zip(fused, points):
        label = "" if s.label is None else str(int(s.label.anomalous))
        cluster = "" if part is None else str(states.assign(part, s))
        lines.append(f"{x!r},{y!r},{s.window_id},{label},{cluster}")
    _write_text(args.out, "\n".join(lines) + "\n")
    print(f"project: {len(points)} points, explained variance "
          f"({explained[0]:.4f}, {explained[1]:.4f}) -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rslicer",
        description="System-state embeddings from metrics/traces/logs, with "
                    "state-conditioned failure management tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        for flag, (required, help_text) in flags.items():
            p.add_argument(f"--{flag}", required=required, help=help_text)
        if "config" in flags:
            p.add_argument("--seed", type=int, default=None,
                           help="override the configured seed")
        p.set_defaults(fn=fn)
        return p

    add("synth", cmd_synth,
        config=(False, "run config file"),
        out=(True, "output directory for telemetry + label files"))
    add("ingest", cmd_ingest,
        metrics=(True, "metrics CSV"), traces=(True, "spans JSONL"),
        logs=(True, "logs JSONL"), labels=(False, "fault-interval JSONL"),
        config=(False, "run config file"), out=(True, "corpus JSON path"))
    add("embed", cmd_embed,
        corpus=(True, "corpus JSON"), config=(False, "run config file"),
        out=(True, "embeddings JSON path"))
    add("train", cmd_train,
        embeddings=(True, "embeddings JSON"), config=(False, "run config file"),
        out=(True, "fusion model JSON path"))
    add("fuse", cmd_fuse,
        embeddings=(True, "embeddings JSON"), model=(True, "fusion model JSON"),
        out=(True, "state embeddings JSON path"))
    add("partition", cmd_partition,
        states=(True, "state embeddings JSON"), config=(False, "run config file"),
        out=(True, "partition JSON path"))
    tune_p = add("tune", cmd_tune,
                 states=(True, "state embeddings JSON"),
                 partition=(True, "partition JSON"),
                 corpus=(False, "corpus JSON (needed for loc)"),
                 model=(False, "fusion model JSON (needed for loc)"),
                 config=(False, "run config file"),
                 out=(True, "bundle JSON path"))
    tune_p.add_argument("--task", required=True, choices=("ad", "loc", "cls"))
    eval_p = add("eval", cmd_eval,
                 bundle=(True, "task bundle JSON"),
                 states=(True, "state embeddings JSON"),
                 corpus=(False, "corpus JSON (needed for loc)"),
                 model=(False, "fusion model JSON (needed for loc)"),
                 truth=(True, "fault-interval JSONL ground truth"),
                 config=(False, "run config file"),
                 out=(True, "report JSON path"))
    eval_p.add_argument("--task", required=True, choices=("ad", "loc", "cls"))
    add("project", cmd_project,
        states=(True, "state embeddings JSON"),
        partition=(False, "partition JSON for the cluster column"),
        out=(True, "points CSV path"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except RslicerError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: OSError: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
