#!/usr/bin/env python3

#
# Created: Oct 2026
# License: Apache license
#

import argparse
import logging
import os
import sys

import torch

from loglab.config import AppConfig
from loglab.constants import ExitCodes, MiscAppDefaults
from loglab.errors import ConfigError, DataError, NumericError, TrainingDivergedError
from loglab.evaluation import evaluate_against_corpus, evaluate_labels, read_scores, write_metrics
from loglab.ingest import CorpusLoader, generate_synthetic, write_csv_corpus, write_manifest
from loglab.parse import ParsedCorpus, TemplateMiner, parse_corpus, write_parsed_corpus, write_template_table
from loglab.pumodel import LogLabTrainer, labels_by_index, save_checkpoint, score_lines, write_scores
from loglab.rca import (
    WindowClusterer,
    rank_all_windows,
    rebalance,
    target_sizes,
    vectorize_windows,
    write_clusters,
    write_plan,
    write_ranked_causes,
)
from loglab.stats import StatsCollector
from loglab.taxonomy import AnomalyScorer, classify, split_from_truth, write_per_line_scores, write_taxonomy_report
from loglab.weaklabel import (
    WeakLabel,
    WindowSide,
    assign_pu_labels,
    failures_from_manifest,
    failures_from_truth,
    read_failures,
    write_failures,
    write_weak_labels,
)

logger = logging.getLogger(__name__)

COMMANDS = ["parse", "taxonomy", "label", "rca", "generate", "evaluate"]
COMMON_DEFAULTS = {
    "config": MiscAppDefaults.CONFIG_FILE,
    "output_dir": None,
    "seed": None,
    "threads": None,
    "verbose": False,
}


# =======================================================================================================
# MAIN HELPERS
# =======================================================================================================


def parse_command_line(argv: list[str] | None = None):
    """Parses the command line and returns the configuration as dictionary object."""
    # options accepted both before and after the command name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c",
        "--config",
        help=f"YAML file specifying the software configuration. Defaults to '{MiscAppDefaults.CONFIG_FILE}'",
        default=argparse.SUPPRESS,
    )
    common.add_argument("-o", "--output-dir", help="Directory receiving all outputs", default=argparse.SUPPRESS)
    common.add_argument("--seed", help="Seed of every stochastic stage", type=int, default=argparse.SUPPRESS)
    common.add_argument(
        "--threads", help="Cap on the torch intra-op threads", type=int, default=argparse.SUPPRESS
    )
    common.add_argument("-v", "--verbose", help="Be verbose.", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        description="Toolkit to mine log templates, classify log anomalies, weak-label log lines from failure "
        "time windows with a PU-learning attention encoder and group failure windows by root cause.",
        parents=[common],
    )
    parser.add_argument(
        "-V",
        "--version",
        help="Print version and exit",
        action="store_true",
        default=False,
    )
    subparsers = parser.add_subparsers(dest="command")
    subparsers.add_parser("parse", parents=[common], help="Mine templates and extract attributes")
    p = subparsers.add_parser("taxonomy", parents=[common], help="Classify the abnormal lines by anomaly type")
    p.add_argument("--per-line", help="Also export the scores of every line as JSON", action="store_true")
    subparsers.add_parser("label", parents=[common], help="Weak-label, train, assign labels and evaluate")
    subparsers.add_parser("rca", parents=[common], help="Cluster failure windows and rank root-cause lines")
    subparsers.add_parser("generate", parents=[common], help="Generate a synthetic corpus")
    p = subparsers.add_parser("evaluate", parents=[common], help="Evaluate a score export against the truth")
    p.add_argument("--scores", help="Score file 'index,z_norm,label' to evaluate", required=True)

    if "COLUMNS" not in os.environ:
        os.environ["COLUMNS"] = "120"  # avoid too many line wraps
    args = parser.parse_args(argv)

    if args.version:
        cfg = AppConfig()
        print(f"Version: {cfg.app_version}")
        sys.exit(ExitCodes.SUCCESS)
    if args.command is None:
        parser.error(f"a command is required, one of {COMMANDS}")

    # options given neither before nor after the command
    for name, default in COMMON_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    return args


def setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO, format=MiscAppDefaults.LOG_FORMAT, force=True
    )


def output_path(cfg: AppConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


def load_corpus(cfg: AppConfig, stats: StatsCollector):
    loader = stats.track(
        CorpusLoader(
            timestamp_field=cfg.timestamp_field,
            source_field=cfg.source_field,
            content_field=cfg.content_field,
            head=cfg.head,
        )
    )
    messages = loader.load(cfg.dataset_path, cfg.dataset_format)
    if loader.rejects:
        loader.write_rejects(output_path(cfg, "rejects.csv"), cfg.provenance_header)
    return messages


def parse_messages(cfg: AppConfig, messages, stats: StatsCollector) -> ParsedCorpus:
    miner = stats.track(TemplateMiner(cfg.similarity_threshold, cfg.parser_depth, cfg.parser_max_children))
    return parse_corpus(messages, miner)


def fit_model(cfg: AppConfig, dataset, parsed: ParsedCorpus, stats: StatsCollector, name: str):
    trainer = stats.track(LogLabTrainer(cfg.model_config))
    try:
        return trainer.fit(dataset, parsed.sequences)
    except TrainingDivergedError as e:
        if e.last_good_state is not None:
            path = output_path(cfg, f"{name}.diverged.pt")
            torch.save({"epoch": e.epoch, **e.last_good_state}, path)
            logger.error(f"Parameters of the last good epoch saved into {path}")
        raise


# =======================================================================================================
# COMMANDS
# =======================================================================================================


def cmd_parse(cfg: AppConfig, args, stats: StatsCollector):
    messages = load_corpus(cfg, stats)
    parsed = parse_messages(cfg, messages, stats)
    write_template_table(parsed.templates, output_path(cfg, "templates.tsv"), cfg.provenance_header)
    write_parsed_corpus(parsed, output_path(cfg, "parsed.csv"), cfg.provenance_header)


def cmd_taxonomy(cfg: AppConfig, args, stats: StatsCollector):
    messages = load_corpus(cfg, stats)
    parsed = parse_messages(cfg, messages, stats)
    scorer = stats.track(
        AnomalyScorer(
            parsed,
            split_from_truth(messages),
            context_before=cfg.context_before,
            context_after=cfg.context_after,
            attribute_scope=cfg.attribute_scope,
        )
    )
    abnormal_scores = scorer.score_abnormal()
    reports = [classify(abnormal_scores, threshold) for threshold in cfg.taxonomy_thresholds]
    for r in reports:
        summary = ", ".join(f"{t}={r.percentage(t):.1f}%" for t in list(r.counts) + ["unclassified"])
        print(f"Threshold {r.threshold}: {summary} of {r.n_abnormal} abnormal lines")
    write_taxonomy_report(reports, output_path(cfg, "taxonomy_report.csv"), cfg.provenance_header)
    if args.per_line:
        write_per_line_scores(scorer.score_all(), output_path(cfg, "taxonomy_scores.json"), cfg.provenance())


def _failures(cfg: AppConfig, messages):
    if cfg.failures_path is not None:
        return read_failures(cfg.failures_path)
    if any(m.truth is None for m in messages):
        raise DataError("No failure file is configured and the corpus has no ground truth to derive failures from")
    return failures_from_truth(messages)


def cmd_label(cfg: AppConfig, args, stats: StatsCollector):
    messages = load_corpus(cfg, stats)
    parsed = parse_messages(cfg, messages, stats)
    failures = _failures(cfg, messages)
    has_truth = all(m.truth is not None for m in messages)

    for delta in cfg.weaklabel_deltas_ms:
        dataset = assign_pu_labels(messages, failures, delta, WindowSide.SYMMETRIC)
        write_weak_labels(dataset, messages, output_path(cfg, f"weak_labels_d{delta}.csv"), cfg.provenance_header)

        model = fit_model(cfg, dataset, parsed, stats, f"model_d{delta}")
        save_checkpoint(model, output_path(cfg, f"model_d{delta}.pt"), cfg.provenance())
        scores = score_lines(model, parsed.sequences)
        write_scores(scores, output_path(cfg, f"scores_d{delta}.csv"), cfg.provenance_header)

        if not has_truth:
            logger.warning(f"The corpus has no ground truth: evaluation skipped for delta={delta}ms")
            continue
        report = evaluate_labels([m.truth for m in messages], labels_by_index(scores, messages))
        write_metrics(
            report,
            output_path(cfg, f"metrics_d{delta}.json"),
            cfg.provenance(),
            extra={"delta_ms": delta, "q": model.q, "threshold": model.threshold},
        )
        print(f"delta={delta}ms: precision={report.precision:.4f} recall={report.recall:.4f} f1={report.f1:.4f}")


def cmd_rca(cfg: AppConfig, args, stats: StatsCollector):
    messages = load_corpus(cfg, stats)
    parsed = parse_messages(cfg, messages, stats)
    failures = _failures(cfg, messages)
    if not failures:
        raise DataError("No failure window: nothing to analyze")

    dataset = assign_pu_labels(messages, failures, cfg.rca_delta_ms, WindowSide(cfg.rca_window_side))
    vectors = vectorize_windows(dataset, messages, cfg.rca_binary_vectors)
    clustering = stats.track(WindowClusterer(cfg.rca_distance_threshold)).cluster(vectors, dataset)
    plan = target_sizes(clustering)
    write_clusters(clustering, output_path(cfg, "clusters.csv"), cfg.provenance_header)
    write_plan(plan, output_path(cfg, "plan.csv"), cfg.provenance_header)

    balanced = rebalance(dataset, plan, cfg.seed)
    model = fit_model(cfg, balanced, parsed, stats, "model_rca")
    unknown = sorted({pos for pos, lbl in zip(dataset.lines, dataset.labels) if lbl == WeakLabel.U})
    scores = score_lines(model, [parsed.sequences[pos] for pos in unknown])
    ranking = rank_all_windows(scores, dataset, messages, cfg.rca_top_n)
    write_ranked_causes(ranking, dataset, clustering, output_path(cfg, "ranked_causes.json"), cfg.provenance())
    print(f"{len(dataset.windows)} failure windows grouped into {clustering.n_clusters} root-cause clusters")


def cmd_generate(cfg: AppConfig, args, stats: StatsCollector):
    messages, manifest = generate_synthetic(cfg.synthetic_spec())
    write_csv_corpus(messages, output_path(cfg, "corpus.csv"), cfg.provenance_header)
    write_manifest(manifest, output_path(cfg, "manifest.csv"), cfg.provenance_header)
    if manifest.incidents:
        write_failures(failures_from_manifest(manifest), output_path(cfg, "failures.csv"), cfg.provenance_header)
    print(f"Generated {len(messages)} lines with {len(manifest)} anomalies into {cfg.output_dir}")


def cmd_evaluate(cfg: AppConfig, args, stats: StatsCollector):
    messages = load_corpus(cfg, stats)
    report = evaluate_against_corpus(messages, read_scores(args.scores))
    write_metrics(report, output_path(cfg, "evaluation_metrics.json"), cfg.provenance())
    print(f"precision={report.precision:.4f} recall={report.recall:.4f} f1={report.f1:.4f} flags={list(report.flags)}")


COMMAND_HANDLERS = {
    "parse": cmd_parse,
    "taxonomy": cmd_taxonomy,
    "label": cmd_label,
    "rca": cmd_rca,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def run(argv: list[str] | None = None) -> int:
    args = parse_command_line(argv)

    cfg = AppConfig()
    print(f"{MiscAppDefaults.THIS_APP_NAME} version {cfg.app_version} starting")

    if not cfg.load(args.config):
        return ExitCodes.CONFIG_ERROR  # invalid config file... abort with failure exit code

    try:
        cfg.merge_options_from_env_vars()
    except ConfigError as e:
        print(f"Error: {e}")
        return ExitCodes.CONFIG_ERROR
    cfg.merge_options_from_cli(args)
    setup_logging(cfg.verbose)
    cfg.print_config_summary()

    torch.set_num_threads(cfg.threads)
    stats_collector = StatsCollector(args.command)

    exit_code = ExitCodes.SUCCESS
    try:
        cfg.validate_for(args.command, [args.scores] if args.command == "evaluate" else None)
        os.makedirs(cfg.output_dir, exist_ok=True)
        COMMAND_HANDLERS[args.command](cfg, args, stats_collector)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        exit_code = ExitCodes.CONFIG_ERROR
    except DataError as e:
        logger.error(f"Data error: {e}")
        exit_code = ExitCodes.DATA_ERROR
    except NumericError as e:
        logger.error(f"Numeric failure: {e}")
        exit_code = ExitCodes.NUMERIC_ERROR

    stats_collector.print_stats()
    print(f"Exiting with exit code {exit_code}...")
    return exit_code


def main():
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("Stopping due to CTRL+C")


# =======================================================================================================
# MAIN
# =======================================================================================================

if __name__ == "__main__":
    main()
