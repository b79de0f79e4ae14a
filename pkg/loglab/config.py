#!/usr/bin/env python3

import hashlib
import json
import logging
import os
from dataclasses import asdict
from importlib.metadata import PackageNotFoundError, version

import yaml
from schema import And, Optional, Or, Regex, Schema, SchemaError, Use

from loglab.constants import (
    MiscAppDefaults,
    ParserDefaults,
    RcaDefaults,
    SyntheticDefaults,
    TaxonomyDefaults,
    WeakLabelDefaults,
)
from loglab.errors import ConfigError
from loglab.ingest import FORMATS, CauseSpec, SyntheticSpec, TemplateSpec
from loglab.pumodel import ModelConfig

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)

# commands reading the dataset section
DATASET_COMMANDS = ["parse", "taxonomy", "label", "rca", "evaluate"]


# =======================================================================================================
# AppConfig
# =======================================================================================================


class AppConfig:
    """
    This class represents the configuration of this application.
    It contains helpers to read the YAML config file plus helpers to receive configurations
    from CLI options and from environment variables.

    Values missing in the config file are filled with their defaults; all default constants
    are stored in constants.py
    """

    def __init__(self):
        self.config = None

        # config options related to CLI options / env vars; None means "not overridden"
        self.verbose = False
        self.output_dir_override = None
        self.seed_override = None
        self.threads_override = None

        # technically speaking the version is not an "app config" but centralizing it here is handy
        try:
            self.app_version = str(version(MiscAppDefaults.THIS_APP_NAME))
        except PackageNotFoundError:
            # this happens e.g. when running unit tests without installing the wheel of this project
            self.app_version = "N/A"

        positive_int = And(int, lambda n: n > 0)
        non_negative_int = And(int, lambda n: n >= 0)
        fraction = And(Use(float), lambda x: 0.0 <= x <= 1.0)
        self.config_file_schema = Schema(
            {
                Optional("dataset"): {
                    "path": str,
                    Optional("format"): Or(*FORMATS),
                    Optional("timestamp_field"): positive_int,
                    Optional("source_field"): Or(None, non_negative_int),
                    Optional("content_field"): positive_int,
                    Optional("head"): non_negative_int,
                    # CSV 'timestamp_ms,tag'; without it failures come from the ground truth
                    Optional("failures"): str,
                },
                Optional("output_dir"): str,
                Optional("seed"): int,
                Optional("threads"): positive_int,
                Optional("parser"): {
                    Optional("similarity_threshold"): And(Use(float), lambda x: 0.0 < x <= 1.0),
                    Optional("depth"): And(int, lambda n: n >= 3),
                    Optional("max_children"): positive_int,
                },
                Optional("taxonomy"): {
                    Optional("context_before"): non_negative_int,
                    Optional("context_after"): non_negative_int,
                    Optional("thresholds"): [And(Use(float), lambda x: 0.0 < x <= 1.0)],
                    Optional("attribute_scope"): Or(*TaxonomyDefaults.ALLOWED_ATTRIBUTE_SCOPES),
                },
                Optional("weaklabel"): {
                    Optional("deltas_ms"): [positive_int],
                },
                Optional("model"): {
                    Optional("max_len"): int,
                    Optional("embed_dim"): int,
                    Optional("hidden_dim"): int,
                    Optional("n_layers"): int,
                    Optional("n_heads"): int,
                    Optional("dropout_rate"): Use(float),
                    Optional("batch_size"): int,
                    Optional("epochs"): int,
                    # YAML 1.1 reads '1e-4' as a string
                    Optional("learning_rate"): And(Use(float), lambda x: x > 0),
                    Optional("weight_decay"): And(Use(float), lambda x: x >= 0),
                    Optional("decision_threshold_mode"): Regex(r"^(crossover|fixed:.+)$"),
                },
                Optional("rca"): {
                    Optional("delta_ms"): positive_int,
                    Optional("window_side"): Or(*WeakLabelDefaults.ALLOWED_WINDOW_SIDES),
                    Optional("distance_threshold"): And(Use(float), lambda x: x > 0),
                    Optional("binary_vectors"): bool,
                    Optional("top_n"): positive_int,
                },
                Optional("synthetic"): {
                    Optional("n_lines"): non_negative_int,
                    Optional("anomaly_rate"): fraction,
                    Optional("mix"): {
                        Optional("template"): fraction,
                        Optional("attribute"): fraction,
                        Optional("contextual"): fraction,
                    },
                    Optional("base_period_ms"): And(Use(float), lambda x: x > 0),
                    Optional("n_causes"): And(int, lambda n: 0 <= n <= len(SyntheticDefaults.CAUSES)),
                    Optional("incidents_per_cause"): non_negative_int,
                    Optional("burst_len"): positive_int,
                },
            }
        )

    def load(self, cfg_yaml: str) -> bool:
        print(f"Loading configuration file {cfg_yaml}")
        try:
            with open(cfg_yaml, "r") as file:
                self.config = yaml.safe_load(file)
        except FileNotFoundError:
            print(f"Error: configuration file '{cfg_yaml}' not found.")
            return False
        except yaml.YAMLError as e:
            print(f"Error parsing YAML config file '{cfg_yaml}': {e}")
            return False

        # an empty file means "all defaults"
        if self.config is None:
            self.config = {}

        # validate the config against its schema:
        try:
            self.config = self.config_file_schema.validate(self.config)
        except SchemaError as e:
            print("Failed YAML config file validation. Error follows.")
            print(e)
            return False

        # cross-field checks the schema cannot express
        try:
            if self.context_before + self.context_after < 1:
                raise ValueError("taxonomy.context_before + taxonomy.context_after must be at least 1")
            if not self.taxonomy_thresholds:
                raise ValueError("taxonomy.thresholds must list at least one threshold")
            if not self.weaklabel_deltas_ms:
                raise ValueError("weaklabel.deltas_ms must list at least one window half-width")
            mix = self.synthetic_mix
            if abs(sum(mix.values()) - 1.0) > SyntheticDefaults.MIX_TOLERANCE:
                raise ValueError(f"synthetic.mix fractions must sum to 1, got {mix}")
            # builds and validates the model section
            self.model_config
        except (ValueError, ConfigError) as e:
            print(f"Error in YAML config file '{cfg_yaml}': {e}")
            return False

        print("Successfully loaded configuration")
        return True

    def merge_options_from_cli(self, args):
        # merge CLI options into the configuration object:
        self.verbose = self.verbose or args.verbose
        if getattr(args, "output_dir", None) is not None:
            self.output_dir_override = args.output_dir
        if getattr(args, "seed", None) is not None:
            self.seed_override = args.seed
        if getattr(args, "threads", None) is not None:
            self.threads_override = args.threads

    def merge_options_from_env_vars(self):
        # merge env vars into the configuration object:
        if os.environ.get("VERBOSE", None) is not None:
            self.verbose = True
        if os.environ.get("LOGLAB_OUTPUT_DIR", None) is not None:
            self.output_dir_override = os.environ.get("LOGLAB_OUTPUT_DIR")
        try:
            if os.environ.get("LOGLAB_SEED", None) is not None:
                self.seed_override = int(os.environ.get("LOGLAB_SEED"))
            if os.environ.get("LOGLAB_THREADS", None) is not None:
                self.threads_override = int(os.environ.get("LOGLAB_THREADS"))
        except ValueError as e:
            raise ConfigError(f"Invalid integer in environment variable: {e}")

    def validate_for(self, command: str, extra_inputs: list[str] | None = None):
        """Checks that every input path the command reads exists, before any heavy computation starts."""
        if command in DATASET_COMMANDS:
            if self.dataset_path is None:
                raise ConfigError(f"Command '{command}' needs the 'dataset.path' configuration key")
            if not os.path.isfile(self.dataset_path):
                raise ConfigError(f"Input file '{self.dataset_path}' not found")
        if command in ["label", "rca"] and self.failures_path is not None:
            if not os.path.isfile(self.failures_path):
                raise ConfigError(f"Failure file '{self.failures_path}' not found")
        for path in extra_inputs or []:
            if not os.path.isfile(path):
                raise ConfigError(f"Input file '{path}' not found")

    def effective_config(self) -> dict:
        """All settings after defaults and overrides; the output directory is not part of it."""
        return {
            "dataset": {
                "path": self.dataset_path,
                "format": self.dataset_format,
                "timestamp_field": self.timestamp_field,
                "source_field": self.source_field,
                "content_field": self.content_field,
                "head": self.head,
                "failures": self.failures_path,
            },
            "seed": self.seed,
            "threads": self.threads,
            "parser": {
                "similarity_threshold": self.similarity_threshold,
                "depth": self.parser_depth,
                "max_children": self.parser_max_children,
            },
            "taxonomy": {
                "context_before": self.context_before,
                "context_after": self.context_after,
                "thresholds": self.taxonomy_thresholds,
                "attribute_scope": self.attribute_scope,
            },
            "weaklabel": {"deltas_ms": self.weaklabel_deltas_ms},
            "model": asdict(self.model_config),
            "rca": {
                "delta_ms": self.rca_delta_ms,
                "window_side": self.rca_window_side,
                "distance_threshold": self.rca_distance_threshold,
                "binary_vectors": self.rca_binary_vectors,
                "top_n": self.rca_top_n,
            },
            "synthetic": {
                "n_lines": self._get("synthetic", "n_lines", SyntheticDefaults.N_LINES),
                "anomaly_rate": self._get("synthetic", "anomaly_rate", SyntheticDefaults.ANOMALY_RATE),
                "mix": self.synthetic_mix,
                "base_period_ms": self._get("synthetic", "base_period_ms", SyntheticDefaults.BASE_PERIOD_MS),
                "n_causes": self._get("synthetic", "n_causes", SyntheticDefaults.N_CAUSES),
                "incidents_per_cause": self._get(
                    "synthetic", "incidents_per_cause", SyntheticDefaults.INCIDENTS_PER_CAUSE
                ),
                "burst_len": self._get("synthetic", "burst_len", SyntheticDefaults.BURST_LEN),
            },
        }

    @property
    def config_digest(self) -> str:
        canonical = json.dumps(self.effective_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def provenance(self) -> dict:
        return {
            "tool": MiscAppDefaults.THIS_APP_NAME,
            "version": self.app_version,
            "config": self.config_digest[:12],
            "seed": self.seed,
        }

    @property
    def provenance_header(self) -> str:
        p = self.provenance()
        return f"# {p['tool']} version={p['version']} config={p['config']} seed={p['seed']}"

    def print_config_summary(self):
        print("Config summary:")
        print("** DATASET")
        print(f"   Path: {self.dataset_path} (format: {self.dataset_format})")
        if self.dataset_format == "supercomputer":
            print(
                f"   Fields: timestamp={self.timestamp_field} source={self.source_field} content={self.content_field}"
            )
        print(f"   Head: {self.head if self.head else 'all lines'}")
        print(f"   Failures: {self.failures_path if self.failures_path else 'from ground truth'}")
        print("** PARSER")
        print(f"   Similarity threshold: {self.similarity_threshold}, tree depth: {self.parser_depth}")
        print("** TAXONOMY")
        print(f"   Context boundaries: a={self.context_before} b={self.context_after}")
        print(f"   Thresholds: {self.taxonomy_thresholds} (attribute scope: {self.attribute_scope})")
        print("** WEAK LABELS")
        print(f"   Window half-widths: {self.weaklabel_deltas_ms} ms")
        print("** MODEL")
        for k, v in asdict(self.model_config).items():
            print(f"   {k}: {v}")
        print("** RCA")
        print(f"   Window: {self.rca_delta_ms} ms ({self.rca_window_side})")
        print(f"   Distance threshold: {self.rca_distance_threshold}, binary vectors: {self.rca_binary_vectors}")
        print(f"   Top-n: {self.rca_top_n}")
        print("** MISC:")
        print(f"   Output dir: {self.output_dir}")
        print(f"   Seed: {self.seed}, threads: {self.threads}")

    def _get(self, section: str, key: str, default):
        if self.config is None:
            return default
        try:
            return self.config[section][key]
        except KeyError:
            # in this case the section or the key is completely missing
            return default

    #
    # DATASET
    #

    @property
    def dataset_path(self) -> str:
        return self._get("dataset", "path", None)  # no meaningful default value

    @property
    def dataset_format(self) -> str:
        return self._get("dataset", "format", "csv")

    @property
    def timestamp_field(self) -> int:
        return self._get("dataset", "timestamp_field", 1)

    @property
    def source_field(self) -> int | None:
        return self._get("dataset", "source_field", 3)

    @property
    def content_field(self) -> int:
        return self._get("dataset", "content_field", self.timestamp_field + 1)

    @property
    def head(self) -> int:
        return self._get("dataset", "head", 0)

    @property
    def failures_path(self) -> str | None:
        return self._get("dataset", "failures", None)

    #
    # PARSER / TAXONOMY / WEAK LABELS
    #

    @property
    def similarity_threshold(self) -> float:
        return self._get("parser", "similarity_threshold", ParserDefaults.SIMILARITY_THRESHOLD)

    @property
    def parser_depth(self) -> int:
        return self._get("parser", "depth", ParserDefaults.TREE_DEPTH)

    @property
    def parser_max_children(self) -> int:
        return self._get("parser", "max_children", ParserDefaults.MAX_CHILDREN)

    @property
    def context_before(self) -> int:
        return self._get("taxonomy", "context_before", TaxonomyDefaults.CONTEXT_BEFORE)

    @property
    def context_after(self) -> int:
        return self._get("taxonomy", "context_after", TaxonomyDefaults.CONTEXT_AFTER)

    @property
    def taxonomy_thresholds(self) -> list[float]:
        return list(self._get("taxonomy", "thresholds", TaxonomyDefaults.THRESHOLDS))

    @property
    def attribute_scope(self) -> str:
        return self._get("taxonomy", "attribute_scope", TaxonomyDefaults.ATTRIBUTE_SCOPE)

    @property
    def weaklabel_deltas_ms(self) -> list[int]:
        return list(self._get("weaklabel", "deltas_ms", WeakLabelDefaults.DELTAS_MS))

    #
    # MODEL
    #

    @property
    def model_config(self) -> ModelConfig:
        """Raises ConfigError on inconsistent model settings."""
        section = dict(self.config.get("model", {})) if self.config else {}
        return ModelConfig(seed=self.seed, **section)

    #
    # RCA
    #

    @property
    def rca_delta_ms(self) -> int:
        return self._get("rca", "delta_ms", RcaDefaults.DELTA_MS)

    @property
    def rca_window_side(self) -> str:
        return self._get("rca", "window_side", RcaDefaults.WINDOW_SIDE)

    @property
    def rca_distance_threshold(self) -> float:
        return self._get("rca", "distance_threshold", RcaDefaults.DISTANCE_THRESHOLD)

    @property
    def rca_binary_vectors(self) -> bool:
        return self._get("rca", "binary_vectors", RcaDefaults.BINARY_VECTORS)

    @property
    def rca_top_n(self) -> int:
        return self._get("rca", "top_n", RcaDefaults.TOP_N)

    #
    # SYNTHETIC
    #

    @property
    def synthetic_mix(self) -> dict[str, float]:
        mix = self._get("synthetic", "mix", None)
        if mix is None:
            return dict(SyntheticDefaults.MIX)
        return {k: float(mix.get(k, 0.0)) for k in TaxonomyDefaults.TYPES}

    def synthetic_spec(self) -> SyntheticSpec:
        n_causes = self._get("synthetic", "n_causes", SyntheticDefaults.N_CAUSES)
        return SyntheticSpec(
            n_lines=self._get("synthetic", "n_lines", SyntheticDefaults.N_LINES),
            vocab=tuple(TemplateSpec.from_dict(d) for d in SyntheticDefaults.NORMAL_VOCAB),
            anomaly_vocab=tuple(TemplateSpec.from_dict(d) for d in SyntheticDefaults.ANOMALY_VOCAB),
            anomaly_rate=self._get("synthetic", "anomaly_rate", SyntheticDefaults.ANOMALY_RATE),
            mix=self.synthetic_mix,
            base_period_ms=self._get("synthetic", "base_period_ms", SyntheticDefaults.BASE_PERIOD_MS),
            seed=self.seed,
            causes=tuple(CauseSpec.from_dict(d) for d in SyntheticDefaults.CAUSES[:n_causes]),
            incidents_per_cause=(
                self._get("synthetic", "incidents_per_cause", SyntheticDefaults.INCIDENTS_PER_CAUSE)
                if n_causes
                else 0
            ),
            burst_len=self._get("synthetic", "burst_len", SyntheticDefaults.BURST_LEN),
        )

    #
    # MISC
    #

    @property
    def output_dir(self) -> str:
        if self.output_dir_override is not None:
            return self.output_dir_override
        if self.config is None or "output_dir" not in self.config:
            return MiscAppDefaults.OUTPUT_DIR  # default value
        return self.config["output_dir"]

    @property
    def seed(self) -> int:
        if self.seed_override is not None:
            return self.seed_override
        if self.config is None or "seed" not in self.config:
            return MiscAppDefaults.SEED  # default value
        return int(self.config["seed"])

    @property
    def threads(self) -> int:
        if self.threads_override is not None:
            return self.threads_override
        if self.config is None or "threads" not in self.config:
            return MiscAppDefaults.THREADS  # default value
        return int(self.config["threads"])
