#!/usr/bin/env python3

import csv
import enum
import logging
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

import numpy as np

from loglab.constants import SyntheticDefaults
from loglab.errors import DataError

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)

CSV_HEADER = ["index", "timestamp_ms", "source", "truth", "content"]
FORMATS = ["supercomputer", "csv"]


class Truth(str, enum.Enum):
    NORMAL = "Normal"
    ABNORMAL = "Abnormal"


class AnomalyKind(str, enum.Enum):
    TEMPLATE = "template"
    ATTRIBUTE = "attribute"
    CONTEXTUAL = "contextual"


@dataclass(frozen=True)
class LogMessage:
    index: int
    # milliseconds since epoch
    timestamp: int
    source: str
    content: str
    truth: Truth | None = None


@dataclass(frozen=True)
class RejectedLine:
    line_no: int
    reason: str
    raw: str


def _data_lines(fh, skip_provenance: bool = False):
    """Yields (1-based line number, line); with skip_provenance the leading '#' lines are dropped."""
    in_provenance = skip_provenance
    for line_no, line in enumerate(fh, start=1):
        if in_provenance and line.startswith("#"):
            continue
        in_provenance = False
        yield line_no, line.rstrip("\r\n")


def _epoch_seconds_to_ms(token: str) -> int:
    value = Decimal(token)
    if not value.is_finite():
        raise InvalidOperation(token)
    return int(value.scaleb(3).to_integral_value())


# =======================================================================================================
# CorpusLoader
# =======================================================================================================


class CorpusLoader:
    """
    Loads labeled log corpora. Two formats are understood:
     * 'supercomputer': whitespace-delimited lines as in the BGL/Thunderbird/Spirit corpora; field 0 is the
       label token ('-' means normal), the timestamp field holds epoch seconds;
     * 'csv': the 'index,timestamp_ms,source,truth,content' format also produced by write_csv_corpus().

    Malformed lines never abort the load: they are collected in self.rejects and skipped.
    """

    def __init__(
        self,
        timestamp_field: int = 1,
        source_field: int | None = 3,
        content_field: int | None = None,
        head: int = 0,
    ):
        if timestamp_field < 1:
            raise ValueError(f"Invalid timestamp field {timestamp_field}: field 0 is the label token")
        self.timestamp_field = timestamp_field
        self.source_field = source_field
        self.content_field = content_field if content_field is not None else timestamp_field + 1
        self.head = head
        self.rejects: list[RejectedLine] = []
        self.stats = {
            "num_raw_lines": 0,
            "num_messages": 0,
            "num_abnormal": 0,
            "ERROR_num_rejected": 0,
        }

    def load(self, path: str, fmt: str) -> list[LogMessage]:
        if fmt not in FORMATS:
            raise DataError(f"Unknown corpus format '{fmt}'; supported formats are {FORMATS}")
        logger.info(f"Loading {fmt} corpus {path}")
        try:
            with open(path, "r", encoding="utf-8", errors="replace") as fh:
                if fmt == "csv":
                    messages = self._load_csv(fh)
                else:
                    messages = self._load_supercomputer(fh)
        except FileNotFoundError:
            raise DataError(f"Corpus file '{path}' not found")
        except IsADirectoryError:
            raise DataError(f"Corpus path '{path}' is a directory")

        if self.stats["num_raw_lines"] == 0:
            raise DataError(f"Corpus file '{path}' is empty")
        if not messages:
            raise DataError(f"Corpus file '{path}' contains no parsable line ({len(self.rejects)} rejected)")
        if self.rejects:
            logger.warning(f"Rejected {len(self.rejects)} malformed lines while loading {path}")
        logger.info(f"Loaded {len(messages)} log messages ({self.stats['num_abnormal']} abnormal)")
        return messages

    def _reject(self, line_no: int, reason: str, raw: str):
        self.rejects.append(RejectedLine(line_no, reason, raw))
        self.stats["ERROR_num_rejected"] += 1

    def _accept(self, messages: list[LogMessage], msg: LogMessage):
        messages.append(msg)
        self.stats["num_messages"] += 1
        if msg.truth == Truth.ABNORMAL:
            self.stats["num_abnormal"] += 1

    def _load_supercomputer(self, fh) -> list[LogMessage]:
        messages = []
        last_ts = None
        for line_no, line in _data_lines(fh):
            # truncation happens on raw lines, before any filtering
            if self.head and self.stats["num_raw_lines"] >= self.head:
                break
            self.stats["num_raw_lines"] += 1

            fields = line.split()
            if len(fields) <= self.timestamp_field:
                self._reject(line_no, "too few fields", line)
                continue
            try:
                ts = _epoch_seconds_to_ms(fields[self.timestamp_field])
            except (InvalidOperation, ValueError):
                self._reject(line_no, f"invalid timestamp '{fields[self.timestamp_field]}'", line)
                continue
            if last_ts is not None and ts < last_ts:
                self._reject(line_no, "timestamp decreases", line)
                continue

            parts = line.strip().split(None, self.content_field)
            content = parts[self.content_field] if len(parts) > self.content_field else ""
            source = ""
            if self.source_field is not None and self.source_field < len(fields):
                source = fields[self.source_field]
            truth = Truth.NORMAL if fields[0] == "-" else Truth.ABNORMAL

            # index is the 0-based position in the file, rejected lines included
            self._accept(messages, LogMessage(line_no - 1, ts, source, content, truth))
            last_ts = ts
        return messages

    def _load_csv(self, fh) -> list[LogMessage]:
        messages = []
        header_seen = False
        for line_no, line in _data_lines(fh, skip_provenance=True):
            if self.head and self.stats["num_raw_lines"] >= self.head:
                break
            if not header_seen:
                header = next(csv.reader([line]))
                if header != CSV_HEADER:
                    raise DataError(f"Invalid CSV header {header}: expected {CSV_HEADER}")
                header_seen = True
                continue
            self.stats["num_raw_lines"] += 1

            try:
                row = next(csv.reader([line]))
            except csv.Error as e:
                self._reject(line_no, f"csv error: {e}", line)
                continue
            if len(row) != len(CSV_HEADER):
                self._reject(line_no, f"expected {len(CSV_HEADER)} columns, got {len(row)}", line)
                continue
            try:
                index = int(row[0])
                ts = int(row[1])
            except ValueError:
                self._reject(line_no, "invalid index or timestamp", line)
                continue
            if row[3] not in ("0", "1", ""):
                self._reject(line_no, f"invalid truth value '{row[3]}'", line)
                continue
            if messages and index <= messages[-1].index:
                self._reject(line_no, "index not strictly increasing", line)
                continue
            if messages and ts < messages[-1].timestamp:
                self._reject(line_no, "timestamp decreases", line)
                continue

            truth = {"0": Truth.NORMAL, "1": Truth.ABNORMAL, "": None}[row[3]]
            self._accept(messages, LogMessage(index, ts, row[2], row[4], truth))
        return messages

    def write_rejects(self, path: str, header_line: str | None = None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_line:
                fh.write(header_line + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["line_no", "reason", "raw"])
            for r in self.rejects:
                writer.writerow([r.line_no, r.reason, r.raw])

    def print_stats(self):
        print(">> CORPUS LOADER:")
        print(f">>   Num raw lines read: {self.stats['num_raw_lines']}")
        print(f">>   Num log messages accepted: {self.stats['num_messages']}")
        print(f">>   Num abnormal log messages: {self.stats['num_abnormal']}")
        print(f">>   ERROR: rejected lines: {self.stats['ERROR_num_rejected']}")


def load_labeled_logs(path: str, fmt: str, loader: CorpusLoader | None = None) -> list[LogMessage]:
    """Loads a corpus; pass your own 'loader' to configure field positions or to inspect the rejects."""
    if loader is None:
        loader = CorpusLoader()
    return loader.load(path, fmt)


def write_csv_corpus(messages: list[LogMessage], path: str, header_line: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for m in messages:
            truth = "" if m.truth is None else ("1" if m.truth == Truth.ABNORMAL else "0")
            writer.writerow([m.index, m.timestamp, m.source, truth, m.content])


# =======================================================================================================
# Synthetic corpora
# =======================================================================================================


@dataclass(frozen=True)
class TemplateSpec:
    """A skeleton where each '*' token is a slot, plus the value pools used to fill the slots."""

    skeleton: str
    slots: tuple[tuple[str, ...], ...] = ()
    # values never used by normal lines; attribute anomalies draw from here
    abnormal_values: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateSpec":
        return cls(
            skeleton=d["skeleton"],
            slots=tuple(tuple(pool) for pool in d.get("slots", [])),
            abnormal_values=tuple(d.get("abnormal_values", [])),
        )

    @property
    def slot_count(self) -> int:
        return self.skeleton.split().count("*")

    def render(self, values: list[str]) -> str:
        it = iter(values)
        return " ".join(next(it) if tok == "*" else tok for tok in self.skeleton.split())


@dataclass(frozen=True)
class CauseSpec:
    name: str
    services: tuple[str, ...]
    template: TemplateSpec

    @classmethod
    def from_dict(cls, d: dict) -> "CauseSpec":
        return cls(
            name=d["name"],
            services=tuple(d["services"]),
            template=TemplateSpec.from_dict(d),
        )


@dataclass(frozen=True)
class SyntheticSpec:
    n_lines: int
    vocab: tuple[TemplateSpec, ...]
    anomaly_rate: float
    mix: dict = field(default_factory=lambda: dict(SyntheticDefaults.MIX))
    base_period_ms: float = SyntheticDefaults.BASE_PERIOD_MS
    seed: int = 0
    anomaly_vocab: tuple[TemplateSpec, ...] = ()
    sources: tuple[str, ...] = tuple(SyntheticDefaults.NORMAL_SOURCES)
    causes: tuple[CauseSpec, ...] = ()
    incidents_per_cause: int = 0
    burst_len: int = SyntheticDefaults.BURST_LEN
    start_ms: int = SyntheticDefaults.START_MS

    @classmethod
    def default(cls, **overrides) -> "SyntheticSpec":
        """Corpus built on the vocabularies of SyntheticDefaults; 'n_causes' selects how many causes to plant."""
        n_causes = overrides.pop("n_causes", SyntheticDefaults.N_CAUSES)
        params = {
            "n_lines": SyntheticDefaults.N_LINES,
            "vocab": tuple(TemplateSpec.from_dict(d) for d in SyntheticDefaults.NORMAL_VOCAB),
            "anomaly_vocab": tuple(TemplateSpec.from_dict(d) for d in SyntheticDefaults.ANOMALY_VOCAB),
            "anomaly_rate": SyntheticDefaults.ANOMALY_RATE,
            "causes": tuple(CauseSpec.from_dict(d) for d in SyntheticDefaults.CAUSES[:n_causes]),
            "incidents_per_cause": SyntheticDefaults.INCIDENTS_PER_CAUSE if n_causes else 0,
        }
        params.update(overrides)
        return cls(**params)

    def validate(self):
        if self.n_lines < 0:
            raise DataError(f"n_lines must be non-negative, got {self.n_lines}")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise DataError(f"anomaly_rate must be in [0,1], got {self.anomaly_rate}")
        unknown = set(self.mix) - {k.value for k in AnomalyKind}
        if unknown:
            raise DataError(f"Unknown anomaly kinds in mix: {sorted(unknown)}")
        if any(v < 0 for v in self.mix.values()):
            raise DataError(f"Mix fractions must be non-negative: {self.mix}")
        if abs(sum(self.mix.values()) - 1.0) > SyntheticDefaults.MIX_TOLERANCE:
            raise DataError(f"Mix fractions must sum to 1: {self.mix}")
        if not self.vocab:
            raise DataError("The normal vocabulary is empty")
        if not self.sources:
            raise DataError("The list of normal sources is empty")
        if self.base_period_ms <= 0:
            raise DataError(f"base_period_ms must be positive, got {self.base_period_ms}")
        for spec in list(self.vocab) + list(self.anomaly_vocab) + [c.template for c in self.causes]:
            if len(spec.slots) != spec.slot_count:
                raise DataError(f"Skeleton '{spec.skeleton}' has {spec.slot_count} slots but {len(spec.slots)} pools")
            if any(len(pool) == 0 for pool in spec.slots):
                raise DataError(f"Skeleton '{spec.skeleton}' has an empty slot pool")

        if self.anomaly_rate > 0:
            self._validate_mix_against_vocab()
        if self.causes and self.incidents_per_cause > 0:
            normal_sources = set(self.sources)
            seen = set()
            for c in self.causes:
                if set(c.services) & (normal_sources | seen):
                    raise DataError(f"Cause '{c.name}' shares services with the background or another cause")
                seen |= set(c.services)
            n_incidents = len(self.causes) * self.incidents_per_cause
            if self.n_lines // (n_incidents + 1) < 2 * (self.burst_len + 2):
                raise DataError(f"{self.n_lines} lines are too few to plant {n_incidents} incidents")

    def _validate_mix_against_vocab(self):
        # imported here: parse depends on this module
        from loglab.parse import normalize, tokenize

        normal_skeletons = {v.skeleton for v in self.vocab}
        if self.mix.get(AnomalyKind.TEMPLATE.value, 0) > 0:
            if not self.anomaly_vocab:
                raise DataError("Template anomalies requested but the anomaly vocabulary is empty")
            if any(a.skeleton in normal_skeletons for a in self.anomaly_vocab):
                raise DataError("Template-anomaly skeletons must be absent from the normal vocabulary")
        if self.mix.get(AnomalyKind.ATTRIBUTE.value, 0) > 0:
            eligible = [v for v in self.vocab if v.slot_count > 0 and v.abnormal_values]
            if not eligible:
                raise DataError("Attribute anomalies requested but no skeleton has slots and abnormal values")
            normal_values = {val for v in self.vocab for pool in v.slots for val in pool}
            for v in eligible:
                for val in v.abnormal_values:
                    if val in normal_values:
                        raise DataError(f"Abnormal value '{val}' also appears in a normal slot pool")
                    if normalize(tokenize(val)).tokens != (val,):
                        raise DataError(f"Abnormal value '{val}' does not survive tokenization/normalization")
        if self.mix.get(AnomalyKind.CONTEXTUAL.value, 0) > 0 and len(self.vocab) < 5:
            raise DataError("Contextual anomalies need a workflow of at least 5 normal skeletons")


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    kind: AnomalyKind
    skeleton: str


@dataclass(frozen=True)
class IncidentRecord:
    failure_ms: int
    tag: str
    # index of the planted cause line
    cause_index: int


@dataclass
class GroundTruthManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    incidents: list[IncidentRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def kinds(self) -> dict[int, AnomalyKind]:
        return {e.index: e.kind for e in self.entries}


def write_manifest(manifest: GroundTruthManifest, path: str, header_line: str | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        for e in manifest.entries:
            fh.write(f"{e.index},{e.kind.value}\n")


def read_manifest(path: str) -> dict[int, AnomalyKind]:
    """Returns the injected anomalies of a manifest file as {line index: kind}."""
    kinds = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in _data_lines(fh, skip_provenance=True):
                if not line:
                    continue
                try:
                    idx, kind = line.split(",")
                    kinds[int(idx)] = AnomalyKind(kind)
                except ValueError:
                    raise DataError(f"Invalid manifest record at {path}:{line_no}: '{line}'")
    except FileNotFoundError:
        raise DataError(f"Manifest file '{path}' not found")
    return kinds


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


class _SyntheticWriter:
    """Sequential emitter of synthetic log lines; every random draw goes through one seeded generator."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.messages: list[LogMessage] = []
        self.manifest = GroundTruthManifest()
        self.clock_ms = float(spec.start_ms)
        # next workflow step to emit
        self.cycle_pos = 0

    def tick(self, period_ms: float):
        self.clock_ms += self.rng.exponential(period_ms)

    def emit(self, template: TemplateSpec, source: str, truth: Truth, values: list[str] | None = None) -> int:
        if values is None:
            values = [_pick(self.rng, pool) for pool in template.slots]
        idx = len(self.messages)
        self.messages.append(LogMessage(idx, int(round(self.clock_ms)), source, template.render(values), truth))
        return idx

    def emit_normal(self, source: str):
        template = self.spec.vocab[self.cycle_pos]
        self.emit(template, source, Truth.NORMAL)
        self.cycle_pos = (self.cycle_pos + 1) % len(self.spec.vocab)

    def emit_anomaly(self, kind: AnomalyKind):
        spec = self.spec
        source = _pick(self.rng, spec.sources)
        if kind == AnomalyKind.TEMPLATE:
            template = _pick(self.rng, spec.anomaly_vocab)
            idx = self.emit(template, source, Truth.ABNORMAL)
        elif kind == AnomalyKind.ATTRIBUTE:
            eligible = [v for v in spec.vocab if v.slot_count > 0 and v.abnormal_values]
            template = _pick(self.rng, eligible)
            values = [_pick(self.rng, pool) for pool in template.slots]
            values[int(self.rng.integers(len(values)))] = _pick(self.rng, template.abnormal_values)
            idx = self.emit(template, source, Truth.ABNORMAL, values)
        else:
            # out-of-order line: the step after the next one shows up early, the workflow does not advance
            template = spec.vocab[(self.cycle_pos + 1) % len(spec.vocab)]
            idx = self.emit(template, source, Truth.ABNORMAL)
        self.manifest.entries.append(ManifestEntry(idx, kind, template.skeleton))

    def emit_incident(self, cause: CauseSpec):
        spec = self.spec
        planted_at = int(self.rng.integers(spec.burst_len))
        cause_index = None
        for b in range(spec.burst_len):
            if len(self.messages) >= spec.n_lines:
                break
            self.tick(spec.base_period_ms / SyntheticDefaults.BURST_SPEEDUP)
            source = _pick(self.rng, cause.services)
            if b == planted_at:
                cause_index = self.emit(cause.template, source, Truth.ABNORMAL)
                self.manifest.entries.append(ManifestEntry(cause_index, AnomalyKind.TEMPLATE, cause.template.skeleton))
            else:
                self.emit_normal(source)
        if cause_index is not None:
            failure_ms = int(round(self.clock_ms)) + 1
            self.manifest.incidents.append(IncidentRecord(failure_ms, cause.name, cause_index))

    def incident_schedule(self) -> list[tuple[int, CauseSpec]]:
        spec = self.spec
        if not spec.causes or spec.incidents_per_cause <= 0:
            return []
        plan = [c for c in spec.causes for _ in range(spec.incidents_per_cause)]
        plan = [plan[i] for i in self.rng.permutation(len(plan))]
        spacing = spec.n_lines // (len(plan) + 1)
        jitter = spacing // 4
        return [
            ((k + 1) * spacing + int(self.rng.integers(-jitter, jitter + 1)), cause) for k, cause in enumerate(plan)
        ]

    def run(self) -> tuple[list[LogMessage], GroundTruthManifest]:
        spec = self.spec
        kinds = [k for k in AnomalyKind if spec.mix.get(k.value, 0) > 0]
        probs = np.array([spec.mix[k.value] for k in kinds], dtype=float)
        if kinds:
            probs = probs / probs.sum()
        schedule = self.incident_schedule()
        next_incident = 0

        while len(self.messages) < spec.n_lines:
            if next_incident < len(schedule) and len(self.messages) >= schedule[next_incident][0]:
                self.emit_incident(schedule[next_incident][1])
                next_incident += 1
                continue
            self.tick(spec.base_period_ms)
            if kinds and self.rng.random() < spec.anomaly_rate:
                self.emit_anomaly(kinds[int(self.rng.choice(len(kinds), p=probs))])
            else:
                self.emit_normal(_pick(self.rng, spec.sources))
        return self.messages, self.manifest


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[LogMessage], GroundTruthManifest]:
    """
    Generates a corpus with ground-truth anomaly injection.
    Normal traffic cycles through spec.vocab in order (one workflow) with exponential inter-arrival times;
    anomalies are inserted between workflow steps, each recorded in the returned manifest.
    """
    spec.validate()
    messages, manifest = _SyntheticWriter(spec).run()
    logger.info(
        f"Generated {len(messages)} synthetic log messages with {len(manifest)} anomalies "
        f"and {len(manifest.incidents)} incidents"
    )
    return messages, manifest
