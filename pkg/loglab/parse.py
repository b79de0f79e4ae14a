#!/usr/bin/env python3

import csv
import logging
import re
from dataclasses import dataclass

import drain3
from drain3.template_miner_config import TemplateMinerConfig

from loglab.constants import ParserDefaults
from loglab.errors import ParseError
from loglab.ingest import LogMessage

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)

WILDCARD = ParserDefaults.WILDCARD

_SPLIT_RE = re.compile(r"[" + re.escape(ParserDefaults.SEPARATORS) + r"\s]+")
_DECIMAL_RE = re.compile(r"[0-9]+")
_HEX_RE = re.compile(r"[0-9a-fA-F]+")
_HAS_LETTER_RE = re.compile(r"[a-fA-F]")


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    # index of the LogMessage this sequence was built from
    origin: int | None = None

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class Template:
    id: int
    skeleton: tuple[str, ...]

    @property
    def n_wildcards(self) -> int:
        return sum(1 for tok in self.skeleton if tok == WILDCARD)

    def matches(self, seq: TokenSequence) -> bool:
        if len(seq.tokens) != len(self.skeleton):
            return False
        return all(s == WILDCARD or s == t for s, t in zip(self.skeleton, seq.tokens))

    def render(self) -> str:
        return " ".join(self.skeleton)

    def fill(self, values) -> tuple[str, ...]:
        """Inverse of extract_attributes(): puts the attribute values back into the wildcard slots."""
        values = tuple(values)
        if len(values) != self.n_wildcards:
            raise ParseError(f"Template {self.id} has {self.n_wildcards} slots, got {len(values)} values")
        it = iter(values)
        return tuple(next(it) if tok == WILDCARD else tok for tok in self.skeleton)


@dataclass(frozen=True)
class AttributeSet:
    origin: int | None
    values: tuple[str, ...]


@dataclass(frozen=True)
class ContextKey:
    origin: int
    neighbor_ids: frozenset[int]


def tokenize(content: str, origin: int | None = None) -> TokenSequence:
    return TokenSequence(tuple(tok for tok in _SPLIT_RE.split(content) if tok), origin)


def _normalize_token(tok: str) -> str:
    if _DECIMAL_RE.fullmatch(tok):
        return ParserDefaults.NUM_PLACEHOLDER if int(tok) >= ParserDefaults.NUM_MIN_VALUE else tok
    if tok[:2].lower() == "0x":
        return ParserDefaults.HEX_PLACEHOLDER
    if len(tok) >= ParserDefaults.HEX_MIN_LENGTH and _HEX_RE.fullmatch(tok) and _HAS_LETTER_RE.search(tok):
        return ParserDefaults.HEX_PLACEHOLDER
    return tok


def normalize(seq: TokenSequence) -> TokenSequence:
    return TokenSequence(tuple(_normalize_token(tok) for tok in seq.tokens), seq.origin)


# =======================================================================================================
# TemplateMiner
# =======================================================================================================


class TemplateMiner:
    """
    Drain template miner over normalized token sequences.
    The drain3 prefix tree is keyed on token count, then on the first (depth - 2) tokens; tokens holding a digit
    and keys beyond 'max_children' go under the wildcard key. In a leaf, a line joins the cluster with the highest
    similarity (share of positions where the cluster's literal equals the line's token) if that reaches the
    threshold; the differing positions of the cluster skeleton become wildcards.
    """

    def __init__(
        self,
        similarity_threshold: float = ParserDefaults.SIMILARITY_THRESHOLD,
        depth: int = ParserDefaults.TREE_DEPTH,
        max_children: int = ParserDefaults.MAX_CHILDREN,
    ):
        if not 0.0 < similarity_threshold <= 1.0:
            raise ValueError(f"Invalid similarity threshold {similarity_threshold}")
        if depth < 3:
            raise ValueError(f"Invalid tree depth {depth}: at least 3 is required")
        config = TemplateMinerConfig()
        config.drain_sim_th = similarity_threshold
        config.drain_depth = depth
        config.drain_max_children = max_children
        config.drain_max_clusters = None
        config.masking_instructions = []
        config.parametrize_numeric_tokens = True
        config.profiling_enabled = False
        self._miner = drain3.TemplateMiner(config=config)
        # drain3 cluster id of each processed line
        self._assigned: list[int] = []
        self.stats = {
            "num_lines": 0,
            "num_clusters": 0,
            "num_template_changes": 0,
            "num_duplicate_clusters_merged": 0,
        }

    def add(self, seq: TokenSequence) -> int:
        """Processes one line and returns its (provisional) cluster id."""
        result = self._miner.add_log_message(" ".join(seq.tokens))
        if result["change_type"] == "cluster_template_changed":
            self.stats["num_template_changes"] += 1
        self._assigned.append(result["cluster_id"])
        self.stats["num_lines"] += 1
        return result["cluster_id"]

    def finish(self) -> tuple[list[Template], list[int]]:
        """
        Reads the final skeleton of every cluster, merges clusters that ended up with identical skeletons
        and renumbers them densely, in order of first appearance in the corpus.
        """
        clusters = self._miner.drain.id_to_cluster
        canonical = {}
        final_ids = {}
        templates = []
        for cid in self._assigned:
            if cid in final_ids:
                continue
            skeleton = tuple(clusters[cid].log_template_tokens)
            if skeleton in canonical:
                self.stats["num_duplicate_clusters_merged"] += 1
                final_ids[cid] = canonical[skeleton]
            else:
                canonical[skeleton] = len(templates)
                final_ids[cid] = len(templates)
                templates.append(Template(len(templates), skeleton))
        self.stats["num_clusters"] = len(templates)
        return templates, [final_ids[cid] for cid in self._assigned]

    def print_stats(self):
        print(">> TEMPLATE MINER:")
        print(f">>   Num lines processed: {self.stats['num_lines']}")
        print(f">>   Num templates: {self.stats['num_clusters']}")
        print(f">>   Num template generalizations: {self.stats['num_template_changes']}")
        print(f">>   Num duplicate clusters merged: {self.stats['num_duplicate_clusters_merged']}")


def mine_templates(
    corpus: list[TokenSequence], miner: TemplateMiner | None = None
) -> tuple[list[Template], list[int]]:
    if not corpus:
        raise ParseError("Cannot mine templates from an empty corpus")
    if miner is None:
        miner = TemplateMiner()
    for seq in corpus:
        miner.add(seq)
    templates, ids = miner.finish()
    logger.info(f"Mined {len(templates)} templates from {len(corpus)} lines")
    return templates, ids


def extract_attributes(seq: TokenSequence, template: Template) -> AttributeSet:
    if not template.matches(seq):
        raise ParseError(f"Template {template.id} '{template.render()}' does not match line {seq.origin}")
    return AttributeSet(seq.origin, tuple(t for s, t in zip(template.skeleton, seq.tokens) if s == WILDCARD))


def build_context(ids: list[int], a: int, b: int) -> list[ContextKey]:
    """Context of line i: the set of template ids of lines i-a..i-1 and i+1..i+b (the line itself excluded)."""
    if a < 0 or b < 0 or a + b < 1:
        raise ValueError(f"Invalid context boundaries a={a}, b={b}")
    n = len(ids)
    return [
        ContextKey(i, frozenset(ids[max(0, i - a) : i]) | frozenset(ids[i + 1 : min(n, i + b + 1)])) for i in range(n)
    ]


# =======================================================================================================
# ParsedCorpus
# =======================================================================================================


@dataclass
class ParsedCorpus:
    sequences: list[TokenSequence]
    templates: list[Template]
    # template id of each line, by position in the corpus
    template_ids: list[int]
    attributes: list[AttributeSet]

    def __len__(self):
        return len(self.sequences)

    def template_of(self, pos: int) -> Template:
        return self.templates[self.template_ids[pos]]


def parse_corpus(messages: list[LogMessage], miner: TemplateMiner | None = None) -> ParsedCorpus:
    """Tokenizes, normalizes and mines the whole corpus, then extracts the attributes of every line."""
    sequences = [normalize(tokenize(m.content, m.index)) for m in messages]
    templates, ids = mine_templates(sequences, miner)
    attributes = [extract_attributes(seq, templates[tid]) for seq, tid in zip(sequences, ids)]
    return ParsedCorpus(sequences, templates, ids, attributes)


def write_template_table(templates: list[Template], path: str, header_line: str | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        for t in templates:
            fh.write(f"{t.id}\t{t.render()}\n")


def read_template_table(path: str) -> list[Template]:
    templates = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            tid, _, skeleton = line.rstrip("\n").partition("\t")
            templates.append(Template(int(tid), tuple(skeleton.split(" ")) if skeleton else ()))
    return templates


def write_parsed_corpus(parsed: ParsedCorpus, path: str, header_line: str | None = None):
    # NOTE: attribute values holding '|' cannot be told apart on reading
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for attrs, tid in zip(parsed.attributes, parsed.template_ids):
            writer.writerow([attrs.origin, tid, "|".join(attrs.values)])


def read_parsed_corpus(path: str) -> list[tuple[int, int, tuple[str, ...]]]:
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        for row in rows:
            records.append((int(row[0]), int(row[1]), tuple(row[2].split("|")) if row[2] else ()))
    return records
