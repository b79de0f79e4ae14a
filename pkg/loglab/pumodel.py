#!/usr/bin/env python3

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from loglab.constants import MiscAppDefaults, ModelDefaults
from loglab.errors import ConfigError, DataError, NumericError, TrainingDivergedError, WeakLabelError
from loglab.ingest import LogMessage, Truth
from loglab.parse import TokenSequence
from loglab.weaklabel import WeakLabel, WeakLabeledDataset, compute_q

#
# Created: Oct 2026
# License: Apache license
#

logger = logging.getLogger(__name__)

PAD_ID = ModelDefaults.SPECIAL_TOKENS.index(ModelDefaults.PAD_TOKEN)
CLS_ID = ModelDefaults.SPECIAL_TOKENS.index(ModelDefaults.CLS_TOKEN)
UNK_ID = ModelDefaults.SPECIAL_TOKENS.index(ModelDefaults.UNK_TOKEN)


@dataclass(frozen=True)
class ModelConfig:
    max_len: int = ModelDefaults.MAX_LEN
    embed_dim: int = ModelDefaults.EMBED_DIM
    hidden_dim: int = ModelDefaults.HIDDEN_DIM
    n_layers: int = ModelDefaults.N_LAYERS
    n_heads: int = ModelDefaults.N_HEADS
    dropout_rate: float = ModelDefaults.DROPOUT_RATE
    batch_size: int = ModelDefaults.BATCH_SIZE
    epochs: int = ModelDefaults.EPOCHS
    learning_rate: float = ModelDefaults.LEARNING_RATE
    weight_decay: float = ModelDefaults.WEIGHT_DECAY
    seed: int = MiscAppDefaults.SEED
    decision_threshold_mode: str = ModelDefaults.DECISION_THRESHOLD_MODE

    def __post_init__(self):
        if self.n_heads < 1 or self.embed_dim % self.n_heads != 0:
            raise ConfigError(f"embed_dim={self.embed_dim} is not divisible by n_heads={self.n_heads}")
        if self.embed_dim % 2 != 0:
            raise ConfigError(f"embed_dim={self.embed_dim} must be even for sinusoidal positions")
        if self.max_len < 2:
            raise ConfigError(f"max_len={self.max_len} must be at least 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate={self.dropout_rate} must be in [0,1)")
        for name in ("hidden_dim", "n_layers", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        # raises on an unknown mode
        parse_threshold_mode(self.decision_threshold_mode)


def parse_threshold_mode(mode: str) -> float | None:
    """Returns the fixed threshold of a 'fixed:<v>' mode, None for 'crossover'."""
    if mode == "crossover":
        return None
    if mode.startswith("fixed:"):
        try:
            value = float(mode[len("fixed:") :])
        except ValueError:
            value = float("nan")
        if math.isfinite(value) and value > 0:
            return value
    raise ConfigError(f"Invalid decision threshold mode '{mode}': expected 'crossover' or 'fixed:<v>' with v > 0")


def decision_threshold(q: float, mode: str = ModelDefaults.DECISION_THRESHOLD_MODE) -> float:
    fixed = parse_threshold_mode(mode)
    if fixed is not None:
        return fixed
    # norm where the two branches of the objective are equal: n^2 = q^2/n
    return q ** (2.0 / 3.0)


# =======================================================================================================
# Vocabulary
# =======================================================================================================


class Vocabulary:
    """Token -> id table; the special tokens hold ids 0..4, other tokens follow in first-seen order."""

    def __init__(self, tokens: list[str] | None = None):
        self._tokens: list[str] = []
        self._ids: dict[str, int] = {}
        self.frozen = False
        for tok in ModelDefaults.SPECIAL_TOKENS + list(tokens or []):
            self.add(tok)

    @classmethod
    def build(cls, sequences) -> "Vocabulary":
        vocab = cls()
        for seq in sequences:
            for tok in seq.tokens:
                vocab.add(tok)
        vocab.frozen = True
        return vocab

    def add(self, token: str):
        if self.frozen:
            raise DataError("Cannot add tokens to a frozen vocabulary")
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def __len__(self):
        return len(self._tokens)


def build_input(seq: TokenSequence, vocab: Vocabulary, cfg: ModelConfig) -> list[int]:
    ids = [CLS_ID] + [vocab.id_of(tok) for tok in seq.tokens[: cfg.max_len - 1]]
    return ids + [PAD_ID] * (cfg.max_len - len(ids))


def encode_batch(sequences: list[TokenSequence], vocab: Vocabulary, cfg: ModelConfig) -> torch.Tensor:
    return torch.tensor([build_input(seq, vocab, cfg) for seq in sequences], dtype=torch.long)


# =======================================================================================================
# Encoder
# =======================================================================================================


def sinusoidal_positions(max_len: int, dim: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    rate = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    pe = torch.zeros(max_len, dim)
    pe[:, 0::2] = torch.sin(pos * rate)
    pe[:, 1::2] = torch.cos(pos * rate)
    return pe


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, embed_dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = embed_dim // n_heads
        self.queries = nn.Linear(embed_dim, embed_dim)
        self.keys = nn.Linear(embed_dim, embed_dim)
        self.values = nn.Linear(embed_dim, embed_dim)
        self.out = nn.Linear(embed_dim, embed_dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (B, T, d) -> (B, heads, T, head_dim)
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self._split(self.queries(x)), self._split(self.keys(x)), self._split(self.values(x))
        energy = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # padded keys get no attention; the [CLS] key is never padded
        energy = energy.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        attention = torch.softmax(energy, dim=-1)
        return self.out((attention @ v).transpose(1, 2).reshape(b, t, d))


class EncoderBlock(nn.Module):
    """Self-attention then feed-forward, each followed by residual add and LayerNorm; dropout acts on the
    feed-forward hidden units."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attention = MultiHeadSelfAttention(cfg.embed_dim, cfg.n_heads)
        self.norm1 = nn.LayerNorm(cfg.embed_dim)
        self.norm2 = nn.LayerNorm(cfg.embed_dim)
        self.feed_forward = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.hidden_dim),
            nn.GELU(),
            nn.Dropout(cfg.dropout_rate),
            nn.Linear(cfg.hidden_dim, cfg.embed_dim),
        )

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.attention(x, pad_mask))
        return self.norm2(x + self.feed_forward(x))


class LogEncoder(nn.Module):
    """
    Maps padded token-id sequences (B, max_len) to one vector z per line (B, embed_dim), read at [CLS].
    The [CLS] slot has no position encoding and its embedding starts at zero: before training its query is
    zero and the read-out is the normalized mean of the token values.
    """

    def __init__(self, vocab_size: int, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embedding = nn.Embedding(vocab_size, cfg.embed_dim, padding_idx=PAD_ID)
        positions = torch.cat([torch.zeros(1, cfg.embed_dim), sinusoidal_positions(cfg.max_len - 1, cfg.embed_dim)])
        self.register_buffer("positions", positions)
        self.blocks = nn.ModuleList([EncoderBlock(cfg) for _ in range(cfg.n_layers)])
        self.head = nn.Linear(cfg.embed_dim, cfg.embed_dim)
        self.reset_parameters(cfg.seed)

    def reset_parameters(self, seed: int):
        """
        Seeded init: token embeddings N(0,1) with the [PAD] and [CLS] rows at zero; linear weights uniform in
        [-1/sqrt(d), 1/sqrt(d)] except the last feed-forward layer (zero) and the head ([-1/d, 1/d]);
        biases 0, LayerNorm at identity. Every line then starts with a small ||z|| that the objective grows.
        """
        gen = torch.Generator().manual_seed(seed)
        d = self.cfg.embed_dim
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name == "embedding.weight":
                    p.normal_(0.0, 1.0, generator=gen)
                    p[PAD_ID].zero_()
                    p[CLS_ID].zero_()
                elif ".norm" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias") or name.endswith("feed_forward.3.weight"):
                    p.zero_()
                elif name == "head.weight":
                    p.uniform_(-1.0 / d, 1.0 / d, generator=gen)
                else:
                    p.uniform_(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d), generator=gen)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        pad_mask = ids == PAD_ID
        x = self.embedding(ids) + self.positions[: ids.shape[1]]
        for block in self.blocks:
            x = block(x, pad_mask)
        return self.head(x[:, 0])


def forward(model: LogEncoder, batch: torch.Tensor, train_mode: bool) -> torch.Tensor:
    if batch.shape[0] == 0:
        raise DataError("Cannot run the encoder on an empty batch")
    model.train(train_mode)
    z = model(batch)
    if not torch.isfinite(z).all():
        bad = (~torch.isfinite(z)).any(dim=1).nonzero().flatten().tolist()
        raise NumericError(f"Non-finite encoder output for {len(bad)} lines of the batch (rows {bad[:10]})")
    return z


def pu_loss(
    z_norms: torch.Tensor, weak_labels: torch.Tensor, q: float, eps: float = ModelDefaults.EPSILON
) -> torch.Tensor:
    """
    Mean over the batch of (1-y)*||z||^2 + y*q^2/max(||z||, eps), with y=1 for U lines and y=0 for P lines.
    P lines are pulled towards the origin, U lines pushed away from it.
    """
    if not 0.0 < q < 1.0:
        raise WeakLabelError(f"q={q} must be strictly between 0 and 1")
    if z_norms.numel() == 0:
        raise DataError("Cannot compute the loss of an empty batch")
    y = weak_labels.to(z_norms.dtype)
    return ((1.0 - y) * z_norms**2 + y * q**2 / torch.clamp(z_norms, min=eps)).mean()


# =======================================================================================================
# Training
# =======================================================================================================


@dataclass
class TrainedModel:
    config: ModelConfig
    vocab: Vocabulary
    encoder: LogEncoder
    q: float
    optimizer_state: dict = field(default_factory=dict)
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def threshold(self) -> float:
        return decision_threshold(self.q, self.config.decision_threshold_mode)


class LogLabTrainer:
    """
    Trains the encoder on a weak-labeled dataset with the PU objective.
    Batches are shuffled with a generator seeded from the config; parameters are updated with AdamW.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.epoch_losses: list[float] = []
        self.stats = {
            "num_train_rows": 0,
            "num_unknown_rows": 0,
            "num_epochs": 0,
            "num_steps": 0,
            "ERROR_num_diverged_runs": 0,
        }

    def _diverged(self, msg: str, last_good: dict | None, epoch: int):
        self.stats["ERROR_num_diverged_runs"] += 1
        logger.error(msg)
        raise TrainingDivergedError(msg, last_good, epoch)

    def fit(self, dataset: WeakLabeledDataset, sequences: list[TokenSequence]) -> TrainedModel:
        cfg = self.cfg
        q = compute_q(dataset)
        train_seqs = [sequences[pos] for pos in dataset.lines]
        vocab = Vocabulary.build(train_seqs)
        ids = encode_batch(train_seqs, vocab, cfg)
        y = torch.tensor([1.0 if lbl == WeakLabel.U else 0.0 for lbl in dataset.labels])
        self.stats["num_train_rows"] = len(dataset)
        self.stats["num_unknown_rows"] = int(y.sum().item())
        logger.info(f"Training on {len(dataset)} rows, q={q:.4f}, vocabulary of {len(vocab)} tokens")

        torch.manual_seed(cfg.seed)
        model = LogEncoder(len(vocab), cfg)
        optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
        loader = DataLoader(
            TensorDataset(ids, y),
            batch_size=cfg.batch_size,
            shuffle=True,
            generator=torch.Generator().manual_seed(cfg.seed),
        )

        last_good = None
        for epoch in range(cfg.epochs):
            total, count = 0.0, 0
            for batch_ids, batch_y in loader:
                try:
                    z = forward(model, batch_ids, train_mode=True)
                except NumericError as e:
                    self._diverged(f"Epoch {epoch}: {e}", last_good, epoch)
                loss = pu_loss(torch.linalg.vector_norm(z, dim=1), batch_y, q)
                if not torch.isfinite(loss):
                    self._diverged(f"Epoch {epoch}: training loss became {loss.item()}", last_good, epoch)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                if not all(torch.isfinite(p).all() for p in model.parameters()):
                    self._diverged(f"Epoch {epoch}: non-finite parameters after an update", last_good, epoch)
                total += loss.item() * len(batch_y)
                count += len(batch_y)
                self.stats["num_steps"] += 1

            mean_loss = total / count
            self.epoch_losses.append(mean_loss)
            self.stats["num_epochs"] += 1
            last_good = {
                "encoder": copy.deepcopy(model.state_dict()),
                "optimizer": copy.deepcopy(optimizer.state_dict()),
            }
            logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: mean loss {mean_loss:.6f}")

        return TrainedModel(cfg, vocab, model, q, optimizer.state_dict(), list(self.epoch_losses))

    def print_stats(self):
        print(">> PU TRAINER:")
        print(f">>   Num training rows: {self.stats['num_train_rows']} ({self.stats['num_unknown_rows']} U)")
        print(f">>   Num epochs completed: {self.stats['num_epochs']}")
        print(f">>   Num optimizer steps: {self.stats['num_steps']}")
        if self.epoch_losses:
            print(f">>   Last epoch mean loss: {self.epoch_losses[-1]:.6f}")
        print(f">>   ERROR: diverged runs: {self.stats['ERROR_num_diverged_runs']}")


def train(
    dataset: WeakLabeledDataset, sequences: list[TokenSequence], cfg: ModelConfig
) -> tuple[TrainedModel, list[float]]:
    """Returns the trained model and the per-epoch mean loss."""
    model = LogLabTrainer(cfg).fit(dataset, sequences)
    return model, model.epoch_losses


# =======================================================================================================
# Scoring
# =======================================================================================================


@dataclass(frozen=True)
class LineScore:
    origin: int
    z_norm: float
    assigned: Truth


def assign_labels(z_norms: list[float], q: float, mode: str = ModelDefaults.DECISION_THRESHOLD_MODE) -> list[Truth]:
    threshold = decision_threshold(q, mode)
    return [Truth.ABNORMAL if n >= threshold else Truth.NORMAL for n in z_norms]


def score_lines(model: TrainedModel, sequences: list[TokenSequence]) -> list[LineScore]:
    """Scores every sequence in eval mode; the origin of each LineScore is the sequence origin."""
    norms = []
    with torch.no_grad():
        for start in range(0, len(sequences), model.config.batch_size):
            batch = encode_batch(sequences[start : start + model.config.batch_size], model.vocab, model.config)
            z = forward(model.encoder, batch, train_mode=False)
            norms.extend(torch.linalg.vector_norm(z, dim=1).tolist())
    labels = assign_labels(norms, model.q, model.config.decision_threshold_mode)
    return [LineScore(seq.origin, n, lbl) for seq, n, lbl in zip(sequences, norms, labels)]


def write_scores(scores: list[LineScore], path: str, header_line: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "z_norm", "label"])
        for s in scores:
            writer.writerow([s.origin, repr(s.z_norm), s.assigned.value])


def labels_by_index(scores: list[LineScore], corpus: list[LogMessage]) -> list[Truth]:
    by_origin = {s.origin: s.assigned for s in scores}
    return [by_origin[m.index] for m in corpus]


# =======================================================================================================
# Checkpoints
# =======================================================================================================


def save_checkpoint(model: TrainedModel, path: str, provenance: dict | None = None):
    torch.save(
        {
            "format_version": ModelDefaults.CHECKPOINT_FORMAT_VERSION,
            "provenance": provenance or {},
            "config": asdict(model.config),
            "vocabulary": model.vocab.tokens,
            "q": model.q,
            "epoch_losses": list(model.epoch_losses),
            "encoder": model.encoder.state_dict(),
            "optimizer": model.optimizer_state,
        },
        path,
    )


def load_checkpoint(path: str) -> TrainedModel:
    try:
        container = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise DataError(f"Checkpoint '{path}' not found")
    version = container.get("format_version")
    if version != ModelDefaults.CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"Unsupported checkpoint format version {version} in '{path}'")
    cfg = ModelConfig(**container["config"])
    tokens = container["vocabulary"]
    vocab = Vocabulary(tokens[len(ModelDefaults.SPECIAL_TOKENS) :])
    vocab.frozen = True
    encoder = LogEncoder(len(vocab), cfg)
    encoder.load_state_dict(container["encoder"])
    return TrainedModel(cfg, vocab, encoder, container["q"], container["optimizer"], container["epoch_losses"])


# =======================================================================================================
# Gradient check
# =======================================================================================================


def gradient_check(
    model: LogEncoder,
    ids: torch.Tensor,
    weak_labels: torch.Tensor,
    q: float,
    n_coords: int = 100,
    eps: float = 1e-6,
    seed: int = 0,
    floor: float = 1e-5,
) -> float:
    """
    Compares the autograd gradient of the PU objective with central finite differences, in double precision,
    at 'n_coords' random parameter coordinates. Returns the max relative error |a-f| / max(|a|, |f|, floor).
    The model is converted to float64 and put in eval mode (no dropout).
    """
    model.double()
    model.eval()

    def objective() -> torch.Tensor:
        return pu_loss(torch.linalg.vector_norm(model(ids), dim=1), weak_labels, q)

    model.zero_grad()
    objective().backward()
    params = list(model.parameters())
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    coords = rng.choice(int(offsets[-1]), size=min(n_coords, int(offsets[-1])), replace=False)

    worst = 0.0
    with torch.no_grad():
        for c in coords:
            p_idx = int(np.searchsorted(offsets, c, side="right") - 1)
            flat = params[p_idx].view(-1)
            i = int(c - offsets[p_idx])
            grad = params[p_idx].grad
            analytic = 0.0 if grad is None else grad.view(-1)[i].item()
            original = flat[i].item()
            flat[i] = original + eps
            plus = objective().item()
            flat[i] = original - eps
            minus = objective().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))
    return worst
