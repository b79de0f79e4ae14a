import dataclasses

import pytest
import torch

from loglab.errors import ConfigError, DataError, TrainingDivergedError, WeakLabelError
from loglab.evaluation import evaluate_labels
from loglab.ingest import SyntheticSpec, Truth, generate_synthetic
from loglab.parse import TokenSequence, parse_corpus
from loglab.pumodel import (
    CLS_ID,
    PAD_ID,
    UNK_ID,
    LogEncoder,
    LogLabTrainer,
    ModelConfig,
    Vocabulary,
    assign_labels,
    build_input,
    decision_threshold,
    encode_batch,
    forward,
    gradient_check,
    labels_by_index,
    load_checkpoint,
    pu_loss,
    save_checkpoint,
    score_lines,
    train,
    write_scores,
)
from loglab.weaklabel import FailureEvent, assign_pu_labels, failures_from_truth

from tests.conftest import TINY_MODEL, make_messages


def _toy_corpus():
    """4 templates; 'kernel panic' and 'disk failure' lines only ever show up inside failure windows."""
    rows = []
    t = 0
    for i in range(400):
        t += 100
        if i % 40 == 20:
            rows.append((t, f"kernel panic on cpu{i % 3}", "A"))
        elif i % 40 == 30:
            rows.append((t, f"disk failure on sd{'abc'[i % 3]}", "A"))
        elif i % 2:
            rows.append((t, f"job done on node{i % 4}", "N"))
        else:
            rows.append((t, f"user login from host{i % 5}", "N"))
    messages = make_messages(rows)
    failures = [FailureEvent(m.timestamp) for m in messages if m.truth == Truth.ABNORMAL]
    return messages, assign_pu_labels(messages, failures, 150)


# =======================================================================================================
# Objective and thresholds
# =======================================================================================================


@pytest.mark.unit
def test_pu_loss_examples():
    # single P line at the origin
    assert pu_loss(torch.tensor([0.0], dtype=torch.float64), torch.tensor([0.0]), 0.5).item() == 0.0
    # single U line, q^2/||z||
    assert abs(pu_loss(torch.tensor([1.0], dtype=torch.float64), torch.tensor([1.0]), 0.5).item() - 0.25) <= 1e-12
    # (0.2^2 + 0.5^2/0.5) / 2
    loss = pu_loss(torch.tensor([0.2, 0.5], dtype=torch.float64), torch.tensor([0.0, 1.0]), 0.5)
    assert abs(loss.item() - 0.27) <= 1e-12


@pytest.mark.unit
def test_pu_loss_is_the_mean_of_single_lines():
    norms = torch.tensor([0.0, 0.3, 1.7, 2.2, 1e-9], dtype=torch.float64)
    labels = torch.tensor([0.0, 1.0, 0.0, 1.0, 1.0])
    singles = [pu_loss(norms[i : i + 1], labels[i : i + 1], 0.4) for i in range(5)]
    assert abs(pu_loss(norms, labels, 0.4).item() - sum(s.item() for s in singles) / 5) <= 1e-9


@pytest.mark.unit
def test_pu_loss_branches():
    q = 0.5
    small, large = torch.tensor([0.5], dtype=torch.float64), torch.tensor([0.9], dtype=torch.float64)
    p, u = torch.tensor([0.0]), torch.tensor([1.0])
    assert pu_loss(small, p, q) < pu_loss(large, p, q)
    assert pu_loss(small, u, q) > pu_loss(large, u, q)


@pytest.mark.unit
@pytest.mark.parametrize("q", [0.0, 1.0, -0.5, 1.5])
def test_pu_loss_degenerate_q(q):
    with pytest.raises(WeakLabelError):
        pu_loss(torch.tensor([1.0]), torch.tensor([1.0]), q)


@pytest.mark.unit
def test_pu_loss_empty_batch():
    with pytest.raises(DataError):
        pu_loss(torch.tensor([]), torch.tensor([]), 0.5)


@pytest.mark.unit
def test_decision_threshold():
    assert abs(decision_threshold(0.125) - 0.25) <= 1e-12
    assert decision_threshold(0.125, "fixed:0.4") == 0.4
    with pytest.raises(ConfigError):
        decision_threshold(0.5, "fixed:-1")
    with pytest.raises(ConfigError):
        decision_threshold(0.5, "median")


@pytest.mark.unit
def test_assign_labels():
    labels = assign_labels([0.0, 0.1, 0.25, 3.0], 0.125)
    assert labels == [Truth.NORMAL, Truth.NORMAL, Truth.ABNORMAL, Truth.ABNORMAL]
    assert assign_labels([0.0], 0.9, "fixed:0.001") == [Truth.NORMAL]


@pytest.mark.unit
@pytest.mark.parametrize(
    "overrides",
    [dict(embed_dim=10, n_heads=4), dict(embed_dim=15, n_heads=1), dict(max_len=1), dict(epochs=0)],
)
def test_model_config_checks(overrides):
    with pytest.raises(ConfigError):
        ModelConfig(**{**TINY_MODEL, **overrides})


# =======================================================================================================
# Inputs
# =======================================================================================================


@pytest.mark.unit
def test_vocabulary():
    vocab = Vocabulary.build([TokenSequence(("a", "b")), TokenSequence(("b", "[NUM]", "c"))])
    assert vocab.tokens[:5] == ["[PAD]", "[CLS]", "[UNK]", "[HEX]", "[NUM]"]
    assert vocab.tokens[5:] == ["a", "b", "c"]
    assert vocab.id_of("[NUM]") == 4
    assert vocab.id_of("never seen") == UNK_ID
    with pytest.raises(DataError):
        vocab.add("d")


@pytest.mark.unit
def test_build_input(tiny_model_config):
    cfg = dataclasses.replace(tiny_model_config, max_len=20)
    vocab = Vocabulary.build([TokenSequence(tuple(f"t{i}" for i in range(25)))])

    long_line = build_input(TokenSequence(tuple(f"t{i}" for i in range(25))), vocab, cfg)
    assert len(long_line) == 20
    assert long_line[0] == CLS_ID
    assert long_line[1:] == [vocab.id_of(f"t{i}") for i in range(19)]

    assert build_input(TokenSequence(()), vocab, cfg) == [CLS_ID] + [PAD_ID] * 19

    exact = build_input(TokenSequence(tuple(f"t{i}" for i in range(19))), vocab, cfg)
    assert PAD_ID not in exact


# =======================================================================================================
# Encoder
# =======================================================================================================


@pytest.mark.unit
def test_encoder_shapes_and_batch_independence(tiny_model_config):
    sequences = [TokenSequence(tuple(s.split())) for s in ["a b c", "d e", "a b c", "f"]]
    vocab = Vocabulary.build(sequences)
    model = LogEncoder(len(vocab), tiny_model_config)
    batch = encode_batch(sequences, vocab, tiny_model_config)

    z = forward(model, batch, train_mode=False)
    assert z.shape == (4, tiny_model_config.embed_dim)
    # duplicates give identical vectors
    assert torch.equal(z[0], z[2])
    # permuting the batch permutes the outputs
    perm = torch.tensor([3, 1, 0, 2])
    assert torch.allclose(forward(model, batch[perm], train_mode=False), z[perm], atol=1e-6)

    with pytest.raises(DataError):
        forward(model, batch[:0], train_mode=False)


@pytest.mark.unit
def test_encoder_initialization_is_seeded(tiny_model_config):
    a = LogEncoder(20, tiny_model_config)
    b = LogEncoder(20, tiny_model_config)
    c = LogEncoder(20, dataclasses.replace(tiny_model_config, seed=1))
    for (name, pa), pb, pc in zip(a.named_parameters(), b.parameters(), c.parameters()):
        assert torch.equal(pa, pb)
        if name == "embedding.weight":
            assert not torch.equal(pa, pc)


@pytest.mark.unit
def test_encoder_starts_near_the_origin():
    cfg = ModelConfig(**{**TINY_MODEL, "embed_dim": 64, "n_heads": 2, "hidden_dim": 128})
    sequences = [TokenSequence(tuple(s.split())) for s in ["job done on node", "kernel panic on cpu", "user login"]]
    vocab = Vocabulary.build(sequences)
    model = LogEncoder(len(vocab), cfg)

    assert not model.embedding.weight[PAD_ID].any()
    assert not model.embedding.weight[CLS_ID].any()
    # the [CLS] slot carries no position
    assert not model.positions[0].any()
    for block in model.blocks:
        assert not block.feed_forward[-1].weight.any()

    norms = forward(model, encode_batch(sequences, vocab, cfg), train_mode=False).norm(dim=1)
    assert (norms < 1.0).all()
    assert (norms > 0.0).all()


@pytest.mark.unit
def test_gradient_matches_finite_differences(tiny_model_config):
    sequences = [TokenSequence(tuple(s.split())) for s in ["a b c", "d e", "a x", "f g h i", "b", "c d"]]
    vocab = Vocabulary.build(sequences)
    model = LogEncoder(len(vocab), tiny_model_config)
    ids = encode_batch(sequences, vocab, tiny_model_config)
    weak_labels = torch.tensor([0.0, 1.0, 0.0, 1.0, 0.0, 1.0], dtype=torch.float64)

    assert gradient_check(model, ids, weak_labels, q=0.5, n_coords=100) <= 1e-4


# =======================================================================================================
# Training and scoring
# =======================================================================================================


@pytest.mark.unit
def test_training_is_deterministic(tiny_model_config):
    messages, dataset = _toy_corpus()
    parsed = parse_corpus(messages)
    first, _ = train(dataset, parsed.sequences, tiny_model_config)
    second, _ = train(dataset, parsed.sequences, tiny_model_config)
    for pa, pb in zip(first.encoder.parameters(), second.encoder.parameters()):
        assert torch.equal(pa, pb)
    assert first.epoch_losses == second.epoch_losses


@pytest.mark.unit
def test_toy_corpus_is_separated(tiny_model_config):
    messages, dataset = _toy_corpus()
    parsed = parse_corpus(messages)
    cfg = dataclasses.replace(tiny_model_config, epochs=40, learning_rate=5e-3)

    trainer = LogLabTrainer(cfg)
    model = trainer.fit(dataset, parsed.sequences)
    losses = model.epoch_losses
    assert len(losses) == 40
    assert losses[-1] < losses[0]
    assert trainer.stats["num_epochs"] == 40

    scores = score_lines(model, parsed.sequences)
    assert [s.origin for s in scores] == [m.index for m in messages]
    abnormal = [s.z_norm for s, m in zip(scores, messages) if m.truth == Truth.ABNORMAL]
    normal = [s.z_norm for s, m in zip(scores, messages) if m.truth == Truth.NORMAL]
    assert min(abnormal) > max(normal)

    report = evaluate_labels([m.truth for m in messages], labels_by_index(scores, messages))
    assert report.f1 >= 0.9


@pytest.mark.unit
def test_training_needs_both_labels(tiny_model_config):
    messages = make_messages([(i * 1000, "a b", "N") for i in range(10)])
    dataset = assign_pu_labels(messages, [], 100)
    with pytest.raises(WeakLabelError):
        train(dataset, parse_corpus(messages).sequences, tiny_model_config)


@pytest.mark.unit
def test_divergence_keeps_the_last_good_state(tiny_model_config):
    messages, dataset = _toy_corpus()
    parsed = parse_corpus(messages)
    cfg = dataclasses.replace(tiny_model_config, learning_rate=1e30, epochs=50)
    with pytest.raises(TrainingDivergedError) as info:
        train(dataset, parsed.sequences, cfg)
    if info.value.epoch > 0:
        state = info.value.last_good_state
        assert set(state) == {"encoder", "optimizer"}
        assert all(torch.isfinite(t).all() for t in state["encoder"].values())


@pytest.mark.unit
def test_checkpoint_and_scores(tmpdir, tiny_model_config):
    messages, dataset = _toy_corpus()
    parsed = parse_corpus(messages)
    model, _ = train(dataset, parsed.sequences, tiny_model_config)

    path = tmpdir.join("model.pt")
    save_checkpoint(model, str(path), {"tool": "loglab-toolkit", "seed": 42})
    restored = load_checkpoint(str(path))
    assert restored.config == model.config
    assert restored.vocab.tokens == model.vocab.tokens
    assert restored.q == model.q
    assert restored.epoch_losses == model.epoch_losses
    assert [s.z_norm for s in score_lines(restored, parsed.sequences)] == [
        s.z_norm for s in score_lines(model, parsed.sequences)
    ]

    out = tmpdir.join("scores.csv")
    write_scores(score_lines(model, parsed.sequences[:3]), str(out), "# provenance")
    lines = out.read().splitlines()
    assert lines[:2] == ["# provenance", "index,z_norm,label"]
    index, z_norm, label = lines[2].split(",")
    assert index == "0"
    assert float(z_norm) >= 0
    assert label in ("Normal", "Abnormal")

    with pytest.raises(DataError):
        load_checkpoint(str(tmpdir.join("missing.pt")))
    torch.save({"format_version": 99}, str(tmpdir.join("future.pt")))
    with pytest.raises(DataError):
        load_checkpoint(str(tmpdir.join("future.pt")))


@pytest.mark.integration
def test_end_to_end_on_a_synthetic_corpus():
    messages, _ = generate_synthetic(SyntheticSpec.default(n_lines=50000, anomaly_rate=0.05, seed=0))
    parsed = parse_corpus(messages)
    dataset = assign_pu_labels(messages, failures_from_truth(messages), 1000)

    model, losses = train(dataset, parsed.sequences, ModelConfig(epochs=4))
    assert losses[-1] < losses[0]

    scores = score_lines(model, parsed.sequences)
    report = evaluate_labels([m.truth for m in messages], labels_by_index(scores, messages))
    assert report.f1 >= 0.95
