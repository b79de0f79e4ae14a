import pytest

from loglab.ingest import LogMessage, SyntheticSpec, Truth
from loglab.pumodel import ModelConfig

# small encoder: trains in seconds on CPU
TINY_MODEL = dict(
    max_len=10,
    embed_dim=16,
    hidden_dim=32,
    n_layers=1,
    n_heads=2,
    dropout_rate=0.0,
    batch_size=64,
    epochs=2,
    learning_rate=1e-3,
    weight_decay=0.0,
)


def make_messages(rows: list[tuple[int, str, str | None]], source: str = "node1") -> list[LogMessage]:
    """Builds a corpus from (timestamp_ms, content, truth) rows; truth is 'N', 'A' or None."""
    truth_of = {"N": Truth.NORMAL, "A": Truth.ABNORMAL, None: None}
    return [LogMessage(i, ts, source, content, truth_of[t]) for i, (ts, content, t) in enumerate(rows)]


@pytest.fixture
def tiny_model_config():
    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def sample_lines():
    return make_messages(
        [
            (1000, "Start mail service at node wally001", "N"),
            (2000, "Start printer service at node wally005", "N"),
        ]
    )


@pytest.fixture
def small_synthetic_spec():
    return SyntheticSpec.default(n_lines=1000, anomaly_rate=0.05, seed=7)
