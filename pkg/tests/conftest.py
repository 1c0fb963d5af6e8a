import numpy as np
import pytest

from riskmt.model import ModelConfig, Seq2Seq, Vocab


def toy_model(n_words=8, embed_dim=8, hidden_dim=8, max_len=8, seed=0, init_scale=0.5):
    """Random model over words w0..w{n-1}; a bigger init scale keeps outputs peaked."""
    vocab = Vocab([f"w{i}" for i in range(n_words)])
    cfg = ModelConfig(len(vocab), embed_dim, hidden_dim, max_len=max_len, seed=seed,
                      init_scale=init_scale)
    return Seq2Seq(cfg, vocab)


def max_relative_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def model():
    return toy_model()
