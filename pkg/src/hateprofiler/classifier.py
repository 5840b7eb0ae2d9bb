"""Two-layer tanh classifier over the author vector.

logits = tanh(dropout(v) W1 + b1) W2 + b2, with two output logits
(0 = normal, 1 = spreader). Probabilities come from a softmax over the
logits; prediction is the argmax with ties resolved to the negative class.
"""

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import ConfigError


class ClassifierHead:
    def __init__(self, dim: int, hidden: int | None = None, dropout_p: float = 0.1,
                 rng=None, dtype=np.float32):
        if dim < 1:
            raise ConfigError(f"classifier input dim must be positive, got {dim}")
        hidden = dim if hidden is None else hidden
        if hidden < 1:
            raise ConfigError(f"classifier hidden dim must be positive, got {hidden}")
        if not 0.0 <= dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {dropout_p}")
        self.dim = dim
        self.hidden = hidden
        self.dropout_p = dropout_p
        self.w1 = Parameter(ag.glorot_init(rng, dim, hidden, dtype=dtype), "clf.w1")
        self.b1 = Parameter(np.zeros(hidden, dtype=dtype), "clf.b1")
        self.w2 = Parameter(ag.glorot_init(rng, hidden, 2, dtype=dtype), "clf.w2")
        self.b2 = Parameter(np.zeros(2, dtype=dtype), "clf.b2")

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


def classify(head: ClassifierHead, author_vector: Tensor, training=False, rng=None):
    """Forward pass; returns (logits Tensor shape (2,), probs ndarray).

    The probabilities are detached: training losses differentiate the
    logits, not the softmax output.
    """
    if author_vector.data.ndim != 1 or author_vector.data.shape[0] != head.dim:
        raise ConfigError(
            f"author vector must have shape ({head.dim},), got {author_vector.data.shape}")
    x = ag.dropout(author_vector, head.dropout_p, rng, training)
    x = ag.reshape(x, (1, head.dim))
    h = ag.tanh(ag.add_bias(ag.matmul(x, head.w1), head.b1))
    logits = ag.reshape(ag.add_bias(ag.matmul(h, head.w2), head.b2), (2,))
    z = logits.data.astype(np.float64)
    z = z - z.max()
    e = np.exp(z)
    probs = e / e.sum()
    return logits, probs


def loss(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy between the logits and the integer label."""
    return ag.softmax_cross_entropy(logits, label)


def predict(probs) -> int:
    """Argmax label; an exact tie goes to the negative class 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (2,):
        raise ConfigError(f"probs must have shape (2,), got {p.shape}")
    return 1 if p[1] > p[0] else 0
