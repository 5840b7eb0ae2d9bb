"""Post-level attention over an author's stack of post embeddings.

Given the author's post matrix P (n_posts, d), a learned linear map
produces projected posts

    Q = P W + b            (W is d x d, b broadcast over rows)

and the attended representation is

    A = row_softmax(P Q^T)
    attended = A Q

Row i of A says how much post i draws from every other post; averaging the
rows of ``attended`` yields the author vector. The column means of A serve
as per-post importance weights for explanations. No scaling factor is
applied to the logits here; the feed length is small and the unscaled form
keeps the weights directly interpretable.
"""

from enum import Enum

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import ConfigError


class PoolingMode(str, Enum):
    ATTENTION = "attention"
    MEAN = "mean"


class PostAttention:
    """Learned projection + post-over-post attention for one author feed."""

    def __init__(self, dim: int, rng, dtype=np.float32):
        if dim < 1:
            raise ConfigError(f"attention dim must be positive, got {dim}")
        self.dim = dim
        self.weight = Parameter(ag.glorot_init(rng, dim, dim, dtype=dtype), "head.weight")
        self.bias = Parameter(np.zeros(dim, dtype=dtype), "head.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def project(self, post_matrix: Tensor) -> Tensor:
        """Linear map of every post embedding: P W + b."""
        if post_matrix.data.ndim != 2 or post_matrix.data.shape[1] != self.dim:
            raise ConfigError(
                f"post matrix must be (n_posts, {self.dim}), got {post_matrix.data.shape}")
        return ag.add_bias(ag.matmul(post_matrix, self.weight), self.bias)


def attend(post_matrix: Tensor, projected: Tensor):
    """Row-softmax attention of posts over projected posts.

    Returns (attended, weights) where attended = softmax(P Q^T) Q and
    weights is the (n_posts, n_posts) attention matrix Tensor.
    """
    logits = ag.matmul(post_matrix, ag.transpose(projected))
    weights = ag.masked_row_softmax(logits)
    return ag.matmul(weights, projected), weights


def reduce_posts(attended: Tensor) -> Tensor:
    """Author vector: mean over the attended post rows."""
    return ag.mean_rows(attended)


def post_weights(weights: Tensor) -> np.ndarray:
    """Per-post importance: column means of the attention matrix.

    Column j averages how much every post attends to post j; the result is
    non-negative and sums to 1.
    """
    return weights.data.mean(axis=0).copy()


def mean_pool_profile(post_matrix: Tensor) -> Tensor:
    """Ablation pooling: plain mean of post embeddings, no attention."""
    return ag.mean_rows(post_matrix)


def pool_profile(head: PostAttention, post_matrix: Tensor, mode: PoolingMode):
    """Compose projection, attention and reduction for one author.

    Returns (author_vector, attention_weights); weights is None in MEAN mode.
    """
    if mode == PoolingMode.MEAN:
        return mean_pool_profile(post_matrix), None
    projected = head.project(post_matrix)
    attended, weights = attend(post_matrix, projected)
    return reduce_posts(attended), weights
