"""Post encoders: a small trainable transformer and a precomputed store.

The trainable path is a pre-norm transformer encoder over token ids: token
plus learned positional embeddings, multi-head self-attention with the
padding mask applied to keys, a tanh feed-forward block, residuals around
both, a final layer norm, then masked mean pooling over non-pad positions.
It is a shape-compatible stand-in for a large pretrained sentence encoder;
the precomputed path loads such embeddings from disk instead (SEMB1 files).
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import ConfigError, DegenerateInputError, FormatError, UnknownAuthorError


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int | None = None
    max_post_len: int = 32
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.vocab_size < 8:
            raise ConfigError(f"vocab_size must cover the reserved ids, got {self.vocab_size}")
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1 or self.d_ff < 1:
            raise ConfigError("encoder dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.max_post_len < 1:
            raise ConfigError(f"max_post_len must be >= 1, got {self.max_post_len}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")


class ToyEncoder:
    """Trainable pre-norm transformer encoder producing one vector per post."""

    def __init__(self, config: EncoderConfig, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        c = config
        scale = 0.02
        self.tok = Parameter(
            rng.normal(0.0, scale, size=(c.vocab_size, c.d_model)).astype(dtype), "enc.tok")
        self.pos = Parameter(
            rng.normal(0.0, scale, size=(c.max_post_len, c.d_model)).astype(dtype), "enc.pos")
        self.layers = []
        for i in range(c.n_layers):
            p = f"enc.layer{i}."
            layer = {
                "ln1_gain": Parameter(np.ones(c.d_model, dtype=dtype), p + "ln1_gain"),
                "ln1_bias": Parameter(np.zeros(c.d_model, dtype=dtype), p + "ln1_bias"),
                "wq": Parameter(ag.glorot_init(rng, c.d_model, c.d_model, dtype=dtype), p + "wq"),
                "wk": Parameter(ag.glorot_init(rng, c.d_model, c.d_model, dtype=dtype), p + "wk"),
                "wv": Parameter(ag.glorot_init(rng, c.d_model, c.d_model, dtype=dtype), p + "wv"),
                "wo": Parameter(ag.glorot_init(rng, c.d_model, c.d_model, dtype=dtype), p + "wo"),
                "ln2_gain": Parameter(np.ones(c.d_model, dtype=dtype), p + "ln2_gain"),
                "ln2_bias": Parameter(np.zeros(c.d_model, dtype=dtype), p + "ln2_bias"),
                "w1": Parameter(ag.glorot_init(rng, c.d_model, c.d_ff, dtype=dtype), p + "w1"),
                "b1": Parameter(np.zeros(c.d_ff, dtype=dtype), p + "b1"),
                "w2": Parameter(ag.glorot_init(rng, c.d_ff, c.d_model, dtype=dtype), p + "w2"),
                "b2": Parameter(np.zeros(c.d_model, dtype=dtype), p + "b2"),
            }
            self.layers.append(layer)
        self.final_gain = Parameter(np.ones(c.d_model, dtype=dtype), "enc.final_gain")
        self.final_bias = Parameter(np.zeros(c.d_model, dtype=dtype), "enc.final_bias")

    def parameters(self):
        params = [self.tok, self.pos]
        for layer in self.layers:
            params.extend(layer.values())
        params.extend([self.final_gain, self.final_bias])
        return params

    def encode_post(self, token_ids, attention_mask, training=False, rng=None):
        """Encode one post; returns (pooled Tensor[d], last-layer attention).

        The attention array has shape (n_heads, L, L) and is detached from
        the graph; rows at padded query positions are zero.
        """
        c = self.config
        ids = np.asarray(token_ids, dtype=np.int64)
        mask = np.asarray(attention_mask, dtype=np.float64)
        if ids.ndim != 1 or ids.shape != mask.shape:
            raise ConfigError("token_ids and attention_mask must be equal-length 1-D")
        length = ids.shape[0]
        if length > c.max_post_len:
            raise ConfigError(
                f"post length {length} exceeds max_post_len {c.max_post_len}")
        if mask.sum() == 0:
            raise DegenerateInputError("post has no unmasked tokens")

        h = ag.add(ag.gather_rows(self.tok, ids),
                   ag.gather_rows(self.pos, np.arange(length)))
        # every query row sees the same key mask
        key_mask = np.repeat(mask.reshape(1, length), length, axis=0)
        dk = c.d_model // c.n_heads
        inv_sqrt_dk = 1.0 / float(np.sqrt(dk))
        last_attn = None
        for layer in self.layers:
            hn = ag.layer_norm(h, layer["ln1_gain"], layer["ln1_bias"])
            q = ag.matmul(hn, layer["wq"])
            k = ag.matmul(hn, layer["wk"])
            v = ag.matmul(hn, layer["wv"])
            head_outs = []
            head_attns = []
            for hd in range(c.n_heads):
                lo, hi = hd * dk, (hd + 1) * dk
                qh = ag.slice_cols(q, lo, hi)
                kh = ag.slice_cols(k, lo, hi)
                vh = ag.slice_cols(v, lo, hi)
                logits = ag.scale(ag.matmul(qh, ag.transpose(kh)), inv_sqrt_dk)
                attn = ag.masked_row_softmax(logits, key_mask)
                head_attns.append(attn)
                head_outs.append(ag.matmul(attn, vh))
            mixed = ag.matmul(ag.concat_cols(head_outs), layer["wo"])
            mixed = ag.dropout(mixed, c.dropout_p, rng, training)
            h = ag.add(h, mixed)
            hn2 = ag.layer_norm(h, layer["ln2_gain"], layer["ln2_bias"])
            ff = ag.add_bias(ag.matmul(hn2, layer["w1"]), layer["b1"])
            ff = ag.add_bias(ag.matmul(ag.tanh(ff), layer["w2"]), layer["b2"])
            ff = ag.dropout(ff, c.dropout_p, rng, training)
            h = ag.add(h, ff)
            last_attn = head_attns
        h = ag.layer_norm(h, self.final_gain, self.final_bias)
        pooled = ag.masked_mean(h, mask)
        attn_stack = np.stack([a.data.copy() for a in last_attn], axis=0)
        # zero attention rows for padded queries: they carry no signal
        attn_stack[:, mask == 0, :] = 0.0
        return pooled, attn_stack


@dataclass
class PostMatrix:
    """Per-author stack of post embeddings plus explanation side-channels."""
    author_id: str
    matrix: Tensor
    post_masks: list | None = None
    token_attentions: list | None = None


def encode_profile(encoder: ToyEncoder, profile, training=False, rng=None) -> PostMatrix:
    """Stack one embedding row per post of the profile, in feed order."""
    rows = []
    attentions = []
    masks = []
    for post in profile.posts:
        pooled, attn = encoder.encode_post(post.token_ids, post.attention_mask,
                                           training=training, rng=rng)
        rows.append(pooled)
        attentions.append(attn)
        masks.append(list(post.attention_mask))
    return PostMatrix(author_id=profile.author_id,
                      matrix=ag.stack_rows(rows),
                      post_masks=masks,
                      token_attentions=attentions)


class PrecomputedEmbeddingStore:
    """Maps author ids to fixed float32 post-embedding matrices (n_posts, d)."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ConfigError(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self._matrices: dict[str, np.ndarray] = {}

    def add(self, author_id: str, matrix):
        arr = np.ascontiguousarray(matrix, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise ConfigError(
                f"embedding matrix for {author_id} must be (n_posts, {self.dim}), "
                f"got {arr.shape}")
        if arr.shape[0] == 0:
            raise ConfigError(f"embedding matrix for {author_id} has zero posts")
        if author_id in self._matrices:
            raise ConfigError(f"duplicate embeddings for author {author_id}")
        self._matrices[author_id] = arr

    def matrix(self, author_id: str) -> np.ndarray:
        if author_id not in self._matrices:
            raise UnknownAuthorError(f"no precomputed embeddings for author {author_id}")
        return self._matrices[author_id]

    def author_ids(self):
        return list(self._matrices)

    def post_matrix(self, author_id: str) -> PostMatrix:
        return PostMatrix(author_id=author_id, matrix=Tensor(self.matrix(author_id)))

    def __contains__(self, author_id):
        return author_id in self._matrices

    def __len__(self):
        return len(self._matrices)


# ---------------------------------------------------------------------------
# SEMB1 container: little-endian, magic "SEMB", version 1
#
#   magic   4 bytes  b"SEMB"
#   version u32      1
#   dim     u32
#   count   u32      number of authors
#   per author:
#     id_len u32, id utf-8 bytes, n_posts u32, n_posts*dim float32 values
# ---------------------------------------------------------------------------

_MAGIC = b"SEMB"


def save_embeddings(store: PrecomputedEmbeddingStore, path) -> None:
    parts = [_MAGIC, struct.pack("<III", 1, store.dim, len(store))]
    for author_id in store.author_ids():
        ident = author_id.encode("utf-8")
        arr = store.matrix(author_id)
        parts.append(struct.pack("<I", len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<I", arr.shape[0]))
        parts.append(arr.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated while reading {what} at byte {self.offset}")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_embeddings(path) -> PrecomputedEmbeddingStore:
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(4, "magic") != _MAGIC:
        raise FormatError(f"{path}: bad magic, not an SEMB1 file")
    version = r.u32("version")
    if version != 1:
        raise FormatError(f"{path}: unsupported SEMB version {version}")
    dim = r.u32("dim")
    if dim < 1:
        raise FormatError(f"{path}: non-positive embedding dim {dim}")
    count = r.u32("author count")
    store = PrecomputedEmbeddingStore(dim)
    for _ in range(count):
        id_len = r.u32("author id length")
        try:
            author_id = r.take(id_len, "author id").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: author id is not valid UTF-8") from exc
        n_posts = r.u32("post count")
        if n_posts < 1:
            raise FormatError(f"{path}: author {author_id} has zero posts")
        raw = r.take(n_posts * dim * 4, f"embeddings of {author_id}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(n_posts, dim)
        try:
            store.add(author_id, arr)
        except ConfigError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if r.offset != len(blob):
        raise FormatError(
            f"{path}: {len(blob) - r.offset} trailing bytes after byte {r.offset}")
    return store
