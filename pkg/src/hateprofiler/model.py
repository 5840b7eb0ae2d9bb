"""Full author classifier: encoder -> post attention -> classifier head.

Also defines the on-disk model bundle (HSPB1) that captures everything a
prediction needs: configuration, vocabulary, fold provenance and all
parameter arrays, serialized exactly so that save -> load round-trips
bit for bit.
"""

import json
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from .attention import PoolingMode, PostAttention, pool_profile, post_weights
from .autograd import Tensor
from .classifier import ClassifierHead, classify, predict
from .corpus import Vocabulary
from .encoder import EncoderConfig, PostMatrix, ToyEncoder, encode_profile
from .errors import ConfigError, FormatError

TOY, PRECOMPUTED = "toy", "precomputed"
PER_POST, JOINED = "per-post", "joined"


@dataclass
class ModelConfig:
    encoder_mode: str = TOY
    pooling: PoolingMode = PoolingMode.ATTENTION
    encoder: EncoderConfig | None = None
    embedding_dim: int | None = None
    classifier_hidden: int | None = None
    classifier_dropout: float = 0.1
    baseline: str = PER_POST

    def __post_init__(self):
        if isinstance(self.pooling, str) and not isinstance(self.pooling, PoolingMode):
            self.pooling = PoolingMode(self.pooling)
        if self.encoder_mode == TOY:
            if self.encoder is None:
                raise ConfigError("toy encoder mode requires an encoder config")
        elif self.encoder_mode == PRECOMPUTED:
            if self.embedding_dim is None or self.embedding_dim < 1:
                raise ConfigError("precomputed mode requires a positive embedding_dim")
        else:
            raise ConfigError(f"unknown encoder_mode: {self.encoder_mode!r}")
        if self.baseline not in (PER_POST, JOINED):
            raise ConfigError(f"unknown baseline: {self.baseline!r}")

    @property
    def dim(self) -> int:
        return self.encoder.d_model if self.encoder_mode == TOY else self.embedding_dim

    def to_dict(self) -> dict:
        return {
            "encoder_mode": self.encoder_mode,
            "pooling": self.pooling.value,
            "encoder": asdict(self.encoder) if self.encoder is not None else None,
            "embedding_dim": self.embedding_dim,
            "classifier_hidden": self.classifier_hidden,
            "classifier_dropout": self.classifier_dropout,
            "baseline": self.baseline,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        encoder = EncoderConfig(**d["encoder"]) if d.get("encoder") else None
        return cls(
            encoder_mode=d["encoder_mode"],
            pooling=PoolingMode(d["pooling"]),
            encoder=encoder,
            embedding_dim=d.get("embedding_dim"),
            classifier_hidden=d.get("classifier_hidden"),
            classifier_dropout=d.get("classifier_dropout", 0.1),
            baseline=d.get("baseline", PER_POST),
        )


@dataclass
class ForwardResult:
    author_id: str
    logits: Tensor
    probs: np.ndarray
    prediction: int
    attention: np.ndarray | None = None
    post_importance: np.ndarray | None = None
    token_attentions: list | None = None
    post_masks: list | None = None


class SpreaderModel:
    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.encoder = (ToyEncoder(config.encoder, rng, dtype=dtype)
                        if config.encoder_mode == TOY else None)
        self.head = PostAttention(config.dim, rng, dtype=dtype)
        self.clf = ClassifierHead(config.dim, hidden=config.classifier_hidden,
                                  dropout_p=config.classifier_dropout, rng=rng, dtype=dtype)

    def parameters(self):
        params = []
        if self.encoder is not None:
            params.extend(self.encoder.parameters())
        params.extend(self.head.parameters())
        params.extend(self.clf.parameters())
        return params

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def freeze_encoder(self):
        if self.encoder is not None:
            for p in self.encoder.parameters():
                p.requires_grad = False

    def post_matrix_for(self, profile, store=None, training=False, rng=None) -> PostMatrix:
        if self.config.encoder_mode == TOY:
            return encode_profile(self.encoder, profile, training=training, rng=rng)
        if store is None:
            raise ConfigError("precomputed encoder mode requires an embedding store")
        if store.dim != self.config.dim:
            raise ConfigError(
                f"embedding store dim {store.dim} != model dim {self.config.dim}")
        return store.post_matrix(profile.author_id)

    def forward(self, profile, store=None, training=False, rng=None) -> ForwardResult:
        pm = self.post_matrix_for(profile, store=store, training=training, rng=rng)
        author_vec, weights = pool_profile(self.head, pm.matrix, self.config.pooling)
        logits, probs = classify(self.clf, author_vec, training=training, rng=rng)
        attention = weights.data.copy() if weights is not None else None
        importance = post_weights(weights) if weights is not None else None
        return ForwardResult(
            author_id=profile.author_id,
            logits=logits,
            probs=probs,
            prediction=predict(probs),
            attention=attention,
            post_importance=importance,
            token_attentions=pm.token_attentions,
            post_masks=pm.post_masks,
        )


# ---------------------------------------------------------------------------
# model bundle: HSPB1 container
#
#   magic      4 bytes  b"HSPB"
#   version    u32      1
#   header_len u32
#   header     UTF-8 JSON: config, vocab tokens, seed, fold index and the
#              ordered list of {name, shape} parameter descriptors
#   blocks     raw little-endian float32 data, one block per descriptor
# ---------------------------------------------------------------------------

_BUNDLE_MAGIC = b"HSPB"


@dataclass
class ModelBundle:
    config: ModelConfig
    vocab_tokens: list | None
    seed: int
    fold_index: int
    params: dict

    @property
    def bundle_id(self) -> str:
        return f"fold{self.fold_index}-seed{self.seed}"

    @classmethod
    def from_model(cls, model: SpreaderModel, vocab: Vocabulary | None,
                   seed: int, fold_index: int) -> "ModelBundle":
        params = {}
        for p in model.parameters():
            if p.name in params:
                raise ConfigError(f"duplicate parameter name: {p.name}")
            params[p.name] = p.data.astype(np.float32, copy=True)
        tokens = vocab.non_reserved_tokens() if vocab is not None else None
        return cls(config=model.config, vocab_tokens=tokens,
                   seed=seed, fold_index=fold_index, params=params)

    def to_model(self):
        """Rebuild (model, vocab); parameter arrays are copied in exactly."""
        model = SpreaderModel(self.config, np.random.default_rng(0), dtype=np.float32)
        expected = [p.name for p in model.parameters()]
        if expected != list(self.params):
            raise FormatError("bundle parameters do not match the model architecture")
        for p in model.parameters():
            stored = self.params[p.name]
            if stored.shape != p.data.shape:
                raise FormatError(
                    f"parameter {p.name}: bundle shape {stored.shape} != "
                    f"model shape {p.data.shape}")
            p.data = stored.astype(np.float32, copy=True)
            p.grad = np.zeros_like(p.data)
        vocab = Vocabulary(self.vocab_tokens) if self.vocab_tokens is not None else None
        return model, vocab

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return (
            self.config.to_dict() == other.config.to_dict()
            and self.vocab_tokens == other.vocab_tokens
            and self.seed == other.seed
            and self.fold_index == other.fold_index
            and list(self.params) == list(other.params)
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        )


def save_bundle(bundle: ModelBundle, path) -> None:
    header = {
        "config": bundle.config.to_dict(),
        "vocab_tokens": bundle.vocab_tokens,
        "seed": bundle.seed,
        "fold_index": bundle.fold_index,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in bundle.params.items()],
    }
    head = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    parts = [_BUNDLE_MAGIC, struct.pack("<II", 1, len(head)), head]
    for arr in bundle.params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_bundle(path) -> ModelBundle:
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise FormatError(f"{path}: too short to be a model bundle")
    if blob[:4] != _BUNDLE_MAGIC:
        raise FormatError(f"{path}: bad magic, not an HSPB1 bundle")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != 1:
        raise FormatError(f"{path}: unsupported bundle version {version}")
    if 12 + header_len > len(blob):
        raise FormatError(f"{path}: truncated header at byte 12")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed bundle header: {exc}") from exc
    try:
        config = ModelConfig.from_dict(header["config"])
        vocab_tokens = header["vocab_tokens"]
        seed = int(header["seed"])
        fold_index = int(header["fold_index"])
        descriptors = [(str(d["name"]), tuple(int(s) for s in d["shape"]))
                       for d in header["params"]]
        if any(s < 0 for _, shape in descriptors for s in shape):
            raise ValueError("negative dimension in parameter shape")
    except (KeyError, TypeError, ValueError, AttributeError, ConfigError) as exc:
        raise FormatError(f"{path}: invalid bundle header: {exc}") from exc
    offset = 12 + header_len
    params = {}
    for name, shape in descriptors:
        count = math.prod(shape)
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise FormatError(
                f"{path}: truncated while reading parameter {name} at byte {offset}")
        params[name] = np.frombuffer(
            blob[offset:offset + nbytes], dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after byte {offset}")
    return ModelBundle(config=config, vocab_tokens=vocab_tokens, seed=seed,
                       fold_index=fold_index, params=params)


# ---------------------------------------------------------------------------
# finite-difference gradient suite
# ---------------------------------------------------------------------------

def _tiny_model(seed: int):
    config = ModelConfig(
        encoder_mode=TOY,
        pooling=PoolingMode.ATTENTION,
        encoder=EncoderConfig(vocab_size=12, d_model=8, n_layers=1, n_heads=2,
                              d_ff=16, max_post_len=6, dropout_p=0.0),
        classifier_hidden=5,
        classifier_dropout=0.0,
    )
    return SpreaderModel(config, np.random.default_rng(seed), dtype=np.float64)


def _op_checks():
    """(name, builder) pairs; builder(seed) -> (loss_fn, params)."""

    def P(rng, *shape, name):
        return ag.Parameter(rng.standard_normal(shape), name)

    def matmul_chain(seed):
        rng = np.random.default_rng(seed)
        a, b = P(rng, 3, 4, name="a"), P(rng, 4, 2, name="b")
        return lambda: ag.sum_all(ag.tanh(ag.matmul(a, b))), [a, b]

    def transpose_mix(seed):
        rng = np.random.default_rng(seed)
        a, b = P(rng, 3, 4, name="a"), P(rng, 3, 4, name="b")
        return lambda: ag.sum_all(ag.matmul(a, ag.transpose(b))), [a, b]

    def add_pair(seed):
        rng = np.random.default_rng(seed)
        a, b = P(rng, 4, 3, name="a"), P(rng, 4, 3, name="b")
        return lambda: ag.sum_all(ag.tanh(ag.add(a, b))), [a, b]

    def bias_rows(seed):
        rng = np.random.default_rng(seed)
        a, b = P(rng, 4, 3, name="a"), P(rng, 3, name="b")
        return lambda: ag.sum_all(ag.tanh(ag.add_bias(a, b))), [a, b]

    def scale_tanh(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 5, 3, name="a")
        return lambda: ag.sum_all(ag.tanh(ag.scale(a, 0.37))), [a]

    def softmax_plain(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 4, 5, name="a")
        w = ag.Tensor(np.random.default_rng(seed + 9999).standard_normal((4, 5)))
        return lambda: ag.sum_all(ag.mul_elem(ag.masked_row_softmax(a), w)), [a]

    def softmax_masked(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 4, 5, name="a")
        mask = np.array([[1, 1, 0, 1, 0]] * 4, dtype=np.float64)
        w = ag.Tensor(np.random.default_rng(seed + 9999).standard_normal((4, 5)))
        return lambda: ag.sum_all(ag.mul_elem(ag.masked_row_softmax(a, mask), w)), [a]

    def rows_mean(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 5, 4, name="a")
        w = ag.Tensor(np.random.default_rng(seed + 9999).standard_normal(4))
        return lambda: ag.sum_all(ag.mul_elem(ag.mean_rows(ag.tanh(a)), w)), [a]

    def mean_masked(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 5, 4, name="a")
        mask = np.array([1, 0, 1, 1, 0], dtype=np.float64)
        return lambda: ag.sum_all(ag.tanh(ag.masked_mean(a, mask))), [a]

    def gather(seed):
        rng = np.random.default_rng(seed)
        table = P(rng, 6, 3, name="table")
        ids = np.array([0, 2, 2, 5])
        return lambda: ag.sum_all(ag.tanh(ag.gather_rows(table, ids))), [table]

    def stack(seed):
        rng = np.random.default_rng(seed)
        a, b, c = P(rng, 4, name="a"), P(rng, 4, name="b"), P(rng, 4, name="c")
        return lambda: ag.sum_all(ag.tanh(ag.stack_rows([a, b, c]))), [a, b, c]

    def slice_concat(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 3, 6, name="a")

        def f():
            left = ag.slice_cols(a, 0, 2)
            right = ag.slice_cols(a, 2, 6)
            return ag.sum_all(ag.tanh(ag.concat_cols([ag.matmul(left, ag.transpose(left)),
                                                      ag.matmul(right, ag.transpose(right))])))
        return f, [a]

    def reshape_flat(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 2, 6, name="a")
        return lambda: ag.sum_all(ag.tanh(ag.reshape(a, (3, 4)))), [a]

    def norm_rows(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 4, 6, name="a")
        gain = P(rng, 6, name="gain")
        bias = P(rng, 6, name="bias")
        w = ag.Tensor(np.random.default_rng(seed + 9999).standard_normal((4, 6)))
        return (lambda: ag.sum_all(ag.mul_elem(ag.layer_norm(a, gain, bias), w)),
                [a, gain, bias])

    def xent(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 3, 2, name="a")
        v = ag.Tensor(np.random.default_rng(seed + 9999).standard_normal(3))

        def f():
            logits = ag.reshape(ag.matmul(ag.reshape(v, (1, 3)), a), (2,))
            return ag.softmax_cross_entropy(logits, 1)
        return f, [a]

    def drop(seed):
        rng = np.random.default_rng(seed)
        a = P(rng, 5, 4, name="a")

        def f():
            # fresh generator per evaluation keeps the mask fixed
            drop_rng = np.random.default_rng(314159)
            return ag.sum_all(ag.tanh(ag.dropout(a, 0.35, drop_rng, training=True)))
        return f, [a]

    def attention_head(seed):
        rng = np.random.default_rng(seed)
        head = PostAttention(4, rng, dtype=np.float64)
        pm = P(rng, 5, 4, name="pm")

        def f():
            vec, _ = pool_profile(head, pm, PoolingMode.ATTENTION)
            return ag.sum_all(ag.tanh(vec))
        return f, [pm, head.weight, head.bias]

    def classifier_head(seed):
        rng = np.random.default_rng(seed)
        clf = ClassifierHead(4, hidden=3, dropout_p=0.0, rng=rng, dtype=np.float64)
        v = P(rng, 4, name="v")

        def f():
            logits, _ = classify(clf, v)
            return ag.softmax_cross_entropy(logits, 0)
        return f, [v] + clf.parameters()

    return [
        ("matmul", matmul_chain),
        ("transpose", transpose_mix),
        ("add", add_pair),
        ("add_bias", bias_rows),
        ("scale", scale_tanh),
        ("softmax", softmax_plain),
        ("softmax_masked", softmax_masked),
        ("mean_rows", rows_mean),
        ("masked_mean", mean_masked),
        ("gather_rows", gather),
        ("stack_rows", stack),
        ("slice_concat", slice_concat),
        ("reshape", reshape_flat),
        ("layer_norm", norm_rows),
        ("cross_entropy", xent),
        ("dropout", drop),
        ("attention_head", attention_head),
        ("classifier_head", classifier_head),
    ]


def _full_model_check(seed):
    from .corpus import AuthorProfile, Post

    model = _tiny_model(seed)
    for p in model.parameters():
        p.data = p.data.astype(np.float64)
        p.grad = np.zeros_like(p.data)
    rng = np.random.default_rng(seed + 77)
    posts = []
    for _ in range(3):
        length = int(rng.integers(2, 6))
        ids = rng.integers(1, 12, size=length).tolist()
        pad = 6 - length
        posts.append(Post("", "", [], ids + [0] * pad, [1] * length + [0] * pad))
    profile = AuthorProfile("a1", "en", posts, label=1)

    def f():
        res = model.forward(profile)
        return ag.softmax_cross_entropy(res.logits, 1)
    return f, model.parameters()


def gradcheck_suite(base_seed=0, seeds_per_op=3, h=1e-5, tol=1e-4,
                    model_coords_per_param=4):
    """Finite-difference checks for every op and the full composition.

    Returns a list of (name, GradCheckReport), one per (op, seed) pair;
    seeds are distinct across the whole suite.
    """
    results = []
    for i, (name, builder) in enumerate(_op_checks()):
        for j in range(seeds_per_op):
            seed = base_seed + 1000 * (i + 1) + j
            f, params = builder(seed)
            report = ag.grad_check(f, params, h=h, tol=tol)
            results.append((f"{name}[seed={seed}]", report))
    for j in range(seeds_per_op):
        seed = base_seed + 900000 + j
        f, params = _full_model_check(seed)
        report = ag.grad_check(f, params, h=h, tol=tol,
                               coords_per_param=model_coords_per_param,
                               rng=np.random.default_rng(seed))
        results.append((f"full_model[seed={seed}]", report))
    return results
