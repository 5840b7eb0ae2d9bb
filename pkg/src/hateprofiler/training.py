"""Training loop, stratified cross-validation, ensembling and metrics.

Optimization is AdamW with decoupled weight decay. Cross-validation folds
are stratified per (language, label) cell so every validation fold keeps
the class balance of each language; batches mix languages freely. All
randomness (shuffles, dropout, initialization) flows from seeded
generators, so a repeated run with the same seed is byte-identical.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import kernels
from .errors import ConfigError, DimensionError, InputError, TrainingDivergedError
from .model import ModelBundle, SpreaderModel

logger = logging.getLogger("hateprofiler")


@dataclass
class Hyperparams:
    learning_rate: float = 1e-5
    batch_size: int = 2
    epochs: int = 5
    folds: int = 5
    weight_decay: float = 0.01
    seed: int = 1234
    freeze_encoder: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in (0, 1), got ({self.beta1}, {self.beta2})")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

def adamw_step(params, grads, state=None, *, lr, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=0.0):
    """One in-place AdamW update over matching parameter/gradient lists.

    ``state`` carries the step counter and first/second moment buffers; pass
    the returned state back in on the next call. Decay is decoupled: the
    parameter shrinks by lr*weight_decay before the moment-based step.
    """
    arrays = [p.data if isinstance(p, ag.Tensor) else p for p in params]
    if len(arrays) != len(grads):
        raise DimensionError(f"{len(arrays)} params vs {len(grads)} grads")
    for a, g in zip(arrays, grads):
        if g is None or np.shape(g) != a.shape:
            raise DimensionError(
                f"gradient shape {np.shape(g) if g is not None else None} "
                f"does not match parameter shape {a.shape}")
    if state is None:
        state = {"step": 0,
                 "m": [np.zeros_like(a) for a in arrays],
                 "v": [np.zeros_like(a) for a in arrays]}
    state["step"] += 1
    t = state["step"]
    beta1, beta2 = betas
    for a, g, m, v in zip(arrays, grads, state["m"], state["v"]):
        kernels.adamw_update(a, np.ascontiguousarray(g, dtype=a.dtype), m, v,
                             t, lr, beta1, beta2, eps, weight_decay)
    return state


class AdamW:
    """Stateful wrapper around :func:`adamw_step` for a parameter list."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        if not self.params:
            raise ConfigError("optimizer needs at least one parameter")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = None

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [p.grad for p in self.params]
        self.state = adamw_step(self.params, grads, self.state, lr=self.lr,
                                betas=self.betas, eps=self.eps,
                                weight_decay=self.weight_decay)


# ---------------------------------------------------------------------------
# stratified k-fold
# ---------------------------------------------------------------------------

@dataclass
class FoldSplit:
    index: int
    train_ids: list
    val_ids: list


def stratified_kfold(corpus, k, seed):
    """Split author ids into k folds, stratified per (language, label) cell.

    Within every language the class counts of each validation fold differ by
    at most one from perfect stratification. Folds are disjoint and cover
    the corpus; shuffling is seeded.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    cells = {}
    for profile in corpus:
        if profile.label is None:
            raise InputError(f"author {profile.author_id} is unlabeled")
        cells.setdefault((profile.language, profile.label), []).append(profile.author_id)
    smallest = min(len(ids) for ids in cells.values())
    if k > smallest:
        raise ConfigError(
            f"k={k} exceeds the smallest (language, class) cell size {smallest}")
    rng = np.random.default_rng(seed)
    fold_val = [[] for _ in range(k)]
    for key in sorted(cells):
        ids = sorted(cells[key])
        perm = rng.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        base, rem = divmod(len(shuffled), k)
        start = 0
        for f in range(k):
            size = base + (1 if f < rem else 0)
            fold_val[f].extend(shuffled[start:start + size])
            start += size
    all_ids = sorted(p.author_id for p in corpus)
    splits = []
    for f in range(k):
        val = sorted(fold_val[f])
        val_set = set(val)
        splits.append(FoldSplit(index=f,
                                train_ids=[a for a in all_ids if a not in val_set],
                                val_ids=val))
    return splits


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1_macro: float
    f1_weighted: float

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
        }


METRIC_NAMES = ("f1_macro", "f1_weighted", "accuracy", "precision", "recall")


def compute_metrics(labels, preds) -> MetricSet:
    """Binary metrics with class 1 positive; empty denominators count as 0.

    Precision and recall are reported for the positive class; F1-macro is
    the unweighted mean of the two per-class F1 scores and F1-weighted is
    their support-weighted mean.
    """
    y = list(labels)
    p = list(preds)
    if len(y) != len(p):
        raise InputError(f"{len(y)} labels vs {len(p)} predictions")
    if not y:
        raise InputError("metrics need at least one example")
    for v in y + p:
        if v not in (0, 1):
            raise InputError(f"labels and predictions must be 0 or 1, got {v!r}")
    tp = sum(1 for t, q in zip(y, p) if t == 1 and q == 1)
    fp = sum(1 for t, q in zip(y, p) if t == 0 and q == 1)
    fn = sum(1 for t, q in zip(y, p) if t == 1 and q == 0)
    tn = sum(1 for t, q in zip(y, p) if t == 0 and q == 0)

    def _ratio(num, den):
        return num / den if den else 0.0

    def _f1(prec, rec):
        return _ratio(2.0 * prec * rec, prec + rec)

    prec1 = _ratio(tp, tp + fp)
    rec1 = _ratio(tp, tp + fn)
    prec0 = _ratio(tn, tn + fn)
    rec0 = _ratio(tn, tn + fp)
    f1_pos = _f1(prec1, rec1)
    f1_neg = _f1(prec0, rec0)
    support1 = tp + fn
    support0 = tn + fp
    return MetricSet(
        accuracy=(tp + tn) / len(y),
        precision=prec1,
        recall=rec1,
        f1_macro=(f1_pos + f1_neg) / 2.0,
        f1_weighted=(support1 * f1_pos + support0 * f1_neg) / len(y),
    )


def mean_std(values):
    """Arithmetic mean and population standard deviation."""
    vals = list(values)
    if not vals:
        return 0.0, 0.0
    m = sum(vals) / len(vals)
    var = sum((v - m) ** 2 for v in vals) / len(vals)
    return m, var ** 0.5


def format_mean_std(mean, std) -> str:
    """Render fractional metrics as percents: (0.7362, 0.0411) -> '73.62 ± 4.11'."""
    return f"{mean * 100.0:.2f} ± {std * 100.0:.2f}"


# ---------------------------------------------------------------------------
# fold training and evaluation
# ---------------------------------------------------------------------------

@dataclass
class FoldMetrics:
    overall: MetricSet
    per_language: dict
    n_val: int


def evaluate(model: SpreaderModel, profiles, store=None) -> FoldMetrics:
    """Eval-mode metrics over labeled profiles, overall and per language."""
    if not profiles:
        raise InputError("evaluation needs at least one profile")
    labels, preds, langs = [], [], []
    with ag.no_grad():
        for profile in profiles:
            if profile.label is None:
                raise InputError(f"author {profile.author_id} is unlabeled")
            res = model.forward(profile, store=store)
            labels.append(profile.label)
            preds.append(res.prediction)
            langs.append(profile.language)
    per_language = {}
    for lang in sorted(set(langs)):
        idx = [i for i, l in enumerate(langs) if l == lang]
        per_language[lang] = compute_metrics([labels[i] for i in idx],
                                             [preds[i] for i in idx])
    return FoldMetrics(overall=compute_metrics(labels, preds),
                       per_language=per_language, n_val=len(labels))


def train_fold(corpus, split: FoldSplit, hp: Hyperparams, config, vocab=None,
               store=None):
    """Train one fold; returns (ModelBundle, FoldMetrics or None).

    Initialization, shuffling and dropout derive from (hp.seed, fold index),
    so each fold is reproducible in isolation. Metrics are None when the
    split has no validation ids (full-corpus training).
    """
    rng_init = np.random.default_rng([hp.seed, split.index, 0])
    model = SpreaderModel(config, rng_init, dtype=np.float32)
    if hp.freeze_encoder:
        model.freeze_encoder()
    trainable = model.trainable_parameters()
    if not trainable:
        raise ConfigError("no trainable parameters: everything is frozen")
    opt = AdamW(trainable, lr=hp.learning_rate, betas=(hp.beta1, hp.beta2),
                eps=hp.eps, weight_decay=hp.weight_decay)
    rng_train = np.random.default_rng([hp.seed, split.index, 1])
    train_profiles = [corpus.by_id[a] for a in split.train_ids]
    for profile in train_profiles:
        if profile.label is None:
            raise InputError(f"author {profile.author_id} is unlabeled")

    step = 0
    for epoch in range(hp.epochs):
        order = rng_train.permutation(len(train_profiles))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), hp.batch_size):
            batch = order[start:start + hp.batch_size]
            opt.zero_grad()
            total = None
            for idx in batch:
                profile = train_profiles[int(idx)]
                res = model.forward(profile, store=store, training=True, rng=rng_train)
                loss = ag.softmax_cross_entropy(res.logits, profile.label)
                total = loss if total is None else ag.add(total, loss)
            batch_loss = ag.scale(total, 1.0 / len(batch))
            if not np.isfinite(batch_loss.data):
                raise TrainingDivergedError(step)
            batch_loss.backward()
            opt.step()
            step += 1
            epoch_loss += float(batch_loss.data)
            n_batches += 1
        logger.info("fold %d epoch %d/%d mean loss %.6f",
                    split.index, epoch + 1, hp.epochs, epoch_loss / max(n_batches, 1))

    metrics = None
    if split.val_ids:
        metrics = evaluate(model, [corpus.by_id[a] for a in split.val_ids], store=store)
    bundle = ModelBundle.from_model(model, vocab, hp.seed, split.index)
    return bundle, metrics


# ---------------------------------------------------------------------------
# cross-validation report
# ---------------------------------------------------------------------------

@dataclass
class CvReport:
    folds: list

    def metric_values(self, name):
        return [getattr(f.overall, name) for f in self.folds]

    def mean_std(self, name):
        return mean_std(self.metric_values(name))

    def languages(self):
        langs = set()
        for f in self.folds:
            langs.update(f.per_language)
        return sorted(langs)

    def language_accuracies(self, lang):
        return [f.per_language[lang].accuracy for f in self.folds
                if lang in f.per_language]

    def format_table(self) -> str:
        header = ["fold"] + list(METRIC_NAMES)
        rows = [header]
        for i, f in enumerate(self.folds):
            rows.append([str(i)] + [f"{getattr(f.overall, n):.4f}" for n in METRIC_NAMES])
        rows.append(["mean ± std"] + [format_mean_std(*self.mean_std(n))
                                      for n in METRIC_NAMES])
        for lang in self.languages():
            m, s = mean_std(self.language_accuracies(lang))
            rows.append([f"accuracy[{lang}]", format_mean_std(m, s)]
                        + [""] * (len(METRIC_NAMES) - 1))
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                         for r in rows)

    def to_json_dict(self) -> dict:
        summary = {}
        for name in METRIC_NAMES:
            m, s = self.mean_std(name)
            summary[name] = {"mean": m, "std": s, "display": format_mean_std(m, s)}
        per_language = {}
        for lang in self.languages():
            m, s = mean_std(self.language_accuracies(lang))
            per_language[lang] = {
                "accuracy": {"mean": m, "std": s, "display": format_mean_std(m, s)}}
        return {
            "folds": [
                {
                    "overall": f.overall.as_dict(),
                    "per_language": {l: ms.as_dict() for l, ms in f.per_language.items()},
                    "n_val": f.n_val,
                }
                for f in self.folds
            ],
            "summary": summary,
            "per_language_summary": per_language,
        }


def cross_validate(corpus, hp: Hyperparams, config, vocab=None, store=None):
    """Run stratified k-fold training; returns (CvReport, fold bundles)."""
    splits = stratified_kfold(corpus, hp.folds, hp.seed)
    folds = []
    bundles = []
    for split in splits:
        logger.info("training fold %d: %d train / %d val",
                    split.index, len(split.train_ids), len(split.val_ids))
        bundle, metrics = train_fold(corpus, split, hp, config, vocab=vocab, store=store)
        bundles.append(bundle)
        folds.append(metrics)
    return CvReport(folds=folds), bundles


# ---------------------------------------------------------------------------
# ensembling
# ---------------------------------------------------------------------------

def predict_ensemble(bundles, profile, store=None, models=None):
    """Majority vote over fold models; returns (label, (votes_0, votes_1)).

    A tie goes to the negative class. Pass prebuilt ``models`` to avoid
    rebuilding them per profile when iterating a corpus.
    """
    if models is None:
        if not bundles:
            raise InputError("ensemble needs at least one bundle")
        models = [b.to_model()[0] for b in bundles]
    votes = [0, 0]
    with ag.no_grad():
        for model in models:
            res = model.forward(profile, store=store)
            votes[res.prediction] += 1
    return (1 if votes[1] > votes[0] else 0), (votes[0], votes[1])


def ensemble_evaluate(bundles, corpus, store=None) -> MetricSet:
    """Majority-vote metrics over every labeled profile in the corpus."""
    models = [b.to_model()[0] for b in bundles]
    labels, preds = [], []
    for profile in corpus:
        if profile.label is None:
            raise InputError(f"author {profile.author_id} is unlabeled")
        label, _ = predict_ensemble(bundles, profile, store=store, models=models)
        labels.append(profile.label)
        preds.append(label)
    return compute_metrics(labels, preds)
