"""Shared fixtures: synthetic corpora, PAN-style fixture files, CV runs."""

import time

import numpy as np
import pytest

from hateprofiler.corpus import AuthorProfile, Corpus, Post, build_vocab, encode_corpus
from hateprofiler.encoder import EncoderConfig
from hateprofiler.attention import PoolingMode
from hateprofiler.model import ModelConfig, TOY
from hateprofiler.training import Hyperparams, cross_validate

MARKER = "hateword"
SYNTH_SEEDS = (1234, 1235, 1236, 1237, 1238)


def synth_corpus(seed, n_authors=40, n_posts=8, pool_size=60):
    """Separable two-language corpus: 50 token types, half the authors are
    spreaders whose feeds contain the marker token in 25% of posts.

    Filler posts are drawn from a shared pool so that post content carries
    no author-identity signal; the marker is the only feature separating
    the classes.
    """
    rng = np.random.default_rng(seed)
    fillers = [f"tok{i}" for i in range(49)]
    pool = []
    for _ in range(pool_size):
        length = int(rng.integers(4, 7))
        pool.append([fillers[int(k)] for k in rng.integers(0, 49, size=length)])
    profiles = []
    for i in range(n_authors):
        label = i % 2
        lang = "en" if i < n_authors // 2 else "es"
        n_marked = max(1, round(0.25 * n_posts))
        marked = set(rng.choice(n_posts, size=n_marked, replace=False)) if label else set()
        posts = []
        for j in range(n_posts):
            toks = list(pool[int(rng.integers(0, pool_size))])
            if j in marked:
                slots = rng.choice(len(toks), size=min(2, len(toks)), replace=False)
                for s in slots:
                    toks[int(s)] = MARKER
            text = " ".join(toks)
            posts.append(Post(text, text, toks))
        profiles.append(AuthorProfile(f"author{i:03d}", lang, posts, label))
    return Corpus(profiles)


def synth_model_config(vocab) -> ModelConfig:
    return ModelConfig(
        encoder_mode=TOY,
        pooling=PoolingMode.ATTENTION,
        encoder=EncoderConfig(vocab_size=len(vocab), d_model=16, n_layers=1,
                              n_heads=2, d_ff=32, max_post_len=16, dropout_p=0.1),
        classifier_hidden=16,
        classifier_dropout=0.1,
    )


def synth_hyperparams(seed) -> Hyperparams:
    # desk-scale recipe: lr 1e-2, at most 30 epochs
    return Hyperparams(learning_rate=1e-2, batch_size=8, epochs=30, folds=5,
                       weight_decay=0.01, seed=seed)


def run_synth_cv(seed):
    """One full cross-validation on the synthetic corpus for ``seed``."""
    corpus = synth_corpus(seed)
    vocab = build_vocab(corpus)
    encode_corpus(corpus, vocab, 16)
    config = synth_model_config(vocab)
    hp = synth_hyperparams(seed)
    start = time.monotonic()
    report, bundles = cross_validate(corpus, hp, config, vocab=vocab)
    elapsed = time.monotonic() - start
    return {"corpus": corpus, "vocab": vocab, "config": config, "hp": hp,
            "report": report, "bundles": bundles, "elapsed": elapsed}


@pytest.fixture(scope="session")
def synth_cv_runs():
    """Cross-validation results for all five synthetic seeds (cached)."""
    return {seed: run_synth_cv(seed) for seed in SYNTH_SEEDS}


# ---------------------------------------------------------------------------
# PAN-style on-disk fixture
# ---------------------------------------------------------------------------

PAN_EN_AUTHORS = {
    "a1en": (1, ["RT #USER# check this out #URL#",
                 "nothing to see here, just RTs",
                 "I hate mondays #HASHTAG#"]),
    "a2en": (0, ["lovely weather today",
                 "my cat sat on the keyboard",
                 "#USER# thanks for the follow!"]),
    "a3en": (1, ["they should all go back #HASHTAG#",
                 "RT spreading the word #URL#",
                 "wake up people"]),
    "a4en": (0, ["coffee time #URL#",
                 "does anyone RT anymore? START ART",
                 "good night"]),
}

PAN_ES_AUTHORS = {
    "b1es": (1, ["RT #USER# fuera todos",
                 "no los quiero aqui #HASHTAG#",
                 "que se vayan #URL#"]),
    "b2es": (0, ["hoy hace sol",
                 "me gusta el cafe",
                 "#USER# gracias!"]),
    "b3es": (1, ["no soporto a esa gente",
                 "RT difundiendo la verdad #URL#",
                 "despierten ya"]),
    "b4es": (0, ["el partido estuvo genial",
                 "receta nueva de tortilla #URL#",
                 "buenas noches a todos"]),
}


def _write_author(directory, author_id, lang, posts):
    docs = "\n".join(f"    <document><![CDATA[{p}]]></document>" for p in posts)
    xml = (f'<author lang="{lang}">\n  <documents>\n{docs}\n'
           f"  </documents>\n</author>\n")
    (directory / f"{author_id}.xml").write_text(xml, encoding="utf-8")


def write_pan_fixture(root):
    """Write a tiny two-language PAN-style dataset; returns path settings."""
    en = root / "en"
    es = root / "es"
    en.mkdir(parents=True)
    es.mkdir(parents=True)
    for author_id, (label, posts) in PAN_EN_AUTHORS.items():
        _write_author(en, author_id, "en", posts)
    for author_id, (label, posts) in PAN_ES_AUTHORS.items():
        _write_author(es, author_id, "es", posts)
    en_truth = root / "truth-en.txt"
    es_truth = root / "truth-es.txt"
    en_truth.write_text(
        "".join(f"{a}:::{label}\n" for a, (label, _) in PAN_EN_AUTHORS.items()),
        encoding="utf-8")
    es_truth.write_text(
        "".join(f"{a}:::{label}\n" for a, (label, _) in PAN_ES_AUTHORS.items()),
        encoding="utf-8")
    return {"en_dir": str(en), "en_truth": str(en_truth),
            "es_dir": str(es), "es_truth": str(es_truth)}


@pytest.fixture
def pan_fixture(tmp_path):
    return write_pan_fixture(tmp_path)
