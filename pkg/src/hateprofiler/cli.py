"""Command-line interface.

Subcommands: stats, train, cv, predict, explain, gradcheck,
export-embeddings. Options resolve in three layers: built-in defaults,
then a JSON config file (--config), then explicit command-line flags.

Exit codes: 0 success, 1 failed checks (gradcheck), 2 configuration or
input errors, 3 training divergence. Set PROFILER_LOG=debug|info|warning
to control log verbosity.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import autograd as ag
from . import __version__
from .backend import backend_name
from .corpus import (AuthorProfile, Corpus, build_vocab, corpus_stats,
                     encode_corpus, format_stats_table, join_posts,
                     load_pan_directory, load_truth, attach_labels,
                     merge_corpora, stats_to_json_dict)
from .encoder import EncoderConfig, encode_profile, load_embeddings, \
    PrecomputedEmbeddingStore, save_embeddings
from .errors import ConfigError, HateProfilerError, InputError, \
    TrainingDivergedError
from .model import (JOINED, ModelConfig, PER_POST, PRECOMPUTED, TOY,
                    gradcheck_suite, load_bundle, save_bundle)
from .explain import emit_html, emit_json, explain_author
from .training import (FoldSplit, Hyperparams, cross_validate,
                       predict_ensemble, train_fold)

logger = logging.getLogger("hateprofiler")

DEFAULTS = {
    "en_dir": None, "en_truth": None,
    "es_dir": None, "es_truth": None,
    "embeddings": None,
    "lang": "all",
    "encoder": TOY,
    "pooling": "attention",
    "baseline": PER_POST,
    "d_model": 64, "n_layers": 2, "n_heads": 4, "d_ff": None,
    "max_post_len": 32, "joined_max_len": 500,
    "dropout": 0.1, "classifier_hidden": None,
    "min_freq": 1,
    "learning_rate": 1e-5, "batch_size": 2, "epochs": 5, "folds": 5,
    "weight_decay": 0.01, "seed": 1234, "freeze_encoder": False,
    "out_dir": "out", "threads": 1,
}

_OVERRIDE_FLAGS = ("seed", "out_dir", "threads", "lang", "encoder",
                   "pooling", "baseline")


def _resolve_settings(args) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        settings.update(loaded)
    for key in _OVERRIDE_FLAGS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            settings[key] = value
    return settings


def _load_corpus(settings, need_labels) -> Corpus:
    langs = ["en", "es"] if settings["lang"] == "all" else [settings["lang"]]
    parts = []
    for lang in langs:
        directory = settings.get(f"{lang}_dir")
        if directory is None:
            continue
        corpus = load_pan_directory(directory, lang)
        if need_labels:
            truth_path = settings.get(f"{lang}_truth")
            if truth_path is None:
                raise ConfigError(f"no truth file configured for language {lang}")
            attach_labels(corpus, load_truth(truth_path))
        parts.append(corpus)
    if not parts:
        raise ConfigError(
            "no corpus directories configured (set en_dir/es_dir in the config)")
    return merge_corpora(*parts)


def _prepare_corpus(settings, corpus, vocab):
    """Encode posts in place, or rebuild profiles around one joined post."""
    if settings["baseline"] == JOINED:
        profiles = [
            AuthorProfile(p.author_id, p.language,
                          [join_posts(vocab, p, settings["joined_max_len"])],
                          p.label)
            for p in corpus
        ]
        return Corpus(profiles)
    encode_corpus(corpus, vocab, settings["max_post_len"])
    return corpus


def _model_config(settings, vocab=None, store=None) -> ModelConfig:
    if settings["encoder"] == TOY:
        max_len = (settings["joined_max_len"] if settings["baseline"] == JOINED
                   else settings["max_post_len"])
        enc = EncoderConfig(
            vocab_size=len(vocab),
            d_model=settings["d_model"],
            n_layers=settings["n_layers"],
            n_heads=settings["n_heads"],
            d_ff=settings["d_ff"],
            max_post_len=max_len,
            dropout_p=settings["dropout"],
        )
        return ModelConfig(encoder_mode=TOY, pooling=settings["pooling"],
                           encoder=enc,
                           classifier_hidden=settings["classifier_hidden"],
                           classifier_dropout=settings["dropout"],
                           baseline=settings["baseline"])
    if settings["encoder"] == PRECOMPUTED:
        if store is None:
            raise ConfigError("precomputed encoder requires an embeddings file")
        return ModelConfig(encoder_mode=PRECOMPUTED, pooling=settings["pooling"],
                           embedding_dim=store.dim,
                           classifier_hidden=settings["classifier_hidden"],
                           classifier_dropout=settings["dropout"],
                           baseline=settings["baseline"])
    raise ConfigError(f"unknown encoder mode: {settings['encoder']!r}")


def _hyperparams(settings) -> Hyperparams:
    return Hyperparams(
        learning_rate=settings["learning_rate"],
        batch_size=settings["batch_size"],
        epochs=settings["epochs"],
        folds=settings["folds"],
        weight_decay=settings["weight_decay"],
        seed=settings["seed"],
        freeze_encoder=settings["freeze_encoder"],
    )


def _load_store(settings):
    if settings["encoder"] != PRECOMPUTED:
        return None
    if not settings["embeddings"]:
        raise ConfigError("precomputed encoder requires the embeddings setting")
    return load_embeddings(settings["embeddings"])


def _training_inputs(settings):
    corpus = _load_corpus(settings, need_labels=True)
    store = _load_store(settings)
    vocab = build_vocab(corpus, settings["min_freq"]) if settings["encoder"] == TOY else None
    if vocab is not None:
        corpus = _prepare_corpus(settings, corpus, vocab)
    config = _model_config(settings, vocab=vocab, store=store)
    return corpus, vocab, store, config


def _out_dir(settings) -> Path:
    out = Path(settings["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_bundles(paths):
    if not paths:
        raise ConfigError("no bundle files given (use --bundles)")
    files = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            found = sorted(path.glob("*.hspb"))
            if not found:
                raise ConfigError(f"no *.hspb bundles under {path}")
            files.extend(found)
        elif path.is_file():
            files.append(path)
        else:
            raise ConfigError(f"bundle path not found: {path}")
    bundles = [load_bundle(f) for f in files]
    first = bundles[0].config.to_dict()
    for b, f in zip(bundles[1:], files[1:]):
        if b.config.to_dict() != first:
            raise ConfigError(f"bundle {f} disagrees with {files[0]} on model config")
    return bundles


def _prepare_for_bundles(settings, corpus, bundles):
    """Encode a raw corpus the way the bundles' training run did."""
    config = bundles[0].config
    _, vocab = bundles[0].to_model()
    if config.encoder_mode == TOY:
        if vocab is None:
            raise ConfigError("bundle carries no vocabulary")
        joined_settings = dict(settings)
        joined_settings["baseline"] = config.baseline
        joined_settings["joined_max_len"] = config.encoder.max_post_len
        joined_settings["max_post_len"] = config.encoder.max_post_len
        return _prepare_corpus(joined_settings, corpus, vocab)
    return corpus


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_stats(args) -> int:
    settings = _resolve_settings(args)
    corpus = _load_corpus(settings, need_labels=True)
    stats = corpus_stats(corpus)
    if args.json:
        print(json.dumps(stats_to_json_dict(stats), indent=2, sort_keys=True))
    else:
        print(format_stats_table(stats))
    return 0


def cmd_cv(args) -> int:
    settings = _resolve_settings(args)
    corpus, vocab, store, config = _training_inputs(settings)
    hp = _hyperparams(settings)
    logger.info("cross-validating on %d authors (backend: %s)", len(corpus), backend_name())
    report, bundles = cross_validate(corpus, hp, config, vocab=vocab, store=store)
    out = _out_dir(settings)
    for bundle in bundles:
        save_bundle(bundle, out / f"bundle_fold{bundle.fold_index}.hspb")
    (out / "cv_report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8")
    table = report.format_table()
    (out / "cv_report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"wrote {len(bundles)} bundles and cv_report.{{json,txt}} to {out}")
    return 0


def cmd_train(args) -> int:
    settings = _resolve_settings(args)
    corpus, vocab, store, config = _training_inputs(settings)
    hp = _hyperparams(settings)
    split = FoldSplit(index=0, train_ids=sorted(p.author_id for p in corpus),
                      val_ids=[])
    logger.info("training on all %d authors (backend: %s)", len(corpus), backend_name())
    bundle, _ = train_fold(corpus, split, hp, config, vocab=vocab, store=store)
    out = _out_dir(settings)
    path = out / "model.hspb"
    save_bundle(bundle, path)
    print(f"wrote {path}")
    return 0


def cmd_predict(args) -> int:
    settings = _resolve_settings(args)
    corpus = _load_corpus(settings, need_labels=False)
    bundles = _load_bundles(args.bundles)
    store = (load_embeddings(settings["embeddings"])
             if bundles[0].config.encoder_mode == PRECOMPUTED else None)
    if bundles[0].config.encoder_mode == PRECOMPUTED and not settings["embeddings"]:
        raise ConfigError("precomputed bundles require the embeddings setting")
    corpus = _prepare_for_bundles(settings, corpus, bundles)
    models = [b.to_model()[0] for b in bundles]
    profiles = sorted(corpus, key=lambda p: p.author_id)

    def run(profile):
        label, votes = predict_ensemble(bundles, profile, store=store, models=models)
        return profile.author_id, label, votes

    threads = int(settings["threads"])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, profiles))
    else:
        rows = [run(p) for p in profiles]
    out = _out_dir(settings)
    path = out / "predictions.txt"
    path.write_text("".join(f"{a}:::{l}\n" for a, l, _ in rows), encoding="utf-8")
    positive = sum(1 for _, l, _ in rows if l == 1)
    print(f"wrote {path} ({len(rows)} authors, {positive} flagged as spreaders)")
    return 0


def cmd_explain(args) -> int:
    settings = _resolve_settings(args)
    corpus = _load_corpus(settings, need_labels=False)
    bundles = _load_bundles(args.bundles)
    store = (load_embeddings(settings["embeddings"])
             if bundles[0].config.encoder_mode == PRECOMPUTED else None)
    corpus = _prepare_for_bundles(settings, corpus, bundles)
    models = [b.to_model()[0] for b in bundles]
    if args.author:
        if args.author not in corpus.by_id:
            raise InputError(f"author {args.author} not found in the corpus")
        profiles = [corpus.by_id[args.author]]
    else:
        profiles = sorted(corpus, key=lambda p: p.author_id)
    out = _out_dir(settings)
    for profile in profiles:
        report = explain_author(bundles, profile, store=store,
                                top_k=args.top_k, models=models)
        emit_json(report, out / f"explain_{profile.author_id}.json")
        emit_html(report, out / f"explain_{profile.author_id}.html")
        verdict = "spreader" if report.prediction == 1 else "normal"
        print(f"{profile.author_id}: {verdict} (votes {report.votes[0]}:{report.votes[1]})")
    print(f"wrote {2 * len(profiles)} explanation files to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    settings = _resolve_settings(args)
    results = gradcheck_suite(base_seed=settings["seed"])
    failed = 0
    for name, report in results:
        status = "ok" if report.passed else "FAIL"
        print(f"{name:<40} max rel err {report.max_rel_err:.3e}  {status}")
        if not report.passed:
            failed += 1
    seeds = len(results)
    print(f"{seeds - failed}/{seeds} gradient checks passed (backend: {backend_name()})")
    return 0 if failed == 0 else 1


def cmd_export_embeddings(args) -> int:
    settings = _resolve_settings(args)
    bundles = _load_bundles([args.bundle])
    bundle = bundles[0]
    if bundle.config.encoder_mode != TOY:
        raise ConfigError("only trainable-encoder bundles can export embeddings")
    model, vocab = bundle.to_model()
    corpus = _load_corpus(settings, need_labels=False)
    corpus = _prepare_for_bundles(settings, corpus, [bundle])
    store = PrecomputedEmbeddingStore(bundle.config.dim)
    with ag.no_grad():
        for profile in sorted(corpus, key=lambda p: p.author_id):
            pm = encode_profile(model.encoder, profile)
            store.add(profile.author_id, pm.matrix.data)
    out = _out_dir(settings)
    path = Path(args.out) if args.out else out / "embeddings.semb"
    save_embeddings(store, path)
    print(f"wrote {path} ({len(store)} authors, dim {store.dim})")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--out-dir", dest="out_dir", help="output directory")
    common.add_argument("--threads", type=int, help="evaluation worker threads")
    common.add_argument("--lang", choices=["en", "es", "all"], help="language filter")
    common.add_argument("--encoder", choices=[TOY, PRECOMPUTED], help="encoder mode")
    common.add_argument("--pooling", choices=["attention", "mean"],
                        help="profile pooling mode")
    common.add_argument("--baseline", choices=[PER_POST, JOINED],
                        help="feed representation")

    parser = argparse.ArgumentParser(
        prog="hateprofiler",
        description="Multilingual profiling of hate-speech spreaders on social media")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("stats", parents=[common],
                   help="corpus statistics table").add_argument(
        "--json", action="store_true", help="print JSON only")
    sub.add_parser("train", parents=[common], help="train one model on all authors")
    sub.add_parser("cv", parents=[common], help="stratified cross-validation")

    p = sub.add_parser("predict", parents=[common], help="ensemble predictions")
    p.add_argument("--bundles", nargs="+", required=True,
                   help="bundle files or a directory of them")

    p = sub.add_parser("explain", parents=[common], help="explanation reports")
    p.add_argument("--bundles", nargs="+", required=True,
                   help="bundle files or a directory of them")
    p.add_argument("--author", help="explain a single author id")
    p.add_argument("--top-k", dest="top_k", type=int,
                   help="keep only the k highest-weighted posts")

    sub.add_parser("gradcheck", parents=[common],
                   help="finite-difference gradient checks")

    p = sub.add_parser("export-embeddings", parents=[common],
                       help="encode a corpus into an SEMB1 embeddings file")
    p.add_argument("--bundle", required=True, help="trained bundle to encode with")
    p.add_argument("--out", help="output .semb path")

    return parser


_COMMANDS = {
    "stats": cmd_stats,
    "train": cmd_train,
    "cv": cmd_cv,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "gradcheck": cmd_gradcheck,
    "export-embeddings": cmd_export_embeddings,
}


def _setup_logging():
    level = os.environ.get("PROFILER_LOG", "warning").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except HateProfilerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
