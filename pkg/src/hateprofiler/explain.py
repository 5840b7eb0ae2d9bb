"""Dual-granularity explanations for one author's prediction.

Post level: the column means of the post-over-post attention matrix rank
the author's posts by how much the rest of the feed attends to them.
Token level (trainable encoder only): for one post, average the last
encoder layer's attention over heads and over unmasked query positions;
the resulting per-token received attention, renormalized over real tokens,
scores which tokens the encoder focused on.

Reports are emitted as JSON (machine-readable, documented schema) and as a
self-contained HTML page with color-intensity heatmaps.
"""

import html
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .errors import DegenerateInputError, DimensionError, InputError
from .training import predict_ensemble


@dataclass
class TokenScoreRow:
    post_index: int
    tokens: list
    scores: list


@dataclass
class RankedPost:
    post_index: int
    text: str
    weight: float | None


@dataclass
class ExplanationReport:
    author_id: str
    language: str
    prediction: int
    votes: tuple
    probabilities: list
    pooling: str
    bundle_ids: list
    posts: list
    token_rows: list


def token_scores(attention, mask, tokens, post_index=0) -> TokenScoreRow:
    """Score each real token of one post by received attention.

    ``attention`` is the (n_heads, L, L) last-layer attention of the post's
    encoder pass and ``mask`` its length-L padding mask. Heads are averaged,
    then rows (queries) at unmasked positions are averaged, giving how much
    attention each position receives; scores at padded positions are
    dropped and the rest renormalized to sum to 1.
    """
    att = np.asarray(attention, dtype=np.float64)
    if att.ndim != 3 or att.shape[1] != att.shape[2]:
        raise DimensionError(f"attention must be (heads, L, L), got {att.shape}")
    m = np.asarray(mask)
    if m.shape != (att.shape[1],):
        raise DimensionError(f"mask shape {m.shape} does not match length {att.shape[1]}")
    keep = m != 0
    n = int(keep.sum())
    if n == 0:
        raise DegenerateInputError("token scores over an all-pad post")
    head_avg = att.mean(axis=0)
    received = head_avg[keep].mean(axis=0)
    scores = received[keep]
    total = scores.sum()
    if total > 0:
        scores = scores / total
    return TokenScoreRow(post_index=post_index,
                         tokens=list(tokens)[:n],
                         scores=[float(s) for s in scores])


def explain_author(bundles, profile, store=None, top_k=None, models=None) -> ExplanationReport:
    """Build the full explanation for one profile.

    Post weights and token attentions come from the first bundle's model;
    the predicted label is the ensemble majority vote. ``top_k`` limits the
    report to the highest-weighted posts (all posts when None or when the
    model pools by plain mean and no weights exist).
    """
    if models is None:
        if not bundles:
            raise InputError("explanations need at least one bundle")
        models = [b.to_model()[0] for b in bundles]
    primary = models[0]
    with ag.no_grad():
        res = primary.forward(profile, store=store)
    label, votes = predict_ensemble(bundles, profile, store=store, models=models)

    n = len(profile.posts)
    weights = res.post_importance
    if weights is not None:
        order = sorted(range(n), key=lambda i: (-float(weights[i]), i))
    else:
        order = list(range(n))
    if top_k is not None:
        if top_k < 1:
            raise InputError(f"top_k must be >= 1, got {top_k}")
        order = order[:top_k]

    posts = [RankedPost(post_index=i,
                        text=profile.posts[i].normalized_text,
                        weight=float(weights[i]) if weights is not None else None)
             for i in order]
    token_rows = []
    if res.token_attentions is not None:
        for i in order:
            token_rows.append(token_scores(res.token_attentions[i],
                                           res.post_masks[i],
                                           profile.posts[i].tokens,
                                           post_index=i))
    return ExplanationReport(
        author_id=profile.author_id,
        language=profile.language,
        prediction=label,
        votes=votes,
        probabilities=[float(p) for p in res.probs],
        pooling=primary.config.pooling.value,
        bundle_ids=[b.bundle_id for b in bundles] if bundles else [],
        posts=posts,
        token_rows=token_rows,
    )


def report_to_json_dict(report: ExplanationReport) -> dict:
    return {
        "author_id": report.author_id,
        "language": report.language,
        "prediction": report.prediction,
        "votes": list(report.votes),
        "probabilities": report.probabilities,
        "pooling": report.pooling,
        "bundles": report.bundle_ids,
        "posts": [
            {"post_index": p.post_index, "text": p.text, "weight": p.weight}
            for p in report.posts
        ],
        "tokens": [
            {"post_index": r.post_index, "tokens": r.tokens, "scores": r.scores}
            for r in report.token_rows
        ],
    }


def emit_json(report: ExplanationReport, path) -> None:
    Path(path).write_text(
        json.dumps(report_to_json_dict(report), ensure_ascii=False,
                   sort_keys=True, indent=2),
        encoding="utf-8")


def _heat(value, max_value):
    # white -> red as the score grows
    rel = 0.0 if max_value <= 0 else min(max(value / max_value, 0.0), 1.0)
    level = int(255 * (1.0 - rel))
    return "#%02X%02X%02X" % (255, level, level)


_HTML_STYLE = """
body { font-family: sans-serif; margin: 2em; max-width: 60em; }
.post { border: 1px solid #ccc; border-radius: 4px; padding: 0.6em; margin: 0.6em 0; }
.meta { color: #555; font-size: 0.85em; margin-bottom: 0.3em; }
.bar { background: #d33; height: 0.5em; display: inline-block; vertical-align: middle; }
.tok { padding: 0 0.15em; border-radius: 2px; }
"""


def emit_html(report: ExplanationReport, path) -> None:
    """Self-contained HTML page: ranked posts plus token heatmaps."""
    verdict = "hate-speech spreader" if report.prediction == 1 else "normal"
    lines = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\">",
        f"<title>Explanation for {html.escape(report.author_id)}</title>",
        f"<style>{_HTML_STYLE}</style></head><body>",
        f"<h1>Author {html.escape(report.author_id)} ({html.escape(report.language)})</h1>",
        f"<p>Prediction: <strong>{verdict}</strong> "
        f"(votes {report.votes[0]}:{report.votes[1]}, "
        f"p(spreader) = {report.probabilities[1]:.4f}, pooling = {report.pooling})</p>",
    ]
    token_by_post = {r.post_index: r for r in report.token_rows}
    max_weight = max((p.weight for p in report.posts if p.weight is not None), default=0.0)
    for rank, post in enumerate(report.posts, 1):
        lines.append("<div class=\"post\">")
        if post.weight is not None:
            bar = 0 if max_weight <= 0 else int(200 * post.weight / max_weight)
            lines.append(f"<div class=\"meta\">#{rank} &middot; post {post.post_index} "
                         f"&middot; weight {post.weight:.4f} "
                         f"<span class=\"bar\" style=\"width:{bar}px\"></span></div>")
        else:
            lines.append(f"<div class=\"meta\">#{rank} &middot; post {post.post_index}</div>")
        row = token_by_post.get(post.post_index)
        if row is not None and row.tokens:
            top = max(row.scores) if row.scores else 0.0
            spans = [
                f"<span class=\"tok\" style=\"background-color:{_heat(s, top)}\" "
                f"title=\"{s:.4f}\">{html.escape(t)}</span>"
                for t, s in zip(row.tokens, row.scores)
            ]
            lines.append("<div>" + " ".join(spans) + "</div>")
        else:
            lines.append(f"<div>{html.escape(post.text)}</div>")
        lines.append("</div>")
    lines.append("</body></html>")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
