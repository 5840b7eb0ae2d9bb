"""Author-feed ingestion, tag normalization, tokenization and statistics.

Input layout: one UTF-8 XML file per author,

    <author lang="en">
      <documents>
        <document>post text ...</document>
        ...
      </documents>
    </author>

named ``<author_id>.xml``, plus a truth file of ``author_id:::label`` lines
with label 0 (normal) or 1 (hate-speech spreader).

The upstream data arrives with certain patterns already replaced by
placeholder markers (#URL#, #HASHTAG#, #USER#, and the standalone retweet
token RT); :func:`normalize_tags` maps them onto the bracketed special
tokens the vocabulary reserves.
"""

import json
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ConsistencyError, CorpusParseError, InputError

PAD, UNK = "[PAD]", "[UNK]"
SPECIAL_TAGS = ["[URL]", "[HASHTAG]", "[USER]", "[RT]", "[POSTSTART]", "[POSTEND]"]
RESERVED = [PAD, UNK] + SPECIAL_TAGS

_RT_RE = re.compile(r"(?<!\S)RT(?!\S)")
_TOKEN_RE = re.compile(r"\[(?:URL|HASHTAG|USER|RT|POSTSTART|POSTEND)\]|\w+|[^\w\s]")


@dataclass
class Post:
    raw_text: str
    normalized_text: str
    tokens: list[str]
    token_ids: list[int] = field(default_factory=list)
    attention_mask: list[int] = field(default_factory=list)


@dataclass
class AuthorProfile:
    author_id: str
    language: str
    posts: list[Post]
    label: int | None = None


class Corpus:
    """An immutable-after-ingestion collection of author profiles."""

    def __init__(self, profiles):
        seen = set()
        for p in profiles:
            if p.author_id in seen:
                raise ConsistencyError(f"duplicate author id: {p.author_id}")
            seen.add(p.author_id)
            if not p.posts:
                raise ConsistencyError(f"author {p.author_id} has an empty feed")
        self.profiles = list(profiles)
        self.by_id = {p.author_id: p for p in self.profiles}

    @property
    def languages(self):
        return sorted({p.language for p in self.profiles})

    def __len__(self):
        return len(self.profiles)

    def __iter__(self):
        return iter(self.profiles)


class Vocabulary:
    """Token/id bijection with a fixed reserved block.

    Ids 0..7 are pinned: 0 [PAD], 1 [UNK], then the six special tags in
    SPECIAL_TAGS order. Corpus tokens follow from id 8.
    """

    def __init__(self, tokens=()):
        self.id_to_token = list(RESERVED)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)

    def id_of(self, token):
        return self.token_to_id.get(token, 1)

    def __len__(self):
        return len(self.id_to_token)

    def non_reserved_tokens(self):
        return self.id_to_token[len(RESERVED):]


def normalize_tags(text: str) -> str:
    """Map placeholder markers onto bracketed special tokens. Idempotent."""
    text = text.replace("#URL#", "[URL]")
    text = text.replace("#HASHTAG#", "[HASHTAG]")
    text = text.replace("#USER#", "[USER]")
    return _RT_RE.sub("[RT]", text)


def tokenize(text: str) -> list[str]:
    """Lowercased word-level tokens; bracketed special tags stay atomic.

    Words are maximal ``\\w+`` runs, every other non-space character is its
    own token, so emojis and punctuation pass through as opaque tokens.
    """
    out = []
    for m in _TOKEN_RE.finditer(text):
        tok = m.group(0)
        out.append(tok if tok in SPECIAL_TAGS else tok.lower())
    return out


def encode_post(vocab, tokens, max_post_len, raw_text="", normalized_text=None):
    """Map tokens to ids, truncate/right-pad to ``max_post_len`` with a mask."""
    if max_post_len < 1:
        raise ConfigError(f"max_post_len must be >= 1, got {max_post_len}")
    kept = tokens[:max_post_len]
    ids = [vocab.id_of(t) for t in kept]
    mask = [1] * len(ids)
    pad = max_post_len - len(ids)
    ids.extend([0] * pad)
    mask.extend([0] * pad)
    return Post(
        raw_text=raw_text,
        normalized_text=normalized_text if normalized_text is not None else " ".join(tokens),
        tokens=list(tokens),
        token_ids=ids,
        attention_mask=mask,
    )


def _parse_author_file(path: Path, language: str) -> AuthorProfile:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise CorpusParseError(f"malformed XML in {path.name}: {exc}") from exc
    if root.tag != "author":
        raise CorpusParseError(f"{path.name}: expected <author> root, got <{root.tag}>")
    docs = root.find("documents")
    if docs is None:
        raise CorpusParseError(f"{path.name}: missing <documents> element")
    posts = []
    for doc in docs.findall("document"):
        raw = doc.text or ""
        normalized = normalize_tags(raw)
        posts.append(Post(raw_text=raw, normalized_text=normalized, tokens=tokenize(normalized)))
    return AuthorProfile(
        author_id=path.stem,
        language=root.get("lang") or language,
        posts=posts,
    )


def load_pan_directory(path, language) -> Corpus:
    """Parse every ``*.xml`` author file under ``path`` into a Corpus."""
    directory = Path(path)
    if not directory.is_dir():
        raise InputError(f"corpus directory not found: {directory}")
    files = sorted(directory.glob("*.xml"))
    profiles = [_parse_author_file(f, language) for f in files]
    return Corpus(profiles)


def load_truth(path) -> dict[str, int]:
    """Read ``author_id:::label`` lines into an id -> label map."""
    truth = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(":::")
        if len(parts) != 2 or parts[1] not in ("0", "1"):
            raise CorpusParseError(f"{path}:{lineno}: expected 'author_id:::0|1', got {line!r}")
        if parts[0] in truth:
            raise ConsistencyError(f"duplicate truth entry for author {parts[0]}")
        truth[parts[0]] = int(parts[1])
    return truth


def attach_labels(corpus: Corpus, truth: dict[str, int]) -> None:
    """Join truth labels onto profiles by author id; both sides must cover."""
    missing_in_corpus = sorted(set(truth) - set(corpus.by_id))
    if missing_in_corpus:
        raise ConsistencyError(f"truth ids missing from corpus: {missing_in_corpus}")
    unlabeled = sorted(set(corpus.by_id) - set(truth))
    if unlabeled:
        raise ConsistencyError(f"corpus authors missing from truth: {unlabeled}")
    for profile in corpus:
        profile.label = truth[profile.author_id]


def merge_corpora(*corpora) -> Corpus:
    profiles = [p for c in corpora for p in c]
    return Corpus(profiles)


def build_vocab(corpus: Corpus, min_freq=1) -> Vocabulary:
    """Tokens with frequency >= min_freq, most frequent first, ties lexicographic."""
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
    counts = Counter()
    for profile in corpus:
        for post in profile.posts:
            counts.update(t for t in post.tokens if t not in RESERVED)
    ordered = sorted((t for t, c in counts.items() if c >= min_freq),
                     key=lambda t: (-counts[t], t))
    return Vocabulary(ordered)


def encode_corpus(corpus: Corpus, vocab: Vocabulary, max_post_len: int) -> None:
    """Fill token_ids/attention_mask on every post, in place."""
    for profile in corpus:
        for post in profile.posts:
            encoded = encode_post(vocab, post.tokens, max_post_len,
                                  raw_text=post.raw_text,
                                  normalized_text=post.normalized_text)
            post.token_ids = encoded.token_ids
            post.attention_mask = encoded.attention_mask


def join_posts(vocab, profile, max_len=500, with_markers=True) -> Post:
    """Concatenate a feed into one post, optionally wrapping each post in
    [POSTSTART]/[POSTEND] markers, encoded and truncated to ``max_len``."""
    tokens = []
    pieces = []
    for post in profile.posts:
        if with_markers:
            tokens.append("[POSTSTART]")
            tokens.extend(post.tokens)
            tokens.append("[POSTEND]")
            pieces.append(f"[POSTSTART] {post.normalized_text} [POSTEND]")
        else:
            tokens.extend(post.tokens)
            pieces.append(post.normalized_text)
    return encode_post(vocab, tokens, max_len,
                       raw_text=" ".join(p.raw_text for p in profile.posts),
                       normalized_text=" ".join(pieces))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class LanguageStats:
    language: str
    total_profiles: int
    spreaders: int
    posts_per_profile: float
    spreader_len_mean: float
    spreader_len_std: float
    normal_len_mean: float
    normal_len_std: float


@dataclass
class CorpusStats:
    per_language: dict[str, LanguageStats]


def _mean_std(values):
    # population standard deviation
    if not values:
        return 0.0, 0.0
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, var ** 0.5


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Per-language profile counts and token-length statistics per class.

    Post length is measured in tokens (the unit the model consumes).
    """
    per_language = {}
    for lang in corpus.languages:
        profiles = [p for p in corpus if p.language == lang]
        for p in profiles:
            if p.label is None:
                raise InputError(f"author {p.author_id} is unlabeled")
        spreader_lens = [len(post.tokens) for p in profiles if p.label == 1 for post in p.posts]
        normal_lens = [len(post.tokens) for p in profiles if p.label == 0 for post in p.posts]
        s_mean, s_std = _mean_std(spreader_lens)
        n_mean, n_std = _mean_std(normal_lens)
        per_language[lang] = LanguageStats(
            language=lang,
            total_profiles=len(profiles),
            spreaders=sum(1 for p in profiles if p.label == 1),
            posts_per_profile=sum(len(p.posts) for p in profiles) / len(profiles),
            spreader_len_mean=s_mean,
            spreader_len_std=s_std,
            normal_len_mean=n_mean,
            normal_len_std=n_std,
        )
    return CorpusStats(per_language=per_language)


def format_stats_table(stats: CorpusStats) -> str:
    langs = sorted(stats.per_language)
    rows = [
        ("Stats", *[s.capitalize() for s in langs]),
        ("#Total Profiles", *[str(stats.per_language[l].total_profiles) for l in langs]),
        ("#Hate Speech Spreaders", *[str(stats.per_language[l].spreaders) for l in langs]),
        ("#Posts per Profile", *[f"{stats.per_language[l].posts_per_profile:g}" for l in langs]),
        ("#Token Mean and Std by Spreaders",
         *[f"{stats.per_language[l].spreader_len_mean:.2f} ± {stats.per_language[l].spreader_len_std:.2f}"
           for l in langs]),
        ("#Token Mean and Std by Normal Profiles",
         *[f"{stats.per_language[l].normal_len_mean:.2f} ± {stats.per_language[l].normal_len_std:.2f}"
           for l in langs]),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                     for row in rows)


def stats_to_json_dict(stats: CorpusStats) -> dict:
    return {
        lang: {
            "total_profiles": s.total_profiles,
            "spreaders": s.spreaders,
            "posts_per_profile": s.posts_per_profile,
            "spreader_token_len": {"mean": s.spreader_len_mean, "std": s.spreader_len_std},
            "normal_token_len": {"mean": s.normal_len_mean, "std": s.normal_len_std},
        }
        for lang, s in sorted(stats.per_language.items())
    }


# ---------------------------------------------------------------------------
# canonical JSON dump
# ---------------------------------------------------------------------------

def corpus_to_json(corpus: Corpus) -> str:
    """Canonical JSON form of a corpus (stable key order, sorted authors)."""
    payload = {
        "languages": corpus.languages,
        "profiles": [
            {
                "author_id": p.author_id,
                "language": p.language,
                "label": p.label,
                "posts": [
                    {
                        "raw_text": post.raw_text,
                        "normalized_text": post.normalized_text,
                        "tokens": post.tokens,
                        "token_ids": post.token_ids,
                        "attention_mask": post.attention_mask,
                    }
                    for post in p.posts
                ],
            }
            for p in sorted(corpus, key=lambda p: p.author_id)
        ],
    }
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)


def corpus_from_json(text: str) -> Corpus:
    payload = json.loads(text)
    profiles = []
    for entry in payload["profiles"]:
        posts = [
            Post(
                raw_text=d["raw_text"],
                normalized_text=d["normalized_text"],
                tokens=list(d["tokens"]),
                token_ids=list(d["token_ids"]),
                attention_mask=list(d["attention_mask"]),
            )
            for d in entry["posts"]
        ]
        profiles.append(AuthorProfile(entry["author_id"], entry["language"], posts, entry["label"]))
    return Corpus(profiles)
