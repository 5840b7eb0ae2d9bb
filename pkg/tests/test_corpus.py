"""Corpus pipeline: normalization, tokenization, ingestion, statistics."""

import json

import pytest

from hateprofiler import corpus as cp
from hateprofiler.errors import (
    ConfigError,
    ConsistencyError,
    CorpusParseError,
    InputError,
)


class TestNormalizeTags:
    def test_all_four_replacements(self):
        text = "RT #USER# look #URL# and #HASHTAG# now"
        assert cp.normalize_tags(text) == "[RT] [USER] look [URL] and [HASHTAG] now"

    def test_rt_requires_word_boundaries(self):
        """RT only rewrites as a standalone token, not inside words."""
        assert cp.normalize_tags("START ART RTX") == "START ART RTX"
        assert cp.normalize_tags("RT") == "[RT]"
        assert cp.normalize_tags("a RT b") == "a [RT] b"
        assert cp.normalize_tags("ends with RT") == "ends with [RT]"

    def test_idempotent(self):
        text = "RT #USER# mixed #URL##HASHTAG# RT"
        once = cp.normalize_tags(text)
        assert cp.normalize_tags(once) == once

    def test_adjacent_markers(self):
        assert cp.normalize_tags("#URL##URL#") == "[URL][URL]"

    def test_plain_text_unchanged(self):
        assert cp.normalize_tags("nothing special here") == "nothing special here"


class TestTokenize:
    def test_lowercases_words(self):
        assert cp.tokenize("Hello World") == ["hello", "world"]

    def test_special_tags_stay_atomic_and_cased(self):
        assert cp.tokenize("[URL] then [USER]") == ["[URL]", "then", "[USER]"]

    def test_punctuation_is_separate(self):
        assert cp.tokenize("wait, what?!") == ["wait", ",", "what", "?", "!"]

    def test_unknown_brackets_split(self):
        # only the six framework tags are atomic
        assert cp.tokenize("[FOO]") == ["[", "foo", "]"]

    def test_empty_string(self):
        assert cp.tokenize("") == []

    def test_normalization_then_tokenization(self):
        toks = cp.tokenize(cp.normalize_tags("RT #USER# Check THIS"))
        assert toks == ["[RT]", "[USER]", "check", "this"]


class TestVocabulary:
    def test_reserved_block_is_pinned(self):
        v = cp.Vocabulary()
        assert v.id_to_token[:8] == [
            "[PAD]", "[UNK]", "[URL]", "[HASHTAG]", "[USER]", "[RT]",
            "[POSTSTART]", "[POSTEND]"]
        assert v.id_of("[PAD]") == 0
        assert v.id_of("[UNK]") == 1

    def test_unknown_token_maps_to_unk(self):
        v = cp.Vocabulary(["hello"])
        assert v.id_of("hello") == 8
        assert v.id_of("nonexistent") == 1

    def test_build_vocab_orders_by_frequency_then_token(self):
        posts = [cp.Post("", "", ["b", "b", "a", "a", "c"])]
        c = cp.Corpus([cp.AuthorProfile("x", "en", posts)])
        v = cp.build_vocab(c)
        assert v.non_reserved_tokens() == ["a", "b", "c"]

    def test_min_freq_filters(self):
        posts = [cp.Post("", "", ["a", "a", "b"])]
        c = cp.Corpus([cp.AuthorProfile("x", "en", posts)])
        v = cp.build_vocab(c, min_freq=2)
        assert v.non_reserved_tokens() == ["a"]
        with pytest.raises(ConfigError):
            cp.build_vocab(c, min_freq=0)

    def test_special_tags_never_duplicated(self):
        posts = [cp.Post("", "", ["[URL]", "word", "[URL]"])]
        c = cp.Corpus([cp.AuthorProfile("x", "en", posts)])
        v = cp.build_vocab(c)
        assert v.non_reserved_tokens() == ["word"]


class TestEncodePost:
    def test_pad_and_mask(self):
        v = cp.Vocabulary(["a", "b"])
        post = cp.encode_post(v, ["a", "b"], 4)
        assert post.token_ids == [8, 9, 0, 0]
        assert post.attention_mask == [1, 1, 0, 0]

    def test_truncation(self):
        v = cp.Vocabulary(["a"])
        post = cp.encode_post(v, ["a"] * 10, 3)
        assert post.token_ids == [8, 8, 8]
        assert post.attention_mask == [1, 1, 1]

    def test_oov_becomes_unk(self):
        v = cp.Vocabulary(["a"])
        post = cp.encode_post(v, ["zzz"], 2)
        assert post.token_ids == [1, 0]

    def test_bad_length_rejected(self):
        with pytest.raises(ConfigError):
            cp.encode_post(cp.Vocabulary(), ["a"], 0)


class TestCorpusContainer:
    def test_duplicate_author_rejected(self):
        p = [cp.Post("", "", ["a"])]
        with pytest.raises(ConsistencyError):
            cp.Corpus([cp.AuthorProfile("x", "en", p),
                       cp.AuthorProfile("x", "en", p)])

    def test_empty_feed_rejected(self):
        with pytest.raises(ConsistencyError):
            cp.Corpus([cp.AuthorProfile("x", "en", [])])

    def test_languages_sorted_unique(self):
        p = [cp.Post("", "", ["a"])]
        c = cp.Corpus([cp.AuthorProfile("a", "es", p),
                       cp.AuthorProfile("b", "en", p),
                       cp.AuthorProfile("c", "en", p)])
        assert c.languages == ["en", "es"]
        assert len(c) == 3
        assert c.by_id["b"].language == "en"


class TestPanIngestion:
    def test_load_directory(self, pan_fixture):
        c = cp.load_pan_directory(pan_fixture["en_dir"], "en")
        assert len(c) == 4
        assert sorted(c.by_id) == ["a1en", "a2en", "a3en", "a4en"]
        a1 = c.by_id["a1en"]
        assert a1.language == "en"
        assert len(a1.posts) == 3
        # normalization applied during parsing
        assert a1.posts[0].normalized_text.startswith("[RT] [USER]")
        assert a1.posts[0].tokens[0] == "[RT]"

    def test_missing_directory(self, tmp_path):
        with pytest.raises(InputError):
            cp.load_pan_directory(tmp_path / "absent", "en")

    def test_malformed_xml(self, tmp_path):
        (tmp_path / "bad.xml").write_text("<author><documents>", encoding="utf-8")
        with pytest.raises(CorpusParseError, match="malformed"):
            cp.load_pan_directory(tmp_path, "en")

    def test_wrong_root_element(self, tmp_path):
        (tmp_path / "bad.xml").write_text(
            "<feed><documents/></feed>", encoding="utf-8")
        with pytest.raises(CorpusParseError, match="author"):
            cp.load_pan_directory(tmp_path, "en")

    def test_missing_documents_element(self, tmp_path):
        (tmp_path / "bad.xml").write_text(
            '<author lang="en"></author>', encoding="utf-8")
        with pytest.raises(CorpusParseError, match="documents"):
            cp.load_pan_directory(tmp_path, "en")

    def test_language_falls_back_to_argument(self, tmp_path):
        (tmp_path / "x.xml").write_text(
            "<author><documents><document>hi</document></documents></author>",
            encoding="utf-8")
        c = cp.load_pan_directory(tmp_path, "es")
        assert c.by_id["x"].language == "es"

    def test_deterministic_file_order(self, pan_fixture):
        c = cp.load_pan_directory(pan_fixture["en_dir"], "en")
        assert [p.author_id for p in c] == sorted(p.author_id for p in c)


class TestTruthFiles:
    def test_load_and_attach(self, pan_fixture):
        c = cp.load_pan_directory(pan_fixture["en_dir"], "en")
        truth = cp.load_truth(pan_fixture["en_truth"])
        cp.attach_labels(c, truth)
        assert c.by_id["a1en"].label == 1
        assert c.by_id["a2en"].label == 0

    def test_malformed_line(self, tmp_path):
        f = tmp_path / "truth.txt"
        f.write_text("a1:::maybe\n", encoding="utf-8")
        with pytest.raises(CorpusParseError):
            cp.load_truth(f)
        f.write_text("a1::1\n", encoding="utf-8")
        with pytest.raises(CorpusParseError):
            cp.load_truth(f)

    def test_blank_lines_tolerated(self, tmp_path):
        f = tmp_path / "truth.txt"
        f.write_text("a1:::1\n\n  \nb2:::0\n", encoding="utf-8")
        assert cp.load_truth(f) == {"a1": 1, "b2": 0}

    def test_duplicate_truth_entry(self, tmp_path):
        f = tmp_path / "truth.txt"
        f.write_text("a1:::1\na1:::0\n", encoding="utf-8")
        with pytest.raises(ConsistencyError):
            cp.load_truth(f)

    def test_attach_rejects_uncovered_ids(self):
        p = [cp.Post("", "", ["a"])]
        c = cp.Corpus([cp.AuthorProfile("a1", "en", p)])
        with pytest.raises(ConsistencyError, match="ghost"):
            cp.attach_labels(c, {"a1": 1, "ghost": 0})
        with pytest.raises(ConsistencyError, match="a1"):
            cp.attach_labels(c, {})

    def test_merge_corpora(self, pan_fixture):
        en = cp.load_pan_directory(pan_fixture["en_dir"], "en")
        es = cp.load_pan_directory(pan_fixture["es_dir"], "es")
        merged = cp.merge_corpora(en, es)
        assert len(merged) == 8
        assert merged.languages == ["en", "es"]


class TestJoinPosts:
    def test_markers_wrap_each_post(self):
        v = cp.Vocabulary(["a", "b"])
        profile = cp.AuthorProfile("x", "en", [
            cp.Post("a", "a", ["a"]), cp.Post("b", "b", ["b"])])
        joined = cp.join_posts(v, profile, max_len=10)
        assert joined.tokens == ["[POSTSTART]", "a", "[POSTEND]",
                                 "[POSTSTART]", "b", "[POSTEND]"]
        assert joined.token_ids[:6] == [6, 8, 7, 6, 9, 7]
        assert joined.attention_mask == [1] * 6 + [0] * 4

    def test_without_markers(self):
        v = cp.Vocabulary(["a", "b"])
        profile = cp.AuthorProfile("x", "en", [
            cp.Post("a", "a", ["a"]), cp.Post("b", "b", ["b"])])
        joined = cp.join_posts(v, profile, max_len=4, with_markers=False)
        assert joined.tokens == ["a", "b"]

    def test_truncates_to_max_len(self):
        v = cp.Vocabulary(["a"])
        profile = cp.AuthorProfile("x", "en",
                                   [cp.Post("a", "a", ["a"] * 50)])
        joined = cp.join_posts(v, profile, max_len=8)
        assert len(joined.token_ids) == 8
        assert sum(joined.attention_mask) == 8


class TestStats:
    def _labeled_corpus(self):
        def mk(tokens):
            return cp.Post(" ".join(tokens), " ".join(tokens), tokens)
        return cp.Corpus([
            cp.AuthorProfile("s1", "en", [mk(["a"] * 4), mk(["b"] * 6)], 1),
            cp.AuthorProfile("n1", "en", [mk(["c"] * 2)], 0),
            cp.AuthorProfile("n2", "en", [mk(["d"] * 8), mk(["e"] * 4)], 0),
        ])

    def test_exact_values(self):
        stats = cp.corpus_stats(self._labeled_corpus())
        s = stats.per_language["en"]
        assert s.total_profiles == 3
        assert s.spreaders == 1
        assert s.posts_per_profile == pytest.approx(5 / 3)
        # spreader post lengths [4, 6]: mean 5, population std 1
        assert s.spreader_len_mean == pytest.approx(5.0)
        assert s.spreader_len_std == pytest.approx(1.0)
        # normal post lengths [2, 8, 4]: mean 14/3
        assert s.normal_len_mean == pytest.approx(14 / 3)

    def test_unlabeled_author_rejected(self):
        c = cp.Corpus([cp.AuthorProfile("x", "en", [cp.Post("", "", ["a"])])])
        with pytest.raises(InputError):
            cp.corpus_stats(c)

    def test_table_contains_headline_rows(self):
        text = cp.format_stats_table(cp.corpus_stats(self._labeled_corpus()))
        assert "#Total Profiles" in text
        assert "#Hate Speech Spreaders" in text
        assert "5.00 ± 1.00" in text

    def test_json_dict_round_trips_through_json(self):
        d = cp.stats_to_json_dict(cp.corpus_stats(self._labeled_corpus()))
        again = json.loads(json.dumps(d))
        assert again["en"]["total_profiles"] == 3
        assert again["en"]["spreader_token_len"]["mean"] == 5.0


class TestCanonicalJson:
    def test_round_trip_preserves_everything(self, pan_fixture):
        c = cp.load_pan_directory(pan_fixture["en_dir"], "en")
        cp.attach_labels(c, cp.load_truth(pan_fixture["en_truth"]))
        v = cp.build_vocab(c)
        cp.encode_corpus(c, v, 12)
        text = cp.corpus_to_json(c)
        back = cp.corpus_from_json(text)
        assert sorted(back.by_id) == sorted(c.by_id)
        for p in c:
            q = back.by_id[p.author_id]
            assert q.label == p.label
            assert q.language == p.language
            for a, b in zip(p.posts, q.posts):
                assert a.tokens == b.tokens
                assert a.token_ids == b.token_ids
                assert a.attention_mask == b.attention_mask

    def test_serialization_is_canonical(self, pan_fixture):
        c = cp.load_pan_directory(pan_fixture["en_dir"], "en")
        cp.attach_labels(c, cp.load_truth(pan_fixture["en_truth"]))
        assert cp.corpus_to_json(c) == cp.corpus_to_json(
            cp.corpus_from_json(cp.corpus_to_json(c)))
