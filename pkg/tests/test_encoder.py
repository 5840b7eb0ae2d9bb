"""Toy encoder and precomputed-embedding store, plus the SEMB1 container."""

import struct

import numpy as np
import pytest

from hateprofiler.encoder import (
    EncoderConfig,
    PrecomputedEmbeddingStore,
    ToyEncoder,
    encode_profile,
    load_embeddings,
    save_embeddings,
)
from hateprofiler.corpus import AuthorProfile, Post
from hateprofiler.errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    UnknownAuthorError,
)


def tiny_config(**overrides):
    base = dict(vocab_size=20, d_model=8, n_layers=1, n_heads=2, d_ff=16,
                max_post_len=6, dropout_p=0.0)
    base.update(overrides)
    return EncoderConfig(**base)


class TestEncoderConfig:
    def test_d_ff_defaults_to_four_times_width(self):
        c = EncoderConfig(vocab_size=20, d_model=8, d_ff=None)
        assert c.d_ff == 32

    def test_vocab_must_cover_reserved_block(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=7)

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=20, d_model=8, n_heads=3)

    def test_dropout_range(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=20, dropout_p=1.0)
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=20, dropout_p=-0.5)

    def test_positive_sizes(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=20, max_post_len=0)
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=20, n_layers=0)


class TestToyEncoder:
    def test_same_seed_same_parameters(self):
        c = tiny_config()
        e1 = ToyEncoder(c, np.random.default_rng(5))
        e2 = ToyEncoder(c, np.random.default_rng(5))
        for p1, p2 in zip(e1.parameters(), e2.parameters()):
            assert p1.name == p2.name
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_parameter_names_unique(self):
        enc = ToyEncoder(tiny_config(n_layers=2), np.random.default_rng(0))
        names = [p.name for p in enc.parameters()]
        assert len(names) == len(set(names))
        assert all(n.startswith("enc.") for n in names)

    def test_output_shapes(self):
        enc = ToyEncoder(tiny_config(), np.random.default_rng(1))
        pooled, attn = enc.encode_post([8, 9, 10], [1, 1, 1])
        assert pooled.shape == (8,)
        assert attn.shape == (2, 3, 3)

    def test_attention_rows_sum_to_one_where_unmasked(self):
        enc = ToyEncoder(tiny_config(), np.random.default_rng(2), dtype=np.float64)
        _, attn = enc.encode_post([8, 9, 10, 0], [1, 1, 1, 0])
        sums = attn.sum(axis=2)
        np.testing.assert_allclose(sums[:, :3], 1.0, atol=1e-9)
        # padded query rows are zeroed in the exported stack
        np.testing.assert_array_equal(sums[:, 3], 0.0)
        # padded keys receive zero attention from every live query
        np.testing.assert_array_equal(attn[:, :3, 3], 0.0)

    def test_padding_never_leaks_into_pooled_vector(self):
        """The pooled vector of a post must not change when the post is
        right-padded: masked keys and masked rows carry no signal."""
        c = tiny_config()
        enc = ToyEncoder(c, np.random.default_rng(3), dtype=np.float64)
        ids = [9, 12, 15]
        bare, _ = enc.encode_post(ids, [1, 1, 1])
        padded, _ = enc.encode_post(ids + [0, 0, 0], [1, 1, 1, 0, 0, 0])
        np.testing.assert_allclose(padded.data, bare.data, atol=1e-9)

    def test_all_padded_post_rejected(self):
        enc = ToyEncoder(tiny_config(), np.random.default_rng(4))
        with pytest.raises(DegenerateInputError):
            enc.encode_post([0, 0], [0, 0])

    def test_too_long_post_rejected(self):
        enc = ToyEncoder(tiny_config(max_post_len=2), np.random.default_rng(4))
        with pytest.raises(ConfigError):
            enc.encode_post([8] * 3, [1] * 3)

    def test_mismatched_mask_rejected(self):
        enc = ToyEncoder(tiny_config(), np.random.default_rng(4))
        with pytest.raises(ConfigError):
            enc.encode_post([8, 9], [1])

    def test_dropout_only_fires_in_training(self):
        c = tiny_config(dropout_p=0.5)
        enc = ToyEncoder(c, np.random.default_rng(6), dtype=np.float64)
        a, _ = enc.encode_post([8, 9], [1, 1])
        b, _ = enc.encode_post([8, 9], [1, 1])
        np.testing.assert_array_equal(a.data, b.data)
        t, _ = enc.encode_post([8, 9], [1, 1], training=True,
                               rng=np.random.default_rng(7))
        assert not np.allclose(t.data, a.data)

    def test_encode_profile_stacks_in_feed_order(self):
        enc = ToyEncoder(tiny_config(), np.random.default_rng(8), dtype=np.float64)
        posts = [Post("", "", [], token_ids=[8, 9], attention_mask=[1, 1]),
                 Post("", "", [], token_ids=[10, 0], attention_mask=[1, 0])]
        profile = AuthorProfile("auth", "en", posts)
        pm = encode_profile(enc, profile)
        assert pm.author_id == "auth"
        assert pm.matrix.shape == (2, 8)
        assert len(pm.token_attentions) == 2
        assert pm.post_masks == [[1, 1], [1, 0]]
        solo, _ = enc.encode_post([10, 0], [1, 0])
        np.testing.assert_array_equal(pm.matrix.data[1], solo.data)


class TestPrecomputedStore:
    def test_add_and_lookup(self):
        store = PrecomputedEmbeddingStore(3)
        store.add("a", np.ones((2, 3)))
        assert "a" in store
        assert len(store) == 1
        assert store.matrix("a").dtype == np.float32
        pm = store.post_matrix("a")
        assert pm.matrix.shape == (2, 3)
        assert pm.post_masks is None

    def test_unknown_author(self):
        store = PrecomputedEmbeddingStore(3)
        with pytest.raises(UnknownAuthorError):
            store.matrix("ghost")

    def test_dimension_mismatch(self):
        store = PrecomputedEmbeddingStore(3)
        with pytest.raises(ConfigError):
            store.add("a", np.ones((2, 4)))

    def test_zero_posts_rejected(self):
        store = PrecomputedEmbeddingStore(3)
        with pytest.raises(ConfigError):
            store.add("a", np.ones((0, 3)))

    def test_duplicate_rejected(self):
        store = PrecomputedEmbeddingStore(3)
        store.add("a", np.ones((1, 3)))
        with pytest.raises(ConfigError):
            store.add("a", np.ones((1, 3)))

    def test_nonpositive_dim_rejected(self):
        with pytest.raises(ConfigError):
            PrecomputedEmbeddingStore(0)


def small_store():
    store = PrecomputedEmbeddingStore(2)
    store.add("ab", np.array([[1.0, 2.0]], dtype=np.float32))
    store.add("céd", np.array([[3.0, 4.0], [5.0, 6.0]], dtype=np.float32))
    return store


class TestEmbeddingContainer:
    def test_round_trip_is_exact(self, tmp_path):
        path = tmp_path / "emb.semb"
        store = small_store()
        save_embeddings(store, path)
        back = load_embeddings(path)
        assert back.dim == 2
        assert sorted(back.author_ids()) == sorted(store.author_ids())
        for author in store.author_ids():
            np.testing.assert_array_equal(back.matrix(author), store.matrix(author))

    def test_save_load_save_is_byte_stable(self, tmp_path):
        p1 = tmp_path / "one.semb"
        p2 = tmp_path / "two.semb"
        save_embeddings(small_store(), p1)
        save_embeddings(load_embeddings(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_exact_byte_layout(self, tmp_path):
        """Freeze the on-disk layout: little-endian header and payload."""
        path = tmp_path / "emb.semb"
        store = PrecomputedEmbeddingStore(2)
        store.add("ab", np.array([[1.0, 2.0]], dtype=np.float32))
        save_embeddings(store, path)
        expected = (b"SEMB"
                    + struct.pack("<III", 1, 2, 1)
                    + struct.pack("<I", 2) + b"ab"
                    + struct.pack("<I", 1)
                    + np.array([1.0, 2.0], dtype="<f4").tobytes())
        assert path.read_bytes() == expected

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.semb"
        path.write_bytes(b"XXXX" + struct.pack("<III", 1, 2, 0))
        with pytest.raises(FormatError, match="magic"):
            load_embeddings(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "bad.semb"
        path.write_bytes(b"SEMB" + struct.pack("<III", 2, 2, 0))
        with pytest.raises(FormatError, match="version"):
            load_embeddings(path)

    def test_zero_dim_rejected(self, tmp_path):
        path = tmp_path / "bad.semb"
        path.write_bytes(b"SEMB" + struct.pack("<III", 1, 0, 0))
        with pytest.raises(FormatError, match="dim"):
            load_embeddings(path)

    def test_zero_posts_rejected(self, tmp_path):
        path = tmp_path / "bad.semb"
        path.write_bytes(b"SEMB" + struct.pack("<III", 1, 2, 1)
                         + struct.pack("<I", 1) + b"a" + struct.pack("<I", 0))
        with pytest.raises(FormatError, match="zero posts"):
            load_embeddings(path)

    def test_invalid_utf8_author_id(self, tmp_path):
        path = tmp_path / "bad.semb"
        path.write_bytes(b"SEMB" + struct.pack("<III", 1, 2, 1)
                         + struct.pack("<I", 2) + b"\xff\xfe"
                         + struct.pack("<I", 1)
                         + np.zeros(2, dtype="<f4").tobytes())
        with pytest.raises(FormatError, match="UTF-8"):
            load_embeddings(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "bad.semb"
        store = small_store()
        save_embeddings(store, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_embeddings(path)

    def test_every_truncation_is_a_format_error(self, tmp_path):
        """Cutting the file at any byte must raise FormatError, never crash."""
        good = tmp_path / "good.semb"
        save_embeddings(small_store(), good)
        blob = good.read_bytes()
        bad = tmp_path / "bad.semb"
        for cut in range(len(blob)):
            bad.write_bytes(blob[:cut])
            with pytest.raises(FormatError):
                load_embeddings(bad)
