"""Encoder, MLM loss, training determinism, prediction, checkpoint io."""

import numpy as np
import numpy.testing as npt
import pytest

from pelt.checkpoint import (deserialize_checkpoint, fingerprint,
                             load_checkpoint, save_checkpoint,
                             serialize_checkpoint, check_dim)
from pelt.corpus import CorpusConfig, generate_corpus, parse_corpus
from pelt.errors import (ConfigError, ContractError, CorruptionError,
                         FormatError, LengthError)
from pelt.model import (Checkpoint, ModelConfig, encode, encode_batch,
                        init_params, mlm_loss, new_checkpoint, output_repr,
                        predict_topk, train_mlm)
from pelt.synth import synthetic_checkpoint, synthetic_mlm_batch
from pelt.vocab import MASK_ID


@pytest.fixture(scope="module")
def tiny():
    return synthetic_checkpoint(dim=16, layers=2, heads=2, vocab_size=40,
                                max_len=16, seed=5, dtype=np.float32)


@pytest.fixture(scope="module")
def trained_bits():
    bundle = generate_corpus(CorpusConfig(n_entities=10, entity_slot_budget=400,
                                          lookup_per_entity=8,
                                          zero_train_entities=1, seed=11))
    sentences = parse_corpus(bundle.train_lines, bundle.vocab)
    config = ModelConfig(dim=48, layers=2, heads=4, max_len=32,
                         vocab_size=len(bundle.vocab), seed=11)
    ckpt = train_mlm(sentences, config, steps=1500, lr=3e-3, seed=11, log_every=0)
    return bundle, sentences, ckpt


class TestConfig:
    def test_heads_must_divide_dim(self):
        with pytest.raises(ConfigError):
            ModelConfig(dim=10, heads=3, vocab_size=10)

    def test_vocab_required(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=0)


class TestEncode:
    def test_indices_and_vectors_give_identical_h(self, tiny):
        tokens = [7, 12, 9, 30]
        emb = tiny.params["emb.word"].data
        vectors = [emb[t] for t in tokens]
        npt.assert_array_equal(encode(tiny, tokens), encode(tiny, vectors))

    def test_zero_layer_encoder_is_embedding_layernorm(self):
        ckpt = synthetic_checkpoint(dim=8, layers=0, heads=2, vocab_size=20,
                                    max_len=8, seed=1, dtype=np.float64)
        tokens = [5, 6, 7]
        h = encode(ckpt, tokens)
        emb = ckpt.params["emb.word"].data
        pos = ckpt.params["emb.pos"].data
        x = emb[tokens] + pos[:3]
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        ref = (x - mu) / np.sqrt(var + ckpt.config.ln_eps)
        ref = ref * ckpt.params["emb.ln.g"].data + ckpt.params["emb.ln.b"].data
        npt.assert_allclose(h, ref, atol=1e-12)

    def test_position_table_is_active(self, tiny):
        a = encode(tiny, [7, 9])
        b = encode(tiny, [9, 7])
        assert np.abs(a - b[::-1]).max() > 1e-6

    def test_overlong_sequence_rejected(self, tiny):
        with pytest.raises(LengthError):
            encode(tiny, [5] * (tiny.config.max_len + 1))

    def test_bad_vector_dim_rejected(self, tiny):
        with pytest.raises(ConfigError):
            encode(tiny, [5, np.zeros(tiny.config.dim + 1)])

    def test_batched_encode_matches_unbatched_for_single(self, tiny):
        tokens = [5, 6, 7, 8]
        npt.assert_array_equal(encode_batch(tiny, [tokens])[0],
                               encode(tiny, tokens))


class TestOutputRepr:
    def test_identity_head_layernorm_norm_is_sqrt_d(self):
        ckpt = synthetic_checkpoint(dim=16, layers=0, heads=2, vocab_size=20,
                                    max_len=8, seed=2, dtype=np.float64)
        ckpt.params["head.w"].data = np.eye(16)
        ckpt.params["head.b"].data[:] = 0.0
        cfg = ckpt.config
        object.__setattr__(cfg, "ln_eps", 0.0)
        h = encode(ckpt, [5, 6])
        r = output_repr(ckpt, h, 0)
        assert abs(np.linalg.norm(r) - np.sqrt(16)) < 1e-9

    def test_identical_inputs_identical_outputs(self, tiny):
        h = encode(tiny, [5, 6, 7])
        stacked = np.vstack([h[1], h[1]])
        a = output_repr(tiny, stacked, 0)
        b = output_repr(tiny, stacked, 1)
        npt.assert_array_equal(a, b)

    def test_differs_across_positions(self, trained_bits):
        _, sentences, ckpt = trained_bits
        h = encode(ckpt, sentences[0].tokens)
        r0 = output_repr(ckpt, h, 0)
        r1 = output_repr(ckpt, h, len(sentences[0].tokens) - 1)
        assert np.abs(r0 - r1).max() > 1e-6

    def test_position_bounds(self, tiny):
        h = encode(tiny, [5, 6])
        with pytest.raises(IndexError):
            output_repr(tiny, h, 2)


class TestMlmLoss:
    def test_initial_loss_near_log_vocab(self):
        ckpt = synthetic_checkpoint(dim=32, layers=2, heads=4, vocab_size=300,
                                    max_len=16, seed=3, dtype=np.float32)
        tokens, targets = synthetic_mlm_batch(300, batch=16, length=12, seed=3)
        loss = mlm_loss(ckpt.params, ckpt.config, tokens, targets).item()
        assert abs(loss - np.log(300)) / np.log(300) < 0.10

    def test_no_masked_position_rejected(self, tiny):
        tokens = np.full((2, 4), 6)
        targets = np.full((2, 4), -1)
        with pytest.raises(ContractError, match="no masked position"):
            mlm_loss(tiny.params, tiny.config, tokens, targets)

    def test_pad_positions_excluded(self, tiny):
        # same masked content, one row padded out: losses must agree
        tokens = np.array([[5, MASK_ID, 7, 8]])
        targets = np.array([[-1, 6, -1, -1]])
        base = mlm_loss(tiny.params, tiny.config, tokens, targets).item()
        tokens_p = np.array([[5, MASK_ID, 7, 8, 0, 0]])
        targets_p = np.array([[-1, 6, -1, -1, -1, -1]])
        padded = mlm_loss(tiny.params, tiny.config, tokens_p, targets_p).item()
        assert abs(base - padded) < 1e-5

    def test_tied_weight_row_perturbation_moves_both_sides(self):
        ckpt = synthetic_checkpoint(dim=16, layers=1, heads=2, vocab_size=30,
                                    max_len=8, seed=4, dtype=np.float64)
        token = 17
        other = [5, MASK_ID, 9]  # unrelated masked input, token 17 absent
        h0 = encode(ckpt, [token])
        r = output_repr(ckpt, encode(ckpt, other), 1)
        logit0 = ckpt.params["emb.word"].data[token] @ r
        ckpt.params["emb.word"].data[token, 3] += 0.5
        h1 = encode(ckpt, [token])
        r1 = output_repr(ckpt, encode(ckpt, other), 1)
        logit1 = ckpt.params["emb.word"].data[token] @ r1
        assert np.abs(h1 - h0).max() > 1e-9  # input side moved
        assert abs(logit1 - logit0) > 1e-9  # output side moved
        npt.assert_array_equal(r, r1)  # context repr itself is unaffected

    def test_no_separate_output_matrix_exists(self, tiny):
        emb_like = [n for n, p in tiny.params.items()
                    if p.data.shape == (tiny.config.vocab_size, tiny.config.dim)]
        assert emb_like == ["emb.word"]


class TestTrain:
    def test_loss_decreases(self, trained_bits):
        # loss at init is ~log |V|; a converging run must land far below it
        bundle, sentences, ckpt = trained_bits
        assert ckpt.final_loss < 0.4 * np.log(ckpt.config.vocab_size)

    def test_same_seed_bit_identical(self, trained_bits):
        bundle, sentences, _ = trained_bits
        config = ModelConfig(dim=16, layers=1, heads=2, max_len=32,
                             vocab_size=len(bundle.vocab), seed=12)
        a = train_mlm(sentences, config, steps=30, lr=1e-3, seed=9, log_every=0)
        b = train_mlm(sentences, config, steps=30, lr=1e-3, seed=9, log_every=0)
        assert serialize_checkpoint(a) == serialize_checkpoint(b)

    def test_empty_corpus_rejected(self):
        config = ModelConfig(dim=16, layers=1, heads=2, vocab_size=10)
        with pytest.raises(ContractError):
            train_mlm([], config, steps=1, lr=1e-3)


class TestPredictTopk:
    def test_full_k_is_permutation(self, tiny):
        v = tiny.config.vocab_size
        ranked = predict_topk(tiny, [5, MASK_ID, 7], 1, v)
        assert sorted(t for t, _ in ranked) == list(range(v))

    def test_k_clamped(self, tiny):
        ranked = predict_topk(tiny, [5, MASK_ID, 7], 1, 10 ** 6)
        assert len(ranked) == tiny.config.vocab_size

    def test_order_invariant_to_logit_shift(self, tiny):
        ranked = predict_topk(tiny, [5, MASK_ID, 7], 1, 10)
        logits = np.array([l for _, l in ranked])
        order = np.argsort(-logits, kind="stable")
        npt.assert_array_equal(order, np.arange(10))

    def test_position_must_hold_mask(self, tiny):
        with pytest.raises(ContractError):
            predict_topk(tiny, [5, 6, 7], 1, 3)

    def test_candidate_restriction(self, tiny):
        ranked = predict_topk(tiny, [5, MASK_ID, 7], 1, 5, candidates=[8, 9, 10])
        assert {t for t, _ in ranked} == {8, 9, 10}

    def test_frequent_entity_fact_ranked_first(self, trained_bits):
        bundle, _, ckpt = trained_bits
        entity = bundle.catalog.entries[0]  # most frequent
        line = f"[[{entity.entity_id}|{entity.surface}]] lives in [MASK]"
        from pelt.corpus import parse_marked_line
        s = parse_marked_line(line, bundle.vocab)
        pos = s.tokens.index(MASK_ID)
        ranked = predict_topk(ckpt, s.tokens, pos, 1)
        assert ranked[0][0] == bundle.vocab.id(entity.facts["lives_in"])


class TestCheckpointIO:
    def test_save_load_save_identical_bytes(self, tiny, tmp_path):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(tiny, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.config == tiny.config

    def test_wrong_magic_rejected(self, tiny, tmp_path):
        path = tmp_path / "bad.bin"
        raw = bytearray(serialize_checkpoint(tiny))
        raw[:8] = b"NOTMAGIC"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_wrong_version_rejected(self, tiny):
        raw = bytearray(serialize_checkpoint(tiny))
        raw[8:12] = (99).to_bytes(4, "little")
        with pytest.raises(FormatError, match="version"):
            deserialize_checkpoint(bytes(raw))

    def test_truncation_rejected(self, tiny):
        raw = serialize_checkpoint(tiny)
        with pytest.raises(CorruptionError, match="truncated"):
            deserialize_checkpoint(raw[:len(raw) // 2])

    def test_trailing_garbage_rejected(self, tiny):
        raw = serialize_checkpoint(tiny) + b"xx"
        with pytest.raises(CorruptionError, match="trailing"):
            deserialize_checkpoint(raw)

    def test_dim_mismatch_guard(self, tiny):
        with pytest.raises(ConfigError, match="D=16"):
            check_dim(tiny, 64)

    def test_fingerprint_tracks_content(self, tiny):
        fp1 = fingerprint(tiny)
        tiny.params["emb.word"].data[0, 0] += 1.0
        fp2 = fingerprint(tiny)
        tiny.params["emb.word"].data[0, 0] -= 1.0
        assert fp1 != fp2 and len(fp1) == 32

    def test_float64_checkpoint_serializes_as_f32(self):
        ckpt = synthetic_checkpoint(dim=8, layers=0, heads=2, vocab_size=12,
                                    max_len=4, seed=0, dtype=np.float64)
        loaded = deserialize_checkpoint(serialize_checkpoint(ckpt))
        assert loaded.params["emb.word"].data.dtype == np.float32
