import math

import numpy as np
import pytest
import torch

from reportprm.corpus import AblationMask, ClinicalContext
from reportprm.errors import (
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    EncodingError,
)
from reportprm.prm import (
    TrainConfig,
    Vocabulary,
    build_training_encodings,
    encode_step,
    encode_training,
    forward,
    grad_check,
    load_checkpoint,
    prm_loss,
    save_checkpoint,
    tokenize,
    train,
    verify,
)
from reportprm.prm.model import ModelArch, SentenceVerifier
from reportprm.prm.objective import batch_loss

VOCAB = Vocabulary(2048)
TOY_ARCH = ModelArch(embed_dim=64, layers=2, heads=4, max_len=256, vocab_size=2048)


def toy_model(seed=0, arch=TOY_ARCH):
    return SentenceVerifier(arch, seed=seed)


def example_ctx(study_id="s1"):
    return ClinicalContext(
        study_id=study_id,
        preamble="Describe the findings.",
        indication="Acute dyspnea.",
        technique="Portable chest radiograph. No pneumothorax. There is pulmonary edema.",
        comparison="Not applicable.",
    )


class TestTokenize:
    def test_empty(self):
        assert tokenize("", VOCAB) == []

    def test_three_ids_stable(self):
        first = tokenize("No pneumothorax.", VOCAB)
        second = tokenize("No pneumothorax.", VOCAB)
        assert len(first) == 3
        assert first == second

    def test_newline_is_sep(self):
        assert tokenize("\n", VOCAB) == [VOCAB.SEP]

    def test_markers_reserved(self):
        ids = tokenize("INDICATION: cough", VOCAB)
        assert ids[0] == VOCAB.IND
        assert all(i >= VOCAB.RESERVED for i in ids[1:])

    def test_case_insensitive_words(self):
        assert tokenize("Edema", VOCAB) == tokenize("edema", VOCAB)

    def test_hash_never_hits_reserved(self):
        for word in ("a", "no", "pneumothorax", "1", "zq"):
            for tok in tokenize(word, VOCAB):
                assert tok >= VOCAB.RESERVED


class TestEncoding:
    def test_training_structure(self, example_context):
        sentences = [
            "There are patchy opacities in the right upper lung.",
            "No pleural effusion or pneumothorax.",
            "Cardiac size is normal.",
        ]
        enc = encode_training(example_context, sentences, [0, 0, 1], VOCAB)
        assert len(enc.label_positions) == 3
        assert enc.labels == (0, 0, 1)
        assert enc.token_ids[enc.label_positions[-1]] == VOCAB.LABEL1
        assert enc.token_ids[enc.label_positions[0]] == VOCAB.LABEL0
        for pos in enc.label_positions:
            assert enc.token_ids[pos - 1] == VOCAB.SEP

    def test_single_sentence(self):
        enc = encode_training(example_ctx(), ["No pneumothorax."], [1], VOCAB)
        seps = [i for i, t in enumerate(enc.token_ids) if t == VOCAB.SEP]
        labels = [i for i, t in enumerate(enc.token_ids) if t in (VOCAB.LABEL0, VOCAB.LABEL1)]
        assert len(seps) == 1 and len(labels) == 1
        assert enc.token_ids[-2:] == (VOCAB.SEP, VOCAB.LABEL1)

    def test_truncation_drops_whole_sentences(self):
        ctx = example_ctx()
        prompt_len = len(tokenize("Describe the findings. INDICATION: Acute dyspnea. TECHNIQUE: Portable chest radiograph. No pneumothorax. There is pulmonary edema. COMPARISON: Not applicable.", VOCAB))
        sentence = "No pneumothorax."
        block = len(tokenize(sentence, VOCAB)) + 2
        max_len = prompt_len + 3 * block + 1  # 4th sentence cannot fit
        enc = encode_training(ctx, [sentence] * 4, [1, 0, 1, 0], VOCAB, max_len=max_len)
        assert len(enc.label_positions) == 3
        assert enc.labels == (1, 0, 1)

    def test_zero_sentences_rejected(self):
        with pytest.raises(EncodingError):
            encode_training(example_ctx(), [], [], VOCAB)

    def test_prompt_budget_truncates_right(self):
        ctx = example_ctx()
        enc_full = encode_training(ctx, ["No pneumothorax."], [1], VOCAB, prompt_budget=512)
        enc_cut = encode_training(ctx, ["No pneumothorax."], [1], VOCAB, prompt_budget=4)
        assert enc_cut.token_ids[:4] == enc_full.token_ids[:4]
        assert len(enc_cut.token_ids) < len(enc_full.token_ids)

    def test_step_encoding_points_past_end(self):
        enc = encode_step(example_ctx(), ["No pneumothorax.", "Cardiac size is normal."], [1], VOCAB)
        assert enc.label_positions == (len(enc.token_ids),)
        assert enc.token_ids[-1] == VOCAB.SEP
        assert VOCAB.LABEL1 in enc.token_ids  # fed-back label for sentence 1


class TestLoss:
    def test_half_probs(self):
        assert prm_loss([0.5] * 4, [1, 0, 1, 0]) == pytest.approx(4 * math.log(2), abs=1e-9)

    def test_single_confident(self):
        assert prm_loss([0.9], [1]) == pytest.approx(-math.log(0.9), abs=1e-9)

    def test_exact_labels_clamped(self):
        assert prm_loss([1.0, 0.0, 1.0, 0.0], [1, 0, 1, 0]) <= 4 * -math.log(1 - 1e-12) + 1e-15

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            prm_loss([0.5], [1, 0])

    def test_batch_loss_matches_prm_loss(self):
        model = toy_model()
        enc = encode_training(example_ctx(), ["No pneumothorax.", "Cardiac size is normal."], [1, 0], VOCAB)
        with torch.no_grad():
            logits = forward(model, enc)
            probs = torch.softmax(logits, dim=-1)[:, 1].tolist()
            loss, n = batch_loss(model, [enc])
        assert n == 2
        assert float(loss) == pytest.approx(prm_loss(probs, [1, 0]), rel=1e-6)


class TestForward:
    def test_fresh_model_probs_in_open_interval(self):
        model = toy_model()
        enc = encode_training(example_ctx(), ["No pneumothorax."], [1], VOCAB)
        logits = forward(model, enc)
        probs = torch.softmax(logits, dim=-1)[:, 1]
        assert torch.isfinite(logits).all()
        assert ((probs > 0) & (probs < 1)).all()

    def test_zero_head_gives_half(self):
        model = toy_model()
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.zero_()
        enc = encode_training(example_ctx(), ["No pneumothorax.", "Cardiac size is normal."], [1, 0], VOCAB)
        probs = torch.softmax(forward(model, enc), dim=-1)[:, 1]
        assert torch.all(probs == 0.5)

    def test_reads_independent_given_prefix(self):
        # A single forward gives all reads; reversing the query order cannot
        # change either probability.
        model = toy_model()
        enc = encode_training(example_ctx(), ["No pneumothorax.", "Cardiac size is normal."], [1, 0], VOCAB)
        logits = forward(model, enc)
        ids = torch.tensor([enc.token_ids], dtype=torch.long)
        full = model(ids)[0]
        for k, pos in reversed(list(enumerate(enc.label_positions))):
            assert torch.equal(full[pos - 1], logits[k])

    def test_position_overflow_rejected(self):
        arch = ModelArch(embed_dim=32, layers=1, heads=2, max_len=16, vocab_size=2048)
        model = toy_model(arch=arch)
        with pytest.raises(ConfigError):
            model(torch.zeros((1, 32), dtype=torch.long))


class TestGradCheck:
    def test_toy_model_small_error(self):
        model = toy_model()
        encodings = [
            encode_training(example_ctx("a"), ["No pneumothorax.", "Cardiac size is normal."], [1, 0], VOCAB),
            encode_training(example_ctx("b"), ["There is pulmonary edema."], [1], VOCAB),
        ]
        err = grad_check(model, encodings, eps=1e-5, num_coords=64, seed=0)
        assert err < 1e-4

    def test_larger_eps_still_finite(self):
        model = toy_model()
        encodings = [encode_training(example_ctx(), ["No pneumothorax."], [1], VOCAB)]
        loose = grad_check(model, encodings, eps=1e-3, num_coords=16, seed=1)
        tight = grad_check(model, encodings, eps=1e-5, num_coords=16, seed=1)
        assert math.isfinite(loose)
        assert tight <= 1e-4


class TestVerify:
    def test_zero_head_feeds_back_ones(self):
        model = toy_model()
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.zero_()
        result = verify(model, example_ctx(), ["No pneumothorax.", "Cardiac size is normal."], VOCAB)
        assert result.probs == (0.5, 0.5)
        assert result.fed_back_labels == (1, 1)

    def test_four_sentence_trace_shape(self):
        model = toy_model(seed=3)
        sentences = [
            "The lungs are clear.",
            "Negative for pleural effusion or pneumothorax.",
            "Cardiomediastinal silhouette is within normal limits.",
            "There are atherosclerotic aortic calcifications.",
        ]
        result = verify(model, example_ctx(), sentences, VOCAB)
        assert len(result.probs) == 4
        assert all(0.0 <= p <= 1.0 for p in result.probs)
        assert result.truncated_sentences == 0

    def test_prefix_causality_under_feedback_flip(self):
        # Forcing different fed-back labels may change later probs, never p1.
        model = toy_model(seed=5)
        sentences = ["No pneumothorax.", "Cardiac size is normal."]
        base = verify(model, example_ctx(), sentences, VOCAB, gold_labels=[0, 0])
        flipped = verify(model, example_ctx(), sentences, VOCAB, gold_labels=[1, 0])
        assert base.probs[0] == flipped.probs[0]

    def test_mutating_later_sentence_never_changes_earlier_probs(self):
        model = toy_model(seed=9)
        rng = np.random.default_rng(0)
        words = ["edema", "clear", "effusion", "stable", "normal", "opacity"]
        for _ in range(20):
            n = int(rng.integers(2, 5))
            sentences = [
                f"There is {words[rng.integers(len(words))]}." for _ in range(n)
            ]
            j = int(rng.integers(1, n))
            mutated = list(sentences)
            mutated[j] = "Completely different wording here."
            a = verify(model, example_ctx(), sentences, VOCAB)
            b = verify(model, example_ctx(), mutated, VOCAB)
            assert a.probs[:j] == b.probs[:j]

    def test_truncation_reports_remaining(self):
        arch = ModelArch(embed_dim=32, layers=1, heads=2, max_len=48, vocab_size=2048)
        model = toy_model(arch=arch)
        sentences = ["No pneumothorax."] * 10
        result = verify(model, example_ctx(), sentences, VOCAB, prompt_budget=24)
        assert result.truncated_sentences > 0
        assert len(result.probs) + result.truncated_sentences == 10

    def test_ablation_mask_changes_prefix(self):
        model = toy_model(seed=2)
        sentences = ["No pneumothorax."]
        full = verify(model, example_ctx(), sentences, VOCAB)
        ablated = verify(model, example_ctx(), sentences, VOCAB, mask=AblationMask(drop_technique=True))
        assert full.probs != ablated.probs


class TestCheckpoint:
    def test_roundtrip_preserves_verify(self, tmp_path):
        model = toy_model(seed=4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        sentences = ["No pneumothorax.", "Cardiac size is normal."]
        a = verify(model, example_ctx(), sentences, VOCAB)
        b = verify(loaded, example_ctx(), sentences, VOCAB)
        assert a == b

    def test_shape_mismatch(self, tmp_path):
        model = toy_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        import json
        import struct

        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[8:12])
        header = json.loads(raw[12: 12 + hlen])
        header["arch"]["embed_dim"] = 32
        header["arch"]["heads"] = 2
        new_header = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(raw[:8] + struct.pack("<I", len(new_header)) + new_header + raw[12 + hlen:])
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        model = toy_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        path.write_bytes(b"XXXXXXXX" + raw[8:])
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        model = toy_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)


class TestTrain:
    def _tiny_data(self, n=24):
        from reportprm.labeling import label_corpus, synthetic_oracle
        from reportprm.synthetic import SyntheticSpec, make_synthetic

        spec = SyntheticSpec(num_studies=n, sentences_min=2, sentences_max=3, seed=13)
        studies, generated, _ = make_synthetic(spec)
        labels = label_corpus(studies, generated, synthetic_oracle)
        encodings = build_training_encodings(studies, generated, labels, VOCAB,
                                             max_len=256, prompt_budget=128)
        return encodings

    def _config(self, **kw):
        base = dict(epochs=1, lr=1e-3, warmup_frac=0.1, micro_batch=4, accumulation=1,
                    max_len=256, prompt_budget=128, seed=0, eval_every=10)
        base.update(kw)
        return TrainConfig(**base)

    def test_zero_epochs_returns_init(self):
        encodings = self._tiny_data()
        config = self._config(epochs=0)
        model, history = train(encodings, config, arch=TOY_ARCH)
        reference = SentenceVerifier(TOY_ARCH, seed=config.seed)
        for p, q in zip(model.parameters(), reference.parameters()):
            assert torch.equal(p, q)
        assert history.steps == []

    def test_same_seed_identical_history_and_params(self):
        encodings = self._tiny_data()
        model_a, hist_a = train(encodings, self._config(epochs=2), arch=TOY_ARCH)
        model_b, hist_b = train(encodings, self._config(epochs=2), arch=TOY_ARCH)
        assert hist_a.steps == hist_b.steps
        assert hist_a.epochs == hist_b.epochs
        for p, q in zip(model_a.parameters(), model_b.parameters()):
            assert torch.equal(p, q)

    def test_different_seed_differs(self):
        encodings = self._tiny_data()
        _, hist_a = train(encodings, self._config(epochs=1, seed=0), arch=TOY_ARCH)
        _, hist_b = train(encodings, self._config(epochs=1, seed=1), arch=TOY_ARCH)
        assert hist_a.steps != hist_b.steps

    def test_validation_records_emitted(self):
        encodings = self._tiny_data()
        model, history = train(encodings, self._config(eval_every=2), val_encodings=encodings[:6], arch=TOY_ARCH)
        evaluated = [s for s in history.steps if "val_loss" in s]
        assert evaluated
        assert all("val_auroc" in s for s in evaluated)

    def test_loss_decreases_within_first_epoch_on_learnable_data(self):
        from reportprm.labeling import label_corpus, synthetic_oracle
        from reportprm.synthetic import SyntheticSpec, make_synthetic

        spec = SyntheticSpec(num_studies=300, sentences_min=2, sentences_max=4,
                             plant_strength=1.0, seed=17)
        studies, generated, _ = make_synthetic(spec)
        labels = label_corpus(studies, generated, synthetic_oracle)
        encodings = build_training_encodings(studies, generated, labels, VOCAB,
                                             max_len=256, prompt_budget=128)
        config = self._config(epochs=1, micro_batch=2, lr=1e-3)
        model, history = train(encodings, config, arch=TOY_ARCH)
        steps = [s["train_loss"] for s in history.steps]
        head = sum(steps[:10]) / 10
        tail = sum(steps[-10:]) / 10
        assert tail < head

    def test_single_class_rejected(self):
        from reportprm.labeling import label_corpus, synthetic_oracle
        from reportprm.synthetic import SyntheticSpec, make_synthetic

        spec = SyntheticSpec(num_studies=6, hallucination_rate=0.0, seed=2)
        studies, generated, _ = make_synthetic(spec)
        labels = label_corpus(studies, generated, synthetic_oracle)
        encodings = build_training_encodings(studies, generated, labels, VOCAB,
                                             max_len=256, prompt_budget=128)
        with pytest.raises(DataError):
            train(encodings, self._config(), arch=TOY_ARCH)
