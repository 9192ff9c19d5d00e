import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reportprm.errors import (
    BalancingError,
    ConfigError,
    OracleProtocolError,
    OracleStatusError,
)
from reportprm.labeling import (
    LabeledSentence,
    OracleConfig,
    RemoteOracle,
    balance,
    label_corpus,
    label_sentence,
    normalize_tokens,
    synthetic_oracle,
)


class TestSyntheticOracle:
    def test_subset_with_matching_parity(self):
        v = synthetic_oracle("no pleural effusion or pneumothorax", "no pleural effusion")
        assert v.relation == "entailment"

    def test_identity(self):
        assert synthetic_oracle("the lungs are clear", "the lungs are clear").relation == "entailment"

    def test_parity_mismatch_is_contradiction(self):
        assert synthetic_oracle("pneumothorax is present", "no pneumothorax").relation == "contradiction"

    def test_disjoint_is_neutral(self):
        assert synthetic_oracle("the heart is enlarged", "no pneumothorax").relation == "neutral"

    def test_plural_stemming(self):
        assert synthetic_oracle("there are effusions", "there are effusion").relation == "entailment"

    @given(st.text(alphabet="abcdefg nowithout.", max_size=40))
    @settings(max_examples=80, deadline=None)
    def test_normalization_idempotent(self, text):
        once = normalize_tokens(text)
        assert normalize_tokens(" ".join(once)) == once

    @given(
        st.text(alphabet="abcde no", min_size=1, max_size=30),
        st.text(alphabet="abcde no", min_size=1, max_size=30),
    )
    @settings(max_examples=80, deadline=None)
    def test_deterministic(self, premise, hypothesis):
        assert synthetic_oracle(premise, hypothesis) == synthetic_oracle(premise, hypothesis)


class TestLabelSentence:
    def test_reflexive_entailment(self):
        got = label_sentence("No effusion.", ["No effusion.", "Clear lungs."], synthetic_oracle)
        assert got.label == 1
        assert got.entailing_gt_index == 0

    def test_negation_rule_blocks(self):
        got = label_sentence("No pneumothorax.", ["Pneumothorax is present."], synthetic_oracle)
        assert got.label == 0
        assert got.entailing_gt_index is None

    def test_zero_overlap(self):
        got = label_sentence("No pneumothorax.", ["The heart is enlarged."], synthetic_oracle)
        assert got.label == 0

    def test_monotone_in_gt(self):
        base = ["The heart is enlarged."]
        more = base + ["No pneumothorax or effusion."]
        first = label_sentence("No pneumothorax.", base, synthetic_oracle)
        second = label_sentence("No pneumothorax.", more, synthetic_oracle)
        assert first.label == 0
        assert second.label == 1


class TestLabelCorpus:
    def test_counts_and_order(self, small_corpus):
        labels = small_corpus["labels"]
        keys = [(s.study_id, s.sentence_index) for s in labels]
        assert keys == sorted(keys)
        n_sentences = sum(len(r.sentences) for r in small_corpus["generated"])
        assert len(labels) == n_sentences

    def test_figure_example_completions(self, example_context):
        # Ground truth supports only the third completion.
        studies = [(example_context, _gt(example_context.study_id))]
        generated = [_report(example_context.study_id)]
        labels = label_corpus(studies, generated, synthetic_oracle)
        assert [s.label for s in labels] == [0, 0, 1]

    def test_empty_generated(self, example_context):
        studies = [(example_context, _gt(example_context.study_id))]
        assert label_corpus(studies, [], synthetic_oracle) == []

    def test_unknown_study_rejected(self, example_context):
        from reportprm.errors import JoinError

        studies = [(example_context, _gt(example_context.study_id))]
        with pytest.raises(JoinError):
            label_corpus(studies, [_report("other-study")], synthetic_oracle)


def _gt(study_id):
    from reportprm.corpus import GroundTruthReport

    return GroundTruthReport(
        study_id=study_id,
        sentences=(
            "Cardiac size is normal.",
            "There is a small left pleural effusion.",
        ),
    )


def _report(study_id):
    # The three-completion structure whose labels come out (0, 0, 1).
    from reportprm.corpus import GeneratedReport, GeneratedSentence

    return GeneratedReport(
        study_id=study_id,
        generator_id="test",
        sentences=(
            GeneratedSentence(
                "There are patchy opacities in the right upper lung, right lower lung, "
                "and left lower lung."
            ),
            GeneratedSentence("No pleural effusion or pneumothorax."),
            GeneratedSentence("Cardiac size is normal."),
        ),
    )


class TestBalance:
    def _labels(self, ones, zeros):
        out = []
        for i in range(ones + zeros):
            label = 1 if i < ones else 0
            out.append(
                LabeledSentence("s", i, f"t{i}", label, entailing_gt_index=0 if label else None)
            )
        return out

    def test_downsample_to_ratio_one(self):
        balanced = balance(self._labels(10, 4), target_ratio=1.0, seed=0)
        assert sum(s.label for s in balanced) == 4
        assert sum(1 - s.label for s in balanced) == 4

    def test_already_balanced_unchanged(self):
        labels = self._labels(4, 4)
        assert balance(labels, 1.0, seed=0) == labels

    def test_seed_determinism(self):
        labels = self._labels(30, 10)
        a = balance(labels, 1.0, seed=5)
        b = balance(labels, 1.0, seed=5)
        c = balance(labels, 1.0, seed=6)
        assert a == b
        assert a != c

    def test_minority_untouched_order_stable(self):
        labels = self._labels(20, 7)
        balanced = balance(labels, 1.0, seed=3)
        assert [s for s in balanced if s.label == 0] == [s for s in labels if s.label == 0]
        positions = {id(s): i for i, s in enumerate(labels)}
        assert [positions[id(s)] for s in balanced] == sorted(positions[id(s)] for s in balanced)

    def test_single_class_rejected(self):
        with pytest.raises(BalancingError):
            balance(self._labels(5, 0), 1.0, seed=0)

    def test_bad_ratio_rejected(self):
        with pytest.raises(ConfigError):
            balance(self._labels(2, 2), 0.0, seed=0)


class _OracleHandler(BaseHTTPRequestHandler):
    # ("ok", relation) | ("status", code) | ("body", raw) | ("sleep", seconds)
    script = []
    lock = threading.Lock()

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        with self.lock:
            action = self.script.pop(0) if self.script else ("ok", "entailment")
        if action[0] == "sleep":
            time.sleep(action[1])
            action = ("ok", "entailment")
        if action[0] == "status":
            self.send_response(action[1])
            self.end_headers()
            return
        if action[0] == "body":
            payload = action[1].encode()
        else:
            payload = json.dumps({"relation": action[1], "confidence": 0.9}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def oracle_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _OracleHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    thread.join(timeout=2)


class TestRemoteOracle:
    def _config(self, server, retries=3):
        return OracleConfig(
            backend="remote",
            endpoint=f"http://127.0.0.1:{server.server_port}/nli",
            timeout=2.0,
            retries=retries,
            backoff=0.01,
        )

    def test_success(self, oracle_server):
        _OracleHandler.script = [("ok", "entailment")]
        verdict = RemoteOracle(self._config(oracle_server))("a", "b")
        assert verdict.relation == "entailment"
        assert verdict.confidence == 0.9

    def test_unknown_relation_is_protocol_error(self, oracle_server):
        _OracleHandler.script = [("ok", "maybe")]
        with pytest.raises(OracleProtocolError):
            RemoteOracle(self._config(oracle_server))("a", "b")

    def test_non_json_is_protocol_error(self, oracle_server):
        _OracleHandler.script = [("body", "not json")]
        with pytest.raises(OracleProtocolError):
            RemoteOracle(self._config(oracle_server))("a", "b")

    def test_client_error_not_retried(self, oracle_server):
        _OracleHandler.script = [("status", 404), ("ok", "entailment")]
        with pytest.raises(OracleStatusError):
            RemoteOracle(self._config(oracle_server))("a", "b")

    def test_two_failures_then_success_with_retries(self, oracle_server):
        _OracleHandler.script = [("status", 500), ("status", 502), ("ok", "neutral")]
        verdict = RemoteOracle(self._config(oracle_server, retries=3))("a", "b")
        assert verdict.relation == "neutral"

    def test_two_timeouts_then_success_with_retries(self, oracle_server):
        _OracleHandler.script = [("sleep", 1.0), ("sleep", 1.0), ("ok", "entailment")]
        config = OracleConfig(
            backend="remote",
            endpoint=f"http://127.0.0.1:{oracle_server.server_port}/nli",
            timeout=0.2,
            retries=3,
            backoff=0.01,
        )
        verdict = RemoteOracle(config)("a", "b")
        assert verdict.relation == "entailment"

    def test_retries_exhausted(self, oracle_server):
        _OracleHandler.script = [("status", 500)] * 3
        with pytest.raises(OracleStatusError):
            RemoteOracle(self._config(oracle_server, retries=2))("a", "b")

    def test_remote_requires_endpoint(self):
        with pytest.raises(ConfigError):
            OracleConfig(backend="remote", endpoint=None)
