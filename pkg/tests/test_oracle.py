import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from medneutral.neutralizer import detect_compounds
from medneutral.oracle import (
    CachedBackend,
    MockBackend,
    OracleBackendConfig,
    OracleTransportError,
    PromptPair,
    RecordingBackend,
    RemoteBackend,
    ReplayBackend,
    ReplyError,
    build_backend,
    build_classification_prompt,
    build_resolution_prompt,
    classify_antecedent,
    classify_corpus,
    highlight_pronoun,
    prompt_hash,
    resolve_antecedent,
    resolve_corpus,
)
from medneutral.records import (
    Abstract,
    AntecedentLabel,
    IntegrityError,
    PipelineError,
    ResolvedInstance,
)
from medneutral.scanner import scan_abstract

TABLE5_ROW1 = (
    "Some compromise must be reached between the unwillingness of the surgeon "
    "to spend most of his time performing abortions and the freedom for women "
    "to have them."
)


@pytest.fixture()
def row1(pronoun_lexicon):
    abstract = Abstract(pmid="5598532", text=TABLE5_ROW1)
    (instance,) = scan_abstract(abstract, pronoun_lexicon)
    return abstract, instance


def test_highlight_mid_text(row1):
    abstract, instance = row1
    highlighted = highlight_pronoun(abstract.text, instance)
    assert "most of [START]his[END] time" in highlighted
    assert len(highlighted) == len(abstract.text) + len("[START]") + len("[END]")
    assert highlighted.replace("[START]", "").replace("[END]", "") == abstract.text


def test_highlight_offset_zero(pronoun_lexicon):
    abstract = Abstract(pmid="1", text="He arrived early.")
    (instance,) = scan_abstract(abstract, pronoun_lexicon)
    assert highlight_pronoun(abstract.text, instance) == "[START]He[END] arrived early."


def test_highlight_stale_offset(row1):
    _, instance = row1
    with pytest.raises(IntegrityError):
        highlight_pronoun("edited text", instance)


GOLDEN_RESOLUTION_SYSTEM = (
    "You are a helpful assistant with identifying the direct antecedent of a "
    "pronoun. Here is your antecedent_background knowledge: B"
)
GOLDEN_RESOLUTION_USER = (
    "Identify the direct antecedent of the pronoun marked with [START] and "
    "[END] in the following abstract: Some compromise must be reached between "
    "the unwillingness of the surgeon to spend most of [START]his[END] time "
    "performing abortions and the freedom for women to have them.. Only "
    "answer with the antecedent."
)
GOLDEN_CLASSIFICATION_SYSTEM = (
    "You are a helpful assistant following these classification rules R."
)
GOLDEN_CLASSIFICATION_USER = (
    'In the following abstract, classify which label the noun "the surgeon" '
    "in the context of the abstract Some compromise must be reached between "
    "the unwillingness of the surgeon to spend most of [START]his[END] time "
    "performing abortions and the freedom for women to have them. is "
    'referring to: "patient," "occupation," "named individual," "author," '
    '"animal," or "other." Only output the label, no other text.'
)


def test_golden_resolution_prompt(row1):
    abstract, instance = row1
    prompt = build_resolution_prompt(instance, abstract, "B")
    assert prompt.system_content == GOLDEN_RESOLUTION_SYSTEM
    assert prompt.user_content == GOLDEN_RESOLUTION_USER


def test_golden_classification_prompt(row1):
    abstract, instance = row1
    resolved = ResolvedInstance(instance=instance, antecedent_text="the surgeon")
    prompt = build_classification_prompt(resolved, abstract, "R")
    assert prompt.system_content == GOLDEN_CLASSIFICATION_SYSTEM
    assert prompt.user_content == GOLDEN_CLASSIFICATION_USER


def test_classification_prompt_lists_all_labels(row1):
    abstract, instance = row1
    resolved = ResolvedInstance(instance=instance, antecedent_text="any physician")
    prompt = build_classification_prompt(resolved, abstract, "R")
    assert 'the noun "any physician"' in prompt.user_content
    for label in ('"patient,"', '"occupation,"', '"named individual,"',
                  '"author,"', '"animal,"', '"other."'):
        assert label in prompt.user_content


def test_compound_resolution_prompt(pronoun_lexicon, fixture_abstracts):
    abstract = next(a for a in fixture_abstracts if a.pmid == "834688")
    instances = detect_compounds(abstract.text, scan_abstract(abstract, pronoun_lexicon))
    prompt = build_resolution_prompt(instances[0], abstract, "B")
    assert "[START]he or she[END] should observe" in prompt.user_content


def test_empty_background_warns_but_builds(row1, caplog):
    abstract, instance = row1
    import logging

    with caplog.at_level(logging.WARNING, logger="medneutral.oracle"):
        prompt = build_resolution_prompt(instance, abstract, "")
    assert prompt.user_content
    assert any("empty background" in r.message for r in caplog.records)


# ---------------------------------------------------------------------------
# backends

def test_mock_first_match_wins():
    backend = MockBackend([("alpha", "first"), ("alp", "second")], default_reply="none")
    assert backend.complete(PromptPair("s", "alpha beta")) == "first"
    assert backend.complete(PromptPair("s", "nothing")) == "none"


def test_resolve_with_mock(row1):
    abstract, instance = row1
    backend = MockBackend([("[START]his[END]", "the surgeon")])
    resolved = resolve_antecedent(instance, abstract, backend)
    assert resolved.antecedent_text == "the surgeon"
    start, end = resolved.antecedent_span
    assert abstract.text[start:end] == "the surgeon"
    assert start < instance.offset


def test_reply_trimming(row1):
    abstract, instance = row1
    backend = MockBackend([("[START]", '  "Dr. Mora " ')])
    resolved = resolve_antecedent(instance, abstract, backend)
    assert resolved.antecedent_text == "Dr. Mora"
    assert resolved.antecedent_span is None  # not present verbatim in row 1


def test_empty_reply_is_failure(row1):
    abstract, instance = row1
    backend = MockBackend([])
    with pytest.raises(ReplyError) as exc_info:
        resolve_antecedent(instance, abstract, backend)
    assert exc_info.value.instance_id == instance.instance_id


def test_overlong_reply_flagged_but_kept(row1, caplog):
    import logging

    abstract, instance = row1
    backend = MockBackend([], default_reply="word " * 60)
    with caplog.at_level(logging.WARNING, logger="medneutral.oracle"):
        resolved = resolve_antecedent(instance, abstract, backend)
    assert resolved.antecedent_text.startswith("word")
    assert any("suspiciously long" in r.message for r in caplog.records)


def test_classify_normalization(row1):
    abstract, instance = row1
    resolved = ResolvedInstance(instance=instance, antecedent_text="the surgeon")
    for reply, expected in [
        ("occupation", AntecedentLabel.OCCUPATION),
        ("Named Individual.", AntecedentLabel.NAMED_INDIVIDUAL),
        ('"Patient"', AntecedentLabel.PATIENT_TRIAL_PARTICIPANT),
        ("trial participant", AntecedentLabel.PATIENT_TRIAL_PARTICIPANT),
    ]:
        backend = MockBackend([], default_reply=reply)
        classified = classify_antecedent(resolved, abstract, backend)
        assert classified.label is expected
        assert classified.label_source.value == "oracle"


def test_classify_invalid_label_keeps_raw(row1):
    abstract, instance = row1
    resolved = ResolvedInstance(instance=instance, antecedent_text="the surgeon")
    backend = MockBackend([], default_reply="unsure")
    with pytest.raises(ReplyError) as exc_info:
        classify_antecedent(resolved, abstract, backend)
    assert exc_info.value.raw_reply == "unsure"


def test_record_then_replay(tmp_path, row1):
    abstract, instance = row1
    transcript = tmp_path / "transcript.jsonl"
    recorded = RecordingBackend(MockBackend([("[START]", "the surgeon")]), str(transcript))
    first = resolve_antecedent(instance, abstract, recorded)

    replay = ReplayBackend(str(transcript))
    second = resolve_antecedent(instance, abstract, replay)
    assert first == second

    other_prompt = PromptPair("s", "unseen")
    with pytest.raises(ReplyError):
        replay.complete(other_prompt)


def test_cache_deduplicates_calls():
    calls = []

    class Counting:
        def complete(self, prompt):
            calls.append(prompt_hash(prompt))
            return "occupation"

    backend = CachedBackend(Counting())
    prompt = PromptPair("s", "u")
    assert backend.complete(prompt) == backend.complete(prompt) == "occupation"
    assert len(calls) == 1


def test_backend_config_validation(tmp_path):
    with pytest.raises(PipelineError):
        OracleBackendConfig(kind="remote")
    with pytest.raises(PipelineError):
        OracleBackendConfig(kind="replay")
    with pytest.raises(PipelineError):
        OracleBackendConfig(kind="mock", requests_per_minute=0)
    script = tmp_path / "rules.jsonl"
    script.write_text('{"contains": "x", "reply": "y"}\n', encoding="utf-8")
    backend = build_backend(OracleBackendConfig(kind="mock", script_path=str(script)))
    assert backend.complete(PromptPair("s", "x marks")) == "y"


# ---------------------------------------------------------------------------
# remote backend against a local server

class _ChatHandler(BaseHTTPRequestHandler):
    fail_first = 0
    last_payload = None

    def do_POST(self):
        cls = type(self)
        length = int(self.headers["Content-Length"])
        cls.last_payload = json.loads(self.rfile.read(length))
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(503)
            self.end_headers()
            return
        body = json.dumps(
            {"choices": [{"message": {"content": "the surgeon"}}]}
        ).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def _remote_config(endpoint, retries=2):
    return OracleBackendConfig(
        kind="remote",
        endpoint=endpoint,
        model_name="oracle-model",
        max_retries=retries,
        requests_per_minute=100000,
        timeout=5.0,
    )


def test_remote_backend_roundtrip(chat_server, row1):
    abstract, instance = row1
    _ChatHandler.fail_first = 0
    backend = RemoteBackend(_remote_config(chat_server))
    resolved = resolve_antecedent(instance, abstract, backend)
    assert resolved.antecedent_text == "the surgeon"
    payload = _ChatHandler.last_payload
    assert payload["model"] == "oracle-model"
    assert [m["role"] for m in payload["messages"]] == ["system", "user"]


def test_remote_retries_transport_errors(chat_server):
    _ChatHandler.fail_first = 2
    backend = RemoteBackend(_remote_config(chat_server, retries=3))
    assert backend.complete(PromptPair("s", "u")) == "the surgeon"


def test_remote_gives_up_after_retries(chat_server):
    _ChatHandler.fail_first = 10
    backend = RemoteBackend(_remote_config(chat_server, retries=1))
    with pytest.raises(OracleTransportError):
        backend.complete(PromptPair("s", "u"))
    _ChatHandler.fail_first = 0


# ---------------------------------------------------------------------------
# corpus drivers

def test_resolve_corpus_collects_failures(pronoun_lexicon, fixture_abstracts):
    abstracts = {a.pmid: a for a in fixture_abstracts}
    row1 = abstracts["5598532"]
    row3 = abstracts["12261512"]
    instances = scan_abstract(row1, pronoun_lexicon) + scan_abstract(row3, pronoun_lexicon)
    backend = MockBackend([("performing abortions", "the surgeon")])  # row3 unanswered
    resolved, failures = resolve_corpus(instances, abstracts, backend)
    assert len(resolved) == 1 and len(failures) == 1
    assert failures[0].stage == "resolve"


def test_workers_do_not_change_output(pronoun_lexicon, fixture_abstracts, tmp_path):
    abstracts = {a.pmid: a for a in fixture_abstracts}
    instances = []
    for a in fixture_abstracts:
        instances.extend(
            detect_compounds(a.text, scan_abstract(a, pronoun_lexicon))
        )
    from corpus_fixtures import DATA_DIR

    backend = MockBackend.from_script(str(DATA_DIR / "mock_oracle.jsonl"))
    serial, serial_failures = resolve_corpus(instances, abstracts, backend)
    threaded, threaded_failures = resolve_corpus(instances, abstracts, backend, workers=4)
    assert serial == threaded
    assert serial_failures == threaded_failures
    assert not serial_failures

    classified_serial, _ = classify_corpus(serial, abstracts, backend)
    classified_threaded, _ = classify_corpus(threaded, abstracts, backend, workers=4)
    assert classified_serial == classified_threaded
