import json
import logging

import pytest

from climcheck.domain import ClimcheckError, Label2, Label4, Scheme, Strategy
from climcheck.inference import (
    BackendError,
    BackendTransportError,
    Fallback,
    FallbackReason,
    ModelResponse,
    ScriptedBackend,
    Verdict,
    _redact,
    complete,
    format_reply,
    parse_verdict,
)
from climcheck.prompting import build_verdict_prompt
from util import FakeBackend, make_sample, reply_text


def response(text):
    return ModelResponse(raw_text=text)


def test_parse_plain_json_verdict():
    out = parse_verdict(
        response('{"label": "Accurate", "confidence": 85, "justification": "ok"}'),
        Scheme.FOUR_CLASS,
    )
    assert out == Verdict(Label4.ACCURATE, 85, "ok")


def test_parse_verdict_embedded_in_prose_and_drafts():
    text = (
        "Draft 1 considers the glacier. Draft 2 considers the date.\n"
        'Final answer: {"label": "misleading", "confidence": 60, '
        '"justification": "j", "drafts": ["a", "b"]}'
    )
    out = parse_verdict(response(text), Scheme.FOUR_CLASS)
    assert out.label is Label4.MISLEADING  # case-insensitive
    assert out.drafts == ("a", "b")


def test_parse_skips_unlabeled_objects():
    text = '{"note": "context"} then {"label": "False", "confidence": 10}'
    out = parse_verdict(response(text), Scheme.FOUR_CLASS)
    assert out == Verdict(Label4.FALSE, 10)


def test_parse_missing_confidence_is_legal():
    out = parse_verdict(response('{"label": "Unverifiable"}'), Scheme.FOUR_CLASS)
    assert out == Verdict(Label4.UNVERIFIABLE, None)


@pytest.mark.parametrize(
    "confidence", ['"85"', "true", "101", "-1", "85.5"]
)
def test_parse_bad_confidence_is_unparseable(confidence):
    text = f'{{"label": "Accurate", "confidence": {confidence}}}'
    out = parse_verdict(response(text), Scheme.FOUR_CLASS)
    assert out == Fallback(FallbackReason.UNPARSEABLE, text)


def test_parse_illegal_label():
    text = '{"label": "Probably true", "confidence": 50}'
    out = parse_verdict(response(text), Scheme.FOUR_CLASS)
    assert out.reason is FallbackReason.ILLEGAL_LABEL

    # a 4class label is illegal under 2class
    out2 = parse_verdict(response('{"label": "Misleading"}'), Scheme.TWO_CLASS)
    assert out2.reason is FallbackReason.ILLEGAL_LABEL


def test_parse_refusals_and_noise():
    refusal = parse_verdict(
        response("I'm sorry, but I cannot verify this claim."), Scheme.FOUR_CLASS
    )
    assert refusal.reason is FallbackReason.EXPLICIT_REFUSAL

    noise = parse_verdict(response("The weather is nice."), Scheme.FOUR_CLASS)
    assert noise.reason is FallbackReason.UNPARSEABLE

    empty = parse_verdict(response(""), Scheme.FOUR_CLASS)
    assert empty.reason is FallbackReason.UNPARSEABLE

    # refusal wording loses to an actual labeled object
    mixed = parse_verdict(
        response('I cannot verify much, still: {"label": "Accurate"}'),
        Scheme.FOUR_CLASS,
    )
    assert isinstance(mixed, Verdict)


def test_format_reply_round_trip():
    for verdict in (
        Verdict(Label4.MISLEADING, 77, "because"),
        Verdict(Label4.FALSE, None, ""),
        Verdict(Label2.DISINFORMATION, 0, "j", drafts=("d1", "d2")),
    ):
        scheme = (
            Scheme.TWO_CLASS if isinstance(verdict.label, Label2) else Scheme.FOUR_CLASS
        )
        again = parse_verdict(response(format_reply(verdict)), scheme)
        assert again == verdict


def test_model_response_validation():
    with pytest.raises(ValueError):
        ModelResponse(raw_text="x", prompt_tokens=-1)
    with pytest.raises(ValueError):
        ModelResponse(raw_text="x", latency_s=-0.1)


def test_scripted_backend_reads_reply_files(tmp_path):
    sample = make_sample(tmp_path)
    prompt = build_verdict_prompt(sample, None, Strategy.COT, Scheme.FOUR_CLASS)
    replies = tmp_path / "replies"
    replies.mkdir()
    (replies / f"{sample.id}__verdict_cot_4class.json").write_text(
        json.dumps(
            {
                "raw_text": reply_text("Accurate", 90),
                "prompt_tokens": 100,
                "completion_tokens": 20,
                "latency_s": 1.5,
            }
        ),
        encoding="utf-8",
    )
    backend = ScriptedBackend(replies)
    out = backend.submit(prompt)
    assert out.prompt_tokens == 100
    assert parse_verdict(out, Scheme.FOUR_CLASS).label is Label4.ACCURATE

    other = build_verdict_prompt(sample, None, Strategy.COD, Scheme.FOUR_CLASS)
    with pytest.raises(BackendError, match="no scripted reply"):
        backend.submit(other)

    with pytest.raises(BackendError, match="not found"):
        ScriptedBackend(tmp_path / "nope")


def test_scripted_backend_fail_first(tmp_path):
    sample = make_sample(tmp_path)
    prompt = build_verdict_prompt(sample, None, Strategy.COT, Scheme.FOUR_CLASS)
    replies = tmp_path / "replies"
    replies.mkdir()
    (replies / f"{sample.id}__verdict_cot_4class.json").write_text(
        json.dumps({"raw_text": reply_text("False", 70), "fail_first": 2}),
        encoding="utf-8",
    )
    backend = ScriptedBackend(replies)
    for _ in range(2):
        with pytest.raises(BackendTransportError):
            backend.submit(prompt)
    assert backend.submit(prompt).raw_text == reply_text("False", 70)


def test_complete_retries_transients_only(tmp_path):
    sample = make_sample(tmp_path)
    prompt = build_verdict_prompt(sample, None, Strategy.COT, Scheme.FOUR_CLASS)
    key = f"{sample.id}__verdict_cot_4class"

    naps = []
    backend = FakeBackend(replies={key: reply_text("Accurate", 80)})
    backend.fail_first[key] = 2
    out = complete(prompt, backend, sleep=naps.append)
    assert out.raw_text == reply_text("Accurate", 80)
    assert naps == [0.5, 1.0]

    exhausted = FakeBackend(replies={key: "x"})
    exhausted.fail_first[key] = 99
    naps.clear()
    with pytest.raises(BackendTransportError):
        complete(prompt, exhausted, sleep=naps.append)
    assert naps == [0.5, 1.0]  # no sleep after the final attempt

    class Permanent(FakeBackend):
        def submit(self, prompt, *, temperature=0.0):
            self.calls.append("hit")
            raise BackendError("rejected")

    hard = Permanent()
    with pytest.raises(BackendError, match="rejected"):
        complete(prompt, hard, sleep=naps.append)
    assert hard.calls == ["hit"]  # permanent errors are not retried


def test_complete_checks_images_before_calling(tmp_path):
    sample = make_sample(tmp_path)
    prompt = build_verdict_prompt(sample, None, Strategy.COT, Scheme.FOUR_CLASS)
    sample.image_path.unlink()
    backend = FakeBackend()
    with pytest.raises(ClimcheckError, match="image not readable"):
        complete(prompt, backend)
    assert backend.calls == []


def test_redact_hides_credentials_and_image_bytes():
    body = {
        "Authorization": "Bearer sk-secret",
        "api_key": "k",
        "messages": [
            {"content": [{"image_url": {"url": "data:image/png;base64,AAAA"}}]}
        ],
        "model": "m",
    }
    redacted = _redact(body)
    text = json.dumps(redacted)
    assert "sk-secret" not in text
    assert "base64,AAAA" not in text
    assert redacted["Authorization"] == "<redacted>"
    assert redacted["model"] == "m"
    assert "bytes of image data" in (
        redacted["messages"][0]["content"][0]["image_url"]["url"]
    )


def test_complete_logs_nothing_secret_on_retry(tmp_path, caplog):
    sample = make_sample(tmp_path)
    prompt = build_verdict_prompt(sample, None, Strategy.COT, Scheme.FOUR_CLASS)
    key = f"{sample.id}__verdict_cot_4class"
    backend = FakeBackend(replies={key: reply_text("Accurate", 80)})
    backend.fail_first[key] = 1
    with caplog.at_level(logging.WARNING, logger="climcheck.inference"):
        complete(prompt, backend, sleep=lambda s: None)
    assert any("attempt 1/3" in record.message for record in caplog.records)
