from __future__ import annotations

import json
import socket
import threading

import pytest

from chatscreen.latentindex import HnswParams, build_index
from chatscreen.normalizer import RawChat
from chatscreen.pipeline import (
    LABEL_NOT_PROFANE,
    LABEL_PROFANE_DIRECT,
    LABEL_PROFANE_LATENT,
    LABEL_SERVICE_ERROR,
    Detector,
    DetectionServer,
    InProcessQueue,
    PipelineConfig,
    load_config,
    run_service,
)
from chatscreen.tokenizer import VocabKind, Vocabulary, VocabularySet

_version = iter(range(7000, 9999))


def vocab(kind, *entries):
    return Vocabulary(kind=kind, entries=frozenset(entries), version=next(_version))


def make_vocabs(profane=("abuse", "idiot"), safe=("you", "are", "nice", "hello", "world")):
    return VocabularySet(
        profane=vocab(VocabKind.PROFANE, *profane),
        safe=(vocab(VocabKind.SAFE_ENGLISH, *safe),),
    )


@pytest.fixture
def direct_detector():
    return Detector(vocabs=make_vocabs())


def chat(text, chat_id="c1", **meta):
    return RawChat(id=chat_id, text=text, meta=meta)


def test_safe_chat_is_not_profane(direct_detector):
    verdict = direct_detector.detect(chat("you are nice"))
    assert verdict.label == LABEL_NOT_PROFANE
    assert verdict.token is None and verdict.key is None
    assert not verdict.is_profane


def test_direct_hit_via_prefilter(direct_detector):
    verdict = direct_detector.detect(chat("you ABUSE me"))
    assert verdict.label == LABEL_PROFANE_DIRECT
    assert verdict.stage == "prefilter"
    assert verdict.token == "abuse"


def test_prefilter_does_not_fire_inside_words():
    # "buse" occurs inside "abuses" but only as a substring: no word match,
    # and with no model the suspicious tokens go unmatched
    detector = Detector(vocabs=make_vocabs(profane=("buse",)))
    verdict = detector.detect(chat("abuses happen"))
    assert verdict.label == LABEL_NOT_PROFANE


def test_spaced_out_profanity_caught_at_stage1(direct_detector):
    verdict = direct_detector.detect(chat("a b u s e"))
    assert verdict.label == LABEL_PROFANE_DIRECT
    assert verdict.stage == "stage1"
    assert verdict.token == "abuse"


def test_lookalike_censoring_caught_by_normalizer(direct_detector):
    verdict = direct_detector.detect(chat("you abu$e me"))
    # '$' -> 's' happens after the raw prefilter, so this lands in stage1
    assert verdict.label == LABEL_PROFANE_DIRECT
    assert verdict.stage == "stage1"


def test_malformed_input_fails_open(direct_detector):
    verdict = direct_detector.detect(RawChat(id="x", text=None, meta={}))  # type: ignore[arg-type]
    assert verdict.label == LABEL_NOT_PROFANE


def test_empty_profane_vocab_never_flags():
    detector = Detector(vocabs=make_vocabs(profane=()))
    assert detector.detect(chat("anything at all")).label == LABEL_NOT_PROFANE


def test_meta_and_latency_carried(direct_detector):
    verdict = direct_detector.detect(chat("hello world", chat_id="m7", room=3))
    assert verdict.chat_id == "m7"
    assert verdict.meta == {"room": 3}
    assert verdict.latency_us >= 0


def test_latent_match_with_trained_model(mini_corpus, mini_model):
    safe, profane = mini_corpus
    key = profane[0]
    vocabs = VocabularySet(
        profane=vocab(VocabKind.PROFANE, *profane),
        safe=(vocab(VocabKind.SAFE_ENGLISH, *safe),),
    )
    index = build_index(profane, mini_model, HnswParams(seed=3))
    detector = Detector(
        vocabs=vocabs, encoder_params=mini_model, index=index, threshold=0.999
    )
    censored = key[0] + "*" + key[2:]
    verdict = detector.detect(chat(censored), threshold=0.05)
    assert verdict.label == LABEL_PROFANE_LATENT
    assert verdict.stage == "stage2"
    assert verdict.key in profane
    assert verdict.sim is not None and verdict.sim >= 0.05
    assert verdict.token == censored


def test_direct_hit_never_reaches_stage2(mini_corpus, mini_model):
    safe, profane = mini_corpus
    vocabs = VocabularySet(
        profane=vocab(VocabKind.PROFANE, *profane),
        safe=(vocab(VocabKind.SAFE_ENGLISH, *safe),),
    )
    index = build_index(profane, mini_model, HnswParams(seed=3))
    detector = Detector(vocabs=vocabs, encoder_params=mini_model, index=index)
    verdict = detector.detect(chat(f"{safe[0]} {profane[1]}"))
    assert verdict.label == LABEL_PROFANE_DIRECT
    assert verdict.stage in ("prefilter", "stage1")


def test_threshold_monotonicity(mini_corpus, mini_model):
    safe, profane = mini_corpus
    vocabs = VocabularySet(
        profane=vocab(VocabKind.PROFANE, *profane),
        safe=(vocab(VocabKind.SAFE_ENGLISH, *safe),),
    )
    index = build_index(profane, mini_model, HnswParams(seed=3))
    detector = Detector(vocabs=vocabs, encoder_params=mini_model, index=index)
    text = profane[0][0] + "*" + profane[0][2:]
    flagged_low = detector.detect(chat(text), threshold=0.01).is_profane
    flagged_high = detector.detect(chat(text), threshold=0.999999).is_profane
    assert flagged_low >= flagged_high  # raising the threshold never adds verdicts


def test_add_profane_key_live(direct_detector):
    assert direct_detector.detect(chat("newbadword")).label == LABEL_NOT_PROFANE
    direct_detector.add_profane_key("NewBadWord")
    verdict = direct_detector.detect(chat("newbadword"))
    assert verdict.label == LABEL_PROFANE_DIRECT


def test_verdict_wire_format(direct_detector):
    record = direct_detector.detect(chat("a b u s e", chat_id="w1", src="t")).to_wire()
    assert record["chat_id"] == "w1"
    assert record["label"] == "profane_direct"
    assert record["stage"] == "stage1"
    assert record["token"] == "abuse"
    assert record["meta"] == {"src": "t"}
    assert isinstance(record["latency_us"], int)
    json.dumps(record)  # wire records are always JSON-serializable


# -- queue service -------------------------------------------------------------


def test_service_conserves_and_is_idempotent(direct_detector):
    inbound = InProcessQueue()
    outbound = InProcessQueue()
    for i in range(20):
        inbound.put({"chat_id": f"c{i}", "text": "you abuse" if i % 3 else "hello", "meta": {"i": i}})
    inbound.put({"chat_id": "c5", "text": "you abuse", "meta": {"i": 5}})  # duplicate delivery
    inbound.close()
    run_service(direct_detector, inbound, outbound, workers=4)
    records = outbound.drain()
    assert len(records) == 21
    by_id: dict[str, list[dict]] = {}
    for record in records:
        by_id.setdefault(record["chat_id"], []).append(record)
    assert set(by_id) == {f"c{i}" for i in range(20)}
    assert len(by_id["c5"]) == 2
    assert by_id["c5"][0] == by_id["c5"][1]  # identical verdict both times
    for i in range(20):
        expected = LABEL_PROFANE_DIRECT if i % 3 else LABEL_NOT_PROFANE
        assert by_id[f"c{i}"][0]["label"] == expected
        assert by_id[f"c{i}"][0]["meta"] == {"i": i}


def test_service_survives_malformed_messages(direct_detector):
    inbound = InProcessQueue()
    outbound = InProcessQueue()
    inbound.put({"no_chat_id": True})
    inbound.put("not even a dict")
    inbound.put({"chat_id": "ok", "text": "hello"})
    inbound.close()
    run_service(direct_detector, inbound, outbound, workers=2)
    records = outbound.drain()
    assert len(records) == 3
    labels = sorted(r["label"] for r in records)
    assert labels.count(LABEL_SERVICE_ERROR) == 2
    assert any(r["chat_id"] == "ok" and r["label"] == LABEL_NOT_PROFANE for r in records)


def test_concurrent_detect_during_vocab_updates(mini_corpus, mini_model):
    from chatscreen.latentindex import HnswParams, build_index

    safe, profane = mini_corpus
    vocabs = VocabularySet(
        profane=vocab(VocabKind.PROFANE, *profane),
        safe=(vocab(VocabKind.SAFE_ENGLISH, *safe),),
    )
    detector = Detector(
        vocabs=vocabs,
        encoder_params=mini_model,
        index=build_index(profane, mini_model, HnswParams(seed=4)),
    )
    errors: list[Exception] = []
    stop = threading.Event()

    def hammer():
        i = 0
        while not stop.is_set():
            try:
                detector.detect(chat(f"{safe[i % len(safe)]} zzqq{i % 7}x"))
            except Exception as exc:  # snapshot swap must never surface errors
                errors.append(exc)
                return
            i += 1

    readers = [threading.Thread(target=hammer) for _ in range(4)]
    for t in readers:
        t.start()
    for i in range(10):
        detector.add_profane_key(f"freshkey{i}qz")
    stop.set()
    for t in readers:
        t.join(timeout=10)
    assert errors == []
    assert detector.detect(chat("freshkey9qz")).label == LABEL_PROFANE_DIRECT


# -- TCP transport -------------------------------------------------------------


def test_tcp_round_trip(direct_detector):
    server = DetectionServer(("127.0.0.1", 0), direct_detector)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        host, port = server.server_address[:2]
        with socket.create_connection((host, port), timeout=5) as sock:
            fh = sock.makefile("rw", encoding="utf-8")
            for payload in (
                {"chat_id": "t1", "text": "hello world", "meta": {"k": 1}},
                {"chat_id": "t2", "text": "a b u s e", "meta": {}},
                "garbage{",
            ):
                if isinstance(payload, str):
                    fh.write(payload + "\n")
                else:
                    fh.write(json.dumps(payload) + "\n")
            fh.flush()
            replies = [json.loads(fh.readline()) for _ in range(3)]
        assert replies[0]["label"] == LABEL_NOT_PROFANE
        assert replies[0]["meta"] == {"k": 1}
        assert replies[1]["label"] == LABEL_PROFANE_DIRECT
        assert replies[2]["label"] == LABEL_SERVICE_ERROR
    finally:
        server.shutdown()
        server.server_close()


# -- config --------------------------------------------------------------------


def test_load_config_round_trip(tmp_path):
    (tmp_path / "profane.txt").write_text("abuse\n", encoding="utf-8")
    (tmp_path / "safe.txt").write_text("hello\n", encoding="utf-8")
    cfg_path = tmp_path / "pipeline.cfg"
    cfg_path.write_text(
        "# demo config\n"
        "threshold = 0.75\n"
        "profane_vocab = profane.txt\n"
        "safe_english = safe.txt\n"
        "max_chat_len = 500\n"
        "workers = 3\n"
        "hnsw_m = 24\n"
        "special_map = $:s,@:a\n",
        encoding="utf-8",
    )
    cfg = load_config(cfg_path)
    assert cfg.threshold == 0.75
    assert cfg.profane_vocab.endswith("profane.txt")
    assert cfg.safe_vocabs[0][0] is VocabKind.SAFE_ENGLISH
    assert cfg.max_chat_len == 500
    assert cfg.workers == 3
    assert cfg.hnsw.m == 24
    detector = Detector.from_config(cfg)
    assert detector.detect(chat("you abuse")).is_profane


def test_config_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("threshold 0.8\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(path)


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(threshold=0.0)
    with pytest.raises(ValueError):
        PipelineConfig(max_chat_len=0)
