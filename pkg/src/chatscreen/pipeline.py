"""End-to-end detection orchestration and the message-queue service contract.

Detection stages, cheapest first:

  prefilter  word-boundary regex over the raw lowercased text, direct keys only
  stage1     normalize -> tokenize -> dictionary match, then the suspicious-token
             merge and a re-check (recovers "a b u s e")
  stage2     embed remaining suspicious tokens, nearest-key search, threshold

A chat with a direct-vocabulary hit never reaches stage 2. Malformed input
fails open (NotProfane, logged): students should not be blocked by junk
bytes. Model or index failures fail loud (ServiceError): silently passing
real chats on a broken model would defeat the system.

The service consumes {"chat_id", "text", "meta"} messages and publishes
verdicts, preserving meta. Processing is at-least-once and idempotent by
chat_id. Two transports: an in-process bounded queue, and newline-delimited
JSON over TCP.
"""

from __future__ import annotations

import json
import logging
import queue
import re
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .chardomain import DOMAIN, SEQ_LEN
from .encoder import EncoderParams, forward, load_params
from .latentindex import EmptyIndexError, HnswParams, LatentIndex, build_index
from .normalizer import (
    DEFAULT_CONFIG,
    NormalizationConfig,
    RawChat,
    load_name_list,
    normalize_text,
)
from .tokenizer import (
    TokenClass,
    VocabKind,
    VocabularySet,
    empty_vocabulary,
    load_vocabulary,
    merge_suspicious,
    tokenize,
)

logger = logging.getLogger(__name__)

LABEL_NOT_PROFANE = "not_profane"
LABEL_PROFANE_DIRECT = "profane_direct"
LABEL_PROFANE_LATENT = "profane_latent"
LABEL_SERVICE_ERROR = "service_error"

ENV_CONFIG = "YZR_CONFIG"


class NotInitializedError(RuntimeError):
    """detect() before vocabularies/weights/index were loaded."""


class ServiceError(RuntimeError):
    """Model or index failure while judging a well-formed chat."""


@dataclass(frozen=True)
class Verdict:
    chat_id: str
    label: str
    stage: str  # prefilter | stage1 | stage2 | none | service
    token: str | None = None
    key: str | None = None
    sim: float | None = None
    latency_us: int = 0
    meta: Mapping[str, object] = field(default_factory=dict)

    @property
    def is_profane(self) -> bool:
        return self.label in (LABEL_PROFANE_DIRECT, LABEL_PROFANE_LATENT)

    def to_wire(self) -> dict:
        return {
            "chat_id": self.chat_id,
            "label": self.label,
            "token": self.token,
            "key": self.key,
            "sim": self.sim,
            "stage": self.stage,
            "latency_us": self.latency_us,
            "meta": dict(self.meta),
        }


@dataclass(frozen=True)
class PipelineConfig:
    threshold: float = 0.8
    profane_vocab: str | None = None
    safe_vocabs: tuple[tuple[VocabKind, str], ...] = ()
    weights: str | None = None
    index: str | None = None
    name_list: str | None = None
    norm: NormalizationConfig = DEFAULT_CONFIG
    hnsw: HnswParams = HnswParams()
    max_chat_len: int = 2000
    workers: int = 2
    listen: str = "127.0.0.1:7788"

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.max_chat_len < 1:
            raise ValueError("max_chat_len must be >= 1")


def load_config(path: str | Path) -> PipelineConfig:
    """Flat `key = value` config file (UTF-8, '#' comments).

    Recognized keys: threshold, profane_vocab, safe_english, safe_hinglish,
    safe_platform, safe_extra, weights, index, name_list, repeat_cap,
    special_map ("$:s,@:a"), emoji_ranges ("1F000-1FAFF,2600-27BF" in hex),
    max_chat_len, workers, listen, hnsw_m, hnsw_ef_construction,
    hnsw_ef_search, hnsw_seed.
    """
    raw: dict[str, str] = {}
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()

    def resolve(key: str) -> str | None:
        value = raw.get(key)
        if value is None or value == "":
            return None
        p = Path(value)
        return str(p if p.is_absolute() else base / p)

    safe_vocabs = []
    for kind, key in (
        (VocabKind.SAFE_ENGLISH, "safe_english"),
        (VocabKind.SAFE_HINGLISH, "safe_hinglish"),
        (VocabKind.SAFE_PLATFORM, "safe_platform"),
        (VocabKind.SAFE_PLATFORM, "safe_extra"),
    ):
        path_value = resolve(key)
        if path_value:
            safe_vocabs.append((kind, path_value))

    special_map = dict(DEFAULT_CONFIG.special_to_letter_map)
    if "special_map" in raw and raw["special_map"]:
        special_map = {}
        for item in raw["special_map"].split(","):
            src, _, dst = item.strip().partition(":")
            special_map[src] = dst
    emoji_ranges = DEFAULT_CONFIG.emoji_ranges
    if "emoji_ranges" in raw and raw["emoji_ranges"]:
        parsed = []
        for item in raw["emoji_ranges"].split(","):
            lo, _, hi = item.strip().partition("-")
            parsed.append((int(lo, 16), int(hi or lo, 16)))
        emoji_ranges = tuple(parsed)
    norm = NormalizationConfig(
        special_to_letter_map=special_map,
        emoji_ranges=emoji_ranges,
        repeat_cap=int(raw.get("repeat_cap", DEFAULT_CONFIG.repeat_cap)),
    )
    hnsw = HnswParams(
        m=int(raw.get("hnsw_m", 16)),
        ef_construction=int(raw.get("hnsw_ef_construction", 200)),
        ef_search=int(raw.get("hnsw_ef_search", 64)),
        seed=int(raw.get("hnsw_seed", 0)),
    )
    return PipelineConfig(
        threshold=float(raw.get("threshold", 0.8)),
        profane_vocab=resolve("profane_vocab"),
        safe_vocabs=tuple(safe_vocabs),
        weights=resolve("weights"),
        index=resolve("index"),
        name_list=resolve("name_list"),
        norm=norm,
        hnsw=hnsw,
        max_chat_len=int(raw.get("max_chat_len", 2000)),
        workers=int(raw.get("workers", 2)),
        listen=raw.get("listen", "127.0.0.1:7788"),
    )


class Detector:
    """Shared immutable snapshots (vocabularies, weights, index) + detect().

    Reads are lock-free: detect() grabs local references up front, and
    reload/additions swap whole snapshots, so concurrent detections see
    either the old state or the new one, never a mix. Without weights the
    detector runs in direct-only mode (stage 2 skipped).
    """

    def __init__(
        self,
        vocabs: VocabularySet,
        norm_cfg: NormalizationConfig = DEFAULT_CONFIG,
        encoder_params: EncoderParams | None = None,
        index: LatentIndex | None = None,
        threshold: float = 0.8,
        max_chat_len: int = 2000,
    ):
        self.vocabs = vocabs
        self.norm_cfg = norm_cfg
        self.encoder_params = encoder_params
        self.index = index
        self.threshold = threshold
        self.max_chat_len = max_chat_len
        self._prefilter = _compile_prefilter(vocabs)
        self._swap_lock = threading.Lock()

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "Detector":
        safe = tuple(load_vocabulary(path, kind) for kind, path in cfg.safe_vocabs)
        if cfg.profane_vocab:
            profane = load_vocabulary(Path(cfg.profane_vocab), VocabKind.PROFANE)
        else:
            profane = empty_vocabulary(VocabKind.PROFANE)
        norm = cfg.norm
        if cfg.name_list:
            norm = NormalizationConfig(
                special_to_letter_map=norm.special_to_letter_map,
                emoji_ranges=norm.emoji_ranges,
                name_list=load_name_list(cfg.name_list),
                repeat_cap=norm.repeat_cap,
            )
        vocabs = VocabularySet(profane=profane, safe=safe)
        params = load_params(cfg.weights) if cfg.weights else None
        index: LatentIndex | None = None
        if params is not None:
            if cfg.index and Path(cfg.index).exists():
                index = LatentIndex.load(cfg.index)
            else:
                index = build_index(sorted(profane.entries), params, cfg.hnsw)
        return cls(
            vocabs=vocabs,
            norm_cfg=norm,
            encoder_params=params,
            index=index,
            threshold=cfg.threshold,
            max_chat_len=cfg.max_chat_len,
        )

    def add_profane_key(self, key: str) -> str:
        """Live vocabulary addition: one embedding, one index insert, no retraining.

        In-flight detections keep their snapshots; the new vocabulary, index
        copy, and prefilter are swapped in whole.
        """
        normalized = normalize_text(key, self.norm_cfg)
        if not normalized or " " in normalized or len(normalized) > SEQ_LEN:
            raise ValueError(f"key does not normalize to a single token: {key!r}")
        with self._swap_lock:
            vocabs = self.vocabs.add_profane(normalized)
            index = self.index
            if index is not None and self.encoder_params is not None:
                if normalized not in index:
                    vector = forward(
                        [DOMAIN.encode_token(normalized)], self.encoder_params, "infer"
                    )[0]
                    index = index.copy()
                    index.insert(normalized, vector)
            prefilter = _compile_prefilter(vocabs)
            self.vocabs = vocabs
            self.index = index
            self._prefilter = prefilter
        return normalized

    def detect(self, chat: RawChat, threshold: float | None = None) -> Verdict:
        start = time.perf_counter_ns()
        used = threshold if threshold is not None else self.threshold
        vocabs, prefilter = self.vocabs, self._prefilter
        params, index = self.encoder_params, self.index

        def done(label: str, stage: str, token=None, key=None, sim=None) -> Verdict:
            return Verdict(
                chat_id=chat.id,
                label=label,
                stage=stage,
                token=token,
                key=key,
                sim=sim,
                latency_us=(time.perf_counter_ns() - start) // 1000,
                meta=chat.meta,
            )

        if not isinstance(chat.text, str):
            logger.warning("chat %s: non-text payload, failing open", chat.id)
            return done(LABEL_NOT_PROFANE, "none")
        text = chat.text[: self.max_chat_len]

        if prefilter is not None:
            hit = prefilter.search(text.lower())
            if hit:
                return done(
                    LABEL_PROFANE_DIRECT, "prefilter", token=hit.group(0), key=hit.group(0)
                )

        normalized = normalize_text(text, self.norm_cfg)
        tokens = tokenize(normalized, vocabs)
        for tok in tokens:
            if tok.token_class is TokenClass.PROFANE_DIRECT:
                return done(LABEL_PROFANE_DIRECT, "stage1", token=tok.text, key=tok.text)

        merged = merge_suspicious(tokens, vocabs)
        suspicious = []
        for tok in merged:
            if tok.token_class is TokenClass.PROFANE_DIRECT:
                return done(LABEL_PROFANE_DIRECT, "stage1", token=tok.text, key=tok.text)
            if tok.token_class is TokenClass.SUSPICIOUS and tok.seq is not None:
                suspicious.append(tok)

        if suspicious and params is not None and index is not None and len(index) > 0:
            try:
                vectors = forward([tok.seq for tok in suspicious], params, "infer")
                for tok, vector in zip(suspicious, vectors):
                    hits = index.search(vector, k=1)
                    if hits and hits[0][1] >= used:
                        return done(
                            LABEL_PROFANE_LATENT,
                            "stage2",
                            token=tok.text,
                            key=hits[0][0],
                            sim=hits[0][1],
                        )
            except (EmptyIndexError, FloatingPointError, ValueError) as exc:
                raise ServiceError(f"latent matching failed: {exc}") from exc
        return done(LABEL_NOT_PROFANE, "none")

    def match_facts(self, chat: RawChat) -> tuple[bool, float | None]:
        """(direct hit?, best latent similarity): threshold-independent facts
        used by threshold sweeps so embeddings are computed once."""
        vocabs, prefilter = self.vocabs, self._prefilter
        params, index = self.encoder_params, self.index
        if not isinstance(chat.text, str):
            return False, None
        text = chat.text[: self.max_chat_len]
        if prefilter is not None and prefilter.search(text.lower()):
            return True, None
        tokens = tokenize(normalize_text(text, self.norm_cfg), vocabs)
        merged = merge_suspicious(tokens, vocabs)
        if any(t.token_class is TokenClass.PROFANE_DIRECT for t in tokens + merged):
            return True, None
        suspicious = [
            t for t in merged if t.token_class is TokenClass.SUSPICIOUS and t.seq is not None
        ]
        if not suspicious or params is None or index is None or len(index) == 0:
            return False, None
        vectors = forward([t.seq for t in suspicious], params, "infer")
        best = None
        for vector in vectors:
            hits = index.search(vector, k=1)
            if hits and (best is None or hits[0][1] > best):
                best = hits[0][1]
        return False, best


def _compile_prefilter(vocabs: VocabularySet) -> re.Pattern[str] | None:
    keys = sorted(vocabs.profane.entries, key=len, reverse=True)
    if not keys:
        return None
    # word-boundary token match on the raw lowercased text; a bare substring
    # rule would flag "class" for the key "ass"
    alt = "|".join(re.escape(k) for k in keys)
    return re.compile(rf"(?<![a-z])(?:{alt})(?![a-z])")


# -- queue service -----------------------------------------------------------


class InProcessQueue:
    """Bounded in-process queue with close semantics (the test transport)."""

    _CLOSED = object()

    def __init__(self, maxsize: int = 0):
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._closed = threading.Event()

    def put(self, item: dict) -> None:
        if self._closed.is_set():
            raise RuntimeError("queue is closed")
        self._q.put(item)

    def get(self, timeout: float | None = None):
        item = self._q.get(timeout=timeout)
        if item is self._CLOSED:
            self._q.put(self._CLOSED)  # wake the next consumer
            return None
        return item

    def close(self) -> None:
        self._closed.set()
        self._q.put(self._CLOSED)

    def drain(self) -> list[dict]:
        items = []
        while True:
            try:
                item = self._q.get_nowait()
            except queue.Empty:
                return items
            if item is not self._CLOSED:
                items.append(item)


def _judge_message(detector: Detector, message: object, cache: dict, lock: threading.Lock) -> dict:
    """Verdict record for one raw queue message (idempotent by chat_id)."""
    if not isinstance(message, Mapping) or "chat_id" not in message or "text" not in message:
        return Verdict(
            chat_id=str(message.get("chat_id", "")) if isinstance(message, Mapping) else "",
            label=LABEL_SERVICE_ERROR,
            stage="service",
            meta={},
        ).to_wire()
    chat_id = str(message["chat_id"])
    with lock:
        cached = cache.get(chat_id)
    if cached is not None:
        return cached
    meta = message.get("meta")
    chat = RawChat(id=chat_id, text=message["text"], meta=meta if isinstance(meta, Mapping) else {})
    try:
        record = detector.detect(chat).to_wire()
    except ServiceError as exc:
        logger.error("chat %s: %s", chat_id, exc)
        record = Verdict(
            chat_id=chat_id, label=LABEL_SERVICE_ERROR, stage="service", meta=chat.meta
        ).to_wire()
    with lock:
        record = cache.setdefault(chat_id, record)
    return record


def run_service(
    detector: Detector,
    inbound: InProcessQueue,
    outbound: InProcessQueue,
    workers: int = 2,
) -> None:
    """Consume chats until the inbound queue closes; publish one verdict each.

    At-least-once with idempotence: a chat_id delivered twice yields the
    byte-identical verdict record twice.
    """
    cache: dict[str, dict] = {}
    lock = threading.Lock()

    def worker() -> None:
        while True:
            message = inbound.get()
            if message is None:
                return
            outbound.put(_judge_message(detector, message, cache, lock))

    threads = [threading.Thread(target=worker, daemon=True) for _ in range(max(workers, 1))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


# -- TCP transport -----------------------------------------------------------


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: DetectionServer = self.server  # type: ignore[assignment]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                message = json.loads(line)
            except json.JSONDecodeError:
                record = Verdict(
                    chat_id="", label=LABEL_SERVICE_ERROR, stage="service", meta={}
                ).to_wire()
            else:
                record = _judge_message(server.detector, message, server.cache, server.cache_lock)
            self.wfile.write((json.dumps(record) + "\n").encode("utf-8"))
            self.wfile.flush()


class DetectionServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], detector: Detector):
        super().__init__(address, _LineHandler)
        self.detector = detector
        self.cache: dict[str, dict] = {}
        self.cache_lock = threading.Lock()


def serve_tcp(detector: Detector, host: str, port: int) -> DetectionServer:
    """Start the newline-delimited JSON TCP service; returns the live server."""
    server = DetectionServer((host, port), detector)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    logger.info("serving on %s:%d", *server.server_address[:2])
    return server
