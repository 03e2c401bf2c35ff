"""Precision / recall / F1 measurement, regex baseline, sweeps, and embedding export.

Predicted-profane means the detector returned either a direct or a latent
match. The regex baseline shares the cleaning and tokenization pipeline but
matches only exact token equality against the profane vocabulary: no merge
heuristic, no latent stage. Its gap to the full pipeline on censored
variants is the qualitative claim the harness exists to demonstrate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

from .chardomain import DOMAIN
from .encoder import EncoderParams, forward
from .normalizer import DEFAULT_CONFIG, NormalizationConfig, RawChat, normalize_text
from .tokenizer import VocabularySet, tokenize

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import Detector


class EmptyDatasetError(ValueError):
    """Evaluation needs at least one labeled chat."""


@dataclass(frozen=True)
class LabeledChat:
    text: str
    gold_profane: bool


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float
    model: str

    @property
    def profane(self) -> ClassMetrics:
        return _metrics(self.tp, self.fp, self.fn)

    @property
    def not_profane(self) -> ClassMetrics:
        # the negative class, with TN playing the role of true positives
        return _metrics(self.tn, self.fn, self.fp)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_rows(self) -> list[list[str]]:
        rows = [["class", "precision", "recall", "f1"]]
        for name, m in (("profane", self.profane), ("not_profane", self.not_profane)):
            rows.append([name, f"{m.precision:.2f}", f"{m.recall:.2f}", f"{m.f1:.2f}"])
        return rows

    def render(self) -> str:
        out = io.StringIO()
        out.write(
            f"model={self.model} threshold={self.threshold} "
            f"tp={self.tp} fp={self.fp} fn={self.fn} tn={self.tn}\n"
        )
        for row in self.as_rows():
            out.write("  ".join(f"{cell:<12}" for cell in row).rstrip() + "\n")
        return out.getvalue()


def _metrics(tp: int, fp: int, fn: int) -> ClassMetrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassMetrics(precision=precision, recall=recall, f1=f1)


def _confusion(
    dataset: Sequence[LabeledChat], predict: Callable[[str], bool]
) -> tuple[int, int, int, int]:
    if not dataset:
        raise EmptyDatasetError("no labeled chats to evaluate")
    tp = fp = fn = tn = 0
    for chat in dataset:
        predicted = predict(chat.text)
        if chat.gold_profane and predicted:
            tp += 1
        elif chat.gold_profane:
            fn += 1
        elif predicted:
            fp += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def evaluate(
    dataset: Sequence[LabeledChat],
    detector: "Detector",
    threshold: float | None = None,
) -> MetricsReport:
    """Run the full detector over the dataset and report per-class metrics."""
    used = threshold if threshold is not None else detector.threshold

    def predict(text: str) -> bool:
        verdict = detector.detect(RawChat(id="eval", text=text), threshold=used)
        return verdict.is_profane

    tp, fp, fn, tn = _confusion(dataset, predict)
    return MetricsReport(tp=tp, fp=fp, fn=fn, tn=tn, threshold=used, model="pipeline")


def regex_baseline(
    dataset: Sequence[LabeledChat],
    vocabs: VocabularySet,
    norm_cfg: NormalizationConfig = DEFAULT_CONFIG,
) -> MetricsReport:
    """Exact token equality against the profane vocabulary, same cleaning."""

    def predict(text: str) -> bool:
        normalized = normalize_text(text, norm_cfg)
        return any(tok.text in vocabs.profane for tok in tokenize(normalized, vocabs))

    tp, fp, fn, tn = _confusion(dataset, predict)
    return MetricsReport(tp=tp, fp=fp, fn=fn, tn=tn, threshold=1.0, model="regex")


def threshold_sweep(
    dataset: Sequence[LabeledChat],
    detector: "Detector",
    thresholds: Sequence[float],
) -> list[MetricsReport]:
    """One report per threshold; embeddings are computed once per chat.

    For each chat the detector's stage-independent facts (direct hit yes/no,
    best latent similarity over suspicious tokens) are collected once, and
    each threshold is resolved against those numbers.
    """
    if not dataset:
        raise EmptyDatasetError("no labeled chats to evaluate")
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    facts = [
        detector.match_facts(RawChat(id="sweep", text=chat.text)) for chat in dataset
    ]
    reports = []
    for threshold in thresholds:
        tp = fp = fn = tn = 0
        for chat, (direct, best_sim) in zip(dataset, facts):
            predicted = direct or (best_sim is not None and best_sim >= threshold)
            if chat.gold_profane and predicted:
                tp += 1
            elif chat.gold_profane:
                fn += 1
            elif predicted:
                fp += 1
            else:
                tn += 1
        reports.append(
            MetricsReport(tp=tp, fp=fp, fn=fn, tn=tn, threshold=threshold, model="pipeline")
        )
    return reports


def export_embeddings(
    tokens: Iterable[str],
    params: EncoderParams,
    path: str | Path,
) -> int:
    """Write token + 64 embedding columns per row; returns the row count."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token"] + [f"e{i}" for i in range(64)])
        batch: list[str] = [t for t in tokens]
        if batch:
            seqs = [DOMAIN.encode_token(t) for t in batch]
            vectors = forward(seqs, params, "infer")
            for token, vec in zip(batch, vectors):
                writer.writerow([token] + [repr(float(x)) for x in vec])
                rows += 1
    return rows


def load_labeled_csv(path: str | Path) -> list[LabeledChat]:
    """CSV with columns text,label; label is 'profane' or 'not_profane'."""
    dataset: list[LabeledChat] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            label = row["label"].strip().lower()
            if label not in ("profane", "not_profane"):
                raise ValueError(f"unknown label {label!r}")
            dataset.append(LabeledChat(text=row["text"], gold_profane=label == "profane"))
    if not dataset:
        raise EmptyDatasetError(f"{path}: no rows")
    return dataset


def save_labeled_csv(path: str | Path, chats: Sequence[tuple[str, bool]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["text", "label"])
        for text, profane in chats:
            writer.writerow([text, "profane" if profane else "not_profane"])
