"""Scoring predicted label tracks against ground truth."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .messages import loglikelihood
from .model import ModelParams, Sequence
from .preprocess import LabelTrack


class MetricWarning(UserWarning):
    """A metric hit a degenerate case and returned a sentinel value."""


def _binary_counts(pred: LabelTrack, truth: LabelTrack) -> tuple[int, int, int, int]:
    if len(pred) != len(truth):
        raise ValueError(f"track length mismatch: {len(pred)} vs {len(truth)}")
    p = pred.labels != 0
    t = truth.labels != 0
    tp = int(np.count_nonzero(p & t))
    tn = int(np.count_nonzero(~p & ~t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return tp, tn, fp, fn


def mcc(pred: LabelTrack, truth: LabelTrack) -> float:
    """By-sample Matthews correlation coefficient; 0 when undefined (flagged)."""
    tp, tn, fp, fn = _binary_counts(pred, truth)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        warnings.warn("MCC denominator is zero, returning 0", MetricWarning)
        return 0.0
    return float((tp * tn - fp * fn) / np.sqrt(float(denom)))


def f1(pred: LabelTrack, truth: LabelTrack) -> float:
    """By-sample F1 score; 0 when there are no positives anywhere (flagged)."""
    tp, _, fp, fn = _binary_counts(pred, truth)
    denom = 2 * tp + fp + fn
    if denom == 0:
        warnings.warn("no positive samples in either track, returning 0", MetricWarning)
        return 0.0
    return float(2.0 * tp / denom)


def _positive_runs(labels: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) spans of maximal positive runs."""
    x = (np.asarray(labels) != 0).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], x, [0]])))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


@dataclass
class EventMetrics:
    sensitivity: float
    fp_per_second: float
    n_truth_events: int
    n_pred_events: int
    n_detected: int
    n_spurious: int
    flags: list[str] = field(default_factory=list)


def event_metrics(pred: LabelTrack, truth: LabelTrack, sample_rate: float) -> EventMetrics:
    """Event-level detection metrics under any-overlap matching.

    Events are maximal runs of positive samples. A truth event counts as
    detected when any predicted event overlaps it by at least one sample
    (one-to-many allowed); predicted events overlapping no truth event are
    spurious and reported per second of recording, with raw counts kept
    alongside since rate conventions vary.
    """
    if len(pred) != len(truth):
        raise ValueError(f"track length mismatch: {len(pred)} vs {len(truth)}")
    pmask = pred.labels != 0
    tmask = truth.labels != 0
    pruns = _positive_runs(pred.labels)
    truns = _positive_runs(truth.labels)
    detected = sum(1 for (a, b) in truns if np.any(pmask[a:b]))
    spurious = sum(1 for (a, b) in pruns if not np.any(tmask[a:b]))
    flags: list[str] = []
    if truns:
        sensitivity = detected / len(truns)
    else:
        sensitivity = 1.0
        flags.append("no truth events; sensitivity vacuously 1")
    duration_s = len(pred) / sample_rate
    return EventMetrics(sensitivity=float(sensitivity),
                        fp_per_second=float(spurious / duration_s),
                        n_truth_events=len(truns), n_pred_events=len(pruns),
                        n_detected=detected, n_spurious=spurious, flags=flags)


def predictive_nll(model: ModelParams, seqs: list[Sequence] | Sequence) -> float:
    """Negative marginal log likelihood of held-out sequences (summed)."""
    return float(-loglikelihood(model, seqs))


@dataclass
class MetricsReport:
    mcc: float | None = None
    f1: float | None = None
    event: EventMetrics | None = None
    nll: float | None = None
    nll_per_sequence: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {}
        if self.mcc is not None:
            out["mcc"] = self.mcc
        if self.f1 is not None:
            out["f1"] = self.f1
        if self.event is not None:
            ev = self.event
            out["event_sensitivity"] = ev.sensitivity
            out["event_fp_per_second"] = ev.fp_per_second
            out["event_truth_count"] = ev.n_truth_events
            out["event_pred_count"] = ev.n_pred_events
            out["event_detected_count"] = ev.n_detected
            out["event_spurious_count"] = ev.n_spurious
        if self.nll is not None:
            out["nll"] = self.nll
        if self.nll_per_sequence is not None:
            out["nll_per_sequence"] = self.nll_per_sequence
        if self.flags or (self.event and self.event.flags):
            out["flags"] = list(self.flags) + (self.event.flags if self.event else [])
        return out

    def to_lines(self) -> list[str]:
        lines = []
        for key, val in self.to_dict().items():
            if key == "flags":
                lines.extend(f"flag={fl}" for fl in val)
            elif isinstance(val, float):
                lines.append(f"{key}={val!r}")
            else:
                lines.append(f"{key}={val}")
        return lines
