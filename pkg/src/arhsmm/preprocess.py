"""Raw recordings and expert annotations to model-ready sequences and labels.

File formats owned here (all plain text, '#' comment lines allowed):
  raw signal        one float per line, or time,value (time ignored)
  processed signal  same, with a '# rate=<Hz>' header line
  annotations       onset_seconds,duration_seconds[,scorer_id] per line
  label track       one integer per line, '# rate=<Hz>' header; readers
                    also accept extra comma-separated columns and keep the
                    first (so simulator truth files double as label tracks)

No bandpass filtering or artifact rejection happens here by design; the
model consumes the raw trace up to resampling and z-scoring.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as _signal

from .model import HiddenPath


class FileFormatError(ValueError):
    """Parse failure with file/line context."""

    def __init__(self, path, lineno: int | None, message: str):
        self.path = str(path)
        self.lineno = lineno
        where = f"{path}:{lineno}" if lineno is not None else str(path)
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class EventAnnotation:
    """One scored event in seconds from recording start."""

    onset: float
    duration: float
    scorer_id: int = 0

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")


@dataclass(frozen=True)
class LabelTrack:
    """Per-sample regime labels paired with a sample rate."""

    labels: np.ndarray
    sample_rate: float

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))

    def __len__(self) -> int:
        return self.labels.shape[0]


# ---------------------------------------------------------------------------
# signal conditioning
# ---------------------------------------------------------------------------

def resample(series: np.ndarray, rate_in: float, rate_out: float) -> np.ndarray:
    """Rational-factor polyphase downsample with anti-alias filtering.

    The low-pass is a linear-phase Kaiser-windowed sinc cut at 0.8x the
    target Nyquist; group delay is compensated so event annotations stay
    aligned with the resampled trace. Output length is ceil(N*out/in).
    """
    series = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(series)):
        raise ValueError("input samples must be finite")
    if rate_out <= 0 or rate_in <= 0:
        raise ValueError("rates must be > 0")
    if rate_in < rate_out:
        raise ValueError(f"rate_in ({rate_in}) must be >= rate_out ({rate_out})")
    if rate_in == rate_out:
        return series.copy()
    frac = Fraction(rate_out / rate_in).limit_denominator(10_000)
    if abs(float(frac) - rate_out / rate_in) > 1e-9:
        raise ValueError(f"rate ratio {rate_out}/{rate_in} is not rational enough")
    up, down = frac.numerator, frac.denominator
    work_rate = rate_in * up
    cutoff_hz = 0.4 * rate_out  # 0.8 x target Nyquist
    numtaps = 50 * max(up, down) + 1
    h = _signal.firwin(numtaps, cutoff_hz, fs=work_rate, window=("kaiser", 9.0)) * up
    return _signal.resample_poly(series, up, down, window=h, padtype="line")


def zscore(series: np.ndarray) -> np.ndarray:
    """Center and scale to zero mean, unit population standard deviation."""
    series = np.asarray(series, dtype=float)
    if series.size < 2:
        raise ValueError("need at least 2 samples")
    std = float(series.std())
    if std == 0.0:
        raise ValueError("zero variance")
    return (series - series.mean()) / std


def events_to_labels(events: list[EventAnnotation], sample_rate: float,
                     n_samples: int) -> tuple[LabelTrack, int]:
    """Rasterize events onto a binary per-sample track.

    Sample n is labeled 1 iff n/rate falls in the half-open interval
    [onset, onset+duration); overlaps merge. Events reaching past the
    recording end are clipped; the count of clipped events is returned.
    """
    labels = np.zeros(n_samples, dtype=np.int64)
    clipped = 0
    for ev in events:
        start = int(np.ceil(ev.onset * sample_rate - 1e-9))
        stop = int(np.ceil((ev.onset + ev.duration) * sample_rate - 1e-9))
        if stop > n_samples:
            stop = n_samples
            clipped += 1
        if start < 0:
            start = 0
        if start < stop:
            labels[start:stop] = 1
    return LabelTrack(labels=labels, sample_rate=sample_rate), clipped


def merge_expert_labels(tracks: list[LabelTrack]) -> LabelTrack:
    """Per-sample union of expert tracks (logical OR in the binary case)."""
    if not tracks:
        raise ValueError("no tracks to merge")
    n = len(tracks[0])
    rate = tracks[0].sample_rate
    for t in tracks[1:]:
        if len(t) != n:
            raise ValueError(f"track length mismatch: {len(t)} vs {n}")
    merged = tracks[0].labels.copy()
    for t in tracks[1:]:
        np.maximum(merged, t.labels, out=merged)
    return LabelTrack(labels=merged, sample_rate=rate)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _parse_header_rate(line: str) -> float | None:
    body = line.lstrip("#").strip()
    if body.startswith("rate="):
        return float(body[len("rate="):])
    return None


def read_signal_file(path) -> tuple[np.ndarray, float | None]:
    """Read a raw or processed signal file; returns (samples, rate or None)."""
    values: list[float] = []
    rate = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                try:
                    r = _parse_header_rate(line)
                except ValueError:
                    raise FileFormatError(path, lineno, f"bad rate header: {line!r}")
                if r is not None:
                    rate = r
                continue
            parts = line.split(",")
            try:
                if len(parts) == 1:
                    values.append(float(parts[0]))
                elif len(parts) == 2:
                    values.append(float(parts[1]))  # time,value
                else:
                    raise ValueError
            except ValueError:
                raise FileFormatError(path, lineno, f"expected 1 or 2 numeric columns, got {line!r}")
    return np.asarray(values, dtype=float), rate


def write_sequence_file(path, samples: np.ndarray, sample_rate: float) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# rate={float(sample_rate)!r}\n")
        for v in np.asarray(samples, dtype=float):
            f.write(f"{float(v)!r}\n")


def read_annotation_file(path) -> list[EventAnnotation]:
    events: list[EventAnnotation] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (2, 3):
                raise FileFormatError(path, lineno, f"expected onset,duration[,scorer], got {line!r}")
            try:
                onset, duration = float(parts[0]), float(parts[1])
                scorer = int(parts[2]) if len(parts) == 3 else 0
                events.append(EventAnnotation(onset=onset, duration=duration, scorer_id=scorer))
            except ValueError as e:
                raise FileFormatError(path, lineno, f"bad annotation: {e}")
    return events


def read_label_file(path) -> LabelTrack:
    labels: list[int] = []
    rate = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                r = _parse_header_rate(line)
                if r is not None:
                    rate = r
                continue
            first = line.split(",")[0].strip()
            try:
                labels.append(int(first))
            except ValueError:
                raise FileFormatError(path, lineno, f"expected integer label, got {line!r}")
    if rate is None:
        raise FileFormatError(path, None, "missing '# rate=' header")
    return LabelTrack(labels=np.asarray(labels, dtype=np.int64), sample_rate=rate)


def write_label_file(path, track: LabelTrack) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# rate={float(track.sample_rate)!r}\n")
        for v in track.labels:
            f.write(f"{int(v)}\n")


def write_truth_file(path, hidden: HiddenPath, sample_rate: float) -> None:
    """Companion truth file for simulated data: z,counter per line."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# rate={float(sample_rate)!r}\n")
        f.write("# columns=z,d\n")
        for z, d in zip(hidden.z, hidden.d):
            f.write(f"{int(z)},{int(d)}\n")


def read_truth_file(path) -> tuple[HiddenPath, float]:
    zs: list[int] = []
    ds: list[int] = []
    rate = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                r = _parse_header_rate(line)
                if r is not None:
                    rate = r
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FileFormatError(path, lineno, f"expected z,d columns, got {line!r}")
            try:
                zs.append(int(parts[0]))
                ds.append(int(parts[1]))
            except ValueError:
                raise FileFormatError(path, lineno, f"bad truth row: {line!r}")
    if rate is None:
        raise FileFormatError(path, None, "missing '# rate=' header")
    return HiddenPath(z=np.asarray(zs), d=np.asarray(ds)), rate
