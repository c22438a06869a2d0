"""Model parameterization shared by every other module.

A model has K regimes, AR order p (in samples), and a maximum explicit
duration D (in samples). Durations are indexed in samples throughout the
engine; the CLI converts user-facing seconds via the sample rate. Regime
index 0 is conventionally the background mode and 1 the burst mode in the
two-regime EEG configuration, but nothing in the engine depends on labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-12


class ModelFormatError(ValueError):
    """Raised when a model document cannot be parsed."""


@dataclass(frozen=True)
class RegimeParams:
    """Emission and duration parameters of one regime.

    ar_weights are ordered so entry j multiplies the sample j+1 steps in
    the past. sigma is the noise scale in units of the (z-scored) signal,
    nu the tail weight (degrees of freedom), duration_probs the pmf over
    dwell lengths {1..D} in samples.
    """

    ar_weights: np.ndarray
    sigma: float
    nu: float
    duration_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ar_weights", np.asarray(self.ar_weights, dtype=float))
        object.__setattr__(self, "duration_probs", np.asarray(self.duration_probs, dtype=float))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "nu", float(self.nu))


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: initial distribution, transitions, regimes.

    The transition matrix applies only when the duration counter hits 1;
    a nonzero diagonal therefore means regime renewal with a fresh
    duration, not an ordinary self-loop.
    """

    num_regimes: int
    ar_order: int
    max_duration: int
    pi: np.ndarray
    trans: np.ndarray
    regimes: tuple[RegimeParams, ...]
    sample_rate: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float))
        object.__setattr__(self, "regimes", tuple(self.regimes))

    @property
    def K(self) -> int:
        return self.num_regimes

    @property
    def p(self) -> int:
        return self.ar_order

    @property
    def D(self) -> int:
        return self.max_duration


@dataclass(frozen=True)
class Sequence:
    """One preprocessed single-channel recording."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must all be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class HiddenPath:
    """Per-sample regime labels and remaining-duration counters.

    context_len marks how many leading samples are conditioning context
    rather than decoded/sampled state: 0 for simulated paths, the AR order
    for decoded paths (which inherit the first decoded regime backwards,
    with counters counting up so the decrement rule stays consistent).
    """

    z: np.ndarray
    d: np.ndarray
    tau: np.ndarray | None = None
    context_len: int = 0

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int64))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=np.int64))
        if self.tau is not None:
            object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))

    def __len__(self) -> int:
        return self.z.shape[0]


@dataclass
class Violation:
    field: str
    index: tuple
    value: float
    message: str

    def __str__(self) -> str:
        where = f"[{','.join(str(i) for i in self.index)}]" if self.index else ""
        return f"{self.field}{where}: {self.message} (observed {self.value!r})"


@dataclass
class ValidationResult:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def summary(self) -> str:
        return "ok" if self.ok else "; ".join(str(v) for v in self.violations)


def validate_model(params: ModelParams) -> ValidationResult:
    """Check every structural invariant; report violations as data, never raise."""
    out = ValidationResult()
    add = out.violations.append

    K, p, D = params.num_regimes, params.ar_order, params.max_duration
    if K < 1:
        add(Violation("num_regimes", (), K, "must be >= 1"))
    if p < 0:
        add(Violation("ar_order", (), p, "must be >= 0"))
    if D < 1:
        add(Violation("max_duration", (), D, "must be >= 1"))
    if params.sample_rate <= 0:
        add(Violation("sample_rate", (), params.sample_rate, "must be > 0"))
    if K < 1 or p < 0 or D < 1:
        return out

    if params.pi.shape != (K,):
        add(Violation("pi", (), params.pi.shape, f"must have shape ({K},)"))
    else:
        if np.any(params.pi < 0):
            i = int(np.argmin(params.pi))
            add(Violation("pi", (i,), float(params.pi[i]), "entries must be >= 0"))
        s = float(params.pi.sum())
        if abs(s - 1.0) > SIMPLEX_TOL:
            add(Violation("pi", (), s, f"sums to {s!r}, must be 1 within {SIMPLEX_TOL}"))

    if params.trans.shape != (K, K):
        add(Violation("trans", (), params.trans.shape, f"must have shape ({K},{K})"))
    else:
        for j in range(K):
            row = params.trans[j]
            if np.any(row < 0):
                i = int(np.argmin(row))
                add(Violation("trans", (j, i), float(row[i]), "entries must be >= 0"))
            s = float(row.sum())
            if abs(s - 1.0) > SIMPLEX_TOL:
                add(Violation("trans", (j,), s, f"row sums to {s!r}, must be 1 within {SIMPLEX_TOL}"))

    if len(params.regimes) != K:
        add(Violation("regimes", (), len(params.regimes), f"must have {K} entries"))
        return out
    for k, reg in enumerate(params.regimes):
        if reg.ar_weights.shape != (p,):
            add(Violation("ar_weights", (k,), reg.ar_weights.shape, f"must have shape ({p},)"))
        elif not np.all(np.isfinite(reg.ar_weights)):
            add(Violation("ar_weights", (k,), float("nan"), "entries must be finite"))
        if not (reg.sigma > 0):
            add(Violation("sigma", (k,), reg.sigma, "must be > 0"))
        if not (reg.nu > 0):
            add(Violation("nu", (k,), reg.nu, "must be > 0"))
        lam = reg.duration_probs
        if lam.shape != (D,):
            add(Violation("duration_probs", (k,), lam.shape, f"must have shape ({D},)"))
            continue
        if np.any(lam < 0):
            i = int(np.argmin(lam))
            add(Violation("duration_probs", (k, i), float(lam[i]), "entries must be >= 0"))
        s = float(lam.sum())
        if abs(s - 1.0) > SIMPLEX_TOL:
            add(Violation("duration_probs", (k,), s, f"sums to {s!r}, must be 1 within {SIMPLEX_TOL}"))
    return out


def require_valid(params: ModelParams) -> None:
    res = validate_model(params)
    if not res.ok:
        raise ValueError(f"invalid model: {res.summary()}")


def normalized(params: ModelParams) -> ModelParams:
    """Exactly renormalize rows that already pass the simplex tolerance.

    Absorbs serialization round-off so repeated save/load/fit cycles do not
    drift; invalid models are rejected first.
    """
    require_valid(params)
    regimes = tuple(
        RegimeParams(
            ar_weights=r.ar_weights.copy(),
            sigma=r.sigma,
            nu=r.nu,
            duration_probs=r.duration_probs / r.duration_probs.sum(),
        )
        for r in params.regimes
    )
    return ModelParams(
        num_regimes=params.num_regimes,
        ar_order=params.ar_order,
        max_duration=params.max_duration,
        pi=params.pi / params.pi.sum(),
        trans=params.trans / params.trans.sum(axis=1, keepdims=True),
        regimes=regimes,
        sample_rate=params.sample_rate,
    )


def log_params(params: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(log pi, log trans, log duration pmf) of the renormalized model.

    Zero probabilities map to -inf without warnings.
    """
    m = normalized(params)
    lam = np.stack([r.duration_probs for r in m.regimes])
    with np.errstate(divide="ignore"):
        return np.log(m.pi), np.log(m.trans), np.log(lam)


def validate_path(path: HiddenPath, max_duration: int) -> ValidationResult:
    """Check counter-dynamics legality of a hidden path.

    Wherever d[n] > 1 the next sample must stay in the same regime with
    the counter decremented; at every regime entry (the first non-context
    sample, or any sample following a counter of 1) the counter must be in
    [1, D].
    """
    out = ValidationResult()
    add = out.violations.append
    z, d, c0 = path.z, path.d, path.context_len
    n = len(path)
    if d.shape != z.shape:
        add(Violation("d", (), d.shape, "must match z length"))
        return out
    if np.any(d < 1):
        i = int(np.argmin(d))
        add(Violation("d", (i,), int(d[i]), "counters must be >= 1"))
    for i in range(n - 1):
        if d[i] > 1:
            if z[i + 1] != z[i]:
                add(Violation("z", (i + 1,), int(z[i + 1]), f"must equal z[{i}] while counter > 1"))
            if d[i + 1] != d[i] - 1:
                add(Violation("d", (i + 1,), int(d[i + 1]), f"must equal d[{i}]-1 while counter > 1"))
    for i in range(c0, n):
        is_entry = i == c0 or d[i - 1] == 1
        if is_entry and d[i] > max_duration:
            add(Violation("d", (i,), int(d[i]), f"entry counter exceeds max duration {max_duration}"))
    return out


# ---------------------------------------------------------------------------
# model document (de)serialization
# ---------------------------------------------------------------------------
# Single human-readable JSON document; every float survives a round trip
# bit-exactly because json uses shortest-repr formatting for doubles.

_TOP_FIELDS = ("num_regimes", "ar_order", "max_duration", "sample_rate", "pi", "trans", "regimes")
_REGIME_FIELDS = ("ar_weights", "sigma", "nu", "duration_probs")


def serialize_model(params: ModelParams) -> str:
    require_valid(params)
    doc = {
        "num_regimes": params.num_regimes,
        "ar_order": params.ar_order,
        "max_duration": params.max_duration,
        "sample_rate": params.sample_rate,
        "pi": params.pi.tolist(),
        "trans": params.trans.tolist(),
        "regimes": [
            {
                "ar_weights": r.ar_weights.tolist(),
                "sigma": r.sigma,
                "nu": r.nu,
                "duration_probs": r.duration_probs.tolist(),
            }
            for r in params.regimes
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def deserialize_model(text: str) -> ModelParams:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"not a valid model document: {e}") from e
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a mapping")
    for name in _TOP_FIELDS:
        if name not in doc:
            raise ModelFormatError(f"model document missing field {name!r}")
    regimes = []
    for k, rd in enumerate(doc["regimes"]):
        for name in _REGIME_FIELDS:
            if name not in rd:
                raise ModelFormatError(f"regime {k} missing field {name!r}")
        regimes.append(
            RegimeParams(
                ar_weights=np.asarray(rd["ar_weights"], dtype=float),
                sigma=float(rd["sigma"]),
                nu=float(rd["nu"]),
                duration_probs=np.asarray(rd["duration_probs"], dtype=float),
            )
        )
    try:
        return ModelParams(
            num_regimes=int(doc["num_regimes"]),
            ar_order=int(doc["ar_order"]),
            max_duration=int(doc["max_duration"]),
            pi=np.asarray(doc["pi"], dtype=float),
            trans=np.asarray(doc["trans"], dtype=float),
            regimes=tuple(regimes),
            sample_rate=float(doc["sample_rate"]),
        )
    except (TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed model field: {e}") from e


def save_model(params: ModelParams, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_model(params))


def load_model(path) -> ModelParams:
    with open(path, encoding="utf-8") as f:
        return deserialize_model(f.read())
