"""Decay-curve data model, windowed chargeability, synthetic corpora, CSV I/O.

A time-domain IP measurement is a short sequence of chargeability values
(mV/V), one per integration window, recorded after the transmitter current
is switched off. This module defines the in-memory representation of such
decays, generates synthetic corpora from a stretched-exponential relaxation
family, contaminates them with Gaussian noise and spikes, and reads/writes
the ``ipvae-decays v1`` CSV format.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

CSV_MAGIC = "# ipvae-decays v1"

# Amplitude used to scale injected spikes when the Gaussian noise level is
# zero (otherwise a zero sigma would make every spike vanish).
SPIKE_FLOOR_MV = 1.0


class DecayFormatError(ValueError):
    """Raised when a decay file violates the ipvae-decays CSV schema."""


@dataclass(frozen=True)
class WindowScheme:
    """Timing of the chargeability integration windows.

    The receiver waits ``delay_ms`` after current shut-off, then integrates
    the voltage decay in ``count`` consecutive windows of ``window_ms`` each.
    """

    delay_ms: float = 120.0
    window_ms: float = 40.0
    count: int = 20

    def __post_init__(self):
        if self.delay_ms <= 0:
            raise ValueError(f"delay_ms must be > 0, got {self.delay_ms}")
        if self.window_ms <= 0:
            raise ValueError(f"window_ms must be > 0, got {self.window_ms}")
        if self.count < 2:
            raise ValueError(f"window count must be >= 2, got {self.count}")

    def midpoints_s(self) -> np.ndarray:
        """Temporal midpoint of each window, in seconds after shut-off."""
        j = np.arange(self.count)
        return (self.delay_ms + (j + 0.5) * self.window_ms) / 1000.0


DEFAULT_SCHEME = WindowScheme()


@dataclass
class IpDecay:
    """One IP measurement: windowed chargeability values plus metadata.

    ``windows`` holds the per-window chargeability in mV/V (already
    normalized by primary voltage and window length by the instrument).
    Negative values are allowed; low-S/N surveys produce them. ``label`` is
    an externally supplied confidence score in percent, when available.
    """

    windows: np.ndarray
    scheme: WindowScheme = DEFAULT_SCHEME
    vp_mv: float | None = None
    current_ma: float | None = None
    label: float | None = None

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != self.scheme.count:
            raise ValueError(
                f"expected {self.scheme.count} window values, got shape {w.shape}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("window values must be finite (no NaN/Inf)")
        object.__setattr__(self, "windows", w)
        if self.vp_mv is not None and self.vp_mv <= 0:
            raise ValueError(f"vp_mv must be > 0 when present, got {self.vp_mv}")
        if self.label is not None and not (0.0 <= self.label <= 100.0):
            raise ValueError(f"label must lie in [0, 100], got {self.label}")


@dataclass
class SyntheticSpec:
    """Parameters of a synthetic decay corpus.

    Ground-truth decays follow m0 * exp(-(t/tau)^c) sampled at window
    midpoints, with (m0, tau, c) drawn uniformly from the given ranges.
    Contamination adds white Gaussian noise of ``noise_sigma`` and, with
    probability ``spike_prob`` per decay, one single-window spike.
    """

    n: int
    m0_range: tuple[float, float] = (1.0, 50.0)
    tau_range: tuple[float, float] = (0.1, 1.0)
    c_range: tuple[float, float] = (0.5, 1.0)
    noise_sigma: float = 1.1
    spike_prob: float = 0.0
    seed: int = 0
    scheme: WindowScheme = field(default_factory=WindowScheme)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"corpus size must be >= 1, got {self.n}")
        for name, (lo, hi) in (
            ("m0_range", self.m0_range),
            ("tau_range", self.tau_range),
            ("c_range", self.c_range),
        ):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.c_range[1] > 1.0:
            raise ValueError(f"c_range upper bound must be <= 1, got {self.c_range[1]}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not (0.0 <= self.spike_prob <= 1.0):
            raise ValueError(f"spike_prob must lie in [0, 1], got {self.spike_prob}")


def average_chargeability(decay: IpDecay) -> float:
    """Arithmetic mean of the window values, in mV/V."""
    return float(np.mean(decay.windows))


def decays_to_matrix(decays: list[IpDecay]) -> np.ndarray:
    """Stack decays into an (n, d) float64 matrix."""
    if not decays:
        raise ValueError("empty decay list")
    return np.stack([dec.windows for dec in decays])


def matrix_to_decays(values: np.ndarray, scheme: WindowScheme = DEFAULT_SCHEME) -> list[IpDecay]:
    """Wrap the rows of an (n, d) matrix as IpDecay objects."""
    values = np.asarray(values, dtype=np.float64)
    return [IpDecay(windows=row, scheme=scheme) for row in values]


def generate_ground_truth(spec: SyntheticSpec) -> list[IpDecay]:
    """Draw a noise-free corpus of stretched-exponential decays.

    Parameter draw order is fixed (m0 vector, then tau, then c) so that a
    given (spec, seed) always produces the same corpus.
    """
    rng = np.random.default_rng(spec.seed)
    m0 = rng.uniform(*spec.m0_range, spec.n)
    tau = rng.uniform(*spec.tau_range, spec.n)
    c = rng.uniform(*spec.c_range, spec.n)
    t = spec.scheme.midpoints_s()
    windows = m0[:, None] * np.exp(-((t[None, :] / tau[:, None]) ** c[:, None]))
    return matrix_to_decays(windows, spec.scheme)


def contaminate(
    decays: list[IpDecay],
    noise_sigma: float,
    spike_prob: float = 0.0,
    seed: int = 0,
) -> list[IpDecay]:
    """Add white Gaussian noise and occasional single-window spikes.

    Every window receives i.i.d. N(0, noise_sigma^2). With probability
    ``spike_prob`` per decay, one uniformly chosen window additionally gets a
    deviation of magnitude uniform in [5s, 10s] with random sign, where s is
    ``noise_sigma`` (or 1 mV/V when noise_sigma is zero, so that requested
    spikes never degenerate to zero).
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if not (0.0 <= spike_prob <= 1.0):
        raise ValueError(f"spike_prob must lie in [0, 1], got {spike_prob}")
    rng = np.random.default_rng(seed)
    values = decays_to_matrix(decays)
    n, d = values.shape
    out = values + rng.normal(0.0, noise_sigma, size=(n, d))
    spiked = rng.random(n) < spike_prob
    spike_col = rng.integers(0, d, size=n)
    base = noise_sigma if noise_sigma > 0 else SPIKE_FLOOR_MV
    magnitude = rng.uniform(5.0 * base, 10.0 * base, size=n)
    sign = rng.choice((-1.0, 1.0), size=n)
    rows = np.flatnonzero(spiked)
    out[rows, spike_col[rows]] += sign[rows] * magnitude[rows]
    return [
        IpDecay(
            windows=out[i],
            scheme=dec.scheme,
            vp_mv=dec.vp_mv,
            current_ma=dec.current_ma,
            label=dec.label,
        )
        for i, dec in enumerate(decays)
    ]


def synthesize_corpus(spec: SyntheticSpec) -> tuple[list[IpDecay], list[IpDecay]]:
    """Generate a paired (ground truth, contaminated) corpus from one spec.

    The contamination stream is seeded with spec.seed + 1 so truth and noise
    are independent but both reproducible.
    """
    truth = generate_ground_truth(spec)
    noisy = contaminate(truth, spec.noise_sigma, spec.spike_prob, seed=spec.seed + 1)
    return truth, noisy


# --- CSV I/O ---------------------------------------------------------------

_META_COLUMNS = ("id", "vp_mv", "current_ma", "label")


def _fmt_opt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _fmt_num(value: float) -> str:
    # %g drops the trailing ".0" for integral durations in the header line
    return f"{value:g}"


def write_decays(decays: list[IpDecay], path, format: str = "csv") -> None:
    """Write decays to ``path`` in the ipvae-decays v1 CSV format.

    Floats are written with repr so a read-back reproduces them bit-exactly.
    Row ids are the sequential position in ``decays``.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    if not decays:
        raise ValueError("refusing to write an empty decay file")
    scheme = decays[0].scheme
    for i, dec in enumerate(decays):
        if dec.scheme != scheme:
            raise ValueError(f"decay {i} has a different window scheme")
    header = (
        f"{CSV_MAGIC}; d={scheme.count};"
        f" delay_ms={_fmt_num(scheme.delay_ms)}; window_ms={_fmt_num(scheme.window_ms)}"
    )
    columns = list(_META_COLUMNS) + [f"m{j + 1}" for j in range(scheme.count)]
    lines = [header, ",".join(columns)]
    for i, dec in enumerate(decays):
        fields = [
            str(i),
            _fmt_opt(dec.vp_mv),
            _fmt_opt(dec.current_ma),
            _fmt_opt(dec.label),
        ]
        fields.extend(repr(float(v)) for v in dec.windows)
        lines.append(",".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line: str, path) -> WindowScheme:
    if not line.startswith(CSV_MAGIC):
        raise DecayFormatError(
            f"{path}: missing '{CSV_MAGIC}' header (got {line[:40]!r})"
        )
    meta: dict[str, str] = {}
    for part in line[len(CSV_MAGIC):].split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise DecayFormatError(f"{path}: malformed header entry {part!r}")
        key, value = part.split("=", 1)
        meta[key.strip()] = value.strip()
    for key in ("d", "delay_ms", "window_ms"):
        if key not in meta:
            raise DecayFormatError(f"{path}: header missing '{key}'")
    try:
        return WindowScheme(
            delay_ms=float(meta["delay_ms"]),
            window_ms=float(meta["window_ms"]),
            count=int(meta["d"]),
        )
    except ValueError as exc:
        raise DecayFormatError(f"{path}: invalid header values ({exc})") from exc


def _parse_opt(token: str, line_no: int, column: str, path) -> float | None:
    if token == "":
        return None
    try:
        return float(token)
    except ValueError as exc:
        raise DecayFormatError(
            f"{path}: line {line_no}, column '{column}': not a number: {token!r}"
        ) from exc


def read_decays(path, format: str = "csv") -> list[IpDecay]:
    """Read a decay file written by :func:`write_decays`.

    Unknown extra columns are ignored with a warning; malformed rows raise
    :class:`DecayFormatError` naming the offending line and column.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise DecayFormatError(f"{path}: truncated file (header lines missing)")
    scheme = _parse_header(lines[0], path)
    columns = [c.strip() for c in lines[1].split(",")]
    expected = set(_META_COLUMNS) | {f"m{j + 1}" for j in range(scheme.count)}
    for name in columns:
        if name not in expected:
            warnings.warn(f"{path}: ignoring unknown column '{name}'")
    missing = [c for c in expected if c not in columns]
    if missing:
        raise DecayFormatError(
            f"{path}: required columns missing: {', '.join(sorted(missing))}"
        )
    index = {name: i for i, name in enumerate(columns)}
    window_idx = [index[f"m{j + 1}"] for j in range(scheme.count)]
    decays = []
    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(columns):
            raise DecayFormatError(
                f"{path}: line {line_no}: expected {len(columns)} fields"
                f" ({scheme.count} windows), got {len(fields)}"
            )
        windows = np.empty(scheme.count)
        for j, col in enumerate(window_idx):
            token = fields[col]
            try:
                windows[j] = float(token)
            except ValueError as exc:
                raise DecayFormatError(
                    f"{path}: line {line_no}, column 'm{j + 1}': not a number: {token!r}"
                ) from exc
        if not np.all(np.isfinite(windows)):
            bad = int(np.flatnonzero(~np.isfinite(windows))[0])
            raise DecayFormatError(
                f"{path}: line {line_no}, column 'm{bad + 1}': non-finite window value"
            )
        try:
            decays.append(
                IpDecay(
                    windows=windows,
                    scheme=scheme,
                    vp_mv=_parse_opt(fields[index["vp_mv"]], line_no, "vp_mv", path),
                    current_ma=_parse_opt(
                        fields[index["current_ma"]], line_no, "current_ma", path
                    ),
                    label=_parse_opt(fields[index["label"]], line_no, "label", path),
                )
            )
        except ValueError as exc:
            raise DecayFormatError(f"{path}: line {line_no}: {exc}") from exc
    if not decays:
        raise DecayFormatError(f"{path}: no decay rows found")
    return decays
