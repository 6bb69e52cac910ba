"""Charging-session ingestion and the fixed 96-slot load-curve sample space.

A load curve is a length-96 float array holding the average kW drawn in each
15-minute slot of one day. Datasets are stacks of curves, shape ``(N, 96)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

N_SLOTS = 96
SLOT_MINUTES = 15
SLOT_HOURS = SLOT_MINUTES / 60.0
SESSION_HEADER = ["session_id", "driver_id", "start_iso8601", "end_iso8601", "powers_kw"]
CURVE_COLUMNS = [f"p{k:02d}" for k in range(N_SLOTS)]


class SessionFileError(ValueError):
    """Raised when a session file cannot be used at all (missing, empty, bad header)."""


@dataclass(frozen=True)
class ChargingSession:
    session_id: str
    start: datetime
    end: datetime
    interval_powers: tuple[float, ...]
    driver_id: str | None = None
    energy_kwh: float | None = None

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"session {self.session_id}: end {self.end} is not after start {self.start}")
        expected = math.ceil((self.end - self.start) / timedelta(minutes=SLOT_MINUTES))
        if len(self.interval_powers) != expected:
            raise ValueError(
                f"session {self.session_id}: {len(self.interval_powers)} interval powers, "
                f"expected {expected} for a {self.end - self.start} session"
            )
        for p in self.interval_powers:
            if not math.isfinite(p) or p < 0:
                raise ValueError(f"session {self.session_id}: invalid interval power {p!r}")
        if self.energy_kwh is not None and self.energy_kwh < 0:
            raise ValueError(f"session {self.session_id}: negative energy")

    def interval_bounds(self) -> list[tuple[datetime, datetime]]:
        out = []
        t = self.start
        step = timedelta(minutes=SLOT_MINUTES)
        for _ in self.interval_powers:
            out.append((t, min(t + step, self.end)))
            t += step
        return out

    def energy(self) -> float:
        """Delivered energy in kWh implied by the interval powers."""
        return sum(p * (b - a).total_seconds() / 3600.0
                   for p, (a, b) in zip(self.interval_powers, self.interval_bounds()))


@dataclass(frozen=True)
class NormalizationStats:
    scale: float
    scheme: str = "global_max"

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"normalization scale must be positive and finite, got {self.scale!r}")


@dataclass
class LoadCurveDataset:
    curves: np.ndarray
    normalization: NormalizationStats | None = None

    def __post_init__(self):
        curves = np.asarray(self.curves, dtype=np.float64)
        if curves.ndim == 1:
            curves = curves[None, :]
        if curves.ndim != 2 or curves.shape[1] != N_SLOTS:
            raise ValueError(f"load curves must have shape (N, {N_SLOTS}), got {curves.shape}")
        if curves.shape[0] < 1:
            raise ValueError("a dataset needs at least one curve")
        if not np.all(np.isfinite(curves)):
            raise ValueError("load curves contain non-finite values")
        if np.any(curves < 0):
            raise ValueError("load curves contain negative power")
        if self.normalization is not None and curves.max() > 1.0 + 1e-12:
            raise ValueError("normalized dataset has entries above 1")
        self.curves = curves

    def __len__(self):
        return self.curves.shape[0]

    @property
    def is_normalized(self) -> bool:
        return self.normalization is not None


# ---------------------------------------------------------------- parsing

def _parse_time(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def parse_sessions(path: str | Path) -> tuple[list[ChargingSession], list[tuple[int, str]]]:
    """Read a session CSV.

    Returns ``(sessions, rejected)`` where ``rejected`` lists ``(row_number,
    reason)`` for rows that violate the session invariants. Row numbers count
    the header as row 1, as a spreadsheet would.
    """
    path = Path(path)
    if not path.exists():
        raise SessionFileError(f"session file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SessionFileError(f"{path}: empty file")
        if [h.strip() for h in header] != SESSION_HEADER:
            raise SessionFileError(f"{path}: bad header {header!r}, expected {SESSION_HEADER!r}")
        sessions: list[ChargingSession] = []
        rejected: list[tuple[int, str]] = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                if len(row) != len(SESSION_HEADER):
                    raise ValueError(f"expected {len(SESSION_HEADER)} fields, got {len(row)}")
                sid, driver, start, end, powers = row
                pw = tuple(float(p) for p in powers.split(";") if p.strip())
                sessions.append(ChargingSession(
                    session_id=sid.strip(),
                    driver_id=driver.strip() or None,
                    start=_parse_time(start),
                    end=_parse_time(end),
                    interval_powers=pw,
                ))
            except (ValueError, TypeError) as exc:
                rejected.append((rowno, str(exc)))
    if not sessions and not rejected:
        raise SessionFileError(f"{path}: no session rows")
    for rowno, why in rejected:
        log.warning("row %d rejected: %s", rowno, why)
    return sessions, rejected


def write_sessions(path: str | Path, sessions: Sequence[ChargingSession]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SESSION_HEADER)
        for s in sessions:
            w.writerow([
                s.session_id, s.driver_id or "", s.start.isoformat(), s.end.isoformat(),
                ";".join(repr(float(p)) for p in s.interval_powers),
            ])


# ---------------------------------------------------------------- curves

def _deposit(curve: np.ndarray, a_min: float, b_min: float, power: float) -> None:
    """Add ``power`` held over minutes [a, b) of the day onto the slot grid, prorated."""
    a, b = max(a_min, 0.0), min(b_min, N_SLOTS * SLOT_MINUTES)
    if b <= a:
        return
    k0, k1 = int(a // SLOT_MINUTES), int(math.ceil(b / SLOT_MINUTES))
    for k in range(k0, min(k1, N_SLOTS)):
        lo, hi = max(a, k * SLOT_MINUTES), min(b, (k + 1) * SLOT_MINUTES)
        if hi > lo:
            curve[k] += power * (hi - lo) / SLOT_MINUTES


def session_to_curve(s: ChargingSession, day_origin: datetime | None = None) -> np.ndarray:
    """Place a session on the 24 h window starting at ``day_origin``.

    The window defaults to the midnight preceding the session start. Parts of
    the session outside the window are dropped and the lost energy is logged.
    """
    if day_origin is None:
        day_origin = s.start.replace(hour=0, minute=0, second=0, microsecond=0)
    window = timedelta(minutes=N_SLOTS * SLOT_MINUTES)
    if s.end <= day_origin or s.start >= day_origin + window:
        raise ValueError(f"session {s.session_id} lies entirely outside the window starting {day_origin}")
    curve = np.zeros(N_SLOTS)
    for p, (a, b) in zip(s.interval_powers, s.interval_bounds()):
        am = (a - day_origin).total_seconds() / 60.0
        bm = (b - day_origin).total_seconds() / 60.0
        _deposit(curve, am, bm, p)
    lost = s.energy() - curve.sum() * SLOT_HOURS
    if lost > 1e-9 * max(1.0, s.energy()):
        log.warning("session %s truncated at the window boundary, %.4f kWh dropped", s.session_id, lost)
    return curve


def sessions_to_dataset(sessions: Sequence[ChargingSession]) -> LoadCurveDataset:
    if not sessions:
        raise ValueError("no sessions to convert")
    return LoadCurveDataset(np.stack([session_to_curve(s) for s in sessions]))


def rectangular_curves(start_h, duration_h, power_kw) -> np.ndarray:
    """Steady-load curves from (start, duration, power) arrays.

    Slots fully covered get ``power``; edge slots are prorated by overlap and
    anything past the end of the day is cut off.
    """
    start = np.atleast_1d(np.asarray(start_h, dtype=np.float64))
    dur = np.atleast_1d(np.asarray(duration_h, dtype=np.float64))
    pw = np.atleast_1d(np.asarray(power_kw, dtype=np.float64))
    lo = np.arange(N_SLOTS) * SLOT_HOURS
    hi = lo + SLOT_HOURS
    end = start + dur
    overlap = np.minimum(end[:, None], hi[None, :]) - np.maximum(start[:, None], lo[None, :])
    frac = np.clip(overlap / SLOT_HOURS, 0.0, 1.0)
    return pw[:, None] * frac


# ---------------------------------------------------------------- normalization / split

def normalize(d: LoadCurveDataset) -> tuple[LoadCurveDataset, NormalizationStats]:
    if d.is_normalized:
        raise ValueError("dataset is already normalized")
    peak = float(d.curves.max())
    if peak <= 0:
        raise ValueError("cannot normalize an all-zero dataset: scale undefined")
    stats = NormalizationStats(scale=peak)
    return LoadCurveDataset(d.curves / peak, stats), stats


def apply_normalization(d: LoadCurveDataset, stats: NormalizationStats) -> LoadCurveDataset:
    """Normalize with a scale fitted elsewhere (values above the scale are clipped to 1)."""
    return LoadCurveDataset(np.minimum(d.curves / stats.scale, 1.0), stats)


def denormalize(d: LoadCurveDataset) -> LoadCurveDataset:
    if d.normalization is None:
        raise ValueError("dataset is not normalized")
    return LoadCurveDataset(d.curves * d.normalization.scale)


def split(d: LoadCurveDataset, ratio: float = 0.95, seed: int = 0) -> tuple[LoadCurveDataset, LoadCurveDataset]:
    """Random row partition into (train, test) with ``round(ratio * N)`` training rows."""
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(d)
    if n < 2:
        raise ValueError("need at least 2 curves to split")
    n_train = int(math.floor(ratio * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return (LoadCurveDataset(d.curves[tr], d.normalization),
            LoadCurveDataset(d.curves[te], d.normalization))


# ---------------------------------------------------------------- synthetic populations

@dataclass(frozen=True)
class Mode:
    """One behavioural group of sessions.

    ``start``, ``duration`` and ``power`` are ``(mean, std)`` pairs in hours,
    hours and kW. ``taper`` is the trailing fraction of the session over which
    power ramps linearly down to half its level; ``jitter`` is the std of
    per-slot multiplicative noise.
    """
    weight: float
    start: tuple[float, float]
    duration: tuple[float, float]
    power: tuple[float, float]
    taper: float = 0.0
    jitter: float = 0.0


@dataclass(frozen=True)
class SyntheticPopulationSpec:
    modes: tuple[Mode, ...]
    n_samples: int
    seed: int = 0

    def __post_init__(self):
        if not self.modes:
            raise ValueError("a synthetic population needs at least one mode")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        w = np.array([m.weight for m in self.modes])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mode weights must be non-negative and sum to 1, got {w.tolist()}")


def synth_population(spec: SyntheticPopulationSpec, return_modes: bool = False):
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    w = np.array([m.weight for m in spec.modes], dtype=np.float64)
    labels = rng.choice(len(spec.modes), size=n, p=w / w.sum())
    draws = rng.standard_normal((n, 3))
    noise = rng.standard_normal((n, N_SLOTS))

    means = np.array([[m.start[0], m.duration[0], m.power[0]] for m in spec.modes])[labels]
    stds = np.array([[m.start[1], m.duration[1], m.power[1]] for m in spec.modes])[labels]
    t = means + stds * draws
    start = np.clip(t[:, 0], 0.0, 24.0 - SLOT_HOURS)
    dur = np.clip(t[:, 1], SLOT_HOURS, 24.0)
    power = np.maximum(t[:, 2], 0.0)
    curves = rectangular_curves(start, dur, power)

    taper = np.array([m.taper for m in spec.modes])[labels]
    jitter = np.array([m.jitter for m in spec.modes])[labels]
    centers = (np.arange(N_SLOTS) + 0.5) * SLOT_HOURS
    # progress through the session at each slot centre, 0 at plug-in, 1 at unplug
    prog = np.clip((centers[None, :] - start[:, None]) / dur[:, None], 0.0, 1.0)
    tail = np.where(taper[:, None] > 0,
                    np.clip((prog - (1 - taper[:, None])) / np.maximum(taper[:, None], 1e-12), 0, 1), 0.0)
    shape = (1.0 - 0.5 * tail) * np.maximum(1.0 + jitter[:, None] * noise, 0.0)
    curves = curves * np.where(curves > 0, shape, 1.0)

    ds = LoadCurveDataset(curves)
    return (ds, labels) if return_modes else ds


# ---------------------------------------------------------------- dataset files

def write_dataset(path: str | Path, d: LoadCurveDataset) -> None:
    """CSV with columns p00..p95; a leading ``#scale=...`` line when normalized.

    Floats are written with ``repr`` so reading back is bit-exact.
    """
    lines = []
    if d.normalization is not None:
        lines.append(f"#scale={d.normalization.scale!r};scheme={d.normalization.scheme}")
    lines.append(",".join(CURVE_COLUMNS))
    lines.extend(",".join(map(repr, row)) for row in d.curves.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path: str | Path) -> LoadCurveDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    stats = None
    if lines and lines[0].startswith("#"):
        meta = dict(kv.split("=", 1) for kv in lines[0][1:].split(";") if "=" in kv)
        stats = NormalizationStats(scale=float(meta["scale"]), scheme=meta.get("scheme", "global_max"))
        lines = lines[1:]
    if not lines or lines[0].split(",") != CURVE_COLUMNS:
        raise ValueError(f"{path}: missing p00..p95 header")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()]
    if not rows:
        raise ValueError(f"{path}: no curves")
    return LoadCurveDataset(np.array(rows, dtype=np.float64), stats)
