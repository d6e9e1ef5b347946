"""Telemetry data model, CSV ingestion/validation and a synthetic trace generator.

Records are 1 Hz samples. Missing optional magnitudes (``headway_s``, ``ibi_ms``)
are ``None`` in records, ``NaN`` in the columnar :class:`Trip` arrays and empty
cells in CSV files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

HARSH_G = 0.31
SAFE_HEADWAY_S = 2.5
CRASH_HEADWAY_S = 0.6

CALM, AGGRESSIVE = 0, 1


class TelemetryError(ValueError):
    """Raised for unusable telemetry input (missing columns, bad config)."""


@dataclass(frozen=True)
class TelemetryRecord:
    driver_id: str
    trip_id: str
    t: int
    speed_kmh: float
    harsh_accel: bool = False
    harsh_brake: bool = False
    harsh_corner: bool = False
    headway_level: int = 0
    headway_s: float | None = None
    speeding_level: int = 0
    overtaking: int = 0
    wiper: bool = False
    ibi_ms: float | None = None
    tsr_level: int = 0


RECORD_FIELDS = tuple(f.name for f in fields(TelemetryRecord))
REQUIRED_FIELDS = ("driver_id", "trip_id", "t", "speed_kmh")
OPTIONAL_MAGNITUDES = ("headway_s", "ibi_ms")
_BOOL_FIELDS = ("harsh_accel", "harsh_brake", "harsh_corner", "wiper")
_INT_FIELDS = ("t", "headway_level", "speeding_level", "overtaking", "tsr_level")


@dataclass(frozen=True)
class DriverProfile:
    driver_id: str
    age: float
    gender: str
    education: str
    experience_years: float
    income: float
    dominant_environment: Mapping[str, float]
    survey_scales: Mapping[str, float] = field(default_factory=dict)
    crash_involvement: bool = False
    traffic_offence: bool = False

    def check(self) -> list[str]:
        problems = []
        env = self.dominant_environment
        if set(env) - {"urban", "rural", "motorway"}:
            problems.append(f"unknown environments {sorted(set(env) - {'urban', 'rural', 'motorway'})}")
        if any(not 0.0 <= v <= 1.0 for v in env.values()):
            problems.append("environment share outside [0, 1]")
        if abs(sum(env.values()) - 1.0) > 1e-9:
            problems.append(f"environment shares sum to {sum(env.values())!r}, not 1")
        for name, v in self.survey_scales.items():
            if not 1.0 <= v <= 5.0:
                problems.append(f"Likert scale {name}={v} outside [1, 5]")
        if self.experience_years < 0:
            problems.append("negative experience_years")
        return problems


@dataclass(frozen=True)
class Diagnostic:
    """One validation or ingestion finding."""

    kind: str
    message: str
    driver_id: str | None = None
    trip_id: str | None = None
    row: int | None = None
    severity: str = "error"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def write_diagnostics(diags: Iterable[Diagnostic], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in diags:
            fh.write(d.to_json() + "\n")


@dataclass
class Trip:
    """Columnar view of one (driver, trip) sequence."""

    driver_id: str
    trip_id: str
    t: np.ndarray
    speed_kmh: np.ndarray
    harsh_accel: np.ndarray
    harsh_brake: np.ndarray
    harsh_corner: np.ndarray
    headway_level: np.ndarray
    headway_s: np.ndarray
    speeding_level: np.ndarray
    overtaking: np.ndarray
    wiper: np.ndarray
    ibi_ms: np.ndarray
    tsr_level: np.ndarray
    trip_index: int = 0

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_records(cls, records: Sequence[TelemetryRecord], trip_index: int = 0) -> "Trip":
        if not records:
            raise TelemetryError("cannot build a trip from zero records")
        r0 = records[0]

        def col(name, dtype):
            return np.array([getattr(r, name) for r in records], dtype=dtype)

        def opt(name):
            return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in records], dtype=float)

        return cls(
            driver_id=r0.driver_id,
            trip_id=r0.trip_id,
            t=col("t", np.int64),
            speed_kmh=col("speed_kmh", float),
            harsh_accel=col("harsh_accel", bool),
            harsh_brake=col("harsh_brake", bool),
            harsh_corner=col("harsh_corner", bool),
            headway_level=col("headway_level", np.int64),
            headway_s=opt("headway_s"),
            speeding_level=col("speeding_level", np.int64),
            overtaking=col("overtaking", np.int64),
            wiper=col("wiper", bool),
            ibi_ms=opt("ibi_ms"),
            tsr_level=col("tsr_level", np.int64),
            trip_index=trip_index,
        )

    def records(self) -> list[TelemetryRecord]:
        out = []
        for i in range(len(self)):
            hw = float(self.headway_s[i])
            ibi = float(self.ibi_ms[i])
            out.append(
                TelemetryRecord(
                    driver_id=self.driver_id,
                    trip_id=self.trip_id,
                    t=int(self.t[i]),
                    speed_kmh=float(self.speed_kmh[i]),
                    harsh_accel=bool(self.harsh_accel[i]),
                    harsh_brake=bool(self.harsh_brake[i]),
                    harsh_corner=bool(self.harsh_corner[i]),
                    headway_level=int(self.headway_level[i]),
                    headway_s=None if math.isnan(hw) else hw,
                    speeding_level=int(self.speeding_level[i]),
                    overtaking=int(self.overtaking[i]),
                    wiper=bool(self.wiper[i]),
                    ibi_ms=None if math.isnan(ibi) else ibi,
                    tsr_level=int(self.tsr_level[i]),
                )
            )
        return out


def group_trips(records: Iterable[TelemetryRecord]) -> list[Trip]:
    """Group records into trips sorted by (driver, trip, t); trip_index counts per driver."""
    groups: dict[tuple[str, str], list[TelemetryRecord]] = {}
    for r in records:
        groups.setdefault((r.driver_id, r.trip_id), []).append(r)
    trips = []
    index: dict[str, int] = {}
    for key in sorted(groups, key=_natural_key):
        recs = sorted(groups[key], key=lambda r: r.t)
        k = index.get(key[0], 0)
        index[key[0]] = k + 1
        trips.append(Trip.from_records(recs, trip_index=k))
    return trips


def _natural_key(key: tuple[str, ...]):
    """Sort key that orders embedded numbers by value: D2 before D10."""

    def part(s: str):
        return tuple((0, int(tok), "") if tok.isdigit() else (1, 0, tok) for tok in re.findall(r"\d+|\D+", s))

    return tuple(part(s) for s in key)


# --------------------------------------------------------------------------- validation


def headway_level_for(seconds: float) -> int:
    if seconds < CRASH_HEADWAY_S:
        return 3
    if seconds >= SAFE_HEADWAY_S:
        return 1
    return 2


def check_record(r: TelemetryRecord) -> list[str]:
    """Row-local invariant violations of a record (no ordering checks)."""
    problems = []
    if not (r.speed_kmh >= 0) or math.isinf(r.speed_kmh):
        problems.append(f"speed_kmh={r.speed_kmh} must be a finite non-negative number")
    if r.headway_level not in (0, 1, 2, 3):
        problems.append(f"headway_level={r.headway_level} not in {{0,1,2,3}}")
    if r.speeding_level not in (0, 1, 2, 3):
        problems.append(f"speeding_level={r.speeding_level} not in {{0,1,2,3}}")
    if r.headway_s is not None:
        if not r.headway_s >= 0:
            problems.append(f"headway_s={r.headway_s} must be non-negative")
        elif r.headway_level in (1, 2, 3) and headway_level_for(r.headway_s) != r.headway_level:
            problems.append(
                f"headway_level={r.headway_level} inconsistent with headway_s={r.headway_s} "
                f"(level 3 < {CRASH_HEADWAY_S} s, level 1 >= {SAFE_HEADWAY_S} s)"
            )
    if r.ibi_ms is not None and not r.ibi_ms > 0:
        problems.append(f"ibi_ms={r.ibi_ms} must be positive")
    if r.overtaking < 0:
        problems.append(f"overtaking={r.overtaking} must be non-negative")
    if r.tsr_level < 0:
        problems.append(f"tsr_level={r.tsr_level} must be non-negative")
    return problems


def validate(records: Sequence[TelemetryRecord]) -> list[Diagnostic]:
    """Report every invariant violation; an empty list means the records are clean."""
    diags = []
    last: dict[tuple[str, str], int] = {}
    for i, r in enumerate(records):
        for msg in check_record(r):
            diags.append(Diagnostic("invalid_value", msg, r.driver_id, r.trip_id, i))
        key = (r.driver_id, r.trip_id)
        if key in last:
            prev = last[key]
            if r.t <= prev:
                diags.append(Diagnostic("non_monotone_time", f"t={r.t} after t={prev}", r.driver_id, r.trip_id, i))
            elif r.t != prev + 1:
                diags.append(Diagnostic("time_gap", f"t jumps from {prev} to {r.t}", r.driver_id, r.trip_id, i))
        last[key] = r.t
    return diags


# --------------------------------------------------------------------------- CSV


def load_schema(path: str | Path | None) -> dict[str, str]:
    """Read a field -> column mapping (JSON object or ``field = column`` lines)."""
    schema = {name: name for name in RECORD_FIELDS}
    if path is None:
        return schema
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        mapping = json.loads(text)
    else:
        mapping = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                mapping[k.strip()] = v.strip()
    unknown = set(mapping) - set(RECORD_FIELDS)
    if unknown:
        raise TelemetryError(f"schema names unknown fields {sorted(unknown)}")
    schema.update(mapping)
    return schema


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(records: Iterable[TelemetryRecord], path: str | Path, schema: Mapping[str, str] | None = None) -> None:
    schema = dict(schema or {n: n for n in RECORD_FIELDS})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema[n] for n in RECORD_FIELDS])
        for r in records:
            w.writerow([_fmt(getattr(r, n)) for n in RECORD_FIELDS])


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "t", "yes"):
        return True
    if v in ("0", "false", "f", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"not an integer: {s!r}")
    return int(v)


def parse_row(row: Mapping[str, str], schema: Mapping[str, str]) -> TelemetryRecord:
    values = {}
    for name in RECORD_FIELDS:
        col = schema[name]
        if col not in row or row[col] is None:
            if name in REQUIRED_FIELDS:
                raise ValueError(f"missing value for {name}")
            continue
        cell = row[col].strip()
        if name in ("driver_id", "trip_id"):
            if not cell:
                raise ValueError(f"empty {name}")
            values[name] = cell
        elif name in OPTIONAL_MAGNITUDES:
            values[name] = float(cell) if cell else None
        elif cell == "":
            if name in REQUIRED_FIELDS:
                raise ValueError(f"empty {name}")
        elif name in _BOOL_FIELDS:
            values[name] = _parse_bool(cell)
        elif name in _INT_FIELDS:
            values[name] = _parse_int(cell)
        else:
            values[name] = float(cell)
    return TelemetryRecord(**values)


@dataclass
class IngestResult:
    trips: list[Trip]
    diagnostics: list[Diagnostic]
    n_rows: int

    @property
    def records(self) -> list[TelemetryRecord]:
        return [r for trip in self.trips for r in trip.records()]

    @property
    def rejected_rows(self) -> int:
        return sum(1 for d in self.diagnostics if d.row is not None and d.severity == "error")


def ingest_csv(path: str | Path, schema: Mapping[str, str] | str | Path | None = None) -> IngestResult:
    """Load a telemetry CSV.

    Rows with unparseable or inconsistent cells are rejected individually; trips whose
    timestamps are not strictly increasing in file order are rejected whole. Every
    rejection is itemised in ``diagnostics``.
    """
    if schema is None or isinstance(schema, (str, Path)):
        schema = load_schema(schema)
    path = Path(path)
    if not path.exists():
        raise TelemetryError(f"no such file: {path}")
    diags: list[Diagnostic] = []
    by_trip: dict[tuple[str, str], list[tuple[int, TelemetryRecord]]] = {}
    n_rows = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [schema[n] for n in REQUIRED_FIELDS if schema[n] not in header]
        if missing:
            raise TelemetryError(f"missing required column(s) {missing} in {path}")
        for rowno, row in enumerate(reader, start=2):
            n_rows += 1
            try:
                rec = parse_row(row, schema)
            except (ValueError, TypeError) as exc:
                diags.append(
                    Diagnostic("unparseable_row", str(exc), row.get(schema["driver_id"]), row.get(schema["trip_id"]), rowno)
                )
                continue
            problems = check_record(rec)
            if problems:
                diags.append(Diagnostic("invalid_row", "; ".join(problems), rec.driver_id, rec.trip_id, rowno))
                continue
            by_trip.setdefault((rec.driver_id, rec.trip_id), []).append((rowno, rec))

    kept: list[TelemetryRecord] = []
    for (drv, trp), rows in by_trip.items():
        ts = [r.t for _, r in rows]
        bad = next((i for i in range(1, len(ts)) if ts[i] <= ts[i - 1]), None)
        if bad is not None:
            diags.append(
                Diagnostic(
                    "trip_rejected",
                    f"trip {drv}/{trp}: timestamp t={ts[bad]} at row {rows[bad][0]} does not increase "
                    f"(previous t={ts[bad - 1]}); {len(rows)} rows dropped",
                    drv,
                    trp,
                )
            )
            continue
        for i in range(1, len(ts)):
            if ts[i] != ts[i - 1] + 1:
                diags.append(
                    Diagnostic("time_gap", f"t jumps from {ts[i - 1]} to {ts[i]}", drv, trp, rows[i][0], severity="warning")
                )
        kept.extend(r for _, r in rows)
    for d in diags:
        logger.debug("ingest: %s", d.message)
    return IngestResult(trips=group_trips(kept), diagnostics=diags, n_rows=n_rows)


# --------------------------------------------------------------------------- synthetic traces


@dataclass
class RegimeParams:
    p_harsh_accel: float
    p_harsh_brake: float
    p_harsh_corner: float
    speed_mean: float
    speed_sd: float
    speed_ar: float
    p_lead: float
    # headway level distribution given a lead vehicle, below/above speed_split_kmh
    headway_probs_slow: tuple[float, float, float]
    headway_probs_fast: tuple[float, float, float]
    speeding_probs: tuple[float, float, float, float]
    overtaking_rate: float
    ibi_mean: float


def _calm() -> RegimeParams:
    return RegimeParams(
        p_harsh_accel=0.01,
        p_harsh_brake=0.01,
        p_harsh_corner=0.01,
        speed_mean=45.0,
        speed_sd=12.0,
        speed_ar=0.9,
        p_lead=0.6,
        headway_probs_slow=(0.75, 0.23, 0.02),
        headway_probs_fast=(0.85, 0.14, 0.01),
        speeding_probs=(0.9, 0.07, 0.02, 0.01),
        overtaking_rate=0.001,
        ibi_mean=820.0,
    )


def _aggressive() -> RegimeParams:
    return RegimeParams(
        p_harsh_accel=0.55,
        p_harsh_brake=0.6,
        p_harsh_corner=0.45,
        speed_mean=95.0,
        speed_sd=12.0,
        speed_ar=0.9,
        p_lead=0.95,
        headway_probs_slow=(0.15, 0.5, 0.35),
        headway_probs_fast=(0.05, 0.45, 0.5),
        speeding_probs=(0.3, 0.3, 0.2, 0.2),
        overtaking_rate=0.05,
        ibi_mean=690.0,
    )


@dataclass
class SynthConfig:
    n_drivers: int = 12
    trips_per_driver: int = 3
    trip_length_s: int = 600
    # transition matrix [[calm->calm, calm->aggr], [aggr->calm, aggr->aggr]]
    transition: tuple[tuple[float, float], tuple[float, float]] = ((0.99, 0.01), (0.04, 0.96))
    start_state: str = "stationary"  # stationary | calm | aggressive
    calm: RegimeParams = field(default_factory=_calm)
    aggressive: RegimeParams = field(default_factory=_aggressive)
    speed_split_kmh: float = 70.0
    p_rain_trip: float = 0.2
    p_ibi_missing: float = 0.05
    driver_heterogeneity: float = 0.5
    seed: int = 0

    def check(self) -> None:
        def prob(name, v):
            if not (0.0 <= v <= 1.0):
                raise TelemetryError(f"{name}={v} is not a probability")

        if self.n_drivers < 1 or self.trips_per_driver < 1 or self.trip_length_s < 1:
            raise TelemetryError("n_drivers, trips_per_driver and trip_length_s must be >= 1")
        for i, row in enumerate(self.transition):
            for j, v in enumerate(row):
                prob(f"transition[{i}][{j}]", v)
            if abs(sum(row) - 1.0) > 1e-9:
                raise TelemetryError(f"transition row {i} sums to {sum(row)}, not 1")
        if self.start_state not in ("stationary", "calm", "aggressive"):
            raise TelemetryError(f"unknown start_state {self.start_state!r}")
        for label, reg in (("calm", self.calm), ("aggressive", self.aggressive)):
            for name in ("p_harsh_accel", "p_harsh_brake", "p_harsh_corner", "p_lead", "overtaking_rate"):
                prob(f"{label}.{name}", getattr(reg, name))
            prob(f"{label}.speed_ar", reg.speed_ar)
            for name in ("headway_probs_slow", "headway_probs_fast", "speeding_probs"):
                ps = getattr(reg, name)
                for v in ps:
                    prob(f"{label}.{name}", v)
                if abs(sum(ps) - 1.0) > 1e-9:
                    raise TelemetryError(f"{label}.{name} sums to {sum(ps)}, not 1")
        prob("p_rain_trip", self.p_rain_trip)
        prob("p_ibi_missing", self.p_ibi_missing)
        prob("driver_heterogeneity", self.driver_heterogeneity)

    def stationary_aggressive(self) -> float:
        a = self.transition[0][1]
        b = self.transition[1][0]
        if a + b == 0:
            return 0.5
        return a / (a + b)


@dataclass
class SynthResult:
    trips: list[Trip]
    ground_truth: dict[tuple[str, str], np.ndarray]
    profiles: dict[str, DriverProfile]

    @property
    def records(self) -> list[TelemetryRecord]:
        return [r for trip in self.trips for r in trip.records()]


def _regime_path(rng: np.random.Generator, trans: np.ndarray, n: int, start: int) -> np.ndarray:
    states = np.empty(n, dtype=np.int64)
    u = rng.random(n)
    s = start
    for i in range(n):
        if i > 0:
            s = AGGRESSIVE if u[i] < trans[s, AGGRESSIVE] else CALM
        states[i] = s
    return states


def _make_profile(rng: np.random.Generator, driver_id: str) -> DriverProfile:
    env = rng.dirichlet([2.0, 2.0, 1.5])
    return DriverProfile(
        driver_id=driver_id,
        age=float(rng.integers(20, 71)),
        gender=str(rng.choice(["male", "female"], p=[0.7, 0.3])),
        education=str(rng.choice(["secondary", "bachelor", "master"])),
        experience_years=float(rng.uniform(1, 40)),
        income=float(np.round(rng.uniform(1500, 6000), 0)),
        dominant_environment={"urban": float(env[0]), "rural": float(env[1]), "motorway": float(1.0 - env[0] - env[1])},
        survey_scales={
            "speed_attitude": float(np.round(rng.uniform(1, 5), 2)),
            "distance_attitude": float(np.round(rng.uniform(1, 5), 2)),
            "confidence": float(np.round(rng.uniform(1, 5), 2)),
        },
        crash_involvement=bool(rng.random() < 0.15),
        traffic_offence=bool(rng.random() < 0.25),
    )


def _emit_trip(
    rng: np.random.Generator, cfg: SynthConfig, driver_id: str, trip_id: str, trip_index: int, trans: np.ndarray
) -> tuple[Trip, np.ndarray]:
    n = cfg.trip_length_s
    if cfg.start_state == "calm":
        start = CALM
    elif cfg.start_state == "aggressive":
        start = AGGRESSIVE
    else:
        start = AGGRESSIVE if rng.random() < cfg.stationary_aggressive() else CALM
    states = _regime_path(rng, trans, n, start)
    regimes = (cfg.calm, cfg.aggressive)

    def per_state(attr):
        return np.where(states == AGGRESSIVE, getattr(cfg.aggressive, attr), getattr(cfg.calm, attr))

    harsh = {
        name: rng.random(n) < per_state(f"p_{name}") for name in ("harsh_accel", "harsh_brake", "harsh_corner")
    }

    speed = np.empty(n)
    noise = rng.standard_normal(n)
    v = regimes[start].speed_mean
    for i in range(n):
        reg = regimes[states[i]]
        sd_innov = reg.speed_sd * math.sqrt(1.0 - reg.speed_ar**2)
        v = reg.speed_mean + reg.speed_ar * (v - reg.speed_mean) + sd_innov * noise[i]
        v = max(v, 0.0)
        speed[i] = v

    lead = rng.random(n) < per_state("p_lead")
    u = rng.random(n)
    level = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if not lead[i]:
            continue
        reg = regimes[states[i]]
        probs = reg.headway_probs_fast if speed[i] >= cfg.speed_split_kmh else reg.headway_probs_slow
        level[i] = 1 + int(np.searchsorted(np.cumsum(probs), u[i], side="right"))
        level[i] = min(level[i], 3)
    hw = np.full(n, np.nan)
    m1, m2, m3 = level == 1, level == 2, level == 3
    hw[m1] = SAFE_HEADWAY_S + rng.exponential(1.5, m1.sum())
    hw[m2] = rng.uniform(CRASH_HEADWAY_S, SAFE_HEADWAY_S, m2.sum())
    hw[m3] = rng.uniform(0.1, CRASH_HEADWAY_S, m3.sum())
    hw = np.round(hw, 3)
    # rounding may move a value onto a level boundary; keep the invariant exact
    hw[m2] = np.clip(hw[m2], CRASH_HEADWAY_S, SAFE_HEADWAY_S - 0.001)
    hw[m3] = np.clip(hw[m3], 0.1, CRASH_HEADWAY_S - 0.001)

    us = rng.random(n)
    speeding = np.empty(n, dtype=np.int64)
    for i in range(n):
        speeding[i] = min(int(np.searchsorted(np.cumsum(regimes[states[i]].speeding_probs), us[i], side="right")), 3)
    overtaking = (rng.random(n) < per_state("overtaking_rate")).astype(np.int64)
    wiper = np.full(n, rng.random() < cfg.p_rain_trip)
    ibi = np.round(per_state("ibi_mean") + rng.normal(0, 40, n), 1)
    ibi = np.clip(ibi, 300.0, None)
    ibi[rng.random(n) < cfg.p_ibi_missing] = np.nan
    tsr = np.repeat(rng.integers(0, 4, size=(n + 59) // 60), 60)[:n].astype(np.int64)

    trip = Trip(
        driver_id=driver_id,
        trip_id=trip_id,
        t=np.arange(n, dtype=np.int64),
        speed_kmh=np.round(speed, 2),
        harsh_accel=harsh["harsh_accel"],
        harsh_brake=harsh["harsh_brake"],
        harsh_corner=harsh["harsh_corner"],
        headway_level=level,
        headway_s=hw,
        speeding_level=speeding,
        overtaking=overtaking,
        wiper=wiper,
        ibi_ms=ibi,
        tsr_level=tsr,
        trip_index=trip_index,
    )
    return trip, states == AGGRESSIVE


def generate_synthetic(cfg: SynthConfig) -> SynthResult:
    """Simulate trips from a two-regime (calm/aggressive) Markov chain.

    ``ground_truth[(driver, trip)][i]`` is True when second ``i`` was emitted by the
    aggressive regime. Each driver draws from an independent child of the seed.
    """
    cfg.check()
    base = np.array(cfg.transition, dtype=float)
    width = len(str(cfg.n_drivers - 1))
    trips, truth, profiles = [], {}, {}
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_drivers)
    for d, child in enumerate(children):
        rng = np.random.default_rng(child)
        driver_id = f"D{d:0{width}d}"
        profiles[driver_id] = _make_profile(rng, driver_id)
        # per-driver propensity scales calm->aggressive entry (heterogeneous drivers)
        scale = 1.0 + cfg.driver_heterogeneity * (2.0 * rng.random() - 1.0)
        trans = base.copy()
        trans[0, 1] = min(1.0, base[0, 1] * scale)
        trans[0, 0] = 1.0 - trans[0, 1]
        for k in range(cfg.trips_per_driver):
            trip_id = f"T{k:03d}"
            trip, gt = _emit_trip(rng, cfg, driver_id, trip_id, k, trans)
            trips.append(trip)
            truth[(driver_id, trip_id)] = gt
    return SynthResult(trips=trips, ground_truth=truth, profiles=profiles)


# --------------------------------------------------------------------------- profiles / ground truth IO


def write_profiles(profiles: Mapping[str, DriverProfile], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for driver_id in sorted(profiles):
            fh.write(json.dumps(asdict(profiles[driver_id]), sort_keys=True) + "\n")


def read_profiles(path: str | Path) -> dict[str, DriverProfile]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                p = DriverProfile(**json.loads(line))
                out[p.driver_id] = p
    return out


def write_ground_truth(truth: Mapping[tuple[str, str], np.ndarray], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["driver_id", "trip_id", "t", "aggressive"])
        for (drv, trp) in sorted(truth, key=_natural_key):
            for i, flag in enumerate(truth[(drv, trp)]):
                w.writerow([drv, trp, i, int(flag)])


def read_ground_truth(path: str | Path) -> dict[tuple[str, str], np.ndarray]:
    rows: dict[tuple[str, str], list[tuple[int, bool]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault((row["driver_id"], row["trip_id"]), []).append((int(row["t"]), row["aggressive"] == "1"))
    return {k: np.array([f for _, f in sorted(v)], dtype=bool) for k, v in rows.items()}
