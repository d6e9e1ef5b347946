"""Rolling observation windows, paired prediction windows and per-window features."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .telemetry import DriverProfile, Trip

logger = logging.getLogger(__name__)

EVENT_KINDS = ("h_a", "h_b", "h_c", "hdw_2", "hdw_3")
HARSH_KINDS = ("h_a", "h_b", "h_c")
HEADWAY_LEVELS = (1, 2, 3)


@dataclass(frozen=True)
class WindowParams:
    omega: int = 5
    delta: int = 1
    horizon: int = 2

    def __post_init__(self):
        if self.omega < 1 or self.delta < 1 or self.horizon < 0:
            raise ValueError(f"invalid window params {self}: need omega >= 1, delta >= 1, horizon >= 0")


@dataclass
class WindowView:
    driver_id: str
    trip_id: str
    t: int
    ev_obs: dict[str, float]
    ev_pred: dict[str, float] | None
    mean_speed_kmh: float
    hdw_props: dict[int, float]
    hdw_pred_props: dict[int, float] | None = None
    pred_len: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "driver_id": self.driver_id,
                "trip_id": self.trip_id,
                "t": self.t,
                "ev_obs": self.ev_obs,
                "ev_pred": self.ev_pred,
                "mean_speed_kmh": self.mean_speed_kmh,
                "hdw_props": {str(k): v for k, v in self.hdw_props.items()},
                "hdw_pred_props": None
                if self.hdw_pred_props is None
                else {str(k): v for k, v in self.hdw_pred_props.items()},
                "pred_len": self.pred_len,
            },
            sort_keys=True,
        )


def window_count(n: int, p: WindowParams) -> int:
    if n < p.omega:
        return 0
    return (n - p.omega) // p.delta + 1


def event_indicators(trip: Trip) -> np.ndarray:
    """(n, 5) 0/1 matrix of the event set, columns ordered as EVENT_KINDS."""
    return np.column_stack(
        [
            trip.harsh_accel,
            trip.harsh_brake,
            trip.harsh_corner,
            trip.headway_level == 2,
            trip.headway_level == 3,
        ]
    ).astype(np.int64)


def headway_indicators(trip: Trip) -> np.ndarray:
    return np.column_stack([trip.headway_level == k for k in HEADWAY_LEVELS]).astype(np.int64)


def _ends(n: int, p: WindowParams) -> np.ndarray:
    return p.omega - 1 + p.delta * np.arange(window_count(n, p))


def _rolling(ind: np.ndarray, ends: np.ndarray, omega: int) -> np.ndarray:
    """Counts over [end-omega+1, end] via prefix sums (sliding-window identity)."""
    c = np.vstack([np.zeros((1, ind.shape[1]), dtype=np.int64), np.cumsum(ind, axis=0)])
    return c[ends + 1] - c[ends + 1 - omega]


def _ahead(ind: np.ndarray, ends: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    n = ind.shape[0]
    c = np.vstack([np.zeros((1, ind.shape[1]), dtype=np.int64), np.cumsum(ind, axis=0)])
    stop = np.minimum(ends + horizon, n - 1)
    return c[stop + 1] - c[ends + 1], stop - ends


def _window_mean(x: np.ndarray, ends: np.ndarray, omega: int) -> np.ndarray:
    # summed in time order, not via float prefix sums, so results do not drift with trip length
    idx = ends[:, None] - omega + 1 + np.arange(omega)[None, :]
    acc = np.zeros(len(ends))
    for k in range(omega):
        acc = acc + x[idx[:, k]]
    return acc / omega


def windows(trip: Trip, p: WindowParams) -> list[WindowView]:
    """All windows of one trip. Prediction windows shorter than P at trip end use the
    remaining steps as denominator; with no remaining step ``ev_pred`` is None."""
    n = len(trip)
    if n < p.omega:
        logger.warning("trip %s/%s has %d steps, shorter than omega=%d: no windows", trip.driver_id, trip.trip_id, n, p.omega)
        return []
    ends = _ends(n, p)
    ev = _rolling(event_indicators(trip), ends, p.omega)
    hw = _rolling(headway_indicators(trip), ends, p.omega)
    ev_ahead, plen = _ahead(event_indicators(trip), ends, p.horizon)
    hw_ahead, _ = _ahead(headway_indicators(trip), ends, p.horizon)
    spd = _window_mean(trip.speed_kmh.astype(float), ends, p.omega)
    views = []
    for j, t in enumerate(ends):
        L = int(plen[j])
        views.append(
            WindowView(
                driver_id=trip.driver_id,
                trip_id=trip.trip_id,
                t=int(t),
                ev_obs={k: ev[j, i] / p.omega for i, k in enumerate(EVENT_KINDS)},
                ev_pred=None if L == 0 else {k: ev_ahead[j, i] / L for i, k in enumerate(EVENT_KINDS)},
                mean_speed_kmh=float(spd[j]),
                hdw_props={k: hw[j, i] / p.omega for i, k in enumerate(HEADWAY_LEVELS)},
                hdw_pred_props=None if L == 0 else {k: hw_ahead[j, i] / L for i, k in enumerate(HEADWAY_LEVELS)},
                pred_len=L,
            )
        )
    return views


# --------------------------------------------------------------------------- columnar tables

FEATURE_NAMES = (
    "ev_h_a",
    "ev_h_b",
    "ev_h_c",
    "ev_hdw_2",
    "ev_hdw_3",
    "hdw_1_prop",
    "mean_speed_kmh",
    "max_speed_kmh",
    "speeding_prop",
    "speeding_high_prop",
    "overtaking_mean",
    "wiper_prop",
    "ibi_mean_ms",
    "tsr_mean",
    "headway_s_mean",
    "trip_duration_s",
    "trip_index",
    "age",
    "experience_years",
    "income",
    "gender_male",
    "env_urban",
    "env_motorway",
    "crash_involvement",
    "traffic_offence",
)
CATEGORICAL_FEATURES = frozenset({"gender_male", "crash_involvement", "traffic_offence", "trip_index"})


def _rolling_mean_nan(x: np.ndarray, ends: np.ndarray, omega: int) -> np.ndarray:
    ok = ~np.isnan(x)
    c_val = np.concatenate([[0.0], np.cumsum(np.where(ok, x, 0.0))])
    c_cnt = np.concatenate([[0], np.cumsum(ok)])
    tot = c_val[ends + 1] - c_val[ends + 1 - omega]
    cnt = c_cnt[ends + 1] - c_cnt[ends + 1 - omega]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


def _profile_values(profile: DriverProfile | None) -> list[float]:
    if profile is None:
        return [np.nan] * 8
    env = profile.dominant_environment
    return [
        float(profile.age),
        float(profile.experience_years),
        float(profile.income),
        1.0 if str(profile.gender).lower() in ("male", "m") else 0.0,
        float(env.get("urban", np.nan)),
        float(env.get("motorway", np.nan)),
        1.0 if profile.crash_involvement else 0.0,
        1.0 if profile.traffic_offence else 0.0,
    ]


@dataclass
class WindowTable:
    """Columnar windows for many trips (the bulk form used by the pipeline)."""

    driver: np.ndarray
    trip: np.ndarray
    t: np.ndarray
    ev_obs: np.ndarray
    ev_pred: np.ndarray
    pred_len: np.ndarray
    mean_speed: np.ndarray
    hdw_props: np.ndarray
    hdw_pred: np.ndarray
    features: np.ndarray
    truth: np.ndarray | None = None
    feature_names: tuple[str, ...] = FEATURE_NAMES
    params: WindowParams = field(default_factory=WindowParams)

    def __len__(self) -> int:
        return len(self.t)

    def take(self, idx) -> "WindowTable":
        idx = np.asarray(idx)
        return WindowTable(
            driver=self.driver[idx],
            trip=self.trip[idx],
            t=self.t[idx],
            ev_obs=self.ev_obs[idx],
            ev_pred=self.ev_pred[idx],
            pred_len=self.pred_len[idx],
            mean_speed=self.mean_speed[idx],
            hdw_props=self.hdw_props[idx],
            hdw_pred=self.hdw_pred[idx],
            features=self.features[idx],
            truth=None if self.truth is None else self.truth[idx],
            feature_names=self.feature_names,
            params=self.params,
        )

    def view(self, i: int) -> WindowView:
        L = int(self.pred_len[i])
        return WindowView(
            driver_id=str(self.driver[i]),
            trip_id=str(self.trip[i]),
            t=int(self.t[i]),
            ev_obs={k: float(self.ev_obs[i, j]) for j, k in enumerate(EVENT_KINDS)},
            ev_pred=None if L == 0 else {k: float(self.ev_pred[i, j]) for j, k in enumerate(EVENT_KINDS)},
            mean_speed_kmh=float(self.mean_speed[i]),
            hdw_props={k: float(self.hdw_props[i, j]) for j, k in enumerate(HEADWAY_LEVELS)},
            hdw_pred_props=None if L == 0 else {k: float(self.hdw_pred[i, j]) for j, k in enumerate(HEADWAY_LEVELS)},
            pred_len=L,
        )

    def views(self) -> Iterable[WindowView]:
        for i in range(len(self)):
            yield self.view(i)

    def feature_index(self, names: Sequence[str]) -> list[int]:
        return [self.feature_names.index(n) for n in names]


def _trip_table(
    trip: Trip, p: WindowParams, profile: DriverProfile | None, truth: np.ndarray | None
) -> WindowTable | None:
    n = len(trip)
    if n < p.omega:
        logger.warning("trip %s/%s has %d steps, shorter than omega=%d: no windows", trip.driver_id, trip.trip_id, n, p.omega)
        return None
    ends = _ends(n, p)
    m = len(ends)
    ind = event_indicators(trip)
    hwi = headway_indicators(trip)
    ev = _rolling(ind, ends, p.omega) / p.omega
    hw = _rolling(hwi, ends, p.omega) / p.omega
    ev_ahead, plen = _ahead(ind, ends, p.horizon)
    hw_ahead, _ = _ahead(hwi, ends, p.horizon)
    with np.errstate(invalid="ignore", divide="ignore"):
        ev_pred = np.where(plen[:, None] > 0, ev_ahead / np.maximum(plen, 1)[:, None], np.nan)
        hw_pred = np.where(plen[:, None] > 0, hw_ahead / np.maximum(plen, 1)[:, None], np.nan)
    speed = trip.speed_kmh.astype(float)
    mean_speed = _window_mean(speed, ends, p.omega)
    win_idx = ends[:, None] - p.omega + 1 + np.arange(p.omega)[None, :]
    max_speed = speed[win_idx].max(axis=1)
    spd_any = _rolling((trip.speeding_level >= 1).astype(np.int64)[:, None], ends, p.omega)[:, 0] / p.omega
    spd_hi = _rolling((trip.speeding_level == 3).astype(np.int64)[:, None], ends, p.omega)[:, 0] / p.omega
    overt = _rolling(trip.overtaking.astype(np.int64)[:, None], ends, p.omega)[:, 0] / p.omega
    wiper = _rolling(trip.wiper.astype(np.int64)[:, None], ends, p.omega)[:, 0] / p.omega
    ibi = _rolling_mean_nan(trip.ibi_ms.astype(float), ends, p.omega)
    tsr = _rolling(trip.tsr_level.astype(np.int64)[:, None], ends, p.omega)[:, 0] / p.omega
    hws = _rolling_mean_nan(trip.headway_s.astype(float), ends, p.omega)
    prof = np.tile(np.array(_profile_values(profile), dtype=float), (m, 1))
    feats = np.column_stack(
        [
            ev,
            hw[:, 0],
            mean_speed,
            max_speed,
            spd_any,
            spd_hi,
            overt,
            wiper,
            ibi,
            tsr,
            hws,
            np.full(m, float(n)),
            np.full(m, float(trip.trip_index)),
            prof,
        ]
    )
    if truth is not None:
        # planted ground truth per window: majority of aggressive seconds in W_t
        agg = _rolling(np.asarray(truth, dtype=np.int64)[:, None], ends, p.omega)[:, 0]
        wtruth = 2 * agg > p.omega
    else:
        wtruth = None
    return WindowTable(
        driver=np.full(m, trip.driver_id, dtype=object),
        trip=np.full(m, trip.trip_id, dtype=object),
        t=ends.astype(np.int64),
        ev_obs=ev,
        ev_pred=ev_pred,
        pred_len=plen.astype(np.int64),
        mean_speed=mean_speed,
        hdw_props=hw,
        hdw_pred=hw_pred,
        features=feats,
        truth=wtruth,
        params=p,
    )


def concat_tables(tables: Sequence[WindowTable], params: WindowParams) -> WindowTable:
    if not tables:
        z = np.zeros((0, len(EVENT_KINDS)))
        return WindowTable(
            driver=np.zeros(0, dtype=object),
            trip=np.zeros(0, dtype=object),
            t=np.zeros(0, dtype=np.int64),
            ev_obs=z,
            ev_pred=z.copy(),
            pred_len=np.zeros(0, dtype=np.int64),
            mean_speed=np.zeros(0),
            hdw_props=np.zeros((0, 3)),
            hdw_pred=np.zeros((0, 3)),
            features=np.zeros((0, len(FEATURE_NAMES))),
            params=params,
        )
    has_truth = all(t.truth is not None for t in tables)
    return WindowTable(
        driver=np.concatenate([t.driver for t in tables]),
        trip=np.concatenate([t.trip for t in tables]),
        t=np.concatenate([t.t for t in tables]),
        ev_obs=np.vstack([t.ev_obs for t in tables]),
        ev_pred=np.vstack([t.ev_pred for t in tables]),
        pred_len=np.concatenate([t.pred_len for t in tables]),
        mean_speed=np.concatenate([t.mean_speed for t in tables]),
        hdw_props=np.vstack([t.hdw_props for t in tables]),
        hdw_pred=np.vstack([t.hdw_pred for t in tables]),
        features=np.vstack([t.features for t in tables]),
        truth=np.concatenate([t.truth for t in tables]) if has_truth else None,
        feature_names=tables[0].feature_names,
        params=params,
    )


def build_table(
    trips: Sequence[Trip],
    p: WindowParams,
    profiles: Mapping[str, DriverProfile] | None = None,
    ground_truth: Mapping[tuple[str, str], np.ndarray] | None = None,
) -> WindowTable:
    """Windows of every trip, in trip order; windows never span trips."""
    parts = []
    for trip in trips:
        prof = None if profiles is None else profiles.get(trip.driver_id)
        gt = None if ground_truth is None else ground_truth.get((trip.driver_id, trip.trip_id))
        tab = _trip_table(trip, p, prof, gt)
        if tab is not None:
            parts.append(tab)
    return concat_tables(parts, p)


def dump_windows(table: WindowTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in table.views():
            fh.write(v.to_json() + "\n")
