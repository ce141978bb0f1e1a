"""Hourly traffic-count ingestion and the cyclic double-Poisson model.

Input snapshot schema (CSV with a header row):

    sensor,direction,date,hour,count

with ``direction`` in {inbound, outbound}, ``date`` as YYYY-MM-DD, ``hour``
an integer (24 wraps to 0), and ``count`` a nonnegative integer.  Malformed
rows and duplicate (sensor, direction, date, hour) keys are rejected and
counted.  Counts are modelled as a double Poisson over hour-of-day with
cyclic B-spline expansions for the mean and the dispersion; the dropout
parameters come from random-search CV over [0,1]^2 (Bernoulli) or [0,2]^2
(Gaussian noise).
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import families
from .basis import build_basis, design_matrix
from .errors import ConfigError, DataError
from .model import GlmSpec
from .optim import FitResult, OptimConfig
from .rngs import substream
from .tuning import CvPlan, CvResult, fit_method, random_search_cv

DIRECTIONS = ("inbound", "outbound")
TRAFFIC_RECTS = {"bernoulli": ((0.0, 1.0), (0.0, 1.0)),
                 "gaussian": ((0.0, 2.0), (0.0, 2.0))}
HOUR_GRID = np.linspace(0.0, 24.0, 241)


@dataclass(frozen=True)
class TrafficRecord:
    sensor: str
    direction: str
    date: datetime.date
    hour: int  # 0..23 after ingestion
    count: int


@dataclass(frozen=True)
class TrafficData:
    records: list
    rejected: int

    def keys(self):
        return sorted({(r.sensor, r.direction) for r in self.records})


def _parse_row(row: dict) -> TrafficRecord:
    direction = row["direction"].strip().lower()
    if direction not in DIRECTIONS:
        raise ValueError(f"direction {direction!r}")
    date = datetime.date.fromisoformat(row["date"].strip())
    hour = int(row["hour"])
    if not 0 <= hour <= 24:
        raise ValueError(f"hour {hour}")
    count = int(row["count"])
    if count < 0:
        raise ValueError(f"count {count}")
    return TrafficRecord(sensor=row["sensor"].strip(), direction=direction,
                         date=date, hour=hour % 24, count=count)


def read_traffic_csv(path) -> TrafficData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"traffic snapshot not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        lines = [ln for ln in handle if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    required = {"sensor", "direction", "date", "hour", "count"}
    if reader.fieldnames is None or not required <= set(reader.fieldnames):
        raise DataError(
            f"traffic snapshot needs columns {sorted(required)}, "
            f"got {reader.fieldnames}"
        )
    records = []
    seen = set()
    rejected = 0
    for row in reader:
        try:
            rec = _parse_row(row)
        except (ValueError, KeyError, TypeError):
            rejected += 1
            continue
        key = (rec.sensor, rec.direction, rec.date, rec.hour)
        if key in seen:
            rejected += 1
            continue
        seen.add(key)
        records.append(rec)
    return TrafficData(records=records, rejected=rejected)


def select_series(data: TrafficData, sensor: str, direction: str,
                  summer_2019: bool = False):
    """(hours, counts) for one sensor/direction, optionally June-August 2019."""
    keys = data.keys()
    if (sensor, direction) not in keys:
        raise DataError(
            f"no data for sensor={sensor!r} direction={direction!r}; "
            f"available: {keys}"
        )
    rows = [r for r in data.records if r.sensor == sensor and r.direction == direction]
    if summer_2019:
        rows = [r for r in rows
                if r.date.year == 2019 and r.date.month in (6, 7, 8)]
        if not rows:
            raise DataError(f"no summer-2019 rows for {sensor}/{direction}")
    hours = np.array([r.hour for r in rows], dtype=float)
    counts = np.array([r.count for r in rows], dtype=float)
    return hours, counts


@dataclass(frozen=True)
class TrafficFit:
    cv: CvResult
    fit: FitResult
    grid: np.ndarray
    mean_curve: np.ndarray
    disp_curve: np.ndarray
    n_used: int


def fit_traffic_model(hours, counts, noise_kind: str, cv_samples: int,
                      cv_folds: int, seed: int, optim: OptimConfig,
                      mean_knots: int = 24, disp_knots: int = 12) -> TrafficFit:
    if noise_kind not in TRAFFIC_RECTS:
        raise ConfigError(f"traffic noise kind must be one of {sorted(TRAFFIC_RECTS)}")
    hours = np.asarray(hours, dtype=float) % 24.0
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0) or np.any(counts != np.floor(counts)):
        raise DataError("counts must be nonnegative integers")
    if len(hours) < cv_folds:
        raise DataError(f"need at least {cv_folds} observations, got {len(hours)}")

    kernel = families.poisson()
    mean_basis = build_basis(0.0, 24.0, mean_knots, "cyclic")
    disp_basis = build_basis(0.0, 24.0, disp_knots, "cyclic")
    X = design_matrix(mean_basis, hours)
    Z = design_matrix(disp_basis, hours)
    spec = GlmSpec(kernel=kernel, X=X, Z=Z, beta=np.zeros(X.shape[1]),
                   alpha=np.zeros(Z.shape[1]))

    plan = CvPlan(rect=TRAFFIC_RECTS[noise_kind], n_samples=cv_samples,
                  n_folds=cv_folds, seed=seed)
    cv = random_search_cv(spec, counts, noise_kind, plan, optim)
    final = fit_method(spec, counts, noise_kind, cv.selected_params, optim,
                       substream(seed, "final-fit"))

    B_mean = design_matrix(mean_basis, HOUR_GRID)
    B_disp = design_matrix(disp_basis, HOUR_GRID)
    mean_curve = np.exp(np.clip(B_mean @ final.beta, -700, 700))
    disp_curve = np.exp(np.clip(B_disp @ final.alpha, -700, 700))
    return TrafficFit(cv=cv, fit=final, grid=HOUR_GRID, mean_curve=mean_curve,
                      disp_curve=disp_curve, n_used=len(hours))
