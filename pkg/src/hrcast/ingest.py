"""Vendor-export normalization: unit conversion, 1 s resampling, speed
derivation, and assembly into the canonical segment store.

Input format is delimited tabular text: one file per recording with `# key = value`
metadata lines (user_id, sport, optional gender) followed by a header row of raw
column names and data rows. A per-vendor schema maps raw columns/units onto the
canonical registry. Gaps longer than 30 s split a recording into separate sessions.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    ChannelRegistry,
    Segment,
    SegmentStore,
    Session,
    StaticAttributes,
    wearable_registry,
    window_session,
)

GAP_SPLIT_SECONDS = 30.0
HR_TARGET = "heart_rate"  # schema target name for the label stream (not a channel)

# exact affine conversions: value_canon = value_raw * factor + offset
_CONVERSIONS: dict[tuple[str, str], tuple[float, float]] = {
    ("mph", "m/s"): (0.44704, 0.0),
    ("m/s", "mph"): (1.0 / 0.44704, 0.0),
    ("km/h", "m/s"): (1000.0 / 3600.0, 0.0),
    ("m/s", "km/h"): (3.6, 0.0),
    ("mi", "m"): (1609.344, 0.0),
    ("m", "mi"): (1.0 / 1609.344, 0.0),
    ("ft", "m"): (0.3048, 0.0),
    ("m", "ft"): (1.0 / 0.3048, 0.0),
    ("F", "C"): (5.0 / 9.0, -160.0 / 9.0),
    ("C", "F"): (9.0 / 5.0, 32.0),
    ("kJ", "kcal"): (1.0 / 4.184, 0.0),
    ("kcal", "kJ"): (4.184, 0.0),
    ("km", "m"): (1000.0, 0.0),
    ("m", "km"): (0.001, 0.0),
}


def conversion(raw_unit: str, canonical_unit: str) -> tuple[float, float]:
    if raw_unit == canonical_unit:
        return 1.0, 0.0
    try:
        return _CONVERSIONS[(raw_unit, canonical_unit)]
    except KeyError:
        known = sorted({f"{a}->{b}" for a, b in _CONVERSIONS})
        raise ValueError(
            f"no conversion registered for {raw_unit!r} -> {canonical_unit!r}; known: {', '.join(known)}"
        ) from None


def convert_units(value, raw_unit: str, canonical_unit: str):
    factor, offset = conversion(raw_unit, canonical_unit)
    return np.asarray(value, float) * factor + offset if np.ndim(value) else float(value) * factor + offset


def resample_uniform(timestamps, values, period: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation onto the uniform grid t0, t0+period, ..., ≤ t_end."""
    t = np.asarray(timestamps, float)
    v = np.asarray(values, float)
    if t.shape[0] < 2:
        raise ValueError("resampling needs at least 2 samples")
    if np.any(np.diff(t) == 0):
        raise ValueError("duplicate timestamps")
    if np.any(np.diff(t) < 0):
        raise ValueError("timestamps must be increasing")
    n = int(np.floor((t[-1] - t[0]) / period)) + 1
    grid = t[0] + np.arange(n) * period
    return grid, np.interp(grid, t, v)


def derive_speed(distance, dt: float = 1.0, report: dict | None = None) -> np.ndarray:
    """Speed from cumulative distance: difference of consecutive samples over dt,
    first value copying the second; negative increments clamp to 0 (flagged)."""
    d = np.asarray(distance, float)
    if d.shape[0] < 2:
        return np.zeros_like(d)
    inc = np.diff(d)
    neg = int(np.sum(inc < 0))
    if neg and report is not None:
        report["negative_distance_increments"] = report.get("negative_distance_increments", 0) + neg
    speed = np.empty_like(d)
    speed[1:] = np.maximum(inc, 0.0) / dt
    speed[0] = speed[1]
    return speed


@dataclass
class VendorSchema:
    vendor: str
    period_s: float
    timestamp_column: str
    # raw column -> (raw unit, canonical channel or HR_TARGET)
    columns: dict[str, tuple[str, str]]
    derive_speed: bool = False  # paper-pinned for FitRec: derived speed is canonical

    def __post_init__(self):
        if self.period_s <= 0:
            raise ValueError("sampling period must be positive")


def default_schemas() -> dict[str, VendorSchema]:
    """Built-in vendor schemas mirroring the published channel/unit comparison
    table; Huawei recordings arrive at 5 s, the others at 1 s."""
    return {
        "fitrec": VendorSchema(
            vendor="fitrec", period_s=1.0, timestamp_column="timestamp", derive_speed=True,
            columns={
                "distance": ("mi", "distance"),
                "speed": ("mph", "raw_speed"),
                "speed_kmh": ("km/h", "raw_speed"),
                "longitude": ("deg", "longitude"),
                "latitude": ("deg", "latitude"),
                "altitude": ("m", "altitude"),
                "heart_rate": ("bpm", HR_TARGET),
            },
        ),
        "coros": VendorSchema(
            vendor="coros", period_s=1.0, timestamp_column="timestamp",
            columns={
                "distance": ("m", "distance"),
                "speed": ("m/s", "speed"),
                "enhanced_speed": ("m/s", "enhanced_speed"),
                "effort_pace": ("m/s", "effort_pace"),
                "longitude": ("deg", "longitude"),
                "latitude": ("deg", "latitude"),
                "altitude": ("m", "altitude"),
                "power": ("W", "power"),
                "accumulated_power": ("W", "accumulated_power"),
                "cadence": ("spm", "cadence"),
                "stride_length": ("mm", "stride_length"),
                "stroke_rate": ("spm", "stroke_rate"),
                "heart_rate": ("bpm", HR_TARGET),
            },
        ),
        "garmin": VendorSchema(
            vendor="garmin", period_s=1.0, timestamp_column="timestamp",
            columns={
                "distance": ("m", "distance"),
                "speed": ("m/s", "speed"),
                "enhanced_speed": ("m/s", "enhanced_speed"),
                "grade_adjusted_speed": ("m/s", "grade_adjusted_speed"),
                "longitude": ("deg", "longitude"),
                "latitude": ("deg", "latitude"),
                "altitude": ("m", "altitude"),
                "wrist_heart_rate": ("bpm", "wrist_heart_rate"),
                "power": ("W", "power"),
                "accumulated_power": ("W", "accumulated_power"),
                "body_battery": ("1", "body_battery"),
                "cadence": ("spm", "cadence"),
                "stride_length": ("mm", "stride_length"),
                "vertical_oscillation": ("mm", "vertical_oscillation"),
                "stance_time": ("ms", "stance_time"),
                "fractional_cadence": ("1", "fractional_cadence"),
                "vertical_ratio": ("percent", "vertical_ratio"),
                "cycle_length": ("m", "cycle_length"),
                "performance_condition": ("1", "performance_condition"),
                "stroke_rate": ("spm", "stroke_rate"),
                "total_swim_cycles": ("1", "total_swim_cycles"),
                "temperature": ("C", "temperature"),
                "heart_rate": ("bpm", HR_TARGET),
            },
        ),
        "huawei": VendorSchema(
            vendor="huawei", period_s=5.0, timestamp_column="timestamp",
            columns={
                "distance": ("m", "distance"),
                "distance_mi": ("mi", "distance"),
                "speed": ("m/s", "speed"),
                "speed_mph": ("mph", "speed"),
                "longitude": ("deg", "longitude"),
                "latitude": ("deg", "latitude"),
                "altitude": ("m", "altitude"),
                "altitude_ft": ("ft", "altitude"),
                "power": ("W", "power"),
                "estimated_power": ("W", "estimated_power"),
                "torque": ("Nm", "torque"),
                "calories": ("kcal", "calories"),
                "calories_kj": ("kJ", "calories"),
                "vo2max": ("ml/kg/min", "vo2max"),
                "stress": ("1", "stress"),
                "cadence": ("spm", "cadence"),
                "vertical_oscillation": ("mm", "vertical_oscillation"),
                "stance_time": ("ms", "stance_time"),
                "cycle_length": ("m", "cycle_length"),
                "leg_spring_stiffness": ("kN/m", "leg_spring_stiffness"),
                "form_power": ("W", "form_power"),
                "temperature": ("C", "temperature"),
                "temperature_f": ("F", "temperature"),
                "steps": ("1", "steps"),
                "heart_rate": ("bpm", HR_TARGET),
            },
        ),
    }


def read_schema(path) -> VendorSchema:
    """Schema file: `# key = value` lines (vendor, period_s, timestamp_column,
    derive_speed) then CSV rows raw_column,raw_unit,canonical."""
    meta: dict[str, str] = {}
    columns: dict[str, tuple[str, str]] = {}
    with open(path) as fh:
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                meta[k.strip()] = v.strip()
            else:
                rows.append(line)
        for rec in csv.reader(rows):
            if rec[0] == "raw_column":
                continue
            columns[rec[0]] = (rec[1], rec[2])
    return VendorSchema(
        vendor=meta.get("vendor", "unknown"),
        period_s=float(meta.get("period_s", "1")),
        timestamp_column=meta.get("timestamp_column", "timestamp"),
        columns=columns,
        derive_speed=meta.get("derive_speed", "false").lower() in ("1", "true", "yes"),
    )


def write_schema(path, schema: VendorSchema) -> None:
    with open(path, "w") as fh:
        fh.write(f"# vendor = {schema.vendor}\n")
        fh.write(f"# period_s = {schema.period_s:g}\n")
        fh.write(f"# timestamp_column = {schema.timestamp_column}\n")
        fh.write(f"# derive_speed = {str(schema.derive_speed).lower()}\n")
        fh.write("raw_column,raw_unit,canonical\n")
        for raw, (unit, canon) in schema.columns.items():
            fh.write(f"{raw},{unit},{canon}\n")


@dataclass
class RawSession:
    vendor: str
    user_id: str
    sport: str
    gender: str
    start_time: float
    timestamps: np.ndarray
    columns: dict[str, np.ndarray]  # raw column name -> values

    def __post_init__(self):
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("raw session timestamps must be strictly increasing")


def read_session_file(path) -> RawSession:
    meta: dict[str, str] = {}
    header: list[str] | None = None
    data: list[list[str]] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                meta[k.strip()] = v.strip()
            elif header is None:
                header = next(csv.reader([line]))
            else:
                data.append(next(csv.reader([line])))
    if header is None or not data:
        raise ValueError(f"{path}: no tabular data")
    arr = np.asarray(data, float)
    cols = {name: arr[:, j] for j, name in enumerate(header)}
    ts_col = meta.get("timestamp_column", "timestamp")
    if ts_col not in cols:
        raise ValueError(f"{path}: missing timestamp column {ts_col!r}")
    ts = cols.pop(ts_col)
    return RawSession(
        vendor=meta.get("vendor", "unknown"),
        user_id=meta.get("user_id", Path(path).stem),
        sport=meta.get("sport", "unknown"),
        gender=meta.get("gender", ""),
        start_time=float(ts[0]),
        timestamps=ts,
        columns=cols,
    )


def _split_on_gaps(timestamps: np.ndarray, max_gap: float = GAP_SPLIT_SECONDS) -> list[np.ndarray]:
    """Index blocks separated wherever the timestamp jump exceeds max_gap."""
    cuts = np.flatnonzero(np.diff(timestamps) > max_gap) + 1
    return [idx for idx in np.split(np.arange(len(timestamps)), cuts) if len(idx) >= 2]


def normalize_session(raw: RawSession, schema: VendorSchema, registry: ChannelRegistry,
                      report: dict | None = None) -> list[Session]:
    """Alias, convert, and resample one raw recording into canonical sessions
    (one per >30 s-gap block). Unmapped columns are skipped with a warning;
    a missing heart-rate stream is an error."""
    report = report if report is not None else {}
    mapped: dict[str, np.ndarray] = {}
    for col, values in raw.columns.items():
        if col not in schema.columns:
            warnings.warn(f"column {col!r} not in {schema.vendor} schema; skipped")
            report["columns_skipped"] = report.get("columns_skipped", 0) + 1
            continue
        unit, canon = schema.columns[col]
        if canon == HR_TARGET:
            mapped[HR_TARGET] = convert_units(values, unit, "bpm")
            continue
        converted = convert_units(values, unit, registry.units[canon])
        if canon in mapped:
            report["duplicate_channel_columns"] = report.get("duplicate_channel_columns", 0) + 1
        mapped[canon] = converted
    if HR_TARGET not in mapped:
        raise ValueError(f"user {raw.user_id}: no heart-rate column; target required")

    sessions = []
    for block in _split_on_gaps(raw.timestamps):
        t = raw.timestamps[block]
        span = t[-1] - t[0]
        if span < 1.0:
            continue
        channels = np.zeros((registry.dim, int(np.floor(span)) + 1))
        observed = np.zeros(registry.dim, bool)
        hr = None
        for canon, values in mapped.items():
            _, res = resample_uniform(t, values[block], 1.0)
            if canon == HR_TARGET:
                hr = res
                continue
            d = registry.index(canon)
            channels[d] = res
            observed[d] = True

        # canonical speed precedence: enhanced > raw > derived-from-distance
        if "speed" in registry.units:
            si = registry.index("speed")
            want_derived = schema.derive_speed and "distance" in mapped
            if want_derived:
                channels[si] = derive_speed(channels[registry.index("distance")], 1.0, report)
                observed[si] = True
                report["speed_source"] = "derived"
            elif not observed[si]:
                if "enhanced_speed" in registry.units and observed[registry.index("enhanced_speed")]:
                    channels[si] = channels[registry.index("enhanced_speed")]
                    observed[si] = True
                    report["speed_source"] = "enhanced"
                elif "distance" in mapped:
                    channels[si] = derive_speed(channels[registry.index("distance")], 1.0, report)
                    observed[si] = True
                    report["speed_source"] = "derived"

        sessions.append(
            Session(
                attrs=StaticAttributes(raw.user_id, raw.sport, schema.vendor, raw.gender),
                start_time=float(t[0]),
                channels=channels,
                observed=observed,
                hr=hr,
            )
        )
    if report is not None:
        report["sessions"] = report.get("sessions", 0) + len(sessions)
    return sessions


def ingest_directory(in_dir, schema: VendorSchema, registry: ChannelRegistry | None = None,
                     window: int = 450, out_path=None) -> tuple[list[Segment], dict]:
    """Normalize every session file in a directory; returns segments + summary
    report. Files are processed in sorted order for a deterministic store."""
    registry = registry or wearable_registry()
    report: dict = {"files": 0, "segments": 0, "per_sport": {}}
    segments: list[Segment] = []
    files = sorted(Path(in_dir).glob("*.csv"))
    if not files:
        raise ValueError(f"no session files (*.csv) found in {in_dir}")
    for f in files:
        raw = read_session_file(f)
        report["files"] += 1
        for k, sess in enumerate(normalize_session(raw, schema, registry, report)):
            sid = f"{raw.user_id}-{f.stem}-{k}"
            segs = window_session(sess, window, sid, report)
            segments.extend(segs)
            report["segments"] += len(segs)
            sport_counts = report["per_sport"]
            sport_counts[sess.attrs.sport] = sport_counts.get(sess.attrs.sport, 0) + len(segs)
    if out_path is not None:
        SegmentStore.write(out_path, segments, registry, window)
        with open(str(out_path) + ".report.json", "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
    return segments, report
