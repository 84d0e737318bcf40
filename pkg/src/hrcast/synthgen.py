"""Synthetic corpus generator: heterogeneous users and devices with known
first-order heart-rate dynamics, so learning claims are checkable against an
oracle that integrates the true equations.

Dynamics per 1 s Euler step: HR' = HR + k·(demand − HR) + drift, with
demand = hr_rest + gain·speed + 40·max(grade, 0) clipped to hr_max. Observed
heart rate adds Gaussian measurement noise (σ = 2 bpm by default).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datamodel import (
    ChannelRegistry,
    Segment,
    SegmentStore,
    StaticAttributes,
    synthetic_registry,
    window_session,
)
from .ingest import HR_TARGET, RawSession, VendorSchema, normalize_session

HR_NOISE_SIGMA = 2.0
GRADE_GAIN = 40.0  # bpm per unit uphill grade in the demand function


@dataclass
class UserProfile:
    hr_rest: float
    hr_max: float
    k: float  # response rate, 1/s
    drift: float  # bpm/s of sustained effort
    sport_gain: dict[str, float]  # bpm per m/s

    def __post_init__(self):
        if not (20.0 <= self.hr_rest < self.hr_max <= 220.0):
            raise ValueError(f"need 20 <= hr_rest < hr_max <= 220, got {self.hr_rest}, {self.hr_max}")
        if not (0.0 < self.k <= 1.0):
            raise ValueError(f"response rate must be in (0, 1], got {self.k}")


@dataclass
class DeviceTemplate:
    name: str
    channels: tuple[str, ...]  # canonical channels the device records
    period_s: float
    noise: dict[str, float] = field(default_factory=dict)  # additive sigma per channel

    def __post_init__(self):
        for required in ("speed", "altitude"):
            if required not in self.channels:
                raise ValueError(f"device template must record {required!r}")


def default_templates() -> list[DeviceTemplate]:
    return [
        DeviceTemplate("strider", ("speed", "altitude", "distance", "cadence"), 1.0,
                       {"speed": 0.05, "altitude": 0.3, "cadence": 2.0}),
        DeviceTemplate("pulsar", ("speed", "altitude", "power", "temperature"), 5.0,
                       {"speed": 0.08, "altitude": 0.5, "power": 8.0, "temperature": 0.2}),
    ]


def read_templates(path) -> list[DeviceTemplate]:
    with open(path) as fh:
        data = json.load(fh)
    return [DeviceTemplate(d["name"], tuple(d["channels"]), float(d["period_s"]), d.get("noise", {}))
            for d in data]


def write_templates(path, templates: list[DeviceTemplate]) -> None:
    with open(path, "w") as fh:
        json.dump([{"name": t.name, "channels": list(t.channels), "period_s": t.period_s,
                    "noise": t.noise} for t in templates], fh, indent=1)


def demand_curve(profile: UserProfile, sport: str, speed: np.ndarray, grade: np.ndarray) -> np.ndarray:
    gain = profile.sport_gain[sport]
    d = profile.hr_rest + gain * speed + GRADE_GAIN * np.maximum(grade, 0.0)
    return np.clip(d, profile.hr_rest, profile.hr_max)


def integrate_hr(profile: UserProfile, demand: np.ndarray, hr0: float) -> np.ndarray:
    """Explicit-Euler first-order response toward demand, clipped to the
    physiological band."""
    hr = np.empty_like(demand)
    h = hr0
    for t in range(demand.shape[0]):
        h = h + profile.k * (demand[t] - h) + profile.drift
        h = min(max(h, profile.hr_rest), profile.hr_max)
        hr[t] = h
    return hr


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    return np.convolve(np.pad(x, (width // 2, width - 1 - width // 2), mode="edge"), kernel, mode="valid")


def _intensity_path(rng: np.random.Generator, duration: int, base_speed: float) -> np.ndarray:
    """Piecewise-constant target speeds (30–120 s holds) smoothed to ~15 s ramps."""
    speed = np.empty(duration)
    t = 0
    while t < duration:
        hold = int(rng.integers(30, 121))
        level = max(0.0, base_speed * rng.uniform(0.55, 1.45))
        speed[t : t + hold] = level
        t += hold
    return np.maximum(_smooth(speed, 15), 0.0)


SPORT_BASE_SPEED = {"run": 3.2, "bike": 7.5}


def simulate_session(profile: UserProfile, device: DeviceTemplate, sport: str,
                     duration: int, seed, start_time: float = 0.0) -> RawSession:
    """One synthetic recording sampled at the device's native period."""
    rng = np.random.default_rng(seed)
    base = SPORT_BASE_SPEED.get(sport, 3.0)
    speed = _intensity_path(rng, duration, base)
    # gentle terrain: smoothed random-walk altitude; grade = rise over ground run
    alt = _smooth(np.cumsum(rng.normal(0.0, 0.25, duration)), 45) + rng.uniform(0.0, 400.0)
    run = np.maximum(speed, 0.5)
    grade = np.empty(duration)
    grade[1:] = np.diff(alt) / run[1:]
    grade[0] = grade[1]
    grade = np.clip(grade, -0.3, 0.3)

    demand = demand_curve(profile, sport, speed, grade)
    hr_true = integrate_hr(profile, demand, hr0=profile.hr_rest + rng.uniform(0.0, 10.0))
    hr_obs = hr_true + rng.normal(0.0, HR_NOISE_SIGMA, duration)

    full = {
        "speed": speed,
        "altitude": alt,
        "distance": np.cumsum(speed),
        "cadence": np.clip(55.0 + 28.0 * speed, 0.0, None),
        "power": np.clip(22.0 * speed + 180.0 * np.maximum(grade, 0.0) * speed, 0.0, None),
        "temperature": np.full(duration, rng.uniform(8.0, 28.0)),
    }
    step = int(round(device.period_s))
    idx = np.arange(0, duration, step)
    columns = {}
    for ch in device.channels:
        sig = full[ch][idx]
        sigma = device.noise.get(ch, 0.0)
        if sigma > 0:
            sig = sig + rng.normal(0.0, sigma, sig.shape)
        if ch in ("speed", "cadence", "power", "distance"):
            sig = np.maximum(sig, 0.0)
        columns[ch] = sig
    columns["heart_rate"] = hr_obs[idx]
    return RawSession(
        vendor=device.name,
        user_id="",  # filled by the corpus generator
        sport=sport,
        gender="",
        start_time=start_time,
        timestamps=start_time + idx.astype(float),
        columns=columns,
    )


def _template_schema(device: DeviceTemplate, registry: ChannelRegistry) -> VendorSchema:
    cols = {ch: (registry.units[ch], ch) for ch in device.channels}
    cols["heart_rate"] = ("bpm", HR_TARGET)
    return VendorSchema(vendor=device.name, period_s=device.period_s,
                        timestamp_column="timestamp", columns=cols)


def sample_profile(rng: np.random.Generator, sports: list[str]) -> UserProfile:
    return UserProfile(
        hr_rest=rng.uniform(45.0, 75.0),
        hr_max=rng.uniform(170.0, 205.0),
        k=rng.uniform(0.02, 0.12),
        drift=rng.uniform(0.0, 0.006),
        sport_gain={s: rng.uniform(7.0, 14.0) if s == "run" else rng.uniform(3.5, 7.0) for s in sports},
    )


def generate_corpus(n_users: int, sessions_per_user: int, templates: list[DeviceTemplate] | None = None,
                    sports: list[str] | None = None, seed: int = 1, window: int = 450,
                    out_path=None, registry: ChannelRegistry | None = None,
                    duration_range: tuple[int, int] = (460, 700),
                    ) -> tuple[list[Segment], dict[str, UserProfile]]:
    """Users get distinct profiles and a single device each; sessions are spaced
    hours-to-days apart. Returns segments and the ground-truth profiles.

    duration_range is in seconds; resampling onto the canonical 1 s grid means
    every session spans at least one full window on every device."""
    templates = templates or default_templates()
    sports = sports or ["run", "bike"]
    registry = registry or synthetic_registry()
    profiles: dict[str, UserProfile] = {}
    segments: list[Segment] = []
    base_epoch = 1_600_000_000.0
    for u in range(n_users):
        user_rng = np.random.default_rng(np.random.SeedSequence([seed, u]))
        user = f"u{u:03d}"
        profiles[user] = sample_profile(user_rng, sports)
        device = templates[u % len(templates)]
        schema = _template_schema(device, registry)
        t = base_epoch + u * 86_400.0
        for s in range(sessions_per_user):
            sess_seed = np.random.SeedSequence([seed, u, s])
            srng = np.random.default_rng(sess_seed)
            duration = int(srng.integers(duration_range[0], duration_range[1] + 1))
            sport = sports[int(srng.integers(len(sports)))]
            raw = simulate_session(profiles[user], device, sport, duration,
                                   np.random.SeedSequence([seed, u, s, 7]), start_time=t)
            raw.user_id = user
            for j, sess in enumerate(normalize_session(raw, schema, registry)):
                segs = window_session(sess, window, session_id=f"{user}-s{s:04d}-{j}")
                segments.extend(segs)
            t += duration + float(srng.uniform(4.0, 72.0)) * 3600.0
    if out_path is not None:
        SegmentStore.write(out_path, segments, registry, window,
                           extra={"generator": {"seed": seed, "n_users": n_users,
                                                "sessions_per_user": sessions_per_user}})
        save_profiles(str(out_path) + ".profiles.json", profiles)
    return segments, profiles


def save_profiles(path, profiles: dict[str, UserProfile]) -> None:
    with open(path, "w") as fh:
        json.dump({u: {"hr_rest": p.hr_rest, "hr_max": p.hr_max, "k": p.k,
                       "drift": p.drift, "sport_gain": p.sport_gain}
                   for u, p in profiles.items()}, fh, indent=1, sort_keys=True)


def load_profiles(path) -> dict[str, UserProfile]:
    with open(path) as fh:
        data = json.load(fh)
    return {u: UserProfile(d["hr_rest"], d["hr_max"], d["k"], d["drift"], d["sport_gain"])
            for u, d in data.items()}


def oracle_predict(profile: UserProfile, segment: Segment, registry: ChannelRegistry) -> np.ndarray:
    """Integrate the true dynamics from the segment's observed intensity; the
    floor any learned model is measured against."""
    speed = segment.channels[registry.index("speed")]
    alt = segment.channels[registry.index("altitude")]
    run = np.maximum(speed, 0.5)
    grade = np.empty_like(speed)
    grade[1:] = np.diff(alt) / run[1:]
    grade[0] = grade[1]
    grade = np.clip(grade, -0.3, 0.3)
    demand = demand_curve(profile, segment.attrs.sport, speed, grade)
    return integrate_hr(profile, demand, hr0=float(segment.hr[0]))
