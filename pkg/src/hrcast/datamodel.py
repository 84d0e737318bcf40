"""Canonical data representations: the channel registry, sessions, fixed-length
segments, histories, training examples, splits, normalization, and the
line-delimited segment store with its manifest sidecar.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
DEFAULT_WINDOW = 450
DEFAULT_HISTORY_DEPTH = 10
HR_MIN, HR_MAX = 20.0, 250.0

# beats-per-minute sequences are the prediction target and live outside the
# channel registry; these channel lists cover the wearable-export schema.
WEARABLE_CHANNELS = [
    ("distance", "m"),
    ("speed", "m/s"),
    ("raw_speed", "m/s"),  # original speed column when a derived speed replaces it
    ("enhanced_speed", "m/s"),
    ("grade_adjusted_speed", "m/s"),
    ("effort_pace", "m/s"),
    ("longitude", "deg"),
    ("latitude", "deg"),
    ("altitude", "m"),
    ("wrist_heart_rate", "bpm"),
    ("power", "W"),
    ("accumulated_power", "W"),
    ("estimated_power", "W"),
    ("torque", "Nm"),
    ("calories", "kcal"),
    ("vo2max", "ml/kg/min"),
    ("body_battery", "1"),
    ("stress", "1"),
    ("cadence", "spm"),
    ("stride_length", "mm"),
    ("vertical_oscillation", "mm"),
    ("stance_time", "ms"),
    ("fractional_cadence", "1"),
    ("vertical_ratio", "percent"),
    ("cycle_length", "m"),
    ("leg_spring_stiffness", "kN/m"),
    ("performance_condition", "1"),
    ("form_power", "W"),
    ("stroke_rate", "spm"),
    ("total_swim_cycles", "1"),
    ("temperature", "C"),
    ("steps", "1"),
]

SYNTHETIC_CHANNELS = [
    ("speed", "m/s"),
    ("altitude", "m"),
    ("distance", "m"),
    ("cadence", "spm"),
    ("power", "W"),
    ("temperature", "C"),
]

MAIN_CHANNELS = ("speed", "altitude")


class ChannelRegistry:
    """Ordered canonical channel space: names, units, and protected 'main' set."""

    def __init__(self, channels: list[tuple[str, str]], main: tuple[str, ...] = MAIN_CHANNELS,
                 speed_precedence: str = "enhanced>raw>derived"):
        names = [c for c, _ in channels]
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        self.names: list[str] = names
        self.units: dict[str, str] = dict(channels)
        self.main: tuple[str, ...] = tuple(m for m in main if m in self.units)
        self.speed_precedence = speed_precedence
        self._index = {n: i for i, n in enumerate(names)}

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def main_indices(self) -> list[int]:
        return [self._index[m] for m in self.main]

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "units": [self.units[n] for n in self.names],
            "main": list(self.main),
            "speed_precedence": self.speed_precedence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelRegistry":
        return cls(list(zip(d["names"], d["units"])), tuple(d["main"]), d.get("speed_precedence", "enhanced>raw>derived"))


def wearable_registry() -> ChannelRegistry:
    return ChannelRegistry(WEARABLE_CHANNELS)


def synthetic_registry() -> ChannelRegistry:
    return ChannelRegistry(SYNTHETIC_CHANNELS)


class Vocabulary:
    """Dense string→id mapping; index len(names) is reserved for unknowns."""

    def __init__(self, names: list[str]):
        self.names = list(names)
        self._ids = {n: i for i, n in enumerate(self.names)}

    @classmethod
    def build(cls, values) -> "Vocabulary":
        return cls(sorted(set(values)))

    def __len__(self):
        return len(self.names)

    @property
    def unknown_id(self) -> int:
        return len(self.names)

    def encode(self, name: str) -> int:
        return self._ids.get(name, self.unknown_id)


@dataclass(frozen=True)
class StaticAttributes:
    user_id: str
    sport: str
    device: str
    gender: str = ""


@dataclass
class Session:
    """One continuous recording on the uniform 1 s grid, in canonical units."""

    attrs: StaticAttributes
    start_time: float
    channels: np.ndarray  # (D, L)
    observed: np.ndarray  # (D,) bool
    hr: np.ndarray  # (L,)
    dt: float = 1.0

    def __post_init__(self):
        if self.channels.shape[1] != self.hr.shape[0]:
            raise ValueError("channel and hr lengths differ")


@dataclass
class Segment:
    channels: np.ndarray  # (D, T), zero where unobserved
    observed: np.ndarray  # (D,) bool
    hr: np.ndarray | None  # (T,); None for a planned workout (prediction input)
    attrs: StaticAttributes
    gap_seconds: float
    session_id: str
    segment_index: int
    start_time: float
    dt: float = 1.0

    @property
    def T(self) -> int:
        return self.channels.shape[1]


@dataclass
class TrainingExample:
    current: Segment
    history: list[Segment]
    group: str

    @property
    def example_id(self) -> str:
        return f"{self.current.session_id}#{self.current.segment_index}"


def group_label(attrs: StaticAttributes, mode: str = "user_sport") -> str:
    if mode == "user":
        return attrs.user_id
    if mode == "sport":
        return attrs.sport
    if mode == "user_sport":
        return f"{attrs.user_id}|{attrs.sport}"
    raise ValueError(f"unknown grouping mode {mode!r} (expected user, sport, or user_sport)")


def window_session(session: Session, window: int = DEFAULT_WINDOW, session_id: str = "",
                   report: dict | None = None) -> list[Segment]:
    """Cut a session into ⌊L/window⌋ non-overlapping segments; remainder dropped.

    Heart rate outside [20, 250] bpm is clipped (counted in `report`). Channel
    rows with observed=false are forced to exact zeros.
    """
    L = session.hr.shape[0]
    n = L // window
    if report is not None:
        report["samples_dropped"] = report.get("samples_dropped", 0) + (L - n * window)
    out = []
    for i in range(n):
        sl = slice(i * window, (i + 1) * window)
        hr = np.array(session.hr[sl], dtype=np.float64)
        bad = int(np.sum((hr < HR_MIN) | (hr > HR_MAX)))
        if bad and report is not None:
            report["hr_clipped"] = report.get("hr_clipped", 0) + bad
        hr = np.clip(hr, HR_MIN, HR_MAX)
        ch = np.array(session.channels[:, sl], dtype=np.float64)
        ch[~session.observed] = 0.0
        out.append(
            Segment(
                channels=ch,
                observed=session.observed.copy(),
                hr=hr,
                attrs=session.attrs,
                gap_seconds=0.0,  # filled against the user timeline by build_examples
                session_id=session_id,
                segment_index=i,
                start_time=session.start_time + i * window * session.dt,
                dt=session.dt,
            )
        )
    return out


def fill_gaps(segments: list[Segment]) -> None:
    """Set each segment's gap to the idle time since the same user's previous
    segment ended (0 for a user's first segment; contiguous windows → 0)."""
    by_user: dict[str, list[Segment]] = {}
    for s in segments:
        by_user.setdefault(s.attrs.user_id, []).append(s)
    for user_segs in by_user.values():
        user_segs.sort(key=lambda s: (s.start_time, s.session_id, s.segment_index))
        prev_end = None
        for s in user_segs:
            s.gap_seconds = 0.0 if prev_end is None else max(0.0, s.start_time - prev_end)
            prev_end = s.start_time + s.T * s.dt


def build_example(timeline: list[Segment], index: int, n_max: int = DEFAULT_HISTORY_DEPTH,
                  group_mode: str = "user_sport") -> TrainingExample:
    """Example i of one user's chronologically ordered segment list; history is
    the ≤ n_max segments immediately preceding it."""
    if index < 0:
        raise ValueError("index must be nonnegative")
    current = timeline[index]
    history = timeline[max(0, index - n_max) : index]
    return TrainingExample(current=current, history=list(history), group=group_label(current.attrs, group_mode))


def build_examples(segments: list[Segment], n_max: int = DEFAULT_HISTORY_DEPTH,
                   group_mode: str = "user_sport") -> list[TrainingExample]:
    fill_gaps(segments)
    by_user: dict[str, list[Segment]] = {}
    for s in segments:
        by_user.setdefault(s.attrs.user_id, []).append(s)
    examples = []
    for user in sorted(by_user):
        timeline = sorted(by_user[user], key=lambda s: (s.start_time, s.session_id, s.segment_index))
        for i in range(len(timeline)):
            examples.append(build_example(timeline, i, n_max, group_mode))
    return examples


def _largest_remainder(n: int, ratios) -> list[int]:
    exact = [r * n for r in ratios]
    base = [math.floor(e) for e in exact]
    for i, b in enumerate(base):  # guard against 7.999999 floor artifacts
        if exact[i] - b > 1 - 1e-9:
            base[i] = b + 1
    left = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def split_corpus(examples: list, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then a disjoint exhaustive partition with exact sizes by
    largest-remainder rounding (9 examples at 80/10/10 → 7/1/1)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(examples)
    perm = np.random.default_rng(seed).permutation(n)
    sizes = _largest_remainder(n, ratios)
    out, at = [], 0
    for s in sizes:
        out.append([examples[i] for i in perm[at : at + s]])
        at += s
    return tuple(out)


def split_corpus_by_session(examples: list, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Session-level variant: all segments of a session land in one part."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    sessions = sorted({e.current.session_id for e in examples})
    perm = np.random.default_rng(seed).permutation(len(sessions))
    sizes = _largest_remainder(len(sessions), ratios)
    parts, at = [], 0
    for s in sizes:
        chosen = {sessions[i] for i in perm[at : at + s]}
        parts.append([e for e in examples if e.current.session_id in chosen])
        at += s
    return tuple(parts)


@dataclass
class NormalizationStats:
    channel_mean: np.ndarray  # (D,)
    channel_std: np.ndarray  # (D,)
    hr_mean: float
    hr_std: float

    def to_dict(self) -> dict:
        return {
            "channel_mean": [float(v) for v in self.channel_mean],
            "channel_std": [float(v) for v in self.channel_std],
            "hr_mean": float(self.hr_mean),
            "hr_std": float(self.hr_std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.asarray(d["channel_mean"], float), np.asarray(d["channel_std"], float),
                   float(d["hr_mean"]), float(d["hr_std"]))


def compute_normalization(train_examples: list[TrainingExample], dim: int) -> NormalizationStats:
    """Per-channel z-score statistics over the training split's current
    segments, using observed entries only."""
    sums = np.zeros(dim)
    sqs = np.zeros(dim)
    counts = np.zeros(dim)
    hr_vals = []
    for ex in train_examples:
        seg = ex.current
        obs = seg.observed
        sums[obs] += seg.channels[obs].sum(axis=1)
        sqs[obs] += (seg.channels[obs] ** 2).sum(axis=1)
        counts[obs] += seg.T
        hr_vals.append(seg.hr)
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    var = np.where(counts > 0, sqs / np.maximum(counts, 1) - mean**2, 1.0)
    std = np.sqrt(np.maximum(var, 0.0))
    std = np.where(std < 1e-8, 1.0, std)
    hr = np.concatenate(hr_vals) if hr_vals else np.array([0.0])
    hr_std = float(hr.std())
    return NormalizationStats(mean, std, float(hr.mean()), hr_std if hr_std > 1e-8 else 1.0)


def normalize_channels(channels: np.ndarray, observed: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Z-score observed rows; unobserved rows stay exactly zero."""
    out = np.zeros_like(channels)
    obs = np.asarray(observed, bool)
    out[obs] = (channels[obs] - stats.channel_mean[obs, None]) / stats.channel_std[obs, None]
    return out


def normalize_hr(hr: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return (hr - stats.hr_mean) / stats.hr_std


def denormalize_hr(z: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return z * stats.hr_std + stats.hr_mean


# ---------------------------------------------------------------------------
# segment store


def _round6(v: float) -> float:
    return float(f"{v:.6g}")


class SegmentStore:
    """Line-delimited segment records + JSON manifest (registry, vocabularies,
    normalization statistics). Floats are written at 6 significant digits;
    this formatting is pinned by the manifest's format version."""

    def __init__(self, segments: list[Segment], registry: ChannelRegistry,
                 manifest: dict):
        self.segments = segments
        self.registry = registry
        self.manifest = manifest
        self.vocabs = {k: Vocabulary(v) for k, v in manifest["vocab"].items()}

    @property
    def window(self) -> int:
        return int(self.manifest["window"])

    @property
    def normalization(self) -> NormalizationStats | None:
        nz = self.manifest.get("normalization")
        return NormalizationStats.from_dict(nz) if nz else None

    @staticmethod
    def manifest_path(store_path) -> Path:
        return Path(str(store_path) + ".manifest.json")

    @classmethod
    def write(cls, path, segments: list[Segment], registry: ChannelRegistry,
              window: int, extra: dict | None = None) -> "SegmentStore":
        path = Path(path)
        segments = sorted(segments, key=lambda s: (s.attrs.user_id, s.start_time, s.session_id, s.segment_index))
        vocab = {
            "user": sorted({s.attrs.user_id for s in segments}),
            "sport": sorted({s.attrs.sport for s in segments}),
            "gender": sorted({s.attrs.gender for s in segments}),
            "device": sorted({s.attrs.device for s in segments}),
        }
        manifest = {
            "format_version": FORMAT_VERSION,
            "window": window,
            "dt_s": 1.0,
            "registry": registry.to_dict(),
            "vocab": vocab,
            "normalization": None,
            "counts": {"segments": len(segments), "users": len(vocab["user"]),
                       "sessions": len({s.session_id for s in segments})},
        }
        if extra:
            manifest.update(extra)
        with open(path, "w") as fh:
            for s in segments:
                rec = {
                    "user_id": s.attrs.user_id,
                    "session_id": s.session_id,
                    "segment_index": s.segment_index,
                    "sport": s.attrs.sport,
                    "device": s.attrs.device,
                    "gender": s.attrs.gender,
                    "start_time_unix_s": s.start_time,
                    "dt_s": s.dt,
                    "observed": [bool(o) for o in s.observed],
                    "channels": [[_round6(v) for v in row] for row in s.channels],
                    "hr": [_round6(v) for v in s.hr],
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        with open(cls.manifest_path(path), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        return cls(segments, registry, manifest)

    @classmethod
    def load(cls, path) -> "SegmentStore":
        path = Path(path)
        with open(cls.manifest_path(path)) as fh:
            manifest = json.load(fh)
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported store format version {manifest.get('format_version')}")
        registry = ChannelRegistry.from_dict(manifest["registry"])
        segments = []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                observed = np.asarray(rec["observed"], bool)
                channels = np.asarray(rec["channels"], np.float64)
                if channels.shape[0] != registry.dim:
                    raise ValueError("record channel count does not match registry")
                if np.any(channels[~observed] != 0.0):
                    raise ValueError("unobserved channel row carries nonzero values")
                segments.append(
                    Segment(
                        channels=channels,
                        observed=observed,
                        hr=np.asarray(rec["hr"], np.float64),
                        attrs=StaticAttributes(rec["user_id"], rec["sport"], rec["device"], rec.get("gender", "")),
                        gap_seconds=0.0,
                        session_id=rec["session_id"],
                        segment_index=int(rec["segment_index"]),
                        start_time=float(rec["start_time_unix_s"]),
                        dt=float(rec["dt_s"]),
                    )
                )
        store = cls(segments, registry, manifest)
        fill_gaps(segments)
        return store

    def save_normalization(self, path, stats: NormalizationStats) -> None:
        self.manifest["normalization"] = stats.to_dict()
        with open(self.manifest_path(Path(path)), "w") as fh:
            json.dump(self.manifest, fh, indent=1, sort_keys=True)

    def examples(self, n_max: int = DEFAULT_HISTORY_DEPTH, group_mode: str = "user_sport") -> list[TrainingExample]:
        return build_examples(self.segments, n_max, group_mode)
