"""Player-state records, semantic labels, encoding, windows and trace files.

A :class:`FeatureSeries` is stored column-wise (one numpy array per field,
categoricals as integer codes into fixed vocabularies) because missions run to
thousands of records. :class:`FeatureRecord` is the row view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from enum import IntEnum
from typing import Iterable, Iterator, Sequence

import numpy as np


class SemanticLabel(IntEnum):
    ST = 0  # stationary
    NV = 1  # navigate (corridor)
    SR = 2  # search (room)
    OD = 3  # open door
    TV = 4  # transport victim
    PM = 5  # place marker
    RM = 6  # remove marker
    TU = 7  # tool used
    RA = 8  # role specific action
    IE = 9  # item equipped
    AC = 10  # audio communication


N_LABELS = len(SemanticLabel)
LABEL_NAMES = tuple(l.name for l in SemanticLabel)

LOCATIONS = ("room", "corridor", "treatment-area", "other")
ITEMS = ("none", "medkit", "hammer", "stretcher", "signal", "marker")
ROLES = ("medic", "engineer", "transporter")
TOOLS = ("none", "medkit", "hammer", "stretcher", "signal")
ROLE_TOOL = {"medic": "medkit", "engineer": "hammer", "transporter": "signal"}

PROXIMITY_CAP = 100.0
MOVING = 0.1  # blocks/s; at or below this a player counts as stationary

# (trace key, attribute, vocabulary or None for numeric), in feature-table order
FEATURES: tuple[tuple[str, str, tuple[str, ...] | None], ...] = (
    ("CurrentLocation", "current_location", LOCATIONS),
    ("CurrentVelocity", "current_velocity", None),
    ("CriticalVictimsTriaged", "critical_victims_triaged", None),
    ("CriticalVictimsSaved", "critical_victims_saved", None),
    ("DistanceTraveled", "distance_traveled", None),
    ("ItemEquipped", "item_equipped", ITEMS),
    ("MissionTime", "mission_time", None),
    ("PlayerRole", "player_role", ROLES),
    ("ProximityToNearestDoor", "proximity_to_nearest_door", None),
    ("ProximityToNearestTreatmentArea", "proximity_to_nearest_treatment_area", None),
    ("ProximityToMedic", "proximity_to_medic", None),
    ("ProximityToEngineer", "proximity_to_engineer", None),
    ("ProximityToTransporter", "proximity_to_transporter", None),
    ("ProximityToNearestRegular", "proximity_to_nearest_regular", None),
    ("ProximityToNearestCritical", "proximity_to_nearest_critical", None),
    ("ProximityToNearestMarker", "proximity_to_nearest_marker", None),
    ("RegularVictimsTriaged", "regular_victims_triaged", None),
    ("RegularVictimsSaved", "regular_victims_saved", None),
    ("ToolUsed", "tool_used", TOOLS),
)
ATTRS = tuple(a for _, a, _ in FEATURES)
VOCAB = {a: v for _, a, v in FEATURES if v is not None}
KEY_OF = {a: k for k, a, _ in FEATURES}
COUNT_ATTRS = (
    "critical_victims_triaged",
    "critical_victims_saved",
    "regular_victims_triaged",
    "regular_victims_saved",
)
MONOTONE_ATTRS = COUNT_ATTRS + ("distance_traveled",)
PROXIMITY_ATTRS = tuple(a for a in ATTRS if a.startswith("proximity"))


class TraceError(ValueError):
    """Base for trace-file problems."""


class ParseError(TraceError):
    pass


class OrderingError(TraceError):
    pass


class FormatError(TraceError):
    pass


class EmptySeriesError(TraceError):
    pass


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureRecord:
    current_location: str
    current_velocity: float
    critical_victims_triaged: float
    critical_victims_saved: float
    distance_traveled: float
    item_equipped: str
    mission_time: float
    player_role: str
    proximity_to_nearest_door: float
    proximity_to_nearest_treatment_area: float
    proximity_to_medic: float
    proximity_to_engineer: float
    proximity_to_transporter: float
    proximity_to_nearest_regular: float
    proximity_to_nearest_critical: float
    proximity_to_nearest_marker: float
    regular_victims_triaged: float
    regular_victims_saved: float
    tool_used: str

    def check(self) -> None:
        for a, vocab in VOCAB.items():
            if getattr(self, a) not in vocab:
                raise EncodingError(f"{KEY_OF[a]}: unknown category {getattr(self, a)!r}")
        if self.current_velocity < 0:
            raise ValueError("velocity must be >= 0")
        if not 0 <= self.mission_time <= 900:
            raise ValueError("mission time outside [0, 900]")
        for a in PROXIMITY_ATTRS:
            if getattr(self, a) < 0:
                raise ValueError(f"{KEY_OF[a]} must be >= 0")


@dataclass
class FeatureSeries:
    """Fixed-rate record series of one player in one mission."""

    player_id: str
    mission_id: str
    role: str
    columns: dict[str, np.ndarray]
    sampling_ms: int = 100
    start_ms: int = 0
    team_id: str = ""
    labels: np.ndarray | None = None
    audio: np.ndarray | None = None

    def __post_init__(self):
        n = {len(v) for v in self.columns.values()}
        if set(self.columns) != set(ATTRS):
            raise ValueError("columns must cover exactly the feature fields")
        if len(n) != 1:
            raise ValueError("columns differ in length")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        for extra in (self.labels, self.audio):
            if extra is not None and len(extra) != len(self):
                raise ValueError("labels/audio must align with the records")

    def __len__(self) -> int:
        return len(self.columns["mission_time"])

    @property
    def ts_ms(self) -> np.ndarray:
        return self.start_ms + self.sampling_ms * np.arange(len(self), dtype=np.int64)

    def __getitem__(self, sl: slice) -> "FeatureSeries":
        if not isinstance(sl, slice) or sl.step not in (None, 1):
            raise TypeError("FeatureSeries supports contiguous slices only")
        start, _, _ = sl.indices(len(self))
        return FeatureSeries(
            self.player_id,
            self.mission_id,
            self.role,
            {k: v[sl] for k, v in self.columns.items()},
            self.sampling_ms,
            self.start_ms + start * self.sampling_ms,
            self.team_id,
            None if self.labels is None else self.labels[sl],
            None if self.audio is None else self.audio[sl],
        )

    def record(self, i: int) -> FeatureRecord:
        vals = {}
        for a in ATTRS:
            v = self.columns[a][i]
            vals[a] = VOCAB[a][int(v)] if a in VOCAB else float(v)
        return FeatureRecord(**vals)

    def records(self) -> Iterator[FeatureRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def downsample(self, factor: int) -> "FeatureSeries":
        """Keep every ``factor``-th record (coarser sampling, same start)."""
        if factor == 1:
            return self
        sl = slice(None, None, factor)
        return FeatureSeries(
            self.player_id,
            self.mission_id,
            self.role,
            {k: np.ascontiguousarray(v[sl]) for k, v in self.columns.items()},
            self.sampling_ms * factor,
            self.start_ms,
            self.team_id,
            None if self.labels is None else np.ascontiguousarray(self.labels[sl]),
            None if self.audio is None else np.ascontiguousarray(self.audio[sl]),
        )

    @classmethod
    def from_records(cls, records: Sequence[FeatureRecord], player_id="p", mission_id="m", **kw) -> "FeatureSeries":
        cols = {}
        for a in ATTRS:
            vals = [getattr(r, a) for r in records]
            if a in VOCAB:
                cols[a] = np.array([VOCAB[a].index(v) for v in vals], dtype=np.int64)
            else:
                cols[a] = np.array(vals, dtype=np.float64)
        role = records[0].player_role if records else kw.pop("role", "medic")
        kw.pop("role", None)
        return cls(player_id, mission_id, role, cols, **kw)


# ---------------------------------------------------------------- encoding


@dataclass
class EncodingSpec:
    mean: dict[str, float]
    std: dict[str, float]
    normalized: dict[str, bool]
    vocab: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(VOCAB))

    @property
    def dim(self) -> int:
        return sum(1 if a not in self.vocab else len(self.vocab[a]) for a in ATTRS)

    def layout(self) -> dict[str, tuple[int, int]]:
        """Start offset and width of every field in the encoded vector."""
        out, off = {}, 0
        for a in ATTRS:
            w = len(self.vocab[a]) if a in self.vocab else 1
            out[a] = (off, w)
            off += w
        return out

    def categorical_blocks(self) -> list[tuple[int, int]]:
        lay = self.layout()
        return [lay[a] for a in ATTRS if a in self.vocab]

    def index_of(self, attr: str) -> int:
        return self.layout()[attr][0]

    def encode(self, record: FeatureRecord) -> np.ndarray:
        out = np.zeros(self.dim)
        for a, (off, w) in self.layout().items():
            v = getattr(record, a)
            if a in self.vocab:
                if v not in self.vocab[a]:
                    raise EncodingError(f"{KEY_OF[a]}: unknown category {v!r}")
                out[off + self.vocab[a].index(v)] = 1.0
            else:
                out[off] = (v - self.mean[a]) / self.std[a]
        return out

    def encode_series(self, series: FeatureSeries) -> np.ndarray:
        out = np.zeros((len(series), self.dim))
        rows = np.arange(len(series))
        for a, (off, w) in self.layout().items():
            col = series.columns[a]
            if a in self.vocab:
                if len(col) and (col.min() < 0 or col.max() >= w):
                    raise EncodingError(f"{KEY_OF[a]}: category code outside the vocabulary")
                out[rows, off + col] = 1.0
            else:
                out[:, off] = (col - self.mean[a]) / self.std[a]
        return out

    def decode(self, vec) -> FeatureRecord:
        vec = np.asarray(vec, dtype=np.float64)
        vals = {}
        for a, (off, w) in self.layout().items():
            if a in self.vocab:
                vals[a] = self.vocab[a][int(np.argmax(vec[off : off + w]))]
            else:
                vals[a] = float(vec[off] * self.std[a] + self.mean[a])
        return FeatureRecord(**vals)

    def to_dict(self) -> dict:
        return {
            "fields": [KEY_OF[a] for a in ATTRS],
            "mean": {KEY_OF[a]: v for a, v in self.mean.items()},
            "std": {KEY_OF[a]: v for a, v in self.std.items()},
            "normalized": {KEY_OF[a]: v for a, v in self.normalized.items()},
            "vocab": {KEY_OF[a]: list(v) for a, v in self.vocab.items()},
            "dim": self.dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingSpec":
        attr = {k: a for a, k in KEY_OF.items()}
        return cls(
            mean={attr[k]: float(v) for k, v in d["mean"].items()},
            std={attr[k]: float(v) for k, v in d["std"].items()},
            normalized={attr[k]: bool(v) for k, v in d["normalized"].items()},
            vocab={attr[k]: tuple(v) for k, v in d["vocab"].items()},
        )


def fit_encoding(series: Iterable[FeatureSeries], masks: Iterable[np.ndarray] | None = None) -> EncodingSpec:
    """Z-score statistics from the given (training) series only.

    ``masks``, if given, selects which records of each series contribute.
    Zero-variance fields are passed through (mean 0, std 1).
    """
    series = list(series)
    if not series:
        raise ValueError("fit_encoding needs at least one series")
    masks = list(masks) if masks is not None else [None] * len(series)
    mean, std, normalized = {}, {}, {}
    for a in ATTRS:
        if a in VOCAB:
            continue
        cols = [s.columns[a] if m is None else s.columns[a][m] for s, m in zip(series, masks)]
        col = np.concatenate(cols)
        if col.size == 0:
            raise ValueError("fit_encoding: no records selected")
        mu = float(col.mean())
        sd = float(col.std())
        if sd > 0 and np.isfinite(sd):
            mean[a], std[a], normalized[a] = mu, sd, True
        else:
            mean[a], std[a], normalized[a] = 0.0, 1.0, False
    return EncodingSpec(mean, std, normalized)


# ---------------------------------------------------------------- windows


def window_offsets(n: int, input_len: int, step: int, horizon: int) -> list[int]:
    if min(input_len, step, horizon) < 1:
        raise ValueError("input_len, step and horizon must be >= 1")
    return list(range(0, n - input_len - horizon + 1, step))


def window_count(n: int, input_len: int, step: int, horizon: int) -> int:
    if n < input_len + horizon:
        return 0
    return (n - input_len - horizon) // step + 1


def windows(series, input_len: int = 1200, step: int = 300, horizon: int = 300) -> list:
    """Sliding ``(input, future)`` pairs starting at 0, step, 2*step, ..."""
    return [
        (series[o : o + input_len], series[o + input_len : o + input_len + horizon])
        for o in window_offsets(len(series), input_len, step, horizon)
    ]


# ---------------------------------------------------------------- labeler


def heuristic_label(record: FeatureRecord, prev: FeatureRecord | None = None, audio_active: bool = False) -> SemanticLabel:
    """Rule-based label for one record; first matching rule wins."""
    r, p = record, prev
    if audio_active:
        return SemanticLabel.AC
    if p is not None:
        triaged = (
            r.regular_victims_triaged > p.regular_victims_triaged
            or r.critical_victims_triaged > p.critical_victims_triaged
        )
        role_tool = ROLE_TOOL[r.player_role]
        if triaged or (p.tool_used == role_tool and r.tool_used != role_tool):
            return SemanticLabel.RA
    if r.tool_used != "none":
        return SemanticLabel.TU
    if p is not None:
        if r.item_equipped != p.item_equipped:
            return SemanticLabel.IE
        pm, m = p.proximity_to_nearest_marker, r.proximity_to_nearest_marker
        if m < 1.0 and pm - m > 1.0:
            return SemanticLabel.PM
        if pm < 1.0 and m - pm > 1.0:
            return SemanticLabel.RM
        if (
            r.proximity_to_nearest_door < 1.0
            and r.current_location != p.current_location
            and "room" in (r.current_location, p.current_location)
        ):
            return SemanticLabel.OD
    moving = r.current_velocity > MOVING
    if r.item_equipped == "stretcher" and moving:
        return SemanticLabel.TV
    if r.current_location == "room":
        return SemanticLabel.SR
    if moving:
        return SemanticLabel.NV
    return SemanticLabel.ST


def label_series(series: FeatureSeries) -> np.ndarray:
    out = np.empty(len(series), dtype=np.int64)
    prev = None
    for i, rec in enumerate(series.records()):
        audio = bool(series.audio[i]) if series.audio is not None else False
        out[i] = heuristic_label(rec, prev, audio)
        prev = rec
    return out


# ---------------------------------------------------------------- trace files

_META_KEYS = ("player_id", "mission_id", "team_id")


def _record_line(series: FeatureSeries, i: int, ts: int) -> str:
    obj = {"ts_ms": int(ts)}
    for k in _META_KEYS:
        obj[k] = getattr(series, k)
    for key, a, vocab in FEATURES:
        v = series.columns[a][i]
        obj[key] = vocab[int(v)] if vocab else float(v)
    if series.labels is not None:
        obj["label"] = LABEL_NAMES[int(series.labels[i])]
    if series.audio is not None:
        obj["audio_active"] = bool(series.audio[i])
    return json.dumps(obj, separators=(",", ":"))


def write_trace(series: FeatureSeries, fh) -> None:
    """Write one JSON object per record, keys in a fixed order."""
    ts = series.ts_ms
    for i in range(len(series)):
        fh.write(_record_line(series, i, ts[i]))
        fh.write("\n")


def parse_trace(lines: Iterable[str], sampling_ms: int | None = None) -> FeatureSeries:
    """Validate and load a trace. The sampling period is taken from the first
    two records unless given; every later gap must equal it."""
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(f"line {lineno}: expected a JSON object")
        for key in ("ts_ms",) + tuple(k for k, _, _ in FEATURES):
            if key not in obj:
                raise ParseError(f"line {lineno}: missing field '{key}'")
        rows.append((lineno, obj))
    if not rows:
        raise EmptySeriesError("trace contains no records")

    n = len(rows)
    cols = {a: np.empty(n, dtype=np.int64 if a in VOCAB else np.float64) for a in ATTRS}
    labels = np.empty(n, dtype=np.int64)
    audio = np.zeros(n, dtype=bool)
    has_label = "label" in rows[0][1]
    has_audio = "audio_active" in rows[0][1]
    ts = np.empty(n, dtype=np.int64)
    for i, (lineno, obj) in enumerate(rows):
        t = obj["ts_ms"]
        if not isinstance(t, int) or isinstance(t, bool):
            raise ParseError(f"line {lineno}: field 'ts_ms' must be an integer")
        ts[i] = t
        for key, a, vocab in FEATURES:
            v = obj[key]
            if vocab:
                if v not in vocab:
                    raise ParseError(f"line {lineno}: field '{key}' has unknown category {v!r}")
                cols[a][i] = vocab.index(v)
            else:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ParseError(f"line {lineno}: field '{key}' must be numeric")
                cols[a][i] = v
        if has_label:
            if obj.get("label") not in LABEL_NAMES:
                raise ParseError(f"line {lineno}: field 'label' missing or not a known label")
            labels[i] = LABEL_NAMES.index(obj["label"])
        if has_audio:
            audio[i] = bool(obj.get("audio_active", False))

    if ts[0] % 100 != 0:
        raise FormatError(f"line {rows[0][0]}: ts_ms must be a multiple of 100")
    gaps = np.diff(ts)
    for i, g in enumerate(gaps):
        if g <= 0:
            raise OrderingError(f"line {rows[i + 1][0]}: timestamp {ts[i + 1]} does not increase")
    period = sampling_ms if sampling_ms is not None else (int(gaps[0]) if n > 1 else 100)
    if period % 100 != 0:
        raise FormatError(f"sampling period {period} ms is not a multiple of 100 ms")
    for i, g in enumerate(gaps):
        if g != period:
            raise FormatError(f"line {rows[i + 1][0]}: gap {g} ms differs from sampling period {period} ms")

    first = rows[0][1]
    roles = {VOCAB["player_role"][c] for c in np.unique(cols["player_role"])}
    if len(roles) != 1:
        raise FormatError("player role changes within the trace")
    return FeatureSeries(
        player_id=str(first.get("player_id", "")),
        mission_id=str(first.get("mission_id", "")),
        role=roles.pop(),
        columns=cols,
        sampling_ms=period,
        start_ms=int(ts[0]),
        team_id=str(first.get("team_id", "")),
        labels=labels if has_label else None,
        audio=audio if has_audio else None,
    )


def read_trace_file(path) -> FeatureSeries:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def write_trace_file(series: FeatureSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_trace(series, fh)
