"""Preprocessing: parse per-sensor logs, align them on a uniform grid.

Topic files are UTF-8 CSV with a header row containing a ``timestamp`` column
(epoch seconds) plus one or more numeric columns. A bag manifest is a JSON
document ``{"bag_id": ..., "topics": [{"topic_name": ..., "file": ...}],
"start_time": ...}`` with file paths resolved relative to the manifest.

Channels are addressed as ``topic.column`` selectors throughout.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .core import TimeSeriesBag
from .errors import GapError, ParameterError, ParseError, RangeError

DEFAULT_MAX_GAP_S = 0.5


@dataclass(frozen=True)
class RawTopic:
    """One sensor topic: strictly increasing timestamps plus named series."""

    topic_name: str
    timestamps: np.ndarray
    columns: dict[str, np.ndarray]

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        if ts.ndim != 1 or ts.size < 1:
            raise ParameterError("topic needs at least one sample")
        if np.any(np.diff(ts) <= 0):
            raise ParameterError("topic timestamps must be strictly increasing")
        if not self.columns:
            raise ParameterError("topic needs at least one column")
        cols = {}
        for name, series in self.columns.items():
            arr = np.asarray(series, dtype=float)
            if arr.shape != ts.shape:
                raise ParameterError(f"column '{name}' length differs from timestamps")
            arr = arr.copy()
            arr.setflags(write=False)
            cols[name] = arr
        ts = ts.copy()
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "columns", cols)


@dataclass(frozen=True)
class BehaviorDef:
    """A named channel subset and the grid rate segmentation will run at."""

    name: str
    required_channels: tuple[str, ...]
    target_rate_hz: float

    def __post_init__(self):
        channels = tuple(self.required_channels)
        if not channels:
            raise ParameterError("behavior needs at least one channel")
        if len(set(channels)) != len(channels):
            raise ParameterError("behavior channels must be unique")
        if not self.target_rate_hz > 0:
            raise ParameterError("target_rate_hz must be positive")
        object.__setattr__(self, "required_channels", channels)


def parse_topic_csv(
    source: str | Path | IO[bytes] | IO[str], topic_name: str | None = None
) -> RawTopic:
    """Parse one topic CSV; rows are reordered by timestamp, duplicates keep
    the last occurrence in file order."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        name = topic_name if topic_name is not None else path.stem
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ParseError("topic file not found", source=str(path)) from None
        except UnicodeDecodeError as err:
            raise ParseError(f"not valid UTF-8: {err}", source=str(path)) from None
        return _parse_topic_text(text, name, str(path))
    raw = source.read()
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as err:
            raise ParseError(f"not valid UTF-8: {err}", source="<stream>") from None
    if topic_name is None:
        raise ParameterError("topic_name is required when parsing a stream")
    return _parse_topic_text(raw, topic_name, "<stream>")


def _parse_topic_text(text: str, topic_name: str, source: str) -> RawTopic:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", source=source) from None
    header = [h.strip() for h in header]
    if "timestamp" not in header:
        raise ParseError("missing 'timestamp' column", source=source, line=1)
    ts_pos = header.index("timestamp")
    value_names = [h for i, h in enumerate(header) if i != ts_pos]
    if not value_names:
        raise ParseError("no numeric columns besides 'timestamp'", source=source, line=1)

    by_ts: dict[float, list[float]] = {}
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} cells, found {len(row)}", source=source, line=line
            )
        parsed = []
        for cell in row:
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell '{cell}'", source=source, line=line) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite cell '{cell}'", source=source, line=line)
            parsed.append(value)
        ts = parsed[ts_pos]
        by_ts[ts] = [v for i, v in enumerate(parsed) if i != ts_pos]  # last occurrence wins

    if not by_ts:
        raise ParseError("no data rows", source=source)
    order = sorted(by_ts)
    ts_arr = np.asarray(order, dtype=float)
    values = np.asarray([by_ts[t] for t in order], dtype=float)
    columns = {name: values[:, i] for i, name in enumerate(value_names)}
    return RawTopic(topic_name=topic_name, timestamps=ts_arr, columns=columns)


def split_selector(selector: str) -> tuple[str, str]:
    topic, sep, column = selector.partition(".")
    if not sep or not topic or not column:
        raise ParameterError(f"channel selector '{selector}' must look like topic.column")
    return topic, column


def resample_uniform(
    topics: list[RawTopic],
    behavior: BehaviorDef,
    bag_id: str,
    max_gap_s: float = DEFAULT_MAX_GAP_S,
) -> TimeSeriesBag:
    """Interpolate the behavior's channels onto a shared uniform grid.

    The grid starts at the latest referenced-topic start, ends at the earliest
    end, and is spaced 1/target_rate_hz. Any topic gap wider than max_gap_s
    inside that window aborts the bag rather than interpolating across it.
    """
    by_name = {t.topic_name: t for t in topics}
    resolved = []
    for selector in behavior.required_channels:
        topic_name, column = split_selector(selector)
        topic = by_name.get(topic_name)
        if topic is None:
            raise ParameterError(f"behavior channel '{selector}': topic not supplied")
        if column not in topic.columns:
            raise ParameterError(f"behavior channel '{selector}': column not in topic")
        resolved.append((selector, topic, column))

    referenced = {t.topic_name: t for _, t, _ in resolved}
    start = max(t.timestamps[0] for t in referenced.values())
    end = min(t.timestamps[-1] for t in referenced.values())
    if start > end:
        raise RangeError("topic time ranges do not overlap")
    for topic in referenced.values():
        ts = topic.timestamps
        gaps = np.diff(ts)
        for i in np.nonzero(gaps > max_gap_s)[0]:
            lo, hi = ts[i], ts[i + 1]
            if hi > start and lo < end:
                raise GapError(
                    f"topic '{topic.topic_name}' has a {hi - lo:.3f} s gap "
                    f"in [{lo:.3f}, {hi:.3f}]"
                )

    rate = behavior.target_rate_hz
    # the guard covers float rounding of (end - start) at epoch magnitudes,
    # where the subtraction alone can be off by several ulps of the timestamps
    eps = 1e-9 + 4.0 * rate * float(np.spacing(max(abs(start), abs(end), 1.0)))
    n_frames = int(math.floor((end - start) * rate + eps)) + 1
    grid = start + np.arange(n_frames) * (1.0 / rate)
    data = np.empty((len(resolved), n_frames))
    for row, (_, topic, column) in enumerate(resolved):
        data[row] = np.interp(grid, topic.timestamps, topic.columns[column])
    return TimeSeriesBag(
        bag_id=bag_id,
        channels=tuple(sel for sel, _, _ in resolved),
        rate_hz=rate,
        start_time=float(start),
        data=data,
    )


@dataclass(frozen=True)
class ChannelScale:
    channel: str
    mean: float
    std: float
    constant: bool


def normalize_zscore(bag: TimeSeriesBag) -> tuple[TimeSeriesBag, tuple[ChannelScale, ...]]:
    """Per-channel z-score with population (N) denominator.

    Constant channels become all zeros and are flagged; the returned record
    inverts the transform exactly.
    """
    data = np.array(bag.data, copy=True)
    scales = []
    for i, channel in enumerate(bag.channels):
        mean = float(data[i].mean())
        std = float(data[i].std())
        constant = std == 0.0
        data[i] = 0.0 if constant else (data[i] - mean) / std
        scales.append(ChannelScale(channel=channel, mean=mean, std=std, constant=constant))
    out = TimeSeriesBag(
        bag_id=bag.bag_id,
        channels=bag.channels,
        rate_hz=bag.rate_hz,
        start_time=bag.start_time,
        data=data,
    )
    return out, tuple(scales)


def denormalize(bag: TimeSeriesBag, scales: tuple[ChannelScale, ...]) -> TimeSeriesBag:
    """Invert normalize_zscore."""
    if tuple(s.channel for s in scales) != bag.channels:
        raise ParameterError("scale record does not match the bag channels")
    data = np.array(bag.data, copy=True)
    for i, scale in enumerate(scales):
        data[i] = data[i] * scale.std + scale.mean
    return TimeSeriesBag(
        bag_id=bag.bag_id,
        channels=bag.channels,
        rate_hz=bag.rate_hz,
        start_time=bag.start_time,
        data=data,
    )


def load_bag_manifest(path: str | Path) -> tuple[str, list[tuple[str, Path]], float]:
    """Read a bag manifest; returns (bag_id, [(topic_name, file path)], start_time)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("manifest not found", source=str(path)) from None
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON: {err.msg}", source=str(path), line=err.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object", source=str(path))
    for field in ("bag_id", "topics", "start_time"):
        if field not in doc:
            raise ParseError(f"manifest missing field '{field}'", source=str(path))
    bag_id = str(doc["bag_id"])
    if not isinstance(doc["topics"], list) or not doc["topics"]:
        raise ParseError("manifest 'topics' must be a non-empty list", source=str(path))
    topics = []
    for entry in doc["topics"]:
        if not isinstance(entry, dict) or "topic_name" not in entry or "file" not in entry:
            raise ParseError(
                "each topic entry needs 'topic_name' and 'file'", source=str(path)
            )
        topics.append((str(entry["topic_name"]), path.parent / str(entry["file"])))
    try:
        start_time = float(doc["start_time"])
    except (TypeError, ValueError):
        raise ParseError("manifest 'start_time' must be a number", source=str(path)) from None
    return bag_id, topics, start_time


def ingest_bag(
    manifest_path: str | Path,
    behavior: BehaviorDef,
    max_gap_s: float = DEFAULT_MAX_GAP_S,
) -> TimeSeriesBag:
    """Manifest in, aligned bag out: parse every topic file and resample."""
    bag_id, topic_files, _ = load_bag_manifest(manifest_path)
    topics = [parse_topic_csv(file, topic_name=name) for name, file in topic_files]
    return resample_uniform(topics, behavior, bag_id=bag_id, max_gap_s=max_gap_s)


def native_rate_hz(topic: RawTopic) -> float:
    """Mean sampling rate implied by a topic's time span."""
    ts = topic.timestamps
    if ts.size < 2:
        raise ParameterError(f"topic '{topic.topic_name}' has a single sample, no rate")
    return (ts.size - 1) / float(ts[-1] - ts[0])
