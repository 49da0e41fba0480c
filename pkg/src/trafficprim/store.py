"""Scenario-oriented relational catalog with a portable on-disk layout.

A catalog is a directory::

    catalog/manifest.json        format-version plus table schemas
    catalog/tables/<Table>.csv   one UTF-8 CSV per table, header row
    catalog/lock                 present while a writer session is open

Long/narrow storage: sensor readings live as one (sensor_id, frame_index,
channel, value) row each, so adding a sensor never changes any schema.
Floats are rendered with the shortest round-trip decimal representation;
the CSV files are the normative interchange format.

Single writer, multiple readers: mutations go through ``write_session``,
which fails fast when another writer holds the lock.
"""
from __future__ import annotations

import csv
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .core import GaussianEmission, TimeSeriesBag, runs_of
from .errors import (
    CatalogLockedError,
    IntegrityError,
    NotFoundError,
    ParameterError,
)
from .ingest import split_selector

FORMAT_VERSION = 1

TABLE_COLUMNS: dict[str, tuple[str, ...]] = {
    "Dataset": ("dataset_id", "name"),
    "Bag": ("bag_id", "dataset_id", "start_time", "duration_s", "rate_hz"),
    "Sensor": ("sensor_id", "bag_id", "topic_name"),
    "Sample": ("sensor_id", "frame_index", "channel", "value"),
    "Behavior": ("behavior_id", "name", "channel_list", "target_rate_hz"),
    "Primitive": (
        "primitive_id",
        "behavior_id",
        "mean_vector",
        "cov_matrix",
        "total_frames",
        "occurrence_count",
    ),
    "PrimitiveInstance": ("instance_id", "primitive_id", "bag_id", "start_frame", "end_frame"),
    "Scenario": ("scenario_id", "behavior_id", "label_sequence", "name"),
    "ScenarioInstance": ("instance_id", "scenario_id", "bag_id", "start_frame", "end_frame"),
}

_INT_COLUMNS = {
    "dataset_id",
    "sensor_id",
    "frame_index",
    "behavior_id",
    "primitive_id",
    "total_frames",
    "occurrence_count",
    "instance_id",
    "start_frame",
    "end_frame",
    "scenario_id",
}
_FLOAT_COLUMNS = {"start_time", "duration_s", "rate_hz", "value", "target_rate_hz"}
_NULLABLE = {("Scenario", "name")}


def render_float(x: float) -> str:
    """Shortest round-trip decimal rendering; normative for exports."""
    return repr(float(x))


def render_vector(vec: np.ndarray) -> str:
    return " ".join(render_float(v) for v in np.asarray(vec, dtype=float).ravel())


def parse_vector(text: str) -> np.ndarray:
    return np.asarray([float(tok) for tok in text.split()], dtype=float)


def render_matrix(mat: np.ndarray) -> str:
    mat = np.asarray(mat, dtype=float)
    return ";".join(" ".join(render_float(v) for v in row) for row in mat)


def parse_matrix(text: str) -> np.ndarray:
    return np.asarray(
        [[float(tok) for tok in row.split()] for row in text.split(";")], dtype=float
    )


def _cell_to_text(table: str, column: str, value) -> str:
    if value is None:
        if (table, column) in _NULLABLE:
            return ""
        raise IntegrityError(f"{table}.{column} may not be null")
    if column in _INT_COLUMNS:
        return str(int(value))
    if column in _FLOAT_COLUMNS:
        return render_float(value)
    return str(value)


def _cell_from_text(table: str, column: str, text: str):
    if text == "" and (table, column) in _NULLABLE:
        return None
    if column in _INT_COLUMNS:
        return int(text)
    if column in _FLOAT_COLUMNS:
        return float(text)
    return text


class Catalog:
    """In-memory image of a catalog directory."""

    def __init__(self, root: Path, tables: dict[str, list[dict]]):
        self.root = Path(root)
        self.tables = tables

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, root: str | Path) -> "Catalog":
        root = Path(root)
        if (root / "manifest.json").exists():
            raise IntegrityError(f"'{root}' is already a catalog")
        root.mkdir(parents=True, exist_ok=True)
        (root / "tables").mkdir(exist_ok=True)
        catalog = cls(root, {name: [] for name in TABLE_COLUMNS})
        catalog.save()
        return catalog

    @classmethod
    def open(cls, root: str | Path) -> "Catalog":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise NotFoundError(f"'{root}' is not a catalog (no manifest.json)")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise IntegrityError(
                f"unsupported catalog format version {manifest.get('format_version')!r}"
            )
        tables: dict[str, list[dict]] = {}
        for name, columns in TABLE_COLUMNS.items():
            path = root / "tables" / f"{name}.csv"
            rows: list[dict] = []
            if path.exists():
                with path.open(newline="", encoding="utf-8") as fh:
                    reader = csv.reader(fh)
                    header = next(reader, None)
                    if header is not None:
                        if tuple(header) != columns:
                            raise IntegrityError(
                                f"table {name} header mismatch: {header!r}"
                            )
                        for record in reader:
                            rows.append(
                                {
                                    col: _cell_from_text(name, col, cell)
                                    for col, cell in zip(columns, record)
                                }
                            )
            tables[name] = rows
        return cls(root, tables)

    def save(self) -> None:
        manifest = {
            "format_version": FORMAT_VERSION,
            "tables": {name: list(cols) for name, cols in TABLE_COLUMNS.items()},
        }
        (self.root / "tables").mkdir(parents=True, exist_ok=True)
        tmp = self.root / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        tmp.replace(self.root / "manifest.json")
        for name, columns in TABLE_COLUMNS.items():
            path = self.root / "tables" / f"{name}.csv"
            tmp = path.with_suffix(".csv.tmp")
            with tmp.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(columns)
                for row in self.tables[name]:
                    writer.writerow([_cell_to_text(name, col, row[col]) for col in columns])
            tmp.replace(path)

    # -- helpers -----------------------------------------------------------

    def next_id(self, table: str, column: str) -> int:
        rows = self.tables[table]
        return 1 + max((row[column] for row in rows), default=0)

    def find_one(self, table: str, **where) -> dict | None:
        for row in self.tables[table]:
            if all(row[k] == v for k, v in where.items()):
                return row
        return None

    def find_all(self, table: str, **where) -> list[dict]:
        return [
            row
            for row in self.tables[table]
            if all(row[k] == v for k, v in where.items())
        ]


# -- locking ----------------------------------------------------------------


def _acquire_lock(root: Path) -> Path:
    lock_path = root / "lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CatalogLockedError(f"catalog '{root}' is locked by another writer") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    return lock_path


@contextmanager
def write_session(root: str | Path, create: bool = False) -> Iterator[Catalog]:
    """Single-writer mutation scope: load, yield, save; abandons on error."""
    root = Path(root)
    if not (root / "manifest.json").exists():
        if not create:
            raise NotFoundError(f"'{root}' is not a catalog (no manifest.json)")
        root.mkdir(parents=True, exist_ok=True)
        lock_path = _acquire_lock(root)
        try:
            catalog = Catalog.create(root)
            yield catalog
            catalog.save()
        finally:
            lock_path.unlink(missing_ok=True)
        return
    lock_path = _acquire_lock(root)
    try:
        catalog = Catalog.open(root)
        yield catalog
        catalog.save()
    finally:
        lock_path.unlink(missing_ok=True)


# -- datasets and behaviors ---------------------------------------------------


def ensure_dataset(catalog: Catalog, name: str) -> int:
    row = catalog.find_one("Dataset", name=name)
    if row is not None:
        return row["dataset_id"]
    dataset_id = catalog.next_id("Dataset", "dataset_id")
    catalog.tables["Dataset"].append({"dataset_id": dataset_id, "name": name})
    return dataset_id


def find_behavior(catalog: Catalog, name: str) -> dict | None:
    return catalog.find_one("Behavior", name=name)


def ensure_behavior(
    catalog: Catalog, name: str, channels: Sequence[str], target_rate_hz: float
) -> int:
    """Create the behavior or verify an existing one matches exactly."""
    channel_list = ",".join(channels)
    row = find_behavior(catalog, name)
    if row is not None:
        if row["channel_list"] != channel_list or row["target_rate_hz"] != float(
            target_rate_hz
        ):
            raise IntegrityError(
                f"behavior '{name}' already exists with a different definition"
            )
        return row["behavior_id"]
    for channel in channels:
        split_selector(channel)  # validates topic.column shape
    behavior_id = catalog.next_id("Behavior", "behavior_id")
    catalog.tables["Behavior"].append(
        {
            "behavior_id": behavior_id,
            "name": name,
            "channel_list": channel_list,
            "target_rate_hz": float(target_rate_hz),
        }
    )
    return behavior_id


def behavior_channels(row: dict) -> tuple[str, ...]:
    return tuple(row["channel_list"].split(","))


# -- bags ---------------------------------------------------------------------


def _sensor_groups(channels: Sequence[str]) -> list[tuple[str, list[str]]]:
    """Group channel selectors by topic, preserving first-appearance order."""
    groups: dict[str, list[str]] = {}
    for channel in channels:
        topic, _ = split_selector(channel)
        groups.setdefault(topic, []).append(channel)
    return list(groups.items())


def insert_bag(catalog: Catalog, bag: TimeSeriesBag, dataset: str) -> str:
    """Decompose a bag into Sensor and Sample rows; idempotent on re-insert."""
    dataset_id = ensure_dataset(catalog, dataset)
    duration_s = bag.n_frames / bag.rate_hz
    existing = catalog.find_one("Bag", bag_id=bag.bag_id)
    if existing is not None:
        _check_identical_bag(catalog, bag, existing, dataset_id, duration_s)
        return bag.bag_id

    catalog.tables["Bag"].append(
        {
            "bag_id": bag.bag_id,
            "dataset_id": dataset_id,
            "start_time": bag.start_time,
            "duration_s": duration_s,
            "rate_hz": bag.rate_hz,
        }
    )
    channel_row = {ch: i for i, ch in enumerate(bag.channels)}
    for topic, channels in _sensor_groups(bag.channels):
        sensor_id = catalog.next_id("Sensor", "sensor_id")
        catalog.tables["Sensor"].append(
            {"sensor_id": sensor_id, "bag_id": bag.bag_id, "topic_name": topic}
        )
        samples = catalog.tables["Sample"]
        for frame in range(bag.n_frames):
            for channel in channels:
                samples.append(
                    {
                        "sensor_id": sensor_id,
                        "frame_index": frame,
                        "channel": channel,
                        "value": float(bag.data[channel_row[channel], frame]),
                    }
                )
    return bag.bag_id


def _check_identical_bag(
    catalog: Catalog, bag: TimeSeriesBag, existing: dict, dataset_id: int, duration_s: float
) -> None:
    same = (
        existing["dataset_id"] == dataset_id
        and existing["start_time"] == bag.start_time
        and existing["duration_s"] == duration_s
        and existing["rate_hz"] == bag.rate_hz
    )
    if same:
        stored = load_bag(catalog, bag.bag_id)
        same = stored.channels == bag.channels and np.array_equal(stored.data, bag.data)
    if not same:
        raise IntegrityError(
            f"bag '{bag.bag_id}' already exists with different content"
        )


def get_bag_row(catalog: Catalog, bag_id: str) -> dict:
    row = catalog.find_one("Bag", bag_id=bag_id)
    if row is None:
        raise NotFoundError(f"bag '{bag_id}' not found in catalog")
    return row


def load_bag(catalog: Catalog, bag_id: str) -> TimeSeriesBag:
    """Reassemble a TimeSeriesBag from its Sensor and Sample rows."""
    bag_row = get_bag_row(catalog, bag_id)
    sensors = sorted(
        catalog.find_all("Sensor", bag_id=bag_id), key=lambda r: r["sensor_id"]
    )
    if not sensors:
        raise IntegrityError(f"bag '{bag_id}' has no sensors")
    channels: list[str] = []
    series: dict[str, dict[int, float]] = {}
    for sensor in sensors:
        for sample in catalog.find_all("Sample", sensor_id=sensor["sensor_id"]):
            channel = sample["channel"]
            if channel not in series:
                series[channel] = {}
                channels.append(channel)
            series[channel][sample["frame_index"]] = sample["value"]
    n_frames = 1 + max(max(frames) for frames in series.values())
    data = np.empty((len(channels), n_frames))
    for i, channel in enumerate(channels):
        frames = series[channel]
        if len(frames) != n_frames:
            raise IntegrityError(f"channel '{channel}' of bag '{bag_id}' has missing frames")
        for frame, value in frames.items():
            data[i, frame] = value
    return TimeSeriesBag(
        bag_id=bag_id,
        channels=tuple(channels),
        rate_hz=bag_row["rate_hz"],
        start_time=bag_row["start_time"],
        data=data,
    )


def bag_frame_count(catalog: Catalog, bag_id: str) -> int:
    bag_row = get_bag_row(catalog, bag_id)
    return int(round(bag_row["duration_s"] * bag_row["rate_hz"]))


# -- primitives ---------------------------------------------------------------


def get_behavior_row(catalog: Catalog, behavior: str | int) -> dict:
    if isinstance(behavior, int):
        row = catalog.find_one("Behavior", behavior_id=behavior)
    else:
        row = catalog.find_one("Behavior", name=behavior)
    if row is None:
        raise NotFoundError(f"behavior '{behavior}' not found in catalog")
    return row


def record_primitives(
    catalog: Catalog,
    bag_id: str,
    behavior_id: int,
    labels: np.ndarray,
    emissions: Mapping[int, GaussianEmission],
) -> list[int]:
    """Run-length encode a segmentation into Primitive/PrimitiveInstance rows.

    Re-recording the same (bag, behavior) replaces the previous segmentation,
    including any scenario windows derived from it.
    """
    get_bag_row(catalog, bag_id)
    if catalog.find_one("Behavior", behavior_id=behavior_id) is None:
        raise NotFoundError(f"behavior id {behavior_id} not found in catalog")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n_frames = bag_frame_count(catalog, bag_id)
    if labels.size != n_frames:
        raise IntegrityError(
            f"label sequence length {labels.size} != bag frame count {n_frames}"
        )
    missing = sorted(set(labels.tolist()) - set(emissions))
    if missing:
        raise ParameterError(f"no emission supplied for labels {missing}")

    _drop_bag_segmentation(catalog, bag_id, behavior_id)

    runs = runs_of(labels)
    primitive_ids: dict[int, int] = {}
    for label, start, end in runs:
        if label not in primitive_ids:
            emission = emissions[label]
            primitive_id = catalog.next_id("Primitive", "primitive_id")
            primitive_ids[label] = primitive_id
            catalog.tables["Primitive"].append(
                {
                    "primitive_id": primitive_id,
                    "behavior_id": behavior_id,
                    "mean_vector": render_vector(emission.mean),
                    "cov_matrix": render_matrix(emission.cov),
                    "total_frames": int((labels == label).sum()),
                    "occurrence_count": sum(1 for lab, _, _ in runs if lab == label),
                }
            )
    instance_ids = []
    for label, start, end in runs:
        instance_id = catalog.next_id("PrimitiveInstance", "instance_id")
        instance_ids.append(instance_id)
        catalog.tables["PrimitiveInstance"].append(
            {
                "instance_id": instance_id,
                "primitive_id": primitive_ids[label],
                "bag_id": bag_id,
                "start_frame": start,
                "end_frame": end,
            }
        )
    return instance_ids


def _drop_bag_segmentation(catalog: Catalog, bag_id: str, behavior_id: int) -> None:
    """Remove a bag's primitive instances (and orphaned primitives) for one behavior."""
    behavior_primitives = {
        row["primitive_id"]
        for row in catalog.find_all("Primitive", behavior_id=behavior_id)
    }
    instances = catalog.tables["PrimitiveInstance"]
    kept, touched = [], set()
    for row in instances:
        if row["bag_id"] == bag_id and row["primitive_id"] in behavior_primitives:
            touched.add(row["primitive_id"])
        else:
            kept.append(row)
    catalog.tables["PrimitiveInstance"] = kept

    remaining: dict[int, list[dict]] = {}
    for row in catalog.tables["PrimitiveInstance"]:
        remaining.setdefault(row["primitive_id"], []).append(row)
    primitives = []
    for row in catalog.tables["Primitive"]:
        pid = row["primitive_id"]
        if pid in touched:
            rows = remaining.get(pid, [])
            if not rows:
                continue  # orphaned by the drop
            row = dict(row)
            row["occurrence_count"] = len(rows)
            row["total_frames"] = sum(r["end_frame"] - r["start_frame"] + 1 for r in rows)
        primitives.append(row)
    catalog.tables["Primitive"] = primitives

    behavior_scenarios = {
        row["scenario_id"]
        for row in catalog.find_all("Scenario", behavior_id=behavior_id)
    }
    catalog.tables["ScenarioInstance"] = [
        row
        for row in catalog.tables["ScenarioInstance"]
        if not (row["bag_id"] == bag_id and row["scenario_id"] in behavior_scenarios)
    ]


def primitive_emission(row: dict) -> GaussianEmission:
    return GaussianEmission(
        mean=parse_vector(row["mean_vector"]), cov=parse_matrix(row["cov_matrix"])
    )


def bag_primitive_labels(catalog: Catalog, bag_id: str, behavior_id: int) -> np.ndarray:
    """Per-frame primitive ids for one bag, rebuilt from its instance rows."""
    behavior_primitives = {
        row["primitive_id"]
        for row in catalog.find_all("Primitive", behavior_id=behavior_id)
    }
    instances = sorted(
        (
            row
            for row in catalog.find_all("PrimitiveInstance", bag_id=bag_id)
            if row["primitive_id"] in behavior_primitives
        ),
        key=lambda r: r["start_frame"],
    )
    if not instances:
        raise NotFoundError(f"bag '{bag_id}' has no segmentation for behavior {behavior_id}")
    n_frames = bag_frame_count(catalog, bag_id)
    labels = np.zeros(n_frames, dtype=np.int64)
    cursor = 0
    for row in instances:
        if row["start_frame"] != cursor:
            raise IntegrityError(
                f"bag '{bag_id}' primitive instances do not tile the bag "
                f"(gap before frame {row['start_frame']})"
            )
        labels[row["start_frame"] : row["end_frame"] + 1] = row["primitive_id"]
        cursor = row["end_frame"] + 1
    if cursor != n_frames:
        raise IntegrityError(f"bag '{bag_id}' primitive instances stop at frame {cursor - 1}")
    return labels


# -- scenarios ------------------------------------------------------------------


def sequence_text(sequence: Sequence[int]) -> str:
    return ",".join(str(int(v)) for v in sequence)


def ensure_scenario(
    catalog: Catalog,
    behavior_id: int,
    sequence: Sequence[int],
    name: str | None = None,
) -> int:
    text = sequence_text(sequence)
    row = catalog.find_one("Scenario", behavior_id=behavior_id, label_sequence=text)
    if row is not None:
        return row["scenario_id"]
    scenario_id = catalog.next_id("Scenario", "scenario_id")
    catalog.tables["Scenario"].append(
        {
            "scenario_id": scenario_id,
            "behavior_id": behavior_id,
            "label_sequence": text,
            "name": name,
        }
    )
    return scenario_id


def set_scenario_name(catalog: Catalog, scenario_id: int, name: str) -> None:
    row = catalog.find_one("Scenario", scenario_id=scenario_id)
    if row is None:
        raise NotFoundError(f"scenario id {scenario_id} not found")
    clash = catalog.find_one("Scenario", name=name)
    if clash is not None and clash["scenario_id"] != scenario_id:
        raise IntegrityError(f"scenario name '{name}' is already taken")
    row["name"] = name


def replace_scenario_instances(
    catalog: Catalog,
    bag_id: str,
    behavior_id: int,
    windows: Sequence[tuple[int, int, int]],
) -> list[int]:
    """Set a bag's scenario windows for one behavior to (scenario_id, start, end) triples."""
    behavior_scenarios = {
        row["scenario_id"]
        for row in catalog.find_all("Scenario", behavior_id=behavior_id)
    }
    catalog.tables["ScenarioInstance"] = [
        row
        for row in catalog.tables["ScenarioInstance"]
        if not (row["bag_id"] == bag_id and row["scenario_id"] in behavior_scenarios)
    ]
    instance_ids = []
    for scenario_id, start, end in windows:
        if scenario_id not in behavior_scenarios:
            raise IntegrityError(f"scenario id {scenario_id} does not belong to the behavior")
        instance_id = catalog.next_id("ScenarioInstance", "instance_id")
        instance_ids.append(instance_id)
        catalog.tables["ScenarioInstance"].append(
            {
                "instance_id": instance_id,
                "scenario_id": scenario_id,
                "bag_id": bag_id,
                "start_frame": int(start),
                "end_frame": int(end),
            }
        )
    return instance_ids


@dataclass(frozen=True)
class ScenarioWindow:
    """One query hit: a frame window of a bag with the requested channel data."""

    bag_id: str
    scenario_id: int
    start_frame: int
    end_frame: int
    channels: dict[str, np.ndarray]


def query_by_scenario(
    catalog: Catalog, scenario: str | Sequence[int], channels: Sequence[str]
) -> list[ScenarioWindow]:
    """Every window of the named scenario with the requested channels' samples."""
    if not channels:
        raise ParameterError("at least one channel selector is required")
    if isinstance(scenario, str):
        matches = [r for r in catalog.tables["Scenario"] if r["name"] == scenario]
        if not matches:
            matches = [
                r for r in catalog.tables["Scenario"] if r["label_sequence"] == scenario
            ]
    else:
        text = sequence_text(scenario)
        matches = [r for r in catalog.tables["Scenario"] if r["label_sequence"] == text]
    if not matches:
        raise NotFoundError(f"scenario '{scenario}' not found in catalog")
    scenario_ids = {r["scenario_id"] for r in matches}

    windows = sorted(
        (
            row
            for row in catalog.tables["ScenarioInstance"]
            if row["scenario_id"] in scenario_ids
        ),
        key=lambda r: (r["bag_id"], r["start_frame"]),
    )
    results = []
    bags: dict[str, TimeSeriesBag] = {}
    for row in windows:
        bag_id = row["bag_id"]
        if bag_id not in bags:
            bags[bag_id] = load_bag(catalog, bag_id)
        bag = bags[bag_id]
        index = {ch: i for i, ch in enumerate(bag.channels)}
        for channel in channels:
            if channel not in index:
                raise ParameterError(f"channel '{channel}' not present in bag '{bag_id}'")
        lo, hi = row["start_frame"], row["end_frame"] + 1
        results.append(
            ScenarioWindow(
                bag_id=bag_id,
                scenario_id=row["scenario_id"],
                start_frame=row["start_frame"],
                end_frame=row["end_frame"],
                channels={ch: np.array(bag.data[index[ch], lo:hi]) for ch in channels},
            )
        )
    return results


# -- export ---------------------------------------------------------------------


def export_bag(
    catalog: Catalog,
    bag_id: str,
    out_dir: str | Path,
    channels: Sequence[str] | None = None,
) -> dict:
    """Write one CSV per sensor plus a manifest, bit-exact re-ingestable.

    Timestamps are regenerated as start + k/rate with the same arithmetic the
    resampler uses, and every value uses the shortest round-trip rendering, so
    re-ingesting the export reproduces identical Sample rows.
    """
    if channels is not None and len(channels) == 0:
        raise ParameterError("empty channel selection")
    bag = load_bag(catalog, bag_id)
    selected = tuple(channels) if channels is not None else bag.channels
    index = {ch: i for i, ch in enumerate(bag.channels)}
    for channel in selected:
        if channel not in index:
            raise ParameterError(f"channel '{channel}' not present in bag '{bag_id}'")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    times = bag.start_time + np.arange(bag.n_frames) * (1.0 / bag.rate_hz)
    topics = []
    files = []
    for topic, topic_channels in _sensor_groups(selected):
        columns = [split_selector(ch)[1] for ch in topic_channels]
        path = out_dir / f"{topic}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(["timestamp"] + columns) + "\n")
            for frame in range(bag.n_frames):
                cells = [render_float(times[frame])]
                cells += [
                    render_float(bag.data[index[ch], frame]) for ch in topic_channels
                ]
                fh.write(",".join(cells) + "\n")
        topics.append({"topic_name": topic, "file": path.name})
        files.append(path)
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(
            {"bag_id": bag_id, "topics": topics, "start_time": bag.start_time},
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return {"manifest": manifest_path, "files": files}


# -- integrity -------------------------------------------------------------------


def check_integrity(catalog: Catalog) -> list[str]:
    """Full-scan referential integrity check; returns violation descriptions."""
    problems = []
    datasets = {r["dataset_id"] for r in catalog.tables["Dataset"]}
    bags = {r["bag_id"] for r in catalog.tables["Bag"]}
    sensors = {r["sensor_id"] for r in catalog.tables["Sensor"]}
    behaviors = {r["behavior_id"] for r in catalog.tables["Behavior"]}
    primitives = {r["primitive_id"] for r in catalog.tables["Primitive"]}
    scenarios = {r["scenario_id"] for r in catalog.tables["Scenario"]}
    for row in catalog.tables["Bag"]:
        if row["dataset_id"] not in datasets:
            problems.append(f"Bag {row['bag_id']} references missing dataset")
    for row in catalog.tables["Sensor"]:
        if row["bag_id"] not in bags:
            problems.append(f"Sensor {row['sensor_id']} references missing bag")
    for row in catalog.tables["Sample"]:
        if row["sensor_id"] not in sensors:
            problems.append("Sample references missing sensor")
            break
    for row in catalog.tables["Primitive"]:
        if row["behavior_id"] not in behaviors:
            problems.append(f"Primitive {row['primitive_id']} references missing behavior")
    for row in catalog.tables["PrimitiveInstance"]:
        if row["primitive_id"] not in primitives:
            problems.append(f"PrimitiveInstance {row['instance_id']} references missing primitive")
        if row["bag_id"] not in bags:
            problems.append(f"PrimitiveInstance {row['instance_id']} references missing bag")
        if row["end_frame"] < row["start_frame"]:
            problems.append(f"PrimitiveInstance {row['instance_id']} has end < start")
    for row in catalog.tables["Scenario"]:
        if row["behavior_id"] not in behaviors:
            problems.append(f"Scenario {row['scenario_id']} references missing behavior")
    for row in catalog.tables["ScenarioInstance"]:
        if row["scenario_id"] not in scenarios:
            problems.append(f"ScenarioInstance {row['instance_id']} references missing scenario")
        if row["bag_id"] not in bags:
            problems.append(f"ScenarioInstance {row['instance_id']} references missing bag")
    return problems
