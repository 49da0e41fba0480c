"""Pipeline orchestration: the operations behind the service endpoints.

Each function takes plain values, works on a catalog directory, and returns a
JSON-serializable dict. All of them are deterministic given their inputs and
seeds.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import store, testkit
from .core import HyperParams, NiwPrior, TimeSeriesBag
from .errors import ParameterError, ParseError
from .ingest import (
    DEFAULT_MAX_GAP_S,
    BehaviorDef,
    load_bag_manifest,
    native_rate_hz,
    parse_topic_csv,
    resample_uniform,
)
from .inference import GibbsConfig, fit
from .store import Catalog, write_session
from .unify import UnifyConfig, unify_behavior


def _load_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("config file not found", source=str(path)) from None
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON: {err.msg}", source=str(path), line=err.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object", source=str(path))
    return doc


def gibbs_config_from_json(doc: dict, seed_override: int | None = None) -> GibbsConfig:
    """Build a GibbsConfig from the documented JSON keys."""
    known = {"iterations", "burn_in", "seed", "store_every", "hyper"}
    unknown = set(doc) - known
    if unknown:
        raise ParameterError(f"unknown gibbs config keys: {sorted(unknown)}")
    hyper_doc = dict(doc.get("hyper", {}))
    hyper_known = {"gamma", "alpha", "kappa", "truncation_L", "emission_prior", "diag_cov"}
    hyper_unknown = set(hyper_doc) - hyper_known
    if hyper_unknown:
        raise ParameterError(f"unknown hyper keys: {sorted(hyper_unknown)}")
    prior_doc = hyper_doc.pop("emission_prior", None)
    if prior_doc is not None:
        hyper_doc["emission_prior"] = NiwPrior(
            mean0=np.asarray(prior_doc["mean0"], dtype=float),
            scale0=float(prior_doc["scale0"]),
            dof0=float(prior_doc["dof0"]),
            psi0=np.asarray(prior_doc["psi0"], dtype=float),
        )
    hyper = HyperParams(**hyper_doc)
    fields = {k: doc[k] for k in ("iterations", "burn_in", "seed", "store_every") if k in doc}
    if seed_override is not None:
        fields["seed"] = int(seed_override)
    return GibbsConfig(hyper=hyper, **fields)


def _auto_behavior(manifest_path: str | Path) -> BehaviorDef:
    """Behavior derived from the manifest itself: every channel, at the slowest
    topic's native rate (so resampling never upsamples)."""
    bag_id, topic_files, _ = load_bag_manifest(manifest_path)
    topics = [parse_topic_csv(file, topic_name=name) for name, file in topic_files]
    channels = []
    for topic in topics:
        channels += [f"{topic.topic_name}.{column}" for column in topic.columns]
    rate = min(native_rate_hz(topic) for topic in topics)
    return BehaviorDef(name="", required_channels=tuple(channels), target_rate_hz=rate)


def ingest_command(
    manifest_path: str,
    catalog_dir: str,
    behavior: str,
    dataset: str = "default",
    max_gap_s: float = DEFAULT_MAX_GAP_S,
) -> dict:
    """Parse, resample and insert one bag; registers the behavior on first use."""
    with write_session(catalog_dir, create=True) as catalog:
        row = store.find_behavior(catalog, behavior)
        created = row is None
        if row is None:
            auto = _auto_behavior(manifest_path)
            behavior_def = BehaviorDef(
                name=behavior,
                required_channels=auto.required_channels,
                target_rate_hz=auto.target_rate_hz,
            )
            store.ensure_behavior(
                catalog, behavior, behavior_def.required_channels, behavior_def.target_rate_hz
            )
        else:
            behavior_def = BehaviorDef(
                name=behavior,
                required_channels=store.behavior_channels(row),
                target_rate_hz=row["target_rate_hz"],
            )
        bag_id, topic_files, _ = load_bag_manifest(manifest_path)
        topics = [parse_topic_csv(file, topic_name=name) for name, file in topic_files]
        bag = resample_uniform(topics, behavior_def, bag_id=bag_id, max_gap_s=max_gap_s)
        store.insert_bag(catalog, bag, dataset=dataset)
    return {
        "bag_id": bag.bag_id,
        "behavior": behavior,
        "behavior_created": created,
        "frames": bag.n_frames,
        "channels": list(bag.channels),
        "rate_hz": bag.rate_hz,
    }


def _behavior_view(bag: TimeSeriesBag, channels: tuple[str, ...]) -> TimeSeriesBag:
    index = {ch: i for i, ch in enumerate(bag.channels)}
    missing = [ch for ch in channels if ch not in index]
    if missing:
        raise ParameterError(f"bag '{bag.bag_id}' lacks behavior channels {missing}")
    if channels == bag.channels:
        return bag
    rows = [index[ch] for ch in channels]
    return TimeSeriesBag(
        bag_id=bag.bag_id,
        channels=channels,
        rate_hz=bag.rate_hz,
        start_time=bag.start_time,
        data=bag.data[rows],
    )


def segment_command(
    catalog_dir: str,
    bag_id: str,
    behavior: str,
    config_path: str | None = None,
    seed: int | None = None,
) -> dict:
    """Gibbs-segment one bag and record its primitives; emits a plot-ready CSV."""
    config_doc = _load_json(config_path) if config_path else {}
    config = gibbs_config_from_json(config_doc, seed_override=seed)
    with write_session(catalog_dir) as catalog:
        behavior_row = store.get_behavior_row(catalog, behavior)
        bag = store.load_bag(catalog, bag_id)
        view = _behavior_view(bag, store.behavior_channels(behavior_row))
        summary = fit(view, config)
        labels = summary.map_state.labels
        used = sorted(np.unique(labels).tolist())
        emissions = {k: summary.map_state.emissions[k - 1] for k in used}
        instance_ids = store.record_primitives(
            catalog, bag_id, behavior_row["behavior_id"], labels, emissions
        )
        out_dir = Path(catalog_dir) / "segmentations"
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{bag_id}__{behavior_row['name']}.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            fh.write("frame_index,label\n")
            for frame, label in enumerate(labels):
                fh.write(f"{frame},{int(label)}\n")
    frame_counts = {
        str(k): int((labels == k).sum()) for k in used
    }
    return {
        "bag_id": bag_id,
        "behavior": behavior,
        "used_states": summary.used_states,
        "frame_counts": frame_counts,
        "segmentation_csv": str(csv_path),
        "log_joint": float(summary.map_state.log_joint),
        "samples_kept": summary.samples_kept,
        "instances": len(instance_ids),
    }


def unify_command(catalog_dir: str, behavior: str, config_path: str | None = None) -> dict:
    """Filter, merge and compose scenarios for every segmented bag of a behavior."""
    config_doc = _load_json(config_path) if config_path else {}
    config = UnifyConfig.from_json(config_doc)
    with write_session(catalog_dir) as catalog:
        summary = unify_behavior(catalog, behavior, config)
    return summary


def query_command(
    catalog_dir: str,
    scenario: str,
    channels: list[str],
    out_dir: str | None = None,
) -> dict:
    """Fetch every window of a scenario; optionally write one CSV per window."""
    catalog = Catalog.open(catalog_dir)
    windows = store.query_by_scenario(catalog, scenario, channels)
    reported = []
    out_path = Path(out_dir) if out_dir else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    for window in windows:
        file_name = None
        if out_path is not None:
            file_name = f"{window.bag_id}_{window.start_frame}_{window.end_frame}.csv"
            with (out_path / file_name).open("w", newline="", encoding="utf-8") as fh:
                fh.write(",".join(["frame_index"] + list(channels)) + "\n")
                frames = range(window.start_frame, window.end_frame + 1)
                for offset, frame in enumerate(frames):
                    cells = [str(frame)] + [
                        store.render_float(window.channels[ch][offset]) for ch in channels
                    ]
                    fh.write(",".join(cells) + "\n")
        reported.append(
            {
                "bag_id": window.bag_id,
                "scenario_id": window.scenario_id,
                "start_frame": window.start_frame,
                "end_frame": window.end_frame,
                "file": file_name,
            }
        )
    return {"count": len(windows), "windows": reported}


def synth_command(states: int, dims: int, frames: int, seed: int, out_dir: str) -> dict:
    """Write a reproducible synthetic maneuver bag plus its ground-truth labels."""
    trace = testkit.make_maneuver_trace(
        seed, n_regimes=states, n_channels=dims, n_frames=frames
    )
    written = testkit.write_trace_bag(trace, out_dir)
    return {
        "bag_id": written["bag_id"],
        "manifest": str(written["manifest"]),
        "truth": str(written["truth"]),
        "files": [str(p) for p in written["files"]],
        "frames": written["frames"],
        "rate_hz": written["rate_hz"],
        "regimes": written["regimes"],
    }


def behavior_command(
    catalog_dir: str, name: str, channels: list[str], target_rate_hz: float
) -> dict:
    """Register (or verify) a behavior definition explicitly."""
    BehaviorDef(name=name, required_channels=tuple(channels), target_rate_hz=target_rate_hz)
    with write_session(catalog_dir, create=True) as catalog:
        behavior_id = store.ensure_behavior(catalog, name, channels, target_rate_hz)
    return {
        "behavior_id": behavior_id,
        "name": name,
        "channels": list(channels),
        "target_rate_hz": float(target_rate_hz),
    }
