"""Unification: filter noisy primitives, merge statistical twins, compose scenarios.

Works on per-frame primitive-id sequences rebuilt from the catalog, keeps every
bag tiled end to end, and writes the consolidated primitives, scenarios and
scenario windows back through the store layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import store
from .core import GaussianEmission, runs_of, spd_cholesky
from .errors import ParameterError
from .store import Catalog


@dataclass(frozen=True)
class UnifyConfig:
    """Thresholds for the unification pass (JSON keys match field names)."""

    min_duration_s: float = 0.5
    min_occurrences: int = 2
    merge_threshold: float = 1.0
    window_runs: int = 1

    def __post_init__(self):
        if self.min_duration_s < 0:
            raise ParameterError("min_duration_s must be nonnegative")
        if self.min_occurrences < 1:
            raise ParameterError("min_occurrences must be at least 1")
        if self.merge_threshold < 0:
            raise ParameterError("merge_threshold must be nonnegative")
        if self.window_runs < 1:
            raise ParameterError("window_runs must be at least 1")

    @classmethod
    def from_json(cls, doc: dict) -> "UnifyConfig":
        known = {"min_duration_s", "min_occurrences", "merge_threshold", "window_runs"}
        unknown = set(doc) - known
        if unknown:
            raise ParameterError(f"unknown unify config keys: {sorted(unknown)}")
        return cls(**doc)


def filter_short_runs(
    labels: np.ndarray, rate_hz: float, min_duration_s: float
) -> np.ndarray:
    """Absorb every run shorter than ceil(min_duration_s * rate_hz) frames.

    Short runs take the preceding run's label; a short first run takes the
    following run's label. Repeats until stable. A single-run input (nothing
    to absorb into) comes back unchanged.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ParameterError("labels must be nonempty")
    min_frames = math.ceil(min_duration_s * rate_hz)
    if min_frames <= 1:
        return labels.copy()
    runs = [[label, end - start + 1] for label, start, end in runs_of(labels)]
    while len(runs) > 1:
        short = next((i for i, (_, length) in enumerate(runs) if length < min_frames), None)
        if short is None:
            break
        if short == 0:
            runs[1][1] += runs[0][1]
            del runs[0]
        else:
            runs[short - 1][1] += runs[short][1]
            del runs[short]
            if short < len(runs) and runs[short][0] == runs[short - 1][0]:
                runs[short - 1][1] += runs[short][1]
                del runs[short]
    return np.repeat([lab for lab, _ in runs], [length for _, length in runs])


def primitive_distance(a: GaussianEmission, b: GaussianEmission) -> float:
    """Symmetric KL divergence between two Gaussian primitives."""
    if a.dim != b.dim:
        raise ParameterError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return _gaussian_kl(a, b) + _gaussian_kl(b, a)


def _gaussian_kl(a: GaussianEmission, b: GaussianEmission) -> float:
    d = a.dim
    chol_a = spd_cholesky(a.cov)
    chol_b = spd_cholesky(b.cov)
    half = np.linalg.solve(chol_b, a.cov)
    trace_term = float(np.trace(np.linalg.solve(chol_b, half.T)))
    w = np.linalg.solve(chol_b, b.mean - a.mean)
    quad = float(w @ w)
    log_det_ratio = 2.0 * float(
        np.log(np.diag(chol_b)).sum() - np.log(np.diag(chol_a)).sum()
    )
    return 0.5 * (trace_term + quad - d + log_det_ratio)


@dataclass(frozen=True)
class PrimitiveStats:
    """A primitive's Gaussian plus its frame weight for pooled merging."""

    emission: GaussianEmission
    weight: float


def pooled_emission(parts: Sequence[PrimitiveStats]) -> GaussianEmission:
    """Frame-count-weighted moment match of several Gaussians."""
    total = sum(p.weight for p in parts)
    if total <= 0:
        raise ParameterError("pooled weight must be positive")
    mean = sum(p.weight * p.emission.mean for p in parts) / total
    second = sum(
        p.weight * (p.emission.cov + np.outer(p.emission.mean, p.emission.mean))
        for p in parts
    ) / total
    return GaussianEmission(mean=mean, cov=second - np.outer(mean, mean))


def merge_primitives(
    stats: Mapping[int, PrimitiveStats], threshold: float
) -> dict[int, int]:
    """Agglomerate primitives closer than the threshold; id -> canonical id.

    Repeatedly merges the closest pair (recomputing the pooled Gaussian after
    each merge), breaking ties by lowest id pair; the canonical id of a group
    is its lowest member id. The result is a projection.
    """
    if not stats:
        raise ParameterError("at least one primitive is required")
    members: dict[int, list[int]] = {pid: [pid] for pid in stats}
    current: dict[int, PrimitiveStats] = dict(stats)
    while len(current) > 1:
        ids = sorted(current)
        best: tuple[float, int, int] | None = None
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                dist = primitive_distance(current[a].emission, current[b].emission)
                if best is None or dist < best[0]:
                    best = (dist, a, b)
        if best is None or best[0] >= threshold:
            break
        _, a, b = best
        parts = [current[a], current[b]]
        current[a] = PrimitiveStats(
            emission=pooled_emission(parts), weight=parts[0].weight + parts[1].weight
        )
        members[a].extend(members.pop(b))
        del current[b]
    mapping = {}
    for canonical, group in members.items():
        for pid in group:
            mapping[pid] = canonical
    return mapping


def absorb_labels(labels: np.ndarray, drop: set[int]) -> np.ndarray:
    """Absorb runs whose label is dropped into the preceding kept run.

    Leading dropped runs take the first kept run's label. If every run is
    dropped the input comes back unchanged.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    kept: list[list[int]] = []
    prefix = 0
    for label, start, end in runs_of(labels):
        length = end - start + 1
        if label in drop:
            if kept:
                kept[-1][1] += length
            else:
                prefix += length
        else:
            if kept and kept[-1][0] == label:
                kept[-1][1] += length + prefix
            else:
                kept.append([label, length + prefix])
            prefix = 0
    if not kept:
        return labels.copy()
    if prefix:  # trailing dropped runs after the last kept one
        kept[-1][1] += prefix
    return np.repeat([lab for lab, _ in kept], [length for _, length in kept])


def compose_scenarios(
    labels: np.ndarray, window_runs: int = 1
) -> list[tuple[tuple[int, ...], tuple[int, int]]]:
    """Chunk a bag's runs into windows of window_runs consecutive runs.

    Returns (label_sequence, (start_frame, end_frame)) per window; the final
    window may hold fewer runs. Windows tile the bag exactly.
    """
    if window_runs < 1:
        raise ParameterError("window_runs must be at least 1")
    runs = runs_of(labels)
    out = []
    for i in range(0, len(runs), window_runs):
        chunk = runs[i : i + window_runs]
        sequence = tuple(label for label, _, _ in chunk)
        out.append((sequence, (chunk[0][1], chunk[-1][2])))
    return out


def unify_behavior(catalog: Catalog, behavior: str, config: UnifyConfig) -> dict:
    """Run the full unification pass for one behavior, in place.

    Per bag: duration-filter the primitive-id sequence, merge statistically
    similar primitives across bags, absorb primitives rarer than
    min_occurrences, rewrite the Primitive/PrimitiveInstance tables, and
    compose scenario windows of window_runs runs each.
    """
    behavior_row = store.get_behavior_row(catalog, behavior)
    behavior_id = behavior_row["behavior_id"]
    primitive_rows = {
        row["primitive_id"]: row
        for row in catalog.find_all("Primitive", behavior_id=behavior_id)
    }
    bag_ids = sorted(
        {
            row["bag_id"]
            for row in catalog.tables["PrimitiveInstance"]
            if row["primitive_id"] in primitive_rows
        }
    )
    primitives_before = len(primitive_rows)

    sequences: dict[str, np.ndarray] = {}
    for bag_id in bag_ids:
        labels = store.bag_primitive_labels(catalog, bag_id, behavior_id)
        rate = store.get_bag_row(catalog, bag_id)["rate_hz"]
        sequences[bag_id] = filter_short_runs(labels, rate, config.min_duration_s)

    # merge on post-filter frame weights; primitives filtered away entirely drop out
    weights: dict[int, int] = {}
    for labels in sequences.values():
        for pid, count in zip(*np.unique(labels, return_counts=True)):
            weights[int(pid)] = weights.get(int(pid), 0) + int(count)
    stats = {
        pid: PrimitiveStats(
            emission=store.primitive_emission(primitive_rows[pid]), weight=w
        )
        for pid, w in weights.items()
    }
    mapping = merge_primitives(stats, config.merge_threshold) if stats else {}
    for bag_id, labels in sequences.items():
        remapped = np.asarray([mapping[int(v)] for v in labels], dtype=np.int64)
        sequences[bag_id] = remapped

    occurrences: dict[int, int] = {}
    for labels in sequences.values():
        for pid, _, _ in runs_of(labels):
            occurrences[pid] = occurrences.get(pid, 0) + 1
    rare = {pid for pid, count in occurrences.items() if count < config.min_occurrences}
    if rare:
        for bag_id, labels in sequences.items():
            sequences[bag_id] = absorb_labels(labels, rare)

    # pooled stats per canonical primitive from its surviving members
    groups: dict[int, list[int]] = {}
    for pid, canonical in mapping.items():
        groups.setdefault(canonical, []).append(pid)
    final_counts: dict[int, int] = {}
    final_runs: dict[int, int] = {}
    for labels in sequences.values():
        for pid, count in zip(*np.unique(labels, return_counts=True)):
            final_counts[int(pid)] = final_counts.get(int(pid), 0) + int(count)
        for pid, _, _ in runs_of(labels):
            final_runs[pid] = final_runs.get(pid, 0) + 1

    new_primitives = []
    for canonical in sorted(final_counts):
        emission = pooled_emission([stats[pid] for pid in sorted(groups[canonical])])
        row = dict(primitive_rows[canonical])
        row["mean_vector"] = store.render_vector(emission.mean)
        row["cov_matrix"] = store.render_matrix(emission.cov)
        row["total_frames"] = final_counts[canonical]
        row["occurrence_count"] = final_runs[canonical]
        new_primitives.append(row)

    surviving = set(final_counts)
    catalog.tables["Primitive"] = [
        row
        for row in catalog.tables["Primitive"]
        if row["behavior_id"] != behavior_id
    ] + new_primitives
    catalog.tables["PrimitiveInstance"] = [
        row
        for row in catalog.tables["PrimitiveInstance"]
        if row["primitive_id"] not in primitive_rows
    ]
    for bag_id in bag_ids:
        for pid, start, end in runs_of(sequences[bag_id]):
            catalog.tables["PrimitiveInstance"].append(
                {
                    "instance_id": catalog.next_id("PrimitiveInstance", "instance_id"),
                    "primitive_id": pid,
                    "bag_id": bag_id,
                    "start_frame": start,
                    "end_frame": end,
                }
            )

    n_windows = 0
    for bag_id in bag_ids:
        windows = []
        for sequence, (start, end) in compose_scenarios(
            sequences[bag_id], config.window_runs
        ):
            scenario_id = store.ensure_scenario(catalog, behavior_id, sequence)
            windows.append((scenario_id, start, end))
        store.replace_scenario_instances(catalog, bag_id, behavior_id, windows)
        n_windows += len(windows)

    return {
        "behavior": behavior_row["name"],
        "bags": len(bag_ids),
        "primitives_before": primitives_before,
        "primitives_after": len(surviving),
        "scenarios": len(catalog.find_all("Scenario", behavior_id=behavior_id)),
        "scenario_instances": n_windows,
    }
