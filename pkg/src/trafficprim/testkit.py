"""Independent oracles and generators for verification.

Nothing here is used by the production pipeline except the synthetic trace
writer behind the synth command; the enumeration and matching oracles exist so
tests can check the sampler against exhaustive computation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (
    GaussianEmission,
    TimeSeriesBag,
    emission_log_likelihoods,
)
from .errors import ParameterError

SYNTH_RATE_HZ = 34.3
SYNTH_START_TIME = 1.6e9

# per-regime (angle, angle_cmd, torque, speed) means for the driving-like profile
_DRIVING_MEANS = np.array(
    [
        [0.45, 0.50, 1.2, 4.0],
        [0.00, 0.00, 0.0, 8.0],
        [0.12, 0.15, 0.5, 11.0],
        [0.00, 0.00, 0.0, 13.5],
        [-0.45, -0.50, -1.2, 6.0],
    ]
)
_DRIVING_NOISE = np.array([0.04, 0.04, 0.12, 0.25])
_DRIVING_CHANNELS = (
    "steering_wheel.angle",
    "steering_wheel.angle_cmd",
    "steering_wheel.torque",
    "vehicle.speed",
)


@dataclass(frozen=True)
class GroundTruthTrace:
    """A synthetic bag with its true per-frame regimes and generating model."""

    bag: TimeSeriesBag
    true_labels: np.ndarray
    generator: tuple[np.ndarray, tuple[GaussianEmission, ...], np.ndarray]

    def __post_init__(self):
        labels = np.asarray(self.true_labels, dtype=np.int64)
        if labels.shape[0] != self.bag.n_frames:
            raise ParameterError("true_labels length must equal the bag frame count")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "true_labels", labels)


def enumerate_marginals(
    bag: TimeSeriesBag | np.ndarray,
    pi: np.ndarray,
    emissions: tuple[GaussianEmission, ...],
    initial: np.ndarray,
    guard: int = 10**7,
) -> np.ndarray:
    """Exact per-frame posterior marginals by summing over all L^T sequences.

    Guarded at L^T <= guard; evaluation is chunked so memory stays bounded.
    """
    data = bag.data if isinstance(bag, TimeSeriesBag) else np.asarray(bag, dtype=float)
    T = data.shape[1]
    pi = np.asarray(pi, dtype=float)
    initial = np.asarray(initial, dtype=float).ravel()
    L = pi.shape[0]
    total = L**T
    if total > guard:
        raise ParameterError(f"L^T = {total} exceeds the enumeration guard {guard}")
    log_liks = emission_log_likelihoods(data, emissions)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_initial = np.log(initial)

    shape = (L,) * T
    t_index = np.arange(T)

    def block_scores(index_block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        labels = np.array(np.unravel_index(index_block, shape))  # (T, B)
        scores = log_initial[labels[0]] + log_liks[t_index[:, None], labels].sum(axis=0)
        if T > 1:
            scores = scores + log_pi[labels[:-1], labels[1:]].sum(axis=0)
        return labels, scores

    chunk = 200_000
    best = -np.inf
    for lo in range(0, total, chunk):
        _, scores = block_scores(np.arange(lo, min(lo + chunk, total)))
        best = max(best, float(scores.max()))
    marginals = np.zeros((T, L))
    for lo in range(0, total, chunk):
        labels, scores = block_scores(np.arange(lo, min(lo + chunk, total)))
        weights = np.exp(scores - best)
        for t in range(T):
            marginals[t] += np.bincount(labels[t], weights=weights, minlength=L)
    return marginals / marginals.sum(axis=1, keepdims=True)


def match_accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Best-assignment agreement between two unsupervised labelings, in [0, 1]."""
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if predicted.shape != truth.shape:
        raise ParameterError("label sequences must have equal length")
    truth_ids, truth_idx = np.unique(truth, return_inverse=True)
    pred_ids, pred_idx = np.unique(predicted, return_inverse=True)
    confusion = np.zeros((truth_ids.size, pred_ids.size))
    np.add.at(confusion, (truth_idx, pred_idx), 1.0)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / truth.size)


def _regime_boundaries(
    n_frames: int, n_regimes: int, rng: np.random.Generator
) -> np.ndarray:
    """Jittered near-even split of [0, n_frames) into n_regimes pieces."""
    base = n_frames // n_regimes
    if base < 4:
        raise ParameterError("too few frames for the requested number of regimes")
    cuts = []
    for k in range(1, n_regimes):
        jitter = int(rng.integers(-(base // 5), base // 5 + 1)) if base >= 5 else 0
        cuts.append(k * base + jitter)
    return np.asarray(cuts, dtype=np.int64)


def _regime_model(n_regimes: int, n_channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-regime means and per-channel noise scales."""
    if n_channels == 4 and n_regimes <= len(_DRIVING_MEANS):
        return _DRIVING_MEANS[:n_regimes].copy(), _DRIVING_NOISE.copy()
    means = np.zeros((n_regimes, n_channels))
    for k in range(n_regimes):
        means[k, k % n_channels] = 6.0 * (k + 1)
        means[k] += 0.5 * k
    return means, np.ones(n_channels)


def make_maneuver_trace(
    seed: int,
    n_regimes: int = 5,
    n_channels: int = 4,
    n_frames: int = 1180,
    rate_hz: float = SYNTH_RATE_HZ,
) -> GroundTruthTrace:
    """Synthetic trip passing through n_regimes well-separated regimes in order.

    The default shape is a four-channel steering/speed trace of ~1180 frames
    at ~34.3 Hz visiting five maneuvers. Regime means are piecewise constant
    with Gaussian channel noise; boundaries are seed-jittered and recorded as
    ground truth.
    """
    if n_regimes < 1 or n_channels < 1 or n_frames < 1:
        raise ParameterError("regimes, channels and frames must all be positive")
    rng = np.random.default_rng(int(seed))
    means, noise = _regime_model(n_regimes, n_channels)
    if n_regimes == 1:
        labels = np.ones(n_frames, dtype=np.int64)
    else:
        cuts = _regime_boundaries(n_frames, n_regimes, rng)
        labels = np.searchsorted(cuts, np.arange(n_frames), side="right") + 1
    data = means[labels - 1].T + noise[:, None] * rng.standard_normal(
        (n_channels, n_frames)
    )

    if n_channels == 4:
        channels = _DRIVING_CHANNELS
    else:
        channels = tuple(f"synth.c{j}" for j in range(n_channels))
    bag = TimeSeriesBag(
        bag_id=f"maneuver-{int(seed)}",
        channels=channels,
        rate_hz=rate_hz,
        start_time=SYNTH_START_TIME,
        data=data,
    )

    # nominal generating chain: visit regimes in order, expected run length T/K
    mean_run = max(n_frames / n_regimes, 2.0)
    pi = np.zeros((n_regimes, n_regimes))
    for k in range(n_regimes):
        if k == n_regimes - 1:
            pi[k, k] = 1.0
        else:
            pi[k, k] = 1.0 - 1.0 / mean_run
            pi[k, k + 1] = 1.0 / mean_run
    emissions = tuple(
        GaussianEmission(mean=means[k], cov=np.diag(noise**2)) for k in range(n_regimes)
    )
    initial = np.zeros(n_regimes)
    initial[0] = 1.0
    return GroundTruthTrace(bag=bag, true_labels=labels, generator=(pi, emissions, initial))


def write_trace_bag(trace: GroundTruthTrace, out_dir: str | Path) -> dict:
    """Write a trace as a manifest + per-topic CSV bag consumable by ingest,
    plus a truth.csv with the per-frame regime labels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bag = trace.bag
    times = bag.start_time + np.arange(bag.n_frames) * (1.0 / bag.rate_hz)

    groups: dict[str, list[int]] = {}
    for i, channel in enumerate(bag.channels):
        topic = channel.split(".", 1)[0]
        groups.setdefault(topic, []).append(i)

    topics = []
    files = []
    for topic, channel_rows in groups.items():
        columns = [bag.channels[i].split(".", 1)[1] for i in channel_rows]
        path = out_dir / f"{topic}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(["timestamp"] + columns) + "\n")
            for frame in range(bag.n_frames):
                cells = [repr(float(times[frame]))]
                cells += [repr(float(bag.data[i, frame])) for i in channel_rows]
                fh.write(",".join(cells) + "\n")
        topics.append({"topic_name": topic, "file": path.name})
        files.append(path)

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(
            {"bag_id": bag.bag_id, "topics": topics, "start_time": bag.start_time},
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    truth_path = out_dir / "truth.csv"
    with truth_path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("frame_index,label\n")
        for frame, label in enumerate(trace.true_labels):
            fh.write(f"{frame},{int(label)}\n")
    return {
        "manifest": manifest_path,
        "truth": truth_path,
        "files": files,
        "bag_id": bag.bag_id,
        "frames": bag.n_frames,
        "rate_hz": bag.rate_hz,
        "regimes": int(np.unique(trace.true_labels).size),
    }
