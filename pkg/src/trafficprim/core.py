"""Domain types and the deterministic mathematics of the generative model.

A trip is a d-channel, T-frame observation matrix. Hidden behavior runs are
modeled by a hidden Markov chain whose transition rows carry a hierarchical
Dirichlet prior with an extra self-transition bias, truncated to L states for
computation. Emissions are multivariate Gaussian with a conjugate
Normal-Inverse-Wishart prior.

Everything here is pure given an explicit ``numpy.random.Generator``; values
are immutable after construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError

LOG_2PI = math.log(2.0 * math.pi)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def spd_cholesky(mat: np.ndarray, jitter_scale: float = 1e-9) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    On factorization failure a single retry is made with ``jitter_scale *
    trace/d`` added to the diagonal; a second failure raises NumericError
    reporting the offending (smallest) eigenvalue.
    """
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    d = mat.shape[0]
    jitter = jitter_scale * float(np.trace(mat)) / d
    try:
        return np.linalg.cholesky(mat + jitter * np.eye(d))
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(mat)[0])
        raise NumericError(
            f"matrix is not positive definite (smallest eigenvalue {smallest:.6e})"
        ) from None


@dataclass(frozen=True)
class TimeSeriesBag:
    """One trip's aligned multichannel series: a d x T matrix plus metadata."""

    bag_id: str
    channels: tuple[str, ...]
    rate_hz: float
    start_time: float
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ParameterError("bag data must be a 2-d (channels x frames) matrix")
        if data.shape[0] != len(self.channels):
            raise ParameterError(
                f"data has {data.shape[0]} rows but {len(self.channels)} channel names"
            )
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ParameterError("bag needs at least one channel and one frame")
        if len(set(self.channels)) != len(self.channels):
            raise ParameterError("channel names must be unique")
        if not np.all(np.isfinite(data)):
            raise ParameterError("bag data contains non-finite values")
        if not self.rate_hz > 0:
            raise ParameterError("rate_hz must be positive")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NiwPrior:
    """Normal-Inverse-Wishart prior over a Gaussian's mean and covariance."""

    mean0: np.ndarray
    scale0: float
    dof0: float
    psi0: np.ndarray

    def __post_init__(self):
        mean0 = np.asarray(self.mean0, dtype=float).ravel()
        psi0 = np.asarray(self.psi0, dtype=float)
        d = mean0.shape[0]
        if psi0.shape != (d, d):
            raise ParameterError(f"psi0 must be {d}x{d} to match mean0")
        if not np.allclose(psi0, psi0.T, atol=1e-10):
            raise ParameterError("psi0 must be symmetric")
        if not self.scale0 > 0:
            raise ParameterError("scale0 must be positive")
        if not self.dof0 > d - 1:
            raise ParameterError(f"dof0 must exceed d-1 = {d - 1}")
        spd_cholesky(psi0)  # raises NumericError if not positive definite
        object.__setattr__(self, "mean0", _freeze(mean0))
        object.__setattr__(self, "psi0", _freeze(psi0))

    @property
    def dim(self) -> int:
        return self.mean0.shape[0]


def default_niw_prior(data: np.ndarray) -> NiwPrior:
    """Data-derived prior: empirical channel means and covariance of the bag.

    A small ridge is added when the empirical covariance is singular (e.g. a
    constant series), keeping the prior well defined.
    """
    data = np.asarray(data, dtype=float)
    d = data.shape[0]
    mean0 = data.mean(axis=1)
    psi0 = np.cov(data, bias=True) if data.shape[1] > 1 else np.zeros((d, d))
    psi0 = np.atleast_2d(psi0)
    try:
        spd_cholesky(psi0)
    except NumericError:
        ridge = 1e-6 * max(float(np.trace(psi0)) / d, 1.0)
        psi0 = psi0 + ridge * np.eye(d)
    return NiwPrior(mean0=mean0, scale0=1.0, dof0=d + 2.0, psi0=psi0)


@dataclass(frozen=True)
class HyperParams:
    """Concentrations and truncation of the hierarchical sticky prior.

    Defaults: gamma=1, alpha=1 and kappa=9, which puts self-transition bias
    kappa/(alpha+kappa) = 0.9 on every row; emission_prior=None means "derive
    from the data" (see default_niw_prior). diag_cov restricts emission
    covariances to diagonal matrices.
    """

    gamma: float = 1.0
    alpha: float = 1.0
    kappa: float = 9.0
    truncation_L: int = 20
    emission_prior: NiwPrior | None = None
    diag_cov: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ParameterError("gamma must be positive")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if self.kappa < 0:
            raise ParameterError("kappa must be nonnegative")
        if int(self.truncation_L) < 1:
            raise ParameterError("truncation_L must be at least 1")
        object.__setattr__(self, "truncation_L", int(self.truncation_L))


@dataclass(frozen=True)
class GaussianEmission:
    """A single state's emission distribution: mean vector and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ParameterError(f"cov must be {d}x{d} to match mean")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ParameterError("cov must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            smallest = float(np.linalg.eigvalsh(cov)[0])
            raise NumericError(
                f"covariance is not positive definite (smallest eigenvalue {smallest:.6e})"
            ) from None
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "cov", _freeze(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ModelState:
    """One posterior sample: global weights, transition rows, emissions, labels.

    beta has L+1 entries (the last is the unallocated remainder mass), pi is
    L x L row-stochastic, labels are 1-based state indices of length T.
    """

    beta: np.ndarray
    pi: np.ndarray
    emissions: tuple[GaussianEmission, ...]
    labels: np.ndarray
    log_joint: float

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        pi = np.asarray(self.pi, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        L = pi.shape[0]
        if pi.shape != (L, L):
            raise ParameterError("pi must be square")
        if beta.shape[0] != L + 1:
            raise ParameterError("beta must have L+1 entries (weights plus remainder)")
        if len(self.emissions) != L:
            raise ParameterError("need one emission per state")
        if np.any(beta < 0) or abs(beta.sum() - 1.0) > 1e-12:
            raise ParameterError("beta entries must be nonnegative and sum to 1")
        if np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12) or np.any(pi < 0):
            raise ParameterError("every pi row must be a probability vector")
        if labels.size and (labels.min() < 1 or labels.max() > L):
            raise ParameterError(f"labels must lie in [1, {L}]")
        object.__setattr__(self, "beta", _freeze(beta))
        object.__setattr__(self, "pi", _freeze(pi))
        object.__setattr__(self, "emissions", tuple(self.emissions))
        lab = np.array(labels, copy=True)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    def initial_distribution(self) -> np.ndarray:
        """Initial state probabilities: uniform over the truncated states.

        The model defines no separate initial row; a uniform start keeps every
        sequence's score finite and shifts all joint scores by the same
        constant, so MAP ranking is unaffected.
        """
        return np.full(self.n_states, 1.0 / self.n_states)


def runs_of(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal constant runs of a label sequence as (label, start, end) triples."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        return []
    breaks = np.nonzero(np.diff(labels))[0]
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [labels.size - 1]])
    return [(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def stick_breaking(gamma: float, L: int, rng: np.random.Generator) -> np.ndarray:
    """Break a unit stick L times with Beta(1, gamma) fractions.

    Returns L weights plus the remaining (unbroken) mass, so the output has
    L+1 entries summing to 1.
    """
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    if L < 1:
        raise ParameterError("L must be at least 1")
    v = rng.beta(1.0, gamma, size=L)
    tail = np.cumprod(1.0 - v)
    beta = np.empty(L + 1)
    beta[0] = v[0]
    beta[1:L] = v[1:] * tail[:-1]
    beta[L] = tail[-1]
    return beta


def sticky_row_concentration(
    alpha: float, beta: np.ndarray, kappa: float, i: int
) -> np.ndarray:
    """Dirichlet concentration of transition row i: alpha*beta plus kappa on i.

    ``beta`` holds the L truncated weights (remainder excluded); ``i`` is a
    1-based state index.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    if kappa < 0:
        raise ParameterError("kappa must be nonnegative")
    if not 1 <= i <= beta.shape[0]:
        raise ParameterError(f"state index {i} outside [1, {beta.shape[0]}]")
    conc = alpha * beta
    conc[i - 1] += kappa
    return conc


def gaussian_logpdf(x: np.ndarray, emission: GaussianEmission) -> float:
    """log N(x; mean, cov) for a single observation vector."""
    x = np.asarray(x, dtype=float).ravel()
    d = emission.dim
    if x.shape[0] != d:
        raise ParameterError(f"x has dimension {x.shape[0]}, emission has {d}")
    chol = spd_cholesky(emission.cov)
    diff = x - emission.mean
    y = np.linalg.solve(chol, diff)
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    return float(-0.5 * (d * LOG_2PI + log_det + y @ y))


def emission_log_likelihoods(
    data: np.ndarray, emissions: tuple[GaussianEmission, ...]
) -> np.ndarray:
    """T x L matrix of per-frame log densities under each state's Gaussian."""
    d, T = data.shape
    L = len(emissions)
    out = np.empty((T, L))
    for k, em in enumerate(emissions):
        chol = spd_cholesky(em.cov)
        diff = data - em.mean[:, None]
        y = np.linalg.solve(chol, diff)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        out[:, k] = -0.5 * (d * LOG_2PI + log_det + np.einsum("it,it->t", y, y))
    return out


def sequence_score(
    data: np.ndarray,
    pi: np.ndarray,
    emissions: tuple[GaussianEmission, ...],
    labels: np.ndarray,
    initial: np.ndarray,
) -> float:
    """joint_log_likelihood on raw parts (1-based labels), shared by the sampler."""
    labels0 = np.asarray(labels, dtype=np.int64) - 1
    T = data.shape[1]
    if labels0.shape[0] != T:
        raise ParameterError("labels length must equal the frame count")
    initial = np.asarray(initial, dtype=float).ravel()
    if initial.shape[0] != pi.shape[0]:
        raise ParameterError("initial distribution length must equal L")
    with np.errstate(divide="ignore"):
        log_initial = np.log(initial)
        log_pi = np.log(pi)
    total = log_initial[labels0[0]]
    if T > 1:
        total = total + log_pi[labels0[:-1], labels0[1:]].sum()
    if total == -np.inf:
        return float("-inf")
    ll = emission_log_likelihoods(data, emissions)
    return float(total + ll[np.arange(T), labels0].sum())


def joint_log_likelihood(
    bag: TimeSeriesBag, state: ModelState, initial: np.ndarray
) -> float:
    """log p(labels, observations | pi, theta, initial).

    A label sequence using an exact-zero transition (or initial) probability
    scores -inf rather than raising, so samplers can rank candidates uniformly.
    """
    return sequence_score(bag.data, state.pi, state.emissions, state.labels, initial)


def simulate(
    pi: np.ndarray,
    emissions: tuple[GaussianEmission, ...],
    initial: np.ndarray,
    T: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a label path from the Markov chain and Gaussian observations for it.

    Returns (labels, data) with 1-based labels of length T and a d x T matrix.
    """
    pi = np.asarray(pi, dtype=float)
    initial = np.asarray(initial, dtype=float).ravel()
    L = pi.shape[0]
    if pi.shape != (L, L) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
        raise ParameterError("pi must be square and row-stochastic")
    if initial.shape[0] != L or abs(initial.sum() - 1.0) > 1e-9:
        raise ParameterError("initial must be a length-L probability vector")
    if len(emissions) != L:
        raise ParameterError("need one emission per state")
    if T < 1:
        raise ParameterError("T must be at least 1")
    d = emissions[0].dim

    labels0 = np.empty(T, dtype=np.int64)
    u = rng.random(T)
    labels0[0] = np.searchsorted(np.cumsum(initial), u[0], side="right")
    cum_rows = np.cumsum(pi, axis=1)
    for t in range(1, T):
        labels0[t] = np.searchsorted(cum_rows[labels0[t - 1]], u[t], side="right")
    np.clip(labels0, 0, L - 1, out=labels0)

    noise = rng.standard_normal((d, T))
    data = np.empty((d, T))
    for k in range(L):
        mask = labels0 == k
        if not mask.any():
            continue
        chol = spd_cholesky(emissions[k].cov)
        data[:, mask] = emissions[k].mean[:, None] + chol @ noise[:, mask]
    return labels0 + 1, data
