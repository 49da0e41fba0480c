"""Blocked Gibbs sampler for the sticky hierarchical-Dirichlet HMM.

Weak-limit approximation with L states. One sweep resamples, in order:

1. the whole label sequence jointly, by backward messages in log space
   followed by forward sampling;
2. per-state Gaussian emissions from their conjugate Normal-Inverse-Wishart
   full conditionals;
3. transition rows from Dirichlet full conditionals with the sticky bias on
   the diagonal;
4. the global weights, via auxiliary table counts with the sticky override
   correction.

A single chain is sequential; independent chains with distinct seeds are safe
to run concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    GaussianEmission,
    HyperParams,
    ModelState,
    NiwPrior,
    TimeSeriesBag,
    default_niw_prior,
    emission_log_likelihoods,
    sequence_score,
    spd_cholesky,
    stick_breaking,
)
from .errors import NumericError, ParameterError


@dataclass(frozen=True)
class GibbsConfig:
    """Sweep schedule for one sampling run."""

    iterations: int = 300
    burn_in: int = 150
    seed: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)
    store_every: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("iterations must be at least 1")
        if self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ParameterError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.store_every < 1:
            raise ParameterError("store_every must be at least 1")


@dataclass(frozen=True)
class PosteriorSummary:
    """Retained-sample summary of one run: MAP sample plus the score trace."""

    map_state: ModelState
    samples_kept: int
    log_joint_trace: np.ndarray
    used_states: int

    def __post_init__(self):
        trace = np.asarray(self.log_joint_trace, dtype=float)
        trace.setflags(write=False)
        object.__setattr__(self, "log_joint_trace", trace)
        if not 1 <= self.used_states <= self.map_state.n_states:
            raise ParameterError("used_states must lie in [1, L]")


def transition_counts(labels: np.ndarray, n_states: int) -> np.ndarray:
    """n_ij = number of t with labels[t-1] = i, labels[t] = j (1-based labels)."""
    idx = np.asarray(labels, dtype=np.int64) - 1
    if idx.size < 2:
        return np.zeros((n_states, n_states))
    flat = idx[:-1] * n_states + idx[1:]
    return np.bincount(flat, minlength=n_states * n_states).reshape(
        n_states, n_states
    ).astype(float)


def _dirichlet(conc: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw via normalized gammas; zero concentrations give exact zeros."""
    g = rng.gamma(np.asarray(conc, dtype=float), 1.0)
    total = g.sum()
    if total == 0.0:
        return np.full(g.shape, 1.0 / g.size)
    return g / total


def backward_messages(pi: np.ndarray, log_liks: np.ndarray) -> np.ndarray:
    """T x L backward messages in log space, m[T-1] = 0.

    m[t, k] = log sum_j pi[k, j] * exp(log_liks[t+1, j] + m[t+1, j]), with the
    inner vector max-normalized so no finite model underflows.
    """
    T, L = log_liks.shape
    msgs = np.zeros((T, L))
    with np.errstate(divide="ignore"):
        for t in range(T - 2, -1, -1):
            v = log_liks[t + 1] + msgs[t + 1]
            vmax = v.max()
            msgs[t] = np.log(pi @ np.exp(v - vmax)) + vmax
    return msgs


def _weighted_pick(
    cum_rows: np.ndarray, totals: np.ndarray, u: np.ndarray, n_states: int
) -> np.ndarray:
    """Categorical draws from cumulative unnormalized weight rows."""
    if np.any(totals == 0.0):
        raise NumericError("all-zero message vector during label sampling")
    drawn = (cum_rows < (u * totals)[:, None]).sum(axis=1)
    return np.minimum(drawn, n_states - 1)


def _forward_sample(
    pi: np.ndarray,
    log_liks: np.ndarray,
    msgs: np.ndarray,
    initial: np.ndarray,
    rng: np.random.Generator,
    n_paths: int,
) -> np.ndarray:
    """Sample n_paths label sequences given the backward messages (0-based)."""
    T, L = log_liks.shape
    labels = np.empty((n_paths, T), dtype=np.int64)
    v = log_liks[0] + msgs[0]
    w0 = initial * np.exp(v - v.max())
    labels[:, 0] = _weighted_pick(
        np.broadcast_to(np.cumsum(w0), (n_paths, L)),
        np.broadcast_to(w0.sum(), n_paths),
        rng.random(n_paths),
        L,
    )
    if n_paths == 1:
        # single chain: only the realized previous state's row is needed
        u = rng.random(T - 1) if T > 1 else np.empty(0)
        prev = int(labels[0, 0])
        for t in range(1, T):
            v = log_liks[t] + msgs[t]
            w = pi[prev] * np.exp(v - v.max())
            total = w.sum()
            if total == 0.0:
                raise NumericError("all-zero message vector during label sampling")
            prev = min(int((np.cumsum(w) < u[t - 1] * total).sum()), L - 1)
            labels[0, t] = prev
        return labels
    for t in range(1, T):
        v = log_liks[t] + msgs[t]
        table = pi * np.exp(v - v.max())[None, :]
        prev = labels[:, t - 1]
        cum = np.cumsum(table, axis=1)
        labels[:, t] = _weighted_pick(
            cum[prev], cum[:, -1][prev], rng.random(n_paths), L
        )
    return labels


def _label_paths(
    data: np.ndarray,
    pi: np.ndarray,
    emissions: tuple[GaussianEmission, ...],
    initial: np.ndarray,
    rng: np.random.Generator,
    n_paths: int,
) -> np.ndarray:
    log_liks = emission_log_likelihoods(data, emissions)
    msgs = backward_messages(pi, log_liks)
    return _forward_sample(
        pi, log_liks, msgs, np.asarray(initial, dtype=float), rng, n_paths
    ) + 1


def resample_labels(
    bag: TimeSeriesBag, state: ModelState, rng: np.random.Generator
) -> np.ndarray:
    """Draw the whole label sequence from its exact conditional given pi, theta."""
    return _label_paths(
        bag.data, state.pi, state.emissions, state.initial_distribution(), rng, 1
    )[0]


def sample_label_paths(
    bag: TimeSeriesBag, state: ModelState, rng: np.random.Generator, n_paths: int
) -> np.ndarray:
    """Batched resample_labels: n_paths independent draws sharing one message pass."""
    if n_paths < 1:
        raise ParameterError("n_paths must be at least 1")
    return _label_paths(
        bag.data, state.pi, state.emissions, state.initial_distribution(), rng, n_paths
    )


def niw_posterior(
    prior: NiwPrior, points: np.ndarray
) -> tuple[np.ndarray, float, float, np.ndarray]:
    """Conjugate posterior (mean_n, scale_n, dof_n, psi_n) given d x n data."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[1]
    if n == 0:
        return prior.mean0.copy(), prior.scale0, prior.dof0, prior.psi0.copy()
    xbar = points.mean(axis=1)
    centered = points - xbar[:, None]
    scatter = centered @ centered.T
    scale_n = prior.scale0 + n
    dof_n = prior.dof0 + n
    mean_n = (prior.scale0 * prior.mean0 + n * xbar) / scale_n
    dev = (xbar - prior.mean0)[:, None]
    psi_n = prior.psi0 + scatter + (prior.scale0 * n / scale_n) * (dev @ dev.T)
    return mean_n, scale_n, dof_n, psi_n


def invwishart_draw(
    dof: float, psi: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Inverse-Wishart draw by the Bartlett decomposition (symmetric PD output)."""
    psi = np.asarray(psi, dtype=float)
    d = psi.shape[0]
    if not dof > d - 1:
        raise ParameterError(f"inverse-Wishart dof must exceed d-1 = {d - 1}")
    bartlett = np.zeros((d, d))
    bartlett[np.diag_indices(d)] = np.sqrt(rng.chisquare(dof - np.arange(d)))
    if d > 1:
        bartlett[np.tril_indices(d, -1)] = rng.standard_normal(d * (d - 1) // 2)
    chol_psi = spd_cholesky(psi)
    inv_bartlett = np.linalg.solve(bartlett, np.eye(d))
    half = chol_psi @ inv_bartlett.T
    return half @ half.T


def resample_emissions(
    bag: TimeSeriesBag | np.ndarray,
    labels: np.ndarray,
    prior: NiwPrior,
    n_states: int,
    rng: np.random.Generator,
    diag_cov: bool = False,
) -> tuple[GaussianEmission, ...]:
    """Draw every state's Gaussian from its conjugate full conditional.

    States with no assigned frames draw from the prior (the empty-data
    posterior). diag_cov=True draws each variance from the matching 1-d
    inverse-Wishart on the diagonal of psi_n, forcing a diagonal covariance.
    """
    data = bag.data if isinstance(bag, TimeSeriesBag) else np.asarray(bag, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != data.shape[1]:
        raise ParameterError("labels length must equal the frame count")
    d = data.shape[0]
    if prior.dim != d:
        raise ParameterError("prior dimension must match the data")
    emissions = []
    for k in range(1, n_states + 1):
        points = data[:, labels == k]
        mean_n, scale_n, dof_n, psi_n = niw_posterior(prior, points)
        try:
            if diag_cov:
                variances = np.diag(psi_n) / rng.chisquare(dof_n, size=d)
                cov = np.diag(variances)
                mean = mean_n + np.sqrt(variances / scale_n) * rng.standard_normal(d)
            else:
                cov = invwishart_draw(dof_n, psi_n, rng)
                mean = mean_n + spd_cholesky(cov / scale_n) @ rng.standard_normal(d)
            emissions.append(GaussianEmission(mean=mean, cov=cov))
        except NumericError as err:
            raise NumericError(f"state {k}: {err}") from err
    return tuple(emissions)


def resample_transitions(
    labels: np.ndarray,
    beta: np.ndarray,
    hyper: HyperParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw every transition row ~ Dirichlet(alpha*beta + kappa*delta_i + counts)."""
    L = hyper.truncation_L
    weights = np.asarray(beta, dtype=float).ravel()[:L]
    counts = transition_counts(labels, L)
    conc = hyper.alpha * weights[None, :] + hyper.kappa * np.eye(L) + counts
    g = rng.gamma(conc, 1.0)
    totals = g.sum(axis=1)
    flat = totals == 0.0
    if flat.any():
        g[flat] = 1.0  # degenerate all-zero row: fall back to uniform
        totals = g.sum(axis=1)
    return g / totals[:, None]


def resample_beta(
    labels: np.ndarray,
    beta: np.ndarray,
    hyper: HyperParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Update the global weights through auxiliary table counts.

    Table counts m[j, k] follow the Chinese-restaurant construction for each
    transition count; diagonal tables are thinned by the sticky override draw
    before the weights are drawn as Dirichlet(column sums, gamma). If every
    corrected count is zero the symmetric weak-limit prior Dirichlet(gamma/L)
    is drawn instead.
    """
    L = hyper.truncation_L
    weights = np.asarray(beta, dtype=float).ravel()[:L]
    counts = transition_counts(labels, L).astype(np.int64)
    tables = np.zeros((L, L), dtype=np.int64)
    for j in range(L):
        for k in range(L):
            n = counts[j, k]
            if n == 0:
                continue
            c = hyper.alpha * weights[k] + (hyper.kappa if j == k else 0.0)
            if c <= 0.0:
                tables[j, k] = 1  # zero prior mass on a used transition: single table
                continue
            tables[j, k] = int((rng.random(n) < c / (np.arange(n) + c)).sum())

    rho = hyper.kappa / (hyper.alpha + hyper.kappa)
    corrected = tables.astype(float)
    if rho > 0.0:
        for j in range(L):
            if tables[j, j] > 0:
                p_override = rho / (rho + weights[j] * (1.0 - rho))
                corrected[j, j] -= rng.binomial(tables[j, j], p_override)

    column_tables = corrected.sum(axis=0)
    out = np.zeros(L + 1)
    if column_tables.sum() == 0.0:
        out[:L] = _dirichlet(np.full(L, hyper.gamma / L), rng)
        return out
    return _dirichlet(np.concatenate([column_tables, [hyper.gamma]]), rng)


def relabel_first_appearance(state: ModelState) -> ModelState:
    """Permute states so the first-seen label becomes 1, second-seen 2, ...

    Unused states keep their relative order after the used ones. The joint
    score is invariant under the simultaneous permutation.
    """
    L = state.n_states
    labels0 = state.labels - 1
    _, first_pos = np.unique(labels0, return_index=True)
    used = labels0[np.sort(first_pos)]
    unused = [k for k in range(L) if k not in set(used.tolist())]
    old_for_new = np.concatenate([used, np.asarray(unused, dtype=np.int64)])
    new_for_old = np.empty(L, dtype=np.int64)
    new_for_old[old_for_new] = np.arange(L)
    beta = np.concatenate([state.beta[:L][old_for_new], state.beta[L:]])
    pi = state.pi[np.ix_(old_for_new, old_for_new)]
    emissions = tuple(state.emissions[o] for o in old_for_new)
    labels = new_for_old[labels0] + 1
    return ModelState(
        beta=beta, pi=pi, emissions=emissions, labels=labels, log_joint=state.log_joint
    )


def _uniform_initial(L: int) -> np.ndarray:
    return np.full(L, 1.0 / L)


def fit(bag: TimeSeriesBag, config: GibbsConfig) -> PosteriorSummary:
    """Run the blocked Gibbs sampler and keep the best retained sample.

    Deterministic given the config seed. Post-burn-in samples are retained
    every store_every sweeps; the returned MAP sample is the retained sample
    with the highest joint score, relabeled by first appearance.
    """
    if not isinstance(bag, TimeSeriesBag):
        raise ParameterError("fit expects a TimeSeriesBag")
    hyper = config.hyper
    prior = hyper.emission_prior or default_niw_prior(bag.data)
    if prior.dim != bag.n_channels:
        raise ParameterError("emission prior dimension must match the bag")
    L = hyper.truncation_L
    T = bag.n_frames
    rng = np.random.default_rng(int(config.seed))

    beta = stick_breaking(hyper.gamma, L, rng)
    labels = rng.integers(1, L + 1, size=T)
    emissions = resample_emissions(bag, labels, prior, L, rng, hyper.diag_cov)
    pi = resample_transitions(labels, beta, hyper, rng)

    trace = np.empty(config.iterations)
    best: ModelState | None = None
    kept = 0
    for sweep in range(config.iterations):
        initial = _uniform_initial(L)
        labels = _label_paths(bag.data, pi, emissions, initial, rng, 1)[0]
        try:
            emissions = resample_emissions(bag, labels, prior, L, rng, hyper.diag_cov)
        except NumericError as err:
            raise NumericError(f"iteration {sweep}: {err}") from err
        pi = resample_transitions(labels, beta, hyper, rng)
        beta = resample_beta(labels, beta, hyper, rng)
        score = sequence_score(bag.data, pi, emissions, labels, _uniform_initial(L))
        trace[sweep] = score
        if sweep >= config.burn_in and (sweep - config.burn_in) % config.store_every == 0:
            kept += 1
            if best is None or score > best.log_joint:
                best = ModelState(
                    beta=beta, pi=pi, emissions=emissions, labels=labels, log_joint=score
                )

    assert best is not None  # burn_in < iterations guarantees one retained sample
    map_state = relabel_first_appearance(best)
    used = int(np.unique(map_state.labels).size)
    return PosteriorSummary(
        map_state=map_state, samples_kept=kept, log_joint_trace=trace, used_states=used
    )
