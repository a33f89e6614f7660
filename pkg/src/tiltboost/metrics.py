"""Evaluation metrics and small-instance oracles.

Sliced Wasserstein uses the order-2 distance per projection with the exact
quantile coupling between empirical measures, so equal batches give exactly
zero.  The autocorrelation estimator is the standard biased one with a
self-consistent window (window at five times the running integrated time).
The spin-model oracles enumerate all 2^d states for d <= 15.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dynamics import SampleBatch, make_rng
from .spectral import QuadraticTilt

MAX_ENUM_DIM = 15


class MetricsError(ValueError):
    pass


def _as_array(batch) -> np.ndarray:
    if isinstance(batch, SampleBatch):
        return batch.samples
    return np.atleast_2d(np.asarray(batch, dtype=float))


# ---------------------------------------------------------------------------
# Sliced Wasserstein
# ---------------------------------------------------------------------------


def _w2_sorted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact order-2 Wasserstein between sorted 1-D empirical samples.

    a has shape (P, nx) and b (P, ny), both sorted along the last axis; the
    result has shape (P,).  For nx == ny this is the paired-quantile formula;
    otherwise the piecewise-constant quantile functions are integrated over
    the merged breakpoint grid.
    """
    nx, ny = a.shape[1], b.shape[1]
    if nx == ny:
        return np.sqrt(np.mean((a - b) ** 2, axis=1))
    edges = np.union1d(np.arange(1, nx) / nx, np.arange(1, ny) / ny)
    edges = np.concatenate([[0.0], edges, [1.0]])
    widths = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    ia = np.minimum((mids * nx).astype(int), nx - 1)
    ib = np.minimum((mids * ny).astype(int), ny - 1)
    return np.sqrt(((a[:, ia] - b[:, ib]) ** 2 * widths).sum(axis=1))


def sliced_wasserstein(X, Y, n_proj: int = 256, seed: int = 0) -> float:
    """Average 1-D W2 distance over uniformly random projection directions."""
    x, y = _as_array(X), _as_array(Y)
    if x.shape[1] != y.shape[1]:
        raise MetricsError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise MetricsError("need at least two samples per batch")
    rng = make_rng(seed)
    dirs = rng.standard_normal((n_proj, x.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px = np.sort(x @ dirs.T, axis=0).T
    py = np.sort(y @ dirs.T, axis=0).T
    return float(np.mean(_w2_sorted(px, py)))


# ---------------------------------------------------------------------------
# Autocorrelation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AcfSeries:
    lags: np.ndarray
    acf: np.ndarray
    iat: float

    def __post_init__(self):
        if abs(self.acf[0] - 1.0) > 1e-12:
            raise MetricsError("acf[0] must be 1")
        if self.iat < 0.5:
            raise MetricsError("integrated autocorrelation time below 1/2")


def _acf_1d(x: np.ndarray, max_lag: int) -> np.ndarray:
    x = x - x.mean()
    var = np.dot(x, x)
    if var == 0:
        raise MetricsError("constant trace has undefined autocorrelation")
    n = len(x)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    corr = np.fft.irfft(f * np.conj(f))[: max_lag + 1]
    return corr / corr[0]


def integrated_autocorrelation_time(acf: np.ndarray, c: float = 5.0) -> float:
    """Self-consistent windowing: stop at the first W with W >= c * tau(W)."""
    tau = 0.5 + np.cumsum(acf[1:])
    for w in range(1, len(acf)):
        if w >= c * tau[w - 1]:
            return float(max(tau[w - 1], 0.5))
    return float(max(tau[-1] if len(acf) > 1 else 0.5, 0.5))


def autocorrelation(trace: np.ndarray, max_lag: int) -> AcfSeries:
    """Site-averaged normalized autocorrelation with its integrated time.

    trace is (T,) or (T, n_sites); each site's ACF is computed individually
    and then averaged.  Requires T >= 10 * max_lag.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim == 1:
        trace = trace[:, None]
    T = trace.shape[0]
    if T < 10 * max_lag:
        raise MetricsError(f"trace length {T} shorter than 10*max_lag = {10 * max_lag}")
    acfs = np.stack([_acf_1d(trace[:, j], max_lag) for j in range(trace.shape[1])])
    acf = acfs.mean(axis=0)
    return AcfSeries(lags=np.arange(max_lag + 1), acf=acf,
                     iat=integrated_autocorrelation_time(acf))


def per_site_iat(trace: np.ndarray, max_lag: int) -> np.ndarray:
    """Integrated autocorrelation time of each site's trace."""
    trace = np.asarray(trace, dtype=float)
    if trace.ndim == 1:
        trace = trace[:, None]
    return np.array(
        [integrated_autocorrelation_time(_acf_1d(trace[:, j], max_lag))
         for j in range(trace.shape[1])]
    )


# ---------------------------------------------------------------------------
# Importance sampling
# ---------------------------------------------------------------------------


def importance_sampling(prior_samples, tilt: QuadraticTilt, f=None) -> tuple[np.ndarray, float]:
    """Self-normalized importance estimate under the tilt likelihood.

    Weights exp(-½xᵀQx + xᵀb) are handled in log-space; returns the estimate
    of E_posterior[f] (posterior mean when f is None) and the effective sample
    size (sum w)^2 / sum w^2.  Weight collapse is reported through the ESS,
    never raised, unless every weight is exactly zero.
    """
    x = _as_array(prior_samples)
    logw = tilt.log_factor(x)
    if np.all(np.isneginf(logw)):
        raise MetricsError("all importance weights are zero: posterior support missed")
    lse = logsumexp(logw)
    ess = float(np.exp(2.0 * lse - logsumexp(2.0 * logw)))
    w = np.exp(logw - lse)
    values = x if f is None else np.asarray(f(x))
    if values.ndim == 1:
        values = values[:, None]
    estimate = w @ values
    return estimate.squeeze(), ess


# ---------------------------------------------------------------------------
# Exact spin-model oracles
# ---------------------------------------------------------------------------


def hypercube_states(d: int) -> np.ndarray:
    """All 2^d sign vectors; coordinate i of state s is +1 iff bit i of s."""
    if d > MAX_ENUM_DIM:
        raise MetricsError(f"enumeration limited to d <= {MAX_ENUM_DIM}")
    bits = np.arange(2**d)[:, None] >> np.arange(d)[None, :]
    return np.where(bits & 1, 1.0, -1.0)


@dataclass(frozen=True)
class IsingTable:
    states: np.ndarray
    probs: np.ndarray
    mean: np.ndarray
    cov: np.ndarray


def ising_bruteforce(Q: np.ndarray, b: np.ndarray) -> IsingTable:
    """Exact probabilities proportional to exp(-½sᵀQs + sᵀb) over {±1}^d."""
    Q = np.asarray(Q, dtype=float)
    b = np.asarray(b, dtype=float)
    d = Q.shape[0]
    states = hypercube_states(d)
    energy = -0.5 * np.einsum("si,ij,sj->s", states, Q, states) + states @ b
    logp = energy - logsumexp(energy)
    probs = np.exp(logp)
    mean = probs @ states
    cov = (states.T * probs) @ states - np.outer(mean, mean)
    return IsingTable(states=states, probs=probs, mean=mean, cov=cov)


def state_indices(samples: np.ndarray) -> np.ndarray:
    """Row index of each ±1 sample in the hypercube_states enumeration."""
    signs = (np.atleast_2d(samples) > 0).astype(np.int64)
    weights = 1 << np.arange(samples.shape[-1], dtype=np.int64)
    return signs @ weights


def tv_distance(empirical, table: IsingTable) -> float:
    """Total variation ½ Σ|p̂ - p| between samples on {±1}^d and a table."""
    x = _as_array(empirical)
    d = table.states.shape[1]
    if x.shape[1] != d:
        raise MetricsError("dimension mismatch with the probability table")
    counts = np.bincount(state_indices(x), minlength=2**d)
    emp = counts / x.shape[0]
    return float(0.5 * np.abs(emp - table.probs).sum())


def tv_sampling_floor(d: int, n: int) -> float:
    """Scale of the TV distance expected from multinomial noise alone."""
    return float(np.sqrt(2**d / n))
