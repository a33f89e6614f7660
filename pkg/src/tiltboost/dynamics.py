"""Stochastic integrators: reverse diffusion, probability flow, Langevin.

All samplers are deterministic functions of (seed, config): noise comes from
a counter-based Philox stream consumed in whole (n, d) blocks per step, so
chains are statistically independent and bit-reproducible.  Chains that leave
the finite range are frozen, excluded from the returned batch, and counted in
the metadata; they are never silently dropped.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .priors import HEAT, OU, PriorModel, _norm_semigroup

GEOMETRIC_EDGE = 1e-4


class DynamicsError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class SdeConfig:
    """Discretization of a reverse integration from t_start down to t_end."""

    n_steps: int
    t_start: float
    t_end: float = 0.0
    scheme: str = "euler_maruyama"
    seed: int = 0
    grid: str = "geometric"

    def __post_init__(self):
        if self.n_steps < 0:
            raise DynamicsError("n_steps must be nonnegative")
        if self.t_start < self.t_end or self.t_end < 0:
            raise DynamicsError("need t_start >= t_end >= 0")
        if self.scheme != "euler_maruyama":
            raise DynamicsError(f"unknown scheme {self.scheme!r}")
        if self.grid not in ("uniform", "geometric"):
            raise DynamicsError(f"unknown grid {self.grid!r}")

    def times(self) -> np.ndarray:
        """Grid from t_start down to t_end; geometric clusters near t_end."""
        if self.n_steps == 0 or self.t_start == self.t_end:
            return np.array([self.t_start, self.t_end])
        span = self.t_start - self.t_end
        if self.grid == "uniform":
            return np.linspace(self.t_start, self.t_end, self.n_steps + 1)
        offsets = np.concatenate([[0.0], np.geomspace(GEOMETRIC_EDGE, 1.0, self.n_steps)])
        return (self.t_end + span * offsets)[::-1]


@dataclass
class SampleBatch:
    """n posterior samples with provenance metadata."""

    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] < 1:
            raise DynamicsError("a batch needs at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise DynamicsError("batch has non-finite entries")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        np.savetxt(path, self.samples, delimiter=",")
        sidecar = path.with_suffix(path.suffix + ".meta.json")
        sidecar.write_text(json.dumps(self.meta, default=str, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "SampleBatch":
        path = Path(path)
        samples = np.loadtxt(path, delimiter=",", ndmin=2)
        sidecar = path.with_suffix(path.suffix + ".meta.json")
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(samples=samples, meta=meta)


def _finish(x, alive, meta, t0):
    n_dead = int((~alive).sum())
    if n_dead == x.shape[0]:
        raise DynamicsError("every chain diverged")
    meta = dict(meta, diverged=n_dead, wall_time=time.perf_counter() - t0)
    return SampleBatch(samples=x[alive], meta=meta)


def reverse_sde(prior: PriorModel, start: SampleBatch, cfg: SdeConfig,
                semigroup: str = OU) -> SampleBatch:
    """Euler-Maruyama integration of the reverse diffusion.

    Stepping from t to t-h uses drift x + 2*score_t(x) under the
    variance-preserving semigroup and 2*score_t(x) under the
    variance-exploding one, with sqrt(2h) noise.
    """
    sg = _norm_semigroup(semigroup)
    ts = cfg.times()
    rng = make_rng(cfg.seed)
    x = start.samples.copy()
    alive = np.ones(x.shape[0], dtype=bool)
    t0 = time.perf_counter()
    for i in range(len(ts) - 1):
        t, h = ts[i], ts[i] - ts[i + 1]
        if h == 0:
            continue
        noise = rng.standard_normal(x.shape)
        score = prior.score_t(x, t, sg)
        drift = x + 2.0 * score if sg == OU else 2.0 * score
        x = x + h * drift + np.sqrt(2.0 * h) * noise
        ok = np.all(np.isfinite(x), axis=1)
        newly_dead = alive & ~ok
        if np.any(newly_dead):
            x[newly_dead] = 0.0  # frozen; excluded from the output
            alive &= ok
    meta = dict(start.meta)
    meta.update(sampler="reverse_sde", semigroup=sg, seed=cfg.seed,
                n_steps=cfg.n_steps, t_start=cfg.t_start, t_end=cfg.t_end,
                grid=cfg.grid, prior=prior.name)
    return _finish(x, alive, meta, t0)


def probability_flow(prior: PriorModel, start: SampleBatch, cfg: SdeConfig,
                     tilt_path, semigroup: str = OU) -> SampleBatch:
    """Deterministic transport of each particle along the tilted flow.

    tilt_path maps a time to the TiltState at that time.  Integration is RK4
    on the reverse velocity field; the tilt gradient b_t - Q_t x enters the
    drift with a minus sign, the prior score with a plus sign.
    """
    sg = _norm_semigroup(semigroup)
    ts = cfg.times()

    def velocity(t, x):
        state = tilt_path(t)
        base = x if sg == OU else 0.0
        return base + prior.score_t(x, t, sg) - state.base.grad_log_factor(x)

    x = start.samples.copy()
    alive = np.ones(x.shape[0], dtype=bool)
    t0 = time.perf_counter()
    for i in range(len(ts) - 1):
        t, h = ts[i], ts[i] - ts[i + 1]
        if h == 0:
            continue
        k1 = velocity(t, x)
        k2 = velocity(t - 0.5 * h, x + 0.5 * h * k1)
        k3 = velocity(t - 0.5 * h, x + 0.5 * h * k2)
        k4 = velocity(t - h, x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ok = np.all(np.isfinite(x), axis=1)
        if np.any(alive & ~ok):
            x[alive & ~ok] = 0.0
            alive &= ok
    meta = dict(start.meta)
    meta.update(sampler="probability_flow", semigroup=sg, seed=cfg.seed,
                n_steps=cfg.n_steps, t_start=cfg.t_start, t_end=cfg.t_end,
                prior=prior.name)
    return _finish(x, alive, meta, t0)


def langevin(logdensity, init: SampleBatch, step: float, n_steps: int,
             seed: int = 0, variant: str = "ula") -> SampleBatch:
    """Unadjusted or Metropolis-adjusted Langevin targeting exp(logdensity).

    logdensity(x) must return (value (n,), gradient (n, d)).  The adjusted
    variant logs its acceptance rate and warns below 1%.
    """
    if variant not in ("ula", "mala"):
        raise DynamicsError(f"unknown variant {variant!r}")
    if step <= 0:
        raise DynamicsError("step must be positive")
    rng = make_rng(seed)
    x = init.samples.copy()
    alive = np.ones(x.shape[0], dtype=bool)
    val, grad = logdensity(x)
    accepted = 0
    t0 = time.perf_counter()
    for _ in range(n_steps):
        noise = rng.standard_normal(x.shape)
        prop = x + step * grad + np.sqrt(2.0 * step) * noise
        if variant == "ula":
            x = prop
            val, grad = logdensity(x)
        else:
            val_p, grad_p = logdensity(prop)
            fwd = ((prop - x - step * grad) ** 2).sum(axis=1)
            bwd = ((x - prop - step * grad_p) ** 2).sum(axis=1)
            log_alpha = val_p - val + (fwd - bwd) / (4.0 * step)
            accept = np.log(rng.uniform(size=x.shape[0])) < log_alpha
            accept &= np.all(np.isfinite(prop), axis=1)
            x[accept] = prop[accept]
            val[accept] = val_p[accept]
            grad[accept] = grad_p[accept]
            accepted += int(accept.sum())
        ok = np.all(np.isfinite(x), axis=1)
        if np.any(alive & ~ok):
            x[alive & ~ok] = 0.0
            alive &= ok
        if not np.any(alive):
            break
    meta = dict(init.meta)
    meta.update(sampler=f"langevin-{variant}", step=step, n_steps=n_steps, seed=seed)
    if variant == "mala" and n_steps > 0:
        rate = accepted / (n_steps * x.shape[0])
        meta["acceptance_rate"] = rate
        if rate < 0.01:
            warnings.warn(f"MALA acceptance rate {rate:.2%} below 1%", stacklevel=2)
    return _finish(x, alive, meta, t0)


def langevin_trace(grad_fn, x0: np.ndarray, step: float, n_steps: int,
                   seed: int = 0, thin: int = 1) -> np.ndarray:
    """Unadjusted Langevin returning the thinned trajectory of every chain.

    Returns an array of shape (n_kept, n_chains, d); used for
    autocorrelation studies where the whole path matters.
    """
    rng = make_rng(seed)
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    out = np.empty((n_steps // thin, x.shape[0], x.shape[1]))
    kept = 0
    for i in range(n_steps):
        noise = rng.standard_normal(x.shape)
        x = x + step * grad_fn(x) + np.sqrt(2.0 * step) * noise
        if not np.all(np.isfinite(x)):
            raise DynamicsError(f"chain diverged at step {i}")
        if (i + 1) % thin == 0:
            out[kept] = x
            kept += 1
    return out[:kept]


def thermalize(logdensity, samples: SampleBatch, duration: float, step: float,
               pinned: np.ndarray | None = None,
               pinned_values: np.ndarray | None = None,
               seed: int = 0) -> SampleBatch:
    """Langevin relaxation toward a slice target for a given time budget.

    Runs ceil(duration/step) unadjusted steps of the dynamics restricted to
    the unpinned coordinates; pinned coordinates are bitwise preserved.
    duration = 0 returns the input unchanged.
    """
    if duration < 0 or step <= 0:
        raise DynamicsError("need duration >= 0 and step > 0")
    if duration == 0:
        return samples
    n_steps = int(np.ceil(duration / step))
    h = duration / n_steps
    mask = np.zeros(samples.d, dtype=bool)
    if pinned is not None:
        mask[np.asarray(pinned)] = True
    rng = make_rng(seed)
    x = samples.samples.copy()
    if pinned is not None and pinned_values is not None:
        x[:, mask] = pinned_values
    t0 = time.perf_counter()
    for i in range(n_steps):
        _, grad = logdensity(x)
        noise = rng.standard_normal(x.shape)
        upd = h * grad + np.sqrt(2.0 * h) * noise
        upd[:, mask] = 0.0
        x = x + upd
        if not np.all(np.isfinite(x)):
            raise DynamicsError(f"thermalization diverged at step {i}")
    meta = dict(samples.meta)
    meta.update(sampler="thermalize", duration=duration, step=h, seed=seed)
    alive = np.ones(x.shape[0], dtype=bool)
    return _finish(x, alive, meta, t0)
