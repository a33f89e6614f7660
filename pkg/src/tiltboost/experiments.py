"""Experiment drivers shared by the command-line harness and the test suite.

Each driver builds seeded random instances, runs the requested sampler arms,
and returns plain dictionaries ready for CSV/JSON serialization.  Sampling
arms follow one recipe: the plain arm runs unadjusted Langevin directly on
the posterior; the boosted arm runs Langevin on the boosted target near
blow-up and transports the result back with the reverse diffusion; the
analytic arm replaces the Langevin stage by exact mixture sampling.
"""

from __future__ import annotations

import math

import numpy as np

from . import metrics
from .certify import certify_slc, chi_bound
from .dynamics import (
    SampleBatch,
    SdeConfig,
    langevin,
    langevin_trace,
    make_rng,
    reverse_sde,
    thermalize,
)
from .priors import (
    HEAT,
    OU,
    GaussianMixturePrior,
    HypercubePrior,
    Phi4Prior,
    evolution_params,
    gmm_posterior_analytic,
)
from .spectral import (
    MeasurementModel,
    QuadraticTilt,
    SpectralOperator,
    lattice_coupling,
    posterior_tilt,
)
from .tilt import TiltState, blowup_time, solve_tilt, working_time


# ---------------------------------------------------------------------------
# Instance generation
# ---------------------------------------------------------------------------


def random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def operator_fixed_kappa(rng: np.random.Generator, d: int, kappa: float) -> SpectralOperator:
    """Square operator with top singular value 1, bottom 1/kappa, interior
    singular values uniform in between; singular bases from a Gaussian SVD."""
    g = rng.standard_normal((d, d))
    U, _, Vt = np.linalg.svd(g)
    s = np.sort(rng.uniform(1.0 / kappa, 1.0, size=d))[::-1]
    s[0], s[-1] = 1.0, 1.0 / kappa
    return SpectralOperator(U=U, singulars=s, V=Vt.T)


def gmm_instance(d: int, snr: float, kappa: float, seed: int,
                 prior: GaussianMixturePrior | None = None):
    """Grid-mixture inverse problem at a prescribed SNR = lam_min(Q).

    Draws the prior weights, the operator at fixed condition number, a signal
    x* from the prior and data y = A x* + sigma w; sigma is set so that
    lam_min(A)^2/sigma^2 equals the requested snr.
    """
    rng = make_rng(seed)
    if prior is None:
        prior = GaussianMixturePrior.grid25(d, seed=seed)
    op = operator_fixed_kappa(rng, d, kappa)
    sigma = op.singulars[-1] / math.sqrt(snr)
    x_star = prior.as_diag_gmm().sample(1, rng)[0]
    y = op.dense() @ x_star + sigma * rng.standard_normal(d)
    model = MeasurementModel(A=op, sigma=sigma, y=y)
    return prior, model, x_star


def gmm_instance_degenerate(d: int, d_prime: int, seed: int,
                            prior: GaussianMixturePrior | None = None):
    """Rank-deficient instance: singulars uniform in [0, 1], noise uniform in
    [0.2 max, max]; used for the degenerate-measurement study."""
    rng = make_rng(seed)
    if prior is None:
        prior = GaussianMixturePrior.grid25(d, seed=seed)
    g = rng.standard_normal((d_prime, d))
    U, _, Vt = np.linalg.svd(g, full_matrices=True)
    s = np.sort(rng.uniform(0.0, 1.0, size=d_prime))[::-1]
    op = SpectralOperator(U=U, singulars=s, V=Vt.T)
    sigma = rng.uniform(0.2 * s[0], s[0])
    x_star = prior.as_diag_gmm().sample(1, rng)[0]
    y = op.dense() @ x_star + sigma * rng.standard_normal(d_prime)
    model = MeasurementModel(A=op, sigma=sigma, y=y)
    return prior, model, x_star


# ---------------------------------------------------------------------------
# Targets and sampler arms
# ---------------------------------------------------------------------------


def tilted_logdensity(prior, tilt: QuadraticTilt, t: float = 0.0, semigroup: str = OU):
    """(value, gradient) callable for log[evolved prior] + tilt log-factor."""

    def logdensity(x):
        val = prior.logpdf_t(x, t, semigroup) + tilt.log_factor(x)
        grad = prior.score_t(x, t, semigroup) + tilt.grad_log_factor(x)
        return val, grad

    return logdensity


def push_to_time(x: np.ndarray, t: float, semigroup: str, rng: np.random.Generator) -> np.ndarray:
    """Forward-noise exact prior samples to time t along the semigroup."""
    a, s = evolution_params(t, semigroup)
    return a * x + math.sqrt(s) * rng.standard_normal(x.shape)


def sample_posterior_analytic(prior: GaussianMixturePrior, model: MeasurementModel,
                              n: int, seed: int) -> SampleBatch:
    post = gmm_posterior_analytic(prior, posterior_tilt(model))
    return SampleBatch(post.sample(n, make_rng(seed)), meta={"sampler": "analytic_posterior"})


def _langevin_step_size(curvature: float, cap: float = 2e-2) -> float:
    return min(cap, 0.5 / (1.0 + curvature))


def arm_langevin(prior, model, n: int, steps: int, seed: int,
                 variant: str = "ula") -> SampleBatch:
    """Langevin directly on the posterior, started from prior samples."""
    rng = make_rng(seed)
    tilt = posterior_tilt(model)
    x0 = prior.as_diag_gmm().sample(n, rng)
    h = _langevin_step_size(model.q_eigvals()[0])
    out = langevin(tilted_logdensity(prior, tilt), SampleBatch(x0), h, steps,
                   seed=seed + 1, variant=variant)
    out.meta["method"] = "langevin"
    return out


def arm_boosted_langevin(prior, model, n: int, steps: int, sde_steps: int, seed: int,
                         eps: float = 0.01, variant: str = "ula",
                         semigroup: str = OU) -> SampleBatch:
    """Langevin on the boosted target near blow-up, then reverse transport.

    The boosted target is stiffer than the posterior, so its stable step is
    smaller; the step count is scaled up (at most 4x) to cover the same
    diffusion time as the plain arm would.
    """
    rng = make_rng(seed)
    t = working_time(model, semigroup, eps)
    state = solve_tilt(model, t, semigroup)
    x0 = push_to_time(prior.as_diag_gmm().sample(n, rng), t, semigroup, rng)
    h_plain = _langevin_step_size(model.q_eigvals()[0])
    h = _langevin_step_size(state.base.q[np.isfinite(state.base.q)].max())
    steps_scaled = min(int(np.ceil(steps * h_plain / h)), 4 * steps)
    boosted = langevin(tilted_logdensity(prior, state.base, t, semigroup),
                       SampleBatch(x0), h, steps_scaled, seed=seed + 1, variant=variant)
    cfg = SdeConfig(n_steps=sde_steps, t_start=t, t_end=0.0, seed=seed + 2)
    out = reverse_sde(prior, boosted, cfg, semigroup)
    out.meta["method"] = "boosted_langevin"
    out.meta["t_work"] = t
    return out


def arm_analytic_boost(prior: GaussianMixturePrior, model, n: int, sde_steps: int,
                       seed: int, eps: float = 0.01, semigroup: str = OU) -> SampleBatch:
    """Exact boosted-mixture sampling, then reverse transport."""
    t = working_time(model, semigroup, eps)
    state = solve_tilt(model, t, semigroup)
    boosted = gmm_posterior_analytic(prior, state.base, t, semigroup)
    start = SampleBatch(boosted.sample(n, make_rng(seed)))
    cfg = SdeConfig(n_steps=sde_steps, t_start=t, t_end=0.0, seed=seed + 2)
    out = reverse_sde(prior, start, cfg, semigroup)
    out.meta["method"] = "analytic_boost"
    out.meta["t_work"] = t
    return out


# ---------------------------------------------------------------------------
# Gaussian-mixture sweep
# ---------------------------------------------------------------------------

GMM_SWEEP_DEFAULTS = dict(
    d=8, kappa=20.0, snr_values=(1e-5, 1e-3, 1e-1), n_instances=20,
    n_samples=1000, n_reference=4000, langevin_steps=1500, sde_steps=900,
    eps=0.01, n_projections=128, seed=0,
    methods=("langevin", "boosted_langevin", "analytic_boost"),
)


def gmm_sweep(config: dict) -> list[dict]:
    """Sliced-Wasserstein comparison of sampler arms over random instances.

    Returns one row per (snr, instance, method) with the distance to analytic
    posterior samples; per-(snr, method) percentile rows carry method
    medians and quartiles.
    """
    cfg = {**GMM_SWEEP_DEFAULTS, **config}
    rows = []
    for snr in cfg["snr_values"]:
        sw = {m: [] for m in cfg["methods"]}
        for inst in range(cfg["n_instances"]):
            seed = int(cfg["seed"]) * 1_000_003 + inst * 101 + int(-math.log10(snr) * 17)
            prior, model, _ = gmm_instance(cfg["d"], snr, cfg["kappa"], seed)
            reference = sample_posterior_analytic(prior, model, cfg["n_reference"], seed + 7)
            for method in cfg["methods"]:
                if method == "langevin":
                    batch = arm_langevin(prior, model, cfg["n_samples"],
                                         cfg["langevin_steps"], seed + 11)
                elif method == "boosted_langevin":
                    batch = arm_boosted_langevin(prior, model, cfg["n_samples"],
                                                 cfg["langevin_steps"], cfg["sde_steps"],
                                                 seed + 13, cfg["eps"])
                elif method == "analytic_boost":
                    batch = arm_analytic_boost(prior, model, cfg["n_samples"],
                                               cfg["sde_steps"], seed + 17, cfg["eps"])
                else:
                    raise ValueError(f"unknown method {method!r}")
                dist = metrics.sliced_wasserstein(batch, reference,
                                                  n_proj=cfg["n_projections"], seed=seed + 23)
                sw[method].append(dist)
                rows.append({"kind": "instance", "d": cfg["d"], "snr": snr,
                             "instance": inst, "method": method, "sw_distance": dist,
                             "diverged": batch.meta.get("diverged", 0)})
        for method, values in sw.items():
            q25, q50, q75 = np.percentile(values, [25, 50, 75])
            rows.append({"kind": "summary", "d": cfg["d"], "snr": snr, "method": method,
                         "sw_median": q50, "sw_p25": q25, "sw_p75": q75})
    return rows


def schematic_samples(snr: float = 5e-3, kappa: float = 4.0, n: int = 1500,
                      seed: int = 0) -> list[dict]:
    """Two-dimensional prior/boosted/posterior sample clouds for plotting.

    One grid-mixture instance in d=2; the boosted stage is the exact tilted
    mixture at the working time.  Rows carry (stage, x1, x2).
    """
    prior, model, _ = gmm_instance(2, snr, kappa, seed)
    rng = make_rng(seed + 1)
    t = working_time(model, OU)
    stages = {
        "prior": prior.as_diag_gmm().sample(n, rng),
        "boosted": gmm_posterior_analytic(
            prior, solve_tilt(model, t, OU).base, t, OU).sample(n, rng),
        "posterior": gmm_posterior_analytic(
            prior, posterior_tilt(model)).sample(n, rng),
    }
    return [{"stage": stage, "x1": x[0], "x2": x[1]}
            for stage, cloud in stages.items() for x in cloud]


# ---------------------------------------------------------------------------
# Lattice-field autocorrelation study
# ---------------------------------------------------------------------------

PHI4_DEFAULTS = dict(
    side=16, betas=(0.2, 0.4), n_steps=40000, burn_in=5000, step=0.005,
    eps=0.01, max_lag=2000, seed=0, n_boot=400,
)


def phi4_acf(config: dict) -> dict:
    """Site-averaged autocorrelation of plain vs boosted Langevin chains.

    Both chains use the same step size; the boosted chain targets the tilted
    measure near blow-up (the reverse transport then maps it back exactly, so
    chain relaxation is the honest comparison).  Returns ACF curves and
    bootstrap confidence intervals over sites for the integrated time.
    """
    cfg = {**PHI4_DEFAULTS, **config}
    side, step = cfg["side"], cfg["step"]
    d = side * side
    out = {"config": cfg, "acf": [], "iat": []}
    for beta in cfg["betas"]:
        prior = Phi4Prior(side, beta)
        model = lattice_coupling(side, beta)
        tilt0 = posterior_tilt(model)
        T = blowup_time(model, HEAT)
        t_work = 0.0 if math.isinf(T) else working_time(model, HEAT, cfg["eps"])
        variants = {
            "plain": (lambda x, _p=prior, _t=tilt0:
                      _p.site_score(x) + _t.grad_log_factor(x)),
        }
        if t_work == 0.0:
            variants["boosted"] = variants["plain"]
        else:
            state = solve_tilt(model, t_work, HEAT)
            variants["boosted"] = (lambda x, _p=prior, _s=state:
                                   _p.score_t(x, _s.t, HEAT) + _s.base.grad_log_factor(x))
        for vi, (name, grad) in enumerate(variants.items()):
            rng = make_rng(cfg["seed"] + int(beta * 1000))
            x0 = 0.1 * rng.standard_normal((1, d))
            trace = langevin_trace(grad, x0, step, cfg["burn_in"] + cfg["n_steps"],
                                   seed=cfg["seed"] + int(beta * 1000) + 7 * vi)
            sites = trace[cfg["burn_in"]:, 0, :]
            series = metrics.autocorrelation(sites, cfg["max_lag"])
            iats = metrics.per_site_iat(sites, cfg["max_lag"])
            lo, mid, hi = bootstrap_mean_ci(iats, cfg["n_boot"], cfg["seed"] + 5)
            out["acf"].append({"beta": beta, "variant": name,
                               "lags": series.lags, "acf": series.acf})
            out["iat"].append({"beta": beta, "variant": name, "iat": series.iat,
                               "iat_site_mean": mid, "ci68_lo": lo, "ci68_hi": hi,
                               "t_work": t_work})
    return out


def bootstrap_mean_ci(values: np.ndarray, n_boot: int, seed: int,
                      lo: float = 16.0, hi: float = 84.0) -> tuple[float, float, float]:
    """(lo, mean, hi) percentile bootstrap interval of the mean."""
    rng = make_rng(seed)
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    means = values[idx].mean(axis=1)
    return float(np.percentile(means, lo)), float(values.mean()), float(np.percentile(means, hi))


# ---------------------------------------------------------------------------
# Spin-model desk validation
# ---------------------------------------------------------------------------

ISING_DEFAULTS = dict(
    d=10, gap=0.9, lam_min=0.1, delta=0.05, n_samples=200_000,
    langevin_steps=1200, sde_steps=800, eps=0.01, seed=0,
    boost_sampler="mala",
)


def ising_model_instance(d: int, gap: float, lam_min: float, seed: int) -> MeasurementModel:
    """Spin coupling with prescribed spectral spread [lam_min, lam_min+gap]
    and a data vector generated from a hidden sign configuration."""
    rng = make_rng(seed)
    V = random_orthogonal(rng, d)
    lam = np.linspace(lam_min + gap, lam_min, d)
    s = np.sqrt(lam)
    op = SpectralOperator(U=np.eye(d), singulars=s, V=V)
    x_star = np.where(rng.uniform(size=d) < 0.5, 1.0, -1.0)
    y = op.dense() @ x_star + rng.standard_normal(d)
    return MeasurementModel(A=op, sigma=1.0, y=y)


def ising_run(config: dict) -> dict:
    """Smooth-relaxation transport + rounding against exact enumeration.

    Samples the boosted smooth posterior (adjusted Langevin by default, exact
    corner-mixture optionally), reverses the diffusion to time zero, rounds
    to signs, and reports the total variation to the brute-force posterior
    together with the log-concavity certificate.
    """
    cfg = {**ISING_DEFAULTS, **config}
    d, delta, n = cfg["d"], cfg["delta"], cfg["n_samples"]
    model = ising_model_instance(d, cfg["gap"], cfg["lam_min"], cfg["seed"])
    prior = HypercubePrior(d, delta)
    tilt0 = posterior_tilt(model)
    report = certify_slc(HypercubePrior(d, 0.0), model)

    t_work = working_time(model, OU, cfg["eps"])
    state = solve_tilt(model, t_work, OU)
    rng = make_rng(cfg["seed"] + 1)

    if cfg["boost_sampler"] == "analytic":
        mix = prior.as_diag_gmm(basis=state.base.eigvecs, t=t_work, semigroup=OU)
        boosted_z = mix.tilt(state.base.q, state.base.xi).sample(n, rng)
        start = SampleBatch(boosted_z @ state.base.eigvecs.T,
                            meta={"boost_sampler": "analytic"})
    elif cfg["boost_sampler"] == "mala":
        signs = np.where(rng.uniform(size=(n, d)) < 0.5, 1.0, -1.0)
        prior_draw = signs + math.sqrt(delta) * rng.standard_normal((n, d))
        x0 = push_to_time(prior_draw, t_work, OU, rng)
        h = _langevin_step_size(state.base.q.max())
        start = langevin(tilted_logdensity(prior, state.base, t_work, OU),
                         SampleBatch(x0), h, cfg["langevin_steps"],
                         seed=cfg["seed"] + 2, variant="mala")
        start.meta["boost_sampler"] = "mala"
    else:
        raise ValueError(f"unknown boost sampler {cfg['boost_sampler']!r}")

    cfg_sde = SdeConfig(n_steps=cfg["sde_steps"], t_start=t_work, t_end=0.0,
                        seed=cfg["seed"] + 3)
    smooth = reverse_sde(prior, start, cfg_sde, OU)
    rounded = np.where(smooth.samples >= 0, 1.0, -1.0)

    table = metrics.ising_bruteforce(tilt0.dense_q(), tilt0.dense_b())
    tv = metrics.tv_distance(rounded, table)
    return {
        "d": d, "gap": cfg["gap"], "delta": delta, "n_samples": int(rounded.shape[0]),
        "t_work": t_work, "boost_sampler": cfg["boost_sampler"],
        "tv": tv, "tv_sampling_floor": metrics.tv_sampling_floor(d, rounded.shape[0]),
        "certificate": report.as_dict(),
        "mala_acceptance": start.meta.get("acceptance_rate"),
        "diverged": smooth.meta.get("diverged", 0),
    }


# ---------------------------------------------------------------------------
# Iterated transport
# ---------------------------------------------------------------------------

ITERATED_DEFAULTS = dict(
    n_samples=4000, steps_per_leg=400, start_langevin_steps=0,
    thermal_duration=0.0, thermal_step=0.01, seed=0,
)


def run_iterated(prior: GaussianMixturePrior, model: MeasurementModel, schedule,
                 config: dict) -> dict:
    """Execute the iterated blow-up schedule under the heat semigroup.

    Works in the eigenbasis coordinates z = Vᵀx, where the prior mixture
    stays isotropic and every tilt is diagonal.  The start state is sampled
    from the exact slice mixture at the k_star threshold; each leg reverses
    the diffusion between consecutive thresholds, re-pins the blown
    directions, and optionally thermalizes on the slice.
    """
    cfg = {**ITERATED_DEFAULTS, **config}
    n, seed = cfg["n_samples"], cfg["seed"]
    V = schedule.eigvecs
    z_prior = GaussianMixturePrior(prior.means @ V, prior.weights, prior.delta)
    rng = make_rng(seed)
    d = model.d

    k0 = schedule.k_star
    t0 = schedule.thresholds[k0 - 1]
    pinned = np.arange(k0)
    lam_bar = schedule.lambda_bar(t0)
    xi_bar = schedule.xi_bar(t0)
    free = np.arange(d)[np.isfinite(lam_bar)]
    mix = z_prior.as_diag_gmm(t=t0, semigroup=HEAT)
    sliced = mix.tilt(np.where(np.isfinite(lam_bar), lam_bar, 0.0), xi_bar)
    sliced = sliced.condition(pinned, schedule.pinned_values[:k0])
    z = np.empty((n, d))
    z[:, pinned] = schedule.pinned_values[:k0]
    z[:, free] = sliced.sample(n, rng)

    legs_out = []
    for leg in schedule.legs:
        cfg_sde = SdeConfig(n_steps=cfg["steps_per_leg"], t_start=leg.t_start,
                            t_end=leg.t_end, seed=seed + 100 + leg.k, grid="uniform")
        batch = reverse_sde(z_prior, SampleBatch(z), cfg_sde, HEAT)
        z = batch.samples
        if leg.k >= 1:
            pin = np.arange(leg.k)
            values = schedule.pinned_values[: leg.k]
            marg_gap = float(np.abs(z[:, pin] - values).mean())
            z[:, pin] = values
            if cfg["thermal_duration"] > 0:
                lam_now = schedule.lambda_bar(leg.t_end)
                q = np.where(np.isfinite(lam_now), lam_now, np.inf)
                tilt_now = QuadraticTilt(eigvecs=np.eye(d), q=q,
                                         xi=schedule.xi_bar(leg.t_end))
                ld = tilted_logdensity(z_prior, tilt_now, leg.t_end, HEAT)
                batch = thermalize(ld, SampleBatch(z), cfg["thermal_duration"],
                                   cfg["thermal_step"], pinned=pin,
                                   pinned_values=values, seed=seed + 200 + leg.k)
                z = batch.samples
        else:
            marg_gap = 0.0
        legs_out.append({"k": leg.k, "t_start": leg.t_start, "t_end": leg.t_end,
                         "eta": leg.duration, "marginalization_gap": marg_gap})

    x = z @ V.T
    return {"samples": SampleBatch(x, meta={"sampler": "iterated", "seed": seed,
                                            "k_star": int(schedule.k_star)}),
            "legs": legs_out}
