"""Command-line experiment harness.

Subcommands: gmm-sweep, phi4-acf, ising, phase-diagram, iterated.  A JSON
config file provides defaults and flags override it; every output row carries
(config-hash, seed, git-describe) provenance and re-running a config
reproduces all numbers bitwise.  The process exits nonzero iff an assertion
listed under the config's "assert" key fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import certify, experiments, metrics
from .priors import GaussianMixturePrior
from .tilt import iterated_schedule

PAPER_SCALE = {
    "gmm-sweep": {"d": 20, "n_instances": 20, "n_samples": 4000, "n_reference": 10000,
                  "snr_values": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]},
    "phi4-acf": {"side": 32, "betas": [0.2, 0.4, 0.6], "n_steps": 100_000,
                 "burn_in": 10_000},
}


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, rows: list[dict], columns: list[str], provenance: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns + list(provenance))
        prov = [provenance[k] for k in provenance]
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns] + prov)


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_fmt))


def emit_metrics(out_dir: Path, pairs: list[tuple[str, float]], provenance: dict) -> None:
    rows = [{"name": n, "value": v} for n, v in pairs]
    write_csv(out_dir / "metrics.csv", rows, ["name", "value"], provenance)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gmm_sweep(cfg: dict, out_dir: Path, provenance: dict) -> list[str]:
    threads = int(cfg.get("threads", 1))
    merged = {**experiments.GMM_SWEEP_DEFAULTS, **cfg}
    if threads > 1:
        snrs = list(merged["snr_values"])
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda s: experiments.gmm_sweep({**merged, "snr_values": [s]}), snrs))
        rows = [r for part in parts for r in part]
    else:
        rows = experiments.gmm_sweep(merged)
    instance_rows = [r for r in rows if r["kind"] == "instance"]
    summary_rows = [r for r in rows if r["kind"] == "summary"]
    write_csv(out_dir / "instances.csv", instance_rows,
              ["d", "snr", "instance", "method", "sw_distance", "diverged"], provenance)
    write_csv(out_dir / "summary.csv", summary_rows,
              ["d", "snr", "method", "sw_median", "sw_p25", "sw_p75"], provenance)
    emit_metrics(out_dir, [(f"sw_median:{r['method']}:snr={r['snr']:g}", r["sw_median"])
                           for r in summary_rows], provenance)
    if cfg.get("dump_schematic", False):
        rows = experiments.schematic_samples(seed=int(cfg.get("seed", 0)))
        write_csv(out_dir / "schematic.csv", rows, ["stage", "x1", "x2"], provenance)

    failures = []
    for snr in cfg.get("assert", {}).get("boosted_below_plain", []):
        med = {r["method"]: r["sw_median"] for r in summary_rows
               if np.isclose(r["snr"], snr)}
        if not med.get("boosted_langevin", np.inf) < med.get("langevin", -np.inf):
            failures.append(f"boosted median not below plain at snr={snr}")
    return failures


def cmd_phi4(cfg: dict, out_dir: Path, provenance: dict) -> list[str]:
    result = experiments.phi4_acf(cfg)
    acf_rows = [
        {"beta": entry["beta"], "variant": entry["variant"], "lag": int(lag), "acf": val}
        for entry in result["acf"]
        for lag, val in zip(entry["lags"], entry["acf"])
    ]
    write_csv(out_dir / "acf.csv", acf_rows, ["beta", "variant", "lag", "acf"], provenance)
    write_csv(out_dir / "iat_summary.csv", result["iat"],
              ["beta", "variant", "iat", "iat_site_mean", "ci68_lo", "ci68_hi", "t_work"],
              provenance)
    emit_metrics(out_dir, [(f"iat:{r['variant']}:beta={r['beta']:g}", r["iat"])
                           for r in result["iat"]], provenance)

    failures = []
    if cfg.get("assert", {}).get("boosted_faster", False):
        by_beta: dict = {}
        for r in result["iat"]:
            by_beta.setdefault(r["beta"], {})[r["variant"]] = r
        for beta, pair in by_beta.items():
            if not pair["boosted"]["iat"] < pair["plain"]["iat"]:
                failures.append(f"boosted IAT not smaller at beta={beta}")
    return failures


def cmd_ising(cfg: dict, out_dir: Path, provenance: dict) -> list[str]:
    report = experiments.ising_run(cfg)
    report["provenance"] = provenance
    write_json(out_dir / "report.json", report)
    emit_metrics(out_dir, [("tv", report["tv"]),
                           ("certificate_margin", report["certificate"]["margin"])],
                 provenance)
    failures = []
    checks = cfg.get("assert", {})
    if "tv_max" in checks and not report["tv"] < checks["tv_max"]:
        failures.append(f"tv {report['tv']:.4f} above bound {checks['tv_max']}")
    if "certificate_passed" in checks and \
            report["certificate"]["passed"] != checks["certificate_passed"]:
        failures.append("certificate outcome differs from expectation")
    return failures


def cmd_phase_diagram(cfg: dict, out_dir: Path, provenance: dict) -> list[str]:
    presets = cfg.get("presets", [{"R": 1.0, "delta": 0.01}, {"R": 2.0, "delta": 0.1}])
    snr = np.asarray(cfg.get("snr_grid", np.logspace(-3, 2, 81).tolist()))
    kappa = np.asarray(cfg.get("kappa_grid", np.linspace(1.0, 30.0, 59).tolist()))
    rows = []
    for preset in presets:
        margins = certify.phase_diagram(preset, snr, kappa)
        for i, s in enumerate(snr):
            for j, k in enumerate(kappa):
                rows.append({"R": preset["R"], "delta": preset["delta"],
                             "snr": s, "kappa": k, "margin": margins[i, j]})
    write_csv(out_dir / "phase.csv", rows,
              ["R", "delta", "snr", "kappa", "margin"], provenance)
    return []


def cmd_iterated(cfg: dict, out_dir: Path, provenance: dict) -> list[str]:
    seed = int(cfg.get("seed", 0))
    d = int(cfg.get("d", 6))
    prior_cfg = cfg.get("prior", {"kind": "gaussian", "mean": 1.0, "delta": 1.0})
    if prior_cfg["kind"] == "gaussian":
        prior = GaussianMixturePrior(np.full((1, d), prior_cfg.get("mean", 1.0)),
                                     np.ones(1), prior_cfg.get("delta", 1.0))
    elif prior_cfg["kind"] == "bimodal":
        m = prior_cfg.get("separation", 3.0)
        prior = GaussianMixturePrior(np.stack([np.full(d, m), np.full(d, -m)]),
                                     np.array([0.5, 0.5]), prior_cfg.get("delta", 1.0))
    else:
        prior = GaussianMixturePrior.from_json(json.dumps(prior_cfg["spec"]))

    eigvals = np.asarray(cfg.get("eigvals", np.repeat([3.0, 2.0, 1.0], d // 3)[:d]))
    rng = experiments.make_rng(seed)
    V = experiments.random_orthogonal(rng, d)
    A = (np.sqrt(np.sort(eigvals)[::-1])[:, None] * V.T)
    x_star = prior.as_diag_gmm().sample(1, rng)[0]
    y = A @ x_star + rng.standard_normal(d)
    model = experiments.MeasurementModel(
        A=experiments.SpectralOperator(U=np.eye(d),
                                       singulars=np.sqrt(np.sort(eigvals)[::-1]), V=V),
        sigma=1.0, y=y)

    chi = (lambda t: prior.chi_value(t)) if prior.has_chi_bound else None
    if cfg.get("force_full_schedule", False):
        chi = None
    schedule = iterated_schedule(model, chi)
    (out_dir / "schedule.json").write_text(schedule.to_json())

    result = experiments.run_iterated(prior, model, schedule, cfg)
    write_csv(out_dir / "legs.csv", result["legs"],
              ["k", "t_start", "t_end", "eta", "marginalization_gap"], provenance)

    post = experiments.gmm_posterior_analytic(
        prior, experiments.posterior_tilt(model))
    samples = result["samples"].samples
    mean_err = float(np.abs(samples.mean(axis=0) - post.mean()).max())
    cov = np.cov(samples.T)
    cov_rel = float(np.linalg.norm(cov - post.cov()) / np.linalg.norm(post.cov()))
    ref = post.sample(samples.shape[0], experiments.make_rng(seed + 9))
    sw = metrics.sliced_wasserstein(samples, ref, seed=seed + 10)
    report = {"k_star": int(schedule.k_star), "mean_abs_err": mean_err,
              "cov_rel_err": cov_rel, "sw_to_analytic": sw,
              "legs": result["legs"], "provenance": provenance}
    write_json(out_dir / "report.json", report)
    emit_metrics(out_dir, [("mean_abs_err", mean_err), ("cov_rel_err", cov_rel),
                           ("sw_to_analytic", sw)], provenance)

    failures = []
    checks = cfg.get("assert", {})
    if "mean_err_max" in checks and not mean_err < checks["mean_err_max"]:
        failures.append(f"mean error {mean_err:.4f} above bound")
    if "cov_rel_max" in checks and not cov_rel < checks["cov_rel_max"]:
        failures.append(f"covariance error {cov_rel:.4f} above bound")
    return failures


COMMANDS = {
    "gmm-sweep": cmd_gmm_sweep,
    "phi4-acf": cmd_phi4,
    "ising": cmd_ising,
    "phase-diagram": cmd_phase_diagram,
    "iterated": cmd_iterated,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiltboost",
        description="Boosted posterior sampling experiments",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--out", type=Path, default=None, help="run directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--paper-scale", action="store_true",
                        help="use the large-scale presets instead of desk scale")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override a config entry, e.g. --set d=12")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg: dict = {}
    if args.config:
        cfg.update(json.loads(args.config.read_text()))
    if args.paper_scale:
        cfg.update(PAPER_SCALE.get(args.command, {}))
    for item in args.set:
        key, _, raw = item.partition("=")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    cfg.setdefault("seed", 0)

    out_dir = args.out or Path(f"runs/{args.command}")
    out_dir.mkdir(parents=True, exist_ok=True)
    provenance = {"config_hash": config_hash(cfg), "seed": cfg["seed"],
                  "git": git_describe()}
    write_json(out_dir / "config.json", cfg)
    write_json(out_dir / "meta.json", provenance)

    started = time.perf_counter()
    failures = COMMANDS[args.command](cfg, out_dir, provenance)
    elapsed = time.perf_counter() - started
    print(f"{args.command}: wrote {out_dir} in {elapsed:.1f}s "
          f"(config {provenance['config_hash']})")
    for failure in failures:
        print(f"ASSERTION FAILED: {failure}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
