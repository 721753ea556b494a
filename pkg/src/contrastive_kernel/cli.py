"""Command-line runner: named pipelines driven by one TOML config and one master seed.

Every module seed is ``derive_seed(master, <stream name>, ...)``, so adding a
stream never shifts the others. Exit codes: 0 success, 1 a check failed while
its hypotheses held, 2 invalid config or arguments.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .classifier import TrainConfig, init_model, train
from .config import ExperimentConfig, load_config
from .contrastive_data import ContrastSpec, PairDataset, build_pairs, sample_iid_pairs
from .diffusion import PotentialSpec, expected_norm_b, expected_norm_quadrature, simulate_trajectory
from .errors import ConstructionError, ContrastiveKernelError, InvalidConfigError, UnsupportedError
from .kernel_extraction import dump_grid_csv, extract_p_eta, normalization_check
from .mixing import (
    GeneralizationConfig,
    MLPClass,
    beta_pair_exact,
    beta_point,
    empirical_rademacher,
    generalization_gap_measure,
    mixing_bound_check,
    random_chain,
    select_mu,
    tv_bound,
)
from .numerics import derive_seed, jsonable
from .theory_metrics import (
    QuadratureSpec,
    epsilon_star,
    kernel_bounds_fit,
    kernel_mass,
    kl_to_truth,
    loglog_slope,
    make_perturbed_kernel,
    theorem_kl_check,
    theorem_orig_check,
)

SUBCOMMANDS = ("simulate", "build-dataset", "train", "extract", "check-kl", "check-l1",
               "check-mixing", "check-generalization", "check-kernel-bounds", "report")
CHECK_FILES = {"check-kl": "check_kl.json", "check-l1": "check_l1.json",
               "check-mixing": "check_mixing.json", "check-generalization": "check_generalization.json",
               "check-kernel-bounds": "check_kernel_bounds.json"}


# ---------------------------------------------------------------- pipeline pieces


def make_potential(cfg: ExperimentConfig) -> PotentialSpec:
    p = cfg.potential
    if p.kind == "ou":
        return PotentialSpec.ou(p.theta * np.eye(p.d))
    return PotentialSpec.named(p.name, p.d)


def make_contrast(kind: str, spec: PotentialSpec, eta: float, variance: float = 0.0) -> ContrastSpec:
    var = variance if variance > 0 else 2.0 * eta
    if kind == "matched_ou":
        if not spec.is_ou:
            raise InvalidConfigError("task.contrast: matched_ou needs an OU potential")
        return ContrastSpec.matched_ou(spec.theta, eta)
    if kind == "stationary":
        return ContrastSpec.stationary(spec, eta)
    if kind == "random_walk":
        return ContrastSpec.random_walk(spec.d, var)
    return ContrastSpec.isotropic_gaussian(np.zeros(spec.d), var)


def quadrature(cfg: ExperimentConfig) -> QuadratureSpec:
    c = cfg.checks
    return QuadratureSpec(n_x=c.n_x, n_xp=c.n_xp, n_panels=c.n_panels, n_mc=c.n_mc,
                          seed=derive_seed(cfg.task.seed, "quadrature-mc"),
                          grid_radius=cfg.task.box_radius, grid_n=c.grid_n)


class Run:
    """One subcommand invocation: resolved config, output directory, and the files written."""

    def __init__(self, cfg: ExperimentConfig, out: Path, command: str, threads: int = 1):
        self.cfg, self.out, self.command, self.threads = cfg, out, command, int(threads)
        self.files: list[Path] = []
        self.seeds: dict[str, int] = {"master": cfg.task.seed}
        self.spec = make_potential(cfg)
        self.eta = cfg.task.eta
        self.contrast = make_contrast(cfg.task.contrast, self.spec, self.eta, cfg.task.contrast_variance)

    def seed(self, *keys) -> int:
        s = derive_seed(self.cfg.task.seed, *keys)
        self.seeds["/".join(map(str, keys))] = s
        return s

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")
        return p

    def write_table(self, stem: str, header: list[str], rows: list[list]) -> Path:
        """CSV or JSON table depending on ``output.format``."""
        if self.cfg.output.format == "json":
            return self.write_json(stem + ".json", [dict(zip(header, r)) for r in rows])
        p = self.path(stem + ".csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
        return p

    # -- stages shared by several subcommands

    def trajectory(self):
        t = self.cfg.task
        return simulate_trajectory(self.spec, t.eta, t.T, seed=self.seed("trajectory"), substeps=t.substeps)

    def dataset(self) -> PairDataset:
        return build_pairs(self.trajectory(), self.contrast, seed=self.seed("pairs"))

    def train_model(self, data: PairDataset):
        m = self.cfg.model
        # model.train.seed selects a stream under the master seed
        tc = TrainConfig(**{**dataclasses.asdict(m.train), "seed": self.seed("train", m.train.seed)})
        model = init_model(self.spec.d, tuple(m.hidden), m.activation, seed=self.seed("init"))
        return train(model, data, tc)


# ---------------------------------------------------------------- subcommands


def cmd_simulate(run: Run) -> bool | None:
    traj = run.trajectory()
    traj.to_csv(run.path("trajectory.csv"))
    return None


def cmd_build_dataset(run: Run) -> bool | None:
    data = run.dataset()
    side = data.to_csv(run.path("pairs.csv"))
    run.files.append(side)
    return None


def _train_summary(run: Run, res, data: PairDataset) -> dict:
    summary = {"train_risk": res.train_risk, "holdout_risk": res.holdout_risk,
               "initial_risk": res.initial_risk, "best_epoch": res.best_epoch,
               "n_pairs": len(data), "dataset_digest": data.digest()}
    if run.spec.is_ou and run.spec.d == 1:
        eps = float(epsilon_star(run.spec, run.contrast, run.eta, quad=quadrature(run.cfg)))
        summary["eps_star"] = eps
        summary["holdout_gap_to_eps_star"] = res.holdout_risk - eps
    return summary


def cmd_train(run: Run) -> bool | None:
    data = run.dataset()
    res = run.train_model(data)
    res.model.save(run.path("model.json"))
    run.write_table("loss_curve", ["epoch", "train_risk", "holdout_risk"],
                    [[r["epoch"], float(r["train_risk"]), float(r["holdout_risk"])] for r in res.loss_curve])
    run.write_json("train_summary.json", _train_summary(run, res, data))
    return None


def cmd_extract(run: Run) -> bool | None:
    cfg = run.cfg
    data = run.dataset()
    res = run.train_model(data)
    res.model.save(run.path("model.json"))
    ker = extract_p_eta(res.model, run.contrast, cfg.checks.clamp_eps)
    grid = np.linspace(-cfg.task.box_radius, cfg.task.box_radius, cfg.checks.extract_grid_n)
    axis = np.zeros((grid.size, run.spec.d))
    axis[:, 0] = grid
    dump_grid_csv(ker, run.path("kernel_grid.csv"), axis, axis)
    probes = np.zeros((len(cfg.checks.normalization_probes), run.spec.d))
    probes[:, 0] = cfg.checks.normalization_probes
    if run.spec.d == 1:
        norm = normalization_check(ker, probes)
    else:
        norm = normalization_check(ker, probes, mode="mc", n_mc=100_000, seed=run.seed("normalization"))
    report = {"normalization": norm.to_dict(), "train": _train_summary(run, res, data)}
    if run.spec.is_ou:
        x, xp, _ = sample_iid_pairs(run.spec, run.contrast, run.eta, 100_000, run.seed("clamp-probes"))
        report["clamp_rate"] = ker.clamp_fraction(x, xp)
    if run.spec.is_ou and run.spec.d == 1:
        quad = quadrature(cfg)
        report["kl_to_truth"] = float(kl_to_truth(ker, run.spec, run.eta, quad))
        report["kernel_mass"] = float(kernel_mass(ker, run.spec, run.eta, quad))
    run.write_json("normalization.json", report)
    return None


def _verdict(reports: list[dict]) -> bool | None:
    """False if any report with satisfied hypotheses failed; None if no report could judge."""
    judged = [r["pass"] for r in reports if r.get("pass") is not None]
    if not judged:
        return None
    return all(judged)


def cmd_check_kl(run: Run) -> bool | None:
    cfg, c = run.cfg, run.cfg.checks
    quad = quadrature(cfg)

    def one(amp):
        try:
            p = make_perturbed_kernel(run.spec, run.eta, c.perturbation, amplitude=float(amp),
                                      theorem_kl=True, quad=quad)
        except ConstructionError as exc:
            return {"theorem": "kl", "amplitude": amp, "pass": None, "hypothesis_satisfied": False,
                    "error": str(exc)}
        rep = theorem_kl_check(p, run.spec, run.contrast, run.eta, quad, c.cq_grid_n).to_dict()
        fine = float(kl_to_truth(p, run.spec, run.eta, quad.doubled()))
        rel = abs(fine - rep["lhs"]) / max(abs(fine), 1e-300)
        rep.update({"amplitude": amp, "perturbation": p.describe(),
                    "lhs_doubled_nodes": fine, "node_doubling_rel_change": rel})
        return rep

    if c.kl_source == "trained":
        res = run.train_model(run.dataset())
        ker = extract_p_eta(res.model, run.contrast, c.clamp_eps)
        reports = [theorem_kl_check(ker, run.spec, run.contrast, run.eta, quad, c.cq_grid_n).to_dict()]
    else:
        with ThreadPoolExecutor(max_workers=run.threads) as pool:
            reports = list(pool.map(one, c.kl_amplitudes))
    verdict = _verdict(reports)
    run.write_json("check_kl.json", {"check": "kl", "source": c.kl_source, "pass": verdict,
                                      "reports": reports, "quadrature": quad.describe()})
    return verdict


def cmd_check_l1(run: Run) -> bool | None:
    cfg, c = run.cfg, run.cfg.checks
    quad = quadrature(cfg)

    def one(eta):
        q = make_contrast(c.l1_contrast, run.spec, eta)
        p = make_perturbed_kernel(run.spec, eta, c.perturbation, amplitude=c.l1_amplitude, quad=quad)
        rep = theorem_orig_check(p, run.spec, q, eta, quad, c.cq_grid_n).to_dict()
        rep["contrast"] = q.to_dict()
        return rep

    with ThreadPoolExecutor(max_workers=run.threads) as pool:
        reports = list(pool.map(one, c.l1_etas))
    etas = [float(e) for e in c.l1_etas]
    t2 = [float(r["extras"]["t2"]) for r in reports]
    slope = loglog_slope(etas, t2) if len(etas) > 1 else float("nan")
    d = run.spec.d
    slope_ok = bool(abs(slope + d) <= 0.3 * d) if math.isfinite(slope) else None
    run.write_table("t2_sweep", ["eta", "t2", "lhs", "rhs"],
                    [[e, v, float(r["lhs"]), float(r["rhs"])] for e, v, r in zip(etas, t2, reports)])
    verdict = _verdict(reports)
    run.write_json("check_l1.json", {"check": "l1", "pass": verdict, "reports": reports,
                                      "t2_slope": slope, "t2_target_slope": -d, "t2_slope_ok": slope_ok,
                                      "quadrature": quad.describe()})
    return verdict


def cmd_check_mixing(run: Run) -> bool | None:
    cfg, c = run.cfg, run.cfg.checks
    spec = run.spec
    if not (spec.is_ou and spec.d == 1):
        raise InvalidConfigError("check-mixing needs a one-dimensional OU potential")
    xs = np.linspace(-c.mixing_x_radius, c.mixing_x_radius, c.mixing_x_n)
    rep = mixing_bound_check(spec, c.mixing_t, xs)
    b_ref = math.sqrt(2.0 / (math.pi * spec.theta[0, 0]))
    b_ok = abs(rep.B - b_ref) <= 1e-6
    keys = ["x", "t", "tv", "bound", "ok", "x_dependent_bound"]
    run.write_table("mixing_grid", keys, [[r[k] for k in keys] for r in rep.rows])
    betas = [beta_point(spec, float(t)) for t in c.mixing_t]
    bounds = [float(min(1.0, tv_bound(rep.B, t))) for t in c.mixing_t]
    run.write_table("beta_curve", ["t", "value", "bound"],
                    [[float(t), b, u] for t, b, u in zip(c.mixing_t, betas, bounds)])

    rng = np.random.default_rng(run.seed("chain-sizes"))
    sizes = rng.integers(2, c.chain_states_max + 1, size=c.chains)
    rows, worst, sandwich = [], 0.0, True
    for i, n in enumerate(sizes):
        res = beta_pair_exact(random_chain(int(n), seed=derive_seed(cfg.task.seed, "chain", i)),
                              range(1, c.chain_lags + 1))
        worst = max(worst, res.max_abs_diff)
        sandwich &= res.sandwich_ok
        for t, bp, bq, bl in zip(res.t, res.beta_points, res.beta_pairs, res.beta_pairs_labeled):
            rows.append([i, int(n), t, bp, bq, bl, abs(bq - bp)])
    run.write_table("beta_pairs", ["chain", "n_states", "t", "beta_points", "beta_pairs",
                                   "beta_pairs_labeled", "abs_diff"], rows)
    pair_ok = worst <= 1e-12
    verdict = bool(rep.passed and b_ok and pair_ok)
    run.write_json("check_mixing.json", {
        "check": "mixing", "pass": verdict, "hypothesis_satisfied": True,
        "tv_bound": {"pass": rep.passed, "n_violations": rep.n_violations, "n_points": len(rep.rows),
                     "B": rep.B, "B_reference": b_ref, "B_ok": b_ok,
                     "max_tv_minus_bound": max(r["tv"] - r["bound"] for r in rep.rows),
                     "max_tv_minus_x_dependent_bound": max(r["tv"] - r["x_dependent_bound"] for r in rep.rows)},
        "beta_pairs": {"pass": pair_ok, "n_chains": int(c.chains), "lags": int(c.chain_lags),
                       "max_abs_diff": worst, "sandwich_ok": bool(sandwich)},
    })
    return verdict


def cmd_check_generalization(run: Run) -> bool | None:
    cfg, c = run.cfg, run.cfg.checks
    spec = run.spec
    gap = generalization_gap_measure(spec, run.contrast, run.eta, c.gen_T, TrainConfig(**dataclasses.asdict(cfg.model.train)),
                                     n_repeats=c.gen_repeats, n_mc=c.gen_n_mc,
                                     seed=run.seed("generalization"), hidden=tuple(cfg.model.hidden),
                                     min_steps=c.gen_min_steps, n_workers=run.threads)
    run.write_table("gap_table", ["T", "m", "gap_mean", "gap_se", "oracle_gap_mean", "oracle_gap_se", "epochs"],
                    [[r.T, r.m, r.gap_mean, r.gap_se, r.oracle_gap_mean, r.oracle_gap_se, r.epochs]
                     for r in gap.rows])
    first, last = gap.rows[0], gap.rows[-1]
    pooled = math.hypot(first.gap_se, last.gap_se)
    trend_ok = bool(first.gap_mean - last.gap_mean > 2.0 * pooled)

    B = (expected_norm_quadrature(spec) if spec.d == 1
         else expected_norm_b(spec, seed=run.seed("norm-b")).b_estimate)
    gcfg = GeneralizationConfig(T=c.mu_T, eta=run.eta, delta=c.mu_delta, k_proxy=c.mu_k, B=B,
                                delta_gen_target=c.delta_gen_target)
    sel = select_mu(gcfg)
    run.write_table("mu_sweep", ["mu", "bound", "valid"],
                    [[m, float("nan") if b is None else b, b is not None]
                     for m, b in zip(sel.mu_grid, sel.bounds)])
    recipes_ok = all(v is not None and math.isfinite(v)
                     for v in (sel.recipe_mu_squared, sel.recipe_mu_linear, sel.T_required))

    rad = []
    if spec.is_ou:
        for mu in c.rademacher_mu:
            x, xp, _ = sample_iid_pairs(spec, run.contrast, run.eta, int(mu), run.seed("rademacher-data", mu))
            est = empirical_rademacher(MLPClass(spec.d, tuple(cfg.model.hidden), cfg.model.activation),
                                       x, xp, c.rademacher_draws, seed=run.seed("rademacher", mu))
            rad.append({"mu": int(mu), "estimate": est.mean, "se": est.se, "n_sign_draws": est.n})
    verdict = bool(trend_ok and sel.feasible and sel.interior and recipes_ok)
    run.write_json("check_generalization.json", {
        "check": "generalization", "pass": verdict, "hypothesis_satisfied": True,
        "gap": gap.to_dict(), "trend_ok": trend_ok, "pooled_se": pooled,
        "select_mu": {k: v for k, v in sel.to_dict().items() if k not in ("mu_grid", "bounds")},
        "B": B, "recipes_ok": recipes_ok, "rademacher": rad,
        "note": "gap is measured at the trained model; it is a lower estimate of the sup over the class",
    })
    return verdict


def cmd_check_kernel_bounds(run: Run) -> bool | None:
    c = run.cfg.checks
    reps = [kernel_bounds_fit(run.spec, float(e), radius=run.cfg.task.box_radius, n_per_axis=c.bounds_n).to_dict()
            for e in c.bounds_etas]
    verdict = all(r["feasible"] for r in reps)
    run.write_json("check_kernel_bounds.json", {"check": "kernel_bounds", "pass": verdict,
                                                "hypothesis_satisfied": True, "reports": reps})
    return verdict


def cmd_report(run: Run) -> bool | None:
    """Aggregate the check files found in the output directory; nothing is recomputed."""
    rows, lines = [], []
    for cmd, name in CHECK_FILES.items():
        p = run.out / name
        if not p.exists():
            lines.append(f"{cmd:<22} not run")
            continue
        data = json.loads(p.read_text())
        man = run.out / f"manifest_{cmd}.json"
        chash = json.loads(man.read_text())["config_hash"] if man.exists() else ""
        verdict = {True: "pass", False: "FAIL", None: "no claim"}[data.get("pass")]
        lines.append(f"{cmd:<22} {verdict:<9} {name}")
        for r in data.get("reports") or [data]:
            rows.append([cmd, r.get("theorem", data["check"]), chash,
                         r.get("lhs", ""), r.get("rhs", ""), r.get("pass", r.get("feasible"))])
    run.write_table("summary", ["check", "theorem", "config_hash", "lhs", "rhs", "pass"], rows)
    run.path("summary.txt").write_text("\n".join(lines) + "\n")
    return None


COMMANDS = {"simulate": cmd_simulate, "build-dataset": cmd_build_dataset, "train": cmd_train,
            "extract": cmd_extract, "check-kl": cmd_check_kl, "check-l1": cmd_check_l1,
            "check-mixing": cmd_check_mixing, "check-generalization": cmd_check_generalization,
            "check-kernel-bounds": cmd_check_kernel_bounds, "report": cmd_report}


# ---------------------------------------------------------------- entry point


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run: Run, verdict: bool | None, started: str) -> Path:
    cfg_path = run.path("config_resolved.json")
    cfg_path.write_text(json.dumps(run.cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest = {
        "command": run.command, "config_hash": run.cfg.digest(), "seeds": run.seeds,
        "threads": run.threads, "pass": verdict, "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "versions": {"contrastive_kernel": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "files": [{"path": p.name, "sha256": _sha256(p)} for p in run.files if p.exists()],
    }
    out = run.out / f"manifest_{run.command}.json"
    out.write_text(json.dumps(jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contrastive-kernel", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, help="TOML config; omitted sections take their defaults")
    ap.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides task.seed)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sweeps (default 1)")
    ap.add_argument("--format", choices=("csv", "json"), help="table format (overrides output.format)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config is not None else ExperimentConfig().validate()
        if args.seed is not None:
            cfg.task.seed = int(args.seed)
        if args.format is not None:
            cfg.output.format = args.format
        if args.out is not None:
            cfg.output.dir = str(args.out)
        if args.threads < 1:
            raise InvalidConfigError("--threads must be >= 1")
        out = Path(cfg.output.dir)
        run = Run(cfg, out, args.command, args.threads)
    except (InvalidConfigError, ContrastiveKernelError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"command": args.command, "config": cfg.to_dict()}, sort_keys=True))
    started = datetime.now(timezone.utc).isoformat()
    out.mkdir(parents=True, exist_ok=True)
    try:
        verdict = COMMANDS[args.command](run)
    except (InvalidConfigError, UnsupportedError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    manifest = write_manifest(run, verdict, started)
    print(f"{args.command}: {'FAIL' if verdict is False else 'ok'}; manifest {manifest}")
    return 1 if verdict is False else 0


if __name__ == "__main__":
    sys.exit(main())
