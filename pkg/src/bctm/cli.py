"""Command-line surface: fit, predict, simulate, and score.

Data travels as headered UTF-8 CSV; model and experiment configurations as
JSON mirroring the in-memory dataclasses. A fit directory is self-contained
(model.json, the training data, per-chain draw CSVs, diagnostics and a run
manifest), so predict/score rebuild the design deterministically from the
stored artifacts. Exit codes: 0 success, 1 input error, 2 divergence abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from .data import DataSet
from .inference import posterior_cdf, posterior_quantile
from .model import ModelSpec, build_design
from .sampler import DivergenceAbort, PosteriorDraws, SamplerConfig, run_chains, run_mcmc
from .scoring import crps
from .simharness import ExperimentConfig, invert_cdf_curve, mean_cdf_rows, run_experiment

__all__ = ["main", "cmd_fit", "cmd_predict", "cmd_simulate", "cmd_score"]


class InputError(ValueError):
    """Bad user input (missing columns, malformed config): exit code 1."""


# --------------------------------------------------------------------------- #
# CSV <-> DataSet


def load_dataset(path, model: ModelSpec) -> DataSet:
    frame = pd.read_csv(path)
    needed = sorted({name for t in model.terms for name in t.covariates})
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise InputError(f"data file {path} lacks covariate column(s): {', '.join(missing)}")
    covariates = {}
    for name in needed:
        col = frame[name]
        kind = next(t.covariate_kind for t in model.terms if name in t.covariates)
        covariates[name] = (
            col.to_numpy() if kind in ("random_effect", "spatial")
            else col.to_numpy(dtype=float)
        )

    if "status" in frame.columns:
        for col in ("y_left", "y_right"):
            if col not in frame.columns:
                raise InputError("status-coded data needs y_left and y_right columns")
        try:
            return DataSet.from_censored(
                frame["status"].tolist(),
                y_low=frame["y_left"].to_numpy(dtype=float),
                y_high=frame["y_right"].to_numpy(dtype=float),
                covariates=covariates,
            )
        except (KeyError, ValueError) as exc:
            raise InputError(f"bad censoring encoding in {path}: {exc}") from exc
    if "y" not in frame.columns:
        raise InputError(f"data file {path} needs a y column (or y_left/y_right/status)")
    return DataSet.from_exact(frame["y"].to_numpy(dtype=float), covariates)


def load_model(path, adjacency_csv=None) -> ModelSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model config {path}: {exc}") from exc
    if adjacency_csv is not None:
        edges = pd.read_csv(adjacency_csv)
        cols = list(edges.columns[:2])
        pairs = [(str(a), str(b)) for a, b in edges[cols].itertuples(index=False)]
        for term in doc.get("terms", []):
            if term.get("covariate_kind") == "spatial" and not term.get("adjacency"):
                term["adjacency"] = pairs
    try:
        return ModelSpec.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid model config {path}: {exc}") from exc


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, payload: dict, outputs, seed, wall, extra=None):
    manifest = {
        "command": command,
        "config_hash": _config_hash(payload),
        "seed": seed,
        "wall_seconds": wall,
        "outputs": sorted(str(p) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _draws_frame(draws: PosteriorDraws) -> pd.DataFrame:
    md = draws.design
    cols = {}
    for k, name in enumerate(md.coefficient_labels()):
        cols[name] = draws.beta[:, k]
    for j, td in enumerate(md.terms):
        cols[f"tau2[{td.label}]"] = draws.tau2[:, j]
        cols[f"omega[{td.label}]"] = draws.omega[:, j]
    return pd.DataFrame(cols)


def _sampler_config(args, seed) -> SamplerConfig:
    if args.profile == "fast":
        cfg = SamplerConfig.fast(seed=seed, chains=args.chains)
    else:
        cfg = SamplerConfig(seed=seed, chains=args.chains)
    if args.iterations is not None:
        burn = args.warmup if args.warmup is not None else min(cfg.burn_in, args.iterations // 2)
        warm = args.warmup if args.warmup is not None else min(cfg.warmup, args.iterations // 2)
        cfg = SamplerConfig(iterations=args.iterations, warmup=warm, burn_in=burn,
                            seed=seed, chains=args.chains,
                            target_accept=args.target_accept or cfg.target_accept)
    elif args.warmup is not None:
        cfg = SamplerConfig(iterations=cfg.iterations, warmup=args.warmup, burn_in=args.warmup,
                            seed=seed, chains=args.chains,
                            target_accept=args.target_accept or cfg.target_accept)
    elif args.target_accept is not None:
        cfg = SamplerConfig(iterations=cfg.iterations, warmup=cfg.warmup, burn_in=cfg.burn_in,
                            seed=seed, chains=args.chains, target_accept=args.target_accept)
    return cfg


# --------------------------------------------------------------------------- #
# subcommands


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    model = load_model(args.model, args.adjacency)
    data = load_dataset(args.data, model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else (model.seed or 0)
    cfg = _sampler_config(args, seed)

    if cfg.chains > 1:
        all_draws = run_chains(model, data, cfg)
    else:
        all_draws = [run_mcmc(model, data, cfg)]

    outputs = []
    diag_all = {}
    for c, draws in enumerate(all_draws):
        name = "draws.csv" if cfg.chains == 1 else f"draws_chain{c + 1}.csv"
        _draws_frame(draws).to_csv(out_dir / name, index=False)
        outputs.append(name)
        d = draws.diagnostics
        diag_all[f"chain{c + 1}"] = {
            "seed": int(d["seed"]),
            "step_size": d["step_size"],
            "mean_accept_post_warmup": d["mean_accept_post_warmup"],
            "divergences_post_warmup": d["divergences_post_warmup"],
            "divergence_fraction": d["divergence_fraction"],
            "min_ess": d["min_ess"],
            "counters": d["counters"],
        }

    pd.read_csv(args.data).to_csv(out_dir / "training_data.csv", index=False)
    with open(out_dir / "model.json", "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2)
    with open(out_dir / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(diag_all, fh, indent=2)
    outputs += ["training_data.csv", "model.json", "diagnostics.json"]

    fit_meta = {
        "sampler": {
            "iterations": cfg.iterations, "warmup": cfg.warmup, "burn_in": cfg.burn_in,
            "target_accept": cfg.target_accept, "chains": cfg.chains,
        },
    }
    with open(out_dir / "fit.json", "w", encoding="utf-8") as fh:
        json.dump(fit_meta, fh, indent=2)
    outputs.append("fit.json")

    _write_manifest(out_dir, "fit", {"model": model.to_dict(), "cfg": fit_meta, "seed": seed},
                    outputs, seed, time.perf_counter() - t0)
    print(f"fit complete: {len(all_draws)} chain(s), outputs in {out_dir}")
    return 0


def _reload_fit(fit_dir: Path) -> list[PosteriorDraws]:
    """Rebuild the design from stored artifacts and reattach the draw CSVs."""
    model = load_model(fit_dir / "model.json")
    data = load_dataset(fit_dir / "training_data.csv", model)
    with open(fit_dir / "manifest.json", encoding="utf-8") as fh:
        seed = json.load(fh)["seed"]
    md = build_design(model, data, np.random.default_rng(seed))

    paths = sorted(fit_dir.glob("draws_chain*.csv")) or [fit_dir / "draws.csv"]
    out = []
    for p in paths:
        if not p.exists():
            raise InputError(f"fit directory {fit_dir} has no draw files")
        frame = pd.read_csv(p)
        n_beta = md.n_beta
        beta = frame.iloc[:, :n_beta].to_numpy()
        J = len(md.terms)
        tau2 = np.column_stack([frame[f"tau2[{td.label}]"] for td in md.terms]) if J else np.empty((len(frame), 0))
        omega = np.column_stack([frame[f"omega[{td.label}]"] for td in md.terms]) if J else np.empty((len(frame), 0))
        out.append(PosteriorDraws(beta, tau2, omega, {"source": str(p)}, md, None))
    return out


def _pool_chains(all_draws: list[PosteriorDraws]) -> PosteriorDraws:
    first = all_draws[0]
    if len(all_draws) == 1:
        return first
    return PosteriorDraws(
        np.vstack([d.beta for d in all_draws]),
        np.vstack([d.tau2 for d in all_draws]),
        np.vstack([d.omega for d in all_draws]),
        {"pooled_chains": len(all_draws)},
        first.design,
        None,
    )


def load_fit(fit_dir) -> PosteriorDraws:
    """Pooled posterior draws (all chains) from a fit directory."""
    return _pool_chains(_reload_fit(Path(fit_dir)))


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    fit_dir = Path(args.fit_dir)
    draws = load_fit(fit_dir)
    md = draws.design
    model = md.spec
    new = pd.read_csv(args.data)
    needed = sorted({name for t in model.terms for name in t.covariates})
    missing = [c for c in needed if c not in new.columns]
    if missing:
        raise InputError(f"new data lacks covariate column(s): {', '.join(missing)}")

    out_dir = Path(args.out) if args.out else fit_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    def row_cov(i):
        return {name: new[name].iloc[i] for name in needed}

    if args.quantiles:
        alphas = [float(a) for a in args.quantiles.split(",")]
        records = []
        for i in range(len(new)):
            for a in alphas:
                est = posterior_quantile(draws, row_cov(i), a)
                records.append((i, a, est.mean, est.lower, est.upper))
        frame = pd.DataFrame(records, columns=["row", "alpha", "mean", "lower", "upper"])
        frame.to_csv(out_dir / "quantiles.csv", index=False)
        outputs.append("quantiles.csv")

    if args.cdf_grid:
        lo, hi = md.response_domain
        y_grid = np.linspace(lo, hi, int(args.cdf_grid))
        records = []
        for i in range(len(new)):
            est = posterior_cdf(draws, row_cov(i), y_grid)
            for k, y in enumerate(y_grid):
                records.append((i, y, est.mean_cdf[k], est.lower[k], est.upper[k], est.mean_density[k]))
        frame = pd.DataFrame(records, columns=["row", "y", "mean_cdf", "lower", "upper", "mean_density"])
        frame.to_csv(out_dir / "cdf.csv", index=False)
        outputs.append("cdf.csv")

    if not outputs:
        raise InputError("nothing to predict: pass --quantiles and/or --cdf-grid")
    _write_manifest(out_dir, "predict", {"fit": str(fit_dir), "data": str(args.data)},
                    outputs, None, time.perf_counter() - t0)
    print(f"predictions written to {out_dir}: {', '.join(outputs)}")
    return 0


def cmd_simulate(args) -> int:
    try:
        with open(args.experiment, encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise InputError(f"invalid experiment config {args.experiment}: {exc}") from exc
    if args.seed is not None:
        cfg.seed = args.seed
    if args.profile is not None:
        cfg.profile = args.profile
    scores = run_experiment(cfg, args.out)
    print(f"experiment complete: {scores}")
    return 0


def cmd_score(args) -> int:
    """Out-of-sample (or in-sample) log-scores of a fit; the manual building
    block for k-fold cross validation."""
    from scipy.special import logsumexp

    from .inference import loglik_matrix

    t0 = time.perf_counter()
    fit_dir = Path(args.fit_dir)
    draws = load_fit(fit_dir)
    md = draws.design
    data = load_dataset(args.data, md.spec) if args.data else md.data

    ll = loglik_matrix(draws, None if args.data is None else data)
    log_scores = logsumexp(ll, axis=0) - np.log(draws.S)
    records = [("all", "mean_log_score", float(log_scores.mean()))]
    records += [(i, "log_score", float(v)) for i, v in enumerate(log_scores)]

    if args.crps:
        lo, hi = md.response_domain
        y_fine = np.linspace(lo, hi, 401)
        rows = {k: v for k, v in data.covariates.items()}
        curves = mean_cdf_rows(draws, rows, y_fine)
        exact = np.isfinite(data.y)
        for i in np.flatnonzero(exact):
            curve = curves[i]
            val = crps(lambda a: invert_cdf_curve(y_fine, curve, a), float(data.y[i]))
            records.append((i, "crps", val))

    out_dir = Path(args.out) if args.out else fit_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(records, columns=["row", "metric", "value"])
    frame.to_csv(out_dir / "scores.csv", index=False)
    _write_manifest(out_dir, "score", {"fit": str(fit_dir)}, ["scores.csv"], None,
                    time.perf_counter() - t0)
    print(f"scores written to {out_dir / 'scores.csv'}")
    return 0


# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bctm",
        description="Conditional-distribution regression via monotone transformation splines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to CSV data")
    fit.add_argument("data", help="training data CSV")
    fit.add_argument("model", help="model JSON")
    fit.add_argument("out", help="output directory")
    fit.add_argument("--adjacency", help="edge-list CSV (region_a,region_b) for spatial terms")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--chains", type=int, default=1)
    fit.add_argument("--iterations", type=int)
    fit.add_argument("--warmup", type=int)
    fit.add_argument("--target-accept", dest="target_accept", type=float)
    fit.add_argument("--profile", choices=("full", "fast"), default="full")
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="cdf curves / quantiles for new rows")
    pred.add_argument("fit_dir")
    pred.add_argument("data", help="new data CSV (covariates only)")
    pred.add_argument("--quantiles", help="comma-separated levels, e.g. 0.1,0.5,0.9")
    pred.add_argument("--cdf-grid", dest="cdf_grid", type=int, help="points on the response grid")
    pred.add_argument("--out", help="output directory (defaults to the fit directory)")
    pred.set_defaults(func=cmd_predict)

    sim = sub.add_parser("simulate", help="run a simulation experiment")
    sim.add_argument("experiment", help="experiment JSON")
    sim.add_argument("out", help="results directory")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--profile", choices=("full", "fast"))
    sim.set_defaults(func=cmd_simulate)

    score = sub.add_parser("score", help="log-scores (and optional CRPS) of a fit")
    score.add_argument("fit_dir")
    score.add_argument("--data", help="held-out rows CSV (defaults to the training data)")
    score.add_argument("--crps", action="store_true")
    score.add_argument("--out")
    score.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceAbort as exc:
        print(f"sampler aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
