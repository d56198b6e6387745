"""Command-line entry point.

    pacb certify  --config run.json --out results/
    pacb coverage --config run.json --out results/ --threads 4

Exit codes: 0 success, 1 configuration or validation error, 2 diverged or
infeasible bound. Outputs carry no timestamps, so identical configs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds, experiments
from .config import RunConfig, load_config, with_overrides
from .datagen import load_dataset_csv, sample_dataset, write_dataset_csv
from .errors import ConfigError, DivergenceError, PacbError
from .experiments import to_csv
from .model import IIDIsotropic
from .rng import SeedSpec, resolve_threads
from .spectral import rho_sequence

COMMANDS = ("certify", "coverage", "compare", "sweep", "spectrum", "simulate")


def data_seed(seed: int) -> SeedSpec:
    """Stream for the dataset a command generates; shared by ``simulate`` and ``certify``."""
    return SeedSpec(seed).child(0)


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_table(table: experiments.SweepTable, out: Path, stem: str, fmt: str) -> list[Path]:
    if fmt == "json":
        p = out / f"{stem}.json"
        _dump_json(table.as_dict(), p)
        return [p]
    p = out / f"{stem}.csv"
    p.write_text(table.to_csv(), encoding="utf-8")
    summary = table.as_dict()
    summary.pop("rows")
    q = out / f"{stem}_summary.json"
    _dump_json(summary, q)
    return [p, q]


def _prior(cfg: RunConfig):
    if cfg.prior is None:
        raise ConfigError("config needs a prior section")
    return cfg.prior


def _dataset(cfg: RunConfig):
    if "dataset" in cfg.raw:
        S = load_dataset_csv(cfg.raw["dataset"])
        if S.d != cfg.model.d:
            raise ConfigError(f"dataset has d={S.d}, model has d={cfg.model.d}")
        return S
    cfg.require("n")
    return sample_dataset(cfg.model, cfg.raw["n"], data_seed(cfg.seed))


def cmd_certify(cfg: RunConfig, out: Path, fmt: str, threads: int) -> list[Path]:
    cfg.require("lambda")
    prior = _prior(cfg)
    kind = cfg.get("bound")
    lam = cfg.raw["lambda"]
    if kind == "thm2":
        # domain checks before any sampling
        sigma_pi = prior.base.isotropic_sigma()
        if not isinstance(cfg.model, IIDIsotropic) or prior.truncated or sigma_pi is None:
            raise ConfigError("the earlier bound needs an iid model and an untruncated isotropic prior")
        bounds.thm2_additive_term(sigma_pi, cfg.model, lam, cfg.raw.get("c"))
    if kind == "bounded_loss" and "loss_bound" not in cfg.raw:
        raise ConfigError("bounded_loss needs loss_bound")
    if kind in ("thm3_exact", "thm3_relaxed", "thm4") and not bounds.finiteness_check(prior, cfg.model, lam, kind):
        raise DivergenceError(bounds._finiteness_message(prior, cfg.model, lam, kind))
    S = _dataset(cfg)
    cert = bounds.certify(
        S, cfg.model, prior, lam, cfg.get("delta"), kind,
        M=cfg.get("M"), seed=cfg.seed, c=cfg.raw.get("c"), loss_bound=cfg.raw.get("loss_bound"),
        rho_n=cfg.raw.get("rho_n"), sampler=cfg.get("sampler"), threads=threads, digest=cfg.digest,
    )
    d = cert.as_dict()
    if fmt == "csv":
        flat = [("bound_kind", d["bound_kind"]), ("lambda", d["lambda"]), ("delta", d["delta"]), ("n", d["n"]),
                ("d", d["d"]), ("expected_empirical", d["expected_empirical"]), ("kl", d["kl"]),
                ("psi_value", d["psi"]["value"]), ("psi_std_error", d["psi"]["std_error"]),
                ("psi_method", d["psi"]["method"]), ("psi_ess", d["psi"]["ess"]), ("rhs", d["rhs"]),
                ("rhs_std_error", d["rhs_std_error"]), ("config_digest", d["config_digest"])]
        p = out / "certificate.csv"
        p.write_text(to_csv(("field", "value"), flat), encoding="utf-8")
        return [p]
    p = out / "certificate.json"
    _dump_json(d, p)
    return [p]


def cmd_coverage(cfg: RunConfig, out: Path, fmt: str, threads: int) -> list[Path]:
    cfg.require("lambda", "n", "trials")
    rep = experiments.coverage_experiment(
        cfg.model, _prior(cfg), cfg.raw["lambda"], cfg.get("delta"), cfg.raw["n"], cfg.raw["trials"],
        cfg.get("bound"), seed=cfg.seed, M=cfg.get("M"), threads=threads,
        fixed_posterior=cfg.get("fixed_posterior"), loss_bound=cfg.raw.get("loss_bound"), digest=cfg.digest,
    )
    p = out / "coverage.json"
    summary = rep.as_dict()
    if fmt == "json":
        summary["trials_table"] = [
            {"trial": i, "lhs": float(l), "rhs": float(r), "violation": bool(l > r)}
            for i, (l, r) in enumerate(zip(rep.lhs, rep.rhs))
        ]
        _dump_json(summary, p)
        return [p]
    q = out / "coverage.csv"
    q.write_text(rep.trials_csv(), encoding="utf-8")
    _dump_json(summary, p)
    return [q, p]


def cmd_compare(cfg: RunConfig, out: Path, fmt: str, threads: int) -> list[Path]:
    cfg.require("lambda_grid", "n")
    sigma_pi = _prior(cfg).base.isotropic_sigma()
    if cfg.prior.truncated or sigma_pi is None:
        raise ConfigError("bound comparison needs an untruncated isotropic prior")
    table = experiments.compare_bounds(
        cfg.model, sigma_pi, cfg.raw["lambda_grid"], cfg.get("delta"), cfg.raw["n"],
        seed=cfg.seed, M=cfg.get("M"), c=cfg.raw.get("c"), threads=threads, digest=cfg.digest,
    )
    return _write_table(table, out, "compare", fmt)


def cmd_sweep(cfg: RunConfig, out: Path, fmt: str, threads: int) -> list[Path]:
    kind = cfg.get("sweep")
    cfg.require("n_grid")
    if kind == "convergence":
        table = experiments.convergence_sweep(
            cfg.model, _prior(cfg), cfg.get("lambda_rule"), cfg.raw["n_grid"], cfg.get("delta"),
            seed=cfg.seed, lam=cfg.raw.get("lambda"), bound_kind=cfg.raw.get("bound"), M=cfg.get("M"),
            loss_bound=cfg.raw.get("loss_bound"), threads=threads, digest=cfg.digest,
        )
    elif kind == "noniid_asymptote":
        cfg.require("lambda")
        if cfg.raw["model"]["kind"] != "arx":
            raise ConfigError("the asymptote sweep needs an arx model")
        table = experiments.noniid_asymptote_sweep(
            cfg.model, _prior(cfg), cfg.raw["lambda"], cfg.raw["n_grid"], seed=cfg.seed, M=cfg.get("M"),
            threads=threads, digest=cfg.digest,
        )
    else:
        if cfg.raw["model"]["kind"] != "arx":
            raise ConfigError("the empirical-loss sweep needs an arx model")
        w = cfg.raw.get("w", list(cfg.model.w_star))
        table = experiments.empirical_loss_convergence(cfg.model, w, cfg.raw["n_grid"], seed=cfg.seed, digest=cfg.digest)
    return _write_table(table, out, "sweep", fmt)


def cmd_spectrum(cfg: RunConfig, out: Path, fmt: str, threads: int) -> list[Path]:
    cfg.require("n")
    s = rho_sequence(cfg.model, cfg.raw["n"], threads=threads)
    rows = [(i + 1, float(r)) for i, r in enumerate(s.rho)]
    if fmt == "json":
        p = out / "spectrum.json"
        _dump_json({"n": [r[0] for r in rows], "rho_n": [r[1] for r in rows],
                    "rho_star_bracket": list(map(float, s.rho_star_bracket)), "config_digest": cfg.digest}, p)
        return [p]
    p = out / "spectrum.csv"
    p.write_text(to_csv(("n", "rho_n"), rows), encoding="utf-8")
    q = out / "spectrum_summary.json"
    _dump_json({"rho_star_bracket": list(map(float, s.rho_star_bracket)), "Q_x": np.asarray(s.Q_x).tolist(),
                "config_digest": cfg.digest}, q)
    return [p, q]


def cmd_simulate(cfg: RunConfig, out: Path, fmt: str, threads: int) -> list[Path]:
    cfg.require("n")
    S = sample_dataset(cfg.model, cfg.raw["n"], data_seed(cfg.seed))
    p = out / "dataset.csv"
    write_dataset_csv(S, p)
    return [p]


HANDLERS = {
    "certify": cmd_certify,
    "coverage": cmd_coverage,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
}
DEFAULT_FORMAT = {"certify": "json"}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", metavar="PATH", default=S, help="JSON run configuration")
    p.add_argument("--out", metavar="DIR", default=S, help="output directory (default: current directory)")
    p.add_argument("--seed", type=_u64, metavar="U64", default=S, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, metavar="N", default=S, help="worker threads (default: PACB_THREADS or CPU count)")
    p.add_argument("--format", choices=("json", "csv"), default=S, help="output format")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="pacb", description="PAC-Bayes certificates for Bayesian linear regression.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "certify":
            sp.add_argument("--bound", choices=bounds.BOUND_KINDS, default=argparse.SUPPRESS)
            sp.add_argument("--dataset", metavar="CSV", default=argparse.SUPPRESS)
        if name in ("certify", "coverage", "sweep"):
            sp.add_argument("--lambda", dest="lam", type=float, default=argparse.SUPPRESS)
        if name in ("coverage",):
            sp.add_argument("--trials", type=int, default=argparse.SUPPRESS)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    cmd = args["command"]
    try:
        if "config" not in args:
            raise ConfigError("--config is required")
        cfg = load_config(args["config"])
        overrides = {
            "seed": args.get("seed"),
            "bound": args.get("bound"),
            "dataset": args.get("dataset"),
            "lambda": args.get("lam"),
            "trials": args.get("trials"),
        }
        if any(v is not None for v in overrides.values()):
            cfg = with_overrides(cfg, **overrides)
        threads = resolve_threads(args.get("threads"))
        out = Path(args.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        fmt = args.get("format") or DEFAULT_FORMAT.get(cmd, "csv")
        paths = HANDLERS[cmd](cfg, out, fmt, threads)
    except DivergenceError as exc:
        print(f"pacb {cmd}: bound diverged: {exc}", file=sys.stderr)
        return 2
    except (PacbError, ValueError, OSError) as exc:
        print(f"pacb {cmd}: error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


def main(argv=None):
    sys.exit(run(argv))
