"""Command-line entry point.

Every subcommand resolves its settings as defaults, then a JSON ``--config``
file, then explicit flags, writes its CSV tables into ``--out`` and records
them with sha256 digests in ``manifest.json``.  Exit codes: 0 success,
2 parse error, 3 numerical/domain error, 4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._version import FORMAT_VERSION, __version__
from .aggregate import default_m, fit_phi_pca, fit_ppca
from .exceptions import ConfigError, DegeneracyError, PhiPCAError
from .mnist import DATA_DIR_ENV, ReconConfig, run_recon_study
from .perturbation import CENTERED, reference_outliers, reference_population, verify_expansion
from .phi import as_phi
from .results import RunManifest, read_numeric_csv, write_csv, write_manifest
from .simulation import SimConfig, run_experiment
from .spiked import SpikedModel, gm_flip_holds, hm_flip_holds, is_immune

__all__ = ["main", "build_parser"]

# Settings never echoed into the manifest: they do not affect results.
_RUNTIME_KEYS = ("out", "threads", "config")

PROFILES = {
    "desk": {},
    "smoke": {"n": 100, "p": 20, "r": 3, "q_max": 10, "replicates": 3},
    "full": {"p": 1000, "replicates": 200},
}


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(t.strip()) for t in str(text).split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _m_value(text: str):
    if str(text) == "sqrt":
        return "sqrt"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"m must be an integer or 'sqrt', got {text!r}") from None


def _beta_token(text: str) -> str:
    t = str(text).strip().lower()
    if t in ("log", "gm", "0", "0.0"):
        return "log"
    float(t)
    return t


def _common(parser: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    parser.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    parser.add_argument("--threads", type=int, default=S, help="worker threads (default: all CPUs)")
    parser.add_argument("--out", default=S, help="output directory (default ./phipca_out)")
    parser.add_argument("--config", default=S, help="JSON file with settings; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="phipca", description="Partition-aggregate PCA tools.")
    parser.add_argument("--version", action="version", version=f"phipca {__version__} (output format {FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit phi-PCA to a numeric CSV")
    _common(p)
    p.add_argument("input", nargs="?", default=S, help="numeric CSV, optional header row")
    p.add_argument("--m", type=_m_value, default=S, help="number of blocks or 'sqrt'")
    p.add_argument("--phi", "--beta", dest="phi", default=S, help="hm, gm, am, log, a nonzero exponent, or ppca")
    p.add_argument("--ridge", default=S, help="ridge eps or 'auto'")
    p.add_argument("--no-center", dest="centered", action="store_false", default=S)

    p = sub.add_parser("simulate", help="subspace-recovery simulation")
    _common(p)
    p.add_argument("--profile", choices=sorted(PROFILES), default=S)
    for flag, cast in (("n", int), ("p", int), ("r", int), ("pi", float), ("sigma-out", float),
                       ("replicates", int), ("q-max", int), ("m", int), ("df", int)):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=cast, default=S)
    p.add_argument("--methods", type=_csv_list(str), default=S, help="comma list, e.g. HM,GM,PCA,optPCA")

    p = sub.add_parser("perturb-check", help="compare closed-form coefficients with the exact oracle")
    _common(p)
    p.add_argument("--betas", type=_csv_list(_beta_token), default=S, help="comma list; 'log' for the log map")
    p.add_argument("--ms", type=_csv_list(int), default=S)
    p.add_argument("--eps", type=_csv_list(float), default=S)
    p.add_argument("--moment-mode", dest="moment_mode", choices=["centered", "second_moment"], default=S)
    p.add_argument("--ppca", action="store_true", default=S, help="also check the product-PCA coefficient")

    p = sub.add_parser("flip-analyze", help="HM/GM flip conditions on an (a, eta) grid")
    _common(p)
    for flag, cast in (("a-min", float), ("a-max", float), ("na", int), ("eta-min", float), ("eta-max", float), ("neta", int)):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=cast, default=S)
    p.add_argument("--ms", type=_csv_list(int), default=S)
    p.add_argument("--deltas", type=_csv_list(float), default=S)

    p = sub.add_parser("reconstruct", help="digit-image reconstruction study")
    _common(p)
    p.add_argument("--digit", dest="digits", type=_csv_list(int), default=S, help="comma list of digits")
    p.add_argument("--setting", choices=["i", "ii"], default=S)
    p.add_argument("--methods", type=_csv_list(str), default=S)
    p.add_argument("--data-dir", dest="data_dir", default=S, help=f"IDX directory (fallback ${DATA_DIR_ENV})")
    p.add_argument("--fallback-synthetic", dest="fallback_synthetic", action="store_true", default=S)
    p.add_argument("--n-train", dest="n_train", type=int, default=S)
    p.add_argument("--n-test", dest="n_test", type=int, default=S)
    p.add_argument("--r", type=int, default=S)
    p.add_argument("--emit-images", dest="emit_images", type=int, default=S)
    p.add_argument("--scale", action="store_true", default=S, help="divide pixels by 255 before fitting")
    return parser


# ---------------------------------------------------------------------------
# configuration


_DEFAULTS = {
    "fit": {"input": None, "m": "sqrt", "phi": "hm", "ridge": "auto", "centered": True, "seed": 0},
    "simulate": dict(SimConfig().to_dict(), profile="desk"),
    "perturb-check": {
        "betas": ["-1", "log", "1"],
        "ms": [2, 4],
        "eps": [1e-2, 1e-3, 1e-4],
        "moment_mode": CENTERED,
        "ppca": False,
        "seed": 0,
    },
    "flip-analyze": {
        "a_min": 1.05, "a_max": 4.0, "na": 50,
        "eta_min": 1.5, "eta_max": 1e4, "neta": 50,
        "ms": [20], "deltas": [0.05], "seed": 0,
    },
    "reconstruct": ReconConfig().to_dict(),
}


def _load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def resolve_settings(command: str, flags: dict) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    cfg = dict(_DEFAULTS[command])
    file_cfg = _load_config_file(flags["config"]) if "config" in flags else {}
    if command == "simulate":
        profile = flags.get("profile", file_cfg.get("profile", "desk"))
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        cfg.update(PROFILES[profile])
    unknown = set(file_cfg) - set(cfg) - set(_RUNTIME_KEYS)
    if unknown:
        raise ConfigError(f"unknown {command} config key(s): {sorted(unknown)}")
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in flags.items() if k != "config"})
    cfg.setdefault("out", "phipca_out")
    cfg.setdefault("threads", os.cpu_count() or 1)
    return cfg


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items()) if k not in _RUNTIME_KEYS}


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: dict, out: Path) -> list:
    if not cfg.get("input"):
        raise ConfigError("fit needs an input CSV")
    try:
        header, X = read_numeric_csv(cfg["input"])
    except FileNotFoundError:
        raise ConfigError(f"input file not found: {cfg['input']}") from None
    n, p = X.shape
    m = cfg["m"]
    m = default_m(n) if str(m) == "sqrt" else int(m)
    ridge = None if str(cfg["ridge"]) == "auto" else float(cfg["ridge"])
    seed = int(cfg["seed"])
    if str(cfg["phi"]).lower() == "ppca":
        model = fit_ppca(X, seed=seed, centered=cfg["centered"])
    else:
        model = fit_phi_pca(X, m, as_phi(_phi_value(cfg["phi"])), seed=seed, ridge_eps=ridge, centered=cfg["centered"])
    names = header if header is not None else [f"x{j + 1}" for j in range(p)]
    vals = write_csv(out / "eigenvalues.csv", ["component", "eigenvalue"],
                     [(k + 1, float(v)) for k, v in enumerate(model.eigenvalues)])
    comp = [f"c{k + 1}" for k in range(model.eigenvectors.shape[1])]
    vecs = write_csv(out / "eigenvectors.csv", ["feature"] + comp,
                     [[names[j]] + [float(v) for v in model.eigenvectors[j]] for j in range(p)])
    return [vals, vecs]


def _phi_value(spec):
    if isinstance(spec, str):
        try:
            return float(spec)
        except ValueError:
            return spec
    return spec


def cmd_simulate(cfg: dict, out: Path) -> list:
    keys = set(SimConfig.__dataclass_fields__)
    config = SimConfig.from_dict({k: v for k, v in cfg.items() if k in keys})
    result = run_experiment(config, threads=int(cfg["threads"]))
    rows = []
    for name in config.methods:
        c = result.curves[name]
        rows.extend((name, int(q), float(mu), float(se), c.replicates) for q, mu, se in zip(c.qs, c.mean, c.stderr))
    curves = write_csv(out / "curves.csv", ["method", "q", "mean_sq", "stderr", "replicates"], rows)
    qs = np.arange(config.r, config.q_max + 1)
    raw_rows = [
        (rep, name, int(q), float(result.raw[rep, i, k]))
        for rep in range(config.replicates)
        for i, name in enumerate(config.methods)
        for k, q in enumerate(qs)
    ]
    raw = write_csv(out / "raw.csv", ["replicate", "method", "q", "s_q"], raw_rows)
    files = [curves, raw]
    if result.failures:
        fail_rows = [(name, msg) for name, msgs in sorted(result.failures.items()) for msg in msgs]
        files.append(write_csv(out / "failures.csv", ["method", "message"], fail_rows))
    return files


def cmd_perturb_check(cfg: dict, out: Path) -> list:
    seed = int(cfg["seed"])
    model = reference_population(seed)
    outliers = reference_outliers(model, seed=seed + 1)
    phis = [b if b == "log" else float(b) for b in (_beta_token(b) for b in cfg["betas"])]
    cells = [(phi, int(m)) for phi in phis for m in cfg["ms"]]
    if cfg["ppca"]:
        cells.append(("ppca", 2))
    head = ["outlier", "orthogonal", "beta", "m", "eps", "quantity", "analytic", "numeric", "rel_error", "moment_mode"]
    rows = []
    for i, x in enumerate(outliers):
        orth = model.is_orthogonal_to_signal(x)
        for phi, m in cells:
            check = verify_expansion(model, phi, x, m, eps_sequence=tuple(cfg["eps"]), moment_mode=cfg["moment_mode"])
            rows.extend([i, orth] + [row[k] for k in head[2:]] for row in check.rows)
    table = write_csv(out / "perturb_check.csv", head, rows)
    pts = write_csv(
        out / "outliers.csv",
        ["outlier", "orthogonal", "mahalanobis_sq"] + [f"x{j + 1}" for j in range(model.p)],
        [[i, model.is_orthogonal_to_signal(x), model.mahalanobis_sq(x)] + list(map(float, x)) for i, x in enumerate(outliers)],
    )
    return [table, pts]


def _flag(fn, model) -> str:
    try:
        return "true" if fn(model) else "false"
    except DegeneracyError:
        return "tie"


def cmd_flip_analyze(cfg: dict, out: Path) -> list:
    if cfg["na"] < 1 or cfg["neta"] < 1:
        raise ConfigError("grid sizes must be positive")
    a_grid = np.linspace(cfg["a_min"], cfg["a_max"], int(cfg["na"]))
    eta_grid = np.geomspace(cfg["eta_min"], cfg["eta_max"], int(cfg["neta"]))
    rows = []
    for m in cfg["ms"]:
        for d in cfg["deltas"]:
            for a in a_grid:
                for eta in eta_grid:
                    model = SpikedModel(a=float(a), eta=float(eta), delta=float(d), m=int(m))
                    rows.append((float(a), float(eta), int(m), float(d),
                                 _flag(hm_flip_holds, model), _flag(gm_flip_holds, model), is_immune(model)))
    return [write_csv(out / "flip.csv", ["a", "eta", "m", "delta", "hm_flip", "gm_flip", "immune"], rows)]


def cmd_reconstruct(cfg: dict, out: Path) -> list:
    keys = set(ReconConfig.__dataclass_fields__)
    config = ReconConfig.from_dict({k: v for k, v in cfg.items() if k in keys})
    return run_recon_study(config, out_dir=out, threads=int(cfg["threads"])).files


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "perturb-check": cmd_perturb_check,
    "flip-analyze": cmd_flip_analyze,
    "reconstruct": cmd_reconstruct,
}


def run_command(command: str, flags: dict) -> RunManifest:
    cfg = resolve_settings(command, flags)
    out = Path(cfg["out"])
    manifest = RunManifest(command=command, config=_echo(cfg), seed=cfg.get("seed"))
    files = COMMANDS[command](cfg, out)
    manifest.record(out, files)
    write_manifest(out, manifest)
    return manifest


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        manifest = run_command(args.command, flags)
    except PhiPCAError as exc:
        print(f"phipca {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        # malformed values that reached a constructor through the config file
        print(f"phipca {args.command}: configuration error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    for name in manifest.outputs:
        print(name)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
