"""Command-line entry point.

Usage::

    scorethin fit      --config run.json [--seed N] [--out DIR] ...
    scorethin thin     --config run.json
    scorethin simulate --config sim.json [--jobs N]
    scorethin netreg   --config net.json

Every command reads one JSON config; flags override file values.  Relative
paths inside the config resolve against the config file's directory.  Exit
status is 0 on success, 2 when ``fit`` selects nothing, 1 on error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, ScoreThinError
from .glm import Dataset, get_family
from .inference import select_and_infer
from .netreg import analyze_network, read_graph, synthetic_graph
from .simlab import (
    METHODS,
    REPLICATION_COLUMNS,
    SUMMARY_COLUMNS,
    SimScenario,
    aggregate,
    replication_rows,
    run_scenario,
    write_csv,
)
from .thinning import derive_seed, make_rng, pilot_fit, thin_outcomes

EXIT_OK, EXIT_ERROR, EXIT_NO_SELECTION = 0, 1, 2
COMMANDS = ("fit", "simulate", "netreg", "thin")


@dataclass
class RunConfig:
    command: str
    family: str = "gaussian"
    lam: object = "auto"
    lambda_scale: float = 1.0
    gamma: float = 1.0
    alpha: float = 0.1
    mode: str = "outcome"
    seed: int = 0
    jobs: int = 1
    variance_denominator: str = "bdot"
    input: Optional[Path] = None
    outcome: str = "y"
    features: Optional[list] = None
    cluster: Optional[str] = None
    out: Path = Path("out")
    scenario: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: list(METHODS))
    netreg: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.mode not in ("outcome", "gradient"):
            raise ConfigError("mode must be 'outcome' or 'gradient'")
        if self.variance_denominator not in ("bdot", "bddot"):
            raise ConfigError("variance_denominator must be 'bdot' or 'bddot'")
        if not (self.lam == "auto" or isinstance(self.lam, (int, float))):
            raise ConfigError("lambda must be a number or 'auto'")
        if isinstance(self.lam, (int, float)) and not self.lam >= 0:
            raise ConfigError("lambda must be nonnegative")
        get_family(self.family)
        if self.command in ("fit", "thin"):
            if self.input is None or not self.input.is_file():
                raise ConfigError(f"input file not found: {self.input}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods: {sorted(bad)}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


_CONFIG_KEYS = {
    "family", "lambda", "lambda_scale", "gamma", "alpha", "mode", "seed", "jobs",
    "variance_denominator", "input", "outcome", "features", "cluster", "out",
    "scenario", "methods", "netreg", "command",
}


def _parse_lambda(v):
    if isinstance(v, str):
        if v.strip().lower() == "auto":
            return "auto"
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"lambda must be a number or 'auto', got {v!r}") from None
    return v


def load_config(command: str, args) -> RunConfig:
    raw = {}
    base = Path(".")
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        base = path.parent
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for {raw['command']!r}, not {command!r}")

    def resolve(p):
        return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

    cfg = RunConfig(
        command=command,
        family=raw.get("family", "gaussian"),
        lam=_parse_lambda(raw.get("lambda", "auto")),
        lambda_scale=float(raw.get("lambda_scale", 1.0)),
        gamma=float(raw.get("gamma", 1.0)),
        alpha=float(raw.get("alpha", 0.05 if command == "netreg" else 0.1)),
        mode=raw.get("mode", "outcome"),
        seed=int(raw.get("seed", 0)),
        jobs=int(raw.get("jobs", 1)),
        variance_denominator=raw.get("variance_denominator", "bdot"),
        input=resolve(raw.get("input")),
        outcome=raw.get("outcome", "y"),
        features=raw.get("features"),
        cluster=raw.get("cluster"),
        out=resolve(raw.get("out", "out")),
        scenario=dict(raw.get("scenario", {})),
        methods=list(raw.get("methods", METHODS)),
        netreg=dict(raw.get("netreg", {})),
        base_dir=base,
    )
    # flags win over file values
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.out is not None:
        cfg.out = Path(args.out)
    if args.mode is not None:
        cfg.mode = args.mode
    if args.gamma is not None:
        cfg.gamma = args.gamma
    if args.lam is not None:
        cfg.lam = _parse_lambda(args.lam)
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if getattr(args, "input", None):
        cfg.input = Path(args.input)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- helpers


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, payload: dict):
    def default(o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Path):
            return str(o)
        raise TypeError(type(o))

    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=default) + "\n",
                          encoding="utf-8")


def read_table(path) -> tuple:
    """Read a header-first CSV of numbers; returns ``(header, rows as list of str lists)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return header, rows


def load_dataset(cfg: RunConfig):
    header, rows = read_table(cfg.input)
    if cfg.outcome not in header:
        raise ConfigError(f"outcome column {cfg.outcome!r} not in {cfg.input}")
    skip = {cfg.outcome} | ({cfg.cluster} if cfg.cluster else set())
    features = cfg.features or [h for h in header if h not in skip]
    missing = [f for f in features + ([cfg.cluster] if cfg.cluster else []) if f not in header]
    if missing:
        raise ConfigError(f"columns not found in {cfg.input}: {missing}")
    cols = {h: k for k, h in enumerate(header)}

    def column(name):
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            cell = row[cols[name]].strip()
            try:
                out[i] = float(cell)
            except ValueError:
                raise ValueError(f"{cfg.input}:{i + 2}: column {name!r}: not a number: {cell!r}") from None
            if not math.isfinite(out[i]):
                raise DomainError(f"{cfg.input}:{i + 2}: column {name!r} is non-finite", row=i)
        return out

    X = np.column_stack([column(f) for f in features])
    y = column(cfg.outcome)
    ids = column(cfg.cluster).astype(np.int64) if cfg.cluster else None
    return Dataset(X, y, ids), features, header, rows


# ---------------------------------------------------------------- commands


def cmd_fit(cfg: RunConfig) -> int:
    data, features, _, _ = load_dataset(cfg)
    fit = select_and_infer(
        cfg.family, data, cfg.lam, gamma=cfg.gamma, alpha=cfg.alpha, mode=cfg.mode,
        rng=make_rng(cfg.seed), lambda_scale=cfg.lambda_scale,
        denominator=cfg.variance_denominator,
    )
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "intervals.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coefficient_name", "estimate", "lower", "upper", "selected_flag"])
        for j, est, iv in zip(fit.E, fit.theta_E, fit.intervals):
            w.writerow([features[j], fmt(float(est)), fmt(iv.lower), fmt(iv.upper), "1"])
    write_manifest(cfg.out / "manifest.json", {
        "command": "fit",
        "version": __version__,
        "input": cfg.input.name,
        "input_sha256": _sha256(cfg.input),
        "family": get_family(cfg.family).kind,
        "seed": cfg.seed,
        "lambda": fit.lam,
        "lambda_rule": "auto" if cfg.lam == "auto" else "fixed",
        "lambda_scale": cfg.lambda_scale,
        "gamma": cfg.gamma,
        "alpha": cfg.alpha,
        "mode": cfg.mode,
        "variance_denominator": cfg.variance_denominator,
        "n": data.n,
        "p": data.p,
        "selected": [features[j] for j in fit.E],
        "no_selection": fit.no_selection,
        "solver_iterations": {
            "selection": fit.selection.iterations,
            "refit": None if fit.refit is None else fit.refit.iterations,
        },
        "solver_converged": bool(fit.selection.converged and (fit.refit is None or fit.refit.converged)),
    })
    return EXIT_NO_SELECTION if fit.no_selection else EXIT_OK


def cmd_thin(cfg: RunConfig) -> int:
    data, features, header, rows = load_dataset(cfg)
    family = get_family(cfg.family)
    theta = pilot_fit(family, data)
    pair = thin_outcomes(data, family, theta, cfg.gamma, make_rng(cfg.seed),
                         denominator=cfg.variance_denominator)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "thinned.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + ["y_select", "y_infer", "noise_variance"])
        for row, ys, yi, v in zip(rows, pair.y_select, pair.y_infer, pair.noise_variances):
            w.writerow(row + [fmt(ys), fmt(yi), fmt(v)])
    write_manifest(cfg.out / "manifest.json", {
        "command": "thin",
        "version": __version__,
        "input": cfg.input.name,
        "input_sha256": _sha256(cfg.input),
        "family": family.kind,
        "seed": cfg.seed,
        "gamma": cfg.gamma,
        "variance_denominator": cfg.variance_denominator,
        "outcome": cfg.outcome,
        "features": features,
        "pilot_theta": theta,
    })
    return EXIT_OK


def _scenarios(cfg: RunConfig) -> list:
    block = dict(cfg.scenario)
    block.setdefault("master_seed", cfg.seed)
    block.setdefault("alpha", cfg.alpha)
    block.setdefault("gamma", cfg.gamma)
    block.setdefault("lambda_scale", cfg.lambda_scale)
    ns = block.pop("n", [100, 200, 400, 800])
    ns = ns if isinstance(ns, list) else [ns]
    return [SimScenario.from_dict({**block, "n": int(n)}) for n in ns]


def cmd_simulate(cfg: RunConfig) -> int:
    scenarios = _scenarios(cfg)  # config errors surface before any work
    metrics = []
    for sc in scenarios:
        metrics.extend(run_scenario(sc, cfg.methods, jobs=cfg.jobs))
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.out / "replications.csv", replication_rows(metrics), REPLICATION_COLUMNS)
    write_csv(cfg.out / "summary.csv", aggregate(metrics), SUMMARY_COLUMNS)
    write_manifest(cfg.out / "manifest.json", {
        "command": "simulate",
        "version": __version__,
        "seed": cfg.seed,
        "methods": cfg.methods,
        "scenarios": [sc.__dict__ for sc in scenarios],
    })
    return EXIT_OK


def cmd_netreg(cfg: RunConfig) -> int:
    net = dict(cfg.netreg)
    r = int(net.get("r", 25))
    focal = net.get("focal", "sex")
    if "synthetic" in net:
        gen_kwargs = dict(net["synthetic"])
        # the graph gets its own stream so it is independent of the thinning noise
        gen_kwargs.setdefault("rng", derive_seed(cfg.seed, 1))
        graph = synthetic_graph(**gen_kwargs)
        source = {"synthetic": net["synthetic"]}
    else:
        try:
            edges = cfg.base_dir / net["edges"]
            nodes = cfg.base_dir / net["nodes"]
            graph = read_graph(edges, nodes, net.get("outcome", "y"), net["covariates"],
                               node_column=net.get("node_column", "node"))
        except KeyError as exc:
            raise ConfigError(f"netreg config is missing {exc}") from None
        source = {"edges": edges.name, "edges_sha256": _sha256(edges),
                  "nodes": nodes.name, "nodes_sha256": _sha256(nodes)}
    alpha = float(net.get("alpha", cfg.alpha))
    report = analyze_network(
        graph, r, lam=cfg.lam, gamma=cfg.gamma, alpha=alpha, focal_covariate=focal,
        rng=make_rng(cfg.seed), intercept=bool(net.get("intercept", True)),
        scale_vectors=bool(net.get("scale_vectors", True)),
        lambda_scale=cfg.lambda_scale, denominator=cfg.variance_denominator,
    )
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    row = report.as_row()
    cols = list(row)
    with open(cfg.out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        w.writerow([fmt(row[c]) for c in cols])
    write_manifest(cfg.out / "manifest.json", {
        "command": "netreg",
        "version": __version__,
        "seed": cfg.seed,
        "r": r,
        "gamma": cfg.gamma,
        "alpha": alpha,
        "lambda": report.lam,
        "n_nodes": graph.n_nodes,
        "n_edges": int(len(graph.edges)),
        "selected_columns": report.selected_columns,
        **source,
    })
    return EXIT_OK


HANDLERS = {"fit": cmd_fit, "thin": cmd_thin, "simulate": cmd_simulate, "netreg": cmd_netreg}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scorethin",
        description="Selective inference for L1-penalized GLMs by thinning the score.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--mode", choices=("outcome", "gradient"))
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--lambda", dest="lam", metavar="F|auto")
        sp.add_argument("--alpha", type=float)
        if name in ("fit", "thin"):
            sp.add_argument("--input", metavar="CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args)
        return HANDLERS[args.command](cfg)
    except (ScoreThinError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"scorethin {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
