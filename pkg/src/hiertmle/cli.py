"""Command-line front end: ``hiertmle simulate | estimate | replicate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
error. Every command writes a ``manifest.json`` next to its outputs; the
manifest carries timestamps, so it is kept apart from the reports, which
are byte-identical for identical inputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, registry
from .data import load_csv, write_csv
from .errors import ConfigurationError, DataError, EstimationError, HierTmleError, SchemaError
from .estimators import (
    KnownPropensity,
    TmleOptions,
    adaptive_prespec,
    gcomp,
    iptw,
    tmle_cluster,
    tmle_individual,
)
from .simulation import Sim1Config, calibrated, finite_json, replicate, simulate_world, true_ate
from .superlearner import library_from_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4

# Keys accepted in a simulation/replication config besides the Sim1Config fields.
_RUN_KEYS = {"preset", "population_size", "truth"}
# Keys accepted in an estimation config.
_ESTIMATE_KEYS = {
    "q_library",
    "g_library",
    "q_library_individual",
    "g_library_individual",
    "known_g",
    "g_bound",
    "V",
    "seed",
    "sl_mode",
    "weight_scheme",
    "candidates",
    "model",
}


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None
    version: str
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def config_digest(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a run configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def read_config(path: str | os.PathLike | None) -> dict:
    """JSON or YAML mapping; an absent path gives an empty mapping."""
    if path is None:
        return {}
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            raw = yaml.safe_load(text)
        else:
            raw = json.loads(text)
    except Exception as exc:  # json.JSONDecodeError, yaml.YAMLError
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must hold a mapping")
    return raw


def sim_config(raw: dict, seed: int | None) -> tuple[Sim1Config, dict]:
    """Split a run config into the Sim1Config and the extra run keys."""
    raw = dict(raw)
    extras = {k: raw.pop(k) for k in list(raw) if k in _RUN_KEYS}
    if seed is not None:
        raw["seed"] = seed
    preset = extras.get("preset")
    if preset in (None, "default"):
        cfg = Sim1Config.from_dict(raw)
    elif preset == "calibrated":
        cfg = Sim1Config.from_dict({**calibrated().to_dict(), **raw})
    else:
        raise ConfigurationError(f"preset: unknown value {preset!r} (expected 'default' or 'calibrated')")
    return cfg, extras


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg, _ = sim_config(read_config(args.config), args.seed)
    started = _now()
    out = _out_dir(args.out)
    world = simulate_world(cfg)
    data, schema, cf = out / "data.csv", out / "schema.txt", out / "counterfactuals.csv"
    write_csv(world.dataset, data, schema)
    with open(cf, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "A", "Yc", "Yc_1", "Yc_0", "g_true"])
        d = world.dataset
        for j, cid in enumerate(d.ids):
            w.writerow(
                [
                    cid,
                    int(d.exposure[j]),
                    repr(float(d.cluster_outcomes[j])),
                    repr(float(world.counterfactual_yc_1[j])),
                    repr(float(world.counterfactual_yc_0[j])),
                    repr(float(world.true_g[j])),
                ]
            )
    manifest = RunManifest(
        "simulate", config_digest(cfg.to_dict()), cfg.seed, __version__, started, _now(),
        [str(p) for p in (data, schema, cf)], cfg.to_dict(),
    )
    manifest.write(out / "manifest.json")
    print(f"wrote {world.dataset.n_clusters} clusters / {world.dataset.n_individuals} individuals to {data}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _library(raw, what: str):
    if raw is None:
        return None
    if isinstance(raw, (list, dict)):
        try:
            return library_from_config(raw)
        except (TypeError, KeyError, AttributeError) as exc:
            raise ConfigurationError(f"{what}: malformed learner list ({exc})") from None
    raise ConfigurationError(f"{what} must be a list of learners or a mapping with 'learners'")


def _estimate_one(name: str, d, conf: dict, options: TmleOptions):
    q = _library(conf.get("q_library"), "q_library")
    g = _library(conf.get("g_library"), "g_library")
    qi = _library(conf.get("q_library_individual"), "q_library_individual")
    gi = _library(conf.get("g_library_individual"), "g_library_individual")
    known = conf.get("known_g")
    if known is not None:
        try:
            known = KnownPropensity(float(known))
        except (TypeError, ValueError, DataError) as exc:
            raise ConfigurationError(f"known_g: {exc}") from None
    default_c = registry.cluster_learner(d)
    default_i = registry.individual_learner(d)

    if name in ("tmle-cluster", "tmle-ia"):
        return tmle_cluster(d, q or default_c, known or g or default_c, options, name)
    if name == "tmle-ib":
        return tmle_cluster(d, q or default_i, known or g or default_c, options, name)
    if name in ("tmle-individual", "tmle-ii"):
        return tmle_individual(d, qi or default_i, known or gi or default_i, options, name)
    if name == "iptw":
        return iptw(d, known or g or default_c, options)
    if name == "gcomp":
        if q is None:
            return gcomp(d, default_c, options, inference="delta")
        return gcomp(d, q, options)
    if name == "adaptive-prespec":
        cands = conf.get("candidates")
        if cands is None:
            adj = registry.cluster_adjustment(d)
            cands = [[]] + [[c] for c in adj]
        if not isinstance(cands, list) or not all(isinstance(c, list) for c in cands):
            raise ConfigurationError("candidates must be a list of column-name lists")
        kg = 0.5 if known is None else float(known.value)
        return adaptive_prespec(d, cands, kg, conf.get("model", "I"), options).result
    return registry.run(name, d, None, options)


def cmd_estimate(args) -> int:
    if args.data is None:
        raise ConfigurationError("estimate needs --data")
    conf = read_config(args.config)
    unknown = sorted(set(conf) - _ESTIMATE_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown estimation config field(s) {unknown}")
    names = registry.resolve(args.estimators or "tmle-cluster")
    seed = args.seed if args.seed is not None else int(conf.get("seed", 0))
    try:
        options = TmleOptions(
            g_bound=float(conf.get("g_bound", 0.01)),
            V=conf.get("V"),
            seed=seed,
            sl_mode=conf.get("sl_mode", "convex"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, HierTmleError):
            raise
        raise ConfigurationError(f"invalid estimation option: {exc}") from None
    started = _now()
    if not Path(args.data).is_file():
        raise DataError(f"data file {args.data} not found")
    if args.schema is not None and not Path(args.schema).is_file():
        raise DataError(f"schema file {args.schema} not found")
    d = load_csv(args.data, args.schema, conf.get("weight_scheme", "per_cluster"))

    results = []
    for name in names:
        try:
            res = _estimate_one(name, d, conf, options)
        except SchemaError as exc:
            # The data passed validation, so a bad column here comes from the learner config.
            raise ConfigurationError(f"{name}: {exc}") from exc
        except EstimationError as exc:
            raise EstimationError(f"{name}: {exc}") from exc
        results.append(res)
        rr = f"RR {res.risk_ratio:.3f}"
        print(f"{name}: {res.summary()}  {rr}  p={res.p_value:.3g}")

    out = _out_dir(args.out)
    payload = {"data": str(args.data), "n_clusters": d.n_clusters, "n_individuals": d.n_individuals}
    payload["results"] = [r.to_dict() for r in results]
    result_path = out / "result.json"
    result_path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    full = {"command": "estimate", "data": str(args.data), "schema": str(args.schema), "estimators": list(names), "config": conf, "seed": seed}
    RunManifest("estimate", config_digest(full), seed, __version__, started, _now(), [str(result_path)], full).write(
        out / "manifest.json"
    )
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


# ---------------------------------------------------------------------------
# replicate
# ---------------------------------------------------------------------------


def cmd_replicate(args) -> int:
    cfg, extras = sim_config(read_config(args.config), args.seed)
    names = registry.resolve(args.estimators or ",".join(registry.SIM1_ESTIMATORS))
    reps = args.reps if args.reps is not None else 100
    if reps < 1:
        raise ConfigurationError("--reps must be at least 1")
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        raise ConfigurationError("--threads must be at least 1")
    started = _now()
    out = _out_dir(args.out)

    if extras.get("truth") is not None:
        try:
            truth = float(extras["truth"])
        except (TypeError, ValueError):
            raise ConfigurationError(f"truth: not a number: {extras['truth']!r}") from None
        truth_se = None
    else:
        pop = extras.get("population_size", 10_000)
        if not isinstance(pop, int) or pop < 2:
            raise ConfigurationError(f"population_size must be an integer >= 2, got {pop!r}")
        t = true_ate(cfg, pop)
        truth, truth_se = t.value, t.se

    report = replicate(cfg, reps, names, truth, threads=threads, keep_traces=args.traces)
    csv_path, json_path = out / "report.csv", out / "report.json"
    csv_path.write_text(report.to_csv())
    body = report.to_dict()
    body["truth_mc_se"] = truth_se
    json_path.write_text(json.dumps(finite_json(body), indent=2, sort_keys=True) + "\n")
    print(f"{cfg.label}; truth {100 * truth:.2f}%; {reps} replicates")
    print(report.table())

    full = {"command": "replicate", "config": cfg.to_dict(), "extras": extras, "reps": reps, "estimators": list(names)}
    RunManifest(
        "replicate", config_digest(full), cfg.seed, __version__, started, _now(), [str(csv_path), str(json_path)], full
    ).write(out / "manifest.json")

    if report.failures:
        print(f"{len(report.failures)} estimator failures:", file=sys.stderr)
        for r, name, msg in report.failures[:20]:
            print(f"  replicate {r:>5}  {name:<18} {msg}", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep the message format uniform
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiertmle", description="TMLE for clustered data with a cluster-level exposure.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw one Simulation 1 dataset")
    s.add_argument("--config", help="JSON/YAML simulation config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate effects on a CSV dataset")
    e.add_argument("--data", required=True, help="long-format CSV, one row per individual")
    e.add_argument("--schema", help="column-role file (col = role lines, JSON or YAML)")
    e.add_argument("--config", help="JSON/YAML estimation config (learner libraries, known_g, ...)")
    e.add_argument("--estimators", help="comma list, e.g. unadjusted,tmle-cluster")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("replicate", help="Monte-Carlo study of estimator performance")
    r.add_argument("--config", help="JSON/YAML simulation config")
    r.add_argument("--reps", type=int, help="number of replicates (default 100)")
    r.add_argument("--estimators", help="comma list (default unadjusted,tmle-ia,tmle-ib,tmle-ii)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    r.add_argument("--traces", action="store_true", help="keep per-replicate estimates in report.json")
    r.set_defaults(func=cmd_replicate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return exc.code
    try:
        return args.func(args)
    except HierTmleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
