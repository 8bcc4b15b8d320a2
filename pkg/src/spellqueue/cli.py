"""Command-line pipeline: synth -> cluster -> sweep -> scenario.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .clustering import (
    FeatureConfig,
    apply_labels,
    build_features,
    default_gamma,
    knee_point,
    kprototypes,
    profile_clusters,
    read_labels,
    with_labels,
    write_labels,
)
from .data import SyntheticConfig, engineer_features, generate_synthetic, load_spells, write_spells
from .des import ClusterModel, estimate_rates
from .errors import ConfigError, SpellQueueError
from .metrics import EmpiricalDistribution
from .recovery import DESK_GRID, SweepGrid, run_sweep, write_best, write_results
from .scenarios import BaseCase, ScenarioSpec, run_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_json(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, subcommand: str, parameters: dict, inputs: list[Path], outputs: list[Path]) -> Path:
    """Manifest listing parameters and checksums; paths are recorded by file name only."""
    manifest = {
        "tool": "spellqueue",
        "version": __version__,
        "subcommand": subcommand,
        "parameters": parameters,
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out / "manifest.json"
    _write_json(manifest, path)
    return path


def _load_or_fail(path: str) -> list:
    result = load_spells(path)
    if result.rejected:
        first = result.rejected[0]
        raise SpellQueueError(f"{path}: {len(result.rejected)} invalid rows (first: {first})")
    return result.records


def cmd_synth(args) -> None:
    cfg = SyntheticConfig.from_dict(_read_json(args.config)) if args.config else SyntheticConfig()
    if args.seed is not None:
        cfg = SyntheticConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    spells = generate_synthetic(cfg)
    out = args.out
    spells_path = out / "spells.csv"
    write_spells(spells, spells_path)
    cfg_path = out / "synthetic_config.json"
    _write_json(cfg.to_dict(), cfg_path)
    inputs = [Path(args.config)] if args.config else []
    _write_manifest(out, "synth", {"seed": cfg.seed, "n_spells": cfg.n_spells}, inputs, [spells_path, cfg_path])
    print(f"wrote {len(spells)} spells to {spells_path}")


def cmd_cluster(args) -> None:
    spells = engineer_features(_load_or_fail(args.spells))
    feature_cfg = FeatureConfig(**_read_json(args.config)) if args.config else FeatureConfig()
    features = build_features(spells, feature_cfg)
    gamma = default_gamma(features) if args.gamma is None else args.gamma
    params = {"seed": args.seed, "gamma": gamma, "max_iter": args.max_iter}
    if args.k is not None:
        k = args.k
        params["k"] = k
    else:
        ks = list(range(args.k_min, args.k_max + 1))
        costs = [kprototypes(features, kk, gamma, args.seed, args.max_iter).total_cost for kk in ks]
        k = knee_point(ks, costs)
        params.update({"k_range": [args.k_min, args.k_max], "costs": costs, "k_star": k})
    result = kprototypes(features, k, gamma, args.seed, args.max_iter)
    labelled = with_labels(spells, result.labels)

    out = args.out
    labels_path, profile_path, result_path = out / "labels.csv", out / "profile.csv", out / "clustering.json"
    write_labels(features.row_index, result.labels, labels_path)
    profile_clusters(labelled, k).to_csv(profile_path)
    result.to_json(result_path, features)
    inputs = [Path(args.spells)] + ([Path(args.config)] if args.config else [])
    _write_manifest(out, "cluster", params, inputs, [labels_path, profile_path, result_path])
    print(f"k={k}, total cost {result.total_cost:.6g}, labels in {labels_path}")


def cmd_sweep(args) -> None:
    spells = apply_labels(_load_or_fail(args.spells), read_labels(args.labels))
    grid = SweepGrid.from_dict(_read_json(args.config)) if args.config else DESK_GRID
    model = estimate_rates(spells)
    if grid.compare == "per_cluster":
        observed = [
            EmpiricalDistribution([s.los for s in spells if s.cluster_label == i]) for i in range(model.n_clusters)
        ]
    else:
        observed = EmpiricalDistribution([s.los for s in spells])
    outcome = run_sweep(model, grid, observed, args.seed, workers=args.workers)

    out = args.out
    results_path, best_path = out / "sweep.csv", out / "best.json"
    write_results(outcome.results, results_path)
    write_best(outcome, model, best_path, extra={"seed": args.seed})
    inputs = [Path(args.spells), Path(args.labels)] + ([Path(args.config)] if args.config else [])
    _write_manifest(out, "sweep", {"seed": args.seed, "grid": grid.to_dict()}, inputs, [results_path, best_path])
    b = outcome.best
    print(f"best c={b.c}, p={list(b.p)}, max distance {b.max_distance:.4f} days")


def cmd_scenario(args) -> None:
    best = _read_json(args.best)
    try:
        base = BaseCase(ClusterModel.from_dict(best["model"]), tuple(best["p"]), int(best["c"]))
    except KeyError as exc:
        raise ConfigError(f"{args.best}: missing field {exc}") from None
    scenario = ScenarioSpec.from_dict(_read_json(args.config), master_seed=args.seed)
    table = run_scenario(base, scenario, workers=args.workers)

    name = f"scenario_{scenario.kind}"
    if scenario.source is not None:
        name += f"_{scenario.source}_to_{scenario.target}"
    out = args.out
    table_path = out / f"{name}.csv"
    table.to_csv(table_path)
    params = {
        "seed": args.seed,
        "kind": scenario.kind,
        "source": scenario.source,
        "target": scenario.target,
        "repetitions": scenario.repetitions,
        "horizon": scenario.horizon,
        "warmup": scenario.warmup,
        "cooldown": scenario.cooldown,
        "iqr_mode": scenario.iqr_mode,
        "n_values": len(scenario.values),
        "base_median_system_time": table.base_median_system_time,
        "base_median_utilisation": table.base_median_utilisation,
    }
    _write_manifest(out, "scenario", params, [Path(args.best), Path(args.config)], [table_path])
    print(f"wrote {len(table.points)} scenario points to {table_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spellqueue", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_help):
        p.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
        p.add_argument("--config", help=config_help)
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic spells file")
    common(p, "synthetic config JSON")
    p.set_defaults(func=cmd_synth, seed=None)

    p = sub.add_parser("cluster", help="k-prototypes clustering of a spells file")
    common(p, "feature config JSON with 'numeric' and 'categorical' lists")
    p.add_argument("--spells", required=True)
    k = p.add_mutually_exclusive_group()
    k.add_argument("--k", type=int)
    k.add_argument("--k-range", nargs=2, type=int, metavar=("KMIN", "KMAX"), dest="k_range")
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-iter", type=int, default=100, dest="max_iter")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("sweep", help="parameter sweep over server count and service scaling")
    common(p, "grid config JSON (defaults to a coarse desk-scale grid)")
    p.add_argument("--spells", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scenario", help="what-if scenario on the best sweep point")
    common(p, "scenario config JSON")
    p.add_argument("--best", required=True, help="best-point JSON written by sweep")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "cluster":
            if args.k is None:
                args.k_min, args.k_max = args.k_range or (2, 10)
            if args.k is not None and args.k < 1:
                raise UsageError("--k must be at least 1")
        if args.command == "scenario" and not args.config:
            raise UsageError("scenario needs --config")
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except (SpellQueueError, FileNotFoundError, ValueError) as exc:
        print(f"spellqueue {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"spellqueue {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
