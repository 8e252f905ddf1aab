"""Command line entry point.

    pfedla generate-data --out pool.csv --seed 0
    pfedla run --algorithm pfedla --clients 6 --rounds 50 --seed 7 --out run.jsonl
    pfedla export heatmap --log run.jsonl --layer fc1 --round 50 --out heat.csv
    pfedla export trace --log run.jsonl --client 0 --peers 0 1 2 --out trace.csv
    pfedla inspect-checkpoint state.npz

Config files are JSON with optional ``run``, ``data`` and ``partition``
sections (see docs/config.md); command line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import sys

from pfedla import data as data_mod
from pfedla.metrics_io import (
    MissingSnapshotError,
    export_heatmap,
    export_weight_trace,
    read_jsonl,
    total_cost,
)
from pfedla.orchestrator import (
    RunConfig,
    load_checkpoint,
    read_checkpoint_meta,
    run_experiment,
    save_checkpoint,
)


class ConfigError(ValueError):
    pass


DATA_DEFAULTS = {"source": "synthetic", "num_classes": 9, "input_dim": 16,
                 "samples_per_class": 300, "cluster_spread": 1.5, "seed": None,
                 "path": None, "idx_images": None, "idx_labels": None}
PARTITION_DEFAULTS = {"scheme": "noniid1", "num_clients": 6, "classes_per_client": 4,
                      "dominant_classes": 2, "skew_ratio": 4.0, "samples_per_class": None,
                      "assignment": "random", "seed": None}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(cfg) - {"run", "data", "partition"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _section(cfg: dict, name: str, defaults: dict) -> dict:
    sec = dict(defaults)
    given = cfg.get(name, {})
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {name} fields: {sorted(unknown)}")
    sec.update(given)
    return sec


def _override(sec: dict, **values) -> None:
    for key, value in values.items():
        if value is not None:
            sec[key] = value


def build_pool(dsec: dict, seed: int) -> data_mod.SamplePool:
    source = dsec["source"]
    if source == "synthetic":
        return data_mod.synth_generate(data_mod.SynthSpec(
            dsec["num_classes"], dsec["input_dim"], dsec["samples_per_class"],
            dsec["cluster_spread"], dsec["seed"] if dsec["seed"] is not None else seed))
    if source == "csv":
        if not dsec["path"]:
            raise ConfigError("data.source=csv requires data.path")
        return data_mod.SamplePool.from_csv(dsec["path"])
    if source == "idx":
        if not (dsec["idx_images"] and dsec["idx_labels"]):
            raise ConfigError("data.source=idx requires data.idx_images and data.idx_labels")
        return data_mod.load_idx(dsec["idx_images"], dsec["idx_labels"])
    raise ConfigError(f"unknown data source {source!r}")


def build_datasets(psec: dict, pool: data_mod.SamplePool, seed: int):
    pseed = psec["seed"] if psec["seed"] is not None else seed
    spec = data_mod.PartitionSpec(psec["scheme"], psec["num_clients"], psec["classes_per_client"],
                                  psec["dominant_classes"], psec["skew_ratio"],
                                  psec["samples_per_class"], pseed)
    if spec.scheme == "noniid2":
        return data_mod.partition_noniid2(pool, spec)
    mode = psec["assignment"]
    if mode == "random":
        assignment = None
    elif mode == "ring":
        assignment = data_mod.ring_assignment(spec.num_clients, spec.classes_per_client,
                                              pool.num_classes)
    elif mode == "paired":
        assignment = data_mod.paired_assignment(spec.num_clients, spec.classes_per_client,
                                                pool.num_classes, pseed)
    else:
        raise ConfigError(f"unknown partition assignment {mode!r}")
    return data_mod.partition_noniid1(pool, spec, assignment)


def cmd_generate_data(args) -> int:
    cfg = load_config(args.config)
    dsec = _section(cfg, "data", DATA_DEFAULTS)
    _override(dsec, num_classes=args.classes, input_dim=args.dim,
              samples_per_class=args.samples_per_class, cluster_spread=args.spread,
              seed=args.seed)
    dsec["source"] = "synthetic"
    pool = build_pool(dsec, args.seed if args.seed is not None else 0)
    pool.to_csv(args.out)
    print(json.dumps({"out": args.out, "samples": len(pool),
                      "histogram": pool.histogram().tolist()}))
    return 0


def cmd_run(args) -> int:
    if args.resume:
        state, run_cfg = load_checkpoint(args.resume)
        cfg = load_config(args.config)
        run_over = {k: v for k, v in {"rounds": args.rounds}.items() if v is not None}
        run_cfg = RunConfig.from_dict({**run_cfg.to_dict(), **run_over})
    else:
        state = None
        cfg = load_config(args.config)
        rsec = dict(cfg.get("run", {}))
        _override(rsec, algorithm=args.algorithm, rounds=args.rounds, seed=args.seed,
                  local_epochs=args.local_epochs, batch_size=args.batch_size, eta=args.eta,
                  participation_fraction=args.participation, k=args.k, eta_v=args.eta_v,
                  eta_psi=args.eta_psi, tau=args.tau,
                  hidden=tuple(args.hidden) if args.hidden else None)
        try:
            run_cfg = RunConfig.from_dict(rsec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    dsec = _section(cfg, "data", DATA_DEFAULTS)
    _override(dsec, path=args.data, source="csv" if args.data else None)
    psec = _section(cfg, "partition", PARTITION_DEFAULTS)
    _override(psec, num_clients=args.clients, scheme=args.partition,
              classes_per_client=args.classes_per_client, assignment=args.assignment)
    pool = build_pool(dsec, run_cfg.seed)
    datasets = build_datasets(psec, pool, run_cfg.seed)

    out = open(args.out, "a" if args.resume else "w")

    def on_round(log, st):
        out.write(log.to_json() + "\n")
        out.flush()
        if args.checkpoint and args.checkpoint_every and st.round % args.checkpoint_every == 0:
            save_checkpoint(st, run_cfg, args.checkpoint)

    with out:
        result = run_experiment(run_cfg, datasets, state=state, on_round=on_round)
    if args.checkpoint:
        save_checkpoint(result.state, run_cfg, args.checkpoint)
    final = result.logs[-1] if result.logs else None
    summary = {"out": args.out, "algorithm": run_cfg.algorithm, "rounds": result.state.round,
               "mean_accuracy": final.mean_accuracy if final else None,
               **total_cost(result.logs)}
    print(json.dumps(summary))
    return 0


def cmd_export(args) -> int:
    logs = read_jsonl(args.log)
    if args.what == "heatmap":
        if args.layer is None or args.round is None:
            raise ConfigError("export heatmap needs --layer and --round")
        text = export_heatmap(logs, args.layer, args.round, args.out)
    else:
        if args.client is None:
            raise ConfigError("export trace needs --client")
        peers = args.peers
        if peers is None:
            first = next((l for l in logs if l.weights), None)
            peers = list(range(len(first.weights))) if first else []
        text = export_weight_trace(logs, args.client, peers, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def cmd_inspect(args) -> int:
    meta = read_checkpoint_meta(args.path)
    summary = {k: meta[k] for k in ("format", "version", "round", "num_clients")}
    summary["layers"] = [s["name"] for s in meta["specs"]]
    summary["algorithm"] = meta["config"]["algorithm"]
    summary["hypernetworks"] = len(meta["hypernets"]) if meta["hypernets"] else 0
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfedla", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write a synthetic sample pool as CSV")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--samples-per-class", type=int)
    g.add_argument("--spread", type=float)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate_data)

    r = sub.add_parser("run", help="run a federated experiment, logging JSON lines")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--algorithm", choices=["pfedla", "heurpfedla", "fedavg", "local", "modelwise"])
    r.add_argument("--clients", type=int)
    r.add_argument("--rounds", type=int)
    r.add_argument("--local-epochs", type=int)
    r.add_argument("--batch-size", type=int)
    r.add_argument("--eta", type=float)
    r.add_argument("--eta-v", type=float)
    r.add_argument("--eta-psi", type=float)
    r.add_argument("--tau", type=float)
    r.add_argument("--participation", type=float)
    r.add_argument("--k", type=int)
    r.add_argument("--hidden", type=int, nargs="+")
    r.add_argument("--partition", choices=["noniid1", "noniid2"])
    r.add_argument("--classes-per-client", type=int)
    r.add_argument("--assignment", choices=["random", "ring", "paired"])
    r.add_argument("--data", help="sample pool CSV instead of synthetic data")
    r.add_argument("--out", default="run.jsonl")
    r.add_argument("--checkpoint")
    r.add_argument("--checkpoint-every", type=int, default=0)
    r.add_argument("--resume", help="checkpoint to continue from")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export", help="CSV exports from a JSON-lines log")
    e.add_argument("what", choices=["heatmap", "trace"])
    e.add_argument("--log", required=True)
    e.add_argument("--out")
    e.add_argument("--layer")
    e.add_argument("--round", type=int)
    e.add_argument("--client", type=int)
    e.add_argument("--peers", type=int, nargs="+")
    e.set_defaults(func=cmd_export)

    c = sub.add_parser("inspect-checkpoint", help="summarize a state checkpoint")
    c.add_argument("path")
    c.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and args.seed is None and not args.resume:
        parser.error("run requires --seed")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), 2)
    except MissingSnapshotError as exc:
        return _fail("missing_snapshot", str(exc), 1)
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
