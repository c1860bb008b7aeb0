"""Command line entry point: ``distsa {run,bounds,verify,report,dump-graph}``.

Exit codes: 0 success, 2 invalid configuration (every violated condition is
listed on stderr as JSON), 3 bound refused, 4 missing stored outputs.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis as An
from . import graphs as G
from . import harness as H
from . import weights as Wt
from .config import ConfigError, load_config, parse_config, preset_names

EXIT_CONFIG = 2
EXIT_REFUSED = 3
EXIT_MISSING = 4


def _emit(obj, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(An._jsonable(obj), indent=2) + "\n")


def _fail(code, kind, errors):
    _emit({"status": "error", "kind": kind, "errors": errors}, sys.stderr)
    return code


def _experiment(args, bounds=False):
    raw = load_config(args.config)
    if bounds:
        raw["bounds"] = {**raw.get("bounds", {}), "enabled": True}
    return parse_config(raw, seed=args.seed, trials=args.trials, stride=args.stride)


def cmd_run(args):
    exp = _experiment(args)
    res = H.run_experiment(exp, workers=args.workers)
    out = Path(args.out or f"runs/{exp.name}")
    files = H.write_outputs(out, exp, res.analysis, res.ensemble, res.report, res.bound)
    summary = {"status": "ok", "out": str(out), "files": [p.name for p in files],
               "fingerprint": exp.fingerprint, "bound": {k: v for k, v in res.report["bound"].items()
                                                        if k != "table"}}
    _emit(summary)
    return 0


def cmd_bounds(args):
    exp = _experiment(args, bounds=True)
    if H.bound_kind(exp) is None:
        return _fail(EXIT_REFUSED, "refused", [{"assumption": "engine",
                                                "message": f"no bound for engine {exp.engine!r}"}])
    res = H.run_experiment(exp, workers=args.workers)
    if res.bound is None:
        name, reason = res.bound_error
        return _fail(EXIT_REFUSED, "refused", [{"assumption": name, "message": reason}])
    ledger = res.bound.constants.to_json()
    ledger["anchor"] = int(res.bound.anchor)
    ledger["verdict"] = res.bound.verdict
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ledger.json").write_text(json.dumps(ledger, indent=2, sort_keys=True) + "\n")
    _emit(ledger)
    return 0


def cmd_verify(args):
    exp = _experiment(args)
    checks = H.verify_suite(exp)
    doc = {"name": exp.name, "fingerprint": exp.fingerprint, "checks": checks,
           "failed": [c["name"] for c in checks if c["status"] == "fail"],
           "flagged": [c["name"] for c in checks if c["status"] == "flagged"]}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    return 0


def cmd_report(args):
    out = Path(args.out) if args.out else None
    if out is None or not (out / "report.json").is_file():
        return _fail(EXIT_MISSING, "missing", [{"assumption": "outputs",
                                                "message": f"no report.json under {out}"}])
    _emit(H.render_report(out))
    return 0


def cmd_dump_graph(args):
    exp = _experiment(args)
    out = Path(args.out or f"runs/{exp.name}/graphs")
    out.mkdir(parents=True, exist_ok=True)
    count = args.steps or max(exp.L, 1)
    bank, idx = exp.weights.compile(0, count)
    written = []
    for t in range(count):
        written.append(G.dump_edge_list(exp.graphs.graph_at(t), out / f"edges_t{t}.txt").name)
        written.append(Wt.dump_matrix_csv(bank[idx[t]], out / f"weights_t{t}.csv").name)
    union = G.union_graph([exp.graphs.graph_at(t) for t in range(count)])
    _emit({"status": "ok", "out": str(out), "files": written,
           "strongly_connected_union": bool(G.is_strongly_connected(union)),
           "min_weight": float(np.min(bank[idx[:count]][bank[idx[:count]] > 0]))})
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="distsa", description="Distributed linear stochastic approximation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True,
                            help="config file, or one of: " + ", ".join(preset_names()))
        sp.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="trial-level worker threads")
        sp.add_argument("--stride", type=int, default=None, help="recording stride")

    common(sub.add_parser("run", help="run the ensemble and write CSV files and report.json"))
    common(sub.add_parser("bounds", help="compute the bound constant ledger"))
    common(sub.add_parser("verify", help="run the named invariant suite"))
    common(sub.add_parser("report", help="re-render a report from stored CSV files"), config=False)
    sp = sub.add_parser("dump-graph", help="write edge lists and weight matrices")
    common(sp)
    sp.add_argument("--steps", type=int, default=None, help="number of time steps to dump (default L)")
    return p


COMMANDS = {
    "run": cmd_run,
    "bounds": cmd_bounds,
    "verify": cmd_verify,
    "report": cmd_report,
    "dump-graph": cmd_dump_graph,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc.to_json()["errors"])
    except H.BoundsRefused as exc:
        return _fail(EXIT_REFUSED, "refused", [{"assumption": exc.assumption, "message": str(exc)}])


if __name__ == "__main__":
    sys.exit(main())
