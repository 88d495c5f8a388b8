"""Command-line front end.

    kappagcn synth --kind tree --depth 5 --branching 4 --out g/
    kappagcn curvature --edges g/edges.tsv --iters 1000 --seed 7
    kappagcn distortion --config run.json --out results/ model.epochs=500
    kappagcn nodeclass --out results/ model.manifold=H8xS8
    kappagcn sweep --kappas=-5:5:11 --out sweep/
    kappagcn selftest [--inject-fault]

Exit status is 0 on success, 1 for configuration or data problems and 2 for
numerical failures.  Errors go to stderr as ``E_<CODE>: message``.  Every
file is written to a temporary name and renamed into place.  Metric files
carry ``runtime_s: null``; wall-clock times go to ``timing.json``.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import manifold
from .errors import ConfigError, DegenerateMidpointError, DomainError, KappaGCNError, ParseError
from .graph import estimate_curvature, load_graph, write_graph
from .io import atomic_write_json, atomic_write_text

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2


class CliError(Exception):
    def __init__(self, code, message, status=EXIT_DATA):
        super().__init__(message)
        self.code, self.status = code, status


# ---------------------------------------------------------------------------
# config handling

def parse_override(text):
    """``"model.epochs=500"`` -> ``(["model", "epochs"], 500)``.  Values are
    read as JSON when possible and kept as strings otherwise."""
    if "=" not in text:
        raise CliError("E_CONFIG", f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise CliError("E_CONFIG", f"override {text!r} has an empty key")
    return path, val


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = json.loads(json.dumps(cfg))
    for text in overrides:
        path, val = parse_override(text)
        node = cfg
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise CliError("E_CONFIG", f"override {text!r}: {p!r} is not a section")
        node[path[-1]] = val
    return cfg


def load_config(path, overrides=(), seed=None) -> dict:
    cfg = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise CliError("E_CONFIG", f"config file {str(p)!r} not found")
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CliError("E_CONFIG", f"config file {str(p)!r} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise CliError("E_CONFIG", f"config file {str(p)!r} must hold a JSON object")
    cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def parse_grid(text):
    """``"-5:5:11"`` (start:stop:count, inclusive) or ``"-1,0,1"``."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return [float(x) for x in np.linspace(float(a), float(b), int(n))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError("E_CONFIG", f"cannot parse kappa grid {text!r}") from None


# ---------------------------------------------------------------------------
# outputs

def _out_dir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("E_IO", f"cannot create output directory {str(d)!r}: {exc}") from None
    return d


def write_run(result, out: Path, stem="metrics"):
    atomic_write_json(out / f"{stem}.json", result.to_json_dict())
    atomic_write_text(out / f"{stem}_history.csv", result.history_csv())
    return {"runtime_s": round(float(result.runtime_s), 3)}


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    from .train import build_graph

    desc = {"kind": args.kind}
    for key in ("depth", "branching", "n", "radius", "mean_degree", "p_in", "p_out", "noise"):
        v = getattr(args, key)
        if v is not None:
            desc[key] = v
    if args.sizes:
        desc["sizes"] = [int(s) for s in args.sizes.split(",")]
    G = build_graph(desc, args.seed)
    paths = write_graph(G, _out_dir(args.out))
    print(json.dumps({"n": G.n, "edges": G.num_edges, "files": {k: str(v) for k, v in paths.items()}}))


def cmd_curvature(args):
    G = load_graph(args.edges)
    rng = np.random.default_rng(args.seed)
    k, psis = estimate_curvature(G, args.iters, rng, normalization=args.normalization,
                                 distinct_neighbors=args.distinct_neighbors)
    res = {"kappa_hat": k, "n": G.n, "edges": G.num_edges, "iters": args.iters, "seed": args.seed,
           "normalization": args.normalization, "distinct_neighbors": args.distinct_neighbors,
           "nodes_sampled": int(np.sum(~np.isnan(psis)))}
    if args.out:
        atomic_write_json(args.out, res)
    print(json.dumps(res, sort_keys=True))


def cmd_distortion(args):
    from .train import train_distortion

    cfg = load_config(args.config, args.overrides, args.seed)
    res = train_distortion(cfg)
    out = _out_dir(args.out)
    timing = write_run(res, out)
    atomic_write_json(out / "timing.json", timing)
    print(json.dumps({"min_distortion": res.metrics["min_distortion"], "kappas": res.kappas}))


def cmd_nodeclass(args):
    from .train import train_nodeclass

    cfg = load_config(args.config, args.overrides, args.seed)
    res = train_nodeclass(cfg)
    out = _out_dir(args.out)
    timing = write_run(res, out)
    atomic_write_json(out / "timing.json", timing)
    print(json.dumps({"test_accuracy": res.metrics["test_accuracy"], "kappas": res.kappas}))


def _sweep_row(sub):
    from .train import train_distortion

    return train_distortion(sub)


def cmd_sweep(args):
    from .train import sweep_configs

    cfg = load_config(args.config, args.overrides, args.seed)
    subs = sweep_configs(parse_grid(args.kappas), cfg)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_sweep_row, subs))
    else:
        rows = [_sweep_row(s) for s in subs]
    out = _out_dir(args.out)
    table = [{"kappa": float(s.model["kappa_init"][0]), "min_distortion": r.metrics["min_distortion"],
              "best_epoch": r.metrics["best_epoch"]} for s, r in zip(subs, rows)]
    atomic_write_json(out / "sweep.json", {"config": cfg, "rows": table, "seed": int(cfg.get("seed", 0))})
    atomic_write_text(out / "sweep.csv", "kappa,min_distortion\n" + "".join(
        f"{t['kappa']!r},{t['min_distortion']!r}\n" for t in table))
    atomic_write_json(out / "timing.json", {"rows_runtime_s": [round(r.runtime_s, 3) for r in rows]})
    for t in table:
        print(f"{t['kappa']:+.4f}  {t['min_distortion']:.6f}")


def cmd_selftest(args):
    from .checks import SUITES, run_suites

    names = args.suites.split(",") if args.suites else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise CliError("E_CONFIG", f"unknown suites {unknown}; choose from {sorted(SUITES)}")
    manifold.FAULT_FLIP_ADD_SIGN = bool(args.inject_fault)
    try:
        report = run_suites(args.seed, names)
    finally:
        manifold.FAULT_FLIP_ADD_SIGN = False
    passed = failed = 0
    for name, secs, checks in report:
        ok = sum(c.ok for c in checks)
        passed += ok
        failed += len(checks) - ok
        print(f"[{name}] {ok}/{len(checks)} passed in {secs:.2f}s")
        for c in checks:
            if args.verbose or not c.ok:
                print("  " + c.line())
    print(f"selftest: {passed} passed, {failed} failed")
    if args.out:
        out = _out_dir(args.out)
        atomic_write_json(out / "selftest.json", {
            "seed": args.seed, "fault_injected": bool(args.inject_fault), "passed": passed, "failed": failed,
            "suites": {name: [{"name": c.name, "ok": c.ok, "error": c.error, "tol": c.tol} for c in checks]
                       for name, _, checks in report}})
        atomic_write_json(out / "timing.json", {name: round(secs, 3) for name, secs, _ in report})
    if failed:
        raise CliError("E_SELFTEST", f"{failed} invariant checks failed", EXIT_NUMERIC)


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="kappagcn", description="Constant-curvature graph networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic graph")
    s.add_argument("--kind", required=True, choices=["tree", "torus", "sphere", "sbm", "cycle", "path"])
    s.add_argument("--depth", type=int)
    s.add_argument("--branching", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--radius", type=float)
    s.add_argument("--mean-degree", dest="mean_degree", type=float)
    s.add_argument("--sizes", help="community sizes, comma separated")
    s.add_argument("--p-in", dest="p_in", type=float)
    s.add_argument("--p-out", dest="p_out", type=float)
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("curvature", help="sampled sectional-curvature estimate")
    c.add_argument("--edges", required=True)
    c.add_argument("--iters", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--normalization", choices=["quarter", "parallelogram"], default="quarter")
    c.add_argument("--distinct-neighbors", action="store_true")
    c.add_argument("--out", help="also write the JSON result here")
    c.set_defaults(func=cmd_curvature)

    for name, func, default_out, text in (
            ("distortion", cmd_distortion, "runs/distortion", "fit an embedding to graph distances"),
            ("nodeclass", cmd_nodeclass, "runs/nodeclass", "train a node classifier"),
            ("sweep", cmd_sweep, "runs/sweep", "distortion over a grid of fixed curvatures")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=default_out)
        p.add_argument("--seed", type=int)
        p.add_argument("overrides", nargs="*", help="key=value overrides, e.g. model.epochs=500")
        if name == "sweep":
            p.add_argument("--kappas", default="-5:5:11", help="start:stop:count or a comma list")
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.set_defaults(func=func)

    t = sub.add_parser("selftest", help="run the invariant suites")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--suites", help="comma-separated subset")
    t.add_argument("--inject-fault", action="store_true", help="flip a sign in kappa_add first")
    t.add_argument("--out")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_selftest)
    return ap


_NUMERIC_ERRORS = (DomainError, DegenerateMidpointError, FloatingPointError, ArithmeticError)


def _code(exc):
    if isinstance(exc, ConfigError):
        return "E_CONFIG"
    if isinstance(exc, (ParseError, IndexError)):
        return "E_PARSE"
    return "E_DATA"


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.status
    except _NUMERIC_ERRORS as exc:
        print(f"E_NUMERIC: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KappaGCNError, IndexError) as exc:
        print(f"{_code(exc)}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"E_IO: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"E_NUMERIC: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
