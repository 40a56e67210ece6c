"""Command-line interface: ``gisl simulate | discover | evaluate | bench``.

Settings come from flags, then an optional ``--config`` file (TOML or
JSON; a manifest written by an earlier run also works), then defaults.
Every command writes ``manifest.json`` into its output directory with the
resolved settings and file hashes.

Exit codes: 0 success, 1 analysis failure, 2 configuration error.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import tomli

from . import __version__
from ._util import atomic_write_json, atomic_write_text, file_sha256, sorted_names
from .ci import CiConfig, CiError
from .core import GislResult, discover
from .data import DataError
from .graph import GraphError
from .ingest import IngestError, load_expression, load_zscores, split_regimes
from .metrics import REPORT_COLUMNS, EmptyEvaluable, aggregate, evaluate, format_table, zscore_eval
from .scm import BenchmarkConfig, BenchmarkInstance, SimulationError, generate_benchmark

log = logging.getLogger("gisl")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "common": {"seed": 0, "alpha": 0.05, "out": None, "workers": 1},
    "simulate": {
        "num_vars": 10,
        "num_edges": None,
        "n": 1500,
        "intervention": "hard",
        "n_conf": "1-3",
        "n_sel": "1-3",
        "mu_range": "0,2",
        "replicates": 1,
        "selection_timing": "persistent",
    },
    "discover": {
        "instance": None,
        "expression": None,
        "format": None,
        "label_column": "perturbation",
        "control": "control",
        "genes": None,
        "log1p": False,
        "max_cond": 3,
        "correction_depth": 2,
        "n_max": 1500,
        "dump_tests": False,
    },
    "evaluate": {"result": None, "truth": None, "zscores": None, "threshold": 0.15},
    "bench": {
        "num_vars": "10",
        "n": "1500",
        "intervention": "hard",
        "n_sel": "1-3",
        "n_conf": "1-3",
        "mu_range": "0,2",
        "seeds": 10,
        "max_cond": 3,
        "correction_depth": 2,
        "n_max": 1500,
        "resume": False,
        "selection_timing": "persistent",
    },
}


# -- config helpers --------------------------------------------------------------


def load_config_file(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if os.fspath(path).endswith(".toml"):
            data = tomli.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw)
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data.get("format") == "gisl-manifest":
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a table/object")
    return data


def resolve(command, args):
    """Defaults < config file < flags."""
    allowed = {**DEFAULTS["common"], **DEFAULTS[command]}
    resolved = dict(allowed)
    if args.config:
        file_cfg = load_config_file(args.config)
        section = file_cfg.get(command, {})
        flat = {k: v for k, v in file_cfg.items() if not isinstance(v, dict) and k not in ("command", "version")}
        for key, value in {**flat, **section}.items():
            key = key.replace("-", "_")
            if key not in allowed:
                raise ConfigError(f"unknown setting {key!r} for {command}")
            resolved[key] = value
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            resolved[key] = value
    if not resolved.get("out"):
        raise ConfigError("--out is required")
    return resolved


def parse_range(text, kind=int):
    """``"2"`` -> 2, ``"1-3"`` -> (1, 3) for counts; ``"0,2"`` -> (0.0, 2.0)."""
    if isinstance(text, (int, float)):
        return kind(text)
    if isinstance(text, (list, tuple)):
        return tuple(kind(t) for t in text)
    text = str(text).strip()
    sep = "," if "," in text else ("-" if "-" in text[1:] else None)
    try:
        if sep is None:
            return kind(text)
        lo, hi = (kind(t) for t in text.split(sep, 1)) if sep == "," else (kind(t) for t in text.rsplit("-", 1))
    except ValueError:
        raise ConfigError(f"cannot parse range {text!r}") from None
    if lo > hi:
        raise ConfigError(f"empty range {text!r}")
    return (lo, hi)


def parse_list(text, kind):
    if isinstance(text, (list, tuple)):
        return [kind(t) for t in text]
    if isinstance(text, (int, float)):
        return [kind(text)]
    try:
        return [kind(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def write_manifest(out, command, cfg, inputs=(), outputs=()):
    def hashes(paths):
        return {os.path.relpath(p, out) if p.startswith(out) else p: file_sha256(p) for p in paths if os.path.isfile(p)}

    atomic_write_json(
        os.path.join(out, "manifest.json"),
        {
            "format": "gisl-manifest",
            "tool": "gisl",
            "version": __version__,
            "command": command,
            "config": cfg,
            "inputs": hashes(inputs),
            "outputs": hashes(outputs),
        },
    )


def _files_under(directory):
    out = []
    for root, _, files in os.walk(directory):
        for f in files:
            if f != "manifest.json":
                out.append(os.path.join(root, f))
    return sorted(out)


def _bench_config(cfg, num_vars, n, intervention, seed, n_sel=None):
    num_edges = cfg.get("num_edges")
    num_vars = int(num_vars)
    if num_edges is not None:
        num_edges = int(num_edges)
        if num_edges > num_vars * (num_vars - 1) // 2 or num_edges < 0:
            raise ConfigError(f"num_edges={num_edges} impossible for {num_vars} variables")
    if num_vars < 2:
        raise ConfigError("num_vars must be at least 2")
    if intervention not in ("hard", "soft"):
        raise ConfigError(f"intervention must be hard or soft, got {intervention!r}")
    if cfg.get("selection_timing", "persistent") not in ("persistent", "post"):
        raise ConfigError("selection_timing must be persistent or post")
    return BenchmarkConfig(
        num_vars=num_vars,
        num_edges=num_edges,
        n=int(n),
        intervention=intervention,
        n_conf=parse_range(cfg["n_conf"]),
        n_sel=parse_range(cfg["n_sel"] if n_sel is None else n_sel),
        mu_range=parse_range(cfg["mu_range"], float),
        seed=int(seed),
        selection_timing=cfg.get("selection_timing", "persistent"),
    )


# -- commands --------------------------------------------------------------------


def cmd_simulate(cfg):
    out = cfg["out"]
    reps = int(cfg["replicates"])
    if reps < 1:
        raise ConfigError("replicates must be positive")
    configs = [
        _bench_config(cfg, cfg["num_vars"], cfg["n"], cfg["intervention"], int(cfg["seed"]) + k) for k in range(reps)
    ]
    for bc in configs:
        directory = out if reps == 1 else os.path.join(out, f"seed-{bc.seed}")
        inst = generate_benchmark(bc)
        inst.save(directory)
        log.info("wrote %s (%d selection, %d confounded pairs)", directory, len(inst.selection_pairs), len(inst.confounded_pairs))
    write_manifest(out, "simulate", cfg, outputs=_files_under(out))
    return EXIT_OK


def _load_inputs(cfg):
    if bool(cfg["instance"]) == bool(cfg["expression"]):
        raise ConfigError("give exactly one of --instance or --expression")
    if cfg["instance"]:
        inst = BenchmarkInstance.load(cfg["instance"])
        return inst.d0, inst.perturbed, _files_under(cfg["instance"])
    genes = parse_list(cfg["genes"], str) if cfg["genes"] else None
    table = load_expression(
        cfg["expression"], cfg["format"], cfg["label_column"], cfg["control"], bool(cfg["log1p"])
    )
    d0, perturbed = split_regimes(table, genes)
    return d0, perturbed, [cfg["expression"]]


def cmd_discover(cfg):
    out = cfg["out"]
    d0, perturbed, inputs = _load_inputs(cfg)
    ci_config = CiConfig(n_max=int(cfg["n_max"]))
    result, backend = discover(
        d0,
        perturbed,
        alpha=float(cfg["alpha"]),
        max_cond=int(cfg["max_cond"]),
        correction_depth=int(cfg["correction_depth"]),
        seed=int(cfg["seed"]),
        ci_config=ci_config,
    )
    os.makedirs(out, exist_ok=True)
    outputs = [os.path.join(out, "result.json"), os.path.join(out, "result.dot")]
    result.save(outputs[0])
    result.save_dot(outputs[1])
    if cfg["dump_tests"]:
        outputs.append(os.path.join(out, "tests.csv"))
        backend.tester.dump_csv(outputs[-1])
    if result.untested:
        pairs = ", ".join(f"{a}-{b}" for a, b in sorted(result.untested))
        log.warning("pairs without perturbation data for both ends (untested): %s", pairs)
    write_manifest(out, "discover", cfg, inputs, outputs)
    print(
        f"{len(result.causal_edges)} directed, {len(result.selected)} selection, "
        f"{len(result.confounded)} confounded, {len(result.unknown)} unknown pairs"
    )
    return EXIT_OK


def _load_truth(path):
    if os.path.isdir(path):
        path = os.path.join(path, "truth.json")
    with open(path, encoding="utf-8") as fh:
        truth = json.load(fh)
    to_set = lambda key: {tuple(p) for p in truth[key]}  # noqa: E731
    return to_set("causal_edges"), to_set("confounded_pairs"), to_set("selection_pairs"), path


def cmd_evaluate(cfg):
    out = cfg["out"]
    if not cfg["result"]:
        raise ConfigError("--result is required")
    if not (cfg["truth"] or cfg["zscores"]):
        raise ConfigError("give --truth and/or --zscores")
    result = GislResult.load(cfg["result"])
    inputs, outputs, report = [cfg["result"]], [], {}
    os.makedirs(out, exist_ok=True)
    text = ""
    if cfg["truth"]:
        edges, conf, sel, truth_path = _load_truth(cfg["truth"])
        inputs.append(truth_path)
        rep = evaluate(result, edges, conf, sel)
        report["truth"] = rep.to_dict()
        text += rep.to_text()
    if cfg["zscores"]:
        inputs.append(cfg["zscores"])
        z = load_zscores(cfg["zscores"])
        try:
            acc, details, missing = zscore_eval(result.selected, z, float(cfg["threshold"]))
        except EmptyEvaluable as exc:
            acc, details, missing = None, [], [str(exc)]
        report["zscore"] = {
            "threshold": float(cfg["threshold"]),
            "accuracy": acc,
            "pairs": [{"pair": list(d.pair), "z": list(d.z), "correct": d.correct} for d in details],
            "missing": [list(m) if isinstance(m, tuple) else m for m in missing],
        }
        text += f"zscore accuracy (|z| > {float(cfg['threshold']):g}): {'undef' if acc is None else f'{acc:.3f}'}\n"
    outputs = [os.path.join(out, "report.json"), os.path.join(out, "report.txt")]
    atomic_write_json(outputs[0], report)
    atomic_write_text(outputs[1], text)
    write_manifest(out, "evaluate", cfg, inputs, outputs)
    sys.stdout.write(text)
    return EXIT_OK


def _bench_job(job):
    """Simulate, discover and evaluate one instance; writes ``report.json``."""
    directory, bc_dict, alpha, max_cond, depth, n_max = job
    bc = BenchmarkConfig.from_dict(bc_dict)
    inst = generate_benchmark(bc)
    result, _ = discover(
        inst.d0, inst.perturbed, alpha=alpha, max_cond=max_cond, correction_depth=depth, seed=bc.seed,
        ci_config=CiConfig(n_max=n_max),
    )
    rep = evaluate(result, inst.true_edges, inst.confounded_pairs, inst.selection_pairs)
    os.makedirs(directory, exist_ok=True)
    result.save(os.path.join(directory, "result.json"))
    atomic_write_json(os.path.join(directory, "truth.json"), inst.truth_dict())
    atomic_write_json(os.path.join(directory, "report.json"), {"config": bc.to_dict(), "report": rep.to_dict()})
    return directory


def bench_grid(cfg):
    cells = []
    for num_vars in parse_list(cfg["num_vars"], int):
        for n in parse_list(cfg["n"], int):
            for kind in parse_list(cfg["intervention"], str):
                n_sel_values = [cfg["n_sel"]] if "-" in str(cfg["n_sel"]) else parse_list(cfg["n_sel"], int)
                for n_sel in n_sel_values:
                    cells.append((num_vars, n, kind, n_sel))
    return cells


def cmd_bench(cfg):
    out = cfg["out"]
    seeds = int(cfg["seeds"])
    if seeds < 1:
        raise ConfigError("seeds must be positive")
    jobs, cell_dirs = [], []
    for num_vars, n, kind, n_sel in bench_grid(cfg):
        cell = f"vars{num_vars}_n{n}_{kind}_sel{n_sel}"
        cell_dirs.append((cell, num_vars, n, kind, n_sel))
        for k in range(seeds):
            seed = int(cfg["seed"]) + k
            bc = _bench_config(cfg, num_vars, n, kind, seed, n_sel)
            directory = os.path.join(out, cell, f"seed-{seed}")
            if cfg["resume"] and os.path.isfile(os.path.join(directory, "report.json")):
                continue
            jobs.append((directory, bc.to_dict(), float(cfg["alpha"]), int(cfg["max_cond"]),
                         int(cfg["correction_depth"]), int(cfg["n_max"])))
    log.info("%d instances to run", len(jobs))
    workers = max(1, int(cfg["workers"]))
    if workers == 1:
        for job in jobs:
            log.info("done %s", _bench_job(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for directory in pool.map(_bench_job, jobs):
                log.info("done %s", directory)
    rows = []
    for cell, num_vars, n, kind, n_sel in cell_dirs:
        reports = []
        for k in range(seeds):
            path = os.path.join(out, cell, f"seed-{int(cfg['seed']) + k}", "report.json")
            with open(path, encoding="utf-8") as fh:
                reports.append(json.load(fh)["report"])
        agg = aggregate(reports)
        row = {"cell": cell, "num_vars": num_vars, "n": n, "intervention": kind, "n_sel": str(n_sel), "seeds": seeds}
        row.update(agg)
        rows.append(row)
    summary_csv = os.path.join(out, "summary.csv")
    summary_txt = os.path.join(out, "summary.txt")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = ["cell", "num_vars", "n", "intervention", "n_sel", "seeds"]
    writer.writerow(head + [f"{c}_{s}" for c in REPORT_COLUMNS for s in ("mean", "std", "n")])
    for row in rows:
        vals = [row[h] for h in head]
        for c in REPORT_COLUMNS:
            vals += ["" if row[c][s] is None else repr(row[c][s]) for s in ("mean", "std", "n")]
        writer.writerow(vals)
    atomic_write_text(summary_csv, buf.getvalue())
    text = format_table(rows, ["cell", "f1", "precision", "recall", "selection_accuracy", "confounder_accuracy"])
    atomic_write_text(summary_txt, text)
    write_manifest(out, "bench", cfg, outputs=[summary_csv, summary_txt])
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "discover": cmd_discover, "evaluate": cmd_evaluate, "bench": cmd_bench}


# -- parser ----------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="base random seed (default 0)")
    common.add_argument("--alpha", type=float, help="significance level (default 0.05)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="parallel worker processes (default 1)")
    common.add_argument("--config", help="TOML or JSON settings file, or a previous manifest.json")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="gisl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gisl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="generate synthetic benchmark instances")
    sim.add_argument("--num-vars", type=int)
    sim.add_argument("--num-edges", type=int, help="defaults to num-vars")
    sim.add_argument("--n", type=int, help="rows per regime")
    sim.add_argument("--intervention", choices=["hard", "soft"])
    sim.add_argument("--n-conf", help="count or range such as 1-3")
    sim.add_argument("--n-sel", help="count or range such as 1-3")
    sim.add_argument("--mu-range", help="noise-mean range, e.g. 0,2")
    sim.add_argument("--replicates", type=int, help="instances with consecutive seeds")
    sim.add_argument("--selection-timing", choices=["persistent", "post"])

    dis = sub.add_parser("discover", parents=[common], help="run the discovery pipeline")
    dis.add_argument("--instance", help="benchmark instance directory")
    dis.add_argument("--expression", help="CSV/TSV expression file with a label column")
    dis.add_argument("--format", choices=["csv", "tsv"])
    dis.add_argument("--label-column")
    dis.add_argument("--control", help="label of unperturbed cells")
    dis.add_argument("--genes", help="comma-separated gene subset")
    dis.add_argument("--log1p", action="store_true", default=None)
    dis.add_argument("--max-cond", type=int)
    dis.add_argument("--correction-depth", type=int)
    dis.add_argument("--n-max", type=int, help="row cap per test")
    dis.add_argument("--dump-tests", action="store_true", default=None, help="write every CI test to tests.csv")

    ev = sub.add_parser("evaluate", parents=[common], help="score a result")
    ev.add_argument("--result", help="result.json from discover")
    ev.add_argument("--truth", help="instance directory or truth.json")
    ev.add_argument("--zscores", help="two-column gene,score file")
    ev.add_argument("--threshold", type=float)

    be = sub.add_parser("bench", parents=[common], help="simulate, discover and evaluate over a grid")
    be.add_argument("--num-vars", help="comma-separated sizes")
    be.add_argument("--n", help="comma-separated sample sizes")
    be.add_argument("--intervention", help="hard, soft or hard,soft")
    be.add_argument("--n-sel", help="range like 1-3, or a list of fixed counts like 1,2,3,4")
    be.add_argument("--n-conf")
    be.add_argument("--mu-range")
    be.add_argument("--seeds", type=int, help="instances per cell")
    be.add_argument("--max-cond", type=int)
    be.add_argument("--correction-depth", type=int)
    be.add_argument("--n-max", type=int)
    be.add_argument("--resume", action="store_true", default=None, help="skip instances with a report")
    be.add_argument("--selection-timing", choices=["persistent", "post"])
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, GraphError) as exc:
        print(f"gisl {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, IngestError, DataError, CiError, EmptyEvaluable, OSError, KeyError) as exc:
        print(f"gisl {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
