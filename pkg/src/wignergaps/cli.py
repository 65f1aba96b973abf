"""Command-line entry point: ``wigner-gaps <subcommand> --config run.json``.

Each subcommand runs one experiment kind from a JSON config and writes the
trial records (NDJSON), a per-N summary (CSV), analysis tables and a
manifest listing every file of the run into the output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import experiments as ex
from .errors import ConfigError, NumericalError, PreconditionError

SUBCOMMANDS = {
    "spectrum": ("spectrum", "wegner"),
    "gaps": ("gaps",),
    "regularize": ("regularize", "fd_probe"),
    "compare": ("four_moment", "lindeberg"),
    "flow": ("flow", "coupling"),
    "universality": ("universality",),
}
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PRECONDITION = 0, 2, 3, 4


def load_config(path, seed=None):
    """Parse and validate a config file; malformed JSON reports line and column."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    cfg = ex.ExperimentConfig.from_dict(d)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def _csv_table(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items() if k != "run"}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


class _Outputs:
    """Collects output files and writes each atomically."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.files = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def write(self, name, text):
        ex._write_text(self.path(name), text)
        self.files.append(name)

    def adopt(self, paths):
        for p in paths:
            self.files.append(os.path.relpath(p, self.out_dir))


def _analyze(cfg, args, outs):
    """Run the experiment behind ``cfg.kind`` and return the analysis dict."""
    kind = cfg.kind
    n_last = cfg.n_values[-1]
    run_kw = {
        "workers": args.workers,
        "records_path": outs.path("records.ndjson"),
        "artifact_dir": outs.out_dir,
    }
    spec = cfg.spec(n_last)
    if kind == "four_moment":
        if cfg.ensemble_b is None:
            raise ConfigError("four_moment needs ensemble_b")
        res = ex.four_moment_compare(spec, cfg.spec(n_last, "b"), cfg, **run_kw)
        return res, {"compare.csv": (res["per_n"], ["n", "count", "mean_diff", "stderr", "ks_two_sample", "ks_pvalue"])}
    if kind == "flow":
        if "t" not in cfg.params:
            raise ConfigError("flow needs params.t")
        res = ex.flow_compare(spec, float(cfg.params["t"]), cfg, override=args.override_gates, **run_kw)
        return res, {"flow.csv": (res["per_n"], ["n", "count", "ks", "mean_diff", "stderr", "max_abs_paired_diff"])}
    if kind == "coupling":
        spec_y = cfg.spec(n_last, "b") if cfg.ensemble_b is not None else None
        res = ex.coupling_decay(spec, cfg, spec_y=spec_y, **run_kw)
        rows = [{"t": t, "median_max_gapdiff": m} for t, m in zip(res["times"], res["median_max_gapdiff"])]
        return res, {"coupling.csv": (rows, ["t", "median_max_gapdiff"])}
    if kind == "universality":
        sel = cfg.selector or {}
        if sel.get("mode") != "interval":
            raise ConfigError("universality needs an interval selector")
        interval = (sel["a"], sel["b"])
        run = ex.mc_run(cfg, **run_kw)
        res = ex.universality_maxgap(spec, interval, run)
        fits = []
        for k in range(1, int(cfg.params.get("k_max", 2)) + 1):
            f = ex.universality_fluctuations(spec, interval, k, run)
            fits.append({"k": k, "n": f["n"], "fitted_c2": f["fitted_c2"], "ks_to_gumbel_k": f["ks_to_gumbel_k"]})
        res["fluctuations"] = fits
        tables = {
            "universality.csv": (res["per_N"], ["n", "count", "scaled_mean", "scaled_sd"]),
            "fluctuations.csv": (fits, ["k", "n", "fitted_c2", "ks_to_gumbel_k"]),
        }
        return res, tables
    if kind == "wegner":
        res = ex.wegner_probe(spec, cfg.params.get("energy", 0.0), cfg.params.get("eps_w", [0.5]), cfg, **run_kw)
        return res, {"wegner.csv": (res["per_case"], ["n", "eps_w", "empirical_prob", "stderr", "expected_count"])}
    if kind == "lindeberg":
        if cfg.ensemble_b is None:
            raise ConfigError("lindeberg needs ensemble_b")
        if cfg.params.get("gate", True):
            worst, bound = ex.moment_gate(cfg.spec(n_last), cfg.spec(n_last, "b"), cfg.params.get("gate_c", 0.1))
            if worst > bound and not args.override_gates:
                raise PreconditionError(f"precondition: four-moment match failed (mismatch {worst:.3e} > {bound:.3e})")
    run = ex.mc_run(cfg, **run_kw)
    return {"run": run, "n_trials": len(run.records), "n_failed": run.n_failed}, {}


def _run(subcommand, args):
    cfg = load_config(args.config, args.seed)
    if cfg.kind not in SUBCOMMANDS[subcommand]:
        raise ConfigError(f"'{subcommand}' runs kinds {SUBCOMMANDS[subcommand]}, config has {cfg.kind!r}")
    out_dir = os.environ.get("WIGNER_GAPS_OUT") or args.out_dir or cfg.output or "out"
    os.makedirs(out_dir, exist_ok=True)
    records = os.path.join(out_dir, "records.ndjson")
    if os.path.exists(records) and not args.resume:
        os.remove(records)
    started = datetime.now(timezone.utc).isoformat()
    outs = _Outputs(out_dir)
    status = EXIT_OK
    error = None
    try:
        res, tables = _analyze(cfg, args, outs)
        run = res.get("run") if isinstance(res, dict) else None
    except ex.RunFailure as exc:
        res, tables, run = {}, {}, exc.result
        status, error = EXIT_NUMERICAL, str(exc)
    if os.path.exists(records):
        outs.files.append("records.ndjson")
        recs = [ex.TrialRecord.from_json(line) for line in open(records) if line.strip()]
        summary = ex.RunResult(cfg, recs, ex.summarize(recs), 0, 0.0).summary_csv()
        outs.write("summary.csv", summary)
    if run is not None:
        outs.adopt(run.artifacts)
    for name, (rows, cols) in tables.items():
        outs.write(name, _csv_table(rows, cols))
    if res:
        outs.write("analysis.json", json.dumps(_jsonable(res), sort_keys=True, indent=1) + "\n")
    manifest = {
        "subcommand": subcommand,
        "config_hash": cfg.config_hash,
        "base_seed": cfg.base_seed,
        "code_version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": sorted(set(outs.files)),
        "exit_code": status,
    }
    if error:
        manifest["error"] = error
    ex._write_text(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    if error:
        print(f"error: {error}", file=sys.stderr)
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="wigner-gaps", description="Gap statistics experiments for Wigner matrices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kinds in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run a {' or '.join(kinds)} experiment")
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--workers", type=int, default=1, help="parallel trial processes")
        p.add_argument("--out-dir", default=None, help="output directory (WIGNER_GAPS_OUT takes precedence)")
        p.add_argument("--override-gates", action="store_true", help="run even if a precondition gate fails")
        p.add_argument("--resume", action="store_true", help="reuse records already in the output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _run(args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
