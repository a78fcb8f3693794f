"""Command-line interface.

Subcommands: run, paired, certify, tune-k, sweep. Exit codes: 0 success,
1 configuration error, 2 did-not-converge, 3 internal error. Artifacts land in
an output directory named from the config hash and seed (override with
[output] or --out; FEDSIM_OUTDIR sets the default root). Files are written
atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import certify, config as cfgmod, simulator
from .errors import ConfigError
from .schedules import Schedule
from .sparsefed import select_k

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DNC = 2
EXIT_INTERNAL = 3

SWEEP_HEADER_TAG = "# format: sweep-v1"


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _out_dir(exp: cfgmod.Experiment, cli_out: str | None) -> Path:
    root = cli_out or exp.settings["output"]["dir"] or os.environ.get("FEDSIM_OUTDIR", "runs")
    return Path(root) / exp.run_name


def _load_experiment(path: str, overrides: list[str]) -> cfgmod.Experiment:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(str(e)) from None
    return cfgmod.resolve(cfgmod.parse_config(text, overrides))


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit_run(out: Path, record: simulator.RunRecord, prefix: str = ""):
    _atomic_write(out / f"{prefix}rounds.csv", record.to_csv_text())
    _atomic_write(out / f"{prefix}summary.json", _json_text(record.summary()))


def cmd_run(args) -> int:
    exp = _load_experiment(args.config, args.set or [])
    record = simulator.run(exp.protocol, exp.oracle, exp.devices, exp.test, exp.aux)
    out = _out_dir(exp, args.out)
    _emit_run(out, record)
    print(f"wrote {out} ({record.status}, {len(record.rows)} rounds, "
          f"test_acc={record.final_test_acc:.4f}, attack_acc={record.final_attack_acc:.4f})")
    return EXIT_OK if record.status == "ok" else EXIT_DNC


def cmd_paired(args) -> int:
    exp = _load_experiment(args.config, args.set or [])
    if exp.protocol.attack is None and exp.protocol.injection is None:
        raise ConfigError("paired execution needs [attack] kind or injection_rho")
    benign, poisoned, report = simulator.run_paired(
        exp.protocol, exp.oracle, exp.devices, exp.test, exp.aux)
    out = _out_dir(exp, args.out)
    _emit_run(out, benign, prefix="benign-")
    _emit_run(out, poisoned, prefix="poisoned-")
    _atomic_write(out / "drift.json", _json_text({
        "final_l1_drift": report.final_distance,
        "per_round_l1_drift": [float(x) for x in report.distances],
    }))
    print(f"wrote {out} (drift={report.final_distance:.6g})")
    ok = benign.status == "ok" and poisoned.status == "ok"
    return EXIT_OK if ok else EXIT_DNC


def _parse_schedule(text: str) -> Schedule:
    parts = text.split(":")
    if parts[0] == "constant" and len(parts) == 2:
        return Schedule("constant", value=float(parts[1]))
    if parts[0] == "triangular" and len(parts) == 3:
        return Schedule("triangular", peak=float(parts[1]), warmup_frac=float(parts[2]))
    raise ConfigError(f"bad schedule {text!r}; use constant:VALUE or triangular:PEAK:WARMUP")


def cmd_certify(args) -> int:
    schedule = _parse_schedule(args.schedule)
    ks = [int(v) for v in args.grid_k.split(",")] if args.grid_k else [args.k]
    ts = [int(v) for v in args.grid_t.split(",")] if args.grid_t else [args.big_t]
    lines = ["# format: radius-v1", "k,T,rho,gamma,c,recurrence,closed_form"]
    for k, T in itertools.product(ks, ts):
        p = certify.RadiusParams(rho=args.rho, c=args.c, gamma=args.gamma,
                                 k=k, d=args.d, T=T, schedule=schedule)
        rec = certify.radius_recurrence(p)
        closed = certify.radius_closed_form(p, sparse=True)
        lines.append(f"{k},{T},{args.rho!r},{args.gamma!r},{args.c!r},{rec!r},{closed!r}")
        print(f"k={k} T={T}: recurrence={rec:.6g} closed_form={closed:.6g}")
    if args.csv:
        _atomic_write(Path(args.csv), "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_tune_k(args) -> int:
    exp = _load_experiment(args.config, args.set or [])
    train_like = exp.devices[0].examples if len(exp.devices) == 1 else exp.test
    sel = select_k(exp.oracle, train_like, args.omega, args.iters_per_epoch,
                   args.samples, batch_size=args.batch, seed=exp.protocol.seeds.data)
    if not sel.attained:
        print(f"warning: omega={args.omega} unattainable; falling back to k=d")
    print(f"k={sel.k} loss_fraction={sel.loss_fraction:.6f}")
    return EXIT_OK


def _parse_sweep_params(specs: list[str]) -> list[tuple[str, list[str]]]:
    if not specs:
        raise ConfigError("sweep needs at least one --param section.key=v1,v2,...")
    out = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"bad sweep spec {spec!r}")
        key, values = spec.split("=", 1)
        vals = [v for v in values.split(",") if v != ""]
        if not vals or "." not in key:
            raise ConfigError(f"bad sweep spec {spec!r}")
        out.append((key, vals))
    return out


def cmd_sweep(args) -> int:
    params = _parse_sweep_params(args.param or [])
    base_text = Path(args.config).read_text()
    names = [k for k, _ in params]
    combos = list(itertools.product(*(vals for _, vals in params)))

    def run_point(combo) -> dict:
        overrides = (args.set or []) + [f"{k}={v}" for k, v in zip(names, combo)]
        point = {k: v for k, v in zip(names, combo)}
        try:
            exp = cfgmod.resolve(cfgmod.parse_config(base_text, overrides))
            if exp.protocol.attack is not None or exp.protocol.injection is not None:
                _, record, report = simulator.run_paired(
                    exp.protocol, exp.oracle, exp.devices, exp.test, exp.aux)
                drift = report.final_distance
            else:
                record = simulator.run(exp.protocol, exp.oracle, exp.devices,
                                       exp.test, exp.aux)
                drift = math.nan
            return {**point, "status": record.status,
                    "test_acc": record.final_test_acc,
                    "attack_acc": record.final_attack_acc,
                    "oif": math.nan if record.oif is None else record.oif,
                    "l1_drift": drift}
        except Exception as e:
            return {**point, "status": f"error: {e}", "test_acc": math.nan,
                    "attack_acc": math.nan, "oif": math.nan, "l1_drift": math.nan}

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(run_point, combos))

    out = Path(args.out or os.environ.get("FEDSIM_OUTDIR", "runs")) / "sweep"
    cols = names + ["status", "test_acc", "attack_acc", "oif", "l1_drift"]
    lines = [SWEEP_HEADER_TAG, ",".join(cols)]
    for row in results:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(repr(v) if isinstance(v, float) else str(v).replace(",", ";"))
        lines.append(",".join(cells))
    _atomic_write(out / "summary.csv", "\n".join(lines) + "\n")
    n_err = sum(1 for r in results if str(r["status"]).startswith("error"))
    print(f"wrote {out / 'summary.csv'} ({len(results)} points, {n_err} failed)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedsim")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("config", help="path to an INI experiment config")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value")
        p.add_argument("--out", help="output root directory")

    p_run = sub.add_parser("run", help="execute one experiment")
    add_config_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_paired = sub.add_parser("paired", help="paired benign/poisoned execution")
    add_config_args(p_paired)
    p_paired.set_defaults(func=cmd_paired)

    p_cert = sub.add_parser("certify", help="radius calculator")
    p_cert.add_argument("--rho", type=float, required=True)
    p_cert.add_argument("--c", type=float, required=True)
    p_cert.add_argument("--gamma", type=float, default=0.0)
    p_cert.add_argument("--k", type=int, required=True)
    p_cert.add_argument("--d", type=int, required=True)
    p_cert.add_argument("--T", dest="big_t", type=int, required=True)
    p_cert.add_argument("--schedule", default="constant:0.1")
    p_cert.add_argument("--grid-k", help="comma-separated k values")
    p_cert.add_argument("--grid-T", dest="grid_t", help="comma-separated T values")
    p_cert.add_argument("--csv", help="write the grid as CSV")
    p_cert.set_defaults(func=cmd_certify)

    p_tune = sub.add_parser("tune-k", help="adaptive sparsity selection")
    add_config_args(p_tune)
    p_tune.add_argument("--omega", type=float, required=True)
    p_tune.add_argument("--iters-per-epoch", type=int, default=10)
    p_tune.add_argument("--samples", type=int, default=8)
    p_tune.add_argument("--batch", type=int, default=32)
    p_tune.set_defaults(func=cmd_tune_k)

    p_sweep = sub.add_parser("sweep", help="run a parameter grid")
    add_config_args(p_sweep)
    p_sweep.add_argument("--param", action="append",
                         metavar="SECTION.KEY=V1,V2,...", help="values to sweep")
    p_sweep.add_argument("--jobs", type=int, default=4)
    p_sweep.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
