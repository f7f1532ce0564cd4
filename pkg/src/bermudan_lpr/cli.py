"""Command-line entry point: ``bermudan-lpr <command> --config FILE``.

Exit codes: 0 success, 2 invalid configuration or input, 3 unsupported
combination.  Results are computed in full before any file is written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import __version__
from .config import (
    ConfigError,
    RunConfig,
    build_experiment,
    lattice_params,
    load_config,
    oracle_model,
    power_put_params,
    regression_plan,
)
from .errors import InvalidInput, Unsupported
from .models import write_ensemble_csv
from .oracles import lattice_convergence
from .pricing import format_replication_csv, replicate, replication_rows, replication_seed
from .studies import (
    BOUNDARY_COLUMNS,
    RATE_COLUMNS,
    bandwidth_rows,
    bandwidth_study,
    bandwidth_summary,
    boundary_study,
    rate_rows,
    rate_study,
)
from .testbeds import power_put_margins, uniform_margins

EXIT_OK, EXIT_CONFIG, EXIT_UNSUPPORTED = 0, 2, 3


def format_table(columns, rows) -> str:
    """CSV with floats in shortest round-trip form."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def parse_table(text: str) -> tuple[list, list]:
    """Inverse of format_table: ints stay ints, True/False become bools, the rest floats."""
    rows = list(csv.reader(io.StringIO(text)))
    out = []
    for row in rows[1:]:
        parsed = []
        for v in row:
            if v in ("True", "False"):
                parsed.append(v == "True")
            else:
                try:
                    parsed.append(int(v))
                except ValueError:
                    parsed.append(float(v))
        out.append(parsed)
    return rows[0], out


def _json_number(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def _report(command: str, cfg: RunConfig, result: dict) -> str:
    doc = {"command": command, "version": __version__, "config": cfg.to_dict(), "result": result}
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------- commands


def cmd_price(cfg: RunConfig, threads: int) -> dict:
    exp = build_experiment(cfg)
    report = replicate(exp, cfg.simulation.replications, threads)
    result = report.to_dict()
    result.pop("config")
    rows = replication_rows(report, exp.dp.kernel.bandwidth)
    return {"report.json": _report("price", cfg, result), "replications.csv": format_replication_csv(rows)}


def cmd_bandwidth_study(cfg: RunConfig, threads: int) -> dict:
    h_grid = cfg.study.h_grid
    if not h_grid:
        raise ConfigError("study.h_grid is empty", cfg.source)
    results = bandwidth_study(build_experiment(cfg), h_grid, cfg.simulation.replications, threads)
    summary = {"M": cfg.simulation.M, "N": cfg.simulation.N, "replications": cfg.simulation.replications,
               "by_bandwidth": bandwidth_summary(results)}
    return {"report.json": _report("bandwidth-study", cfg, summary),
            "bandwidth_study.csv": format_replication_csv(bandwidth_rows(results))}


def cmd_rate_study(cfg: RunConfig, threads: int) -> dict:
    model = oracle_model(cfg)
    M_grid = cfg.study.M_grid
    if not M_grid:
        raise ConfigError("study.M_grid is empty", cfg.source)
    study = rate_study(model, M_grid, cfg.simulation.replications, regression_plan(cfg),
                       cfg.simulation.seed, threads)
    result = {"value": study.value, "slope_bias_hat": study.slope_hat, "slope_bias_c": study.slope_c,
              "replications": cfg.simulation.replications}
    return {"report.json": _report("rate-study", cfg, result),
            "rate_study.csv": format_table(RATE_COLUMNS, rate_rows(study))}


def _margins(cfg: RunConfig):
    kind, n, seed = cfg.model.kind, cfg.study.samples, cfg.simulation.seed
    if kind == "power_put":
        return power_put_margins(power_put_params(cfg), n, seed, cfg.model.upper)
    if kind == "digital":
        return oracle_model(cfg).margins(n, seed)
    if kind == "uniform_margins":
        return uniform_margins(n, seed)
    raise Unsupported(f"no margin oracle for model.kind = {kind}")


def cmd_boundary_study(cfg: RunConfig, threads: int) -> dict:
    margins = _margins(cfg)
    if not cfg.study.delta_grid:
        raise ConfigError("study.delta_grid is empty", cfg.source)
    fit, rows = boundary_study(margins, cfg.study.delta_grid, cfg.study.min_hits)
    result = {"alpha_hat": _json_number(fit.alpha_hat),
              "intercept": None if math.isnan(fit.intercept) else fit.intercept,
              "zero_fraction": fit.zero_fraction, "samples": cfg.study.samples}
    return {"report.json": _report("boundary-study", cfg, result),
            "boundary_study.csv": format_table(BOUNDARY_COLUMNS, rows)}


def cmd_lattice(cfg: RunConfig, threads: int) -> dict:
    steps = cfg.study.lattice_steps
    params = lattice_params(cfg, steps[0])
    rows = lattice_convergence(params, steps)
    result = {"value": rows[-1][1], "steps": rows[-1][0], "table": [list(r) for r in rows]}
    return {"report.json": _report("lattice", cfg, result),
            "lattice.csv": format_table(["steps", "value"], [[s, float(v)] for s, v in rows])}


def cmd_simulate(cfg: RunConfig, threads: int) -> dict:
    exp = build_experiment(cfg)
    paths = exp.simulate(cfg.simulation.M, replication_seed(cfg.simulation.seed, 0), 0)
    buf = io.StringIO()
    write_ensemble_csv(paths, buf)
    result = {"M": paths.M, "L": paths.grid.L, "d": paths.d, "seed": paths.seed}
    return {"report.json": _report("simulate", cfg, result), "paths.csv": buf.getvalue()}


COMMANDS = {
    "price": cmd_price,
    "bandwidth-study": cmd_bandwidth_study,
    "rate-study": cmd_rate_study,
    "boundary-study": cmd_boundary_study,
    "lattice": cmd_lattice,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bermudan-lpr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides simulation.seed)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
        p.add_argument("--replications", type=int, help="overrides simulation.replications")
    return parser


def write_outputs(out_dir: Path, files: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", "--threads")
        cfg = load_config(args.config).with_overrides(args.seed, args.replications, args.out)
        files = COMMANDS[args.command](cfg, args.threads)
    except Unsupported as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_outputs(Path(cfg.output.dir), files)
    print(f"wrote {', '.join(sorted(files))} to {cfg.output.dir}")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
