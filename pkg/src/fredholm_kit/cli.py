"""Command-line front end: ``fredholm-kit <command> [--config file.json] [--out dir] [overrides]``.

Commands
--------
solve    tabulated target from CSV, any kernel, optional transform
mixdens  smooth mixing density from a univariate sample
fpt      first-passage density for a Brownian boundary crossing
demo     named reproductions of the worked examples

Every run writes ``run_config.json`` (the resolved config, all defaults
filled in), ``diagnostics.json`` and one or more CSV tables into ``--out``.
Running the written ``run_config.json`` again reproduces the CSVs exactly.
Failures exit non-zero and print a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, validate_config
from .demos import DEMOS, RunOutput, fit_location_mixture, run_fpt_problem
from .errors import ConfigError, FredholmError
from .fpt import boundary_from_dict
from .grid import Grid1D, GridFunction, read_csv, write_csv
from .kernels import Difference, build_matrix, kernel_from_dict
from .mixing import (KDEConfig, SampleData, estimate_mixing, geometric_grid, rule_of_thumb_bandwidth,
                     uniform_start)
from .solver import StoppingRule, solve
from .transforms import (identity_transform, normalize_kernel_transform, shift_transform,
                         split_kernel_transform)


def _grid(spec: dict) -> Grid1D:
    return Grid1D.uniform(spec["min"], spec["max"], spec["nodes"])


def _rule(spec: dict) -> StoppingRule:
    return StoppingRule(spec["max_iter"], spec["tol_div"], spec["tol_diff"])


def run_solve(cfg: RunConfig) -> RunOutput:
    f = read_csv(cfg["target"])
    theta_grid = _grid(cfg["theta_grid"])
    kernel = kernel_from_dict(cfg["kernel"])
    tr = cfg["transform"]
    p_init = None
    if cfg["p0"] != "uniform":
        given = read_csv(cfg["p0"])
        if not np.array_equal(given.nodes, theta_grid.nodes):
            raise FredholmError("p0 file must be tabulated on theta_grid")
        p_init = GridFunction(theta_grid, given.values)
    p0 = p_init if p_init is not None else uniform_start(theta_grid)
    if tr["kind"] == "split":
        assert isinstance(kernel, Difference)
        kp = build_matrix(kernel.plus, f.grid, theta_grid)
        km = build_matrix(kernel.minus, f.grid, theta_grid)
        tp = split_kernel_transform(kp, km, f, tr["t"], p_init)
    else:
        matrix = build_matrix(kernel, f.grid, theta_grid)
        if tr["kind"] == "shift":
            tp = shift_transform(matrix, f, tr["t"], p_init)
        elif tr["kind"] == "normalize":
            tp = normalize_kernel_transform(matrix, f, p0)
        else:
            tp = identity_transform(matrix, f, p0)
    res = solve(tp.canonical, _rule(cfg["stopping"]), renormalize=cfg["renormalize"])
    details = tp.recover_details(res)
    out = RunOutput(res, {"p_final": (details["p"], ("theta", "p")),
                          "f_final": (res.f_final, ("x", "f_canonical"))},
                    warnings=list(tp.warnings) + details["warnings"])
    out.mass_diagnostics = {"scale": tp.scale, "t": tp.t}
    if "delta_l1" in details:
        out.summary.update(split_delta_l1=details["delta_l1"],
                           split_relative_delta=details["relative_delta"])
    return out


def run_mixdens(cfg: RunConfig) -> RunOutput:
    data = SampleData.from_csv(cfg["data"])
    kspec = cfg["kernel"]
    if kspec["kind"] == "normal-location" and cfg["theta_grid"] is None and cfg["x_grid"] is None:
        params = {"sigma": kspec.get("sigma", "auto"), "bandwidth": cfg["bandwidth"],
                  "method": cfg["method"], "theta_nodes": cfg["theta_nodes"],
                  "x_nodes": cfg["x_nodes"], "renormalize": cfg["renormalize"], **cfg["stopping"]}
        return fit_location_mixture(data, params)
    h = rule_of_thumb_bandwidth(data) if cfg["bandwidth"] == "rule-of-thumb" else cfg["bandwidth"]
    if kspec["kind"] == "normal-location":
        sigma = h if kspec.get("sigma", "auto") == "auto" else kspec["sigma"]
        kernel = kernel_from_dict({"kind": "normal-location", "sigma": sigma})
        lo, hi = float(data.observations.min()), float(data.observations.max())
        default_theta = Grid1D.uniform(lo, hi, cfg["theta_nodes"])
        pad = 4 * h + 5 * sigma
    else:
        # variances from well below the bandwidth to beyond the largest observation
        kernel = kernel_from_dict({"kind": "normal-scale"})
        reach = float(np.max(np.abs(data.observations)))
        default_theta = geometric_grid((h / 4) ** 2, (2 * reach) ** 2, cfg["theta_nodes"])
        lo, hi, pad = -reach, reach, 4 * h + reach
    tg = _grid(cfg["theta_grid"]) if cfg["theta_grid"] else default_theta
    xg = _grid(cfg["x_grid"]) if cfg["x_grid"] else Grid1D.uniform(lo - pad, hi + pad, cfg["x_nodes"])
    res = estimate_mixing(data, kernel, tg, KDEConfig(xg, h), _rule(cfg["stopping"]),
                          method=cfg["method"], renormalize=cfg["renormalize"])
    tables = {"p_final": (res.p_final, ("theta", "p")), "f_final": (res.f_final, ("x", "f"))}
    if res.target is not None:
        tables["f_kde"] = (res.target, ("x", "f_kde"))
    return RunOutput(res, tables, summary={"bandwidth": h, "n": data.n})


def run_fpt(cfg: RunConfig) -> RunOutput:
    b = dict(cfg["boundary"])
    if b["kind"] != "tabulated":
        b.pop("path")
    params = {"theta_spacing": cfg["theta_grid"]["spacing"], "theta_nodes": cfg["theta_grid"]["nodes"],
              "p0_rate": cfg["p0_rate"], "N": cfg["mc"]["N"],
              "resample": cfg["mc"]["resample_each_iteration"], "seed": cfg["seed"],
              **cfg["stopping"], **cfg["simulate"]}
    return run_fpt_problem(boundary_from_dict(b), params)


def run_demo_config(cfg: RunConfig) -> RunOutput:
    demo = DEMOS[cfg["name"]]
    return demo.runner({**cfg["params"], "seed": cfg["seed"]})


RUNNERS = {"solve": run_solve, "mixdens": run_mixdens, "fpt": run_fpt, "demo": run_demo_config}


def write_outputs(cfg: RunConfig, out: RunOutput, directory: Path, timings: dict) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / "run_config.json"]
    written[0].write_text(cfg.to_json())
    for name, (fn, header) in out.tables.items():
        path = directory / f"{name}.csv"
        write_csv(fn, path, header)
        written.append(path)
    for name, values in out.samples.items():
        path = directory / f"{name}.csv"
        with open(path, "w") as fh:
            fh.write(f"{name}\n")
            for v in values:
                fh.write(f"{v:.17g}\n")
        written.append(path)
    res = out.result
    diag = {
        "command": cfg.command if cfg.command != "demo" else f"demo {cfg['name']}",
        "iterations": res.iterations,
        "termination": res.termination.value,
        "divergence_history": [float(d) for d in res.divergence_history],
        "warnings": list(res.warnings) + list(out.warnings),
        "timings_ms": timings,
        "mass_diagnostics": {"p_final_mass": float(res.p_final.mass()), **out.mass_diagnostics},
        "summary": out.summary,
    }
    path = directory / "diagnostics.json"
    path.write_text(json.dumps(diag, indent=2, default=float) + "\n")
    written.append(path)
    return written


def run(cfg: RunConfig, directory) -> list[Path]:
    """Execute a validated config and write its artefacts into ``directory``."""
    t0 = time.perf_counter()
    out = RUNNERS[cfg.command](cfg)
    t1 = time.perf_counter()
    return write_outputs(cfg, out, Path(directory), {"run": round(1e3 * (t1 - t0), 3)})


# -- argument parsing --------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", default=None, help="output directory (default: ./fredholm-out/<command>)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--tol-diff", type=float, dest="tol_diff")
    p.add_argument("--tol-div", type=float, dest="tol_div")
    p.add_argument("--no-renormalize", action="store_const", const=False, dest="renormalize")
    p.add_argument("-v", "--verbose", action="store_true")


def _number_or_word(word: str):
    def parse(text: str):
        if text == word:
            return text
        return float(text)
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fredholm-kit", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a tabulated Fredholm equation")
    _add_common(p)
    p.add_argument("--target", help="CSV with the right-hand side f (x,f)")
    p.add_argument("--transform", choices=("none", "normalize", "shift", "split"))
    p.add_argument("--t", type=_number_or_word("auto"))

    p = sub.add_parser("mixdens", help="estimate a mixing density from data")
    _add_common(p)
    p.add_argument("--data", help="single-column CSV of observations")
    p.add_argument("--kernel", choices=("normal-location", "normal-scale"))
    p.add_argument("--sigma", type=_number_or_word("auto"))
    p.add_argument("--bandwidth", type=_number_or_word("rule-of-thumb"))
    p.add_argument("--method", choices=("kde", "em"))

    p = sub.add_parser("fpt", help="first-passage-time density of Brownian motion")
    _add_common(p)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--boundary", choices=("sqrt", "zero", "power", "tabulated"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--boundary-csv", dest="boundary_csv")
    p.add_argument("--N", type=int)
    p.add_argument("--paths", type=int, help="simulated paths for the cross-check (0 = skip)")

    p = sub.add_parser("demo", help="run a named example: " + ", ".join(DEMOS))
    p.add_argument("name", nargs="?", choices=list(DEMOS))
    _add_common(p)
    p.add_argument("--t", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--data")
    p.add_argument("--sigma", type=_number_or_word("auto"))
    p.add_argument("--bandwidth", type=_number_or_word("rule-of-thumb"))
    p.add_argument("--method", choices=("kde", "em"))
    p.add_argument("--paths", type=int)
    return parser


def _overrides(args) -> dict:
    """Turn command-line flags into a config fragment."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    raw: dict = {}
    if "seed" in given:
        raw["seed"] = given["seed"]
    stop = {k: given[k] for k in ("max_iter", "tol_div", "tol_diff") if k in given}
    if args.command == "demo":
        params = dict(stop)
        for key in ("t", "n", "data", "sigma", "bandwidth", "method", "paths", "renormalize"):
            if key in given:
                params[key] = given[key]
        if "data" in params:
            params["data"] = str(Path(params["data"]).resolve())
        if "name" in given:
            raw["name"] = given["name"]
        if params:
            raw["params"] = params
        return raw
    if stop:
        raw["stopping"] = stop
    if "renormalize" in given:
        raw["renormalize"] = given["renormalize"]
    if args.command == "solve":
        if "target" in given:
            raw["target"] = str(Path(given["target"]).resolve())
        tr = {k2: given[k1] for k1, k2 in (("transform", "kind"), ("t", "t")) if k1 in given}
        if tr:
            raw["transform"] = tr
    elif args.command == "mixdens":
        for key in ("bandwidth", "method"):
            if key in given:
                raw[key] = given[key]
        if "data" in given:
            raw["data"] = str(Path(given["data"]).resolve())
        kern = {}
        if "kernel" in given:
            kern["kind"] = given["kernel"]
        if "sigma" in given:
            kern["sigma"] = given["sigma"]
        if kern:
            raw["kernel"] = kern
    elif args.command == "fpt":
        b = {k: given[k] for k in ("a", "b", "gamma") if k in given}
        if "boundary" in given:
            b["kind"] = given["boundary"]
        if "boundary_csv" in given:
            b["kind"] = "tabulated"
            b["path"] = str(Path(given["boundary_csv"]).resolve())
        if b:
            raw["boundary"] = b
        if "N" in given:
            raw["mc"] = {"N": given["N"]}
        if "paths" in given:
            raw["simulate"] = {"paths": given["paths"]}
    return raw


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _error(kind: str, messages, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "messages": list(messages)}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        base_dir = None
        raw = {"command": args.command}
        if args.config:
            path = Path(args.config)
            base_dir = path.parent
            try:
                text = path.read_text()
            except OSError as exc:
                return _error("io", [f"{args.config}: {exc.strerror}"], 2)
            if not text.strip():
                raise ConfigError([f"{args.config}: missing command"])
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"{args.config}: line {exc.lineno}, column {exc.colno}: "
                                   f"{exc.msg}"]) from None
            if not isinstance(raw, dict):
                raise ConfigError([f"{args.config}: config must be a JSON object"])
            if "command" not in raw:
                raise ConfigError([f"{args.config}: missing command"])
            if raw["command"] != args.command:
                raise ConfigError([f"command: config is for {raw['command']!r}, not {args.command!r}"])
        cfg = validate_config(_deep_update(raw, _overrides(args)), base_dir)
    except ConfigError as exc:
        return _error("config", exc.errors, 2)
    label = cfg["name"] if cfg.command == "demo" else cfg.command
    out = Path(args.out) if args.out else Path("fredholm-out") / label
    try:
        written = run(cfg, out)
    except (FredholmError, ValueError, ArithmeticError) as exc:
        return _error(type(exc).__name__, [str(exc)], 1)
    except OSError as exc:
        return _error("io", [str(exc)], 1)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
