"""Run configuration: JSON parsing, validation and default materialisation.

A config is a JSON object with a ``command`` key (``solve``, ``mixdens``,
``fpt`` or ``demo``) plus command-specific settings. :func:`validate_config`
checks everything at once and reports every problem it finds; the resolved
:class:`RunConfig` has every default filled in, so writing it back out and
running it again repeats the run exactly.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .demos import DEMOS
from .errors import ConfigError
from .fpt import BOUNDARY_KINDS
from .kernels import KERNEL_FACTORIES

COMMANDS = ("solve", "mixdens", "fpt", "demo")
TRANSFORM_KINDS = ("none", "normalize", "shift", "split")

STOPPING_DEFAULTS = {"max_iter": 500, "tol_div": 0.0, "tol_diff": 1e-5}

DEFAULTS = {
    "solve": {
        "seed": 0, "renormalize": True, "stopping": STOPPING_DEFAULTS,
        "kernel": None, "target": None, "theta_grid": None, "p0": "uniform",
        "transform": {"kind": "none", "t": "auto"},
    },
    "mixdens": {
        "seed": 0, "renormalize": True, "stopping": STOPPING_DEFAULTS,
        "data": None, "kernel": {"kind": "normal-location", "sigma": "auto"},
        "bandwidth": "rule-of-thumb", "method": "kde",
        "theta_grid": None, "x_grid": None, "theta_nodes": 401, "x_nodes": 1001,
    },
    "fpt": {
        "seed": 0, "renormalize": True,
        "stopping": {"max_iter": 200, "tol_div": 0.0, "tol_diff": 0.0},
        "boundary": {"a": 1.0, "b": 0.1, "kind": "sqrt", "gamma": 0.5, "path": None},
        "theta_grid": {"spacing": 0.05, "nodes": 1000}, "p0_rate": 0.01,
        "mc": {"N": 5000, "resample_each_iteration": True},
        "simulate": {"paths": 0, "dt": 1e-3, "t_max": 50.0, "bridge": True},
    },
    "demo": {"seed": 0, "name": None, "params": {}},
}


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration with all defaults materialised."""

    command: str
    settings: dict

    def __getitem__(self, key):
        return self.settings[key]

    def to_dict(self) -> dict:
        return {"command": self.command, **copy.deepcopy(self.settings)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(out.get(key), dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class _Checker:
    """Collects validation errors instead of stopping at the first."""

    def __init__(self, base_dir: Path):
        self.errors: list[str] = []
        self.base_dir = base_dir

    def fail(self, msg: str) -> None:
        self.errors.append(msg)

    def number(self, value, name: str, *, positive=False, non_negative=False) -> bool:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(f"{name}: expected a finite number, got {value!r}")
            return False
        if positive and not value > 0:
            self.fail(f"{name}: must be positive, got {value!r}")
            return False
        if non_negative and value < 0:
            self.fail(f"{name}: must be non-negative, got {value!r}")
            return False
        return True

    def integer(self, value, name: str, minimum: int) -> bool:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"{name}: expected an integer, got {value!r}")
            return False
        if value < minimum:
            self.fail(f"{name}: must be at least {minimum}, got {value}")
            return False
        return True

    def boolean(self, value, name: str) -> None:
        if not isinstance(value, bool):
            self.fail(f"{name}: expected true or false, got {value!r}")

    def choice(self, value, name: str, options) -> bool:
        if value not in options:
            self.fail(f"{name}: must be one of {', '.join(map(str, options))}; got {value!r}")
            return False
        return True

    def path(self, value, name: str, required: bool = True):
        if value is None:
            if required:
                self.fail(f"{name}: required")
            return None
        if not isinstance(value, str):
            self.fail(f"{name}: expected a file path, got {value!r}")
            return None
        p = Path(value)
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.is_file():
            self.fail(f"{name}: file not found: {value}")
            return None
        return str(p.resolve())

    def grid(self, value, name: str, required: bool = True) -> None:
        if value is None:
            if required:
                self.fail(f"{name}: required ({{min, max, nodes}})")
            return
        if not isinstance(value, dict):
            self.fail(f"{name}: expected an object with min, max and nodes")
            return
        unknown = set(value) - {"min", "max", "nodes", "spacing"}
        if unknown:
            self.fail(f"{name}: unknown field(s) {', '.join(sorted(unknown))}")
        ok = all([self.number(value.get("min"), f"{name}.min"),
                  self.number(value.get("max"), f"{name}.max")])
        self.integer(value.get("nodes"), f"{name}.nodes", 2)
        if ok and not value["min"] < value["max"]:
            self.fail(f"{name}.min: must be below {name}.max ({value['min']} >= {value['max']})")

    def stopping(self, value) -> None:
        if not isinstance(value, dict):
            self.fail("stopping: expected an object")
            return
        unknown = set(value) - set(STOPPING_DEFAULTS)
        if unknown:
            self.fail(f"stopping: unknown field(s) {', '.join(sorted(unknown))}")
        self.integer(value.get("max_iter"), "stopping.max_iter", 0)
        self.number(value.get("tol_div"), "stopping.tol_div", non_negative=True)
        self.number(value.get("tol_diff"), "stopping.tol_diff", non_negative=True)

    def unknown(self, given: dict, allowed, where: str = "") -> None:
        extra = set(given) - set(allowed)
        if extra:
            prefix = f"{where}: " if where else ""
            self.fail(f"{prefix}unknown field(s) {', '.join(sorted(extra))}")


def _kernel(chk: _Checker, spec, name: str = "kernel") -> None:
    if not isinstance(spec, dict):
        chk.fail(f"{name}: required (an object with a 'kind')")
        return
    kind = spec.get("kind")
    if kind == "difference":
        _kernel(chk, spec.get("plus"), f"{name}.plus")
        _kernel(chk, spec.get("minus"), f"{name}.minus")
    elif kind == "reflected":
        _kernel(chk, spec.get("base"), f"{name}.base")
    elif kind == "tabulated":
        resolved = chk.path(spec.get("path"), f"{name}.path")
        if resolved:
            spec["path"] = resolved
    elif chk.choice(kind, f"{name}.kind",
                    sorted(KERNEL_FACTORIES) + ["tabulated", "difference", "reflected"]):
        if kind == "normal-location":
            chk.number(spec.get("sigma"), f"{name}.sigma", positive=True)


def _check_solve(chk: _Checker, s: dict) -> None:
    _kernel(chk, s["kernel"])
    s["target"] = chk.path(s["target"], "target")
    chk.grid(s["theta_grid"], "theta_grid")
    if s["p0"] != "uniform":
        s["p0"] = chk.path(s["p0"], "p0")
    tr = s["transform"]
    if isinstance(tr, dict):
        chk.unknown(tr, ("kind", "t"), "transform")
        chk.choice(tr.get("kind"), "transform.kind", TRANSFORM_KINDS)
        if tr.get("t") != "auto":
            chk.number(tr.get("t"), "transform.t", positive=True)
        if tr.get("kind") == "split" and isinstance(s["kernel"], dict) \
                and s["kernel"].get("kind") != "difference":
            chk.fail("transform.kind: split needs a kernel of kind 'difference'")
    else:
        chk.fail("transform: expected an object")


def _check_mixdens(chk: _Checker, s: dict) -> None:
    s["data"] = chk.path(s["data"], "data")
    k = s["kernel"]
    if isinstance(k, dict) and chk.choice(k.get("kind"), "kernel.kind",
                                          ("normal-location", "normal-scale")):
        if k["kind"] == "normal-location" and k.get("sigma") != "auto":
            chk.number(k.get("sigma"), "kernel.sigma", positive=True)
    elif not isinstance(k, dict):
        chk.fail("kernel: expected an object")
    if s["bandwidth"] != "rule-of-thumb":
        chk.number(s["bandwidth"], "bandwidth", positive=True)
    chk.choice(s["method"], "method", ("kde", "em"))
    chk.grid(s["theta_grid"], "theta_grid", required=False)
    chk.grid(s["x_grid"], "x_grid", required=False)
    chk.integer(s["theta_nodes"], "theta_nodes", 2)
    chk.integer(s["x_nodes"], "x_nodes", 2)


def _check_fpt(chk: _Checker, s: dict) -> None:
    b = s["boundary"]
    if not isinstance(b, dict):
        chk.fail("boundary: expected an object")
    else:
        chk.unknown(b, DEFAULTS["fpt"]["boundary"], "boundary")
        chk.number(b.get("a"), "boundary.a", positive=True)
        chk.number(b.get("b"), "boundary.b", positive=True)
        if chk.choice(b.get("kind"), "boundary.kind", BOUNDARY_KINDS):
            if b["kind"] == "power" and chk.number(b.get("gamma"), "boundary.gamma"):
                if not 0 < b["gamma"] <= 0.5:
                    chk.fail(f"boundary.gamma: must be in (0, 0.5], got {b['gamma']}")
            if b["kind"] == "tabulated":
                b["path"] = chk.path(b.get("path"), "boundary.path")
    g = s["theta_grid"]
    if isinstance(g, dict):
        chk.unknown(g, ("spacing", "nodes"), "theta_grid")
        chk.number(g.get("spacing"), "theta_grid.spacing", positive=True)
        chk.integer(g.get("nodes"), "theta_grid.nodes", 2)
    else:
        chk.fail("theta_grid: expected an object with spacing and nodes")
    chk.number(s["p0_rate"], "p0_rate", positive=True)
    mc = s["mc"]
    if isinstance(mc, dict):
        chk.unknown(mc, DEFAULTS["fpt"]["mc"], "mc")
        chk.integer(mc.get("N"), "mc.N", 1)
        chk.boolean(mc.get("resample_each_iteration"), "mc.resample_each_iteration")
    else:
        chk.fail("mc: expected an object")
    sim = s["simulate"]
    if isinstance(sim, dict):
        chk.unknown(sim, DEFAULTS["fpt"]["simulate"], "simulate")
        chk.integer(sim.get("paths"), "simulate.paths", 0)
        chk.boolean(sim.get("bridge"), "simulate.bridge")
        chk.number(sim.get("dt"), "simulate.dt", positive=True)
        if chk.number(sim.get("t_max"), "simulate.t_max", positive=True) \
                and isinstance(sim.get("dt"), (int, float)) and sim["t_max"] <= sim["dt"]:
            chk.fail("simulate.t_max: must exceed simulate.dt")
    else:
        chk.fail("simulate: expected an object")


def _check_demo(chk: _Checker, s: dict) -> None:
    name = s["name"]
    if name is None:
        chk.fail("name: required (one of " + ", ".join(DEMOS) + ")")
        return
    if not chk.choice(name, "name", list(DEMOS)):
        return
    demo = DEMOS[name]
    params = s["params"]
    if not isinstance(params, dict):
        chk.fail("params: expected an object")
        return
    chk.unknown(params, demo.defaults, "params")
    merged = {**demo.defaults, **{k: v for k, v in params.items() if k in demo.defaults}}
    for key, default in demo.defaults.items():
        value = merged[key]
        where = f"params.{key}"
        if isinstance(default, bool):
            chk.boolean(value, where)
        elif isinstance(default, int):
            chk.integer(value, where, 0 if key in ("max_iter", "paths") else 1)
        elif isinstance(default, float):
            chk.number(value, where, non_negative=key.startswith("tol"),
                       positive=not key.startswith("tol"))
        elif key == "data":
            if value is not None:
                merged[key] = chk.path(value, where)
        elif key in ("sigma", "bandwidth") and value not in ("auto", "rule-of-thumb"):
            chk.number(value, where, positive=True)
        elif key == "method":
            chk.choice(value, where, ("kde", "em"))
        elif key == "boundary":
            chk.choice(value, where, BOUNDARY_KINDS[:3])
    if name == "galaxy" and merged.get("data") is None:
        chk.fail("params.data: the galaxy demo needs a data file (--data)")
    s["params"] = merged


CHECKS = {"solve": _check_solve, "mixdens": _check_mixdens, "fpt": _check_fpt, "demo": _check_demo}


def validate_config(raw, base_dir=None) -> RunConfig:
    """Parse and validate a config given as JSON text or an already-parsed dict.

    Relative file paths are resolved against ``base_dir`` (default: the
    current directory) and stored as absolute paths.

    Raises
    ------
    ConfigError
        Listing every problem found.
    """
    if isinstance(raw, (str, bytes)):
        text = raw.decode() if isinstance(raw, bytes) else raw
        if not text.strip():
            raise ConfigError(["missing command"])
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    command = raw.get("command")
    if command is None:
        raise ConfigError(["missing command"])
    if command not in COMMANDS:
        raise ConfigError([f"command: must be one of {', '.join(COMMANDS)}; got {command!r}"])
    chk = _Checker(Path(base_dir) if base_dir is not None else Path.cwd())
    given = {k: v for k, v in raw.items() if k != "command"}
    chk.unknown(given, DEFAULTS[command])
    settings = _merge(DEFAULTS[command], {k: v for k, v in given.items() if k in DEFAULTS[command]})
    chk.integer(settings["seed"], "seed", 0)
    if command != "demo":
        chk.boolean(settings["renormalize"], "renormalize")
        chk.stopping(settings["stopping"])
    CHECKS[command](chk, settings)
    if chk.errors:
        raise ConfigError(chk.errors)
    return RunConfig(command, settings)


def load_config(path) -> RunConfig:
    path = Path(path)
    return validate_config(path.read_text(), base_dir=path.parent)
