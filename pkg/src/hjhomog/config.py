"""Flat key-value experiment configs with dotted sections.

Example::

    environment.kind = poisson
    environment.nu = 1.0
    environment.L = 32
    environment.d = 2
    environment.seeds = 0,1,2
    grid.n = 128
    hamiltonian.gamma = 2.0
    task.name = estimate-hbar
    task.p_list = 0,0; 1,0
    task.deltas = 0.4,0.2,0.1
    output.dir = out

Unknown keys are rejected so typos cannot silently change an experiment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

TASKS = ("sample-env", "solve-delta", "solve-metric", "estimate-hbar",
         "profile-mbar", "closure", "feynman-kac", "property-suite",
         "oracle-1d")

_ENV_KEYS = {"kind", "nu", "bump_radius", "bump_shape", "L", "d", "seeds",
             "center_nu", "offspring_mean", "offspring_spread", "expression"}
_GRID_KEYS = {"n"}
_HAM_KEYS = {"form", "gamma", "c0", "C0", "sigma2"}
_OUT_KEYS = {"dir"}
_TASK_KEYS = {
    "sample-env": set(),
    "solve-delta": {"p", "delta", "tol", "max_iters"},
    "solve-metric": {"p", "mu", "tol", "source_radius", "omega", "max_rounds"},
    "estimate-hbar": {"p_list", "deltas", "tol"},
    "profile-mbar": {"p", "mu_list", "t_schedule"},
    "closure": {"epsilons", "T", "window_radius", "p_list", "deltas",
                "x_n", "x_L", "n_theta", "tol"},
    "feynman-kac": {"mu", "probes", "n_paths", "dt", "fk_seed",
                    "source_radius", "max_steps"},
    "property-suite": {"table", "flat_tol"},
    "oracle-1d": {"expression", "p_list"},
}

_ENV_KINDS = ("poisson", "cluster", "zero", "expression")


def parse_kv_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {lineno}: key must be 'section.name', got {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def _floats(text):
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _ints(text):
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _vectors(text):
    return [np.array(_floats(chunk)) for chunk in text.split(";") if chunk.strip()]


@dataclass
class ExperimentConfig:
    environment: dict
    grid: dict
    hamiltonian: dict
    task: dict
    output: dict
    resolved: dict = field(default_factory=dict)

    @property
    def task_name(self) -> str:
        return self.task["name"]


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        flat = parse_kv_text(fh.read())
    return config_from_flat(flat)


def config_from_flat(flat: dict) -> ExperimentConfig:
    sections = {"environment": {}, "grid": {}, "hamiltonian": {},
                "task": {}, "output": {}}
    for key, val in flat.items():
        section, _, name = key.partition(".")
        if section not in sections:
            raise ConfigError(f"unknown section '{section}' in key '{key}'")
        sections[section][name] = val

    env = sections["environment"]
    for k in env:
        if k not in _ENV_KEYS:
            raise ConfigError(f"unknown key 'environment.{k}'")
    for k in sections["grid"]:
        if k not in _GRID_KEYS:
            raise ConfigError(f"unknown key 'grid.{k}'")
    for k in sections["hamiltonian"]:
        if k not in _HAM_KEYS:
            raise ConfigError(f"unknown key 'hamiltonian.{k}'")
    for k in sections["output"]:
        if k not in _OUT_KEYS:
            raise ConfigError(f"unknown key 'output.{k}'")

    task = sections["task"]
    name = task.get("name")
    if name is None:
        raise ConfigError("missing required key 'task.name'")
    if name not in TASKS:
        raise ConfigError(f"unknown task '{name}'; choose from {TASKS}")
    for k in task:
        if k != "name" and k not in _TASK_KEYS[name]:
            raise ConfigError(f"unknown key 'task.{k}' for task '{name}'")

    environment = {
        "kind": env.get("kind", "zero"),
        "nu": float(env.get("nu", 1.0)),
        "bump_radius": float(env.get("bump_radius", 0.5)),
        "bump_shape": env.get("bump_shape", "cos2"),
        "L": float(env.get("L", 16.0)),
        "d": int(env.get("d", 2)),
        "seeds": _ints(env.get("seeds", "0")),
        "center_nu": float(env.get("center_nu", 0.5)),
        "offspring_mean": float(env.get("offspring_mean", 4.0)),
        "offspring_spread": float(env.get("offspring_spread", 0.5)),
        "expression": env.get("expression", "0*y"),
    }
    if environment["kind"] not in _ENV_KINDS:
        raise ConfigError(f"unknown environment.kind '{environment['kind']}'")
    grid = {"n": int(sections["grid"].get("n", 64))}
    hamiltonian = {
        "form": sections["hamiltonian"].get("form", "separated"),
        "gamma": float(sections["hamiltonian"].get("gamma", 2.0)),
        "c0": float(sections["hamiltonian"].get("c0", 1.0)),
        "C0": float(sections["hamiltonian"].get("C0", 0.0)),
        "sigma2": float(sections["hamiltonian"].get("sigma2", 0.0)),
    }
    output = {"dir": sections["output"].get("dir", "out")}

    parsed_task = {"name": name}
    t = task
    if name == "solve-delta":
        parsed_task["p"] = _floats(t.get("p", "0"))
        parsed_task["delta"] = float(t.get("delta", 0.2))
        parsed_task["tol"] = float(t.get("tol", 1e-6))
        parsed_task["max_iters"] = int(t.get("max_iters", 600000))
    elif name == "solve-metric":
        parsed_task["p"] = _floats(t.get("p", "0"))
        parsed_task["mu"] = float(t.get("mu", 1.0))
        parsed_task["tol"] = float(t.get("tol", 1e-6))
        parsed_task["omega"] = float(t.get("omega", 1.0))
        parsed_task["max_rounds"] = int(t.get("max_rounds", 3000))
        sr = t.get("source_radius")
        parsed_task["source_radius"] = None if sr is None else float(sr)
    elif name == "estimate-hbar":
        parsed_task["p_list"] = _vectors(t.get("p_list", "0,0"))
        parsed_task["deltas"] = _floats(t.get("deltas", "0.4,0.2,0.1"))
        parsed_task["tol"] = float(t.get("tol", 1e-5))
    elif name == "profile-mbar":
        parsed_task["p"] = _floats(t.get("p", "0"))
        parsed_task["mu_list"] = _floats(t.get("mu_list", "1.0"))
        ts = t.get("t_schedule")
        parsed_task["t_schedule"] = None if ts is None else _floats(ts)
    elif name == "closure":
        parsed_task["epsilons"] = _floats(t.get("epsilons", "0.2,0.1,0.05"))
        parsed_task["T"] = float(t.get("T", 0.4))
        parsed_task["window_radius"] = float(t.get("window_radius", 0.75))
        parsed_task["p_list"] = _vectors(t.get("p_list", "0,0;0.5,0;1,0;1.5,0;2,0"))
        parsed_task["deltas"] = _floats(t.get("deltas", "0.4,0.2,0.1"))
        parsed_task["x_n"] = int(t.get("x_n", 256))
        parsed_task["x_L"] = float(t.get("x_L", 4.0))
        parsed_task["n_theta"] = int(t.get("n_theta", 32))
        parsed_task["tol"] = float(t.get("tol", 1e-5))
    elif name == "feynman-kac":
        parsed_task["mu"] = float(t.get("mu", 1.0))
        parsed_task["probes"] = _vectors(t.get("probes", "2,0"))
        parsed_task["n_paths"] = int(t.get("n_paths", 4096))
        parsed_task["dt"] = float(t.get("dt", 5e-4))
        parsed_task["fk_seed"] = int(t.get("fk_seed", 0))
        parsed_task["source_radius"] = float(t.get("source_radius", 1.0))
        parsed_task["max_steps"] = int(t.get("max_steps", 400000))
    elif name == "property-suite":
        if "table" not in t:
            raise ConfigError("task.table (path to an hbar CSV) is required")
        parsed_task["table"] = t["table"]
        parsed_task["flat_tol"] = float(t.get("flat_tol", 0.05))
    elif name == "oracle-1d":
        if "expression" not in t:
            raise ConfigError("task.expression is required for oracle-1d")
        parsed_task["expression"] = t["expression"]
        parsed_task["p_list"] = _floats(t.get("p_list", "0,1,2"))

    resolved = {}
    for sec_name, sec in (("environment", environment), ("grid", grid),
                          ("hamiltonian", hamiltonian), ("task", parsed_task),
                          ("output", output)):
        for k, v in sec.items():
            if isinstance(v, list) and v and isinstance(v[0], np.ndarray):
                v = ";".join(",".join(f"{x:.12g}" for x in vec) for vec in v)
            elif isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            resolved[f"{sec_name}.{k}"] = str(v)
    return ExperimentConfig(environment=environment, grid=grid,
                            hamiltonian=hamiltonian, task=parsed_task,
                            output=output, resolved=resolved)
