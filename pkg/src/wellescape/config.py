"""Declarative experiment configuration (TOML).

A configuration names a model, its parameters, a forcing, the time grid,
solver tolerances and an ordered list of tasks.  ``normalize`` validates a
raw mapping against a JSON schema and fills every default explicitly, so the
normalized form is self-describing and round-trips through TOML unchanged.
"""

import copy
import hashlib
from importlib import resources
from pathlib import Path

import jsonschema
import tomli_w

try:  # Python >= 3.11
    import tomllib
except ImportError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from ._validation import ParameterError
from .validation import SEED_TIMES

MODELS = ("eckart-1dof", "roll-heave-2dof")
TASKS = ("hyp-traj", "manifold-sample", "fit-graphs", "classify", "dividing", "integrity",
         "advect-check", "autonomous-flux")


class ConfigError(ParameterError):
    """Schema or consistency violation; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 1}
_bool = {"type": "boolean"}
_branches = {"type": "array", "items": {"enum": ["stable", "unstable"]}, "minItems": 1,
             "uniqueItems": True}


def _task(name, props, required=()):
    props = dict(props, type={"const": name})
    return {"type": "object", "properties": props, "required": ["type", *required],
            "additionalProperties": False}


TASK_SCHEMAS = {
    "hyp-traj": _task("hyp-traj", {"guess": {"enum": ["constant", "linearised"]},
                                   "damping": _bool}),
    "manifold-sample": _task("manifold-sample", {
        "kind": {"enum": ["stable", "centre", "unstable"]}, "bounds": _pos, "counts": _count,
        "t0": {"type": "array", "items": _num, "minItems": 1}, "growth": {"type": "number",
                                                                            "exclusiveMinimum": 1},
        "eps_c": _pos, "eps_f": _pos, "max_iter": _count}),
    "fit-graphs": _task("fit-graphs", {"tail": _bool}),
    "classify": _task("classify", {
        "samples": _count, "t_max": _pos, "escape_y2": _pos, "step": _pos, "oracle": _bool,
        "on_conflict": {"enum": ["raise", "nearest"]}}),
    "dividing": _task("dividing", {
        "t_end": _pos, "q_step": _pos, "eps_c": _pos, "eps_f": _pos, "max_iter": _count,
        "capsize_samples": {"type": "integer", "minimum": 0}, "step": _pos}),
    "integrity": _task("integrity", {
        "samples": _count, "classifier": {"enum": ["graph", "integration"]}, "t_max": _pos,
        "escape_y2": _pos, "step": _pos}),
    "advect-check": _task("advect-check", {
        "branches": _branches, "n_seed": {"type": "integer", "minimum": 2}, "extent": _pos,
        "dT": _pos, "alpha": _pos, "dalpha": _pos, "delta": _pos,
        "max_points": {"type": "integer", "minimum": 2}, "curve_points": {"type": "integer",
                                                                         "minimum": 2},
        "t_stable": _num, "t_unstable": _num}),
    "autonomous-flux": _task("autonomous-flux", {
        "energy": _pos, "amplitude": _pos, "n_phases": _count, "eps": _pos, "t_budget": _pos,
        "branches": _branches}),
}

SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "model": {"enum": list(MODELS)},
        "parameters": {"type": "object",
                       "properties": {"k": _nonneg, "h": _pos, "kx": _nonneg, "ky": _nonneg},
                       "additionalProperties": False},
        "forcing": {"type": "object", "properties": {
            "kind": {"enum": ["none", "quasi", "ou"]},
            "seed": {"type": "integer", "minimum": 0},
            "fine_points": {"type": "integer", "minimum": 4},
            "terms": {"type": "array", "items": {
                "type": "object",
                "properties": {"amp": _num, "omega": _nonneg, "phase": _num,
                               "component": {"type": "integer", "minimum": 0}},
                "required": ["amp", "omega", "component"], "additionalProperties": False}}},
            "required": ["kind"], "additionalProperties": False},
        "grid": {"type": "object", "properties": {"T": _pos, "N": {"type": "integer", "minimum": 4}},
                 "additionalProperties": False},
        "tolerances": {"type": "object", "properties": {
            "eps_c": _pos, "eps_f": _pos, "max_iter": _count, "damping": _bool},
            "additionalProperties": False},
        "seed": {"type": "integer", "minimum": 0},
        "threads": _count,
        "output": {"type": "string", "minLength": 1},
        "tasks": {"type": "array", "items": {
            "type": "object", "properties": {"type": {"enum": list(TASKS)}}, "required": ["type"]}},
    },
    "required": ["model"],
    "additionalProperties": False,
    "allOf": [{"if": {"properties": {"model": {"const": "eckart-1dof"}}},
               "then": {"properties": {"parameters": {"propertyNames": {"enum": ["k"]}}}}},
              {"if": {"properties": {"model": {"const": "roll-heave-2dof"}}},
               "then": {"properties": {"parameters": {"propertyNames": {
                   "enum": ["h", "kx", "ky"]}}}}}],
}

TASK_DEFAULTS = {
    "hyp-traj": {"damping": False},
    "manifold-sample": {"kind": "stable", "bounds": 1.5, "counts": 5, "t0": [0.0], "growth": 10.0,
                        "eps_c": 1e-5, "eps_f": 1e-6, "max_iter": 300},
    "fit-graphs": {"tail": False},
    "classify": {"samples": 10000, "t_max": 11.5, "escape_y2": 10.0, "step": 0.005, "oracle": True,
                 "on_conflict": "nearest"},
    "dividing": {"t_end": 11.0, "q_step": 0.25, "eps_c": 1e-7, "eps_f": 1e-8, "max_iter": 100,
                 "capsize_samples": 0, "step": 0.005},
    "integrity": {"samples": 100000, "classifier": "graph", "t_max": 11.5, "escape_y2": 10.0,
                  "step": 0.005},
    "advect-check": {"branches": ["stable", "unstable"], "n_seed": 100, "extent": 1.0,
                     "dT": 0.005, "alpha": 0.3, "dalpha": 1e-4, "delta": 1e-6, "max_points": 1000,
                     "curve_points": 201},
    "autonomous-flux": {"energy": 0.26, "amplitude": 1e-4, "n_phases": 50, "eps": 1e-6,
                        "t_budget": 40.0, "branches": ["stable", "unstable"]},
}

MODEL_DEFAULTS = {
    "eckart-1dof": {"parameters": {"k": 1.0}, "grid": {"T": 10.0, "N": 401},
                    "tolerances": {"eps_c": 1e-7, "eps_f": 1e-6, "max_iter": 50, "damping": False},
                    "guess": "linearised"},
    "roll-heave-2dof": {"parameters": {"h": 1.0, "kx": 1.0, "ky": 1.0},
                        "grid": {"T": 15.0, "N": 601},
                        "tolerances": {"eps_c": 1e-5, "eps_f": 1e-6, "max_iter": 50,
                                       "damping": False},
                        "guess": "constant"},
}

# tasks each task needs earlier in the list (or on disk), and the model it needs
REQUIRES = {"manifold-sample": ("hyp-traj",), "fit-graphs": ("manifold-sample",),
            "classify": ("fit-graphs",), "dividing": ("hyp-traj",), "integrity": (),
            "advect-check": ("hyp-traj",), "autonomous-flux": (), "hyp-traj": ()}
MODEL_ONLY = {"fit-graphs": "roll-heave-2dof", "classify": "roll-heave-2dof",
              "dividing": "roll-heave-2dof", "integrity": "roll-heave-2dof",
              "autonomous-flux": "roll-heave-2dof", "advect-check": "eckart-1dof"}


def _path(parts, prefix=""):
    out = prefix
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _validate(schema, data, prefix=""):
    errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(data),
                    key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, _path(e.absolute_path, prefix))


def _sides(model):
    return (0,) if model == "eckart-1dof" else (1, -1)


def artifacts(task, model):
    """File names a task leaves on disk (used for prerequisite checks)."""
    tag = {0: "", 1: "_plus", -1: "_minus"}
    sides = _sides(model)
    if task["type"] == "hyp-traj":
        return [f"hyp_traj{tag[s]}.csv" for s in sides]
    if task["type"] == "manifold-sample":
        return [f"manifold_{task['kind']}{tag[s]}.csv" for s in sides]
    if task["type"] == "fit-graphs":
        return [f"graph{tag[s]}.json" for s in sides]
    return []


def normalize(raw, out_dir=None):
    """Validate ``raw`` and return a fully populated copy.

    Raises :class:`ConfigError` with the field path of the first problem.
    """
    _validate(SCHEMA, raw)
    cfg = copy.deepcopy(raw)
    model = cfg["model"]
    md = MODEL_DEFAULTS[model]
    cfg.setdefault("name", "custom")
    cfg["parameters"] = {**md["parameters"], **cfg.get("parameters", {})}
    cfg["parameters"] = {k: float(v) for k, v in cfg["parameters"].items()}
    cfg["grid"] = {**md["grid"], **cfg.get("grid", {})}
    cfg["grid"]["T"] = float(cfg["grid"]["T"])
    cfg["tolerances"] = {**md["tolerances"], **cfg.get("tolerances", {})}
    cfg.setdefault("seed", 0)
    cfg.setdefault("threads", 1)
    cfg.setdefault("output", f"runs/{cfg['name']}")

    forcing = dict(cfg.get("forcing", {"kind": "none"}))
    if forcing["kind"] == "ou":
        if model != "roll-heave-2dof":
            raise ConfigError("filtered-noise forcing needs the roll-heave-2dof model",
                              "forcing.kind")
        if "terms" in forcing:
            raise ConfigError("terms apply to quasi-periodic forcing only", "forcing.terms")
        forcing.setdefault("seed", 2)
        forcing.setdefault("fine_points", 6001)
    elif forcing["kind"] == "quasi":
        for key in ("seed", "fine_points"):
            if key in forcing:
                raise ConfigError("only filtered-noise forcing takes this field", f"forcing.{key}")
        if "terms" not in forcing:
            from .experiments import forcing_1dof, quasi_forcing_2dof
            f = forcing_1dof() if model == "eckart-1dof" else quasi_forcing_2dof()
            forcing["terms"] = [{"amp": t.amp, "omega": t.omega, "phase": t.phase,
                                 "component": t.component} for t in f.terms]
        dim = 2 if model == "eckart-1dof" else 4
        for i, t in enumerate(forcing["terms"]):
            t.setdefault("phase", 0.0)
            for key in ("amp", "omega", "phase"):
                t[key] = float(t[key])
            if t["component"] >= dim:
                raise ConfigError(f"component must be below {dim}",
                                  f"forcing.terms[{i}].component")
    elif set(forcing) - {"kind"}:
        raise ConfigError("zero forcing takes no further fields", "forcing")
    cfg["forcing"] = forcing

    tasks = []
    for i, task in enumerate(cfg.get("tasks", [])):
        kind = task["type"]
        _validate(TASK_SCHEMAS[kind], task, f"tasks[{i}]")
        need = MODEL_ONLY.get(kind)
        if need and need != model:
            raise ConfigError(f"task {kind} needs model {need}", f"tasks[{i}].type")
        full = {"type": kind, **TASK_DEFAULTS[kind]}
        if kind == "hyp-traj":
            full["guess"] = md["guess"]
        if kind == "advect-check":
            k = cfg["parameters"]["k"]
            for branch in ("stable", "unstable"):
                if (k, branch) in SEED_TIMES:
                    full[f"t_{branch}"] = SEED_TIMES[(k, branch)]
        full.update(copy.deepcopy(task))
        if kind == "advect-check":
            for branch in full["branches"]:
                if f"t_{branch}" not in full:
                    raise ConfigError(f"no reference seed time for k={cfg['parameters']['k']}; "
                                      f"set t_{branch}", f"tasks[{i}]")
        if kind == "hyp-traj" and full["guess"] == "linearised" and forcing["kind"] == "ou":
            raise ConfigError("linearised guess needs zero or quasi-periodic forcing",
                              f"tasks[{i}].guess")
        for key, val in list(full.items()):
            if isinstance(TASK_DEFAULTS[kind].get(key), float):
                full[key] = float(val)
        if "t0" in full:
            full["t0"] = [float(v) for v in full["t0"]]
        tasks.append(full)
    cfg["tasks"] = tasks
    check_prerequisites(cfg, out_dir)
    return cfg


def check_prerequisites(cfg, out_dir=None):
    """Each task's inputs must come from an earlier task or exist under ``out_dir``."""
    root = Path(out_dir if out_dir is not None else cfg["output"])
    done = []
    for i, task in enumerate(cfg["tasks"]):
        for need in REQUIRES[task["type"]]:
            if need == "manifold-sample":
                ok = any(t["type"] == need and t["kind"] == "stable" for t in done)
                files = artifacts({"type": need, "kind": "stable"}, cfg["model"])
            else:
                ok = any(t["type"] == need for t in done)
                files = artifacts({"type": need}, cfg["model"])
            if not ok and not all((root / f).is_file() for f in files):
                raise ConfigError(f"task {task['type']} needs {need} earlier in the list "
                                  f"or {', '.join(files)} in {root}", f"tasks[{i}]")
        if task["type"] == "integrity" and task["classifier"] == "graph":
            ok = any(t["type"] == "fit-graphs" for t in done)
            files = artifacts({"type": "fit-graphs"}, cfg["model"])
            if not ok and not all((root / f).is_file() for f in files):
                raise ConfigError("graph integrity needs fit-graphs earlier in the list",
                                  f"tasks[{i}]")
        done.append(task)


def loads(text, out_dir=None):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return normalize(raw, out_dir)


def load(path, out_dir=None, overrides=None):
    """Read, apply ``overrides`` (top-level keys) and normalize a TOML file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    for key, val in (overrides or {}).items():
        if val is not None:
            raw[key] = val
    return normalize(raw, out_dir)


def dumps(cfg):
    return tomli_w.dumps(cfg)


def config_hash(cfg):
    """Digest of everything that can change results (not output path or threads)."""
    keep = {k: v for k, v in cfg.items() if k not in ("output", "threads")}
    return hashlib.sha256(dumps(keep).encode()).hexdigest()[:16]


def bundled_configs():
    """Names of the reference configurations shipped with the package."""
    root = resources.files("wellescape") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled_path(name):
    root = resources.files("wellescape") / "configs"
    p = root / f"{name}.toml"
    if not p.is_file():
        raise ConfigError(f"no bundled config named {name!r}; see list-configs")
    return Path(str(p))


def resolve(name_or_path):
    p = Path(name_or_path)
    if p.is_file():
        return p
    if p.suffix == "" and "/" not in str(name_or_path):
        return bundled_path(str(name_or_path))
    raise ConfigError(f"config file {name_or_path} not found")
