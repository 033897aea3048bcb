"""Run configuration: YAML with three sections, validated before any simulation.

    model:
      name: binary_gaussian
      parameters: {}
    experiment:
      n: 16
      z_grid: [0.5, 1.0, 1.5]
    execution:
      seed: 42
      replications: 100000
      workers: 1
      memory_cap: 4194304
      output_dir: out

``--config`` takes a file path or the name of a packaged preset.  Model
parameters are kept as the exact text written in the file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .offspring import PRESETS, make_model

SECTIONS = ("model", "experiment", "execution")
MODEL_KEYS = ("name", "parameters")
EXECUTION_KEYS = ("seed", "replications", "workers", "memory_cap", "output_dir")
EXPERIMENT_KEYS = {
    "n": int, "z": float, "A": float, "L": float, "z_grid": list, "x_grid": list, "n_grid": list,
    "compare_n": list, "plateau": list, "beta": float, "C1": float, "c0": float, "ladder_budget": int,
    "kill_budget": int, "decomposition": bool,
}


class ConfigError(ValueError):
    """Invalid configuration; the message carries the source line when known."""

    def __init__(self, message, source="", line=None):
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + message)
        self.line = line


@dataclass
class RunConfig:
    model_name: str
    model_params: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    seed: int = 0
    replications: int | None = None
    workers: int | None = None
    memory_cap: int | None = None
    output_dir: str = "out"
    source: str = ""

    def model(self):
        return make_model(self.model_name, self.model_params)

    def to_dict(self) -> dict:
        return {"model": {"name": self.model_name, "parameters": dict(self.model_params)},
                "experiment": dict(self.experiment),
                "execution": {"seed": self.seed, "replications": self.replications, "workers": self.workers,
                              "memory_cap": self.memory_cap, "output_dir": self.output_dir}}


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("brwlab").joinpath("presets").iterdir()
                  if p.name.endswith(".yaml"))


def _resolve(spec: str) -> tuple[str, str]:
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            return fh.read(), spec
    if os.sep in spec or spec.endswith((".yaml", ".yml")):
        raise ConfigError(f"config file not found: {spec}")
    key = spec.replace("-", "_")
    res = resources.files("brwlab").joinpath("presets", f"{key}.yaml")
    if not res.is_file():
        raise ConfigError(f"no config file or preset named {spec!r}; presets: {preset_names()}")
    return res.read_text(encoding="utf-8"), f"preset:{key}"


def _line(node):
    return node.start_mark.line + 1


def _mapping(node, what, src):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{what} must be a mapping", src, _line(node))
    out = {}
    for k, v in node.value:
        if not isinstance(k, yaml.ScalarNode):
            raise ConfigError(f"non-scalar key in {what}", src, _line(k))
        if k.value in out:
            raise ConfigError(f"duplicate key {k.value!r} in {what}", src, _line(k))
        out[k.value] = (k, v)
    return out


def _scalar(node, typ, key, src):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{key} must be a scalar", src, _line(node))
    text = node.value
    try:
        if typ is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if typ is int:
            return int(text.replace("_", ""), 0)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key} must be {typ.__name__}, got {text!r}", src, _line(node)) from None


def _number_list(node, key, src):
    if not isinstance(node, yaml.SequenceNode):
        raise ConfigError(f"{key} must be a list", src, _line(node))
    return [_scalar(v, float, key, src) for v in node.value]


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}", source,
                          mark.line + 1 if mark else None) from None
    if root is None:
        raise ConfigError("empty configuration", source)
    top = _mapping(root, "configuration", source)
    for k, (kn, _) in top.items():
        if k not in SECTIONS:
            raise ConfigError(f"unknown section {k!r} (expected {', '.join(SECTIONS)})", source, _line(kn))
    if "model" not in top:
        raise ConfigError("missing section 'model'", source, _line(root))
    model = _mapping(top["model"][1], "model", source)
    for k, (kn, _) in model.items():
        if k not in MODEL_KEYS:
            raise ConfigError(f"unknown key {k!r} in model", source, _line(kn))
    if "name" not in model:
        raise ConfigError("model.name is required", source, _line(top["model"][1]))
    name = _scalar(model["name"][1], str, "model.name", source)
    if name.replace("_", "-") not in PRESETS:
        raise ConfigError(f"unknown model {name!r}; known: {sorted(PRESETS)}", source, _line(model["name"][1]))
    params = {}
    if "parameters" in model:
        pn = model["parameters"][1]
        if not (isinstance(pn, yaml.ScalarNode) and pn.value in ("", "null", "~")):
            for k, (kn, vn) in _mapping(pn, "model.parameters", source).items():
                params[k] = _scalar(vn, str, f"model.parameters.{k}", source)
                try:
                    float(params[k])
                except ValueError:
                    raise ConfigError(f"parameter {k} must be a decimal number", source, _line(vn)) from None
    try:
        make_model(name, params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid model parameters: {e}", source, _line(top["model"][1])) from None
    exp = {}
    if "experiment" in top:
        en = top["experiment"][1]
        if not (isinstance(en, yaml.ScalarNode) and en.value in ("", "null", "~")):
            for k, (kn, vn) in _mapping(en, "experiment", source).items():
                if k not in EXPERIMENT_KEYS:
                    raise ConfigError(f"unknown key {k!r} in experiment", source, _line(kn))
                typ = EXPERIMENT_KEYS[k]
                exp[k] = _number_list(vn, f"experiment.{k}", source) if typ is list else \
                    _scalar(vn, typ, f"experiment.{k}", source)
    ex = {}
    if "execution" in top:
        xn = top["execution"][1]
        for k, (kn, vn) in _mapping(xn, "execution", source).items():
            if k not in EXECUTION_KEYS:
                raise ConfigError(f"unknown key {k!r} in execution", source, _line(kn))
            typ = str if k == "output_dir" else int
            ex[k] = _scalar(vn, typ, f"execution.{k}", source)
            if typ is int and ex[k] < (0 if k == "seed" else 1):
                raise ConfigError(f"execution.{k} out of range", source, _line(vn))
    return RunConfig(name, params, exp, ex.get("seed", 0), ex.get("replications"), ex.get("workers"),
                     ex.get("memory_cap"), ex.get("output_dir", "out"), source)


def load_config(spec: str) -> RunConfig:
    text, source = _resolve(spec)
    return parse_config(text, source)
