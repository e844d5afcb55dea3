"""Text configuration: ``key = value`` lines under ``[section]`` headers.

Unknown keys, type mismatches and constraint violations are collected with
the offending line number and raised together, so a bad file reports every
problem at once.
"""

from __future__ import annotations

from dataclasses import dataclass


class ConfigError(Exception):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


_MODES = ("nls", "synthetic", "measure")


_SCHEMA = {
    "run": {
        "mode": ("str", None),
        "seed": ("int", 0),
        "max_steps": ("int", 6),
        "max_lie_order": ("int", 8),
    },
    "model": {
        "n": ("int", 0),
        "sites": ("intlist", ()),
        "jmax": ("int", 8),
        "xi": ("floatlist", ()),
        "taylor_depth": ("int", 2),
    },
    "synthetic": {
        "n": ("int", 2),
        "b": ("int", 1),
        "jmax": ("int", 6),
        "zero_mode": ("int", 1),
        "eps0": ("float", 1e-6),
        "inject_z0": ("float", 0.0),
        "block_scale": ("float", 0.0),
        "n_low": ("int", 12),
        "n_high": ("int", 8),
    },
    "schedule": {
        "s1": ("float", 0.6),
        "r1": ("float", 0.25),
        "gamma1": ("float", 0.05),
        "tau": ("float", 3.5),
        "eps_floor": ("float", 1e-14),
        "r_floor_rel": ("float", 1e-2),
        "check_k_cap": ("float", 64.0),
    },
    "budgets": {
        "degree_max": ("int", 6),
        "k_max": ("int", 512),
        "prune_rel": ("float", 1e-16),
    },
    "domain": {
        "a": ("float", 0.1),
        "p": ("float", 1.0),
    },
    "grid": {
        "lo": ("floatlist", ()),
        "hi": ("floatlist", ()),
        "samples_per_axis": ("int", 32),
        "kmax": ("float", 10.0),
        "k_lo": ("float", 0.0),
        "gamma_ladder": ("int", 1),
    },
    "output": {
        "dir": ("str", "out"),
    },
}


def _parse_value(kind, raw):
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "intlist":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if kind == "floatlist":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    raise AssertionError(kind)


@dataclass
class RunConfig:
    values: dict
    text: str = ""

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    @property
    def mode(self):
        return self.values["run"]["mode"]


def parse_config(text):
    """Parse and validate config text; raises ConfigError with line numbers."""
    problems = []
    values = {sec: {k: default for k, (_, default) in keys.items()}
              for sec, keys in _SCHEMA.items()}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                problems.append("line %d: unknown section [%s]" % (lineno, section))
                section = None
            continue
        if "=" not in line:
            problems.append("line %d: expected key = value" % lineno)
            continue
        if section is None:
            problems.append("line %d: key outside any [section]" % lineno)
            continue
        key, _, raw_val = line.partition("=")
        key = key.strip()
        raw_val = raw_val.strip()
        if key not in _SCHEMA[section]:
            problems.append("line %d: unknown key '%s' in [%s]" % (lineno, key, section))
            continue
        kind, _ = _SCHEMA[section][key]
        try:
            values[section][key] = _parse_value(kind, raw_val)
        except ValueError:
            problems.append("line %d: key '%s' expects %s, got %r"
                            % (lineno, key, kind, raw_val))

    cfg = RunConfig(values, text)
    problems.extend(_validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def _validate(cfg):
    problems = []
    v = cfg.values
    mode = v["run"]["mode"]
    if mode not in _MODES:
        problems.append("[run] mode must be one of %s, got %r" % (_MODES, mode))
        return problems
    for sec, key in (("schedule", "s1"), ("schedule", "r1"), ("schedule", "gamma1"),
                     ("domain", "a")):
        if not v[sec][key] > 0:
            problems.append("[%s] %s must be positive" % (sec, key))
    if not v["domain"]["p"] > 0.5:
        problems.append("[domain] p must exceed 1/2")
    if v["run"]["max_steps"] < 1:
        problems.append("[run] max_steps must be >= 1")
    if mode in ("nls", "measure"):
        sites = v["model"]["sites"]
        xi = v["model"]["xi"]
        if not sites:
            problems.append("[model] sites is required for mode %s" % mode)
        if v["model"]["n"] and sites and v["model"]["n"] != len(sites):
            problems.append("[model] n = %d contradicts %d listed sites"
                            % (v["model"]["n"], len(sites)))
        if not xi:
            problems.append("[model] xi is required for mode %s" % mode)
        elif sites and len(xi) != len(sites):
            problems.append("[model] xi must list one action per site")
        elif any(x <= 0 for x in xi):
            problems.append("[model] xi entries must be positive")
        n = len(sites)
    else:
        n = v["synthetic"]["n"]
        if v["synthetic"]["b"] < 1:
            problems.append("[synthetic] b must be >= 1")
    if n and not v["schedule"]["tau"] > n + 1:
        problems.append("[schedule] tau must exceed n + 1 = %d" % (n + 1))
    if mode == "measure":
        g = v["grid"]
        if not g["lo"] or not g["hi"] or len(g["lo"]) != len(g["hi"]):
            problems.append("[grid] lo and hi must be equal-length lists")
    return problems
