"""
Experiment configuration: an INI file with a fixed schema.

Every key has a type and a default; unknown sections or keys are errors and
are reported with their line number. Lists are comma separated.

Example::

    [model]
    kind = scalar-linear
    x0 = 1.0

    [run]
    eps_ladder = 0.4, 0.2, 0.1, 0.05
    trajectories = 10000
    seed = 7
"""
import configparser
import hashlib
import json
import re
from dataclasses import dataclass


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def _floats(text):
    text = text.strip()
    return [] if not text else [float(x) for x in text.split(",")]


def _ints(text):
    text = text.strip()
    return [] if not text else [int(x) for x in text.split(",")]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text):
    return text.strip()


# section -> key -> (parser, default); None defaults fall back to the model preset
SCHEMA = {
    "model": {
        "kind": (_str, "scalar-linear"),
        "dim": (int, None),
        "a": (float, None),
        "c": (float, None),
        "odd_power": (int, 3),
        "x0": (_floats, None),
        "T": (float, 1.0),
    },
    "noise": {
        "kind": (_str, None),
        "atoms": (_str, None),
        "density": (_str, "none"),
        "lo": (float, 0.0),
        "hi": (float, 1.0),
        "rate": (float, 1.0),
        "mass": (float, 1.0),
        "sigma": (_floats, None),
        "direction": (_floats, None),
        "eta0": (float, 0.1),
    },
    "run": {
        "eps": (float, 0.1),
        "eps_ladder": (_floats, [0.4, 0.2, 0.1, 0.05]),
        "trajectories": (_ints, [1000]),
        "dt": (float, 0.01),
        "seed": (int, 0),
        "workers": (int, 1),
        "moments": (_floats, []),
    },
    "control": {
        "n_t": (int, 1),
        "value": (float, 1.5),
        "file": (_str, ""),
        "g_hi": (float, 10.0),
    },
    "target": {
        "predicate": (_str, "XT>=1.5"),
        "margin": (float, 0.05),
    },
    "ldp": {
        "naive": (_ints, [100000, 100000, 100000, 400000]),
        "importance": (_ints, [20000]),
    },
    "convergence": {
        "tolerance": (float, 1.0),
    },
    "continuity": {
        "family": (_str, "strong"),
        "members": (int, 6),
        "c": (float, 2.0),
    },
    "conditions": {
        "samples": (int, 1000),
        "tol": (float, 1e-6),
    },
}


def _line_of(text, section, key=None):
    cur = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[(.+)\]$", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if key is not None and cur == section and re.match(rf"^{re.escape(key)}\s*[=:]", line, re.I):
            return i
    return None


@dataclass
class ExperimentConfig:
    """Validated configuration as ``values[section][key]``."""
    values: dict
    source: str = ""

    def __getitem__(self, section):
        return self.values[section]

    def canonical(self):
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def counts_for(self, key, ladder):
        """Per-eps counts from a list of length 1 (broadcast) or len(ladder)."""
        section, name = key
        counts = self.values[section][name]
        if len(counts) == 1:
            return counts * len(ladder)
        if len(counts) != len(ladder):
            raise ConfigError(f"[{section}] {name} needs 1 or {len(ladder)} entries")
        return list(counts)


def defaults():
    return {s: {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in keys.items()}
            for s, keys in SCHEMA.items()}


def parse_config(text, overrides=None):
    """Parse INI ``text`` against the schema, then apply ``overrides``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}",
                          line) from None
    values = defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section))
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", _line_of(text, section, key))
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}",
                                  _line_of(text, section, key)) from None
    for (section, key), val in (overrides or {}).items():
        values[section][key] = val
    cfg = ExperimentConfig(values, text)
    validate(cfg)
    return cfg


def load_config(path=None, overrides=None):
    if path is None:
        return parse_config("", overrides)
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


def validate(cfg):
    v, text = cfg.values, cfg.source

    def fail(msg, section, key):
        raise ConfigError(msg, _line_of(text, section, key))

    ladder = v["run"]["eps_ladder"]
    if not ladder or any(e <= 0 for e in ladder) or any(b >= a for a, b in zip(ladder, ladder[1:])):
        fail("eps_ladder must be positive and strictly decreasing", "run", "eps_ladder")
    if not v["run"]["eps"] > 0:
        fail("eps must be > 0", "run", "eps")
    for key in ("trajectories",):
        if not v["run"][key] or any(c < 1 for c in v["run"][key]):
            fail("trajectory counts must be >= 1", "run", key)
    for key in ("naive", "importance"):
        if any(c < 0 for c in v["ldp"][key]):
            fail("counts must be >= 0", "ldp", key)
    if not (0 < v["run"]["dt"] <= v["model"]["T"]):
        fail("dt must lie in (0, T]", "run", "dt")
    if v["run"]["seed"] < 0:
        fail("seed must be >= 0", "run", "seed")
    if v["run"]["workers"] < 1:
        fail("workers must be >= 1", "run", "workers")
    if v["control"]["n_t"] < 1:
        fail("n_t must be >= 1", "control", "n_t")
    if v["control"]["value"] < 0:
        fail("control values must be >= 0", "control", "value")
    if v["continuity"]["family"] not in ("strong", "oscillating"):
        fail("family must be 'strong' or 'oscillating'", "continuity", "family")
    if v["conditions"]["samples"] < 1:
        fail("samples must be >= 1", "conditions", "samples")
    from ..rate import TerminalTarget
    try:
        TerminalTarget.parse(v["target"]["predicate"])
    except ValueError as exc:
        fail(str(exc), "target", "predicate")
    from .models import build_model
    try:
        build_model(cfg)
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}", _line_of(text, "model")) from None
