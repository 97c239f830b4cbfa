"""Experiment configuration files and the shipped presets.

Files are INI-style::

    [experiment]
    scenario = synthetic
    objective = lowrank50
    seeds = 0 1 2
    target = 1e-3
    output = runs.csv

    [variant vanilla]
    backend = identity
    mu = 1e-4
    b = 10
    eta = 0.01

Every ``[variant NAME]`` section becomes one solver configuration. Unknown
keys, duplicate keys and malformed values are errors reported with the
line they occur on.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

from ..hessian import PowerMethodConfig
from ..optimizer import (
    AdagradBackend,
    AdamBackend,
    DescentCheck,
    GaussBackend,
    IdentityBackend,
    PowerBackend,
    SolverConfig,
)


class ConfigError(ValueError):
    """Raised with one or more ``path:line: message`` diagnostics."""

    def __init__(self, problems):
        self.problems = list(problems) if not isinstance(problems, str) else [problems]
        super().__init__("\n".join(self.problems))


@dataclass
class Variant:
    name: str
    solver: SolverConfig


@dataclass
class ExperimentConfig:
    scenario: str  # "synthetic" or "attack"
    variants: List[Variant]
    seeds: List[int]
    output: Optional[str] = None
    # synthetic
    objective: Optional[str] = None  # catalog name, "quadratic" or "subprocess"
    eigenvalues: Optional[List[float]] = None
    rotation_seed: Optional[int] = 0
    command: Optional[str] = None
    dimension: Optional[int] = None
    optimum_value: Optional[float] = None
    x0: Optional[List[float]] = None
    x0_scale: float = 1.0
    target: Optional[float] = None
    # attack
    classifier: Optional[str] = None
    mode: str = "untargeted"
    epsilon: float = 0.2
    omega: float = 1.0
    query_cap: int = 50_000
    n_inputs: int = 100
    input_seed: int = 0
    target_label: Optional[int] = None  # targeted: fixed label; default (true + 1) mod n

    def __post_init__(self):
        if self.scenario not in ("synthetic", "attack"):
            raise ValueError("scenario must be 'synthetic' or 'attack'")
        if not self.variants:
            raise ValueError("at least one variant is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValueError("variant names must be unique")


# -- value codecs ----------------------------------------------------------

def _fmt_float(v: float) -> str:
    return repr(float(v))


def _parse_bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int(s):
    f = float(s)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {s!r}")
    return int(f)


def _parse_eta(s):
    s = s.strip()
    if s in ("local", "global"):
        return s
    v = float(s)
    if not v > 0:
        raise ValueError("eta must be positive, 'local' or 'global'")
    return v


def _parse_lam(s):
    s = s.strip()
    return s if s == "auto" else float(s)


def _floats(s):
    return [float(t) for t in s.replace(",", " ").split()]


def _ints(s):
    return [_parse_int(t) for t in s.replace(",", " ").split()]


# key -> (parser, renderer)
_SOLVER_KEYS = {
    "mu": (float, _fmt_float),
    "b": (_parse_int, str),
    "eta": (_parse_eta, lambda v: v if isinstance(v, str) else _fmt_float(v)),
    "p": (_parse_int, str),
    "max_iters": (_parse_int, str),
    "max_queries": (_parse_int, str),
    "estimator": (str, str),
    "dc_beta": (_parse_int, str),
    "dc_delta_b": (_parse_int, str),
}
_BACKEND_KEYS = {
    "identity": {},
    "power": {
        "k": (_parse_int, str),
        "T": (_parse_int, str),
        "mu1": (float, _fmt_float),
        "shift_multiplier": (float, _fmt_float),
        "residual_probes": (_parse_int, str),
        "warm_start": (_parse_bool, lambda v: "true" if v else "false"),
    },
    "gauss": {
        "b_H": (_parse_int, str),
        "mu_H": (float, _fmt_float),
        "lam": (_parse_lam, lambda v: v if isinstance(v, str) else _fmt_float(v)),
        "abs_mode": (_parse_bool, lambda v: "true" if v else "false"),
    },
    "adam": {"nu": (float, _fmt_float), "floor": (float, _fmt_float)},
    "adagrad": {"floor": (float, _fmt_float)},
}
_EXPERIMENT_KEYS = {
    "scenario": (str, str),
    "seeds": (_ints, lambda v: " ".join(map(str, v))),
    "output": (str, str),
    "objective": (str, str),
    "eigenvalues": (_floats, lambda v: " ".join(map(_fmt_float, v))),
    "rotation_seed": (lambda s: None if s.strip() == "none" else _parse_int(s), lambda v: "none" if v is None else str(v)),
    "command": (str, str),
    "dimension": (_parse_int, str),
    "optimum_value": (float, _fmt_float),
    "x0": (_floats, lambda v: " ".join(map(_fmt_float, v))),
    "x0_scale": (float, _fmt_float),
    "target": (float, _fmt_float),
    "classifier": (str, str),
    "mode": (str, str),
    "epsilon": (float, _fmt_float),
    "omega": (float, _fmt_float),
    "query_cap": (_parse_int, str),
    "n_inputs": (_parse_int, str),
    "input_seed": (_parse_int, str),
    "target_label": (_parse_int, str),
}
_REQUIRED = {
    "synthetic": ("scenario", "seeds", "objective"),
    "attack": ("scenario", "seeds", "classifier"),
}
_DEFAULTS = {f.name: f.default for f in fields(ExperimentConfig) if f.name not in ("scenario", "variants", "seeds")}


# -- variant <-> section ------------------------------------------------------

def _backend_items(be) -> Dict[str, object]:
    if isinstance(be, PowerBackend):
        c = be.config
        return {
            "k": c.k,
            "T": c.T,
            "mu1": c.mu1,
            "shift_multiplier": c.shift_multiplier,
            "residual_probes": c.residual_probes,
            "warm_start": be.warm_start,
        }
    if isinstance(be, GaussBackend):
        return {"b_H": be.b_H, "mu_H": be.mu_H, "lam": be.lam, "abs_mode": be.abs_mode}
    if isinstance(be, AdamBackend):
        return {"nu": be.nu, "floor": be.floor}
    if isinstance(be, AdagradBackend):
        return {"floor": be.floor}
    return {}


def _make_backend(kind, vals):
    if kind == "identity":
        return IdentityBackend()
    if kind == "power":
        pk = {k: vals[k] for k in ("k", "T", "mu1", "shift_multiplier", "residual_probes") if k in vals}
        return PowerBackend(PowerMethodConfig(**pk), warm_start=vals.get("warm_start", True))
    if kind == "gauss":
        return GaussBackend(**vals)
    if kind == "adam":
        return AdamBackend(**vals)
    return AdagradBackend(**vals)


def variant_items(v: Variant) -> Dict[str, str]:
    """Render a variant as ordered key/value strings (inverse of parsing)."""
    s = v.solver
    out = {"backend": s.backend.kind}
    for key in ("mu", "b", "eta", "p", "max_iters", "max_queries", "estimator"):
        out[key] = _SOLVER_KEYS[key][1](getattr(s, key))
    if s.dc is not None:
        out["dc_beta"] = str(s.dc.beta)
        out["dc_delta_b"] = str(s.dc.delta_b)
    codecs = _BACKEND_KEYS[s.backend.kind]
    for key, val in _backend_items(s.backend).items():
        out[key] = codecs[key][1](val)
    return out


def render(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]", f"scenario = {cfg.scenario}", "seeds = " + " ".join(map(str, cfg.seeds))]
    for name, default in _DEFAULTS.items():
        val = getattr(cfg, name)
        if val != default:
            lines.append(f"{name} = {_EXPERIMENT_KEYS[name][1](val)}")
    for v in cfg.variants:
        lines.append("")
        lines.append(f"[variant {v.name}]")
        lines.extend(f"{k} = {val}" for k, val in variant_items(v).items())
    return "\n".join(lines) + "\n"


# -- parsing -----------------------------------------------------------------

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text):
    """Map (section, key) -> line number for diagnostics configparser omits."""
    index, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        if line.lstrip().startswith(("#", ";")) or not line.strip():
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = n
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line[:1].isspace():
            index.setdefault((section, m.group(1).strip().lower()), n)
    return index


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (T, b_H, mu_H)
    try:
        cp.read_string(text, source=source)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"{source}:{e.lineno}: duplicate key '{e.option}' in [{e.section}]") from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"{source}:{e.lineno}: duplicate section [{e.section}]") from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"{source}:{e.lineno}: content before the first [section]") from None
    except configparser.ParsingError as e:
        raise ConfigError([f"{source}:{n}: cannot parse {line!r}" for n, line in e.errors]) from None

    index = _line_index(text)
    problems: List[str] = []

    def where(section, key=None):
        n = index.get((section, key.lower() if key else None))
        return f"{source}:{n}" if n else source

    def convert(section, key, raw, codec):
        try:
            return codec[0](raw)
        except (ValueError, TypeError) as e:
            problems.append(f"{where(section, key)}: [{section}] {key}: {e}")
            return None

    for sec in cp.sections():
        if sec != "experiment" and not sec.startswith("variant "):
            problems.append(f"{where(sec)}: unknown section [{sec}] (expected [experiment] or [variant NAME])")

    if not cp.has_section("experiment"):
        need = ", ".join(_REQUIRED["synthetic"][:2])
        problems.append(f"{source}: missing [experiment] section (required fields: {need}, plus objective or classifier)")
        problems.append(f"{source}: no [variant NAME] sections (at least one is required)")
        raise ConfigError(problems)

    exp = {}
    for key, raw in cp.items("experiment"):
        if key not in _EXPERIMENT_KEYS:
            problems.append(f"{where('experiment', key)}: unknown key '{key}' in [experiment]")
            continue
        exp[key] = convert("experiment", key, raw, _EXPERIMENT_KEYS[key])
    scenario = exp.get("scenario")
    if scenario is not None and scenario not in _REQUIRED:
        problems.append(f"{where('experiment', 'scenario')}: scenario must be 'synthetic' or 'attack'")
    missing = [k for k in _REQUIRED.get(scenario, ("scenario", "seeds")) if k not in cp["experiment"]]
    if missing:
        problems.append(f"{where('experiment')}: [experiment] is missing required field(s): {', '.join(missing)}")

    variants = []
    for sec in cp.sections():
        if not sec.startswith("variant "):
            continue
        name = sec[len("variant "):].strip()
        items = dict(cp.items(sec))
        kind = items.pop("backend", None)
        if kind is None:
            problems.append(f"{where(sec)}: [{sec}] is missing required field 'backend'")
            continue
        if kind not in _BACKEND_KEYS:
            problems.append(f"{where(sec, 'backend')}: unknown backend {kind!r}; choose from {sorted(_BACKEND_KEYS)}")
            continue
        allowed = {**_SOLVER_KEYS, **_BACKEND_KEYS[kind]}
        solver, backend = {}, {}
        for key, raw in items.items():
            if key not in allowed:
                problems.append(f"{where(sec, key)}: unknown key '{key}' for backend '{kind}'")
                continue
            val = convert(sec, key, raw, allowed[key])
            (solver if key in _SOLVER_KEYS else backend)[key] = val
        if ("dc_beta" in solver) != ("dc_delta_b" in solver):
            problems.append(f"{where(sec)}: [{sec}] needs both dc_beta and dc_delta_b or neither")
            continue
        if any(v is None for v in (*solver.values(), *backend.values())):
            continue
        try:
            dc = None
            if "dc_beta" in solver:
                dc = DescentCheck(solver.pop("dc_beta"), solver.pop("dc_delta_b"))
            variants.append(Variant(name, SolverConfig(backend=_make_backend(kind, backend), dc=dc, **solver)))
        except (ValueError, TypeError) as e:
            problems.append(f"{where(sec)}: [{sec}]: {e}")

    if not any(s.startswith("variant ") for s in cp.sections()):
        problems.append(f"{source}: no [variant NAME] sections (at least one is required)")
    if problems:
        raise ConfigError(problems)
    try:
        return ExperimentConfig(variants=variants, **exp)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{source}: {e}") from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    return parse_config_text(text, source=str(path))


# -- presets -----------------------------------------------------------------
#
# Hyperparameters follow the published parameter tables for the two attack
# settings. Descent-checking variants use the low end of the listed batch
# range (b = 50) with beta = 4 b and delta_b = b / 2.

def _dc(b):
    return DescentCheck(4 * b, b // 2)


def _attack_variants(gauss, diag, vanilla, estimator, b_dc=50):
    """gauss/diag/vanilla: (b, mu, lr[, nu]) tuples."""
    gb, gmu, glr = gauss
    db, dmu, dlr, nu = diag
    vb, vmu, vlr = vanilla
    common = dict(estimator=estimator, max_iters=10**7)
    g_backend = GaussBackend(b_H=20, mu_H=0.5, lam="auto", abs_mode=True)
    return [
        Variant("vanilla", SolverConfig(mu=vmu, b=vb, eta=vlr, **common)),
        Variant("ZOHA-Gauss", SolverConfig(mu=gmu, b=gb, eta=glr, p=20, backend=g_backend, **common)),
        Variant(
            "ZOHA-Gauss-DC",
            SolverConfig(mu=gmu, b=b_dc, eta=glr, p=20, backend=g_backend, dc=_dc(b_dc), **common),
        ),
        Variant("ZOHA-Diag", SolverConfig(mu=dmu, b=db, eta=dlr, backend=AdamBackend(nu=nu), **common)),
        Variant(
            "ZOHA-Diag-DC",
            SolverConfig(mu=dmu, b=b_dc, eta=dlr, backend=AdamBackend(nu=nu), dc=_dc(b_dc), **common),
        ),
    ]


def _preset(mode, eps, cap, variants):
    return ExperimentConfig(
        scenario="attack",
        variants=variants,
        seeds=[0],
        classifier="linear3",
        mode=mode,
        epsilon=eps,
        query_cap=cap,
        n_inputs=100,
    )


PRESETS = {
    "mnist-targeted": _preset(
        "targeted", 0.2, 50_000,
        _attack_variants((100, 0.01, 0.04), (100, 0.1, 0.04, 0.85), (100, 0.01, 0.04), "forward"),
    ),
    "mnist-untargeted": _preset(
        "untargeted", 0.2, 50_000,
        _attack_variants((100, 0.01, 0.04), (100, 0.1, 0.04, 0.8), (100, 0.01, 0.04), "forward"),
    ),
    "imagenet-targeted": _preset(
        "targeted", 0.05, 1_000_000,
        _attack_variants((50, 0.05, 0.03), (50, 0.03, 0.015, 0.8), (50, 0.05, 0.03), "central"),
    ),
    "imagenet-untargeted": _preset(
        "untargeted", 0.05, 1_000_000,
        _attack_variants((50, 0.02, 0.02), (50, 0.03, 0.03, 0.7), (50, 0.02, 0.02), "central"),
    ),
}


def get_preset(name: str, **overrides) -> ExperimentConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    return replace(base, **overrides)


def preset_variant(preset: str, variant: str) -> Variant:
    for v in PRESETS[preset].variants:
        if v.name == variant:
            return v
    raise KeyError(f"preset {preset!r} has no variant {variant!r}")

