"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every error names the key and
line it comes from.  Mesh and target sources are either file paths (relative
to the config file) or generator specs such as
``grid(39) circle(0.5, 0.5, 0.2) ellipse(0.5, 0.5, 0.3, 0.15, 0)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .fem import SolverOptions
from .mesh import Ellipse, TriMesh, generate_mesh, read_mesh
from .optimizer import Armijo, DampedArmijo, RobbinsMonro, RunConfig
from .shape_calculus import TargetMeasurement, generate_target, read_target
from .stochastics import Const, Scenario, ScenarioDistribution, TruncNormalParams

MEASUREMENT_SCENARIO = Scenario((1.5, 4.0), 10.0, 0.0)

STEP_RULES = ("robbins_monro", "armijo", "damped_armijo")

# every accepted key with its default (None: required)
KEYS = {
    "mesh": None,
    "target": None,
    "iters": "200",
    "seed": "0",
    "step.rule": "armijo",
    "step.alpha": "50",
    "step.rho": "0.5",
    "step.c": "1e-4",
    "step.exponent": "0.85",
    "step.damping": "0.9",
    "step.period": "20",
    "step.max_backtracks": "30",
    "mu_min": "10",
    "mu_max": "25",
    "estimate.m": "0",
    "estimate.every": "0",
    "snapshot.every": "0",
    "solver.tol": "1e-10",
    "solver.backend": "cg",
    "guard": "on",
    "kappa0": "const(1.5)",
    "kappa_int": "const(4)",
    "g": "const(10)",
    "f": "const(0)",
}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass
class ConfigFile:
    values: dict[str, str]
    lines: dict[str, int] = field(default_factory=dict)
    base: Path = Path(".")

    def get(self, key: str) -> str | None:
        return self.values.get(key, KEYS[key])

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, key, self.lines.get(key))

    def number(self, key: str, kind=float):
        raw = self.get(key)
        try:
            return kind(raw)
        except (TypeError, ValueError):
            raise self.error(key, f"expected {'an integer' if kind is int else 'a number'}, got {raw!r}") from None


def parse_config(text: str, base: Path | str = ".") -> ConfigFile:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown key", key, lineno)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key, lineno)
        if not value:
            raise ConfigError("empty value", key, lineno)
        values[key] = value
        lines[key] = lineno
    cfg = ConfigFile(values, lines, Path(base))
    _check(cfg)
    return cfg


def read_config(path) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def _check(cfg: ConfigFile) -> None:
    for key in ("mesh", "target"):
        if cfg.get(key) is None:
            raise ConfigError("required key missing", key)
    if cfg.number("iters", int) < 1:
        raise cfg.error("iters", "iteration count must be at least 1")
    if cfg.get("step.rule") not in STEP_RULES:
        raise cfg.error("step.rule", f"must be one of {', '.join(STEP_RULES)}")
    if cfg.get("guard") not in ("on", "off"):
        raise cfg.error("guard", "must be 'on' or 'off'")
    if cfg.get("solver.backend") not in ("cg", "direct"):
        raise cfg.error("solver.backend", "must be 'cg' or 'direct'")
    for key in ("estimate.m", "estimate.every", "snapshot.every", "step.period", "step.max_backtracks", "seed"):
        if cfg.number(key, int) < 0:
            raise cfg.error(key, "must be non-negative")
    for key in ("step.alpha", "step.rho", "step.c", "step.exponent", "step.damping", "mu_min", "mu_max", "solver.tol"):
        cfg.number(key)
    for key in ("kappa0", "kappa_int", "g", "f"):
        parse_distribution(cfg.get(key), key, cfg.lines.get(key))


_CALL = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


def _call(text: str):
    m = _CALL.match(text)
    if not m:
        return None
    args = [a.strip() for a in m.group(2).split(",")] if m.group(2).strip() else []
    return m.group(1), [float(a) for a in args]


def parse_distribution(text: str, key: str = "", line: int | None = None):
    """``const(v)`` or ``trunc_normal(mean, std, lo, hi)``."""
    try:
        parsed = _call(text)
    except ValueError:
        parsed = None
    if parsed is None:
        raise ConfigError(f"expected const(v) or trunc_normal(mean, std, lo, hi), got {text!r}", key, line)
    name, args = parsed
    try:
        if name == "const" and len(args) == 1:
            return Const(args[0])
        if name == "trunc_normal" and len(args) == 4:
            return TruncNormalParams(*args)
    except ValueError as exc:
        raise ConfigError(str(exc), key, line) from None
    raise ConfigError(f"expected const(v) or trunc_normal(mean, std, lo, hi), got {text!r}", key, line)


_TOKEN = re.compile(r"[a-z_]+\s*\([^()]*\)")


def parse_geometry(text: str) -> tuple[int, list[Ellipse]] | None:
    """Parse ``grid(n) circle(...) ellipse(...)``; ``None`` if ``text`` is not a generator spec."""
    text = text.strip()
    if not text.startswith("grid"):
        return None
    tokens = _TOKEN.findall(text)
    if "".join(tokens).replace(" ", "") != text.replace(" ", ""):
        raise ValueError(f"cannot parse geometry {text!r}")
    resolution = None
    inclusions = []
    for tok in tokens:
        name, args = _call(tok)
        if name == "grid" and len(args) == 1 and resolution is None:
            resolution = int(args[0])
        elif name == "circle" and len(args) == 3:
            inclusions.append(Ellipse.circle(*args))
        elif name == "ellipse" and len(args) in (4, 5):
            inclusions.append(Ellipse(*args))
        else:
            raise ValueError(f"bad geometry term {tok!r}")
    if resolution is None:
        raise ValueError("geometry needs a grid(n) term")
    return resolution, inclusions


def format_geometry(resolution: int, inclusions) -> str:
    def args(*vals):
        return ", ".join(repr(float(v)) for v in vals)

    parts = [f"grid({resolution})"]
    for e in inclusions:
        if e.a == e.b and e.angle == 0:
            parts.append(f"circle({args(e.cx, e.cy, e.a)})")
        else:
            parts.append(f"ellipse({args(e.cx, e.cy, e.a, e.b, e.angle)})")
    return " ".join(parts)


def load_mesh(cfg: ConfigFile, key: str = "mesh") -> TriMesh:
    text = cfg.get(key)
    try:
        geom = parse_geometry(text)
        if geom is not None:
            return generate_mesh(*geom)
        return read_mesh(cfg.base / text)
    except OSError as exc:
        raise cfg.error(key, f"cannot read {text}: {exc.strerror}") from None
    except ValueError as exc:
        raise cfg.error(key, str(exc)) from None


def load_target(cfg: ConfigFile, options: SolverOptions) -> TargetMeasurement:
    text = cfg.get("target")
    try:
        geom = parse_geometry(text)
        if geom is not None:
            return generate_target(generate_mesh(*geom), MEASUREMENT_SCENARIO, options)
        return read_target(cfg.base / text)
    except OSError as exc:
        raise cfg.error("target", f"cannot read {text}: {exc.strerror}") from None
    except ValueError as exc:
        raise cfg.error("target", str(exc)) from None


def step_rule(cfg: ConfigFile):
    rule = cfg.get("step.rule")
    alpha, rho, c = cfg.number("step.alpha"), cfg.number("step.rho"), cfg.number("step.c")
    mb = cfg.number("step.max_backtracks", int)
    try:
        if rule == "robbins_monro":
            return RobbinsMonro(alpha, cfg.number("step.exponent"))
        if rule == "armijo":
            return Armijo(alpha, rho, c, mb)
        return DampedArmijo(alpha, rho, c, cfg.number("step.damping"), cfg.number("step.period", int), 0.0, mb)
    except ValueError as exc:
        raise cfg.error("step.rule", str(exc)) from None


def distribution(cfg: ConfigFile, n_inclusions: int) -> ScenarioDistribution:
    comps = {k: parse_distribution(cfg.get(k), k, cfg.lines.get(k)) for k in ("kappa0", "kappa_int", "g", "f")}
    return ScenarioDistribution(comps["kappa0"], comps["kappa_int"], comps["g"], comps["f"], max(n_inclusions, 1))


def build_run_config(cfg: ConfigFile) -> RunConfig:
    options = SolverOptions(tol=cfg.number("solver.tol"), backend=cfg.get("solver.backend"))
    mesh = load_mesh(cfg)
    target = load_target(cfg, options)
    try:
        return RunConfig(
            mesh=mesh,
            target=target,
            distribution=distribution(cfg, mesh.n_regions - 1),
            rule=step_rule(cfg),
            iterations=cfg.number("iters", int),
            seed=cfg.number("seed", int),
            estimate_m=cfg.number("estimate.m", int),
            estimate_every=cfg.number("estimate.every", int),
            mu_min=cfg.number("mu_min"),
            mu_max=cfg.number("mu_max"),
            solver=options,
            guard=cfg.get("guard") == "on",
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def format_config(values: dict[str, str]) -> str:
    width = max(len(k) for k in values)
    return "".join(f"{k.ljust(width)} = {v}\n" for k, v in values.items())
