"""Geometries and settings of the five experiment families.

The published figures only show the shapes, so inclusion positions and sizes
here are our own reconstructions; they fix the topology (number of
inclusions, initial/target relation) rather than exact coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .mesh import Ellipse
from .stochastics import Const, ScenarioDistribution, TruncNormalParams

DESK_RESOLUTION = 39  # 3,042 triangles
FINE_RESOLUTION = 71  # 10,082 triangles


def low_variance(kappa0=True, kappa_int=True, g=True, std=1e-2) -> ScenarioDistribution:
    return ScenarioDistribution(
        TruncNormalParams(1.5, std, 1.0, 2.0) if kappa0 else Const(1.5),
        TruncNormalParams(4.0, std, 3.0, 5.0) if kappa_int else Const(4.0),
        TruncNormalParams(10.0, std, 9.0, 11.0) if g else Const(10.0),
        Const(0.0),
    )


def high_variance() -> ScenarioDistribution:
    return low_variance(std=0.2)


SIX_TARGET = (
    Ellipse(0.17, 0.70, 0.09, 0.07, 0.3),
    Ellipse(0.35, 0.37, 0.10, 0.08, -0.4),
    Ellipse(0.44, 0.77, 0.08, 0.08, 0.0),
    Ellipse(0.63, 0.34, 0.09, 0.06, 0.8),
    Ellipse(0.74, 0.70, 0.10, 0.07, -0.2),
    Ellipse(0.84, 0.20, 0.07, 0.06, 0.0),
)

SIX_INITIAL = (
    Ellipse.circle(0.19, 0.67, 0.07),
    Ellipse.circle(0.33, 0.40, 0.07),
    Ellipse.circle(0.46, 0.74, 0.07),
    Ellipse.circle(0.61, 0.36, 0.07),
    Ellipse.circle(0.72, 0.68, 0.07),
    Ellipse.circle(0.82, 0.23, 0.07),
)

ELLIPSE_START = (Ellipse(0.5, 0.5, 0.3, 0.15, 0.0),)
CIRCLE_TARGET = (Ellipse.circle(0.5, 0.5, 0.2),)
SMALL_CIRCLE = (Ellipse.circle(0.5, 0.5, 0.12),)
TILTED_ELLIPSE = (Ellipse(0.5, 0.5, 0.25, 0.14, math.pi / 6),)

# step-size study: initial circle off-centre, target a tilted ellipse elsewhere
STEP_START = (Ellipse.circle(0.45, 0.55, 0.15),)
STEP_TARGET = (Ellipse(0.55, 0.45, 0.24, 0.14, math.pi / 4),)


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    resolution: int
    initial: tuple
    target: tuple
    settings: dict = field(default_factory=dict)  # config keys as written in a config file

    def config_values(self) -> dict[str, str]:
        from .config import format_geometry

        return {
            "mesh": format_geometry(self.resolution, self.initial),
            "target": format_geometry(self.resolution, self.target),
            **self.settings,
        }


_LOW = {
    "kappa0": "trunc_normal(1.5, 0.01, 1, 2)",
    "kappa_int": "trunc_normal(4, 0.01, 3, 5)",
    "g": "trunc_normal(10, 0.01, 9, 11)",
    "f": "const(0)",
}
_HIGH = {
    "kappa0": "trunc_normal(1.5, 0.2, 1, 2)",
    "kappa_int": "trunc_normal(4, 0.2, 3, 5)",
    "g": "trunc_normal(10, 0.2, 9, 11)",
    "f": "const(0)",
}

PRESETS = {
    "multiple-shapes": Preset(
        "multiple-shapes",
        "six inclusions, Armijo alpha=50, low-variance parameters, 300 iterations",
        DESK_RESOLUTION,
        SIX_INITIAL,
        SIX_TARGET,
        {"iters": "300", "step.rule": "armijo", "step.alpha": "50", "step.rho": "0.5", "step.c": "1e-4",
         "estimate.m": "100", "estimate.every": "300", **_LOW},
    ),
    "multiple-shapes-fine": Preset(
        "multiple-shapes-fine",
        "six inclusions on the fine mesh",
        FINE_RESOLUTION,
        SIX_INITIAL,
        SIX_TARGET,
        {"iters": "300", "step.rule": "armijo", "step.alpha": "50", "step.rho": "0.5", "step.c": "1e-4",
         "estimate.m": "100", "estimate.every": "300", **_LOW},
    ),
    "lame-soft": Preset(
        "lame-soft",
        "ellipse to circle with mu in [0.5, 1]",
        DESK_RESOLUTION,
        ELLIPSE_START,
        CIRCLE_TARGET,
        {"iters": "200", "step.rule": "armijo", "step.alpha": "400", "step.rho": "0.5", "step.c": "1e-4",
         "mu_min": "0.5", "mu_max": "1", **_LOW},
    ),
    "lame-stiff": Preset(
        "lame-stiff",
        "ellipse to circle with mu in [10, 25]",
        DESK_RESOLUTION,
        ELLIPSE_START,
        CIRCLE_TARGET,
        {"iters": "200", "step.rule": "armijo", "step.alpha": "400", "step.rho": "0.5", "step.c": "1e-4",
         "mu_min": "10", "mu_max": "25", **_LOW},
    ),
    "circle-to-ellipse": Preset(
        "circle-to-ellipse",
        "small circle to tilted ellipse",
        DESK_RESOLUTION,
        SMALL_CIRCLE,
        TILTED_ELLIPSE,
        {"iters": "200", "step.rule": "armijo", "step.alpha": "400", "step.rho": "0.5", "step.c": "1e-4", **_LOW},
    ),
    "ellipse-to-circle": Preset(
        "ellipse-to-circle",
        "tilted ellipse to small circle",
        DESK_RESOLUTION,
        TILTED_ELLIPSE,
        SMALL_CIRCLE,
        {"iters": "200", "step.rule": "armijo", "step.alpha": "400", "step.rho": "0.5", "step.c": "1e-4", **_LOW},
    ),
    "robbins-monro": Preset(
        "robbins-monro",
        "high variance, t = 800 n^-0.85",
        DESK_RESOLUTION,
        STEP_START,
        STEP_TARGET,
        {"iters": "200", "step.rule": "robbins_monro", "step.alpha": "800", "step.exponent": "0.85",
         "estimate.m": "1000", "estimate.every": "200", **_HIGH},
    ),
    "armijo-high-variance": Preset(
        "armijo-high-variance",
        "high variance, Armijo alpha=300",
        DESK_RESOLUTION,
        STEP_START,
        STEP_TARGET,
        {"iters": "200", "step.rule": "armijo", "step.alpha": "300", "step.rho": "0.5", "step.c": "1e-4",
         "estimate.m": "1000", "estimate.every": "200", **_HIGH},
    ),
    "damped-armijo": Preset(
        "damped-armijo",
        "high variance, Armijo with alpha_0=400 damped by 0.9 every 20 iterations",
        DESK_RESOLUTION,
        STEP_START,
        STEP_TARGET,
        {"iters": "200", "step.rule": "damped_armijo", "step.alpha": "400", "step.rho": "0.5", "step.c": "1e-4",
         "step.damping": "0.9", "step.period": "20", "estimate.m": "1000", "estimate.every": "200", **_HIGH},
    ),
    "mesh-destruction": Preset(
        "mesh-destruction",
        "unguarded Robbins-Monro with alpha=2000",
        DESK_RESOLUTION,
        STEP_START,
        STEP_TARGET,
        {"iters": "20", "step.rule": "robbins_monro", "step.alpha": "2000", "guard": "off", **_HIGH},
    ),
}

# single-parameter randomness study
for _name, _flags in {
    "random-kappa0": (True, False, False),
    "random-kappa-int": (False, True, False),
    "random-g": (False, False, True),
    "random-kappas": (True, True, False),
    "random-all": (True, True, True),
    "deterministic": (False, False, False),
}.items():
    _d = {k: (_LOW[k] if flag else f"const({v})") for k, flag, v in zip(("kappa0", "kappa_int", "g"), _flags, (1.5, 4, 10))}
    PRESETS[_name] = Preset(
        _name,
        f"influence of randomness ({_name})",
        DESK_RESOLUTION,
        ELLIPSE_START,
        SMALL_CIRCLE,
        {"iters": "200", "step.rule": "armijo", "step.alpha": "400", "step.rho": "0.5", "step.c": "1e-4",
         "estimate.m": "100", "estimate.every": "20", "f": "const(0)", **_d},
    )
