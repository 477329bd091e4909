"""Seedable random streams and scenario sampling.

Every random draw comes from a generator keyed by ``(master seed, purpose,
iteration, sample index)`` through :class:`numpy.random.SeedSequence`, so a
sample never depends on how many draws were made before it.  The bit generator
is PCG64; changing it changes every sequence and is a versioned decision.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

MIN_ACCEPTANCE = 1e-6


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TruncNormalParams:
    mean: float
    std: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"standard deviation must be positive, got {self.std}")
        if not self.lo < self.hi:
            raise ValueError(f"lower bound {self.lo} must be below upper bound {self.hi}")

    def acceptance(self) -> float:
        """Probability that an untruncated draw lands in ``[lo, hi]``."""
        z = lambda v: (v - self.mean) / (self.std * math.sqrt(2.0))
        return 0.5 * (math.erf(z(self.hi)) - math.erf(z(self.lo)))

    def cdf(self, x):
        """Analytic CDF of the truncated distribution (vectorised)."""
        from scipy.special import ndtr

        a = ndtr((self.lo - self.mean) / self.std)
        b = ndtr((self.hi - self.mean) / self.std)
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return (ndtr((x - self.mean) / self.std) - a) / (b - a)


@dataclass(frozen=True)
class Const:
    value: float


_PURPOSES = {"step": 0, "estimate": 1}


def purpose_code(purpose: str) -> int:
    return _PURPOSES.get(purpose, zlib.crc32(purpose.encode()) + 16)


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(purpose, *index)`` under a master seed."""
    key = (purpose_code(purpose),) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _uniform_acceptance(params: TruncNormalParams) -> float:
    # acceptance of a uniform proposal on [lo, hi] with envelope at the density peak;
    # only offered for windows near the mean, tail windows must pass the normal test
    if not params.lo - params.std <= params.mean <= params.hi + params.std:
        return 0.0
    z_near = min(max(params.mean, params.lo), params.hi)
    peak = math.exp(-0.5 * ((z_near - params.mean) / params.std) ** 2)
    width = params.hi - params.lo
    return params.acceptance() * params.std * math.sqrt(2.0 * math.pi) / (width * peak)


def sample_truncated_normal(params: TruncNormalParams, rng: np.random.Generator, size: int | None = None):
    """Rejection sampling.

    Proposals come from the untruncated normal; for windows much narrower than
    the standard deviation a uniform proposal on the window is used instead.
    """
    acc_normal = params.acceptance()
    acc_uniform = _uniform_acceptance(params)
    if max(acc_normal, acc_uniform) < MIN_ACCEPTANCE:
        raise SamplingError(
            f"window [{params.lo}, {params.hi}] is too far in the tail of N({params.mean}, {params.std}^2)"
        )
    n = 1 if size is None else int(size)
    out = np.empty(n)
    filled = 0
    use_normal = acc_normal >= acc_uniform
    z_near = min(max(params.mean, params.lo), params.hi)
    while filled < n:
        batch = max(2 * (n - filled), 8)
        if use_normal:
            cand = rng.normal(params.mean, params.std, size=batch)
            cand = cand[(cand >= params.lo) & (cand <= params.hi)]
        else:
            cand = rng.uniform(params.lo, params.hi, size=batch)
            ratio = np.exp(-0.5 * (((cand - params.mean) ** 2 - (z_near - params.mean) ** 2) / params.std**2))
            cand = cand[rng.uniform(size=batch) <= ratio]
        take = min(cand.size, n - filled)
        out[filled : filled + take] = cand[:take]
        filled += take
    return float(out[0]) if size is None else out


def draw(component, rng: np.random.Generator) -> float:
    if isinstance(component, Const):
        return float(component.value)
    return sample_truncated_normal(component, rng)


@dataclass(frozen=True)
class Scenario:
    kappa: tuple[float, ...]  # kappa[0] outer material, kappa[i] inclusion i
    g: float
    f: float = 0.0

    def __post_init__(self):
        if any(not k > 0 for k in self.kappa):
            raise ValueError(f"conductivities must be positive, got {self.kappa}")

    def kappa_per_label(self, n_regions: int) -> np.ndarray:
        k = np.asarray(self.kappa, dtype=float)
        if k.size == 2 and n_regions > 2:
            # one value shared by every inclusion
            k = np.concatenate([k[:1], np.full(n_regions - 1, k[1])])
        if k.size < n_regions:
            raise ValueError(f"scenario has {k.size} conductivities for {n_regions} regions")
        return k


@dataclass(frozen=True)
class ScenarioDistribution:
    """Independent components; ``kappa_int`` is shared by all inclusions when
    ``common_inclusion`` is set, else ``kappa_inclusions`` lists one per inclusion."""

    kappa0: object = Const(1.5)
    kappa_int: object = Const(4.0)
    g: object = Const(10.0)
    f: object = Const(0.0)
    n_inclusions: int = 1
    common_inclusion: bool = True
    kappa_inclusions: tuple = field(default=())

    def is_deterministic(self) -> bool:
        comps = [self.kappa0, self.kappa_int, self.g, self.f, *self.kappa_inclusions]
        return all(isinstance(c, Const) for c in comps)

    def sample(self, rng: np.random.Generator) -> Scenario:
        return sample_scenario(self, rng)


def sample_scenario(dist: ScenarioDistribution, rng: np.random.Generator) -> Scenario:
    # fixed draw order: kappa0, inclusion kappa(s), g, f
    k0 = draw(dist.kappa0, rng)
    if dist.common_inclusion or not dist.kappa_inclusions:
        kin = draw(dist.kappa_int, rng)
        kappa = (k0,) + (kin,) * max(dist.n_inclusions, 1)
    else:
        kappa = (k0,) + tuple(draw(c, rng) for c in dist.kappa_inclusions)
    g = draw(dist.g, rng)
    f = draw(dist.f, rng)
    return Scenario(kappa, g, f)


def deterministic(kappa0: float = 1.5, kappa_int: float = 4.0, g: float = 10.0, f: float = 0.0, n_inclusions: int = 1):
    return ScenarioDistribution(Const(kappa0), Const(kappa_int), Const(g), Const(f), n_inclusions)
