"""Geometry and configuration types for the photon transport engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import InvalidStack

INFINITE = math.inf

DEFAULT_BATCH_SIZE = 4096
DEFAULT_ROULETTE_THRESHOLD = 1e-4
DEFAULT_ROULETTE_SURVIVAL = 0.1

# Photons wandering deeper than any tissue of interest are handled two
# ways. In a completely lossless bottom-infinite stack the kernel credits
# their weight straight to diffuse exit, which is exact: the depth
# coordinate performs a recurrent driftless walk, so return to the
# surface is certain and no weight can be lost on the way (without this
# the walk has no finite expected length). Any other deep photon faces a
# survival lottery below this depth: weight scaled by the inverse
# survival probability, the marker doubling after each pass. That one is
# unbiased rather than exact and obeys the roulette switch.
DEPTH_ROULETTE_START_MM = 100.0
DEPTH_ROULETTE_SURVIVAL = 0.5


@dataclass(frozen=True)
class Layer:
    """One plane-parallel slab: mu_a, mu_s in 1/mm, anisotropy g,
    refractive index n, thickness in mm (INFINITE allowed at the bottom).

    mu_a = mu_s = 0 marks a pure-index spacer crossed in a straight line.
    """

    mu_a: float
    mu_s: float
    g: float
    n: float
    thickness_mm: float

    def __post_init__(self):
        if self.mu_a < 0.0 or self.mu_s < 0.0:
            raise InvalidStack("mu_a and mu_s must be >= 0")
        if not -1.0 < self.g < 1.0:
            raise InvalidStack("anisotropy must lie in (-1, 1)")
        if self.n < 1.0:
            raise InvalidStack("refractive index must be >= 1")
        if not self.thickness_mm > 0.0:
            raise InvalidStack("thickness must be > 0")


@dataclass(frozen=True)
class LayerStack:
    """Ordered layers, top to bottom; only the last may be infinite."""

    layers: tuple[Layer, ...]
    ambient_n: float = 1.0

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise InvalidStack("stack needs at least one layer")
        if self.ambient_n < 1.0:
            raise InvalidStack("ambient index must be >= 1")
        for layer in layers[:-1]:
            if math.isinf(layer.thickness_mm):
                raise InvalidStack("only the bottom layer may be infinite")
        bottom = layers[-1]
        # a spacer has no interactions, so an infinite one never ends
        if math.isinf(bottom.thickness_mm) and bottom.mu_a + bottom.mu_s == 0.0:
            raise InvalidStack("an infinite bottom layer must interact")


@dataclass(frozen=True)
class SimConfig:
    photon_count: int
    seed: int = 0
    batch_size: int = DEFAULT_BATCH_SIZE
    roulette_threshold: float = DEFAULT_ROULETTE_THRESHOLD
    roulette_survival: float = DEFAULT_ROULETTE_SURVIVAL
    enable_roulette: bool = True

    def __post_init__(self):
        if self.photon_count < 1:
            raise ValueError("photon count must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 < self.roulette_threshold < 1.0:
            raise ValueError("roulette threshold must lie in (0, 1)")
        if not 0.05 <= self.roulette_survival <= 0.5:
            raise ValueError("roulette survival must lie in [0.05, 0.5]")


@dataclass(frozen=True)
class MCResult:
    """Tally fractions of launched photon weight, plus run provenance."""

    r_specular: float
    r_diffuse: float
    transmittance: float
    absorbed: float
    r_diffuse_stderr: float
    photons: int
    seed: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("r_specular", "r_diffuse", "transmittance", "absorbed"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v!r} outside [0, 1]")

    @property
    def tally_sum(self) -> float:
        return math.fsum((self.r_specular, self.r_diffuse,
                          self.transmittance, self.absorbed))


def specular_reflectance(n_ambient: float, n_top: float) -> float:
    """Normal-incidence Fresnel reflection factor between two indices."""
    if n_ambient < 1.0 or n_top < 1.0:
        raise ValueError("refractive indices must be >= 1")
    ratio = (n_ambient - n_top) / (n_ambient + n_top)
    return ratio * ratio
