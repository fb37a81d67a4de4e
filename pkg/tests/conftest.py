"""Shared fixtures: extinction database and the default transport table.

The table takes minutes to build, so it is cached on disk between runs.
The cache is trusted only after re-simulating one grid node bit-exactly
with the current engine; any drift in kernel, config, or axes forces a
rebuild instead of silently testing against stale numbers.
"""

from pathlib import Path
from dataclasses import asdict

import numpy as np
import pytest

from livorlab.errors import LivorlabError
from livorlab.extinction import load_extinction_db
from livorlab.mcrt import (
    build_default_lut,
    default_axes,
    default_build_config,
    load_lut,
    save_lut,
    simulate,
    single_layer_template,
)
from livorlab.mcrt.model import Layer, LayerStack

CACHE_PATH = Path(__file__).parent / "_cache" / "default_lut.flut"


def _cache_is_current(lut) -> bool:
    axes = default_axes()
    for name in ("mu_a", "mu_s_prime"):
        if not np.array_equal(lut.axis(name), axes[name]):
            return False
    cfg = default_build_config()
    if lut.provenance.get("config") != asdict(cfg):
        return False
    template = single_layer_template()
    base = template.layers[0]
    # the most absorbing node is the cheapest to re-simulate
    mu_a = float(lut.axis("mu_a")[-1])
    msp = float(lut.axis("mu_s_prime")[-1])
    stack = LayerStack(
        (Layer(mu_a, msp / (1.0 - base.g), base.g, base.n,
               base.thickness_mm),),
        template.ambient_n)
    res = simulate(stack, cfg, workers=1)
    return (res.r_diffuse == float(lut.values[-1, -1])
            and res.r_diffuse_stderr == float(lut.stderr[-1, -1]))


@pytest.fixture(scope="session")
def default_lut():
    if CACHE_PATH.exists():
        try:
            lut = load_lut(CACHE_PATH)
            if _cache_is_current(lut):
                return lut
        except (LivorlabError, OSError):
            pass
    lut = build_default_lut()
    CACHE_PATH.parent.mkdir(parents=True, exist_ok=True)
    save_lut(lut, CACHE_PATH)
    return lut


@pytest.fixture(scope="session")
def extinction_db():
    return load_extinction_db()
