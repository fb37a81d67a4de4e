"""Batch orchestration around the compiled photon walk.

Results must not depend on thread count or scheduling: every batch owns
a random stream derived from (seed, batch_index) alone, and batch
tallies merge with exact summation in ascending batch order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .kernel import run_batch, stream_for_batch
from .model import (
    DEPTH_ROULETTE_START_MM,
    DEPTH_ROULETTE_SURVIVAL,
    LayerStack,
    MCResult,
    SimConfig,
    specular_reflectance,
)


def default_worker_count() -> int:
    env = os.environ.get("LIVORLAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _stack_arrays(stack: LayerStack):
    n = len(stack.layers)
    mu_a = np.empty(n)
    mu_s = np.empty(n)
    g = np.empty(n)
    n_idx = np.empty(n)
    z_top = np.empty(n)
    z_bot = np.empty(n)
    z = 0.0
    for i, layer in enumerate(stack.layers):
        mu_a[i] = layer.mu_a
        mu_s[i] = layer.mu_s
        g[i] = layer.g
        n_idx[i] = layer.n
        z_top[i] = z
        z = z + layer.thickness_mm
        z_bot[i] = z
    return mu_a, mu_s, g, n_idx, z_top, z_bot


def simulate(stack: LayerStack, cfg: SimConfig,
             workers: int | None = None) -> MCResult:
    """Run the photon walk; a pure function of (stack, cfg)."""
    if workers is None:
        workers = default_worker_count()
    mu_a, mu_s, g, n_idx, z_top, z_bot = _stack_arrays(stack)
    r_spec = specular_reflectance(stack.ambient_n, stack.layers[0].n)
    start_weight = 1.0 - r_spec

    n_total = cfg.photon_count
    batch = cfg.batch_size
    n_batches = (n_total + batch - 1) // batch

    def run(k: int):
        count = min(batch, n_total - k * batch)
        s0, gamma = stream_for_batch(cfg.seed, k)
        return run_batch(
            count, s0, gamma, mu_a, mu_s, g, n_idx, z_top, z_bot,
            stack.ambient_n, start_weight,
            cfg.enable_roulette, cfg.roulette_threshold,
            cfg.roulette_survival,
            DEPTH_ROULETTE_START_MM, DEPTH_ROULETTE_SURVIVAL,
        )

    if workers <= 1 or n_batches == 1:
        tallies = [run(k) for k in range(n_batches)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tallies = list(pool.map(run, range(n_batches)))

    # merge in batch order with exact summation: the result is identical
    # for any worker count
    diff = math.fsum(t[0] for t in tallies) / n_total
    tran = math.fsum(t[1] for t in tallies) / n_total
    absb = math.fsum(t[2] for t in tallies) / n_total
    sq = math.fsum(t[3] for t in tallies) / n_total
    var = max(sq - diff * diff, 0.0)
    stderr = math.sqrt(var / n_total)

    return MCResult(
        r_specular=r_spec,
        r_diffuse=diff,
        transmittance=tran,
        absorbed=absb,
        r_diffuse_stderr=stderr,
        photons=n_total,
        seed=cfg.seed,
        meta={"batches": n_batches, "batch_size": batch},
    )
