"""Quick bench of the transport engine before the test suite locks values."""
import math
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from livorlab.mcrt import (INFINITE, Layer, LayerStack, SimConfig, simulate)

t0 = time.time()
slab = LayerStack((Layer(1.0, 0.0, 0.0, 1.0, 1.0),), ambient_n=1.0)
cfg = SimConfig(photon_count=10_000, seed=7, enable_roulette=False)
res = simulate(slab, cfg)
t1 = time.time()
print(f"compile+first run: {t1 - t0:.1f}s")
print(f"Beer-Lambert 1e4: T={res.transmittance:.5f} vs {math.exp(-1):.5f}")
print(f"  sum deviation: {abs(res.tally_sum - 1.0):.3e}")

two = LayerStack((Layer(0.5, 8.0, 0.8, 1.4, 0.3),
                  Layer(1.2, 15.0, 0.9, 1.37, 2.0)), ambient_n=1.0)
cfg2 = SimConfig(photon_count=20_000, seed=11, enable_roulette=False)
t0 = time.time()
r2 = simulate(two, cfg2)
print(f"two-layer 2e4 roulette off: {time.time() - t0:.2f}s "
      f"sum dev {abs(r2.tally_sum - 1.0):.3e}")

a = simulate(two, cfg2, workers=1)
b = simulate(two, cfg2, workers=8)
same = all(getattr(a, f) == getattr(b, f) for f in
           ("r_specular", "r_diffuse", "transmittance", "absorbed",
            "r_diffuse_stderr"))
print(f"workers 1 vs 8 identical: {same}")

semi = LayerStack((Layer(0.0, 10.0, 0.9, 1.0, INFINITE),), ambient_n=1.0)
cfg3 = SimConfig(photon_count=10_000, seed=3, enable_roulette=True)
t0 = time.time()
r3 = simulate(semi, cfg3)
dt = time.time() - t0
print(f"lossless semi-inf 1e4: {dt:.2f}s r_d={r3.r_diffuse:.6f} "
      f"stderr={r3.r_diffuse_stderr:.2e} absorbed={r3.absorbed:.2e}")

dense = LayerStack((Layer(5.0, 100.0, 0.9, 1.4, INFINITE),), ambient_n=1.0)
cfg4 = SimConfig(photon_count=100_000, seed=5, enable_roulette=True)
t0 = time.time()
r4 = simulate(dense, cfg4)
dt = time.time() - t0
print(f"worst LUT node (mu_a=5, mu_s=100) 1e5: {dt:.2f}s r_d={r4.r_diffuse:.5f}")

mild = LayerStack((Layer(0.005, 3.0, 0.9, 1.4, INFINITE),), ambient_n=1.0)
t0 = time.time()
r5 = simulate(mild, cfg4)
dt = time.time() - t0
print(f"easiest LUT node (mu_a=0.005, mu_s=3) 1e5: {dt:.2f}s r_d={r5.r_diffuse:.5f}")
