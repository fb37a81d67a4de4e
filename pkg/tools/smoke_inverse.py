"""Round-trip smoke for the fitting loop against the default table."""

import time

import numpy as np

from livorlab.extinction import load_extinction_db
from livorlab.inverse import (
    SkinParameterVector,
    default_fit_config,
    default_fit_grid,
    default_parameter_vector,
    default_scatterer,
    fit,
    predict_spectrum,
    with_parameters,
)
from livorlab.mcrt import load_lut
from livorlab.spectral import ChromophoreConcentrations, cohb_fraction

lut = load_lut("tests/_cache/default_lut.flut")
db = load_extinction_db()
grid = default_fit_grid()

truth = SkinParameterVector(
    ChromophoreConcentrations({"hb": 0.03, "o2hb": 0.05, "cohb": 0.02}),
    default_scatterer(1.4e9),
    1.1,
)
measured = predict_spectrum(truth, lut, grid, db)
print("measured range:", measured.values.min(), measured.values.max())

# exact fixed point
t0 = time.time()
cfg0 = default_fit_config(initial_guess=truth)
r0 = fit(measured, cfg0, lut, db)
print(f"fixed point: it={r0.iterations} conv={r0.converged} "
      f"rn={r0.residual_norm:.3e}  ({time.time()-t0:.2f}s)")

# +20 percent perturbed start
names = list(cfg0.free_parameters)
vals = [0.03 * 1.2, 0.05 * 1.2, 0.02 * 1.2, 1.4e9 * 1.2, 1.1 * 1.2]
guess = with_parameters(truth, names, vals)
cfg = default_fit_config(initial_guess=guess)
t0 = time.time()
res = fit(measured, cfg, lut, db)
dt = time.time() - t0
print(f"perturbed: it={res.iterations} conv={res.converged} "
      f"rn={res.residual_norm:.3e} chi2={res.chi2_per_dof:.3e}  ({dt:.2f}s)")
est = res.estimate
for name, true_v in zip(names, [0.03, 0.05, 0.02, 1.4e9, 1.1]):
    from livorlab.inverse import get_parameter
    got = get_parameter(est, name)
    print(f"  {name:20s} true={true_v:.6g} est={got:.6g} "
          f"rel={abs(got-true_v)/abs(true_v):.2e}")
print("  cohb_fraction true=", cohb_fraction(truth.concentrations),
      "est=", cohb_fraction(est.concentrations))
print("  at_bound:", res.at_bound)
print("  trace len:", len(res.objective_trace),
      "monotone:", all(b < a for a, b in zip(res.objective_trace,
                                             res.objective_trace[1:])))

# 1 percent noise trial
rng = np.random.default_rng(7)
noisy_vals = measured.values * (1 + 0.01 * rng.standard_normal(len(grid)))
from livorlab.spectral import Spectrum, SpectrumKind
noisy = Spectrum(grid, np.clip(noisy_vals, 0, 1.0999), SpectrumKind.REFLECTANCE)
t0 = time.time()
res_n = fit(noisy, cfg, lut, db)
errs = {
    "cohb_fraction": abs(cohb_fraction(res_n.estimate.concentrations)
                         - cohb_fraction(truth.concentrations))
}
print(f"noisy: it={res_n.iterations} conv={res_n.converged} "
      f"cohb_frac_err={errs['cohb_fraction']:.4f}  ({time.time()-t0:.2f}s)")
