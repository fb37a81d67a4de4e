"""Fitting loop, forward prediction, and parameter plumbing."""

import json
import math

import numpy as np
import pytest

from livorlab.errors import (
    ConfigInvalid,
    InfeasibleStart,
    MissingChromophore,
    OutOfGrid,
)
from livorlab.inverse import (
    DEFAULT_BOUNDS,
    DEFAULT_FREE_PARAMETERS,
    FitConfig,
    NoiseModel,
    PARAMETER_NAMES,
    SkinParameterVector,
    _Workspace,
    default_fit_config,
    default_fit_grid,
    default_parameter_vector,
    default_scatterer,
    fit,
    fit_config_from_dict,
    fit_config_to_dict,
    fit_result_to_dict,
    get_parameter,
    parameter_vector_from_dict,
    parameter_vector_to_dict,
    predict_spectrum,
    scan_objective,
    with_parameters,
)
from livorlab.mie import LogNormal, Monodisperse, ScattererModel
from livorlab.spectral import (
    ChromophoreConcentrations,
    Spectrum,
    SpectrumKind,
    cohb_fraction,
)

FREE = list(DEFAULT_FREE_PARAMETERS)


def vector(hb=0.03, o2hb=0.05, cohb=0.02, density=1.4e9, cal=1.1):
    return SkinParameterVector(
        ChromophoreConcentrations({"hb": hb, "o2hb": o2hb, "cohb": cohb}),
        default_scatterer(density), cal)


@pytest.fixture(scope="module")
def truth():
    return vector()


@pytest.fixture(scope="module")
def measured(truth, default_lut, extinction_db):
    return predict_spectrum(truth, default_lut, default_fit_grid(),
                            extinction_db)


def max_rel_error(estimate, truth):
    out = 0.0
    for name in FREE:
        t = get_parameter(truth, name)
        e = get_parameter(estimate, name)
        out = max(out, abs(e - t) / max(abs(t), 1e-3))
    return out


class TestParameterAccess:
    def test_round_trip_every_name(self):
        theta = vector()
        values = {"c_hb": 0.011, "c_o2hb": 0.022, "c_cohb": 0.033,
                  "number_density": 7.5e8, "calibration_factor": 0.9,
                  "radius_um": 0.55}
        for name in PARAMETER_NAMES:
            out = with_parameters(theta, [name], [values[name]])
            assert get_parameter(out, name) == values[name]

    def test_untouched_fields_survive(self):
        theta = vector()
        out = with_parameters(theta, ["c_hb"], [0.07])
        assert get_parameter(out, "c_o2hb") == 0.05
        assert out.scatterer == theta.scatterer
        assert out.calibration_factor == theta.calibration_factor

    def test_radius_on_monodisperse(self):
        theta = SkinParameterVector(
            ChromophoreConcentrations({"hb": 0.05}),
            ScattererModel(Monodisperse(0.3), 1e9), 1.0)
        out = with_parameters(theta, ["radius_um"], [0.4])
        assert isinstance(out.scatterer.distribution, Monodisperse)
        assert out.scatterer.distribution.radius_um == 0.4

    def test_radius_on_log_normal_moves_median(self):
        out = with_parameters(vector(), ["radius_um"], [0.6])
        dist = out.scatterer.distribution
        assert isinstance(dist, LogNormal)
        assert dist.median_radius_um == 0.6
        assert dist.sigma_geom == pytest.approx(1.3)

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigInvalid):
            get_parameter(vector(), "c_methb")
        with pytest.raises(ConfigInvalid):
            with_parameters(vector(), ["c_methb"], [0.1])

    def test_missing_concentration_reads_zero(self):
        theta = SkinParameterVector(
            ChromophoreConcentrations({"hb": 0.05}), default_scatterer(), 1.0)
        assert get_parameter(theta, "c_cohb") == 0.0


class TestSkinParameterVector:
    @pytest.mark.parametrize("cal", [0.05, 20.0, 0.0, float("nan")])
    def test_calibration_out_of_range(self, cal):
        with pytest.raises(ValueError):
            vector(cal=cal)

    def test_calibration_limits_inclusive(self):
        assert vector(cal=0.1).calibration_factor == 0.1
        assert vector(cal=10.0).calibration_factor == 10.0


class TestFitConfigValidation:
    def test_default_config_valid(self):
        cfg = default_fit_config()
        assert cfg.free_parameters == DEFAULT_FREE_PARAMETERS
        assert cfg.max_iterations == 200

    def test_empty_free_parameters(self):
        with pytest.raises(ConfigInvalid):
            FitConfig((), dict(DEFAULT_BOUNDS), vector())

    def test_duplicate_free_parameter(self):
        with pytest.raises(ConfigInvalid):
            FitConfig(("c_hb", "c_hb"), dict(DEFAULT_BOUNDS), vector())

    def test_unknown_free_parameter(self):
        with pytest.raises(ConfigInvalid):
            FitConfig(("c_hb", "c_xx"), dict(DEFAULT_BOUNDS), vector())

    def test_missing_bounds_entry(self):
        bounds = {k: v for k, v in DEFAULT_BOUNDS.items() if k != "c_cohb"}
        with pytest.raises(ConfigInvalid):
            FitConfig(DEFAULT_FREE_PARAMETERS, bounds, vector())

    def test_inverted_bounds(self):
        bounds = {**DEFAULT_BOUNDS, "c_hb": (0.1, 0.1)}
        with pytest.raises(ConfigInvalid):
            FitConfig(DEFAULT_FREE_PARAMETERS, bounds, vector())

    def test_guess_outside_bounds(self):
        with pytest.raises(ConfigInvalid):
            FitConfig(DEFAULT_FREE_PARAMETERS, dict(DEFAULT_BOUNDS),
                      vector(hb=0.2))

    @pytest.mark.parametrize("kwargs", [
        {"regularization_weight": -1.0},
        {"max_iterations": 0},
        {"convergence_tol": 0.0},
        {"noise_model": "uniform"},
    ])
    def test_bad_scalar_settings(self, kwargs):
        with pytest.raises(ConfigInvalid):
            FitConfig(DEFAULT_FREE_PARAMETERS, dict(DEFAULT_BOUNDS),
                      vector(), **kwargs)

    def test_bounds_corner_outside_domain(self):
        # lower calibration corner 0.05 is not a representable gain
        bounds = {**DEFAULT_BOUNDS, "calibration_factor": (0.05, 2.0)}
        with pytest.raises(ConfigInvalid):
            FitConfig(DEFAULT_FREE_PARAMETERS, bounds, vector())


class TestPredict:
    def test_shape_kind_and_range(self, measured):
        assert measured.kind is SpectrumKind.REFLECTANCE
        assert len(measured) == 51
        assert np.all(measured.values > 0.0)
        assert np.all(measured.values <= 1.1)

    def test_calibration_scales_linearly(self, default_lut, extinction_db):
        grid = default_fit_grid()
        full = predict_spectrum(vector(cal=1.0), default_lut, grid,
                                extinction_db)
        half = predict_spectrum(vector(cal=0.5), default_lut, grid,
                                extinction_db)
        assert np.array_equal(half.values, 0.5 * full.values)

    def test_out_of_grid_names_wavelength(self, default_lut, extinction_db):
        dense = vector(density=6e9, cal=1.0)
        with pytest.raises(OutOfGrid) as err:
            predict_spectrum(dense, default_lut, default_fit_grid(),
                             extinction_db)
        assert "nm" in str(err.value)
        assert err.value.coords

    def test_missing_chromophore(self, default_lut):
        with pytest.raises(MissingChromophore):
            predict_spectrum(vector(), default_lut, default_fit_grid(), [])


class TestFitRoundTrip:
    def test_fixed_point(self, truth, measured, default_lut, extinction_db):
        res = fit(measured, default_fit_config(initial_guess=truth),
                  default_lut, extinction_db)
        assert res.converged
        assert res.iterations <= 1
        assert res.residual_norm <= 1e-12
        assert max_rel_error(res.estimate, truth) <= 1e-12
        assert np.allclose(res.predicted.values, measured.values,
                           rtol=0, atol=1e-14)

    def test_uniformly_perturbed_guess(self, truth, measured, default_lut,
                                       extinction_db):
        vals = [get_parameter(truth, n) * 1.2 for n in FREE]
        guess = with_parameters(truth, FREE, vals)
        res = fit(measured, default_fit_config(initial_guess=guess),
                  default_lut, extinction_db)
        assert res.converged
        assert max_rel_error(res.estimate, truth) <= 1e-9

    def test_off_valley_guess(self, default_lut, extinction_db):
        # single-start descent parks in the absorption/scattering scale
        # valley from here; the rescaled seeds must rescue it
        truth = vector(hb=0.036, o2hb=0.05, cohb=0.0, density=1.2e9,
                       cal=1.0)
        measured = predict_spectrum(truth, default_lut, default_fit_grid(),
                                    extinction_db)
        guess = vector(hb=0.05, o2hb=0.05, cohb=0.01, density=1.2e9,
                       cal=1.0)
        res = fit(measured, default_fit_config(initial_guess=guess),
                  default_lut, extinction_db)
        assert res.converged
        assert max_rel_error(res.estimate, truth) <= 1e-6

    def test_zero_cohb_pins_to_bound(self, default_lut, extinction_db):
        truth = vector(hb=0.04, o2hb=0.05, cohb=0.0, density=1.2e9, cal=1.0)
        measured = predict_spectrum(truth, default_lut, default_fit_grid(),
                                    extinction_db)
        guess = vector(hb=0.05, o2hb=0.05, cohb=0.01, density=1.2e9,
                       cal=1.0)
        res = fit(measured, default_fit_config(initial_guess=guess),
                  default_lut, extinction_db)
        assert res.converged
        assert get_parameter(res.estimate, "c_cohb") <= 1e-9
        assert res.at_bound["c_cohb"]
        assert not res.at_bound["c_hb"]

    def test_noisy_cohb_fraction(self, truth, measured, default_lut,
                                 extinction_db):
        rng = np.random.default_rng(7)
        noisy = Spectrum(
            measured.wavelengths_nm,
            measured.values * (1 + 0.01 * rng.standard_normal(len(measured))),
            SpectrumKind.REFLECTANCE)
        vals = [get_parameter(truth, n) * 1.15 for n in FREE]
        guess = with_parameters(truth, FREE, vals)
        res = fit(noisy, default_fit_config(initial_guess=guess),
                  default_lut, extinction_db)
        assert res.converged
        err = abs(cohb_fraction(res.estimate.concentrations)
                  - cohb_fraction(truth.concentrations))
        assert err <= 0.05

    def test_objective_trace_monotone(self, truth, measured, default_lut,
                                      extinction_db):
        guess = with_parameters(
            truth, FREE, [get_parameter(truth, n) * 1.2 for n in FREE])
        res = fit(measured, default_fit_config(initial_guess=guess),
                  default_lut, extinction_db)
        trace = res.objective_trace
        assert len(trace) == res.iterations + 1
        assert all(b < a for a, b in zip(trace, trace[1:]))

    def test_chi2_consistent_with_residual(self, truth, measured,
                                           default_lut, extinction_db):
        guess = with_parameters(
            truth, FREE, [get_parameter(truth, n) * 1.1 for n in FREE])
        res = fit(measured, default_fit_config(initial_guess=guess),
                  default_lut, extinction_db)
        dof = len(measured) - len(FREE)
        assert res.chi2_per_dof == pytest.approx(
            res.residual_norm ** 2 / dof, rel=1e-12, abs=1e-300)

    def test_gain_scaling_equivariance(self, truth, measured, default_lut,
                                       extinction_db):
        scaled = Spectrum(measured.wavelengths_nm, 1.2 * measured.values,
                          SpectrumKind.REFLECTANCE)
        guess = with_parameters(
            truth, FREE,
            [get_parameter(truth, n) for n in FREE[:-1]] + [1.2 * 1.1])
        res = fit(scaled, default_fit_config(initial_guess=guess),
                  default_lut, extinction_db)
        assert res.converged
        assert get_parameter(res.estimate, "calibration_factor") == \
            pytest.approx(1.2 * 1.1, rel=1e-9)
        for name in ("c_hb", "c_o2hb", "c_cohb", "number_density"):
            assert get_parameter(res.estimate, name) == pytest.approx(
                get_parameter(truth, name), rel=1e-8)

    def test_heavy_regularization_pins_to_guess(self, measured, default_lut,
                                                extinction_db):
        guess = vector(hb=0.05, o2hb=0.04, cohb=0.01, density=1.0e9,
                       cal=1.0)
        res = fit(measured,
                  default_fit_config(initial_guess=guess,
                                     regularization_weight=1e9),
                  default_lut, extinction_db)
        assert res.converged
        for name in FREE:
            lo, hi = DEFAULT_BOUNDS[name]
            scaled_move = abs(get_parameter(res.estimate, name)
                              - get_parameter(guess, name)) / (hi - lo)
            assert scaled_move <= 1e-6

    def test_stderr_weighted_round_trip(self, truth, measured, default_lut,
                                        extinction_db):
        guess = with_parameters(
            truth, FREE, [get_parameter(truth, n) * 1.15 for n in FREE])
        res = fit(measured,
                  default_fit_config(
                      initial_guess=guess,
                      noise_model=NoiseModel.PER_WAVELENGTH_STDERR),
                  default_lut, extinction_db)
        assert res.converged
        assert max_rel_error(res.estimate, truth) <= 1e-9

    def test_radius_free_fixed_point(self, default_lut, extinction_db):
        truth = vector()
        measured = predict_spectrum(truth, default_lut, default_fit_grid(),
                                    extinction_db)
        cfg = FitConfig(DEFAULT_FREE_PARAMETERS + ("radius_um",),
                        dict(DEFAULT_BOUNDS), truth)
        res = fit(measured, cfg, default_lut, extinction_db)
        assert res.converged
        assert res.residual_norm <= 1e-12
        assert get_parameter(res.estimate, "radius_um") == \
            pytest.approx(0.4, rel=1e-12)

    def test_infeasible_start(self, measured, default_lut, extinction_db):
        # so little chromophore that mu_a falls below the table floor
        guess = SkinParameterVector(
            ChromophoreConcentrations({"hb": 1e-4}), default_scatterer(),
            1.0)
        with pytest.raises(InfeasibleStart):
            fit(measured, default_fit_config(initial_guess=guess),
                default_lut, extinction_db)

    def test_rejects_non_reflectance_input(self, measured, default_lut,
                                           extinction_db):
        absorb = Spectrum(measured.wavelengths_nm, measured.values,
                          SpectrumKind.ABSORPTION_PER_MM)
        with pytest.raises(ConfigInvalid):
            fit(absorb, default_fit_config(), default_lut, extinction_db)

    def test_iteration_cap_respected(self, truth, measured, default_lut,
                                     extinction_db):
        guess = with_parameters(
            truth, FREE, [get_parameter(truth, n) * 1.2 for n in FREE])
        cfg = FitConfig(DEFAULT_FREE_PARAMETERS, dict(DEFAULT_BOUNDS),
                        guess, max_iterations=3)
        res = fit(measured, cfg, default_lut, extinction_db)
        assert res.iterations <= 3


class TestJacobian:
    def test_forward_matches_central(self, measured, default_lut,
                                     extinction_db):
        cfg = default_fit_config(initial_guess=vector())
        ws = _Workspace(measured, cfg, default_lut, list(extinction_db))
        rng = np.random.default_rng(11)
        h = 1e-4
        for _ in range(5):
            u = np.clip(ws.u_guess + rng.uniform(-0.05, 0.05,
                                                 len(ws.names)), 0.1, 0.9)
            r0, _ = ws.residual(u)
            J = ws.jacobian(u, r0)
            for j in range(len(ws.names)):
                up, dn = u.copy(), u.copy()
                up[j] += h
                dn[j] -= h
                central = (ws.residual(up)[0] - ws.residual(dn)[0]) / (2 * h)
                norm = np.linalg.norm(central)
                assert np.linalg.norm(J[:, j] - central) <= \
                    0.01 * norm + 1e-12


class TestScanObjective:
    def test_zero_at_truth(self, truth, measured, default_lut,
                           extinction_db):
        cfg = default_fit_config(initial_guess=truth)
        out = scan_objective(measured, cfg, default_lut, extinction_db,
                             "c_hb", [0.03])
        assert out == [(0.03, 0.0)]

    def test_bracket_minimum_at_truth(self, truth, measured, default_lut,
                                      extinction_db):
        cfg = default_fit_config(initial_guess=truth)
        nodes = np.linspace(0.01, 0.06, 41)
        out = scan_objective(measured, cfg, default_lut, extinction_db,
                             "c_hb", nodes)
        assert len(out) == 41
        values = [f for _, f in out]
        best = min(range(41), key=values.__getitem__)
        assert out[best][0] == pytest.approx(0.03, abs=1e-12)

    def test_out_of_grid_node_maps_to_inf(self, truth, measured,
                                          default_lut, extinction_db):
        cfg = FitConfig(DEFAULT_FREE_PARAMETERS,
                        {**DEFAULT_BOUNDS, "number_density": (2e8, 6e9)},
                        truth)
        out = scan_objective(measured, cfg, default_lut, extinction_db,
                             "number_density", [1.4e9, 5.5e9])
        assert math.isfinite(out[0][1])
        assert out[1][1] == math.inf

    def test_node_outside_bounds_rejected(self, truth, measured,
                                          default_lut, extinction_db):
        cfg = default_fit_config(initial_guess=truth)
        with pytest.raises(ConfigInvalid):
            scan_objective(measured, cfg, default_lut, extinction_db,
                           "c_hb", [0.2])

    def test_fixed_parameter_rejected(self, truth, measured, default_lut,
                                      extinction_db):
        cfg = default_fit_config(initial_guess=truth)
        with pytest.raises(ConfigInvalid):
            scan_objective(measured, cfg, default_lut, extinction_db,
                           "radius_um", [0.4])


class TestSerialization:
    def test_parameter_vector_round_trip(self):
        theta = vector()
        data = parameter_vector_to_dict(theta)
        back = parameter_vector_from_dict(json.loads(json.dumps(data)))
        assert dict(back.concentrations) == dict(theta.concentrations)
        assert back.scatterer == theta.scatterer
        assert back.calibration_factor == theta.calibration_factor

    def test_monodisperse_round_trip(self):
        theta = SkinParameterVector(
            ChromophoreConcentrations({"hb": 0.05}),
            ScattererModel(Monodisperse(0.3), 8e8), 1.0)
        back = parameter_vector_from_dict(parameter_vector_to_dict(theta))
        assert back.scatterer == theta.scatterer

    def test_fit_config_round_trip(self):
        cfg = default_fit_config(
            noise_model=NoiseModel.PER_WAVELENGTH_STDERR,
            regularization_weight=0.25)
        back = fit_config_from_dict(json.loads(json.dumps(
            fit_config_to_dict(cfg))))
        assert back.free_parameters == cfg.free_parameters
        assert back.bounds == cfg.bounds
        assert back.noise_model is cfg.noise_model
        assert back.regularization_weight == 0.25
        assert dict(back.initial_guess.concentrations) == \
            dict(cfg.initial_guess.concentrations)

    @pytest.mark.parametrize("data", [
        {},
        {"concentrations": {"hb": 0.05}},
        {"concentrations": {"hb": -1},
         "scatterer": {"distribution": {"kind": "monodisperse",
                                        "radius_um": 0.3},
                       "number_density_per_mm3": 1e9}},
        {"concentrations": {"hb": 0.05},
         "scatterer": {"distribution": {"kind": "triangular"},
                       "number_density_per_mm3": 1e9}},
    ])
    def test_bad_parameter_dicts(self, data):
        with pytest.raises(ConfigInvalid):
            parameter_vector_from_dict(data)

    def test_bad_fit_config_dict(self):
        with pytest.raises(ConfigInvalid):
            fit_config_from_dict({"free_parameters": ["c_hb"]})

    def test_fit_result_serializes(self, truth, measured, default_lut,
                                   extinction_db):
        res = fit(measured, default_fit_config(initial_guess=truth),
                  default_lut, extinction_db)
        data = json.loads(json.dumps(fit_result_to_dict(res)))
        assert data["converged"] is True
        assert data["estimate"]["calibration_factor"] == \
            pytest.approx(1.1, rel=1e-12)
        assert len(data["predicted"]["values"]) == 51
