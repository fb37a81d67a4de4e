"""Photon transport engine: geometry validation, conservation, physics
oracles, statistics, and determinism."""

import math

import numpy as np
import pytest

from livorlab.errors import InvalidStack
from livorlab.mcrt import (
    INFINITE,
    Layer,
    LayerStack,
    MCResult,
    SimConfig,
    simulate,
    specular_reflectance,
)


def semi_infinite(mu_a, mu_s, g, n=1.0, ambient_n=1.0):
    return LayerStack((Layer(mu_a, mu_s, g, n, INFINITE),), ambient_n)


class TestLayerValidation:
    def test_negative_mu_a_rejected(self):
        with pytest.raises(InvalidStack):
            Layer(-0.1, 1.0, 0.5, 1.4, 1.0)

    def test_negative_mu_s_rejected(self):
        with pytest.raises(InvalidStack):
            Layer(0.1, -1.0, 0.5, 1.4, 1.0)

    @pytest.mark.parametrize("g", [-1.0, 1.0, 1.5])
    def test_anisotropy_bounds_are_open(self, g):
        with pytest.raises(InvalidStack):
            Layer(0.1, 1.0, g, 1.4, 1.0)

    def test_index_below_unity_rejected(self):
        with pytest.raises(InvalidStack):
            Layer(0.1, 1.0, 0.5, 0.9, 1.0)

    @pytest.mark.parametrize("d", [0.0, -1.0])
    def test_thickness_must_be_positive(self, d):
        with pytest.raises(InvalidStack):
            Layer(0.1, 1.0, 0.5, 1.4, d)

    def test_spacer_layer_allowed(self):
        layer = Layer(0.0, 0.0, 0.0, 1.5, 0.3)
        assert layer.mu_a == 0.0 and layer.mu_s == 0.0


class TestStackValidation:
    def test_empty_stack_rejected(self):
        with pytest.raises(InvalidStack):
            LayerStack(())

    def test_interior_infinite_layer_rejected(self):
        with pytest.raises(InvalidStack):
            LayerStack((Layer(1.0, 1.0, 0.0, 1.4, INFINITE),
                        Layer(1.0, 1.0, 0.0, 1.4, 1.0)))

    def test_bottom_infinite_allowed(self):
        stack = LayerStack((Layer(1.0, 1.0, 0.0, 1.4, 1.0),
                            Layer(1.0, 1.0, 0.0, 1.4, INFINITE)))
        assert math.isinf(stack.layers[-1].thickness_mm)

    def test_infinite_spacer_bottom_rejected(self):
        with pytest.raises(InvalidStack):
            LayerStack((Layer(0.0, 0.0, 0.0, 1.4, INFINITE),))

    def test_ambient_index_below_unity_rejected(self):
        with pytest.raises(InvalidStack):
            LayerStack((Layer(1.0, 1.0, 0.0, 1.4, 1.0),), ambient_n=0.5)


class TestSimConfigValidation:
    def test_defaults_valid(self):
        cfg = SimConfig(photon_count=100)
        assert cfg.enable_roulette is True
        assert 0.0 < cfg.roulette_threshold < 1.0
        assert 0.05 <= cfg.roulette_survival <= 0.5

    @pytest.mark.parametrize("kw", [
        {"photon_count": 0},
        {"photon_count": 10, "seed": -1},
        {"photon_count": 10, "seed": 2 ** 64},
        {"photon_count": 10, "batch_size": 0},
        {"photon_count": 10, "roulette_threshold": 0.0},
        {"photon_count": 10, "roulette_threshold": 1.0},
        {"photon_count": 10, "roulette_survival": 0.04},
        {"photon_count": 10, "roulette_survival": 0.51},
    ])
    def test_invalid_config_rejected(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)


class TestMCResultValidation:
    def test_fraction_above_one_rejected(self):
        with pytest.raises(ValueError):
            MCResult(0.0, 1.5, 0.0, 0.0, 0.0, 10, 0)

    def test_negative_fraction_rejected(self):
        with pytest.raises(ValueError):
            MCResult(0.0, -0.1, 0.0, 0.0, 0.0, 10, 0)


class TestSpecularReflectance:
    def test_matched_indices_reflect_nothing(self):
        assert specular_reflectance(1.0, 1.0) == 0.0

    def test_glass_value(self):
        assert specular_reflectance(1.0, 1.5) == pytest.approx(0.04, abs=1e-15)

    @pytest.mark.parametrize("a,b", [(1.0, 1.4), (1.33, 1.5), (1.0, 2.9)])
    def test_symmetric_in_indices(self, a, b):
        assert specular_reflectance(a, b) == specular_reflectance(b, a)

    def test_rejects_subunity_index(self):
        with pytest.raises(ValueError):
            specular_reflectance(0.5, 1.4)


def random_finite_stack(rng):
    n_layers = int(rng.integers(1, 4))
    layers = []
    for _ in range(n_layers):
        layers.append(Layer(
            mu_a=float(rng.uniform(0.0, 2.0)),
            mu_s=float(rng.uniform(0.1, 20.0)),
            g=float(rng.uniform(0.0, 0.95)),
            n=float(rng.uniform(1.0, 1.5)),
            thickness_mm=float(rng.uniform(0.2, 2.0)),
        ))
    return LayerStack(tuple(layers), ambient_n=1.0)


class TestConservation:
    def test_roulette_off_tallies_sum_to_one(self):
        rng = np.random.default_rng(20240817)
        for trial in range(5):
            stack = random_finite_stack(rng)
            cfg = SimConfig(photon_count=10_000, seed=trial,
                            enable_roulette=False)
            res = simulate(stack, cfg)
            assert abs(res.tally_sum - 1.0) <= 1e-9, stack

    def test_spacer_layer_conserves(self):
        stack = LayerStack((
            Layer(0.5, 5.0, 0.7, 1.4, 0.5),
            Layer(0.0, 0.0, 0.0, 1.33, 0.2),
            Layer(1.0, 10.0, 0.8, 1.4, 1.0),
        ))
        res = simulate(stack, SimConfig(photon_count=5_000, seed=9,
                                        enable_roulette=False))
        assert abs(res.tally_sum - 1.0) <= 1e-9

    def test_spacer_top_layer_transmits_straight(self):
        # a lone matched-index spacer cannot absorb or turn photons back
        stack = LayerStack((Layer(0.0, 0.0, 0.0, 1.0, 5.0),))
        res = simulate(stack, SimConfig(photon_count=2_000, seed=1,
                                        enable_roulette=False))
        assert res.transmittance == 1.0
        assert res.r_diffuse == 0.0
        assert res.absorbed == 0.0

    def test_roulette_on_unbiased_over_seeds(self):
        stack = semi_infinite(1.0, 10.0, 0.8, n=1.4)
        sums = []
        for seed in range(30):
            res = simulate(stack, SimConfig(photon_count=1_000, seed=seed))
            sums.append(res.tally_sum)
        mean = np.mean(sums)
        se = np.std(sums, ddof=1) / math.sqrt(len(sums))
        assert abs(mean - 1.0) <= max(3.0 * se, 1e-12)


class TestBeerLambert:
    def test_pure_absorber_slab_transmits_exp_minus_one(self):
        stack = LayerStack((Layer(1.0, 0.0, 0.0, 1.0, 1.0),))
        n = 100_000
        res = simulate(stack, SimConfig(photon_count=n, seed=42,
                                        enable_roulette=False))
        expected = math.exp(-1.0)
        se = math.sqrt(expected * (1.0 - expected) / n)
        assert abs(res.transmittance - expected) <= 3.0 * se
        # nothing scatters and indices match, so no diffuse return path
        assert res.r_specular == 0.0
        assert res.r_diffuse == 0.0
        assert abs(res.absorbed - (1.0 - res.transmittance)) <= 1e-12

    def test_doubling_thickness_squares_transmittance(self):
        n = 200_000
        t = []
        for d in (0.5, 1.0):
            stack = LayerStack((Layer(1.0, 0.0, 0.0, 1.0, d),))
            res = simulate(stack, SimConfig(photon_count=n, seed=7,
                                            enable_roulette=False))
            t.append(res.transmittance)
        # T(2d) = T(d)^2 for a ballistic absorber
        se = 3.0 * math.sqrt(0.25 / n)
        assert abs(t[1] - t[0] ** 2) <= 2.0 * se


class TestLosslessMedium:
    def test_semi_infinite_returns_all_weight(self):
        stack = semi_infinite(0.0, 10.0, 0.9)
        res = simulate(stack, SimConfig(photon_count=20_000, seed=3))
        # with nothing absorbing and no path out but the top, every
        # photon's weight comes back exactly
        assert res.r_diffuse == 1.0
        assert res.r_diffuse_stderr == 0.0
        assert res.absorbed == 0.0
        assert res.transmittance == 0.0

    def test_lossless_slab_splits_between_faces(self):
        stack = LayerStack((Layer(0.0, 5.0, 0.5, 1.0, 1.0),))
        res = simulate(stack, SimConfig(photon_count=20_000, seed=5,
                                        enable_roulette=False))
        assert abs(res.r_diffuse + res.transmittance - 1.0) <= 1e-9
        assert res.absorbed == 0.0
        assert res.r_diffuse > 0.1
        assert res.transmittance > 0.1

    def test_mismatched_ambient_still_conserves(self):
        stack = semi_infinite(0.0, 10.0, 0.9, n=1.4)
        res = simulate(stack, SimConfig(photon_count=5_000, seed=11))
        assert abs(res.tally_sum - 1.0) <= 1e-9
        assert res.r_specular == pytest.approx(
            specular_reflectance(1.0, 1.4), abs=1e-15)


class TestStatistics:
    def test_stderr_shrinks_as_root_n(self):
        stack = semi_infinite(2.0, 5.0, 0.8, n=1.4)
        res_small = simulate(stack, SimConfig(photon_count=10_000, seed=21))
        res_large = simulate(stack, SimConfig(photon_count=1_000_000,
                                              seed=22))
        ratio = res_small.r_diffuse_stderr / res_large.r_diffuse_stderr
        assert abs(ratio - 10.0) <= 2.0

    def test_stderr_positive_for_stochastic_run(self):
        res = simulate(semi_infinite(1.0, 10.0, 0.8, n=1.4),
                       SimConfig(photon_count=2_000, seed=1))
        assert res.r_diffuse_stderr > 0.0

    def test_monotone_in_absorption(self):
        values = []
        for mu_a in (0.05, 0.5, 2.0):
            res = simulate(semi_infinite(mu_a, 10.0, 0.8, n=1.4),
                           SimConfig(photon_count=20_000, seed=31))
            values.append((res.r_diffuse, res.r_diffuse_stderr))
        for (lo_v, lo_e), (hi_v, hi_e) in zip(values, values[1:]):
            margin = 3.0 * math.hypot(lo_e, hi_e)
            assert hi_v <= lo_v + margin

    def test_monotone_in_scattering(self):
        values = []
        for mu_s in (2.0, 10.0, 40.0):
            res = simulate(semi_infinite(0.5, mu_s, 0.8, n=1.4),
                           SimConfig(photon_count=20_000, seed=37))
            values.append((res.r_diffuse, res.r_diffuse_stderr))
        for (lo_v, lo_e), (hi_v, hi_e) in zip(values, values[1:]):
            margin = 3.0 * math.hypot(lo_e, hi_e)
            assert hi_v >= lo_v - margin


class TestDeterminism:
    def test_bit_identical_across_worker_counts(self):
        stack = LayerStack((Layer(0.5, 8.0, 0.8, 1.4, 0.3),
                            Layer(1.2, 15.0, 0.9, 1.37, 2.0)))
        cfg = SimConfig(photon_count=15_000, seed=77)
        results = [simulate(stack, cfg, workers=w) for w in (1, 2, 8)]
        for other in results[1:]:
            assert other == results[0]

    def test_repeat_run_identical(self):
        stack = semi_infinite(1.0, 10.0, 0.8, n=1.4)
        cfg = SimConfig(photon_count=5_000, seed=123)
        assert simulate(stack, cfg) == simulate(stack, cfg)

    def test_seed_changes_result(self):
        stack = semi_infinite(1.0, 10.0, 0.8, n=1.4)
        a = simulate(stack, SimConfig(photon_count=5_000, seed=1))
        b = simulate(stack, SimConfig(photon_count=5_000, seed=2))
        assert a.r_diffuse != b.r_diffuse

    def test_short_final_batch_handled(self):
        stack = semi_infinite(1.0, 10.0, 0.8, n=1.4)
        res = simulate(stack, SimConfig(photon_count=1_000, seed=5,
                                        batch_size=300,
                                        enable_roulette=False))
        assert res.photons == 1_000
        assert abs(res.tally_sum - 1.0) <= 1e-9

    def test_result_echoes_inputs(self):
        res = simulate(semi_infinite(1.0, 5.0, 0.5),
                       SimConfig(photon_count=100, seed=99))
        assert res.photons == 100
        assert res.seed == 99
