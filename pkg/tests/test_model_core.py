from __future__ import annotations

import logging

import numpy as np
import pandas as pd
import pytest

from tissuekinetics.errors import (
    DegenerateParams,
    InvalidParameter,
    InvalidWholeBlood,
    MissingWholeBlood,
    UnknownRegion,
)
from tissuekinetics.identifiability import sample_random_config
from tissuekinetics.model_core import (
    Configuration,
    KineticParams,
    MixingModel,
    PolyexpInput,
    TacTable,
    compute_alphas,
    eval_compartments_closed_form,
    eval_cp,
    eval_cpet,
    eval_ct_closed_form,
    eval_ct_convolution,
    is_resonant,
    simulate_tacs,
)
from tissuekinetics.oracle import integrate_system, sample_oracle

from .util import Case, log_grid, small_config


@pytest.fixture(scope="module")
def reference_params() -> KineticParams:
    return KineticParams(K1=0.5, k2=0.4, k3=0.3, k4=0.1)


@pytest.fixture(scope="module")
def reference_input() -> PolyexpInput:
    return PolyexpInput.from_arrays([1.0, 0.5, -0.2, 0.1], [-0.05, -0.3, -1.0, -3.0])


@pytest.fixture(scope="module")
def grid_0_60() -> np.ndarray:
    return np.linspace(0.0, 60.0, 61)


def _relative(closed, reference):
    return np.max(np.abs(closed - reference) / np.maximum(1.0, np.abs(reference)))


alpha_test_cases = [
    Case((1.0, 3.0, 0.0, 1.0), (-1.0, -3.0)),
    Case((1.0, 0.5, 0.25, 0.5), (-0.25, -1.0)),
    Case((1.0, 0.4, 0.3, 0.0), (0.0, -0.7)),
]


class TestComputeAlphas:
    @pytest.mark.parametrize("test_case", alpha_test_cases, ids=lambda tc: tc.id)
    def test_output(self, test_case):
        alphas = compute_alphas(KineticParams(*test_case.val))
        assert alphas.alpha1 == pytest.approx(test_case.expected_result[0], abs=1e-15)
        assert alphas.alpha2 == pytest.approx(test_case.expected_result[1], abs=1e-15)

    def test_identities_random_draws(self):
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            k2, k3, k4 = np.exp(rng.uniform(np.log(1e-3), np.log(5.0), size=3))
            alphas = compute_alphas(KineticParams(1.0, k2, k3, k4))
            assert abs(alphas.alpha1 + alphas.alpha2 + k2 + k3 + k4) <= 1e-10
            assert abs(alphas.alpha1 * alphas.alpha2 - k2 * k4) <= 1e-10 * max(1.0, k2 * k4)
            assert alphas.alpha2 < -k2 < alphas.alpha1 < 0

    def test_degenerate(self):
        params = KineticParams(1.0, 0.5, 0.0, 0.5)
        assert params.is_degenerate
        with pytest.raises(DegenerateParams):
            compute_alphas(params)

    def test_degenerate_is_value_error(self):
        with pytest.raises(ValueError):
            eval_ct_closed_form(
                KineticParams(1.0, 0.5, 0.0, 0.5), PolyexpInput(((1.0, -0.1),)), [1.0]
            )


class TestKineticParams:
    @pytest.mark.parametrize("bad", [(-0.1, 0.1, 0.1, 0.1), (0.1, np.nan, 0.1, 0.1), (0.1, 0.1, np.inf, 0.1)])
    def test_invalid(self, bad):
        with pytest.raises(InvalidParameter):
            KineticParams(*bad)

    def test_k34(self, reference_params):
        assert reference_params.k34 == pytest.approx(0.4)


class TestPolyexpInput:
    def test_sorted_descending(self):
        cp = PolyexpInput.from_arrays([1.0, 2.0], [-3.0, -1.0])
        assert cp.terms == ((2.0, -1.0), (1.0, -3.0))

    @pytest.mark.parametrize(
        "lambdas,mus",
        [([], []), ([0.0], [-1.0]), ([1.0, 2.0], [-1.0, -1.0]), ([1.0], [np.nan]), ([1.0, 2.0], [-1.0])],
    )
    def test_invalid(self, lambdas, mus):
        with pytest.raises(InvalidParameter):
            PolyexpInput.from_arrays(lambdas, mus)

    def test_eval_cp(self):
        cp = PolyexpInput.from_arrays([2.0, 3.0], [-0.5, -2.0])
        t = np.array([0.0, 1.0, 4.0])
        np.testing.assert_allclose(eval_cp(cp, t), 2.0 * np.exp(-0.5 * t) + 3.0 * np.exp(-2.0 * t), rtol=1e-15)
        assert eval_cp(cp, 0.0) == pytest.approx(5.0)


class TestConfiguration:
    def test_duplicate_region(self, reference_params, reference_input):
        with pytest.raises(InvalidParameter):
            Configuration((("a", reference_params), ("a", reference_params)), reference_input)

    def test_unknown_region(self):
        with pytest.raises(UnknownRegion):
            small_config().params("missing")

    def test_unknown_region_is_key_error(self):
        with pytest.raises(KeyError):
            small_config().params("missing")

    def test_gauge_roundtrip(self):
        config = small_config()
        back = config.gauge_transform(3.0).rescaled(3.0)
        for rid in config.region_ids:
            assert back.params(rid).K1 == pytest.approx(config.params(rid).K1, rel=1e-15)
        np.testing.assert_allclose(back.input.lambdas, config.input.lambdas, rtol=1e-15)

    @pytest.mark.parametrize("factor", [0.0, np.inf])
    def test_gauge_invalid(self, factor):
        with pytest.raises(InvalidParameter):
            small_config().gauge_transform(factor)


class TestClosedForm:
    def test_matches_oracle(self, reference_params, reference_input, grid_0_60):
        closed = eval_ct_closed_form(reference_params, reference_input, grid_0_60)
        oracle = sample_oracle(reference_params, reference_input, grid_0_60, 1e-3)
        assert _relative(closed, oracle) <= 1e-6

    def test_resonant_matches_oracle(self, reference_params, grid_0_60):
        alpha1 = compute_alphas(reference_params).alpha1
        cp = PolyexpInput.from_arrays([1.0, 0.5, -0.2, 0.1], [alpha1, -0.3, -1.0, -3.0])
        assert is_resonant(cp.mus[0], alpha1)
        closed = eval_ct_closed_form(reference_params, cp, grid_0_60)
        oracle = sample_oracle(reference_params, cp, grid_0_60, 1e-3)
        assert _relative(closed, oracle) <= 1e-6

    @pytest.mark.parametrize("offset", [1e-8, 5e-7, 1e-5])
    def test_near_resonant_continuous(self, reference_params, offset):
        alpha1 = compute_alphas(reference_params).alpha1
        t = log_grid(0.1, 60.0, 20)
        exact = eval_ct_closed_form(reference_params, PolyexpInput(((1.0, alpha1),)), t)
        shifted = eval_ct_closed_form(
            reference_params, PolyexpInput(((1.0, alpha1 * (1.0 + offset)),)), t
        )
        # response is Lipschitz in mu with constant below 100 on this grid
        assert _relative(shifted, exact) <= 100.0 * offset * abs(alpha1) + 1e-12

    def test_gauge_invariance(self, reference_params, reference_input, grid_0_60):
        base = eval_ct_closed_form(reference_params, reference_input, grid_0_60)
        for c in (0.1, 2.5, 7.0):
            scaled = eval_ct_closed_form(
                reference_params.with_K1(reference_params.K1 / c), reference_input.scaled(c), grid_0_60
            )
            np.testing.assert_allclose(scaled, base, rtol=1e-12, atol=1e-14)

    def test_zero_K1(self, reference_input, grid_0_60):
        params = KineticParams(0.0, 0.4, 0.3, 0.1)
        assert np.all(eval_ct_closed_form(params, reference_input, grid_0_60) == 0.0)

    def test_starts_at_zero(self, reference_params, reference_input):
        assert eval_ct_closed_form(reference_params, reference_input, 0.0) == 0.0

    def test_scalar_shape(self, reference_params, reference_input):
        assert np.shape(eval_ct_closed_form(reference_params, reference_input, 5.0)) == ()

    def test_compartments_sum(self, reference_params, reference_input, grid_0_60):
        free, bound = eval_compartments_closed_form(reference_params, reference_input, grid_0_60)
        total = eval_ct_closed_form(reference_params, reference_input, grid_0_60)
        np.testing.assert_allclose(free + bound, total, rtol=1e-12, atol=1e-14)

    def test_compartments_match_oracle(self, reference_params, reference_input, grid_0_60):
        free, bound = eval_compartments_closed_form(reference_params, reference_input, grid_0_60)
        trajectory = integrate_system(reference_params, reference_input, 60.0, 1e-3).at(grid_0_60)
        assert _relative(free, trajectory["cf"]) <= 1e-6
        assert _relative(bound, trajectory["cb"]) <= 1e-6

    def test_irreversible_limit(self, reference_input):
        t = np.linspace(0.0, 60.0, 31)
        nearly = eval_ct_closed_form(KineticParams(0.5, 0.4, 0.3, 1e-9), reference_input, t)
        irreversible = eval_ct_convolution(KineticParams(0.5, 0.4, 0.3, 0.0), reference_input, t)
        assert _relative(nearly, irreversible) <= 1e-6

    def test_random_configurations_match_oracle(self, grid_0_60):
        for seed in range(5):
            config = sample_random_config(seed, 1, 4)
            params = config.regions[0][1]
            closed = eval_ct_closed_form(params, config.input, grid_0_60)
            oracle = sample_oracle(params, config.input, grid_0_60, 1e-3)
            assert _relative(closed, oracle) <= 1e-6

    @pytest.mark.slow
    def test_hundred_configurations_with_resonance(self, grid_0_60):
        resonant = 0
        for seed in range(100):
            config = sample_random_config(seed, 1, 4)
            params = config.regions[0][1]
            cp = config.input
            if seed % 10 == 0:
                alpha1 = compute_alphas(params).alpha1
                terms = list(cp.terms)
                terms[0] = (terms[0][0], alpha1)
                cp = PolyexpInput(tuple(terms))
                assert any(is_resonant(mu, alpha1) for mu in cp.mus)
                resonant += 1
            closed = eval_ct_closed_form(params, cp, grid_0_60)
            oracle = sample_oracle(params, cp, grid_0_60, 1e-3)
            assert _relative(closed, oracle) <= 1e-6, f"seed {seed}"
        assert resonant >= 10

    linearity_cases = [Case(0.0, 0.0), Case(1.0, 1.0), Case(2.5, 2.5)]

    @pytest.mark.parametrize("test_case", linearity_cases, ids=lambda tc: tc.id)
    def test_linear_in_K1(self, reference_params, reference_input, grid_0_60, test_case):
        base = eval_ct_closed_form(reference_params, reference_input, grid_0_60)
        scaled = eval_ct_closed_form(
            reference_params.with_K1(test_case.val * reference_params.K1), reference_input, grid_0_60
        )
        np.testing.assert_allclose(scaled, test_case.expected_result * base, rtol=1e-13, atol=1e-15)


class TestConvolution:
    def test_polyexp_input_matches_closed_form(self, reference_params, reference_input):
        t = np.linspace(0.0, 60.0, 13)
        np.testing.assert_allclose(
            eval_ct_convolution(reference_params, reference_input, t),
            eval_ct_closed_form(reference_params, reference_input, t),
            rtol=1e-8,
            atol=1e-10,
        )

    def test_gamma_input_matches_oracle(self, reference_params):
        def cp(t):
            t = np.asarray(t, dtype=float)
            return t * np.exp(-t)

        t = np.linspace(0.0, 30.0, 16)
        convolved = eval_ct_convolution(reference_params, cp, t)
        oracle = sample_oracle(reference_params, cp, t, 1e-3)
        assert _relative(convolved, oracle) <= 1e-6

    def test_at_zero(self, reference_params, reference_input):
        assert eval_ct_convolution(reference_params, reference_input, [0.0])[0] == 0.0


class TestTacTable:
    def test_shape_mismatch(self):
        with pytest.raises(InvalidParameter):
            TacTable(np.array([1.0, 2.0]), {"a": np.array([1.0])})

    def test_non_finite(self):
        with pytest.raises(InvalidParameter):
            TacTable(np.array([1.0, 2.0]), {"a": np.array([1.0, np.nan])})

    def test_invalid_wb(self):
        with pytest.raises(InvalidWholeBlood):
            TacTable(np.array([1.0, 2.0]), {"a": np.ones(2)}, (np.array([1.0, 1.0]), np.ones(2)))
        with pytest.raises(InvalidWholeBlood):
            TacTable(np.array([1.0, 2.0]), {"a": np.ones(2)}, (np.array([1.0, 2.0]), np.zeros(2)))

    def test_read_only(self):
        tacs = TacTable(np.array([1.0, 2.0]), {"a": np.ones(2)})
        with pytest.raises(ValueError):
            tacs.curves["a"][0] = 5.0

    def test_frame_roundtrip(self):
        tacs = simulate_tacs(small_config(), log_grid())
        back = TacTable.from_frame(tacs.to_frame())
        assert back.region_ids == tacs.region_ids
        np.testing.assert_array_equal(back.values, tacs.values)

    def test_frame_mismatched_grids(self):
        frame = pd.DataFrame(
            {"region_id": ["a", "a", "b", "b"], "time_min": [1.0, 2.0, 1.0, 3.0], "value": [0.0] * 4}
        )
        with pytest.raises(InvalidParameter):
            TacTable.from_frame(frame)


class TestMixing:
    @pytest.mark.parametrize("vb", [-0.1, 1.0, 1.5])
    def test_invalid_vb(self, vb):
        with pytest.raises(InvalidParameter):
            MixingModel(vb)

    def test_mixing_without_wb(self):
        with pytest.raises(MissingWholeBlood):
            simulate_tacs(small_config(), log_grid(), MixingModel(0.05))

    def test_zero_vb_bit_for_bit(self):
        grid = log_grid()
        cwb = 3.0 * np.exp(-0.1 * grid)
        pure = simulate_tacs(small_config(), grid)
        mixed = simulate_tacs(small_config(), grid, MixingModel(0.0), cwb)
        np.testing.assert_array_equal(mixed.values, pure.values)

    def test_affine_combination(self):
        grid = log_grid()
        cwb = 3.0 * np.exp(-0.1 * grid)
        pure = simulate_tacs(small_config(), grid)
        mixed = simulate_tacs(small_config(), grid, MixingModel(0.25), lambda t: 3.0 * np.exp(-0.1 * t))
        np.testing.assert_allclose(mixed.values, 0.75 * pure.values + 0.25 * cwb, rtol=1e-15, atol=1e-15)
        assert mixed.wb_samples is not None

    def test_eval_cpet(self):
        assert eval_cpet(2.0, 4.0, MixingModel(0.5)) == pytest.approx(3.0)


class TestSimulate:
    def test_shape(self):
        tacs = simulate_tacs(small_config(5), log_grid(count=16))
        assert tacs.values.shape == (5, 16)
        assert tacs.region_ids == ("r1", "r2", "r3", "r4", "r5")

    def test_wb_length_mismatch(self):
        with pytest.raises(MissingWholeBlood):
            simulate_tacs(small_config(), log_grid(), MixingModel(0.1), np.ones(3))

    def test_zero_wb_samples_left_out(self, caplog):
        grid = log_grid(count=8)
        cwb = np.array([0.0, 1.0, 2.0, 3.0, 0.0, 2.5, 1.5, 0.5])
        with caplog.at_level(logging.WARNING, logger="tissuekinetics.model_core"):
            tacs = simulate_tacs(small_config(), grid, MixingModel(0.1), cwb)
        times, values = tacs.wb_samples
        np.testing.assert_array_equal(times, grid[[1, 2, 3, 5, 6, 7]])
        assert values.tolist() == [1.0, 2.0, 3.0, 2.5, 1.5, 0.5]
        assert "zero at 2 of 8 times" in caplog.text

    def test_all_zero_wb(self):
        tacs = simulate_tacs(small_config(), log_grid(count=8), MixingModel(0.1), np.zeros(8))
        assert tacs.wb_samples is None

    def test_gauge_invariance(self):
        grid = log_grid()
        base = simulate_tacs(small_config(), grid)
        scaled = simulate_tacs(small_config().gauge_transform(4.0), grid)
        np.testing.assert_allclose(scaled.values, base.values, rtol=1e-12, atol=1e-15)
