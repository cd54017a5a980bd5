from __future__ import annotations

import numpy as np
import pytest

from tissuekinetics.errors import IllConditioned, InsufficientSamples, InvalidParameter
from tissuekinetics.model_core import (
    KineticParams,
    PolyexpInput,
    compute_alphas,
    eval_ct_closed_form,
    is_resonant,
)
from tissuekinetics.polyexp import (
    AttenuationBiexp,
    ExpPolySum,
    ExpPolyTerm,
    canonicalize,
    eval_sum,
    expand_configuration,
    fit_coefficients_given_exponents,
    sample_count_ok,
)

from .util import Case


@pytest.fixture(scope="module")
def params() -> KineticParams:
    return KineticParams(K1=0.5, k2=0.4, k3=0.3, k4=0.1)


@pytest.fixture(scope="module")
def cp() -> PolyexpInput:
    return PolyexpInput.from_arrays([1.0, 0.5, -0.2, 0.1], [-0.02, -0.25, -1.5, -5.0])


@pytest.fixture(scope="module")
def grid() -> np.ndarray:
    return np.geomspace(0.25, 60.0, 16)


def _coeffs(sum_: ExpPolySum) -> np.ndarray:
    return np.concatenate([term.coeffs for term in sum_.terms])


class TestExpPolySum:
    def test_eval_polynomial_term(self):
        sum_ = ExpPolySum((ExpPolyTerm(-1.0, (1.0, 2.0)), ExpPolyTerm(-0.5, (3.0,))))
        t = np.array([0.0, 1.0, 3.0])
        expected = (1.0 + 2.0 * t) * np.exp(-t) + 3.0 * np.exp(-0.5 * t)
        np.testing.assert_allclose(eval_sum(sum_, t), expected, rtol=1e-15)
        np.testing.assert_allclose(sum_(t), expected, rtol=1e-15)

    def test_empty_term(self):
        with pytest.raises(InvalidParameter):
            ExpPolyTerm(-1.0, ())

    def test_empty_sum(self):
        assert np.all(eval_sum(ExpPolySum(), [1.0, 2.0]) == 0.0)


class TestCanonicalize:
    def test_merge_sort_trim(self):
        sum_ = ExpPolySum(
            (
                ExpPolyTerm(-2.0, (1.0,)),
                ExpPolyTerm(-0.5, (2.0, 0.0)),
                ExpPolyTerm(-0.5 - 5e-10, (1.0, 4.0)),
                ExpPolyTerm(-1.0, (1e-14,)),
            )
        )
        canonical = canonicalize(sum_)
        assert canonical.exponents.tolist() == [-0.5, -2.0]
        assert canonical.terms[0].coeffs == (3.0, 4.0)
        assert canonical.terms[1].coeffs == (1.0,)

    def test_cancelling_terms_vanish(self):
        sum_ = ExpPolySum((ExpPolyTerm(-1.0, (1.0,)), ExpPolyTerm(-1.0, (-1.0,)), ExpPolyTerm(-3.0, (2.0,))))
        assert canonicalize(sum_).exponents.tolist() == [-3.0]

    def test_idempotent(self, params, cp):
        once = canonicalize(expand_configuration(params, cp))
        assert canonicalize(once) == once

    def test_distinct_exponents_kept(self):
        sum_ = ExpPolySum((ExpPolyTerm(-1.0, (1.0,)), ExpPolyTerm(-1.0 - 1e-6, (1.0,))))
        assert len(canonicalize(sum_)) == 2

    merge_cases = [
        Case((-0.5, -0.5 - 8e-10), 1),
        Case((-0.5, -0.5 - 2e-9), 2),
        Case((-4.0, -4.0 - 2e-9), 1),
        Case((-4.0, -4.0 - 5e-9), 2),
    ]

    @pytest.mark.parametrize("test_case", merge_cases, ids=lambda tc: tc.id)
    def test_merge_scales_like_resonance(self, test_case):
        upper, lower = test_case.val
        sum_ = ExpPolySum((ExpPolyTerm(upper, (1.0,)), ExpPolyTerm(lower, (1.0,))))
        assert len(canonicalize(sum_)) == test_case.expected_result
        assert (test_case.expected_result == 1) == is_resonant(lower, upper)


class TestExpandConfiguration:
    def test_matches_closed_form(self, params, cp):
        t = np.linspace(0.0, 60.0, 20)
        closed = eval_ct_closed_form(params, cp, t)
        expanded = expand_configuration(params, cp)(t)
        np.testing.assert_allclose(expanded, closed, rtol=1e-12, atol=1e-12 * np.max(np.abs(closed)))

    def test_exponent_set(self, params, cp):
        alphas = compute_alphas(params)
        expected = sorted(list(cp.mus) + [alphas.alpha1, alphas.alpha2], reverse=True)
        np.testing.assert_allclose(expand_configuration(params, cp).exponents, expected, rtol=1e-15)

    def test_resonant_term(self, params):
        alpha1 = compute_alphas(params).alpha1
        cp = PolyexpInput.from_arrays([1.0, 0.5, -0.2, 0.1], [alpha1, -0.25, -1.5, -5.0])
        expanded = expand_configuration(params, cp)
        resonant = [term for term in expanded.terms if term.exponent == alpha1]
        assert len(resonant) == 1
        assert resonant[0].multiplicity == 2
        assert resonant[0].coeffs[1] != 0.0

        t = np.linspace(0.0, 60.0, 20)
        closed = eval_ct_closed_form(params, cp, t)
        np.testing.assert_allclose(expanded(t), closed, rtol=1e-9, atol=1e-9 * np.max(np.abs(closed)))

    def test_zero_K1(self, cp):
        assert len(expand_configuration(KineticParams(0.0, 0.4, 0.3, 0.1), cp)) == 0

    def test_resonance_beyond_absolute_tolerance(self):
        # |alpha2| > 2, so a 2e-9 offset is resonant only under the scaled rule
        params = KineticParams(K1=1.0, k2=3.0, k3=0.5, k4=0.5)
        alpha2 = compute_alphas(params).alpha2
        mu = alpha2 + 2e-9
        assert abs(alpha2) > 2.0
        assert is_resonant(mu, alpha2)
        cp = PolyexpInput.from_arrays([1.0, 2.0], [-0.05, mu])

        expanded = expand_configuration(params, cp)
        assert len(expanded) == 3
        resonant = [term for term in expanded.terms if term.exponent == alpha2]
        assert len(resonant) == 1
        assert resonant[0].multiplicity == 2

        t = np.linspace(0.0, 60.0, 20)
        closed = eval_ct_closed_form(params, cp, t)
        np.testing.assert_allclose(expanded(t), closed, rtol=1e-6, atol=1e-6 * np.max(np.abs(closed)))


sample_count_cases = [
    Case(((1, 1, 1), 6), True),
    Case(((1, 1, 1), 5), False),
    Case(((2, 1), 6), True),
    Case(((2, 2), 7), False),
]


class TestSampleCount:
    @pytest.mark.parametrize("test_case", sample_count_cases, ids=lambda tc: tc.id)
    def test_output(self, test_case):
        multiplicities, T = test_case.val
        assert sample_count_ok(multiplicities, T) == test_case.expected_result


class TestFitCoefficients:
    def test_single_exponential(self):
        times = np.linspace(0.5, 8.0, 8)
        fitted = fit_coefficients_given_exponents(times, 3.0 * np.exp(-times), [-1.0, -2.0, -0.5, -0.1])
        assert fitted.exponents.tolist() == [-1.0, -2.0, -0.5, -0.1]
        assert fitted.terms[0].coeffs[0] == pytest.approx(3.0, rel=1e-8)
        for term in fitted.terms[1:]:
            assert abs(term.coeffs[0]) <= 1e-8

    def test_recovers_expansion(self, params, cp, grid):
        expanded = expand_configuration(params, cp)
        fitted = fit_coefficients_given_exponents(
            grid, expanded(grid), expanded.exponents, [term.multiplicity for term in expanded.terms]
        )
        np.testing.assert_allclose(_coeffs(fitted), _coeffs(expanded), rtol=1e-8)

    def test_recovers_resonant_expansion(self, params, grid):
        alpha1 = compute_alphas(params).alpha1
        cp = PolyexpInput.from_arrays([1.0, 0.5, -0.2], [alpha1, -0.25, -1.5])
        expanded = expand_configuration(params, cp)
        fitted = fit_coefficients_given_exponents(
            grid, expanded(grid), expanded.exponents, [term.multiplicity for term in expanded.terms]
        )
        np.testing.assert_allclose(_coeffs(fitted), _coeffs(expanded), rtol=1e-8)

    def test_spurious_coefficients_vanish(self, params, cp, grid):
        expanded = expand_configuration(params, cp)
        candidates = list(expanded.exponents) + [-3.0]
        fitted = fit_coefficients_given_exponents(grid, expanded(grid), candidates)
        scale = np.max(np.abs(_coeffs(expanded)))
        spurious = [term.coeffs[0] for term in fitted.terms if term.exponent == -3.0]
        assert len(spurious) == 1
        assert max(abs(c) for c in spurious) <= 1e-6 * scale

        canonical = canonicalize(fitted, coeff_tol=1e-6)
        np.testing.assert_allclose(canonical.exponents, expanded.exponents, rtol=1e-15)
        np.testing.assert_allclose(_coeffs(canonical), _coeffs(expanded), rtol=1e-6)

    def test_insufficient_samples(self):
        times = np.linspace(1.0, 5.0, 5)
        with pytest.raises(InsufficientSamples):
            fit_coefficients_given_exponents(times, np.exp(-times), [-1.0, -2.0, -3.0])

    def test_repeated_times(self):
        with pytest.raises(InvalidParameter):
            fit_coefficients_given_exponents([1.0, 1.0, 2.0, 3.0], np.ones(4), [-1.0])

    def test_multiplicity_mismatch(self):
        with pytest.raises(InvalidParameter):
            fit_coefficients_given_exponents(np.arange(1.0, 7.0), np.ones(6), [-1.0, -2.0], [1])

    def test_ill_conditioned(self):
        times = np.linspace(1.0, 10.0, 10)
        with pytest.raises(IllConditioned) as excinfo:
            fit_coefficients_given_exponents(times, np.exp(-times), [-1.0, -1.0 - 1e-13])
        assert excinfo.value.condition > 1e12


class TestAttenuation:
    def test_equal_rates(self):
        with pytest.raises(InvalidParameter):
            AttenuationBiexp(0.5, -0.1, -0.1)

    def test_canonical(self):
        f = AttenuationBiexp(0.4, -0.8, -0.05)
        canonical = f.canonical()
        assert (canonical.a, canonical.b, canonical.c) == pytest.approx((0.6, -0.05, -0.8))
        t = np.array([0.0, 1.0, 10.0])
        np.testing.assert_allclose(canonical(t), f(t), rtol=1e-15)

    def test_unit_at_zero(self):
        assert AttenuationBiexp(0.6, -0.05, -0.8)(0.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_sums_round_trip(self, grid, seed):
        bands = [(-0.03, -0.02), (-0.12, -0.08), (-0.5, -0.35), (-1.6, -1.2)]
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(len(bands), size=3, replace=False))
        spare = next(i for i in range(len(bands)) if i not in chosen)
        terms = []
        for index in chosen:
            lo, hi = bands[index]
            multiplicity = int(rng.integers(1, 3))
            signs = rng.choice([-1.0, 1.0], size=multiplicity)
            terms.append(ExpPolyTerm(rng.uniform(lo, hi), tuple(signs * rng.uniform(0.5, 2.0, size=multiplicity))))
        truth = canonicalize(ExpPolySum(tuple(terms)))
        multiplicities = [term.multiplicity for term in truth.terms]
        assert sample_count_ok(multiplicities + [1], grid.size)
        scale = np.max(np.abs(_coeffs(truth)))

        fitted = fit_coefficients_given_exponents(grid, truth(grid), truth.exponents, multiplicities)
        np.testing.assert_allclose(_coeffs(fitted), _coeffs(truth), rtol=1e-8, atol=1e-8 * scale)

        spurious_exponent = float(np.mean(bands[spare]))
        enlarged = fit_coefficients_given_exponents(
            grid, truth(grid), list(truth.exponents) + [spurious_exponent], multiplicities + [1]
        )
        assert abs(enlarged.terms[-1].coeffs[0]) <= 1e-8 * scale
        np.testing.assert_allclose(_coeffs(enlarged)[:-1], _coeffs(truth), rtol=1e-8, atol=1e-8 * scale)
