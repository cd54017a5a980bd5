"""Exponential-polynomial sums G(t) = sum_j P_j(t) * exp(mu_j * t).

Tissue curves under a polyexponential input are such sums with affine P_j.
This module expands a region into that form, canonicalizes sums so two of
them can be compared term by term, and fits coefficients over a fixed
exponent set by linear least squares (the interpolation step behind the
uniqueness argument: with 2*sum(m_j) <= T samples the coefficients are unique).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import qr, solve_triangular

from tissuekinetics.errors import IllConditioned, InsufficientSamples, InvalidParameter
from tissuekinetics.model_core import (
    KineticParams,
    PolyexpInput,
    RESONANCE_TOL,
    compute_alphas,
    is_resonant,
)

# same scaled rule as the resonance snap in model_core
EXPONENT_MERGE_TOL = RESONANCE_TOL
DEFAULT_COEFF_TOL = 1e-12
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class ExpPolyTerm:
    """(c_0 + c_1*t + ... + c_{m-1}*t^{m-1}) * exp(exponent * t)."""

    exponent: float
    coeffs: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "exponent", float(self.exponent))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.coeffs:
            raise InvalidParameter("A term needs at least one coefficient !")

    @property
    def multiplicity(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True)
class ExpPolySum:
    terms: Tuple[ExpPolyTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def exponents(self) -> NDArray[np.float64]:
        return np.array([term.exponent for term in self.terms])

    def __len__(self) -> int:
        return len(self.terms)

    def __call__(self, t: ArrayLike) -> NDArray[np.float64]:
        return eval_sum(self, t)


@dataclass(frozen=True)
class AttenuationBiexp:
    """f(t) = a*exp(b*t) + (1 - a)*exp(c*t); f(0) = 1 by construction."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidParameter(f"Attenuation '{name}' must be finite, got {value} !")
            object.__setattr__(self, name, value)
        if self.b == self.c:
            raise InvalidParameter(f"Attenuation rates must differ, b = c = {self.b} !")

    def canonical(self) -> AttenuationBiexp:
        """Same function with b > c."""
        if self.b > self.c:
            return self
        return AttenuationBiexp(a=1.0 - self.a, b=self.c, c=self.b)

    def __call__(self, t: ArrayLike) -> NDArray[np.float64]:
        return eval_attenuation(self, t)


def eval_sum(sum_: ExpPolySum, t: ArrayLike) -> NDArray[np.float64]:
    t = np.asarray(t, dtype=float)
    total = np.zeros_like(t)
    for term in sum_.terms:
        # coeffs are lowest order first; polyval wants highest first
        total = total + np.polyval(term.coeffs[::-1], t) * np.exp(term.exponent * t)
    return total


def canonicalize(sum_: ExpPolySum, coeff_tol: float = DEFAULT_COEFF_TOL) -> ExpPolySum:
    """Merge near-equal exponents, drop negligible coefficients, sort descending.

    An exponent is merged onto the largest exponent of its group when it lies
    within EXPONENT_MERGE_TOL * max(1, |largest|) of it, the test
    ``is_resonant`` uses. Coefficients with magnitude <= coeff_tol times the
    largest coefficient magnitude are zeroed; trailing zero coefficients and
    all-zero terms are dropped. The operation is idempotent.
    """

    ordered = sorted(sum_.terms, key=lambda term: term.exponent, reverse=True)
    groups: list = []
    for term in ordered:
        if groups and is_resonant(term.exponent, groups[-1][0], EXPONENT_MERGE_TOL):
            groups[-1][1].append(term)
        else:
            groups.append((term.exponent, [term]))

    merged = []
    for exponent, members in groups:
        width = max(member.multiplicity for member in members)
        coeffs = np.zeros(width)
        for member in members:
            coeffs[: member.multiplicity] += member.coeffs
        merged.append((exponent, coeffs))

    largest = max((np.max(np.abs(c)) for _, c in merged), default=0.0)
    threshold = coeff_tol * largest
    terms = []
    for exponent, coeffs in merged:
        coeffs = np.where(np.abs(coeffs) <= threshold, 0.0, coeffs)
        nonzero = np.flatnonzero(coeffs)
        if nonzero.size == 0:
            continue
        terms.append(ExpPolyTerm(exponent, tuple(coeffs[: nonzero[-1] + 1])))
    return ExpPolySum(tuple(terms))


def expand_configuration(params: KineticParams, input: PolyexpInput) -> ExpPolySum:
    """Symbolic exponential-polynomial form of the closed-form tissue curve.

    Non-resonant input terms contribute
    K1*lambda_j*(mu_j + k3 + k4) / ((mu_j - alpha1)*(mu_j - alpha2)) * exp(mu_j*t);
    the eigenvalues contribute exp(alpha*t) terms, and resonant input terms
    (mu_j == alpha within the resonance tolerance) contribute t*exp(alpha*t).

    Raises
    ------
    DegenerateParams
        eigenvalues coincide

    """

    alphas = compute_alphas(params)
    a1, a2 = alphas.alpha1, alphas.alpha2
    K1, k2 = params.K1, params.k2
    weight1 = K1 * (a2 + k2) / (a2 - a1)
    weight2 = K1 * (a1 + k2) / (a2 - a1)

    terms = []
    exp_a1 = 0.0
    exp_a2 = 0.0
    res_a1 = 0.0
    res_a2 = 0.0
    for lam, mu in input.terms:
        on_a1 = is_resonant(mu, a1)
        on_a2 = is_resonant(mu, a2)
        coeff = 0.0
        if on_a1:
            res_a1 += lam
        else:
            coeff += weight1 * lam / (mu - a1)
            exp_a1 -= lam / (mu - a1)
        if on_a2:
            res_a2 += lam
        else:
            coeff -= weight2 * lam / (mu - a2)
            exp_a2 += lam / (mu - a2)
        if not (on_a1 or on_a2):
            coeff = K1 * lam * (mu + params.k3 + params.k4) / ((mu - a1) * (mu - a2))
        # a resonant term lands on its eigenvalue so canonicalize merges it there
        exponent = a1 if on_a1 else a2 if on_a2 else mu
        terms.append(ExpPolyTerm(exponent, (coeff,)))

    terms.append(ExpPolyTerm(a1, (weight1 * exp_a1, weight1 * res_a1)))
    terms.append(ExpPolyTerm(a2, (weight2 * exp_a2, -weight2 * res_a2)))
    return canonicalize(ExpPolySum(tuple(terms)), coeff_tol=0.0)


def sample_count_ok(multiplicities: Sequence[int], T: int) -> bool:
    """True iff 2 * sum(m_j) <= T."""
    return 2 * sum(multiplicities) <= T


def _basis_matrix(
    times: NDArray, exponents: Sequence[float], multiplicities: Sequence[int]
) -> NDArray:
    columns = []
    for exponent, multiplicity in zip(exponents, multiplicities):
        decay = np.exp(exponent * times)
        for power in range(multiplicity):
            columns.append(times**power * decay)
    return np.column_stack(columns)


def fit_coefficients_given_exponents(
    times: ArrayLike,
    values: ArrayLike,
    exponents: Sequence[float],
    multiplicities: Iterable[int] | None = None,
) -> ExpPolySum:
    """Least-squares coefficients over the basis {t^k exp(mu_j t) : k < m_j}.

    Parameters
    ----------
    times : array
        pairwise distinct sample times
    values : array
        samples s_l
    exponents : sequence
        exponent set mu_j
    multiplicities : Optional[sequence]
        m_j per exponent, default all 1

    Returns
    -------
    ExpPolySum
        one term per exponent in the given order, not canonicalized, so
        spurious coefficients stay visible

    Raises
    ------
    InsufficientSamples
        2 * sum(m_j) > T
    IllConditioned
        condition number of the column-equilibrated basis above 1e12

    """

    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    exponents = [float(e) for e in exponents]
    multiplicities = [1] * len(exponents) if multiplicities is None else [int(m) for m in multiplicities]
    if len(multiplicities) != len(exponents):
        raise InvalidParameter(
            f"{len(exponents)} exponents but {len(multiplicities)} multiplicities !"
        )
    if times.shape != values.shape:
        raise InvalidParameter(f"{times.size} times but {values.size} values !")
    if np.unique(times).size != times.size:
        raise InvalidParameter("Sample times must be pairwise distinct !")
    if not sample_count_ok(multiplicities, times.size):
        raise InsufficientSamples(
            f"2*sum(m)={2 * sum(multiplicities)} exceeds the {times.size} available samples !"
        )

    basis = _basis_matrix(times, exponents, multiplicities)
    norms = np.linalg.norm(basis, axis=0)
    norms[norms == 0] = 1.0
    scaled = basis / norms
    condition = float(np.linalg.cond(scaled))
    if not condition <= CONDITION_LIMIT:
        raise IllConditioned(
            f"Exponential basis condition number {condition:.3e} exceeds {CONDITION_LIMIT:.0e} !",
            condition,
        )

    q, r = qr(scaled, mode="economic")
    solution = solve_triangular(r, q.T @ values) / norms

    terms = []
    offset = 0
    for exponent, multiplicity in zip(exponents, multiplicities):
        terms.append(ExpPolyTerm(exponent, tuple(solution[offset : offset + multiplicity])))
        offset += multiplicity
    return ExpPolySum(tuple(terms))


def eval_attenuation(f: AttenuationBiexp, t: ArrayLike) -> NDArray[np.float64]:
    t = np.asarray(t, dtype=float)
    return f.a * np.exp(f.b * t) + (1.0 - f.a) * np.exp(f.c * t)
