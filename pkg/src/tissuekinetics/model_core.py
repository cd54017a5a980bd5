"""Domain types and exact forward evaluation of the reversible two tissue compartment model.

Per region i the free (C_F) and bound (C_B) tissue concentrations follow

    dC_F/dt = K1*C_P - (k2 + k3)*C_F + k4*C_B
    dC_B/dt = k3*C_F - k4*C_B,          C_F(0) = C_B(0) = 0

and the measured tissue curve is C_T = C_F + C_B. With the eigenvalues
alpha1 > alpha2 of the system matrix,

    C_T(t) = K1/(alpha2 - alpha1) * [(alpha2 + k2) * I(alpha1)(t) - (alpha1 + k2) * I(alpha2)(t)]

where I(a)(t) = int_0^t exp(a*(t - s)) * C_P(s) ds. For a polyexponential input
C_P(t) = sum_j lambda_j * exp(mu_j * t) every I(a) is available in closed form.

Units: rates in 1/min, times in min, concentrations in arbitrary activity units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad

from tissuekinetics.errors import (
    DegenerateParams,
    InvalidParameter,
    InvalidWholeBlood,
    MissingWholeBlood,
    QuadratureFailure,
    UnknownRegion,
)
from tissuekinetics.utils import validate_grid

logger = logging.getLogger(__name__)

# |mu - alpha| <= RESONANCE_TOL * max(1, |alpha|) counts as mu == alpha.
RESONANCE_TOL = 1e-9
# Up to this distance the paired exponentials are evaluated through expm1.
NEAR_RESONANCE_TOL = 1e-6
DEFAULT_QUAD_TOL = 1e-10

Time = Union[float, ArrayLike]


@dataclass(frozen=True)
class KineticParams:
    """Rate constants of one region.

    Attributes
    ----------
    K1 : float
        plasma -> free transport (mL/cm^3/min)
    k2 : float
        free -> plasma (1/min)
    k3 : float
        free -> bound (1/min)
    k4 : float
        bound -> free (1/min)

    """

    K1: float
    k2: float
    k3: float
    k4: float

    def __post_init__(self):
        for name in ("K1", "k2", "k3", "k4"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise InvalidParameter(
                    f"'{name}' must be finite and non-negative, got {value} !"
                )
            object.__setattr__(self, name, value)

    @property
    def is_degenerate(self) -> bool:
        """True when (k2+k3+k4)^2 <= 4*k2*k4, i.e. the eigenvalues coincide."""
        return not _discriminant(self.k2, self.k3, self.k4) > 0

    @property
    def k34(self) -> float:
        return self.k3 + self.k4

    def with_K1(self, K1: float) -> KineticParams:
        return replace(self, K1=K1)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.K1, self.k2, self.k3, self.k4)


@dataclass(frozen=True)
class Alphas:
    """Eigenvalues of the tissue system matrix; alpha2 < alpha1."""

    alpha1: float
    alpha2: float
    k_half: float


@dataclass(frozen=True)
class PolyexpInput:
    """Arterial plasma input C_P(t) = sum_j lambda_j * exp(mu_j * t).

    Terms are stored as (lambda, mu) pairs in canonical order, mu strictly
    descending; construction sorts them.
    """

    terms: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        pairs = tuple((float(lam), float(mu)) for lam, mu in self.terms)
        if not pairs:
            raise InvalidParameter("Polyexponential input needs at least one term !")
        for lam, mu in pairs:
            if not (math.isfinite(lam) and math.isfinite(mu)):
                raise InvalidParameter(f"Input term ({lam}, {mu}) is not finite !")
            if lam == 0:
                raise InvalidParameter(f"Input amplitude for mu={mu} must be nonzero !")
        pairs = tuple(sorted(pairs, key=lambda pair: pair[1], reverse=True))
        for (_, upper), (_, lower) in zip(pairs, pairs[1:]):
            if upper == lower:
                raise InvalidParameter(f"Input exponents must be distinct, mu={upper} repeats !")
        object.__setattr__(self, "terms", pairs)

    @classmethod
    def from_arrays(cls, lambdas: ArrayLike, mus: ArrayLike) -> PolyexpInput:
        lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
        mus = np.atleast_1d(np.asarray(mus, dtype=float))
        if lambdas.shape != mus.shape:
            raise InvalidParameter(
                f"{lambdas.size} amplitudes but {mus.size} exponents !"
            )
        return cls(tuple(zip(lambdas.tolist(), mus.tolist())))

    @property
    def p(self) -> int:
        return len(self.terms)

    @property
    def lambdas(self) -> NDArray[np.float64]:
        return np.array([lam for lam, _ in self.terms])

    @property
    def mus(self) -> NDArray[np.float64]:
        return np.array([mu for _, mu in self.terms])

    def scaled(self, factor: float) -> PolyexpInput:
        """All amplitudes multiplied by ``factor``."""
        return PolyexpInput(tuple((lam * factor, mu) for lam, mu in self.terms))

    def __call__(self, t: Time) -> NDArray[np.float64]:
        return eval_cp(self, t)


@dataclass(frozen=True)
class Configuration:
    """n regions sharing one polyexponential input.

    Attributes
    ----------
    regions : tuple of (region_id, KineticParams)
        region order is preserved; ids are unique
    input : PolyexpInput
        arterial plasma input

    """

    regions: Tuple[Tuple[str, KineticParams], ...]
    input: PolyexpInput

    def __post_init__(self):
        regions = tuple((str(rid), params) for rid, params in self.regions)
        if not regions:
            raise InvalidParameter("Configuration needs at least one region !")
        seen = set()
        for rid, params in regions:
            if rid in seen:
                raise InvalidParameter(f"Region id '{rid}' is duplicated !")
            if not isinstance(params, KineticParams):
                raise InvalidParameter(f"Region '{rid}' does not hold KineticParams !")
            seen.add(rid)
        object.__setattr__(self, "regions", regions)

    @property
    def n(self) -> int:
        return len(self.regions)

    @property
    def p(self) -> int:
        return self.input.p

    @property
    def region_ids(self) -> Tuple[str, ...]:
        return tuple(rid for rid, _ in self.regions)

    def params(self, region_id: str) -> KineticParams:
        for rid, params in self.regions:
            if rid == region_id:
                return params
        raise UnknownRegion(f"Region - '{region_id}' - does not exist!")

    def with_input(self, new_input: PolyexpInput) -> Configuration:
        return Configuration(self.regions, new_input)

    def with_regions(self, regions: Iterable[Tuple[str, KineticParams]]) -> Configuration:
        return Configuration(tuple(regions), self.input)

    def gauge_transform(self, factor: float) -> Configuration:
        """Scale every lambda by ``factor`` and every K1 by 1/``factor``.

        Tissue curves are unchanged; this is the scale ambiguity left when only
        tissue curves are observed.
        """

        if factor == 0 or not math.isfinite(factor):
            raise InvalidParameter(f"Gauge factor must be finite and nonzero, got {factor} !")
        return Configuration(
            tuple((rid, params.with_K1(params.K1 / factor)) for rid, params in self.regions),
            self.input.scaled(factor),
        )

    def rescaled(self, zeta: float) -> Configuration:
        """Undo a fitted scale: lambda / zeta, K1 * zeta."""
        return self.gauge_transform(1.0 / zeta)


@dataclass(frozen=True, eq=False)
class TacTable:
    """Sampled time-activity curves on one explicit time grid.

    Attributes
    ----------
    time_grid : NDArray
        strictly increasing positive times t_1..t_T (min)
    curves : Mapping[str, NDArray]
        per region id, T concentration values
    wb_samples : Optional[tuple of (times, values)]
        whole-blood samples C_WB(s_l); times distinct, values nonzero

    """

    time_grid: NDArray[np.float64]
    curves: Mapping[str, NDArray[np.float64]]
    wb_samples: Optional[Tuple[NDArray[np.float64], NDArray[np.float64]]] = None

    def __post_init__(self):
        grid = _frozen(validate_grid(self.time_grid))
        curves = {}
        for rid, values in self.curves.items():
            values = np.asarray(values, dtype=float)
            if values.shape != grid.shape:
                raise InvalidParameter(
                    f"Curve '{rid}' has {values.size} values for {grid.size} time points !"
                )
            if not np.all(np.isfinite(values)):
                raise InvalidParameter(f"Curve '{rid}' contains non-finite values !")
            curves[str(rid)] = _frozen(values)
        if not curves:
            raise InvalidParameter("TacTable needs at least one curve !")
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "curves", curves)

        if self.wb_samples is not None:
            times, values = (np.asarray(x, dtype=float) for x in self.wb_samples)
            if times.shape != values.shape or times.ndim != 1:
                raise InvalidWholeBlood("Whole-blood times and values differ in length !")
            if np.unique(times).size != times.size:
                raise InvalidWholeBlood("Whole-blood sample times must be pairwise distinct !")
            if np.any(values == 0):
                raise InvalidWholeBlood("Whole-blood sample values must be nonzero !")
            object.__setattr__(self, "wb_samples", (_frozen(times), _frozen(values)))

    @property
    def T(self) -> int:
        return self.time_grid.size

    @property
    def region_ids(self) -> Tuple[str, ...]:
        return tuple(self.curves)

    @property
    def values(self) -> NDArray[np.float64]:
        """Curves stacked as an (n, T) matrix in region order."""
        return np.vstack([self.curves[rid] for rid in self.region_ids])

    @property
    def total_sum_squares(self) -> float:
        return float(np.sum(self.values**2))

    def to_frame(self) -> pd.DataFrame:
        """Long format with columns region_id, time_min, value."""
        return pd.DataFrame(
            {
                "region_id": np.repeat(self.region_ids, self.T),
                "time_min": np.tile(self.time_grid, len(self.curves)),
                "value": self.values.ravel(),
            }
        )

    def wb_frame(self) -> Optional[pd.DataFrame]:
        if self.wb_samples is None:
            return None
        times, values = self.wb_samples
        return pd.DataFrame({"time_min": times, "cwb": values})

    @classmethod
    def from_frame(
        cls, frame: pd.DataFrame, wb_frame: Optional[pd.DataFrame] = None
    ) -> TacTable:
        """Inverse of ``to_frame``; every region must be sampled on the same grid."""

        grid = None
        curves = {}
        for rid, group in frame.groupby("region_id", sort=False):
            group = group.sort_values("time_min")
            times = group["time_min"].to_numpy(dtype=float)
            if grid is None:
                grid = times
            elif times.shape != grid.shape or np.any(times != grid):
                raise InvalidParameter(f"Region '{rid}' is sampled on a different time grid !")
            curves[str(rid)] = group["value"].to_numpy(dtype=float)
        if grid is None:
            raise InvalidParameter("TAC frame has no rows !")

        wb_samples = None
        if wb_frame is not None:
            wb_samples = (
                wb_frame["time_min"].to_numpy(dtype=float),
                wb_frame["cwb"].to_numpy(dtype=float),
            )
        return cls(grid, curves, wb_samples)


@dataclass(frozen=True)
class MixingModel:
    """Fractional blood volume: C_PET = (1 - vb)*C_T + vb*C_WB with 0 <= vb < 1."""

    vb: float = field(default=0.0)

    def __post_init__(self):
        vb = float(self.vb)
        if not (0.0 <= vb < 1.0):
            raise InvalidParameter(f"Fractional blood volume must satisfy 0 <= vb < 1, got {vb} !")
        object.__setattr__(self, "vb", vb)


def _frozen(array: NDArray) -> NDArray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


def _discriminant(k2: float, k3: float, k4: float) -> float:
    # (k2+k3+k4)^2 - 4*k2*k4 written as a sum of non-negative terms
    return (k2 - k4) ** 2 + k3 * (k3 + 2.0 * (k2 + k4))


def compute_alphas(params: KineticParams) -> Alphas:
    """Roots of x^2 + (k2+k3+k4)*x + k2*k4 with alpha2 < alpha1.

    Parameters
    ----------
    params : KineticParams
        region rates

    Returns
    -------
    Alphas

    Raises
    ------
    DegenerateParams
        (k2+k3+k4)^2 <= 4*k2*k4 (equal roots)

    Examples
    --------
    >>> compute_alphas(KineticParams(1.0, 3.0, 0.0, 1.0))
    Alphas(alpha1=-1.0, alpha2=-3.0, k_half=2.0)

    """

    k2, k3, k4 = params.k2, params.k3, params.k4
    disc = _discriminant(k2, k3, k4)
    if not disc > 0:
        raise DegenerateParams(
            f"(k2+k3+k4)^2 <= 4*k2*k4 for k2={k2}, k3={k3}, k4={k4} - eigenvalues coincide !"
        )
    k_half = 0.5 * (k2 + k3 + k4)
    alpha2 = -k_half - 0.5 * math.sqrt(disc)
    # product form avoids cancellation in -k + sqrt(k^2 - k2*k4)
    alpha1 = (k2 * k4) / alpha2
    return Alphas(alpha1=alpha1, alpha2=alpha2, k_half=k_half)


def eval_cp(input: PolyexpInput, t: Time) -> NDArray[np.float64]:
    """C_P(t) = sum_j lambda_j * exp(mu_j * t); shape follows ``t``."""

    t = np.asarray(t, dtype=float)
    total = np.zeros_like(t)
    for lam, mu in input.terms:
        total = total + lam * np.exp(mu * t)
    return total


def is_resonant(mu: float, alpha: float, tol: float = RESONANCE_TOL) -> bool:
    return abs(mu - alpha) <= tol * max(1.0, abs(alpha))


def _response_integral(mu: float, a: float, t: NDArray) -> NDArray:
    """int_0^t exp(a*(t - s)) * exp(mu*s) ds."""

    delta = mu - a
    scale = max(1.0, abs(a))
    if abs(delta) <= RESONANCE_TOL * scale:
        return t * np.exp(a * t)
    if abs(delta) <= NEAR_RESONANCE_TOL * scale:
        return np.exp(a * t) * np.expm1(delta * t) / delta
    return (np.exp(mu * t) - np.exp(a * t)) / delta


def _convolved_input(input: PolyexpInput, a: float, t: NDArray) -> NDArray:
    total = np.zeros_like(t)
    for lam, mu in input.terms:
        total = total + lam * _response_integral(mu, a, t)
    return total


def _log_resonances(params: KineticParams, input: PolyexpInput, alphas: Alphas) -> None:
    if not logger.isEnabledFor(logging.DEBUG):
        return
    for mu in input.mus:
        for name, alpha in (("alpha1", alphas.alpha1), ("alpha2", alphas.alpha2)):
            distance = abs(mu - alpha) / max(1.0, abs(alpha))
            if distance <= NEAR_RESONANCE_TOL:
                branch = "resonant" if distance <= RESONANCE_TOL else "near-resonant"
                logger.debug(f"{branch} input exponent mu={mu} vs {name}={alpha} for {params}")


def eval_ct_closed_form(params: KineticParams, input: PolyexpInput, t: Time) -> NDArray[np.float64]:
    """Closed-form tissue curve C_T for a polyexponential input.

    Parameters
    ----------
    params : KineticParams
        non-degenerate region rates
    input : PolyexpInput
        arterial plasma input
    t : float or array
        times >= 0 (min)

    Returns
    -------
    NDArray
        C_T(t), same shape as ``t``

    Raises
    ------
    DegenerateParams
        eigenvalues coincide

    Notes
    -----
    An input exponent within RESONANCE_TOL of an eigenvalue contributes a
    t*exp(alpha*t) term. Inside NEAR_RESONANCE_TOL the pair
    exp(mu*t), exp(alpha*t) is combined through expm1 to avoid cancellation.

    """

    alphas = compute_alphas(params)
    t = np.asarray(t, dtype=float)
    if params.K1 == 0:
        return np.zeros_like(t)
    _log_resonances(params, input, alphas)

    a1, a2 = alphas.alpha1, alphas.alpha2
    weight1 = params.K1 * (a2 + params.k2) / (a2 - a1)
    weight2 = params.K1 * (a1 + params.k2) / (a2 - a1)
    return weight1 * _convolved_input(input, a1, t) - weight2 * _convolved_input(input, a2, t)


def eval_compartments_closed_form(
    params: KineticParams, input: PolyexpInput, t: Time
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Closed-form free and bound concentrations (C_F, C_B)."""

    alphas = compute_alphas(params)
    t = np.asarray(t, dtype=float)
    a1, a2 = alphas.alpha1, alphas.alpha2
    i1 = _convolved_input(input, a1, t)
    i2 = _convolved_input(input, a2, t)
    bound = params.K1 * params.k3 / (a2 - a1) * (i2 - i1)
    free = params.K1 / (a2 - a1) * ((a2 + params.k2 + params.k3) * i1 - (a1 + params.k2 + params.k3) * i2)
    return free, bound


def _quad(integrand: Callable[[float], float], upper: float, quad_tol: float) -> float:
    if upper == 0:
        return 0.0
    result = quad(integrand, 0.0, upper, epsabs=quad_tol, epsrel=quad_tol, limit=500, full_output=1)
    if len(result) > 3:
        raise QuadratureFailure(
            f"Quadrature on [0, {upper}] missed tolerance {quad_tol} "
            f"(error estimate {result[1]:.3g}) : {result[3]}"
        )
    return result[0]


def eval_ct_convolution(
    params: KineticParams,
    cp: Callable[[float], float],
    t: Time,
    quad_tol: float = DEFAULT_QUAD_TOL,
) -> NDArray[np.float64]:
    """Tissue curve for an arbitrary continuous input by adaptive quadrature.

    Parameters
    ----------
    params : KineticParams
        non-degenerate region rates
    cp : Callable
        continuous plasma input, called with scalar times
    t : float or array
        times >= 0 (min)
    quad_tol : float
        absolute and relative quadrature tolerance

    Raises
    ------
    DegenerateParams
        eigenvalues coincide
    QuadratureFailure
        QUADPACK could not reach ``quad_tol``

    Notes
    -----
    k4 = 0 is handled by the irreversible formulas
    C_F = K1 * int exp(-(k2+k3)(t-s)) C_P, C_B = K1*k3/(k2+k3) * (int C_P - int exp(...) C_P).

    """

    alphas = compute_alphas(params)
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    K1, k2, k3, k4 = params.as_tuple()
    a1, a2 = alphas.alpha1, alphas.alpha2

    for index, upper in np.ndenumerate(t):
        upper = float(upper)
        if k4 == 0:
            rate = k2 + k3
            free = _quad(lambda s: math.exp(-rate * (upper - s)) * cp(s), upper, quad_tol)
            total = _quad(cp, upper, quad_tol)
            out[index] = K1 * free + K1 * k3 / rate * (total - free)
        else:
            i1 = _quad(lambda s: math.exp(a1 * (upper - s)) * cp(s), upper, quad_tol)
            i2 = _quad(lambda s: math.exp(a2 * (upper - s)) * cp(s), upper, quad_tol)
            out[index] = K1 / (a2 - a1) * ((a2 + k2) * i1 - (a1 + k2) * i2)
    return out


def eval_cpet(ct: Time, cwb: Time, mixing: MixingModel) -> NDArray[np.float64]:
    """PET signal (1 - vb)*C_T + vb*C_WB."""

    ct = np.asarray(ct, dtype=float)
    cwb = np.asarray(cwb, dtype=float)
    return (1.0 - mixing.vb) * ct + mixing.vb * cwb


def simulate_tacs(
    config: Configuration,
    grid: ArrayLike,
    mixing: Optional[MixingModel] = None,
    cwb: Optional[Union[ArrayLike, Callable[[NDArray], NDArray]]] = None,
) -> TacTable:
    """Evaluate every region of ``config`` on ``grid``.

    Parameters
    ----------
    config : Configuration
        regions and input
    grid : array
        strictly increasing positive times
    mixing : Optional[MixingModel]
        when given, curves are C_PET instead of C_T
    cwb : Optional[array | Callable]
        whole-blood curve sampled on ``grid`` or a function of time

    Raises
    ------
    MissingWholeBlood
        ``mixing`` without ``cwb``
    DegenerateParams
        some region has coinciding eigenvalues

    """

    grid = validate_grid(grid)
    if mixing is not None and cwb is None:
        raise MissingWholeBlood("A mixing model needs a whole-blood curve (cwb) !")

    cwb_values = None
    if cwb is not None:
        cwb_values = np.asarray(cwb(grid) if callable(cwb) else cwb, dtype=float)
        if cwb_values.shape != grid.shape:
            raise MissingWholeBlood(
                f"Whole-blood curve has {cwb_values.size} values for {grid.size} time points !"
            )

    curves = {}
    for rid, params in config.regions:
        ct = eval_ct_closed_form(params, config.input, grid)
        curves[rid] = ct if mixing is None else eval_cpet(ct, cwb_values, mixing)

    wb_samples = None
    if cwb_values is not None:
        nonzero = cwb_values != 0
        if not np.all(nonzero):
            logger.warning(
                f"Whole-blood curve is zero at {int(np.sum(~nonzero))} of {grid.size} times; "
                "those samples are left out of the table"
            )
        if np.any(nonzero):
            wb_samples = (grid[nonzero], cwb_values[nonzero])
    return TacTable(grid, curves, wb_samples)
