"""Joint estimation of all regions and the shared input from tissue curves alone.

The unknowns are ((K1, k2, k3, k4) per region, (lambda_j, mu_j) per input
term). Tissue curves only fix them up to the gauge (lambda * c, K1 / c), so the
optimizer works with the leading amplitude pinned to +-1. Rates are optimized
as logarithms and exponents as mu = -exp(phi), which keeps every candidate
physically admissible without bounds. Minimization is MINPACK
Levenberg-Marquardt (scipy ``least_squares(method="lm")``) driven by a central
difference Jacobian, restarted from several seeded starts that run in
parallel through joblib.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import least_squares

from tissuekinetics.errors import (
    DegenerateParams,
    InsufficientSamples,
    InvalidParameter,
    InvalidWholeBlood,
    NoConvergence,
    NoSolution,
    RankDeficient,
    TissueKineticsError,
    UnknownRegion,
)
from tissuekinetics.identifiability import (
    RichnessReport,
    SamplingRanges,
    check_region_richness,
    check_theorem_hypotheses,
    equivalence_up_to_scale,
    sample_random_config,
)
from tissuekinetics.model_core import (
    Configuration,
    KineticParams,
    PolyexpInput,
    TacTable,
    eval_cp,
    eval_ct_closed_form,
    simulate_tacs,
)
from tissuekinetics.polyexp import AttenuationBiexp
from tissuekinetics.utils import validate_grid

logger = logging.getLogger(__name__)

THREADS_ENV = "TISSUEKINETICS_THREADS"
BOUNDARY_K3 = 1e-6
PENALTY = 1e10
LOG_BOUNDS = (-40.0, 10.0)
GAUGES = ("leading", "sum")


@dataclass
class FitOptions:
    """Settings of ``fit_joint`` and ``verify_uniqueness``.

    Attributes
    ----------
    p : int
        assumed number of input terms
    n_starts : int
        number of seeded starts
    max_iters : int
        function evaluation budget per start
    residual_tol : float
        converged when sse <= residual_tol * sum(y^2)
    param_tol : float
        MINPACK ftol/xtol/gtol
    seed : int
        root of the per-start seed sequence
    gauge : str
        "leading" (amplitude of the slowest input term is 1) or "sum" (amplitudes sum to 1)
    warm_start : Optional[Configuration]
        when given, every start is this configuration randomly perturbed
    start_perturbation : float
        warm starts are multiplied parameter-wise by uniform(1 - x, 1 + x)
    equivalence_tol : float
        relative tolerance for comparing fits with the truth
    n_jobs : Optional[int]
        joblib workers; defaults to $TISSUEKINETICS_THREADS or 1
    ranges : SamplingRanges
        bounds of the cold starts
    strict : bool
        raise NoConvergence instead of returning a non-converged result
    jacobian_step : float
        central difference step (scaled by max(1, |theta|))

    """

    p: int = 4
    n_starts: int = 8
    max_iters: int = 2000
    residual_tol: float = 1e-16
    param_tol: float = 1e-14
    seed: int = 0
    gauge: str = "leading"
    warm_start: Optional[Configuration] = None
    start_perturbation: float = 0.2
    equivalence_tol: float = 1e-4
    n_jobs: Optional[int] = None
    ranges: SamplingRanges = field(default_factory=SamplingRanges)
    strict: bool = False
    jacobian_step: float = 1e-6

    def __post_init__(self):
        if isinstance(self.ranges, dict):
            self.ranges = SamplingRanges.from_dict(self.ranges)
        if self.p < 1:
            raise InvalidParameter(f"'p' must be >= 1, got {self.p} !")
        if self.n_starts < 1:
            raise InvalidParameter(f"'n_starts' must be >= 1, got {self.n_starts} !")
        if self.max_iters < 1:
            raise InvalidParameter(f"'max_iters' must be >= 1, got {self.max_iters} !")
        if self.gauge not in GAUGES:
            raise InvalidParameter(f"Valid inputs for 'gauge' - {','.join(GAUGES)} !")
        if not 0 <= self.start_perturbation < 1:
            raise InvalidParameter(
                f"'start_perturbation' must lie in [0, 1), got {self.start_perturbation} !"
            )
        if self.warm_start is not None and self.warm_start.p != self.p:
            raise InvalidParameter(
                f"Warm start has p={self.warm_start.p} input terms but p={self.p} was requested !"
            )

    @classmethod
    def from_input(cls, input: Union[str, Path, dict], **overrides: Any) -> FitOptions:
        """Build from a dict or the path of a YAML document; ``overrides`` win."""

        data = dict(cls._load_input(input))
        data.update(overrides)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidParameter(f"Unknown fit option(s) - {', '.join(unknown)} !")
        return cls(**data)

    @staticmethod
    def _load_input(input: Union[str, Path, dict]) -> dict:
        if isinstance(input, dict):
            return input
        with open(Path(input), "r") as stream:
            return yaml.safe_load(stream) or {}

    def resolved_n_jobs(self) -> int:
        if self.n_jobs is not None:
            return int(self.n_jobs)
        return int(os.environ.get(THREADS_ENV, "1"))


@dataclass
class FitResult:
    """Best start of a joint fit.

    Attributes
    ----------
    config : Configuration
        fitted configuration in the requested gauge
    sse : float
        sum of squared residuals
    converged : bool
        sse <= residual_tol * sum(y^2)
    start_index : int
        index of the winning start
    iterations : int
        Jacobian evaluations (LM iterations) of the winning start
    gauge_indeterminate : bool
        data identically zero; any input with K1 = 0 fits
    boundary_regions : list of str
        regions with k3 < 1e-6, outside the uniqueness guarantee
    certified : bool
        the fitted configuration itself satisfies the uniqueness hypotheses
    trace : list of (start, iter, sse)
        SSE per LM iteration of every start

    """

    config: Configuration
    sse: float
    converged: bool
    start_index: int
    iterations: int
    gauge_indeterminate: bool = False
    boundary_regions: List[str] = field(default_factory=list)
    certified: bool = False
    trace: List[Tuple[int, int, float]] = field(default_factory=list)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.trace, columns=["start", "iter", "sse"])


@dataclass
class UniquenessReport:
    """Outcome of the empirical uniqueness experiment.

    Attributes
    ----------
    n_converged : int
        starts reaching the residual tolerance
    n_equivalent : int
        converged fits equivalent to the truth up to scale
    zeta_values : list of float
        scale of every equivalent fit
    worst_deviation : float
        largest relative parameter deviation over converged fits
    passed : bool
        at least one converged fit and all of them equivalent
    n_starts : int
        starts attempted
    hypotheses : Optional[RichnessReport]
        richness check of the truth
    counterexamples : list of dict
        converged fits that are not equivalent to the truth
    diagnostic : Optional[str]
        reason the experiment was refused

    """

    n_converged: int
    n_equivalent: int
    zeta_values: List[float]
    worst_deviation: float
    passed: bool
    n_starts: int = 0
    hypotheses: Optional[RichnessReport] = None
    counterexamples: List[Dict[str, Any]] = field(default_factory=list)
    diagnostic: Optional[str] = None


def residual_sse(config: Configuration, tacs: TacTable) -> float:
    """Sum over regions of tacs and grid points of (C_T - y)^2.

    Raises
    ------
    UnknownRegion
        a region of ``tacs`` is missing from ``config``
    DegenerateParams
        a region has coinciding eigenvalues

    """

    total = 0.0
    for rid in tacs.region_ids:
        model = eval_ct_closed_form(config.params(rid), config.input, tacs.time_grid)
        total += float(np.sum((model - tacs.curves[rid]) ** 2))
    return total


def finite_difference_jacobian(
    fun: Callable[[NDArray], NDArray], theta: NDArray, step: float = 1e-6
) -> NDArray:
    """Central differences with step ``step * max(1, |theta_k|)`` per coordinate."""

    theta = np.asarray(theta, dtype=float)
    columns = []
    for k in range(theta.size):
        h = step * max(1.0, abs(theta[k]))
        forward = theta.copy()
        backward = theta.copy()
        forward[k] += h
        backward[k] -= h
        columns.append((fun(forward) - fun(backward)) / (2.0 * h))
    return np.column_stack(columns)


@dataclass(frozen=True)
class _Layout:
    """theta = [log(K1, k2, k3, k4) per region, lambda_2..lambda_p, log(-mu_1)..log(-mu_p)]."""

    region_ids: Tuple[str, ...]
    p: int
    lead_sign: float = 1.0

    @property
    def n(self) -> int:
        return len(self.region_ids)

    @property
    def size(self) -> int:
        return 4 * self.n + 2 * self.p - 1

    def encode(self, config: Configuration) -> NDArray:
        lead = config.input.terms[0][0]
        config = config.gauge_transform(1.0 / abs(lead))
        rates = np.array([config.params(rid).as_tuple() for rid in self.region_ids])
        return np.concatenate(
            [
                np.log(np.maximum(rates, math.exp(LOG_BOUNDS[0]))).ravel(),
                config.input.lambdas[1:],
                np.log(-config.input.mus),
            ]
        )

    def split(self, theta: NDArray) -> Tuple[NDArray, NDArray, NDArray]:
        rates = np.exp(np.clip(theta[: 4 * self.n], *LOG_BOUNDS)).reshape(self.n, 4)
        lambdas = np.concatenate([[self.lead_sign], theta[4 * self.n : 4 * self.n + self.p - 1]])
        mus = -np.exp(np.clip(theta[4 * self.n + self.p - 1 :], *LOG_BOUNDS))
        return rates, lambdas, mus

    def decode(self, theta: NDArray) -> Configuration:
        rates, lambdas, mus = self.split(theta)
        regions = tuple(
            (rid, KineticParams(*row)) for rid, row in zip(self.region_ids, rates)
        )
        return Configuration(regions, PolyexpInput.from_arrays(lambdas, mus))


class _JointObjective:
    """Residual vector over all regions and its finite-difference Jacobian."""

    def __init__(self, layout: _Layout, tacs: TacTable, start_index: int, step: float) -> None:
        self.layout = layout
        self.grid = tacs.time_grid
        self.data = tacs.values.ravel()
        self.start_index = start_index
        self.step = step
        self.trace: List[Tuple[int, int, float]] = []

    def __call__(self, theta: NDArray) -> NDArray:
        try:
            config = self.layout.decode(theta)
            model = np.concatenate(
                [
                    eval_ct_closed_form(config.params(rid), config.input, self.grid)
                    for rid in self.layout.region_ids
                ]
            )
        except TissueKineticsError:
            # duplicate exponents or coinciding eigenvalues
            return np.full(self.data.size, PENALTY)
        residual = model - self.data
        return np.where(np.isfinite(residual), residual, PENALTY)

    def jacobian(self, theta: NDArray) -> NDArray:
        sse = float(np.sum(self(theta) ** 2))
        self.trace.append((self.start_index, len(self.trace), sse))
        return finite_difference_jacobian(self, theta, self.step)


@dataclass
class _StartOutcome:
    start_index: int
    config: Configuration
    sse: float
    iterations: int
    trace: List[Tuple[int, int, float]]


def _run_start(
    start_index: int, start: Configuration, tacs: TacTable, options: FitOptions
) -> _StartOutcome:
    layout = _Layout(tacs.region_ids, options.p, float(np.sign(start.input.terms[0][0])))
    objective = _JointObjective(layout, tacs, start_index, options.jacobian_step)
    solution = least_squares(
        objective,
        layout.encode(start),
        jac=objective.jacobian,
        method="lm",
        ftol=options.param_tol,
        xtol=options.param_tol,
        gtol=options.param_tol,
        max_nfev=options.max_iters,
    )
    try:
        config = layout.decode(solution.x)
        sse = residual_sse(config, tacs)
    except TissueKineticsError as err:
        logger.debug(f"start {start_index}: final point inadmissible ({err})")
        config = start
        sse = math.inf
    iterations = int(solution.njev) if solution.njev is not None else int(solution.nfev)
    logger.debug(f"start {start_index}: sse={sse:.6e} after {iterations} iterations ({solution.message})")
    return _StartOutcome(start_index, config, sse, iterations, objective.trace)


def _perturbed(config: Configuration, rng: np.random.Generator, spread: float) -> Configuration:
    def factor() -> float:
        return float(rng.uniform(1.0 - spread, 1.0 + spread))

    regions = tuple(
        (rid, KineticParams(*(value * factor() for value in params.as_tuple())))
        for rid, params in config.regions
    )
    terms = tuple((lam * factor(), mu * factor()) for lam, mu in config.input.terms)
    return Configuration(regions, PolyexpInput(terms))


def _project_influx(config: Configuration, tacs: TacTable) -> Configuration:
    """Replace each K1 by its least-squares value for the drawn shape.

    C_T is linear in K1, so the optimum is <h, y> / <h, h> with h the curve
    at K1 = 1. Regions whose shape does not correlate positively with the
    data keep the drawn K1.
    """

    regions = []
    for rid, params in config.regions:
        shape = eval_ct_closed_form(params.with_K1(1.0), config.input, tacs.time_grid)
        data = tacs.curves[rid]
        overlap = float(shape @ data)
        norm = float(shape @ shape)
        if overlap > 0 and norm > 0:
            params = params.with_K1(overlap / norm)
        regions.append((rid, params))
    return config.with_regions(regions)


def _start_configs(tacs: TacTable, options: FitOptions) -> List[Configuration]:
    seeds = np.random.SeedSequence(options.seed).spawn(options.n_starts)
    starts = []
    for seed in seeds:
        if options.warm_start is not None:
            warm = options.warm_start
            missing = [rid for rid in tacs.region_ids if rid not in warm.region_ids]
            if missing:
                raise UnknownRegion(f"Warm start lacks region(s) - {', '.join(missing)} !")
            warm = warm.with_regions((rid, warm.params(rid)) for rid in tacs.region_ids)
            starts.append(_perturbed(warm, np.random.default_rng(seed), options.start_perturbation))
        else:
            drawn = sample_random_config(seed, len(tacs.region_ids), options.p, options.ranges)
            drawn = drawn.with_regions(zip(tacs.region_ids, (params for _, params in drawn.regions)))
            starts.append(_project_influx(drawn, tacs))
    return starts


def _apply_gauge(config: Configuration, gauge: str) -> Configuration:
    if gauge == "sum":
        total = float(np.sum(config.input.lambdas))
        if total > 0:
            return config.gauge_transform(1.0 / total)
        logger.warning(f"Input amplitudes sum to {total:.3e}; falling back to the 'leading' gauge")
    return config.gauge_transform(1.0 / abs(config.input.terms[0][0]))


def _finish(outcome: _StartOutcome, tacs: TacTable, options: FitOptions, trace) -> FitResult:
    config = _apply_gauge(outcome.config, options.gauge)
    sse = outcome.sse
    converged = bool(sse <= options.residual_tol * tacs.total_sum_squares)
    boundary = [rid for rid, params in config.regions if params.k3 < BOUNDARY_K3]
    try:
        certified = check_theorem_hypotheses(config).satisfied
    except DegenerateParams:
        certified = False
    return FitResult(
        config=config,
        sse=sse,
        converged=converged,
        start_index=outcome.start_index,
        iterations=outcome.iterations,
        boundary_regions=boundary,
        certified=certified,
        trace=trace,
    )


def _check_sample_count(T: int, p: int) -> None:
    if T < 2 * (p + 4):
        raise InsufficientSamples(
            f"{T} time points available but at least 2*(p+4)={2 * (p + 4)} are needed for p={p} !"
        )


def _fit_all_starts(tacs: TacTable, options: FitOptions) -> List[FitResult]:
    _check_sample_count(tacs.T, options.p)
    starts = _start_configs(tacs, options)
    n_jobs = options.resolved_n_jobs()
    logger.info(
        f"Joint fit: {len(tacs.region_ids)} regions, p={options.p}, T={tacs.T}, "
        f"{options.n_starts} starts on {n_jobs} worker(s)"
    )
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_run_start)(index, start, tacs, options) for index, start in enumerate(starts)
    )
    trace = [row for outcome in outcomes for row in outcome.trace]
    return [_finish(outcome, tacs, options, trace) for outcome in outcomes]


def _zero_data_result(tacs: TacTable, options: FitOptions) -> FitResult:
    start = _start_configs(tacs, replace(options, n_starts=1))[0]
    config = start.with_regions((rid, params.with_K1(0.0)) for rid, params in start.regions)
    logger.warning("All tissue curves are zero: K1 = 0 fits for any input (gauge indeterminate)")
    return FitResult(
        config=_apply_gauge(config, options.gauge),
        sse=0.0,
        converged=True,
        start_index=0,
        iterations=0,
        gauge_indeterminate=True,
    )


def fit_joint(tacs: TacTable, options: Optional[FitOptions] = None) -> FitResult:
    """Fit all regions and the shared input to ``tacs`` from several starts.

    Parameters
    ----------
    tacs : TacTable
        tissue curves on one time grid
    options : Optional[FitOptions]
        defaults to FitOptions()

    Returns
    -------
    FitResult
        lowest-SSE start (ties go to the lower start index)

    Raises
    ------
    InsufficientSamples
        T < 2 * (p + 4)
    NoConvergence
        ``options.strict`` and no start met the residual tolerance

    Examples
    --------
    >>> result = fit_joint(tacs, FitOptions(p=4, n_starts=16, seed=7))
    >>> result.config.params("region_1")

    """

    options = options or FitOptions()
    _check_sample_count(tacs.T, options.p)
    if tacs.total_sum_squares == 0:
        return _zero_data_result(tacs, options)

    results = _fit_all_starts(tacs, options)
    best = min(results, key=lambda result: (result.sse, result.start_index))
    logger.info(
        f"Joint fit: best start {best.start_index} with sse={best.sse:.6e} "
        f"(converged={best.converged}, certified={best.certified})"
    )
    if best.boundary_regions:
        logger.warning(
            f"Fitted k3 below {BOUNDARY_K3} in region(s) {', '.join(best.boundary_regions)}"
        )
    if not best.converged:
        message = (
            f"No start reached sse <= {options.residual_tol} * sum(y^2); "
            f"best sse={best.sse:.6e} from start {best.start_index}"
        )
        logger.warning(message)
        if options.strict:
            raise NoConvergence(message, best)
    return best


def _scale_residuals(x: NDArray, s: NDArray, ratios: NDArray) -> NDArray:
    zeta, a, b, c = x
    return zeta * (a * np.exp(b * s) + (1.0 - a) * np.exp(c * s)) - ratios


def _scale_jacobian(x: NDArray, s: NDArray, ratios: NDArray) -> NDArray:
    zeta, a, b, c = x
    eb = np.exp(b * s)
    ec = np.exp(c * s)
    return np.column_stack(
        [
            a * eb + (1.0 - a) * ec,
            zeta * (eb - ec),
            zeta * a * s * eb,
            zeta * (1.0 - a) * s * ec,
        ]
    )


def _validate_wb(wb_samples) -> Tuple[NDArray, NDArray]:
    if wb_samples is None:
        raise InvalidWholeBlood("Scale resolution needs whole-blood samples !")
    times, values = (np.asarray(x, dtype=float) for x in wb_samples)
    if times.shape != values.shape or times.ndim != 1:
        raise InvalidWholeBlood("Whole-blood times and values differ in length !")
    if times.size < 4:
        raise InvalidWholeBlood(f"At least 4 whole-blood samples are needed, got {times.size} !")
    if np.unique(times).size != times.size:
        raise InvalidWholeBlood("Whole-blood sample times must be pairwise distinct !")
    if np.any(values == 0):
        raise InvalidWholeBlood("Whole-blood sample values must be nonzero !")
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
        raise InvalidWholeBlood("Whole-blood samples contain non-finite values !")
    return times, values


def resolve_scale(
    fit: Union[FitResult, Configuration],
    wb_samples: Tuple[ArrayLike, ArrayLike],
    n_starts: int = 32,
    seed: int = 0,
    residual_tol: float = 1e-20,
) -> Tuple[float, AttenuationBiexp]:
    """Recover zeta and the plasma/whole-blood ratio f from whole-blood samples.

    With r_l = C~_P(s_l) / C_WB(s_l) from the fitted input, solves
    zeta * (a*exp(b*s_l) + (1 - a)*exp(c*s_l)) = r_l for (zeta, a, b, c) by
    Levenberg-Marquardt with the analytic Jacobian from ``n_starts`` seeded
    starts. The returned f is canonical (b > c) and f(0) = 1.

    Raises
    ------
    InvalidWholeBlood
        fewer than 4 samples, repeated times or zero values
    NoSolution
        no start reached sse <= residual_tol * sum(r^2)
    RankDeficient
        the system is singular at the solution

    """

    config = fit.config if isinstance(fit, FitResult) else fit
    s, cwb = _validate_wb(wb_samples)
    ratios = eval_cp(config.input, s) / cwb
    target = residual_tol * float(np.sum(ratios**2))

    rng = np.random.default_rng(seed)
    zeta0 = float(ratios[np.argmin(s)])
    best = None
    for start in range(n_starts):
        b0, c0 = sorted(-np.exp(rng.uniform(np.log(1e-3), np.log(5.0), size=2)), reverse=True)
        x0 = np.array([zeta0 * rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.95), b0, c0])
        try:
            solution = least_squares(
                _scale_residuals,
                x0,
                jac=_scale_jacobian,
                args=(s, ratios),
                method="lm",
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
                max_nfev=2000,
            )
        except (ValueError, FloatingPointError) as err:
            logger.debug(f"scale start {start} failed: {err}")
            continue
        sse = float(np.sum(solution.fun**2))
        if np.isfinite(sse) and (best is None or sse < best[0]):
            best = (sse, solution.x)
        if best is not None and best[0] <= target:
            break

    if best is None or not best[0] <= target:
        raise NoSolution(
            f"Scale resolution failed from all {n_starts} starts "
            f"(best sse={best[0] if best else math.inf:.3e}, needed <= {target:.3e}) !"
        )

    zeta, a, b, c = best[1]
    singular = np.linalg.svd(_scale_jacobian(best[1], s, ratios), compute_uv=False)
    if b == c or singular[-1] <= 1e-12 * singular[0]:
        raise RankDeficient(
            f"Scale system is singular at the solution (singular values {singular}) !"
        )
    f = AttenuationBiexp(a=a, b=b, c=c).canonical()
    logger.info(f"Resolved scale zeta={zeta:.12g} with f=({f.a:.6g}, {f.b:.6g}, {f.c:.6g})")
    return float(zeta), f


def resolve_scale_from_plasma(
    fit: Union[FitResult, Configuration], s: float, cp_value: float
) -> float:
    """zeta = C~_P(s) / C_P(s) from one nonzero plasma measurement."""

    config = fit.config if isinstance(fit, FitResult) else fit
    if cp_value == 0 or not math.isfinite(cp_value):
        raise InvalidParameter(f"Plasma measurement must be finite and nonzero, got {cp_value} !")
    return float(eval_cp(config.input, s)) / cp_value


def add_gaussian_noise(tacs: TacTable, fraction: float, seed: int = 0) -> TacTable:
    """Add N(0, (fraction * peak)^2) noise to every region, peak = max |y| of that region."""

    if fraction < 0:
        raise InvalidParameter(f"Noise fraction must be non-negative, got {fraction} !")
    rng = np.random.default_rng(seed)
    noisy = {}
    for rid in tacs.region_ids:
        values = tacs.curves[rid]
        sigma = fraction * float(np.max(np.abs(values)))
        noisy[rid] = values + rng.normal(0.0, sigma, size=values.size)
    return TacTable(tacs.time_grid, noisy, tacs.wb_samples)


def verify_uniqueness(
    truth: Configuration, grid: ArrayLike, options: Optional[FitOptions] = None
) -> UniquenessReport:
    """Fit noiseless curves of ``truth`` from every start and compare each converged fit.

    Every converged fit must be equivalent to ``truth`` up to scale. Converged
    fits that are not are counterexample candidates and are logged at ERROR.
    A truth failing the region richness check is refused with a diagnostic.

    Raises
    ------
    InsufficientSamples
        len(grid) < 2 * (p + 4)

    """

    options = options or FitOptions(p=truth.p)
    grid = validate_grid(grid)
    _check_sample_count(grid.size, max(truth.p, options.p))

    hypotheses = check_region_richness(truth)
    if not hypotheses.satisfied:
        diagnostic = "truth fails region richness: " + "; ".join(hypotheses.violations)
        logger.warning(f"Uniqueness verification refused - {diagnostic}")
        return UniquenessReport(
            n_converged=0,
            n_equivalent=0,
            zeta_values=[],
            worst_deviation=math.nan,
            passed=False,
            n_starts=0,
            hypotheses=hypotheses,
            diagnostic=diagnostic,
        )

    tacs = simulate_tacs(truth, grid)
    results = _fit_all_starts(tacs, options)

    converged = [result for result in results if result.converged]
    zetas = []
    counterexamples = []
    worst = 0.0
    for result in converged:
        report = equivalence_up_to_scale(truth, result.config, options.equivalence_tol)
        worst = max(worst, report.max_param_deviation)
        if report.equivalent:
            zetas.append(report.zeta)
            continue
        counterexamples.append(
            {
                "start_index": result.start_index,
                "sse": result.sse,
                "max_param_deviation": report.max_param_deviation,
                "mismatches": report.mismatches,
            }
        )
        logger.error(
            f"Counterexample candidate: start {result.start_index} fits with sse={result.sse:.3e} "
            f"but is not equivalent to the truth ({'; '.join(report.mismatches)})"
        )

    report = UniquenessReport(
        n_converged=len(converged),
        n_equivalent=len(zetas),
        zeta_values=zetas,
        worst_deviation=worst if converged else math.nan,
        passed=bool(converged) and not counterexamples,
        n_starts=len(results),
        hypotheses=hypotheses,
        counterexamples=counterexamples,
    )
    logger.info(
        f"Uniqueness verification: {report.n_equivalent}/{report.n_converged} converged fits "
        f"equivalent out of {report.n_starts} starts (passed={report.passed})"
    )
    return report
