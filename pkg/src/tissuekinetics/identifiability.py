"""Checkers for the identifiability hypotheses and the scale-equivalence comparator.

Exact-arithmetic conditions ("pairwise distinct", "nonzero") are decided with
a relative tolerance: two values x, y are distinct when
|x - y| > tol * max(1, |x|, |y|). Reports carry the smallest observed margins
so borderline configurations can be judged by the caller.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from tissuekinetics.errors import ExhaustedRedraws, InvalidParameter
from tissuekinetics.model_core import (
    Alphas,
    Configuration,
    KineticParams,
    PolyexpInput,
    compute_alphas,
)
from tissuekinetics.utils import relative_deviation

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
MAX_REDRAWS = 1000


@dataclass(frozen=True)
class RichnessReport:
    """Outcome of a richness/hypothesis check.

    Attributes
    ----------
    satisfied : bool
        every condition holds
    distinct_k34_count : int
        distinct values among k3 + k4 over all regions
    distinct_alpha_count : int
        distinct values among alpha1 and alpha2 over all regions
    witnesses : list of region-id lists
        regions certifying each condition (one list per input term for
        Assumption (A), a single list for the counting conditions)
    violations : list of str
        stable human-readable descriptions, empty when satisfied
    margins : dict
        smallest relative separations / coefficient magnitudes seen

    """

    satisfied: bool
    distinct_k34_count: int
    distinct_alpha_count: int
    witnesses: List[List[str]] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)
    margins: Dict[str, Optional[float]] = field(default_factory=dict)


@dataclass(frozen=True)
class EquivalenceReport:
    """Whether two configurations agree up to the scale gauge.

    ``zeta`` relates them as K1_a = zeta * K1_b and lambda_b = zeta * lambda_a.
    """

    equivalent: bool
    zeta: Optional[float]
    reindexing: Optional[Tuple[int, ...]]
    max_param_deviation: float
    mismatches: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class SamplingRanges:
    """Log-uniform bounds for ``sample_random_config``.

    Rates are positive (1/min); ``mu`` bounds are negative and sampled as
    -exp(uniform(log|hi|, log|lo|)).
    """

    K1: Tuple[float, float] = (0.05, 1.5)
    k2: Tuple[float, float] = (0.05, 1.0)
    k3: Tuple[float, float] = (0.02, 0.8)
    k4: Tuple[float, float] = (0.01, 0.5)
    mu: Tuple[float, float] = (-5.0, -0.01)
    lam: Tuple[float, float] = (0.1, 10.0)

    def __post_init__(self):
        for name in ("K1", "k2", "k3", "k4", "lam"):
            lo, hi = (float(x) for x in getattr(self, name))
            if not (0 < lo <= hi and math.isfinite(hi)):
                raise InvalidParameter(f"Sampling bounds for '{name}' must satisfy 0 < lo <= hi, got ({lo}, {hi}) !")
            object.__setattr__(self, name, (lo, hi))
        lo, hi = (float(x) for x in self.mu)
        if not (math.isfinite(lo) and lo <= hi < 0):
            raise InvalidParameter(f"Sampling bounds for 'mu' must satisfy lo <= hi < 0, got ({lo}, {hi}) !")
        object.__setattr__(self, "mu", (lo, hi))

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> SamplingRanges:
        return cls(**{key: tuple(value) for key, value in data.items()})


def _distinct(x: float, y: float, tol: float) -> bool:
    return abs(x - y) > tol * max(1.0, abs(x), abs(y))


def _separation(x: float, y: float) -> float:
    return abs(x - y) / max(1.0, abs(x), abs(y))


def _pairwise_distinct(values: Sequence[float], tol: float) -> bool:
    return all(_distinct(x, y, tol) for x, y in combinations(values, 2))


def _min_separation(values: Sequence[float]) -> Optional[float]:
    if len(values) < 2:
        return None
    return min(_separation(x, y) for x, y in combinations(values, 2))


def _count_distinct(values: Sequence[float], tol: float) -> int:
    """Number of clusters after merging sorted neighbours that are not distinct."""

    ordered = sorted(values)
    if not ordered:
        return 0
    return 1 + sum(_distinct(x, y, tol) for x, y in zip(ordered, ordered[1:]))


def _coefficient_sum(input: PolyexpInput, alpha: float, tol: float) -> Tuple[float, float]:
    """sum_{j: mu_j != alpha} lambda_j / (mu_j - alpha) and the sum of magnitudes."""

    total = 0.0
    scale = 0.0
    for lam, mu in input.terms:
        if not _distinct(mu, alpha, tol):
            continue
        term = lam / (mu - alpha)
        total += term
        scale += abs(term)
    return total, scale


def _branch_ok(mu0: float, alpha: float, input: PolyexpInput, tol: float) -> bool:
    if not _distinct(mu0, alpha, tol):
        return True
    total, scale = _coefficient_sum(input, alpha, tol)
    return abs(total) > tol * scale


def _region_alphas(config: Configuration) -> Dict[str, Alphas]:
    return {rid: compute_alphas(params) for rid, params in config.regions}


def _common_counts(config: Configuration, alphas: Dict[str, Alphas], tol: float) -> Tuple[int, int]:
    k34 = [params.k34 for _, params in config.regions]
    every_alpha = [a.alpha1 for a in alphas.values()] + [a.alpha2 for a in alphas.values()]
    return _count_distinct(k34, tol), _count_distinct(every_alpha, tol)


def _common_margins(config: Configuration, alphas: Dict[str, Alphas]) -> Dict[str, Optional[float]]:
    every_alpha = [a.alpha1 for a in alphas.values()] + [a.alpha2 for a in alphas.values()]
    return {
        "k34_separation": _min_separation([params.k34 for _, params in config.regions]),
        "alpha_separation": _min_separation(every_alpha),
    }


def check_assumption_A(config: Configuration, tol: float = DEFAULT_TOL) -> RichnessReport:
    """Search, for every input term, three regions satisfying Assumption (A).

    For input term j0 a region is eligible when mu_j0 + k3 + k4 != 0 and, for
    each eigenvalue alpha of the region, either mu_j0 == alpha or
    sum_{j: mu_j != alpha} lambda_j / (mu_j - alpha) != 0 (magnitude above
    tol times the sum of the magnitudes of its terms). Three eligible regions
    witness j0 when their k3 + k4, their alpha1 and their alpha2 values are
    each pairwise distinct. The triple search is exhaustive.

    Raises
    ------
    DegenerateParams
        some region has coinciding eigenvalues

    """

    alphas = _region_alphas(config)
    k34_count, alpha_count = _common_counts(config, alphas, tol)
    margins = _common_margins(config, alphas)

    smallest_sum = None
    for a in alphas.values():
        for alpha in (a.alpha1, a.alpha2):
            total, scale = _coefficient_sum(config.input, alpha, tol)
            if scale > 0:
                ratio = abs(total) / scale
                smallest_sum = ratio if smallest_sum is None else min(smallest_sum, ratio)
    margins["coefficient_sum"] = smallest_sum

    witnesses: List[List[str]] = []
    violations: List[str] = []
    for j0, mu0 in enumerate(config.input.mus, start=1):
        eligible = []
        for rid, params in config.regions:
            a = alphas[rid]
            if not _distinct(mu0, -params.k34, tol):
                continue
            if _branch_ok(mu0, a.alpha1, config.input, tol) and _branch_ok(mu0, a.alpha2, config.input, tol):
                eligible.append(rid)

        found = None
        for triple in combinations(eligible, 3):
            if (
                _pairwise_distinct([config.params(rid).k34 for rid in triple], tol)
                and _pairwise_distinct([alphas[rid].alpha1 for rid in triple], tol)
                and _pairwise_distinct([alphas[rid].alpha2 for rid in triple], tol)
            ):
                found = list(triple)
                break

        if found is None:
            violations.append(
                f"input term {j0} (mu={mu0:.6g}): no three of {len(eligible)} eligible regions "
                "have pairwise distinct k3+k4, alpha1 and alpha2"
            )
            witnesses.append([])
        else:
            witnesses.append(found)

    report = RichnessReport(
        satisfied=not violations,
        distinct_k34_count=k34_count,
        distinct_alpha_count=alpha_count,
        witnesses=witnesses,
        violations=violations,
        margins=margins,
    )
    logger.debug(f"Assumption (A) check: satisfied={report.satisfied}, witnesses={witnesses}")
    return report


def _find_subset(ids: Sequence[str], size: int, predicate) -> Optional[List[str]]:
    for subset in combinations(ids, size):
        if predicate(subset):
            return list(subset)
    return None


def check_region_richness(config: Configuration, tol: float = DEFAULT_TOL) -> RichnessReport:
    """At least p+3 regions with pairwise distinct k3+k4 and 2p+6 distinct eigenvalues.

    Raises
    ------
    DegenerateParams
        some region has coinciding eigenvalues

    """

    alphas = _region_alphas(config)
    k34_count, alpha_count = _common_counts(config, alphas, tol)
    needed = config.p + 3
    violations = []
    witness = None

    if config.n < needed:
        violations.append(f"{config.n} regions, at least p+3={needed} needed")
    elif k34_count < needed:
        violations.append(f"only {k34_count} distinct k3+k4 values, {needed} needed")
    elif alpha_count < 2 * needed:
        violations.append(f"only {alpha_count} distinct eigenvalues, {2 * needed} needed")
    else:

        def rich(subset):
            every_alpha = [alphas[rid].alpha1 for rid in subset] + [alphas[rid].alpha2 for rid in subset]
            return _pairwise_distinct([config.params(rid).k34 for rid in subset], tol) and _pairwise_distinct(
                every_alpha, tol
            )

        witness = _find_subset(config.region_ids, needed, rich)
        if witness is None:
            violations.append(
                f"no {needed} regions have jointly pairwise distinct k3+k4 and eigenvalues"
            )

    return RichnessReport(
        satisfied=not violations,
        distinct_k34_count=k34_count,
        distinct_alpha_count=alpha_count,
        witnesses=[witness] if witness else [],
        violations=violations,
        margins=_common_margins(config, alphas),
    )


def check_alpha_richness(config: Configuration, tol: float = DEFAULT_TOL) -> RichnessReport:
    """At least 2p+2 regions whose alpha1 values and whose alpha2 values are each pairwise distinct."""

    alphas = _region_alphas(config)
    k34_count, alpha_count = _common_counts(config, alphas, tol)
    needed = 2 * config.p + 2
    violations = []
    witness = None

    if config.n < needed:
        violations.append(f"{config.n} regions, at least 2p+2={needed} needed")
    else:

        def rich(subset):
            return _pairwise_distinct([alphas[rid].alpha1 for rid in subset], tol) and _pairwise_distinct(
                [alphas[rid].alpha2 for rid in subset], tol
            )

        witness = _find_subset(config.region_ids, needed, rich)
        if witness is None:
            violations.append(f"no {needed} regions have pairwise distinct alpha1 and alpha2")

    return RichnessReport(
        satisfied=not violations,
        distinct_k34_count=k34_count,
        distinct_alpha_count=alpha_count,
        witnesses=[witness] if witness else [],
        violations=violations,
        margins=_common_margins(config, alphas),
    )


def check_theorem_hypotheses(config: Configuration, tol: float = DEFAULT_TOL) -> RichnessReport:
    """A-posteriori certificate: p >= 4, n >= 3, all rates positive, region richness.

    A fitted configuration matching the data that passes this check is, up to
    scale, the generating configuration.
    """

    violations = []
    if config.p < 4:
        violations.append(f"input has p={config.p} terms, at least 4 needed")
    if config.n < 3:
        violations.append(f"{config.n} regions, at least 3 needed")
    for rid, params in config.regions:
        for name, value in zip(("K1", "k2", "k3", "k4"), params.as_tuple()):
            if not value > 0:
                violations.append(f"region '{rid}': {name}={value} is not positive")

    richness = check_region_richness(config, tol)
    violations.extend(richness.violations)
    return RichnessReport(
        satisfied=not violations,
        distinct_k34_count=richness.distinct_k34_count,
        distinct_alpha_count=richness.distinct_alpha_count,
        witnesses=richness.witnesses,
        violations=violations,
        margins=richness.margins,
    )


def _estimate_zeta(a: Configuration, b: Configuration, ids: Sequence[str]) -> Optional[float]:
    ratios = []
    for rid in ids:
        K1a, K1b = a.params(rid).K1, b.params(rid).K1
        if K1a > 0 and K1b > 0:
            ratios.append(K1a / K1b)
        elif (K1a > 0) != (K1b > 0):
            return None
    if not ratios:
        # all K1 vanish; only the inputs carry the scale
        ratios = (b.input.lambdas / a.input.lambdas).tolist()
    ratios = np.asarray(ratios)
    sign = 1.0 if np.median(ratios) > 0 else -1.0
    if np.any(np.sign(ratios) != sign):
        return None
    # geometric median keeps zeta(a, b) * zeta(b, a) == 1 exactly
    return float(sign * np.exp(np.median(np.log(np.abs(ratios)))))


def equivalence_up_to_scale(
    a: Configuration, b: Configuration, tol: float = 1e-6
) -> EquivalenceReport:
    """Decide whether ``b`` equals ``a`` up to a single scale zeta.

    Equivalent means: per region k2, k3, k4 equal (relative ``tol``), the input
    exponents equal after re-indexing, K1_a = zeta * K1_b for every region and
    lambda_b = zeta * lambda_a for every input term. zeta is the geometric
    median of the per-region K1 ratios. Never raises; failures come back as
    ``equivalent=False`` with ``mismatches``.
    """

    if set(a.region_ids) != set(b.region_ids):
        return EquivalenceReport(False, None, None, math.inf, ["region ids differ"])
    if a.p != b.p:
        return EquivalenceReport(False, None, None, math.inf, [f"input degrees differ: {a.p} vs {b.p}"])

    # both inputs are stored in descending-mu order, which is the re-indexing
    reindexing = tuple(range(a.p))
    zeta = _estimate_zeta(a, b, a.region_ids)
    if zeta is None:
        return EquivalenceReport(
            False, None, reindexing, math.inf, ["K1 ratios have no common sign / zero pattern"]
        )

    mismatches = []
    worst = 0.0
    for rid in a.region_ids:
        pa, pb = a.params(rid), b.params(rid)
        for name in ("k2", "k3", "k4"):
            deviation = float(relative_deviation(getattr(pa, name), getattr(pb, name)))
            worst = max(worst, deviation)
            if deviation > tol:
                mismatches.append(f"region '{rid}': {name} differs by {deviation:.3e}")
        deviation = float(relative_deviation(pa.K1, zeta * pb.K1))
        worst = max(worst, deviation)
        if deviation > tol:
            mismatches.append(f"region '{rid}': K1 ratio off by {deviation:.3e}")

    mus_b = b.input.mus[list(reindexing)]
    lambdas_b = b.input.lambdas[list(reindexing)]
    for j, (lam, mu) in enumerate(a.input.terms, start=1):
        deviation = float(relative_deviation(mu, mus_b[j - 1]))
        worst = max(worst, deviation)
        if deviation > tol:
            mismatches.append(f"input term {j}: mu differs by {deviation:.3e}")
        deviation = float(relative_deviation(lambdas_b[j - 1], zeta * lam))
        worst = max(worst, deviation)
        if deviation > tol:
            mismatches.append(f"input term {j}: lambda ratio off by {deviation:.3e}")

    return EquivalenceReport(
        equivalent=not mismatches,
        zeta=zeta,
        reindexing=reindexing,
        max_param_deviation=worst,
        mismatches=mismatches,
    )


def _log_uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    if lo == hi:
        return lo
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def sample_random_config(
    seed: Union[int, np.random.SeedSequence],
    n: int,
    p: int,
    ranges: Optional[SamplingRanges] = None,
) -> Configuration:
    """Draw a random configuration with log-uniform parameters.

    Regions are named region_1..region_n. Degenerate regions and input
    exponents that are not distinct from an earlier one are redrawn.

    Parameters
    ----------
    seed : int | SeedSequence
        fully determines the draw
    n : int
        number of regions, >= 1
    p : int
        number of input terms, >= 1
    ranges : Optional[SamplingRanges]
        parameter bounds; defaults to SamplingRanges()

    Raises
    ------
    ExhaustedRedraws
        1000 rejections in total

    """

    if n < 1 or p < 1:
        raise InvalidParameter(f"Need n >= 1 and p >= 1, got n={n}, p={p} !")
    ranges = ranges or SamplingRanges()
    rng = np.random.default_rng(seed)
    rejections = 0

    def reject(what: str) -> None:
        nonlocal rejections
        rejections += 1
        if rejections >= MAX_REDRAWS:
            raise ExhaustedRedraws(f"{MAX_REDRAWS} rejected draws ({what}) with ranges {ranges} !")

    mu_bounds = (-ranges.mu[1], -ranges.mu[0])
    terms: List[Tuple[float, float]] = []
    while len(terms) < p:
        mu = -_log_uniform(rng, mu_bounds)
        lam = _log_uniform(rng, ranges.lam)
        if any(not _distinct(mu, other, DEFAULT_TOL) for _, other in terms):
            reject("duplicate input exponent")
            continue
        terms.append((lam, mu))

    regions: List[Tuple[str, KineticParams]] = []
    while len(regions) < n:
        params = KineticParams(
            K1=_log_uniform(rng, ranges.K1),
            k2=_log_uniform(rng, ranges.k2),
            k3=_log_uniform(rng, ranges.k3),
            k4=_log_uniform(rng, ranges.k4),
        )
        if params.is_degenerate:
            reject("degenerate region")
            continue
        regions.append((f"region_{len(regions) + 1}", params))

    return Configuration(tuple(regions), PolyexpInput(tuple(terms)))
