"""Brute-force reference for the closed-form solutions.

Classical fixed-step fourth order Runge-Kutta integration of the compartment
ODE system. The plasma input is evaluated analytically at every stage time
(t_n, t_n + h/2, t_n + h) before the loop, so no interpolation error enters the
reference. The stepping loop itself is compiled with numba.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numba
import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicHermiteSpline

from tissuekinetics.errors import InvalidParameter, NonFiniteState
from tissuekinetics.model_core import Configuration, KineticParams, eval_ct_closed_form
from tissuekinetics.utils import validate_grid

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Oracle solution on the integration grid.

    Attributes
    ----------
    times : NDArray
        0 = t_0 < ... < t_N = t_end (min)
    cf : NDArray
        free compartment concentration
    cb : NDArray
        bound compartment concentration
    dcf : NDArray
        right-hand side dC_F/dt at ``times``
    dcb : NDArray
        right-hand side dC_B/dt at ``times``

    """

    times: NDArray[np.float64]
    cf: NDArray[np.float64]
    cb: NDArray[np.float64]
    dcf: NDArray[np.float64]
    dcb: NDArray[np.float64]

    @property
    def ct(self) -> NDArray[np.float64]:
        return self.cf + self.cb

    def at(self, times: ArrayLike) -> Dict[str, NDArray[np.float64]]:
        """Cubic Hermite read-out of cf, cb and ct at arbitrary times in [0, t_end]."""

        times = np.asarray(times, dtype=float)
        if np.any(times < self.times[0]) or np.any(times > self.times[-1] * (1 + 1e-12)):
            raise InvalidParameter(
                f"Requested times outside the integrated range [0, {self.times[-1]}] !"
            )
        times = np.minimum(times, self.times[-1])
        cf = CubicHermiteSpline(self.times, self.cf, self.dcf)(times)
        cb = CubicHermiteSpline(self.times, self.cb, self.dcb)(times)
        return {"cf": cf, "cb": cb, "ct": cf + cb}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"time_min": self.times, "cf": self.cf, "cb": self.cb, "ct": self.ct}
        )


@numba.njit(cache=True)
def _rk4_kernel(cp_stages, h, K1, k2, k3, k4, cf, cb):
    # cp_stages holds C_P on the half-step grid: index 2n is t_n, 2n+1 is t_n + h/2
    k23 = k2 + k3
    for n in range(cf.size - 1):
        free = cf[n]
        bound = cb[n]
        c0 = cp_stages[2 * n]
        cm = cp_stages[2 * n + 1]
        c1 = cp_stages[2 * n + 2]

        f1 = K1 * c0 - k23 * free + k4 * bound
        g1 = k3 * free - k4 * bound
        f2 = K1 * cm - k23 * (free + 0.5 * h * f1) + k4 * (bound + 0.5 * h * g1)
        g2 = k3 * (free + 0.5 * h * f1) - k4 * (bound + 0.5 * h * g1)
        f3 = K1 * cm - k23 * (free + 0.5 * h * f2) + k4 * (bound + 0.5 * h * g2)
        g3 = k3 * (free + 0.5 * h * f2) - k4 * (bound + 0.5 * h * g2)
        f4 = K1 * c1 - k23 * (free + h * f3) + k4 * (bound + h * g3)
        g4 = k3 * (free + h * f3) - k4 * (bound + h * g3)

        cf[n + 1] = free + h * (f1 + 2.0 * f2 + 2.0 * f3 + f4) / 6.0
        cb[n + 1] = bound + h * (g1 + 2.0 * g2 + 2.0 * g3 + g4) / 6.0


def _sample_input(cp: Callable, stage_times: NDArray) -> NDArray:
    values = np.asarray(cp(stage_times), dtype=float)
    if values.shape != stage_times.shape:
        # scalar-only callables
        values = np.array([float(cp(s)) for s in stage_times])
    return values


def integrate_system(
    params: KineticParams,
    cp: Callable,
    t_end: float,
    step: float = DEFAULT_STEP,
) -> Trajectory:
    """Integrate the compartment system from the zero state with RK4.

    Parameters
    ----------
    params : KineticParams
        region rates (degeneracy does not matter here)
    cp : Callable
        plasma input; called once with the array of all stage times, or per
        scalar time when it does not broadcast
    t_end : float
        final time (min), > 0
    step : float
        requested step; the step used is t_end / ceil(t_end / step) <= step

    Returns
    -------
    Trajectory

    Raises
    ------
    NonFiniteState
        state overflowed or the input returned non-finite values

    """

    if not (t_end > 0 and 0 < step <= t_end):
        raise InvalidParameter(f"Need t_end > 0 and 0 < step <= t_end, got t_end={t_end}, step={step} !")

    n_steps = max(1, math.ceil(t_end / step - 1e-9))
    h = t_end / n_steps
    stage_times = np.linspace(0.0, t_end, 2 * n_steps + 1)
    cp_stages = _sample_input(cp, stage_times)

    cf = np.zeros(n_steps + 1)
    cb = np.zeros(n_steps + 1)
    K1, k2, k3, k4 = params.as_tuple()
    _rk4_kernel(cp_stages, h, K1, k2, k3, k4, cf, cb)

    bad = ~(np.isfinite(cf) & np.isfinite(cb))
    if np.any(bad):
        first = int(np.argmax(bad))
        raise NonFiniteState(
            f"Non-finite state at t={first * h} min for {params} !"
        )

    times = stage_times[::2]
    cp_nodes = cp_stages[::2]
    dcf = K1 * cp_nodes - (k2 + k3) * cf + k4 * cb
    dcb = k3 * cf - k4 * cb
    logger.debug(f"RK4 oracle: {n_steps} steps of h={h} for {params}")
    return Trajectory(times=times, cf=cf, cb=cb, dcf=dcf, dcb=dcb)


def sample_oracle(
    params: KineticParams,
    cp: Callable,
    grid: ArrayLike,
    step: float = DEFAULT_STEP,
) -> NDArray[np.float64]:
    """Oracle C_T on ``grid`` (integrates up to the last grid time)."""

    grid = np.asarray(grid, dtype=float)
    t_end = float(grid.max())
    if t_end <= 0:
        return np.zeros_like(grid)
    trajectory = integrate_system(params, cp, t_end, min(step, t_end))
    return trajectory.at(grid)["ct"]


def compare_to_oracle(
    config: Configuration,
    grid: ArrayLike,
    step: float = DEFAULT_STEP,
    cp: Optional[Callable] = None,
) -> Dict[str, float]:
    """Per-region max |closed - oracle| / max(1, |oracle|) on ``grid``.

    Parameters
    ----------
    config : Configuration
        regions and polyexponential input
    grid : array
        positive increasing evaluation times
    step : float
        RK4 step (min)
    cp : Optional[Callable]
        input used by the oracle; defaults to the configuration's own input

    """

    grid = validate_grid(grid)
    cp = config.input if cp is None else cp
    deviations = {}
    for rid, params in config.regions:
        closed = eval_ct_closed_form(params, config.input, grid)
        reference = sample_oracle(params, cp, grid, step)
        deviations[rid] = float(
            np.max(np.abs(closed - reference) / np.maximum(1.0, np.abs(reference)))
        )
    logger.info(f"Oracle comparison (step={step}): worst deviation {max(deviations.values()):.3e}")
    return deviations
