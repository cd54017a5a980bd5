from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from tissuekinetics.model_core import Configuration, KineticParams, PolyexpInput

RESOURCES = Path(__file__).parent / "resources"
DEMO_CONFIG = Path(__file__).parents[1] / "demo" / "demo_config.json"
DEMO_TACS = Path(__file__).parents[1] / "demo" / "demo_tacs.csv"


@dataclass
class Case:
    val: Any
    expected_result: Any
    id: str = field(init=False)

    def __post_init__(self):
        self.id = f"case_value - {self.val}"


def small_config(n: int = 3) -> Configuration:
    """n regions (n <= 7) sharing a two term input."""

    rates = [
        (0.60, 0.40, 0.10, 0.05),
        (0.45, 0.30, 0.20, 0.08),
        (0.80, 0.55, 0.05, 0.02),
        (0.30, 0.25, 0.30, 0.12),
        (0.55, 0.70, 0.15, 0.10),
        (0.25, 0.15, 0.40, 0.20),
        (0.70, 0.90, 0.08, 0.04),
    ]
    regions = tuple((f"r{i + 1}", KineticParams(*rates[i])) for i in range(n))
    return Configuration(regions, PolyexpInput.from_arrays([2.0, 5.0], [-0.05, -0.8]))


def log_grid(start: float = 0.1, end: float = 90.0, count: int = 24) -> np.ndarray:
    return np.geomspace(start, end, count)
