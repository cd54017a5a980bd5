from __future__ import annotations

import getpass
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, ClassVar, Dict, List, Optional, Tuple

import pandas as pd
import persistent

from tissuekinetics import __version__
from tissuekinetics.utils import produce_hash


class DataObject(persistent.Persistent):
    """
    A base class for persistent+dataclass objects.

    """

    @property
    def id(self):
        return self._eval_hash()

    def get_field(self, key: str) -> Any:
        val = self[key]
        if isinstance(val, (list, dict)):
            return val.copy()
        return val

    def update_field(self, key: str, val: Any) -> None:
        self[key] = val

    def __eq__(self, other) -> bool:
        return isinstance(other, self.__class__) and self.id == other.id

    def __lt__(self, other) -> bool:
        return isinstance(other, self.__class__) and self.id < other.id

    def __hash__(self) -> int:
        return self.id

    def __contains__(self, key: str) -> bool:
        return hasattr(self, key)

    def __getitem__(self, key: str) -> Any:
        if key not in self:
            raise AttributeError(
                f"'{self.__class__.__name__}' type does not have attribute - '{key}' !"
            )
        return getattr(self, key)

    def __setitem__(self, key: str, val: Any) -> None:
        if key not in self:
            raise AttributeError(
                f"'{self.__class__.__name__}' type does not have attribute - '{key}' !"
            )
        if key in getattr(self, "_static_fields_", ()):
            raise AttributeError(f"'{key}' is an immutable field !")
        setattr(self, key, val)

    def _eval_hash(self) -> int:
        return produce_hash(
            tuple(self.get_field(name) for name in sorted(self._static_fields_))
        )


@dataclass
class RunManifest:
    """
    Reproducibility record written next to every command output.

    ...

    Attributes
    ----------
    command : str
        CLI command name (simulate, fit, check, verify, oracle-compare)
    inputs : Dict[str, str]
        input file paths by role
    options : Dict[str, Any]
        parsed command options
    seed : Optional[int]
        seed of the run, None for deterministic commands
    version : str
        toolkit version
    wall_time_s : float
        elapsed wall time in seconds
    timestamp : str
        ISO timestamp of the run start

    """

    command: str
    inputs: Dict[str, str] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = __version__
    wall_time_s: float = 0.0
    timestamp: str = field(
        default_factory=lambda: datetime.now().isoformat(timespec="microseconds")
    )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(eq=False, repr=False)
class RunRecord(DataObject):
    """
    A class for storing one archived command run.

    ...

    Attributes
    ----------
    command : str
        CLI command name
    timestamp : Timestamp
        pandas timestamp of the run start
    seed : Optional[int]
        seed of the run
    inputs : Dict[str, str]
        input file paths by role
    options : Dict[str, Any]
        parsed command options
    summary : Dict[str, Any]
        flat scalar outcomes (exit_code, sse, converged, passed, satisfied, ...)
    version : str
        toolkit version
    wall_time_s : float
        elapsed wall time in seconds
    creator : str
        inferred information from calling OS user

    Notes
    -----
    Static_fields denote immutable fields.  Unique ID is dependent on these.

    Search criteria not matching a field are looked up in 'summary'.

    """

    _static_fields_: ClassVar[Tuple] = ("command", "timestamp", "seed")

    command: str
    timestamp: pd.Timestamp = field(
        default_factory=lambda: pd.to_datetime(datetime.now())
    )
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    version: str = __version__
    wall_time_s: float = 0.0
    creator: str = field(init=False, default="Unknown")

    def __post_init__(self):
        self.timestamp = pd.to_datetime(self.timestamp)
        try:
            self.creator = getpass.getuser()
        except Exception as _:
            self.creator = "Unknown"

    @classmethod
    def from_manifest(cls, manifest: RunManifest, summary: Dict[str, Any]) -> RunRecord:
        return cls(
            command=manifest.command,
            timestamp=manifest.timestamp,
            seed=manifest.seed,
            inputs=dict(manifest.inputs),
            options=dict(manifest.options),
            summary=dict(summary),
            version=manifest.version,
            wall_time_s=manifest.wall_time_s,
        )

    def lookup(self, key: str) -> Any:
        """Field value, falling back to the summary entry of the same name."""

        if key in self:
            return self.get_field(key)
        try:
            return self.summary[key]
        except KeyError:
            raise AttributeError(f"Run - '{self.id}' - has no field or summary entry '{key}' !")

    def __repr__(self) -> str:
        return ", ".join(
            [
                f"run_id={self.id}",
                f"command={self.command}",
                f"timestamp={self.timestamp}",
                f"seed={self.seed}",
                f"creator={self.creator}",
                f"summary={self.summary}",
            ]
        )


@dataclass(eq=False, repr=False)
class Experiment(DataObject):
    """
    A named group of archived runs.

    ...

    Attributes
    ----------
    name : str
         name of experiment
    description : str, optional(default=None)
        optional commentary about experiment
    runs : List(int)
        list of 'RunRecord' IDs in object database
    creator : str
        inferred information from calling OS user

    Notes
    -----
    Field of 'name' is required.

    """

    _static_fields_: ClassVar[Tuple] = ("name",)

    name: str
    description: Optional[str] = None
    runs: List[int] = field(default_factory=list)
    creator: str = field(init=False, default="Unknown")

    def __post_init__(self):
        try:
            self.creator = getpass.getuser()
        except Exception as _:
            self.creator = "Unknown"

    @property
    def run_ids(self) -> List[int]:
        """list(int) : Return list of RunRecord integer IDs."""
        return self.runs

    def add_run(self, run_id: int):
        """
        Add run ID to 'runs' field.

        Parameters
        ----------
        run_id : int
            int ID of new run

        Raises
        ------
        AttributeError
            'run_id' already exists in experiment's 'runs' field.

        Notes
        -----
        This method should be called from a handling object that has an established
        database connection in scope.

        """

        if run_id in self.runs:
            raise AttributeError(
                f"Run - '{run_id}' already exists in experiment - '{self.name}'!"
            )
        self.runs.append(run_id)
        self._p_changed = True

    def remove_run(self, run_id: int):
        if run_id not in self.runs:
            raise AttributeError(f"Run - '{run_id}' is not in experiment - '{self.name}'!")
        self.runs.remove(run_id)
        self._p_changed = True

    def __repr__(self) -> str:
        return ", ".join(
            [
                f"name={self.name}",
                f"description={self.description}",
                f"creator={self.creator}",
                f"runs={self.runs}",
            ]
        )
