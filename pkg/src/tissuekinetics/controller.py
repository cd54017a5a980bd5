from __future__ import annotations

import functools
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

from BTrees.LOBTree import LOBTree

from tissuekinetics.database import ConnectionManager
from tissuekinetics.structures import Experiment, RunRecord
from tissuekinetics.utils import produce_hash, resolve_search


def safe_transaction(supress_abort: bool = False):
    """Wrap mutating function in try/except that handles logging + database transaction management.

    The wrapped call returns True after a successful commit and False when
    the function raised (the transaction is then aborted and the error logged).

    Parameters
    ----------
    supress_abort : boolean
        Option to skip abort transactions upon failure.

    """

    def safe_transaction_decorator(fn):
        @functools.wraps(fn)
        def safe_transaction_wrapper(depot, *args, **kwargs):
            try:
                fn(depot, *args, **kwargs)
                depot.conn_manager.commit()
                depot.logger.info(
                    f"Successful COMMIT - {fn.__name__} - {args} - {['{}={}'.format(*items) for items in kwargs.items()]}"
                )
                return True
            except Exception as err:
                if not supress_abort:
                    depot.conn_manager.cancel_commit()
                    depot.logger.error(err, stack_info=True, exc_info=True)
                return False

        return safe_transaction_wrapper

    return safe_transaction_decorator


class RunDepot:
    """
    A class for reading and writing the run archive.

    ...

    Attributes
    ----------
    logger : logging.Logger
         module logger
    conn_manager : ConnectionManager
        database connection manager

    Notes
    -----
    Runs live in the 'runs' tree keyed by 'RunRecord.id'; experiments group
    run ids by name in the 'experiments' tree.

    """

    def __init__(self, path_to_configuration: str | Path) -> None:
        """Init method.

        Parameters
        ----------
        path_to_configuration : str | Path
            path (str | Path) to ZConfig file or ``.fs`` filestorage

        Examples
        --------
        >>> depot = RunDepot("runs.fs")
        >>> depot.search_runs(command="==fit", converged="==True")

        """

        self.logger = logging.getLogger(__name__)
        self.conn_manager = ConnectionManager(path_to_configuration)
        self._validate_root_objects()

    def _validate_root_objects(self) -> None:
        for k in ["runs", "experiments"]:
            self._init_root_object(k)

    @safe_transaction(supress_abort=True)
    def _init_root_object(self, key: str) -> None:
        if key in self.conn_manager.root:
            raise KeyError(f"Tree '{key}' already exists !")
        self.conn_manager.root[key] = LOBTree()

    def reset_connection(self) -> None:
        """Reset database connection through 'conn_manager' field"""

        if not self.conn_manager.is_connected():
            self.conn_manager.create_db_connection()
            self._validate_root_objects()

    def close(self) -> None:
        self.conn_manager.close_db_connection()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    @safe_transaction()
    def add_experiment(self, new_experiment: Experiment) -> None:
        """Add new experiment to database.

        Raises
        ------
        KeyError
            experiment already exists in database

        """

        if new_experiment.id in self.experiments:
            raise KeyError(f"Experiment - '{new_experiment.name}' - already exists!")

        self.experiments[new_experiment.id] = new_experiment
        self.logger.info(f"Add experiment - '{new_experiment.name}' - {new_experiment.id}")

    @safe_transaction()
    def remove_experiment(self, experiment: str | int, keep_runs: bool = False) -> None:
        """Remove experiment and, unless 'keep_runs', its runs.

        Parameters
        ----------
        experiment : str | int
            experiment name or id
        keep_runs : bool
            leave the experiment's runs in the 'runs' tree

        Raises
        ------
        KeyError
            experiment is not in database

        """

        experiment_id = self._experiment_id(experiment)
        if experiment_id not in self.experiments:
            raise KeyError(f"Experiment - {experiment} - does not exist!")

        if not keep_runs:
            for run_id in self.experiments[experiment_id].get_field("runs"):
                if run_id in self.runs:
                    del self.runs[run_id]

        del self.experiments[experiment_id]
        self.logger.info(f"Remove experiment - {experiment}")

    @safe_transaction()
    def add_run(self, new_run: RunRecord, experiment: Optional[str] = None) -> None:
        """Add run to database under 'experiment' (default: the run's command name).

        The experiment is created when missing.

        Raises
        ------
        KeyError
            'new_run' already exists in database

        Examples
        --------
        >>> depot = RunDepot(...)
        >>> depot.add_run(RunRecord.from_manifest(manifest, {"exit_code": 0}))

        """

        run_id = new_run.id
        if run_id in self.runs:
            raise KeyError(f"Run - '{run_id}' - already exists! Run = {new_run}")

        name = experiment or new_run.command
        experiment_id = produce_hash(name)
        if experiment_id not in self.experiments:
            self.experiments[experiment_id] = Experiment(name=name)

        self.runs[run_id] = new_run
        self.experiments[experiment_id].add_run(run_id)
        self.logger.info(f"Add run - '{run_id}' to experiment - '{name}'")

    @safe_transaction()
    def remove_run(self, run_id: int) -> None:
        """Remove run from database and from every experiment listing it.

        Raises
        ------
        KeyError
            'run_id' key is not in database

        """

        if run_id not in self.runs:
            raise KeyError(f"Run - '{run_id}' - does not exist!")

        del self.runs[run_id]
        for _, experiment in self._traverse("experiments", include_values=True):
            if run_id in experiment.runs:
                experiment.remove_run(run_id)
        self.logger.info(f"Remove run - '{run_id}'")

    def search_runs(
        self, view_only: bool = True, experiment: Optional[str | int] = None, **kwargs
    ) -> List[Tuple[int, str | RunRecord]]:
        """Search database for runs

        Parameters
        ----------
        view_only : bool
            return str representations instead of raw objects
        experiment : str | int, optional
            limit search to within single experiment
        **kwargs:
            field or summary name mapped to a comparison expression

        Returns
        -------
        List[Tuple[int, str | RunRecord]]
            list of tuple pairs (id, str | RunRecord)

        Examples
        --------
        >>> depot.search_runs(experiment="verify", passed="==True", timestamp=">2026-01-01")

        """

        format_output = lambda r: str(r) if view_only else r
        if experiment is not None:
            experiment_id = self._experiment_id(experiment)
            if experiment_id not in self.experiments:
                return []
            iter_object: Iterable = (
                (run_id, self.runs[run_id])
                for run_id in self.experiments[experiment_id].get_field("runs")
                if run_id in self.runs
            )
        else:
            iter_object = self._traverse(root_tree="runs", include_values=True)
        return [
            (id, format_output(run))
            for id, run in iter_object
            if self._inspect_run(run, **kwargs)
        ]

    def _inspect_run(self, run: RunRecord, **kwargs) -> bool:
        for key, val in kwargs.items():
            comp_op, formatted_val = resolve_search(val)
            try:
                if not comp_op(run.lookup(key), formatted_val):
                    return False
            except (AttributeError, TypeError) as _:
                return False
        return True

    def _experiment_id(self, experiment: str | int) -> int:
        return experiment if isinstance(experiment, int) else produce_hash(experiment)

    def _traverse(self, root_tree: str, include_values: bool = False) -> Iterable:
        tree = self.experiments if root_tree == "experiments" else self.runs
        return tree.items() if include_values else tree.keys()

    @property
    def runs(self) -> LOBTree:
        """Return 'runs' BTree from database"""
        return self.conn_manager.root["runs"]

    @property
    def experiments(self) -> LOBTree:
        """Return 'experiments' BTree from database"""
        return self.conn_manager.root["experiments"]

    @property
    def experiment_names(self) -> List[str]:
        """Return sorted list of experiment names"""

        return sorted(
            v.get_field("name")
            for _, v in self._traverse(root_tree="experiments", include_values=True)
        )
