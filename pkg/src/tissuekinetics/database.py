import logging
import re
from pathlib import Path
from typing import Optional, Union

import transaction
from persistent.mapping import PersistentMapping
from ZODB import DB, Connection, FileStorage, config

from tissuekinetics.errors import SchemaViolation

_ZODB_SECTION = re.compile(r"<zodb(\s[^>]*)?>.*</zodb>", re.DOTALL)


class ConnectionManager:
    """
    Owner of the run archive's ZODB database, connection and transactions.

    ...

    Attributes
    ----------
    _config_path : Path
         ``.fs`` filestorage or ZConfig file
    _db : Optional[DB]
         open database
    _conn : Optional[Connection.Connection]
         open connection
    _root : Optional[PersistentMapping]
         root mapping of the connection
    _txn : transaction.TransactionManager
         transaction manager private to this connection

    Notes
    -----
    Every manager runs its own transaction manager, so two archives opened in
    one process commit and abort independently. Reading and writing archive
    objects belongs to 'RunDepot'.

    """

    _config_path: Path
    _db: Optional[DB]
    _conn: Optional[Connection.Connection]
    _root: Optional[PersistentMapping]

    def __init__(
        self,
        path_to_configuration: Union[str, Path],
        immediate_init: bool = True,
    ) -> None:
        """Init method

        Parameters
        ----------
        path_to_configuration : Union[str, Path]
            ``.fs`` file storage path or ZConfig database file
        immediate_init : bool
            open the connection right away

        Examples
        --------
        >>> with ConnectionManager("runs.fs") as manager:
        ...     manager.root["runs"]

        """

        self.logger = logging.getLogger(__name__)
        self._config_path = Path(path_to_configuration)
        self._txn = transaction.TransactionManager()
        self._db = None
        self._conn = None
        self._root = None
        if immediate_init:
            self.create_db_connection()

    def create_db_connection(self):
        """Open database (once) and a fresh connection on it.

        Raises
        ------
        SchemaViolation
            ZConfig file without a <zodb> section
        Exception
            anything raised while opening, logged then re-raised

        """

        try:
            if self._db is None:
                self._db = self._open_database()
            self._conn = self._db.open(transaction_manager=self._txn)
            self._root = self._conn.root()
        except Exception as e:
            self.logger.error(e, exc_info=True)
            raise e
        self.logger.info(f"Archive CONNECTED - {self._config_path}")

    def _open_database(self) -> DB:
        if self._config_path.suffix == ".fs":
            self._config_path.parent.mkdir(parents=True, exist_ok=True)
            return DB(FileStorage.FileStorage(str(self._config_path)))
        self._evaluate_config_validity()
        return config.databaseFromURL(str(self._config_path))

    def _evaluate_config_validity(self):
        text = self._config_path.read_text(encoding="utf-8")
        if not _ZODB_SECTION.search(text):
            raise SchemaViolation(
                f"'{self._config_path}' is not a ZConfig database file - a <zodb> section is required !"
            )

    def close_db_connection(self):
        self._close()

    def cancel_commit(self) -> None:
        """Abort the pending transaction."""
        self._txn.abort()

    def commit(self) -> None:
        self._txn.commit()

    def is_connected(self) -> bool:
        return isinstance(self._conn, Connection.Connection) and self._conn.opened is not None

    @property
    def conn(self):
        return self._conn

    @property
    def root(self):
        return self._root

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self._close()

    def __del__(self):
        try:
            self._close()
        except Exception as _:
            pass

    def _close(self):
        if not self.is_connected():
            return
        try:
            self._txn.abort()
            self._conn.close()
            self._db.pack()
            self._db.close()
        except AttributeError as e:
            self.logger.error(e, exc_info=True)
        else:
            self.logger.info(f"Archive CLOSED - {self._config_path}")
        finally:
            self._conn = None
            self._root = None
            self._db = None
