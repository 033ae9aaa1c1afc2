import aiosqlite
import json
from typing import Optional, Dict, Any
import logging

logger = logging.getLogger(__name__)

class DatabaseModels:
    """Database schema and table creation"""

    @staticmethod
    async def create_tables(db: aiosqlite.Connection):
        """Create all tables for the run history"""

        # Runs table
        await db.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                name TEXT NOT NULL,
                experiment TEXT NOT NULL CHECK (experiment IN ('propagate', 'converge', 'symbol-roundtrip', 'plancherel', 'substitute', 'quantize-dump')),
                symbol TEXT,
                config TEXT NOT NULL,
                output_dir TEXT NOT NULL,
                version TEXT NOT NULL,
                passed BOOLEAN NOT NULL,
                exit_code INTEGER NOT NULL,
                fitted_rate REAL NULL,
                elapsed REAL DEFAULT 0,
                created_at TEXT NOT NULL
            )
        """)

        # One row per check of a run
        await db.execute("""
            CREATE TABLE IF NOT EXISTS checks (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                name TEXT NOT NULL,
                value REAL,
                limit_value REAL NOT NULL,
                relation TEXT NOT NULL CHECK (relation IN ('<=', '>=')),
                passed BOOLEAN NOT NULL,
                FOREIGN KEY (run_id) REFERENCES runs (run_id)
            )
        """)

        # Convergence data (sliced value against exact per n)
        await db.execute("""
            CREATE TABLE IF NOT EXISTS convergence_points (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                n INTEGER NOT NULL,
                value_re REAL NOT NULL,
                value_im REAL NOT NULL,
                exact_re REAL NOT NULL,
                exact_im REAL NOT NULL,
                abs_error REAL NOT NULL,
                FOREIGN KEY (run_id) REFERENCES runs (run_id),
                UNIQUE(run_id, n)
            )
        """)

        await db.execute("CREATE INDEX IF NOT EXISTS idx_runs_experiment ON runs(experiment)")
        await db.execute("CREATE INDEX IF NOT EXISTS idx_runs_name ON runs(name)")
        await db.execute("CREATE INDEX IF NOT EXISTS idx_checks_run ON checks(run_id)")
        await db.execute("CREATE INDEX IF NOT EXISTS idx_points_run ON convergence_points(run_id)")

        await db.commit()
        logger.info("Database tables created successfully")


class RunRecord:
    """One recorded CLI run"""

    def __init__(self, run_id: int, name: str, experiment: str, **kwargs):
        self.run_id = run_id
        self.name = name
        self.experiment = experiment
        self.symbol = kwargs.get('symbol')
        self.config = kwargs.get('config', {})
        self.output_dir = kwargs.get('output_dir')
        self.version = kwargs.get('version')
        self.passed = bool(kwargs.get('passed', False))
        self.exit_code = kwargs.get('exit_code', 0)
        self.fitted_rate = kwargs.get('fitted_rate')
        self.elapsed = kwargs.get('elapsed', 0.0)
        self.created_at = kwargs.get('created_at')

    @classmethod
    def from_db_row(cls, row):
        """Create RunRecord instance from database row"""
        if not row:
            return None
        return cls(
            run_id=row[0],
            name=row[1],
            experiment=row[2],
            symbol=row[3],
            config=json.loads(row[4]) if row[4] else {},
            output_dir=row[5],
            version=row[6],
            passed=row[7],
            exit_code=row[8],
            fitted_rate=row[9],
            elapsed=row[10],
            created_at=row[11]
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'run_id': self.run_id,
            'name': self.name,
            'experiment': self.experiment,
            'symbol': self.symbol,
            'output_dir': self.output_dir,
            'version': self.version,
            'passed': self.passed,
            'exit_code': self.exit_code,
            'fitted_rate': self.fitted_rate,
            'elapsed': round(self.elapsed or 0.0, 3),
            'created_at': self.created_at
        }


class ResultRow:
    """One convergence point of a recorded run"""

    def __init__(self, run_id: int, n: int, value: complex, exact: complex, abs_error: float):
        self.run_id = run_id
        self.n = n
        self.value = value
        self.exact = exact
        self.abs_error = abs_error

    @classmethod
    def from_db_row(cls, row) -> Optional['ResultRow']:
        if not row:
            return None
        return cls(
            run_id=row[1],
            n=row[2],
            value=complex(row[3], row[4]),
            exact=complex(row[5], row[6]),
            abs_error=row[7]
        )
