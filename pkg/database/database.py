import aiosqlite
import asyncio
import json
import os
from datetime import datetime, timezone
from typing import Optional, List, Dict, Any
import logging
from config import Config
from database.models import DatabaseModels, RunRecord, ResultRow

logger = logging.getLogger(__name__)

class DatabaseManager:
    """Manages database connections"""

    def __init__(self, db_path: str = None):
        self.db_path = db_path or Config.DATABASE_PATH
        self._connection_pool = {}

    async def get_connection(self) -> aiosqlite.Connection:
        """Get database connection with connection pooling"""
        task_id = id(asyncio.current_task())

        if task_id not in self._connection_pool:
            conn = await aiosqlite.connect(self.db_path)
            conn.row_factory = aiosqlite.Row
            self._connection_pool[task_id] = conn

        return self._connection_pool[task_id]

    async def initialize_database(self):
        """Initialize database with tables"""
        directory = os.path.dirname(os.path.abspath(self.db_path))
        os.makedirs(directory, exist_ok=True)

        conn = await self.get_connection()
        await DatabaseModels.create_tables(conn)

        logger.info(f"Database initialized at {self.db_path}")

    async def close_all_connections(self):
        """Close all database connections"""
        for conn in self._connection_pool.values():
            await conn.close()
        self._connection_pool.clear()

class RunHistoryManager:
    """Records finished runs and reads them back"""

    def __init__(self, db_manager: DatabaseManager):
        self.db = db_manager

    async def record_run(self, manifest, output_dir: str, convergence_rows=None) -> int:
        """
        Store a run manifest, its checks and (for evolution runs) the
        (n, value, exact, abs_error) rows. Returns the new run id.
        """
        now = datetime.now(timezone.utc).isoformat()
        config = manifest.config
        summary = manifest.summary

        conn = await self.db.get_connection()
        cursor = await conn.execute("""
            INSERT INTO runs (
                name, experiment, symbol, config, output_dir, version,
                passed, exit_code, fitted_rate, elapsed, created_at
            ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        """, (
            config.get('name') or os.path.basename(os.path.normpath(output_dir)),
            manifest.experiment,
            config.get('symbol'),
            json.dumps(config, sort_keys=True, default=str),
            output_dir,
            manifest.version,
            manifest.passed,
            manifest.exit_code,
            summary.get('fitted_rate'),
            sum(manifest.timings.values()),
            now
        ))
        run_id = cursor.lastrowid

        await conn.executemany("""
            INSERT INTO checks (run_id, name, value, limit_value, relation, passed)
            VALUES (?, ?, ?, ?, ?, ?)
        """, [(run_id, c.name, c.value, c.limit, c.relation, c.passed) for c in manifest.checks])

        if convergence_rows:
            await conn.executemany("""
                INSERT INTO convergence_points (run_id, n, value_re, value_im, exact_re, exact_im, abs_error)
                VALUES (?, ?, ?, ?, ?, ?, ?)
            """, [
                (run_id, n, value.real, value.imag, exact.real, exact.imag, error)
                for n, value, exact, error in convergence_rows
            ])

        await conn.commit()
        logger.info(f"Recorded run {run_id} ({manifest.experiment}, passed={manifest.passed})")
        return run_id

    async def get_run(self, run_id: int) -> Optional[RunRecord]:
        conn = await self.db.get_connection()
        cursor = await conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,))
        row = await cursor.fetchone()
        return RunRecord.from_db_row(row)

    async def get_runs(self, experiment: str = None, limit: int = 20) -> List[RunRecord]:
        """Most recent runs first, optionally for one experiment kind"""
        try:
            conn = await self.db.get_connection()
            if experiment:
                cursor = await conn.execute(
                    "SELECT * FROM runs WHERE experiment = ? ORDER BY run_id DESC LIMIT ?",
                    (experiment, limit)
                )
            else:
                cursor = await conn.execute("SELECT * FROM runs ORDER BY run_id DESC LIMIT ?", (limit,))
            rows = await cursor.fetchall()
            return [RunRecord.from_db_row(row) for row in rows]

        except Exception as e:
            logger.error(f"Error reading run history: {e}")
            return []

    async def get_points(self, run_id: int) -> List[ResultRow]:
        conn = await self.db.get_connection()
        cursor = await conn.execute(
            "SELECT * FROM convergence_points WHERE run_id = ? ORDER BY n",
            (run_id,)
        )
        rows = await cursor.fetchall()
        return [ResultRow.from_db_row(row) for row in rows]

    async def get_checks(self, run_id: int) -> List[Dict[str, Any]]:
        conn = await self.db.get_connection()
        cursor = await conn.execute(
            "SELECT name, value, limit_value, relation, passed FROM checks WHERE run_id = ? ORDER BY id",
            (run_id,)
        )
        rows = await cursor.fetchall()
        return [
            {'name': row[0], 'value': row[1], 'limit': row[2], 'relation': row[3], 'passed': bool(row[4])}
            for row in rows
        ]

    async def rate_history(self, symbol: str) -> List[Dict[str, Any]]:
        """Fitted rates of every converge run of `symbol`, oldest first"""
        conn = await self.db.get_connection()
        cursor = await conn.execute("""
            SELECT run_id, fitted_rate, passed, created_at FROM runs
            WHERE experiment = 'converge' AND symbol = ? AND fitted_rate IS NOT NULL
            ORDER BY run_id
        """, (symbol,))
        rows = await cursor.fetchall()
        return [
            {'run_id': row[0], 'fitted_rate': row[1], 'passed': bool(row[2]), 'created_at': row[3]}
            for row in rows
        ]

# Global database manager instances
db_manager = DatabaseManager()
run_history = RunHistoryManager(db_manager)
