"""
Database module for experiment result storage.

Uses SQLite for lightweight, file-based persistence. A run is keyed by a
fingerprint of its experiment config, so re-running an identical config
updates the same rows.
"""

import hashlib
import json
import logging
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from app.settings import get_db_path

logger = logging.getLogger(__name__)

CELL_FIELDS = [
    "target", "T", "l", "b", "k", "reps", "truth", "mean_estimate", "bias",
    "variance", "mse", "mc_se_of_mse", "degenerate_count",
]


def get_connection(db_path: Optional[Path] = None):
    """Get a database connection."""
    path = Path(db_path) if db_path else get_db_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(str(path))
    conn.row_factory = sqlite3.Row
    return conn


def ensure_columns(cursor, table: str, columns: Dict[str, str]) -> None:
    """Add columns introduced after a table was first created."""
    cursor.execute(f"PRAGMA table_info({table})")
    existing = {row["name"] for row in cursor.fetchall()}
    for name, col_type in columns.items():
        if name not in existing:
            cursor.execute(f"ALTER TABLE {table} ADD COLUMN {name} {col_type}")


def init_db(db_path: Optional[Path] = None):
    """Initialize the database tables."""
    conn = get_connection(db_path)
    cursor = conn.cursor()

    cursor.execute("""
        CREATE TABLE IF NOT EXISTS runs (
            run_id TEXT PRIMARY KEY,
            name TEXT,
            created_at TEXT NOT NULL,
            config_json TEXT NOT NULL
        )
    """)

    cursor.execute("""
        CREATE TABLE IF NOT EXISTS cells (
            run_id TEXT NOT NULL,
            target TEXT NOT NULL,
            T INTEGER NOT NULL,
            l INTEGER NOT NULL,
            b INTEGER NOT NULL,
            k INTEGER,
            reps INTEGER,
            truth REAL,
            mean_estimate REAL,
            bias REAL,
            variance REAL,
            mse REAL,
            mc_se_of_mse REAL,
            degenerate_count INTEGER,
            PRIMARY KEY (run_id, target, T, l, b)
        )
    """)

    ensure_columns(cursor, "runs", {"name": "TEXT"})

    conn.commit()
    conn.close()


def run_fingerprint(config: Dict[str, Any]) -> str:
    """Stable id for an experiment config."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def save_run(config: Dict[str, Any], cells: Iterable[Dict[str, Any]], db_path: Optional[Path] = None) -> str:
    """Upsert a run and its cell rows; returns the run id."""
    run_id = run_fingerprint(config)
    init_db(db_path)
    conn = get_connection(db_path)
    try:
        cursor = conn.cursor()
        cursor.execute(
            """
            INSERT INTO runs (run_id, name, created_at, config_json)
            VALUES (?, ?, ?, ?)
            ON CONFLICT(run_id) DO UPDATE SET
                name = excluded.name,
                created_at = excluded.created_at,
                config_json = excluded.config_json
            """,
            (run_id, config.get("name", ""), datetime.now().isoformat(), json.dumps(config, sort_keys=True)),
        )
        placeholders = ", ".join("?" for _ in CELL_FIELDS)
        updates = ",\n                ".join(
            f"{name} = excluded.{name}" for name in CELL_FIELDS if name not in ("target", "T", "l", "b")
        )
        for cell in cells:
            cursor.execute(
                f"""
                INSERT INTO cells (run_id, {", ".join(CELL_FIELDS)})
                VALUES (?, {placeholders})
                ON CONFLICT(run_id, target, T, l, b) DO UPDATE SET
                {updates}
                """,
                (run_id, *[cell.get(name) for name in CELL_FIELDS]),
            )
        conn.commit()
    finally:
        conn.close()
    logger.info("[DB] Saved run %s", run_id)
    return run_id


def list_runs(db_path: Optional[Path] = None) -> List[Dict[str, Any]]:
    """All runs, newest first."""
    init_db(db_path)
    conn = get_connection(db_path)
    try:
        rows = conn.execute(
            """
            SELECT r.run_id, r.name, r.created_at, COUNT(c.run_id) AS cell_count
            FROM runs r LEFT JOIN cells c ON c.run_id = r.run_id
            GROUP BY r.run_id
            ORDER BY r.created_at DESC
            """
        ).fetchall()
    finally:
        conn.close()
    return [dict(row) for row in rows]


def load_run_config(run_id: str, db_path: Optional[Path] = None) -> Optional[Dict[str, Any]]:
    init_db(db_path)
    conn = get_connection(db_path)
    try:
        row = conn.execute("SELECT config_json FROM runs WHERE run_id = ?", (run_id,)).fetchone()
    finally:
        conn.close()
    return json.loads(row["config_json"]) if row else None


def load_run_cells(run_id: str, db_path: Optional[Path] = None) -> List[Dict[str, Any]]:
    """Cell rows of a run in grid order (target, T, l, b)."""
    init_db(db_path)
    conn = get_connection(db_path)
    try:
        rows = conn.execute(
            f"SELECT {', '.join(CELL_FIELDS)} FROM cells WHERE run_id = ? ORDER BY target, T, l, b",
            (run_id,),
        ).fetchall()
    finally:
        conn.close()
    return [dict(row) for row in rows]


def delete_run(run_id: str, db_path: Optional[Path] = None) -> bool:
    init_db(db_path)
    conn = get_connection(db_path)
    try:
        conn.execute("DELETE FROM cells WHERE run_id = ?", (run_id,))
        removed = conn.execute("DELETE FROM runs WHERE run_id = ?", (run_id,)).rowcount
        conn.commit()
    finally:
        conn.close()
    return removed > 0
