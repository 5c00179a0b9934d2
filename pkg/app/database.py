import sqlite3
import os
from pathlib import Path

# Database path - use DATABASE_DIR env var for a mounted volume, fallback to local ./data
DATABASE_DIR = os.environ.get("DATABASE_DIR", str(Path(__file__).parent.parent / "data"))
DATABASE_PATH = Path(DATABASE_DIR) / "runs.db"


def get_db_connection():
    """Get a database connection with row factory."""
    conn = sqlite3.connect(DATABASE_PATH)
    conn.row_factory = sqlite3.Row
    conn.execute("PRAGMA foreign_keys = ON")
    return conn


def init_db():
    """Initialize the database with schema."""
    os.makedirs(DATABASE_PATH.parent, exist_ok=True)

    conn = get_db_connection()
    cursor = conn.cursor()

    # One row per experiment config
    cursor.execute("""
        CREATE TABLE IF NOT EXISTS artifacts (
            config_hash TEXT PRIMARY KEY,
            name TEXT NOT NULL,
            schema_version TEXT NOT NULL,
            created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
            config_json TEXT NOT NULL,
            summary_json TEXT NOT NULL,
            runs_json TEXT NOT NULL
        )
    """)

    # Per-iteration history of every run
    cursor.execute("""
        CREATE TABLE IF NOT EXISTS history (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            config_hash TEXT NOT NULL,
            run INTEGER NOT NULL,
            iteration INTEGER NOT NULL,
            loss REAL NOT NULL,
            train_acc REAL NOT NULL,
            test_acc REAL NOT NULL,
            grad_norm REAL,
            transmitted_components INTEGER NOT NULL,
            circuits INTEGER NOT NULL,
            FOREIGN KEY (config_hash) REFERENCES artifacts(config_hash) ON DELETE CASCADE,
            UNIQUE(config_hash, run, iteration)
        )
    """)

    conn.commit()
    conn.close()


if __name__ == "__main__":
    init_db()
    print(f"Database initialized at {DATABASE_PATH}")
