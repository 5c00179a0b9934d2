import json
import sqlite3
from typing import List, Optional

from .database import get_db_connection
from .models import RunArtifact, RunResult


def dict_from_row(row: sqlite3.Row) -> dict:
    """Convert sqlite3.Row to dictionary."""
    return dict(zip(row.keys(), row))


# ============ Artifacts CRUD ============

def save_artifact(artifact: RunArtifact) -> dict:
    """Insert or replace an artifact together with its history rows."""
    conn = get_db_connection()
    cursor = conn.cursor()
    # histories live in their own table
    runs = [run.model_dump(mode="json", exclude={"history"}) for run in artifact.runs]

    cursor.execute("DELETE FROM history WHERE config_hash = ?", (artifact.config_hash,))
    cursor.execute("""
        INSERT OR REPLACE INTO artifacts (config_hash, name, schema_version, config_json, summary_json, runs_json)
        VALUES (?, ?, ?, ?, ?, ?)
    """, (
        artifact.config_hash,
        artifact.config.name,
        artifact.schema_version,
        artifact.config.model_dump_json(),
        json.dumps(artifact.summary, sort_keys=True),
        json.dumps(runs, sort_keys=True),
    ))
    cursor.executemany("""
        INSERT INTO history (config_hash, run, iteration, loss, train_acc, test_acc,
                             grad_norm, transmitted_components, circuits)
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
    """, [
        (artifact.config_hash, run.run, row.iteration, row.loss, row.train_acc, row.test_acc,
         row.grad_norm, row.transmitted_components, row.circuits)
        for run in artifact.runs for row in run.history
    ])
    conn.commit()
    conn.close()
    return get_artifact_summary(artifact.config_hash)


def get_artifact_summary(config_hash: str) -> Optional[dict]:
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute("""
        SELECT config_hash, name, schema_version, created_at, summary_json
        FROM artifacts WHERE config_hash = ?
    """, (config_hash,))
    row = cursor.fetchone()
    conn.close()
    if not row:
        return None
    result = dict_from_row(row)
    result["summary"] = json.loads(result.pop("summary_json"))
    return result


def list_artifacts(name: Optional[str] = None, limit: int = 100, offset: int = 0) -> List[dict]:
    conn = get_db_connection()
    cursor = conn.cursor()

    query = "SELECT config_hash, name, schema_version, created_at FROM artifacts"
    params = []
    if name:
        query += " WHERE name = ?"
        params.append(name)
    query += " ORDER BY created_at DESC, name LIMIT ? OFFSET ?"
    params.extend([limit, offset])

    cursor.execute(query, params)
    rows = cursor.fetchall()
    conn.close()
    return [dict_from_row(row) for row in rows]


def get_history(config_hash: str, run: Optional[int] = None) -> List[dict]:
    conn = get_db_connection()
    cursor = conn.cursor()

    query = """
        SELECT run, iteration, loss, train_acc, test_acc, grad_norm, transmitted_components, circuits
        FROM history WHERE config_hash = ?
    """
    params = [config_hash]
    if run is not None:
        query += " AND run = ?"
        params.append(run)
    query += " ORDER BY run, iteration"

    cursor.execute(query, params)
    rows = cursor.fetchall()
    conn.close()
    return [dict_from_row(row) for row in rows]


def get_artifact(config_hash: str) -> Optional[RunArtifact]:
    """Rebuild the full artifact, histories included."""
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute("SELECT * FROM artifacts WHERE config_hash = ?", (config_hash,))
    row = cursor.fetchone()
    conn.close()
    if not row:
        return None

    histories = {}
    for entry in get_history(config_hash):
        histories.setdefault(entry.pop("run"), []).append(entry)
    runs = []
    for run in json.loads(row["runs_json"]):
        run["history"] = histories.get(run["run"], [])
        runs.append(RunResult.model_validate(run))
    return RunArtifact(
        schema_version=row["schema_version"],
        config_hash=row["config_hash"],
        config=json.loads(row["config_json"]),
        runs=runs,
        summary=json.loads(row["summary_json"]),
    )


def delete_artifact(config_hash: str) -> bool:
    conn = get_db_connection()
    cursor = conn.cursor()
    cursor.execute("DELETE FROM history WHERE config_hash = ?", (config_hash,))
    cursor.execute("DELETE FROM artifacts WHERE config_hash = ?", (config_hash,))
    deleted = cursor.rowcount > 0
    conn.commit()
    conn.close()
    return deleted
