"""
SQLite-backed run logger for sonic-adapters.

Creates tables:
    - run_events: lifecycle events of every subcommand (start, finish, failure)

and appends CSV sinks next to it:
    - loss curves: step plus named loss components, one file per training stage
    - adapter norms: (site, timestep, norm) rows from sampling runs
"""

from __future__ import annotations

import csv
import json
import sqlite3
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple


@dataclass(frozen=True)
class RunEvent:
    """Convenience dataclass representing a single run_events row."""

    timestamp: str
    run_id: str
    command: str
    event: str
    status: str
    duration_ms: Optional[int] = None
    payload: Optional[Dict[str, Any]] = None
    error_message: Optional[str] = None


class RunLogger:
    """Centralized logger for run lifecycle events and training curves."""

    def __init__(self, output_root: Path | str, db_name: str = "run_log.db"):
        self.output_root = Path(output_root)
        self.log_dir = self.output_root / "logs"
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.db_path = self.log_dir / db_name
        self._init_database()

    def _connect(self) -> sqlite3.Connection:
        """Create database connection with timeout and WAL mode for better concurrency."""
        conn = sqlite3.connect(self.db_path, timeout=10.0)
        conn.execute("PRAGMA journal_mode=WAL")
        return conn

    def _init_database(self) -> None:
        """Create tables if they do not exist."""
        with self._connect() as conn:
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS run_events (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    timestamp TEXT NOT NULL,
                    run_id TEXT NOT NULL,
                    command TEXT NOT NULL,
                    event TEXT NOT NULL,
                    status TEXT NOT NULL,
                    duration_ms INTEGER,
                    payload TEXT,
                    error_message TEXT
                )
                """
            )
            conn.commit()

    def log_event(
        self,
        *,
        run_id: str,
        command: str,
        event: str,
        status: str = "success",
        duration_ms: Optional[int] = None,
        payload: Optional[Dict[str, Any]] = None,
        error_message: Optional[str] = None,
    ) -> int:
        """
        Insert a single run event.

        Returns:
            Row id of the inserted event
        """
        row = (
            datetime.now(timezone.utc).isoformat(),
            run_id,
            command,
            event,
            status,
            duration_ms,
            json.dumps(payload, default=str) if payload else None,
            error_message,
        )
        conn = None
        try:
            conn = self._connect()
            cursor = conn.cursor()
            cursor.execute(
                """
                INSERT INTO run_events (
                    timestamp, run_id, command, event, status,
                    duration_ms, payload, error_message
                ) VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                """,
                row,
            )
            conn.commit()
            return cursor.lastrowid
        finally:
            if conn:
                conn.close()

    def get_events(self, run_id: str) -> List[RunEvent]:
        """Return all events of a run in insertion order."""
        with self._connect() as conn:
            rows = conn.execute(
                """
                SELECT timestamp, run_id, command, event, status, duration_ms, payload, error_message
                FROM run_events WHERE run_id = ? ORDER BY id
                """,
                (run_id,),
            ).fetchall()
        return [
            RunEvent(
                timestamp=r[0],
                run_id=r[1],
                command=r[2],
                event=r[3],
                status=r[4],
                duration_ms=r[5],
                payload=json.loads(r[6]) if r[6] else None,
                error_message=r[7],
            )
            for r in rows
        ]

    def get_run_summary(self, run_id: str) -> Dict[str, Any]:
        """Aggregate the events of a run into a small summary dict."""
        events = self.get_events(run_id)
        failures = [e for e in events if e.status != "success"]
        return {
            "run_id": run_id,
            "commands": sorted({e.command for e in events}),
            "event_count": len(events),
            "failure_count": len(failures),
            "total_duration_ms": sum(e.duration_ms or 0 for e in events),
            "last_status": events[-1].status if events else None,
        }

    # ------------------------------------------------------------------ CSV

    def curve_path(self, stage: str) -> Path:
        return self.log_dir / f"{stage}_loss.csv"

    def append_loss_row(self, stage: str, step: int, components: Mapping[str, float]) -> None:
        """Append one (step, loss components) row to the stage's loss curve."""
        path = self.curve_path(stage)
        fieldnames = ["step", *components.keys()]
        new_file = not path.exists()
        with open(path, "a", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            if new_file:
                writer.writeheader()
            writer.writerow({"step": step, **{k: float(v) for k, v in components.items()}})

    def read_loss_curve(self, stage: str) -> List[Dict[str, float]]:
        path = self.curve_path(stage)
        if not path.exists():
            return []
        with open(path, newline="", encoding="utf-8") as f:
            return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]

    def append_norm_rows(self, rows: Iterable[Tuple[int, int, float]], name: str = "adapter_norms") -> Path:
        """Append (site, timestep, norm) rows to the adapter-norm CSV."""
        path = self.log_dir / f"{name}.csv"
        new_file = not path.exists()
        with open(path, "a", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(["site", "timestep", "norm"])
            for site, timestep, norm in rows:
                writer.writerow([site, timestep, f"{norm:.8g}"])
        return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a standalone CSV artifact (per-sample metric records and the like)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(list(header))
        writer.writerows(rows)
    return path


__all__ = ["RunEvent", "RunLogger", "write_csv"]
