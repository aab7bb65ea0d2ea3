"""Run registry: one row per CLI command in ``<output_dir>/runs.db``.

Nothing reads the registry back to produce artifacts; it only answers "what
ran, with which config, and what did it write".
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from sqlalchemy import create_engine, select
from sqlalchemy.orm import sessionmaker

from .schema import Base, RunRecord

logger = logging.getLogger(__name__)

REGISTRY_FILE = "runs.db"


def registry_url(output_dir) -> str:
    return f"sqlite:///{Path(output_dir) / REGISTRY_FILE}"


def init_db(url: str):
    """Create the tables if needed and return a session factory."""
    if url.startswith("sqlite:///") and url != "sqlite:///:memory:":
        Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
    engine = create_engine(url)
    Base.metadata.create_all(engine)
    return sessionmaker(bind=engine, expire_on_commit=False)


def record_run(
    session_factory,
    command: str,
    seed: int,
    config: Dict[str, Any],
    summary: Optional[Dict[str, Any]] = None,
    artifacts: Iterable = (),
) -> RunRecord:
    record = RunRecord(
        command=command,
        seed=seed,
        config=config,
        summary=summary or {},
        artifacts=[str(a) for a in artifacts],
    )
    with session_factory() as session:
        session.add(record)
        session.commit()
    logger.debug("recorded run %s (%s)", record.id, command)
    return record


def latest_run(session_factory, command: Optional[str] = None) -> Optional[RunRecord]:
    stmt = select(RunRecord).order_by(RunRecord.id.desc()).limit(1)
    if command is not None:
        stmt = stmt.where(RunRecord.command == command)
    with session_factory() as session:
        return session.scalars(stmt).first()
