from datetime import datetime, timezone

from sqlalchemy import JSON, Column, DateTime, Integer, String
from sqlalchemy.orm import declarative_base

Base = declarative_base()


def _utcnow():
    return datetime.now(timezone.utc).replace(tzinfo=None)


class RunRecord(Base):
    __tablename__ = "runs"
    id = Column(Integer, primary_key=True)
    command = Column(String(50), nullable=False)  # e.g., 'agent-train', 'compare'
    seed = Column(Integer, nullable=False)
    config = Column(JSON, nullable=False)  # resolved RunConfig as plain JSON
    summary = Column(JSON, nullable=True)  # headline numbers printed by the command
    artifacts = Column(JSON, nullable=True)  # list of written file paths
    created = Column(DateTime, nullable=False, default=_utcnow)
