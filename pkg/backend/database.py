"""
Database models and setup for the frugal-bench run store
"""
from sqlalchemy import create_engine, Column, Integer, BigInteger, String, DateTime, Text, Boolean, Float, ForeignKey
from sqlalchemy.orm import declarative_base, sessionmaker, relationship
from datetime import datetime
import json
import math
from typing import Dict, List, Optional, Any
import logging

from config import settings

logger = logging.getLogger(__name__)

# Database setup
_connect_args = {"check_same_thread": False} if settings.DATABASE_URL.startswith("sqlite") else {}
engine = create_engine(settings.DATABASE_URL, echo=settings.DEBUG, connect_args=_connect_args)
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
Base = declarative_base()

RUN_STATUSES = ("pending", "running", "finished", "failed")


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


class ExperimentRun(Base):
    """One execution of an experiment config"""
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    name = Column(String(200), nullable=False)
    mode = Column(String(20), nullable=False)  # synthetic, semi_synthetic
    config_digest = Column(String(64), index=True, nullable=False)
    config_json = Column(Text, nullable=False)
    status = Column(String(20), default="pending", index=True)
    output_dir = Column(String(500))
    error = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)
    wall_clock_seconds = Column(Float)

    # Relationships
    results = relationship("ResultRecord", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<ExperimentRun(name='{self.name}', status='{self.status}', digest='{self.config_digest[:12]}')>"

    def to_dict(self) -> Dict[str, Any]:
        """Convert run to dictionary"""
        return {
            "id": self.id,
            "name": self.name,
            "mode": self.mode,
            "config_digest": self.config_digest,
            "config": json.loads(self.config_json) if self.config_json else None,
            "status": self.status,
            "output_dir": self.output_dir,
            "error": self.error,
            "created_at": self.created_at.isoformat() if self.created_at else None,
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
            "wall_clock_seconds": self.wall_clock_seconds
        }


class ResultRecord(Base):
    """One (iteration, model, test kind) row of a run"""
    __tablename__ = "result_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.id"), nullable=False, index=True)
    iteration = Column(Integer, nullable=False)
    model = Column(String(100), nullable=False)
    test_kind = Column(String(20), nullable=False)  # mean, distributional
    target = Column(String(10))
    p_value = Column(Float)
    statistic = Column(Float)
    degenerate = Column(Boolean, default=False)
    seed = Column(BigInteger)
    out_of_support = Column(Integer, default=0)
    error = Column(Text)

    # Relationships
    run = relationship("ExperimentRun", back_populates="results")

    def __repr__(self):
        return f"<ResultRecord(run_id={self.run_id}, iteration={self.iteration}, model='{self.model}')>"

    def to_dict(self) -> Dict[str, Any]:
        """Convert result row to dictionary"""
        return {
            "iteration": self.iteration,
            "model": self.model,
            "test_kind": self.test_kind,
            "target": self.target,
            "p_value": self.p_value,
            "statistic": self.statistic if self.statistic is None or math.isfinite(self.statistic) else str(self.statistic),
            "degenerate": self.degenerate,
            "seed": self.seed,
            "out_of_support": self.out_of_support,
            "error": self.error or None
        }


def create_tables():
    """Create all database tables"""
    Base.metadata.create_all(bind=engine)
    logger.info("Database tables created successfully")


def init_database():
    """Initialize database with tables"""
    logger.info("Initializing database...")
    create_tables()
    logger.info("Database initialized successfully")


class DatabaseManager:
    """Database manager with common run-store operations"""

    def __init__(self):
        self.db = SessionLocal()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.db.close()

    def create_run(self, name: str, mode: str, config_digest: str, config: Dict[str, Any],
                   output_dir: str = None) -> ExperimentRun:
        """Create a pending run record"""
        run = ExperimentRun(
            name=name,
            mode=mode,
            config_digest=config_digest,
            config_json=json.dumps(config, sort_keys=True),
            output_dir=output_dir,
            status="pending"
        )

        self.db.add(run)
        self.db.commit()
        self.db.refresh(run)

        logger.info(f"Created run {run.id}: {name} ({config_digest[:12]})")
        return run

    def _set_status(self, run_id: int, status: str, **fields) -> Optional[ExperimentRun]:
        run = self.get_run(run_id)
        if not run:
            logger.warning(f"Run {run_id} not found")
            return None
        run.status = status
        for key, value in fields.items():
            setattr(run, key, value)
        self.db.commit()
        self.db.refresh(run)
        return run

    def mark_running(self, run_id: int) -> Optional[ExperimentRun]:
        return self._set_status(run_id, "running")

    def mark_finished(self, run_id: int, wall_clock_seconds: float = None,
                      output_dir: str = None) -> Optional[ExperimentRun]:
        fields = {"finished_at": datetime.utcnow(), "wall_clock_seconds": wall_clock_seconds}
        if output_dir:
            fields["output_dir"] = output_dir
        return self._set_status(run_id, "finished", **fields)

    def mark_failed(self, run_id: int, error: str) -> Optional[ExperimentRun]:
        return self._set_status(run_id, "failed", finished_at=datetime.utcnow(), error=error)

    def add_results(self, run_id: int, table) -> int:
        """Store every row of a ResultsTable under a run"""
        records = [
            ResultRecord(
                run_id=run_id,
                iteration=int(row["iteration"]),
                model=str(row["model"]),
                test_kind=str(row["test_kind"]),
                target=str(row["target"]),
                p_value=_finite(row["p_value"]),
                statistic=_finite(row["statistic"]),
                degenerate=bool(row["degenerate"]),
                seed=int(row["seed"]),
                out_of_support=int(row["out_of_support"]),
                error=str(row["error"]) or None
            )
            for row in table.frame.to_dict(orient="records")
        ]
        self.db.add_all(records)
        self.db.commit()
        logger.info(f"Stored {len(records)} result rows for run {run_id}")
        return len(records)

    def get_run(self, run_id: int) -> Optional[ExperimentRun]:
        """Get run by id"""
        return self.db.query(ExperimentRun).filter(ExperimentRun.id == run_id).first()

    def list_runs(self, status: str = None, limit: int = 50) -> List[ExperimentRun]:
        """List runs, newest first"""
        query = self.db.query(ExperimentRun)

        if status:
            query = query.filter(ExperimentRun.status == status)

        return query.order_by(ExperimentRun.id.desc()).limit(limit).all()

    def get_results(self, run_id: int, model: str = None) -> List[ResultRecord]:
        """Result rows of a run in iteration, model, test kind order"""
        query = self.db.query(ResultRecord).filter(ResultRecord.run_id == run_id)

        if model:
            query = query.filter(ResultRecord.model == model)

        return query.order_by(ResultRecord.iteration, ResultRecord.model, ResultRecord.test_kind).all()

    def pass_rate_summary(self, run_id: int, threshold: float = 0.05) -> List[Dict[str, Any]]:
        """Per (model, test kind): share of error-free iterations with p > threshold"""
        groups: Dict[tuple, Dict[str, Any]] = {}
        for record in self.get_results(run_id):
            entry = groups.setdefault((record.model, record.test_kind), {
                "model": record.model, "test_kind": record.test_kind, "trials": 0, "errors": 0, "passed": 0
            })
            if record.error:
                entry["errors"] += 1
                continue
            entry["trials"] += 1
            if record.p_value is not None and record.p_value > threshold:
                entry["passed"] += 1

        summary = []
        for key in sorted(groups):
            entry = groups[key]
            entry["percent"] = 100.0 * entry["passed"] / entry["trials"] if entry["trials"] else None
            summary.append(entry)
        return summary


if __name__ == "__main__":
    init_database()
    print("Database initialized successfully!")
