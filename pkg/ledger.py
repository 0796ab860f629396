import hashlib
import logging
import os
from typing import List, Optional

from dotenv import load_dotenv
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker

from database import DATABASE_URL, make_engine
from errors import IoError
from init_db import create_tables
from models import Run, RunCheck
from reports import canonical_json, render_json
from schemas import Report, RunSummary

load_dotenv()

logger = logging.getLogger(__name__)

RECORD_RUNS = os.getenv("DEGENLAB_RECORD_RUNS", "false").lower() in ("1", "true", "yes")


def config_hash(report: Report) -> str:
    return hashlib.sha256(canonical_json(report.config).encode("utf-8")).hexdigest()


class RunLedger:
    """Optional SQL record of finished runs; a failed connection only disables recording"""

    def __init__(self, url: Optional[str] = None):
        self.url = url or DATABASE_URL
        try:
            self.engine = make_engine(self.url)
            create_tables(self.engine)
            self.Session = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
            self.initialized = True
            logger.info(f"Run ledger initialized at {self.url}")
        except SQLAlchemyError as e:
            logger.error(f"Failed to initialize run ledger: {e}")
            self.initialized = False

    def is_available(self) -> bool:
        return hasattr(self, "initialized") and self.initialized

    def record(self, report: Report) -> Optional[int]:
        if not self.is_available():
            logger.warning("Run ledger unavailable; run not recorded")
            return None

        run = Run(
            command=report.command,
            tool_version=report.tool_version,
            config_hash=config_hash(report),
            determinism_hash=report.determinism_hash,
            exit_code=report.exit_code,
            violation_count=len(report.violations),
            report_json=render_json(report),
        )
        if report.violations:
            run.checks = [RunCheck(name=report.command, passed=False, detail=v) for v in report.violations]
        else:
            run.checks = [RunCheck(name=report.command, passed=True)]

        db = self.Session()
        try:
            db.add(run)
            db.commit()
            db.refresh(run)
            logger.info(f"Recorded run {run.id} ({report.command})")
            return run.id
        except SQLAlchemyError as e:
            db.rollback()
            raise IoError(f"Cannot record run: {e}")
        finally:
            db.close()

    def history(self, limit: int = 20, command: Optional[str] = None) -> List[RunSummary]:
        if not self.is_available():
            return []

        db = self.Session()
        try:
            query = db.query(Run)
            if command:
                query = query.filter(Run.command == command)
            runs = query.order_by(Run.id.desc()).limit(limit).all()
            return [RunSummary.from_orm(run) for run in runs]
        finally:
            db.close()


_ledger: Optional[RunLedger] = None


def get_ledger() -> RunLedger:
    """Process-wide ledger on DEGENLAB_DATABASE_URL, opened on first use"""
    global _ledger
    if _ledger is None:
        _ledger = RunLedger()
    return _ledger
