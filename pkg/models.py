from sqlalchemy import Column, Integer, String, DateTime, Text, ForeignKey, Boolean
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func
from database import Base

class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, nullable=False, index=True)
    tool_version = Column(String, nullable=False)
    config_hash = Column(String, nullable=False, index=True)
    determinism_hash = Column(String, nullable=False, index=True)
    exit_code = Column(Integer, nullable=False)
    violation_count = Column(Integer, default=0)
    report_json = Column(Text, nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    checks = relationship("RunCheck", back_populates="run", cascade="all, delete-orphan")

class RunCheck(Base):
    __tablename__ = "run_checks"

    id = Column(Integer, primary_key=True, index=True)
    name = Column(String, nullable=False)
    passed = Column(Boolean, default=True)
    detail = Column(Text)  # violation message when the check failed

    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    run = relationship("Run", back_populates="checks")
