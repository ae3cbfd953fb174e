"""
Database models for the run registry
"""

from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class Run(Base):
    """One CLI invocation"""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(50), nullable=False)
    seed = Column(Integer, nullable=False)
    out_dir = Column(String(500), nullable=False)
    config = Column(Text)  # resolved config, JSON string
    status = Column(String(20), default='RUNNING')  # RUNNING, SUCCESS, FAILED
    exit_code = Column(Integer)
    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)

    # Relationships
    epoch_records = relationship("EpochRecord", back_populates="run", cascade="all, delete-orphan")
    artifacts = relationship("Artifact", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<Run(id={self.id}, command='{self.command}', status='{self.status}')>"


class EpochRecord(Base):
    """One TrainRecord of a training run"""
    __tablename__ = 'epoch_records'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    label = Column(String(50), default='train')
    epoch = Column(Integer, nullable=False)
    beta = Column(Float)
    nll = Column(Float)
    kl_total = Column(Float)
    loss = Column(Float)
    sigma_eff = Column(Text)  # per-layer list, JSON string
    eval_accuracy = Column(Float)
    eval_ece = Column(Float)

    run = relationship("Run", back_populates="epoch_records")

    def __repr__(self):
        return f"<EpochRecord(run={self.run_id}, epoch={self.epoch}, loss={self.loss})>"


class Artifact(Base):
    """A file written by a run"""
    __tablename__ = 'artifacts'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    path = Column(String(500), nullable=False)
    sha256 = Column(String(64), nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)

    run = relationship("Run", back_populates="artifacts")

    def __repr__(self):
        return f"<Artifact(path='{self.path}', sha256='{self.sha256[:12]}')>"
