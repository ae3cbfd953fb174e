"""
Run registry manager
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Iterable, List, Optional

from sqlalchemy import create_engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker

from .config import DATABASE_CONFIG, database_url
from .models import Artifact, Base, EpochRecord, Run

logger = logging.getLogger(__name__)


class RunRegistry:
    """Database operations for runs, epoch records and artifacts"""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.engine = None
        self.SessionLocal = None
        self._initialize_database()

    def _initialize_database(self):
        """Initialize database and create tables"""
        try:
            self.engine = create_engine(database_url(self.out_dir), **DATABASE_CONFIG)
            self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
            Base.metadata.create_all(bind=self.engine)
            logger.debug(f"Run registry ready at {self.out_dir}")
        except SQLAlchemyError as e:
            logger.error(f"Registry initialization error: {e}")
            raise

    def get_session(self):
        """Return database session"""
        return self.SessionLocal()

    def start_run(self, command: str, seed: int, config: dict) -> int:
        session = self.get_session()
        try:
            run = Run(command=command, seed=seed, out_dir=self.out_dir.as_posix(),
                      config=json.dumps(config, sort_keys=True))
            session.add(run)
            session.commit()
            return run.id
        except SQLAlchemyError as e:
            logger.error(f"Run save error: {e}")
            session.rollback()
            raise
        finally:
            session.close()

    def finish_run(self, run_id: int, exit_code: int):
        session = self.get_session()
        try:
            run = session.get(Run, run_id)
            if run is None:
                return
            run.exit_code = exit_code
            run.status = 'SUCCESS' if exit_code == 0 else 'FAILED'
            run.finished_at = datetime.utcnow()
            session.commit()
        except SQLAlchemyError as e:
            logger.error(f"Run update error: {e}")
            session.rollback()
            raise
        finally:
            session.close()

    def save_epoch_records(self, run_id: int, records: Iterable, label: str = 'train'):
        """Store TrainRecords"""
        session = self.get_session()
        try:
            for record in records:
                session.add(EpochRecord(
                    run_id=run_id,
                    label=label,
                    epoch=record.epoch,
                    beta=record.beta,
                    nll=record.nll,
                    kl_total=record.kl_total,
                    loss=record.loss,
                    sigma_eff=json.dumps(record.per_layer_sigma_eff),
                    eval_accuracy=record.eval_accuracy,
                    eval_ece=record.eval_ece,
                ))
            session.commit()
        except SQLAlchemyError as e:
            logger.error(f"Epoch record save error: {e}")
            session.rollback()
            raise
        finally:
            session.close()

    def save_artifact(self, run_id: int, path: Path, sha256: str):
        session = self.get_session()
        try:
            session.add(Artifact(run_id=run_id, path=Path(path).as_posix(), sha256=sha256))
            session.commit()
        except SQLAlchemyError as e:
            logger.error(f"Artifact save error: {e}")
            session.rollback()
            raise
        finally:
            session.close()

    def list_runs(self, command: Optional[str] = None) -> List[dict]:
        session = self.get_session()
        try:
            query = session.query(Run)
            if command is not None:
                query = query.filter(Run.command == command)
            return [
                {
                    'id': run.id,
                    'command': run.command,
                    'seed': run.seed,
                    'status': run.status,
                    'exit_code': run.exit_code,
                    'epochs': len(run.epoch_records),
                    'artifacts': [a.path for a in run.artifacts],
                }
                for run in query.order_by(Run.id).all()
            ]
        finally:
            session.close()

    def close(self):
        if self.engine is not None:
            self.engine.dispose()
