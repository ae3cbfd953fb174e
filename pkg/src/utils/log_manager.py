#!/usr/bin/env python3
"""
Log Manager - Categorized logging system

Categories map to named loggers under the `sphevar` namespace. Nothing is
written to disk until configure() is called with a run's log directory.
"""

import logging
import logging.handlers
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

CATEGORIES = {
    # category: (level, max bytes, backups)
    'experiments': (logging.INFO, 20 * 1024 * 1024, 5),
    'training': (logging.INFO, 50 * 1024 * 1024, 10),
    'numerics': (logging.WARNING, 10 * 1024 * 1024, 3),
    'errors': (logging.ERROR, 5 * 1024 * 1024, 2),
    'audit': (logging.INFO, 10 * 1024 * 1024, 3),
}


class LogManager:
    """Categorized log management"""

    def __init__(self):
        self.log_dir: Optional[Path] = None
        self._handlers: Dict[str, logging.Handler] = {}
        for category, (level, _, _) in CATEGORIES.items():
            logging.getLogger(self.logger_name(category)).setLevel(level)

    @staticmethod
    def logger_name(category: str) -> str:
        return f"sphevar.{category}"

    def configure(self, log_dir: Path):
        """Attach one rotating file per category under log_dir"""
        self.close()
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        formatter = logging.Formatter(
            '%(asctime)s | %(levelname)s | %(name)s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        for category, (level, max_bytes, backups) in CATEGORIES.items():
            handler = logging.handlers.RotatingFileHandler(
                str(self.log_dir / f'{category}.log'),
                maxBytes=max_bytes,
                backupCount=backups,
                encoding='utf-8',
            )
            handler.setLevel(level)
            handler.setFormatter(formatter)
            logging.getLogger(self.logger_name(category)).addHandler(handler)
            self._handlers[category] = handler

    def close(self):
        """Detach and close file handlers"""
        for category, handler in self._handlers.items():
            logging.getLogger(self.logger_name(category)).removeHandler(handler)
            handler.close()
        self._handlers = {}
        self.log_dir = None

    def _log(self, category: str, level: str, message: str, **kwargs):
        logger = logging.getLogger(self.logger_name(category))
        full_message = f"{message} | {kwargs}" if kwargs else message
        getattr(logger, level.lower())(full_message)

    def log_experiment(self, level: str, message: str, **kwargs):
        """Log experiment progress"""
        self._log('experiments', level, message, **kwargs)

    def log_training(self, level: str, message: str, **kwargs):
        """Log training epochs"""
        self._log('training', level, message, **kwargs)

    def log_numerics(self, level: str, message: str, **kwargs):
        """Log numerical warnings"""
        self._log('numerics', level, message, **kwargs)

    def log_error(self, message: str, **kwargs):
        """Log errors"""
        self._log('errors', 'error', message, **kwargs)

    def log_audit(self, message: str, **kwargs):
        """Log audit trail (written artifacts, run start/end)"""
        self._log('audit', 'info', message, **kwargs)

    def get_log_info(self) -> Dict[str, Any]:
        """Return information about log files"""
        log_info = {}
        if self.log_dir is None:
            return log_info

        for log_file in self.log_dir.glob("*.log"):
            size_mb = log_file.stat().st_size / (1024 * 1024)
            log_info[log_file.name] = {
                'size_mb': round(size_mb, 2),
                'last_modified': datetime.fromtimestamp(log_file.stat().st_mtime).isoformat()
            }

        return log_info


# Global log manager instance
log_manager = LogManager()
