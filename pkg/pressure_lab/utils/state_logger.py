from __future__ import annotations

import json
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, 'value') and not isinstance(value, (int, float, str, bool)):
        return _plain(value.value)
    return value


class StateLogger:
    """Logs the state of long computations as JSON lines, one file per run."""

    def __init__(self, log_dir: str = "debug_logs"):
        self.log_dir = Path(log_dir)
        self.current_log_file: Optional[Path] = None
        self.run_name: Optional[str] = None

        self.logger = logging.getLogger('state_logger')
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False

        # Remove any existing handlers to prevent duplicate logging
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
            handler.close()

    def on_run_start(self, command: str, config_hash: str) -> None:
        """Open a new log file for a CLI run.

        Args:
            command: Subcommand being run
            config_hash: Hash of the run configuration
        """
        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
            self.run_name = command
            self.current_log_file = self.log_dir / f'state_{timestamp}_{command}.log'

            for handler in self.logger.handlers[:]:
                self.logger.removeHandler(handler)
                handler.close()
            handler = logging.FileHandler(str(self.current_log_file), mode='a')
            handler.setLevel(logging.DEBUG)
            self.logger.addHandler(handler)

            self.logger.debug(json.dumps({
                'timestamp': datetime.now().isoformat(),
                'operation': 'run_start',
                'command': command,
                'config_hash': config_hash,
            }))
        except Exception as e:
            logger.error(f"Error opening state log: {str(e)}")

    def capture_state(self, operation: str, parameters: Optional[Dict[str, Any]] = None,
                      summary: Optional[Dict[str, Any]] = None) -> None:
        """Record one computation step; failures are logged and swallowed.

        Args:
            operation: Name of the step
            parameters: Inputs of the step
            summary: Headline numbers of its result
        """
        if not self.logger.handlers:
            return
        try:
            entry = {
                'timestamp': datetime.now().isoformat(),
                'operation': operation,
                'parameters': _plain(parameters or {}),
                'summary': _plain(summary or {}),
            }
            self.logger.debug(json.dumps(entry, default=str))
        except Exception as e:
            logger.error(f"Error logging state: {str(e)}")

    def close(self) -> None:
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
            handler.close()

    def get_recent_states(self, limit: int = 10) -> list:
        """Get the most recent state entries.

        Args:
            limit: Maximum number of states to return

        Returns:
            List of recent state entries
        """
        try:
            log_files = sorted(
                [f for f in os.listdir(self.log_dir)
                 if f.startswith('state_') and f.endswith('.log')],
                key=lambda x: os.path.getmtime(os.path.join(self.log_dir, x)),
                reverse=True
            )
            if not log_files:
                return []
            with open(os.path.join(self.log_dir, log_files[0]), 'r') as f:
                lines = f.readlines()
            return [json.loads(line) for line in lines[-limit:]]
        except Exception as e:
            logger.error(f"Error getting recent states: {str(e)}")
            return []
