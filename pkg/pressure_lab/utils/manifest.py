"""
Deterministic writers and the run manifest.

Every file a run emits goes through RunManifest, so the manifest lists all
of them with sha256 checksums and nothing else lands in the directory.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List

import numpy as np
import pandas as pd

from pressure_lab import __version__

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
MANIFEST_NAME = 'manifest.json'


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def _json_default(value: Any) -> Any:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def dumps_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"


def _sanitize_s(s: float) -> str:
    return format(s, 'g').replace('-', 'm')


def atoms_file_name(s: float) -> str:
    return f"atoms_s{_sanitize_s(s)}.csv"


def clear_previous_run(directory: Path) -> List[str]:
    """Remove the files listed by an earlier manifest in directory (and the manifest)."""
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        return []
    removed = []
    try:
        with open(path, 'r') as f:
            listed = [entry['name'] for entry in json.load(f).get('files', [])]
    except (OSError, ValueError, KeyError, TypeError) as e:
        logger.warning(f"Ignoring unreadable manifest {path}: {str(e)}")
        return []
    for name in listed:
        target = Path(directory) / Path(name).name
        if target.is_file():
            target.unlink()
            removed.append(target.name)
    path.unlink()
    return removed


@dataclass
class RunManifest:
    """Config hash, tool version, timestamps and the checksummed file list of one run."""
    directory: Path
    config_hash: str
    command: str
    version: str = __version__
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    files: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.directory = Path(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _register(self, name: str) -> Path:
        path = self.directory / name
        self.files[name] = sha256_file(path)
        logger.debug(f"Wrote {path}")
        return path

    def path_for(self, name: str) -> Path:
        return self.directory / name

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        frame.to_csv(self.directory / name, float_format=FLOAT_FORMAT, index=False,
                     lineterminator='\n')
        return self._register(name)

    def write_json(self, name: str, payload: Any) -> Path:
        with open(self.directory / name, 'w', newline='\n') as f:
            f.write(dumps_json(payload))
        return self._register(name)

    def write_jsonl(self, name: str, lines: Iterable[str]) -> Path:
        with open(self.directory / name, 'w', newline='\n') as f:
            for line in lines:
                f.write(line + '\n')
        return self._register(name)

    def register_file(self, name: str) -> Path:
        """Register a file written by another library (plots)."""
        return self._register(name)

    def orphans(self) -> List[str]:
        """Files in the directory that the manifest does not list."""
        return sorted(p.name for p in self.directory.iterdir()
                      if p.is_file() and p.name != MANIFEST_NAME and p.name not in self.files)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'config_hash': self.config_hash,
            'version': self.version,
            'started': self.started,
            'finished': datetime.now(timezone.utc).isoformat(),
            'files': [{'name': name, 'sha256': digest}
                      for name, digest in sorted(self.files.items())],
        }

    def write(self) -> Path:
        """Write manifest.json last."""
        path = self.directory / MANIFEST_NAME
        with open(path, 'w', newline='\n') as f:
            f.write(dumps_json(self.to_dict()))
        return path
