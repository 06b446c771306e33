"""JSON run records: config snapshot, artifacts and metrics of one command."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


@dataclass
class RunRecord:
    command: str
    config: dict
    metrics: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    timestamp: str = ""
    version: str = __version__

    @classmethod
    def create(cls, command: str, config: dict, **kw) -> "RunRecord":
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return cls(command, dict(config), timestamp=stamp, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
