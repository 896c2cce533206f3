"""Testbed configuration: JSON file plus environment overrides.

Only paths and ports are overridable from the environment; analysis
parameters stay in the file (or defaults) so results are reproducible
from the archive alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

_ENV_PREFIX = "GAUNTLET_"
_ENV_OVERRIDABLE = {
    "workdir": str,
    "gateway_host": str,
    "gateway_port": int,
}


@dataclass
class Config:
    workdir: str = "gauntlet-work"
    gateway_host: str = "127.0.0.1"
    gateway_port: int = 0               # 0 picks an ephemeral port
    cache_rebuild_every: int = 50       # sessions per cache epoch
    history_threshold: float = 0.5      # exposure fraction that counts as sharing
    webapi_blocking_credit: bool = True # count sensor-only grants as protective
    visit_timeout: float = 10.0

    @property
    def workdir_path(self) -> Path:
        return Path(self.workdir)

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None) -> "Config":
        values: dict = {}
        if path is not None:
            raw = json.loads(Path(path).read_text("utf-8"))
            known = {f.name for f in fields(cls)}
            unknown = set(raw) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            values.update(raw)
        env = os.environ if env is None else env
        for name, cast in _ENV_OVERRIDABLE.items():
            key = _ENV_PREFIX + name.upper()
            if key in env:
                values[name] = cast(env[key])
        return cls(**values)

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n", "utf-8")
