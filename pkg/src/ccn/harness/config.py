"""Scenario configuration for the harness.

Defaults describe the desk-scale deployment exercised by the test suite:
32 participants, 4 organizations, 12 projects, herd threshold 10.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from typing import Any, Dict, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ScenarioConfig:
    n_participants: int = 32
    n_orgs: int = 4
    n_projects: int = 12
    herd_threshold: int = 10
    enrollment: bool = False
    pseudonymous_transport: bool = True
    preseed_dids: int = 0
    seed: int = 0
    ledger_batch_size: int = 1
    ledger_batch_timeout: float = 0.1

    def __post_init__(self) -> None:
        if self.n_participants < 1 or self.n_orgs < 1 or self.n_projects < 1:
            raise ValueError("scenario sizes must be positive")
        if self.n_projects < self.n_orgs:
            raise ValueError("need at least one project per organization")

    @classmethod
    def from_toml(cls, path: str) -> "ScenarioConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        table = raw.get("scenario", {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(table) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**table)

    def with_overrides(self, **overrides: Any) -> "ScenarioConfig":
        """Return a copy with non-None overrides applied (CLI flags)."""
        changes: Dict[str, Any] = {
            key: value for key, value in overrides.items() if value is not None
        }
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def project_ids(config: ScenarioConfig) -> list:
    return [f"proj-{i:02d}" for i in range(config.n_projects)]


def org_index_for_project(config: ScenarioConfig, project_index: int) -> int:
    return project_index % config.n_orgs


__all__ = ["ScenarioConfig", "project_ids", "org_index_for_project"]
