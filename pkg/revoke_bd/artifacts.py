"""
Run directory manager for revoke-bd.

Handles:
- Run directory layout (config, logs, stage manifests, checkpoints, CSV, reports, plots)
- Stage manifests stamped with the config hash and app version
- Dependency and staleness checks between stages
- Append-only CSV logs and JSON/text reports
"""

import csv
import json
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import DependencyError, StaleArtifactError

# Increment when the manifest format changes
ARTIFACT_SCHEMA_VERSION = 1

# Stage name -> CLI command that produces it
STAGE_COMMANDS = {
    'pretrain': 'pretrain',
    'generator': 'train-generator',
    'attack': 'attack',
    'revoke': 'revoke',
    'evaluate': 'evaluate',
    'defend': 'defend',
    'sweep': 'sweep',
    'ablate': 'ablate',
}


@dataclass
class StageManifest:
    """Persisted record of a completed stage."""
    stage: str
    config_hash: str
    schema_version: int = ARTIFACT_SCHEMA_VERSION
    app_version: str = ""
    completed_at: str = ""
    outputs: Dict[str, str] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StageManifest':
        return cls(
            stage=data.get('stage', ''),
            config_hash=data.get('config_hash', ''),
            schema_version=data.get('schema_version', 0),
            app_version=data.get('app_version', ''),
            completed_at=data.get('completed_at', ''),
            outputs=data.get('outputs', {}),
            summary=data.get('summary', {}),
        )


class ArtifactStore:
    """
    Owns one run directory.

    LAYOUT:
        <run_dir>/config.json
        <run_dir>/logs/revoke_bd.log
        <run_dir>/stages/<stage>.json        stage manifests
        <run_dir>/checkpoints/<name>.json    checkpoint manifest + .bin payload
        <run_dir>/csv/<name>.csv             append-only logs
        <run_dir>/reports/<name>.json|.txt
        <run_dir>/plots/<name>.png

    STAGE RULES:
        A stage is complete when its manifest exists with the current config
        hash and schema version. Downstream stages call require() on their
        inputs: a missing manifest is a DependencyError naming the command to
        run, a manifest with another hash is a StaleArtifactError.
    """

    def __init__(self, run_dir: Path, logger, config_hash: str, app_version: str = ""):
        self.run_dir = Path(run_dir)
        self.log = logger.get_logger('artifacts')
        self.config_hash = config_hash
        self.app_version = app_version
        self._lock = threading.RLock()

        self.stages_dir = self.run_dir / 'stages'
        self.checkpoints_dir = self.run_dir / 'checkpoints'
        self.csv_dir = self.run_dir / 'csv'
        self.reports_dir = self.run_dir / 'reports'
        self.plots_dir = self.run_dir / 'plots'
        self.logs_dir = self.run_dir / 'logs'

    def ensure_layout(self):
        for d in (self.stages_dir, self.checkpoints_dir, self.csv_dir, self.reports_dir,
                  self.plots_dir, self.logs_dir):
            d.mkdir(parents=True, exist_ok=True)

    # =========================================================================
    # STAGE MANIFESTS
    # =========================================================================

    def stage_path(self, stage: str) -> Path:
        return self.stages_dir / f"{stage}.json"

    def load_stage(self, stage: str) -> Optional[StageManifest]:
        path = self.stage_path(stage)
        if not path.exists():
            return None
        try:
            with open(path, 'r') as f:
                return StageManifest.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            self.log.warning(f"Could not read stage manifest {path.name}: {e}")
            return None

    def is_complete(self, stage: str) -> bool:
        manifest = self.load_stage(stage)
        return (manifest is not None and manifest.config_hash == self.config_hash
                and manifest.schema_version == ARTIFACT_SCHEMA_VERSION)

    def require(self, stage: str) -> StageManifest:
        """Manifest of an upstream stage, or the matching dependency/staleness error."""
        manifest = self.load_stage(stage)
        command = STAGE_COMMANDS.get(stage, stage)
        if manifest is None:
            raise DependencyError(f"Stage '{stage}' has not been run; run `revoke-bd {command}` first",
                                  required_command=command)
        if manifest.config_hash != self.config_hash:
            raise StaleArtifactError(
                f"Stage '{stage}' was produced under config {manifest.config_hash}, current config "
                f"is {self.config_hash}; rerun `revoke-bd {command} --force`",
                {'stage': stage, 'artifact_hash': manifest.config_hash, 'config_hash': self.config_hash})
        if manifest.schema_version < ARTIFACT_SCHEMA_VERSION:
            raise StaleArtifactError(f"Stage '{stage}' uses manifest schema v{manifest.schema_version}",
                                     {'stage': stage})
        return manifest

    def save_stage(self, stage: str, outputs: Dict[str, str] = None,
                   summary: Dict[str, Any] = None) -> StageManifest:
        manifest = StageManifest(stage=stage, config_hash=self.config_hash,
                                 app_version=self.app_version,
                                 completed_at=datetime.utcnow().isoformat(),
                                 outputs=outputs or {}, summary=summary or {})
        with self._lock:
            self.stages_dir.mkdir(parents=True, exist_ok=True)
            with open(self.stage_path(stage), 'w') as f:
                json.dump(asdict(manifest), f, indent=2)
        self.log.debug(f"Stage '{stage}' recorded under config {self.config_hash}")
        return manifest

    def status(self) -> Dict[str, str]:
        """complete / stale / missing for every known stage."""
        result = {}
        for stage in STAGE_COMMANDS:
            manifest = self.load_stage(stage)
            if manifest is None:
                result[stage] = 'missing'
            elif manifest.config_hash != self.config_hash:
                result[stage] = 'stale'
            else:
                result[stage] = 'complete'
        return result

    # =========================================================================
    # FILES
    # =========================================================================

    def checkpoint_stem(self, name: str) -> Path:
        return self.checkpoints_dir / name

    def csv_path(self, name: str) -> Path:
        return self.csv_dir / f"{name}.csv"

    def start_csv(self, name: str):
        """Begin a fresh log for a (re)run, keeping any previous one as <name>.<n>.csv."""
        path = self.csv_path(name)
        if not path.exists():
            return
        n = 1
        while (self.csv_dir / f"{name}.{n}.csv").exists():
            n += 1
        path.rename(self.csv_dir / f"{name}.{n}.csv")
        self.log.debug(f"Archived previous {path.name} as {name}.{n}.csv")

    def append_csv(self, name: str, row: Dict[str, Any]):
        """Append one row; the header is fixed by the first row written."""
        path = self.csv_path(name)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            if path.exists() and path.stat().st_size > 0:
                with open(path, 'r', newline='') as f:
                    fieldnames = next(csv.reader(f))
            else:
                fieldnames = list(row.keys())
                with open(path, 'w', newline='') as f:
                    csv.writer(f).writerow(fieldnames)
            with open(path, 'a', newline='') as f:
                writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction='ignore')
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})

    def read_csv(self, name: str) -> List[Dict[str, str]]:
        path = self.csv_path(name)
        if not path.exists():
            return []
        with open(path, 'r', newline='') as f:
            return list(csv.DictReader(f))

    def save_report(self, name: str, data: Dict[str, Any]) -> Path:
        path = self.reports_dir / f"{name}.json"
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w') as f:
                json.dump({'config_hash': self.config_hash, **data}, f, indent=2)
        return path

    def load_report(self, name: str) -> Optional[Dict[str, Any]]:
        path = self.reports_dir / f"{name}.json"
        if not path.exists():
            return None
        with open(path, 'r') as f:
            return json.load(f)

    def save_text(self, name: str, text: str) -> Path:
        path = self.reports_dir / f"{name}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
        return path

    def plot_path(self, name: str) -> Path:
        self.plots_dir.mkdir(parents=True, exist_ok=True)
        return self.plots_dir / f"{name}.png"
