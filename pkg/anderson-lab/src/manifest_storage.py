import json
import logging
import os
import shutil
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Dict, List, Optional

from utils import file_digest, json_decoder, json_encoder

logger = logging.getLogger(__name__)

TOOL_VERSION = "0.3.0"


@dataclass
class ExperimentManifest:
    """Everything needed to replay one command: parameters, seeds, constants and output digests."""
    command: str
    parameters: Dict
    seeds: List[int]
    constants: Dict
    outputs: Dict[str, str] = field(default_factory=dict)
    wall_clock: float = 0.0
    tool_version: str = TOOL_VERSION
    exit_code: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentManifest":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)

    def record_outputs(self, paths: List[str]) -> None:
        for path in paths:
            self.outputs[os.path.basename(path)] = file_digest(path)


class ManifestStorage:
    """Stores experiment manifests as ``<run_id>.json`` files plus an ``index.json`` summary."""

    def __init__(self, storage_dir: str = "lab_runs"):
        self.storage_dir = storage_dir
        self._lock = threading.Lock()
        os.makedirs(storage_dir, exist_ok=True)
        self.index_path = os.path.join(storage_dir, "index.json")

        if os.path.exists(self.index_path):
            try:
                with open(self.index_path, "r") as f:
                    self.index = json.load(f)
            except json.JSONDecodeError:
                logger.error(f"Error loading manifest index from {self.index_path}")
                self.index = {"runs": []}
        else:
            self.index = {"runs": []}

    def run_dir(self, run_id: str) -> str:
        path = os.path.join(self.storage_dir, run_id)
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    def new_run_id() -> str:
        return str(uuid.uuid4())

    def save_manifest(self, manifest: ExperimentManifest, run_id: Optional[str] = None) -> str:
        """Write the manifest and add it to the index; returns the run id."""
        run_id = run_id or self.new_run_id()
        timestamp = time.time()
        date_str = datetime.fromtimestamp(timestamp).strftime("%Y-%m-%d %H:%M:%S")
        record = {
            "id": run_id,
            "timestamp": timestamp,
            "date": date_str,
            "command": manifest.command,
            "exit_code": manifest.exit_code,
            "outputs": sorted(manifest.outputs),
        }
        with self._lock:
            self.index["runs"] = [r for r in self.index["runs"] if r["id"] != run_id]
            self.index["runs"].append(record)
            with open(self.index_path, "w") as f:
                f.write(json_encoder(self.index))
            with open(self.manifest_path(run_id), "w") as f:
                f.write(json_encoder({"id": run_id, "timestamp": timestamp, "date": date_str,
                                      "manifest": manifest.to_dict()}))
        logger.info(f"Saved manifest {run_id} for '{manifest.command}'")
        return run_id

    def manifest_path(self, run_id: str) -> str:
        return os.path.join(self.storage_dir, f"{run_id}.json")

    def get_manifest(self, run_id: str) -> Optional[ExperimentManifest]:
        path = self.manifest_path(run_id)
        if not os.path.exists(path):
            return None
        return load_manifest(path)

    def list_runs(self, sort_by: str = "timestamp", sort_order: str = "desc", limit: Optional[int] = None,
                  offset: int = 0, filters: Optional[Dict] = None) -> List[Dict]:
        runs = list(self.index["runs"])
        if filters:
            runs = [r for r in runs if all(r.get(k) == v for k, v in filters.items())]
        if sort_by in ("timestamp", "command", "exit_code"):
            runs.sort(key=lambda r: r.get(sort_by, ""), reverse=(sort_order == "desc"))
        if limit is not None:
            return runs[offset:offset + limit]
        return runs[offset:]

    def delete_run(self, run_id: str) -> bool:
        """Drop the index entry, the manifest and the ``<run_id>/`` outputs; False if none existed."""
        with self._lock:
            known = any(r["id"] == run_id for r in self.index["runs"])
            self.index["runs"] = [r for r in self.index["runs"] if r["id"] != run_id]
            with open(self.index_path, "w") as f:
                f.write(json_encoder(self.index))
        removed = known
        path = self.manifest_path(run_id)
        if os.path.exists(path):
            os.remove(path)
            removed = True
        outputs = os.path.join(self.storage_dir, run_id)
        if os.path.isdir(outputs):
            shutil.rmtree(outputs)
            removed = True
        if removed:
            logger.info(f"Deleted run {run_id}")
        return removed


def load_manifest(path: str) -> ExperimentManifest:
    """Read a manifest file written by ManifestStorage (or a bare manifest dict)."""
    with open(path, "r") as f:
        data = json_decoder(f.read())
    return ExperimentManifest.from_dict(data.get("manifest", data))


def compare_digests(expected: Dict[str, str], actual: Dict[str, str]) -> List[str]:
    """Names of outputs whose digests differ or are missing on either side."""
    names = sorted(set(expected) | set(actual))
    return [name for name in names if expected.get(name) != actual.get(name)]
