"""Run manifests: everything needed to reproduce a pipeline run."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path


def hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_fingerprint: str
    arch_fingerprint: str
    seeds: dict = field(default_factory=dict)
    input_hashes: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)   # relpath -> sha256
    timings: dict = field(default_factory=dict)   # phase -> seconds
    extra: dict = field(default_factory=dict)

    def record_outputs(self, run_dir) -> None:
        """Hash every file in the run directory except the manifest itself."""
        run_dir = Path(run_dir)
        for p in sorted(run_dir.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                self.outputs[str(p.relative_to(run_dir))] = hash_file(p)

    def write(self, run_dir) -> Path:
        """Atomic write at the end of a job."""
        run_dir = Path(run_dir)
        target = run_dir / "manifest.json"
        tmp = run_dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        os.replace(tmp, target)
        return target

    @staticmethod
    def load(run_dir) -> "RunManifest":
        data = json.loads((Path(run_dir) / "manifest.json").read_text())
        return RunManifest(**data)

    def checksum(self) -> str:
        """Digest of the output table (stable identity of a run's results)."""
        text = json.dumps(self.outputs, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()
