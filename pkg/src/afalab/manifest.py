"""Run manifest: which artifacts exist, under which config, with which hash.

Stages refuse to consume an artifact whose bytes no longer match the hash
recorded when it was produced.
"""
from __future__ import annotations

import json
import os
import time

from .checkpoint import file_sha256

MANIFEST_NAME = "manifest.json"
TOOL_VERSION = "afalab 0.1.0"


class ManifestError(RuntimeError):
    """Missing or inconsistent artifact dependency."""


class RunManifest:
    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        self.path = os.path.join(run_dir, MANIFEST_NAME)
        self.data: dict = {"version": 1, "tool": TOOL_VERSION, "artifacts": {}}
        if os.path.exists(self.path):
            with open(self.path) as fh:
                self.data = json.load(fh)

    def save(self) -> None:
        os.makedirs(self.run_dir, exist_ok=True)
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def record(self, name: str, path: str, config_hash: str, seed: int | None = None) -> None:
        rel = os.path.relpath(path, self.run_dir)
        self.data["artifacts"][name] = {
            "path": rel,
            "sha256": file_sha256(path),
            "config_hash": config_hash,
            "seed": seed,
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        self.save()

    def has(self, name: str) -> bool:
        return name in self.data["artifacts"]

    def require(self, name: str) -> str:
        """Absolute path of a recorded artifact, after hash verification."""
        entry = self.data["artifacts"].get(name)
        if entry is None:
            raise ManifestError(
                f"missing dependency {name!r}; run the producing stage first")
        path = os.path.join(self.run_dir, entry["path"])
        if not os.path.exists(path):
            raise ManifestError(f"artifact {name!r} not found at {path}")
        digest = file_sha256(path)
        if digest != entry["sha256"]:
            raise ManifestError(
                f"artifact {name!r} at {path} does not match its recorded hash; "
                "refusing to proceed")
        return path

    def retire(self, name: str) -> None:
        """Version an existing artifact aside so a re-run can replace it."""
        entry = self.data["artifacts"].get(name)
        if entry is None:
            return
        path = os.path.join(self.run_dir, entry["path"])
        if os.path.exists(path):
            n = 1
            while os.path.exists(f"{path}.prev{n}"):
                n += 1
            os.replace(path, f"{path}.prev{n}")
        del self.data["artifacts"][name]
        self.save()
