"""Run manifests: resolved config, input hashes, and planned outputs, written
before any output artifact so every run is auditable and re-runnable."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    inputs: dict[str, str]  # path -> sha256 of files actually read
    outputs: list[str]
    seed: int | None = None
    tool_version: str = __version__
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            **({"extra": self.extra} if self.extra else {}),
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def manifest_path_for(output_path) -> str:
    return str(output_path) + ".manifest.json"
