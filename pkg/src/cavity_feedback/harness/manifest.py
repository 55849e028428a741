"""Run manifests: what was asked, with which resolved parameters, and what came out."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    version: str
    request: dict
    resolved_params: dict
    seed: int
    started: str
    finished: str = ""
    status: str = ""
    exit_code: int = 0
    error: str | None = None
    files: dict[str, str] = field(default_factory=dict)  # name -> sha256

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def write_outputs(out_dir: Path, files: dict[str, str]) -> dict[str, str]:
    """Write files in name order and return their digests."""
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name in sorted(files):
        if Path(name).name != name:
            raise ValueError(f"refusing to write outside the output directory: {name!r}")
        (out_dir / name).write_bytes(files[name].encode("utf-8"))
        digests[name] = sha256_text(files[name])
    return digests


def verify(out_dir: Path, manifest: RunManifest) -> dict[str, bool]:
    """Per-file digest match of ``out_dir`` against ``manifest``."""
    result = {}
    for name, digest in manifest.files.items():
        p = out_dir / name
        result[name] = p.exists() and hashlib.sha256(p.read_bytes()).hexdigest() == digest
    return result
