"""Run manifest: what a run produced and where it lives."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

MANIFEST_SCHEMA = 1


@dataclass
class StageRecord:
    q: int
    grid: int
    times: list[float]
    snapshots: list[str] = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


@dataclass
class RunManifest:
    """Config hash, schedule echo, per-stage snapshots, diagnostics and suite results.

    Paths are stored relative to the manifest's directory.
    """

    config_hash: str
    schedule: dict
    stages: list[StageRecord] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    suites: dict = field(default_factory=dict)
    status: str = "ok"
    error: dict | None = None
    schema: int = MANIFEST_SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        d["stages"] = [StageRecord(**s) for s in d.get("stages", [])]
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def referenced_files(self) -> list[str]:
        return [p for s in self.stages for p in s.snapshots] + list(self.diagnostics)

    def missing_files(self, root: str | Path) -> list[str]:
        root = Path(root)
        return [p for p in self.referenced_files() if not (root / p).is_file()]


def _snapshot_roundtrip(path: Path) -> bool:
    from ..fields import load_snapshot, snapshot_bytes
    return snapshot_bytes(load_snapshot(path)) == path.read_bytes()


def _csv_roundtrip(path: Path) -> bool:
    from .csvio import read_csv, render_csv
    meta, columns, rows = read_csv(path)
    extra = [c for c in meta["comments"] if not c.startswith("units:")]
    units = {}
    for c in meta["comments"]:
        if c.startswith("units:"):
            for item in c[len("units:"):].split("; "):
                key, _, val = item.strip().partition("=")
                units[key] = val
    text = render_csv(rows, columns, meta.get("kind", "step"), extra, units)
    return text.encode("utf-8") == path.read_bytes()


def verify_manifest(path: str | Path) -> dict:
    """Existence and byte-level round-trip of the manifest and every referenced file."""
    path = Path(path)
    root = path.parent
    man = RunManifest.load(path)
    report = {"manifest": roundtrip_stable(path), "missing": man.missing_files(root), "files": {}}
    for rel in man.referenced_files():
        f = root / rel
        if not f.is_file():
            continue
        report["files"][rel] = _csv_roundtrip(f) if f.suffix == ".csv" else _snapshot_roundtrip(f)
    report["ok"] = report["manifest"] and not report["missing"] and all(report["files"].values())
    return report


def roundtrip_stable(path: str | Path) -> bool:
    """Load the manifest, re-serialise it and compare with the stored bytes."""
    path = Path(path)
    return RunManifest.load(path).dumps().encode("utf-8") == path.read_bytes()


__all__ = ["RunManifest", "StageRecord", "roundtrip_stable", "verify_manifest", "MANIFEST_SCHEMA"]
