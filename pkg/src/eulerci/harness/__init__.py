"""Operational shell: configuration, runs, persistence, verification suites, sweeps and reports."""

from .config import CONFIG_SCHEMA, ConfigError, RunConfig, build, config_hash, load, seed_from_hash
from .csvio import read_csv, render_csv, write_csv
from .manifest import RunManifest, StageRecord, roundtrip_stable, verify_manifest
from .report import render_report, summarize
from .run import RunFailed, execute
from .suites import PropertyResult, SUITES, run_suite
from .sweeps import CHECKS, SweepError, SweepResult, parse_range, run_sweep

__all__ = ["CONFIG_SCHEMA", "ConfigError", "RunConfig", "build", "config_hash", "load",
           "seed_from_hash", "read_csv", "render_csv", "write_csv", "RunManifest", "StageRecord",
           "roundtrip_stable", "verify_manifest", "render_report", "summarize", "RunFailed",
           "execute", "PropertyResult", "SUITES", "run_suite", "CHECKS", "SweepError",
           "SweepResult", "parse_range", "run_sweep"]
