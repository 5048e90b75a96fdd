"""Config files and run manifests.

A config file is YAML (JSON is accepted as a subset) with optional
top-level sections ``experiment``, ``oracle``, ``simulate``,
``control_ode`` and ``innovation`` plus a global ``seed``.  A run manifest
can be passed back as a config: its embedded resolved config is used.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field

import yaml

from . import __version__
from .errors import ConfigError

MANIFEST_VERSION = 1

SCHEMA_HELP = """\
config file schema (YAML or JSON; every key optional):
  seed: int                      base seed (overridden by --seed)
  experiment:                    mse-rates, variance-scaling, variance-h, oracle-build
    drift: {name: fou|double_well, kappa|a|b|cap: float}
    sigma: float or d x d matrix
    H: float in (0,1)             d: int          beta_assumed: float
    kernel: {M: int}              T_grid: [float, ...] strictly increasing
    replicates: int >= 2          query_points: [[x_1..x_d], ...]
    bandwidth: {rule: fixed|list|basic|improved, value: float, values: [...], eps: float}
    h_grid: [float, ...]          (variance-h, decreasing)
    dt: float | null              dt_max: float   burn_in: float   chunk: int
  oracle:                        either {path: oracle.json}, {closed_form: gaussian, mean, cov}
    T_oracle: float               or a long-run budget
    dt, replicates, h, order, lo, hi, step, split_tol, burn_in, seed
  simulate: {drift, sigma, H, d, T, dt, burn_in}
  control_ode: {n_runs: int, n_steps: int}
  innovation: {H, t, lag, past_horizon, n_steps, n_paths}
"""


def load_config(path: str | None) -> tuple[dict, str | None]:
    """Parse a config file; returns ``(mapping, sha256 of the file bytes)``."""
    if path is None:
        return {}, None
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw.decode("utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    if data.get("manifest_version") is not None:
        data = data["config"]
    return data, hashlib.sha256(raw).hexdigest()


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    base_seed: int
    config_hash: str | None = None
    resolved_hash: str = ""
    version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float | None = None
    outputs: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def finish(self, outputs, checks):
        self.outputs = list(outputs)
        self.checks = dict(checks)
        self.finished = time.time()
        self.resolved_hash = canonical_hash(self.config)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["manifest_version"] = MANIFEST_VERSION
        return out


def atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(manifest: RunManifest, out_dir: str) -> str:
    path = os.path.join(out_dir, f"{manifest.subcommand}.manifest.json")
    atomic_write_text(path, json.dumps(manifest.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
    return path
