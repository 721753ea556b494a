"""Experiment configuration: TOML sections with defaults and strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import TrainConfig
from .errors import InvalidConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class PotentialConfig:
    kind: str = "ou"                    # "ou" or "named"
    theta: float = 1.0                  # OU drift, theta * I
    d: int = 1
    name: str = "quadratic_logcosh"     # used when kind = "named"


@dataclass
class TaskConfig:
    eta: float = 0.1
    T: float = 10_000.0
    seed: int = 0
    contrast: str = "matched_ou"        # matched_ou, stationary, random_walk, isotropic_gaussian
    contrast_variance: float = 0.0      # random_walk / isotropic_gaussian; 0 picks 2 * eta
    box_radius: float = 4.0
    substeps: int = 1


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(step_size=0.3, epochs=100))


@dataclass
class ChecksConfig:
    n_x: int = 256
    n_xp: int = 512
    n_panels: int = 8
    grid_n: int = 201
    cq_grid_n: int = 401
    n_mc: int = 1_000_000
    clamp_eps: float = 1e-6
    extract_grid_n: int = 101
    normalization_probes: list = field(default_factory=lambda: [-2.0, 0.0, 2.0])
    kl_source: str = "perturbed"        # "perturbed" sweep or the "trained" kernel
    kl_amplitudes: list = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.15])
    perturbation: str = "smooth_bump"
    l1_amplitude: float = 0.1
    l1_contrast: str = "random_walk"
    l1_etas: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])
    mixing_t: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    mixing_x_radius: float = 6.0
    mixing_x_n: int = 21
    chains: int = 100
    chain_states_max: int = 10
    chain_lags: int = 10
    gen_T: list = field(default_factory=lambda: [100.0, 1000.0, 3000.0, 10_000.0])
    gen_repeats: int = 5
    gen_n_mc: int = 1_000_000
    gen_min_steps: int = 3000
    rademacher_mu: list = field(default_factory=lambda: [50, 200])
    rademacher_draws: int = 2
    mu_T: float = 10_000.0
    mu_delta: float = 0.05
    mu_k: float = 1.0
    delta_gen_target: float = 0.1
    bounds_etas: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    bounds_n: int = 201


@dataclass
class OutputConfig:
    dir: str = "runs/default"
    format: str = "csv"


@dataclass
class ExperimentConfig:
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """sha256 of the canonical JSON form of the resolved config."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self) -> "ExperimentConfig":
        p, t, c = self.potential, self.task, self.checks
        checks = [
            (p.kind in ("ou", "named"), "potential.kind", "must be 'ou' or 'named'"),
            (p.theta > 0, "potential.theta", "must be positive"),
            (p.d >= 1, "potential.d", "must be >= 1"),
            (t.eta > 0, "task.eta", "must be positive"),
            (t.T >= 2 * t.eta, "task.T", "must be >= 2 * eta"),
            (t.contrast in ("matched_ou", "stationary", "random_walk", "isotropic_gaussian"),
             "task.contrast", "unknown contrast"),
            (t.contrast_variance >= 0, "task.contrast_variance", "must be >= 0 (0 picks 2 * eta)"),
            (t.box_radius > 0, "task.box_radius", "must be positive"),
            (t.substeps >= 1, "task.substeps", "must be >= 1"),
            (all(int(h) >= 1 for h in self.model.hidden), "model.hidden", "layer sizes must be >= 1"),
            (self.model.activation in ("tanh", "relu"), "model.activation", "must be 'tanh' or 'relu'"),
            (c.kl_source in ("perturbed", "trained"), "checks.kl_source", "must be 'perturbed' or 'trained'"),
            (c.perturbation in ("smooth_bump", "constant_on_band"), "checks.perturbation", "unknown kind"),
            (c.l1_contrast in ("matched_ou", "stationary", "random_walk", "isotropic_gaussian"),
             "checks.l1_contrast", "unknown contrast"),
            (c.gen_repeats >= 5, "checks.gen_repeats", "must be >= 5"),
            (2 <= c.chain_states_max <= 50, "checks.chain_states_max", "must lie in [2, 50]"),
            (0 < c.clamp_eps <= 1e-3, "checks.clamp_eps", "must lie in (0, 1e-3]"),
            (self.output.format in ("csv", "json"), "output.format", "must be 'csv' or 'json'"),
        ]
        for ok, path, msg in checks:
            if not ok:
                raise InvalidConfigError(f"{path}: {msg}")
        try:
            TrainConfig(**dataclasses.asdict(self.model.train))
        except InvalidConfigError as exc:
            raise InvalidConfigError(f"model.train: {exc}") from None
        return self


def _key_line(text: str, path: list[str]) -> int | None:
    """Best-effort line number of the last key of ``path`` inside its table."""
    section = ".".join(path[:-1])
    key = path[-1]
    current = ""
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", s)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return no
        if not section and current == "" and re.match(rf"^{re.escape(key)}\s*=", s):
            return no
    for no, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"^\s*\[\s*{re.escape('.'.join(path))}\s*\]", line):
            return no
    return None


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfigError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidConfigError(f"{where}: expected a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise InvalidConfigError(f"{where}: expected an array")
        return list(value)
    return value


def _fill(obj, table: dict, path: list[str], text: str):
    known = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in table.items():
        here = path + [key]
        where = ".".join(here)
        line = _key_line(text, here)
        loc = f" (line {line})" if line else ""
        if key not in known:
            raise InvalidConfigError(f"unknown key {where}{loc}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise InvalidConfigError(f"{where}{loc}: expected a table")
            _fill(current, value, here, text)
        else:
            try:
                setattr(obj, key, _coerce(value, current, where))
            except InvalidConfigError as exc:
                raise InvalidConfigError(f"{exc}{loc}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse TOML text on top of the defaults; unknown keys and bad types are errors."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfigError(f"TOML syntax error: {exc}") from None
    cfg = ExperimentConfig()
    _fill(cfg, data, [], text)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
