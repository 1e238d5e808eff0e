"""Run configuration: flat key-value files with sections, flag overrides,
and resolved-config sidecars so every run is diffable and replayable."""

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import UsageError
from .synthetic import default_latent_params
from .theory import LatentParams

__all__ = ["RunConfig", "load_config", "write_sidecar", "resolve_threads"]

_SECTIONS = {
    "latent": ("d_cls", "d_irr", "d_shift", "d_noise", "mu_norm2", "delta_norm2"),
    "sweep": ("severities", "n_samples", "seeds"),
    "adapt": ("severity", "contamination", "n_batches", "batch_size", "seed",
              "learning_rate", "k_prior", "mode", "input"),
}


@dataclass
class RunConfig:
    # latent model
    d_cls: int = 8
    d_irr: int = 32
    d_shift: int = 8
    d_noise: int = 16
    mu_norm2: float = 4.0
    delta_norm2: float = 9.0
    # severity sweep
    severities: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    n_samples: int = 200_000
    seeds: list = field(default_factory=lambda: [0])
    # adaptation run
    severity: float = 4.0
    contamination: float = 0.3
    n_batches: int = 500
    batch_size: int = 20
    seed: int = 0
    learning_rate: float = 0.007
    k_prior: float = 10_000.0
    mode: str = "synthetic"
    input: str = ""

    def latent_params(self, severity: float) -> LatentParams:
        return default_latent_params(
            severity=severity,
            d_cls=self.d_cls,
            d_irr=self.d_irr,
            d_shift=self.d_shift,
            d_noise=self.d_noise,
            mu_norm2=self.mu_norm2,
            delta_norm2=self.delta_norm2,
        )


def _parse_value(name: str, raw: str, like):
    try:
        if isinstance(like, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, list):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            elem = like[0] if like else 0.0
            return [type(elem)(float(p)) if isinstance(elem, (int, float)) else p for p in parts]
        return raw
    except ValueError as exc:
        raise UsageError(f"config key {name}: cannot parse {raw!r}") from exc


def load_config(path=None) -> RunConfig:
    """Defaults, overridden by the file when given. Unknown keys are errors."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc

    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise UsageError(f"config {path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise UsageError(f"config {path}: unknown key {key!r} in [{section}]")
            setattr(cfg, key, _parse_value(key, raw, known[key]))
    return cfg


def write_sidecar(cfg: RunConfig, path, command: str = ""):
    """Write the fully resolved configuration next to a run's outputs."""
    parser = configparser.ConfigParser()
    if command:
        parser["meta"] = {"command": command}
    for section, keys in _SECTIONS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(cfg, key)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            parser[section][key] = str(value)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def resolve_threads(flag_value=None) -> int:
    """--threads flag, else MINT_THREADS, else available parallelism."""
    if flag_value:
        return max(1, int(flag_value))
    env = os.environ.get("MINT_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"MINT_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1
