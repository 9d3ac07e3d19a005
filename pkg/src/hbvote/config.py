"""Election configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

DESK_SCALE_VOTERS = 1_000_000


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class ElectionConfig:
    """Defaults are the national-scale figures; desk runs override them.

    ``zero_bits`` lists the difficulty per level starting at level 0; levels
    past its end are not mined.
    """

    election_id: str = "TR2018"
    levels: int = 2
    clusters: int = 700
    centers_per_cluster: int = 15
    voters: int = 56_000_000
    candidates: int = 4
    sync_interval_s: int = 300
    pause_s: int = 60
    latency_ms: int = 100
    jitter_ms: int = 20
    zero_bits: tuple[int, ...] = (8,)
    election_duration_s: int = 8 * 3600
    seed: int = 42
    retry_cap: int = 10
    mining_budget: int = 2**26
    salt: str = "e-devlet-mock"
    override_scale: bool = False
    voters_file: str = ""
    candidates_file: str = ""
    region_file: str = ""

    def validate(self) -> ElectionConfig:
        positive = ("levels", "clusters", "centers_per_cluster", "voters", "candidates",
                    "sync_interval_s", "election_duration_s", "retry_cap", "mining_budget")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        for name in ("pause_s", "latency_ms", "jitter_ms", "seed"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must not be negative")
        if not self.zero_bits or any(not 0 <= b <= 32 for b in self.zero_bits):
            raise ConfigInvalid("zero_bits must be between 0 and 32 at every level")
        if self.voters > DESK_SCALE_VOTERS and not self.override_scale:
            raise ConfigInvalid(
                f"{self.voters} voters exceeds the desk-scale limit of {DESK_SCALE_VOTERS}; "
                "set override_scale to run anyway")
        for ch in "|,":
            if ch in self.election_id:
                raise ConfigInvalid(f"election_id may not contain {ch!r}")
        if not self.election_id:
            raise ConfigInvalid("election_id is empty")
        return self

    def replace(self, **changes) -> ElectionConfig:
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _convert(name: str, default, text: str):
    if isinstance(default, bool):
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ConfigInvalid(f"{name}: expected true/false, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text.replace("_", ""))
        except ValueError:
            raise ConfigInvalid(f"{name}: expected an integer, got {text!r}") from None
    if isinstance(default, tuple):
        try:
            return tuple(int(part) for part in text.split(","))
        except ValueError:
            raise ConfigInvalid(f"{name}: expected comma-separated integers, got {text!r}") from None
    return text


def parse_config(text: str) -> ElectionConfig:
    defaults = ElectionConfig()
    known = {f.name for f in fields(ElectionConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigInvalid(f"line {lineno}: {key!r} given twice")
        values[key] = _convert(key, getattr(defaults, key), value)
    return ElectionConfig(**values).validate()


def load_config(path) -> ElectionConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc}") from None
    config = parse_config(text)
    # data files are resolved relative to the config file
    changes = {}
    for key in ("voters_file", "candidates_file", "region_file"):
        value = getattr(config, key)
        if value and not Path(value).is_absolute():
            changes[key] = str(path.parent / value)
    return config.replace(**changes) if changes else config
