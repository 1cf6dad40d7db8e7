"""Sectioned key=value experiment configuration.

Example::

    [experiment]
    id = converge
    out = runs/converge

    [lattice]
    d = 3
    N = 32

    [grid]
    T = 0.25
    dt = 2.5e-4

    [schedule]
    epsilons = 1/4, 1/8, 1/16, 1/32
    seeds = 0, 1, 2, 3, 4

Every constraint enforced by the numerical modules is re-checked on load so a
bad file fails before any work starts.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

from ..errors import ConfigError, InvalidExponents
from ..gauss_ou import MollifierProfile
from ..lattice import LatticeSpec
from ..renorm import RoughExponents
from ..solver import ControlWeights

_EXPERIMENTS = ("converge", "diverge", "verify", "solve", "sample-ou", "renorm-constants", "phi-eps", "build-rough")


def _number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _numbers(text: str) -> tuple[float, ...]:
    return tuple(_number(t) for t in text.split(",") if t.strip())


def _flag(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    out = []
    for t in text.split(","):
        if not t.strip():
            continue
        try:
            out.append(int(t))
        except ValueError as exc:
            raise ConfigError(f"not an integer: {t!r}") from exc
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str = "converge"
    out: str = "runs"
    dim: int = 3
    n: int = 32
    T: float = 0.25
    dt: float = 2.5e-4
    support_radius: float = 1.0
    plateau: float = 0.5
    epsilons: tuple = (0.25, 0.125, 0.0625, 0.03125)
    replicas: int = 1
    seeds: tuple = (0, 1, 2, 3, 4)
    K: tuple = (0.20, 0.04, 0.10, 0.05)
    L: tuple = ControlWeights().as_tuple()
    z: float = 0.6
    # experiment specific extras
    snapshots: int = 25
    mc_epsilons: tuple = ()
    probe_time: float = 0.1
    a: float = 0.0
    b: float = 0.0
    renormalize: bool = True
    min_monotone: float = 0.8
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment_id not in _EXPERIMENTS:
            raise ConfigError(f"unknown experiment id {self.experiment_id!r}")
        try:
            self.lattice()
            self.mollifier()
            RoughExponents(*self.K)
            ControlWeights.from_tuple(self.L)
        except (ValueError, InvalidExponents) as exc:
            raise ConfigError(str(exc)) from exc
        if not 0.5 < self.z < 2.0 / 3.0:
            raise ConfigError("z must lie in (1/2, 2/3)")
        if not (self.T > 0 and 0 < self.dt <= self.T):
            raise ConfigError("need T > 0 and 0 < dt <= T")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9 * self.T / self.dt:
            raise ConfigError("T must be an integer multiple of dt")
        if any(e < 0 for e in self.epsilons + self.mc_epsilons):
            raise ConfigError("epsilons must be >= 0")
        if self.replicas < 1 or self.snapshots < 1:
            raise ConfigError("replicas and snapshots must be positive")
        if not self.seeds or any(not 0 <= s < 2**64 for s in self.seeds):
            raise ConfigError("need at least one 64-bit unsigned seed")
        if not 0 < self.min_monotone <= 1:
            raise ConfigError("min_monotone must lie in (0, 1]")
        if self.mc_epsilons and not 0 < self.probe_time <= self.T:
            raise ConfigError("probe_time must lie in (0, T]")

    def lattice(self) -> LatticeSpec:
        return LatticeSpec(self.dim, self.n)

    def mollifier(self) -> MollifierProfile:
        return MollifierProfile(self.support_radius, self.plateau)

    def exponents(self) -> RoughExponents:
        return RoughExponents(*self.K)

    def weights(self) -> ControlWeights:
        return ControlWeights.from_tuple(self.L)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def replace(self, **changes) -> "ExperimentConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        return ExperimentConfig(**vals)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SCHEMA = {
    ("experiment", "id"): ("experiment_id", str),
    ("experiment", "out"): ("out", str),
    ("lattice", "d"): ("dim", int),
    ("lattice", "n"): ("n", int),
    ("grid", "t"): ("T", _number),
    ("grid", "dt"): ("dt", _number),
    ("grid", "snapshots"): ("snapshots", int),
    ("mollifier", "support_radius"): ("support_radius", _number),
    ("mollifier", "plateau"): ("plateau", _number),
    ("schedule", "epsilons"): ("epsilons", _numbers),
    ("schedule", "seeds"): ("seeds", _ints),
    ("schedule", "replicas"): ("replicas", int),
    ("schedule", "min_monotone"): ("min_monotone", _number),
    ("montecarlo", "epsilons"): ("mc_epsilons", _numbers),
    ("montecarlo", "probe_time"): ("probe_time", _number),
    ("montecarlo", "replicas"): ("replicas", int),
    ("exponents", "k"): ("K", _numbers),
    ("exponents", "l"): ("L", _numbers),
    ("exponents", "z"): ("z", _number),
    ("model", "a"): ("a", _number),
    ("model", "b"): ("b", _number),
    ("model", "renormalize"): ("renormalize", _flag),
}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    vals, tags = {}, {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            target = _SCHEMA.get((section.lower(), key.lower()))
            if target is None:
                if section.lower() == "tags":
                    tags[key] = raw
                    continue
                raise ConfigError(f"{source}: unknown key [{section}] {key}")
            name, conv = target
            try:
                vals[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from exc
    if tags:
        vals["tags"] = tags
    try:
        return ExperimentConfig(**vals)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ", ".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines, current = [], None
    for (section, key), (name, _) in _SCHEMA.items():
        if (section, key) == ("montecarlo", "replicas"):
            continue
        if section != current:
            lines.append(f"\n[{section}]" if lines else f"[{section}]")
            current = section
        lines.append(f"{key} = {fmt(getattr(cfg, name))}")
    if cfg.tags:
        lines.append("\n[tags]")
        lines.extend(f"{k} = {v}" for k, v in cfg.tags.items())
    return "\n".join(lines) + "\n"
