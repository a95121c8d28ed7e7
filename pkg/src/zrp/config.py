"""Experiment configuration: a dataclass plus an INI reader.

Example file::

    [experiment]
    name = fluct-eq
    seed = 7
    replicas = 2000

    [rate]
    family = e1_piecewise
    theta = 1
    K0 = 2
    head = 1.5

    [system]
    N = 512
    rho = 1.0

    [observe]
    times = 0.2
    modes = 1, 2, 3

    [tolerance]
    k_sigma = 3
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .rates import RateFunction, builtin_rate

EXPERIMENTS = ("thermo", "sample", "simulate", "hydro", "fluct-eq", "fluct-neq",
               "colour-fluct", "tagged", "clt-check")
PROFILES = ("constant", "sinusoid", "step")
MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    experiment: str
    rate_family: str = "linear"
    rate_params: dict = field(default_factory=dict)
    N: int = 128
    M: int | None = None
    rho: float = 1.0
    profile: str = "constant"
    amplitude: float = 0.0
    mode: int = 1
    colours: list[float] = field(default_factory=lambda: [1.0])
    times: list[float] = field(default_factory=lambda: [0.1])
    modes: list[int] = field(default_factory=lambda: [1])
    replicas: int = 1
    seed: int = 0
    bin: int = 16
    ensemble: str = "grand"
    rhos: list[float] = field(default_factory=lambda: [round(0.1 * i, 10) for i in range(1, 51)])
    sizes: list[int] = field(default_factory=lambda: [16, 64, 256])
    log_events: bool = False
    k_sigma: float = 3.0
    tol: float | None = None
    p_min: float = 1e-3

    def __post_init__(self):
        self.validate()

    @property
    def grid(self) -> int:
        return self.M if self.M is not None else self.N

    @property
    def k(self) -> int:
        return len(self.colours)

    def rate(self) -> RateFunction:
        return builtin_rate(self.rate_family, self.rate_params)

    def density_profile(self, M: int | None = None) -> np.ndarray:
        """Initial colour-blind density sampled at x_j = j/M."""
        M = self.grid if M is None else M
        x = np.arange(M) / M
        if self.profile == "constant":
            return np.full(M, self.rho)
        if self.profile == "sinusoid":
            return self.rho + self.amplitude * np.sin(2 * np.pi * self.mode * x)
        return np.where(x < 0.5, self.rho + self.amplitude, self.rho - self.amplitude)

    def colour_profile(self, M: int | None = None) -> np.ndarray:
        return np.outer(self.colours, self.density_profile(M))

    def validate(self) -> None:
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.experiment not in EXPERIMENTS:
            bad("experiment", f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        try:
            self.rate()
        except ValueError as exc:
            bad("rate", str(exc))
        if self.N < 1:
            bad("N", "must be a positive integer")
        if self.M is not None and (self.M < self.N or self.M % self.N):
            bad("M", "must be a multiple of N")
        if self.rho < 0:
            bad("rho", "must be nonnegative")
        if self.profile not in PROFILES:
            bad("profile", f"expected one of {PROFILES}")
        if self.profile != "constant" and not abs(self.amplitude) < self.rho:
            bad("amplitude", "|amplitude| must be smaller than rho to keep the profile nonnegative")
        c = np.asarray(self.colours, dtype=float)
        if c.size < 1 or np.any(c < 0) or abs(c.sum() - 1.0) > 1e-12:
            bad("colours", "must be nonnegative fractions summing to 1")
        if any(t < 0 for t in self.times) or list(self.times) != sorted(self.times):
            bad("times", "must be nonnegative and sorted ascending")
        if not self.times:
            bad("times", "at least one observation time is required")
        min_r = {"fluct-eq": 2, "fluct-neq": 2, "colour-fluct": 2, "tagged": 2, "simulate": 1, "sample": 1}
        need = min_r.get(self.experiment, 0)
        if self.replicas < need:
            bad("replicas", f"{self.experiment} needs at least {need} replicas")
        if not 0 <= self.seed <= MAX_SEED:
            bad("seed", "must fit in an unsigned 64-bit integer")
        if self.experiment == "hydro" and (self.bin < 1 or self.N % self.bin):
            bad("bin", "must divide N")
        if self.ensemble not in ("grand", "canonical"):
            bad("ensemble", "expected grand or canonical")
        if self.experiment == "colour-fluct" and self.k < 2:
            bad("colours", "colour-fluct needs at least two colours")
        if self.k_sigma <= 0:
            bad("k_sigma", "must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


# -- INI reader -------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_KEY_ALIASES = {"name": "experiment"}
_LIST_FLOAT = {"colours", "times", "rhos"}
_LIST_INT = {"modes", "sizes"}


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _parse_value(name: str, raw: str):
    try:
        if name in _LIST_FLOAT:
            return [float(v) for v in _split(raw)]
        if name in _LIST_INT:
            return [int(v) for v in _split(raw)]
        if name in ("N", "M", "mode", "replicas", "seed", "bin"):
            return int(raw)
        if name in ("rho", "amplitude", "k_sigma", "tol", "p_min"):
            return float(raw)
        if name == "log_events":
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def _rate_value(raw: str):
    parts = _split(raw)
    nums = []
    for p in parts:
        try:
            nums.append(float(p))
        except ValueError:
            return raw.strip()
    if "," in raw or not nums:
        return nums
    v = nums[0]
    return int(v) if v.is_integer() and "." not in raw else v


def parse_config(text: str, experiment: str | None = None, **overrides) -> ExperimentConfig:
    """Build a config from INI text.

    ``experiment`` and any non-None keyword overrides win over the file.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    values: dict = {}
    rate_params: dict = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            if section == "rate":
                if key == "family":
                    values["rate_family"] = raw.strip()
                else:
                    v = _rate_value(raw)
                    rate_params[key] = v if key != "head" or isinstance(v, list) else [v]
                continue
            name = _KEY_ALIASES.get(key, key)
            if name not in _FIELD_TYPES or name == "rate_params":
                raise ConfigError(f"{section}.{key}: unknown key")
            values[name] = _parse_value(name, raw)
    if rate_params:
        values["rate_params"] = rate_params
    if experiment is not None:
        values["experiment"] = experiment
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "experiment" not in values:
        raise ConfigError("experiment: no experiment named in config or on the command line")
    return ExperimentConfig(**values)


def load_config(path, experiment: str | None = None, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), experiment, **overrides)
