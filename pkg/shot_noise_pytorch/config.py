"""
Run configuration, a TOML document

    [process]
    seed = 7
    n_runs = 100000

    [[pulse]]
    family = "pure_exp"
    C = 1.0
    a = 1.0
    q = 1.0

    [inference]
    x0 = 0.1
    probes = [0.05, 0.02, 0.01]
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from shot_noise_pytorch.process import DEFAULT_EPS, ProcessConfig, PulseTypeConfig
from shot_noise_pytorch.shapes import Family, PulseShape
from shot_noise_pytorch.utils import ConfigError, DomainError, exists

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# schema

REAL, INTEGER, TEXT, REALS = "real", "integer", "string", "list of reals"

SECTIONS = {
    "process": dict(T=REAL, eps=REAL, seed=INTEGER, n_runs=INTEGER, sampler=TEXT),
    "pulse": dict(family=TEXT, C=REAL, a=REAL, d=REAL, b=REAL, q=REAL, horizon=REAL),
    "inference": dict(
        x0=REAL, x_lo=REAL, x_hi=REAL, n_grid=INTEGER, n_boot=INTEGER, probes=REALS
    ),
    "density": dict(h=REAL, A_max=REAL),
    "verify": dict(alphas=REALS),
}

DEFAULT_RUNS = 10_000
DEFAULT_ALPHAS = (0.1, 0.5, 1.0, 2.0, 5.0)


@dataclass(frozen=True)
class InferenceConfig:
    x0: float | None = None
    x_lo: float | None = None
    x_hi: float | None = None
    n_grid: int = 25
    n_boot: int = 200
    probes: tuple[float, ...] = ()


@dataclass(frozen=True)
class DensityConfig:
    h: float | None = None
    A_max: float | None = None


@dataclass(frozen=True)
class RunConfig:
    process: ProcessConfig
    n_runs: int = DEFAULT_RUNS
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    alphas: tuple[float, ...] = DEFAULT_ALPHAS

    def with_overrides(self, seed=None, n_runs=None, x0=None) -> RunConfig:
        """Command line flags take precedence over the file."""
        run = self

        if exists(seed):
            run = replace(run, process=_build(replace, run.process, seed=seed, where="--seed"))
        if exists(n_runs):
            if not n_runs >= 1:
                raise ConfigError(f"--runs: must be at least 1, got {n_runs}")
            run = replace(run, n_runs=n_runs)
        if exists(x0):
            if not x0 > 0:
                raise ConfigError(f"--x0: must be positive, got {x0}")
            run = replace(run, inference=replace(run.inference, x0=x0))

        return run

    def require_x0(self) -> float:
        if not exists(self.inference.x0):
            raise ConfigError("x0 is required, set [inference] x0 or pass --x0")

        return self.inference.x0


# parsing


def _build(fn, *args, where: str, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DomainError as err:
        raise ConfigError(f"{where}: {err}") from err


def _check_value(value, kind: str, key: str, where: str):
    is_real = isinstance(value, (int, float)) and not isinstance(value, bool)

    if kind == REAL and is_real:
        return float(value)
    if kind == INTEGER and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind == TEXT and isinstance(value, str):
        return value
    if kind == REALS and isinstance(value, list):
        return tuple(_check_value(v, REAL, key, where) for v in value)

    raise ConfigError(f"{where}: {key} must be a {kind}, got {value!r}")


def _read_table(table, section: str, where: str) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")

    schema = SECTIONS[section]
    unknown = sorted(set(table) - set(schema))

    if len(unknown) > 0:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")

    return {key: _check_value(value, schema[key], key, where) for key, value in table.items()}


def _require(values: dict, key: str, where: str):
    if key not in values:
        raise ConfigError(f"{where}: missing required key {key!r}")

    return values[key]


def _parse_pulse(values: dict, where: str) -> PulseTypeConfig:
    family = _require(values, "family", where)

    if family not in {f.value for f in Family}:
        raise ConfigError(f"{where}: family must be one of {[f.value for f in Family]}, got {family!r}")

    shape = _build(
        PulseShape,
        Family(family),
        _require(values, "C", where),
        _require(values, "a", where),
        values.get("d"),
        values.get("b", 0.0),
        where=where,
    )

    return _build(
        PulseTypeConfig,
        shape,
        _require(values, "q", where),
        values.get("horizon"),
        where=where,
    )


def parse_config(text: str) -> RunConfig:
    """Validated RunConfig from the TOML text, defaults filled in."""
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        message = str(err)
        if "overwrite" in message or "twice" in message:
            raise ConfigError(f"duplicate key ({message})") from err
        raise ConfigError(f"invalid TOML: {message}") from err

    unknown = sorted(set(document) - set(SECTIONS))
    if len(unknown) > 0:
        raise ConfigError(f"unknown section [{unknown[0]}]")

    process = _read_table(document.get("process", {}), "process", "[process]")

    pulses = document.get("pulse", [])
    if not isinstance(pulses, list) or len(pulses) == 0:
        raise ConfigError("[[pulse]]: at least one pulse type is required")

    types = [
        _parse_pulse(_read_table(table, "pulse", f"[[pulse]] #{i}"), f"[[pulse]] #{i}")
        for i, table in enumerate(pulses, start=1)
    ]

    config = _build(
        ProcessConfig,
        types,
        half_window=process.get("T"),
        eps=process.get("eps", DEFAULT_EPS),
        seed=process.get("seed", 0),
        sampler=process.get("sampler", "covering"),
        where="[process]",
    )

    n_runs = process.get("n_runs", DEFAULT_RUNS)
    if not n_runs >= 1:
        raise ConfigError(f"[process]: n_runs must be at least 1, got {n_runs}")

    inference = _read_table(document.get("inference", {}), "inference", "[inference]")

    for key in ("x0", "x_lo", "x_hi"):
        if key in inference and not inference[key] > 0:
            raise ConfigError(f"[inference]: {key} must be positive, got {inference[key]}")

    density = _read_table(document.get("density", {}), "density", "[density]")

    for key, value in density.items():
        if not value > 0:
            raise ConfigError(f"[density]: {key} must be positive, got {value}")

    verify = _read_table(document.get("verify", {}), "verify", "[verify]")
    alphas = verify.get("alphas", DEFAULT_ALPHAS)

    if any(not alpha >= 0 for alpha in alphas):
        raise ConfigError("[verify]: alphas must be nonnegative")

    return RunConfig(
        config,
        n_runs,
        InferenceConfig(**inference),
        DensityConfig(**density),
        alphas,
    )


def load_config(path) -> RunConfig:
    path = Path(path)

    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from err

    return parse_config(text)
