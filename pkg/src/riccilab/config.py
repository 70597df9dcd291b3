"""Scenario configuration: flat ``key = value`` text with a fixed schema.

Lines starting with ``#`` or ``;`` are comments.  Unknown or repeated keys
are rejected.  List values are comma separated.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .flow import FAMILIES
from .verify import IDENTITIES

SCENARIOS = ("verify-identities", "flow", "energy", "uniqueness", "blowup-monitor", "convergence-study")
RANDOMIZED = {"verify-identities", "convergence-study", "energy"}
PAIR_SCENARIOS = {"energy", "uniqueness"}
PERIODIC_FAMILIES = ("bumpy-cylinder", "shrinking-cylinder")
RESOLUTIONS = (32, 64, 128, 256)
FLOW_FAMILIES = FAMILIES + ("bumpy-cylinder",)
SECTION = "scenario"


@dataclass
class ScenarioConfig:
    scenario: str
    seed: int | None = None
    out: str = "out"
    dims: list = field(default_factory=lambda: [2])
    resolution: int | None = None
    resolutions: list = field(default_factory=lambda: [32, 64, 128])
    samples: int = 20
    order_samples: int | None = None
    order_region: float | None = None
    identities: list = field(default_factory=lambda: list(IDENTITIES))
    negative_controls: bool = False
    family: str | None = None
    n: int = 3
    r0: float = 1.0
    deltas: list = field(default_factory=lambda: [1e-3, 1e-4])
    sigma: float = 0.5
    a: float | None = None
    r: float | None = None
    l1: float = 0.25
    l2: float = 0.1
    gamma: float | None = None
    dt: float = 1e-3
    steps: list = field(default_factory=lambda: [0.01, 0.005, 0.0025, 0.00125])
    t_end: float | None = None
    scheme: str = "rk4"
    fit_batch_size: int = 6

    @property
    def points(self):
        if self.resolution is not None:
            return self.resolution
        return 32 if self.scenario == "uniqueness" else 64

    @property
    def flow_family(self):
        if self.family is not None:
            return self.family
        return "bumpy-cylinder" if self.scenario in PAIR_SCENARIOS else "shrinking-sphere"

    @property
    def horizon(self):
        if self.t_end is not None:
            return self.t_end
        return 0.1 if self.scenario == "uniqueness" else 0.2

    def to_dict(self):
        return asdict(self)


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(item):
    def parse(v):
        return [item(p.strip()) for p in v.split(",") if p.strip()]
    return parse


def _str(v):
    return v.strip()


PARSERS = {
    "scenario": _str,
    "seed": _int,
    "out": _str,
    "dims": _list(_int),
    "resolution": _int,
    "resolutions": _list(_int),
    "samples": _int,
    "order_samples": _int,
    "order_region": _float,
    "identities": _list(_str),
    "negative_controls": _bool,
    "family": _str,
    "n": _int,
    "r0": _float,
    "deltas": _list(_float),
    "sigma": _float,
    "a": _float,
    "r": _float,
    "l1": _float,
    "l2": _float,
    "gamma": _float,
    "dt": _float,
    "steps": _list(_float),
    "t_end": _float,
    "scheme": _str,
    "fit_batch_size": _int,
}


def _positive(name, value):
    if value is not None and not value > 0:
        raise ConfigError(name, f"must be positive, got {value}")


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    if cfg.scenario not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {', '.join(SCENARIOS)}")
    if cfg.scenario in RANDOMIZED and cfg.seed is None:
        raise ConfigError("seed", f"required for the {cfg.scenario} scenario")
    if cfg.seed is not None and cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    if not 0 < cfg.sigma < 1:
        raise ConfigError("sigma", f"must lie in (0, 1), got {cfg.sigma}")
    if not cfg.dims or any(d not in (2, 3) for d in cfg.dims):
        raise ConfigError("dims", "entries must be 2 or 3")
    if cfg.resolution is not None and cfg.resolution not in RESOLUTIONS:
        raise ConfigError("resolution", f"must be one of {RESOLUTIONS}")
    if not cfg.resolutions or any(N not in RESOLUTIONS for N in cfg.resolutions):
        raise ConfigError("resolutions", f"entries must be in {RESOLUTIONS}")
    if cfg.scenario == "convergence-study" and len(set(cfg.resolutions)) < 3:
        raise ConfigError("resolutions", "an order estimate needs at least 3 distinct resolutions")
    if cfg.samples < 1:
        raise ConfigError("samples", "must be at least 1")
    if cfg.order_samples is not None and cfg.order_samples < 1:
        raise ConfigError("order_samples", "must be at least 1")
    if cfg.order_region is not None and not 0 < cfg.order_region <= 1:
        raise ConfigError("order_region", "must lie in (0, 1]")
    unknown = [i for i in cfg.identities if i not in IDENTITIES]
    if unknown or not cfg.identities:
        raise ConfigError("identities", f"unknown identity ids {unknown}")
    if cfg.family is not None and cfg.family not in FLOW_FAMILIES:
        raise ConfigError("family", f"must be one of {', '.join(FLOW_FAMILIES)}")
    if cfg.scenario in PAIR_SCENARIOS and cfg.flow_family not in PERIODIC_FAMILIES:
        raise ConfigError("family", f"{cfg.scenario} needs one of {', '.join(PERIODIC_FAMILIES)}")
    if cfg.n not in (2, 3):
        raise ConfigError("n", "must be 2 or 3")
    if not cfg.deltas or any(d < 0 for d in cfg.deltas):
        raise ConfigError("deltas", "perturbation amplitudes must be >= 0")
    for name in ("r0", "a", "r", "l1", "l2", "gamma", "dt", "t_end"):
        _positive(name, getattr(cfg, name))
    if not cfg.steps or any(s <= 0 for s in cfg.steps):
        raise ConfigError("steps", "time steps must be positive")
    if cfg.scheme not in ("rk4", "euler"):
        raise ConfigError("scheme", "must be rk4 or euler")
    if cfg.fit_batch_size < 1:
        raise ConfigError("fit_batch_size", "must be at least 1")
    return cfg


def parse_config(text: str, overrides=None, scenario=None) -> ScenarioConfig:
    """Parse config text; ``overrides`` (already typed) win over file values.

    ``scenario``, when given, fills a missing ``scenario`` key and must agree
    with one that is present.
    """
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    try:
        parser.read_string(f"[{SECTION}]\n" + text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(exc.option, "given more than once") from exc
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from exc
    if parser.sections() != [SECTION]:
        raise ConfigError("<file>", "section headers are not allowed")
    values = {}
    for key, raw in parser.items(SECTION):
        if key not in PARSERS:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    if scenario is not None:
        if values.setdefault("scenario", scenario) != scenario:
            raise ConfigError("scenario", f"file says {values['scenario']!r} but {scenario!r} was requested")
    if "scenario" not in values:
        raise ConfigError("scenario", "missing")
    return validate(ScenarioConfig(**values))


def load_config(path, overrides=None, scenario=None) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, overrides, scenario)
