"""Run configuration: INI text <-> :class:`RunConfig`.

Schema version 1.  Sections and keys mirror the dataclass fields of each
subsystem; tuples are comma separated, booleans use the usual INI words.

    [run]         mode, seed, out_dir, weights, estimator
    [model]       gamma, A, B
    [integrator]  method, step_size, sampling_period
    [empc]        horizon, manipulated, u_low, u_high, stage_cost, ...
    [agent]       gamma, tau, actor_lr, ..., epsilon
    [training]    episodes, steps_per_episode, ...
    [scenario]    name, t_final, deactivation, spike_window, ...
    [noise]       enabled, std_dev, seed, mode
    [stability]   state_weights, rho_start, n_samples, delta, beta, ...

Unknown sections or keys, unparsable values and violated constraints are all
rejected with the offending section and line.
"""

import configparser
import dataclasses
import hashlib
import io
import re
from dataclasses import dataclass, field, replace

from .ddpg import AgentConfig
from .empc import EmpcConfig
from .model import ModelConstants
from .orchestrator import TrainingConfig
from .scenario import ScenarioState, named_scenario
from .sim import IntegratorConfig, NoiseConfig
from .stability import BETA_EXACT

SCHEMA_VERSION = 1
MODES = ("train", "deploy", "compare", "stability-audit")
ESTIMATORS = ("trained", "frozen", "oracle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    mode: str = "deploy"
    seed: int = 0
    out_dir: str = "out"
    weights: str = ""
    estimator: str = "trained"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class StabilitySection:
    state_weights: tuple = (100.0, 1.0, 10.0, 100.0)
    control_weight: float = 100.0
    rho_start: float = 0.05
    rho_s_fraction: float = 0.01
    n_samples: int = 2000
    delta: float = 1e-3
    beta: float = BETA_EXACT
    pairs: int = 100
    f_d_variant: str = "printed"

    def __post_init__(self):
        if len(self.state_weights) != 4 or min(self.state_weights) <= 0:
            raise ValueError("state_weights needs 4 positive entries")
        if self.n_samples < 1 or self.pairs < 1:
            raise ValueError("sample counts must be positive")
        if self.f_d_variant not in ("printed", "lx_only"):
            raise ValueError("f_d_variant must be 'printed' or 'lx_only'")


def _default_scenario():
    return named_scenario("nominal")


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelConstants = field(default_factory=ModelConstants)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    empc: EmpcConfig = field(default_factory=EmpcConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    scenario: ScenarioState = field(default_factory=_default_scenario)
    stability: StabilitySection = field(default_factory=StabilitySection)

    @property
    def mode(self):
        return self.run.mode

    @property
    def seed(self):
        return self.run.seed


SECTIONS = ("run", "model", "integrator", "empc", "agent", "training", "scenario", "noise", "stability")


def _fields(obj):
    return [f for f in dataclasses.fields(obj) if f.init]


def _convert(text, default, name):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"{name}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"{name}: expected a number, got {text!r}") from None
    if isinstance(default, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if all(isinstance(d, str) for d in default) and default:
            return tuple(items)
        if not default and not all(re.fullmatch(r"[-+.0-9eE]+", s) for s in items):
            return tuple(items)
        try:
            return tuple(float(s) for s in items)
        except ValueError:
            raise ValueError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    return text


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, NoiseConfig):
        raise TypeError("noise is serialised in its own section")
    return str(value)


def _line_index(text):
    """``(section, key) -> line number`` and ``section -> header line``."""
    keys, heads = {}, {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            heads.setdefault(section, n)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and section is not None:
            keys[(section, m.group(1).strip())] = n
    return keys, heads


def _build(cls_default, section, items, lines, heads):
    """Apply ``items`` to the default instance of one section."""
    known = {f.name: getattr(cls_default, f.name) for f in _fields(cls_default)}
    values = {}
    for key, text in items.items():
        where = f"[{section}] line {lines.get((section, key), heads.get(section, '?'))}"
        if key not in known or key.startswith("_") or isinstance(known[key], NoiseConfig):
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            values[key] = _convert(text, known[key], key)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    try:
        return replace(cls_default, **values)
    except (ValueError, TypeError) as exc:
        # point at the key the message names, else at the section header
        named = [k for k in values if re.search(rf"\b{re.escape(k)}\b", str(exc))]
        line = lines.get((section, named[0])) if named else heads.get(section, "?")
        raise ConfigError(f"[{section}] line {line}: {exc}") from None


def parse_config(text):
    """Parse and validate configuration text; missing values take defaults."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str  # keys are case sensitive (model A, B)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    lines, heads = _line_index(text)
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"[{name}] line {heads.get(name, '?')}: unknown section")

    def items(name):
        return dict(parser.items(name)) if parser.has_section(name) else {}

    base = RunConfig()
    built = {}
    for name in ("run", "model", "integrator", "empc", "agent", "training", "stability"):
        built[name] = _build(getattr(base, name), name, items(name), lines, heads)

    noise = _build(NoiseConfig(), "noise", items("noise"), lines, heads)
    scen_items = items("scenario")
    preset = scen_items.get("name", base.scenario.name).strip()
    try:
        scen_base = named_scenario(preset)
    except ValueError as exc:
        raise ConfigError(f"[scenario] line {lines.get(('scenario', 'name'), '?')}: {exc}") from None
    if parser.has_section("noise"):
        scen_base = replace(scen_base, noise=noise)
    scen_items = {k: v for k, v in scen_items.items() if k != "name"}
    if "t_final" in scen_items and "step_times" not in scen_items:
        scen_items["step_times"] = ""  # re-spread the steps over the new horizon
    built["scenario"] = _build(scen_base, "scenario", scen_items, lines, heads)
    if built["scenario"].name != preset:
        built["scenario"] = replace(built["scenario"], name=preset)
    return RunConfig(**built)


def serialize_config(cfg, include_run=True):
    """Canonical INI text holding every effective value."""
    out = io.StringIO()
    out.write(f"# rlempc run configuration, schema {SCHEMA_VERSION}\n")
    sections = [("run", cfg.run)] if include_run else []
    sections += [(n, getattr(cfg, n)) for n in ("model", "integrator", "empc", "agent", "training")]
    sections += [("scenario", cfg.scenario), ("noise", cfg.scenario.noise), ("stability", cfg.stability)]
    for name, obj in sections:
        out.write(f"\n[{name}]\n")
        for f in _fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, NoiseConfig):
                continue
            out.write(f"{f.name} = {_format(value)}\n")
    return out.getvalue()


def config_hash(cfg):
    """Digest of everything that affects results (the [run] paths are excluded)."""
    text = serialize_config(cfg, include_run=False) + f"seed={cfg.run.seed}\nmode={cfg.run.mode}\n"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


__all__ = ["ConfigError", "RunConfig", "RunSection", "StabilitySection", "parse_config", "serialize_config",
           "config_hash", "load_config", "MODES", "SCHEMA_VERSION"]
