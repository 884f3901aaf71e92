"""Layered run configuration: built-in defaults < YAML file < command-line overrides.

Key schema (every section and key is optional in a file; unknown keys are errors)::

    thermo:
      molar_density: 20000.0        # mol/m3
      azeotrope_cap: 0.95           # max MeOAc mole fraction in a distillate
      pressure: 101325.0            # Pa
      components:                   # one block per id, all five fields
        HOAc: {molar_mass: 0.06005, normal_boiling_point: 391.1,
               liquid_heat_capacity: 123.1, relative_volatility: 1.0, price: 0.5}
        ...
    kinetics: {pre_exponential, activation_energy, keq_a, keq_b}
    units: {rk4_steps, l_half, column_stages, reflux_ratio, kremser_max_iter}
    tear: {tolerance, max_iter, q_min, q_max, polish_factor, polish_iter}
    economics:
      utility_price, operating_hours, latent_heat, column_duty_factor,
      recovery_factor, infeasible_penalty, negative_reduction, reduce_penalty
      capital:
        PFR: {base_cost, ref_size, exponent}
        Column: {...}
        Heater: {...}
    env:
      fidelity: shortcut | rigorous
      max_steps: 12
      feed: {flows: [HOAc, MeOH, MeOAc, H2O], temperature, pressure}
    agent: {hidden, layers, head_hidden}
    train: {episodes, update_every, epochs, minibatch_size, clip_eps, gamma,
            gae_lambda, value_coeff, entropy_coeff, lr, max_grad_norm, seed,
            checkpoint_every, workers}

Overrides from flags use dotted keys, e.g. ``train.lr=1e-4``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml

from .agent.policy import AgentSpec
from .agent.ppo import TrainConfig
from .economics import CapitalCorrelation, CostModel
from .env import EnvConfig, FeedSpec
from .simulate import TearSettings
from .thermo import Component, KineticsParams, ThermoConfig
from .units import Fidelity, UnitConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    agent: AgentSpec
    train: TrainConfig


def _flat(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def to_dict(cfg: RunConfig) -> dict:
    env = cfg.env
    th = env.thermo
    cost = env.cost
    econ = {k: v for k, v in _flat(cost).items() if k != "capital"}
    econ["capital"] = {k: asdict(v) for k, v in sorted(cost.capital.items())}
    return {
        "thermo": {
            "molar_density": th.molar_density,
            "azeotrope_cap": th.azeotrope_cap,
            "pressure": th.pressure,
            "components": {c.id: {k: v for k, v in asdict(c).items() if k != "id"} for c in th.components},
        },
        "kinetics": asdict(th.kinetics),
        "units": asdict(env.units),
        "tear": asdict(env.tear),
        "economics": econ,
        "env": {
            "fidelity": Fidelity(env.fidelity).value,
            "max_steps": env.max_steps,
            "feed": {"flows": list(env.feed.flows), "temperature": env.feed.temperature,
                     "pressure": env.feed.pressure},
        },
        "agent": asdict(cfg.agent),
        "train": asdict(cfg.train),
    }


def defaults() -> dict:
    return to_dict(RunConfig(EnvConfig(), AgentSpec(), TrainConfig()))


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _typed(cls, values: dict, section: str):
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        default = getattr(cls(), f.name) if f.name != "id" else None
        try:
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise TypeError
            elif isinstance(default, int) and not isinstance(default, bool):
                if isinstance(v, float) and v.is_integer():
                    v = int(v)
                if not isinstance(v, int) or isinstance(v, bool):
                    raise TypeError
            elif isinstance(default, float):
                if isinstance(v, bool):
                    raise TypeError
                v = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{section}.{f.name}: expected {type(default).__name__}, got {v!r}") from None
        kwargs[f.name] = v
    return kwargs


def from_dict(d: dict) -> RunConfig:
    """Build typed config objects from a (possibly partial) nested mapping."""
    d = _merge(defaults(), d or {})
    try:
        comps = []
        for cid, block in d["thermo"]["components"].items():
            comps.append(Component(cid, **{k: float(v) for k, v in block.items()}))
        kinetics = KineticsParams(**_typed(KineticsParams, d["kinetics"], "kinetics"))
        th = d["thermo"]
        thermo = ThermoConfig(tuple(comps), kinetics, float(th["molar_density"]),
                              float(th["azeotrope_cap"]), float(th["pressure"]))
        units = UnitConfig(**_typed(UnitConfig, d["units"], "units"))
        tear = TearSettings(**_typed(TearSettings, d["tear"], "tear"))
        econ = dict(d["economics"])
        capital = {k: CapitalCorrelation(float(v["base_cost"]), float(v["ref_size"]), float(v["exponent"]))
                   for k, v in econ.pop("capital").items()}
        cost = replace(CostModel(**_typed(CostModel, econ, "economics")), capital=capital)
        e = d["env"]
        flows = tuple(float(x) for x in e["feed"]["flows"])
        if len(flows) != 4:
            raise ConfigError("env.feed.flows needs four component flows")
        feed = FeedSpec(flows, float(e["feed"]["temperature"]), float(e["feed"]["pressure"]))
        env = EnvConfig(feed, Fidelity(e["fidelity"]), int(e["max_steps"]), thermo, units, cost, tear,
                        int(d["train"]["seed"]))
        agent = AgentSpec(**_typed(AgentSpec, d["agent"], "agent"))
        train = TrainConfig(**_typed(TrainConfig, d["train"], "train"))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(env, agent, train)


def parse_override(text: str) -> dict:
    """``a.b.c=value`` -> nested dict; the value is parsed as YAML scalar or list."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return data


def resolve(path=None, overrides: list[dict] | None = None) -> tuple[RunConfig, dict]:
    """Apply defaults < file < overrides; return typed config and the resolved mapping."""
    d = defaults()
    if path is not None:
        d = _merge(d, load_file(path))
    for o in overrides or []:
        d = _merge(d, o)
    cfg = from_dict(d)
    return cfg, to_dict(cfg)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def dump(d: dict) -> str:
    return yaml.safe_dump(d, sort_keys=True)
