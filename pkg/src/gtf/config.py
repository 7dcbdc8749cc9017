"""JSON experiment configuration: parsing, validation, defaults and echo."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

from .analytic import AnalyticWorld, demo_world
from .diffusion import GuidanceConfig, GuidanceRule, SamplerConfig, SamplerMethod
from .errors import GTFError, ParseError, ValidationError
from .geometry import ManipulationMode
from .metrics import GridSpec
from .mlp import MlpSpec, TrainConfig
from .schedulers import SCHEDULER_NAMES

TOP_KEYS = ("world", "schedule", "sampler", "guidance", "sweep", "output")
SWEEP_AXES = ("w1", "w2", "scheduler", "cfg")


@dataclass(frozen=True)
class WorldConfig:
    kind: str = "analytic"
    preset: str | None = "demo"
    analytic: dict | None = None  # explicit prior/conditions document
    checkpoint: str | None = None  # learned worlds only
    network: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def data_world(self) -> AnalyticWorld:
        """The analytic world: sampled directly, or used as training data."""
        if self.analytic is not None:
            return AnalyticWorld.from_dict(self.analytic)
        return demo_world()

    def mlp_spec(self, world: AnalyticWorld) -> MlpSpec:
        return MlpSpec(dim=world.dim, condition_count=len(world.conditions), **self.network)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class SamplerParams:
    method: str = "ddim"
    steps: int = 50
    eta: float = 0.0
    seed: int = 0
    n_samples: int = 10000

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.steps, self.method, self.eta, self.seed)


@dataclass(frozen=True)
class GuidanceParams:
    mode: str = "addition"
    src: str = "c1"
    tgt: str = "c2"
    w1: float = 1.0
    w2: float = 0.25
    scheduler: str = "cosine"
    cfg_scale: float = 7.5
    rule: str = "projection"

    def guidance_config(self) -> GuidanceConfig:
        return GuidanceConfig(self.mode, self.w1, self.w2, self.scheduler, self.cfg_scale, self.rule)


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    values: tuple


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "gtf_out"
    grid_bound: float = 6.0
    grid_resolution: int = 64
    n_projections: int = 64
    write_samples: bool = True

    def grid_spec(self) -> GridSpec:
        b = self.grid_bound
        return GridSpec(-b, b, -b, b, self.grid_resolution)


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = WorldConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    sampler: SamplerParams = SamplerParams()
    guidance: GuidanceParams = GuidanceParams()
    sweep: SweepConfig | None = None
    output: OutputConfig = OutputConfig()

    def to_dict(self):
        def block(obj):
            return {f.name: getattr(obj, f.name) for f in fields(obj)}

        sweep = None if self.sweep is None else {"axis": self.sweep.axis, "values": list(self.sweep.values)}
        return {
            "world": block(self.world),
            "schedule": block(self.schedule),
            "sampler": block(self.sampler),
            "guidance": block(self.guidance),
            "sweep": sweep,
            "output": block(self.output),
        }

    def with_overrides(self, seed=None, out=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, sampler=replace(cfg.sampler, seed=int(seed)))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
        return cfg

    def sweep_points(self):
        """``[(axis, value, guidance_params)]``; a single point when not sweeping."""
        if self.sweep is None:
            return [(None, None, self.guidance)]
        return [(self.sweep.axis, v, apply_axis(self.guidance, self.sweep.axis, v))
                for v in self.sweep.values]


def apply_axis(g: GuidanceParams, axis: str, value) -> GuidanceParams:
    if axis == "w1":
        return replace(g, w1=float(value))
    if axis == "w2":
        return replace(g, w2=float(value))
    if axis == "cfg":
        return replace(g, cfg_scale=float(value))
    return replace(g, scheduler=str(value))


def expand_sweep_values(axis: str, values):
    values = list(values)
    if axis == "scheduler" and values == ["all"]:
        return list(SCHEDULER_NAMES)
    return values


# ------------------------------------------------------------- validation


def _block(doc, name, cls, key_prefix=None):
    raw = doc.get(name)
    prefix = key_prefix or name
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ValidationError(prefix, "must be an object")
    known = {f.name: f for f in fields(cls)}
    for k in raw:
        if k not in known:
            raise ValidationError(f"{prefix}.{k}" if key_prefix else k, "unknown key")
    return raw


def _num(block, key, kind=float):
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(key, f"expected a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ValidationError(key, f"expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _coerce(raw: dict, cls, ints=(), floats=(), strs=(), bools=()):
    kw = {}
    optional = {f.name for f in fields(cls) if f.default is None}
    for k in raw:
        if raw[k] is None and k in optional:
            kw[k] = None
        elif k in ints:
            kw[k] = _num(raw, k, int)
        elif k in floats:
            kw[k] = _num(raw, k, float)
        elif k in strs:
            if not isinstance(raw[k], str):
                raise ValidationError(k, f"expected a string, got {raw[k]!r}")
            kw[k] = raw[k]
        elif k in bools:
            if not isinstance(raw[k], bool):
                raise ValidationError(k, f"expected true/false, got {raw[k]!r}")
            kw[k] = raw[k]
        else:
            kw[k] = raw[k]
    return cls(**kw)


def _check_enum(key, value, allowed):
    if value not in allowed:
        raise ValidationError(key, f"{value!r} not one of {', '.join(allowed)}")


def _guard(key, fn):
    try:
        return fn()
    except ValidationError:
        raise
    except (GTFError, ValueError, TypeError, KeyError) as exc:
        raise ValidationError(key, str(exc)) from None


def parse_config(doc) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ValidationError("<root>", "config must be a single JSON object")
    for k in doc:
        if k not in TOP_KEYS:
            raise ValidationError(k, "unknown top-level key")

    raw = _block(doc, "world", WorldConfig)
    world = raw if isinstance(raw, WorldConfig) else _coerce(
        raw, WorldConfig, strs=("kind", "checkpoint"))
    _check_enum("kind", world.kind, ("analytic", "learned"))
    if world.preset is not None and world.analytic is None:
        _check_enum("preset", world.preset, ("demo",))
    data_world = _guard("analytic", world.data_world)
    if world.kind == "learned":
        if not world.checkpoint:
            raise ValidationError("checkpoint", "learned worlds need a checkpoint path")
        _guard("network", lambda: world.mlp_spec(data_world))
        _guard("train", world.train_config)

    raw = _block(doc, "schedule", ScheduleConfig)
    schedule = raw if isinstance(raw, ScheduleConfig) else _coerce(
        raw, ScheduleConfig, ints=("T",), floats=("beta_start", "beta_end"))
    if schedule.T < 2:
        raise ValidationError("T", "must be >= 2")
    if not 0 < schedule.beta_start <= schedule.beta_end < 1:
        raise ValidationError("beta_start", "need 0 < beta_start <= beta_end < 1")

    raw = _block(doc, "sampler", SamplerParams)
    sampler = raw if isinstance(raw, SamplerParams) else _coerce(
        raw, SamplerParams, ints=("steps", "seed", "n_samples"), floats=("eta",), strs=("method",))
    _check_enum("method", sampler.method, tuple(m.value for m in SamplerMethod))
    if not 1 <= sampler.steps <= schedule.T:
        raise ValidationError("steps", f"must be in [1, {schedule.T}]")
    if sampler.n_samples < 1:
        raise ValidationError("n_samples", "must be >= 1")
    _guard("seed", sampler.sampler_config)

    raw = _block(doc, "guidance", GuidanceParams)
    guidance = raw if isinstance(raw, GuidanceParams) else _coerce(
        raw, GuidanceParams, floats=("w1", "w2", "cfg_scale"),
        strs=("mode", "src", "tgt", "scheduler", "rule"))
    _check_enum("mode", guidance.mode, tuple(m.value for m in ManipulationMode))
    _check_enum("scheduler", guidance.scheduler, SCHEDULER_NAMES)
    _check_enum("rule", guidance.rule, tuple(r.value for r in GuidanceRule))
    for key in ("src", "tgt"):
        if getattr(guidance, key) not in data_world.conditionals:
            raise ValidationError(key, f"condition {getattr(guidance, key)!r} not in world")
    _guard("w2", guidance.guidance_config)

    sweep = None
    raw_sweep = doc.get("sweep")
    if raw_sweep is not None:
        if not isinstance(raw_sweep, dict):
            raise ValidationError("sweep", "must be an object")
        for k in raw_sweep:
            if k not in ("axis", "values"):
                raise ValidationError(k, "unknown key")
        axis = raw_sweep.get("axis")
        _check_enum("axis", axis, SWEEP_AXES)
        values = raw_sweep.get("values")
        if not isinstance(values, list) or not values:
            raise ValidationError("values", "must be a non-empty list")
        values = expand_sweep_values(axis, values)
        for v in values:
            if axis == "scheduler":
                _check_enum("scheduler", v, SCHEDULER_NAMES)
            elif isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError("values", f"expected numbers for axis {axis}, got {v!r}")
            _guard(axis, apply_axis(guidance, axis, v).guidance_config)
        sweep = SweepConfig(axis, tuple(values))

    raw = _block(doc, "output", OutputConfig)
    output = raw if isinstance(raw, OutputConfig) else _coerce(
        raw, OutputConfig, ints=("grid_resolution", "n_projections"), floats=("grid_bound",),
        strs=("dir",), bools=("write_samples",))
    _guard("grid_resolution", output.grid_spec)
    if output.n_projections < 1:
        raise ValidationError("n_projections", "must be >= 1")

    return ExperimentConfig(world, schedule, sampler, guidance, sweep, output)


def loads_config(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return parse_config(doc)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read())
