"""Experiment configuration: dataclasses, JSON round-trip, validation and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import GaussianMixture
from .errors import ConfigError, DomainError
from .fixtures import FIXTURES
from .schedule import NoiseSchedule
from .score_models import ExactScore, MismatchedScore, PerturbedScore

EXPERIMENTS = (
    "hp-sample",
    "track-likelihood",
    "bias-bounds",
    "mode-curve",
    "tradeoff",
    "hp-vs-samples",
    "nonsmooth-demo",
    "beta-invariance",
)


@dataclass
class ScheduleConfig:
    lambda_max: float = 10.0
    lambda_min: float = -10.0
    horizon: float = 1.0


@dataclass
class FamilyConfig:
    """A named fixture, or explicit arrays when ``fixture`` is null."""

    fixture: str | None = "fix-b"
    weights: list | None = None
    means: list | None = None
    variances: list | None = None
    dim: int | None = None
    renormalize: bool = False


@dataclass
class ScoreModelConfig:
    kind: str = "exact"  # exact | mismatched | perturbed
    eps: float = 0.1
    bias: list | None = None  # defaults to all ones
    mismatch: FamilyConfig | None = None


@dataclass
class ExperimentConfig:
    experiment: str = "track-likelihood"
    seed: int = 0
    n_steps: int = 1024
    n_paths: int = 256
    scheme: str = "milstein"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    family: FamilyConfig = field(default_factory=FamilyConfig)
    score_model: ScoreModelConfig = field(default_factory=ScoreModelConfig)
    thresholds: list = field(default_factory=lambda: [-4.0, 0.0, 4.0])  # log-SNR values
    base_sampler: str = "sde"  # sde | ode
    n_anchors: int = 16
    K: int = 512
    elbo_samples: int = 256
    beta: float = 2.0
    anchor_x: list = field(default_factory=lambda: [-2.5])
    anchor_lambda: float = -8.0
    lambda_end: float = 1.2
    grid_bounds: list = field(default_factory=lambda: [-4.0, 3.5])
    grid_points: int = 4000
    jump_scan: list = field(default_factory=lambda: [1.0, 1.6, 0.001])  # start, stop, step
    jump_threshold: float = 0.5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


_DEFAULTS = {
    "track-likelihood": dict(family=FamilyConfig("stationary")),
    "bias-bounds": dict(n_paths=512, score_model=ScoreModelConfig("perturbed", 0.1)),
    "mode-curve": dict(family=FamilyConfig("fix-c"), n_steps=256),
    "nonsmooth-demo": dict(family=FamilyConfig("fix-c")),
    "tradeoff": dict(family=FamilyConfig("four-blobs"), grid_bounds=[-6.0, 6.0], grid_points=256),
    "hp-sample": dict(family=FamilyConfig("four-blobs"), n_paths=64),
    "hp-vs-samples": dict(thresholds=[-2.0, 0.0, 2.0]),
    "beta-invariance": dict(n_paths=10_000),
}


def default_config(experiment: str) -> ExperimentConfig:
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    return ExperimentConfig(experiment=experiment, **_DEFAULTS.get(experiment, {}))


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "config", "expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown key")
    kwargs = {}
    for key, value in data.items():
        sub = {"schedule": ScheduleConfig, "family": FamilyConfig, "score_model": ScoreModelConfig, "mismatch": FamilyConfig}
        if key in sub and value is not None:
            kwargs[key] = sub[key](**_build(sub[key], value, f"{prefix}{key}."))
        else:
            kwargs[key] = value
    return kwargs


def config_from_dict(data: dict) -> ExperimentConfig:
    experiment = data.get("experiment", "track-likelihood") if isinstance(data, dict) else None
    base = default_config(experiment).to_dict()
    merged = _merge(base, data)
    cfg = ExperimentConfig(**_build(ExperimentConfig, merged, ""))
    validate(cfg)
    return cfg


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return config_from_dict(data)


def _positive_int(cfg, name, cap=None):
    v = getattr(cfg, name)
    if isinstance(v, bool) or not isinstance(v, int) or v < 1 or (cap is not None and v > cap):
        raise ConfigError(name, f"must be an integer in [1, {cap or 'inf'}]")


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    for name in ("n_steps", "n_paths", "K", "elbo_samples", "n_anchors", "grid_points"):
        _positive_int(cfg, name, 10_000_000)
    if cfg.scheme not in ("euler-maruyama", "milstein"):
        raise ConfigError("scheme", "must be 'euler-maruyama' or 'milstein'")
    if cfg.base_sampler not in ("sde", "ode"):
        raise ConfigError("base_sampler", "must be 'sde' or 'ode'")
    if not (isinstance(cfg.beta, (int, float)) and cfg.beta >= 0):
        raise ConfigError("beta", "must be a non-negative number")
    sched = build_schedule(cfg)
    for lam in cfg.thresholds:
        if not sched.lambda_min <= float(lam) <= sched.lambda_max:
            raise ConfigError("thresholds", f"log-SNR {lam} outside [{sched.lambda_min}, {sched.lambda_max}]")
    build_model(cfg)
    if cfg.score_model.kind != "exact" and cfg.experiment not in ("bias-bounds", "track-likelihood"):
        raise ConfigError("score_model.kind", f"{cfg.experiment} needs the exact score")
    if len(cfg.grid_bounds) != 2 or not cfg.grid_bounds[1] > cfg.grid_bounds[0]:
        raise ConfigError("grid_bounds", "must be [lo, hi] with hi > lo")
    if len(cfg.jump_scan) != 3 or not cfg.jump_scan[2] > 0 or not cfg.jump_scan[1] > cfg.jump_scan[0]:
        raise ConfigError("jump_scan", "must be [start, stop, step] with stop > start and step > 0")
    if not sched.lambda_min <= cfg.anchor_lambda <= sched.lambda_max:
        raise ConfigError("anchor_lambda", "outside the schedule's log-SNR range")


def build_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    s = cfg.schedule
    try:
        return NoiseSchedule(float(s.lambda_max), float(s.lambda_min), float(s.horizon))
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError("schedule", str(exc)) from exc


def build_family(fc: FamilyConfig, sched: NoiseSchedule, where: str = "family") -> GaussianMixture:
    try:
        if fc.fixture is not None:
            if fc.fixture not in FIXTURES:
                raise ConfigError(f"{where}.fixture", f"unknown fixture; choose from {sorted(FIXTURES)}")
            return FIXTURES[fc.fixture](schedule=sched)
        if fc.weights is None or fc.means is None or fc.variances is None:
            raise ConfigError(where, "weights, means and variances are required without a fixture")
        means = np.asarray(fc.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if fc.dim is not None and means.shape[1] != fc.dim:
            raise ConfigError(f"{where}.dim", f"means have dimension {means.shape[1]}")
        make = GaussianMixture.renormalized if fc.renormalize else GaussianMixture
        return make(fc.weights, means, fc.variances, sched)
    except DomainError as exc:
        raise ConfigError(where, str(exc)) from exc


def build_model(cfg: ExperimentConfig):
    sched = build_schedule(cfg)
    fam = build_family(cfg.family, sched)
    sm = cfg.score_model
    if sm.kind == "exact":
        return ExactScore(fam)
    if sm.kind == "perturbed":
        bias = np.ones(fam.dim) if sm.bias is None else sm.bias
        try:
            return PerturbedScore(fam, bias, float(sm.eps))
        except DomainError as exc:
            raise ConfigError("score_model.bias", str(exc)) from exc
    if sm.kind == "mismatched":
        if sm.mismatch is None:
            raise ConfigError("score_model.mismatch", "a mismatched model needs its own family")
        q = build_family(sm.mismatch, sched, "score_model.mismatch")
        if q.dim != fam.dim:
            raise ConfigError("score_model.mismatch", "dimension differs from the data family")
        return MismatchedScore(q)
    raise ConfigError("score_model.kind", "must be 'exact', 'mismatched' or 'perturbed'")
