"""Scenario configuration files (YAML) and the offline setup they imply."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .geometry import Hyperbox
from .model import QuadrotorParams, build_model, noise_box, wind_disturbance_box
from .synthesis import SynthesisArtifacts, synthesize, validate_artifacts


class ConfigError(ValueError):
    """Invalid scenario file; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _number(value, path: str) -> float:
    """Float, also accepting simple ratios such as ``"1/0.028"``."""
    if isinstance(value, bool):
        raise ConfigError(path, "expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        parts = value.split("/")
        try:
            nums = [float(s) for s in parts]
        except ValueError:
            raise ConfigError(path, f"cannot parse number {value!r}") from None
        if len(nums) == 1:
            return nums[0]
        if len(nums) == 2 and nums[1] != 0:
            return nums[0] / nums[1]
    raise ConfigError(path, f"expected a number, got {value!r}")


def _numbers(value, path: str, length: int | None = None) -> list:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(path, "expected a list")
    out = [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if length is not None and len(out) != length:
        raise ConfigError(path, f"expected {length} entries, got {len(out)}")
    return out


@dataclass
class DisturbanceConfig:
    wind_speed: float = 2.0
    drag: float = 9.57e-4
    profile: str = "uniform-random"
    fraction: float = 1.0
    direction: list | None = None


@dataclass
class NoiseConfig:
    enabled: bool = False
    pos: float = 1e-3
    vel: float = 1e-2
    angle: float = 0.0
    dilation: bool = True


@dataclass
class FailureConfig:
    t_fail: int | None = 20
    gamma_after: float = 0.7


@dataclass
class ScenarioConfig:
    name: str
    model: str
    theta_star: float
    theta0: list
    Q: list
    R: list
    steps: int = 100
    seed: int = 0
    horizon: int = 10
    lam: float = 0.9
    max_rows: int = 200
    mode: str = "adaptive"
    ss_update: bool = True
    robustify_ss: bool = False
    theta_assumed: float | None = None
    mu: float | None = None
    estimator_method: str = "auto"
    params: dict = field(default_factory=dict)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    failure: FailureConfig | None = None
    failure_dilation: dict | None = None
    reference: list = field(default_factory=lambda: [{"step": 0, "position": [0.0]}])
    initial_position: list | None = None
    on_infeasible: str = "fallback"
    on_falsified: str = "abort"

    def __post_init__(self):
        self.validate()

    # -- validation -------------------------------------------------------------------
    def validate(self) -> None:
        if self.model not in ("altitude-2", "direct-12"):
            raise ConfigError("model", "must be 'altitude-2' or 'direct-12'")
        n, m = (2, 1) if self.model == "altitude-2" else (12, 4)
        n_pos = 1 if self.model == "altitude-2" else 3
        lo, hi = self.theta0
        if not 0 < lo < hi:
            raise ConfigError("theta0", "bounds must satisfy 0 < lower < upper")
        if not lo <= self.theta_star <= hi:
            raise ConfigError("theta_star", "true parameter must lie inside theta0")
        if len(self.Q) != n:
            raise ConfigError("cost.Q", f"expected {n} diagonal entries")
        if len(self.R) != m:
            raise ConfigError("cost.R", f"expected {m} diagonal entries")
        if min(self.Q) < 0 or min(self.R) <= 0:
            raise ConfigError("cost", "Q must be non-negative and R positive")
        if self.steps < 1:
            raise ConfigError("steps", "run length must be at least 1")
        if self.horizon < 1:
            raise ConfigError("horizon", "must be at least 1")
        if not 0 < self.lam < 1:
            raise ConfigError("lambda", "contraction rate must lie in (0, 1)")
        if self.mode not in ("adaptive", "robust-baseline"):
            raise ConfigError("mode", "must be 'adaptive' or 'robust-baseline'")
        if self.estimator_method not in ("auto", "lp"):
            raise ConfigError("estimator.method", "must be 'auto' or 'lp'")
        if self.on_infeasible not in ("fallback", "abort"):
            raise ConfigError("on_infeasible", "must be 'fallback' or 'abort'")
        if self.on_falsified not in ("abort", "skip"):
            raise ConfigError("on_falsified", "must be 'abort' or 'skip'")
        if self.theta_assumed is not None and self.theta_assumed <= 0:
            raise ConfigError("theta_assumed", "must be positive")
        if self.mu is not None and self.mu <= 0:
            raise ConfigError("estimator.mu", "must be positive")
        d = self.disturbance
        if d.profile not in ("constant-wind", "uniform-random", "off"):
            raise ConfigError("disturbance.profile", "unknown profile")
        if not 0 <= d.fraction <= 1:
            raise ConfigError("disturbance.fraction", "must lie in [0, 1]")
        if d.direction is not None and len(d.direction) != n:
            raise ConfigError("disturbance.direction", f"expected {n} entries")
        if self.failure is not None:
            if not 0.7 <= self.failure.gamma_after <= 1.0:
                raise ConfigError("failure.gamma_after", "must lie in [0.7, 1]")
            if self.failure.t_fail is not None and self.failure.t_fail < 0:
                raise ConfigError("failure.t_fail", "must be non-negative")
        if self.failure_dilation is not None:
            fd = self.failure_dilation
            if not 0 < fd["factor"] <= 1:
                raise ConfigError("failure_dilation.factor", "must lie in (0, 1]")
            if fd["variant"] not in ("max", "min"):
                raise ConfigError("failure_dilation.variant", "must be 'max' or 'min'")
        if not self.reference:
            raise ConfigError("reference", "at least one entry required")
        last = -1
        for i, r in enumerate(self.reference):
            if r["step"] <= last:
                raise ConfigError(f"reference[{i}].step", "steps must be strictly increasing")
            last = r["step"]
            if len(r["position"]) != n_pos:
                raise ConfigError(f"reference[{i}].position", f"expected {n_pos} entries")
        if self.reference[0]["step"] != 0:
            raise ConfigError("reference[0].step", "schedule must start at step 0")
        if self.initial_position is not None and len(self.initial_position) != n_pos:
            raise ConfigError("initial_position", f"expected {n_pos} entries")

    # -- helpers ----------------------------------------------------------------------
    def reference_at(self, k: int) -> np.ndarray:
        pos = self.reference[0]["position"]
        for r in self.reference:
            if r["step"] <= k:
                pos = r["position"]
        return np.asarray(pos, dtype=float)

    def quadrotor_params(self) -> QuadrotorParams:
        kw = dict(self.params)
        if "inertia" in kw:
            kw["inertia"] = tuple(kw["inertia"])
        return QuadrotorParams(**kw)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "model": self.model,
            "theta_star": self.theta_star,
            "theta0": list(self.theta0),
            "cost": {"Q": list(self.Q), "R": list(self.R)},
            "horizon": self.horizon,
            "lambda": self.lam,
            "max_rows": self.max_rows,
            "mode": self.mode,
            "ss_update": self.ss_update,
            "robustify_ss": self.robustify_ss,
            "theta_assumed": self.theta_assumed,
            "estimator": {"mu": self.mu, "method": self.estimator_method},
            "params": dict(self.params),
            "disturbance": asdict(self.disturbance),
            "noise": asdict(self.noise),
            "failure": None if self.failure is None else asdict(self.failure),
            "failure_dilation": None if self.failure_dilation is None else dict(self.failure_dilation),
            "reference": [dict(r) for r in self.reference],
            "initial_position": self.initial_position,
            "steps": self.steps,
            "seed": self.seed,
            "on_infeasible": self.on_infeasible,
            "on_falsified": self.on_falsified,
        }
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def content_hash(self) -> str:
        return _hash(self.to_dict())

    def synthesis_key(self) -> dict:
        """The fields the offline artifacts depend on."""
        d = self.to_dict()
        key = {k: d[k] for k in ("model", "theta0", "cost", "horizon", "lambda", "max_rows", "params")}
        key["wind"] = [self.disturbance.wind_speed, self.disturbance.drag]
        key["robustify_ss"] = self.robustify_ss
        if self.robustify_ss:
            key["theta_applied"] = self.applied_theta()
        return key

    def synthesis_hash(self) -> str:
        return _hash(self.synthesis_key())

    def applied_theta(self) -> float:
        """Parameter whose hover input is applied when the steady state is not re-centred."""
        if self.mode == "robust-baseline":
            return self.assumed_theta()
        return 0.5 * (self.theta0[0] + self.theta0[1])

    def assumed_theta(self) -> float:
        # the baseline assumes the heaviest admissible vehicle unless told otherwise
        return self.theta0[0] if self.theta_assumed is None else self.theta_assumed


def _hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_TOP_KEYS = {
    "name", "model", "theta_star", "theta0", "cost", "horizon", "lambda", "max_rows", "mode",
    "ss_update", "robustify_ss", "theta_assumed", "estimator", "params", "disturbance", "noise",
    "failure", "failure_dilation", "reference", "initial_position", "steps", "seed",
    "on_infeasible", "on_falsified",
}


def _section(d, path: str, cls):
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    return d


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(path, "expected true or false")
    return v


def _int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, "expected an integer")
    return v


def from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("", "top level must be a mapping")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    for key in ("name", "model", "theta_star", "theta0", "cost"):
        if key not in d:
            raise ConfigError(key, "missing required field")
    cost = d["cost"]
    if not isinstance(cost, dict) or "Q" not in cost or "R" not in cost:
        raise ConfigError("cost", "needs Q and R diagonals")

    dist = _section(d.get("disturbance") or {}, "disturbance", DisturbanceConfig)
    disturbance = DisturbanceConfig(
        wind_speed=_number(dist.get("wind_speed", 2.0), "disturbance.wind_speed"),
        drag=_number(dist.get("drag", 9.57e-4), "disturbance.drag"),
        profile=str(dist.get("profile", "uniform-random")),
        fraction=_number(dist.get("fraction", 1.0), "disturbance.fraction"),
        direction=None if dist.get("direction") is None
        else _numbers(dist["direction"], "disturbance.direction"),
    )
    nz = _section(d.get("noise") or {}, "noise", NoiseConfig)
    noise = NoiseConfig(
        enabled=_bool(nz.get("enabled", False), "noise.enabled"),
        pos=_number(nz.get("pos", 1e-3), "noise.pos"),
        vel=_number(nz.get("vel", 1e-2), "noise.vel"),
        angle=_number(nz.get("angle", 0.0), "noise.angle"),
        dilation=_bool(nz.get("dilation", True), "noise.dilation"),
    )
    failure = None
    if d.get("failure") is not None:
        fl = _section(d["failure"], "failure", FailureConfig)
        t_fail = fl.get("t_fail", 20)
        failure = FailureConfig(
            t_fail=None if t_fail is None else _int(t_fail, "failure.t_fail"),
            gamma_after=_number(fl.get("gamma_after", 0.7), "failure.gamma_after"),
        )
    fdil = None
    if d.get("failure_dilation") is not None:
        fd = d["failure_dilation"]
        if not isinstance(fd, dict) or set(fd) - {"factor", "floor", "variant"}:
            raise ConfigError("failure_dilation", "expected keys factor, floor, variant")
        fdil = {
            "factor": _number(fd.get("factor", 0.7), "failure_dilation.factor"),
            "floor": None if fd.get("floor") is None else _number(fd["floor"], "failure_dilation.floor"),
            "variant": str(fd.get("variant", "max")),
        }
    refs = d.get("reference", [{"step": 0, "position": [0.0]}])
    if not isinstance(refs, list):
        raise ConfigError("reference", "expected a list of {step, position} entries")
    reference = []
    for i, r in enumerate(refs):
        if not isinstance(r, dict) or set(r) != {"step", "position"}:
            raise ConfigError(f"reference[{i}]", "expected keys step and position")
        reference.append({"step": _int(r["step"], f"reference[{i}].step"),
                          "position": _numbers(r["position"], f"reference[{i}].position")})
    est = d.get("estimator") or {}
    if not isinstance(est, dict) or set(est) - {"mu", "method"}:
        raise ConfigError("estimator", "expected keys mu, method")
    params = d.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params", "expected a mapping")
    known = {f.name for f in fields(QuadrotorParams)}
    for k, v in params.items():
        if k not in known:
            raise ConfigError(f"params.{k}", "unknown airframe parameter")
    params = {k: (_numbers(v, f"params.{k}") if isinstance(v, list) else _number(v, f"params.{k}"))
              for k, v in params.items()}
    theta_assumed = d.get("theta_assumed")
    mu = est.get("mu")
    init = d.get("initial_position")
    return ScenarioConfig(
        name=str(d["name"]),
        model=str(d["model"]),
        theta_star=_number(d["theta_star"], "theta_star"),
        theta0=_numbers(d["theta0"], "theta0", 2),
        Q=_numbers(cost["Q"], "cost.Q"),
        R=_numbers(cost["R"], "cost.R"),
        steps=_int(d.get("steps", 100), "steps"),
        seed=_int(d.get("seed", 0), "seed"),
        horizon=_int(d.get("horizon", 10), "horizon"),
        lam=_number(d.get("lambda", 0.9), "lambda"),
        max_rows=_int(d.get("max_rows", 200), "max_rows"),
        mode=str(d.get("mode", "adaptive")),
        ss_update=_bool(d.get("ss_update", True), "ss_update"),
        robustify_ss=_bool(d.get("robustify_ss", False), "robustify_ss"),
        theta_assumed=None if theta_assumed is None else _number(theta_assumed, "theta_assumed"),
        mu=None if mu is None else _number(mu, "estimator.mu"),
        estimator_method=str(est.get("method", "auto")),
        params=params,
        disturbance=disturbance,
        noise=noise,
        failure=failure,
        failure_dilation=fdil,
        reference=reference,
        initial_position=None if init is None else _numbers(init, "initial_position"),
        on_infeasible=str(d.get("on_infeasible", "fallback")),
        on_falsified=str(d.get("on_falsified", "abort")),
    )


def loads(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(where, f"YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    return from_dict(data)


def load(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    return loads(text)


def bundled_scenarios() -> dict:
    """Name -> path of the scenario files shipped with the package."""
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}


def load_bundled(name: str) -> ScenarioConfig:
    paths = bundled_scenarios()
    if name not in paths:
        raise ConfigError("", f"no bundled scenario {name!r}; have {sorted(paths)}")
    return load(paths[name])


@dataclass
class Setup:
    model: object
    artifacts: SynthesisArtifacts
    W: object
    M: object


def build_sets(cfg: ScenarioConfig):
    theta0 = cfg.theta0
    model = build_model(cfg.model, cfg.quadrotor_params(), theta0)
    W = wind_disturbance_box(model, cfg.disturbance.wind_speed, cfg.disturbance.drag)
    M = noise_box(model, cfg.noise.pos, cfg.noise.vel, cfg.noise.angle)
    return model, W, M


def synthesize_for(cfg: ScenarioConfig, model=None, W=None) -> SynthesisArtifacts:
    """Offline design for ``cfg``, validated; raises ``ArtifactValidationError`` on failure."""
    if model is None or W is None:
        model, W, _ = build_sets(cfg)
    theta0 = Hyperbox([cfg.theta0[0]], [cfg.theta0[1]])
    u_ss_fn = model.hover_input if cfg.robustify_ss else None
    art = synthesize(model.system, model.constraints, theta0, W, np.diag(cfg.Q), np.diag(cfg.R),
                     N=cfg.horizon, lam=cfg.lam, max_rows=cfg.max_rows, u_ss_fn=u_ss_fn,
                     theta_applied=[cfg.applied_theta()] if cfg.robustify_ss else None)
    art.config_hash = cfg.synthesis_hash()
    validate_artifacts(art, model.system, W)
    return art


def load_artifacts(path, cfg: ScenarioConfig) -> SynthesisArtifacts | None:
    """Cached artifacts at ``path`` if they exist and match ``cfg``."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        art = SynthesisArtifacts.from_json(json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, KeyError, TypeError):
        return None
    return art if art.config_hash == cfg.synthesis_hash() else None


def prepare(cfg: ScenarioConfig, artifacts=None, model=None) -> Setup:
    built, W, M = build_sets(cfg)
    model = built if model is None else model
    if artifacts is None:
        artifacts = synthesize_for(cfg, model, W)
    return Setup(model=model, artifacts=artifacts, W=W, M=M)
