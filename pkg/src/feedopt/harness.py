"""Experiment orchestration: seeded instances, closed-loop runs, replicates, output.

Random streams
--------------
Every draw comes from a ``numpy`` PCG64 generator seeded by a
``SeedSequence(entropy, spawn_key=(purpose, index))``.  The instance (plant,
objective, box, perturbed sensitivities) uses ``entropy = seed``; replicate
``i`` uses ``entropy = seed + i`` for controller directions (one stream per
controller), disturbance redraws and Monte Carlo metrics.  Streams never
overlap, so results do not depend on execution order or thread count.
"""

from __future__ import annotations

import copy
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import convergence_metrics
from .controller import FIRST_ORDER_MODES, MODES, Controller, ControllerConfig
from .exceptions import CertificateError, ConfigurationError
from .objective import CompositeObjective, prox_grad_residual, reference_solution
from .plant import (BoxConstraint, LinearPlant, LyapunovCertificate, PlantDims, SaturatedPlant,
                    lyapunov_certificate, perturb_sensitivity, random_linear_plant)

__all__ = [
    "STREAM_INSTANCE",
    "STREAM_DIRECTIONS",
    "STREAM_DISTURBANCE",
    "STREAM_METRICS",
    "STREAM_SENSITIVITY",
    "make_rng",
    "BenchmarkInstance",
    "build_paper_instance",
    "ControllerSpec",
    "DisturbanceSchedule",
    "ExperimentConfig",
    "validate_config",
    "load_config",
    "TrajectoryLog",
    "ReplicateResult",
    "run_closed_loop",
    "run_tracking_experiment",
    "run_experiment",
    "aggregate_replicates",
    "write_columns",
    "write_outputs",
    "read_columns",
    "PRESETS",
    "preset_config",
]

STREAM_INSTANCE = 0
STREAM_DIRECTIONS = 1
STREAM_DISTURBANCE = 2
STREAM_METRICS = 3
STREAM_SENSITIVITY = 4


def make_rng(entropy: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(entropy, purpose, index)``."""
    ss = np.random.SeedSequence(int(entropy), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------- instance

@dataclass
class BenchmarkInstance:
    plant: LinearPlant
    objective: CompositeObjective
    certificate: LyapunovCertificate
    box: BoxConstraint
    reference: tuple
    reference_box: tuple

    def reference_for(self, constrained: bool):
        return self.reference_box if constrained else self.reference


def build_paper_instance(seed: int, dims: PlantDims = PlantDims(20, 10, 5, 5),
                         spectral_radius: float = 0.05, reg_weight: float = 1e-3) -> BenchmarkInstance:
    """Seeded linear plant, composite objective, certificate and references.

    Draw order on the instance stream: plant matrices and ``d``, then ``M3``,
    ``M2`` and finally the box bounds (``-lower`` and ``upper`` uniform on
    ``[0, 1]``), so the unconstrained and constrained scenarios share a plant.
    """
    rng = make_rng(seed, STREAM_INSTANCE)
    plant = random_linear_plant(dims, rng, spectral_radius)
    M3 = rng.random((dims.p, dims.p))
    M2 = rng.random(dims.p)
    lower = -rng.random(dims.p)
    upper = rng.random(dims.p)
    objective = CompositeObjective.from_generator(M3, M2, reg_weight)
    cert = lyapunov_certificate(plant)
    if not cert.mu < 1:
        raise CertificateError(f"certificate rate mu = {cert.mu:.6g} is not below 1")
    box = BoxConstraint(lower, upper)
    return BenchmarkInstance(plant=plant, objective=objective, certificate=cert, box=box,
                         reference=reference_solution(objective, plant),
                         reference_box=reference_solution(objective, plant, box))


# ----------------------------------------------------------------------- config

_CONTROLLER_KEYS = {"name", "mode", "eta", "delta", "sensitivity", "sensitivity_error",
                    "w0", "estimate_smooth_only", "saturate"}
_SCHEDULE_KEYS = {"period", "low", "high"}
_DIMS_KEYS = {"n", "p", "q", "r"}
_TOP_KEYS = {"name", "seed", "dims", "spectral_radius_target", "reg_weight", "constrained",
             "controllers", "horizon", "replicates", "disturbance_schedule",
             "checkpoint_interval", "checkpoint_samples", "settle_steps", "output_path"}


@dataclass
class ControllerSpec:
    """One controller of an experiment.

    ``sensitivity`` is ``"exact"`` or ``"perturbed"`` (entries scaled by
    ``1 + U(-sensitivity_error, sensitivity_error)``); it is ignored by
    model-free modes.  ``w0`` is ``"zero"``, ``"midpoint"`` or a list.
    ``saturate`` clamps applied inputs into the box on the plant side.
    """

    name: str
    mode: str
    eta: float
    delta: float = 0.0
    sensitivity: str = "exact"
    sensitivity_error: float = 0.0
    w0: object = "zero"
    estimate_smooth_only: bool = True
    saturate: bool = False


@dataclass
class DisturbanceSchedule:
    period: int
    low: float
    high: float


@dataclass
class ExperimentConfig:
    seed: int
    controllers: list
    horizon: int
    replicates: int = 1
    name: str = "custom"
    dims: PlantDims = field(default_factory=lambda: PlantDims(20, 10, 5, 5))
    spectral_radius_target: float = 0.05
    reg_weight: float = 1e-3
    constrained: bool = False
    disturbance_schedule: Optional[DisturbanceSchedule] = None
    checkpoint_interval: int = 100
    checkpoint_samples: int = 10_000
    settle_steps: int = 1
    output_path: str = "out"

    def to_dict(self) -> dict:
        out = {
            "name": self.name, "seed": self.seed, "horizon": self.horizon,
            "replicates": self.replicates,
            "dims": {"n": self.dims.n, "p": self.dims.p, "q": self.dims.q, "r": self.dims.r},
            "spectral_radius_target": self.spectral_radius_target, "reg_weight": self.reg_weight,
            "constrained": self.constrained,
            "controllers": [dict(vars(c)) for c in self.controllers],
            "checkpoint_interval": self.checkpoint_interval,
            "checkpoint_samples": self.checkpoint_samples,
            "settle_steps": self.settle_steps, "output_path": self.output_path,
        }
        if self.disturbance_schedule is not None:
            out["disturbance_schedule"] = dict(vars(self.disturbance_schedule))
        return out


def _fail(path, msg):
    raise ConfigurationError(f"{path}: {msg}")


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        _fail(path, f"unknown key(s) {', '.join(unknown)}")


def _int(obj, key, path, minimum, default=None):
    if key not in obj:
        if default is None:
            _fail(f"{path}.{key}", "missing required field")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, int):
        _fail(f"{path}.{key}", "expected an integer")
    if val < minimum:
        _fail(f"{path}.{key}", f"must be >= {minimum}")
    return val


def _num(obj, key, path, default=None, positive=False, nonneg=False):
    if key not in obj:
        if default is None:
            _fail(f"{path}.{key}", "missing required field")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        _fail(f"{path}.{key}", "expected a finite number")
    if positive and not val > 0:
        _fail(f"{path}.{key}", "must be positive")
    if nonneg and val < 0:
        _fail(f"{path}.{key}", "must be nonnegative")
    return float(val)


def _bool(obj, key, path, default):
    val = obj.get(key, default)
    if not isinstance(val, bool):
        _fail(f"{path}.{key}", "expected true or false")
    return val


def _controller(obj, path, p, constrained) -> ControllerSpec:
    _check_keys(obj, _CONTROLLER_KEYS, path)
    name = obj.get("name")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\ "):
        _fail(f"{path}.name", "expected a non-empty name without spaces or slashes")
    mode = obj.get("mode")
    if mode not in MODES:
        _fail(f"{path}.mode", f"expected one of {', '.join(MODES)}")
    spec = ControllerSpec(name=name, mode=mode,
                          eta=_num(obj, "eta", path, positive=True),
                          delta=_num(obj, "delta", path, default=0.0, nonneg=True),
                          sensitivity=obj.get("sensitivity", "exact"),
                          sensitivity_error=_num(obj, "sensitivity_error", path, default=0.0, nonneg=True),
                          w0=obj.get("w0", "midpoint" if constrained else "zero"),
                          estimate_smooth_only=_bool(obj, "estimate_smooth_only", path, True),
                          saturate=_bool(obj, "saturate", path, False))
    if spec.sensitivity not in ("exact", "perturbed"):
        _fail(f"{path}.sensitivity", "expected 'exact' or 'perturbed'")
    if mode not in FIRST_ORDER_MODES and not spec.delta > 0:
        _fail(f"{path}.delta", "model-free modes need a positive delta")
    if isinstance(spec.w0, str):
        if spec.w0 not in ("zero", "midpoint"):
            _fail(f"{path}.w0", "expected 'zero', 'midpoint' or a list of numbers")
        if spec.w0 == "midpoint" and not constrained:
            _fail(f"{path}.w0", "'midpoint' needs a constrained experiment")
    elif not (isinstance(spec.w0, list) and len(spec.w0) == p
              and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in spec.w0)):
        _fail(f"{path}.w0", f"expected a list of {p} numbers")
    needs_box = mode in ("frank-wolfe", "projected-descent", "first-order-projected") or spec.saturate
    if needs_box and not constrained:
        _fail(f"{path}.mode", f"{mode}{' with saturate' if spec.saturate else ''} needs constrained = true")
    if mode == "frank-wolfe" and not spec.eta < 1:
        _fail(f"{path}.eta", "frank-wolfe needs eta < 1")
    return spec


def validate_config(data: dict) -> ExperimentConfig:
    """Validate a parsed config document; every error names the offending field."""
    _check_keys(data, _TOP_KEYS, "config")
    seed = _int(data, "seed", "config", 0)
    if seed >= 2 ** 64:
        _fail("config.seed", "must fit in 64 bits")
    if "dims" in data:
        _check_keys(data["dims"], _DIMS_KEYS, "config.dims")
        dims = PlantDims(*(_int(data["dims"], k, "config.dims", 1) for k in ("n", "p", "q", "r")))
    else:
        dims = PlantDims(20, 10, 5, 5)
    constrained = _bool(data, "constrained", "config", False)
    ctrl = data.get("controllers")
    if not isinstance(ctrl, list) or not ctrl:
        _fail("config.controllers", "expected a non-empty list")
    controllers = [_controller(c, f"config.controllers[{i}]", dims.p, constrained) for i, c in enumerate(ctrl)]
    names = [c.name for c in controllers]
    if len(set(names)) != len(names):
        _fail("config.controllers", "controller names must be unique")
    schedule = None
    if data.get("disturbance_schedule") is not None:
        s = data["disturbance_schedule"]
        _check_keys(s, _SCHEDULE_KEYS, "config.disturbance_schedule")
        schedule = DisturbanceSchedule(period=_int(s, "period", "config.disturbance_schedule", 1),
                                       low=_num(s, "low", "config.disturbance_schedule"),
                                       high=_num(s, "high", "config.disturbance_schedule"))
        if not schedule.low < schedule.high:
            _fail("config.disturbance_schedule", "low must be below high")
    rad = _num(data, "spectral_radius_target", "config", default=0.05, positive=True)
    if not rad < 1:
        _fail("config.spectral_radius_target", "must be below 1 for a stable plant")
    out = data.get("output_path", "out")
    if not isinstance(out, str) or not out:
        _fail("config.output_path", "expected a non-empty path")
    name = data.get("name", "custom")
    if not isinstance(name, str) or not name:
        _fail("config.name", "expected a non-empty string")
    return ExperimentConfig(
        seed=seed, controllers=controllers,
        horizon=_int(data, "horizon", "config", 0),
        replicates=_int(data, "replicates", "config", 1, default=1),
        name=name, dims=dims, spectral_radius_target=rad,
        reg_weight=_num(data, "reg_weight", "config", default=1e-3, nonneg=True),
        constrained=constrained, disturbance_schedule=schedule,
        checkpoint_interval=_int(data, "checkpoint_interval", "config", 0, default=100),
        checkpoint_samples=_int(data, "checkpoint_samples", "config", 2, default=10_000),
        settle_steps=_int(data, "settle_steps", "config", 1, default=1),
        output_path=out)


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return validate_config(data)


# ---------------------------------------------------------------------- running

@dataclass
class TrajectoryLog:
    """Per-step record of one controller on one replicate.

    Row ``k`` describes controller iteration ``k``: state ``x`` before the
    input is applied, candidate ``w``, applied input ``u``, next state
    ``x_next``, measured output ``y`` at ``x_next`` and objective ``phi``,
    the norm of the gradient estimate formed from that measurement, and the
    disturbance ``d`` in force.  ``priming`` holds the bootstrap record.
    """

    w: np.ndarray
    u: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    phi_tilde_norm: np.ndarray
    x: np.ndarray
    x_next: np.ndarray
    d: np.ndarray
    priming: dict
    diverged_at: Optional[int] = None
    u_star: Optional[np.ndarray] = None
    phi_star: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return int(self.u.shape[0])

    @property
    def k(self) -> np.ndarray:
        return np.arange(self.length)


@dataclass
class ReplicateResult:
    controller: str
    replicate: int
    log: TrajectoryLog
    metrics: dict

    @property
    def diverged(self) -> bool:
        return self.log.diverged_at is not None


def _w0(spec: ControllerSpec, p: int, box: Optional[BoxConstraint]):
    if isinstance(spec.w0, str):
        return box.midpoint.copy() if spec.w0 == "midpoint" else np.zeros(p)
    return np.asarray(spec.w0, dtype=float)


def _sensitivity(spec: ControllerSpec, instance: BenchmarkInstance, index: int, seed: int):
    # drawn from the instance seed so every replicate sees the same model error
    if spec.mode not in FIRST_ORDER_MODES:
        return None
    H = instance.plant.sensitivity()
    if spec.sensitivity == "perturbed":
        H = perturb_sensitivity(H, spec.sensitivity_error, make_rng(seed, STREAM_SENSITIVITY, index))
    return H


def _controller_config(spec, instance, constrained, index, seed):
    box = instance.box if constrained else None
    return ControllerConfig(eta=spec.eta, delta=spec.delta, mode=spec.mode,
                            sensitivity_matrix=_sensitivity(spec, instance, index, seed),
                            constraint=box if spec.mode in ("frank-wolfe", "projected-descent",
                                                            "first-order-projected") else None,
                            estimate_smooth_only=spec.estimate_smooth_only)


def run_closed_loop(instance: BenchmarkInstance, spec: ControllerSpec, horizon: int, replicate_seed: int,
                    controller_index: int = 0, constrained: bool = False, settle_steps: int = 1,
                    schedule: Optional[DisturbanceSchedule] = None, base_seed: Optional[int] = None,
                    x0=None) -> TrajectoryLog:
    """Prime and run one controller for ``horizon`` iterations on a private plant copy.

    Each iteration applies the queued input for ``settle_steps`` plant steps,
    measures, and lets the controller compute the next input.  With a
    ``schedule`` the disturbance is redrawn at ``k = 0, period, 2 period, ...``
    and the reference is recomputed for each segment while the controller keeps
    its state.  Non-finite values stop the run and set ``diverged_at``.
    """
    base_seed = replicate_seed if base_seed is None else base_seed
    plant = instance.plant.copy()
    box = instance.box if constrained else None
    if spec.saturate:
        plant = SaturatedPlant(plant, box)
    config = _controller_config(spec, instance, constrained, controller_index, base_seed)
    d_rng = make_rng(replicate_seed, STREAM_DISTURBANCE)
    u_ref, phi_ref = instance.reference_for(constrained)
    if schedule is not None:
        plant.set_disturbance(d_rng.uniform(schedule.low, schedule.high, plant.r))
        u_ref, phi_ref = reference_solution(instance.objective, _inner(plant), box)
    ctrl = Controller(config, instance.objective, _w0(spec, plant.p, box),
                      make_rng(replicate_seed, STREAM_DIRECTIONS, controller_index))
    pstate = plant.initial_state(x0)
    pstate = ctrl.prime(plant, pstate, settle_steps)
    priming = {"x": pstate.x.copy(), "u_next": ctrl.u.copy()}

    p, q, n, r = plant.p, plant.q, plant.n, plant.r
    W = np.empty((horizon, p))
    U = np.empty((horizon, p))
    Y = np.empty((horizon, q))
    X = np.empty((horizon, n))
    XN = np.empty((horizon, n))
    Dd = np.empty((horizon, r))
    PHI = np.empty(horizon)
    PTN = np.full(horizon, np.nan)
    US = np.empty((horizon, p))
    PS = np.empty(horizon)
    diverged = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            if schedule is not None and k > 0 and k % schedule.period == 0:
                plant.set_disturbance(d_rng.uniform(schedule.low, schedule.high, r))
                u_ref, phi_ref = reference_solution(instance.objective, _inner(plant), box)
            u = ctrl.u
            W[k] = ctrl.w
            U[k] = u
            X[k] = pstate.x
            Dd[k] = plant.d
            US[k] = u_ref
            PS[k] = phi_ref
            for _ in range(settle_steps):
                pstate, y = plant.step(pstate, u)
            XN[k] = pstate.x
            Y[k] = y
            PHI[k] = instance.objective(u, y)
            ctrl.step(y)
            est = ctrl.state.last_estimate
            if config.model_free and est is not None:
                PTN[k] = np.linalg.norm(est.phi_tilde)
            if not (np.isfinite(PHI[k]) and np.all(np.isfinite(ctrl.u)) and np.all(np.isfinite(pstate.x))):
                diverged = k
                break
    end = horizon if diverged is None else diverged + 1
    return TrajectoryLog(w=W[:end], u=U[:end], y=Y[:end], phi=PHI[:end], phi_tilde_norm=PTN[:end],
                         x=X[:end], x_next=XN[:end], d=Dd[:end], priming=priming,
                         diverged_at=diverged, u_star=US[:end], phi_star=PS[:end])


def _inner(plant):
    return plant.plant if isinstance(plant, SaturatedPlant) else plant


def run_tracking_experiment(instance: BenchmarkInstance, spec: ControllerSpec, horizon: int,
                            replicate_seed: int, schedule: DisturbanceSchedule, **kwargs) -> TrajectoryLog:
    """Closed-loop run with piecewise-constant disturbances and piecewise references."""
    if schedule is None:
        raise ConfigurationError("tracking experiment needs a disturbance schedule")
    return run_closed_loop(instance, spec, horizon, replicate_seed, schedule=schedule, **kwargs)


def _run_one(config: ExperimentConfig, instance: BenchmarkInstance, j: int, i: int) -> ReplicateResult:
    spec = config.controllers[j]
    rep_seed = config.seed + i
    log = run_closed_loop(instance, spec, config.horizon, rep_seed, controller_index=j,
                          constrained=config.constrained, settle_steps=config.settle_steps,
                          schedule=config.disturbance_schedule, base_seed=config.seed)
    metrics = {}
    if log.length and log.diverged_at is None:
        box = instance.box if config.constrained else None
        model_free = spec.mode not in FIRST_ORDER_MODES
        distribution = "sphere" if spec.mode in ("frank-wolfe", "projected-descent") else "gaussian"
        metrics = convergence_metrics(
            log, instance.objective, instance.plant, instance.certificate,
            reference=(log.u_star, log.phi_star),
            checkpoint_interval=config.checkpoint_interval if model_free else 0,
            checkpoint_samples=config.checkpoint_samples,
            delta=spec.delta if model_free else None, distribution=distribution,
            box=box if spec.mode in ("frank-wolfe", "projected-descent") else None,
            rng=make_rng(rep_seed, STREAM_METRICS, j))
    elif log.length:
        # diverged runs still report the cheap series up to the failure
        with np.errstate(over="ignore", invalid="ignore"):
            measured = np.array([instance.objective(u, y) for u, y in zip(log.u, log.y)])
        metrics = {"measured_gap": measured - log.phi_star}
    return ReplicateResult(controller=spec.name, replicate=i, log=log, metrics=metrics)


def run_experiment(config: ExperimentConfig, threads: int = 1, instance: Optional[BenchmarkInstance] = None):
    """Run every controller on every replicate; returns ``{name: [ReplicateResult, ...]}``.

    ``threads > 1`` runs (controller, replicate) jobs concurrently; results are
    keyed by index, so output is independent of scheduling.
    """
    if threads < 1:
        raise ConfigurationError("threads must be at least 1")
    if instance is None:
        instance = build_paper_instance(config.seed, config.dims, config.spectral_radius_target,
                                        config.reg_weight)
    jobs = [(j, i) for j in range(len(config.controllers)) for i in range(config.replicates)]
    if threads == 1:
        done = [_run_one(config, instance, j, i) for j, i in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(lambda ji: _run_one(config, instance, *ji), jobs))
    out = {c.name: [None] * config.replicates for c in config.controllers}
    for res in done:
        out[res.controller][res.replicate] = res
    return out


def _series(result: ReplicateResult) -> dict:
    log = result.log
    cols = {"k": log.k.astype(float), "phi": log.phi, "phi_tilde_norm": log.phi_tilde_norm}
    cols.update(result.metrics)
    return cols


def aggregate_replicates(series_list) -> dict:
    """Pointwise mean, min and max of each named series across replicates.

    Each element maps names to equal-length arrays.  Returns
    ``{name: (mean, min, max)}``.  NaN entries (unevaluated checkpoints) stay
    NaN.
    """
    if not series_list:
        raise ConfigurationError("need at least one replicate")
    names = list(series_list[0])
    out = {}
    for name in names:
        try:
            stack = np.stack([np.asarray(s[name], dtype=float) for s in series_list])
        except KeyError:
            raise ConfigurationError(f"series {name!r} missing from a replicate") from None
        except ValueError:
            raise ConfigurationError(f"series {name!r} has ragged lengths across replicates") from None
        # sorting makes the mean independent of replicate order bit for bit; the clip
        # removes the last-ulp overshoot of averaging equal values
        with np.errstate(invalid="ignore"):
            lo, hi = stack.min(axis=0), stack.max(axis=0)
            out[name] = (np.clip(np.sort(stack, axis=0).mean(axis=0), lo, hi), lo, hi)
    return out


def write_columns(path: str, columns: dict) -> None:
    """Whitespace-free comma-separated columns; header row of names; NaN written empty."""
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=float) for n in names]
    length = arrays[0].size if arrays else 0
    if any(a.size != length for a in arrays):
        raise ConfigurationError("columns must have equal length")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*(a.tolist() for a in arrays)):
            fh.write(",".join("" if v != v else f"{v:.17g}" for v in row) + "\n")


def read_columns(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        names = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh]
    return {n: np.array([float(r[i]) if r[i] else np.nan for r in rows]) for i, n in enumerate(names)}


def write_outputs(config: ExperimentConfig, results: dict, outdir: str, preset: Optional[str] = None) -> dict:
    """Write per-replicate and aggregate column files plus a JSON summary.

    Returns the summary.  Diverged replicates are written up to the failing
    step and excluded from the aggregate.
    """
    os.makedirs(outdir, exist_ok=True)
    tag = preset or config.name
    summary = {"name": tag, "seed": config.seed, "horizon": config.horizon,
               "replicates": config.replicates, "controllers": {}}
    for name, reps in results.items():
        finished = []
        diverged = {}
        for res in reps:
            cols = _series(res)
            write_columns(os.path.join(outdir, f"{tag}_{name}_{config.seed}_rep{res.replicate}.cols"), cols)
            if res.diverged:
                diverged[str(res.replicate)] = res.log.diverged_at
            else:
                finished.append(cols)
        entry = {"diverged": diverged, "aggregated_replicates": len(finished)}
        if finished:
            agg = aggregate_replicates(finished)
            cols = {"k": agg["k"][0]}
            for metric, (mean, lo, hi) in agg.items():
                if metric == "k":
                    continue
                cols[f"{metric}_mean"] = mean
                cols[f"{metric}_min"] = lo
                cols[f"{metric}_max"] = hi
            write_columns(os.path.join(outdir, f"{tag}_{name}_aggregate.cols"), cols)
            if "gap_mean" in cols and config.horizon > 0:
                entry["final_gap_mean"] = float(cols["gap_mean"][-1])
        summary["controllers"][name] = entry
    with open(os.path.join(outdir, f"{tag}_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------------- presets

def _fo(name, eta, mode="first-order-prox", error=0.0):
    c = {"name": name, "mode": mode, "eta": eta}
    if error:
        c.update(sensitivity="perturbed", sensitivity_error=error)
    return c


PRESETS = {
    "fig2": {
        "name": "fig2", "seed": 0, "horizon": 200_000, "replicates": 40,
        "controllers": [
            {"name": "model-free", "mode": "proximal-descent", "eta": 2.5e-5, "delta": 1e-3},
            _fo("first-order-H", 1e-4),
            _fo("first-order-H5", 1e-4, error=0.05),
            _fo("first-order-H10", 1e-4, error=0.10),
        ],
    },
    "fig3": {
        "name": "fig3", "seed": 0, "horizon": 200_000, "replicates": 40,
        "controllers": [
            {"name": f"model-free-d{d}-e{e}", "mode": "proximal-descent", "eta": e, "delta": d}
            for d in (1e-3, 1e-2) for e in (1e-5, 2.5e-5)
        ],
    },
    "fig4": {
        "name": "fig4", "seed": 0, "horizon": 200_000, "replicates": 20, "constrained": True,
        "controllers": [
            {"name": "frank-wolfe", "mode": "frank-wolfe", "eta": 1e-5, "delta": 1e-3},
            {"name": "projected", "mode": "projected-descent", "eta": 1e-5, "delta": 1e-3},
            _fo("first-order-H", 7.5e-5, mode="first-order-projected"),
            _fo("first-order-H5", 7.5e-5, mode="first-order-projected", error=0.05),
            _fo("first-order-H10", 7.5e-5, mode="first-order-projected", error=0.10),
            {"name": "saturated", "mode": "proximal-descent", "eta": 1e-5, "delta": 1e-3,
             "saturate": True, "w0": "midpoint"},
        ],
    },
    "fig5": {
        "name": "fig5", "seed": 0, "horizon": 20_000, "replicates": 40,
        "disturbance_schedule": {"period": 5000, "low": -5e-3, "high": 5e-3},
        "controllers": [
            {"name": "model-free", "mode": "proximal-descent", "eta": 1e-4, "delta": 1e-3},
            _fo("first-order-H", 5e-4),
            _fo("first-order-H5", 5e-4, error=0.05),
            _fo("first-order-H10", 5e-4, error=0.10),
        ],
    },
}


def preset_config(name: str, **overrides) -> ExperimentConfig:
    """Validated preset with selected top-level fields replaced (``None`` keeps the preset value).

    ``eta`` and ``delta`` overrides apply to every controller that uses them.
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    data = copy.deepcopy(PRESETS[name])
    for key in ("seed", "horizon", "replicates", "output_path", "checkpoint_interval"):
        if overrides.get(key) is not None:
            data[key] = overrides[key]
    for key in ("eta", "delta"):
        if overrides.get(key) is not None:
            for c in data["controllers"]:
                if key == "eta" or c["mode"] not in FIRST_ORDER_MODES:
                    c[key] = overrides[key]
    if overrides.get("period") is not None and "disturbance_schedule" in data:
        data["disturbance_schedule"]["period"] = overrides["period"]
    return validate_config(data)
