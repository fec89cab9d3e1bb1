"""Three-stage discovery pipeline and its configuration and reporting.

A run learns, in order, the radial jump-measure integrand from ring
statistics, the drift field from per-bin first moments, and the diffusion
matrix from per-bin second moments corrected with the jump measure learned
in the first stage. Each stage is an independent GP/sparse-regression run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datasets import SnapshotDataset, read_dataset, read_dataset_csv, write_dataset
from .evolution import EvolutionResult, GpConfig, evolve, pointwise_problem, ring_problem
from .preprocess import (
    PowerLaw,
    build_ring_training,
    local_diffusion_fit,
    local_drift_fit,
    pair_indices,
    partition_bins,
    tail_correction,
)
from .regression import design_pointwise, design_ring
from .simulate import (
    SdeModel,
    StableSpec,
    generate_dataset,
    intensity_constant,
    surface_area,
)
from .trees import eval_tree, format_tree, infix, parse_tree

__all__ = [
    "ConfigError",
    "DiscoveryConfig",
    "PreprocessConfig",
    "StageConfig",
    "SimulationConfig",
    "build_model",
    "load_config",
    "infer_stable_params",
    "fit_power_law",
    "run_jump_discovery",
    "run_drift_discovery",
    "run_diffusion_discovery",
    "run_full",
    "load_dataset_from_config",
    "render_report",
]

JUMP_FUNCTIONS = ("+", "*", "/", "exp", "ln", "squ")  # sine excluded for jump fits


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config field '{path}': {message}")


# ---------------------------------------------------------------------------
# built-in models


def _maier_stein() -> SdeModel:
    def drift(x):
        x1, x2 = x[:, 0], x[:, 1]
        return np.stack([x1 - x1**3 - x1 * x2**2, -(1.0 + x1**2) * x2], axis=1)

    def diffusion(x):
        m = len(x)
        out = np.zeros((m, 2, 2))
        out[:, 0, 0] = np.sin(np.pi * x[:, 0] / 2.0)
        out[:, 1, 1] = 0.5 * x[:, 1]
        return out

    return SdeModel(
        dim=2,
        drift=drift,
        diffusion_factor=diffusion,
        jump=StableSpec(alpha=1.5, sigma2=1.0, dim=2),
    )


def _chaotic3() -> SdeModel:
    def drift(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        return np.stack(
            [np.log(0.5 + np.exp(x2 - x1)), x1 * x3, 1.0 - x1 * x2], axis=1
        )

    def diffusion(x):
        m = len(x)
        out = np.zeros((m, 3, 3))
        out[:, 0, 0] = x[:, 0] / np.sqrt(x[:, 0] ** 2 + 1.0)
        out[:, 1, 1] = 0.4 * x[:, 1]
        out[:, 2, 2] = 0.7 * x[:, 2]
        return out

    return SdeModel(
        dim=3,
        drift=drift,
        diffusion_factor=diffusion,
        jump=StableSpec(alpha=0.5, sigma2=0.5, dim=3),
    )


_BUILTIN_MODELS = {"maier_stein": _maier_stein, "chaotic3": _chaotic3}


def _expression_model(spec: dict, path: str) -> SdeModel:
    dim = spec.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise ConfigError(f"{path}.dim", "positive integer required")
    drift_src = spec.get("drift")
    if not isinstance(drift_src, list) or len(drift_src) != dim:
        raise ConfigError(f"{path}.drift", f"list of {dim} expressions required")
    drift_trees = [parse_tree(s) for s in drift_src]

    def drift(x):
        return np.stack([eval_tree(t, x) for t in drift_trees], axis=1)

    diffusion = None
    diag_src = spec.get("diffusion_diag")
    if diag_src is not None:
        if not isinstance(diag_src, list) or len(diag_src) != dim:
            raise ConfigError(
                f"{path}.diffusion_diag", f"list of {dim} expressions required"
            )
        diag_trees = [parse_tree(s) for s in diag_src]

        def diffusion(x):
            m = len(x)
            out = np.zeros((m, dim, dim))
            for d, t in enumerate(diag_trees):
                out[:, d, d] = eval_tree(t, x)
            return out

    jump = None
    if "alpha" in spec or "sigma2" in spec:
        try:
            jump = StableSpec(
                alpha=float(spec.get("alpha", 0.0)),
                sigma2=float(spec.get("sigma2", 0.0)),
                dim=dim,
            )
        except ValueError as err:
            raise ConfigError(f"{path}.alpha/sigma2", str(err)) from None
    return SdeModel(dim=dim, drift=drift, diffusion_factor=diffusion, jump=jump)


def build_model(spec: dict, path: str = "data.simulate") -> SdeModel:
    """Named built-in model or one assembled from expression strings."""
    name = spec.get("model")
    if name is not None:
        if name not in _BUILTIN_MODELS:
            raise ConfigError(
                f"{path}.model",
                f"unknown model {name!r}; available: {sorted(_BUILTIN_MODELS)}",
            )
        return _BUILTIN_MODELS[name]()
    return _expression_model(spec, path)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SimulationConfig:
    model_spec: dict
    domain: Tuple[Tuple[float, float], ...]
    samples: int
    h: float


@dataclass(frozen=True)
class PreprocessConfig:
    eps: float = 1.0
    m: float = 1.5
    rings: int = 10
    fit_eps: float = 1.0
    bins: Tuple[int, ...] = ()
    box: Tuple[Tuple[float, float], ...] = ()


@dataclass(frozen=True)
class StageConfig:
    gp: GpConfig
    enabled: bool = True
    restarts: int = 1
    groups: Tuple[Tuple[int, ...], ...] = ()  # drift only; 1-based dims


@dataclass(frozen=True)
class DiscoveryConfig:
    seed: int
    dataset_path: Optional[str]
    dataset_h: Optional[float]
    simulate: Optional[SimulationConfig]
    preprocess: PreprocessConfig
    jump: StageConfig
    drift: StageConfig
    diffusion: StageConfig
    raw: dict = field(default_factory=dict, compare=False)


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return table[key]


def _box(value, path) -> Tuple[Tuple[float, float], ...]:
    try:
        out = tuple((float(a), float(b)) for a, b in value)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a list of [lo, hi] pairs") from None
    if any(b <= a for a, b in out):
        raise ConfigError(path, "every axis needs hi > lo")
    return out


def _stage_config(table: dict, path: str, defaults: dict) -> StageConfig:
    merged = dict(defaults)
    merged.update(table)
    functions = tuple(merged.get("functions", GpConfig.functions))
    exclude = merged.get("exclude", ())
    functions = tuple(f for f in functions if f not in exclude)
    try:
        gp = GpConfig(
            population_size=int(merged.get("population", 500)),
            max_generations=int(merged.get("generations", 100)),
            init_candidates=int(merged.get("candidates", 5)),
            gen_threshold=int(merged.get("n_threshold", 50)),
            loss_threshold=float(merged.get("e_threshold", 0.1)),
            stop_loss=float(merged.get("stop_loss", 0.0)),
            tau2=float(merged.get("tau2", 0.1)),
            delta_tau0=float(merged.get("delta_tau", 0.08)),
            elite_pct=float(merged.get("elite_pct", 2.0)),
            tourney_pct=float(merged.get("tourney_pct", 18.0)),
            lam=float(merged.get("lambda", 0.001)),
            beta=float(merged.get("beta", 0.8)),
            rho=float(merged.get("rho", 1e-4)),
            vartheta=float(merged.get("vartheta", 10.0)),
            functions=functions,
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(path, str(err)) from None
    groups = tuple(tuple(int(d) for d in g) for g in merged.get("groups", ()))
    return StageConfig(
        gp=gp,
        enabled=bool(merged.get("enabled", True)),
        restarts=int(merged.get("restarts", 1)),
        groups=groups,
    )


def parse_config(raw: dict) -> DiscoveryConfig:
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "integer required")
    data = raw.get("data", {})
    dataset_path = data.get("path")
    dataset_h = data.get("h")
    simulate = None
    if "simulate" in data:
        sim = data["simulate"]
        simulate = SimulationConfig(
            model_spec=sim,
            domain=_box(_require(sim, "domain", "data.simulate"), "data.simulate.domain"),
            samples=int(_require(sim, "samples", "data.simulate")),
            h=float(_require(sim, "h", "data.simulate")),
        )
        build_model(sim)  # validate eagerly
    if dataset_path is None and simulate is None:
        raise ConfigError("data", "either data.path or data.simulate is required")
    pre_raw = raw.get("preprocess", {})
    pre = PreprocessConfig(
        eps=float(pre_raw.get("eps", 1.0)),
        m=float(pre_raw.get("m", 1.5)),
        rings=int(pre_raw.get("rings", 10)),
        fit_eps=float(pre_raw.get("fit_eps", pre_raw.get("eps", 1.0))),
        bins=tuple(int(c) for c in pre_raw.get("bins", ())),
        box=_box(pre_raw.get("box", ()), "preprocess.box") if pre_raw.get("box") else (),
    )
    if pre.eps <= 0:
        raise ConfigError("preprocess.eps", "must be > 0")
    if pre.m <= 1:
        raise ConfigError("preprocess.m", "must be > 1")
    jump = _stage_config(
        raw.get("jump", {}),
        "jump",
        {"exclude": ("sin",), "n_threshold": 20, "e_threshold": 1e-5,
         "stop_loss": 5e-7, "tau2": 0.1},
    )
    drift = _stage_config(
        raw.get("drift", {}),
        "drift",
        {"e_threshold": 0.1, "stop_loss": 0.001, "tau2": 0.02},
    )
    diffusion = _stage_config(
        raw.get("diffusion", {}),
        "diffusion",
        {"e_threshold": 0.005, "stop_loss": 0.0001, "tau2": 0.04},
    )
    return DiscoveryConfig(
        seed=seed,
        dataset_path=dataset_path,
        dataset_h=float(dataset_h) if dataset_h is not None else None,
        simulate=simulate,
        preprocess=pre,
        jump=jump,
        drift=drift,
        diffusion=diffusion,
        raw=raw,
    )


def load_config(path) -> DiscoveryConfig:
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    return parse_config(raw)


def load_dataset_from_config(config: DiscoveryConfig) -> SnapshotDataset:
    if config.dataset_path is not None:
        p = Path(config.dataset_path)
        if p.suffix == ".csv":
            if config.dataset_h is None:
                raise ConfigError("data.h", "required when loading a CSV dataset")
            return read_dataset_csv(p, config.dataset_h)
        return read_dataset(p)
    sim = config.simulate
    model = build_model(sim.model_spec)
    return generate_dataset(model, sim.domain, sim.samples, sim.h, config.seed)


# ---------------------------------------------------------------------------
# jump-measure post-processing


def fit_power_law(
    individual, coefficients, r_lo: float, r_hi: float, n_points: int = 50
) -> Optional[PowerLaw]:
    """Fit the learned radial function to prefactor * r**(-exponent) by
    log-log least squares over log-spaced radii. None when the function is
    not positive on enough of the range."""
    radii = np.geomspace(r_lo, r_hi, n_points)
    pts = radii[:, None]
    vals = np.zeros(n_points)
    for tree, coef in zip(individual.candidates, coefficients[:, 0]):
        vals += coef * eval_tree(tree, pts)
    good = np.isfinite(vals) & (vals > 0)
    if good.sum() < 2:
        return None
    a = np.stack([np.ones(good.sum()), np.log(radii[good])], axis=1)
    sol, *_ = np.linalg.lstsq(a, np.log(vals[good]), rcond=None)
    return PowerLaw(prefactor=float(math.exp(sol[0])), exponent=float(-sol[1]))


def infer_stable_params(prefactor: float, exponent: float, dim: int) -> dict:
    """Invert prefactor * r**(-exponent) against the analytic alpha-stable
    radial integrand surface(n) c(n, alpha) sigma2**alpha r**(-1-alpha)."""
    alpha = exponent - 1.0
    out = {"alpha": alpha, "sigma2": None, "stable": False}
    if not 0.0 < alpha < 2.0 or prefactor <= 0.0:
        return out
    c = intensity_constant(dim, alpha)
    sigma2 = (prefactor / (surface_area(dim) * c)) ** (1.0 / alpha)
    out["sigma2"] = float(sigma2)
    out["stable"] = True
    return out


# ---------------------------------------------------------------------------
# stages


def _run_restarts(problem, stage: StageConfig, seed_parts) -> EvolutionResult:
    best = None
    for k in range(max(1, stage.restarts)):
        result = evolve(problem, stage.gp, list(seed_parts) + [k])
        if best is None or result.best.loss < best.best.loss:
            best = result
    return best


def _individual_payload(ind, var_names) -> dict:
    coeffs = ind.coefficients
    return {
        "expressions": [format_tree(t, var_names) for t in ind.candidates],
        "infix": [infix(t, var_names) for t in ind.candidates],
        "coefficients": coeffs.tolist() if coeffs is not None else None,
        "loss": ind.loss,
    }


def run_jump_discovery(data: SnapshotDataset, config: DiscoveryConfig) -> dict:
    pre = config.preprocess
    ring = build_ring_training(data, pre.eps, pre.m, pre.rings)
    stage = {
        "ring_counts": ring.counts.tolist(),
        "ring_targets": ring.targets.tolist(),
    }
    if ring.empty:
        stage["status"] = "absent"
        return stage
    problem = ring_problem(ring.edges, ring.targets)
    result = _run_restarts(problem, config.jump, [config.seed, 1])
    stage["status"] = "ok"
    stage.update(_individual_payload(result.best, ("r",)))
    stage["generations"] = result.generations
    stage["history"] = result.history
    law = fit_power_law(
        result.best, result.best.coefficients, pre.eps, pre.eps * pre.m**pre.rings
    )
    if law is not None:
        stage["power_law"] = {"prefactor": law.prefactor, "exponent": law.exponent}
        stage["inferred"] = infer_stable_params(law.prefactor, law.exponent, data.dim)
    else:
        stage["power_law"] = None
        stage["inferred"] = None
    return stage


def _grid(data, config: DiscoveryConfig):
    pre = config.preprocess
    if not pre.bins or not pre.box:
        raise ConfigError("preprocess.bins/box", "required for drift/diffusion stages")
    if len(pre.bins) != data.dim:
        raise ConfigError("preprocess.bins", f"need {data.dim} axis counts")
    return partition_bins(data, pre.box, pre.bins)


def run_drift_discovery(data: SnapshotDataset, config: DiscoveryConfig) -> dict:
    grid = _grid(data, config)
    training = local_drift_fit(data, grid, config.preprocess.fit_eps)
    groups = config.drift.groups or (tuple(range(1, data.dim + 1)),)
    var_names = tuple(f"x{i + 1}" for i in range(data.dim))
    out_groups = []
    for gi, group in enumerate(groups):
        cols = [d - 1 for d in group]
        if any(c < 0 or c >= data.dim for c in cols):
            raise ConfigError("drift.groups", f"dimension out of range in {group}")
        problem = pointwise_problem(
            training.inputs, training.targets[:, cols], var_names
        )
        result = _run_restarts(problem, config.drift, [config.seed, 2, gi])
        payload = _individual_payload(result.best, var_names)
        payload["dims"] = list(group)
        payload["generations"] = result.generations
        payload["history"] = result.history
        out_groups.append(payload)
    return {"status": "ok", "n_bins_used": len(training.inputs), "groups": out_groups}


def run_diffusion_discovery(
    data: SnapshotDataset, config: DiscoveryConfig, jump_stage: Optional[dict]
) -> dict:
    grid = _grid(data, config)
    pre = config.preprocess
    if jump_stage and jump_stage.get("power_law"):
        law = PowerLaw(
            prefactor=jump_stage["power_law"]["prefactor"],
            exponent=jump_stage["power_law"]["exponent"],
        )
        s_matrix = tail_correction(pre.fit_eps, law, dim=data.dim)
    else:
        s_matrix = np.zeros((data.dim, data.dim))
    training = local_diffusion_fit(data, grid, pre.fit_eps, s_matrix)
    var_names = tuple(f"x{i + 1}" for i in range(data.dim))
    problem = pointwise_problem(training.inputs, training.targets, var_names)
    result = _run_restarts(problem, config.diffusion, [config.seed, 3])
    out = _individual_payload(result.best, var_names)
    out["status"] = "ok"
    out["pairs"] = [list(p) for p in pair_indices(data.dim)]
    out["tail_correction_diag"] = np.diag(s_matrix).tolist()
    out["generations"] = result.generations
    out["history"] = result.history
    out["n_bins_used"] = len(training.inputs)
    return out


def run_full(config: DiscoveryConfig) -> dict:
    """Jump -> drift -> diffusion. Stage failures are recorded; later stages
    that do not depend on the failed one still run."""
    data = load_dataset_from_config(config)
    report = {
        "seed": config.seed,
        "dim": data.dim,
        "h": data.h,
        "n_samples": data.n_samples,
        "config": config.raw,
        "stages": {},
    }
    jump_stage = None
    if config.jump.enabled:
        try:
            jump_stage = run_jump_discovery(data, config)
        except Exception as err:  # noqa: BLE001 - stage isolation
            jump_stage = {"status": "failed", "error": str(err)}
        report["stages"]["jump"] = jump_stage
    else:
        report["stages"]["jump"] = {"status": "skipped"}
    if config.drift.enabled:
        try:
            report["stages"]["drift"] = run_drift_discovery(data, config)
        except Exception as err:  # noqa: BLE001
            report["stages"]["drift"] = {"status": "failed", "error": str(err)}
    else:
        report["stages"]["drift"] = {"status": "skipped"}
    if config.diffusion.enabled:
        try:
            report["stages"]["diffusion"] = run_diffusion_discovery(
                data, config, jump_stage
            )
        except Exception as err:  # noqa: BLE001
            report["stages"]["diffusion"] = {"status": "failed", "error": str(err)}
    else:
        report["stages"]["diffusion"] = {"status": "skipped"}
    return report


# ---------------------------------------------------------------------------
# output


def write_report(report: dict, out_dir, fmt: str = "json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    body = {k: v for k, v in report.items()}
    body["stages"] = {}
    for name, stage in report["stages"].items():
        stage = dict(stage)
        history = stage.pop("history", None)
        if "groups" in stage:
            groups = []
            for gi, g in enumerate(stage["groups"]):
                g = dict(g)
                gh = g.pop("history", None)
                if gh is not None:
                    _write_history(out_dir / f"{name}_group{gi}_history.csv", gh)
                groups.append(g)
            stage["groups"] = groups
        if history is not None:
            _write_history(out_dir / f"{name}_history.csv", history)
        body["stages"][name] = stage
    with open(path, "w") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _write_history(path: Path, history: List[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["generation", "best_loss", "best_fitness", "candidate_count", "node_count"]
        )
        for h in history:
            w.writerow(
                [
                    h["generation"],
                    repr(h["best_loss"]),
                    repr(h["best_fitness"]),
                    h["candidate_count"],
                    h["node_count"],
                ]
            )


def render_report(report: dict) -> str:
    """Human-readable summary tables for a report dict."""
    lines = []
    lines.append(f"dataset: dim={report['dim']} M={report['n_samples']} h={report['h']}")
    lines.append(f"seed: {report['seed']}")
    for name in ("jump", "drift", "diffusion"):
        stage = report["stages"].get(name)
        if stage is None:
            continue
        lines.append("")
        lines.append(f"[{name}] status: {stage['status']}")
        if stage["status"] == "failed":
            lines.append(f"  error: {stage['error']}")
            continue
        if stage["status"] != "ok":
            continue
        groups = stage.get("groups", [stage] if "expressions" in stage else [])
        for g in groups:
            dims = g.get("dims")
            if dims:
                lines.append(f"  components {dims}:")
            coeffs = g.get("coefficients") or []
            for j, expr in enumerate(g.get("infix", [])):
                row = coeffs[j] if j < len(coeffs) else []
                cs = ", ".join(f"{v:.6g}" for v in row)
                lines.append(f"    [{cs}] * {expr}")
            lines.append(f"    loss: {g['loss']:.6g}  generations: {g['generations']}")
        if stage.get("power_law"):
            pl = stage["power_law"]
            lines.append(
                f"  radial fit: {pl['prefactor']:.6g} * r^(-{pl['exponent']:.6g})"
            )
        if stage.get("inferred"):
            inf_ = stage["inferred"]
            if inf_["stable"]:
                lines.append(
                    f"  inferred alpha = {inf_['alpha']:.6g}, "
                    f"sigma2 = {inf_['sigma2']:.6g}"
                )
            else:
                lines.append("  jump kernel does not match a stable law")
    return "\n".join(lines) + "\n"
