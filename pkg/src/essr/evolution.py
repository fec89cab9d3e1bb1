"""Genetic-programming engine: population management, adaptive fitness,
selection, crossover, the two mutations, and the generation loop.

Individuals hold several candidate trees; each generation every individual
is fitted by elastic net, its loss is the least-squares refit on the
selected support, and the best 20% (elites plus tournament winners) is
copied, pruned by hard thresholding, and used to breed the remaining 80%.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .regression import (
    ConvergenceError,
    DesignMatrix,
    design_pointwise,
    design_ring,
    elastic_net_fit,
    hard_threshold_prune,
    refit_on_support,
    ring_quadrature_points,
)
from .trees import (
    DEFAULT_FUNCTIONS,
    Individual,
    count_nodes,
    edit_individual,
    get_subtree,
    constant_positions,
    random_tree,
    replace_subtree,
)

__all__ = [
    "GpConfig",
    "FitnessState",
    "BestSet",
    "TrainingProblem",
    "EvolutionResult",
    "pointwise_problem",
    "ring_problem",
    "init_population",
    "evaluate_population",
    "fitness",
    "update_tau1",
    "build_best_set",
    "crossover",
    "mutate_subtree",
    "mutate_constant",
    "evolve",
]

_TERMINALS = ("one", "const", "var")


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 500
    max_generations: int = 100
    init_candidates: int = 5
    gen_threshold: int = 50  # generations of free exploration (N_thre)
    loss_threshold: float = 0.1  # loss below which tau1 starts growing (E_thre)
    stop_loss: float = 0.0  # termination loss (e_thre)
    tau2: float = 0.1
    delta_tau0: float = 0.08
    elite_pct: float = 2.0
    tourney_pct: float = 18.0
    operator_ratios: Tuple[float, float, float] = (0.6, 0.35, 0.05)
    tournament_size: int = 2
    vartheta: float = 10.0
    c_range: Tuple[float, float] = (-10.0, 10.0)
    rho: float = 1e-4
    lam: float = 0.001
    beta: float = 0.8
    functions: Tuple[str, ...] = DEFAULT_FUNCTIONS
    init_nodes: int = 5
    max_nodes: int = 15
    dependence_tol: float = 1e-8

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not all(r >= 0 for r in self.operator_ratios) or sum(self.operator_ratios) <= 0:
            raise ValueError("operator ratios must be non-negative and not all zero")


@dataclass
class FitnessState:
    """Adaptive schedule for the candidate-count exponent tau1. The schedule
    can drive tau1 negative; no clamping is applied."""

    tau1: float = 0.0
    delta_tau: float = 0.08
    prev_best_loss: Optional[float] = None
    best_so_far: float = float("inf")
    pending_extra_decrease: bool = False


@dataclass
class BestSet:
    """Reproduced individuals (elites + tournament winners) and the maxima
    used to normalize the fitness of the following generation."""

    members: List[Individual]
    max_loss: float
    max_active: int
    max_operators: int


@dataclass(frozen=True)
class TrainingProblem:
    """One regression target for the engine: how to build a design from a
    candidate list, plus the points used for editing checks."""

    n_vars: int
    build: Callable[[Sequence], DesignMatrix]
    edit_points: np.ndarray
    var_names: Optional[Tuple[str, ...]] = None

    @property
    def n_rows(self) -> int:
        return self.build(()).n_rows


def pointwise_problem(inputs, targets, var_names=None) -> TrainingProblem:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    targets = np.asarray(targets, dtype=np.float64)
    return TrainingProblem(
        n_vars=inputs.shape[1],
        build=lambda cands: design_pointwise(cands, inputs, targets),
        edit_points=inputs,
        var_names=tuple(var_names) if var_names else None,
    )


def ring_problem(edges, targets) -> TrainingProblem:
    edges = np.asarray(edges, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    return TrainingProblem(
        n_vars=1,
        build=lambda cands: design_ring(cands, edges, targets),
        edit_points=ring_quadrature_points(edges),
        var_names=("r",),
    )


# ---------------------------------------------------------------------------
# population


def _edit(ind: Individual, problem: TrainingProblem, config: GpConfig, rng) -> Individual:
    return edit_individual(
        ind,
        problem.edit_points,
        rng,
        problem.n_vars,
        functions=config.functions,
        c_range=config.c_range,
        tol=config.dependence_tol,
        max_nodes=config.max_nodes,
    )


def init_population(
    config: GpConfig, n_vars: int, rng, problem: TrainingProblem
) -> List[Individual]:
    pop = []
    for _ in range(config.population_size):
        cands = tuple(
            random_tree(n_vars, config.init_nodes, rng, config.functions, config.c_range)
            for _ in range(config.init_candidates)
        )
        pop.append(_edit(Individual(candidates=cands), problem, config, rng))
    return pop


def evaluate_population(
    population: List[Individual], problem: TrainingProblem, config: GpConfig
) -> None:
    """Fit every individual: elastic net selects the support, a least-squares
    refit on that support provides the recorded coefficients and loss.
    Individuals whose design fails to build are assigned infinite loss."""
    for ind in population:
        try:
            design = problem.build(ind.candidates)
            fit = elastic_net_fit(design, config.lam, config.beta)
            xi, loss = refit_on_support(design, fit.active)
        except (ValueError, ConvergenceError, np.linalg.LinAlgError):
            ind.coefficients = None
            ind.loss = float("inf")
            continue
        if not np.isfinite(loss):
            ind.coefficients = None
            ind.loss = float("inf")
            continue
        ind.coefficients = xi
        ind.loss = loss


# ---------------------------------------------------------------------------
# fitness


def fitness(
    loss: float,
    n_active: int,
    n_operators: int,
    stats: Optional[Tuple[float, int, int]],
    tau1: float,
    tau2: float,
) -> float:
    """Loss normalized over the best set, penalized by the candidate-count
    and operator-count ratios raised to tau1 and tau2."""
    if not np.isfinite(loss):
        return float("inf")
    if n_active == 0:
        # nothing selected: degenerate model, ranked last
        return float("inf")
    if (
        stats is None
        or not np.isfinite(stats[0])
        or stats[0] <= 0
        or stats[1] <= 0
        or stats[2] <= 0
    ):
        return loss
    max_loss, max_active, max_ops = stats
    return (
        loss
        / max_loss
        * (n_active / max_active) ** tau1
        * (max(n_operators, 1) / max_ops) ** tau2
    )


def update_tau1(
    state: FitnessState, generation: int, best_loss: float, config: GpConfig
) -> FitnessState:
    """One schedule step: free exploration below the generation threshold,
    unit penalty while the loss is high, slow growth once it is low, and a
    retract-then-halve reaction to loss spikes with a one-shot follow-up."""
    tau1 = state.tau1
    dtau = state.delta_tau
    pending = state.pending_extra_decrease
    prev = state.prev_best_loss
    if generation < config.gen_threshold:
        tau1 = 0.0
    elif prev is not None and np.isfinite(prev) and best_loss > 1.2 * prev:
        tau1 -= 3.0 * dtau
        dtau /= 2.0
        pending = True
    elif pending and best_loss > state.best_so_far:
        tau1 -= 20.0 * dtau
        pending = False
    elif best_loss > config.loss_threshold:
        tau1 = 1.0
        pending = False
    else:
        tau1 += dtau
        pending = False
    return FitnessState(
        tau1=tau1,
        delta_tau=dtau,
        prev_best_loss=best_loss,
        best_so_far=min(state.best_so_far, best_loss),
        pending_extra_decrease=pending,
    )


def _rank_key(population):
    return lambda i: (population[i].fitness, population[i].loss, i)


def build_best_set(population: List[Individual], config: GpConfig, rng) -> BestSet:
    """Elites (lowest fitness) plus tournament winners drawn from the rest.
    Individuals with non-finite loss never enter the set unless there are
    not enough finite ones to fill it."""
    n_pop = len(population)
    n_best = round((config.elite_pct + config.tourney_pct) / 100.0 * n_pop)
    n_elite = round(config.elite_pct / 100.0 * n_pop)
    key = _rank_key(population)
    order = sorted(range(n_pop), key=key)
    eligible = [i for i in order if np.isfinite(population[i].loss)]
    filler = [i for i in order if not np.isfinite(population[i].loss)]
    selected = eligible[:n_elite]
    pool = eligible[n_elite:]
    while len(selected) < n_best:
        if not pool:
            selected.append(filler.pop(0))
            continue
        k = min(config.tournament_size, len(pool))
        group = rng.choice(len(pool), size=k, replace=False)
        winner_pos = min(group, key=lambda g: key(pool[g]))
        selected.append(pool.pop(int(winner_pos)))
    members = [copy.deepcopy(population[i]) for i in selected]
    finite = [m for m in members if np.isfinite(m.loss)]
    return BestSet(
        members=members,
        max_loss=max((m.loss for m in finite), default=float("nan")),
        max_active=max((m.active_count() for m in finite), default=0),
        max_operators=max((m.operator_count() for m in finite), default=0),
    )


def _tournament(members: List[Individual], config: GpConfig, rng) -> Individual:
    k = min(config.tournament_size, len(members))
    idx = rng.choice(len(members), size=k, replace=False)
    best = min(idx, key=lambda i: (members[i].fitness, members[i].loss, i))
    return members[int(best)]


# ---------------------------------------------------------------------------
# genetic operators


def _is_terminal(node) -> bool:
    return node[0] in _TERMINALS


def crossover(parent1: Individual, parent2: Individual, rng):
    """Swap random subtrees between one candidate of each parent, rejecting
    node pairs that are both terminals; after 20 rejections the chosen
    candidate trees are swapped wholesale."""
    c1 = int(rng.integers(0, len(parent1.candidates)))
    c2 = int(rng.integers(0, len(parent2.candidates)))
    t1 = parent1.candidates[c1]
    t2 = parent2.candidates[c2]
    new1, new2 = t2, t1
    for _ in range(20):
        i1 = int(rng.integers(0, count_nodes(t1)))
        i2 = int(rng.integers(0, count_nodes(t2)))
        s1 = get_subtree(t1, i1)
        s2 = get_subtree(t2, i2)
        if _is_terminal(s1) and _is_terminal(s2):
            continue
        new1 = replace_subtree(t1, i1, s2)
        new2 = replace_subtree(t2, i2, s1)
        break
    off1 = list(parent1.candidates)
    off2 = list(parent2.candidates)
    off1[c1] = new1
    off2[c2] = new2
    return (
        parent1.with_candidates(off1),
        parent2.with_candidates(off2),
    )


def mutate_subtree(parent: Individual, rng, n_vars: int, config: GpConfig) -> Individual:
    """Replace the subtree at a uniformly chosen node of a uniformly chosen
    candidate with a fresh random tree of 1 to 5 nodes."""
    c = int(rng.integers(0, len(parent.candidates)))
    t = parent.candidates[c]
    idx = int(rng.integers(0, count_nodes(t)))
    k = int(rng.integers(1, 6))
    sub = random_tree(n_vars, k, rng, config.functions, config.c_range)
    cands = list(parent.candidates)
    cands[c] = replace_subtree(t, idx, sub)
    return parent.with_candidates(cands)


def mutate_constant(parent: Individual, generation: int, config: GpConfig, rng):
    """Perturb one uniformly chosen constant slot by (2 kappa - vartheta) /
    (vartheta + G). Returns (offspring, mutated flag); individuals without
    constants pass through unchanged."""
    slots = [
        (ci, ni)
        for ci, t in enumerate(parent.candidates)
        for ni in constant_positions(t)
    ]
    if not slots:
        return parent.with_candidates(parent.candidates), False
    ci, ni = slots[int(rng.integers(0, len(slots)))]
    kappa = float(rng.uniform(0.0, config.vartheta))
    delta = (2.0 * kappa - config.vartheta) / (config.vartheta + generation)
    t = parent.candidates[ci]
    old = get_subtree(t, ni)[1]
    cands = list(parent.candidates)
    cands[ci] = replace_subtree(t, ni, ("const", old + delta))
    return parent.with_candidates(cands), True


# ---------------------------------------------------------------------------
# main loop


@dataclass
class EvolutionResult:
    best: Individual
    history: List[dict] = field(default_factory=list)
    generations: int = 0
    terminated_early: bool = False

    def history_rows(self):
        """Rows (generation, best_loss, best_fitness, candidate_count,
        node_count) for CSV export."""
        return [
            (
                h["generation"],
                h["best_loss"],
                h["best_fitness"],
                h["candidate_count"],
                h["node_count"],
            )
            for h in self.history
        ]


def evolve(problem: TrainingProblem, config: GpConfig, seed) -> EvolutionResult:
    """Run the full generation loop and return the best individual found,
    with least-squares-refit coefficients, plus per-generation history."""
    rng = np.random.default_rng(seed)
    population = init_population(config, problem.n_vars, rng, problem)
    state = FitnessState(tau1=0.0, delta_tau=config.delta_tau0)
    stats: Optional[Tuple[float, int, int]] = None
    result = EvolutionResult(best=Individual(candidates=()))
    for generation in range(config.max_generations + 1):
        evaluate_population(population, problem, config)
        losses = [ind.loss for ind in population]
        best_idx = min(range(len(population)), key=lambda i: (losses[i], i))
        best_loss = losses[best_idx]
        state = update_tau1(state, generation, best_loss, config)
        gen_stats = stats
        if gen_stats is None:
            finite = [ind for ind in population if np.isfinite(ind.loss)]
            if finite:
                gen_stats = (
                    max(ind.loss for ind in finite),
                    max(ind.active_count() for ind in finite),
                    max(ind.operator_count() for ind in finite),
                )
        for ind in population:
            ind.fitness = fitness(
                ind.loss,
                ind.active_count(),
                ind.operator_count(),
                gen_stats,
                state.tau1,
                config.tau2,
            )
        best = population[best_idx]
        result.history.append(
            {
                "generation": generation,
                "best_loss": best_loss,
                "best_fitness": best.fitness,
                "candidate_count": len(best.candidates),
                "node_count": best.node_count(),
                "tau1": state.tau1,
            }
        )
        if best_loss < result.best.loss:
            result.best = copy.deepcopy(best)
        result.generations = generation
        if best_loss <= config.stop_loss:
            result.terminated_early = True
            break
        if generation == config.max_generations:
            break
        best_set = build_best_set(population, config, rng)
        for i, member in enumerate(best_set.members):
            try:
                design = problem.build(member.candidates)
                best_set.members[i] = hard_threshold_prune(member, design, config.rho)
            except (ValueError, np.linalg.LinAlgError):
                pass
        stats = (best_set.max_loss, best_set.max_active, best_set.max_operators)
        # preserve selection-time fitness on pruned members for parent draws
        offspring: List[Individual] = []
        slots = config.population_size - len(best_set.members)
        r = np.asarray(config.operator_ratios, dtype=float)
        r = r / r.sum()
        while len(offspring) < slots:
            u = rng.random()
            remaining = slots - len(offspring)
            if u < r[0] and remaining >= 2:
                p1 = _tournament(best_set.members, config, rng)
                p2 = _tournament(best_set.members, config, rng)
                o1, o2 = crossover(p1, p2, rng)
                offspring += [o1, o2]
            elif u < r[0] + r[1] or (u < r[0] and remaining < 2):
                p = _tournament(best_set.members, config, rng)
                offspring.append(mutate_subtree(p, rng, problem.n_vars, config))
            else:
                p = _tournament(best_set.members, config, rng)
                o, _ = mutate_constant(p, generation, config, rng)
                offspring.append(o)
        offspring = [_edit(o, problem, config, rng) for o in offspring]
        population = best_set.members + offspring
    # the reported model gets the same hard-thresholding as selected parents
    if result.best.candidates:
        try:
            design = problem.build(result.best.candidates)
            result.best = hard_threshold_prune(result.best, design, config.rho)
        except (ValueError, np.linalg.LinAlgError):
            pass
    return result
