"""Inverse design: find clearances and torques that minimize unevenness.

Three searches share one fitness interface. The fitness is either the exact
ladder solver or a trained surrogate:

* ``grid_search`` enumerates every grid pattern (optionally streaming the
  whole database to CSV),
* ``ga_optimize`` is a real-coded genetic algorithm,
* ``pso_optimize`` is a global-best particle swarm.

Ties are always broken towards the lexicographically smallest design vector.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .joint import CLEARANCE_BOUNDS, TORQUE_BOUNDS, BoltParams, JointConfig
from .network import (
    DistributionResult,
    RampConfig,
    TargetLoadNotReached,
    unevenness_at_load,
)
from .seeding import substream
from .surrogate import MLPModel, feature_names

log = logging.getLogger(__name__)

WORST_FITNESS = 1.0


def _grid_levels(lo: float, hi: float, step: float) -> np.ndarray:
    """Positive multiples of ``step`` inside [lo, hi]."""
    k_lo = max(1, math.ceil(lo / step - 1e-9))
    k_hi = math.floor(hi / step + 1e-9)
    return np.round(np.arange(k_lo, k_hi + 1) * step, 10)


@dataclass(frozen=True)
class DesignSpace:
    n_bolts: int = 3
    clearance_bounds: tuple[float, float] = CLEARANCE_BOUNDS
    torque_bounds: tuple[float, float] = TORQUE_BOUNDS
    clearance_step: float = 0.2
    torque_step: float = 0.5
    precision: float = 0.01
    clearance_levels: tuple[float, ...] | None = None
    torque_levels: tuple[float, ...] | None = None

    @property
    def dim(self) -> int:
        return 2 * self.n_bolts

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.clearance_bounds[0]] * self.n_bolts + [self.torque_bounds[0]] * self.n_bolts)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.clearance_bounds[1]] * self.n_bolts + [self.torque_bounds[1]] * self.n_bolts)

    def levels(self) -> list[np.ndarray]:
        c = (np.array(self.clearance_levels, float) if self.clearance_levels is not None
             else _grid_levels(*self.clearance_bounds, self.clearance_step))
        t = (np.array(self.torque_levels, float) if self.torque_levels is not None
             else _grid_levels(*self.torque_bounds, self.torque_step))
        return [c] * self.n_bolts + [t] * self.n_bolts

    @property
    def n_patterns(self) -> int:
        return int(np.prod([len(lv) for lv in self.levels()], dtype=np.int64))

    def snap(self, X: np.ndarray) -> np.ndarray:
        """Round to the continuous-mode precision and clip into the bounds."""
        decimals = int(round(-math.log10(self.precision)))
        return np.clip(np.round(X, decimals), self.lower, self.upper)


class FitnessBackend:
    """Maps a (m, 2n) batch of design vectors to m unevenness values."""

    kind = "abstract"

    def __init__(self):
        self.calls = 0

    def _evaluate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.calls += len(X)
        return np.asarray(self._evaluate(X), dtype=float)

    __call__ = evaluate

    def close(self) -> None:
        pass


def _solver_u(args) -> float:
    cfg, x, target, ramp = args
    try:
        return unevenness_at_load(cfg, BoltParams.from_vector(x), target, ramp).u
    except TargetLoadNotReached:
        return WORST_FITNESS
    except ValueError as exc:
        log.warning("solver failed on %s: %s", list(x), exc)
        return math.nan


class SolverBackend(FitnessBackend):
    """Exact ladder solve per candidate; joints that never carry the target score 1.0."""

    kind = "solver"

    def __init__(self, cfg: JointConfig, target: float = 30000.0,
                 ramp: RampConfig | None = None, jobs: int = 1):
        super().__init__()
        self.cfg, self.target, self.ramp, self.jobs = cfg, target, ramp or RampConfig(), jobs
        self._pool = None

    def _evaluate(self, X):
        args = [(self.cfg, x, self.target, self.ramp) for x in X]
        if self.jobs <= 1 or len(X) < 2:
            return [_solver_u(a) for a in args]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(max_workers=self.jobs)
        # map preserves candidate order regardless of completion order
        return list(self._pool.map(_solver_u, args, chunksize=max(1, len(args) // (4 * self.jobs))))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


class SurrogateBackend(FitnessBackend):
    """Network prediction clipped to [0, 1]; designs the model's reachability
    guard rejects score 1.0, as they would with the solver."""

    kind = "surrogate"

    def __init__(self, model: MLPModel):
        super().__init__()
        self.model = model

    def _evaluate(self, X):
        u = self.model.predict(X, clip=True)
        return np.where(self.model.reachable(X), u, WORST_FITNESS)


class FunctionBackend(FitnessBackend):
    """Wraps a vectorized callable; used for analytic test functions."""

    kind = "function"

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        super().__init__()
        self.fn = fn

    def _evaluate(self, X):
        return self.fn(X)


def _lex_argmin(X: np.ndarray, f: np.ndarray) -> int:
    f = np.where(np.isfinite(f), f, np.inf)
    ties = np.nonzero(f == f.min())[0]
    if len(ties) == 1:
        return int(ties[0])
    sub = X[ties]
    order = np.lexsort(sub.T[::-1])
    return int(ties[order[0]])


def _better(f_new, x_new, f_old, x_old) -> bool:
    if f_new < f_old:
        return True
    return f_new == f_old and tuple(x_new) < tuple(x_old)


@dataclass
class GridResult:
    best_x: np.ndarray
    best_u: float
    n_patterns: int
    n_evaluated: int
    n_skipped: int
    elapsed: float


def _write_chunk(fh, X: np.ndarray, f: np.ndarray) -> None:
    import pandas as pd

    frame = pd.DataFrame(X)
    frame["u"] = f
    frame.to_csv(fh, header=False, index=False, float_format="%.6g", lineterminator="\n")


def grid_search(
    space: DesignSpace,
    backend: FitnessBackend,
    database: str | Path | None = None,
    chunk_size: int = 1 << 18,
    max_solver_patterns: int = 10**6,
) -> GridResult:
    """Evaluate every grid pattern in lexicographic order and return the argmin.

    With ``database`` set, every (pattern, u) row is streamed to that CSV in
    chunks, which requires the surrogate backend.
    """
    t0 = time.perf_counter()
    levels = space.levels()
    shape = tuple(len(lv) for lv in levels)
    total = space.n_patterns
    if database is not None and backend.kind == "solver":
        raise ValueError("a full pattern database needs the surrogate backend")
    if backend.kind == "solver" and total > max_solver_patterns:
        raise ValueError(
            f"{total} exact solves exceed the budget of {max_solver_patterns}; "
            "use the surrogate backend or a reduced grid"
        )
    best_x, best_u = None, math.inf
    skipped = 0
    fh = open(database, "w", newline="") if database is not None else None
    try:
        if fh is not None:
            fh.write(",".join(feature_names(space.n_bolts) + ["u"]) + "\n")
        for start in range(0, total, chunk_size):
            idx = np.arange(start, min(start + chunk_size, total), dtype=np.int64)
            sub = np.unravel_index(idx, shape)
            X = np.column_stack([lv[s] for lv, s in zip(levels, sub)])
            f = backend.evaluate(X)
            bad = ~np.isfinite(f)
            if bad.any():
                skipped += int(bad.sum())
                log.warning("skipped %d patterns whose fitness could not be evaluated", int(bad.sum()))
            if fh is not None:
                _write_chunk(fh, X[~bad], f[~bad])
            if (~bad).any():
                # first minimum in a chunk is the lexicographically smallest one
                j = int(np.argmin(np.where(bad, np.inf, f)))
                if f[j] < best_u:
                    best_x, best_u = X[j].copy(), float(f[j])
    finally:
        if fh is not None:
            fh.close()
    if best_x is None:
        raise RuntimeError("no grid pattern could be evaluated")
    return GridResult(best_x, best_u, total, total - skipped, skipped, time.perf_counter() - t0)


@dataclass(frozen=True)
class GAConfig:
    population: int = 50
    tournament: int = 3
    crossover_prob: float = 0.9
    blend_alpha: float = 0.5
    mutation_prob: float = 0.1
    mutation_scale: float = 0.05
    elitism: int = 2
    max_iter: int = 200
    stall_window: int = 20
    stall_tol: float = 1e-3


@dataclass(frozen=True)
class PSOConfig:
    swarm: int = 40
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    velocity_clamp: float = 0.2
    max_iter: int = 200
    stall_window: int = 20
    stall_tol: float = 1e-3


@dataclass
class TraceRow:
    iteration: int
    best_u: float
    mean_u: float
    best_x: np.ndarray
    elapsed: float


@dataclass
class OptimizationTrace:
    method: str
    backend: str
    rows: list[TraceRow] = field(default_factory=list)
    best_x: np.ndarray | None = None
    best_u: float = math.inf
    backend_calls: int = 0
    elapsed: float = 0.0
    converged: bool = False

    @property
    def best_history(self) -> np.ndarray:
        return np.array([r.best_u for r in self.rows])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "best_u", "mean_u", "elapsed_s"])
            for r in self.rows:
                writer.writerow([r.iteration, f"{r.best_u:.6g}", f"{r.mean_u:.6g}", f"{r.elapsed:.6g}"])


def stalled(best_history, window: int = 20, tol: float = 1e-3) -> bool:
    """True when the best value changed by less than ``tol`` (relative) over ``window`` iterations."""
    if len(best_history) <= window:
        return False
    old, new = best_history[-1 - window], best_history[-1]
    if old == new:
        return True
    return abs(old - new) / max(abs(old), 1e-300) < tol


def _finite_mean(f: np.ndarray) -> float:
    ok = np.isfinite(f)
    return float(f[ok].mean()) if ok.any() else math.nan


def _clean(f: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(f), f, np.inf)


def ga_optimize(space: DesignSpace, backend: FitnessBackend,
                config: GAConfig | None = None, seed: int = 0) -> OptimizationTrace:
    """Real-coded GA: tournament selection, blend crossover, bounded Gaussian mutation, elitism."""
    cfg = config or GAConfig()
    rng = substream(seed, "ga")
    lo, hi = space.lower, space.upper
    span = hi - lo
    N, D = cfg.population, space.dim
    t0 = time.perf_counter()
    calls0 = backend.calls

    pop = space.snap(rng.uniform(lo, hi, size=(N, D)))
    fit = _clean(backend.evaluate(pop))
    trace = OptimizationTrace("ga", backend.kind)
    j = _lex_argmin(pop, fit)
    best_x, best_u = pop[j].copy(), float(fit[j])
    trace.rows.append(TraceRow(0, best_u, _finite_mean(fit), best_x.copy(), time.perf_counter() - t0))

    def tournament():
        contenders = rng.integers(0, N, size=cfg.tournament)
        return pop[contenders[_lex_argmin(pop[contenders], fit[contenders])]]

    for it in range(1, cfg.max_iter + 1):
        order = np.lexsort(tuple(pop.T[::-1]) + (fit,))
        n_elite = min(cfg.elitism, N)
        elites, elite_fit = pop[order[:n_elite]], fit[order[:n_elite]]
        children = []
        while len(children) < N - n_elite:
            p1, p2 = tournament(), tournament()
            if rng.random() < cfg.crossover_prob:
                low = np.minimum(p1, p2)
                width = np.abs(p1 - p2)
                a = low - cfg.blend_alpha * width
                b = low + width + cfg.blend_alpha * width
                pair = [rng.uniform(a, b), rng.uniform(a, b)]
            else:
                pair = [p1.copy(), p2.copy()]
            for c in pair:
                mask = rng.random(D) < cfg.mutation_prob
                c += mask * rng.normal(0.0, cfg.mutation_scale * span)
                children.append(c)
        children = space.snap(np.array(children[: N - n_elite]))
        child_fit = _clean(backend.evaluate(children))
        pop = np.vstack([elites, children])
        fit = np.concatenate([elite_fit, child_fit])
        j = _lex_argmin(pop, fit)
        if _better(fit[j], pop[j], best_u, best_x):
            best_x, best_u = pop[j].copy(), float(fit[j])
        trace.rows.append(TraceRow(it, best_u, _finite_mean(fit), best_x.copy(), time.perf_counter() - t0))
        if stalled(trace.best_history, cfg.stall_window, cfg.stall_tol):
            trace.converged = True
            break

    trace.best_x, trace.best_u = best_x, best_u
    trace.backend_calls = backend.calls - calls0
    trace.elapsed = time.perf_counter() - t0
    return trace


def pso_optimize(space: DesignSpace, backend: FitnessBackend,
                 config: PSOConfig | None = None, seed: int = 0) -> OptimizationTrace:
    """Global-best PSO with inertia, velocity clamping and reflecting walls.

    Particles start at rest, so a swarm with zero cognitive and social
    coefficients never moves.
    """
    cfg = config or PSOConfig()
    rng = substream(seed, "pso")
    lo, hi = space.lower, space.upper
    vmax = cfg.velocity_clamp * (hi - lo)
    N, D = cfg.swarm, space.dim
    t0 = time.perf_counter()
    calls0 = backend.calls

    x = space.snap(rng.uniform(lo, hi, size=(N, D)))
    v = np.zeros_like(x)
    f = _clean(backend.evaluate(x))
    pbest, pbest_f = x.copy(), f.copy()
    j = _lex_argmin(pbest, pbest_f)
    g, g_f = pbest[j].copy(), float(pbest_f[j])
    trace = OptimizationTrace("pso", backend.kind)
    trace.rows.append(TraceRow(0, g_f, _finite_mean(f), g.copy(), time.perf_counter() - t0))

    for it in range(1, cfg.max_iter + 1):
        r1 = rng.random((N, D))
        r2 = rng.random((N, D))
        v = cfg.inertia * v + cfg.cognitive * r1 * (pbest - x) + cfg.social * r2 * (g - x)
        v = np.clip(v, -vmax, vmax)
        x = x + v
        below, above = x < lo, x > hi
        x = np.where(below, 2 * lo - x, x)
        x = np.where(above, 2 * hi - x, x)
        v = np.where(below | above, -v, v)
        x = space.snap(x)
        f = _clean(backend.evaluate(x))
        improved = f < pbest_f
        pbest[improved], pbest_f[improved] = x[improved], f[improved]
        j = _lex_argmin(pbest, pbest_f)
        if _better(pbest_f[j], pbest[j], g_f, g):
            g, g_f = pbest[j].copy(), float(pbest_f[j])
        trace.rows.append(TraceRow(it, g_f, _finite_mean(f), g.copy(), time.perf_counter() - t0))
        if stalled(trace.best_history, cfg.stall_window, cfg.stall_tol):
            trace.converged = True
            break

    trace.best_x, trace.best_u = g, g_f
    trace.backend_calls = backend.calls - calls0
    trace.elapsed = time.perf_counter() - t0
    return trace


def verify_candidate(candidate, cfg: JointConfig, target: float = 30000.0,
                     ramp: RampConfig | None = None) -> DistributionResult:
    """Re-evaluate a design with the exact solver."""
    params = candidate if isinstance(candidate, BoltParams) else BoltParams.from_vector(list(candidate))
    return unevenness_at_load(cfg, params, target, ramp)
