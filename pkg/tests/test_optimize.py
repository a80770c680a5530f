import dataclasses
import itertools

import numpy as np
import pytest

from boltshare.joint import BoltParams
from boltshare.network import TargetLoadNotReached, unevenness_at_load
from boltshare.optimize import (
    WORST_FITNESS,
    DesignSpace,
    FunctionBackend,
    GAConfig,
    PSOConfig,
    SolverBackend,
    SurrogateBackend,
    ga_optimize,
    grid_search,
    pso_optimize,
    stalled,
    verify_candidate,
)

SPACE = DesignSpace()
TARGET = np.array([0.73, 1.21, 0.35, 6.4, 11.05, 3.3])


def sphere(X):
    return np.sum(((X - TARGET) / (SPACE.upper - SPACE.lower)) ** 2, axis=1)


def exact_u(cfg, x) -> float:
    try:
        return unevenness_at_load(cfg, BoltParams.from_vector(list(x))).u
    except TargetLoadNotReached:
        return WORST_FITNESS


def brute_force(cfg, levels):
    best = None
    for x in itertools.product(*levels):
        key = (exact_u(cfg, x), x)
        if best is None or key < best:
            best = key
    return best


def test_full_grid_size():
    levels = SPACE.levels()
    assert [len(lv) for lv in levels] == [10, 10, 10, 30, 30, 30]
    assert SPACE.n_patterns == 27_000_000
    assert levels[0][0] == 0.2 and levels[0][-1] == 2.0
    assert levels[3][0] == 0.5 and levels[3][-1] == 15.0


@pytest.mark.parametrize("optimizer", [ga_optimize, pso_optimize])
def test_sphere_minimum_is_found(optimizer):
    trace = optimizer(SPACE, FunctionBackend(sphere), seed=0)
    span = SPACE.upper - SPACE.lower
    assert np.max(np.abs(trace.best_x - TARGET) / span) < 1e-2
    assert trace.best_u < 1e-4


@pytest.mark.parametrize("optimizer", [ga_optimize, pso_optimize])
def test_trace_invariants(optimizer):
    trace = optimizer(SPACE, FunctionBackend(sphere), seed=3)
    best = trace.best_history
    assert np.all(np.diff(best) <= 0)
    for row in trace.rows:
        assert np.all(row.best_x >= SPACE.lower) and np.all(row.best_x <= SPACE.upper)
        np.testing.assert_allclose(row.best_x, np.round(row.best_x, 2), atol=1e-12)
    assert trace.backend_calls > 0
    assert trace.converged or len(trace.rows) == 201


@pytest.mark.parametrize("optimizer", [ga_optimize, pso_optimize])
def test_fixed_seed_is_reproducible(optimizer):
    a = optimizer(SPACE, FunctionBackend(sphere), seed=11)
    b = optimizer(SPACE, FunctionBackend(sphere), seed=11)
    assert [(r.best_u, r.mean_u) for r in a.rows] == [(r.best_u, r.mean_u) for r in b.rows]
    np.testing.assert_array_equal(a.best_x, b.best_x)


def test_frozen_single_particle():
    cfg = PSOConfig(swarm=1, cognitive=0.0, social=0.0, max_iter=30)
    trace = pso_optimize(SPACE, FunctionBackend(sphere), cfg, seed=2)
    assert len(set(trace.best_history)) == 1
    np.testing.assert_array_equal(trace.best_x, trace.rows[0].best_x)


def test_stopping_rule():
    assert not stalled([1.0] * 20, window=20)
    assert stalled([1.0] * 21, window=20)
    assert stalled([1.0] + [0.9995] * 20, window=20)
    assert not stalled([1.0] + [0.99] * 20, window=20)


def test_toy_grid_matches_brute_force(cfg):
    # two bolts, three clearance levels each, one torque level: a 3x3 grid
    two = dataclasses.replace(cfg, geometry=dataclasses.replace(cfg.geometry, n_bolts=2))
    space = DesignSpace(n_bolts=2, clearance_levels=(0.2, 0.6, 1.0), torque_levels=(7.0,))
    res = grid_search(space, SolverBackend(two))
    u, x = brute_force(two, space.levels())
    assert res.n_patterns == 9 and res.n_evaluated == 9
    assert res.best_u == u and tuple(res.best_x) == x
    assert u < WORST_FITNESS


def test_singleton_grid(cfg):
    space = DesignSpace(clearance_levels=(0.4,), torque_levels=(10.0,))
    res = grid_search(space, SolverBackend(cfg))
    assert list(res.best_x) == [0.4] * 3 + [10.0] * 3


def test_reduced_grid_matches_brute_force(cfg):
    space = DesignSpace(clearance_levels=(0.2, 1.0, 1.8), torque_levels=(1.0, 8.0, 15.0))
    res = grid_search(space, SolverBackend(cfg))
    u, x = brute_force(cfg, space.levels())
    assert res.best_u == u and tuple(res.best_x) == x


def test_ties_prefer_lexicographically_smallest():
    space = DesignSpace(clearance_levels=(0.2, 0.4), torque_levels=(1.0, 2.0))
    res = grid_search(space, FunctionBackend(lambda X: np.zeros(len(X))))
    assert list(res.best_x) == [0.2] * 3 + [1.0] * 3
    trace = ga_optimize(space, FunctionBackend(lambda X: np.zeros(len(X))), GAConfig(max_iter=5), seed=0)
    assert trace.best_u == 0.0


def test_database_streaming(tmp_path, full_fit):
    space = DesignSpace(clearance_levels=(0.2, 0.4), torque_levels=(5.0, 10.0, 15.0))
    path = tmp_path / "db.csv"
    backend = SurrogateBackend(full_fit.model)
    res = grid_search(space, backend, database=path, chunk_size=100)
    lines = path.read_text().splitlines()
    assert lines[0] == "bhc1,bhc2,bhc3,T1,T2,T3,u"
    assert len(lines) == 1 + space.n_patterns
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    # lexicographic order: the last column varies fastest
    assert list(rows[0, :6]) == [0.2, 0.2, 0.2, 5.0, 5.0, 5.0]
    assert list(rows[1, :6]) == [0.2, 0.2, 0.2, 5.0, 5.0, 10.0]
    assert rows[:, 6].min() == pytest.approx(res.best_u, abs=5e-6)


def test_solver_refuses_full_database(cfg, tmp_path):
    with pytest.raises(ValueError):
        grid_search(SPACE, SolverBackend(cfg), database=tmp_path / "db.csv")
    with pytest.raises(ValueError):
        grid_search(SPACE, SolverBackend(cfg))


def test_unreachable_designs_score_worst(cfg):
    backend = SolverBackend(cfg)
    f = backend.evaluate([[2.0, 2.0, 2.0, 0.5, 0.5, 0.5], [0.4, 0.2, 0.4, 11, 10, 15]])
    assert f[0] == WORST_FITNESS and f[1] < 0.1
    assert backend.calls == 2


def test_surrogate_guard_scores_unreachable_designs_worst(full_fit):
    backend = SurrogateBackend(full_fit.model)
    f = backend.evaluate([[2.0, 2.0, 2.0, 0.5, 0.5, 0.5]])
    assert f[0] == WORST_FITNESS


def test_parallel_backend_matches_serial(cfg):
    X = np.random.default_rng(0).uniform(SPACE.lower, SPACE.upper, (12, 6))
    serial = SolverBackend(cfg).evaluate(X)
    par = SolverBackend(cfg, jobs=2)
    try:
        np.testing.assert_array_equal(par.evaluate(X), serial)
    finally:
        par.close()


def test_verify_candidate_is_deterministic(cfg):
    a = verify_candidate([0.4, 0.2, 0.4, 11, 10, 15], cfg)
    b = verify_candidate(BoltParams((0.4, 0.2, 0.4), (11, 10, 15)), cfg)
    assert a == b


def test_solver_ga_small_run(cfg):
    trace = ga_optimize(SPACE, SolverBackend(cfg), GAConfig(population=20, max_iter=15), seed=0)
    assert trace.best_u == pytest.approx(verify_candidate(trace.best_x, cfg).u, rel=1e-12)
