"""Spring-ladder model of a single-lap multi-bolt joint under displacement control.

Node numbering for ``n`` bolts::

    0                load node (prescribed end displacement u)
    1 .. n           stations of the loaded plate, bolt 1 nearest the load
    n+1 .. 2n        stations of the supporting plate
    2n+1             ground

Plate segments of stiffness ``K_plate`` join neighbouring stations of the same
plate, the load node to station 1 and station 2n to ground. Bolt ``i`` joins
station ``i`` to station ``n+i`` with its current phase tangent stiffness.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .joint import BoltParams, JointConfig, StiffnessSet, stiffness_set

log = logging.getLogger(__name__)

# Tangent of a plateau (phase 3) element, as a fraction of its K1.
PLATEAU_REGULARIZATION = 1.0e-8

EVENT_MODES = ("substep", "fixed")


class TargetLoadNotReached(RuntimeError):
    """The ramp ended before the joint carried the requested total load."""

    def __init__(self, target: float, max_load: float):
        super().__init__(
            f"total load never reached {target:g} N (maximum {max_load:g} N); "
            "the ramp is too short or the joint too compliant"
        )
        self.target = target
        self.max_load = max_load


@dataclass(frozen=True)
class SpringNetwork:
    n_bolts: int
    k_plate: float
    bolts: tuple[StiffnessSet, ...]
    plate_elements: tuple[tuple[int, int], ...]
    end_elements: tuple[tuple[int, int], ...]
    bolt_elements: tuple[tuple[int, int], ...]

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_bolts + 2

    @property
    def load_node(self) -> int:
        return 0

    @property
    def ground_node(self) -> int:
        return 2 * self.n_bolts + 1


def build_network(cfg: JointConfig, params: BoltParams) -> SpringNetwork:
    n = cfg.n_bolts
    if params.n_bolts != n:
        raise ValueError(f"joint has {n} bolts but {params.n_bolts} design values were given")
    bolts = tuple(
        stiffness_set(cfg, c, T) for c, T in zip(params.clearances, params.torques)
    )
    plate = tuple((i, i + 1) for i in range(1, n)) + tuple(
        (n + i, n + i + 1) for i in range(1, n)
    )
    return SpringNetwork(
        n_bolts=n,
        k_plate=bolts[0].K_plate,
        bolts=bolts,
        plate_elements=plate,
        end_elements=((0, 1), (2 * n, 2 * n + 1)),
        bolt_elements=tuple((i, n + i) for i in range(1, n + 1)),
    )


@dataclass
class BoltElementState:
    phase: int
    delta: float
    force: float
    spring: StiffnessSet

    @property
    def knees(self) -> tuple[float, float, float]:
        return self.spring.knees

    @property
    def tangent(self) -> float:
        """Stiffness used in the global tangent matrix (regularized on the plateau)."""
        if self.phase == 3:
            return PLATEAU_REGULARIZATION * self.spring.K1
        return self.spring.phase_stiffness(self.phase)

    @property
    def physical_tangent(self) -> float:
        return self.spring.phase_stiffness(self.phase)

    def next_knee(self) -> float | None:
        return self.knees[self.phase - 1] if self.phase < 4 else None

    def update_phase(self, tol: float = 1e-12) -> bool:
        """Move through every knee already reached; returns True if the phase changed."""
        start = self.phase
        while self.phase < 4:
            knee = self.knees[self.phase - 1]
            if self.delta >= knee - tol * max(1.0, abs(knee)):
                self.phase += 1
            else:
                break
        return self.phase != start


@dataclass
class SolveState:
    u: float
    P: float
    bolts: list[BoltElementState]
    _cache: tuple | None = field(default=None, repr=False)

    @property
    def phases(self) -> tuple[int, ...]:
        return tuple(b.phase for b in self.bolts)


def initial_state(net: SpringNetwork) -> SolveState:
    bolts = [BoltElementState(1, 0.0, 0.0, s) for s in net.bolts]
    for b in bolts:
        # zero-torque stations may start past their first knees
        b.update_phase()
    return SolveState(u=0.0, P=0.0, bolts=bolts)


@dataclass(frozen=True)
class HistoryRecord:
    u: float
    P: float
    forces: tuple[float, ...]
    phases: tuple[int, ...]
    event: bool = False


def _record(state: SolveState, event: bool) -> HistoryRecord:
    return HistoryRecord(
        state.u, state.P, tuple(b.force for b in state.bolts), state.phases, event
    )


def assemble_tangent(net: SpringNetwork, states: Iterable[BoltElementState]) -> np.ndarray:
    """Full nodal stiffness matrix (all 2n+2 nodes) for the current phases."""
    K = np.zeros((net.n_nodes, net.n_nodes))

    def add(i, j, k):
        K[i, i] += k
        K[j, j] += k
        K[i, j] -= k
        K[j, i] -= k

    for i, j in net.plate_elements + net.end_elements:
        add(i, j, net.k_plate)
    for (i, j), st in zip(net.bolt_elements, states):
        add(i, j, st.tangent)
    return K


def tangent_solve(net: SpringNetwork, states: Iterable[BoltElementState]) -> np.ndarray:
    """Nodal displacement increments for a unit increment of the end displacement.

    Returns the full nodal vector, so entry 0 is 1 and the ground entry is 0.
    """
    K = assemble_tangent(net, states)
    free = np.arange(1, net.n_nodes - 1)
    rhs = -K[free, net.load_node]
    x = np.empty(net.n_nodes)
    x[0], x[-1] = 1.0, 0.0
    try:
        x[free] = np.linalg.solve(K[np.ix_(free, free)], rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - regularization prevents it
        raise RuntimeError("singular tangent matrix after plateau regularization") from exc
    return x


def _rates(net: SpringNetwork, state: SolveState):
    """Cached (bolt relative-displacement rates, load rate) for the current phases."""
    key = state.phases
    if state._cache is None or state._cache[0] != key:
        x = tangent_solve(net, state.bolts)
        n = net.n_bolts
        rates = x[1 : n + 1] - x[n + 1 : 2 * n + 1]
        end_force_rate = net.k_plate * (x[0] - x[1])
        leak_rate = sum(
            b.tangent * r for b, r in zip(state.bolts, rates) if b.phase == 3
        )
        state._cache = (key, rates, end_force_rate - leak_rate)
    return state._cache[1], state._cache[2]


def _apply(state: SolveState, rates: np.ndarray, load_rate: float, step: float) -> None:
    for b, r in zip(state.bolts, rates):
        d_delta = r * step
        b.delta += d_delta
        b.force += b.physical_tangent * d_delta
    state.P += load_rate * step
    state.u += step


def _carries(state: SolveState, load: float) -> bool:
    return state.P >= load * (1.0 - 1e-12)


def advance(
    net: SpringNetwork,
    state: SolveState,
    du: float,
    mode: str = "substep",
    stop_at_load: float | None = None,
) -> list[HistoryRecord]:
    """Apply an end-displacement increment ``du`` and return the new history records.

    In ``substep`` mode the increment is split wherever a bolt reaches its next
    knee (and, when ``stop_at_load`` is given, where the total load reaches it),
    so every segment is exactly linear. ``fixed`` mode keeps the tangent of the
    step start for the whole step and switches phases afterwards.
    """
    if not du > 0.0:
        raise ValueError("displacement increment must be positive")
    if mode not in EVENT_MODES:
        raise ValueError(f"mode must be one of {EVENT_MODES}")

    records: list[HistoryRecord] = []
    if mode == "fixed":
        rates, load_rate = _rates(net, state)
        _apply(state, rates, load_rate, du)
        for b in state.bolts:
            b.update_phase()
        records.append(_record(state, event=False))
        return records

    remaining = du
    stalls = 0
    while remaining > 0.0:
        rates, load_rate = _rates(net, state)
        step, hit = remaining, None
        for i, (b, r) in enumerate(zip(state.bolts, rates)):
            knee = b.next_knee()
            if knee is not None and r > 0.0:
                s = (knee - b.delta) / r
                if s < step:
                    step, hit = max(s, 0.0), i
        load_hit = False
        if stop_at_load is not None and load_rate > 0.0 and not _carries(state, stop_at_load):
            s = (stop_at_load - state.P) / load_rate
            if s <= step:
                step, hit, load_hit = s, None, True

        _apply(state, rates, load_rate, step)
        if hit is not None:
            state.bolts[hit].delta = state.bolts[hit].next_knee()
        changed = [b.update_phase() for b in state.bolts]
        if load_hit:
            records.append(_record(state, event=True))
            return records
        if step >= remaining:
            remaining = 0.0
        else:
            remaining -= step
            if any(changed):
                records.append(_record(state, event=True))
        if step == 0.0 and not any(changed):
            stalls += 1
            if stalls > 4 * net.n_bolts:  # pragma: no cover - defensive
                raise RuntimeError("incremental solver stalled at a knee")
        else:
            stalls = 0
    records.append(_record(state, event=False))
    return records


@dataclass(frozen=True)
class RampConfig:
    increment: float = 0.005
    total: float = 3.0
    mode: str = "substep"

    def __post_init__(self):
        if not (self.increment > 0.0 and self.total > 0.0):
            raise ValueError("ramp increment and total displacement must be positive")
        if self.mode not in EVENT_MODES:
            raise ValueError(f"mode must be one of {EVENT_MODES}")

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.total / self.increment - 1e-9)))


@dataclass
class LoadHistory:
    n_bolts: int
    records: list[HistoryRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def u(self) -> np.ndarray:
        return np.array([r.u for r in self.records])

    @property
    def P(self) -> np.ndarray:
        return np.array([r.P for r in self.records])

    @property
    def forces(self) -> np.ndarray:
        return np.array([r.forces for r in self.records]).reshape(-1, self.n_bolts)

    @property
    def phases(self) -> np.ndarray:
        return np.array([r.phases for r in self.records], dtype=int).reshape(-1, self.n_bolts)

    def header(self) -> list[str]:
        n = self.n_bolts
        return (
            ["u_mm", "P_N"]
            + [f"F{i}_N" for i in range(1, n + 1)]
            + [f"phase{i}" for i in range(1, n + 1)]
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for r in self.records:
                writer.writerow(
                    [f"{r.u:.6g}", f"{r.P:.6g}"]
                    + [f"{f:.6g}" for f in r.forces]
                    + [str(p) for p in r.phases]
                )


def run(
    cfg: JointConfig,
    params: BoltParams,
    ramp: RampConfig | None = None,
    stop_at_load: float | None = None,
    record_steps: bool = True,
) -> LoadHistory:
    """Displacement-controlled ramp from zero to ``ramp.total``.

    With ``record_steps=False`` (substep mode only) the ramp is applied as a
    single increment, so only knee events and the end point are recorded; the
    response is piecewise linear between them, which is all a load-level query
    needs.
    """
    ramp = ramp or RampConfig()
    net = build_network(cfg, params)
    state = initial_state(net)
    records = [_record(state, event=False)]

    if not record_steps and ramp.mode == "substep":
        records += advance(net, state, ramp.total, "substep", stop_at_load)
        return LoadHistory(net.n_bolts, records)

    for k in range(ramp.n_steps):
        target_u = min(ramp.total, (k + 1) * ramp.increment)
        du = target_u - state.u
        if du <= 0.0:
            continue
        records += advance(net, state, du, ramp.mode, stop_at_load)
        if stop_at_load is not None and _carries(state, stop_at_load):
            break
    return LoadHistory(net.n_bolts, records)


@dataclass(frozen=True)
class DistributionResult:
    target_load: float
    loads: tuple[float, ...]
    ratios: tuple[float, ...]
    u: float

    def to_dict(self) -> dict:
        return {
            "target_load_N": self.target_load,
            "loads_N": list(self.loads),
            "ratios": list(self.ratios),
            "u": self.u,
        }


def unevenness(loads) -> float:
    """(max - min) / (max + min) of the bolt loads."""
    loads = np.asarray(loads, dtype=float)
    hi, lo = loads.max(), loads.min()
    if hi + lo == 0.0:
        raise ValueError("unevenness undefined when every bolt load is zero")
    return float((hi - lo) / (hi + lo))


def distribution_at_load(history: LoadHistory, target: float = 30000.0) -> DistributionResult:
    P = history.P
    reached = np.nonzero(P >= target * (1.0 - 1e-12))[0]
    if reached.size == 0:
        raise TargetLoadNotReached(target, float(P.max()))
    j = int(reached[0])
    F = history.forces
    if j == 0:
        loads = F[0]
    else:
        P0, P1 = P[j - 1], P[j]
        s = 1.0 if P1 == P0 else min(max((target - P0) / (P1 - P0), 0.0), 1.0)
        loads = F[j - 1] + s * (F[j] - F[j - 1])
    total = loads.sum()
    return DistributionResult(
        target_load=target,
        loads=tuple(float(f) for f in loads),
        ratios=tuple(float(f / total) for f in loads),
        u=unevenness(loads),
    )


def unevenness_at_load(
    cfg: JointConfig,
    params: BoltParams,
    target: float = 30000.0,
    ramp: RampConfig | None = None,
) -> DistributionResult:
    """Fast path used as a fitness evaluation: stops as soon as the target load is carried."""
    ramp = ramp or RampConfig()
    history = run(cfg, params, ramp, stop_at_load=target, record_steps=ramp.mode == "fixed")
    return distribution_at_load(history, target)
