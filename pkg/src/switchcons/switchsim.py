"""Switching schedules and the two propagation engines.

* :func:`propagate_modal_closed_form` evaluates the exact solution in modal
  coordinates as products of per-interval exponentials ``exp(-gamma L_k h_k)``.
* The ``simulate_*`` functions integrate the stacked closed loop with fixed-step
  fourth-order Runge-Kutta, holding the active Laplacian constant on each
  dwell interval (switch times are always grid points).

State arrays are shaped ``(T, m, n)``: time sample, agent, state component.
Mode indices in a :class:`Schedule` are 0-based positions in the family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import numkit
from .errors import DimensionError, DivergenceError, NotApplicableError, ScheduleError
from .netgraph import LaplacianMatrix, is_connected, is_strongly_connected, spectral_summary
from .synth import AgentModel, GainDesign, ModalForm

DIVERGENCE_LIMIT = 1e150
_TIME_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GraphFamily:
    members: tuple
    lambda2s: tuple = field(init=False)

    def __init__(self, members: Sequence[LaplacianMatrix]):
        members = tuple(members)
        if not members:
            raise ValueError("graph family is empty")
        m = members[0].m
        if any(lap.m != m for lap in members):
            raise DimensionError("all family members must have the same agent count")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "lambda2s",
                           tuple(spectral_summary(lap).algebraic_connectivity for lap in members))

    def __len__(self):
        return len(self.members)

    def __getitem__(self, k) -> LaplacianMatrix:
        return self.members[k]

    def __iter__(self):
        return iter(self.members)

    @property
    def m(self) -> int:
        return self.members[0].m

    @property
    def lambda2_min(self) -> float:
        return min(self.lambda2s)

    @property
    def argmin_lambda2(self) -> int:
        return int(np.argmin(self.lambda2s))

    @property
    def all_undirected(self) -> bool:
        return all(lap.undirected for lap in self.members)

    @property
    def all_connected(self) -> bool:
        return all(is_connected(lap.source) for lap in self.members)

    @property
    def all_strongly_connected(self) -> bool:
        return all(is_strongly_connected(lap.source) for lap in self.members)


def as_family(family) -> GraphFamily:
    if isinstance(family, GraphFamily):
        return family
    if isinstance(family, LaplacianMatrix):
        return GraphFamily([family])
    return GraphFamily(family)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Piecewise-constant switching signal on ``[switch_times[0], horizon]``.

    ``modes[k]`` is active on the interval that starts at ``switch_times[k]``.
    The final interval is cut at the horizon and is exempt from the dwell floor.
    """
    switch_times: np.ndarray
    modes: np.ndarray
    horizon: float
    dwell_floor: float
    seed: Optional[int] = None

    def __post_init__(self):
        t = np.asarray(self.switch_times, dtype=float).ravel()
        modes = np.asarray(self.modes, dtype=int).ravel()
        if t.size == 0 or t.size != modes.size:
            raise ScheduleError("need one mode per switch time and at least one interval")
        if not self.dwell_floor > 0:
            raise ScheduleError("dwell floor must be positive")
        if np.any(modes < 0):
            raise ScheduleError("mode indices must be nonnegative")
        dwell = np.diff(t)
        if np.any(dwell < self.dwell_floor - _TIME_TOL):
            k = int(np.argmax(dwell < self.dwell_floor - _TIME_TOL))
            raise ScheduleError(f"dwell {dwell[k]:.6g} at switch {k + 1} is below the floor {self.dwell_floor}")
        if not self.horizon > t[-1]:
            raise ScheduleError("horizon must exceed the last switch time")
        t.setflags(write=False)
        modes.setflags(write=False)
        object.__setattr__(self, "switch_times", t)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def start(self) -> float:
        return float(self.switch_times[0])

    @property
    def boundaries(self) -> np.ndarray:
        return np.append(self.switch_times, self.horizon)

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def intervals(self):
        """Yield ``(start, end, mode)`` for each dwell interval."""
        b = self.boundaries
        for k, mode in enumerate(self.modes):
            yield float(b[k]), float(b[k + 1]), int(mode)

    def mode_at(self, t: float) -> int:
        """sigma(t), continuous from the left."""
        k = int(np.searchsorted(self.switch_times, t, side="left")) - 1
        return int(self.modes[max(k, 0)])

    def check_family(self, family) -> None:
        v = len(family)
        if int(self.modes.max()) >= v:
            raise DimensionError(f"schedule uses mode {int(self.modes.max())} but the family has {v} members")

    @classmethod
    def constant(cls, mode: int, horizon: float, dwell: float = 1.0, start: float = 0.0) -> "Schedule":
        """One mode held throughout, with switch instants every ``dwell`` time units."""
        times = np.arange(start, horizon - _TIME_TOL, dwell)
        return cls(times, np.full(times.size, mode), horizon, min(dwell, horizon - start))


def generate_schedule(seed, v: int, dwell_low: float, dwell_high: float, horizon: float,
                      dwell_floor: Optional[float] = None, start: float = 0.0) -> Schedule:
    """Random switching signal: i.i.d. uniform dwell times and uniform modes."""
    if not (0 < dwell_low <= dwell_high) or not math.isfinite(dwell_high):
        raise ScheduleError(f"need 0 < dwell_low <= dwell_high, got [{dwell_low}, {dwell_high}]")
    if v < 1:
        raise ScheduleError("need at least one mode")
    if not horizon > start:
        raise ScheduleError("horizon must be after the start time")
    rng = np.random.default_rng(seed)
    times, modes = [], []
    t = float(start)
    while t < horizon - _TIME_TOL:
        times.append(t)
        modes.append(int(rng.integers(v)))
        t += float(rng.uniform(dwell_low, dwell_high))
    floor = dwell_low if dwell_floor is None else dwell_floor
    return Schedule(np.array(times), np.array(modes), float(horizon), floor, seed=seed)


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    agent_states: np.ndarray
    error_series: np.ndarray
    compensator_states: Optional[np.ndarray] = None
    observer_states: Optional[np.ndarray] = None
    switch_indices: Optional[np.ndarray] = None
    coordinates: str = "w"

    @property
    def m(self) -> int:
        return self.agent_states.shape[1]

    @property
    def n(self) -> int:
        return self.agent_states.shape[2]

    def at_switches(self) -> tuple:
        idx = self.switch_indices if self.switch_indices is not None else np.arange(self.times.size)
        return self.times[idx], self.agent_states[idx]


def consensus_error(traj) -> np.ndarray:
    """Max over all agent pairs of the infinity-norm state difference, per sample."""
    states = traj.agent_states if isinstance(traj, Trajectory) else np.asarray(traj)
    if states.ndim == 2:
        states = states[None]
    if states.shape[1] < 2:
        raise ValueError("consensus error needs at least two agents")
    if not np.iscomplexobj(states):
        return np.max(states.max(axis=1) - states.min(axis=1), axis=-1)
    diff = np.abs(states[:, :, None, :] - states[:, None, :, :])
    return diff.max(axis=(1, 2, 3))


# --------------------------------------------------------------------------
# closed-form modal engine

def _check_x0(x0, m, n, name="x0"):
    x0 = np.asarray(x0)
    if x0.shape != (m, n):
        raise DimensionError(f"{name} must have shape (m, n) = {(m, n)}, got {x0.shape}")
    return x0


def propagate_modal_closed_form(mf: ModalForm, gammas, family, schedule: Schedule, x0_modal,
                                samples_per_interval: int = 1) -> Trajectory:
    """Exact modal-coordinate solution at every switch time.

    Each mode (or Jordan block with a single shared gain) evolves as
    ``x^q(t) = e^{lambda_q t} sum_s t^s/s! W_0^k x^{q+s}(t_0)`` where ``W_0^k``
    is the ordered product of ``exp(-gamma L_j h_j)`` over past intervals.
    """
    family = as_family(family)
    schedule.check_family(family)
    gammas = np.asarray(gammas, dtype=float)
    if gammas.shape != (mf.n,):
        raise DimensionError(f"expected {mf.n} gains, got shape {gammas.shape}")
    m, n = family.m, mf.n
    x0 = _check_x0(x0_modal, m, n)
    blocks = []
    for sl in mf.block_slices():
        g = gammas[sl]
        if np.any(g != g[0]):
            raise NotApplicableError("closed form needs one gain per Jordan block; "
                                     "use verify.oracle_full_kronecker for general gains")
        blocks.append((sl, complex(mf.S_diag[sl.start]), float(g[0])))
    complex_out = np.iscomplexobj(x0) or any(lam.imag != 0 for _, lam, _ in blocks)
    dtype = complex if complex_out else float

    distinct = sorted({g for _, _, g in blocks})
    products = {g: np.eye(m) for g in distinct}
    t0 = schedule.start

    def evaluate(tau, prods):
        x = np.empty((m, n), dtype=dtype)
        for sl, lam, g in blocks:
            P = prods[g]
            size = sl.stop - sl.start
            grow = np.exp(lam * tau) if complex_out else math.exp(lam.real * tau)
            for q in range(size):
                acc = np.zeros(m, dtype=dtype)
                for s in range(size - q):
                    acc = acc + (tau ** s / math.factorial(s)) * (P @ x0[:, sl.start + q + s])
                x[:, sl.start + q] = grow * acc
        return x

    times, states, switch_idx = [t0], [evaluate(0.0, products)], [0]
    sub = max(1, int(samples_per_interval))
    for start, end, mode in schedule.intervals():
        L = family[mode].L
        dt = (end - start) / sub
        steps = {g: numkit.expm(-g * L, dt) for g in distinct}
        for j in range(1, sub + 1):
            products = {g: steps[g] @ products[g] for g in distinct}
            t = start + j * dt if j < sub else end
            times.append(t)
            states.append(evaluate(t - t0, products))
        switch_idx.append(len(times) - 1)
    states = np.array(states)
    return Trajectory(times=np.array(times), agent_states=states, error_series=consensus_error(states),
                      switch_indices=np.array(switch_idx), coordinates="modal")


# --------------------------------------------------------------------------
# Runge-Kutta engine

def rk4_step(f: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def default_step(schedule: Schedule) -> float:
    return min(schedule.dwell_floor / 50, 1e-2)


def rk4_propagator(M, dt: float) -> np.ndarray:
    """One classical RK4 step for ``y' = M y`` as a matrix: the degree-4
    Taylor polynomial of ``dt M``."""
    M = np.asarray(M)
    I = np.eye(M.shape[0])
    hM = dt * M
    return I + hM @ (I + hM @ (I / 2 + hM @ (I / 6 + hM / 24)))


def _integrate(generators, agent_generator, layout, schedule: Schedule, y0, step):
    """Fixed-step RK4 for ``y' = M_{sigma(t)} y`` on agent-stacked states.

    ``layout = (blocks, m, n)`` describes ``y`` as ``blocks`` consecutive
    agent-major ``m x n`` arrays. Offsets from agent 0 go through the coupled
    generator and agent 0 itself through ``agent_generator`` (the loop with
    the coupling removed), so agents in exact agreement stay in exact
    agreement. Returns times, states and switch indices.
    """
    if step is None:
        step = default_step(schedule)
    if not step > 0:
        raise ValueError("step must be positive")
    if step > schedule.dwell_floor / 10 + _TIME_TOL:
        raise ValueError(f"step {step} is too large for dwell floor {schedule.dwell_floor} (max floor/10)")
    blocks, m, n = layout
    grid = np.arange(blocks * m * n).reshape(blocks, m, n)
    ref_idx = grid[:, 0, :].ravel()
    spread = np.broadcast_to(np.arange(blocks * n).reshape(blocks, 1, n), grid.shape).ravel()
    y = np.array(y0, dtype=complex if np.iscomplexobj(y0) else float)
    times, states, switch_idx = [schedule.start], [y.copy()], [0]
    for start, end, mode in schedule.intervals():
        count = max(1, int(math.ceil((end - start) / step - 1e-9)))
        dt = (end - start) / count
        P = rk4_propagator(generators[mode], dt)
        P0 = rk4_propagator(agent_generator, dt)
        for j in range(1, count + 1):
            lead = y[ref_idx]
            y = P @ (y - lead[spread]) + (P0 @ lead)[spread]
            t = start + j * dt if j < count else end
            if not np.all(np.isfinite(y)) or np.abs(y).max() > DIVERGENCE_LIMIT:
                raise DivergenceError(f"state diverged at t={t:.6g}", time=t)
            times.append(t)
            states.append(y)
        switch_idx.append(len(times) - 1)
    return np.array(times), np.array(states), np.array(switch_idx)


def _split(states, blocks, m, n):
    T = states.shape[0]
    return [states[:, k * m * n:(k + 1) * m * n].reshape(T, m, n) for k in range(blocks)]


def diffusive_matrix(A, Phi, L) -> np.ndarray:
    """Generator of ``z_i' = A z_i + Phi sum_j alpha_ij (z_j - z_i)`` on agent-major stacking."""
    m = L.shape[0]
    return numkit.kron(np.eye(m), A) - numkit.kron(L, Phi)


def simulate_diffusive_loop(A, Phi, family, schedule: Schedule, z0, step=None) -> Trajectory:
    """RK4 integration of the reduced loop in ``z`` coordinates."""
    family = as_family(family)
    schedule.check_family(family)
    A = numkit.as_matrix(A, "A", square=True)
    m, n = family.m, A.shape[0]
    z0 = _check_x0(z0, m, n, "z0")
    Phi = numkit.as_matrix(Phi, "Phi", square=True)
    mats = [diffusive_matrix(A, Phi, lap.L) for lap in family]
    times, states, idx = _integrate(mats, A, (1, m, n), schedule, z0.ravel(), step)
    z = states.reshape(times.size, m, n)
    return Trajectory(times=times, agent_states=z, error_series=consensus_error(z),
                      switch_indices=idx, coordinates="z")


def compensator_matrix(model: AgentModel, design: GainDesign, L) -> np.ndarray:
    m = L.shape[0]
    I = np.eye(m)
    A, BK, Phi = model.A, model.B @ design.K, design.Phi
    top = np.hstack([numkit.kron(I, A), numkit.kron(I, BK)])
    bottom = np.hstack([numkit.kron(L, Phi), numkit.kron(I, A + BK) - numkit.kron(L, Phi)])
    return np.vstack([top, bottom])


def _require_K(model, design):
    if design.K is None:
        raise NotApplicableError("design has no stabilising K")
    if design.K.shape != (model.n_B, model.n):
        raise DimensionError(f"K must have shape {(model.n_B, model.n)}")


def simulate_compensator_loop(model: AgentModel, design: GainDesign, family, schedule: Schedule,
                              w0, eta0=None, step=None) -> Trajectory:
    """Agents ``w' = A w + B K eta`` with the diffusive dynamic compensator.

    ``eta0`` defaults to zero.
    """
    family = as_family(family)
    schedule.check_family(family)
    _require_K(model, design)
    m, n = family.m, model.n
    w0 = _check_x0(w0, m, n, "w0")
    eta0 = np.zeros((m, n)) if eta0 is None else _check_x0(eta0, m, n, "eta0")
    mats = [compensator_matrix(model, design, lap.L) for lap in family]
    single = compensator_matrix(model, design, np.zeros((1, 1)))
    y0 = np.concatenate([w0.ravel(), eta0.ravel()])
    times, states, idx = _integrate(mats, single, (2, m, n), schedule, y0, step)
    w, eta = _split(states, 2, m, n)
    return Trajectory(times=times, agent_states=w, compensator_states=eta,
                      error_series=consensus_error(w), switch_indices=idx, coordinates="w")


def observer_matrix(model: AgentModel, design: GainDesign, L) -> np.ndarray:
    m = L.shape[0]
    I = np.eye(m)
    A, BK, Phi = model.A, model.B @ design.K, design.Phi
    HC = design.H @ model.C
    Z = np.zeros((m * model.n, m * model.n))
    LP = numkit.kron(L, Phi)
    rows = [
        [numkit.kron(I, A), Z, numkit.kron(I, BK)],
        [-numkit.kron(I, HC), numkit.kron(I, A + HC), numkit.kron(I, BK)],
        [Z, LP, numkit.kron(I, A + BK) - LP],
    ]
    return np.block(rows)


def simulate_observer_loop(model: AgentModel, design: GainDesign, family, schedule: Schedule,
                           w0, wtilde0, eta0=None, step=None) -> Trajectory:
    """Observer-based compensator: the diffusive term uses the estimates ``w~``."""
    family = as_family(family)
    schedule.check_family(family)
    _require_K(model, design)
    if model.C is None or design.H is None:
        raise NotApplicableError("observer loop needs C in the model and H in the design")
    m, n = family.m, model.n
    w0 = _check_x0(w0, m, n, "w0")
    wt0 = _check_x0(wtilde0, m, n, "wtilde0")
    eta0 = np.zeros((m, n)) if eta0 is None else _check_x0(eta0, m, n, "eta0")
    mats = [observer_matrix(model, design, lap.L) for lap in family]
    single = observer_matrix(model, design, np.zeros((1, 1)))
    y0 = np.concatenate([w0.ravel(), wt0.ravel(), eta0.ravel()])
    times, states, idx = _integrate(mats, single, (3, m, n), schedule, y0, step)
    w, wt, eta = _split(states, 3, m, n)
    return Trajectory(times=times, agent_states=w, observer_states=wt, compensator_states=eta,
                      error_series=consensus_error(w), switch_indices=idx, coordinates="w")


# --------------------------------------------------------------------------

def asymptotic_consensus_value(mf: ModalForm, graph, z0, t):
    """Predicted common trajectory ``sum_{i<=r} q_i e^{lambda_i t} xi_1' x^i(0)``
    on a fixed graph; ``t`` may be a scalar or an array of times."""
    if isinstance(graph, LaplacianMatrix):
        lap = graph
    else:
        fam = as_family(graph)
        if len(fam) > 1:
            raise NotApplicableError("consensus value under switching depends on the realised "
                                     "sequence; only the fixed-graph prediction is available")
        lap = fam[0]
    if mf.jordan_blocks is not None and any(size > 1 for lam, size in mf.jordan_blocks
                                            if lam.real > -1e-12):
        raise NotApplicableError("prediction needs a diagonalizable unstable block")
    xi = spectral_summary(lap).left1
    z0 = _check_x0(z0, lap.m, mf.n, "z0")
    x0 = z0 @ mf.Q_inv.T
    mu = xi @ x0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((ts.size, mf.n), dtype=complex)
    for i in range(mf.r):
        out += np.outer(np.exp(mf.S_diag[i] * ts) * mu[i], mf.Q[:, i])
    out = numkit.real_if_close(out, tol=1e-9)
    return out[0] if np.ndim(t) == 0 else out
