"""Fixed-step RK4 with retraction back to the state manifold and sampled diagnostics."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .models import Ensemble, unitarity_defect

__all__ = [
    "IntegratorConfig", "Trajectory", "NumericalError", "MonitorViolation",
    "rk4_step", "retract", "integrate", "unitarity_defect",
]

RETRACTIONS = ("polar", "normalize", "none")
_POLAR_OK = ("unitary", "special-orthogonal")
_NORMALIZE_OK = ("sphere", "unit-norm-tensor", "rectangular-unit-norm")


class NumericalError(RuntimeError):
    """Non-finite values, a failed retraction, or an exhausted wall-clock budget."""


class MonitorViolation(RuntimeError):
    def __init__(self, message: str, frame=None, trajectory=None):
        super().__init__(message)
        self.frame = frame
        self.trajectory = trajectory


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    retraction: str | None = None  # None picks polar or normalize from the manifold
    retract_every: int = 1
    sample_every: int = 10
    auto_dt: bool = True
    store_snapshots: bool = False
    max_wall_time: float = 300.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= self.dt:
            raise ValueError(f"t_end ({self.t_end}) must be at least dt ({self.dt})")
        if self.retraction is not None and self.retraction not in RETRACTIONS:
            raise ValueError(f"retraction must be one of {RETRACTIONS}, got {self.retraction!r}")
        if self.retract_every < 1 or self.sample_every < 1:
            raise ValueError("retract_every and sample_every must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    frames: list
    snapshots: list | None = None
    dt: float = 0.0
    steps: int = 0
    wall_time: float = 0.0
    final: list[Ensemble] = field(default_factory=list)


def _check_finite(arrays: Sequence[np.ndarray], t: float, what: str) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite {what} at t={t:.6g}")


def rk4_step(rhs: Callable, states: Sequence[np.ndarray], dt: float, t: float = 0.0) -> list[np.ndarray]:
    """One classical Runge-Kutta step applied to all coupled components at once.

    ``rhs`` maps a list of arrays to a list of derivative arrays of the same shapes.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = [np.asarray(s) for s in states]

    def f(y):
        d = list(rhs(y))
        _check_finite(d, t, "derivative")
        return d

    k1 = f(x)
    k2 = f([a + 0.5 * dt * k for a, k in zip(x, k1)])
    k3 = f([a + 0.5 * dt * k for a, k in zip(x, k2)])
    k4 = f([a + dt * k for a, k in zip(x, k3)])
    return [a + (dt / 6.0) * (p + 2 * q + 2 * r + s) for a, p, q, r, s in zip(x, k1, k2, k3, k4)]


def _polar(X: np.ndarray, special: bool, max_defect: float | None) -> np.ndarray:
    u, s, vh = np.linalg.svd(X)
    if np.any(s <= np.finfo(float).tiny * 1e8):
        raise NumericalError("retraction of a rank-deficient matrix")
    if max_defect is not None:
        worst = float(np.abs(s - 1).max())
        if worst > max_defect:
            raise NumericalError(f"state drifted {worst:.3g} from its manifold (guard {max_defect})")
    if special:
        sign = np.sign(np.linalg.det(u @ vh))
        u = u.copy()
        u[..., :, -1] *= sign[..., None]
    return u @ vh


def _normalize(X: np.ndarray, max_defect: float | None) -> np.ndarray:
    norms = np.linalg.norm(X.reshape(X.shape[0], -1), axis=1)
    if np.any(norms == 0):
        raise NumericalError("cannot normalize a zero state")
    if max_defect is not None and np.abs(norms - 1).max() > max_defect:
        raise NumericalError(f"state drifted {np.abs(norms - 1).max():.3g} from its manifold (guard {max_defect})")
    return X / norms.reshape((-1,) + (1,) * (X.ndim - 1))


def _method_for(manifold: str, method: str | None) -> str:
    if method is None:
        return "polar" if manifold in _POLAR_OK else "normalize"
    if method == "polar" and manifold not in _POLAR_OK:
        raise ValueError(f"polar retraction is not valid on the {manifold} manifold")
    if method == "normalize" and manifold not in _NORMALIZE_OK:
        raise ValueError(f"normalize retraction is not valid on the {manifold} manifold")
    return method


def retract(state: Ensemble, method: str | None = None, max_defect: float | None = 0.5) -> Ensemble:
    """Project each state back to the manifold (nearest unitary/orthogonal factor or unit norm).

    ``max_defect`` bounds how far a state may have drifted; None disables the guard.
    """
    method = _method_for(state.manifold, method)
    X = state.states
    if method == "none":
        return state
    if method == "polar":
        if X.ndim != 3 or X.shape[1] != X.shape[2]:
            raise ValueError("polar retraction needs square matrices")
        special = state.manifold == "special-orthogonal"
        if special:
            X = X.real
        return state.with_states(_polar(X, special, max_defect))
    return state.with_states(_normalize(X, max_defect))


def _max_rate(rhs: Callable, states: list[np.ndarray]) -> float:
    d = rhs(states)
    return max(float(np.linalg.norm(x.reshape(x.shape[0], -1), axis=1).max()) for x in d)


def integrate(rhs: Callable, init: Sequence[Ensemble], cfg: IntegratorConfig,
              frame_fn: Callable | None = None, monitors: Sequence = (),
              stiffness: float | None = None) -> Trajectory:
    """Advance coupled ensembles with RK4, retracting and sampling on the configured schedule.

    ``rhs`` acts on the list of raw state arrays. ``frame_fn(t, ensembles)`` builds the
    sample record (default: :func:`diagnostics.make_frame`). Each monitor is an object
    with ``name``, ``hard``, ``violated``, ``update(frames, k)`` and ``finish(frames)``;
    a hard monitor that reports a violation aborts the run with :class:`MonitorViolation`. ``stiffness`` is an optional
    estimate of the largest decay rate, used by the automatic step choice.
    """
    from .diagnostics import make_frame

    init = list(init)
    for ens in init:
        ens.check()
    methods = [_method_for(e.manifold, cfg.retraction) for e in init]
    frame_fn = frame_fn or (lambda t, ens: make_frame(t, ens))

    dt, sample_every = cfg.dt, cfg.sample_every
    states = [e.states for e in init]
    if cfg.auto_dt:
        rate = _max_rate(rhs, states)
        while dt * rate >= 0.1 or (stiffness is not None and dt * stiffness >= 1.0):
            dt /= 2
            sample_every *= 2
    n_steps = int(round(cfg.t_end / dt))

    start = time.perf_counter()
    frames, times = [], []
    snapshots = [] if cfg.store_snapshots else None

    def record(step, ens):
        t = step * dt
        frame = frame_fn(t, ens)
        frames.append(frame)
        times.append(t)
        if snapshots is not None:
            snapshots.append([e.states.copy() for e in ens])
        if len(frames) >= 3:
            for mon in monitors:
                mon.update(frames, len(frames) - 2)
                if mon.hard and mon.violated:
                    raise MonitorViolation(f"monitor {mon.name} violated at t={frames[-2].t:.6g}",
                                           frame=frames[-2], trajectory=_traj())

    def _traj():
        return Trajectory(np.array(times), frames, snapshots, dt, len(times), time.perf_counter() - start)

    ens = init
    record(0, ens)
    for step in range(1, n_steps + 1):
        t = (step - 1) * dt
        states = rk4_step(rhs, [e.states for e in ens], dt, t)
        _check_finite(states, step * dt, "state")
        ens = [e.with_states(s) for e, s in zip(ens, states)]
        if step % cfg.retract_every == 0:
            try:
                ens = [retract(e, m) for e, m in zip(ens, methods)]
            except NumericalError as exc:
                raise NumericalError(f"{exc} at t={step * dt:.6g}") from exc
        if step % sample_every == 0 or step == n_steps:
            record(step, ens)
        if time.perf_counter() - start > cfg.max_wall_time:
            raise NumericalError(f"wall-clock budget of {cfg.max_wall_time} s exhausted at t={step * dt:.6g}")
    for mon in monitors:
        mon.finish(frames)
        if mon.hard and mon.violated:
            raise MonitorViolation(f"monitor {mon.name} violated", frame=frames[-1], trajectory=_traj())
    traj = _traj()
    traj.steps = n_steps
    traj.final = ens
    return traj
