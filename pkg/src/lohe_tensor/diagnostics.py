"""Aggregation functionals, potentials, threshold constants and inequality monitors."""
from __future__ import annotations

import logging
import math
from functools import reduce
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .models import Ensemble, _dagger, _gram, feasibility_defect, manifold_norm2

log = logging.getLogger(__name__)

GROUPS = ("unitary", "special-orthogonal")


@dataclass
class DiagnosticsFrame:
    t: float
    D_U: float = 0.0
    D_V: float = 0.0
    S_U: float = 0.0
    S_V: float = 0.0
    L: float = 0.0
    F: float | None = None
    E: float = math.nan
    V_lt: float | None = None
    defect: float = 0.0
    monitor_slack: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def row(self, monitor_names: Sequence[str] = ()) -> list[float]:
        def num(x):
            return math.nan if x is None else float(x)
        base = [self.t, self.D_U, self.D_V, self.S_U, self.S_V, self.L,
                num(self.F), num(self.E), num(self.V_lt), self.defect]
        return base + [num(self.monitor_slack.get(name)) for name in monitor_names]


FRAME_COLUMNS = ["t", "D_U", "D_V", "S_U", "S_V", "L", "F", "E", "V_lt", "defect"]


@dataclass
class ThresholdReport:
    alpha: float
    kappa_c: float
    s_star: float
    nu: tuple[float, float, float] | None
    group: str
    g_max: float = 0.0

    def as_dict(self) -> dict:
        nu = self.nu
        return {"alpha": self.alpha, "kappa_c": self.kappa_c, "s_star": self.s_star,
                "nu0": nu[0] if nu else None, "nu1": nu[1] if nu else None,
                "nu2": nu[2] if nu else None, "group": self.group}


# ---------------------------------------------------------------- functionals

def _states(x) -> np.ndarray:
    return x.states if isinstance(x, Ensemble) else np.asarray(x)


def _ref_norm2(x, ref: float | None) -> float:
    if ref is not None:
        return float(ref)
    if isinstance(x, Ensemble):
        return manifold_norm2(x.manifold, x.shape)
    raise ValueError("a reference norm is required for raw arrays")


def diameters(ens, ref_norm2: float | None = None) -> tuple[float, float]:
    """(max_ij ||U_i - U_j||_F, max_ij |n - <U_i, U_j>|) with n the squared norm on the manifold."""
    X = _states(ens)
    if X.shape[0] == 0:
        raise ValueError("empty ensemble")
    n = _ref_norm2(ens, ref_norm2)
    flat = X.reshape(X.shape[0], -1)
    diff = flat[:, None, :] - flat[None, :, :]
    D = float(np.sqrt((np.abs(diff) ** 2).sum(axis=-1)).max())
    S = float(np.abs(n - _gram(X)).max())
    return D, S


def total_functional(u, v, ref_u: float | None = None, ref_v: float | None = None) -> float:
    du, su = diameters(u, ref_u)
    dv, sv = diameters(v, ref_v)
    return du + dv + su + sv


def _relative(X: np.ndarray, Y: np.ndarray) -> tuple[float, float]:
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    if X.ndim == 3:
        px = X[:, None] @ _dagger(X)[None, :]
        py = Y[:, None] @ _dagger(Y)[None, :]
        d = float(np.linalg.norm((px - py).reshape(X.shape[0], X.shape[0], -1), axis=-1).max())
    else:
        d = math.nan
    s = float(np.abs(_gram(X) - _gram(Y)).max())
    return d, s


def dissimilarity_components(sol, sol_tilde) -> dict:
    """d(U,U~), d(V,V~), S(U,U~), S(V,V~) for two configurations (u, v) and (u~, v~)."""
    (u, v), (ut, vt) = sol, sol_tilde
    dU, sU = _relative(_states(u), _states(ut))
    dV, sV = _relative(_states(v), _states(vt))
    return {"d_U": dU, "d_V": dV, "Srel_U": sU, "Srel_V": sV}


def dissimilarity_functional(sol, sol_tilde) -> float:
    c = dissimilarity_components(sol, sol_tilde)
    return c["d_U"] + c["d_V"] + c["Srel_U"] + c["Srel_V"]


def _real_checked(total: complex, scale: float) -> float:
    if abs(total.imag) > 1e-12 * max(1.0, scale):
        raise ArithmeticError(f"potential has imaginary residual {total.imag:.3e}")
    return float(total.real)


def potential_product(components: Sequence) -> float:
    """1 - (1/N^2) sum_ij prod_k <U_i^k, U_j^k>."""
    comps = [_states(c) for c in components]
    if len(comps) < 2:
        raise ValueError("the product potential needs at least two components")
    N = comps[0].shape[0]
    if any(c.shape[0] != N for c in comps):
        raise ValueError("components have different oscillator counts")
    prod = np.ones((N, N), dtype=complex)
    for c in comps:
        prod = prod * _gram(c)
    total = complex(prod.sum()) / N**2
    return _real_checked(1 - total, float(np.abs(prod).max()))


def potential_lt(ens) -> float:
    """1 - (1/N^2) sum_ij <T_i, T_j>."""
    T = _states(ens)
    if T.shape[0] == 0:
        raise ValueError("empty ensemble")
    g = _gram(T)
    return _real_checked(1 - complex(g.sum()) / T.shape[0] ** 2, float(np.abs(g).max()))


def det_phase_spread(U, V) -> float:
    """Spread over j of arg det U_j - arg det V_j, wrapped to (-pi, pi].

    For the double unitary model without frequencies this quantity is conserved for
    every oscillator, so complete aggregation needs it to be uniform across j.
    """
    U, V = _states(U), _states(V)
    ratio = np.linalg.det(U) / np.linalg.det(V)
    rel = ratio[:, None] / ratio[None, :]
    return float(np.abs(np.angle(rel)).max())


def dm_dissipation(U, V, kappa1: float, kappa2: float) -> float:
    """Right-hand side of the energy identity for the double matrix model without frequencies."""
    U, V = _states(U), _states(V)
    N = U.shape[0]
    c, d = _gram(V), _gram(U)

    def outer(X, w):  # A_j = (1/N) sum_i (w_ji X_i X_j^dag - w_ij X_j X_i^dag)
        M = np.einsum("ji,iab->jab", w, X) / N
        A = M @ _dagger(X)
        return A - _dagger(A)

    def inner(X, w):  # B_j = (1/N) sum_i (w_ji X_j^dag X_i - w_ij X_i^dag X_j)
        M = np.einsum("ji,iab->jab", w, X) / N
        B = _dagger(X) @ M
        return B - _dagger(B)

    def sq(A):
        return float((np.abs(A) ** 2).sum())

    return -(kappa1 / N) * (sq(outer(U, c)) + sq(outer(V, d))) - (kappa2 / N) * (sq(inner(U, c)) + sq(inner(V, d)))


def dum_dissipation(dU, dV, kappa: float) -> float:
    """-(1/(kappa N)) (sum_j ||dU_j||^2 + ||dV_j||^2) for the double unitary model."""
    N = np.asarray(dU).shape[0]
    return -float((np.abs(dU) ** 2).sum() + (np.abs(dV) ** 2).sum()) / (kappa * N)


def separability_residual(T, components: Sequence) -> float:
    """max_j ||T_j - U_j^1 x ... x U_j^m||_F."""
    T = _states(T)
    comps = [_states(c) for c in components]
    N = T.shape[0]
    if any(c.shape[0] != N for c in comps):
        raise ValueError("components have different oscillator counts")
    prod = np.stack([reduce(np.multiply.outer, [c[j] for c in comps]) for j in range(N)])
    if prod.shape != T.shape:
        raise ValueError(f"tensor shape {T.shape[1:]} does not match product shape {prod.shape[1:]}")
    return float(np.linalg.norm((T - prod).reshape(T.shape[0], -1), axis=1).max())


def spectral_diameter(H) -> float:
    """max_ij ||H_i - H_j|| in the operator 2-norm."""
    H = np.asarray(H)
    if H.shape[0] < 2:
        return 0.0
    diff = H[:, None] - H[None, :]
    return float(np.linalg.norm(diff, ord=2, axis=(-2, -1)).max())


def make_frame(t: float, ensembles: Sequence[Ensemble], partner: Sequence[Ensemble] | None = None) -> DiagnosticsFrame:
    """Sample record for a run; ``partner`` is the second configuration used for F."""
    mats = [e for e in ensembles if e.model != "LT"]
    lts = [e for e in ensembles if e.model == "LT"]
    frame = DiagnosticsFrame(t=float(t))
    first = mats if mats else lts
    if first:
        frame.D_U, frame.S_U = diameters(first[0])
    if len(first) > 1:
        frame.D_V, frame.S_V = diameters(first[1])
    if len(first) > 2:
        frame.extra["D_S_all"] = [diameters(e) for e in first]
    frame.L = frame.D_U + frame.D_V + frame.S_U + frame.S_V
    if len(mats) >= 2:
        frame.E = potential_product(mats)
    if lts:
        frame.V_lt = potential_lt(lts[0])
    frame.defect = max(feasibility_defect(e.states, e.manifold) for e in ensembles)
    if partner is not None:
        pm = [e for e in partner if e.model != "LT"]
        comp = dissimilarity_components((mats[0], mats[1]), (pm[0], pm[1]))
        frame.extra.update(comp)
        frame.F = comp["d_U"] + comp["d_V"] + comp["Srel_U"] + comp["Srel_V"]
        du, su = diameters(pm[0])
        dv, sv = diameters(pm[1])
        frame.extra["L_tilde"] = du + dv + su + sv
    return frame


# ---------------------------------------------------------------- thresholds

def _check_group(group: str) -> None:
    if group not in GROUPS:
        raise ValueError(f"group must be one of {GROUPS}, got {group!r}")


def _linear_coeff(n: int, m: int, group: str) -> float:
    if group == "unitary":
        if not (n >= m > 4 * math.sqrt(n)):
            raise ValueError(f"dimension condition violated: need n >= m > 4*sqrt(n), got n={n}, m={m}")
        return 2 * (m - 4 * math.sqrt(n))
    if not n >= m >= 1:
        raise ValueError(f"dimension condition violated: need n >= m >= 1, got n={n}, m={m}")
    return 2.0 * m


def alpha_polynomial(n: int, m: int, group: str) -> Callable[[float], float]:
    _check_group(group)
    a = _linear_coeff(n, m, group)
    return lambda s: (2 * n + 8 / 3) * s * s + (4 * n + 9) * s - a


def alpha_threshold(n: int, m: int, group: str = "unitary") -> float:
    """Unique positive root of (2n+8/3)s^2 + (4n+9)s - a with a = 2(m-4 sqrt n) or 2m."""
    _check_group(group)
    a = _linear_coeff(n, m, group)
    qa, qb = 2 * n + 8 / 3, 4 * n + 9
    root = 2 * a / (qb + math.sqrt(qb * qb + 4 * qa * a))
    if group == "special-orthogonal":
        shown = (-(12 * n + 27) + math.sqrt((12 * n + 27) ** 2 + 24 * m * (3 * n + 4))) / (4 * (4 * n + 3))
        log.debug("orthogonal threshold: polynomial root %.12g, displayed closed form %.12g", root, shown)
    return root


def g_polynomial(n: int, m: int, group: str = "unitary") -> Callable[[float], float]:
    _check_group(group)
    a = _linear_coeff(n, m, group)
    return lambda s: a * s - (4 * n + 9) * s**2 - (2 * n + 8 / 3) * s**3


def locking_constants(n: int, m: int, D_H: float, D_G: float, kappa: float,
                      group: str = "unitary") -> ThresholdReport:
    """Critical coupling and the roots of g(s) = 2(1+3 sqrt n) D_H / kappa."""
    _check_group(group)
    if not n >= m:
        raise ValueError(f"need n >= m, got n={n}, m={m}")
    if not D_H >= D_G >= 0:
        raise ValueError(f"need D_H >= D_G >= 0, got D_H={D_H}, D_G={D_G}")
    a = _linear_coeff(n, m, group)
    b, c3 = 4 * n + 9, 2 * n + 8 / 3
    g = g_polynomial(n, m, group)
    s_star = (-b + math.sqrt(b * b + 3 * c3 * a)) / (3 * c3)
    g_max = g(s_star)
    forcing = 2 * (1 + 3 * math.sqrt(n)) * D_H
    kappa_c = forcing / g_max
    alpha = alpha_threshold(n, m, group)
    nu = None
    if kappa > kappa_c:
        r = forcing / kappa

        def p(s):
            return r - g(s)

        xtol = 1e-15
        lo = -1.0
        while p(lo) >= 0:
            lo *= 2
        hi = 2 * s_star + 1.0
        while p(hi) <= 0:
            hi *= 2
        nu0 = brentq(p, lo, 0.0, xtol=xtol) if r > 0 else -(b + math.sqrt(b * b + 4 * c3 * a)) / (2 * c3)
        nu1 = brentq(p, 0.0, s_star, xtol=xtol) if r > 0 else 0.0
        nu2 = brentq(p, s_star, hi, xtol=xtol)
        nu = (nu0, nu1, nu2)
    return ThresholdReport(alpha=alpha, kappa_c=kappa_c, s_star=s_star, nu=nu, group=group, g_max=g_max)


# ---------------------------------------------------------------- monitors

MONITOR_KINDS = (
    "aggregation", "dissimilarity", "diameter", "overlap",
    "relative-diameter", "relative-overlap",
    "orthogonal-aggregation", "orthogonal-dissimilarity",
)
_QUANTITY = {
    "aggregation": ("L",), "orthogonal-aggregation": ("L",),
    "dissimilarity": ("F",), "orthogonal-dissimilarity": ("F",),
    "diameter": ("D_U", "D_V"), "overlap": ("S_U", "S_V"),
    "relative-diameter": ("d_U", "d_V"), "relative-overlap": ("Srel_U", "Srel_V"),
}


def _value(frame: DiagnosticsFrame, name: str) -> float:
    if hasattr(frame, name):
        v = getattr(frame, name)
    else:
        v = frame.extra.get(name)
    if v is None:
        raise ValueError(f"frame at t={frame.t} has no value for {name}")
    return float(v)


def _bounds(kind: str, fr: DiagnosticsFrame, p: dict) -> list[float]:
    """Right-hand sides of the differential inequalities, one per tracked quantity."""
    k = p["kappa"]
    n, m = p["n"], p["m"]
    big, small = max(n, m), min(n, m)
    rn = math.sqrt(big)
    dmax = max(p.get("D_H", 0.0), p.get("D_G", 0.0))
    L = fr.L
    if kind == "aggregation":
        return [-2 * k * (small - 4 * rn) * L + k * (4 * big + 9) * L**2 + k * (2 * big + 8 / 3) * L**3]
    if kind == "orthogonal-aggregation":
        return [2 * (1 + 3 * rn) * dmax - 2 * k * small * L + k * (4 * big + 9) * L**2 + k * (2 * big + 8 / 3) * L**3]
    Lm = max(L, fr.extra.get("L_tilde", L))
    if kind in ("dissimilarity", "orthogonal-dissimilarity"):
        shift = 8 * rn if kind == "dissimilarity" else 0.0
        F = fr.F
        return [-k * (2 * small - shift - dmax / k) * F + k * (4 * big + 22) * Lm * F + 20 * k * Lm**2 * F]
    # per-component inequalities: U has size n, V has size m
    DU, DV, SU, SV = fr.D_U, fr.D_V, fr.S_U, fr.S_V
    if kind == "diameter":
        return [-2 * m * k * DU + m * k * DU**3 + 6 * k * SV * DU + 2 * k * SV * DU**2 + 4 * k * math.sqrt(n) * SV,
                -2 * n * k * DV + n * k * DV**3 + 6 * k * SU * DV + 2 * k * SU * DV**2 + 4 * k * math.sqrt(m) * SU]
    if kind == "overlap":
        return [-2 * m * k * SU + 2 * m * k * DU**2 + 6 * k * SU * SV + 2 * k * SV * DU**2 + 4 * k * math.sqrt(n) * SV,
                -2 * n * k * SV + 2 * n * k * DV**2 + 6 * k * SU * SV + 2 * k * SU * DV**2 + 4 * k * math.sqrt(m) * SU]
    dU, dV = fr.extra["d_U"], fr.extra["d_V"]
    sU, sV = fr.extra["Srel_U"], fr.extra["Srel_V"]
    if kind == "relative-diameter":
        return [-2 * m * k * dU + 4 * m * k * Lm * dU + 6 * k * Lm * (dU + sV) + 2 * k * Lm**2 * (4 * dU + sV) + 4 * k * math.sqrt(n) * sV,
                -2 * n * k * dV + 4 * n * k * Lm * dV + 6 * k * Lm * (dV + sU) + 2 * k * Lm**2 * (4 * dV + sU) + 4 * k * math.sqrt(m) * sU]
    if kind == "relative-overlap":
        return [-2 * m * k * sU + 4 * k * Lm * dU + dmax * dU + 6 * k * Lm * (sU + sV) + 8 * k * Lm**2 * dU + 2 * k * Lm**2 * sV + 4 * k * math.sqrt(n) * sV,
                -2 * n * k * sV + 4 * k * Lm * dV + dmax * dV + 6 * k * Lm * (sV + sU) + 8 * k * Lm**2 * dV + 2 * k * Lm**2 * sU + 4 * k * math.sqrt(m) * sU]
    raise ValueError(f"unknown monitor kind {kind!r}; expected one of {MONITOR_KINDS}")


@dataclass
class MonitorReport:
    kind: str
    times: np.ndarray
    slack: np.ndarray
    bound: np.ndarray
    rate: np.ndarray
    tol: float
    violated: bool
    worst_slack: float


def _derivative(times: np.ndarray, values: np.ndarray, k: int) -> float:
    if k == 0:
        return (values[1] - values[0]) / (times[1] - times[0])
    if k == len(times) - 1:
        return (values[-1] - values[-2]) / (times[-1] - times[-2])
    return (values[k + 1] - values[k - 1]) / (times[k + 1] - times[k - 1])


def _slack_at(kind: str, frames: Sequence[DiagnosticsFrame], k: int, params: dict):
    names = _QUANTITY[kind]
    times = np.array([frames[j].t for j in range(max(k - 1, 0), min(k + 2, len(frames)))])
    local = k - max(k - 1, 0)
    bounds = _bounds(kind, frames[k], params)
    slacks, rates = [], []
    for name, bound in zip(names, bounds):
        vals = np.array([_value(frames[j], name) for j in range(max(k - 1, 0), min(k + 2, len(frames)))])
        rate = _derivative(times, vals, local)
        rates.append(rate)
        slacks.append(bound - rate)
    worst = int(np.argmin(slacks))
    return slacks[worst], bounds[worst], rates[worst]


def _is_violation(slack: float, bound: float, tol: float) -> bool:
    return slack < -tol * max(1.0, abs(bound))


def inequality_monitor(kind: str, frames: Sequence[DiagnosticsFrame], params: dict,
                       tol: float = 1e-3) -> MonitorReport:
    """Slack (bound minus finite-difference rate) of a differential inequality at every sample.

    Interior samples use central differences and decide the verdict; endpoints use
    one-sided differences and are reported only. With several tracked quantities
    the smallest slack is kept.
    """
    if kind not in MONITOR_KINDS:
        raise ValueError(f"unknown monitor kind {kind!r}; expected one of {MONITOR_KINDS}")
    if len(frames) < 3:
        raise ValueError("an inequality monitor needs at least 3 frames")
    out = [_slack_at(kind, frames, k, params) for k in range(len(frames))]
    slack, bound, rate = (np.array(x) for x in zip(*out))
    interior = slice(1, len(frames) - 1)
    flags = slack[interior] < -tol * np.maximum(1.0, np.abs(bound[interior]))
    return MonitorReport(kind, np.array([f.t for f in frames]), slack, bound, rate, tol,
                         bool(flags.any()), float(slack[interior].min()))


class Monitor:
    """Online evaluation of one inequality during integration."""

    def __init__(self, kind: str, params: dict, tol: float = 1e-3, hard: bool = True, name: str | None = None):
        if kind not in MONITOR_KINDS:
            raise ValueError(f"unknown monitor kind {kind!r}; expected one of {MONITOR_KINDS}")
        self.kind, self.params, self.tol, self.hard = kind, params, tol, hard
        self.name = name or kind
        self.violated = False
        self.worst_slack = math.inf

    def update(self, frames: Sequence[DiagnosticsFrame], k: int) -> None:
        slack, bound, _ = _slack_at(self.kind, frames, k, self.params)
        frames[k].monitor_slack[self.name] = slack
        self.worst_slack = min(self.worst_slack, slack)
        if _is_violation(slack, bound, self.tol):
            self.violated = True

    def finish(self, frames: Sequence[DiagnosticsFrame]) -> None:
        for k in (0, len(frames) - 1):
            if len(frames) >= 2:
                slack, _, _ = _slack_at(self.kind, frames, k, self.params)
                frames[k].monitor_slack[self.name] = slack

    def verdict(self) -> dict:
        return {"passed": not self.violated, "worst_slack": self.worst_slack, "tol": self.tol, "hard": self.hard}


# ---------------------------------------------------------------- locking and fits

def locking_metrics(rhs: Callable, states: Sequence[np.ndarray],
                    states_tilde: Sequence[np.ndarray] | None = None) -> tuple[float, float]:
    """(velocity_sync, product_drift) from right-hand side evaluations.

    velocity_sync = max_j ||i dU_j U_j^dag - i dU~_j U~_j^dag||_F over components (nan without a partner);
    product_drift = max_ij ||d/dt (U_i U_j^dag)||_F over components.
    """
    states = [np.asarray(s) for s in states]
    deriv = list(rhs(states))
    drift = 0.0
    for X, dX in zip(states, deriv):
        A = dX[:, None] @ _dagger(X)[None, :]
        P = A + X[:, None] @ _dagger(dX)[None, :]
        drift = max(drift, float(np.linalg.norm(P.reshape(P.shape[0], P.shape[1], -1), axis=-1).max()))
    if states_tilde is None:
        return math.nan, drift
    tilde = [np.asarray(s) for s in states_tilde]
    dtilde = list(rhs(tilde))
    sync = 0.0
    for X, dX, Y, dY in zip(states, deriv, tilde, dtilde):
        W = 1j * (dX @ _dagger(X) - dY @ _dagger(Y))
        sync = max(sync, float(np.linalg.norm(W.reshape(W.shape[0], -1), axis=1).max()))
    return sync, drift


def fit_decay_rate(times, values, window: float = 0.5) -> tuple[float, float]:
    """Least-squares slope of log(values) against time on the trailing ``window`` fraction."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if not 0 < window <= 1:
        raise ValueError(f"window must lie in (0, 1], got {window}")
    start = times[-1] - window * (times[-1] - times[0])
    sel = times >= start - 1e-12 * max(1.0, abs(start))
    t, v = times[sel], values[sel]
    if len(t) < 2:
        raise ValueError("need at least two samples in the fit window")
    if np.any(v <= 0):
        raise ValueError("values must be positive on the fit window")
    y = np.log(v)
    if np.ptp(y) == 0:
        return 0.0, 1.0
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1 - float((resid**2).sum()) / ss_tot
    return float(slope), r2
