"""Seeded generators, declarative scenario configs, presets and run orchestration."""
from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from . import diagnostics as dg
from .integrator import (IntegratorConfig, MonitorViolation, NumericalError, Trajectory,
                         integrate, retract)
from .models import (Ensemble, build_kappa, build_lt_freq_from_mm, dsom_rhs, hermitian_to_rank4,
                     lt_rhs, mm_rhs, mum_rhs, sds_rhs, sms_rhs)


class ConfigError(ValueError):
    """Invalid scenario configuration; ``errors`` lists every violated constraint."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------- generators

def _rng(seed=None, rng=None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(seed)


def gen_random_unitary(n: int, seed=None, rng=None) -> np.ndarray:
    """QR of a complex Gaussian matrix with the diagonal phases of R moved into Q."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    g = _rng(seed, rng)
    z = (g.standard_normal((n, n)) + 1j * g.standard_normal((n, n))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def gen_random_special_orthogonal(n: int, seed=None, rng=None) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    g = _rng(seed, rng)
    q, r = np.linalg.qr(g.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _random_generators(n: int, N: int, group: str, traceless: bool, g: np.random.Generator) -> np.ndarray:
    if group == "unitary":
        a = g.standard_normal((N, n, n)) + 1j * g.standard_normal((N, n, n))
        k = a - np.conj(np.swapaxes(a, 1, 2))
        if traceless:
            k -= np.einsum("jaa->j", k)[:, None, None] / n * np.eye(n)
    else:
        a = g.standard_normal((N, n, n))
        k = a - np.swapaxes(a, 1, 2)
    return k


def _near_identity(K: np.ndarray, eps: float, group: str, unimodular: bool) -> np.ndarray:
    n = K.shape[1]
    manifold = "unitary" if group == "unitary" else "special-orthogonal"
    X = np.eye(n) + eps * K
    U = retract(Ensemble(X, manifold, "DUM" if group == "unitary" else "DSOM"), max_defect=None).states
    if group == "unitary" and unimodular and n > 1:
        U = U * np.exp(-1j * np.angle(np.linalg.det(U)) / n)[:, None, None]
    return U


def gen_near_identity_ensemble(n: int, N: int, target_L_share: float, seed=None, group: str = "unitary",
                               unimodular: bool = True, rng=None) -> Ensemble:
    """Ensemble around the identity whose D + S contribution equals ``target_L_share`` within 1%.

    States are retract(I + eps K_j) with random skew generators K_j; eps is found by bisection.
    With ``unimodular`` (unitary group) the generators are traceless and each state is
    rescaled to determinant one.
    """
    if target_L_share < 0:
        raise ValueError(f"target must be nonnegative, got {target_L_share}")
    if group not in dg.GROUPS:
        raise ValueError(f"group must be one of {dg.GROUPS}")
    manifold = "unitary" if group == "unitary" else "special-orthogonal"
    model = "DUM" if group == "unitary" else "DSOM"
    g = _rng(seed, rng)
    K = _random_generators(n, N, group, unimodular, g)
    if target_L_share == 0:
        return Ensemble(np.repeat(np.eye(n)[None], N, axis=0).astype(complex if group == "unitary" else float), manifold, model)

    def share(eps):
        D, S = dg.diameters(_near_identity(K, eps, group, unimodular), float(n))
        return D + S

    lo, hi = 0.0, 1e-3
    while share(hi) < target_L_share:
        lo, hi = hi, 2 * hi
        if hi > 1e4:
            raise ValueError(f"target {target_L_share} is not reachable for n={n}, N={N}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = share(mid)
        if abs(val - target_L_share) <= 1e-6 * target_L_share:
            break
        lo, hi = (mid, hi) if val < target_L_share else (lo, mid)
    states = _near_identity(K, mid, group, unimodular)
    return Ensemble(states, manifold, model)


def gen_sphere_cap(d: int, N: int, spread: float, seed=None, rng=None) -> np.ndarray:
    """Unit vectors scattered around a common random pole; spread scales the scatter."""
    g = _rng(seed, rng)
    pole = g.standard_normal(d)
    pole /= np.linalg.norm(pole)
    u = pole + spread * g.standard_normal((N, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def gen_unit_norm(shape: Sequence[int], N: int, seed=None, rng=None, complex_: bool = True) -> np.ndarray:
    g = _rng(seed, rng)
    x = g.standard_normal((N, *shape))
    if complex_:
        x = x + 1j * g.standard_normal((N, *shape))
    return x / np.linalg.norm(x.reshape(N, -1), axis=1).reshape((N,) + (1,) * len(shape))


def gen_frequencies(kind: str, n: int, N: int, diameter: float, seed=None, base_scale: float = 0.0,
                    rng=None) -> np.ndarray:
    """Stack of N frequency matrices H_j = H_0 + Delta_j.

    ``kind`` is "hermitian" (traceless Delta_j) or "skew" (real skew-symmetric). The
    deviations are rescaled so the spectral-norm diameter max_ij ||H_i - H_j|| equals
    ``diameter``; ``base_scale`` is the spectral norm of the common part H_0.
    """
    if diameter < 0:
        raise ValueError(f"diameter must be nonnegative, got {diameter}")
    if kind not in ("hermitian", "skew"):
        raise ValueError(f"frequency kind must be hermitian or skew, got {kind!r}")
    g = _rng(seed, rng)

    def draw(count):
        if kind == "hermitian":
            a = g.standard_normal((count, n, n)) + 1j * g.standard_normal((count, n, n))
            h = 0.5 * (a + np.conj(np.swapaxes(a, 1, 2)))
            return h - np.einsum("jaa->j", h)[:, None, None].real / n * np.eye(n)
        a = g.standard_normal((count, n, n))
        return 0.5 * (a - np.swapaxes(a, 1, 2))

    base = draw(1)[0]
    norm = np.linalg.norm(base, 2)
    base = base * (base_scale / norm) if norm > 0 else base
    delta = draw(N)
    if diameter == 0:
        return np.repeat(base[None], N, axis=0)
    measured = dg.spectral_diameter(delta)
    if measured == 0:
        raise ValueError("a positive diameter needs at least two oscillators")
    return base + delta * (diameter / measured)


def gen_rank4_frequencies(shape: Sequence[int], N: int, scale: float, seed=None, rng=None) -> np.ndarray:
    """Random skew rank-4 tensors B_j with matricized spectral norm ``scale``."""
    g = _rng(seed, rng)
    d = int(np.prod(shape))
    a = g.standard_normal((N, d, d)) + 1j * g.standard_normal((N, d, d))
    k = 0.5 * (a - np.conj(np.swapaxes(a, 1, 2)))
    if scale > 0:
        k *= scale / np.linalg.norm(k, 2, axis=(1, 2))[:, None, None]
    else:
        k[:] = 0
    return k.reshape((N, *shape, *shape))


# ---------------------------------------------------------------- configuration

_SECTION_KEYS = {
    "coupling": {"kappa", "kappa1", "kappa2", "critical_factor", "pattern"},
    "frequency": {"kind", "diameters", "base_scale", "scale"},
    "init": {"kind", "target_L", "alpha_fraction", "nu2_fraction", "spread", "path", "unimodular"},
    "outputs": {"frames_csv", "summary_json"},
}
_COMPARE_KEYS = {
    "time-shift": {"kind", "shift", "transient"},
    "right-translate": {"kind"},
    "splitting": {"kind"},
    "separability": {"kind"},
    "kuramoto": {"kind"},
    "energy": {"kind", "floor"},
}
HYPOTHESES = ("dimension", "below-alpha", "below-nu2", "critical-coupling", "positive-overlap",
              "determinant-phase", "homogeneous", "frequency-order")


@dataclass
class ScenarioConfig:
    name: str = "custom"
    model: str = "DUM"
    dimensions: list = field(default_factory=lambda: [5, 5])
    N: int = 5
    coupling: dict = field(default_factory=lambda: {"kappa": 1.0})
    frequency: dict = field(default_factory=lambda: {"kind": "zero"})
    init: dict = field(default_factory=lambda: {"kind": "random"})
    seed: int = 0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    monitors: list = field(default_factory=list)
    monitor_tol: float = 1e-3
    hard_monitors: bool = True
    hypotheses: list = field(default_factory=list)
    compare: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        errors = [f"unknown key {k!r}" for k in unknown]
        kw = {k: copy.deepcopy(v) for k, v in data.items() if k in known}
        if "integrator" in kw:
            ik = {f.name for f in fields(IntegratorConfig)}
            raw = kw["integrator"] or {}
            errors += [f"unknown key 'integrator.{k}'" for k in sorted(set(raw) - ik)]
            try:
                kw["integrator"] = IntegratorConfig(**{k: v for k, v in raw.items() if k in ik})
            except (TypeError, ValueError) as exc:
                errors.append(f"integrator: {exc}")
                kw.pop("integrator")
        for section, allowed in _SECTION_KEYS.items():
            for k in sorted(set(kw.get(section) or {}) - allowed):
                errors.append(f"unknown key '{section}.{k}'")
        cfg = cls(**kw)
        try:
            cfg.validate()
        except ConfigError as exc:
            errors += [e for e in exc.errors if e not in errors]
        if errors:
            raise ConfigError(errors)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["integrator"] = asdict(self.integrator)
        return d

    def validate(self) -> None:
        errors = []
        if self.model not in ("LT", "SDS", "SMS", "DM", "DUM", "DSOM", "MM", "MUM"):
            errors.append(f"unknown model {self.model!r}")
        if not isinstance(self.N, int) or self.N < 1:
            errors.append(f"N must be a positive integer, got {self.N!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            errors.append(f"seed must be a 64-bit nonnegative integer, got {self.seed!r}")
        for m in self.monitors:
            if m not in dg.MONITOR_KINDS:
                errors.append(f"unknown monitor {m!r}; expected one of {dg.MONITOR_KINDS}")
        for h in self.hypotheses:
            if h not in HYPOTHESES:
                errors.append(f"unknown hypothesis {h!r}; expected one of {HYPOTHESES}")
        for c in self.compare:
            kind = c.get("kind") if isinstance(c, dict) else None
            if kind not in _COMPARE_KEYS:
                errors.append(f"unknown comparison {c!r}; expected kinds {sorted(_COMPARE_KEYS)}")
            else:
                errors += [f"unknown key 'compare.{k}'" for k in sorted(set(c) - _COMPARE_KEYS[kind])]
        for section, allowed in _SECTION_KEYS.items():
            for k in sorted(set(getattr(self, section) or {}) - allowed):
                errors.append(f"unknown key '{section}.{k}'")
        errors += _dimension_errors(self)
        if errors:
            raise ConfigError(errors)


def _dimension_errors(cfg: ScenarioConfig) -> list[str]:
    dims = cfg.dimensions
    model = cfg.model
    try:
        if model in ("DM", "MM"):
            ok = all(len(d) == 2 and all(int(x) >= 1 for x in d) for d in dims)
            count = len(dims)
            if not ok or (model == "DM" and count != 2) or count < 2:
                return [f"{model} dimensions must be a list of [rows, cols] pairs, got {dims!r}"]
        elif model == "LT":
            if not dims or any(int(x) < 1 for x in dims):
                return [f"LT dimensions must be a positive shape, got {dims!r}"]
        else:
            if any(int(x) < 1 for x in dims) or len(dims) < 2:
                return [f"{model} dimensions must list at least two positive sizes, got {dims!r}"]
            if model in ("SDS", "DUM", "DSOM") and len(dims) != 2:
                return [f"{model} takes exactly two dimensions, got {dims!r}"]
            if model in ("DUM", "MUM") and "dimension" in cfg.hypotheses:
                n, m = max(int(x) for x in dims[:2]), min(int(x) for x in dims[:2])
                if not m > 4 * math.sqrt(n):
                    return [f"dimension condition violated: need n >= m > 4*sqrt(n), got n={n}, m={m}"]
    except TypeError:
        return [f"malformed dimensions {dims!r}"]
    return []


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``dotted.key=value`` to a config dictionary; the value is parsed as YAML."""
    import yaml

    if "=" not in assignment:
        raise ConfigError([f"override {assignment!r} must look like key=value"])
    key, raw = assignment.split("=", 1)
    value = yaml.safe_load(raw)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    return data


def load_config(path: str | Path) -> ScenarioConfig:
    import yaml

    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"config {path} must be a mapping"])
    return ScenarioConfig.from_dict(data)


# ---------------------------------------------------------------- presets

def _preset_table() -> dict[str, Callable[[], dict]]:
    return {
        "sds-aggregation": lambda: dict(
            model="SDS", dimensions=[3, 3], N=10, coupling={"kappa": 1.0},
            init={"kind": "cap", "spread": 0.2}, seed=11,
            integrator={"dt": 1e-2, "t_end": 20.0, "sample_every": 10, "auto_dt": False},
            hypotheses=["positive-overlap"]),
        "sms-aggregation": lambda: dict(
            model="SMS", dimensions=[3, 3, 3], N=10, coupling={"kappa": 1.0},
            init={"kind": "cap", "spread": 0.2}, seed=12,
            integrator={"dt": 1e-2, "t_end": 20.0, "sample_every": 10, "auto_dt": False},
            hypotheses=["positive-overlap"]),
        "complete-aggregation": lambda: dict(
            model="DUM", dimensions=[25, 25], N=5, coupling={"kappa": 1.0},
            init={"kind": "near-identity", "alpha_fraction": 0.5}, seed=1,
            integrator={"dt": 1e-4, "t_end": 2.0, "sample_every": 10, "retract_every": 10, "auto_dt": False},
            monitors=["aggregation"],
            hypotheses=["dimension", "below-alpha", "determinant-phase", "homogeneous"]),
        "phase-locking": lambda: dict(
            model="DUM", dimensions=[25, 25], N=5, coupling={"critical_factor": 10.0},
            frequency={"kind": "hermitian", "diameters": [0.5, 0.5], "base_scale": 0.0},
            init={"kind": "near-identity", "nu2_fraction": 0.5}, seed=2,
            integrator={"dt": 2.5e-5, "t_end": 0.2, "sample_every": 40, "retract_every": 10,
                        "auto_dt": False, "store_snapshots": True},
            hypotheses=["dimension", "critical-coupling", "below-nu2", "frequency-order", "determinant-phase"],
            compare=[{"kind": "time-shift", "shift": 1.0, "transient": 0.02}]),
        "energy-dissipation": lambda: dict(
            model="DM", dimensions=[[2, 2], [2, 2]], N=5, coupling={"kappa1": 1.0, "kappa2": 0.5},
            init={"kind": "random"}, seed=3,
            integrator={"dt": 1e-3, "t_end": 5.0, "sample_every": 10, "auto_dt": False},
            hypotheses=["homogeneous"], compare=[{"kind": "energy"}]),
        "dm-separability": lambda: dict(
            model="DM", dimensions=[[2, 2], [2, 2]], N=3, coupling={"kappa1": 1.0, "kappa2": 0.5},
            frequency={"kind": "rank4", "scale": 1.0}, init={"kind": "random"}, seed=4,
            integrator={"dt": 1e-3, "t_end": 2.0, "sample_every": 20, "auto_dt": False},
            compare=[{"kind": "separability"}]),
        "mm-separability": lambda: dict(
            model="MM", dimensions=[[2, 2], [2, 2], [2, 2]], N=3, coupling={"kappa1": 1.0, "kappa2": 0.5},
            frequency={"kind": "rank4", "scale": 1.0}, init={"kind": "random"}, seed=5,
            integrator={"dt": 1e-3, "t_end": 2.0, "sample_every": 20, "auto_dt": False},
            compare=[{"kind": "separability"}]),
        "so-aggregation": lambda: dict(
            model="DSOM", dimensions=[3, 3], N=10, coupling={"kappa": 1.0},
            init={"kind": "near-identity", "alpha_fraction": 0.5}, seed=6,
            integrator={"dt": 1e-3, "t_end": 5.0, "sample_every": 10, "auto_dt": False},
            monitors=["orthogonal-aggregation"], hypotheses=["below-alpha", "homogeneous"]),
        "so-phase-locking": lambda: dict(
            model="DSOM", dimensions=[3, 3], N=10, coupling={"critical_factor": 10.0},
            frequency={"kind": "skew", "diameters": [0.5, 0.5], "base_scale": 0.0},
            init={"kind": "near-identity", "nu2_fraction": 0.5}, seed=7,
            integrator={"dt": 2e-4, "t_end": 1.0, "sample_every": 25, "auto_dt": False, "store_snapshots": True},
            hypotheses=["critical-coupling", "below-nu2", "frequency-order"],
            compare=[{"kind": "time-shift", "shift": 1.0, "transient": 0.2}]),
        "kuramoto-reduction": lambda: dict(
            model="DUM", dimensions=[1, 1], N=8, coupling={"kappa": 1.0},
            init={"kind": "random"}, seed=8,
            integrator={"dt": 1e-3, "t_end": 10.0, "sample_every": 50, "auto_dt": False},
            compare=[{"kind": "kuramoto"}]),
        "splitting": lambda: dict(
            model="DUM", dimensions=[5, 5], N=5, coupling={"kappa": 1.0},
            frequency={"kind": "hermitian", "diameters": [0.0, 0.0], "base_scale": 1.0},
            init={"kind": "near-identity", "target_L": 0.2}, seed=9,
            integrator={"dt": 1e-3, "t_end": 2.0, "sample_every": 20, "retract_every": 10, "auto_dt": False},
            compare=[{"kind": "splitting"}, {"kind": "right-translate"}]),
    }


PRESETS = tuple(_preset_table())


def preset_dict(name: str) -> dict:
    table = _preset_table()
    if name not in table:
        raise ConfigError([f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}"])
    data = table[name]()
    data["name"] = name
    return data


def preset(name: str) -> ScenarioConfig:
    return ScenarioConfig.from_dict(preset_dict(name))


# ---------------------------------------------------------------- system assembly

_MANIFOLD = {"SDS": "sphere", "SMS": "sphere", "DM": "rectangular-unit-norm", "MM": "rectangular-unit-norm",
             "DUM": "unitary", "MUM": "unitary", "DSOM": "special-orthogonal", "LT": "unit-norm-tensor"}


@dataclass
class System:
    ensembles: list
    rhs: Callable
    kappa: float
    freqs: list
    freq_diameters: list
    group: str | None
    sizes: list
    coupling: Any = None
    thresholds: dg.ThresholdReport | None = None


def _group_thresholds(cfg: ScenarioConfig, group: str, sizes: list, diam: list, kappa: float | None):
    n, m = max(sizes[:2]), min(sizes[:2])
    dh, dgm = max(diam[:2]), min(diam[:2])
    try:
        return dg.locking_constants(n, m, dh, dgm, kappa if kappa is not None else 0.0, group)
    except ValueError:
        return None


def build_system(cfg: ScenarioConfig) -> System:
    """Draw initial data and frequencies from the seed and assemble the right-hand side."""
    rng = np.random.default_rng(cfg.seed)
    model, N = cfg.model, cfg.N
    cp, fq, ini = cfg.coupling, cfg.frequency, cfg.init
    fkind = fq.get("kind", "zero")
    errors = []

    if model in ("DUM", "MUM", "DSOM"):
        group = "special-orthogonal" if model == "DSOM" else "unitary"
        sizes = [int(d) for d in cfg.dimensions]
        if fkind == "zero":
            freqs = [None] * len(sizes)
            diam = [0.0] * len(sizes)
        else:
            want = "skew" if group == "special-orthogonal" else "hermitian"
            if fkind != want:
                raise ConfigError([f"{model} needs frequency kind {want!r} or 'zero', got {fkind!r}"])
            targets = list(fq.get("diameters", [0.0] * len(sizes)))
            if len(targets) != len(sizes):
                raise ConfigError([f"frequency.diameters needs {len(sizes)} entries"])
            freqs = [gen_frequencies(fkind, d, N, float(t), rng=rng, base_scale=float(fq.get("base_scale", 0.0)))
                     for d, t in zip(sizes, targets)]
            diam = [dg.spectral_diameter(f) for f in freqs]
        kappa = cp.get("kappa")
        report = None
        if "critical_factor" in cp:
            report = _group_thresholds(cfg, group, sizes, diam, None)
            if report is None:
                raise ConfigError(["critical coupling is undefined: dimension condition violated"])
            kappa = float(cp["critical_factor"]) * report.kappa_c
            if kappa == 0:
                raise ConfigError(["critical_factor needs heterogeneous frequencies (kappa_c = 0)"])
        if kappa is None:
            raise ConfigError(["coupling.kappa or coupling.critical_factor is required"])
        kappa = float(kappa)
        report = _group_thresholds(cfg, group, sizes, diam, kappa)
        kind = ini.get("kind", "random")
        if kind == "near-identity":
            if "target_L" in ini:
                total = float(ini["target_L"])
            elif "alpha_fraction" in ini:
                if report is None:
                    raise ConfigError(["alpha is undefined: dimension condition violated"])
                total = float(ini["alpha_fraction"]) * report.alpha
            elif "nu2_fraction" in ini:
                if report is None or report.nu is None:
                    raise ConfigError(["nu2 is undefined: coupling does not exceed the critical value"])
                total = float(ini["nu2_fraction"]) * report.nu[2]
            else:
                raise ConfigError(["near-identity init needs target_L, alpha_fraction or nu2_fraction"])
            share = total / len(sizes)
            ens = [gen_near_identity_ensemble(d, N, share, rng=rng, group=group,
                                              unimodular=bool(ini.get("unimodular", True))) for d in sizes]
        elif kind == "random":
            gen = gen_random_unitary if group == "unitary" else gen_random_special_orthogonal
            ens = [Ensemble(np.stack([gen(d, rng=rng) for _ in range(N)]), _MANIFOLD[model], model) for d in sizes]
        elif kind == "file":
            ens = _load_states(ini, sizes, model)
        else:
            raise ConfigError([f"init kind {kind!r} is not available for {model}"])
        ens = [Ensemble(e.states, _MANIFOLD[model], model) for e in ens]
        if model == "DSOM":
            def rhs(s):
                return list(dsom_rhs(s[0], s[1], freqs[0], freqs[1], kappa, tol=None))
        else:
            def rhs(s):
                return mum_rhs(s, freqs, kappa, tol=None)
        return System(ens, rhs, kappa, freqs, diam, group, sizes, thresholds=report)

    if model in ("SDS", "SMS"):
        sizes = [int(d) for d in cfg.dimensions]
        kappa = float(cp.get("kappa", 1.0))
        kind = ini.get("kind", "cap")
        if kind == "cap":
            states = [gen_sphere_cap(d, N, float(ini.get("spread", 0.5)), rng=rng) for d in sizes]
        elif kind == "random":
            states = [gen_unit_norm((d,), N, rng=rng, complex_=False) for d in sizes]
        elif kind == "file":
            states = [e.states for e in _load_states(ini, sizes, model)]
        else:
            raise ConfigError([f"init kind {kind!r} is not available for {model}"])
        if fkind == "zero":
            freqs = [None] * len(sizes)
        elif fkind == "skew" and model == "SDS":
            targets = list(fq.get("diameters", [0.0, 0.0]))
            freqs = [gen_frequencies("skew", d, N, float(t), rng=rng, base_scale=float(fq.get("base_scale", 0.0)))
                     for d, t in zip(sizes, targets)]
        else:
            raise ConfigError([f"{model} does not take frequency kind {fkind!r}"])
        diam = [0.0 if f is None else dg.spectral_diameter(f) for f in freqs]
        ens = [Ensemble(s, "sphere", model) for s in states]
        if model == "SDS":
            def rhs(s):
                return list(sds_rhs(s[0], s[1], freqs[0], freqs[1], kappa))
        else:
            def rhs(s):
                return sms_rhs(s, kappa)
        return System(ens, rhs, kappa, freqs, diam, None, sizes)

    if model in ("DM", "MM"):
        shapes = [tuple(int(x) for x in d) for d in cfg.dimensions]
        if "kappa1" not in cp or "kappa2" not in cp:
            raise ConfigError([f"{model} needs coupling.kappa1 and coupling.kappa2"])
        k1, k2 = float(cp["kappa1"]), float(cp["kappa2"])
        kind = ini.get("kind", "random")
        if kind == "random":
            ens = [Ensemble(gen_unit_norm(s, N, rng=rng), "rectangular-unit-norm", model) for s in shapes]
        elif kind == "file":
            ens = _load_states(ini, shapes, model)
        else:
            raise ConfigError([f"init kind {kind!r} is not available for {model}"])
        if fkind == "zero":
            freqs = [None] * len(shapes)
        elif fkind == "rank4":
            freqs = [gen_rank4_frequencies(s, N, float(fq.get("scale", 1.0)), rng=rng) for s in shapes]
        else:
            raise ConfigError([f"{model} does not take frequency kind {fkind!r}"])
        diam = [0.0 if f is None else dg.spectral_diameter(f.reshape(N, s[0] * s[1], -1))
                for f, s in zip(freqs, shapes)]

        def rhs(s):
            return mm_rhs(s, freqs, k1, k2)
        return System(ens, rhs, k1 + k2, freqs, diam, None, [s[0] for s in shapes],
                      coupling=build_kappa("MM", len(shapes), kappa1=k1, kappa2=k2))

    # LT
    shape = tuple(int(x) for x in cfg.dimensions)
    pattern = cp.get("pattern", "SMS")
    if fkind != "zero":
        raise ConfigError(["LT scenarios take zero frequencies"])
    if pattern == "SMS":
        coupling = build_kappa("SMS", len(shape), kappa=float(cp.get("kappa", 1.0)))
    else:
        if len(shape) % 2:
            raise ConfigError([f"pattern {pattern} needs an even tensor rank"])
        coupling = build_kappa(pattern, len(shape) // 2, kappa1=cp.get("kappa1"), kappa2=cp.get("kappa2"))
    ens = [Ensemble(gen_unit_norm(shape, N, rng=rng), "unit-norm-tensor", "LT")]

    def rhs(s):
        return [lt_rhs(s[0], None, coupling)]
    return System(ens, rhs, float(coupling.kappa or 0.0), [None], [0.0], None, list(shape), coupling=coupling)


def _load_states(ini: dict, sizes: list, model: str) -> list[Ensemble]:
    path = ini.get("path")
    if not path:
        raise ConfigError(["init kind 'file' needs init.path"])
    with np.load(path) as data:
        arrays = [np.asarray(data[f"component{k}"]) for k in range(len(sizes))]
    return [Ensemble(a, _MANIFOLD[model], model) for a in arrays]


# ---------------------------------------------------------------- hypotheses

def check_hypotheses(cfg: ScenarioConfig, system: System) -> list[str]:
    """Evaluate every requested theorem hypothesis on the assembled system."""
    errors = []
    rep = system.thresholds
    sizes = system.sizes
    L0 = None
    if len(system.ensembles) >= 2:
        L0 = dg.total_functional(system.ensembles[0], system.ensembles[1])
    for h in cfg.hypotheses:
        if h == "dimension":
            if system.group == "unitary":
                n, m = max(sizes[:2]), min(sizes[:2])
                if not m > 4 * math.sqrt(n):
                    errors.append(f"dimension condition violated: need n >= m > 4*sqrt(n), got n={n}, m={m}")
        elif h == "below-alpha":
            if rep is None:
                errors.append("initial functional bound: alpha is undefined for these dimensions")
            elif not L0 < rep.alpha:
                errors.append(f"initial functional bound violated: L0={L0:.6g} >= alpha={rep.alpha:.6g}")
        elif h == "below-nu2":
            if rep is None or rep.nu is None:
                errors.append("initial functional bound: nu2 is undefined (coupling not above critical)")
            elif not L0 < rep.nu[2]:
                errors.append(f"initial functional bound violated: L0={L0:.6g} >= nu2={rep.nu[2]:.6g}")
        elif h == "critical-coupling":
            if rep is None or not system.kappa > rep.kappa_c:
                kc = rep.kappa_c if rep else math.nan
                errors.append(f"coupling condition violated: kappa={system.kappa:.6g} <= kappa_c={kc:.6g}")
        elif h == "positive-overlap":
            for p, e in enumerate(system.ensembles):
                g = e.states @ e.states.T
                if not g.min() > 0:
                    errors.append(f"positive overlap violated in component {p}: min inner product {g.min():.4g}")
        elif h == "determinant-phase":
            if system.group == "unitary" and len(system.ensembles) == 2:
                spread = dg.det_phase_spread(system.ensembles[0], system.ensembles[1])
                if spread > 1e-10:
                    errors.append(f"determinant phase of U_j V_j^-1 is not uniform (spread {spread:.3g}); "
                                  "it is conserved, so full aggregation is impossible")
        elif h == "homogeneous":
            if any(f is not None and np.abs(f - f[:1]).max() > 0 for f in system.freqs):
                errors.append("homogeneity violated: frequencies differ across oscillators")
        elif h == "frequency-order":
            d = system.freq_diameters
            if sizes[0] >= sizes[1] and d[0] < d[1] - 1e-12 or sizes[0] < sizes[1] and d[1] < d[0] - 1e-12:
                errors.append(f"frequency ordering violated: larger group needs the larger diameter, got {d}")
    return errors


# ---------------------------------------------------------------- running

@dataclass
class RunSummary:
    config: dict
    final_frame: dict
    rates: dict
    thresholds: dict | None
    monitors: dict
    checks: dict
    wall_time: float
    status: str = "pass"
    message: str = ""
    frames: list = field(default_factory=list, repr=False)
    trajectory: Trajectory | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("frames", "trajectory")}
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _check(value: float, threshold: float, passed: bool) -> dict:
    return {"value": float(value), "threshold": float(threshold), "passed": bool(passed)}


def _monitor_params(system: System) -> dict:
    d = system.freq_diameters + [0.0, 0.0]
    return {"kappa": system.kappa, "n": system.sizes[0], "m": system.sizes[1] if len(system.sizes) > 1 else 1,
            "D_H": max(d[0], d[1]), "D_G": min(d[0], d[1])}


def fit_above_floor(times, values, floor: float = 1e-11, window: float = 0.5) -> tuple[float, float]:
    """Decay-rate fit restricted to the samples before the values reach the rounding floor."""
    times, values = np.asarray(times), np.asarray(values)
    below = np.nonzero(values <= floor)[0]
    stop = below[0] if len(below) else len(values)
    if stop < 3:
        raise ValueError("too few samples above the floor to fit a rate")
    return dg.fit_decay_rate(times[:stop], values[:stop], window)


def _run_dynamics(system: System, icfg: IntegratorConfig, monitors=(), init=None) -> Trajectory:
    return integrate(system.rhs, init or system.ensembles, icfg, monitors=monitors)


def _compare_time_shift(cfg, system, spec, checks, monitors_post, params, online=()):
    shift = float(spec.get("shift", 1.0))
    icfg = copy.deepcopy(cfg.integrator)
    icfg.t_end = cfg.integrator.t_end + shift
    icfg.store_snapshots = True
    traj = _run_dynamics(system, icfg, online)
    spacing = np.diff(traj.times)
    k_shift = int(round(shift / spacing[0]))
    if not np.allclose(traj.times[k_shift:k_shift + 1], shift, rtol=0, atol=1e-9):
        raise ConfigError([f"time shift {shift} is not a multiple of the sample spacing {spacing[0]}"])
    count = len(traj.times) - k_shift
    frames, syncs, drifts = [], [], []
    manifold = system.ensembles[0].manifold
    model = system.ensembles[0].model
    for k in range(count):
        a = [Ensemble(s, manifold, model) for s in traj.snapshots[k]]
        b = [Ensemble(s, manifold, model) for s in traj.snapshots[k + k_shift]]
        fr = dg.make_frame(traj.times[k], a, partner=b)
        sync, drift = dg.locking_metrics(system.rhs, [e.states for e in a], [e.states for e in b])
        fr.extra["velocity_sync"], fr.extra["product_drift"] = sync, drift
        frames.append(fr)
        syncs.append(sync)
        drifts.append(drift)
    F = np.array([f.F for f in frames])
    t = np.array([f.t for f in frames])
    transient = float(spec.get("transient", 0.0))
    after = t >= transient
    inc = np.diff(F[after])
    checks["F_monotone_after_transient"] = _check(inc.max(initial=0.0), 1e-12, inc.max(initial=0.0) <= 1e-12)
    checks["F_final"] = _check(F[-1], 1e-4, F[-1] < 1e-4)
    checks["product_drift_final"] = _check(drifts[-1], 1e-4, drifts[-1] < 1e-4)
    n, m = system.sizes[0], system.sizes[1]
    bound = 2 * system.kappa * (m + n) * F
    excess = np.array(syncs) - bound
    checks["velocity_sync_bound"] = _check(excess.max(), 0.0, bool(np.all(np.array(syncs) < bound)))
    for mon in monitors_post:
        rep = dg.inequality_monitor(mon.kind, frames, params, mon.tol)
        for fr, s in zip(frames, rep.slack):
            fr.monitor_slack[mon.name] = float(s)
        mon.violated, mon.worst_slack = rep.violated, rep.worst_slack
    return frames, traj


def _compare_energy(system, traj, spec, checks, kappa1, kappa2):
    E = np.array([f.E for f in traj.frames])
    t = traj.times
    rise = np.diff(E).max(initial=-math.inf)
    checks["energy_nonincreasing"] = _check(rise, 1e-10, rise <= 1e-10)
    floor = float(spec.get("floor", 1e-9))
    worst = 0.0
    for k in range(1, len(t) - 1):
        snap = traj.snapshots[k]
        rate = (E[k + 1] - E[k - 1]) / (t[k + 1] - t[k - 1])
        diss = dg.dm_dissipation(snap[0], snap[1], kappa1, kappa2)
        if abs(diss) > floor:
            worst = max(worst, abs(rate - diss) / abs(diss))
    checks["dissipation_identity"] = _check(worst, 1e-3, worst < 1e-3)


def _compare_separability(cfg, system, traj, checks):
    shapes = [tuple(int(x) for x in d) for d in cfg.dimensions] if cfg.model in ("DM", "MM") else None
    if system.coupling is None or shapes is None:
        raise ConfigError(["separability comparison needs a DM or MM scenario"])
    N = cfg.N
    A = None
    if any(f is not None for f in system.freqs):
        blocks = [f if f is not None else np.zeros((N, *s, *s), complex) for f, s in zip(system.freqs, shapes)]
        A = build_lt_freq_from_mm(blocks)
    comps = [e.states for e in system.ensembles]
    T0 = np.stack([_outer([c[j] for c in comps]) for j in range(N)])
    lt_ens = Ensemble(T0, "unit-norm-tensor", "LT")
    base_rhs, coupling = system.rhs, system.coupling

    def rhs(s):
        return base_rhs(s[:-1]) + [lt_rhs(s[-1], A, coupling)]

    icfg = copy.deepcopy(cfg.integrator)
    icfg.store_snapshots = True
    traj2 = integrate(rhs, list(system.ensembles) + [lt_ens], icfg)
    res = max(dg.separability_residual(s[-1], s[:-1]) for s in traj2.snapshots)
    checks["separability_residual"] = _check(res, 1e-6, res < 1e-6)
    for fr, s in zip(traj.frames, traj2.snapshots):
        fr.V_lt = dg.potential_lt(s[-1])


def _outer(parts):
    out = parts[0]
    for p in parts[1:]:
        out = np.multiply.outer(out, p)
    return out


def _compare_splitting(cfg, system, traj, checks):
    freqs = system.freqs
    if any(f is None or np.abs(f - f[:1]).max() > 0 for f in freqs):
        raise ConfigError(["splitting needs a common nonzero frequency for every component"])
    zero = System(system.ensembles, None, system.kappa, [None] * len(freqs), system.freq_diameters,
                  system.group, system.sizes)
    kappa = system.kappa
    zero.rhs = lambda s: mum_rhs(s, None, kappa, tol=None)
    icfg = copy.deepcopy(cfg.integrator)
    icfg.store_snapshots = True
    traj0 = _run_dynamics(zero, icfg)
    worst, worst_diam = 0.0, 0.0
    for t, s, s0, f, f0 in zip(traj.times, traj.snapshots, traj0.snapshots, traj.frames, traj0.frames):
        for X, X0, H in zip(s, s0, freqs):
            rot = expm(-1j * H[0] * t)
            worst = max(worst, float(np.abs(X - rot @ X0).max()))
        worst_diam = max(worst_diam, abs(f.L - f0.L))
    checks["splitting_error"] = _check(worst, 1e-8, worst < 1e-8)
    checks["splitting_L_difference"] = _check(worst_diam, 1e-8, worst_diam < 1e-8)


def _compare_right_translate(cfg, system, traj, checks):
    rng = np.random.default_rng([cfg.seed, 1])
    gen = gen_random_unitary if system.group == "unitary" else gen_random_special_orthogonal
    Rs = [gen(d, rng=rng) for d in system.sizes]
    moved = [e.with_states(e.states @ R) for e, R in zip(system.ensembles, Rs)]
    icfg = copy.deepcopy(cfg.integrator)
    icfg.store_snapshots = True
    traj1 = _run_dynamics(system, icfg, init=moved)
    worst, worst_F = 0.0, 0.0
    for f, g, s, s1 in zip(traj.frames, traj1.frames, traj.snapshots, traj1.snapshots):
        for name in ("D_U", "D_V", "S_U", "S_V", "L"):
            worst = max(worst, abs(getattr(f, name) - getattr(g, name)))
        worst_F = max(worst_F, dg.dissimilarity_functional((s[0], s[1]), (s1[0], s1[1])))
    checks["translate_functional_difference"] = _check(worst, 1e-12, worst < 1e-12)
    checks["translate_F"] = _check(worst_F, 1e-12, worst_F < 1e-12)


def _compare_kuramoto(cfg, system, traj, checks):
    if system.sizes[:2] != [1, 1] or system.group != "unitary":
        raise ConfigError(["the Kuramoto comparison needs a DUM scenario with n=m=1"])
    if any(f is not None and np.abs(f).max() > 0 for f in system.freqs):
        raise ConfigError(["the Kuramoto comparison needs zero frequencies"])
    N, kappa = cfg.N, system.kappa
    U0, V0 = (e.states[:, 0, 0] for e in system.ensembles)
    psi0 = np.angle(U0) + np.angle(V0)

    def phase_rhs(_, psi):
        return (4 * kappa / N) * np.sin(psi[None, :] - psi[:, None]).sum(axis=1)

    sol = solve_ivp(phase_rhs, (0.0, float(traj.times[-1])), psi0, method="DOP853",
                    t_eval=traj.times, rtol=1e-13, atol=1e-13)
    worst = 0.0
    for k, s in enumerate(traj.snapshots):
        z = s[0][:, 0, 0] * s[1][:, 0, 0] * np.exp(-1j * sol.y[:, k])
        worst = max(worst, float(np.abs(np.angle(z)).max()))
    checks["kuramoto_phase_error"] = _check(worst, 1e-8, worst < 1e-8)


def _write_outputs(cfg: ScenarioConfig, summary: RunSummary, frames: list, monitor_names: list) -> None:
    out = cfg.outputs or {}
    if out.get("frames_csv"):
        path = Path(out["frames_csv"])
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(dg.FRAME_COLUMNS + [f"slack_{m}" for m in monitor_names])
            for fr in frames:
                w.writerow([format(v, ".17g") for v in fr.row(monitor_names)])
    if out.get("summary_json"):
        path = Path(out["summary_json"])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(summary.to_json(), indent=2, sort_keys=True))


def _frame_dict(fr: dg.DiagnosticsFrame | None) -> dict:
    if fr is None:
        return {}
    d = {k: getattr(fr, k) for k in dg.FRAME_COLUMNS}
    d["monitor_slack"] = dict(fr.monitor_slack)
    return d


def run_scenario(cfg: ScenarioConfig) -> RunSummary:
    """Validate, integrate, run comparisons and write outputs.

    Raises ConfigError for invalid configurations or violated hypotheses and
    NumericalError for numerical failures; monitor failures are reported in the
    summary status.
    """
    cfg.validate()
    start = time.perf_counter()
    system = build_system(cfg)
    errors = check_hypotheses(cfg, system)
    if errors:
        raise ConfigError(errors)
    params = _monitor_params(system)
    needs_partner = {"dissimilarity", "orthogonal-dissimilarity", "relative-diameter", "relative-overlap"}
    mons = [dg.Monitor(k, params, cfg.monitor_tol, cfg.hard_monitors) for k in cfg.monitors]
    online = [m for m in mons if m.kind not in needs_partner]
    post = [m for m in mons if m.kind in needs_partner]
    kinds = [c["kind"] for c in cfg.compare]
    if post and "time-shift" not in kinds:
        raise ConfigError([f"monitors {[m.name for m in post]} need a time-shift comparison"])

    checks: dict = {}
    status, message = "pass", ""
    icfg = copy.deepcopy(cfg.integrator)
    if any(k in kinds for k in ("energy", "splitting", "right-translate", "kuramoto")):
        icfg.store_snapshots = True
    traj = None
    frames: list = []
    try:
        shifted = [c for c in cfg.compare if c["kind"] == "time-shift"]
        if shifted:
            frames, traj = _compare_time_shift(cfg, system, shifted[0], checks, post, params, online)
        else:
            traj = _run_dynamics(system, icfg, online)
            frames = traj.frames
        for spec in cfg.compare:
            kind = spec["kind"]
            if kind == "time-shift":
                continue
            elif kind == "energy":
                if cfg.model not in ("DM", "MM"):
                    raise ConfigError(["the energy comparison needs a DM scenario"])
                k1, k2 = float(cfg.coupling["kappa1"]), float(cfg.coupling["kappa2"])
                _compare_energy(system, traj, spec, checks, k1, k2)
            elif kind == "separability":
                _compare_separability(cfg, system, traj, checks)
            elif kind == "splitting":
                _compare_splitting(cfg, system, traj, checks)
            elif kind == "right-translate":
                _compare_right_translate(cfg, system, traj, checks)
            elif kind == "kuramoto":
                _compare_kuramoto(cfg, system, traj, checks)
    except MonitorViolation as exc:
        status, message = "monitor-failure", str(exc)
        if exc.trajectory is not None:
            frames = exc.trajectory.frames
    rates = {}
    if frames and status == "pass":
        t = np.array([f.t for f in frames])
        for name in ("L", "F"):
            vals = np.array([getattr(f, name) if getattr(f, name) is not None else math.nan for f in frames])
            if np.all(np.isfinite(vals)) and vals[0] > 0:
                try:
                    rate, r2 = fit_above_floor(t, vals)
                    rates[name] = {"rate": rate, "r2": r2}
                except ValueError:
                    pass
    if status == "pass" and (any(m.violated and m.hard for m in mons) or not all(c["passed"] for c in checks.values())):
        status = "monitor-failure"
        failed = [n for n, c in checks.items() if not c["passed"]] + [m.name for m in mons if m.violated and m.hard]
        message = "failed: " + ", ".join(failed)
    summary = RunSummary(
        config=cfg.to_dict(), final_frame=_frame_dict(frames[-1] if frames else None), rates=rates,
        thresholds=system.thresholds.as_dict() if system.thresholds else None,
        monitors={m.name: m.verdict() for m in mons}, checks=checks,
        wall_time=time.perf_counter() - start, status=status, message=message,
        frames=frames, trajectory=traj)
    _write_outputs(cfg, summary, frames, [m.name for m in mons])
    return summary


def sweep(base: dict, param: str, values: Sequence) -> list[tuple[Any, RunSummary]]:
    """Run ``base`` once per value of the dotted parameter; output paths get a suffix."""
    results = []
    for v in values:
        data = copy.deepcopy(base)
        apply_override(data, f"{param}={v}")
        out = data.get("outputs") or {}
        for key, path in list(out.items()):
            if path:
                p = Path(path)
                out[key] = str(p.with_name(f"{p.stem}_{param}={v}{p.suffix}"))
        cfg = ScenarioConfig.from_dict(data)
        results.append((v, run_scenario(cfg)))
    return results
