"""Right-hand sides of the tensor model and its sphere, matrix and group reductions.

Ensembles are stored stacked: an array of shape ``(N, *state_shape)`` holds the
N oscillator states of one component. Multi-component models (double and
multi matrix, sphere products) take a list of such arrays. Every right-hand
side is a pure function and returns raw tangent values; projection back to the
state manifold is left to the integrator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import IndexVector, _dagger, _matricize, _unmatricize, as_index, index_vectors

MODELS = ("LT", "SDS", "SMS", "DM", "DUM", "DSOM", "MM", "MUM")
MANIFOLDS = ("unit-norm-tensor", "sphere", "unitary", "special-orthogonal", "rectangular-unit-norm")
FREQUENCY_VARIANTS = ("rank2m-skew", "rank4-list", "hermitian-list", "skew-list", "none")

UNITARY_TOL = 1e-8


def manifold_norm2(manifold: str, shape: Sequence[int]) -> float:
    """Squared Frobenius norm of a point on the manifold (n for U(n), 1 otherwise)."""
    if manifold in ("unitary", "special-orthogonal"):
        return float(shape[0])
    return 1.0


def feasibility_defect(states: np.ndarray, manifold: str) -> float:
    """Distance-type defect of a stacked ensemble from its manifold."""
    states = np.asarray(states)
    if manifold in ("unitary", "special-orthogonal"):
        defect = unitarity_defect(states)
        if manifold == "special-orthogonal":
            if np.iscomplexobj(states) and np.abs(states.imag).max(initial=0.0) > 0:
                return float("inf")
            dets = np.linalg.det(states.real)
            defect = max(defect, float(np.abs(dets - 1).max()))
        return defect
    norms = np.linalg.norm(states.reshape(states.shape[0], -1), axis=1)
    return float(np.abs(norms - 1).max())


def unitarity_defect(states) -> float:
    """max_j ||I - U_j U_j^dagger||_F over a stack of square matrices."""
    states = np.asarray(states)
    if states.ndim == 2:
        states = states[None]
    if states.ndim != 3 or states.shape[1] != states.shape[2]:
        raise ValueError(f"unitarity defect needs square matrices, got shape {states.shape[1:]}")
    eye = np.eye(states.shape[1])
    gram = states @ _dagger(states)
    return float(np.linalg.norm(eye - gram, axis=(1, 2)).max())


@dataclass(frozen=True)
class Ensemble:
    """N oscillator states of one shape with model and manifold tags."""

    states: np.ndarray
    manifold: str
    model: str = "LT"

    def __post_init__(self):
        if self.manifold not in MANIFOLDS:
            raise ValueError(f"unknown manifold {self.manifold!r}; expected one of {MANIFOLDS}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        states = np.asarray(self.states)
        if states.ndim < 1 or states.shape[0] == 0:
            raise ValueError("an ensemble needs at least one state")
        object.__setattr__(self, "states", states)

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.states.shape[1:]

    def defect(self) -> float:
        return feasibility_defect(self.states, self.manifold)

    def check(self, tol: float = UNITARY_TOL) -> "Ensemble":
        d = self.defect()
        if not d < tol:
            raise ValueError(f"{self.manifold} ensemble off its manifold: defect {d:.3e} >= {tol:.1e}")
        return self

    def with_states(self, states: np.ndarray) -> "Ensemble":
        return Ensemble(states, self.manifold, self.model)


@dataclass(frozen=True)
class CouplingSpec:
    """Nonnegative strengths per index vector, plus the reduced (kappa1, kappa2) form."""

    full_map: Mapping[IndexVector, float]
    reduced: tuple[float, float] | None = None
    kappa: float | None = None

    def __post_init__(self):
        fm = {as_index(k): float(v) for k, v in self.full_map.items()}
        lengths = {len(k) for k in fm}
        if len(lengths) > 1:
            raise ValueError(f"index vectors of mixed lengths {sorted(lengths)}")
        bad = {k: v for k, v in fm.items() if not v >= 0}
        if bad:
            raise ValueError(f"coupling strengths must be nonnegative: {bad}")
        object.__setattr__(self, "full_map", fm)
        if self.reduced is not None and self.kappa is None:
            object.__setattr__(self, "kappa", float(sum(self.reduced)))

    @property
    def rank(self) -> int:
        return len(next(iter(self.full_map))) if self.full_map else 0

    def active(self) -> list[tuple[IndexVector, float]]:
        return [(k, v) for k, v in sorted(self.full_map.items()) if v != 0]


@dataclass(frozen=True)
class FrequencySpec:
    """Per-oscillator free-flow data; ``data`` holds one stacked array per component."""

    variant: str
    data: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.variant not in FREQUENCY_VARIANTS:
            raise ValueError(f"unknown frequency variant {self.variant!r}")
        object.__setattr__(self, "data", tuple(np.asarray(d) for d in self.data))

    def check(self, tol: float = 1e-12) -> "FrequencySpec":
        for k, d in enumerate(self.data):
            if self.variant == "hermitian-list":
                err = np.abs(d - _dagger(d)).max(initial=0.0)
            elif self.variant == "skew-list":
                err = np.abs(d + np.swapaxes(d, -1, -2)).max(initial=0.0)
                if np.iscomplexobj(d):
                    err = max(err, np.abs(d.imag).max(initial=0.0))
            elif self.variant in ("rank2m-skew", "rank4-list"):
                n = d.shape[0]
                half = (d.ndim - 1) // 2
                size = int(np.prod(d.shape[1:1 + half]))
                mat = d.reshape(n, size, size)
                err = np.abs(mat + _dagger(mat)).max(initial=0.0)
            else:
                err = 0.0
            if err > tol:
                raise ValueError(f"frequency component {k} violates its symmetry by {err:.3e}")
        return self


def is_skew_tensor(a, tol: float = 1e-12) -> bool:
    """True when conj(A)[a0, a1] = -A[a1, a0] for a rank-2m tensor."""
    a = np.asarray(a)
    half = a.ndim // 2
    size = int(np.prod(a.shape[:half]))
    mat = a.reshape(size, size)
    return bool(np.abs(mat + mat.conj().T).max(initial=0.0) <= tol)


# ---------------------------------------------------------------- coupling patterns

def build_kappa(pattern: str, m: int, kappa: float | None = None,
                kappa1: float | None = None, kappa2: float | None = None) -> CouplingSpec:
    """Coupling map for the double matrix (DM), multi matrix (MM) or sphere product (SMS) reductions.

    For DM and MM, m counts matrix factors and index vectors have length 2m.
    For SMS, m counts sphere factors and index vectors have length m; the
    active vectors are all ones except a single zero, which reproduces the
    sphere product flow for every m (one-hot vectors only do so for m=2).
    """
    pattern = pattern.upper()
    if pattern in ("DM", "MM"):
        if pattern == "DM" and m != 2:
            raise ValueError(f"the DM pattern needs m=2, got {m}")
        if m < 2:
            raise ValueError(f"the MM pattern needs m >= 2, got {m}")
        if kappa1 is None or kappa2 is None:
            raise ValueError(f"the {pattern} pattern needs kappa1 and kappa2")
        fm = {}
        for q in range(m):
            for pos, strength in ((2 * q, kappa1), (2 * q + 1, kappa2)):
                bits = [1] * (2 * m)
                bits[pos] = 0
                fm[tuple(bits)] = float(strength)
        return CouplingSpec(fm, reduced=(float(kappa1), float(kappa2)))
    if pattern == "SMS":
        if m < 1:
            raise ValueError(f"the SMS pattern needs m >= 1, got {m}")
        if kappa is None:
            raise ValueError("the SMS pattern needs kappa")
        fm = {}
        for k in range(m):
            bits = [1] * m
            bits[k] = 0
            fm[tuple(bits)] = float(kappa)
        return CouplingSpec(fm, kappa=float(kappa))
    raise ValueError(f"unknown coupling pattern {pattern!r}; expected DM, MM or SMS")


# ---------------------------------------------------------------- frequency tensors

def hermitian_to_rank4(H) -> np.ndarray:
    """[B]_{a1 b1 a2 b2} = (-iH)_{a1 a2} delta_{b1 b2}, so that B U = -i H U."""
    H = np.asarray(H)
    n = H.shape[-1]
    return np.einsum("...ac,bd->...abcd", -1j * H, np.eye(n))


def build_lt_freq_from_dm(B, C) -> np.ndarray:
    """Rank-8 frequency tensor acting as B on the first factor and C on the second.

    Accepts single tensors or stacks with a leading oscillator axis.
    """
    B, C = np.asarray(B), np.asarray(C)
    if B.ndim != C.ndim or B.ndim not in (4, 5) or (B.ndim == 5 and B.shape[0] != C.shape[0]):
        raise ValueError(f"incompatible frequency shapes {B.shape} and {C.shape}")
    d1, d2 = B.shape[-4:-2]
    d3, d4 = C.shape[-4:-2]
    if B.shape[-2:] != (d1, d2) or C.shape[-2:] != (d3, d4):
        raise ValueError("rank-4 frequencies must have shape (d1, d2, d1, d2)")
    part_b = np.einsum("...abcd,eg,fh->...abefcdgh", B, np.eye(d3), np.eye(d4))
    part_c = np.einsum("...efgh,ac,bd->...abefcdgh", C, np.eye(d1), np.eye(d2))
    return part_b + part_c


def build_lt_freq_from_dm_hermitian(H, G) -> np.ndarray:
    return build_lt_freq_from_dm(hermitian_to_rank4(H), hermitian_to_rank4(G))


def build_lt_freq_from_mm(B_list: Sequence) -> np.ndarray:
    """Rank-4m frequency tensor from m rank-4 blocks, via Kronecker sums of the matricized blocks."""
    if len(B_list) == 0:
        raise ValueError("need at least one rank-4 block")
    blocks = [np.asarray(b) for b in B_list]
    lead = blocks[0].shape[:-4]
    for b in blocks:
        if b.ndim != len(lead) + 4 or b.shape[:-4] != lead or b.shape[-2:] != b.shape[-4:-2]:
            raise ValueError(f"bad rank-4 block shape {b.shape}")
    shapes = [b.shape[-4:-2] for b in blocks]
    sizes = [s[0] * s[1] for s in shapes]
    total = int(np.prod(sizes))
    out = np.zeros(lead + (total, total), dtype=complex)
    for k, b in enumerate(blocks):
        mat = b.reshape(lead + (sizes[k], sizes[k]))
        left = np.eye(int(np.prod(sizes[:k])))
        right = np.eye(int(np.prod(sizes[k + 1:])))
        for idx in np.ndindex(*lead):
            out[idx] += np.kron(np.kron(left, mat[idx]), right)
    state_shape = tuple(d for s in shapes for d in s)
    return out.reshape(lead + state_shape + state_shape)


def build_lt_freq_from_mm_hermitian(H_list: Sequence) -> np.ndarray:
    return build_lt_freq_from_mm([hermitian_to_rank4(H) for H in H_list])


# ---------------------------------------------------------------- right-hand sides

def _gram(X: np.ndarray) -> np.ndarray:
    """G[j, k] = <X_j, X_k> with conjugation on the first slot."""
    flat = X.reshape(X.shape[0], -1)
    return flat.conj() @ flat.T


def _apply_freq(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    d = int(np.prod(X.shape[1:]))
    return np.einsum("jab,jb->ja", A.reshape(n, d, d), X.reshape(n, d)).reshape(X.shape)


def lt_rhs(T, A, coupling: CouplingSpec) -> np.ndarray:
    """Tensor model derivative for a stack T of shape (N, *shape); A may be None."""
    T = np.asarray(T)
    shape = T.shape[1:]
    if coupling.full_map and coupling.rank != len(shape):
        raise ValueError(f"coupling index length {coupling.rank} does not match state rank {len(shape)}")
    out = np.zeros(T.shape, dtype=np.result_type(T, complex))
    if A is not None:
        A = np.asarray(A)
        if A.shape != T.shape + shape:
            raise ValueError(f"frequency shape {A.shape[1:]} does not double state shape {shape}")
        out += _apply_freq(A, T)
    Tc = T.mean(axis=0)
    for bits, k in coupling.active():
        mc = _matricize(Tc, bits)
        mj = _matricize(T, bits, lead=1)
        mjh = _dagger(mj)
        term = mc @ mjh @ mj - mj @ _dagger(mc) @ mj
        out += k * _unmatricize(term, bits, shape, lead=1)
    return out


def _product_weights(grams: Sequence[np.ndarray], skip: int) -> np.ndarray:
    n = grams[0].shape[0]
    w = np.ones((n, n), dtype=np.result_type(*grams))
    for ell, g in enumerate(grams):
        if ell != skip:
            w = w * g
    return w


def _check_stack(X: np.ndarray, N: int, name: str) -> None:
    if X.shape[0] != N:
        raise ValueError(f"{name}: expected {N} oscillators, got {X.shape[0]}")


def sms_rhs(components: Sequence, kappa: float, freqs: Sequence | None = None) -> list[np.ndarray]:
    """Sphere-product aggregation; each component is a real (N, d_k) array of unit vectors."""
    comps = [np.asarray(c) for c in components]
    if len(comps) < 2:
        raise ValueError("the sphere product model needs at least two components")
    if any(np.iscomplexobj(c) for c in comps):
        raise ValueError("sphere states must be real")
    N = comps[0].shape[0]
    for c in comps:
        _check_stack(c, N, "sphere component")
        if c.ndim != 2:
            raise ValueError(f"sphere states must be vectors, got shape {c.shape[1:]}")
    grams = [c @ c.T for c in comps]
    out = []
    for k, u in enumerate(comps):
        w = _product_weights(grams, k)
        du = kappa / N * (w @ u - (w * grams[k]).sum(axis=1)[:, None] * u)
        if freqs is not None and freqs[k] is not None:
            om = np.asarray(freqs[k])
            if om.shape != (N, u.shape[1], u.shape[1]):
                raise ValueError(f"frequency shape {om.shape} does not match component {k}")
            du = du + np.einsum("jab,jb->ja", om, u)
        out.append(du)
    return out


def sds_rhs(u, v, omega=None, lam=None, kappa: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Double sphere model; omega and lam are stacks of real skew matrices or None."""
    du, dv = sms_rhs([u, v], kappa, [omega, lam])
    return du, dv


def _matrix_core(comps: Sequence[np.ndarray], kappa1: float, kappa2: float) -> list[np.ndarray]:
    N = comps[0].shape[0]
    grams = [_gram(c) for c in comps]
    out = []
    for p, U in enumerate(comps):
        w = _product_weights(grams, p)
        M = (w @ U.reshape(N, -1)).reshape(U.shape)
        Uh = _dagger(U)
        back = U @ _dagger(M) @ U
        dU = (kappa1 / N) * (M @ Uh @ U - back) + (kappa2 / N) * (U @ Uh @ M - back)
        out.append(dU)
    return out


def mm_rhs(components: Sequence, B_list: Sequence | None, kappa1: float, kappa2: float) -> list[np.ndarray]:
    """Multi matrix model; B_list holds one (N, d1, d2, d1, d2) stack per component, or None."""
    comps = [np.asarray(c) for c in components]
    if len(comps) < 2:
        raise ValueError("the multi matrix model needs at least two components")
    N = comps[0].shape[0]
    for c in comps:
        _check_stack(c, N, "matrix component")
        if c.ndim != 3:
            raise ValueError(f"matrix states expected, got shape {c.shape[1:]}")
    out = _matrix_core(comps, kappa1, kappa2)
    if B_list is not None:
        if len(B_list) != len(comps):
            raise ValueError("one frequency block per component is required")
        for p, (U, B) in enumerate(zip(comps, B_list)):
            if B is None:
                continue
            B = np.asarray(B)
            if B.shape != U.shape + U.shape[1:]:
                raise ValueError(f"frequency shape {B.shape} does not match component {p}")
            out[p] = out[p] + _apply_freq(B, U)
    return out


def dm_rhs(U, V, B=None, C=None, kappa1: float = 1.0, kappa2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Double matrix model on rectangular or square matrices."""
    dU, dV = mm_rhs([U, V], [B, C], kappa1, kappa2)
    return dU, dV


def _check_group(comps: Sequence[np.ndarray], tol: float | None, real: bool) -> None:
    if tol is None:
        return
    for p, c in enumerate(comps):
        if real and np.iscomplexobj(c):
            raise ValueError(f"component {p}: orthogonal states must be real")
        d = unitarity_defect(c)
        if not d < tol:
            raise ValueError(f"component {p}: unitarity defect {d:.3e} exceeds {tol:.1e}")


def _group_core(comps: Sequence[np.ndarray], gens: Sequence, kappa: float) -> list[np.ndarray]:
    N = comps[0].shape[0]
    grams = [_gram(c) for c in comps]
    out = []
    for p, U in enumerate(comps):
        w = _product_weights(grams, p)
        M = (w @ U.reshape(N, -1)).reshape(U.shape)
        dU = (kappa / N) * (M - U @ (_dagger(M) @ U))
        if gens[p] is not None:
            dU = dU + gens[p] @ U
        out.append(dU)
    return out


def mum_rhs(components: Sequence, H_list: Sequence | None = None, kappa: float = 1.0,
            tol: float | None = UNITARY_TOL) -> list[np.ndarray]:
    """Multi unitary model. Pass tol=None to skip the unitarity check (integrator stages)."""
    comps = [np.asarray(c) for c in components]
    if len(comps) < 2:
        raise ValueError("the multi unitary model needs at least two components")
    N = comps[0].shape[0]
    for c in comps:
        _check_stack(c, N, "unitary component")
    _check_group(comps, tol, real=False)
    H_list = H_list if H_list is not None else [None] * len(comps)
    gens = [None if H is None else -1j * np.asarray(H) for H in H_list]
    return _group_core(comps, gens, kappa)


def dum_rhs(U, V, H=None, G=None, kappa: float = 1.0,
            tol: float | None = UNITARY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Double unitary model: dU_j = -i H_j U_j + kappa/N sum_k (<V_j,V_k> U_k - <V_k,V_j> U_j U_k^dag U_j)."""
    dU, dV = mum_rhs([U, V], [H, G], kappa, tol)
    return dU, dV


def dsom_rhs(U, V, Omega=None, Psi=None, kappa: float = 1.0,
             tol: float | None = UNITARY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Double special-orthogonal model with real skew generators Omega and Psi."""
    comps = [np.asarray(U), np.asarray(V)]
    _check_stack(comps[1], comps[0].shape[0], "orthogonal component")
    _check_group(comps, tol, real=True)
    dU, dV = _group_core(comps, [Omega, Psi], kappa)
    return dU, dV
