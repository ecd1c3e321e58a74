"""Brute-force reference implementations written with explicit index loops.

Nothing here imports the package, so the oracles stay independent of the
vectorized code they check.
"""
import itertools

import numpy as np


def indices(shape):
    return itertools.product(*[range(d) for d in shape])


def tensor_product(a, b):
    a, b = np.asarray(a), np.asarray(b)
    out = np.zeros(a.shape + b.shape, dtype=np.result_type(a, b))
    for i in indices(a.shape):
        for j in indices(b.shape):
            out[i + j] = a[i] * b[j]
    return out


def inner(a, b):
    a, b = np.asarray(a), np.asarray(b)
    total = 0j
    for i in indices(a.shape):
        total += np.conj(a[i]) * b[i]
    return total


def contract(A, t):
    """out[a] = sum_b A[a, b] t[b] for a rank-2m A and rank-m t."""
    t = np.asarray(t)
    out = np.zeros(t.shape, dtype=complex)
    for a in indices(t.shape):
        s = 0j
        for b in indices(t.shape):
            s += A[a + b] * t[b]
        out[a] = s
    return out


def _pick(bits, free, summed):
    return tuple(summed[k] if bits[k] else free[k] for k in range(len(bits)))


def cubic(bits, x, y, z):
    """out[a0] = sum_{a1} x[a_{i*}] conj(y[a1]) z[a_{1-i*}]."""
    shape = np.asarray(x).shape
    flip = tuple(1 - b for b in bits)
    out = np.zeros(shape, dtype=complex)
    for a0 in indices(shape):
        s = 0j
        for a1 in indices(shape):
            s += x[_pick(bits, a0, a1)] * np.conj(y[a1]) * z[_pick(flip, a0, a1)]
        out[a0] = s
    return out


def lt(T, A, kappa_map):
    N = len(T)
    shape = T[0].shape
    Tc = np.zeros(shape, dtype=complex)
    for k in range(N):
        for a in indices(shape):
            Tc[a] += T[k][a] / N
    out = []
    for j in range(N):
        d = contract(A[j], T[j]) if A is not None else np.zeros(shape, dtype=complex)
        for bits, kap in kappa_map.items():
            d = d + kap * (cubic(bits, Tc, T[j], T[j]) - cubic(bits, T[j], Tc, T[j]))
        out.append(d)
    return out


# ---------------------------------------------------------------- matrix helpers

def matmul(X, Y):
    r, c, q = X.shape[0], Y.shape[1], X.shape[1]
    out = np.zeros((r, c), dtype=np.result_type(X, Y))
    for i in range(r):
        for j in range(c):
            s = 0
            for k in range(q):
                s += X[i, k] * Y[k, j]
            out[i, j] = s
    return out


def dagger(X):
    out = np.zeros((X.shape[1], X.shape[0]), dtype=X.dtype)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            out[j, i] = np.conj(X[i, j])
    return out


def apply_rank4(B, U):
    """[B U]_{ab} = sum_{cd} B[a, b, c, d] U[c, d]."""
    out = np.zeros(U.shape, dtype=complex)
    for a, b in indices(U.shape):
        for c, d in indices(U.shape):
            out[a, b] += B[a, b, c, d] * U[c, d]
    return out


def _weight(comps, p, j, k):
    w = 1.0 + 0j
    for l, X in enumerate(comps):
        if l != p:
            w *= inner(X[j], X[k])
    return w


def mm(comps, Bs, k1, k2):
    """Multi matrix model, term by term."""
    N = len(comps[0])
    out = []
    for p, U in enumerate(comps):
        dU = np.zeros((N,) + U[0].shape, dtype=complex)
        for j in range(N):
            if Bs is not None and Bs[p] is not None:
                dU[j] += apply_rank4(Bs[p][j], U[j])
            for k in range(N):
                wjk = _weight(comps, p, j, k)
                wkj = _weight(comps, p, k, j)
                back = wkj * matmul(matmul(U[j], dagger(U[k])), U[j])
                dU[j] += k1 / N * (wjk * matmul(matmul(U[k], dagger(U[j])), U[j]) - back)
                dU[j] += k2 / N * (wjk * matmul(matmul(U[j], dagger(U[j])), U[k]) - back)
        out.append(dU)
    return out


def group(comps, gens, kappa):
    """Multi unitary / special-orthogonal model; gens[p][j] is the full generator (-iH or Omega)."""
    N = len(comps[0])
    out = []
    for p, U in enumerate(comps):
        dU = np.zeros((N,) + U[0].shape, dtype=complex)
        for j in range(N):
            if gens is not None and gens[p] is not None:
                dU[j] += matmul(gens[p][j], U[j])
            for k in range(N):
                wjk = _weight(comps, p, j, k)
                wkj = _weight(comps, p, k, j)
                dU[j] += kappa / N * (wjk * U[k] - wkj * matmul(matmul(U[j], dagger(U[k])), U[j]))
        out.append(dU)
    return out


def dsom(U, V, Om, Ps, kappa):
    """Special-orthogonal double model with the transpose written out."""
    N = len(U)
    dU = np.zeros(U.shape)
    dV = np.zeros(V.shape)
    for j in range(N):
        if Om is not None:
            dU[j] += matmul(Om[j], U[j])
        if Ps is not None:
            dV[j] += matmul(Ps[j], V[j])
        for k in range(N):
            dU[j] += kappa / N * inner(V[j], V[k]).real * (U[k] - matmul(matmul(U[j], U[k].T), U[j]))
            dV[j] += kappa / N * inner(U[j], U[k]).real * (V[k] - matmul(matmul(V[j], V[k].T), V[j]))
    return dU, dV


def sms(comps, kappa, freqs=None):
    N = len(comps[0])
    out = []
    for k, u in enumerate(comps):
        du = np.zeros(u.shape)
        for i in range(N):
            if freqs is not None and freqs[k] is not None:
                for a in range(u.shape[1]):
                    for b in range(u.shape[1]):
                        du[i, a] += freqs[k][i][a, b] * u[i, b]
            for j in range(N):
                w = 1.0
                for l, x in enumerate(comps):
                    if l != k:
                        w *= sum(x[i, a] * x[j, a] for a in range(x.shape[1]))
                c = sum(u[i, a] * u[j, a] for a in range(u.shape[1]))
                for a in range(u.shape[1]):
                    du[i, a] += kappa / N * w * (u[j, a] - c * u[i, a])
        out.append(du)
    return out


def kuramoto_phase_rhs(psi, kappa):
    """Combined phase of the scalar unitary reduction: 4 kappa / N sum sin(psi_k - psi_j)."""
    N = len(psi)
    out = np.zeros(N)
    for j in range(N):
        for k in range(N):
            out[j] += 4 * kappa / N * np.sin(psi[k] - psi[j])
    return out


def rel_err(got, want):
    got = np.concatenate([np.ravel(np.asarray(g)) for g in got]) if isinstance(got, (list, tuple)) else np.ravel(got)
    want = np.concatenate([np.ravel(np.asarray(w)) for w in want]) if isinstance(want, (list, tuple)) else np.ravel(want)
    scale = np.linalg.norm(want)
    return float(np.linalg.norm(got - want) / (scale if scale > 0 else 1.0))
