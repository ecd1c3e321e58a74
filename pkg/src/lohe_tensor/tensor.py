"""Dense complex tensors: products, inner products, contractions and reshaping.

Tensors are plain numpy arrays of complex dtype. Functions that act on a whole
ensemble accept a leading oscillator axis through the ``lead`` argument of the
internal helpers; the public functions act on single tensors.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

IndexVector = tuple[int, ...]


def as_index(bits: Sequence[int]) -> IndexVector:
    out = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in out):
        raise ValueError(f"index vector entries must be 0 or 1, got {bits!r}")
    return out


def complement(bits: Sequence[int]) -> IndexVector:
    return tuple(1 - b for b in as_index(bits))


def index_vectors(m: int) -> list[IndexVector]:
    """All 2**m index vectors of length m in lexicographic order."""
    return [tuple(p) for p in itertools.product((0, 1), repeat=m)]


def tensor_product(a, b) -> np.ndarray:
    """Outer product; the result shape is a.shape + b.shape."""
    return np.multiply.outer(np.asarray(a), np.asarray(b))


def _check_same_shape(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    for x in arrays[1:]:
        if x.shape != shape:
            raise ValueError(f"shape mismatch: {shape} vs {x.shape}")


def frobenius_inner(a, b) -> complex:
    """sum(conj(a) * b), conjugate-linear in the first argument."""
    a, b = np.asarray(a), np.asarray(b)
    _check_same_shape(a, b)
    return complex(np.vdot(a, b))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a).ravel()))


def contract_freq(a, t) -> np.ndarray:
    """Contract the trailing half of a rank-2m tensor against a rank-m tensor."""
    a, t = np.asarray(a), np.asarray(t)
    if a.shape != t.shape + t.shape:
        raise ValueError(f"frequency shape {a.shape} does not double state shape {t.shape}")
    d = t.size
    return (a.reshape(d, d) @ t.reshape(d)).reshape(t.shape)


def _split(shape: Sequence[int], bits: IndexVector):
    rows = [k for k, b in enumerate(bits) if b == 0]
    cols = [k for k, b in enumerate(bits) if b == 1]
    nr = int(np.prod([shape[k] for k in rows], dtype=int))
    nc = int(np.prod([shape[k] for k in cols], dtype=int))
    return rows, cols, nr, nc


def _matricize(t: np.ndarray, bits: IndexVector, lead: int = 0) -> np.ndarray:
    core = t.shape[lead:]
    if len(bits) != len(core):
        raise ValueError(f"index vector length {len(bits)} does not match rank {len(core)}")
    rows, cols, nr, nc = _split(core, bits)
    perm = list(range(lead)) + [lead + k for k in rows + cols]
    return t.transpose(perm).reshape(t.shape[:lead] + (nr, nc))


def _unmatricize(mat: np.ndarray, bits: IndexVector, shape: Sequence[int], lead: int = 0) -> np.ndarray:
    rows, cols, _, _ = _split(shape, bits)
    order = rows + cols
    permuted = mat.reshape(mat.shape[:lead] + tuple(shape[k] for k in order))
    inverse = np.argsort(order)
    return permuted.transpose(list(range(lead)) + [lead + int(k) for k in inverse])


def matricize(t, i_star: Sequence[int]) -> np.ndarray:
    """Rows collect the positions where i_star is 0, columns those where it is 1."""
    return _matricize(np.asarray(t), as_index(i_star))


def unmatricize(mat, i_star: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for a known tensor shape."""
    bits = as_index(i_star)
    shape = tuple(shape)
    _, _, nr, nc = _split(shape, bits)
    mat = np.asarray(mat)
    if mat.shape != (nr, nc):
        raise ValueError(f"matrix shape {mat.shape} incompatible with {shape} and {bits}")
    return _unmatricize(mat, bits, shape)


def _dagger(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def cubic_coupling_term(i_star: Sequence[int], x, y, z) -> np.ndarray:
    """Cubic term x[a_{i*}] conj(y)[a_1] z[a_{1-i*}] summed over contracted indices.

    With M the matricization along i_star this is M(x) M(y)^dagger M(z).
    """
    bits = as_index(i_star)
    x, y, z = (np.asarray(w) for w in (x, y, z))
    _check_same_shape(x, y, z)
    if len(bits) != x.ndim:
        raise ValueError(f"index vector length {len(bits)} does not match rank {x.ndim}")
    prod = _matricize(x, bits) @ _dagger(_matricize(y, bits)) @ _matricize(z, bits)
    return _unmatricize(prod, bits, x.shape)
