import numpy as np
import pytest
from scipy.stats import special_ortho_group, unitary_group


def cplx(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def unit_stack(rng, N, shape):
    X = cplx(rng, N, *shape)
    return X / np.linalg.norm(X.reshape(N, -1), axis=1).reshape((N,) + (1,) * len(shape))


def unitary_stack(rng, N, n):
    if n == 1:
        return np.exp(2j * np.pi * rng.uniform(size=(N, 1, 1)))
    return np.array([unitary_group.rvs(n, random_state=rng) for _ in range(N)]).reshape(N, n, n)


def orthogonal_stack(rng, N, n):
    if n == 1:
        return np.ones((N, 1, 1))
    return np.array([special_ortho_group.rvs(n, random_state=rng) for _ in range(N)])


def hermitian_stack(rng, N, n):
    X = cplx(rng, N, n, n)
    return (X + X.conj().transpose(0, 2, 1)) / 2


def skew_real_stack(rng, N, n):
    X = rng.normal(size=(N, n, n))
    return (X - X.transpose(0, 2, 1)) / 2


def skew_rank4_stack(rng, N, d1, d2):
    """Random (N, d1, d2, d1, d2) tensors whose matricization is skew-Hermitian."""
    s = d1 * d2
    X = cplx(rng, N, s, s)
    return ((X - X.conj().transpose(0, 2, 1)) / 2).reshape(N, d1, d2, d1, d2)


def sphere_stack(rng, N, d):
    X = rng.normal(size=(N, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
