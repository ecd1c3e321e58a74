import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import cplx, hermitian_stack, unit_stack, unitary_stack
from lohe_tensor.diagnostics import (DiagnosticsFrame, alpha_polynomial, alpha_threshold, det_phase_spread,
                                     diameters, dissimilarity_components, dissimilarity_functional, dm_dissipation,
                                     dum_dissipation, fit_decay_rate, g_polynomial, inequality_monitor,
                                     locking_constants, locking_metrics, make_frame, potential_lt,
                                     potential_product, separability_residual, spectral_diameter,
                                     total_functional)
from lohe_tensor.integrator import IntegratorConfig, integrate
from lohe_tensor.models import Ensemble, dm_rhs, dum_rhs
from lohe_tensor.scenarios import ScenarioConfig, preset_dict, run_scenario


def uens(X):
    return Ensemble(X, "unitary", "DUM")


# ---------------------------------------------------------------- diameters

def test_diameters_identical(rng):
    U = np.repeat(unitary_stack(rng, 1, 3), 4, axis=0)
    assert diameters(uens(U)) == pytest.approx((0.0, 0.0), abs=1e-14)
    with pytest.raises(ValueError):
        diameters(np.zeros((0, 2, 2)), 2.0)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.5, math.pi])
def test_diameters_closed_form(rng, theta):
    U1 = unitary_stack(rng, 1, 3)[0]
    U2 = U1 @ np.diag([np.exp(1j * theta), 1, 1])
    D, S = diameters(uens(np.array([U1, U2])))
    assert D == pytest.approx(2 * abs(math.sin(theta / 2)), abs=1e-13)
    assert S == pytest.approx(abs(1 - np.exp(1j * theta)), abs=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_overlap_bounded_by_diameter(seed, n):
    U = unitary_stack(np.random.default_rng(seed), 4, n)
    D, S = diameters(uens(U))
    assert S <= math.sqrt(n) * D + 1e-12


def test_total_functional(rng):
    U1 = unitary_stack(rng, 1, 3)[0]
    U = np.array([U1, U1 @ np.diag([np.exp(0.4j), 1, 1])])
    V = np.repeat(unitary_stack(rng, 1, 2), 2, axis=0)
    L = total_functional(uens(U), uens(V))
    assert L == pytest.approx(2 * math.sin(0.2) + abs(1 - np.exp(0.4j)), abs=1e-13)
    U = unitary_stack(rng, 3, 3)
    V = unitary_stack(rng, 3, 2)
    parts = diameters(uens(U)) + diameters(uens(V))
    assert total_functional(uens(U), uens(V)) >= max(parts)


def test_right_translation_invariance(rng):
    U, V = unitary_stack(rng, 4, 3), unitary_stack(rng, 4, 2)
    R, Q = unitary_stack(rng, 1, 3)[0], unitary_stack(rng, 1, 2)[0]
    assert total_functional(uens(U @ R), uens(V @ Q)) == pytest.approx(total_functional(uens(U), uens(V)), abs=1e-13)
    assert dissimilarity_functional((U, V), (U @ R, V @ Q)) < 1e-13
    assert dissimilarity_functional((U, V), (U, V)) == 0


def test_dissimilarity_matches_loops(rng):
    U, V = unitary_stack(rng, 3, 2), unitary_stack(rng, 3, 2)
    Ut, Vt = unitary_stack(rng, 3, 2), unitary_stack(rng, 3, 2)
    comp = dissimilarity_components((U, V), (Ut, Vt))

    def loop(X, Y):
        d = s = 0.0
        for i in range(3):
            for j in range(3):
                P = oracles.matmul(X[i], oracles.dagger(X[j])) - oracles.matmul(Y[i], oracles.dagger(Y[j]))
                d = max(d, math.sqrt(oracles.inner(P, P).real))
                s = max(s, abs(oracles.inner(X[i], X[j]) - oracles.inner(Y[i], Y[j])))
        return d, s

    dU, sU = loop(U, Ut)
    dV, sV = loop(V, Vt)
    assert comp["d_U"] == pytest.approx(dU, abs=1e-13) and comp["Srel_U"] == pytest.approx(sU, abs=1e-13)
    assert comp["d_V"] == pytest.approx(dV, abs=1e-13) and comp["Srel_V"] == pytest.approx(sV, abs=1e-13)
    with pytest.raises(ValueError):
        dissimilarity_functional((U, V), (Ut[:2], Vt))


# ---------------------------------------------------------------- potentials

def test_potential_examples(rng):
    u = np.repeat(unit_stack(rng, 1, (2, 3)), 4, axis=0)
    v = np.repeat(unit_stack(rng, 1, (3,)), 4, axis=0)
    assert potential_product([u, v]) == pytest.approx(0, abs=1e-15)
    U = np.repeat(unitary_stack(rng, 1, 3), 2, axis=0)
    V = np.repeat(unitary_stack(rng, 1, 4), 2, axis=0)
    assert potential_product([U, V]) == pytest.approx(1 - 12, abs=1e-12)
    T = np.zeros((2, 2, 2), dtype=complex)
    T[0, 0, 0] = T[1, 1, 1] = 1
    assert potential_lt(T) == pytest.approx(0.5)
    assert potential_lt(np.repeat(T[:1], 3, axis=0)) == pytest.approx(0)
    with pytest.raises(ValueError):
        potential_product([u])


def test_potential_matches_loops_and_tensor_form(rng):
    U, V, W = unit_stack(rng, 4, (2, 2)), unit_stack(rng, 4, (2, 3)), unit_stack(rng, 4, (3,))
    want = 1 - sum(oracles.inner(U[i], U[j]) * oracles.inner(V[i], V[j]) * oracles.inner(W[i], W[j])
                   for i in range(4) for j in range(4)).real / 16
    assert potential_product([U, V, W]) == pytest.approx(want, abs=1e-13)
    T = np.array([oracles.tensor_product(oracles.tensor_product(U[j], V[j]), W[j]) for j in range(4)])
    assert potential_lt(T) == pytest.approx(want, abs=1e-13)


def test_dm_dissipation_matches_finite_difference(rng):
    U, V = unit_stack(rng, 5, (2, 2)), unit_stack(rng, 5, (2, 2))
    for k1, k2 in ((1.0, 0.0), (0.0, 1.0), (1.0, 0.5)):
        dU, dV = dm_rhs(U, V, kappa1=k1, kappa2=k2)
        h = 1e-5
        rate = (potential_product([U + h * dU, V + h * dV]) - potential_product([U - h * dU, V - h * dV])) / (2 * h)
        assert rate == pytest.approx(dm_dissipation(U, V, k1, k2), rel=1e-8)
        assert dm_dissipation(U, V, k1, k2) <= 0


def test_dum_dissipation_scaling(rng):
    U, V = unitary_stack(rng, 5, 3), unitary_stack(rng, 5, 2)
    for kappa in (0.5, 2.0):
        dU, dV = dum_rhs(U, V, kappa=kappa)
        h = 1e-5
        rate = (potential_product([U + h * dU, V + h * dV]) - potential_product([U - h * dU, V - h * dV])) / (2 * h)
        assert rate == pytest.approx(dum_dissipation(dU, dV, kappa), rel=1e-7)


def test_determinant_phase_conserved(rng):
    U, V = unitary_stack(rng, 4, 3), unitary_stack(rng, 4, 3)
    rhs = lambda s: list(dum_rhs(s[0], s[1], None, None, 1.0, tol=None))
    traj = integrate(rhs, [uens(U), uens(V)], IntegratorConfig(dt=1e-3, t_end=2.0, auto_dt=False))
    ratio0 = np.linalg.det(U) / np.linalg.det(V)
    ratio1 = np.linalg.det(traj.final[0].states) / np.linalg.det(traj.final[1].states)
    np.testing.assert_allclose(np.angle(ratio1 / ratio0), 0, atol=1e-10)
    assert det_phase_spread(traj.final[0], traj.final[1]) == pytest.approx(det_phase_spread(U, V), abs=1e-10)


def test_frame_invariants(rng):
    U, V = unitary_stack(rng, 4, 3), unitary_stack(rng, 4, 2)
    fr = make_frame(0.0, [uens(U), uens(V)], partner=[uens(U), uens(V)])
    assert fr.L == pytest.approx(fr.D_U + fr.D_V + fr.S_U + fr.S_V)
    assert fr.S_U <= math.sqrt(3) * fr.D_U and fr.S_V <= math.sqrt(2) * fr.D_V
    assert fr.F == 0 and fr.extra["L_tilde"] == pytest.approx(fr.L)
    assert isinstance(fr, DiagnosticsFrame) and len(fr.row()) == 10


def test_spectral_diameter(rng):
    H = np.array([np.diag([1.0, 0.0]), np.diag([0.0, -0.5])])
    assert spectral_diameter(H) == pytest.approx(1.0)
    assert spectral_diameter(H[:1]) == 0


# ---------------------------------------------------------------- thresholds

def test_alpha_reference_value():
    a = alpha_threshold(25, 25)
    assert a == pytest.approx((-327 + math.sqrt(125889)) / 316, abs=1e-14)
    assert a == pytest.approx(0.0880013, abs=1e-7)
    f = alpha_polynomial(25, 25, "unitary")
    assert abs(f(a)) < 1e-12
    assert (f(a + 1e-6) - f(a - 1e-6)) > 0


def test_alpha_orthogonal_root():
    qa, qb, qc = 2 * 3 + 8 / 3, 21.0, -6.0
    want = (-qb + math.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)
    assert alpha_threshold(3, 3, "special-orthogonal") == pytest.approx(want, rel=1e-14)
    assert want == pytest.approx(0.258201, abs=1e-6)


def test_alpha_below_half():
    for n in range(17, 201):
        assert alpha_threshold(n, n) < 0.5


def test_alpha_dimension_condition():
    with pytest.raises(ValueError, match="dimension condition"):
        alpha_threshold(9, 9)
    with pytest.raises(ValueError):
        alpha_threshold(3, 3, "symplectic")


def cubic_oracle(n, m, D_H, kappa, group="unitary"):
    """Threshold constants from numpy polynomial roots, independent of the bracketing code."""
    a = 2 * (m - 4 * math.sqrt(n)) if group == "unitary" else 2.0 * m
    b, c = 4 * n + 9, 2 * n + 8 / 3
    g = np.poly1d([-c, -b, a, 0.0])
    crit = [r.real for r in g.deriv().roots if abs(r.imag) < 1e-12 and r.real > 0]
    s_star = max(crit)
    forcing = 2 * (1 + 3 * math.sqrt(n)) * D_H
    kappa_c = forcing / g(s_star)
    roots = sorted(r.real for r in (g - forcing / kappa).roots)
    return s_star, kappa_c, roots


def test_locking_constants_against_polynomial_roots():
    kc = cubic_oracle(25, 25, 0.5, 1.0)[1]
    s_star, kappa_c, roots = cubic_oracle(25, 25, 0.5, 10 * kc)
    rep = locking_constants(25, 25, 0.5, 0.5, 10 * kappa_c)
    assert rep.s_star == pytest.approx(s_star, rel=1e-12)
    assert rep.kappa_c == pytest.approx(kappa_c, rel=1e-12)
    assert rep.kappa_c == pytest.approx(71.2656, abs=1e-4)
    np.testing.assert_allclose(rep.nu, roots, rtol=1e-9, atol=1e-12)
    so = locking_constants(3, 3, 0.5, 0.5, 1.0, "special-orthogonal")
    assert so.kappa_c == pytest.approx(cubic_oracle(3, 3, 0.5, 1.0, "special-orthogonal")[1], rel=1e-12)
    assert so.kappa_c == pytest.approx(15.2553, abs=1e-4)


def test_locking_constants_properties():
    g = g_polynomial(25, 25)
    rep = locking_constants(25, 25, 1.0, 0.5, 1.0)
    kappa = 10 * rep.kappa_c
    rep = locking_constants(25, 25, 1.0, 0.5, kappa)
    h = 1e-6
    assert abs(g(rep.s_star + h) - g(rep.s_star - h)) / (2 * h) < 1e-8
    assert g(rep.s_star + h) + g(rep.s_star - h) - 2 * g(rep.s_star) < 0
    nu0, nu1, nu2 = rep.nu
    assert nu0 < 0 < nu1 < nu2
    r = 2 * (1 + 3 * math.sqrt(25)) * 1.0 / kappa
    for s in rep.nu:
        assert abs(r - g(s)) < 1e-10
    assert locking_constants(25, 25, 1.0, 0.5, 10 * kappa).nu[1] < nu1
    assert locking_constants(25, 25, 1.0, 0.5, 0.5 * rep.kappa_c).nu is None
    with pytest.raises(ValueError):
        locking_constants(25, 25, 0.5, 1.0, kappa)


def test_locking_constants_without_frequency_spread():
    rep = locking_constants(25, 25, 0.0, 0.0, 1.0)
    assert rep.kappa_c == 0
    assert rep.nu[1] == 0
    assert rep.nu[2] == pytest.approx(alpha_threshold(25, 25), rel=1e-12)


# ---------------------------------------------------------------- monitors

def test_monitor_identical_data_has_zero_slack(rng):
    U = np.repeat(unitary_stack(rng, 1, 25), 3, axis=0)
    rhs = lambda s: list(dum_rhs(s[0], s[1], None, None, 1.0, tol=None))
    traj = integrate(rhs, [uens(U), uens(U.copy())], IntegratorConfig(dt=0.01, t_end=0.2, auto_dt=False))
    rep = inequality_monitor("aggregation", traj.frames, {"kappa": 1.0, "n": 25, "m": 25})
    assert not rep.violated
    assert np.abs(rep.slack).max() < 1e-12
    with pytest.raises(ValueError):
        inequality_monitor("aggregation", traj.frames[:2], {"kappa": 1.0, "n": 25, "m": 25})
    with pytest.raises(ValueError):
        inequality_monitor("no-such-kind", traj.frames, {})


def aggregation_run(dt, t_end, sample_every):
    data = preset_dict("complete-aggregation")
    data["integrator"].update(dt=dt, t_end=t_end, sample_every=sample_every, retract_every=1)
    data["hard_monitors"] = False
    data["outputs"] = {}
    return run_scenario(ScenarioConfig.from_dict(data))


def test_monitor_trips_on_coarse_step():
    fine = aggregation_run(1e-3, 0.3, 10)
    coarse = aggregation_run(3e-2, 1.0, 1)
    assert fine.monitors["aggregation"]["passed"]
    assert not coarse.monitors["aggregation"]["passed"]
    assert coarse.monitors["aggregation"]["worst_slack"] < fine.monitors["aggregation"]["worst_slack"]


# ---------------------------------------------------------------- locking, fits, separability

def test_locking_metrics(rng):
    U, V = unitary_stack(rng, 4, 3), unitary_stack(rng, 4, 3)
    H, G = hermitian_stack(rng, 4, 3), hermitian_stack(rng, 4, 3)
    rhs = lambda s: list(dum_rhs(s[0], s[1], H, G, 1.0, tol=None))
    sync, drift = locking_metrics(rhs, [U, V], [U, V])
    assert sync == 0 and drift > 0
    W = np.repeat(U[:1], 4, axis=0)
    still = lambda s: list(dum_rhs(s[0], s[1], None, None, 1.0, tol=None))
    sync, drift = locking_metrics(still, [W, W.copy()])
    assert math.isnan(sync) and drift < 1e-14


def test_fit_decay_rate():
    t = np.linspace(0, 2, 201)
    rate, r2 = fit_decay_rate(t, np.exp(-3 * t))
    assert rate == pytest.approx(-3, abs=1e-9) and r2 == pytest.approx(1, abs=1e-12)
    rate, r2 = fit_decay_rate(t, np.full_like(t, 0.7))
    assert rate == pytest.approx(0, abs=1e-12) and r2 == 1
    with pytest.raises(ValueError):
        fit_decay_rate(t, -np.exp(-t))
    with pytest.raises(ValueError):
        fit_decay_rate(t, np.exp(-t), window=0)


def test_separability_residual(rng):
    U, V = unit_stack(rng, 3, (2, 2)), unit_stack(rng, 3, (2, 2))
    T = np.array([np.multiply.outer(U[j], V[j]) for j in range(3)])
    assert separability_residual(T, [U, V]) == 0
    eps = 1e-4
    for j in range(3):
        E = cplx(rng, 2, 2, 2, 2)
        E -= oracles.inner(T[j], E) * T[j]
        E /= np.linalg.norm(E)
        Tp = T.copy()
        Tp[j] += eps * E
        assert separability_residual(Tp, [U, V]) == pytest.approx(eps, rel=1e-10)
    with pytest.raises(ValueError):
        separability_residual(T, [U, V[:, :1]])
