"""Tests for bicharacteristic rays and coherence transport."""

from __future__ import annotations

import numpy as np
import pytest

from emtransport.dispersion import (
    LinearProfile,
    LorentzDamping,
    OpticalResponse,
    propagating_families,
)
from emtransport.raytrace import (
    Box,
    BranchTrackingLost,
    GaugeUnavailable,
    LeftDomain,
    NullModeField,
    NumericBranch,
    RayState,
    advance_ray,
    coupling_matrix_l,
    hamiltonian_gradients,
    project_psd,
    propagate_coherence,
    save_ray_path,
    skew_matrix_n,
    symmetric_part,
    trace_ray,
)

LINEAR = LinearProfile(slope=[0.0, 0.0, 0.1])


def graded_medium() -> OpticalResponse:
    return OpticalResponse.isotropic(1.0, 1.0, profile=LINEAR)


def plus_family(medium: OpticalResponse):
    return [f for f in propagating_families(medium) if f.sign > 0][0]


def drude_medium() -> OpticalResponse:
    # plasma=rate=1, resonance=0: decay rate 1/2 at unit frequency
    return OpticalResponse.lorentz(2.0, 0.5, plasma=1.0, resonance=0.0, rate=1.0)


W_INIT = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.5]])


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_gradients_constant_medium():
    medium = OpticalResponse.isotropic(2.0, 0.5)  # c0 = 1
    fam = plus_family(medium)
    k = np.array([0.0, 0.0, 2.0])
    gx, gk = hamiltonian_gradients(fam, np.zeros(3), k)
    assert np.allclose(gx, 0.0, atol=1e-15)
    assert np.allclose(gk, [0.0, 0.0, 1.0], atol=1e-14)


def test_gradients_linear_profile():
    fam = plus_family(graded_medium())
    k = np.array([0.0, 0.0, 1.0])
    gx, gk = hamiltonian_gradients(fam, np.zeros(3), k)
    assert np.allclose(gx, [0.0, 0.0, 0.1], atol=1e-13)
    assert np.allclose(gk, [0.0, 0.0, 1.0], atol=1e-13)  # c0(0) = 1


def test_numeric_branch_matches_analytic_with_richardson():
    medium = OpticalResponse.isotropic(2.0, 0.5)
    fam = plus_family(medium)
    k = np.array([0.4, -0.3, 0.8])
    x = np.zeros(3)
    branch = NumericBranch(medium, omega_hint=fam.omega(k))
    _, gk_exact = hamiltonian_gradients(fam, x, k)
    _, gk_h = hamiltonian_gradients(branch, x, k, hk=2e-2)
    _, gk_h2 = hamiltonian_gradients(branch, x, k, hk=1e-2)
    err_h = np.linalg.norm(gk_h - gk_exact)
    err_h2 = np.linalg.norm(gk_h2 - gk_exact)
    assert err_h2 < 1e-4
    assert err_h / err_h2 == pytest.approx(4.0, rel=0.15)  # O(h^2) convergence


def test_branch_tracking():
    medium = OpticalResponse.isotropic(2.0, 0.5)
    k = np.array([0.0, 0.0, 1.5])
    good = NumericBranch(medium, omega_hint=1.5)
    assert good.omega(k) == pytest.approx(1.5, rel=1e-12)
    # a hint equidistant from two distinct branches is ambiguous
    bad = NumericBranch(medium, omega_hint=0.75)
    with pytest.raises(BranchTrackingLost):
        bad.omega(k)


# ---------------------------------------------------------------------------
# ray integration
# ---------------------------------------------------------------------------


def test_homogeneous_ray_exact():
    medium = OpticalResponse.isotropic(2.0, 0.5)
    fam = plus_family(medium)
    k = np.array([0.6, 0.0, 0.8])
    st = RayState.fresh(fam, x=[1.0, 2.0, 3.0], k=k)
    out = st
    for _ in range(50):
        out = advance_ray(fam, out, 0.02)
    assert np.allclose(out.k, k, atol=1e-15)
    assert np.allclose(out.x, st.x + 1.0 * k / np.linalg.norm(k), atol=1e-13)
    assert out.t == pytest.approx(1.0)


def test_frequency_is_first_integral_on_profile():
    fam = plus_family(graded_medium())
    st = RayState.fresh(fam, x=[0.0, 0.0, 0.0], k=[0.6, 0.0, 0.8])
    omega0 = fam.omega(st.k, st.x)
    states = trace_ray(fam, st, 1000, 1e-3)
    drift = max(abs(fam.omega(s.k, s.x) - omega0) for s in states) / abs(omega0)
    assert drift <= 1e-8
    # the ray actually bends (k changes) so the check is not vacuous
    assert np.linalg.norm(states[-1].k - st.k) > 1e-4


def test_ray_reversibility():
    fam = plus_family(graded_medium())
    st = RayState.fresh(fam, x=[0.1, -0.2, 0.3], k=[0.5, 0.2, 0.9])
    fwd = trace_ray(fam, st, 300, 1e-3)[-1]
    back = trace_ray(fam, fwd, 300, -1e-3)[-1]
    scale = np.linalg.norm(st.x) + 1.0
    assert np.linalg.norm(back.x - st.x) / scale <= 1e-9
    assert np.linalg.norm(back.k - st.k) <= 1e-9


def test_left_domain():
    medium = OpticalResponse.isotropic(1.0, 1.0)
    fam = plus_family(medium)
    box = Box(lower=[-1.0, -1.0, -1.0], upper=[1.0, 1.0, 1.0])
    st = RayState.fresh(fam, x=[0.0, 0.0, 0.9], k=[0.0, 0.0, 1.0])
    with pytest.raises(LeftDomain) as exc:
        state = st
        for _ in range(100):
            state = advance_ray(fam, state, 0.01, box=box)
    assert exc.value.exit_point[2] > 1.0
    assert box.contains(exc.value.state.x)


def test_phase_space_volume_preserved():
    # the flow is divergence-free: the Jacobian of the time-T map has unit
    # determinant (checked by finite differences on the graded medium)
    fam = plus_family(graded_medium())
    x0 = np.array([0.05, -0.1, 0.2])
    k0 = np.array([0.5, 0.1, 0.85])

    def flow(z: np.ndarray) -> np.ndarray:
        st = RayState.fresh(fam, x=z[:3], k=z[3:])
        out = trace_ray(fam, st, 50, 2e-3)[-1]
        return np.concatenate([out.x, out.k])

    z0 = np.concatenate([x0, k0])
    h = 1e-6
    jac = np.empty((6, 6))
    for j in range(6):
        dz = np.zeros(6)
        dz[j] = h
        jac[:, j] = (flow(z0 + dz) - flow(z0 - dz)) / (2 * h)
    assert abs(np.linalg.det(jac) - 1.0) < 1e-7


# ---------------------------------------------------------------------------
# couplings
# ---------------------------------------------------------------------------


def test_lorentz_coupling_scalar_structure():
    medium = drude_medium()
    fam = plus_family(medium)
    k = np.array([0.0, 0.0, 1.0])
    ell = coupling_matrix_l(fam, None, k)
    # proportional to the identity
    assert abs(ell[0, 1]) < 1e-15 and abs(ell[1, 0]) < 1e-15
    assert ell[0, 0] == pytest.approx(ell[1, 1], rel=1e-13)
    # decay part: 2 ell_s = Gamma(c0|k|) I, Drude value 1/2 at unit frequency
    two_s = 2.0 * symmetric_part(ell)
    assert two_s[0, 0].real == pytest.approx(0.5, rel=1e-12)


@pytest.mark.parametrize("knorm", [0.5, 1.0, 1.7, 2.3, 3.0])
def test_lorentz_decay_rate_formula(knorm):
    medium = drude_medium()
    fam = plus_family(medium)
    k = np.array([0.0, 0.0, knorm])
    s = medium.wave_speed() * knorm
    gamma = medium.damping.decay_rate(s)
    wp, w0, g = 1.0, 0.0, 1.0
    explicit = wp**2 * s**2 * g / ((w0**2 - s**2) ** 2 + s**2 * g**2)
    assert gamma == pytest.approx(explicit, rel=1e-14)
    two_s = 2.0 * symmetric_part(coupling_matrix_l(fam, None, k))
    assert np.abs(two_s - gamma * np.eye(2)).max() < 1e-14 * max(gamma, 1.0)


def test_lossless_rate_vanishes():
    medium = OpticalResponse.lorentz(2.0, 0.5, plasma=1.0, resonance=2.0, rate=0.0)
    fam = plus_family(medium)
    ell = coupling_matrix_l(fam, None, np.array([0.0, 0.0, 1.0]))
    assert np.abs(symmetric_part(ell)).max() < 1e-15
    # the reactive part survives
    assert np.abs(ell).max() > 1e-3


def test_no_damping_zero_matrix():
    fam = plus_family(OpticalResponse.isotropic(2.0, 0.5))
    ell = coupling_matrix_l(fam, None, np.array([0.0, 0.0, 1.0]))
    assert np.abs(ell).max() == 0.0


# ---------------------------------------------------------------------------
# skew term
# ---------------------------------------------------------------------------


def test_skew_residual_graded_medium():
    medium = graded_medium()
    rng = np.random.default_rng(2)
    for fam in propagating_families(medium):
        for _ in range(3):
            x = rng.normal(size=3)
            k = rng.normal(size=3)
            n = skew_matrix_n(fam, x, k)
            assert np.abs(n + n.conj().T).max() <= 1e-6


def test_skew_residual_chiral_profile():
    medium = OpticalResponse.chiral(2.0, 0.5, 0.3, profile=LINEAR)
    fam = propagating_families(medium)[0]
    n = skew_matrix_n(fam, np.array([0.1, 0.2, -0.3]), np.array([0.7, -0.4, 0.6]))
    assert np.abs(n + n.conj().T).max() <= 1e-6


def test_skew_null_mode_and_homogeneous_zero():
    medium = graded_medium()
    n0 = skew_matrix_n(NullModeField(medium), np.array([0.2, -0.1, 0.5]), np.array([0.3, 1.1, -0.4]))
    assert np.abs(n0).max() <= 1e-6
    hom = OpticalResponse.isotropic(2.0, 0.5)
    nh = skew_matrix_n(plus_family(hom), np.zeros(3), np.array([0.3, -0.2, 0.9]))
    assert np.abs(nh).max() <= 1e-6


def test_skew_needs_gauge():
    medium = OpticalResponse.isotropic(2.0, 0.5)
    branch = NumericBranch(medium, omega_hint=1.0)
    with pytest.raises(GaugeUnavailable):
        skew_matrix_n(branch, np.zeros(3), np.array([0.0, 0.0, 1.0]))


# ---------------------------------------------------------------------------
# coherence propagation
# ---------------------------------------------------------------------------


def test_lorentz_decay_closed_form():
    medium = drude_medium()
    fam = plus_family(medium)
    k = np.array([0.0, 0.0, 1.0])  # c0|k| = 1 so the decay rate is 1/2
    st = RayState.fresh(fam, x=[0.0, 0.0, 0.0], k=k, w=W_INIT)
    out = propagate_coherence(fam, st, duration=2.0, dt=1e-3)
    expect = np.exp(-0.5 * 2.0) * np.trace(W_INIT).real
    assert np.trace(out.w).real == pytest.approx(expect, rel=1e-12)
    # free flight: x(T) = x0 + c0 khat T
    assert np.allclose(out.x, [0.0, 0.0, 2.0], atol=1e-12)
    assert np.allclose(out.k, k, atol=1e-15)
    # polarization structure is preserved under scalar damping
    ratio = out.w / W_INIT
    assert np.abs(ratio - ratio[0, 0]).max() < 1e-10


def test_unitary_transport_conserves_trace():
    fam = plus_family(graded_medium())
    st = RayState.fresh(fam, x=[0.1, -0.2, 0.0], k=[0.6, 0.0, 0.8], w=W_INIT)
    out = propagate_coherence(fam, st, duration=0.4, dt=2e-3)
    tr0 = np.trace(W_INIT).real
    assert abs(np.trace(out.w).real - tr0) / tr0 <= 1e-9
    assert np.abs(out.R @ out.R.conj().T - np.eye(2)).max() < 1e-9
    # w stays Hermitian PSD
    assert np.linalg.eigvalsh(out.w).min() >= -1e-12 * tr0


def test_trivial_coupling_identity():
    medium = OpticalResponse.isotropic(2.0, 0.5)
    fam = plus_family(medium)
    st = RayState.fresh(fam, x=[0.0, 0.0, 0.0], k=[0.0, 0.0, 1.0], w=W_INIT)
    out = propagate_coherence(fam, st, duration=1.0, dt=1e-2)
    assert np.allclose(out.R, np.eye(2), atol=1e-14)
    assert np.allclose(out.w, W_INIT, atol=1e-14)


def test_project_psd():
    w = np.array([[1.0, 0.0], [0.0, -1e-6]], dtype=complex)
    fixed = project_psd(w)
    assert np.linalg.eigvalsh(fixed).min() >= 0.0
    # a tiny violation below tolerance is left untouched
    w2 = np.array([[1.0, 0.0], [0.0, -1e-14]], dtype=complex)
    assert np.allclose(project_psd(w2), w2, atol=1e-16)
    # non-Hermitian round-off is symmetrized
    w3 = np.array([[1.0, 1e-13], [0.0, 1.0]], dtype=complex)
    out = project_psd(w3)
    assert np.abs(out - out.conj().T).max() == 0.0


def test_save_ray_path(tmp_path):
    fam = plus_family(graded_medium())
    st = RayState.fresh(fam, x=[0.0, 0.0, 0.0], k=[0.6, 0.0, 0.8], w=W_INIT)
    states = trace_ray(fam, st, 10, 1e-2)
    path = tmp_path / "ray.csv"
    save_ray_path(path, states, fam)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,x1,x2,x3,k1,k2,k3,omega,tr_w,weight"
    assert len(lines) == 12
    row = [float(v) for v in lines[1].split(",")]
    assert row[0] == 0.0
    assert row[7] == pytest.approx(fam.omega(st.k, st.x), rel=1e-10)
    assert row[8] == pytest.approx(np.trace(W_INIT).real, rel=1e-10)
    assert row[9] == 1.0
