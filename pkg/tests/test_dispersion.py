"""Mode-structure contracts: symbol algebra, weighted eigenproblem, closed forms."""

import numpy as np
import pytest

from emtransport.dispersion import (
    Branch,
    CallableProfile,
    ChiralityOutOfRange,
    DegenerateQ,
    LinearProfile,
    LorentzDamping,
    NonPositiveDefinite,
    OpticalResponse,
    ZeroWaveVector,
    chiral_branches,
    circular_pair,
    cross_matrix,
    eigen_decompose,
    isotropic_branches,
    maxwell_symbol,
    null_mode_basis,
    transverse_frame,
)


def random_pd_response(rng, scale=1.0):
    """Random Hermitian positive-definite 6x6 weight, comfortably conditioned."""
    a = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    return scale * (a @ a.conj().T + 6.0 * np.eye(6))


# ---------------------------------------------------------------------------
# symbol
# ---------------------------------------------------------------------------


def test_cross_matrix_action():
    rng = np.random.default_rng(0)
    for _ in range(5):
        k = rng.standard_normal(3)
        a = rng.standard_normal(3)
        np.testing.assert_allclose(cross_matrix(k) @ a, np.cross(k, a), atol=1e-15)


def test_maxwell_symbol_symmetric_and_linear():
    rng = np.random.default_rng(1)
    k1, k2 = rng.standard_normal(3), rng.standard_normal(3)
    m1, m2 = maxwell_symbol(k1), maxwell_symbol(k2)
    assert np.array_equal(m1, m1.T)
    np.testing.assert_allclose(
        maxwell_symbol(2.0 * k1 + 3.0 * k2), 2.0 * m1 + 3.0 * m2, atol=1e-14
    )


def test_maxwell_symbol_block_action():
    # M (E, H) = (-k x H, k x E)
    rng = np.random.default_rng(2)
    k = rng.standard_normal(3)
    e, h = rng.standard_normal(3), rng.standard_normal(3)
    out = maxwell_symbol(k) @ np.concatenate([e, h])
    np.testing.assert_allclose(out[:3], -np.cross(k, h), atol=1e-15)
    np.testing.assert_allclose(out[3:], np.cross(k, e), atol=1e-15)


def test_transverse_frame_orthonormal_right_handed():
    rng = np.random.default_rng(3)
    for _ in range(20):
        khat = rng.standard_normal(3)
        khat /= np.linalg.norm(khat)
        e1, e2 = transverse_frame(khat)
        for v, w in [(e1, e1), (e2, e2)]:
            assert abs(v @ w - 1.0) < 1e-14
        for v, w in [(e1, e2), (e1, khat), (e2, khat)]:
            assert abs(v @ w) < 1e-14
        np.testing.assert_allclose(np.cross(e1, e2), khat, atol=1e-13)
    # polar fallback is deterministic
    e1, e2 = transverse_frame(np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(e1, [1.0, 0.0, 0.0], atol=0)
    np.testing.assert_allclose(e2, [0.0, 1.0, 0.0], atol=1e-15)


def test_circular_pair_handedness():
    rng = np.random.default_rng(4)
    khat = rng.standard_normal(3)
    khat /= np.linalg.norm(khat)
    um, up = circular_pair(khat)
    np.testing.assert_allclose(np.cross(khat, um), -1j * um, atol=1e-14)
    np.testing.assert_allclose(np.cross(khat, up), +1j * up, atol=1e-14)
    assert abs(um.conj() @ um - 1.0) < 1e-14
    assert abs(up.conj() @ up - 1.0) < 1e-14
    assert abs(um.conj() @ up) < 1e-14


# ---------------------------------------------------------------------------
# generic weighted eigenproblem
# ---------------------------------------------------------------------------


def test_vacuum_eigenvalues_frozen():
    dec = eigen_decompose(np.eye(6), np.array([0.0, 0.0, 2.0]))
    full = np.concatenate([[b.omega] * b.multiplicity for b in dec.branches])
    np.testing.assert_allclose(full, [-2.0, -2.0, 0.0, 0.0, 2.0, 2.0], atol=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_random_response_spectral_algebra(seed):
    rng = np.random.default_rng(100 + seed)
    k0 = random_pd_response(rng)
    k = rng.standard_normal(3)
    dec = eigen_decompose(k0, k)

    # weighted orthonormality across all branches
    b_all = np.concatenate([b.right for b in dec.branches], axis=1)
    gram = b_all.conj().T @ k0 @ b_all
    assert np.abs(gram - np.eye(6)).max() < 1e-10

    # left/right duality and completeness
    c_all = np.concatenate([b.left for b in dec.branches], axis=1)
    assert np.abs(c_all.conj().T @ b_all - np.eye(6)).max() < 1e-10
    assert dec.completeness_residual() < 1e-10

    # spectral reconstruction of the dispersion operator
    np.testing.assert_allclose(
        k0 @ dec.operator(), maxwell_symbol(k), atol=1e-9 * (1 + np.abs(k0).max())
    )

    # the longitudinal branch always has multiplicity exactly two
    assert dec.null_branch().multiplicity == 2
    assert abs(dec.null_branch().omega) < 1e-10


def test_projectors_idempotent_and_disjoint():
    rng = np.random.default_rng(42)
    k0 = random_pd_response(rng)
    dec = eigen_decompose(k0, np.array([0.3, -1.2, 0.5]))
    projs = [b.projector() for b in dec.branches]
    for i, p in enumerate(projs):
        np.testing.assert_allclose(p @ p, p, atol=1e-10)
        for j, q in enumerate(projs):
            if i != j:
                assert np.abs(p @ q).max() < 1e-10


def test_zero_wavevector_rejected():
    with pytest.raises(ZeroWaveVector):
        eigen_decompose(np.eye(6), np.zeros(3))


def test_non_positive_definite_rejected():
    bad = np.diag([1.0, 1.0, -1.0, 1.0, 1.0, 1.0])
    with pytest.raises(NonPositiveDefinite):
        eigen_decompose(bad, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(NonPositiveDefinite):
        OpticalResponse(permittivity=-np.eye(3), permeability=np.eye(3))


def test_homogeneity_in_k():
    rng = np.random.default_rng(7)
    k0 = random_pd_response(rng)
    k = rng.standard_normal(3)
    w1 = eigen_decompose(k0, k).omegas
    w3 = eigen_decompose(k0, 3.0 * k).omegas
    np.testing.assert_allclose(w3, 3.0 * w1, atol=1e-12 * (1 + np.abs(w3).max()))


# ---------------------------------------------------------------------------
# closed-form families vs the generic path
# ---------------------------------------------------------------------------


def _match_branches(analytic, numeric, atol=1e-10):
    """Pair branches by eigenvalue and compare spectral projectors."""
    assert len(analytic.branches) == len(numeric.branches)
    for ba in analytic.branches:
        bn = numeric.branch_nearest(ba.omega)
        assert abs(ba.omega - bn.omega) < 1e-10 * (1 + abs(ba.omega))
        assert ba.multiplicity == bn.multiplicity
        assert np.abs(ba.projector() - bn.projector()).max() < atol


@pytest.mark.parametrize("eps,mu", [(1.0, 1.0), (4.0, 1.0), (2.5, 0.4)])
def test_isotropic_branches_match_generic(eps, mu):
    rng = np.random.default_rng(11)
    for _ in range(4):
        k = rng.standard_normal(3)
        medium = OpticalResponse.isotropic(eps, mu)
        _match_branches(isotropic_branches(eps, mu, k), eigen_decompose(medium, k))


def test_isotropic_branch_values():
    k = np.array([0.0, 0.0, 2.0])
    dec = isotropic_branches(1.0, 1.0, k)
    np.testing.assert_allclose(dec.omegas, [-2.0, 0.0, 2.0], atol=1e-15)
    for b in dec.branches:
        assert b.multiplicity == 2
        gram = b.right.conj().T @ dec.response @ b.right
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-14)
        # eigenvector equation
        resid = maxwell_symbol(k) @ b.right - b.omega * (dec.response @ b.right)
        assert np.abs(resid).max() < 1e-14


def test_null_modes_longitudinal():
    k = np.array([0.4, -0.3, 1.1])
    khat = k / np.linalg.norm(k)
    dec = isotropic_branches(4.0, 0.25, k)
    b0 = dec.null_branch().right
    np.testing.assert_allclose(b0[:3, 0], khat / 2.0, atol=1e-15)
    np.testing.assert_allclose(b0[3:, 1], khat * 2.0, atol=1e-15)
    assert np.abs(b0[3:, 0]).max() == 0.0
    assert np.abs(b0[:3, 1]).max() == 0.0


CHIRAL_CASE = dict(eps=2.0, mu=0.5, kappa=0.5)  # c0 = 1


def test_chiral_eigenvalues_frozen():
    # c0|k|/(1 +/- kappa) at |k| = 1: fast pair 2/3, slow pair 2
    dec = chiral_branches(k=np.array([0.0, 0.0, 1.0]), **CHIRAL_CASE)
    np.testing.assert_allclose(
        dec.omegas, [-2.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, 2.0], atol=1e-12
    )
    assert [b.multiplicity for b in dec.branches] == [1, 1, 2, 1, 1]


@pytest.mark.parametrize("kappa", [0.1, 0.5, 0.9, -0.35])
def test_chiral_branches_match_generic(kappa):
    rng = np.random.default_rng(13)
    eps, mu = 2.0, 0.5
    medium = OpticalResponse.chiral(eps, mu, kappa)
    for _ in range(3):
        k = rng.standard_normal(3)
        _match_branches(chiral_branches(eps, mu, kappa, k), eigen_decompose(medium, k))


def test_chiral_eigenvector_equation_and_norms():
    k = np.array([0.3, 0.7, -0.2])
    dec = chiral_branches(k=k, **CHIRAL_CASE)
    m = maxwell_symbol(k)
    for b in dec.branches:
        resid = m @ b.right - b.omega * (dec.response @ b.right)
        assert np.abs(resid).max() < 1e-13
        gram = b.right.conj().T @ dec.response @ b.right
        np.testing.assert_allclose(gram, np.eye(b.multiplicity), atol=1e-13)


def test_chirality_range_enforced():
    with pytest.raises(ChiralityOutOfRange):
        chiral_branches(1.0, 1.0, 1.2, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ChiralityOutOfRange):
        OpticalResponse.chiral(1.0, 1.0, 1.0)


def test_spectrum_parity_under_k_reversal():
    # for the rotationally invariant families the spectrum is even in k
    rng = np.random.default_rng(17)
    k = rng.standard_normal(3)
    for dec_of in (
        lambda kk: isotropic_branches(2.0, 0.7, kk),
        lambda kk: chiral_branches(2.0, 0.5, 0.4, kk),
    ):
        w_plus = dec_of(k).omegas
        w_minus = dec_of(-k).omegas
        np.testing.assert_allclose(w_plus, w_minus, atol=1e-13)
        # and odd under omega -> -omega branch exchange
        np.testing.assert_allclose(w_plus, -w_plus[::-1], atol=1e-13)


# ---------------------------------------------------------------------------
# null basis for bianisotropic weights
# ---------------------------------------------------------------------------


def test_null_basis_generic_bianisotropic():
    rng = np.random.default_rng(23)
    for _ in range(10):
        k0 = random_pd_response(rng)
        k = rng.standard_normal(3)
        b0 = null_mode_basis(k0, k)
        # annihilated by the symbol, orthonormal in the weight
        assert np.abs(maxwell_symbol(k) @ b0).max() < 1e-12
        np.testing.assert_allclose(b0.conj().T @ k0 @ b0, np.eye(2), atol=1e-12)


def test_null_basis_agrees_with_projector():
    rng = np.random.default_rng(29)
    k0 = random_pd_response(rng)
    k = np.array([1.0, -0.5, 0.25])
    b0 = null_mode_basis(k0, k)
    null = eigen_decompose(k0, k).null_branch()
    np.testing.assert_allclose(b0 @ (k0 @ b0).conj().T, null.projector(), atol=1e-10)


def test_degenerate_longitudinal_weight_rejected():
    # |xi_hat|^2 >= eps_hat * mu_hat makes the 2x2 longitudinal Gram singular
    k0 = np.eye(6, dtype=complex)
    k0[:3, 3:] = np.eye(3)
    k0[3:, :3] = np.eye(3)
    with pytest.raises(DegenerateQ):
        null_mode_basis(k0, np.array([0.0, 0.0, 1.0]))


# ---------------------------------------------------------------------------
# damping model and profiles
# ---------------------------------------------------------------------------


def test_drude_decay_rate_frozen():
    # plasma=1, resonance=0, rate=1 evaluated at s=1: 1/((0-1)^2 + 1) = 0.5
    model = LorentzDamping(plasma=1.0, resonance=0.0, rate=1.0)
    assert model.decay_rate(1.0) == pytest.approx(0.5, abs=1e-15)


def test_damping_kernel_reality_symmetry():
    # time-domain reality requires r(-omega) = conj(r(omega))
    model = LorentzDamping(plasma=1.3, resonance=0.8, rate=0.2)
    for w in [0.1, 0.9, 2.7]:
        assert model.ratio(-w) == pytest.approx(np.conj(model.ratio(w)), abs=1e-15)


def test_decay_rate_even_in_frequency():
    model = LorentzDamping(plasma=1.1, resonance=0.5, rate=0.3)
    iw = 1j * 0.7
    # decay_rate(s) must equal 2 Re[i omega r(omega)]/2 at omega = +/- s
    for omega in (0.7, -0.7):
        val = (1j * omega * model.ratio(omega)).real
        assert val == pytest.approx(model.decay_rate(0.7), abs=1e-15)
    del iw


def test_speed_profile_scales_eigenvalues():
    # c(x) = 1 + 0.1 x3 on a vacuum background
    medium = OpticalResponse.isotropic(1.0, 1.0, profile=LinearProfile(slope=[0.0, 0.0, 0.1]))
    x = np.array([0.0, 0.0, 2.0])
    k = np.array([0.0, 0.0, 3.0])
    assert medium.wave_speed(x) == pytest.approx(1.2, abs=1e-15)
    dec = eigen_decompose(medium, k, x=x)
    np.testing.assert_allclose(dec.omegas[[0, -1]], [-3.6, 3.6], atol=1e-12)


def test_profile_preserves_chirality():
    medium = OpticalResponse.chiral(2.0, 0.5, 0.4, profile=LinearProfile(slope=[0.2, 0.0, 0.0]))
    for x in (np.zeros(3), np.array([1.5, 0.0, 0.0])):
        _, _, kappa = medium.scalar_parameters(x)
        assert kappa == pytest.approx(0.4, abs=1e-14)


def test_callable_profile_gradient():
    prof = CallableProfile(lambda x: 1.0 + 0.25 * x[0] ** 2)
    g = prof.gradient(np.array([2.0, 0.0, 0.0]))
    np.testing.assert_allclose(g, [1.0, 0.0, 0.0], atol=1e-8)


def test_kind_detection():
    assert OpticalResponse.isotropic(2.0, 1.0).kind == "isotropic"
    assert OpticalResponse.chiral(2.0, 0.5, 0.3).kind == "chiral"
    aniso = OpticalResponse(permittivity=np.diag([1.0, 2.0, 3.0]), permeability=np.eye(3))
    assert aniso.kind == "generic"
