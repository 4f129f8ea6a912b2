"""Random-medium statistics: spectra, channel models, synthesis, estimation."""

import numpy as np
import pytest
from scipy.integrate import quad

from emtransport.dispersion import OpticalResponse, chiral_branches
from emtransport.media import (
    EmptyInput,
    ExponentialPSD,
    GaussianPSD,
    GridTooCoarse,
    SpectralModel,
    TabulatedPSD,
    UnknownChannel,
    channel_cross_psd,
    chiral_channels,
    estimate_psd,
    exponential_isotropic_psd,
    gaussian_isotropic_psd,
    isotropic_channels,
    load_radial_table,
    load_realization,
    save_radial_table,
    save_realization,
    synthesize_realization,
)

# ---------------------------------------------------------------------------
# radial spectra
# ---------------------------------------------------------------------------


def test_gaussian_psd_peak_frozen():
    # lc^3 (2 pi)^{-3/2} at q=0, lc=1
    assert gaussian_isotropic_psd(1.0)(0.0) == pytest.approx(0.06349363593424097, rel=1e-14)
    assert gaussian_isotropic_psd(2.0)(0.0) == pytest.approx(8 * 0.06349363593424097, rel=1e-14)


def test_exponential_psd_peak_frozen():
    # lc^3 / pi^2 at q = 0, lc = 2
    assert exponential_isotropic_psd(2.0)(0.0) == pytest.approx(0.8105694691387022, rel=1e-13)


@pytest.mark.parametrize(
    "psd", [GaussianPSD(1.0), GaussianPSD(0.5), ExponentialPSD(1.0), ExponentialPSD(2.0)]
)
def test_unit_variance_normalization(psd):
    # R(0) = 4 pi Int q^2 Rhat(q) dq must equal 1
    total, err = quad(lambda q: 4.0 * np.pi * q**2 * psd(q), 0.0, np.inf, limit=200)
    assert err < 1e-6
    assert total == pytest.approx(1.0, abs=1e-7)


def test_tabulated_psd_interpolates():
    base = GaussianPSD(1.0)
    q = np.linspace(0, 10, 2001)
    tab = TabulatedPSD(qnorm=q, values=base(q), corr_length=1.0)
    probe = np.array([0.0, 0.37, 2.2])
    np.testing.assert_allclose(tab(probe), base(probe), rtol=1e-4)


# ---------------------------------------------------------------------------
# channel models
# ---------------------------------------------------------------------------


def test_cross_psd_cauchy_schwarz_and_lookup():
    model = isotropic_channels(
        gaussian_isotropic_psd(1.0), exponential_isotropic_psd(1.0), rho=0.7, amplitude=0.3
    )
    q = np.linspace(0.0, 5.0, 50)
    cross = channel_cross_psd(model, "eps", "mu")(q)
    bound = np.sqrt(model.auto_psd("eps")(q) * model.auto_psd("mu")(q))
    assert np.all(np.abs(cross) <= bound + 1e-15)
    # rho scaling is exact
    np.testing.assert_allclose(cross, 0.7 * bound, rtol=1e-13)
    with pytest.raises(UnknownChannel):
        channel_cross_psd(model, "eps", "nope")


def test_amplitude_scales_psd_quadratically():
    m1 = isotropic_channels(gaussian_isotropic_psd(1.0), amplitude=1.0)
    m2 = isotropic_channels(gaussian_isotropic_psd(1.0), amplitude=0.5)
    q = np.array([0.0, 1.0, 2.0])
    np.testing.assert_allclose(m2.auto_psd("eps")(q), 0.25 * m1.auto_psd("eps")(q), rtol=1e-14)


def test_correlation_out_of_range_rejected():
    with pytest.raises(ValueError):
        isotropic_channels(
            gaussian_isotropic_psd(1.0), gaussian_isotropic_psd(1.0), rho=1.2
        )


def test_nonpositive_correlation_matrix_rejected():
    corr = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    with pytest.raises(ValueError, match="semidefinite"):
        SpectralModel(
            names=("a", "b", "c"),
            spectra=(GaussianPSD(1.0),) * 3,
            maps=np.stack([np.eye(6)] * 3),
            correlation=corr,
        )


def test_psd_matrix_batched_and_psd():
    model = isotropic_channels(
        gaussian_isotropic_psd(1.0), exponential_isotropic_psd(1.0), rho=-0.9, amplitude=2.0
    )
    q = np.linspace(0.0, 4.0, 7)
    c = model.psd_matrix(q)
    assert c.shape == (7, 2, 2)
    assert np.linalg.eigvalsh(c).min() >= -1e-15


def test_structure_maps_compatible_with_weight():
    # the weighting demands K0 P = P* K0 for every channel map
    iso = OpticalResponse.isotropic(2.0, 0.5)
    model = isotropic_channels(gaussian_isotropic_psd(1.0), gaussian_isotropic_psd(1.0))
    k0 = iso.response()
    for name in model.names:
        p = model.structure_map(name)
        np.testing.assert_allclose(k0 @ p, p.conj().T @ k0, atol=1e-14)

    chi = OpticalResponse.chiral(2.0, 0.5, 0.4)
    eps, mu, _ = chi.scalar_parameters()
    modelc = chiral_channels(
        gaussian_isotropic_psd(1.0),
        gaussian_isotropic_psd(1.0),
        impedance=np.sqrt(mu / eps),
    )
    k0c = chi.response()
    for name in modelc.names:
        p = modelc.structure_map(name)
        np.testing.assert_allclose(k0c @ p, p.conj().T @ k0c, atol=1e-13)


def test_gyrotropic_map_flips_circular_families():
    # P_b acts as +1 on the impedance-matched circular pair, -1 on the other
    eps, mu, kappa = 2.0, 0.5, 0.4
    model = chiral_channels(
        gaussian_isotropic_psd(1.0), gaussian_isotropic_psd(1.0), impedance=np.sqrt(mu / eps)
    )
    pb = model.structure_map("b")
    dec = chiral_branches(eps, mu, kappa, np.array([0.3, -0.2, 0.9]))
    c0 = 1.0
    fast = c0 / (1.0 + kappa)
    slow = c0 / (1.0 - kappa)
    knorm = np.linalg.norm([0.3, -0.2, 0.9])
    for omega, sign in [
        (+fast * knorm, +1.0),
        (-fast * knorm, +1.0),
        (+slow * knorm, -1.0),
        (-slow * knorm, -1.0),
    ]:
        b = dec.branch_nearest(omega).right[:, 0]
        np.testing.assert_allclose(pb @ b, sign * b, atol=1e-13)


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


def test_grid_validation():
    model = isotropic_channels(gaussian_isotropic_psd(1.0))
    with pytest.raises(GridTooCoarse):
        synthesize_realization(model, n=16, spacing=0.25, seed=0)  # span 4 < 8 lc
    with pytest.raises(GridTooCoarse):
        synthesize_realization(model, n=64, spacing=0.5, seed=0)  # step > lc/4


def test_realization_variance_matches_model():
    model = isotropic_channels(gaussian_isotropic_psd(1.0), amplitude=0.5)
    acc = 0.0
    n_seeds = 40
    for seed in range(n_seeds):
        fields = synthesize_realization(model, n=32, spacing=0.25, seed=seed)
        acc += np.mean(fields["eps"] ** 2)
    mean_square = acc / n_seeds
    assert mean_square == pytest.approx(0.25, rel=0.05)


def test_realizations_are_real_zero_mean_and_seeded():
    model = isotropic_channels(gaussian_isotropic_psd(1.0))
    f1 = synthesize_realization(model, n=32, spacing=0.25, seed=7)["eps"]
    f2 = synthesize_realization(model, n=32, spacing=0.25, seed=7)["eps"]
    f3 = synthesize_realization(model, n=32, spacing=0.25, seed=8)["eps"]
    assert np.array_equal(f1, f2)
    assert not np.array_equal(f1, f3)
    assert abs(f1.mean()) < 0.5  # random DC component, zero in expectation
    assert f1.dtype == np.float64


def test_cross_correlated_pair():
    rho = 0.8
    model = isotropic_channels(
        gaussian_isotropic_psd(1.0), gaussian_isotropic_psd(1.0), rho=rho
    )
    num = den1 = den2 = 0.0
    for seed in range(30):
        fields = synthesize_realization(model, n=32, spacing=0.25, seed=seed)
        num += np.mean(fields["eps"] * fields["mu"])
        den1 += np.mean(fields["eps"] ** 2)
        den2 += np.mean(fields["mu"] ** 2)
    assert num / np.sqrt(den1 * den2) == pytest.approx(rho, abs=0.04)


def test_anticorrelated_pair_cancels_in_sum():
    # rho = -1 with equal spectra: chi_a + chi_b vanishes identically
    model = isotropic_channels(
        gaussian_isotropic_psd(1.0), gaussian_isotropic_psd(1.0), rho=-1.0
    )
    fields = synthesize_realization(model, n=32, spacing=0.25, seed=3)
    total = fields["eps"] + fields["mu"]
    assert np.abs(total).max() < 1e-10 * max(1.0, np.abs(fields["eps"]).max())


# ---------------------------------------------------------------------------
# estimation round trip
# ---------------------------------------------------------------------------


def _binned_model(model_psd, n, spacing, nbins):
    """Model spectrum averaged over the same radial bins the estimator uses."""
    q1 = 2.0 * np.pi * np.fft.fftfreq(n, d=spacing)
    qx, qy, qz = np.meshgrid(q1, q1, q1, indexing="ij")
    qnorm = np.sqrt(qx**2 + qy**2 + qz**2).ravel()
    dq = 2.0 * np.pi / (n * spacing)
    edges = dq * (np.arange(nbins + 1) - 0.5)
    idx = np.digitize(qnorm, edges) - 1
    keep = (idx >= 0) & (idx < nbins)
    sums = np.bincount(idx[keep], weights=model_psd(qnorm[keep]), minlength=nbins)
    counts = np.bincount(idx[keep], minlength=nbins)
    valid = counts > 0
    return dq * np.arange(nbins)[valid], sums[valid] / counts[valid]


def test_periodogram_round_trip():
    model = isotropic_channels(gaussian_isotropic_psd(1.0), amplitude=1.0)
    n, spacing = 32, 0.25
    reals = [
        synthesize_realization(model, n=n, spacing=spacing, seed=seed)["eps"]
        for seed in range(100)
    ]
    q_est, est = estimate_psd(reals, spacing)
    q_ref, ref = _binned_model(model.auto_psd("eps"), n, spacing, nbins=n // 2)
    np.testing.assert_allclose(q_est, q_ref, atol=1e-12)
    peak = model.auto_psd("eps")(0.0)
    band = ref >= 0.05 * peak
    assert band.sum() >= 3
    np.testing.assert_allclose(est[band], ref[band], rtol=0.10)


def test_cross_periodogram_sees_rho():
    model = isotropic_channels(
        gaussian_isotropic_psd(1.0), gaussian_isotropic_psd(1.0), rho=0.6
    )
    n, spacing = 32, 0.25
    fe, fm = [], []
    for seed in range(60):
        fields = synthesize_realization(model, n=n, spacing=spacing, seed=seed)
        fe.append(fields["eps"])
        fm.append(fields["mu"])
    q, cross = estimate_psd(fe, spacing, fm)
    _, ref = _binned_model(model.cross_psd("eps", "mu"), n, spacing, nbins=n // 2)
    band = ref >= 0.05 * model.cross_psd("eps", "mu")(0.0)
    np.testing.assert_allclose(cross[band], ref[band], rtol=0.15)


def test_estimate_psd_empty_input():
    with pytest.raises(EmptyInput):
        estimate_psd([], 0.25)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def test_radial_table_round_trip(tmp_path):
    q = np.linspace(0.0, 3.0, 10)
    v = GaussianPSD(1.0)(q)
    path = tmp_path / "psd.csv"
    save_radial_table(path, q, v)
    q2, v2 = load_radial_table(path)
    np.testing.assert_allclose(q2, q, atol=1e-12)
    np.testing.assert_allclose(v2, v, atol=1e-12)
    assert path.read_text().splitlines()[0] == "qnorm,value"


def test_realization_files_round_trip(tmp_path):
    model = isotropic_channels(gaussian_isotropic_psd(1.0), gaussian_isotropic_psd(1.0))
    fields = synthesize_realization(model, n=32, spacing=0.25, seed=5)
    stem = tmp_path / "real"
    written = save_realization(stem, fields, spacing=0.25, seed=5)
    assert any(p.suffix == ".json" for p in written)
    loaded, meta = load_realization(stem)
    assert meta["seed"] == 5
    assert meta["spacing"] == 0.25
    assert "convention" in meta
    for name in fields:
        np.testing.assert_array_equal(loaded[name], fields[name])
