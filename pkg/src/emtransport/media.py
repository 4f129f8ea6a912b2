"""Statistical models of weakly heterogeneous optical media.

Fluctuations of the optical response are decomposed into scalar correlation
*channels*: the local response is ``K(x) = K0 (I + sigma * sum_c chi_c(x) P_c)``
with unit-variance stationary random fields ``chi_c``, constant 6x6
*structure maps* ``P_c`` compatible with the weighting (``K0 P = P* K0``),
and a small overall amplitude ``sigma``.

Second-order statistics use the convention

    R(y) = E[chi(x + y) chi(x)] = Int Rhat(q) exp(i q . y) dq,
    Rhat(q) = (2 pi)^-3 Int R(y) exp(-i q . y) dy,

with channel autocorrelations normalized to R(0) = 1 so that ``sigma`` alone
fixes the fluctuation strength.  Built-in radial power spectra: Gaussian and
exponential correlation, both carrying their correlation length internally.

The module synthesizes periodic grid realizations of correlated channel
fields (spectral filtering of white noise, exact for the discretized
spectrum), estimates spectra back from realizations (averaged periodogram,
same 2-pi convention, round-trip tested), and exports/imports the raw-array +
JSON-sidecar file format used by the command line tools.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "UnknownChannel",
    "GridTooCoarse",
    "EmptyInput",
    "GaussianPSD",
    "ExponentialPSD",
    "TabulatedPSD",
    "gaussian_isotropic_psd",
    "exponential_isotropic_psd",
    "channel_cross_psd",
    "SpectralModel",
    "isotropic_channels",
    "chiral_channels",
    "synthesize_realization",
    "estimate_psd",
    "save_radial_table",
    "load_radial_table",
    "save_realization",
    "load_realization",
]

#: Convention tag written into realization sidecars.
SPECTRUM_CONVENTION = "R(y) = int Rhat(q) exp(i q.y) d^3q; Rhat = (2pi)^-3 int R exp(-i q.y) d^3y"


class UnknownChannel(KeyError):
    """Requested correlation channel is not part of the model."""


class GridTooCoarse(ValueError):
    """Synthesis grid cannot resolve the correlation length (need span >= 8 lc, step <= lc/4)."""


class EmptyInput(ValueError):
    """Spectral estimation needs at least one realization."""


# ---------------------------------------------------------------------------
# radial power spectra (unit variance: 4 pi Int q^2 Rhat dq = 1)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPSD:
    """Gaussian correlation exp(-|y|^2 / (2 lc^2)); Rhat = lc^3 (2pi)^-3/2 exp(-lc^2 q^2/2)."""

    corr_length: float

    def __call__(self, qnorm):
        lc = self.corr_length
        q = np.asarray(qnorm, dtype=float)
        return lc**3 * (2.0 * np.pi) ** -1.5 * np.exp(-0.5 * (lc * q) ** 2)


@dataclass(frozen=True)
class ExponentialPSD:
    """Exponential correlation exp(-|y|/lc); Rhat = lc^3 / (pi^2 (1 + lc^2 q^2)^2)."""

    corr_length: float

    def __call__(self, qnorm):
        lc = self.corr_length
        q = np.asarray(qnorm, dtype=float)
        return lc**3 / (np.pi**2 * (1.0 + (lc * q) ** 2) ** 2)


@dataclass(frozen=True)
class TabulatedPSD:
    """Radial spectrum interpolated from a (q, value) table (zero outside)."""

    qnorm: np.ndarray
    values: np.ndarray
    corr_length: float

    def __call__(self, qnorm):
        return np.interp(np.asarray(qnorm, dtype=float), self.qnorm, self.values, left=self.values[0], right=0.0)


def gaussian_isotropic_psd(corr_length: float) -> GaussianPSD:
    """Unit-variance Gaussian-correlation radial spectrum."""
    return GaussianPSD(corr_length)


def exponential_isotropic_psd(corr_length: float) -> ExponentialPSD:
    """Unit-variance exponential-correlation radial spectrum."""
    return ExponentialPSD(corr_length)


# ---------------------------------------------------------------------------
# the channel model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralModel:
    """Correlated channel decomposition of the response fluctuations.

    Parameters
    ----------
    names:
        Channel names, e.g. ("eps", "mu").
    spectra:
        One unit-variance radial spectrum per channel (same order as names).
    maps:
        Structure maps, shape (n_channels, 6, 6); each must satisfy
        ``K0 P = P* K0`` for the background it is used with.
    correlation:
        Channel correlation matrix (unit diagonal, entries in [-1, 1],
        positive semidefinite); the physical cross spectrum is
        ``sigma^2 corr[i, j] sqrt(Rhat_i Rhat_j)``.
    amplitude:
        Overall fluctuation strength sigma.
    corr_length:
        Representative correlation length (used for grid validation).
    """

    names: tuple[str, ...]
    spectra: tuple[Callable, ...]
    maps: np.ndarray
    correlation: np.ndarray = field(default=None)  # type: ignore[assignment]
    amplitude: float = 1.0
    corr_length: float = 1.0

    def __post_init__(self) -> None:
        nc = len(self.names)
        if len(set(self.names)) != nc:
            raise ValueError("channel names must be unique")
        if len(self.spectra) != nc:
            raise ValueError("one spectrum per channel required")
        maps = np.asarray(self.maps, dtype=complex).reshape(nc, 6, 6)
        object.__setattr__(self, "maps", maps)
        corr = self.correlation
        corr = np.eye(nc) if corr is None else np.asarray(corr, dtype=float).reshape(nc, nc)
        if not np.allclose(corr, corr.T, atol=1e-14):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-14):
            raise ValueError("correlation matrix must have unit diagonal")
        if np.abs(corr).max() > 1.0 + 1e-14:
            raise ValueError("channel correlations must lie in [-1, 1]")
        if np.linalg.eigvalsh(corr).min() < -1e-12:
            raise ValueError("correlation matrix must be positive semidefinite")
        object.__setattr__(self, "correlation", corr)

    # -- lookups ------------------------------------------------------------

    @property
    def n_channels(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownChannel(name) from None

    def structure_map(self, name: str) -> np.ndarray:
        return self.maps[self.index(name)]

    # -- spectra ------------------------------------------------------------

    def auto_psd(self, name: str) -> Callable:
        """Physical (sigma^2-scaled) autospectrum of one channel."""
        i = self.index(name)
        s2 = self.amplitude**2
        spec = self.spectra[i]
        return lambda q: s2 * np.asarray(spec(q))

    def cross_psd(self, first: str, second: str) -> Callable:
        """Physical cross spectrum sigma^2 rho sqrt(Rhat_i Rhat_j)."""
        i, j = self.index(first), self.index(second)
        rho = self.correlation[i, j]
        s2 = self.amplitude**2
        si, sj = self.spectra[i], self.spectra[j]
        return lambda q: s2 * rho * np.sqrt(np.asarray(si(q)) * np.asarray(sj(q)))

    def psd_matrix(self, qnorm) -> np.ndarray:
        """Channel PSD matrix at |q| (batched: input shape + (nc, nc))."""
        q = np.asarray(qnorm, dtype=float)
        vals = np.stack([np.asarray(s(q), dtype=float) for s in self.spectra], axis=-1)
        root = np.sqrt(vals)
        return self.amplitude**2 * self.correlation * root[..., :, None] * root[..., None, :]


def channel_cross_psd(model: SpectralModel, first: str, second: str) -> Callable:
    """Cross (or auto) power spectrum of two named channels of a model."""
    if first == second:
        return model.auto_psd(first)
    return model.cross_psd(first, second)


def isotropic_channels(
    eps_psd: Callable | None = None,
    mu_psd: Callable | None = None,
    *,
    rho: float = 0.0,
    amplitude: float = 1.0,
    corr_length: float | None = None,
) -> SpectralModel:
    """Electric/magnetic channel model for scalar-response backgrounds.

    Structure maps scale the electric and magnetic blocks independently:
    P_eps = diag(I, 0), P_mu = diag(0, I).
    """
    names, spectra, maps = [], [], []
    if eps_psd is not None:
        names.append("eps")
        spectra.append(eps_psd)
        maps.append(np.diag([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]))
    if mu_psd is not None:
        names.append("mu")
        spectra.append(mu_psd)
        maps.append(np.diag([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]))
    if not names:
        raise ValueError("at least one of eps_psd, mu_psd is required")
    corr = np.eye(len(names))
    if len(names) == 2:
        corr[0, 1] = corr[1, 0] = rho
    lc = corr_length if corr_length is not None else getattr(spectra[0], "corr_length", 1.0)
    return SpectralModel(
        names=tuple(names),
        spectra=tuple(spectra),
        maps=np.stack(maps),
        correlation=corr,
        amplitude=amplitude,
        corr_length=lc,
    )


def chiral_channels(
    common_psd: Callable | None = None,
    gyro_psd: Callable | None = None,
    *,
    rho: float = 0.0,
    amplitude: float = 1.0,
    impedance: float = 1.0,
    corr_length: float | None = None,
) -> SpectralModel:
    """Channel model for optically active backgrounds.

    The "a" (common) channel scales the whole response, P_a = I.  The "b"
    (gyrotropic) channel couples the blocks through the background impedance
    Z = sqrt(mu/eps): P_b = [[0, i Z I], [-i I / Z, 0]], which is compatible
    with the chiral weighting (K0 P = P* K0) and flips sign on the two
    circular-polarization families.
    """
    names, spectra, maps = [], [], []
    if common_psd is not None:
        names.append("a")
        spectra.append(common_psd)
        maps.append(np.eye(6, dtype=complex))
    if gyro_psd is not None:
        names.append("b")
        spectra.append(gyro_psd)
        pb = np.zeros((6, 6), dtype=complex)
        pb[:3, 3:] = 1j * impedance * np.eye(3)
        pb[3:, :3] = -1j / impedance * np.eye(3)
        maps.append(pb)
    if not names:
        raise ValueError("at least one of common_psd, gyro_psd is required")
    corr = np.eye(len(names))
    if len(names) == 2:
        corr[0, 1] = corr[1, 0] = rho
    lc = corr_length if corr_length is not None else getattr(spectra[0], "corr_length", 1.0)
    return SpectralModel(
        names=tuple(names),
        spectra=tuple(spectra),
        maps=np.stack(maps),
        correlation=corr,
        amplitude=amplitude,
        corr_length=lc,
    )


# ---------------------------------------------------------------------------
# synthesis and estimation
# ---------------------------------------------------------------------------


def _check_grid(n: int, spacing: float, lc: float) -> None:
    if n * spacing < 8.0 * lc - 1e-12:
        raise GridTooCoarse(
            f"grid span {n * spacing:g} < 8 correlation lengths ({8 * lc:g})"
        )
    if spacing > lc / 4.0 + 1e-12:
        raise GridTooCoarse(f"grid step {spacing:g} > lc/4 = {lc / 4:g}")


def synthesize_realization(
    model: SpectralModel, n: int, spacing: float, seed: int
) -> dict[str, np.ndarray]:
    """Draw one periodic realization of all channel fields on an n^3 grid.

    White Gaussian noise per channel is filtered in Fourier space by the
    matrix square root of the channel PSD matrix, giving fields whose discrete
    covariance is the Riemann sum of the Bochner integral (exact for the
    periodized spectrum).  Real spectra produce real fields; tiny imaginary
    residue is discarded.

    Returns a dict: channel name -> real (n, n, n) array, unit variance up to
    the sigma^2 scaling of the model.
    """
    _check_grid(n, spacing, model.corr_length)
    nc = model.n_channels
    q1 = 2.0 * np.pi * np.fft.fftfreq(n, d=spacing)
    qx, qy, qz = np.meshgrid(q1, q1, q1, indexing="ij")
    qnorm = np.sqrt(qx**2 + qy**2 + qz**2)

    cmat = model.psd_matrix(qnorm)  # (n, n, n, nc, nc)
    evals, evecs = np.linalg.eigh(cmat)
    evals = np.clip(evals, 0.0, None)
    root = np.einsum("...ij,...j,...kj->...ik", evecs, np.sqrt(evals), evecs.conj())
    dq = (2.0 * np.pi / spacing) ** 1.5  # folds the Delta q^3 measure into the filter

    rng = np.random.default_rng(seed)
    white_hat = np.stack(
        [np.fft.fftn(rng.standard_normal((n, n, n))) for _ in range(nc)], axis=-1
    )
    field_hat = dq * np.einsum("...ij,...j->...i", root, white_hat)
    out = {}
    for i, name in enumerate(model.names):
        out[name] = np.fft.ifftn(field_hat[..., i]).real
    return out


def estimate_psd(
    fields: Sequence[np.ndarray],
    spacing: float,
    fields_other: Sequence[np.ndarray] | None = None,
    *,
    nbins: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Averaged radial (cross-)periodogram of grid realizations.

    Uses the same 2-pi convention as synthesis, so for fields drawn by
    :func:`synthesize_realization` the estimate converges to the model
    spectrum (round-trip).  Returns (bin centers |q|, estimated Rhat).
    """
    fields = list(fields)
    if not fields:
        raise EmptyInput("no realizations supplied")
    others = list(fields_other) if fields_other is not None else fields
    if len(others) != len(fields):
        raise ValueError("paired estimation needs equally many realizations")
    n = fields[0].shape[0]
    norm = spacing**3 / (n**3 * (2.0 * np.pi) ** 3)
    acc = np.zeros((n, n, n))
    for f, g in zip(fields, others):
        if f.shape != (n, n, n) or g.shape != (n, n, n):
            raise ValueError("all realizations must share one cubic grid")
        fh = np.fft.fftn(f)
        gh = fh if g is f else np.fft.fftn(g)
        acc += (fh * gh.conj()).real * norm
    acc /= len(fields)

    q1 = 2.0 * np.pi * np.fft.fftfreq(n, d=spacing)
    qx, qy, qz = np.meshgrid(q1, q1, q1, indexing="ij")
    qnorm = np.sqrt(qx**2 + qy**2 + qz**2).ravel()
    dq = 2.0 * np.pi / (n * spacing)
    nbins = nbins if nbins is not None else n // 2
    edges = dq * (np.arange(nbins + 1) - 0.5)
    idx = np.digitize(qnorm, edges) - 1
    keep = (idx >= 0) & (idx < nbins)
    sums = np.bincount(idx[keep], weights=acc.ravel()[keep], minlength=nbins)
    counts = np.bincount(idx[keep], minlength=nbins)
    centers = dq * np.arange(nbins)
    valid = counts > 0
    return centers[valid], sums[valid] / counts[valid]


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_radial_table(path: str | Path, qnorm: np.ndarray, values: np.ndarray) -> None:
    """Two-column CSV (|q|, value)."""
    rows = np.column_stack([np.asarray(qnorm, float), np.asarray(values, float)])
    np.savetxt(path, rows, delimiter=",", header="qnorm,value", comments="")


def load_radial_table(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, 0], rows[:, 1]


def save_realization(
    stem: str | Path,
    fields: dict[str, np.ndarray],
    spacing: float,
    seed: int,
) -> list[Path]:
    """Write channel fields as raw little-endian float64 plus a JSON sidecar.

    Produces ``<stem>.<channel>.raw`` per channel and ``<stem>.json``
    recording grid shape, spacing, seed and the spectral convention tag.
    """
    stem = Path(stem)
    written = []
    meta: dict = {
        "spacing": spacing,
        "seed": seed,
        "convention": SPECTRUM_CONVENTION,
        "dtype": "<f8",
        "order": "C",
        "channels": {},
    }
    for name, arr in fields.items():
        raw = stem.with_name(stem.name + f".{name}.raw")
        np.asarray(arr, dtype="<f8").tofile(raw)
        meta["channels"][name] = {"file": raw.name, "shape": list(arr.shape)}
        written.append(raw)
    sidecar = stem.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    written.append(sidecar)
    return written


def load_realization(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    fields = {}
    for name, entry in meta["channels"].items():
        raw = stem.parent / entry["file"]
        fields[name] = np.fromfile(raw, dtype="<f8").reshape(entry["shape"])
    return fields, meta
