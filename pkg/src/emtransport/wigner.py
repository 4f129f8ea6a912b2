"""Phase-space diagnostics for sampled one-dimensional wave fields.

For a field u sampled on a uniform periodic lattice and a small-scale
parameter eps, the scaled phase-space transform (standard quantization)

    W(x, k) = (2 pi)^-1 sum_y e^(i k y) u(x - eps y) conj(v(x)) dy

is evaluated on the lattice y_j = j dx / eps by an FFT in y.  With this
convention the k-marginal collapses exactly:

    sum_k W(x, k) dk = u(x) conj(v(x))        (a finite-sum identity),

which is the anchor for every check in this module: concentration of
oscillatory fields near their local wavenumber, covariance of the transform
under free transport (a rigid shift in x), and sesquilinearity.  Fields
should be compactly supported in the middle half of the lattice to suppress
periodic wrap-around in the y-sum.

The module also provides the spherical-mean evaluator

    u(x, t) = t (4 pi)^-1 oint g(x - c t p_hat) dOmega(p_hat)

for 3D initial-velocity data g, by a product Gauss-Legendre x uniform-phi
quadrature on the sphere.

Everything here is one-dimensional by design: phase-space grids in higher
dimensions are infeasible at desk scale, and the identities exercised
(marginal, shift covariance, concentration) are dimension-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "UnderResolved",
    "GridMismatch",
    "SampledField",
    "PhaseSpaceGrid",
    "uniform_grid",
    "wkb_field",
    "discrete_wigner",
    "free_transport_check",
    "kirchhoff_spherical_mean",
    "save_phase_space",
]


class UnderResolved(ValueError):
    """The lattice spacing cannot resolve oscillations at the field's scale."""


class GridMismatch(ValueError):
    """Two fields do not share the same lattice and scale parameter."""


def uniform_grid(start: float, stop: float, n: int) -> np.ndarray:
    """n lattice positions on [start, stop), the right endpoint identified."""
    if n < 2:
        raise ValueError(f"need at least 2 lattice points, got {n}")
    return start + (stop - start) * np.arange(n) / n


@dataclass(frozen=True, eq=False)
class SampledField:
    """Complex samples of a field on a uniform periodic lattice.

    ``epsilon`` is the small-scale parameter of the oscillations the field
    carries; the lattice must resolve it: dx <= epsilon / 4.
    """

    positions: np.ndarray
    values: np.ndarray
    epsilon: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.positions.ndim != 1 or self.positions.size < 2:
            raise ValueError("positions must be a 1D lattice with >= 2 points")
        if self.values.shape != self.positions.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.positions.shape} positions"
            )
        steps = np.diff(self.positions)
        if not np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
            raise ValueError("positions must be uniformly spaced")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.spacing > self.epsilon / 4.0 + 1e-15:
            raise UnderResolved(
                f"lattice spacing {self.spacing:.6g} exceeds epsilon/4 = "
                f"{self.epsilon / 4.0:.6g}"
            )

    @property
    def spacing(self) -> float:
        return float(self.positions[1] - self.positions[0])

    @property
    def n(self) -> int:
        return int(self.positions.size)


def wkb_field(
    amplitude: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    phase: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    epsilon: float,
    positions: np.ndarray,
) -> SampledField:
    """Oscillatory field u(x) = Re{ a(x) e^(i S(x) / epsilon) } on the lattice.

    ``amplitude`` and ``phase`` may be callables of the positions or sampled
    arrays.  Raises :class:`UnderResolved` when the lattice spacing exceeds
    epsilon / 4.
    """
    positions = np.asarray(positions, dtype=float)
    a = amplitude(positions) if callable(amplitude) else np.asarray(amplitude)
    s = phase(positions) if callable(phase) else np.asarray(phase)
    u = np.real(a * np.exp(1j * np.asarray(s, dtype=float) / epsilon))
    return SampledField(positions=positions, values=u, epsilon=epsilon)


@dataclass(frozen=True, eq=False)
class PhaseSpaceGrid:
    """Transform values W(x, k) on the lattice x (rows) times wavenumbers k."""

    positions: np.ndarray
    wavenumbers: np.ndarray
    values: np.ndarray
    epsilon: float

    @property
    def dx(self) -> float:
        return float(self.positions[1] - self.positions[0])

    @property
    def dk(self) -> float:
        return float(self.wavenumbers[1] - self.wavenumbers[0])

    def k_marginal(self) -> np.ndarray:
        """sum_k W(x, k) dk; equals u(x) conj(v(x)) exactly."""
        return self.values.sum(axis=1) * self.dk

    @property
    def total_mass(self) -> float:
        """Absolute phase-space mass sum |W| (no measure factors)."""
        return float(np.abs(self.values).sum())


def _check_same_grid(u: SampledField, v: SampledField) -> None:
    if u.n != v.n or u.epsilon != v.epsilon:
        raise GridMismatch(
            f"fields disagree: {u.n} vs {v.n} points, "
            f"epsilon {u.epsilon} vs {v.epsilon}"
        )
    if not np.allclose(u.positions, v.positions, rtol=0.0, atol=1e-12 * abs(u.spacing)):
        raise GridMismatch("fields are sampled on different lattices")


def discrete_wigner(u: SampledField, v: SampledField | None = None) -> PhaseSpaceGrid:
    """Cross transform W(x, k) of two fields on a shared periodic lattice.

        W(x_i, k_m) = (dy / 2 pi) conj(v(x_i)) sum_j e^(i k_m y_j) u(x_i - eps y_j)

    with y_j = j dx / eps and k_m = 2 pi m eps / (N dx) for
    m = -N/2 .. N/2 - 1 (the y-sum is an inverse FFT row by row).  The
    k-marginal identity sum_m W(x, k_m) dk = u(x) conj(v(x)) is exact.
    """
    if v is None:
        v = u
    _check_same_grid(u, v)
    n = u.n
    dx = u.spacing
    eps = u.epsilon
    dy = dx / eps

    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    shifted = u.values[idx]  # row i holds u(x_i - eps y_j)
    spectra = n * np.fft.ifft(shifted, axis=1)
    w = (dy / (2.0 * np.pi)) * np.conj(v.values)[:, None] * spectra

    freqs = np.fft.fftfreq(n, d=1.0 / n)  # integer m
    k = 2.0 * np.pi * eps / (n * dx) * freqs
    order = np.fft.fftshift(np.arange(n))
    return PhaseSpaceGrid(
        positions=u.positions.copy(),
        wavenumbers=k[order],
        values=w[:, order],
        epsilon=eps,
    )


def _spectral_shift(values: np.ndarray, shift: float, dx: float, axis: int = 0) -> np.ndarray:
    """Translate samples by ``shift`` along ``axis`` via an exact Fourier ramp."""
    n = values.shape[axis]
    xi = 2.0 * np.pi * np.fft.fftfreq(n, d=dx)
    ramp = np.exp(-1j * xi * shift)
    shape = [1] * values.ndim
    shape[axis] = n
    return np.fft.ifft(np.fft.fft(values, axis=axis) * ramp.reshape(shape), axis=axis)


def free_transport_check(u0: SampledField, c: float, t: float) -> float:
    """Normalized L1 distance between W of the transported field and the
    rigidly shifted W of the initial field.

    The transported field u(x, t) = u0(x - c t) is generated by exact
    spectral interpolation; the reference is W[u0] translated by c t along
    x.  For a transform covariant under free transport the distance vanishes
    up to interpolation error.
    """
    shifted_field = SampledField(
        positions=u0.positions.copy(),
        values=_spectral_shift(u0.values, c * t, u0.spacing),
        epsilon=u0.epsilon,
    )
    w_t = discrete_wigner(shifted_field).values
    w_0 = discrete_wigner(u0).values
    w_ref = _spectral_shift(w_0, c * t, u0.spacing, axis=0)
    denom = float(np.abs(w_0).sum())
    return float(np.abs(w_t - w_ref).sum() / denom)


def kirchhoff_spherical_mean(
    data: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    c: float,
    t: float,
    *,
    order: int = 26,
) -> float:
    """Spherical mean t (4 pi)^-1 oint g(x - c t p_hat) dOmega of 3D data.

    ``data`` must accept an (n, 3) array of points and return n values.  The
    quadrature is a product rule — Gauss-Legendre in cos(theta) times a
    uniform phi lattice — exact for spherical harmonics up to ``order``.
    """
    if not t > 0:
        raise ValueError(f"the spherical mean is defined for t > 0, got {t}")
    x = np.asarray(x, dtype=float).reshape(3)
    ntheta = (order + 2) // 2
    nphi = order + 1
    nodes, gl_weights = np.polynomial.legendre.leggauss(ntheta)
    phi = 2.0 * np.pi * np.arange(nphi) / nphi

    sin = np.sqrt(np.clip(1.0 - nodes**2, 0.0, None))
    phat = np.empty((ntheta, nphi, 3))
    phat[..., 0] = sin[:, None] * np.cos(phi)[None, :]
    phat[..., 1] = sin[:, None] * np.sin(phi)[None, :]
    phat[..., 2] = nodes[:, None]

    points = x[None, :] - c * t * phat.reshape(-1, 3)
    vals = np.asarray(data(points), dtype=float).reshape(ntheta, nphi)
    mean = float(gl_weights @ vals.sum(axis=1)) * (2.0 * np.pi / nphi) / (4.0 * np.pi)
    return t * mean


def save_phase_space(
    grid: PhaseSpaceGrid, directory: str | Path, *, stem: str = "wigner"
) -> dict[str, Path]:
    """Write the phase-space grid as CSV plus raw arrays; return the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": directory / f"{stem}.csv",
        "values": directory / f"{stem}_values.npy",
        "positions": directory / f"{stem}_positions.npy",
        "wavenumbers": directory / f"{stem}_wavenumbers.npy",
    }
    lines = ["x,k,re,im"]
    for i, xv in enumerate(grid.positions):
        for m, kv in enumerate(grid.wavenumbers):
            w = grid.values[i, m]
            lines.append("%.12g,%.12g,%.12g,%.12g" % (xv, kv, w.real, w.imag))
    paths["csv"].write_text("\n".join(lines) + "\n")
    np.save(paths["values"], grid.values)
    np.save(paths["positions"], grid.positions)
    np.save(paths["wavenumbers"], grid.wavenumbers)
    return paths
