"""Polarized scattering kernels and cross-sections in weakly random media.

Mode-to-mode scattering between polarized branches is governed by rank-four
kernels obtained by sandwiching the channel power spectra between branch
eigenvectors: with left vectors ``c`` at the receiving point (alpha, k) and
right vectors ``b`` at the emitting point (beta, p),

    R[a, a', b, b'] = sum_{c, c'} C_{c c'}(|k - p|)
                      (c_alpha^a(k)* P_c b_beta^b(p))
                      (c_beta^{b'}(p)* P_{c'} b_alpha^{a'}(k)),

    sigma_{alpha beta}(k, p) = 2 pi omega_alpha(k) omega_beta(p) R.

Kernels act on coherence matrices as ``[sigma : w]_{a a'} = sum_{b b'}
sigma[a, a', b, b'] w[b, b']``, preserving Hermiticity and positivity.

Total cross-sections integrate the kernel over the equal-frequency shell with
the spectral measure ``dmu = |p|^2 / |d omega / d|p|| dOmega``:

    Sigma_alpha(k) = (1/2) sum_beta oint sigma_{alpha beta}(k, p) : I dmu(p).

Closed forms are provided for the two worked media (isotropic with
electric/magnetic channels; optically active with common/gyrotropic
channels) and are cross-validated against the generic pipeline in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from emtransport.dispersion import (
    Branch,
    ModeDecomposition,
    ModeFamily,
    OpticalResponse,
    propagating_families,
    transverse_frame,
    transverse_frames,
)
from emtransport.media import SpectralModel

__all__ = [
    "MixedMedia",
    "VanishingGroupSpeed",
    "family_by_label",
    "same_sign_families",
    "apply_kernel",
    "received_kernel_batch",
    "kernel_trace",
    "mode_psd_contraction",
    "differential_xsection",
    "shell_directions",
    "TotalXSection",
    "total_xsection",
    "gain_matrix",
    "lorentz_kernel",
    "lorentz_total",
    "chiral_total",
    "save_total_table",
    "save_differential_table",
]


class MixedMedia(ValueError):
    """Scattering requested between decompositions of different backgrounds."""


class VanishingGroupSpeed(ValueError):
    """A branch with zero radial group speed has no spectral shell measure."""


# ---------------------------------------------------------------------------
# kernel algebra
# ---------------------------------------------------------------------------


def apply_kernel(sigma: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Contract a rank-four kernel with a coherence matrix: [sigma : w]."""
    return np.einsum("...abcd,...cd->...ab", sigma, w)


def kernel_trace(sigma: np.ndarray, w: np.ndarray) -> np.ndarray:
    """tr(sigma : w), batched over leading axes of sigma."""
    return np.einsum("...aacd,...cd->...", sigma, w)


def mode_psd_contraction(
    dec_k: ModeDecomposition,
    branch_k: Branch,
    dec_p: ModeDecomposition,
    branch_p: Branch,
    model: SpectralModel,
) -> np.ndarray:
    """Channel spectra contracted between two branches (rank-four tensor).

    ``dec_k``/``branch_k`` receive (left vectors at k), ``dec_p``/``branch_p``
    emit (right vectors at p).  Both decompositions must be built from the
    same background response; otherwise :class:`MixedMedia` is raised.
    """
    if not np.allclose(dec_k.response, dec_p.response, atol=1e-12 * (1 + np.abs(dec_k.response).max())):
        raise MixedMedia("scattering endpoints live in different background media")
    qnorm = float(np.linalg.norm(dec_k.wavevector - dec_p.wavevector))
    cmat = model.psd_matrix(qnorm)  # (nc, nc)
    g = np.einsum("ia,cij,jb->cab", branch_k.left.conj(), model.maps, branch_p.right)
    h = np.einsum("ib,cij,ja->cba", branch_p.left.conj(), model.maps, branch_k.right)
    return np.einsum("cd,cab,dBA->aAbB", cmat, g, h)


def differential_xsection(
    dec_k: ModeDecomposition,
    branch_k: Branch,
    dec_p: ModeDecomposition,
    branch_p: Branch,
    model: SpectralModel,
) -> np.ndarray:
    """Differential scattering kernel sigma_{alpha beta}(k, p) (rank four)."""
    r = mode_psd_contraction(dec_k, branch_k, dec_p, branch_p, model)
    return 2.0 * np.pi * branch_k.omega * branch_p.omega * r


# ---------------------------------------------------------------------------
# batched kernels over direction sets (closed-form families)
# ---------------------------------------------------------------------------


def _family_kernel_nodes(
    target: ModeFamily,
    k: np.ndarray,
    source: ModeFamily,
    radius: float,
    dirs: np.ndarray,
    model: SpectralModel,
) -> np.ndarray:
    """sigma_{target source}(k, radius * dirs) for all unit rows of dirs.

    Returns shape (M, A_t, A_t, A_s, A_s).  Both families must belong to the
    same medium (enforced by construction in the public entry points).
    """
    k = np.asarray(k, dtype=float)
    knorm = np.linalg.norm(k)
    khat = k / knorm
    c_t = target.left_vectors(khat)  # (6, A_t)
    b_t = target.vectors(khat)
    b_s = source.vectors(dirs)  # (M, 6, A_s)
    c_s = source.left_vectors(dirs)
    p = radius * dirs
    qnorm = np.linalg.norm(k[None, :] - p, axis=-1)
    cmat = model.psd_matrix(qnorm)  # (M, nc, nc)
    g = np.einsum("ia,cij,Mjb->cMab", c_t.conj(), model.maps, b_s)
    h = np.einsum("Mib,cij,ja->cMba", c_s.conj(), model.maps, b_t)
    r = np.einsum("Mcd,cMab,dMBA->MaAbB", cmat, g, h)
    omega_t = target.omega(k)
    omega_s = source.sign * source.speed_factor * source.medium.wave_speed(None) * radius
    return 2.0 * np.pi * omega_t * omega_s * r


def shell_directions(
    ncos: int = 64, nphi: int = 128, axis: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Product quadrature on the unit sphere aligned with ``axis``.

    Gauss-Legendre in cos(theta) (theta measured from axis) times a uniform
    trapezoid in phi; weights sum to 4 pi.  Returns (directions (M, 3),
    weights (M,)).
    """
    nodes, gl_w = np.polynomial.legendre.leggauss(ncos)
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    if axis is None:
        axis = np.array([0.0, 0.0, 1.0])
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    e1, e2 = transverse_frame(axis)
    ct = np.repeat(nodes, nphi)
    st = np.sqrt(np.clip(1.0 - ct**2, 0.0, None))
    cp = np.tile(np.cos(phi), ncos)
    sp = np.tile(np.sin(phi), ncos)
    dirs = (
        ct[:, None] * axis[None, :]
        + (st * cp)[:, None] * e1[None, :]
        + (st * sp)[:, None] * e2[None, :]
    )
    weights = np.repeat(gl_w, nphi) * (2.0 * np.pi / nphi)
    return dirs, weights


@dataclass(frozen=True)
class TotalXSection:
    """Shell-integrated cross-section of one branch at one wavevector.

    ``matrix`` is the Hermitian loss matrix Sigma_alpha (A x A); ``per_source``
    holds each emitting family's contribution.  The principal-value (imaginary,
    identity-proportional) part is evaluated only for isotropic backgrounds
    and reported as a scalar coefficient; it never enters transport.
    """

    label: str
    omega: float
    matrix: np.ndarray
    per_source: dict[str, np.ndarray]
    shells: dict[str, tuple[float, float]]  # source label -> (radius, jacobian)
    pv_evaluated: bool = False
    pv_coefficient: float | None = None

    @property
    def scalar(self) -> float:
        """tr Sigma / A — the isotropic-equivalent scalar cross-section."""
        return float(np.trace(self.matrix).real / self.matrix.shape[0])


def same_sign_families(medium: OpticalResponse, target: ModeFamily) -> list[ModeFamily]:
    """Families sharing the frequency sign of ``target``.

    Only these can exchange energy with ``target`` on a fixed-frequency shell,
    so they are the candidate source/receiver set of every shell integral.
    """
    return [f for f in propagating_families(medium) if f.sign == target.sign]


def family_by_label(medium: OpticalResponse, label: str) -> ModeFamily:
    """Look up a propagating family by its label; ValueError when absent."""
    for f in propagating_families(medium):
        if f.label == label:
            return f
    raise ValueError(f"no propagating family labeled {label!r}")


def total_xsection(
    medium: OpticalResponse,
    model: SpectralModel,
    label: str,
    k: np.ndarray | float,
    *,
    ncos: int = 64,
    nphi: int = 128,
    with_pv: bool = False,
) -> TotalXSection:
    """Shell quadrature of the loss term for branch ``label`` at wavevector k.

    ``k`` may be a 3-vector or a magnitude (then taken along +z; totals of
    rotationally invariant media do not depend on the direction).  All
    same-frequency shells of equal-sign branches contribute with the measure
    |p|^2 / |group speed|.  Raises :class:`VanishingGroupSpeed` if a
    contributing branch has no radial dispersion.
    """
    k = np.array([0.0, 0.0, float(k)]) if np.ndim(k) == 0 else np.asarray(k, dtype=float)
    target = family_by_label(medium, label)
    omega = target.omega(k)
    dirs, weights = shell_directions(ncos, nphi, axis=k)
    per_source: dict[str, np.ndarray] = {}
    shells: dict[str, tuple[float, float]] = {}
    a_t = target.multiplicity
    total = np.zeros((a_t, a_t), dtype=complex)
    for source in same_sign_families(medium, target):
        speed = source.group_speed(None)
        if abs(speed) < 1e-14:
            raise VanishingGroupSpeed(f"branch {source.label} has zero group speed")
        radius = source.shell_radius(abs(omega))
        jac = radius**2 / abs(speed)
        sig = _family_kernel_nodes(target, k, source, radius, dirs, model)
        integ = np.einsum("M,MaAbb->aA", weights, sig) * jac
        contrib = 0.5 * integ
        per_source[source.label] = contrib
        shells[source.label] = (radius, jac)
        total += contrib
    pv_val = None
    pv_done = False
    if with_pv and medium.kind == "isotropic":
        pv_val = _pv_coefficient(medium, model, target, k, ncos=ncos, nphi=nphi)
        pv_done = True
    return TotalXSection(
        label=label,
        omega=omega,
        matrix=total,
        per_source=per_source,
        shells=shells,
        pv_evaluated=pv_done,
        pv_coefficient=pv_val,
    )


def _pv_coefficient(
    medium: OpticalResponse,
    model: SpectralModel,
    target: ModeFamily,
    k: np.ndarray,
    *,
    ncos: int,
    nphi: int,
    nrad: int = 200,
) -> float:
    """Principal-value radial integral (coefficient of i * identity).

    Isotropic backgrounds only: the angular average of the kernel is a
    multiple of the identity, so the off-shell radial integral reduces to a
    scalar with a simple pole at the shell radius; the pole is removed by
    subtraction and the remainder integrated by Gauss-Legendre.
    """
    knorm = float(np.linalg.norm(k))
    # The angular trace of an isotropic kernel depends on cos(theta) only,
    # so a short uniform rule in phi is exact.
    dirs, weights = shell_directions(ncos, min(nphi, 8), axis=k)
    source = target  # isotropic: one equal-sign family
    speed = source.group_speed(None)
    r_shell = source.shell_radius(abs(target.omega(k)))
    r_max = r_shell + 12.0 / model.corr_length + 2.0 * knorm

    # The eigenvector contractions are radius-independent; only the spectra
    # and the off-shell frequency vary along the radial integral, so the
    # angular trace reduces to a per-radius contraction with a fixed tensor.
    khat = k / knorm
    c_t = target.left_vectors(khat)
    b_t = target.vectors(khat)
    b_s = source.vectors(dirs)
    c_s = source.left_vectors(dirs)
    g = np.einsum("ia,cij,Mjb->cMab", c_t.conj(), model.maps, b_s)
    h_fac = np.einsum("Mib,cij,ja->cMba", c_s.conj(), model.maps, b_t)
    pair_trace = np.einsum("cMab,dMba->cdM", g, h_fac)
    omega_t = target.omega(k)
    a_t = target.multiplicity

    def angular_scalar(radius: float | np.ndarray) -> np.ndarray:
        radius = np.atleast_1d(np.asarray(radius, dtype=float))
        qnorm = np.linalg.norm(
            k[None, None, :] - radius[:, None, None] * dirs[None, :, :], axis=-1
        )
        cmat = model.psd_matrix(qnorm)  # (R, M, nc, nc)
        ang = np.einsum("RMcd,cdM,M->R", cmat, pair_trace, weights)
        omega_s = source.sign * source.speed_factor * source.medium.wave_speed(None) * radius
        return (2.0 * np.pi * omega_t * omega_s * ang / a_t).real

    nodes, gl_w = np.polynomial.legendre.leggauss(nrad)
    r = 0.5 * r_max * (nodes + 1.0)
    wr = 0.5 * r_max * gl_w
    h = angular_scalar(r) * r**2
    h_pole = float(angular_scalar(r_shell)[0]) * r_shell**2
    # omega(p) - omega(k) = sign * speed * (r - r_shell)
    denom = target.sign * speed * (r - r_shell)
    regular = (h - h_pole) / denom * wr
    log_part = h_pole / (target.sign * speed) * np.log((r_max - r_shell) / r_shell)
    return float((regular.sum() + log_part) / (2.0 * np.pi))


def received_kernel_batch(
    recv: ModeFamily,
    dirs: np.ndarray,
    radius: float,
    source: ModeFamily,
    k: np.ndarray,
    model: SpectralModel,
) -> np.ndarray:
    """sigma_{recv source}(radius * dirs, k) for unit rows of dirs.

    The gain-side kernel: receiving branch at p = radius * p_hat (first index
    pair), emitting branch at the fixed wavevector k (second pair).  Returns
    shape (M, B, B, A, A) where B/A are the receiving/emitting
    multiplicities.  Contract the last two axes with the emitter's coherence
    matrix to get the received coherence per direction.
    """
    k = np.asarray(k, dtype=float)
    khat = k / np.linalg.norm(k)
    b_r = recv.vectors(dirs)  # (M, 6, B)
    c_r = np.einsum("ij,MjB->MiB", recv.medium.response(None), b_r)
    b_s = source.vectors(khat)  # (6, A)
    c_s = source.medium.response(None) @ b_s
    qnorm = np.linalg.norm(radius * dirs - k[None, :], axis=-1)
    cmat = model.psd_matrix(qnorm)
    g1 = np.einsum("Mib,cij,ja->cMba", c_r.conj(), model.maps, b_s)
    g2 = np.einsum("ia,cij,Mjb->cMab", c_s.conj(), model.maps, b_r)
    tensor = np.einsum("Mcd,cMba,dMAB->MbBaA", cmat, g1, g2)
    omega_s = source.omega(k)
    omega_r = recv.sign * recv.speed_factor * recv.medium.wave_speed(None) * radius
    return 2.0 * np.pi * omega_r * omega_s * tensor


def gain_matrix(
    medium: OpticalResponse,
    model: SpectralModel,
    label: str,
    k: np.ndarray | float,
    *,
    ncos: int = 64,
    nphi: int = 128,
) -> np.ndarray:
    """Shell integral of the gain-side kernels received by all other branches.

    Returns the (A, A) matrix G with ``sum_beta oint tr(sigma_{beta alpha}(p, k) : w)
    dmu(p) = sum_{a a'} G[a, a'] w[a, a']``; statistical reciprocity makes
    G equal twice the Hermitian part of the loss matrix.
    """
    k = np.array([0.0, 0.0, float(k)]) if np.ndim(k) == 0 else np.asarray(k, dtype=float)
    source = family_by_label(medium, label)  # our particle: emits at k
    omega = source.omega(k)
    dirs, weights = shell_directions(ncos, nphi, axis=k)
    a_s = source.multiplicity
    gain = np.zeros((a_s, a_s), dtype=complex)
    for recv in same_sign_families(medium, source):
        speed = recv.group_speed(None)
        if abs(speed) < 1e-14:
            raise VanishingGroupSpeed(f"branch {recv.label} has zero group speed")
        radius = recv.shell_radius(abs(omega))
        jac = radius**2 / abs(speed)
        tensor = received_kernel_batch(recv, dirs, radius, source, k, model)
        gain += jac * np.einsum("M,MbbaA->aA", weights, tensor)
    return gain


# ---------------------------------------------------------------------------
# closed forms for the worked media
# ---------------------------------------------------------------------------


def lorentz_kernel(
    k: np.ndarray,
    p: np.ndarray,
    re_val: float,
    rm_val: float,
    rem_val: float = 0.0,
    *,
    c0: float = 1.0,
) -> np.ndarray:
    """Closed-form transverse kernel of the isotropic medium (rank four).

    With the transverse frames at khat and phat define the overlap matrices
    T[a, b] = e_a(khat) . e_b(phat) and X[a, b] = (khat x e_a) . (phat x e_b);
    then, for spectra values (re, rm, rem) at |k - p|,

        sigma : w = (pi/2) c0^2 |k||p| (re T w T^T + rm X w X^T
                                        + rem (T w X^T + X w T^T)).
    """
    k = np.asarray(k, dtype=float)
    p = np.asarray(p, dtype=float)
    knorm, pnorm = np.linalg.norm(k), np.linalg.norm(p)
    khat, phat = k / knorm, p / pnorm
    ek = np.stack(transverse_frame(khat), axis=0)  # (2, 3)
    ep = np.stack(transverse_frame(phat), axis=0)
    t = ek @ ep.T
    x = np.cross(khat, ek) @ np.cross(phat, ep).T
    pref = 0.5 * np.pi * c0**2 * knorm * pnorm
    sigma = pref * (
        re_val * np.einsum("ab,AB->aAbB", t, t)
        + rm_val * np.einsum("ab,AB->aAbB", x, x)
        + rem_val * (np.einsum("ab,AB->aAbB", t, x) + np.einsum("ab,AB->aAbB", x, t))
    )
    return sigma.astype(complex)


def lorentz_total(
    knorm: float,
    re_psd,
    rm_psd,
    rem_psd=None,
    *,
    c0: float = 1.0,
    n_gl: int = 64,
) -> float:
    """Closed-form total cross-section of the isotropic medium (coefficient of I).

        Sigma(|k|) = (pi^2 c0 |k|^4 / 4) Int_{-1}^{1} [ (1 + t^2)(re + rm)(s)
                      + 4 t rem(s) ] dt,   s = |k| sqrt(2 (1 - t)).

    ``re_psd``/``rm_psd``/``rem_psd`` are radial spectra (physical scaling
    included); ``rem_psd`` defaults to zero.
    """
    nodes, gl_w = np.polynomial.legendre.leggauss(n_gl)
    s = knorm * np.sqrt(2.0 * (1.0 - nodes))
    vals = (1.0 + nodes**2) * (np.asarray(re_psd(s)) + np.asarray(rm_psd(s)))
    if rem_psd is not None:
        vals = vals + 4.0 * nodes * np.asarray(rem_psd(s))
    integral = float(gl_w @ vals)
    return (np.pi**2) * c0 * knorm**4 / 4.0 * integral


def chiral_total(
    knorm: float,
    kappa: float,
    ra_psd,
    rb_psd=None,
    rab_psd=None,
    *,
    c0: float = 1.0,
    n_gl: int = 64,
) -> dict[str, float]:
    """Closed-form totals of the optically active medium, per branch label.

    Cross-family scattering vanishes identically, so each branch only couples
    to itself and its opposite-direction twin never enters (equal-sign rule):

        Sigma_1 = Sigma_2 = (pi^2 c0 |k|^4 / (2 (1 + kappa)))
                  Int (1 + t)^2 [ra + rb + 2 rab](|k| sqrt(2(1 - t))) dt,
        Sigma_3 = Sigma_4 = same with (1 - kappa) and [ra + rb - 2 rab].

    The branch magnitude |k| is the argument for that branch's own shell.
    Missing spectra default to zero.
    """
    nodes, gl_w = np.polynomial.legendre.leggauss(n_gl)
    s = knorm * np.sqrt(2.0 * (1.0 - nodes))
    ra = np.asarray(ra_psd(s)) if ra_psd is not None else 0.0
    rb = np.asarray(rb_psd(s)) if rb_psd is not None else 0.0
    rab = np.asarray(rab_psd(s)) if rab_psd is not None else 0.0
    base = (1.0 + nodes) ** 2
    plus = float(gl_w @ (base * (ra + rb + 2.0 * rab)))
    minus = float(gl_w @ (base * (ra + rb - 2.0 * rab)))
    pref = (np.pi**2) * c0 * knorm**4
    fast = pref / (2.0 * (1.0 + kappa)) * plus
    slow = pref / (2.0 * (1.0 - kappa)) * minus
    return {"1": fast, "2": fast, "3": slow, "4": slow}


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def save_total_table(
    path: str | Path, medium: OpticalResponse, model: SpectralModel, knorms, labels=None
) -> None:
    """CSV table (|k|, branch label, Sigma diagonal entries)."""
    labels = labels or [f.label for f in propagating_families(medium) if f.sign > 0]
    lines = ["knorm,label,sigma_diag"]
    for kn in np.atleast_1d(knorms):
        for lab in labels:
            tot = total_xsection(medium, model, lab, float(kn))
            diag = ";".join(f"{d:.12g}" for d in np.real(np.diag(tot.matrix)))
            lines.append(f"{kn:.12g},{lab},{diag}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_differential_table(
    path: str | Path,
    medium: OpticalResponse,
    model: SpectralModel,
    label: str,
    knorm: float,
    ncos: int = 65,
) -> None:
    """CSV table (cos theta, branch pair, tr sigma) on the equal-frequency shell."""
    target = family_by_label(medium, label)
    k = np.array([0.0, 0.0, knorm])
    costh = np.linspace(-1.0, 1.0, ncos)
    lines = ["costheta,pair,trace_sigma"]
    for source in same_sign_families(medium, target):
        radius = source.shell_radius(abs(target.omega(k)))
        dirs = np.stack(
            [np.sqrt(1.0 - costh**2), np.zeros_like(costh), costh], axis=-1
        )
        sig = _family_kernel_nodes(target, k, source, radius, dirs, model)
        tr = np.einsum("Maabb->M", sig).real
        for ct, v in zip(costh, tr):
            lines.append(f"{ct:.12g},{label}->{source.label},{v:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")
