"""Plane-wave mode structure of linear bianisotropic optical media.

A lossless medium is described by a Hermitian positive-definite 6x6 response

    K0 = [[eps, xi], [xi*, mu]],

acting on the field pair (E, H).  For a wavevector ``k`` the curl operator
becomes the real symmetric symbol ``M(k) = [[0, -X(k)], [X(k), 0]]`` with
``X(k) a = k x a``, and time-harmonic plane waves solve the weighted
eigenproblem

    M(k) b = omega K0 b,        b* K0 b = 1.

The spectrum is real and comes in branches: a doubly degenerate omega = 0
branch (longitudinal, non-propagating) plus propagating branches whose
eigenvalues are positively homogeneous of degree one in ``k``.  This module
computes that decomposition generically (any Hermitian PD response) and in
closed form for rotationally invariant media (isotropic, optically active).

Right eigenvectors ``b`` are normalized against the response weight; left
vectors are ``c = K0 b`` so that ``c* b = 1`` and the spectral projectors are
``b c*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg


__all__ = [
    "NonPositiveDefinite",
    "ZeroWaveVector",
    "ChiralityOutOfRange",
    "DegenerateQ",
    "ConstantProfile",
    "LinearProfile",
    "CallableProfile",
    "LorentzDamping",
    "OpticalResponse",
    "Branch",
    "ModeDecomposition",
    "ModeFamily",
    "cross_matrix",
    "maxwell_symbol",
    "transverse_frame",
    "transverse_frames",
    "eigen_decompose",
    "isotropic_branches",
    "chiral_branches",
    "null_mode_basis",
    "propagating_families",
]

#: Relative tolerance used to cluster numerically equal eigenvalues into a
#: degenerate branch: |w_i - w_j| <= rtol * (1 + max|w|).
DEGENERACY_RTOL = 1e-8

#: Below this sine of the polar angle the transverse frame falls back to e_x.
_FRAME_SWITCH = 1e-6


class NonPositiveDefinite(ValueError):
    """The 6x6 optical response is not Hermitian positive definite."""


class ZeroWaveVector(ValueError):
    """Mode decomposition requested at k = 0, where no direction exists."""


class ChiralityOutOfRange(ValueError):
    """Optical activity |kappa| >= 1 would destroy positivity of the response."""


class DegenerateQ(ValueError):
    """The longitudinal 2x2 Gram factor is singular; no null basis exists."""


def cross_matrix(k: np.ndarray) -> np.ndarray:
    """Return the 3x3 matrix X with X a = k x a."""
    kx, ky, kz = np.asarray(k, dtype=float)
    return np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])


def maxwell_symbol(k: np.ndarray) -> np.ndarray:
    """Real symmetric 6x6 symbol of the curl pair at wavevector ``k``.

    ``M(k) = [[0, -X], [X, 0]]`` acting on (E, H) stacked fields, where
    ``X a = k x a``.  Symmetry follows from the antisymmetry of X.
    """
    m = np.zeros((6, 6))
    x = cross_matrix(k)
    m[:3, 3:] = -x
    m[3:, :3] = x
    return m


def transverse_frame(khat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic right-handed orthonormal pair spanning the plane normal to khat.

    e1 is the normalized e_z x khat (falling back to e_x when khat is within
    1e-6 of the z axis), and e2 = khat x e1, so (e1, e2, khat) is an
    orthonormal right-handed triad.
    """
    khat = np.asarray(khat, dtype=float)
    e1 = np.array([-khat[1], khat[0], 0.0])
    n = np.linalg.norm(e1)
    if n <= _FRAME_SWITCH:
        e1 = np.array([1.0, 0.0, 0.0])
    else:
        e1 = e1 / n
    e2 = np.cross(khat, e1)
    return e1, e2


def _unit_wavevector(k: np.ndarray) -> tuple[np.ndarray, float]:
    k = np.asarray(k, dtype=float)
    norm = float(np.linalg.norm(k))
    if norm == 0.0:
        raise ZeroWaveVector("mode decomposition is undefined at k = 0")
    return k / norm, norm


# ---------------------------------------------------------------------------
# spatial profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantProfile:
    """Homogeneous medium: unit speed scaling everywhere."""

    def value(self, x: np.ndarray) -> float:  # noqa: ARG002 - uniform by design
        return 1.0

    def gradient(self, x: np.ndarray) -> np.ndarray:  # noqa: ARG002
        return np.zeros(3)

    @property
    def is_constant(self) -> bool:
        return True


@dataclass(frozen=True)
class LinearProfile:
    """Affine speed scaling s(x) = offset + g . x (must stay positive in use)."""

    slope: np.ndarray
    offset: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "slope", np.asarray(self.slope, dtype=float).reshape(3))

    def value(self, x: np.ndarray) -> float | np.ndarray:
        out = self.offset + np.asarray(x, dtype=float) @ self.slope
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, x: np.ndarray) -> np.ndarray:  # noqa: ARG002 - affine
        return self.slope.copy()

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.slope == 0.0))


@dataclass(frozen=True)
class CallableProfile:
    """Speed scaling given by an arbitrary smooth callable; gradient by central FD."""

    func: Callable[[np.ndarray], float]
    step: float = 1e-6

    def value(self, x: np.ndarray) -> float:
        return float(self.func(np.asarray(x, dtype=float)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.zeros(3)
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = self.step
            g[j] = (self.value(x + dx) - self.value(x - dx)) / (2.0 * self.step)
        return g

    @property
    def is_constant(self) -> bool:
        return False


# ---------------------------------------------------------------------------
# frequency-dependent (dissipative) part of the response
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LorentzDamping:
    """Single-resonance damped-oscillator susceptibility on the electric block.

    The frequency-side kernel is ``diag(eps * r(omega) I, 0)`` with the ratio

        r(omega) = plasma^2 / (resonance^2 - omega^2 + i omega rate),

    so the medium's static permittivity is scaled by ``plasma^2/resonance^2``.
    ``decay_rate(s)`` is the attenuation seen by a transverse mode of frequency
    magnitude ``s``:

        2 Re[i omega r(omega) / 2] = plasma^2 s^2 rate / ((resonance^2 - s^2)^2
                                                          + s^2 rate^2),

    an even function of omega, evaluated at omega = -s by the transport
    convention used throughout (see ``emtransport.raytrace.coupling_matrix_l``).
    """

    plasma: float
    resonance: float = 0.0
    rate: float = 0.0

    def ratio(self, omega: float) -> complex:
        """Susceptibility over static permittivity at (complex-valued OK) omega."""
        return self.plasma**2 / (self.resonance**2 - omega**2 + 1j * omega * self.rate)

    def matrix(self, omega: float, eps: complex) -> np.ndarray:
        """6x6 frequency-side kernel for static electric permittivity ``eps``."""
        out = np.zeros((6, 6), dtype=complex)
        out[:3, :3] = eps * self.ratio(omega) * np.eye(3)
        return out

    def decay_rate(self, s: float) -> float:
        """Transverse-mode energy decay rate at frequency magnitude ``s``."""
        d = (self.resonance**2 - s**2) ** 2 + (s * self.rate) ** 2
        return float(self.plasma**2 * s**2 * self.rate / d)


# ---------------------------------------------------------------------------
# the static optical response
# ---------------------------------------------------------------------------


def _as_herm(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=complex).reshape(3, 3)
    if not np.allclose(a, a.conj().T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(a).max())):
        raise ValueError(f"{name} block must be Hermitian")
    return a


@dataclass(frozen=True)
class OpticalResponse:
    """Static 6x6 optical response with optional spatial profile and damping.

    Parameters
    ----------
    permittivity, permeability:
        Hermitian 3x3 blocks (`eps`, `mu`).
    magnetoelectric:
        3x3 coupling block `xi` (defaults to zero); the assembled response is
        ``[[eps, xi], [xi*, mu]]`` and must be positive definite.
    damping:
        Optional frequency-side kernel (e.g. :class:`LorentzDamping`).
    profile:
        Scalar field s(x) scaling every local mode speed; the response blocks
        at x are the base blocks divided by s(x), which leaves dimensionless
        ratios (impedance, optical activity) untouched.
    """

    permittivity: np.ndarray
    permeability: np.ndarray
    magnetoelectric: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    damping: LorentzDamping | None = None
    profile: ConstantProfile | LinearProfile | CallableProfile = field(
        default_factory=ConstantProfile
    )

    def __post_init__(self) -> None:
        object.__setattr__(self, "permittivity", _as_herm(self.permittivity, "permittivity"))
        object.__setattr__(self, "permeability", _as_herm(self.permeability, "permeability"))
        object.__setattr__(
            self, "magnetoelectric", np.asarray(self.magnetoelectric, dtype=complex).reshape(3, 3)
        )
        _require_positive_definite(self.response())

    # -- constructors -------------------------------------------------------

    @classmethod
    def isotropic(
        cls,
        eps: float,
        mu: float,
        *,
        damping: LorentzDamping | None = None,
        profile: ConstantProfile | LinearProfile | CallableProfile | None = None,
    ) -> "OpticalResponse":
        """Scalar permittivity/permeability medium (optionally damped/graded)."""
        return cls(
            permittivity=eps * np.eye(3),
            permeability=mu * np.eye(3),
            damping=damping,
            profile=profile if profile is not None else ConstantProfile(),
        )

    @classmethod
    def chiral(
        cls,
        eps: float,
        mu: float,
        kappa: float,
        *,
        profile: ConstantProfile | LinearProfile | CallableProfile | None = None,
    ) -> "OpticalResponse":
        """Optically active medium with magnetoelectric block i*chi*I.

        ``kappa = c0 * chi`` is the dimensionless activity; the response stays
        positive definite only for |kappa| < 1.
        """
        if abs(kappa) >= 1.0:
            raise ChiralityOutOfRange(f"|kappa| = {abs(kappa)} >= 1")
        c0 = 1.0 / np.sqrt(eps * mu)
        chi = kappa / c0
        return cls(
            permittivity=eps * np.eye(3),
            permeability=mu * np.eye(3),
            magnetoelectric=1j * chi * np.eye(3),
            profile=profile if profile is not None else ConstantProfile(),
        )

    @classmethod
    def lorentz(
        cls,
        eps: float,
        mu: float,
        *,
        plasma: float,
        resonance: float = 0.0,
        rate: float = 0.0,
        profile: ConstantProfile | LinearProfile | CallableProfile | None = None,
    ) -> "OpticalResponse":
        """Isotropic medium with a damped single-resonance electric response."""
        return cls.isotropic(
            eps,
            mu,
            damping=LorentzDamping(plasma=plasma, resonance=resonance, rate=rate),
            profile=profile,
        )

    # -- evaluation ---------------------------------------------------------

    def response(self, x: np.ndarray | None = None) -> np.ndarray:
        """Assembled 6x6 response at position ``x`` (base blocks / profile)."""
        k0 = np.zeros((6, 6), dtype=complex)
        k0[:3, :3] = self.permittivity
        k0[:3, 3:] = self.magnetoelectric
        k0[3:, :3] = self.magnetoelectric.conj().T
        k0[3:, 3:] = self.permeability
        if x is not None:
            k0 = k0 / self.profile.value(x)
        return k0

    def speed_scale(self, x: np.ndarray | None) -> float:
        return 1.0 if x is None else self.profile.value(x)

    def damping_matrix(self, omega: float, x: np.ndarray | None = None) -> np.ndarray:
        """Frequency-side kernel at (x, omega); zero when the medium is lossless."""
        if self.damping is None:
            return np.zeros((6, 6), dtype=complex)
        eps = self.permittivity[0, 0]
        out = self.damping.matrix(omega, eps)
        if x is not None:
            out = out / self.profile.value(x)
        return out

    @cached_property
    def kind(self) -> str:
        """One of 'isotropic', 'chiral', 'generic' (pattern of the base blocks)."""
        eps, mu, xi = self.permittivity, self.permeability, self.magnetoelectric
        scale = max(np.abs(eps).max(), np.abs(mu).max())
        tol = 1e-12 * scale

        def _is_scalar(a: np.ndarray) -> bool:
            s = np.trace(a) / 3.0
            return bool(np.abs(a - s * np.eye(3)).max() <= tol and abs(s.imag) <= tol)

        if not (_is_scalar(eps) and _is_scalar(mu)):
            return "generic"
        if np.abs(xi).max() <= tol:
            return "isotropic"
        chi = np.trace(xi).imag / 3.0
        if np.abs(xi - 1j * chi * np.eye(3)).max() <= tol:
            return "chiral"
        return "generic"

    def scalar_parameters(self, x: np.ndarray | None = None) -> tuple[float, float, float]:
        """(eps, mu, kappa) at x for rotationally invariant media.

        Raises ValueError for media without scalar blocks.
        """
        kind = self.kind
        if kind not in ("isotropic", "chiral"):
            raise ValueError("medium has no scalar (eps, mu, kappa) parameterization")
        s = self.speed_scale(x)
        eps = float(self.permittivity[0, 0].real) / s
        mu = float(self.permeability[0, 0].real) / s
        if kind == "chiral":
            chi = float(np.trace(self.magnetoelectric).imag / 3.0) / s
            kappa = chi / np.sqrt(eps * mu)
        else:
            kappa = 0.0
        return eps, mu, kappa

    def wave_speed(self, x: np.ndarray | None = None) -> float:
        """Background speed 1/sqrt(eps*mu) at x (scalar-block media only)."""
        eps, mu, _ = self.scalar_parameters(x)
        return 1.0 / np.sqrt(eps * mu)

    def branches_at(self, k: np.ndarray, x: np.ndarray | None = None) -> "ModeDecomposition":
        """Mode decomposition at (x, k), closed-form when the medium allows it."""
        kind = self.kind
        if kind == "isotropic":
            eps, mu, _ = self.scalar_parameters(x)
            return isotropic_branches(eps, mu, k)
        if kind == "chiral":
            eps, mu, kappa = self.scalar_parameters(x)
            return chiral_branches(eps, mu, kappa, k)
        return eigen_decompose(self, k, x=x)


def _require_positive_definite(k0: np.ndarray) -> None:
    k0 = np.asarray(k0)
    if k0.shape != (6, 6):
        raise ValueError(f"response must be 6x6, got {k0.shape}")
    if not np.allclose(k0, k0.conj().T, rtol=0.0, atol=1e-10 * (1.0 + np.abs(k0).max())):
        raise NonPositiveDefinite("response matrix is not Hermitian")
    evals = np.linalg.eigvalsh(k0)
    if evals.min() <= 0.0:
        raise NonPositiveDefinite(f"response matrix has eigenvalue {evals.min():.3e} <= 0")


# ---------------------------------------------------------------------------
# decomposition containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    """One eigenvalue branch: frequency, right vectors b, left vectors c = K0 b."""

    omega: float
    right: np.ndarray  # (6, A)
    left: np.ndarray  # (6, A)

    @property
    def multiplicity(self) -> int:
        return self.right.shape[1]

    def projector(self) -> np.ndarray:
        """Spectral projector b c* (idempotent, K0-orthogonal to other branches)."""
        return self.right @ self.left.conj().T


@dataclass(frozen=True)
class ModeDecomposition:
    """Full spectral decomposition of the dispersion operator at one (x, k)."""

    wavevector: np.ndarray
    response: np.ndarray  # 6x6 K0 used for the weighting
    branches: tuple[Branch, ...]  # ascending omega

    @property
    def omegas(self) -> np.ndarray:
        return np.array([b.omega for b in self.branches])

    def branch_nearest(self, omega: float) -> Branch:
        idx = int(np.argmin([abs(b.omega - omega) for b in self.branches]))
        return self.branches[idx]

    def null_branch(self) -> Branch:
        return self.branch_nearest(0.0)

    def operator(self) -> np.ndarray:
        """Reconstruct sum_alpha omega_alpha b c* (= K0^{-1} M(k))."""
        out = np.zeros((6, 6), dtype=complex)
        for b in self.branches:
            out += b.omega * b.projector()
        return out

    def completeness_residual(self) -> float:
        """Max-norm deviation of sum_alpha b c* from the identity."""
        total = np.zeros((6, 6), dtype=complex)
        for b in self.branches:
            total += b.projector()
        return float(np.abs(total - np.eye(6)).max())


def _group_branches(
    omegas: np.ndarray, vectors: np.ndarray, k0: np.ndarray, k: np.ndarray, rtol: float
) -> ModeDecomposition:
    tol = rtol * (1.0 + np.abs(omegas).max())
    branches: list[Branch] = []
    i = 0
    while i < len(omegas):
        j = i + 1
        while j < len(omegas) and omegas[j] - omegas[j - 1] <= tol:
            j += 1
        right = vectors[:, i:j]
        branches.append(
            Branch(omega=float(omegas[i:j].mean()), right=right, left=k0 @ right)
        )
        i = j
    return ModeDecomposition(wavevector=np.asarray(k, dtype=float), response=k0, branches=tuple(branches))


def eigen_decompose(
    response: OpticalResponse | np.ndarray,
    k: np.ndarray,
    *,
    x: np.ndarray | None = None,
    degeneracy_rtol: float = DEGENERACY_RTOL,
) -> ModeDecomposition:
    """Weighted eigendecomposition M(k) b = omega K0 b for any Hermitian PD response.

    Eigenvalues within ``degeneracy_rtol * (1 + max|omega|)`` of each other are
    grouped into one branch.  Right vectors satisfy b* K0 b = identity within
    each branch (and across branches), left vectors are c = K0 b.

    Raises
    ------
    NonPositiveDefinite
        If the response weight fails Hermitian positive definiteness.
    ZeroWaveVector
        If ``k`` vanishes.
    """
    if isinstance(response, OpticalResponse):
        k0 = response.response(x)
    else:
        k0 = np.asarray(response, dtype=complex)
        _require_positive_definite(k0)
    k = np.asarray(k, dtype=float)
    _unit_wavevector(k)  # raises ZeroWaveVector
    omegas, vectors = scipy.linalg.eigh(maxwell_symbol(k), k0)
    return _group_branches(omegas, vectors, k0, k, degeneracy_rtol)


# ---------------------------------------------------------------------------
# closed-form branch families
# ---------------------------------------------------------------------------


def isotropic_branches(eps: float, mu: float, k: np.ndarray) -> ModeDecomposition:
    """Closed-form decomposition for scalar (eps, mu): omega in {-c|k|, 0, +c|k|}.

    Propagating branches are doubly degenerate with polarization vectors built
    on the deterministic transverse frame; the null branch is the longitudinal
    pair (khat/sqrt(eps), 0), (0, khat/sqrt(mu)).
    """
    khat, knorm = _unit_wavevector(k)
    if eps <= 0.0 or mu <= 0.0:
        raise NonPositiveDefinite("isotropic medium needs eps > 0 and mu > 0")
    c0 = 1.0 / np.sqrt(eps * mu)
    e1, e2 = transverse_frame(khat)

    def _stack(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
        return np.concatenate([top, bottom]).astype(complex)

    def _branch(sign: float) -> Branch:
        cols = []
        for e in (e1, e2):
            cols.append(_stack(e / np.sqrt(2.0 * eps), sign * np.cross(khat, e) / np.sqrt(2.0 * mu)))
        right = np.stack(cols, axis=1)
        return Branch(omega=sign * c0 * knorm, right=right, left=_k0_apply(eps, mu, right))

    null_right = np.stack(
        [_stack(khat / np.sqrt(eps), np.zeros(3)), _stack(np.zeros(3), khat / np.sqrt(mu))],
        axis=1,
    )
    null = Branch(omega=0.0, right=null_right, left=_k0_apply(eps, mu, null_right))

    k0 = np.zeros((6, 6), dtype=complex)
    k0[:3, :3] = eps * np.eye(3)
    k0[3:, 3:] = mu * np.eye(3)
    return ModeDecomposition(
        wavevector=np.asarray(k, dtype=float),
        response=k0,
        branches=(_branch(-1.0), null, _branch(+1.0)),
    )


def _k0_apply(eps: float, mu: float, vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy().astype(complex)
    out[:3] *= eps
    out[3:] *= mu
    return out


def circular_pair(khat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit circular polarization vectors u_minus, u_plus for direction khat.

    Built on the deterministic frame: u_minus = (i e1 - e2)/sqrt(2) satisfies
    khat x u_minus = -i u_minus; u_plus = (i e1 + e2)/sqrt(2) satisfies
    khat x u_plus = +i u_plus.
    """
    e1, e2 = transverse_frame(khat)
    um = (1j * e1 - e2) / np.sqrt(2.0)
    up = (1j * e1 + e2) / np.sqrt(2.0)
    return um, up


def chiral_branches(eps: float, mu: float, kappa: float, k: np.ndarray) -> ModeDecomposition:
    """Closed-form decomposition for the optically active medium.

    The four simple propagating branches have omega = +/- c|k|/(1 +/- kappa);
    circular polarizations of opposite handedness travel at different speeds.
    Branches are returned in ascending omega together with the doubly
    degenerate null branch.
    """
    if abs(kappa) >= 1.0:
        raise ChiralityOutOfRange(f"|kappa| = {abs(kappa)} >= 1")
    if kappa == 0.0:
        return isotropic_branches(eps, mu, k)
    khat, knorm = _unit_wavevector(k)
    if eps <= 0.0 or mu <= 0.0:
        raise NonPositiveDefinite("chiral medium needs eps > 0 and mu > 0")
    c0 = 1.0 / np.sqrt(eps * mu)
    chi = kappa / c0
    um, up = circular_pair(khat)

    k0 = np.zeros((6, 6), dtype=complex)
    k0[:3, :3] = eps * np.eye(3)
    k0[3:, 3:] = mu * np.eye(3)
    k0[:3, 3:] = 1j * chi * np.eye(3)
    k0[3:, :3] = -1j * chi * np.eye(3)

    def _mode(e: np.ndarray, h_sign: float, family: float) -> np.ndarray:
        # family = 1 + kappa (fast-branch pair) or 1 - kappa (slow-branch pair)
        top = e / np.sqrt(2.0 * eps)
        bottom = h_sign * np.cross(khat, e) / np.sqrt(2.0 * mu)
        return (np.concatenate([top, bottom]) / np.sqrt(family)).astype(complex)

    # For E ~ e, H ~ s khat x e with khat x e = eta i e (eta = -1 for um,
    # +1 for up), the pair solves the eigenproblem at omega = c|k| s/(1 - kappa s eta)
    # and has weighted norm (1 - kappa s eta); enumerate the four (s, eta) choices.
    fast = 1.0 + kappa
    slow = 1.0 - kappa
    vec = {
        +c0 * knorm / fast: _mode(um, +1.0, fast),
        -c0 * knorm / fast: _mode(up, -1.0, fast),
        +c0 * knorm / slow: _mode(up, +1.0, slow),
        -c0 * knorm / slow: _mode(um, -1.0, slow),
    }

    branches = [
        Branch(omega=w, right=v[:, None], left=(k0 @ v)[:, None])
        for w, v in sorted(vec.items())
        if w < 0.0
    ]
    null_right = null_mode_basis(k0, k)
    branches.append(Branch(omega=0.0, right=null_right, left=k0 @ null_right))
    branches.extend(
        Branch(omega=w, right=v[:, None], left=(k0 @ v)[:, None])
        for w, v in sorted(vec.items())
        if w > 0.0
    )
    return ModeDecomposition(
        wavevector=np.asarray(k, dtype=float), response=k0, branches=tuple(branches)
    )


def transverse_frames(khat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`transverse_frame` for khat of shape (..., 3)."""
    khat = np.asarray(khat, dtype=float)
    e1 = np.empty_like(khat)
    e1[..., 0] = -khat[..., 1]
    e1[..., 1] = khat[..., 0]
    e1[..., 2] = 0.0
    n = np.sqrt(e1[..., 0] ** 2 + e1[..., 1] ** 2)[..., None]
    polar = n[..., 0] <= _FRAME_SWITCH
    e1 /= np.where(n > 0.0, n, 1.0)
    e1[polar] = np.array([1.0, 0.0, 0.0])
    # khat x e1 with e1[..., 2] = 0 written out component-wise
    e2 = np.empty_like(khat)
    e2[..., 0] = -khat[..., 2] * e1[..., 1]
    e2[..., 1] = khat[..., 2] * e1[..., 0]
    e2[..., 2] = khat[..., 0] * e1[..., 1] - khat[..., 1] * e1[..., 0]
    return e1, e2


@dataclass(frozen=True)
class ModeFamily:
    """One propagating branch family of a rotationally invariant medium.

    Frequencies are ``omega = sign * speed_factor * c0(x) * |k|`` where
    ``c0(x)`` is the background speed of the bound medium (profile included).
    ``vectors`` evaluates the closed-form polarization basis for a batch of
    unit wavevectors.  ``handedness``/``field_sign`` encode the circular
    construction for optically active media and are None for isotropic ones.
    """

    medium: OpticalResponse
    label: str
    sign: float
    speed_factor: float
    multiplicity: int
    handedness: float | None = None
    field_sign: float | None = None

    def omega(self, k: np.ndarray, x: np.ndarray | None = None) -> float:
        knorm = float(np.linalg.norm(np.asarray(k, dtype=float), axis=-1))
        return self.sign * self.speed_factor * self.medium.wave_speed(x) * knorm

    def group_speed(self, x: np.ndarray | None = None) -> float:
        """Radial derivative d omega / d|k| (absolute value of it)."""
        return self.speed_factor * self.medium.wave_speed(x)

    def grad_k_omega(self, k: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        khat = k / np.linalg.norm(k)
        return self.sign * self.speed_factor * self.medium.wave_speed(x) * khat

    def grad_x_omega(self, k: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        knorm = float(np.linalg.norm(np.asarray(k, dtype=float)))
        eps, mu, _ = self.medium.scalar_parameters(None)
        c_base = 1.0 / np.sqrt(eps * mu)
        grad_scale = self.medium.profile.gradient(x if x is not None else np.zeros(3))
        return self.sign * self.speed_factor * c_base * knorm * grad_scale

    def shell_radius(self, omega_abs: float, x: np.ndarray | None = None) -> float:
        """|k| at which this family reaches frequency magnitude ``omega_abs``."""
        return omega_abs / (self.speed_factor * self.medium.wave_speed(x))

    def vectors(self, khat: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        """Right eigenvectors for unit wavevectors khat of shape (..., 3).

        Returns shape (..., 6, A) with the weighted normalization
        b* K0(x) b = identity.
        """
        khat = np.asarray(khat, dtype=float)
        eps, mu, kappa = self.medium.scalar_parameters(x)
        e1, e2 = transverse_frames(khat)
        se = 1.0 / np.sqrt(2.0 * eps)
        sm = 1.0 / np.sqrt(2.0 * mu)
        # The frame satisfies khat x e1 = e2 and khat x e2 = -e1, so the
        # magnetic blocks need no further cross products.
        if self.handedness is None:
            out = np.empty((*khat.shape[:-1], 6, 2), dtype=complex)
            out[..., :3, 0] = se * e1
            out[..., 3:, 0] = (self.sign * sm) * e2
            out[..., :3, 1] = se * e2
            out[..., 3:, 1] = (-self.sign * sm) * e1
            return out
        eta = self.handedness
        s = self.field_sign
        # circular polarization with khat x e = eta i e, from the real frame
        e = (1j * e1 + eta * e2) / np.sqrt(2.0)
        norm = np.sqrt(1.0 - kappa * s * eta)
        out = np.empty((*khat.shape[:-1], 6, 1), dtype=complex)
        out[..., :3, 0] = (se / norm) * e
        out[..., 3:, 0] = (s * sm * eta / norm) * (1j * e)
        return out

    def left_vectors(self, khat: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        """Matching left vectors c = K0(x) b, batched like :meth:`vectors`."""
        b = self.vectors(khat, x)
        k0 = self.medium.response(x)
        return np.einsum("ij,...jA->...iA", k0, b)


def propagating_families(medium: OpticalResponse) -> list[ModeFamily]:
    """Closed-form propagating branch families of a scalar-block medium.

    Isotropic media have the doubly degenerate pair labeled "+" and "-";
    optically active media have four simple branches labeled "1".."4"
    (fast pair first: omega = +/- c0 |k|/(1 + kappa), then the slow pair).
    Raises ValueError for media without closed-form families.
    """
    kind = medium.kind
    if kind == "isotropic":
        return [
            ModeFamily(medium, "-", -1.0, 1.0, 2),
            ModeFamily(medium, "+", +1.0, 1.0, 2),
        ]
    if kind == "chiral":
        _, _, kappa = medium.scalar_parameters(None)
        fast = 1.0 / (1.0 + kappa)
        slow = 1.0 / (1.0 - kappa)
        return [
            ModeFamily(medium, "1", +1.0, fast, 1, handedness=-1.0, field_sign=+1.0),
            ModeFamily(medium, "2", -1.0, fast, 1, handedness=+1.0, field_sign=-1.0),
            ModeFamily(medium, "3", +1.0, slow, 1, handedness=+1.0, field_sign=+1.0),
            ModeFamily(medium, "4", -1.0, slow, 1, handedness=-1.0, field_sign=-1.0),
        ]
    raise ValueError(f"no closed-form mode families for a {kind} medium")


def null_mode_basis(response: OpticalResponse | np.ndarray, k: np.ndarray) -> np.ndarray:
    """Canonical orthonormal basis (6, 2) of the omega = 0 branch.

    The null space of M(k) is spanned by the longitudinal pair
    a1 = (khat, 0), a2 = (0, khat); Gram-factoring their 2x2 weight
    G = [[ehat, xhat], [conj(xhat), mhat]] (projections of the blocks onto
    khat) through its upper-triangular square root Q gives the K0-orthonormal
    basis b0 = [a1 a2] Q^{-1}:

        b0[:, 0] = (khat/sqrt(ehat), 0),
        b0[:, 1] = (-(xhat/sqrt(ehat)) khat, ehat^{1/2} khat) / sqrt(det G).

    Raises DegenerateQ when det G <= 0 (non-positive weight).
    """
    if isinstance(response, OpticalResponse):
        k0 = response.response()
    else:
        k0 = np.asarray(response, dtype=complex)
    khat, _ = _unit_wavevector(k)
    eh = (khat @ k0[:3, :3] @ khat).real
    mh = (khat @ k0[3:, 3:] @ khat).real
    xh = khat @ k0[:3, 3:] @ khat
    det = eh * mh - abs(xh) ** 2
    if eh <= 0.0 or det <= 0.0:
        raise DegenerateQ("longitudinal weight is not positive definite")
    b0 = np.zeros((6, 2), dtype=complex)
    b0[:3, 0] = khat / np.sqrt(eh)
    b0[:3, 1] = -(xh / np.sqrt(eh)) * khat / np.sqrt(det)
    b0[3:, 1] = np.sqrt(eh) * khat / np.sqrt(det)
    return b0
