"""Bicharacteristic ray integration and coherence-matrix transport.

Rays follow the Hamiltonian flow of a branch frequency omega_alpha(x, k),

    dx/dt = grad_k omega,    dk/dt = -grad_x omega,

integrated with fixed-step classical RK4 (exact for homogeneous media).
Along a ray, the mode's A x A coherence matrix w evolves through a
rotation/attenuation matrix R solving dR/dt = -Omega R with
Omega = ell + skew(n):

* ``ell`` is the dissipative coupling from the frequency-side susceptibility,
  evaluated on the support frequency omega = -omega_alpha(x, k);
* ``n`` is the geometric skew term assembled from derivatives of the
  eigenvector field; it is anti-Hermitian for exact derivatives, so the
  lossless flow is unitary.  Finite-difference evaluation uses a
  parallel-transport gauge (polar alignment of the perturbed basis against
  the reference one) to remove arbitrary within-branch rotations.

The transported intensity is w(T) = R w_I R*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from emtransport.dispersion import (
    ModeFamily,
    OpticalResponse,
    eigen_decompose,
    maxwell_symbol,
    null_mode_basis,
)

__all__ = [
    "BranchTrackingLost",
    "LeftDomain",
    "GaugeUnavailable",
    "Box",
    "RayState",
    "NumericBranch",
    "NullModeField",
    "hamiltonian_gradients",
    "advance_ray",
    "trace_ray",
    "coupling_matrix_l",
    "symmetric_part",
    "skew_matrix_n",
    "propagate_coherence",
    "project_psd",
    "save_ray_path",
]


class BranchTrackingLost(RuntimeError):
    """Eigenvalue continuity could not identify the branch unambiguously."""


class LeftDomain(RuntimeError):
    """A ray exited the configured spatial box.

    Carries the last in-domain state as ``state`` and the offending position
    as ``exit_point``.
    """

    def __init__(self, message: str, state: "RayState", exit_point: np.ndarray):
        super().__init__(message)
        self.state = state
        self.exit_point = exit_point


class GaugeUnavailable(RuntimeError):
    """Skew-term evaluation needs an eigenvector field with a smooth gauge."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned spatial domain [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if np.any(self.upper <= self.lower):
            raise ValueError("box upper bound must exceed lower bound")

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    @property
    def size(self) -> float:
        return float(np.max(self.upper - self.lower))


@dataclass
class RayState:
    """Phase-space point with transported polarization data.

    ``R`` accumulates rotation/attenuation from the start of the integration
    (R(0) = I) and ``w`` is the Hermitian positive semi-definite coherence
    matrix of the mode, ``weight`` a nonnegative statistical weight.
    """

    x: np.ndarray
    k: np.ndarray
    t: float = 0.0
    mode: str = ""
    R: np.ndarray = field(default=None)  # type: ignore[assignment]
    w: np.ndarray = field(default=None)  # type: ignore[assignment]
    weight: float = 1.0

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.k = np.asarray(self.k, dtype=float)

    @classmethod
    def fresh(
        cls,
        family: ModeFamily,
        x: np.ndarray,
        k: np.ndarray,
        w: np.ndarray | None = None,
        weight: float = 1.0,
    ) -> "RayState":
        a = family.multiplicity
        if w is None:
            w = np.eye(a, dtype=complex)
        w = np.asarray(w, dtype=complex)
        return cls(
            x=x, k=k, t=0.0, mode=family.label, R=np.eye(a, dtype=complex), w=w, weight=weight
        )


@dataclass(frozen=True)
class NumericBranch:
    """Branch of a generic medium identified by frequency continuity.

    ``omega_hint`` selects the branch nearest that frequency at each
    evaluation point; tracking fails loudly when two distinct branches are
    equally close within the ambiguity tolerance.
    """

    medium: OpticalResponse
    omega_hint: float
    ambiguity_rtol: float = 1e-6

    def omega(self, k: np.ndarray, x: np.ndarray | None = None) -> float:
        dec = eigen_decompose(self.medium, k, x=x)
        return _tracked_omega(dec.omegas, self.omega_hint, self.ambiguity_rtol)


def _tracked_omega(omegas: np.ndarray, target: float, rtol: float) -> float:
    dist = np.abs(omegas - target)
    order = np.argsort(dist)
    scale = 1.0 + np.abs(omegas).max()
    if len(order) > 1:
        gap = dist[order[1]] - dist[order[0]]
        distinct = abs(omegas[order[1]] - omegas[order[0]]) > rtol * scale
        if distinct and gap <= rtol * scale:
            raise BranchTrackingLost(
                f"two branches at distance {dist[order[0]]:.3e} and {dist[order[1]]:.3e} "
                f"from target {target:.6g}"
            )
    return float(omegas[order[0]])


@dataclass(frozen=True)
class NullModeField:
    """Eigenvector field of the non-propagating (omega = 0) branch."""

    medium: OpticalResponse
    label: str = "0"
    multiplicity: int = 2

    def omega(self, k: np.ndarray, x: np.ndarray | None = None) -> float:  # noqa: ARG002
        return 0.0

    def grad_k_omega(self, k: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:  # noqa: ARG002
        return np.zeros(3)

    def grad_x_omega(self, k: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:  # noqa: ARG002
        return np.zeros(3)

    def vectors(self, khat: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        return null_mode_basis(self.medium.response(x), np.asarray(khat, dtype=float))

    def left_vectors(self, khat: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        return self.medium.response(x) @ self.vectors(khat, x)


# ---------------------------------------------------------------------------
# Hamiltonian flow
# ---------------------------------------------------------------------------


def hamiltonian_gradients(
    branch: ModeFamily | NumericBranch,
    x: np.ndarray,
    k: np.ndarray,
    *,
    hx: float = 1e-5,
    hk: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(grad_x omega, grad_k omega) for one branch at (x, k).

    Closed-form families differentiate analytically; a :class:`NumericBranch`
    uses central differences with the branch tracked by eigenvalue
    continuity (raising :class:`BranchTrackingLost` on ambiguity).
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    if isinstance(branch, (ModeFamily, NullModeField)):
        return branch.grad_x_omega(k, x), branch.grad_k_omega(k, x)
    if hk is None:
        hk = 1e-5 * float(np.linalg.norm(k))
    grad_x = np.zeros(3)
    grad_k = np.zeros(3)
    for i in range(3):
        dx = np.zeros(3)
        dx[i] = hx
        grad_x[i] = (branch.omega(k, x + dx) - branch.omega(k, x - dx)) / (2 * hx)
        dk = np.zeros(3)
        dk[i] = hk
        grad_k[i] = (branch.omega(k + dk, x) - branch.omega(k - dk, x)) / (2 * hk)
    return grad_x, grad_k


def _flow_rhs(branch, x: np.ndarray, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx, gk = hamiltonian_gradients(branch, x, k)
    return gk, -gx


def advance_ray(
    branch: ModeFamily | NumericBranch,
    state: RayState,
    dt: float,
    *,
    box: Box | None = None,
) -> RayState:
    """One classical RK4 step of the bicharacteristic system.

    Raises :class:`LeftDomain` if the step exits ``box``; the exception
    carries the last in-domain state.
    """
    x, k = state.x, state.k
    v1, f1 = _flow_rhs(branch, x, k)
    v2, f2 = _flow_rhs(branch, x + 0.5 * dt * v1, k + 0.5 * dt * f1)
    v3, f3 = _flow_rhs(branch, x + 0.5 * dt * v2, k + 0.5 * dt * f2)
    v4, f4 = _flow_rhs(branch, x + dt * v3, k + dt * f3)
    x_new = x + dt / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
    k_new = k + dt / 6.0 * (f1 + 2 * f2 + 2 * f3 + f4)
    if box is not None and not box.contains(x_new):
        raise LeftDomain("ray exited the domain box", state=state, exit_point=x_new)
    return replace(state, x=x_new, k=k_new, t=state.t + dt)


def trace_ray(
    branch: ModeFamily | NumericBranch,
    state: RayState,
    nsteps: int,
    dt: float,
    *,
    box: Box | None = None,
) -> list[RayState]:
    """Integrate ``nsteps`` RK4 steps, returning all states (initial first)."""
    states = [state]
    for _ in range(nsteps):
        state = advance_ray(branch, state, dt, box=box)
        states.append(state)
    return states


# ---------------------------------------------------------------------------
# coherence transport couplings
# ---------------------------------------------------------------------------


def coupling_matrix_l(
    family: ModeFamily | NullModeField,
    x: np.ndarray | None,
    k: np.ndarray,
    *,
    omega: float | None = None,
) -> np.ndarray:
    """Dissipative coupling ell = i omega b* Khat_d(x, omega) b (A x A).

    ``omega`` defaults to -omega_alpha(x, k), the frequency carried by the
    mode's spectral support; the eigenvectors enter through the branch at
    direction k/|k|.  A lossless medium gives the zero matrix.
    """
    k = np.asarray(k, dtype=float)
    khat = k / np.linalg.norm(k)
    if omega is None:
        omega = -family.omega(k, x)
    kd = family.medium.damping_matrix(omega, x)
    a = family.multiplicity
    if not np.any(kd):
        return np.zeros((a, a), dtype=complex)
    b = family.vectors(khat, x)
    return 1j * omega * (b.conj().T @ kd @ b)


def symmetric_part(m: np.ndarray) -> np.ndarray:
    """Hermitian part (m + m*)/2 — the decay-rate content of a coupling."""
    return 0.5 * (m + m.conj().T)


def skew_matrix_n(
    field_: ModeFamily | NullModeField,
    x: np.ndarray | None,
    k: np.ndarray,
    *,
    hx: float = 1e-5,
    hk: float | None = None,
) -> np.ndarray:
    """Geometric coupling n of one branch at (x, k), by central differences.

        n = c* (grad_k L0 . grad_x b - grad_x omega . grad_k b)
            - (1/2) (div_x grad_k omega) I_A

    evaluated in the parallel-transport gauge: each perturbed basis is
    aligned to the reference one by the unitary polar factor of c_ref* b_pert
    before differencing, removing arbitrary within-branch rotations.  The
    result is anti-Hermitian up to finite-difference error (the residual
    ``n + n*`` is the standard accuracy diagnostic); no symmetrization is
    applied here.  Only closed-form eigenvector fields are differentiable —
    a :class:`NumericBranch` raises :class:`GaugeUnavailable`.
    """
    if not isinstance(field_, (ModeFamily, NullModeField)):
        raise GaugeUnavailable(
            "skew term needs a smooth eigenvector field; generic numeric "
            "branches carry no gauge"
        )
    k = np.asarray(k, dtype=float)
    knorm = float(np.linalg.norm(k))
    khat = k / knorm
    if hk is None:
        hk = 1e-5 * knorm
    x0 = np.zeros(3) if x is None else np.asarray(x, dtype=float)
    k0mat = field_.medium.response(x0)
    b_ref = field_.vectors(khat, x0)
    c_ref = k0mat @ b_ref

    def aligned(khat_p: np.ndarray, x_p: np.ndarray) -> np.ndarray:
        b = field_.vectors(khat_p, x_p)
        overlap = c_ref.conj().T @ b
        u, _ = scipy.linalg.polar(overlap)
        return b @ u.conj().T

    ident = np.eye(3)
    first = np.zeros_like(b_ref)
    grad_x = field_.grad_x_omega(k, x0)
    second = np.zeros_like(b_ref)
    div = 0.0
    for i in range(3):
        dx = hx * ident[i]
        dbdx = (aligned(khat, x0 + dx) - aligned(khat, x0 - dx)) / (2 * hx)
        first += maxwell_symbol(ident[i]) @ dbdx
        kp = k + hk * ident[i]
        km = k - hk * ident[i]
        dbdk = (
            aligned(kp / np.linalg.norm(kp), x0) - aligned(km / np.linalg.norm(km), x0)
        ) / (2 * hk)
        second += grad_x[i] * dbdk
        gp = field_.grad_k_omega(k, x0 + dx)
        gm = field_.grad_k_omega(k, x0 - dx)
        div += (gp[i] - gm[i]) / (2 * hx)
    first = np.linalg.solve(k0mat, first)
    n = c_ref.conj().T @ (first - second)
    n -= 0.5 * div * np.eye(field_.multiplicity)
    return n


def project_psd(w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Re-Hermitize w; clip negative eigenvalues when they exceed tol * tr w."""
    w = 0.5 * (w + w.conj().T)
    vals, vecs = np.linalg.eigh(w)
    floor = -tol * max(float(np.trace(w).real), 1e-300)
    if vals.min() < floor:
        vals = np.clip(vals, 0.0, None)
        w = (vecs * vals) @ vecs.conj().T
    return w


def propagate_coherence(
    family: ModeFamily | NullModeField,
    state: RayState,
    duration: float,
    dt: float,
    *,
    box: Box | None = None,
    include_skew: bool | None = None,
    hx: float = 1e-5,
    hk: float | None = None,
) -> RayState:
    """Joint RK4 integration of the ray and dR/dt = -Omega R over ``duration``.

    Omega = ell + (n - n*)/2: the skew term enters through its anti-Hermitian
    projection so the lossless flow is exactly unitary up to integrator
    error.  ``include_skew`` defaults to evaluating n only when the medium is
    inhomogeneous (homogeneous media have n = 0 identically).  Returns the
    state at t + duration with w = R w_I R*, re-projected to Hermitian PSD.
    """
    homogeneous = family.medium.profile.is_constant
    if include_skew is None:
        include_skew = not homogeneous
    nsteps = max(1, math.ceil(duration / dt - 1e-12))
    step = duration / nsteps
    x, k, r = state.x, state.k, np.asarray(state.R, dtype=complex)

    def eval_omega_mat(xc: np.ndarray, kc: np.ndarray) -> np.ndarray:
        out = coupling_matrix_l(family, xc, kc)
        if include_skew:
            n = skew_matrix_n(family, xc, kc, hx=hx, hk=hk)
            out = out + 0.5 * (n - n.conj().T)
        return out

    if homogeneous and not include_skew:
        # k is a first integral and the couplings carry no x dependence,
        # so Omega is constant along the ray
        frozen = eval_omega_mat(x, k)
        omega_mat = lambda xc, kc: frozen  # noqa: E731
    else:
        omega_mat = eval_omega_mat

    def rhs(xc: np.ndarray, kc: np.ndarray, rc: np.ndarray):
        gx, gk = hamiltonian_gradients(family, xc, kc)
        return gk, -gx, -omega_mat(xc, kc) @ rc

    for _ in range(nsteps):
        v1, f1, g1 = rhs(x, k, r)
        v2, f2, g2 = rhs(x + 0.5 * step * v1, k + 0.5 * step * f1, r + 0.5 * step * g1)
        v3, f3, g3 = rhs(x + 0.5 * step * v2, k + 0.5 * step * f2, r + 0.5 * step * g2)
        v4, f4, g4 = rhs(x + step * v3, k + step * f3, r + step * g3)
        x = x + step / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
        k = k + step / 6.0 * (f1 + 2 * f2 + 2 * f3 + f4)
        r = r + step / 6.0 * (g1 + 2 * g2 + 2 * g3 + g4)
        if box is not None and not box.contains(x):
            raise LeftDomain(
                "ray exited the domain box",
                state=replace(state, x=x, k=k, t=state.t),
                exit_point=x,
            )
    w = project_psd(r @ np.asarray(state.w, dtype=complex) @ r.conj().T)
    return replace(state, x=x, k=k, t=state.t + duration, R=r, w=w)


# ---------------------------------------------------------------------------
# dumps
# ---------------------------------------------------------------------------


def save_ray_path(
    path: str | Path, states: list[RayState], family: ModeFamily | NullModeField
) -> None:
    """CSV dump of a traced ray: t, x, k, omega, tr w, weight per row."""
    lines = ["t,x1,x2,x3,k1,k2,k3,omega,tr_w,weight"]
    for s in states:
        omega = family.omega(s.k, s.x)
        tr_w = float(np.trace(s.w).real) if s.w is not None else 0.0
        row = [s.t, *s.x, *s.k, omega, tr_w, s.weight]
        lines.append(",".join(f"{v:.12g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
