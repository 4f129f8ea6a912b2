"""Monte Carlo solution of the polarized radiative transfer equation.

Particles carry a mode label, a phase-space point (x, k), a trace-normalized
Hermitian coherence matrix w, and a scalar weight.  They evolve by a jump
process: exponential free flights along the mode's rays — with deterministic
attenuation when the background is dissipative — interrupted by scattering
events that move the particle onto the equal-frequency shell of a receiving
branch.  Each event draws the outgoing branch and direction from the
received-trace density tr(sigma_{beta alpha}(p, k) : w) d mu(p), contracts the
kernel into the new coherence matrix, and multiplies the weight by the ratio
of the shell-integrated gain to the loss normalization tr(Sigma w + w Sigma*).
For reciprocal kernels that ratio is identically 1, so undamped elastic runs
conserve total weight exactly (up to the shared quadrature rule).

Estimates are accumulated in a phase-space histogram over spatial cells,
direction cells (cos theta x phi), and |k| shells, with batch-mean error bars,
and can be reduced to energy density and flux or exported as CSV / raw arrays
with a JSON sidecar.  The reactive (principal-value) part of the self-energy
has no representation in this particle scheme and is not applied here; see
``emtransport.scattering.total_xsection`` for its evaluation.

Determinism: every particle owns an RNG stream seeded by (master seed,
particle index), and deposits are reduced in particle-index order, so results
are bit-identical for any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import multiprocessing
import numpy as np

from emtransport.dispersion import ModeFamily, OpticalResponse, propagating_families
from emtransport.media import SpectralModel
from emtransport.raytrace import Box, RayState, coupling_matrix_l, propagate_coherence
from emtransport.scattering import (
    family_by_label,
    gain_matrix,
    received_kernel_batch,
    same_sign_families,
    total_xsection,
)

__all__ = [
    "ConfigInvalid",
    "DegenerateKernel",
    "EmptyHistogram",
    "SourceSpec",
    "BinningSpec",
    "Numerics",
    "Scenario",
    "ChannelTable",
    "PhaseSpaceHistogram",
    "particle_rng",
    "scattering_rate",
    "sample_free_flight",
    "build_channel_tables",
    "scatter_event",
    "run_simulation",
    "analytic_lorentz_solution",
    "estimate_fields",
    "scenario_fingerprint",
    "scenario_hash",
    "save_histogram",
]


class ConfigInvalid(ValueError):
    """A simulation scenario failed validation; ``problems`` lists each field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(problems))


class DegenerateKernel(RuntimeError):
    """The outgoing shell density vanishes for this coherence state.

    Raised by :func:`scatter_event`; :func:`run_simulation` treats it as
    absorption and counts the particle in ``degenerate_events``.
    """


class EmptyHistogram(ValueError):
    """Field estimation was requested on a histogram with no deposits."""


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """Initial particle distribution.

    ``direction`` fixes the launch direction (any nonzero vector); ``None``
    draws isotropically.  ``cloud`` draws positions uniformly from a box;
    ``None`` launches everything from ``position``.  ``coherence`` is the
    initial A x A matrix w_I (Hermitian PSD, unit trace); ``None`` means the
    unpolarized state I/A.
    """

    mode: str
    knorm: float
    count: int
    direction: tuple[float, float, float] | None = None
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cloud: Box | None = None
    coherence: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class BinningSpec:
    """Phase-space estimator cells.

    Spatial cells split ``box`` into ``nx`` cells per axis.  Direction cells
    split cos(theta) in [-1, 1] into ``ncos`` cells and phi in [-pi, pi] into
    ``nphi`` cells (theta measured from +z).  ``knorm_edges`` are |k| shell
    edges; ``None`` keeps a single shell covering [0, inf).
    """

    box: Box
    nx: tuple[int, int, int] = (1, 1, 1)
    ncos: int = 1
    nphi: int = 1
    knorm_edges: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Numerics:
    """Integration, sampling, and concurrency controls.

    ``integrator`` selects the scattering-free flight scheme: "analytic"
    (straight rays, exact attenuation; uniform background only), "rk4"
    (vectorized Hamiltonian steps of size ``dt``), or "auto" (analytic when
    the background is uniform, rk4 otherwise).  ``ncos``/``nphi`` are the
    shell-quadrature orders for the precomputed cross-section tables;
    ``bound_safety`` scales the rejection-sampling envelope and
    ``proposal_block`` sets how many directions are proposed per batch.
    """

    dt: float = 1e-3
    seed: int = 0
    workers: int = 1
    nbatches: int = 16
    integrator: str = "auto"
    ncos: int = 64
    nphi: int = 128
    bound_safety: float = 1.1
    proposal_block: int = 16


@dataclass(frozen=True, eq=False)
class Scenario:
    """Complete description of one transport run."""

    medium: OpticalResponse
    source: SourceSpec
    horizon: float
    binning: BinningSpec
    spectrum: SpectralModel | None = None
    numerics: Numerics = field(default_factory=Numerics)


def _source_coherence(source: SourceSpec, multiplicity: int) -> np.ndarray:
    if source.coherence is None:
        return np.eye(multiplicity, dtype=complex) / multiplicity
    w = np.asarray(source.coherence, dtype=complex)
    return 0.5 * (w + w.conj().T)


def validate_scenario(scenario: Scenario) -> None:
    """Raise :class:`ConfigInvalid` listing every offending field."""
    problems: list[str] = []
    medium, src, num, binning = (
        scenario.medium,
        scenario.source,
        scenario.numerics,
        scenario.binning,
    )

    families: list[ModeFamily] = []
    try:
        families = propagating_families(medium)
    except ValueError as err:
        problems.append(f"medium: {err}")

    fam = None
    if families:
        if src.mode == "0":
            problems.append("source.mode: the non-propagating null branch cannot be sourced")
        else:
            match = [f for f in families if f.label == src.mode]
            if not match:
                labels = sorted(f.label for f in families)
                problems.append(f"source.mode: {src.mode!r} is not one of {labels}")
            else:
                fam = match[0]

    if not (isinstance(src.count, (int, np.integer)) and src.count >= 1):
        problems.append(f"source.count: need an integer >= 1, got {src.count!r}")
    if not (np.isfinite(src.knorm) and src.knorm > 0):
        problems.append(f"source.knorm: need a finite positive wavenumber, got {src.knorm!r}")
    if src.direction is not None:
        d = np.asarray(src.direction, dtype=float)
        if d.shape != (3,) or not np.all(np.isfinite(d)) or np.linalg.norm(d) == 0:
            problems.append("source.direction: need a nonzero 3-vector or None")
    if src.coherence is not None and fam is not None:
        w = np.asarray(src.coherence, dtype=complex)
        a = fam.multiplicity
        if w.shape != (a, a):
            problems.append(f"source.coherence: expected shape {(a, a)}, got {w.shape}")
        else:
            tr = np.trace(w).real
            scale = max(abs(tr), 1.0)
            if np.abs(w - w.conj().T).max() > 1e-10 * scale:
                problems.append("source.coherence: matrix is not Hermitian")
            elif np.linalg.eigvalsh(0.5 * (w + w.conj().T)).min() < -1e-10 * scale:
                problems.append("source.coherence: matrix is not positive semi-definite")
            if abs(tr - 1.0) > 1e-9:
                problems.append(f"source.coherence: trace must be 1, got {tr:.6g}")

    if not (np.isfinite(scenario.horizon) and scenario.horizon > 0):
        problems.append(f"horizon: need a finite positive time, got {scenario.horizon!r}")

    if not (np.isfinite(num.dt) and num.dt > 0):
        problems.append(f"numerics.dt: need a positive step, got {num.dt!r}")
    if num.workers < 1:
        problems.append(f"numerics.workers: need >= 1, got {num.workers}")
    if num.nbatches < 16:
        problems.append(f"numerics.nbatches: need >= 16 for batch error bars, got {num.nbatches}")
    if num.integrator not in ("auto", "rk4", "analytic"):
        problems.append(f"numerics.integrator: unknown scheme {num.integrator!r}")
    if num.ncos < 2 or num.nphi < 1:
        problems.append(f"numerics quadrature orders: need ncos >= 2, nphi >= 1, got ({num.ncos}, {num.nphi})")
    if num.bound_safety < 1.0:
        problems.append(f"numerics.bound_safety: need >= 1, got {num.bound_safety}")
    if num.proposal_block < 1:
        problems.append(f"numerics.proposal_block: need >= 1, got {num.proposal_block}")

    if any(n < 1 for n in binning.nx) or len(binning.nx) != 3:
        problems.append(f"binning.nx: need three positive cell counts, got {binning.nx}")
    if binning.ncos < 1 or binning.nphi < 1:
        problems.append(f"binning direction cells: need >= 1, got ({binning.ncos}, {binning.nphi})")
    if binning.knorm_edges is not None:
        edges = np.asarray(binning.knorm_edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
            problems.append("binning.knorm_edges: need >= 2 strictly increasing nonnegative edges")

    homogeneous = medium.profile.is_constant
    if scenario.spectrum is not None and not homogeneous:
        problems.append("spectrum: scattering runs require a uniform background profile")
    if scenario.spectrum is None and num.integrator == "analytic" and not homogeneous:
        problems.append("numerics.integrator: analytic flights require a uniform background")

    if problems:
        raise ConfigInvalid(problems)


# ---------------------------------------------------------------------------
# rates, flights, and precomputed shell tables
# ---------------------------------------------------------------------------


def scattering_rate(
    medium: OpticalResponse,
    model: SpectralModel,
    label: str,
    k: np.ndarray | float,
    *,
    ncos: int = 64,
    nphi: int = 128,
) -> float:
    """Trace-level total loss rate (2/A) tr of the Hermitian part of Sigma."""
    total = total_xsection(medium, model, label, k, ncos=ncos, nphi=nphi)
    herm = 0.5 * (total.matrix + total.matrix.conj().T)
    return float(2.0 * np.trace(herm).real / herm.shape[0])


def sample_free_flight(rate: float, rng: np.random.Generator) -> float:
    """Exponential flight time at intensity ``rate`` (+inf when the rate is 0)."""
    if rate < 0:
        raise ValueError(f"scattering rate must be nonnegative, got {rate}")
    if rate == 0.0:
        return math.inf
    return float(rng.exponential(1.0 / rate))


def particle_rng(seed: int, index: int) -> np.random.Generator:
    """The RNG stream owned by one particle; a pure function of (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(index))))


@dataclass(frozen=True, eq=False)
class ChannelTable:
    """Per-emitting-branch constants on a fixed frequency shell.

    ``rate`` is the flight intensity, ``sigma_real``/``gain`` the loss and
    gain matrices entering the event weight factor, ``decay`` the scalar
    trace attenuation rate of the background (0 when lossless), ``velocity``
    the signed group speed along k-hat, and ``bound`` the rejection-sampling
    envelope for the received-trace density summed over receiving branches.
    """

    label: str
    family: ModeFamily
    knorm: float
    rate: float
    sigma_real: np.ndarray
    gain: np.ndarray
    decay: float
    velocity: float
    recv_labels: tuple[str, ...]
    recv_families: tuple[ModeFamily, ...]
    recv_radii: np.ndarray
    recv_jacs: np.ndarray
    recv_prefactors: np.ndarray
    k0: np.ndarray
    bound: float


def _scalar_decay(medium: OpticalResponse, family: ModeFamily, k: np.ndarray) -> float:
    """Trace attenuation rate 2 Re l of the family, requiring l to be scalar."""
    if medium.damping is None:
        return 0.0
    ell = coupling_matrix_l(family, None, k)
    herm = ell + ell.conj().T
    scale = float(np.abs(herm).max())
    if scale > 0:
        off = herm - herm[0, 0] * np.eye(herm.shape[0])
        if np.abs(off).max() > 1e-10 * scale:
            raise ConfigInvalid(
                [f"medium.damping: attenuation is not a scalar rate on family {family.label!r}"]
            )
    return float(herm[0, 0].real)


def build_channel_tables(
    medium: OpticalResponse,
    model: SpectralModel,
    omega_abs: float,
    sign: float,
    *,
    ncos: int = 64,
    nphi: int = 128,
    bound_safety: float = 1.1,
) -> dict[str, ChannelTable]:
    """Precompute rates, shells, and rejection envelopes for one frequency.

    Covers every propagating family with the given frequency sign (the only
    branches coupled on the shell |omega| = ``omega_abs``).
    """
    fams = [f for f in propagating_families(medium) if f.sign == sign]
    if not fams:
        raise ValueError(f"no propagating families with frequency sign {sign}")
    mults = {f.multiplicity for f in fams}
    if len(mults) != 1:
        raise ValueError("families coupled on one shell must share multiplicity")
    for f in fams:
        assert f.label != "0", "the null branch must never appear as a scattering channel"

    tables: dict[str, ChannelTable] = {}
    for fam in fams:
        knorm = fam.shell_radius(omega_abs)
        k = np.array([0.0, 0.0, knorm])
        total = total_xsection(medium, model, fam.label, k, ncos=ncos, nphi=nphi)
        sreal = 0.5 * (total.matrix + total.matrix.conj().T)
        rate = float(2.0 * np.trace(sreal).real / sreal.shape[0])
        gain = gain_matrix(medium, model, fam.label, k, ncos=ncos, nphi=nphi)

        recv = same_sign_families(medium, fam)
        radii = np.array([r.shell_radius(omega_abs) for r in recv])
        speeds = np.array([abs(r.group_speed(None)) for r in recv])
        jacs = radii**2 / speeds
        omega_s = fam.sign * fam.speed_factor * medium.wave_speed(None) * knorm
        omegas_r = np.array(
            [r.sign * r.speed_factor * medium.wave_speed(None) * radius
             for r, radius in zip(recv, radii)]
        )
        prefactors = 2.0 * np.pi * omega_s * omegas_r * jacs

        # Rejection envelope: the received-trace density f(p_hat) = tr(K w)
        # with K Hermitian PSD-ordered, so f <= lambda_max(K) for tr w = 1.
        tgrid = np.linspace(-1.0, 1.0, 513)
        dirs = np.stack([np.sqrt(np.clip(1.0 - tgrid**2, 0.0, None)),
                         np.zeros_like(tgrid), tgrid], axis=-1)
        ktot = None
        for r, radius, jac in zip(recv, radii, jacs):
            tensor = received_kernel_batch(r, dirs, float(radius), fam, k, model)
            contrib = jac * np.einsum("MbbaA->MaA", tensor)
            ktot = contrib if ktot is None else ktot + contrib
        herm = 0.5 * (ktot + np.conj(np.swapaxes(ktot, -1, -2)))
        lam = float(np.linalg.eigvalsh(herm)[..., -1].max())

        tables[fam.label] = ChannelTable(
            label=fam.label,
            family=fam,
            knorm=float(knorm),
            rate=rate,
            sigma_real=sreal,
            gain=gain,
            decay=_scalar_decay(medium, fam, k),
            velocity=float(fam.sign * fam.speed_factor * medium.wave_speed(None)),
            recv_labels=tuple(r.label for r in recv),
            recv_families=tuple(recv),
            recv_radii=radii,
            recv_jacs=jacs,
            recv_prefactors=prefactors,
            k0=medium.response(None),
            bound=float(bound_safety * lam),
        )
    return tables


# ---------------------------------------------------------------------------
# scattering events
# ---------------------------------------------------------------------------


def _sample_event(
    tables: dict[str, ChannelTable],
    label: str,
    k: np.ndarray,
    w: np.ndarray,
    model: SpectralModel,
    rng: np.random.Generator,
    proposal_block: int,
    max_blocks: int = 100_000,
) -> tuple[str, np.ndarray, np.ndarray, float]:
    """Draw (branch, direction), contract the kernel, return the weight factor.

    ``w`` must be Hermitian with unit trace.  Rejection sampling against the
    precomputed envelope; the accepted envelope ordinate is reused as the
    branch-selection variable (it is uniform on [0, f_total) given acceptance).
    """
    table = tables[label]
    loss = float(2.0 * np.trace(table.sigma_real @ w).real)
    gainv = float(np.sum(table.gain * w).real)
    scale = max(table.rate, np.abs(table.gain).max(), 1e-300)
    if gainv <= 1e-13 * scale or loss <= 1e-13 * scale:
        raise DegenerateKernel(
            f"mode {label!r}: outgoing shell mass {gainv:.3e} vanishes for this coherence state"
        )
    weight_factor = gainv / loss

    # Source-side eigenvectors are fixed for the whole event; fold w and the
    # channel maps into them so each proposal block reduces to broadcast
    # matmuls (the same algebra as received_kernel_batch followed by the w
    # contraction — cross-checked in the test suite).
    khat = k / np.linalg.norm(k)
    b_s = table.family.vectors(khat)
    c_s_conj = (table.k0 @ b_s).conj()
    bsw = b_s @ w
    maps = model.maps
    pw = (maps @ bsw)[:, None]  # (c, 1, 6, A): P_c (b_s w)
    sm = maps.transpose(0, 2, 1) @ c_s_conj  # (c, 6, A'): P_c^T conj(c_s)
    smt = sm.transpose(0, 2, 1)[:, None]  # (c, 1, A', 6)

    m = proposal_block
    for _ in range(max_blocks):
        draw = rng.uniform(0.0, 1.0, (3, m))
        cosv = 2.0 * draw[0] - 1.0
        phi = (2.0 * np.pi) * draw[1]
        u = draw[2]
        sinv = np.sqrt(np.clip(1.0 - cosv**2, 0.0, None))
        dirs = np.empty((m, 3))
        dirs[:, 0] = sinv * np.cos(phi)
        dirs[:, 1] = sinv * np.sin(phi)
        dirs[:, 2] = cosv

        fs = np.empty((len(table.recv_families), m))
        ys = []
        for i, fam in enumerate(table.recv_families):
            b_r = fam.vectors(dirs)  # (M, 6, B)
            c_r_conj = (table.k0 @ b_r).conj()
            diff = table.recv_radii[i] * dirs - k
            qnorm = np.sqrt((diff * diff).sum(axis=-1))
            cmat = model.psd_matrix(qnorm)  # (M, c, d)
            # gw[c,M,b,A] = conj(c_r)[M,i,b] pw[c,i,A]
            gw = np.matmul(c_r_conj.transpose(0, 2, 1)[None], pw)
            # g2[d,M,A,B] = sm[d,j,A] b_r[M,j,B]
            g2 = np.matmul(smt, b_r[None])
            # y[M,b,B] = cmat[M,c,d] gw[c,M,b,A] g2[d,M,A,B]
            pair = np.matmul(gw[:, None], g2[None])  # (c, d, M, b, B)
            y = (cmat.transpose(1, 2, 0)[..., None, None] * pair).sum(axis=(0, 1))
            y *= table.recv_prefactors[i]
            ys.append(y)
            fs[i] = np.clip(y.diagonal(axis1=-2, axis2=-1).sum(axis=-1).real, 0.0, None)
        ftot = fs.sum(axis=0)
        if np.any(ftot > table.bound * (1.0 + 1e-9)):
            raise RuntimeError(
                f"rejection envelope exceeded on mode {label!r}: "
                f"density {ftot.max():.6g} > bound {table.bound:.6g}"
            )
        accepted = u * table.bound < ftot
        if not accepted.any():
            continue
        idx = int(np.argmax(accepted))
        v = u[idx] * table.bound
        cum = np.cumsum(fs[:, idx])
        channel = min(int(np.searchsorted(cum, v, side="right")), len(cum) - 1)

        y = ys[channel][idx]
        tr_y = float(np.trace(y).real)
        w_out = 0.5 * (y + y.conj().T) / tr_y
        k_out = float(table.recv_radii[channel]) * dirs[idx]
        return table.recv_labels[channel], k_out, w_out, weight_factor
    raise RuntimeError(f"rejection sampling did not accept within {max_blocks} blocks")


def scatter_event(
    particle: RayState,
    medium: OpticalResponse,
    model: SpectralModel,
    rng: np.random.Generator,
    *,
    tables: dict[str, ChannelTable] | None = None,
    ncos: int = 64,
    nphi: int = 128,
    bound_safety: float = 1.1,
    proposal_block: int = 16,
) -> RayState:
    """One scattering jump: new branch, new on-shell k, updated w and weight.

    The returned coherence matrix is renormalized to unit trace; the incoming
    trace and the gain/loss weight factor are folded into ``weight``.  Raises
    :class:`DegenerateKernel` when the outgoing shell density vanishes for
    the incoming polarization state (to be treated as absorption).
    """
    trw = float(np.trace(particle.w).real)
    if not (np.isfinite(trw) and trw > 0):
        raise ValueError(f"particle coherence matrix must have positive trace, got {trw}")
    w = 0.5 * (particle.w + particle.w.conj().T) / trw

    if tables is None:
        fam = family_by_label(medium, particle.mode)
        omega_abs = abs(fam.omega(particle.k))
        tables = build_channel_tables(
            medium, model, omega_abs, fam.sign,
            ncos=ncos, nphi=nphi, bound_safety=bound_safety,
        )
    table = tables[particle.mode]
    if table.rate <= 0:
        raise ValueError("scatter_event requires a positive scattering rate")
    knorm = float(np.linalg.norm(particle.k))
    if abs(knorm - table.knorm) > 1e-9 * table.knorm:
        raise ValueError(
            f"particle wavenumber {knorm:.12g} is off the table shell {table.knorm:.12g}"
        )

    label, k_out, w_out, factor = _sample_event(
        tables, particle.mode, particle.k, w, model, rng, proposal_block
    )
    b = w_out.shape[0]
    return RayState(
        x=np.array(particle.x, dtype=float),
        k=k_out,
        t=particle.t,
        mode=label,
        R=np.eye(b, dtype=complex),
        w=w_out,
        weight=particle.weight * trw * factor,
    )


# ---------------------------------------------------------------------------
# per-worker particle propagation
# ---------------------------------------------------------------------------


def _draw_initial(
    src: SourceSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Initial (position, unit direction); draw order: position, then direction."""
    if src.cloud is not None:
        u = rng.uniform(0.0, 1.0, 3)
        pos = src.cloud.lower + u * (src.cloud.upper - src.cloud.lower)
    else:
        pos = np.asarray(src.position, dtype=float)
    if src.direction is not None:
        d = np.asarray(src.direction, dtype=float)
        khat = d / np.linalg.norm(d)
    else:
        cosv = rng.uniform(-1.0, 1.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        sinv = math.sqrt(max(1.0 - cosv**2, 0.0))
        khat = np.array([sinv * math.cos(phi), sinv * math.sin(phi), cosv])
    return pos, khat


def _batched_profile(medium: OpticalResponse):
    """(value, gradient) callables over (n, 3) points, or None when unavailable."""
    profile = medium.profile
    if profile.is_constant:
        return (lambda x: np.ones(x.shape[0])), (lambda x: np.zeros((x.shape[0], 3)))
    slope = getattr(profile, "slope", None)
    if slope is not None:

        def value(x: np.ndarray) -> np.ndarray:
            return np.atleast_1d(profile.value(x))

        def gradient(x: np.ndarray) -> np.ndarray:
            return np.broadcast_to(np.asarray(slope, dtype=float), (x.shape[0], 3))

        return value, gradient
    return None


def _simulate_range(scenario: Scenario, tables: dict[str, ChannelTable] | None,
                    lo: int, hi: int) -> dict[str, np.ndarray]:
    """Propagate particles lo..hi-1 to the horizon; return per-particle records."""
    medium, src, num = scenario.medium, scenario.source, scenario.numerics
    horizon = float(scenario.horizon)
    fam = family_by_label(medium, src.mode)
    labels = tuple(tables) if tables is not None else (src.mode,)
    label_id = {label: i for i, label in enumerate(labels)}
    a = fam.multiplicity
    w0 = _source_coherence(src, a)
    w0 = w0 / np.trace(w0).real

    n = hi - lo
    rec = {
        "index": np.arange(lo, hi, dtype=np.int64),
        "x": np.empty((n, 3)),
        "k": np.empty((n, 3)),
        "mode": np.full(n, label_id[src.mode], dtype=np.int16),
        "w": np.empty((n, a, a), dtype=complex),
        "weight": np.ones(n),
        "alive": np.ones(n, dtype=bool),
        "degenerate": np.zeros(n, dtype=bool),
    }

    if tables is None:
        _free_transport_range(scenario, fam, w0, lo, hi, rec)
        return rec

    model = scenario.spectrum
    for j, idx in enumerate(range(lo, hi)):
        rng = particle_rng(num.seed, idx)
        pos, khat = _draw_initial(src, rng)
        label = src.mode
        kvec = src.knorm * khat
        w = w0.copy()
        weight = 1.0
        t = 0.0
        alive = True
        degenerate = False
        while True:
            table = tables[label]
            tau = sample_free_flight(table.rate, rng)
            remaining = horizon - t
            step = min(tau, remaining)
            pos = pos + (step * table.velocity / table.knorm) * kvec
            if table.decay:
                weight *= math.exp(-table.decay * step)
            t += step
            if tau >= remaining:
                break
            try:
                label, kvec, w, factor = _sample_event(
                    tables, label, kvec, w, model, rng, num.proposal_block
                )
                weight *= factor
            except DegenerateKernel:
                alive = False
                degenerate = True
                break
        rec["x"][j] = pos
        rec["k"][j] = kvec
        rec["mode"][j] = label_id[label]
        rec["w"][j] = w
        rec["weight"][j] = weight
        rec["alive"][j] = alive
        rec["degenerate"][j] = degenerate
    return rec


def _free_transport_range(scenario: Scenario, fam: ModeFamily, w0: np.ndarray,
                          lo: int, hi: int, rec: dict[str, np.ndarray]) -> None:
    """Scattering-free propagation of one index range, vectorized when possible."""
    medium, src, num = scenario.medium, scenario.source, scenario.numerics
    horizon = float(scenario.horizon)
    n = hi - lo

    pos = np.empty((n, 3))
    khat = np.empty((n, 3))
    for j, idx in enumerate(range(lo, hi)):
        rng = particle_rng(num.seed, idx)
        pos[j], khat[j] = _draw_initial(src, rng)
    kvecs = src.knorm * khat

    homogeneous = medium.profile.is_constant
    scheme = num.integrator
    if scheme == "auto":
        scheme = "analytic" if homogeneous else "rk4"
    batched = _batched_profile(medium)
    slow = (medium.damping is not None and not homogeneous) or batched is None

    if slow:
        # General fallback: full coherence transport particle by particle.
        for j in range(n):
            state = RayState.fresh(fam, pos[j], kvecs[j], w=w0)
            final = propagate_coherence(fam, state, horizon, num.dt)
            trw = float(np.trace(final.w).real)
            rec["x"][j], rec["k"][j] = final.x, final.k
            rec["weight"][j] = trw
            rec["w"][j] = final.w / trw if trw > 0 else w0
        return

    # The coherence matrix rides unchanged in the transport frame: for
    # scalar-profile media the curvature coupling vanishes in that gauge and
    # the attenuation acts as the scalar rate handled through the weight.
    decay = _scalar_decay(medium, fam, np.array([0.0, 0.0, src.knorm])) if homogeneous else 0.0
    if scheme == "analytic":
        vel = fam.sign * fam.speed_factor * medium.wave_speed(None)
        pos = pos + horizon * vel * khat
    else:
        value, gradient = batched
        c_base = medium.wave_speed(None)
        pref = fam.sign * fam.speed_factor * c_base

        def rhs(x: np.ndarray, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            knorm = np.linalg.norm(k, axis=-1, keepdims=True)
            dx = pref * value(x)[:, None] * (k / knorm)
            dk = -pref * knorm * gradient(x)
            return dx, dk

        nfull, remainder = divmod(horizon, num.dt)
        steps = [num.dt] * int(nfull) + ([remainder] if remainder > 1e-12 * horizon else [])
        for h in steps:
            dx1, dk1 = rhs(pos, kvecs)
            dx2, dk2 = rhs(pos + 0.5 * h * dx1, kvecs + 0.5 * h * dk1)
            dx3, dk3 = rhs(pos + 0.5 * h * dx2, kvecs + 0.5 * h * dk2)
            dx4, dk4 = rhs(pos + h * dx3, kvecs + h * dk3)
            pos = pos + (h / 6.0) * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
            kvecs = kvecs + (h / 6.0) * (dk1 + 2 * dk2 + 2 * dk3 + dk4)

    rec["x"][:] = pos
    rec["k"][:] = kvecs
    rec["w"][:] = w0
    if decay:
        rec["weight"][:] = math.exp(-decay * horizon)


# ---------------------------------------------------------------------------
# histogram accumulation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PhaseSpaceHistogram:
    """Binned time-horizon deposits of the particle ensemble.

    ``matrices`` holds the weighted coherence sums with axes (mode, x1, x2,
    x3, cos, phi, |k|, A, A); ``counts`` and ``trace_error`` share the bin
    axes.  ``batch_traces`` keeps the per-batch trace sums (first axis) from
    which the error bars are formed.  ``total_trace`` equals the summed
    weight of every deposited (surviving, in-domain) particle.
    """

    binning: BinningSpec
    medium: OpticalResponse
    modes: tuple[str, ...]
    matrices: np.ndarray
    counts: np.ndarray
    trace_error: np.ndarray
    batch_traces: np.ndarray
    nbatches: int
    nparticles: int
    seed: int
    escaped: int
    absorbed: int
    degenerate_events: int
    scenario_hash: str

    @property
    def traces(self) -> np.ndarray:
        """Real per-bin trace sums, shape (modes, x1, x2, x3, cos, phi, |k|)."""
        return np.einsum("...aa->...", self.matrices).real

    @property
    def total_trace(self) -> float:
        return float(self.traces.sum())

    def x_edges(self) -> list[np.ndarray]:
        box, nx = self.binning.box, self.binning.nx
        return [np.linspace(box.lower[i], box.upper[i], nx[i] + 1) for i in range(3)]

    def cos_edges(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.binning.ncos + 1)

    def phi_edges(self) -> np.ndarray:
        return np.linspace(-np.pi, np.pi, self.binning.nphi + 1)

    def knorm_edges(self) -> np.ndarray:
        if self.binning.knorm_edges is None:
            return np.array([0.0, np.inf])
        return np.asarray(self.binning.knorm_edges, dtype=float)


def _axis_bin(values: np.ndarray, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left-closed bin index per value; the top edge is inclusive."""
    idx = np.searchsorted(edges, values, side="right") - 1
    idx = np.where(values == edges[-1], len(edges) - 2, idx)
    inside = (idx >= 0) & (idx <= len(edges) - 2)
    return np.clip(idx, 0, len(edges) - 2), inside


def _deposit(scenario: Scenario, labels: tuple[str, ...],
             rec: dict[str, np.ndarray], scn_hash: str) -> PhaseSpaceHistogram:
    """Serial index-ordered reduction of particle records into the histogram."""
    binning, num = scenario.binning, scenario.numerics
    nmodes, a = len(labels), rec["w"].shape[1]
    shape = (nmodes, *binning.nx, binning.ncos, binning.nphi,
             len(_knorm_edges(binning)) - 1)

    order = np.argsort(rec["index"], kind="stable")
    for key in rec:
        rec[key] = rec[key][order]

    x, k = rec["x"], rec["k"]
    xe = [np.linspace(binning.box.lower[i], binning.box.upper[i], binning.nx[i] + 1)
          for i in range(3)]
    ix, inside = zip(*(_axis_bin(x[:, i], xe[i]) for i in range(3)))
    ok = inside[0] & inside[1] & inside[2]

    knorm = np.linalg.norm(k, axis=-1)
    khat = k / np.where(knorm > 0, knorm, 1.0)[:, None]
    icos, c_in = _axis_bin(np.clip(khat[:, 2], -1.0, 1.0), np.linspace(-1, 1, binning.ncos + 1))
    iphi, p_in = _axis_bin(np.arctan2(khat[:, 1], khat[:, 0]),
                           np.linspace(-np.pi, np.pi, binning.nphi + 1))
    iknorm, k_in = _axis_bin(knorm, _knorm_edges(binning))
    ok &= c_in & p_in & k_in

    alive = rec["alive"]
    dep = alive & ok
    sel = (rec["mode"][dep], ix[0][dep], ix[1][dep], ix[2][dep],
           icos[dep], iphi[dep], iknorm[dep])

    matrices = np.zeros((*shape, a, a), dtype=complex)
    counts = np.zeros(shape, dtype=np.int64)
    np.add.at(matrices, sel, rec["weight"][dep, None, None] * rec["w"][dep])
    np.add.at(counts, sel, 1)

    trace_mass = rec["weight"][dep] * np.einsum("naa->n", rec["w"][dep]).real
    batch = (rec["index"][dep] * num.nbatches) // scenario.source.count
    batch_traces = np.zeros((num.nbatches, *shape))
    np.add.at(batch_traces, (batch, *sel), trace_mass)
    err = np.sqrt(num.nbatches * np.var(batch_traces, axis=0, ddof=1))

    return PhaseSpaceHistogram(
        binning=binning,
        medium=scenario.medium,
        modes=labels,
        matrices=matrices,
        counts=counts,
        trace_error=err,
        batch_traces=batch_traces,
        nbatches=num.nbatches,
        nparticles=scenario.source.count,
        seed=num.seed,
        escaped=int((alive & ~ok).sum()),
        absorbed=int((~alive).sum()),
        degenerate_events=int(rec["degenerate"].sum()),
        scenario_hash=scn_hash,
    )


def _knorm_edges(binning: BinningSpec) -> np.ndarray:
    if binning.knorm_edges is None:
        return np.array([0.0, np.inf])
    return np.asarray(binning.knorm_edges, dtype=float)


def run_simulation(scenario: Scenario) -> PhaseSpaceHistogram:
    """Transport the source ensemble to the horizon and bin the survivors.

    Free flights alternate with scattering events until t >= horizon; each
    particle's final (x, k, mode, w, weight) is deposited.  Results are
    bit-identical for any worker count: particles own RNG streams keyed by
    (seed, index), workers cover contiguous index ranges, and the reduction
    runs in index order.  Error bars come from ``numerics.nbatches``
    index-contiguous batches.
    """
    validate_scenario(scenario)
    medium, src, num = scenario.medium, scenario.source, scenario.numerics
    fam = family_by_label(medium, src.mode)

    tables = None
    if scenario.spectrum is not None:
        omega_abs = abs(fam.omega(np.array([0.0, 0.0, src.knorm])))
        tables = build_channel_tables(
            medium, scenario.spectrum, omega_abs, fam.sign,
            ncos=num.ncos, nphi=num.nphi, bound_safety=num.bound_safety,
        )
        if abs(tables[src.mode].knorm - src.knorm) > 1e-9 * src.knorm:
            raise ConfigInvalid(
                [f"source.knorm: {src.knorm} is not on the {src.mode!r} shell "
                 f"(expected {tables[src.mode].knorm:.12g})"]
            )
    labels = tuple(tables) if tables is not None else (src.mode,)

    n, workers = src.count, num.workers
    cuts = [(i * n) // workers for i in range(workers + 1)]
    ranges = [(lo, hi) for lo, hi in zip(cuts[:-1], cuts[1:]) if hi > lo]
    if len(ranges) <= 1:
        parts = [_simulate_range(scenario, tables, 0, n)]
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=len(ranges), mp_context=ctx) as pool:
            futures = [pool.submit(_simulate_range, scenario, tables, lo, hi)
                       for lo, hi in ranges]
            parts = [f.result() for f in futures]

    rec = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    return _deposit(scenario, labels, rec, scenario_hash(scenario))


# ---------------------------------------------------------------------------
# references and field estimators
# ---------------------------------------------------------------------------


def analytic_lorentz_solution(
    x: np.ndarray, k: np.ndarray, t: float, scenario: Scenario
) -> np.ndarray:
    """Closed-form coherence for scattering-free transport in a uniform medium.

    The initial datum rides along the mode's ray while its trace decays at
    the scalar background attenuation rate: w(x, k, t) =
    exp(-rate * t) * w_I(x - t * grad_k omega, k).  Requires a uniform
    isotropic background and no spectrum in the scenario.
    """
    medium, src = scenario.medium, scenario.source
    problems = []
    if not medium.profile.is_constant:
        problems.append("medium: analytic transport requires a uniform background")
    if medium.kind != "isotropic":
        problems.append(f"medium: analytic transport covers isotropic media, got {medium.kind}")
    if scenario.spectrum is not None:
        problems.append("spectrum: analytic transport requires no fluctuations")
    if problems:
        raise ConfigInvalid(problems)

    fam = family_by_label(medium, src.mode)
    k = np.asarray(k, dtype=float)
    x0 = np.asarray(x, dtype=float) - t * fam.grad_k_omega(k)
    if src.cloud is not None:
        inside = src.cloud.contains(x0)
    else:
        inside = bool(np.allclose(x0, np.asarray(src.position, dtype=float), atol=1e-12))
    w0 = _source_coherence(src, fam.multiplicity)
    if not inside:
        return np.zeros_like(w0)
    rate = _scalar_decay(medium, fam, k)
    return math.exp(-rate * t) * w0


def estimate_fields(
    hist: PhaseSpaceHistogram, modes: tuple[str, ...] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Bin-integrated energy density and flux per spatial cell.

    E = (1/2) sum over modes and k-cells of the deposited traces;
    F = (1/2) sum of trace x group velocity at the cell/direction centers.
    Returns (energy (n1, n2, n3), flux (n1, n2, n3, 3)); divide by the cell
    volume for densities.  Raises :class:`EmptyHistogram` on zero deposits.
    """
    if hist.counts.sum() == 0:
        raise EmptyHistogram("no particles were deposited in the histogram")
    selected = hist.modes if modes is None else tuple(modes)
    traces = hist.traces

    cce = hist.cos_edges()
    ppe = hist.phi_edges()
    ccos = 0.5 * (cce[:-1] + cce[1:])
    cphi = 0.5 * (ppe[:-1] + ppe[1:])
    sin = np.sqrt(np.clip(1.0 - ccos**2, 0.0, None))
    khat = np.stack(
        [sin[:, None] * np.cos(cphi)[None, :],
         sin[:, None] * np.sin(cphi)[None, :],
         np.broadcast_to(ccos[:, None], (len(ccos), len(cphi)))],
        axis=-1,
    )  # (ncos, nphi, 3)

    xe = hist.x_edges()
    centers = [0.5 * (e[:-1] + e[1:]) for e in xe]
    grid = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)  # (n1,n2,n3,3)
    cells = grid.reshape(-1, 3)
    profile = hist.medium.profile
    if profile.is_constant:
        scale = np.ones(cells.shape[0])
    else:
        scale = np.atleast_1d(profile.value(cells)) if hasattr(profile, "slope") else \
            np.array([profile.value(c) for c in cells])
    base = hist.medium.wave_speed(None)

    energy = np.zeros(hist.binning.nx)
    flux = np.zeros((*hist.binning.nx, 3))
    for m, label in enumerate(hist.modes):
        if label not in selected:
            continue
        fam = family_by_label(hist.medium, label)
        tr_m = traces[m].sum(axis=-1)  # sum |k| shells -> (n1,n2,n3,ncos,nphi)
        energy += 0.5 * tr_m.sum(axis=(-1, -2))
        speed = (fam.sign * fam.speed_factor * base * scale).reshape(hist.binning.nx)
        flux += 0.5 * speed[..., None] * np.einsum("xyzcp,cpi->xyzi", tr_m, khat)
    return energy, flux


# ---------------------------------------------------------------------------
# provenance and export
# ---------------------------------------------------------------------------


def _json_safe(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {"type": type(obj).__name__}
        for f in dataclasses.fields(obj):
            out[f.name] = _json_safe(getattr(obj, f.name))
        return out
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)) or obj is None or isinstance(obj, (bool, str)):
        return int(obj) if isinstance(obj, np.integer) else obj
    if callable(obj):
        name = getattr(obj, "__qualname__", type(obj).__name__)
        module = getattr(obj, "__module__", "")
        return f"callable:{module}.{name}"
    # plain objects: serialize by type and attribute state, never by repr
    # (default reprs embed memory addresses, which would break hash stability)
    state = getattr(obj, "__dict__", None)
    if state is not None:
        return {"type": type(obj).__name__,
                **{k: _json_safe(v) for k, v in sorted(state.items())}}
    return f"object:{type(obj).__name__}"


def scenario_fingerprint(scenario: Scenario) -> dict:
    """JSON-safe nested description of a scenario (hash input).

    The worker count is dropped: results are bit-identical for any worker
    split, so it is a deployment detail rather than part of the scenario.
    """
    out = _json_safe(scenario)
    out["numerics"].pop("workers", None)
    return out


def scenario_hash(scenario: Scenario) -> str:
    """SHA-256 over the canonical JSON form of the scenario fingerprint."""
    text = json.dumps(scenario_fingerprint(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def save_histogram(
    hist: PhaseSpaceHistogram, directory: str | Path, *, stem: str = "histogram"
) -> dict[str, Path]:
    """Write CSV (bin centers, traces, errors), raw arrays, and a JSON sidecar.

    Returns the mapping of artifact names to paths.  The CSV has one row per
    (mode, bin) with the bin centers of every axis; the raw ``.npy`` files
    hold the full coherence matrices, traces, errors, and counts; the sidecar
    records bin edges, particle count, seed, and the scenario hash.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": directory / f"{stem}.csv",
        "matrices": directory / f"{stem}_matrices.npy",
        "traces": directory / f"{stem}_traces.npy",
        "errors": directory / f"{stem}_errors.npy",
        "counts": directory / f"{stem}_counts.npy",
        "sidecar": directory / f"{stem}.json",
    }

    centers = [0.5 * (e[:-1] + e[1:]) for e in hist.x_edges()]
    ccos = 0.5 * (hist.cos_edges()[:-1] + hist.cos_edges()[1:])
    cphi = 0.5 * (hist.phi_edges()[:-1] + hist.phi_edges()[1:])
    kne = hist.knorm_edges()
    cknorm = 0.5 * (kne[:-1] + kne[1:])
    traces, errors, counts = hist.traces, hist.trace_error, hist.counts

    lines = ["mode,x1,x2,x3,cos_theta,phi,knorm,trace,error,count"]
    for m, label in enumerate(hist.modes):
        for flat in range(traces[m].size):
            i1, i2, i3, ic, ip, ik = np.unravel_index(flat, traces[m].shape)
            row = (centers[0][i1], centers[1][i2], centers[2][i3],
                   ccos[ic], cphi[ip], cknorm[ik],
                   traces[m, i1, i2, i3, ic, ip, ik],
                   errors[m, i1, i2, i3, ic, ip, ik])
            lines.append(label + "," + ",".join("%.12g" % v for v in row)
                         + f",{counts[m, i1, i2, i3, ic, ip, ik]}")
    paths["csv"].write_text("\n".join(lines) + "\n")

    np.save(paths["matrices"], hist.matrices)
    np.save(paths["traces"], traces)
    np.save(paths["errors"], errors)
    np.save(paths["counts"], counts)

    sidecar = {
        "modes": list(hist.modes),
        "x_edges": [_json_safe(e) for e in hist.x_edges()],
        "cos_edges": _json_safe(hist.cos_edges()),
        "phi_edges": _json_safe(hist.phi_edges()),
        "knorm_edges": _json_safe(kne),
        "nparticles": hist.nparticles,
        "nbatches": hist.nbatches,
        "seed": hist.seed,
        "scenario_hash": hist.scenario_hash,
        "total_trace": hist.total_trace,
        "escaped": hist.escaped,
        "absorbed": hist.absorbed,
        "degenerate_events": hist.degenerate_events,
    }
    paths["sidecar"].write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return paths
