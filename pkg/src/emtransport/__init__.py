"""High-frequency electromagnetic energy transport in structured media.

Subpackages cover the pipeline from plane-wave mode structure to phase-space
energy transport:

- :mod:`emtransport.dispersion` — 6x6 optical response, weighted eigenproblem,
  closed-form branch families (isotropic, optically active), null modes.
- :mod:`emtransport.raytrace` — Hamiltonian ray tracing and transport of the
  polarization coherence matrix along rays (damping + curvature coupling).
- :mod:`emtransport.media` — random-medium models: correlation channels,
  power spectra, realization synthesis, spectral estimation.
- :mod:`emtransport.scattering` — differential and total scattering
  cross-sections between polarized branches, closed forms for the worked media.
- :mod:`emtransport.rte_mc` — Monte Carlo solution of the polarized radiative
  transfer equation, with analytic references and field estimators.
- :mod:`emtransport.wigner` — direct phase-space (Wigner) diagnostics on
  sampled 1D fields, plus a spherical-means utility.
- :mod:`emtransport.cli` — TOML scenario runner (`python -m emtransport ...`).
"""

from emtransport import dispersion, media, raytrace, rte_mc, scattering, wigner

__all__ = ["dispersion", "raytrace", "media", "scattering", "rte_mc", "wigner"]

__version__ = "0.1.0"
