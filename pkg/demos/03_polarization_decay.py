"""
Coherence transport and background attenuation
==============================================

Along a ray the 2x2 coherence matrix w is rotated by the geometric coupling
and damped by the dissipative part of the susceptibility.  For a uniform
background with a single damped resonance the trace decays at the closed
rate Gamma(omega) = wp^2 omega^2 g / ((w0^2 - omega^2)^2 + omega^2 g^2).
"""

import numpy as np

from emtransport.dispersion import OpticalResponse, propagating_families
from emtransport.raytrace import RayState, propagate_coherence

medium = OpticalResponse.lorentz(2.0, 0.5, plasma=1.0, resonance=2.0, rate=0.5)
family = [f for f in propagating_families(medium) if f.sign > 0][0]

# a partially polarized initial state
w_init = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
k = np.array([0.0, 0.0, 1.5])
omega = family.omega(k)
gamma = medium.damping.decay_rate(abs(omega))
print(f"mode frequency  omega = {omega:.6f}")
print(f"decay rate      Gamma = {gamma:.9f}")

print("\n   T     tr w (transported)   tr w (closed form)")
for horizon in (0.5, 1.0, 2.0, 4.0):
    state = RayState.fresh(family, x=[0.0, 0.0, 0.0], k=k, w=w_init)
    out = propagate_coherence(family, state, duration=horizon, dt=1e-3)
    transported = np.trace(out.w).real
    closed = np.exp(-gamma * horizon) * np.trace(w_init).real
    print(f"  {horizon:4.1f}   {transported:.12f}       {closed:.12f}")

# scalar damping leaves the polarization structure untouched: the degree of
# polarization is a ray invariant here
state = RayState.fresh(family, x=[0.0, 0.0, 0.0], k=k, w=w_init)
out = propagate_coherence(family, state, duration=2.0, dt=1e-3)
dop = lambda w: np.sqrt(1 - 4 * np.linalg.det(w).real / np.trace(w).real ** 2)
print(f"\ndegree of polarization: initial {dop(w_init):.9f}, final {dop(out.w):.9f}")
