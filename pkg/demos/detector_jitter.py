"""How much bunching survives a real single-photon detector?

Computes g2(tau) at the bunching maximum of both bundled dots and convolves
it with Gaussian detector responses of 50 ps and 500 ps FWHM.
"""
from polcqed import preset, sweeps

for name in ("qd_a", "qd_b"):
    p, theta, m = sweeps.bunching_point(preset(name), workers=4)
    trace, convolved = sweeps.correlation_at(p, theta, tau_max=4.0, n_tau=801, jitters_ps=(50.0, 500.0))
    peaks = ", ".join(f"{c.convolved_with:g} ps: {c.g2.max():.2f}" for c in convolved)
    print(f"{name} at {theta:.0f} deg: raw g2(0) = {trace.at_zero():.2f}; {peaks}")
    # a response much wider than the raw peak averages it down toward 1
    half = trace.tau[(trace.g2 - 1) > 0.5 * (trace.at_zero() - 1)]
    print(f"    raw peak FWHM {1e3 * (half.max() - half.min()):.0f} ps")
