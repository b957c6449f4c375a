"""Where does a polarization post-selected QD cavity bunch its light?

Scans the common QD detuning against the output polarizer angle, reports
the converged g2(0) maximum and compares it with the two special polarizer
angles at which single-photon transmission is extinguished.

    python demos/bunching_map.py [qd_a|qd_b]
"""
import sys

import numpy as np

from polcqed import observables, preset, solver, sweeps
from polcqed.sweeps import SweepSpec

name = sys.argv[1] if len(sys.argv) > 1 else "qd_a"
base = preset(name)

res = sweeps.run_sweep(SweepSpec("g2_map", base, workers=4))
best = res.maxima[0]
print(f"{name}: {res.g2.size} map cells, {len(res.failures)} solver failures")
print(f"max g2(0) = {best.value:.2f} at QD offset {best.coords['qd_common_offset']:+.2f} GHz, "
      f"polarizer {best.coords['theta_out']:.0f} deg (n_fock+1 gives {best.value_next_fock:.2f})")

for a in sweeps.find_special_angles(base, workers=4):
    print(f"transition {a.transition}: extinction at {a.theta_out:.2f} deg, laser {a.f_laser:+.3f} GHz")

# photon statistics behind the maximum: the one-photon part is suppressed, not the two-photon part
p = base.replace(qd_common_offset=best.coords["qd_common_offset"])
rho = solver.steady_state_factorized(p)
dist = observables.photon_number_dist(rho, best.coords["theta_out"])
empty = solver.steady_state_factorized(p.replace(g=0.0))
ref = observables.photon_number_dist(empty, best.coords["theta_out"])
np.set_printoptions(precision=3)
print("P_n with QD   ", dist.p[:4])
print("P_n empty cav.", ref.p[:4])
print(f"P_1 ratio {dist.p[1] / ref.p[1]:.3g}, P_2 ratio {dist.p[2] / ref.p[2]:.3g}")
