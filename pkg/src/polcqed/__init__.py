"""Two-polarization quantum-dot cavity QED: steady states, polarization
post-selected transmission and photon statistics, parameter scans and fits."""

__version__ = "0.1.0"

from .hilbert import SpaceLayout, annihilation, qd_lowering, kron_assemble  # noqa: E402
from .model import JonesVector, SystemParams, build_hamiltonian, build_liouvillian, cooperativity  # noqa: E402
from .solver import PropagationSpec, propagate, steady_state, steady_state_factorized  # noqa: E402
from .observables import (  # noqa: E402
    CorrelationTrace,
    PhotonNumberDist,
    convolve_detector,
    g2_lowdrive_check,
    g2_trace,
    g2_zero,
    photon_number_dist,
    transmission,
)
from .config import preset  # noqa: E402
