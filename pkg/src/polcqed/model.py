"""Physical parameters, rotating-frame Hamiltonian and Liouvillian.

Rates (``kappa``, ``g_*``, ``gamma_*``, ``eta``) are in 1/ns and enter the
Hamiltonian and dissipators directly. Frequency offsets are in GHz and are
converted to angular frequency, ``omega = 2*pi*f`` (rad/ns).

Density matrices are vectorized by column stacking, so that
``vec(A @ rho @ B) = kron(B.T, A) @ vec(rho)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from . import hilbert
from .hilbert import SpaceLayout

TWO_PI = 2.0 * np.pi


class ParameterError(ValueError):
    """Invalid physical parameter set."""


@dataclass(frozen=True)
class JonesVector:
    """Normalized polarization vector on the (X, Y) basis."""

    e1: complex
    e2: complex

    def __post_init__(self):
        norm = abs(self.e1) ** 2 + abs(self.e2) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ParameterError(f"Jones vector not normalized: |e1|^2+|e2|^2 = {norm!r}")

    @classmethod
    def linear(cls, theta_deg: float) -> "JonesVector":
        """Linear polarization at ``theta_deg`` from the X axis."""
        t = np.radians(theta_deg)
        return cls(float(np.cos(t)), float(np.sin(t)))

    def as_array(self) -> np.ndarray:
        return np.array([self.e1, self.e2], dtype=complex)


# (field, config key) pairs; config keys carry their units
_CONFIG_KEYS = {
    "kappa": "kappa_per_ns",
    "g_x": "g_x_per_ns",
    "g_y": "g_y_per_ns",
    "gamma_par": "gamma_par_per_ns",
    "gamma_star": "gamma_star_per_ns",
    "f_cav_x": "f_cav_x_ghz",
    "f_cav_y": "f_cav_y_ghz",
    "f_qd_x": "f_qd_x_ghz",
    "f_qd_y": "f_qd_y_ghz",
    "f_laser": "f_laser_ghz",
    "eta": "eta_per_ns",
    "theta_in": "theta_in_deg",
    "n_fock": "n_fock",
    "qd_x_enabled": "qd_x_enabled",
    "qd_y_enabled": "qd_y_enabled",
}
_REQUIRED = ("kappa", "g_x", "g_y", "gamma_par", "gamma_star", "f_qd_x", "f_qd_y", "eta")


@dataclass(frozen=True)
class SystemParams:
    """All physical rates, frequency offsets, drive and truncation settings."""

    kappa: float
    g_x: float
    g_y: float
    gamma_par: float
    gamma_star: float
    f_qd_x: float
    f_qd_y: float
    eta: float
    f_cav_x: float = 0.0
    f_cav_y: float = 0.0
    f_laser: float = 0.0
    theta_in: float = 45.0
    n_fock: int = 4
    qd_x_enabled: bool = True
    qd_y_enabled: bool = True

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be > 0, got {self.kappa!r}")
        for name in ("gamma_par", "gamma_star", "eta"):
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not np.isfinite(v):
                raise ParameterError(f"{f.name} is not finite")
        if int(self.n_fock) != self.n_fock or self.n_fock < 2:
            raise ParameterError(f"n_fock must be an integer >= 2, got {self.n_fock!r}")

    @property
    def layout(self) -> SpaceLayout:
        return SpaceLayout(int(self.n_fock))

    @property
    def input_polarization(self) -> JonesVector:
        return JonesVector.linear(self.theta_in)

    def replace(self, **changes) -> "SystemParams":
        """Copy with fields replaced. ``g`` sets both couplings and
        ``qd_common_offset`` shifts both transitions by the same amount."""
        changes = dict(changes)
        if "g" in changes:
            g = changes.pop("g")
            changes["g_x"] = changes["g_y"] = g
        if "qd_common_offset" in changes:
            off = changes.pop("qd_common_offset")
            changes["f_qd_x"] = changes.get("f_qd_x", self.f_qd_x) + off
            changes["f_qd_y"] = changes.get("f_qd_y", self.f_qd_y) + off
        return dataclasses.replace(self, **changes)

    def to_config(self) -> dict[str, Any]:
        out = {}
        for field, key in _CONFIG_KEYS.items():
            v = getattr(self, field)
            out[key] = v if isinstance(v, (bool, int)) else float(v)
        return out

    @classmethod
    def from_config(cls, block: Mapping[str, Any]) -> "SystemParams":
        """Build from a unit-suffixed key/value block.

        A single ``g_per_ns`` may stand in for both couplings.
        """
        block = dict(block)
        if "g_per_ns" in block:
            g = block.pop("g_per_ns")
            block.setdefault("g_x_per_ns", g)
            block.setdefault("g_y_per_ns", g)
        known = set(_CONFIG_KEYS.values())
        unknown = sorted(set(block) - known)
        if unknown:
            raise ParameterError(f"unknown parameter key(s): {', '.join(unknown)}")
        kwargs = {}
        for field, key in _CONFIG_KEYS.items():
            if key in block:
                kwargs[field] = block[key]
            elif field in _REQUIRED:
                raise ParameterError(f"missing required parameter '{key}'")
        for field in ("qd_x_enabled", "qd_y_enabled"):
            if field in kwargs and not isinstance(kwargs[field], bool):
                raise ParameterError(f"'{_CONFIG_KEYS[field]}' must be true or false")
        for field, v in kwargs.items():
            if field in ("qd_x_enabled", "qd_y_enabled"):
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParameterError(f"'{_CONFIG_KEYS[field]}' must be a number, got {v!r}")
        if "n_fock" in kwargs:
            kwargs["n_fock"] = int(kwargs["n_fock"])
        return cls(**{k: (float(v) if k not in ("n_fock", "qd_x_enabled", "qd_y_enabled") else v)
                      for k, v in kwargs.items()})


def cooperativity(p: SystemParams) -> float:
    """``g**2 / (kappa * (gamma_par/2 + gamma_star))`` with ``g = g_x``."""
    gamma = p.gamma_par / 2 + p.gamma_star
    if gamma == 0:
        raise ZeroDivisionError("cooperativity undefined for gamma_par = gamma_star = 0")
    return p.g_x**2 / (p.kappa * gamma)


# -- superoperators ---------------------------------------------------------

def spre(a):
    """Left multiplication ``rho -> a @ rho``."""
    a = sp.csr_matrix(a)
    return sp.kron(sp.identity(a.shape[0], format="csr"), a, format="csr")


def spost(b):
    """Right multiplication ``rho -> rho @ b``."""
    b = sp.csr_matrix(b)
    return sp.kron(b.T, sp.identity(b.shape[0], format="csr"), format="csr")


def dissipator(o):
    """``2 o rho o^+ - o^+ o rho - rho o^+ o`` as a sparse superoperator."""
    o = sp.csr_matrix(o)
    od = o.conj().T
    n = (od @ o).tocsr()
    return (2 * sp.kron(o.conj(), o) - spre(n) - spost(n)).tocsr()


def _liouvillian(h, collapse) -> sp.csr_matrix:
    L = -1j * (spre(h) - spost(h))
    for rate, o in collapse:
        if rate:
            L = L + rate * dissipator(o)
    return L.tocsr()


def _branch_terms(p: SystemParams, j: int):
    """Per-polarization pieces: (mode detuning, qd detuning, g, drive, enabled)."""
    e_in = p.input_polarization.as_array().real
    f_cav = (p.f_cav_x, p.f_cav_y)[j]
    f_qd = (p.f_qd_x, p.f_qd_y)[j]
    g = (p.g_x, p.g_y)[j]
    enabled = (p.qd_x_enabled, p.qd_y_enabled)[j]
    return (TWO_PI * (p.f_laser - f_cav), TWO_PI * (p.f_laser - f_qd), g, p.eta * e_in[j], enabled)


def _collapse(p: SystemParams, a, s, sz, enabled: bool):
    ops = [(p.kappa / 2, a)]
    if enabled:
        ops += [(p.gamma_par / 2, s), (p.gamma_star / 4, sz)]
    else:
        # decoupled transition: relaxation only pins it to the ground state
        ops += [(p.kappa / 2, s)]
    return ops


def build_hamiltonian(p: SystemParams) -> np.ndarray:
    """Rotating-frame Hamiltonian on the joint space (hbar = 1)."""
    lay = p.layout
    h = np.zeros((lay.dim, lay.dim), dtype=complex)
    for j, lab in enumerate(hilbert.MODES):
        a = hilbert.annihilation(lay, lab)
        s = hilbert.qd_lowering(lay, lab)
        ad, sd = a.conj().T, s.conj().T
        d_cav, d_qd, g, drive, enabled = _branch_terms(p, j)
        h += d_cav * (ad @ a) + (drive / 2) * (ad + a)
        if enabled:
            h += d_qd * (sd @ s) + g * (s @ ad + sd @ a)
    return h


def build_liouvillian(p: SystemParams) -> sp.csr_matrix:
    """Sparse Liouvillian acting on column-stacked density matrices."""
    lay = p.layout
    collapse = []
    for j, lab in enumerate(hilbert.MODES):
        a = hilbert.annihilation(lay, lab)
        s = hilbert.qd_lowering(lay, lab)
        sz = hilbert.qd_sigma_z(lay, lab)
        collapse += _collapse(p, a, s, sz, _branch_terms(p, j)[4])
    return _liouvillian(build_hamiltonian(p), collapse)


# -- single-polarization branch ---------------------------------------------
#
# Nothing in the Hamiltonian or the dissipators couples (mode X, TLS X) to
# (mode Y, TLS Y), so the joint generator is L_X (x) 1 + 1 (x) L_Y. Each branch
# lives on (mode j) (x) (TLS j), dimension 2 * n_fock.

def branch_operators(n_fock: int):
    a = np.kron(hilbert.destroy(n_fock), np.eye(2))
    s = np.kron(np.eye(n_fock), hilbert.tls_lowering())
    sd = s.conj().T
    sz = 0.5 * (sd @ s - s @ sd)
    return a, s, sz


def branch_hamiltonian(p: SystemParams, pol: str) -> np.ndarray:
    j = hilbert.MODES.index(pol.upper())
    a, s, _ = branch_operators(int(p.n_fock))
    ad, sd = a.conj().T, s.conj().T
    d_cav, d_qd, g, drive, enabled = _branch_terms(p, j)
    h = d_cav * (ad @ a) + (drive / 2) * (ad + a)
    if enabled:
        h = h + d_qd * (sd @ s) + g * (s @ ad + sd @ a)
    return h


def branch_liouvillian(p: SystemParams, pol: str) -> np.ndarray:
    """Dense Liouvillian of one polarization branch."""
    j = hilbert.MODES.index(pol.upper())
    a, s, sz = branch_operators(int(p.n_fock))
    collapse = _collapse(p, a, s, sz, _branch_terms(p, j)[4])
    return _liouvillian(branch_hamiltonian(p, pol), collapse).toarray()


@lru_cache(maxsize=16)
def branch_components(n_fock: int) -> np.ndarray:
    """Fixed superoperators whose weighted sum is a branch Liouvillian:
    cavity detuning, QD detuning, coupling, drive, D[a], D[s], D[sz]."""
    a, s, sz = branch_operators(n_fock)
    ad, sd = a.conj().T, s.conj().T
    ham = [ad @ a, sd @ s, s @ ad + sd @ a, 0.5 * (a + ad)]
    comps = [(-1j * (spre(h) - spost(h))).toarray() for h in ham]
    comps += [dissipator(o).toarray() for o in (a, s, sz)]
    out = np.stack(comps)
    out.flags.writeable = False
    return out


def branch_weights(p: SystemParams, pol: str) -> np.ndarray:
    """Weights of ``branch_components`` for parameter set ``p``."""
    j = hilbert.MODES.index(pol.upper())
    d_cav, d_qd, g, drive, enabled = _branch_terms(p, j)
    if enabled:
        return np.array([d_cav, d_qd, g, drive, p.kappa / 2, p.gamma_par / 2, p.gamma_star / 4])
    return np.array([d_cav, 0.0, 0.0, drive, p.kappa / 2, p.kappa / 2, 0.0])


def branch_liouvillian_stack(weights: np.ndarray, n_fock: int) -> np.ndarray:
    """Stack of branch Liouvillians from a ``(k, 7)`` array of weights."""
    return np.tensordot(np.asarray(weights, dtype=complex), branch_components(n_fock), axes=1)
