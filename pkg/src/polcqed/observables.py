"""Polarization-resolved transmission, photon correlations and photon-number
distributions of the transmitted light.

The detected mode for an output polarizer with Jones vector ``e`` is
``A = conj(e1) a_X + conj(e2) a_Y``; for a linear polarizer at ``theta``
this is ``cos(theta) a_X + sin(theta) a_Y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Optional

import numpy as np

from . import hilbert, solver
from .hilbert import SpaceLayout
from .model import JonesVector

ZERO_INTENSITY_FLOOR = 1e-12


class ZeroIntensity(ArithmeticError):
    """Detected intensity below the floor; g2 is undefined."""


class GridTooCoarse(ValueError):
    """Delay grid too coarse to resolve the detector response."""


def _jones(pol) -> JonesVector:
    if isinstance(pol, JonesVector):
        return pol
    return JonesVector.linear(float(pol))


def polarized_mode(layout: SpaceLayout, pol) -> np.ndarray:
    """Annihilation operator of the mode passed by polarizer ``pol``
    (a ``JonesVector`` or an angle in degrees)."""
    e = _jones(pol).as_array().conj()
    return e[0] * hilbert.annihilation(layout, "X") + e[1] * hilbert.annihilation(layout, "Y")


def transmission(rho0: np.ndarray, out_pol) -> float:
    """Mean detected photon number ``Tr(rho0 A^+ A)``."""
    a = polarized_mode(solver.layout_of(rho0), out_pol)
    return float(np.trace(rho0 @ a.conj().T @ a).real)


def g2_zero(rho0: np.ndarray, out_pol, floor: float = ZERO_INTENSITY_FLOOR) -> float:
    """``Tr(rho0 A^+ A^+ A A) / T**2``; raises ``ZeroIntensity`` if T < floor."""
    a = polarized_mode(solver.layout_of(rho0), out_pol)
    ad = a.conj().T
    t = np.trace(rho0 @ ad @ a).real
    if t < floor:
        raise ZeroIntensity(f"transmission {t:.3e} below floor {floor:.0e}")
    return float(np.trace(rho0 @ ad @ ad @ a @ a).real / t**2)


@dataclass
class CorrelationTrace:
    """g2 on a symmetric delay grid (ns), optionally detector-convolved."""

    tau: np.ndarray
    g2: np.ndarray
    convolved_with: Optional[float] = None  # jitter FWHM, ps

    @property
    def peak(self) -> float:
        return float(np.max(self.g2))

    def at_zero(self) -> float:
        return float(self.g2[np.argmin(np.abs(self.tau))])


def g2_trace(L, rho0: np.ndarray, out_pol, spec: solver.PropagationSpec,
             floor: float = ZERO_INTENSITY_FLOOR) -> CorrelationTrace:
    """Two-time correlation by quantum regression:
    ``g2(tau) = Tr[A^+A exp(L tau)(A rho0 A^+)] / T**2``, reflected to tau < 0."""
    a = polarized_mode(solver.layout_of(rho0), out_pol)
    ad = a.conj().T
    n_op = ad @ a
    t = np.trace(rho0 @ n_op).real
    if t < floor:
        raise ZeroIntensity(f"transmission {t:.3e} below floor {floor:.0e}")
    # propagate A rho0 A^+ / T, whose trace is one, so abs_tol is relative to the intensity
    vs = solver.propagate(L, solver.vec(a @ rho0 @ ad) / t, spec)
    # Tr(N X) = sum_ij N_ji X_ij = vec(N^T) . vec(X)
    g = (vs @ solver.vec(n_op.T)).real / t
    taus = spec.taus
    return CorrelationTrace(np.concatenate([-taus[:0:-1], taus]), np.concatenate([g[:0:-1], g]))


def convolve_detector(trace: CorrelationTrace, jitter_fwhm_ps: float) -> CorrelationTrace:
    """Convolve with a unit-area Gaussian pair response of FWHM
    ``jitter_fwhm_ps``. Values beyond the grid are continued with the edge
    values, so flat traces pass through unchanged."""
    if trace.convolved_with is not None:
        raise ValueError("trace is already convolved")
    if not jitter_fwhm_ps > 0:
        raise ValueError("jitter must be positive")
    fwhm = jitter_fwhm_ps * 1e-3
    tau = np.asarray(trace.tau)
    dt = float(np.mean(np.diff(tau)))
    if dt > fwhm / 4 * (1 + 1e-9):  # spacing exactly at the limit is allowed
        raise GridTooCoarse(f"delay spacing {dt * 1e3:.1f} ps exceeds FWHM/4 = {jitter_fwhm_ps / 4:.1f} ps")
    sigma = fwhm / (2 * np.sqrt(2 * np.log(2)))
    half = int(np.ceil(6 * sigma / dt))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) * dt / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(np.asarray(trace.g2, dtype=float), half, mode="edge")
    out = np.convolve(padded, k, mode="valid")
    # restore exact mirror symmetry lost to rounding
    out = 0.5 * (out + out[::-1])
    return CorrelationTrace(tau.copy(), out, float(jitter_fwhm_ps))


@dataclass
class PhotonNumberDist:
    """Detected-polarization photon-number probabilities ``P_0, P_1, ...``."""

    p: np.ndarray
    theta_out: float

    def mean(self) -> float:
        n = np.arange(len(self.p))
        return float(n @ self.p)

    def g2_from_moments(self) -> float:
        n = np.arange(len(self.p))
        return float((n * (n - 1)) @ self.p / self.mean() ** 2)


def _rotated_creators(levels: int, theta_out: float):
    a = hilbert.destroy(levels)
    eye = np.eye(levels)
    ax, ay = np.kron(a, eye), np.kron(eye, a)
    c, s = np.cos(np.radians(theta_out)), np.sin(np.radians(theta_out))
    # detected polarization (cos, sin) and its orthogonal complement
    return (c * ax + s * ay).conj().T, (-s * ax + c * ay).conj().T


def photon_number_dist(rho0: np.ndarray, theta_out: float) -> PhotonNumberDist:
    """Project onto rotated Fock states ``|n>_det |m>_rej`` and sum over the
    rejected-polarization number ``m``.

    A state truncated at ``n_fock`` levels per mode holds up to
    ``2 n_fock - 2`` photons in total, so the projection is carried out in a
    per-mode space of ``2 n_fock - 1`` levels where the rotated Fock states
    are exact; ``p`` has ``2 n_fock - 1`` entries. Evaluated on the
    intracavity field; no output-mirror reshaping.
    """
    lay = solver.layout_of(rho0)
    n = lay.n_fock
    big = 2 * n - 1
    rho_ph = hilbert.photon_reduced(rho0, lay)
    emb = np.zeros((big, big, big, big), dtype=complex)
    emb[:n, :n, :n, :n] = rho_ph.reshape(n, n, n, n)
    rho_big = emb.reshape(big * big, big * big)
    cd_det, cd_rej = _rotated_creators(big, theta_out)
    vac = np.zeros(big * big, dtype=complex)
    vac[0] = 1.0
    p = np.zeros(big)
    left = vac
    for k in range(big):
        psi = left
        for m in range(big - k):
            v = psi / np.sqrt(factorial(k) * factorial(m))
            p[k] += np.vdot(v, rho_big @ v).real
            psi = cd_rej @ psi
        left = cd_det @ left
    return PhotonNumberDist(p, float(theta_out))


def g2_lowdrive_check(dist: PhotonNumberDist, floor: float = ZERO_INTENSITY_FLOOR) -> float:
    """Low-drive estimate ``2 P_2 / P_1**2``."""
    p1 = dist.p[1]
    if p1 < floor:
        raise ZeroIntensity(f"P_1 = {p1:.3e} below floor {floor:.0e}")
    p2 = dist.p[2] if len(dist.p) > 2 else 0.0
    return float(2 * p2 / p1**2)


# -- fast evaluation over many polarizer angles ------------------------------

@dataclass
class MomentTable:
    """Normally ordered photon moments ``<aX^+^p aY^+^q aX^r aY^s>`` for
    ``p+q <= 2`` and ``r+s <= 2``, stored as ``m[p, q, r, s]``.

    Transmission and g2(0) for any linear polarizer follow by binomial
    expansion of ``A = cos a_X + sin a_Y``, which makes angle scans cheap.
    """

    m: np.ndarray = field(repr=False)

    @classmethod
    def from_density(cls, rho0: np.ndarray) -> "MomentTable":
        lay = solver.layout_of(rho0)
        n = lay.n_fock
        rho_ph = hilbert.photon_reduced(rho0, lay)
        a = hilbert.destroy(n)
        eye = np.eye(n)
        ax, ay = np.kron(a, eye), np.kron(eye, a)
        pw = lambda o, k: np.linalg.matrix_power(o, k)
        m = np.zeros((3, 3, 3, 3), dtype=complex)
        for p in range(3):
            for q in range(3 - p):
                left = pw(ax.conj().T, p) @ pw(ay.conj().T, q)
                for r in range(3):
                    for s in range(3 - r):
                        m[p, q, r, s] = np.trace(rho_ph @ left @ pw(ax, r) @ pw(ay, s))
        return cls(m)

    @classmethod
    def from_branches(cls, mx: np.ndarray, my: np.ndarray) -> "MomentTable":
        """From per-mode tables ``mx[p, r] = <a^+^p a^r>`` of independent modes."""
        return cls(np.einsum("pr,qs->pqrs", mx, my))

    def _order(self, k: int, thetas) -> np.ndarray:
        t = np.radians(np.atleast_1d(np.asarray(thetas, dtype=float)))
        c, s = np.cos(t), np.sin(t)
        out = np.zeros(t.shape, dtype=complex)
        for r1 in range(k + 1):
            w1 = comb(k, r1) * c**r1 * s ** (k - r1)
            for r2 in range(k + 1):
                w2 = comb(k, r2) * c**r2 * s ** (k - r2)
                out += w1 * w2 * self.m[r1, k - r1, r2, k - r2]
        return out.real

    def transmission(self, thetas) -> np.ndarray:
        return self._order(1, thetas)

    def second_moment(self, thetas) -> np.ndarray:
        return self._order(2, thetas)

    def g2(self, thetas, floor: float = ZERO_INTENSITY_FLOOR) -> np.ndarray:
        """g2(0) per angle; NaN where the transmission is below ``floor``."""
        t = self.transmission(thetas)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(t >= floor, self.second_moment(thetas) / t**2, np.nan)


def mode_moments(rho_branch: np.ndarray, n_fock: int) -> np.ndarray:
    """``mx[p, r] = <a^+^p a^r>`` (p, r <= 2) for a branch state ordered
    (mode, TLS)."""
    rho_mode = np.einsum("iaja->ij", rho_branch.reshape(n_fock, 2, n_fock, 2))
    a = hilbert.destroy(n_fock)
    ad = a.conj().T
    mx = np.zeros((3, 3), dtype=complex)
    for p in range(3):
        for r in range(3):
            mx[p, r] = np.trace(rho_mode @ np.linalg.matrix_power(ad, p) @ np.linalg.matrix_power(a, r))
    return mx
