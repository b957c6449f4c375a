"""Truncated joint Hilbert space of two cavity polarization modes and two
quantum-dot transitions.

Tensor order is fixed as (mode X, mode Y, TLS X, TLS Y). Each bosonic factor
holds photon numbers ``0 .. n_fock - 1``; each two-level factor is ordered
(ground, excited). Operators are plain dense complex ``numpy`` arrays and are
returned read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

MODES = ("X", "Y")


def _check_label(label: str) -> int:
    try:
        return MODES.index(label.upper())
    except (ValueError, AttributeError):
        raise ValueError(f"polarization label must be 'X' or 'Y', got {label!r}") from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpaceLayout:
    """Dimensions and index bookkeeping for the truncated joint space."""

    n_fock: int

    def __post_init__(self):
        if int(self.n_fock) != self.n_fock or self.n_fock < 2:
            raise ValueError(f"n_fock must be an integer >= 2, got {self.n_fock!r}")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.n_fock, self.n_fock, 2, 2)

    @property
    def dim(self) -> int:
        return self.n_fock * self.n_fock * 4

    @classmethod
    def from_dim(cls, dim: int) -> "SpaceLayout":
        n = int(round(np.sqrt(dim / 4)))
        if 4 * n * n != dim:
            raise ValueError(f"dimension {dim} is not of the form 4*n_fock**2")
        return cls(n)

    def encode(self, n_x: int, n_y: int, s_x: int, s_y: int) -> int:
        """Basis index of ``|n_x, n_y, s_x, s_y>``."""
        for v, hi in zip((n_x, n_y, s_x, s_y), self.dims):
            if not 0 <= v < hi:
                raise IndexError(f"quantum number {v} outside [0, {hi})")
        return int(np.ravel_multi_index((n_x, n_y, s_x, s_y), self.dims))

    def decode(self, index: int) -> tuple[int, int, int, int]:
        return tuple(int(i) for i in np.unravel_index(index, self.dims))

    def basis_state(self, n_x: int, n_y: int, s_x: int = 0, s_y: int = 0) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.encode(n_x, n_y, s_x, s_y)] = 1.0
        return v


def destroy(n: int) -> np.ndarray:
    """Single-mode annihilation operator with hard cutoff at ``n`` levels."""
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def tls_lowering() -> np.ndarray:
    return np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)


def kron_assemble(factors: Sequence[np.ndarray], layout: SpaceLayout | None = None) -> np.ndarray:
    """Kronecker product of single-factor matrices in layout order.

    Raises ``ValueError`` if the factor shapes do not match the layout
    (or, without a layout, if there are not exactly four square factors).
    """
    factors = [np.asarray(f, dtype=complex) for f in factors]
    if len(factors) != 4:
        raise ValueError(f"expected 4 factors, got {len(factors)}")
    for f in factors:
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ValueError(f"factor of shape {f.shape} is not square")
    if layout is not None:
        got = tuple(f.shape[0] for f in factors)
        if got != layout.dims:
            raise ValueError(f"factor dimensions {got} do not match layout {layout.dims}")
    elif factors[2].shape[0] != 2 or factors[3].shape[0] != 2:
        raise ValueError("two-level factors must be 2x2")
    return _frozen(reduce(np.kron, factors))


def _embed(layout: SpaceLayout, op: np.ndarray, slot: int) -> np.ndarray:
    factors = [np.eye(d, dtype=complex) for d in layout.dims]
    factors[slot] = op
    return kron_assemble(factors, layout)


def identity(layout: SpaceLayout) -> np.ndarray:
    return _frozen(np.eye(layout.dim, dtype=complex))


def annihilation(layout: SpaceLayout, mode: str) -> np.ndarray:
    """Photon annihilation operator of cavity mode ``mode`` ('X' or 'Y')."""
    return _embed(layout, destroy(layout.n_fock), _check_label(mode))


def qd_lowering(layout: SpaceLayout, transition: str) -> np.ndarray:
    """Lowering operator of the ``transition`` ('X' or 'Y') two-level system."""
    return _embed(layout, tls_lowering(), 2 + _check_label(transition))


def qd_sigma_z(layout: SpaceLayout, transition: str) -> np.ndarray:
    """Half-inversion ``(s^+ s - s s^+) / 2`` with eigenvalues +-1/2."""
    s = qd_lowering(layout, transition)
    sd = s.conj().T
    return _frozen(0.5 * (sd @ s - s @ sd))


def partial_trace(op: np.ndarray, layout: SpaceLayout, keep: Sequence[int]) -> np.ndarray:
    """Trace out every tensor factor whose slot index is not in ``keep``."""
    keep = sorted(set(keep))
    dims = layout.dims
    t = np.asarray(op).reshape(dims + dims)
    n = len(dims)
    # einsum subscripts: row indices a.., column indices A..; traced slots share a letter
    rows = list("abcd")
    cols = [c if i in keep else rows[i] for i, c in enumerate("ABCD")]
    out_rows = [rows[i] for i in keep]
    out_cols = [cols[i] for i in keep]
    spec = "".join(rows[:n]) + "".join(cols[:n]) + "->" + "".join(out_rows) + "".join(out_cols)
    r = np.einsum(spec, t)
    d = int(np.prod([dims[i] for i in keep])) if keep else 1
    return r.reshape(d, d)


def photon_reduced(rho: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    """Reduced photonic density matrix on (mode X, mode Y)."""
    return partial_trace(rho, layout, keep=(0, 1))
