"""Steady states of the Liouvillian and time propagation of vectorized
operators."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from . import model
from .hilbert import SpaceLayout

log = logging.getLogger(__name__)

RESIDUAL_TARGET = 1e-9
DIRECT_MAX_DIM = 2000


class SolverSingular(RuntimeError):
    """Trace-augmented steady-state system is numerically rank deficient."""


class NoConvergence(RuntimeError):
    """Iterative solve or time integration failed to reach its tolerance."""


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.shape[-1])))
    return np.asarray(v).reshape(v.shape[:-1] + (d, d), order="F")


def trace_row(dim: int) -> np.ndarray:
    t = np.zeros(dim * dim, dtype=complex)
    t[:: dim + 1] = 1.0
    return t


def residual(L, rho: np.ndarray) -> float:
    """Relative residual ``|L vec(rho)| / |vec(rho)|``."""
    v = vec(rho)
    return float(np.linalg.norm(L @ v) / np.linalg.norm(v))


def _augment(L, k: int):
    """Replace the row of diagonal element ``k`` by the trace equation."""
    n = L.shape[0]
    dim = int(round(np.sqrt(n)))
    if not 0 <= k < dim:
        raise ValueError(f"trace row index {k} outside [0, {dim})")
    row = k * (dim + 1)
    L = sp.csr_matrix(L, dtype=complex)
    keep = sp.diags(np.where(np.arange(n) == row, 0.0, 1.0)) @ L
    tr = sp.csr_matrix((np.ones(dim), (np.full(dim, row), np.arange(dim) * (dim + 1))), shape=(n, n))
    b = np.zeros(n, dtype=complex)
    b[row] = 1.0
    return (keep + tr).tocsc(), b


def steady_state(L, *, method: str = "auto", trace_index: int = 0,
                 direct_max_dim: int = DIRECT_MAX_DIM) -> np.ndarray:
    """Solve ``L rho = 0`` with ``Tr rho = 1``.

    One redundant row (the equation for diagonal element ``trace_index``) is
    replaced by the trace condition. ``method`` is ``'direct'`` (sparse LU),
    ``'iterative'`` (restarted GMRES) or ``'auto'``, which picks direct up to
    ``direct_max_dim`` rows of ``L``.
    """
    n = L.shape[0]
    A, b = _augment(L, trace_index)
    if method == "auto":
        method = "direct" if n <= direct_max_dim else "iterative"
    if method == "direct":
        try:
            x = spla.splu(A).solve(b)
        except RuntimeError as exc:
            raise SolverSingular(str(exc)) from exc
    elif method == "iterative":
        x, info = spla.gmres(A, b, rtol=1e-13, atol=0.0, restart=300, maxiter=200)
        if info != 0:
            raise NoConvergence(f"GMRES did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverSingular("non-finite steady-state solution")
    rho = unvec(x)
    rho = rho / np.trace(rho)
    res = residual(L, rho)
    if res > RESIDUAL_TARGET:
        if method == "iterative":
            raise NoConvergence(f"steady-state residual {res:.2e} above {RESIDUAL_TARGET:.0e}")
        raise SolverSingular(f"steady-state residual {res:.2e} above {RESIDUAL_TARGET:.0e}")
    return rho


def branch_steady_states(Ls: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched dense steady states for a stack of small Liouvillians.

    Returns ``(rhos, residuals)``; failed entries are NaN.
    """
    Ls = np.asarray(Ls, dtype=complex)
    k, n, _ = Ls.shape
    dim = int(round(np.sqrt(n)))
    A = Ls.copy()
    A[:, 0, :] = 0.0
    A[:, 0, :: dim + 1] = 1.0
    b = np.zeros((k, n), dtype=complex)
    b[:, 0] = 1.0
    x = np.full((k, n), np.nan, dtype=complex)
    try:
        x = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for i in range(k):
            try:
                x[i] = np.linalg.solve(A[i], b[i])
            except np.linalg.LinAlgError:
                pass
    tr = x[:, :: dim + 1].sum(axis=1)
    v = x / tr[:, None]
    rhos = unvec(v)
    res = np.linalg.norm(np.einsum("kij,kj->ki", Ls, v), axis=1) / np.linalg.norm(v, axis=1)
    return rhos, res


def combine_branches(rho_x: np.ndarray, rho_y: np.ndarray, n_fock: int) -> np.ndarray:
    """Joint density matrix in (mode X, mode Y, TLS X, TLS Y) order from the
    two branch states, each ordered (mode, TLS)."""
    n = n_fock
    t = np.kron(rho_x, rho_y).reshape(n, 2, n, 2, n, 2, n, 2)
    # (nx, sx, ny, sy ; nx', sx', ny', sy') -> (nx, ny, sx, sy ; ...)
    t = t.transpose(0, 2, 1, 3, 4, 6, 5, 7)
    d = 4 * n * n
    return t.reshape(d, d)


def steady_state_factorized(p: model.SystemParams) -> np.ndarray:
    """Joint steady state assembled from the two independent branches."""
    Ls = np.stack([model.branch_liouvillian(p, "X"), model.branch_liouvillian(p, "Y")])
    rhos, res = branch_steady_states(Ls)
    if not np.all(np.isfinite(res)) or np.max(res) > RESIDUAL_TARGET:
        raise SolverSingular(f"branch residuals {res} above {RESIDUAL_TARGET:.0e}")
    return combine_branches(rhos[0], rhos[1], int(p.n_fock))


@dataclass(frozen=True)
class DensityReport:
    trace: float
    hermiticity_error: float
    min_eigenvalue: float

    def ok(self, tol_trace=1e-10, tol_herm=1e-10, tol_neg=1e-8) -> bool:
        return (abs(self.trace - 1) < tol_trace and self.hermiticity_error < tol_herm
                and self.min_eigenvalue >= -tol_neg)


def density_report(rho: np.ndarray) -> DensityReport:
    """Trace, Hermiticity error and smallest eigenvalue. Positivity is
    reported here, never enforced by the solvers."""
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    ev = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    rep = DensityReport(float(np.trace(rho).real), herm, float(ev[0]))
    if ev[0] < 0:
        log.debug("density matrix min eigenvalue %.3e", ev[0])
    return rep


@dataclass(frozen=True)
class PropagationSpec:
    """Sampling and tolerances for ``propagate``: ``n_samples`` equally
    spaced delays on ``[0, tau_max]`` (ns)."""

    tau_max: float
    n_samples: int
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10

    def __post_init__(self):
        if not self.tau_max > 0:
            raise ValueError("tau_max must be > 0")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        for t in (self.rel_tol, self.abs_tol):
            if not 0 < t <= 1e-2:
                raise ValueError("tolerances must lie in (0, 1e-2]")

    @property
    def taus(self) -> np.ndarray:
        return np.linspace(0.0, self.tau_max, self.n_samples)


def propagate(L, v0: np.ndarray, spec: PropagationSpec) -> np.ndarray:
    """``exp(L tau) v0`` at ``spec.taus`` by adaptive Dormand-Prince 8(5,3)
    integration. Returns shape ``(n_samples, len(v0))``."""
    v0 = np.asarray(v0, dtype=complex)
    if v0.shape != (L.shape[1],):
        raise ValueError(f"v0 has shape {v0.shape}, expected ({L.shape[1]},)")
    L = sp.csr_matrix(L)
    sol = solve_ivp(lambda t, y: L @ y, (0.0, spec.tau_max), v0, method="DOP853",
                    t_eval=spec.taus, rtol=spec.rel_tol, atol=spec.abs_tol)
    if not sol.success:
        raise NoConvergence(sol.message)
    return sol.y.T


def layout_of(rho: np.ndarray) -> SpaceLayout:
    return SpaceLayout.from_dim(rho.shape[0])
