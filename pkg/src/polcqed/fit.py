"""Least-squares estimation of system parameters from polarization-resolved
transmission spectra.

Each trace is a laser-detuning scan behind one output polarizer. Traces carry
an unknown amplitude, so every trace gets its own scale factor ``s_t``; by
default it is profiled out in closed form, ``s_t = <T_m, T_d> / <T_m, T_m>``.
The physical parameters are found with a Nelder-Mead simplex and seeded
restarts.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import model, solver
from .model import ParameterError, SystemParams

log = logging.getLogger(__name__)

FREE_FIELDS = ("kappa", "g", "gamma_par", "gamma_star", "f_qd_x", "f_qd_y")
_LOG_FIELDS = ("kappa", "g", "gamma_par", "gamma_star")  # positive rates, fitted in log space
MAX_FAILED_FRACTION = 0.10
MIN_POINTS = 10


class ForwardModelFailure(RuntimeError):
    """Too many forward-model evaluations failed during a fit."""


class NonFinite(ValueError):
    """Data or model output contains NaN or infinity."""


@dataclass(frozen=True)
class TransmissionTrace:
    theta_out: float
    detuning: np.ndarray  # GHz, laser minus cavity
    transmission: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.detuning, dtype=float)
        t = np.asarray(self.transmission, dtype=float)
        object.__setattr__(self, "detuning", d)
        object.__setattr__(self, "transmission", t)
        if d.shape != t.shape or d.ndim != 1:
            raise ValueError("detuning and transmission must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(t)) and np.isfinite(self.theta_out)):
            raise NonFinite(f"trace at theta_out={self.theta_out}: non-finite values")
        if len(d) < MIN_POINTS:
            raise ValueError(f"trace at theta_out={self.theta_out}: {len(d)} points, need >= {MIN_POINTS}")
        if np.any(np.diff(d) <= 0):
            raise ValueError(f"trace at theta_out={self.theta_out}: detunings not strictly increasing")
        if np.any(t < 0) or np.any(t > 1.05):
            raise ValueError(f"trace at theta_out={self.theta_out}: transmission outside [0, 1.05]")


@dataclass(frozen=True)
class TransmissionDataset:
    traces: tuple
    theta_in: float = 45.0

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        if not self.traces:
            raise ValueError("dataset has no traces")

    @property
    def n_points(self) -> int:
        return sum(len(t.detuning) for t in self.traces)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# theta_in_deg = {self.theta_in!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta_out_deg", "detuning_ghz", "transmission"])
            for tr in self.traces:
                for d, t in zip(tr.detuning, tr.transmission):
                    w.writerow([repr(float(tr.theta_out)), repr(float(d)), repr(float(t))])

    @classmethod
    def from_csv(cls, path, theta_in: Optional[float] = None) -> "TransmissionDataset":
        """Read the long format ``theta_out_deg, detuning_ghz, transmission``.

        A ``# theta_in_deg = ...`` comment line sets the input polarization
        unless ``theta_in`` is given; points are grouped by ``theta_out_deg``
        and sorted by detuning.
        """
        rows, header_theta_in = [], None
        with open(path, newline="") as fh:
            lines = []
            for line in fh:
                s = line.strip()
                if s.startswith("#"):
                    key, _, val = s.lstrip("#").partition("=")
                    if key.strip() == "theta_in_deg":
                        header_theta_in = float(val)
                elif s:
                    lines.append(line)
        reader = csv.DictReader(lines)
        need = {"theta_out_deg", "detuning_ghz", "transmission"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {', '.join(sorted(need))}")
        for i, r in enumerate(reader, start=2):
            try:
                rows.append((float(r["theta_out_deg"]), float(r["detuning_ghz"]), float(r["transmission"])))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {i}: cannot parse numbers") from None
        groups: dict[float, list] = {}
        for th, d, t in rows:
            groups.setdefault(th, []).append((d, t))
        traces = []
        for th, pts in groups.items():
            pts.sort()
            traces.append(TransmissionTrace(th, [p[0] for p in pts], [p[1] for p in pts]))
        if theta_in is None:
            theta_in = header_theta_in if header_theta_in is not None else 45.0
        return cls(tuple(traces), float(theta_in))


@dataclass
class FitResult:
    params: SystemParams
    per_trace_scales: np.ndarray
    sse: float
    n_evals: int
    converged: bool
    free: tuple = ()
    n_failed: int = 0
    history: list = field(default_factory=list, repr=False)  # best objective per accepted step

    def to_json(self) -> str:
        return json.dumps({
            "params": self.params.to_config(),
            "free": list(self.free),
            "per_trace_scales": [float(s) for s in self.per_trace_scales],
            "sse": float(self.sse),
            "n_evals": int(self.n_evals),
            "n_failed": int(self.n_failed),
            "converged": bool(self.converged),
        }, indent=2, sort_keys=True)


# -- forward model --------------------------------------------------------------

def _branch_observables(p: SystemParams, detunings: np.ndarray):
    """Per-branch ``<a^+ a>`` and ``<a>`` at every laser detuning."""
    n = int(p.n_fock)
    f = np.asarray(detunings, dtype=float)
    k = len(f)
    weights = []
    for j, pol in enumerate(("X", "Y")):
        w = np.tile(model.branch_weights(p, pol), (k, 1))
        f_cav = (p.f_cav_x, p.f_cav_y)[j]
        f_qd = (p.f_qd_x, p.f_qd_y)[j]
        w[:, 0] = model.TWO_PI * (f - f_cav)
        if (p.qd_x_enabled, p.qd_y_enabled)[j]:
            w[:, 1] = model.TWO_PI * (f - f_qd)
        weights.append(w)
    Ls = model.branch_liouvillian_stack(np.concatenate(weights), n)
    rhos, res = solver.branch_steady_states(Ls)
    bad = ~np.isfinite(res) | (res > solver.RESIDUAL_TARGET)
    if np.any(bad):
        raise solver.SolverSingular(f"{int(bad.sum())} branch steady states failed")
    rho_mode = np.einsum("kiaja->kij", rhos.reshape(2 * k, n, 2, n, 2))
    occ = rho_mode.diagonal(axis1=1, axis2=2).real @ np.arange(n)
    # <a> = sum_n sqrt(n+1) rho[n+1, n]
    amp = rho_mode.diagonal(offset=-1, axis1=1, axis2=2) @ np.sqrt(np.arange(1, n))
    return occ[:k], occ[k:], amp[:k], amp[k:]


def model_transmission(p: SystemParams, detunings, thetas) -> np.ndarray:
    """Detected mean photon number on a (detuning, polarizer angle) grid,
    shape ``(len(detunings), len(thetas))``."""
    nx, ny, ax, ay = _branch_observables(p, detunings)
    t = np.radians(np.atleast_1d(np.asarray(thetas, dtype=float)))
    c, s = np.cos(t), np.sin(t)
    cross = (np.conj(ax) * ay).real
    return np.outer(nx, c**2) + np.outer(ny, s**2) + 2 * np.outer(cross, c * s)


def model_traces(p: SystemParams, data: TransmissionDataset) -> list[np.ndarray]:
    """Unscaled model transmission for every trace of ``data``."""
    p = p.replace(theta_in=data.theta_in) if p.theta_in != data.theta_in else p
    dets = np.unique(np.concatenate([tr.detuning for tr in data.traces]))
    thetas = sorted({tr.theta_out for tr in data.traces})
    grid = model_transmission(p, dets, thetas)
    out = []
    for tr in data.traces:
        col = grid[:, thetas.index(tr.theta_out)]
        out.append(col[np.searchsorted(dets, tr.detuning)])
    return out


def profiled_scales(models: Sequence[np.ndarray], data: TransmissionDataset) -> np.ndarray:
    """Closed-form least-squares amplitude of each trace."""
    out = []
    for m, tr in zip(models, data.traces):
        mm = float(m @ m)
        out.append(float(m @ tr.transmission) / mm if mm > 0 else 0.0)
    return np.array(out)


def objective(params: SystemParams, scales: Optional[Sequence[float]], data: TransmissionDataset) -> float:
    """``sum_t sum_i (s_t T_model - T_data)**2``. With ``scales=None`` every
    ``s_t`` takes its least-squares value for the given parameters."""
    models = model_traces(params, data)
    s = profiled_scales(models, data) if scales is None else np.asarray(scales, dtype=float)
    if len(s) != len(data.traces):
        raise ValueError(f"{len(s)} scales for {len(data.traces)} traces")
    sse = float(sum(np.sum((si * m - tr.transmission) ** 2) for si, m, tr in zip(s, models, data.traces)))
    if not np.isfinite(sse):
        raise NonFinite("objective is not finite")
    return sse


# -- optimizer ------------------------------------------------------------------

def _get(p: SystemParams, name: str) -> float:
    return p.g_x if name == "g" else getattr(p, name)


class _Coordinates:
    """Map between the optimizer vector and parameter sets: rates in log
    space relative to ``init``, QD frequencies as GHz offsets from ``init``."""

    def __init__(self, init: SystemParams, free: Sequence[str]):
        self.init = init
        self.free = tuple(free)

    def to_params(self, x: np.ndarray) -> SystemParams:
        changes = {}
        for name, xi in zip(self.free, x):
            v0 = _get(self.init, name)
            changes[name] = v0 * float(np.exp(xi)) if name in _LOG_FIELDS else v0 + float(xi)
        return self.init.replace(**changes)


def _check_free(init: SystemParams, free: Iterable[str]) -> tuple:
    requested = set(free)
    bad = sorted(requested - set(FREE_FIELDS))
    if bad:
        raise ValueError(f"cannot fit {', '.join(bad)}; allowed: {', '.join(FREE_FIELDS)}")
    free = tuple(f for f in FREE_FIELDS if f in requested)
    if not free:
        raise ValueError("no free parameters")
    for name in free:
        if name in _LOG_FIELDS and not _get(init, name) > 0:
            raise ParameterError(f"initial {name} must be > 0 to be fitted")
    return free


def fit_parameters(data: TransmissionDataset, init: SystemParams, free: Iterable[str],
                   restarts: int = 3, seed: int = 0, step: float = 0.15,
                   xatol: float = 1e-6, fatol: float = 1e-14, maxfev: int = 4000) -> FitResult:
    """Minimize the profiled sum of squared residuals over ``free``.

    The first simplex starts at ``init``; each restart rebuilds a randomly
    oriented simplex of size ``step`` around the best point so far, drawn
    from ``numpy.random.default_rng(seed)``. Free rates are varied in log
    space so they stay positive.
    """
    free = _check_free(init, free)
    init = init.replace(theta_in=data.theta_in)
    coords = _Coordinates(init, free)
    rng = np.random.default_rng(seed)
    counts = {"evals": 0, "failed": 0}

    def f(x):
        counts["evals"] += 1
        try:
            return objective(coords.to_params(x), None, data)
        except (solver.SolverSingular, ParameterError, NonFinite, np.linalg.LinAlgError) as exc:
            counts["failed"] += 1
            log.debug("forward model failed at %s: %s", x, exc)
            return np.inf

    history: list[float] = []

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    d = len(free)
    x_best = np.zeros(d)
    f_best = f(x_best)
    simplex = np.vstack([x_best, x_best + step * np.eye(d)])
    best_success, stalled = False, False
    for run in range(restarts + 1):
        if run > 0:
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            simplex = np.vstack([x_best, x_best + step * q.T])
        res = minimize(f, x_best, method="Nelder-Mead", callback=record,
                       options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
                                "maxfev": maxfev, "adaptive": d > 4})
        gain = f_best - res.fun if np.isfinite(f_best) else np.inf
        if res.fun <= f_best:
            x_best, f_best, best_success = np.asarray(res.x), float(res.fun), bool(res.success)
        # a restart that cannot improve the best point confirms the minimum
        stalled = gain <= max(fatol, 1e-9 * abs(f_best))
        log.info("fit run %d: sse=%.6e evals=%d", run, res.fun, counts["evals"])
    converged = best_success and (restarts == 0 or stalled)

    if counts["failed"] > MAX_FAILED_FRACTION * counts["evals"]:
        raise ForwardModelFailure(f"{counts['failed']} of {counts['evals']} model evaluations failed")
    if not np.isfinite(f_best):
        raise ForwardModelFailure("no successful model evaluation")
    best = coords.to_params(x_best)
    scales = profiled_scales(model_traces(best, data), data)
    return FitResult(best, scales, f_best, counts["evals"], converged, free, counts["failed"], history)


# -- synthetic data ---------------------------------------------------------------

SYNTHETIC_THETAS = (-65.0, -45.0, -25.0, 0.0, 45.0, 90.0)


def synthetic_dataset(p: SystemParams, thetas: Sequence[float] = SYNTHETIC_THETAS,
                      detunings: Optional[Sequence[float]] = None, noise: float = 0.0,
                      seed: Optional[int] = None) -> TransmissionDataset:
    """Model traces normalized to a global maximum of 1, with optional
    Gaussian noise of standard deviation ``noise`` (clipped to [0, 1.05])."""
    dets = np.linspace(-8.0, 8.0, 81) if detunings is None else np.asarray(detunings, dtype=float)
    grid = model_transmission(p, dets, thetas)
    grid = grid / grid.max()
    if noise > 0:
        grid = grid + noise * np.random.default_rng(seed).standard_normal(grid.shape)
    grid = np.clip(grid, 0.0, 1.05)
    traces = tuple(TransmissionTrace(float(th), dets.copy(), grid[:, i]) for i, th in enumerate(thetas))
    return TransmissionDataset(traces, float(p.theta_in))


def save_result(result: FitResult, path) -> None:
    Path(path).write_text(result.to_json() + "\n")
