"""Parameter scans reproducing the transmission, g2 and photon-number
scenarios, with truncation-convergence checks.

Every grid point is an independent task: its steady state is computed from
the two polarization branches (or, with ``route='joint'``, from the full
Liouvillian), and the polarizer angle axis is evaluated afterwards from a
moment table because it does not change the state.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import __version__, model, observables, solver
from .model import SystemParams

log = logging.getLogger(__name__)

SCENARIOS = (
    "transmission_map",
    "g2_map",
    "g2_trace_point",
    "pn_vs_theta",
    "kappa_sweep",
    "ablation_single_transition",
    "dephasing_study",
)

DEFAULT_NBAR = 0.01
_NUMERIC_FIELDS = ("kappa", "g_x", "g_y", "gamma_par", "gamma_star", "f_cav_x", "f_cav_y",
                   "f_qd_x", "f_qd_y", "f_laser", "eta", "theta_in")
AXIS_NAMES = _NUMERIC_FIELDS + ("g", "qd_common_offset", "theta_out")


class NotFound(LookupError):
    """No interior transmission minimum where one was required."""


@dataclass(frozen=True)
class Axis:
    name: str
    start: float
    stop: float
    n_points: int

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise ValueError(f"unknown axis {self.name!r}; expected one of {', '.join(AXIS_NAMES)}")
        if self.n_points < 2:
            raise ValueError(f"axis {self.name!r} needs n_points >= 2")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.n_points)


def default_axes(scenario: str) -> tuple[Axis, ...]:
    """Grids used when a spec gives none: 1 degree polarizer steps and
    0.1 GHz frequency steps."""
    theta_full = Axis("theta_out", -90.0, 90.0, 181)
    theta_half = Axis("theta_out", -90.0, 0.0, 91)
    return {
        "transmission_map": (Axis("f_laser", -8.0, 8.0, 161), theta_full),
        "g2_map": (Axis("qd_common_offset", -6.0, 6.0, 121), theta_half),
        "ablation_single_transition": (Axis("qd_common_offset", -6.0, 6.0, 121), theta_half),
        "dephasing_study": (Axis("qd_common_offset", -6.0, 6.0, 121), theta_half),
        "pn_vs_theta": (theta_full,),
        "kappa_sweep": (Axis("f_laser", -8.0, 8.0, 81), theta_full),
        "g2_trace_point": (),
    }[scenario]


@dataclass
class SweepSpec:
    """One scenario run.

    ``axes`` spans the grid (at most two axes). For ``kappa_sweep`` and
    ``dephasing_study`` they span the inner map of every variant, and the
    variants are given by ``kappas`` or ``variants`` respectively.
    """

    scenario: str
    base: SystemParams
    axes: tuple = ()
    theta_out: float = -45.0
    output: Optional[Path] = None
    workers: int = 1
    route: str = "factorized"
    kappas: tuple = ()
    target_nbar: float = DEFAULT_NBAR
    variants: dict = field(default_factory=dict)
    tau_max: float = 4.0
    n_tau: int = 801
    jitters_ps: tuple = ()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not self.axes:
            self.axes = default_axes(self.scenario)
        self.axes = tuple(self.axes)
        if len(self.axes) > 2:
            raise ValueError("at most two sweep axes are supported")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate axis names {names}")
        if self.route not in ("factorized", "joint"):
            raise ValueError(f"unknown route {self.route!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.scenario == "ablation_single_transition" and (
                self.base.qd_x_enabled and self.base.qd_y_enabled):
            raise ValueError("ablation needs one QD transition disabled")

    def params_hash(self) -> str:
        blob = json.dumps({"base": self.base.to_config(), "axes": [vars(a) for a in self.axes],
                           "scenario": self.scenario, "theta_out": self.theta_out,
                           "route": self.route}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class MapMaximum:
    value: float
    coords: dict
    value_next_fock: float = float("nan")
    checked: int = 0


@dataclass
class SweepResult:
    spec: SweepSpec
    coords: dict
    t_raw: Optional[np.ndarray] = None
    t_colnorm: Optional[np.ndarray] = None
    g2: Optional[np.ndarray] = None
    pn: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None
    failures: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    maxima: list = field(default_factory=list)
    children: list = field(default_factory=list)
    trace: Optional[observables.CorrelationTrace] = None
    convolved: list = field(default_factory=list)

    @property
    def axis_names(self) -> list[str]:
        return list(self.coords)


def calibrate_eta(kappa: float, target_nbar: float) -> float:
    """Drive giving mean photon number ``target_nbar`` for a co-polarized,
    resonant, empty cavity: ``eta = kappa * sqrt(target_nbar)``."""
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    if target_nbar < 0:
        raise ValueError("target_nbar must be >= 0")
    return float(kappa * np.sqrt(target_nbar))


# -- per-point evaluation -----------------------------------------------------

def _point_params(base: SystemParams, names: Sequence[str], values: Sequence[float]) -> SystemParams:
    return base.replace(**{n: float(v) for n, v in zip(names, values)})


def point_state(p: SystemParams, route: str = "factorized"):
    """Steady state at one parameter point: ``(moment table, residual, rho or None)``.

    The factorized route returns no joint density matrix (it is only built
    on demand); the joint route returns it.
    """
    if route == "joint":
        L = model.build_liouvillian(p)
        rho = solver.steady_state(L)
        return observables.MomentTable.from_density(rho), solver.residual(L, rho), rho
    n = int(p.n_fock)
    w = np.stack([model.branch_weights(p, "X"), model.branch_weights(p, "Y")])
    rhos, res = solver.branch_steady_states(model.branch_liouvillian_stack(w, n))
    r = float(np.max(res))
    if not np.isfinite(r) or r > solver.RESIDUAL_TARGET:
        raise solver.SolverSingular(f"branch residual {r:.2e}")
    mx = observables.mode_moments(rhos[0], n)
    my = observables.mode_moments(rhos[1], n)
    return observables.MomentTable.from_branches(mx, my), r, None


def _joint_rho(p: SystemParams, route: str) -> np.ndarray:
    if route == "joint":
        return solver.steady_state(model.build_liouvillian(p))
    return solver.steady_state_factorized(p)


def _map(fn, items, workers: int):
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _grid(spec: SweepSpec):
    axes = spec.axes
    theta_idx = [i for i, a in enumerate(axes) if a.name == "theta_out"]
    state_axes = [a for a in axes if a.name != "theta_out"]
    thetas = axes[theta_idx[0]].values if theta_idx else np.array([spec.theta_out])
    state_points = list(np.ndindex(*[a.n_points for a in state_axes])) or [()]
    return axes, theta_idx, state_axes, thetas, state_points


def _evaluate_grid(spec: SweepSpec, base: Optional[SystemParams] = None,
                   want_pn: bool = False) -> SweepResult:
    base = base or spec.base
    axes, theta_idx, state_axes, thetas, points = _grid(spec)
    names = [a.name for a in state_axes]
    values = [a.values for a in state_axes]

    def task(idx):
        p = _point_params(base, names, [values[k][i] for k, i in enumerate(idx)])
        try:
            mt, res, rho = point_state(p, spec.route)
            t = mt.transmission(thetas)
            g = mt.g2(thetas)
            pn = None
            if want_pn:
                rho = rho if rho is not None else _joint_rho(p, spec.route)
                pn = np.stack([observables.photon_number_dist(rho, th).p for th in thetas])
            return idx, t, g, pn, res, None
        except (solver.SolverSingular, solver.NoConvergence, np.linalg.LinAlgError) as exc:
            return idx, None, None, None, np.nan, f"{type(exc).__name__}: {exc}"

    out = _map(task, points, spec.workers)

    shape_state = tuple(a.n_points for a in state_axes)
    nt = len(thetas)
    t_arr = np.full(shape_state + (nt,), np.nan)
    g_arr = np.full(shape_state + (nt,), np.nan)
    res_arr = np.full(shape_state, np.nan) if shape_state else np.full((), np.nan)
    pn_arr = None
    failures = {}
    for idx, t, g, pn, res, err in out:
        res_arr[idx] = res
        if err is not None:
            failures[idx] = err
            log.warning("sweep cell %s failed: %s", idx, err)
            continue
        t_arr[idx] = t
        g_arr[idx] = g
        if pn is not None:
            if pn_arr is None:
                pn_arr = np.full(shape_state + (nt, pn.shape[-1]), np.nan)
            pn_arr[idx] = pn

    # state axes first, theta last; restore the requested axis order
    order = [a.name for a in state_axes] + ["theta_out"]
    if not theta_idx:
        t_arr, g_arr = t_arr[..., 0], g_arr[..., 0]
        if pn_arr is not None:
            pn_arr = pn_arr[..., 0, :]
        order = order[:-1]
    perm = [order.index(a.name) for a in axes]
    t_arr = np.transpose(t_arr, perm)
    g_arr = np.transpose(g_arr, perm)
    if pn_arr is not None:
        pn_arr = np.transpose(pn_arr, perm + [len(perm)])

    if theta_idx:
        col_axes = tuple(i for i in range(len(axes)) if i != theta_idx[0])
        colmax = np.nanmax(t_arr, axis=col_axes, keepdims=True) if col_axes else t_arr
    else:
        colmax = np.nanmax(t_arr) if t_arr.size else np.nan
    with np.errstate(invalid="ignore", divide="ignore"):
        t_norm = t_arr / colmax

    coords = {a.name: a.values for a in axes}
    meta = {
        "version": __version__,
        "scenario": spec.scenario,
        "params_hash": spec.params_hash(),
        "n_fock": int(base.n_fock),
        "route": spec.route,
        "max_residual": float(np.nanmax(res_arr)) if np.isfinite(res_arr).any() else float("nan"),
        "n_failed": len(failures),
    }
    return SweepResult(spec, coords, t_arr, t_norm, g_arr, pn_arr, res_arr, failures, meta)


# -- maxima and convergence ---------------------------------------------------

def _cell_value(spec: SweepSpec, base: SystemParams, coords: dict) -> float:
    names = [n for n in coords if n != "theta_out"]
    p = _point_params(base, names, [coords[n] for n in names])
    mt, _, _ = point_state(p, spec.route)
    theta = coords.get("theta_out", spec.theta_out)
    return float(mt.g2([theta])[0])


def converged_maximum(result: SweepResult, rel_tol: float = 0.02, max_checks: int = 2000,
                      base: Optional[SystemParams] = None) -> MapMaximum:
    """Largest g2(0) on the map whose value changes by less than ``rel_tol``
    when the truncation is raised to ``n_fock + 1``.

    Near exact cross-polarization the transmitted intensity can be small
    enough that truncation artifacts dominate g2; such cells are skipped.
    """
    spec = result.spec
    base = base or spec.base
    bigger = base.replace(n_fock=int(base.n_fock) + 1)
    g = result.g2
    flat = np.where(np.isfinite(g), g, -np.inf).ravel()
    order = np.argsort(flat, kind="stable")[::-1]
    names = list(result.coords)
    cache = {}
    for k, fi in enumerate(order[:max_checks]):
        if not np.isfinite(flat[fi]):
            break
        idx = np.unravel_index(fi, g.shape)
        coords = {n: float(result.coords[n][i]) for n, i in zip(names, idx)}
        key = tuple(sorted(coords.items()))
        if key not in cache:
            try:
                cache[key] = _cell_value(spec, bigger, coords)
            except (solver.SolverSingular, np.linalg.LinAlgError):
                cache[key] = np.nan
        v_next = cache[key]
        if abs(v_next - flat[fi]) < rel_tol * abs(flat[fi]):
            return MapMaximum(float(flat[fi]), coords, float(v_next), k + 1)
    raise NotFound("no g2 maximum passed the truncation-convergence check")


def raw_maximum(result: SweepResult) -> MapMaximum:
    g = result.g2
    fi = int(np.nanargmax(g))
    idx = np.unravel_index(fi, g.shape)
    coords = {n: float(result.coords[n][i]) for n, i in zip(result.coords, idx)}
    return MapMaximum(float(g[idx]), coords)


def convergence_audit(spec: SweepSpec) -> tuple[float, float]:
    """Converged g2 maximum at ``n_fock`` and at ``n_fock + 1``."""
    a = converged_maximum(run_sweep(spec)).value
    bigger = SweepSpec(**{**vars(spec), "base": spec.base.replace(n_fock=int(spec.base.n_fock) + 1)})
    b = converged_maximum(run_sweep(bigger)).value
    return a, b


def eta_sensitivity(spec: SweepSpec) -> tuple[float, float]:
    """Converged g2 maximum at the configured drive and at half the drive."""
    a = converged_maximum(run_sweep(spec)).value
    half = SweepSpec(**{**vars(spec), "base": spec.base.replace(eta=spec.base.eta / 2)})
    b = converged_maximum(run_sweep(half)).value
    return a, b


# -- scenarios ----------------------------------------------------------------

def run_sweep(spec: SweepSpec) -> SweepResult:
    """Evaluate a scenario. Per-cell solver failures become NaN cells listed
    in ``result.failures``; the result is independent of ``workers``."""
    sc = spec.scenario
    if sc == "kappa_sweep":
        return _kappa_sweep(spec)
    if sc == "dephasing_study":
        return _variant_study(spec)
    if sc == "g2_trace_point":
        return _trace_point(spec)
    res = _evaluate_grid(spec, want_pn=(sc == "pn_vs_theta"))
    if sc in ("g2_map", "ablation_single_transition"):
        try:
            res.maxima = [converged_maximum(res)]
        except NotFound:
            res.maxima = []
    return res


def _kappa_sweep(spec: SweepSpec) -> SweepResult:
    kappas = np.asarray(spec.kappas or spec.base.kappa * np.array([0.5, 1, 2, 4, 8]), dtype=float)
    maxima, children = [], []
    for k in kappas:
        base = spec.base.replace(kappa=float(k), eta=calibrate_eta(float(k), spec.target_nbar))
        child_spec = SweepSpec(**{**vars(spec), "scenario": "g2_map", "base": base})
        child = _evaluate_grid(child_spec)
        child.maxima = [converged_maximum(child)]
        maxima.append(child.maxima[0])
        children.append(child)
    g = np.array([m.value for m in maxima])
    meta = {"version": __version__, "scenario": spec.scenario, "params_hash": spec.params_hash(),
            "n_fock": int(spec.base.n_fock), "target_nbar": spec.target_nbar}
    return SweepResult(spec, {"kappa": kappas}, g2=g, metadata=meta, maxima=maxima, children=children)


DEPHASING_VARIANTS = {
    "base": {},
    "gamma_star_0.5": {"gamma_star": 0.5},
    "g_half": {"g_scale": 0.5},
    "kappa_half": {"kappa_scale": 0.5},
}


def _apply_variant(base: SystemParams, changes: dict) -> SystemParams:
    changes = dict(changes)
    if "g_scale" in changes:
        s = changes.pop("g_scale")
        changes["g_x"], changes["g_y"] = base.g_x * s, base.g_y * s
    if "kappa_scale" in changes:
        changes["kappa"] = base.kappa * changes.pop("kappa_scale")
    return base.replace(**changes)


def _variant_study(spec: SweepSpec) -> SweepResult:
    variants = spec.variants or DEPHASING_VARIANTS
    maxima, children = [], []
    for name, changes in variants.items():
        base = _apply_variant(spec.base, changes)
        child_spec = SweepSpec(**{**vars(spec), "scenario": "g2_map", "base": base})
        child = _evaluate_grid(child_spec)
        child.maxima = [converged_maximum(child)]
        child.metadata["variant"] = name
        maxima.append(child.maxima[0])
        children.append(child)
    meta = {"version": __version__, "scenario": spec.scenario, "params_hash": spec.params_hash(),
            "n_fock": int(spec.base.n_fock)}
    return SweepResult(spec, {"variant": np.array(list(variants))},
                       g2=np.array([m.value for m in maxima]), metadata=meta,
                       maxima=maxima, children=children)


def correlation_at(p: SystemParams, theta_out: float, tau_max: float = 4.0, n_tau: int = 801,
                   jitters_ps: Sequence[float] = (), route: str = "joint"):
    """g2(tau) at one point plus its detector-convolved versions."""
    L = model.build_liouvillian(p)
    rho = _joint_rho(p, route)
    tr = observables.g2_trace(L, rho, theta_out, solver.PropagationSpec(tau_max, n_tau))
    return tr, [observables.convolve_detector(tr, j) for j in jitters_ps]


def bunching_point(base: SystemParams, axes: tuple = (), workers: int = 1):
    """Operating point of the converged g2(0) maximum of a g2 map:
    ``(params, theta_out, maximum)``."""
    res = _evaluate_grid(SweepSpec("g2_map", base, axes, workers=workers))
    m = converged_maximum(res)
    names = [n for n in m.coords if n != "theta_out"]
    p = _point_params(base, names, [m.coords[n] for n in names])
    return p, float(m.coords.get("theta_out", -45.0)), m


def _trace_point(spec: SweepSpec) -> SweepResult:
    tr, conv = correlation_at(spec.base, spec.theta_out, spec.tau_max, spec.n_tau,
                              spec.jitters_ps, spec.route)
    meta = {"version": __version__, "scenario": spec.scenario, "params_hash": spec.params_hash(),
            "n_fock": int(spec.base.n_fock), "theta_out": spec.theta_out}
    return SweepResult(spec, {"tau": tr.tau}, g2=tr.g2, metadata=meta, trace=tr, convolved=conv)


# -- special polarizer angles -------------------------------------------------

@dataclass(frozen=True)
class SpecialAngle:
    theta_out: float
    f_laser: float
    transmission: float
    transition: str


def _quadratic_refine(fn, f0: float, th0: float, hf: float, hth: float, n_iter: int = 8):
    """Iterated local quadratic interpolation of ``fn(f, theta)`` on a 3x3
    stencil; the stencil is re-centred on the fitted vertex and halved each
    iteration."""
    u = np.array([-1.0, 0.0, 1.0])
    U, V = np.meshgrid(u, u, indexing="ij")
    design = np.column_stack([np.ones(9), U.ravel(), V.ravel(), U.ravel() ** 2,
                              U.ravel() * V.ravel(), V.ravel() ** 2])
    for _ in range(n_iter):
        z = fn(f0 + hf * u, th0 + hth * u).ravel()
        c = np.linalg.lstsq(design, z, rcond=None)[0]
        hess = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
        try:
            step = -np.linalg.solve(hess, c[1:3])
        except np.linalg.LinAlgError:
            step = np.zeros(2)
        if np.any(np.linalg.eigvalsh(hess) <= 0) or not np.all(np.isfinite(step)):
            # not locally convex: move to the best stencil point instead
            k = int(np.argmin(z))
            step = np.array([U.ravel()[k], V.ravel()[k]])
        step = np.clip(step, -1.0, 1.0)
        f0, th0 = f0 + step[0] * hf, th0 + step[1] * hth
        hf, hth = hf / 2, hth / 2
    return f0, th0


def find_special_angles(base: SystemParams, theta_grid=None, laser_grid=None,
                        window_ghz: float = 1.0, workers: int = 1) -> tuple[SpecialAngle, SpecialAngle]:
    """Locate the two single-photon transmission minima next to the two QD
    lines on a (laser detuning, polarizer angle) grid, refined by iterated
    local quadratic interpolation. Returned with the larger angle first."""
    if not (base.qd_x_enabled and base.qd_y_enabled):
        raise NotFound("both QD transitions are needed for the special-angle pair")
    if base.g_x == 0 and base.g_y == 0:
        raise NotFound("uncoupled QD transitions leave only the cross-polarization minimum")
    theta = np.asarray(theta_grid if theta_grid is not None else np.arange(-90.0, 90.0, 1.0))
    laser = np.asarray(laser_grid if laser_grid is not None else np.linspace(-8.0, 8.0, 161))
    if np.isclose(theta[-1] - theta[0], 180.0):
        theta = theta[:-1]  # periodic duplicate
    spec = SweepSpec("transmission_map", base, (Axis("f_laser", laser[0], laser[-1], len(laser)),
                                                Axis("theta_out", theta[0], theta[-1], len(theta))),
                     workers=workers)
    res = _evaluate_grid(spec)
    T = res.t_raw
    lasers, thetas = res.coords["f_laser"], res.coords["theta_out"]
    if len(lasers) < 7 or len(thetas) < 7:
        raise ValueError("special-angle grids need at least 7 points per axis")
    periodic = np.isclose(thetas[-1] - thetas[0] + (thetas[1] - thetas[0]), 180.0)
    mins = T == ndimage.minimum_filter(T, size=5, mode=("nearest", "wrap" if periodic else "nearest"))
    mins[:2, :] = mins[-2:, :] = False
    if not periodic:
        mins[:, :2] = mins[:, -2:] = False
    cand = np.argwhere(mins)
    found = []
    for lab, f_line in (("X", base.f_qd_x), ("Y", base.f_qd_y)):
        near = [(abs(lasers[i] - f_line), i, j) for i, j in cand if abs(lasers[i] - f_line) <= window_ghz]
        if not near:
            raise NotFound(f"no transmission minimum within {window_ghz} GHz of QD line {lab}")
        _, i, j = min(near)

        def tfun(fs, ths):
            return np.stack([point_state(base.replace(f_laser=float(f)), spec.route)[0].transmission(ths)
                             for f in fs])

        fl, th = _quadratic_refine(tfun, lasers[i], thetas[j], lasers[1] - lasers[0], thetas[1] - thetas[0])
        th = (th + 90.0) % 180.0 - 90.0
        t_min = float(tfun([fl], [th])[0, 0])
        found.append(SpecialAngle(float(th), float(fl), t_min, lab))
    found.sort(key=lambda s: -s.theta_out)
    return found[0], found[1]
