"""Run configuration files (TOML) and the bundled parameter presets.

Keys carry their units, e.g. ``kappa_per_ns`` or ``f_qd_x_ghz``::

    scenario = "g2_map"
    output_dir = "out"
    jitter_ps = [50, 500]

    [params]
    kappa_per_ns = 69.0
    g_per_ns = 15.0
    ...

    [[axes]]
    name = "qd_common_offset"
    start = -6.0
    stop = 6.0
    n_points = 121
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import ParameterError, SystemParams
from .sweeps import SCENARIOS, Axis

EXTRA_SCENARIOS = ("fit", "special_angles", "g2_trace")
PRESETS = ("qd_a", "qd_b")

_TOP_KEYS = {"scenario", "output_dir", "format", "n_fock", "jitter_ps", "theta_out_deg",
             "kappas_per_ns", "target_nbar", "tau_max_ns", "n_tau", "params", "axes", "fit",
             "polcqed_version", "command"}  # the last two are written by the CLI and ignored


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


@dataclass
class RunConfig:
    scenario: str
    params: SystemParams
    axes: tuple = ()
    output_dir: Path = Path(".")
    n_fock: Optional[int] = None
    jitter_ps: tuple = ()
    format: str = "csv"
    theta_out: Optional[float] = None
    kappas: tuple = ()
    target_nbar: Optional[float] = None
    tau_max: float = 4.0
    n_tau: int = 801
    fit: dict = field(default_factory=dict)

    def resolved_params(self) -> SystemParams:
        if self.n_fock is not None:
            return self.params.replace(n_fock=self.n_fock)
        return self.params


def _norm_scenario(name: str) -> str:
    return str(name).strip().replace("-", "_")


def _number(block: dict, key: str, where: str):
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    return v


def parse_config(data: dict[str, Any], source: str = "<config>") -> RunConfig:
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    if "scenario" not in data:
        raise ConfigError(f"{source}: missing required field 'scenario'")
    scenario = _norm_scenario(data["scenario"])
    if scenario not in SCENARIOS + EXTRA_SCENARIOS:
        raise ConfigError(f"{source}: scenario {data['scenario']!r} is not one of "
                          f"{', '.join(SCENARIOS + EXTRA_SCENARIOS)}")
    if "params" not in data or not isinstance(data["params"], dict):
        raise ConfigError(f"{source}: missing required table [params]")
    try:
        params = SystemParams.from_config(data["params"])
    except ParameterError as exc:
        raise ConfigError(f"{source}: [params] {exc}") from None

    axes = []
    for i, ax in enumerate(data.get("axes", [])):
        where = f"axes[{i}]"
        for k in ("name", "start", "stop", "n_points"):
            if k not in ax:
                raise ConfigError(f"{source}: {where}: missing required field '{k}'")
        try:
            axes.append(Axis(str(ax["name"]), float(_number(ax, "start", where)),
                             float(_number(ax, "stop", where)), int(_number(ax, "n_points", where))))
        except ValueError as exc:
            raise ConfigError(f"{source}: {where}: {exc}") from None

    fmt = data.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"{source}: format must be 'csv' or 'json', got {fmt!r}")
    cfg = RunConfig(scenario=scenario, params=params, axes=tuple(axes), format=fmt,
                    output_dir=Path(data.get("output_dir", ".")))
    if "n_fock" in data:
        n = _number(data, "n_fock", source)
        if int(n) != n or n < 2:
            raise ConfigError(f"{source}: n_fock must be an integer >= 2")
        cfg.n_fock = int(n)
    if "jitter_ps" in data:
        js = data["jitter_ps"]
        if not isinstance(js, list) or not all(isinstance(j, (int, float)) and j > 0 for j in js):
            raise ConfigError(f"{source}: jitter_ps must be a list of positive numbers")
        cfg.jitter_ps = tuple(float(j) for j in js)
    if "theta_out_deg" in data:
        cfg.theta_out = float(_number(data, "theta_out_deg", source))
    if "kappas_per_ns" in data:
        ks = data["kappas_per_ns"]
        if not isinstance(ks, list) or not all(isinstance(k, (int, float)) and k > 0 for k in ks):
            raise ConfigError(f"{source}: kappas_per_ns must be a list of positive numbers")
        cfg.kappas = tuple(float(k) for k in ks)
    if "target_nbar" in data:
        cfg.target_nbar = float(_number(data, "target_nbar", source))
    if "tau_max_ns" in data:
        cfg.tau_max = float(_number(data, "tau_max_ns", source))
    if "n_tau" in data:
        cfg.n_tau = int(_number(data, "n_tau", source))
    if "fit" in data:
        if not isinstance(data["fit"], dict):
            raise ConfigError(f"{source}: [fit] must be a table")
        cfg.fit = dict(data["fit"])
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(data, str(path))
    if "fit" in data and "data" in cfg.fit:
        cfg.fit["data"] = str((path.parent / cfg.fit["data"]).resolve())
    return cfg


def load_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("polcqed.presets").joinpath(f"{name}.toml").read_text()
    return parse_config(tomllib.loads(text), f"preset:{name}")


def preset(name: str) -> SystemParams:
    """Bundled parameter set ``'qd_a'`` or ``'qd_b'``."""
    return load_preset(name).params
