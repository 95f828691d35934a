"""Run configuration: a flat ``[section]`` / ``key = value`` text format.

Every key has a documented default; unknown sections and keys are errors.
Validation builds the grid, physics and delay objects so that their own
invariants are checked at parse time; failures carry the key path and the
line number.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math
from pathlib import Path

import numpy as np

from .delay_force import DelayConfig, compute_t_star
from .discretization import Grid, ScalarField
from .dynamics import PhysicsConfig
from .errors import ConfigError, VKError
from .fields import bump

__all__ = ["RunConfig", "parse_config", "parse_text", "field_from_spec", "DEFAULTS"]


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


# section -> key -> (parser, default)
DEFAULTS = {
    "grid": {
        "lx": (float, 1.0),
        "ly": (float, 1.0),
        "nx": (int, 31),
        "ny": (int, 31),
    },
    "physics": {
        "k": (float, 0.5),
        "U": (float, 0.0),
        "use_reduced_damping": (_bool, False),
        "nonlinear": (_bool, True),
        "delay_coeff": (float, -1.0),
        "forcing_omega": (float, 0.0),
        "F0": (str, "zero"),
        "p0": (str, "zero"),
    },
    "delay": {
        "n_theta": (int, 16),
        "dt": (_opt_float, None),
        "t_star": (_opt_float, None),
    },
    "run": {
        "horizon": (float, 1.0),
        "stride": (int, 1),
        "seed": (int, 0),
        "tol": (float, 1e-10),
        "u0": (str, "zero"),
        "u1": (str, "zero"),
        "snapshot_every": (int, 100),
    },
    "ensemble": {
        "radii": (_floats, (1.0, 2.0, 4.0)),
        "n_members": (int, 8),
        "late_fraction": (float, 0.5),
        "rel_tol": (float, 0.2),
        "n_modes": (int, 4),
    },
    "quasistab": {
        "n_pairs": (int, 5),
        "transient": (float, 0.0),
        "gap": (float, 1e-3),
        "eta": (float, 2.0),
    },
    "dimension": {
        "embed_dims": (_ints, (2, 3, 4, 5, 6)),
        "transient": (float, 0.0),
        "n_samples": (int, 10_000),
        "max_points": (int, 2000),
    },
}


@dataclass
class RunConfig:
    """Parsed configuration; ``values[section][key]`` holds typed values."""

    values: dict
    lines: dict = field(default_factory=dict)  # "section.key" -> line number
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, section, key):
        return self.values[section][key]

    # derived objects -------------------------------------------------------

    def grid(self) -> Grid:
        g = self.values["grid"]
        return Grid(g["lx"], g["ly"], g["nx"], g["ny"])

    def field(self, section, key, grid: Grid) -> ScalarField | None:
        return field_from_spec(self.get(section, key), grid, self.base_dir)

    def physics(self, grid: Grid | None = None) -> PhysicsConfig:
        grid = self.grid() if grid is None else grid
        p = self.values["physics"]
        return PhysicsConfig(
            k=p["k"],
            u_flow=p["U"],
            f0=self.field("physics", "F0", grid),
            p0=self.field("physics", "p0", grid),
            use_reduced_damping=p["use_reduced_damping"],
            nonlinear=p["nonlinear"],
            delay_coeff=p["delay_coeff"],
            forcing_omega=p["forcing_omega"],
        )

    def delay(self, grid: Grid | None = None) -> DelayConfig:
        """Delay config; dt is rounded down so that ``t*/dt`` is an integer.

        Without an explicit dt the transport limit ``h/max(1, U)`` is used.
        """
        grid = self.grid() if grid is None else grid
        d = self.values["delay"]
        u_flow = self.values["physics"]["U"]
        t_star = d["t_star"] if d["t_star"] is not None else compute_t_star(u_flow, grid)
        dt = d["dt"] if d["dt"] is not None else grid.h / max(1.0, u_flow)
        m = max(1, math.ceil(t_star / dt - 1e-9))
        return DelayConfig(u_flow, t_star, d["n_theta"], t_star / m)

    def n_steps(self, cfg: DelayConfig) -> int:
        return int(math.ceil(self.values["run"]["horizon"] / cfg.dt - 1e-9))

    def dump(self) -> str:
        out = []
        for sec, keys in DEFAULTS.items():
            out.append(f"[{sec}]")
            for key in keys:
                out.append(f"{key} = {_fmt(self.values[sec][key])}")
            out.append("")
        return "\n".join(out)


def _fmt(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def field_from_spec(spec: str, grid: Grid, base_dir: Path | None = None) -> ScalarField | None:
    """Build a field from ``zero``, ``constant:v``, ``bump:amp,cx,cy,w`` or ``file:path``.

    ``zero`` returns None.  Files are ``.npy`` arrays or whitespace text of
    shape ``(ny, nx)``; relative paths resolve against ``base_dir``.
    """
    spec = spec.strip()
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "zero" and not arg:
        return None
    if kind == "constant":
        return ScalarField(grid, np.full(grid.shape, float(arg)))
    if kind == "bump":
        parts = _floats(arg)
        if len(parts) != 4:
            raise ValueError("bump needs amp,cx,cy,w")
        return bump(grid, *parts)
    if kind == "file":
        path = Path(arg.strip())
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.is_file():
            raise ValueError(f"file not found: {path}")
        arr = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
        arr = np.asarray(arr, dtype=float)
        if arr.shape != grid.shape:
            raise ValueError(f"file field has shape {arr.shape}, grid needs {grid.shape}")
        return ScalarField(grid, arr)
    raise ValueError(f"unknown field spec {spec!r}")


def parse_text(text: str, base_dir: Path | None = None, strict: bool = True) -> RunConfig:
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in DEFAULTS.items()}
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", line=lineno)
            section = line[1:-1].strip()
            if section not in DEFAULTS:
                if strict:
                    raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if section is None:
            raise ConfigError("key outside any section", key=key, line=lineno)
        path = f"{section}.{key}"
        if section not in DEFAULTS:
            continue
        if key not in DEFAULTS[section]:
            if strict:
                raise ConfigError("unknown key", key=path, line=lineno)
            continue
        parser = DEFAULTS[section][key][0]
        try:
            values[section][key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"cannot parse value {val!r}: {exc}", key=path, line=lineno) from None
        lines[path] = lineno
    cfg = RunConfig(values, lines, Path(base_dir) if base_dir is not None else Path.cwd())
    _validate(cfg)
    return cfg


def parse_config(path, strict: bool = True) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_text(text, path.parent, strict)


def _fail(cfg: RunConfig, key: str, msg: str):
    raise ConfigError(msg, key=key, line=cfg.lines.get(key))


def _validate(cfg: RunConfig):
    v = cfg.values

    def check(key, ok, msg):
        if not ok:
            _fail(cfg, key, msg)

    def guarded(key, fn):
        try:
            return fn()
        except (VKError, ValueError) as exc:
            _fail(cfg, key, str(exc))

    for key in ("nx", "ny"):
        check(f"grid.{key}", v["grid"][key] >= 5, f"{key} must be >= 5 (stencil minimum)")
    grid = guarded("grid.nx", cfg.grid)
    p = v["physics"]
    check("physics.U", p["U"] >= 0 and math.isfinite(p["U"]), "flow speed must be finite and >= 0")
    check("physics.U", abs(p["U"] - 1.0) >= 1e-12,
          "singular flow speed U = 1 (Mach 1) is excluded from the model")
    check("physics.k", p["k"] >= 0, "damping k must be >= 0")
    for key in ("F0", "p0"):
        guarded(f"physics.{key}", lambda key=key: cfg.field("physics", key, grid))
    phys = guarded("physics.k", lambda: cfg.physics(grid))
    d = v["delay"]
    check("delay.n_theta", d["n_theta"] >= 8, "n_theta must be >= 8")
    if d["dt"] is not None:
        check("delay.dt", d["dt"] > 0, "dt must be positive")
    if d["t_star"] is not None:
        check("delay.t_star", d["t_star"] > 0, "t_star must be positive")
    dcfg = guarded("delay.dt", lambda: cfg.delay(grid))
    limit = grid.h / max(1.0, phys.u_flow)
    check("delay.dt", dcfg.dt <= limit * (1 + 1e-12),
          f"dt={dcfg.dt:.6g} violates the transport limit h/max(1, U) = {limit:.6g}")
    r = v["run"]
    check("run.horizon", r["horizon"] > 0, "horizon must be positive")
    check("run.stride", r["stride"] >= 1, "stride must be >= 1")
    check("run.tol", 0 < r["tol"] < 1, "tol must lie in (0, 1)")
    check("run.seed", r["seed"] >= 0, "seed must be >= 0")
    check("run.snapshot_every", r["snapshot_every"] >= 0, "snapshot_every must be >= 0")
    for key in ("u0", "u1"):
        guarded(f"run.{key}", lambda key=key: cfg.field("run", key, grid))
    e = v["ensemble"]
    check("ensemble.radii", len(e["radii"]) >= 1 and min(e["radii"]) >= 0, "radii must be nonnegative")
    check("ensemble.n_members", e["n_members"] >= 1, "n_members must be >= 1")
    check("ensemble.late_fraction", 0 < e["late_fraction"] <= 1, "late_fraction must lie in (0, 1]")
    check("ensemble.rel_tol", e["rel_tol"] > 0, "rel_tol must be positive")
    check("ensemble.n_modes", e["n_modes"] >= 1, "n_modes must be >= 1")
    q = v["quasistab"]
    check("quasistab.n_pairs", q["n_pairs"] >= 1, "n_pairs must be >= 1")
    check("quasistab.transient", q["transient"] >= 0, "transient must be >= 0")
    check("quasistab.gap", q["gap"] > 0, "gap must be positive")
    check("quasistab.eta", 0 <= q["eta"] <= 2, "eta must lie in [0, 2]")
    dm = v["dimension"]
    check("dimension.embed_dims", len(dm["embed_dims"]) >= 1 and min(dm["embed_dims"]) >= 1,
          "embedding dimensions must be positive")
    check("dimension.transient", dm["transient"] >= 0, "transient must be >= 0")
    check("dimension.n_samples", dm["n_samples"] >= 10_000, "n_samples must be >= 10000")
    check("dimension.max_points", dm["max_points"] >= 100, "max_points must be >= 100")
