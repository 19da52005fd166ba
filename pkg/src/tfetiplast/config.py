"""Run configuration: a flat INI file with ``[mesh] [material] [load] [solver] [output]``.

A ``[run] benchmark = <preset>`` entry pre-fills every section from a preset;
explicit keys override the preset.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .driver import SolverConfig
from .errors import ConfigError
from .material import MaterialParams
from .mesh import LoadProgram, generate_box_mesh, generate_plate_with_hole, read_mesh

BENCHMARK_MATERIAL = {"young": "206900", "poisson": "0.29", "sigma_y": "450", "hardening": "10000"}

PRESETS = {
    "plate_eighth": {
        "mesh": {"source": "plate_eighth", "refinement": "1"},
        "material": BENCHMARK_MATERIAL,
        "load": {"amplitude": "400", "shape": "sin", "t0": "0", "t_end": "0.25", "steps": "1"},
    },
    "box": {
        "mesh": {
            "source": "box",
            "dims": "2 1 1",
            "divisions": "8 4 4",
            "constraints": "x0 1 1 1",
            "tractions": "x1 0 0 -1",
        },
        "material": BENCHMARK_MATERIAL,
        "load": {"amplitude": "100", "shape": "sin", "t0": "0", "t_end": "0.25", "steps": "1"},
    },
}

MESH_PRESETS = ("plate_eighth", "box")

SOLVER_DEFAULTS = SolverConfig()


@dataclass
class RunConfig:
    mesh: dict
    params: MaterialParams
    load: dict
    solver: SolverConfig
    output_dir: Path
    fields: str = "all"  # all | final | none
    timings: bool = True
    source: Path | None = None
    extra: dict = field(default_factory=dict)

    def build_mesh(self):
        return build_mesh(self.mesh)

    def build_program(self):
        load = self.load
        maker = LoadProgram.sinusoidal if load["shape"] == "sin" else LoadProgram.linear
        args = (load["amplitude"], load["t0"], load["t_end"], load["steps"])
        body = load.get("body_force")
        if body is None or not any(body):
            return maker(*args)
        g = np.asarray(body, dtype=float)
        if not load["body_scales"]:
            return maker(*args, body_force=lambda t: g)
        scale = maker(*args).traction_scale
        amp = load["amplitude"] or 1.0
        return maker(*args, body_force=lambda t: g * (scale(t) / amp))


def _parse_vector(text, n, key, cast=float):
    parts = text.replace(",", " ").split()
    if len(parts) != n:
        raise ConfigError(key, f"expected {n} values, got {text!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError:
        raise ConfigError(key, f"not a list of numbers: {text!r}") from None


def _parse_faces(text, key, cast):
    entries = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        sel, *rest = chunk.split()
        if sel not in ("x0", "x1", "y0", "y1", "z0", "z1"):
            raise ConfigError(key, f"unknown face selector {sel!r}")
        entries.append((sel, _parse_vector(" ".join(rest), 3, key, cast)))
    return entries


def build_mesh(desc):
    source = desc["source"]
    if source == "plate_eighth":
        return generate_plate_with_hole(refinement=desc.get("refinement", 1))
    if source == "box":
        mesh = generate_box_mesh(desc["dims"], desc["divisions"], desc["constraints"], desc["tractions"])
        return mesh.validate()
    return read_mesh(desc["file"])


class _Section:
    def __init__(self, cp, name):
        self.name = name
        self.data = dict(cp[name]) if cp.has_section(name) else {}

    def get(self, key, default=None):
        return self.data.get(key, default)

    def float(self, key, default=None, positive=False):
        raw = self.data.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{self.name}.{key}", "missing")
            return default
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{self.name}.{key}", f"not a number: {raw!r}") from None
        if positive and not value > 0.0:
            raise ConfigError(f"{self.name}.{key}", f"must be positive, got {value}")
        return value

    def int(self, key, default=None, minimum=None):
        raw = self.data.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{self.name}.{key}", "missing")
            return default
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{self.name}.{key}", f"not an integer: {raw!r}") from None
        if minimum is not None and value < minimum:
            raise ConfigError(f"{self.name}.{key}", f"must be >= {minimum}, got {value}")
        return value

    def bool(self, key, default):
        raw = self.data.get(key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.name}.{key}", f"not a boolean: {raw!r}")


def parse_config_text(text, base_dir=None, source=None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None

    base_dir = Path(base_dir or ".")
    run = _Section(cp, "run")
    preset_name = run.get("benchmark")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError("run.benchmark", f"unknown preset {preset_name!r}; known: {sorted(PRESETS)}")
        merged = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        merged.read_dict(PRESETS[preset_name])
        merged.read_string(text)
        cp = merged

    mesh_sec = _Section(cp, "mesh")
    if not mesh_sec.data:
        raise ConfigError("mesh", "section missing")
    source_kind = mesh_sec.get("source", "file" if mesh_sec.get("file") else None)
    if source_kind is None:
        raise ConfigError("mesh.source", "missing (plate_eighth, box or file)")
    mesh = {"source": source_kind}
    if source_kind == "plate_eighth":
        mesh["refinement"] = mesh_sec.int("refinement", 1, minimum=1)
    elif source_kind == "box":
        mesh["dims"] = _parse_vector(mesh_sec.get("dims", "1 1 1"), 3, "mesh.dims")
        mesh["divisions"] = _parse_vector(mesh_sec.get("divisions", "4 4 4"), 3, "mesh.divisions", int)
        if min(mesh["dims"]) <= 0:
            raise ConfigError("mesh.dims", "must be positive")
        if min(mesh["divisions"]) < 1:
            raise ConfigError("mesh.divisions", "must be >= 1")
        mesh["constraints"] = [
            (sel, tuple(bool(v) for v in flags))
            for sel, flags in _parse_faces(mesh_sec.get("constraints", "x0 1 1 1"), "mesh.constraints", int)
        ]
        mesh["tractions"] = _parse_faces(mesh_sec.get("tractions", ""), "mesh.tractions", float)
    elif source_kind == "file":
        raw = mesh_sec.get("file")
        if raw is None:
            raise ConfigError("mesh.file", "missing")
        path = Path(raw)
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError("mesh.file", f"file not found: {path}")
        mesh["file"] = path
    else:
        raise ConfigError("mesh.source", f"unknown source {source_kind!r}")

    mat = _Section(cp, "material")
    sigma_y = mat.float("sigma_y", float(BENCHMARK_MATERIAL["sigma_y"]), positive=True)
    hardening = mat.float("hardening", float(BENCHMARK_MATERIAL["hardening"]), positive=True)
    try:
        if mat.get("lambda") is not None or mat.get("mu") is not None:
            params = MaterialParams(mat.float("lambda"), mat.float("mu"), sigma_y, hardening)
        else:
            params = MaterialParams.from_engineering(
                mat.float("young", float(BENCHMARK_MATERIAL["young"]), positive=True),
                mat.float("poisson", float(BENCHMARK_MATERIAL["poisson"])),
                sigma_y,
                hardening,
            )
    except ValueError as exc:
        raise ConfigError("material", str(exc)) from None

    ld = _Section(cp, "load")
    if not ld.data:
        raise ConfigError("load", "section missing")
    load = {
        "amplitude": ld.float("amplitude"),
        "shape": ld.get("shape", "sin"),
        "t0": ld.float("t0", 0.0),
        "t_end": ld.float("t_end", 0.25),
        "steps": ld.int("steps", 1, minimum=1),
        "body_scales": ld.bool("body_force_scales", True),
    }
    if load["shape"] not in ("sin", "linear"):
        raise ConfigError("load.shape", f"expected sin or linear, got {load['shape']!r}")
    if not load["t_end"] > load["t0"]:
        raise ConfigError("load.t_end", "must exceed t0")
    if ld.get("body_force") is not None:
        load["body_force"] = _parse_vector(ld.get("body_force"), 3, "load.body_force")

    sol = _Section(cp, "solver")
    d = SOLVER_DEFAULTS
    eps_newton = sol.float("eps_newton", d.eps_newton)
    eps_pcgp = sol.float("eps_pcgp", d.eps_pcgp)
    for key, value in (("eps_newton", eps_newton), ("eps_pcgp", eps_pcgp)):
        if not 0.0 < value < 1.0:
            raise ConfigError(f"solver.{key}", f"must lie in (0, 1), got {value}")
    precond = sol.get("preconditioner", d.preconditioner)
    if precond not in ("none", "lumped", "dirichlet"):
        raise ConfigError("solver.preconditioner", f"expected none, lumped or dirichlet, got {precond!r}")
    linear = sol.get("linear", d.linear_solver)
    if linear not in ("tfeti", "direct"):
        raise ConfigError("solver.linear", f"expected tfeti or direct, got {linear!r}")
    max_pcgp = sol.get("max_pcgp")
    solver = SolverConfig(
        eps_newton=eps_newton,
        eps_pcgp=eps_pcgp,
        max_newton=sol.int("max_newton", d.max_newton, minimum=1),
        preconditioner=precond,
        linear_solver=linear,
        subdomains=sol.int("subdomains", d.subdomains, minimum=1),
        workers=sol.int("workers", d.workers, minimum=1),
        max_pcgp=None if max_pcgp is None else sol.int("max_pcgp", minimum=1),
    )

    out = _Section(cp, "output")
    out_dir = Path(out.get("directory", "out"))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    fields = out.get("fields", "all")
    if fields not in ("all", "final", "none"):
        raise ConfigError("output.fields", f"expected all, final or none, got {fields!r}")

    return RunConfig(
        mesh=mesh,
        params=params,
        load=load,
        solver=solver,
        output_dir=out_dir,
        fields=fields,
        timings=out.bool("timings", True),
        source=source,
    )


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    return parse_config_text(text, base_dir=path.parent, source=path)
