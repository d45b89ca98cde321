"""Run configuration: a versioned JSON document describing one continuation experiment.

{
  "schema": 1,
  "mesh": {"kind": "torus2", "resolution": 128, "side": 1.0}
          | {"kind": "icosphere2", "subdivisions": 4} | {"file": "mesh.json"},
  "target": {"kind": "sphere", "dim": 2} | {"kind": "torus", "periods": [1, 1]},
  "initial": {"kind": "degree", "degree": 1, "scale": 0.1}
             | {"kind": "constant", "value": [0, 0, 1]} | {"kind": "identity"}
             | {"kind": "file", "path": "field.json"},
  "params": {"p": 2.2, "delta": 0.1, "s": 1.0},
  "schedule": {"p_list": [...], "delta_list": [...]}
              | {"geometric": {"steps": 5, "p0": 2.2, "delta0": 0.1}},
  "solver": {"max_iters": 5000, "grad_tol": 1e-6, ...},
  "diagnostics": {"bubbles": true, "threshold": null, "chart_multiple": 8,
                  "neck_outer": 0.25, "chart_resolution": 64},
  "output": "runs/bench"
}

Relative paths resolve against the directory holding the config file.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from nharm.config import (
    CHART_MULTIPLE_K,
    CHART_RESOLUTION,
    NECK_OUTER_RADIUS,
    SCHEMA_VERSION,
)
from nharm.inequalities import GrowthParams, ParamsError
from nharm.manifolds import (
    DomainMesh,
    MapField,
    MeshError,
    TargetError,
    TargetManifold,
    build_icosphere_mesh,
    build_torus_mesh,
    identity_field,
    stereographic_bubble,
)
from nharm.solver import ContinuationSchedule, SolverConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict):
        raise ConfigError(where, "must be a JSON object")
    if key not in d:
        raise ConfigError(f"{where}.{key}" if where else key, "is required")
    return d[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(where, f"must be a finite number, got {value!r}")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(where, f"must be an integer, got {value!r}")
    return value


def _numbers(value, where: str) -> list[float]:
    if not isinstance(value, list):
        raise ConfigError(where, f"must be a list, got {value!r}")
    return [_number(v, f"{where}[{i}]") for i, v in enumerate(value)]


@dataclass
class Diagnostics:
    bubbles: bool = True
    threshold: float | None = None
    chart_multiple: float = CHART_MULTIPLE_K
    neck_outer: float = NECK_OUTER_RADIUS
    chart_resolution: int = CHART_RESOLUTION


@dataclass
class RunConfig:
    mesh: dict
    target: dict
    initial: dict
    params: dict
    schedule: ContinuationSchedule
    solver: SolverConfig = field(default_factory=SolverConfig)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    output: Path = Path("runs/latest")
    base_dir: Path = Path(".")

    # -- loading -----------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "must be a JSON object")
        schema = _require(d, "schema", "")
        if schema != SCHEMA_VERSION:
            raise ConfigError("schema", f"unsupported version {schema!r}, expected {SCHEMA_VERSION}")
        known = {"schema", "mesh", "target", "initial", "params", "schedule", "solver",
                 "diagnostics", "output"}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(extra[0], "unknown field")
        base_dir = Path(base_dir)

        mesh = _require(d, "mesh", "")
        _check_mesh(mesh, base_dir)
        target = _require(d, "target", "")
        _check_target(target)
        initial = _require(d, "initial", "")
        _check_initial(initial, base_dir)

        params = _require(d, "params", "")
        if not isinstance(params, dict):
            raise ConfigError("params", "must be a JSON object")
        for key in ("p", "delta", "s"):
            if key in params:
                _number(params[key], f"params.{key}")
        extra = sorted(set(params) - {"p", "delta", "s"})
        if extra:
            raise ConfigError(f"params.{extra[0]}", "unknown field")

        schedule = _schedule(_require(d, "schedule", ""), _mesh_dim(mesh, base_dir))

        solver_raw = d.get("solver", {})
        if not isinstance(solver_raw, dict):
            raise ConfigError("solver", "must be a JSON object")
        for key, value in solver_raw.items():
            if key not in SolverConfig.__dataclass_fields__:
                raise ConfigError(f"solver.{key}", "unknown field")
            if key == "max_iters":
                _integer(value, "solver.max_iters")
            else:
                _number(value, f"solver.{key}")
        try:
            solver = SolverConfig.from_dict(solver_raw)
        except ParamsError as e:
            raise ConfigError("solver", str(e)) from None

        diagnostics = _diagnostics(d.get("diagnostics", {}))
        output = d.get("output", "runs/latest")
        if not isinstance(output, str) or not output:
            raise ConfigError("output", "must be a non-empty string")

        cfg = cls(mesh, target, initial, params, schedule, solver, diagnostics,
                  Path(output), base_dir)
        try:
            cfg.growth_params()
        except ParamsError as e:
            raise ConfigError("params", str(e)) from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config", f"file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON ({e.msg} at line {e.lineno})") from None
        return cls.from_dict(raw, path.parent)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "mesh": self.mesh,
            "target": self.target,
            "initial": self.initial,
            "params": self.params,
            "schedule": self.schedule.to_dict(),
            "solver": self.solver.to_dict(),
            "diagnostics": asdict(self.diagnostics),
            "output": str(self.output),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    # -- building ----------------------------------------------------------

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.resolve(str(self.output))

    def build_mesh(self) -> DomainMesh:
        return _build_mesh(self.mesh, self.base_dir)

    def build_target(self) -> TargetManifold:
        return TargetManifold.from_dict(self.target)

    def growth_params(self) -> GrowthParams:
        n = _mesh_dim(self.mesh, self.base_dir)
        return GrowthParams(
            n=n,
            N=self.build_target().N,
            p=float(self.params.get("p", self.schedule.p_list[0] if len(self.schedule) else n)),
            delta=float(self.params.get("delta", self.schedule.delta_list[0] if len(self.schedule) else 0.0)),
            s=float(self.params.get("s", 1.0)),
        )

    def build_initial(self, mesh: DomainMesh | None = None,
                      target: TargetManifold | None = None) -> MapField:
        mesh = mesh or self.build_mesh()
        target = target or self.build_target()
        init = self.initial
        kind = init["kind"]
        try:
            if kind == "constant":
                return MapField.constant(mesh, target, init["value"])
            if kind == "identity":
                return identity_field(mesh, target)
            if kind == "degree":
                return stereographic_bubble(mesh, target, init["degree"], scale=init.get("scale"))
        except (TargetError, MeshError) as e:
            raise ConfigError("initial", str(e)) from None
        try:
            field = MapField.from_json(self.resolve(init["path"]).read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ConfigError("initial.path", f"unreadable field file: {e}") from None
        if field.mesh.kind != mesh.kind or field.mesh.node_count != mesh.node_count:
            raise ConfigError("initial.path", "stored field lives on a different mesh")
        try:
            return MapField(mesh, target, field.values)
        except TargetError as e:
            raise ConfigError("initial.path", str(e)) from None


def _mesh_dim(mesh: dict, base_dir: Path) -> int:
    if "kind" in mesh:
        return int(mesh["kind"][-1])
    return _build_mesh(mesh, base_dir).n


def _build_mesh(mesh: dict, base_dir: Path) -> DomainMesh:
    if "file" in mesh:
        path = Path(mesh["file"])
        path = path if path.is_absolute() else base_dir / path
        try:
            return DomainMesh.from_json(path.read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ConfigError("mesh.file", str(e)) from None
    kind = mesh["kind"]
    if kind == "icosphere2":
        return build_icosphere_mesh(mesh["subdivisions"])
    return build_torus_mesh(int(kind[-1]), mesh["resolution"], float(mesh.get("side", 1.0)))


def _check_mesh(mesh, base_dir: Path) -> None:
    if not isinstance(mesh, dict):
        raise ConfigError("mesh", "must be a JSON object")
    if "file" in mesh:
        path = Path(mesh["file"])
        path = path if path.is_absolute() else base_dir / path
        if not path.is_file():
            raise ConfigError("mesh.file", f"file not found: {path}")
        return
    kind = _require(mesh, "kind", "mesh")
    if kind == "icosphere2":
        s = _integer(_require(mesh, "subdivisions", "mesh"), "mesh.subdivisions")
        if s < 0:
            raise ConfigError("mesh.subdivisions", "must be >= 0")
    elif kind in ("torus2", "torus3"):
        res = _integer(_require(mesh, "resolution", "mesh"), "mesh.resolution")
        if res < 2:
            raise ConfigError("mesh.resolution", "must be >= 2")
        if "side" in mesh and _number(mesh["side"], "mesh.side") <= 0:
            raise ConfigError("mesh.side", "must be positive")
    else:
        raise ConfigError("mesh.kind", f"unknown mesh kind {kind!r}")


def _check_target(target) -> None:
    kind = _require(target, "kind", "target")
    if kind == "sphere":
        dim = _integer(_require(target, "dim", "target"), "target.dim")
        if dim < 1:
            raise ConfigError("target.dim", "must be >= 1")
        if "radius" in target and _number(target["radius"], "target.radius") <= 0:
            raise ConfigError("target.radius", "must be positive")
    elif kind == "torus":
        periods = _numbers(_require(target, "periods", "target"), "target.periods")
        for i, p in enumerate(periods):
            if p <= 0:
                raise ConfigError(f"target.periods[{i}]", "must be positive")
        if not periods:
            raise ConfigError("target.periods", "must not be empty")
    else:
        raise ConfigError("target.kind", f"unknown target kind {kind!r}")


def _check_initial(initial, base_dir: Path) -> None:
    kind = _require(initial, "kind", "initial")
    if kind == "constant":
        _numbers(_require(initial, "value", "initial"), "initial.value")
    elif kind == "degree":
        _integer(_require(initial, "degree", "initial"), "initial.degree")
        if initial.get("scale") is not None and _number(initial["scale"], "initial.scale") <= 0:
            raise ConfigError("initial.scale", "must be positive")
    elif kind == "file":
        path = Path(_require(initial, "path", "initial"))
        path = path if path.is_absolute() else base_dir / path
        if not path.is_file():
            raise ConfigError("initial.path", f"file not found: {path}")
    elif kind != "identity":
        raise ConfigError("initial.kind", f"unknown initial map {kind!r}")


def _schedule(raw, n: int) -> ContinuationSchedule:
    if not isinstance(raw, dict):
        raise ConfigError("schedule", "must be a JSON object")
    if "geometric" in raw:
        g = raw["geometric"]
        steps = _integer(_require(g, "steps", "schedule.geometric"), "schedule.geometric.steps")
        if steps < 1:
            raise ConfigError("schedule.geometric.steps", "must be >= 1")
        p0 = _number(_require(g, "p0", "schedule.geometric"), "schedule.geometric.p0")
        delta0 = _number(_require(g, "delta0", "schedule.geometric"), "schedule.geometric.delta0")
        schedule = ContinuationSchedule.geometric(n, p0, delta0, steps)
    else:
        p_list = _numbers(_require(raw, "p_list", "schedule"), "schedule.p_list")
        delta_list = _numbers(_require(raw, "delta_list", "schedule"), "schedule.delta_list")
        for i, p in enumerate(p_list):
            if not n < p <= n + 1:
                raise ConfigError(f"schedule.p_list[{i}]", f"{p} outside ({n}, {n + 1}]")
            if i and not p < p_list[i - 1]:
                raise ConfigError(f"schedule.p_list[{i}]", "must be strictly decreasing")
        for i, d in enumerate(delta_list):
            if not 0 < d <= 1:
                raise ConfigError(f"schedule.delta_list[{i}]", f"{d} outside (0, 1]")
            if i and not d < delta_list[i - 1]:
                raise ConfigError(f"schedule.delta_list[{i}]", "must be strictly decreasing")
        schedule = ContinuationSchedule(tuple(p_list), tuple(delta_list))
    try:
        schedule.validate(n)
    except ParamsError as e:
        raise ConfigError("schedule", str(e)) from None
    return schedule


def _diagnostics(raw) -> Diagnostics:
    if not isinstance(raw, dict):
        raise ConfigError("diagnostics", "must be a JSON object")
    extra = sorted(set(raw) - set(Diagnostics.__dataclass_fields__))
    if extra:
        raise ConfigError(f"diagnostics.{extra[0]}", "unknown field")
    out = Diagnostics()
    if "bubbles" in raw:
        if not isinstance(raw["bubbles"], bool):
            raise ConfigError("diagnostics.bubbles", "must be true or false")
        out.bubbles = raw["bubbles"]
    if raw.get("threshold") is not None:
        out.threshold = _number(raw["threshold"], "diagnostics.threshold")
        if out.threshold <= 0:
            raise ConfigError("diagnostics.threshold", "must be positive")
    if "chart_multiple" in raw:
        out.chart_multiple = _number(raw["chart_multiple"], "diagnostics.chart_multiple")
        if out.chart_multiple < 1:
            raise ConfigError("diagnostics.chart_multiple", "must be >= 1")
    if "neck_outer" in raw:
        out.neck_outer = _number(raw["neck_outer"], "diagnostics.neck_outer")
        if out.neck_outer <= 0:
            raise ConfigError("diagnostics.neck_outer", "must be positive")
    if "chart_resolution" in raw:
        res = _integer(raw["chart_resolution"], "diagnostics.chart_resolution")
        if res < 4 or res % 2:
            raise ConfigError("diagnostics.chart_resolution", "must be even and >= 4")
        out.chart_resolution = res
    return out
