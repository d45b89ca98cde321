"""Projected gradient descent on the target and the p, delta continuation driver."""

import dataclasses
import logging
from dataclasses import asdict, dataclass

import numpy as np

from nharm.config import (
    ARMIJO_C,
    BACKTRACK,
    CHECKERBOARD_TOL,
    GRAD_TOL,
    INITIAL_STEP,
    MAX_ITERS,
    MAX_STEP,
    MIN_STEP,
)
from nharm.energy import (
    checkerboard_amplitude,
    dirichlet_energy,
    entropy,
    node_volumes,
    tangent_gradient,
    total_energy,
)
from nharm.inequalities import GrowthParams, ParamsError
from nharm.manifolds import (
    ChartError,
    DomainMesh,
    MapField,
    TargetManifold,
    degree,
    stereographic_bubble,
)
from nharm.tables import TraceRow, TraceTable

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS_STATUS = "max_iters"
DEGREE_JUMP = "degree_jump"


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = MAX_ITERS
    grad_tol: float = GRAD_TOL
    armijo_c: float = ARMIJO_C
    backtrack: float = BACKTRACK
    initial_step: float = INITIAL_STEP
    min_step: float = MIN_STEP
    max_step: float = MAX_STEP

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ParamsError(f"max_iters must be a non-negative integer, got {self.max_iters}")
        for name in ("grad_tol", "initial_step", "min_step", "max_step"):
            if not getattr(self, name) > 0:
                raise ParamsError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.armijo_c < 1:
            raise ParamsError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if not 0 < self.backtrack < 1:
            raise ParamsError(f"backtrack must lie in (0, 1), got {self.backtrack}")
        if not self.min_step <= self.initial_step <= self.max_step:
            raise ParamsError("need min_step <= initial_step <= max_step")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ParamsError(f"unknown solver option(s): {', '.join(sorted(unknown))}")
        return cls(**known)


@dataclass(frozen=True)
class ContinuationSchedule:
    p_list: tuple[float, ...]
    delta_list: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "p_list", tuple(float(p) for p in self.p_list))
        object.__setattr__(self, "delta_list", tuple(float(d) for d in self.delta_list))

    def validate(self, n: int) -> None:
        if len(self.p_list) != len(self.delta_list):
            raise ParamsError(
                f"p_list has {len(self.p_list)} entries, delta_list {len(self.delta_list)}"
            )
        for i, p in enumerate(self.p_list):
            if not n < p <= n + 1:
                raise ParamsError(f"p_list[{i}]={p} outside ({n}, {n + 1}]")
        for i, d in enumerate(self.delta_list):
            if not 0 < d <= 1:
                raise ParamsError(f"delta_list[{i}]={d} outside (0, 1]")
        for name, seq in (("p_list", self.p_list), ("delta_list", self.delta_list)):
            for i in range(1, len(seq)):
                if not seq[i] < seq[i - 1]:
                    raise ParamsError(f"{name} must be strictly decreasing at index {i}")

    @classmethod
    def geometric(cls, n: int, p0: float, delta0: float, steps: int) -> "ContinuationSchedule":
        """p_k = n + (p0 - n) 2^-k, delta_k = delta0 2^-k for k = 0..steps-1."""
        ks = range(steps)
        return cls(tuple(n + (p0 - n) * 2.0 ** -k for k in ks),
                   tuple(delta0 * 2.0 ** -k for k in ks))

    def __len__(self) -> int:
        return len(self.p_list)

    def to_dict(self) -> dict:
        return {"p_list": list(self.p_list), "delta_list": list(self.delta_list)}


@dataclass
class SolveResult:
    field: MapField = dataclasses.field(repr=False)
    params: GrowthParams
    iterations: int
    energy: float
    residual: float
    energy_trace: list[float] = dataclasses.field(default_factory=list, repr=False)
    degree_trace: list[int] = dataclasses.field(default_factory=list, repr=False)
    status: str = CONVERGED
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def summary(self) -> dict:
        return {
            "status": self.status,
            "message": self.message,
            "iterations": self.iterations,
            "energy": self.energy,
            "residual": self.residual,
            "params": self.params.to_dict(),
            "degree": self.degree_trace[-1] if self.degree_trace else None,
        }


@dataclass
class ContinuationRun:
    results: list[SolveResult]
    trace: TraceTable
    warm_energies: list[float] = dataclasses.field(default_factory=list)

    @property
    def final(self) -> SolveResult:
        return self.results[-1]

    @property
    def completed(self) -> bool:
        return all(r.status != DEGREE_JUMP for r in self.results)


def el_residual_norm(field: MapField, params: GrowthParams,
                     fixed_nodes: np.ndarray | None = None) -> float:
    """max_i |g_i| / vol_i of the tangent gradient, pinned nodes excluded."""
    g = tangent_gradient(field, params).values
    if fixed_nodes is not None and len(fixed_nodes):
        g = g.copy()
        g[fixed_nodes] = 0.0
    norms = np.linalg.norm(g, axis=1) / node_volumes(field.mesh)
    return float(norms.max(initial=0.0))


def _monitor(field: MapField) -> bool:
    return field.target.is_sphere and field.target.dim == field.mesh.n


def minimize(field0: MapField, params: GrowthParams, config: SolverConfig | None = None,
             fixed_nodes=None, monitor_degree: bool | None = None) -> SolveResult:
    """Projected Armijo descent along -g_i / vol_i, retracting by nearest-point projection.

    Statuses: converged (residual <= grad_tol), max_iters (iteration cap or
    exhausted line search), degree_jump (an accepted step changed the degree;
    the field before that step is returned).
    A free field that converges with a nonzero checkerboard component keeps
    status converged and carries a warning message. Fixed nodes keep their
    input values exactly.
    """
    config = config or SolverConfig()
    mesh, target = field0.mesh, field0.target
    vol = node_volumes(mesh)
    fixed = np.zeros(mesh.node_count, dtype=bool)
    if fixed_nodes is not None:
        fixed[np.asarray(fixed_nodes, dtype=np.int64)] = True
    watch = _monitor(field0) if monitor_degree is None else monitor_degree

    u = field0
    energy = total_energy(u, params).total

    def grad(f: MapField) -> np.ndarray:
        g = tangent_gradient(f, params).values
        g[fixed] = 0.0
        return g

    g = grad(u)
    residual = float((np.linalg.norm(g, axis=1) / vol).max(initial=0.0))
    energies = [energy]
    degrees = []
    if watch:
        deg0 = degree(u)
        degrees.append(deg0.value)
    step = config.initial_step
    status, message = MAX_ITERS_STATUS, f"reached max_iters={config.max_iters}"
    iterations = 0

    for it in range(config.max_iters + 1):
        if residual <= config.grad_tol:
            status, message = CONVERGED, ""
            amplitude = 0.0 if fixed.any() else checkerboard_amplitude(u)
            if amplitude > CHECKERBOARD_TOL:
                message = (f"converged with a checkerboard component of amplitude {amplitude:.3e}; "
                           "pin some nodes or use an odd resolution")
                log.warning(message)
            break
        if it == config.max_iters:
            break
        d = -g / vol[:, None]
        slope = float(np.sum(g * d))
        while True:
            values = target.project(u.values + step * d)
            values[fixed] = u.values[fixed]
            trial = MapField(mesh, target, values)
            trial_energy = total_energy(trial, params).total
            if trial_energy < energy and trial_energy <= energy + config.armijo_c * step * slope:
                break
            step *= config.backtrack
            if step < config.min_step:
                message = f"line search exhausted at iteration {it} (residual {residual:.3e})"
                log.warning(message)
                return SolveResult(u, params, iterations, energy, residual, energies,
                                   degrees, MAX_ITERS_STATUS, message)
        if watch:
            deg = degree(trial)
            if deg.value != deg0.value or deg.degenerate:
                message = (f"degree changed from {deg0.value} to {deg.raw:.4f} at iteration {it}; "
                           "refine the mesh")
                log.warning(message)
                return SolveResult(u, params, iterations, energy, residual, energies,
                                   degrees, DEGREE_JUMP, message)
            degrees.append(deg.value)
        u, energy = trial, trial_energy
        iterations += 1
        energies.append(energy)
        g = grad(u)
        residual = float((np.linalg.norm(g, axis=1) / vol).max(initial=0.0))
        step = min(step / config.backtrack, config.max_step)
        log.debug("iter %d energy %.12g residual %.3e step %.3e", it, energy, residual, step)

    return SolveResult(u, params, iterations, energy, residual, energies, degrees, status, message)


def solve_dirichlet(field0: MapField, fixed_nodes, params: GrowthParams,
                    config: SolverConfig | None = None) -> SolveResult:
    fixed_nodes = np.asarray(fixed_nodes, dtype=np.int64)
    if fixed_nodes.size == 0:
        raise ParamsError("solve_dirichlet needs at least one fixed node")
    return minimize(field0, params, config, fixed_nodes=fixed_nodes, monitor_degree=False)


def minimize_in_degree_class(d: int, mesh: DomainMesh, target: TargetManifold,
                             params: GrowthParams, config: SolverConfig | None = None,
                             scale: float | None = None) -> SolveResult:
    field0 = stereographic_bubble(mesh, target, d, scale=scale)
    start = degree(field0)
    if start.value != d or start.degenerate:
        raise ChartError(f"initial degree-{d} map reads as {start.raw:.4f}; refine the mesh")
    return minimize(field0, params, config, monitor_degree=True)


def run_continuation(field0: MapField, schedule: ContinuationSchedule,
                     config: SolverConfig | None = None,
                     base: GrowthParams | None = None) -> ContinuationRun:
    """Minimize at each (p_k, delta_k), warm-starting from step k-1.

    Steps ending at max_iters are kept and the run goes on; a degree jump ends
    the run at that step.
    """
    n = field0.mesh.n
    schedule.validate(n)
    base = base or GrowthParams(n, field0.target.N, schedule.p_list[0], schedule.delta_list[0], 1.0)
    watch = _monitor(field0)
    results, rows, warm = [], [], []
    current = field0
    for k, (p, delta) in enumerate(zip(schedule.p_list, schedule.delta_list)):
        params = base.with_(p=p, delta=delta)
        warm.append(total_energy(current, params).total)
        result = minimize(current, params, config, monitor_degree=watch)
        results.append(result)
        final = result.field
        rows.append(TraceRow(
            k=k,
            p=p,
            delta=delta,
            E_pdelta=result.energy,
            D_n=dirichlet_energy(final),
            entropy=entropy(final, params),
            residual=result.residual,
            iterations=result.iterations,
            degree=degree(final).value if watch else None,
        ))
        log.info("step %d p=%.6g delta=%.6g E=%.10g status=%s", k, p, delta,
                 result.energy, result.status)
        if result.status == DEGREE_JUMP:
            log.warning("continuation stopped at step %d: %s", k, result.message)
            break
        current = final
    return ContinuationRun(results, TraceTable(rows), warm)


def warm_start_sane(run: ContinuationRun) -> bool:
    """E_{p_k}(u_{k-1}) <= E_{p_{k-1}}(u_{k-1}): the family is ordered in p at s = 1."""
    for k in range(1, len(run.results)):
        if run.warm_energies[k] > run.results[k - 1].energy * (1 + 1e-12) + 1e-15:
            return False
    return True