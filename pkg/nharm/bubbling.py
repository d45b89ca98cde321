"""Bubbling diagnostics: concentration, rescaled charts, necks and the energy identity.

Ball energies sum whole cells whose centroid lies in the closed ball; annuli
A(r_in, r_out) take r_in < d <= r_out so ball, annulus and exterior partition
the cells exactly.
"""

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft
from scipy.spatial import cKDTree

from nharm.config import (
    BUBBLE_ENERGY_S2,
    CHART_MULTIPLE_K,
    CHART_RESOLUTION,
    CONCENTRATION_FRACTION,
    NECK_OUTER_RADIUS,
    SHELL_MIN_CELLS,
)
from nharm.energy import dirichlet_per_cell, energy_per_cell
from nharm.inequalities import GrowthParams, ParamsError, gpow, weight_of
from nharm.manifolds import ChartError, DomainMesh, MapField, build_torus_mesh, cell_gradients
from nharm.tables import LadderRow, LadderTable

log = logging.getLogger(__name__)

NODE_BLOCK = 512
CANDIDATES_MAX = 64


# ---------------------------------------------------------------------------
# Maximal concentration
# ---------------------------------------------------------------------------

@dataclass
class ConcentrationScan:
    radii: list[float]
    values: list[float]
    nodes: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def _ball_sums_torus(mesh: DomainMesh, e: np.ndarray, R: float) -> np.ndarray:
    """Energy in B_R(node) for every node as a circular correlation on the grid."""
    m, n, h, L = mesh.resolution, mesh.n, mesh.spacing, mesh.side
    shape = (m,) * n
    offsets = (np.indices(shape).reshape(n, -1).T + 0.5) * h
    offsets -= L * np.round(offsets / L)
    kernel = (np.linalg.norm(offsets, axis=1) <= R).reshape(shape).astype(float)
    grid = e.reshape(shape)
    corr = fft.irfftn(np.conj(fft.rfftn(kernel)) * fft.rfftn(grid), s=shape)
    return corr.reshape(-1)


def _ball_sums_sphere(mesh: DomainMesh, e: np.ndarray, R: float) -> np.ndarray:
    out = np.empty(mesh.node_count)
    for start in range(0, mesh.node_count, NODE_BLOCK):
        stop = min(start + NODE_BLOCK, mesh.node_count)
        dist = np.arccos(np.clip(mesh.nodes[start:stop] @ mesh.centroids.T, -1.0, 1.0))
        out[start:stop] = (dist <= R) @ e
    return out


def _max_ball(mesh: DomainMesh, e: np.ndarray, R: float) -> tuple[float, int]:
    if R >= mesh.diameter:
        return float(e.sum()), 0
    if not np.any(e > 0):
        return 0.0, 0
    if not mesh.is_torus:
        sums = _ball_sums_sphere(mesh, e, R)
        node = int(np.argmax(sums))
        return float(sums[node]), node
    sums = _ball_sums_torus(mesh, e, R)
    top = float(sums.max())
    candidates = np.flatnonzero(sums >= top - 1e-10 * float(e.sum()))[:CANDIDATES_MAX]
    best, node = -1.0, 0
    for c in candidates:
        value = float(e[mesh.cell_distances(int(c)) <= R].sum())
        if value > best:
            best, node = value, int(c)
    return best, node


def max_concentration(field: MapField, params: GrowthParams, R: float) -> tuple[float, int]:
    """max over nodes y of the energy in B_R(y); ties go to the lowest node index."""
    if not R > 0:
        raise ParamsError(f"radius must be positive, got {R}")
    return _max_ball(field.mesh, energy_per_cell(field, params), R)


def concentration_scan(field: MapField, params: GrowthParams, radii) -> ConcentrationScan:
    e = energy_per_cell(field, params)
    radii = sorted(float(r) for r in radii)
    values, nodes = [], []
    for R in radii:
        if not R > 0:
            raise ParamsError(f"radius must be positive, got {R}")
        value, node = _max_ball(field.mesh, e, R)
        values.append(value)
        nodes.append(node)
    return ConcentrationScan(radii, values, nodes)


def _radius_for(mesh: DomainMesh, e: np.ndarray, threshold: float,
                tol: float | None = None) -> tuple[float, int] | None:
    if not threshold > 0:
        raise ParamsError(f"threshold must be positive, got {threshold}")
    if float(e.sum()) < threshold:
        return None
    tol = 1e-3 * mesh.spacing if tol is None else tol
    lo, hi = 0.0, mesh.diameter
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _max_ball(mesh, e, mid)[0] >= threshold:
            hi = mid
        else:
            lo = mid
    return hi, _max_ball(mesh, e, hi)[1]


def concentration_radius(field: MapField, params: GrowthParams, threshold: float,
                         tol: float | None = None) -> tuple[float, int] | None:
    """Smallest R (to tol, default 1e-3 * spacing) with F(R) >= threshold, and its node.

    None when the whole field holds less than threshold.
    """
    return _radius_for(field.mesh, energy_per_cell(field, params), threshold, tol)


def rescaled_energy_profile(field: MapField, params: GrowthParams, center: int, radii) -> list[float]:
    """r^(p-n) E(u; B_r(center)) for each radius."""
    e = energy_per_cell(field, params)
    dist = field.mesh.cell_distances(center)
    return [float(r ** (params.p - params.n) * e[dist <= r].sum()) for r in radii]


# ---------------------------------------------------------------------------
# Rescaled charts
# ---------------------------------------------------------------------------

def chart_mesh(n: int, K: float, resolution: int) -> DomainMesh:
    """Flat periodic grid whose node range is [-K-h, K] per axis, node 0 at res/2.

    The only wrapping cells sit beyond K, so B_K never sees the periodic seam.
    """
    if resolution < 4 or resolution % 2:
        raise ChartError(f"chart resolution must be even and >= 4, got {resolution}")
    h = 2 * K / (resolution - 2)
    return build_torus_mesh(n, resolution, resolution * h, origin=np.full(n, -K - h))


def chart_center(chart: DomainMesh) -> int:
    half = chart.resolution // 2
    return int(np.ravel_multi_index((half,) * chart.n, (chart.resolution,) * chart.n))


def _interp_torus(field: MapField, points: np.ndarray) -> np.ndarray:
    mesh, target, u = field.mesh, field.target, field.values
    m, n = mesh.resolution, mesh.n
    f = (points - mesh.origin) / mesh.spacing
    base = np.floor(f)
    t = f - base
    base = base.astype(np.int64) % m
    shape = (m,) * n
    ref = u[np.ravel_multi_index(base.T, shape)]
    acc = np.zeros_like(ref)
    for bits in np.ndindex(*(2,) * n):
        b = np.asarray(bits)
        w = np.prod(np.where(b == 1, t, 1 - t), axis=1)
        idx = np.ravel_multi_index(((base + b) % m).T, shape)
        acc += w[:, None] * target.difference(ref, u[idx])
    return target.project(ref + acc)


def _tangent_basis(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = np.eye(3)[int(np.argmin(np.abs(c)))]
    e1 = axis - (axis @ c) * c
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(c, e1)


def _interp_sphere(field: MapField, center: int, y: np.ndarray) -> np.ndarray:
    mesh, target, u = field.mesh, field.target, field.values
    c = mesh.nodes[center]
    e1, e2 = _tangent_basis(c)
    rho = np.linalg.norm(y, axis=1)
    direction = np.where(rho[:, None] > 0, y / np.where(rho > 0, rho, 1.0)[:, None], 0.0)
    q = np.cos(rho)[:, None] * c + np.sin(rho)[:, None] * (
        direction[:, :1] * e1 + direction[:, 1:] * e2)

    tri = mesh.nodes[mesh.cells]                       # (C, 3 vertices, 3)
    inverse = np.linalg.inv(np.transpose(tri, (0, 2, 1)))
    _, near = cKDTree(mesh.centroids).query(q, k=min(8, mesh.cell_count))
    lam = np.einsum("pkij,pj->pki", inverse[near], q)   # (P, k, 3)
    choice = np.argmax(lam.min(axis=2), axis=1)
    rows = np.arange(len(q))
    cells = near[rows, choice]
    bary = lam[rows, choice]
    bary /= bary.sum(axis=1, keepdims=True)
    values = np.einsum("pv,pvN->pN", bary, u[mesh.cells[cells]])
    return target.project(values)


def rescale_map(field: MapField, center: int, r: float, params: GrowthParams,
                K: float = CHART_MULTIPLE_K,
                resolution: int = CHART_RESOLUTION) -> tuple[MapField, GrowthParams]:
    """v(x) = u(center + r x) on a flat chart covering B_K, with delta' = r^2 delta, s' = r^n s.

    E'(v; B_1) reproduces r^(p-n) E(u; B_r(center)) up to interpolation error.
    Radii are limited to (0, 1] so the rescaled delta and s stay admissible.
    """
    mesh = field.mesh
    if not r > 0:
        raise ChartError(f"rescaling radius must be positive, got {r}")
    if r > 1:
        raise ChartError(f"rescaling radius must be at most 1, got {r}; "
                         "larger radii push delta and s out of [0, 1]")
    if K * r > mesh.chart_limit:
        raise ChartError(
            f"ball of radius {K * r:.4g} around node {center} leaves the chart "
            f"(limit {mesh.chart_limit:.4g})"
        )
    chart = chart_mesh(mesh.n, K, resolution)
    if mesh.is_torus:
        values = _interp_torus(field, mesh.nodes[center] + r * chart.nodes)
    else:
        values = _interp_sphere(field, center, r * chart.nodes)
    scaled = params.with_(delta=r * r * params.delta, s=r ** params.n * params.s)
    return MapField(chart, field.target, values), scaled


# ---------------------------------------------------------------------------
# Necks, radii and Hopf-type balance
# ---------------------------------------------------------------------------

def _annulus(mesh: DomainMesh, center: int, r_in: float, r_out: float) -> np.ndarray:
    if r_in < 0 or r_out < r_in:
        raise ParamsError(f"need 0 <= r_in <= r_out, got ({r_in}, {r_out})")
    d = mesh.cell_distances(center)
    return (d > r_in) & (d <= r_out)


def neck_energy(field: MapField, params: GrowthParams, center: int,
                r_in: float, r_out: float) -> float:
    mask = _annulus(field.mesh, center, r_in, r_out)
    return float(energy_per_cell(field, params)[mask].sum())


def neck_dirichlet(field: MapField, center: int, r_in: float, r_out: float) -> float:
    mask = _annulus(field.mesh, center, r_in, r_out)
    return float(dirichlet_per_cell(field)[mask].sum())


def radii_exponent(r: float, p: float, n: int) -> float:
    return float(r ** (n - p))


def _polar_split(field: MapField, center: int):
    dirs, dist = field.mesh.radial_directions(center)
    G = cell_gradients(field)
    dr = np.einsum("ca,caN->cN", dirs, G)
    t = np.einsum("caN,caN->c", G, G)
    dr2 = np.einsum("cN,cN->c", dr, dr)
    return dist, t, dr2, np.maximum(t - dr2, 0.0)


def hopf_balance(field: MapField, params: GrowthParams, center: int, r: float) -> tuple[float, float]:
    """Both sides of the radial balance on the sphere of radius r around center.

    lhs = sum over the shell of w |d_r u|^2,
    rhs = (p-n)/((p-1) r) int_{B_r} A^{p/n}
          + 1/(p-1) sum over the shell of A^{(p-n)/n} [s + (delta+|G|^2)^{(n-2)/2} (delta + |G_tau|^2)]
    with A = s + (delta+|G|^2)^{n/2}. Shell cells are those with |d - r| < h/2,
    weighted by volume / h.
    """
    mesh = field.mesh
    n, p, delta, s = params.n, params.p, params.delta, params.s
    if not r > 0:
        raise ParamsError(f"radius must be positive, got {r}")
    dist, t, dr2, tau2 = _polar_split(field, center)
    band = mesh.spacing
    shell = np.abs(dist - r) < band / 2
    if int(shell.sum()) < SHELL_MIN_CELLS:
        raise ChartError(f"shell of radius {r:.4g} crosses only {int(shell.sum())} cells")
    q = mesh.volumes[shell] / band
    ts, A = t[shell], s + gpow(delta + t, n / 2)
    As = A[shell]
    lhs = float(np.sum(q * weight_of(ts, n, p, delta, s) * dr2[shell]))
    bulk = float(np.sum(mesh.volumes[dist <= r] * gpow(A[dist <= r], p / n)))
    surface = float(np.sum(q * gpow(As, (p - n) / n)
                           * (s + gpow(delta + ts, (n - 2) / 2) * (delta + tau2[shell]))))
    return lhs, (p - n) / ((p - 1) * r) * bulk + surface / (p - 1)


def tangential_neck_energy(field: MapField, params: GrowthParams, center: int,
                           R1: float, R2: float) -> float:
    """sum over A(2 R1, R2/4) of volume |G_tau|^p."""
    if not 0 < R1 or R2 < 8 * R1:
        raise ParamsError(f"need R2 >= 8 R1 > 0, got R1={R1}, R2={R2}")
    dist, _, _, tau2 = _polar_split(field, center)
    mask = (dist > 2 * R1) & (dist <= R2 / 4)
    return float(np.sum(field.mesh.volumes[mask] * gpow(tau2[mask], params.p / 2)))


def gradient_decay_check(field: MapField, center: int, r_in: float, r_out: float) -> float:
    """max over the annulus of distance * |G|; 0 for an empty annulus."""
    mask = _annulus(field.mesh, center, r_in, r_out)
    dist = field.mesh.cell_distances(center)
    G = cell_gradients(field)
    norms = np.sqrt(np.einsum("caN,caN->c", G, G))
    return float(np.max(dist[mask] * norms[mask], initial=0.0))


def annulus_ladder(field: MapField, params: GrowthParams, center: int,
                   r_in: float, r_out: float) -> LadderTable:
    """Dyadic annuli r_in 2^j .. min(r_in 2^(j+1), r_out); Hopf columns empty when unresolved."""
    if not 0 < r_in:
        raise ParamsError(f"ladder needs r_in > 0, got {r_in}")
    e = energy_per_cell(field, params)
    dist, t, dr2, tau2 = _polar_split(field, center)
    rows = []
    a = r_in
    while a < r_out:
        b = min(2 * a, r_out)
        mask = (dist > a) & (dist <= b)
        try:
            lhs, rhs = hopf_balance(field, params, center, b)
        except ChartError:
            lhs = rhs = None
        rows.append(LadderRow(
            r_in=a,
            r_out=b,
            neck_energy=float(e[mask].sum()),
            tangential_energy=float(np.sum(field.mesh.volumes[mask] * gpow(tau2[mask], params.p / 2))),
            hopf_lhs=lhs,
            hopf_rhs=rhs,
        ))
        a = b
    return LadderTable(rows)


# ---------------------------------------------------------------------------
# Energy identity
# ---------------------------------------------------------------------------

@dataclass
class ConcentrationRow:
    k: int
    p: float
    delta: float
    radius: float | None
    node: int | None
    exponent: float | None
    neck_energy: float | None
    neck_dirichlet: float | None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BubbleReport:
    status: str
    message: str = ""
    threshold: float | None = None
    center: int | None = None
    center_position: list[float] | None = None
    radius: float | None = None
    chart_multiple: float = CHART_MULTIPLE_K
    E_pdelta: float = 0.0
    D_n: float = 0.0
    base_energy: float = 0.0
    bubbles: list[float] = field(default_factory=list)
    bubble_direct: float | None = None
    necks: list[dict] = field(default_factory=list)
    neck_total: float | None = None
    radii_exponent: float | None = None
    defect: float = 0.0
    defect_dirichlet: float = 0.0
    separation: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)

    @property
    def bubble_count(self) -> int:
        return len(self.bubbles)

    def ladder(self) -> LadderTable:
        return LadderTable([LadderRow(**row) for row in self.necks])

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "BubbleReport":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    @classmethod
    def from_json(cls, raw: str) -> "BubbleReport":
        return cls.from_dict(json.loads(raw))


def default_threshold(field: MapField) -> float:
    if field.target.is_sphere and field.target.dim == 2:
        return CONCENTRATION_FRACTION * BUBBLE_ENERGY_S2 * field.target.radius ** 2
    raise ParamsError("no default concentration threshold for this target; pass one")


def _detect(mesh: DomainMesh, e: np.ndarray, threshold: float, K: float):
    """(radius, node) of a concentration that fits a K-chart, or a reason string."""
    found = _radius_for(mesh, e, threshold)
    if found is None:
        return None, f"total energy {float(e.sum()):.6g} is below the threshold {threshold:.6g}"
    r, node = found
    if K * r > mesh.chart_limit:
        return None, (f"energy {threshold:.6g} needs radius {r:.4g}; "
                      f"a {K:g}-chart would exceed {mesh.chart_limit:.4g}")
    if r > 1:
        return None, f"energy {threshold:.6g} needs radius {r:.4g} > 1; nothing concentrates"
    return (r, node), ""


def concentration_trace(results, threshold: float | None = None,
                        K: float = CHART_MULTIPLE_K,
                        neck_outer: float = NECK_OUTER_RADIUS) -> list[ConcentrationRow]:
    """Concentration radius, node and neck energies per continuation step."""
    rows = []
    for k, result in enumerate(results):
        f, params = result.field, result.params
        thr = default_threshold(f) if threshold is None else threshold
        e = energy_per_cell(f, params)
        found, _ = _detect(f.mesh, e, thr, K)
        if found is None:
            rows.append(ConcentrationRow(k, params.p, params.delta, None, None, None, None, None))
            continue
        r, node = found
        inner = min(K * r, neck_outer)
        mask = _annulus(f.mesh, node, inner, neck_outer)
        rows.append(ConcentrationRow(
            k, params.p, params.delta, r, node, radii_exponent(r, params.p, params.n),
            float(e[mask].sum()), float(dirichlet_per_cell(f)[mask].sum()),
        ))
    return rows


def radii_exponent_trace(rows: list[ConcentrationRow]) -> list[float | None]:
    return [row.exponent for row in rows]


def entropy_trace(trace, n: int) -> list[float]:
    """(p_k - n) * entropy_k per row of a TraceTable."""
    return [(row.p - n) * row.entropy for row in trace]


def separation_ratios(report: BubbleReport) -> list[float]:
    return [entry["ratio"] for entry in report.separation]


def bubble_report(field: MapField, params: GrowthParams, threshold: float | None = None,
                  K: float = CHART_MULTIPLE_K, neck_outer: float = NECK_OUTER_RADIUS,
                  chart_resolution: int = CHART_RESOLUTION,
                  trace: list[ConcentrationRow] | None = None) -> BubbleReport:
    """Energy identity for a single field: E = base + bubbles + defect."""
    mesh = field.mesh
    threshold = default_threshold(field) if threshold is None else float(threshold)
    e = energy_per_cell(field, params)
    dn = dirichlet_per_cell(field)
    E, D = float(e.sum()), float(dn.sum())
    trace_dicts = [row.to_dict() for row in trace or []]

    found, reason = _detect(mesh, e, threshold, K)
    if found is None:
        return BubbleReport(
            status="no_concentration", message=reason, threshold=threshold,
            chart_multiple=K, E_pdelta=E, D_n=D, base_energy=D,
            defect=abs(E - D), defect_dirichlet=0.0, trace=trace_dicts,
        )

    r, node = found
    dist = mesh.cell_distances(node)
    inside = dist <= K * r
    chart, chart_params = rescale_map(field, node, r, params, K, chart_resolution)
    chart_dn = dirichlet_per_cell(chart)
    bubble = float(chart_dn[chart.mesh.cell_distances(chart_center(chart.mesh)) <= K].sum())
    base = float(dn[~inside].sum())
    ladder = annulus_ladder(field, params, node, K * r, neck_outer) if K * r < neck_outer else LadderTable()

    separation = []
    rest = np.where(dist <= 2 * K * r, 0.0, e)
    second, _ = _detect(mesh, rest, threshold, K)
    if second is not None:
        r2, node2 = second
        d = float(mesh.node_distances(node)[node2])
        ratio = max(r / r2, r2 / r, d / (r + r2))
        separation.append({"node": node2, "radius": r2, "distance": d, "ratio": ratio})
        log.warning("second concentration at node %d (radius %.4g); only the first is analyzed",
                    node2, r2)

    return BubbleReport(
        status="multiple_bubbles" if separation else "single_bubble",
        threshold=threshold,
        center=node,
        center_position=mesh.nodes[node].tolist(),
        radius=r,
        chart_multiple=K,
        E_pdelta=E,
        D_n=D,
        base_energy=base,
        bubbles=[bubble],
        bubble_direct=float(dn[inside].sum()),
        necks=[asdict(row) for row in ladder],
        neck_total=float(dn[(dist > K * r) & (dist <= neck_outer)].sum()),
        radii_exponent=radii_exponent(r, params.p, params.n),
        defect=abs(E - base - bubble),
        defect_dirichlet=abs(D - base - bubble),
        separation=separation,
        trace=trace_dicts,
    )


def energy_identity_report(run, threshold: float | None = None,
                           K: float = CHART_MULTIPLE_K,
                           neck_outer: float = NECK_OUTER_RADIUS,
                           chart_resolution: int = CHART_RESOLUTION) -> BubbleReport:
    """Report on the final field of a continuation run (ContinuationRun or list of SolveResult)."""
    results = getattr(run, "results", run)
    if not results:
        raise ParamsError("energy_identity_report needs at least one solve result")
    trace = concentration_trace(results, threshold, K, neck_outer)
    final = results[-1]
    return bubble_report(final.field, final.params, threshold, K, neck_outer,
                         chart_resolution, trace)
