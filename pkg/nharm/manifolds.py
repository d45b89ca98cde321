"""Domain meshes, embedded targets and map fields.

Torus meshes are uniform periodic grids with multilinear cells and a one-point
(centroid) gradient. Icosphere meshes are geodesic triangulations of S^2 with
piecewise-linear elements on the flat triangles. Targets are the round sphere
S^k in R^(k+1) and the flat torus T^k in R^k.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from nharm.config import BASE_POINT_TOL, DEGREE_RESIDUAL_MAX, ON_MANIFOLD_TOL

log = logging.getLogger(__name__)

MESH_KINDS = ("torus2", "torus3", "icosphere2")


class MeshError(ValueError):
    pass


class TargetError(ValueError):
    pass


class ChartError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Domain meshes
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DomainMesh:
    """Discretized domain.

    nodes      (V, d)     ambient coordinates (torus: chart coordinates)
    cells      (C, k)     node indices per cell
    volumes    (C,)       cell measure
    stencils   (C, n, k)  node values -> per-cell Jacobian (local frame)
    centroids  (C, d)
    frames     (C, n, d)  local orthonormal frame of each cell in ambient space
    """

    kind: str
    n: int
    nodes: np.ndarray
    cells: np.ndarray
    volumes: np.ndarray
    stencils: np.ndarray
    centroids: np.ndarray
    frames: np.ndarray
    spacing: float
    resolution: int | None = None
    subdivisions: int | None = None
    side: float | None = None
    origin: np.ndarray | None = None

    @property
    def is_torus(self) -> bool:
        return self.kind.startswith("torus")

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def cell_count(self) -> int:
        return len(self.cells)

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @property
    def diameter(self) -> float:
        if self.is_torus:
            return self.side * math.sqrt(self.n) / 2
        return math.pi

    @property
    def chart_limit(self) -> float:
        """Largest radius a flat chart around any node can cover."""
        if self.is_torus:
            return self.side / 2
        return math.pi / 2

    @cached_property
    def gradient_operator(self) -> sparse.csr_matrix:
        """Sparse B with (B @ U).reshape(C, n, N) the cell Jacobians of U."""
        C, n, k = self.stencils.shape
        rows = np.repeat(np.arange(C * n), k)
        cols = np.repeat(self.cells, n, axis=0).reshape(-1)
        return sparse.csr_matrix(
            (self.stencils.reshape(-1), (rows, cols)),
            shape=(C * n, self.node_count),
        )

    @cached_property
    def checkerboard_modes(self) -> np.ndarray | None:
        """(M, V) sign patterns the centroid stencil maps to zero; None off even torus grids.

        One mode (-1)^(i_a + i_b + ...) per subset of at least two axes.
        """
        if not self.is_torus or self.resolution % 2:
            return None
        origin = self.nodes.min(axis=0) if self.origin is None else self.origin
        idx = np.rint((self.nodes - origin) / self.spacing).astype(np.int64)
        modes = []
        for size in range(2, self.n + 1):
            for axes in itertools.combinations(range(self.n), size):
                modes.append(1.0 - 2.0 * (idx[:, list(axes)].sum(axis=1) % 2))
        return np.array(modes)

    # -- geometry ----------------------------------------------------------

    def _min_image(self, delta: np.ndarray) -> np.ndarray:
        L = self.side
        return delta - L * np.round(delta / L)

    def displacement(self, center: int, points: np.ndarray) -> np.ndarray:
        """Torus only: min-image displacement from node `center` to `points`."""
        return self._min_image(points - self.nodes[center])

    def _distances(self, center: int, points: np.ndarray) -> np.ndarray:
        if self.is_torus:
            return np.linalg.norm(self.displacement(center, points), axis=-1)
        c = self.nodes[center]
        return np.arccos(np.clip(points @ c, -1.0, 1.0))

    def node_distances(self, center: int) -> np.ndarray:
        self._check_node(center)
        return self._distances(center, self.nodes)

    def cell_distances(self, center: int) -> np.ndarray:
        self._check_node(center)
        return self._distances(center, self.centroids)

    def radial_directions(self, center: int) -> tuple[np.ndarray, np.ndarray]:
        """Unit radial direction of every cell in its local frame, plus distances.

        Cells at the center (or its antipode on the sphere) get a zero vector.
        """
        self._check_node(center)
        if self.is_torus:
            disp = self.displacement(center, self.centroids)
            dist = np.linalg.norm(disp, axis=1)
            local = disp
        else:
            c = self.nodes[center]
            x = self.centroids
            cosd = np.clip(x @ c, -1.0, 1.0)
            dist = np.arccos(cosd)
            away = -(c[None, :] - cosd[:, None] * x)
            local = np.einsum("cad,cd->ca", self.frames, away)
        norm = np.linalg.norm(local, axis=1)
        out = np.zeros_like(local)
        ok = norm > 1e-14
        out[ok] = local[ok] / norm[ok, None]
        return out, dist

    def _check_node(self, node: int) -> None:
        if not 0 <= int(node) < self.node_count:
            raise MeshError(f"node {node} outside 0..{self.node_count - 1}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.is_torus:
            d["resolution"] = self.resolution
            d["side"] = self.side
            d["origin"] = self.origin.tolist()
        else:
            d["subdivisions"] = self.subdivisions
        d["nodes"] = self.nodes.tolist()
        d["cells"] = self.cells.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DomainMesh":
        try:
            kind = d["kind"]
            if kind == "icosphere2":
                mesh = build_icosphere_mesh(int(d["subdivisions"]))
            elif kind in ("torus2", "torus3"):
                origin = d.get("origin")
                mesh = build_torus_mesh(
                    int(kind[-1]), int(d["resolution"]), float(d.get("side", 1.0)),
                    origin=None if origin is None else np.asarray(origin, dtype=float),
                )
            else:
                raise MeshError(f"unknown mesh kind {kind!r}")
        except KeyError as e:
            raise MeshError(f"mesh JSON missing field {e.args[0]!r}") from None
        if "nodes" in d:
            nodes = np.asarray(d["nodes"], dtype=float)
            if nodes.shape != mesh.nodes.shape or not np.allclose(nodes, mesh.nodes, atol=1e-12):
                raise MeshError("mesh JSON nodes do not match the declared geometry")
        if "cells" in d:
            cells = np.asarray(d["cells"], dtype=np.int64)
            if cells.shape != mesh.cells.shape or not np.array_equal(cells, mesh.cells):
                raise MeshError("mesh JSON cells do not match the declared geometry")
        return mesh

    @classmethod
    def from_json(cls, raw: str) -> "DomainMesh":
        return cls.from_dict(json.loads(raw))


def mesh_to_dict(mesh: DomainMesh) -> dict:
    return mesh.to_dict()


def mesh_from_dict(d: dict) -> DomainMesh:
    return DomainMesh.from_dict(d)


def build_torus_mesh(n: int, resolution: int, side: float = 1.0,
                     origin: np.ndarray | None = None) -> DomainMesh:
    """Uniform periodic grid on [origin, origin + side)^n with multilinear cells.

    Node (i_1, ..., i_n) sits at origin + i*h and owns the cell whose lower
    corner it is; vertex b of that cell is node i + b (mod resolution) for
    b in {0,1}^n in lexicographic order.
    """
    if n not in (2, 3):
        raise MeshError(f"torus dimension must be 2 or 3, got {n}")
    if int(resolution) != resolution or resolution < 2:
        raise MeshError(f"torus resolution must be an integer >= 2, got {resolution}")
    if not side > 0:
        raise MeshError(f"torus side must be positive, got {side}")
    m = int(resolution)
    h = side / m
    origin = np.zeros(n) if origin is None else np.asarray(origin, dtype=float).reshape(n)

    shape = (m,) * n
    idx = np.indices(shape).reshape(n, -1).T          # (V, n), C order
    nodes = origin + idx * h
    corners = np.array(list(itertools.product((0, 1), repeat=n)))   # (k, n)
    k = len(corners)
    cells = np.empty((len(idx), k), dtype=np.int64)
    for j, b in enumerate(corners):
        cells[:, j] = np.ravel_multi_index(((idx + b) % m).T, shape)

    stencil = (2 * corners.T - 1) / (2 ** (n - 1) * h)  # (n, k)
    C = len(cells)
    return DomainMesh(
        kind=f"torus{n}",
        n=n,
        nodes=nodes,
        cells=cells,
        volumes=np.full(C, h ** n),
        stencils=np.broadcast_to(stencil, (C, n, k)).copy(),
        centroids=nodes + h / 2,
        frames=np.broadcast_to(np.eye(n), (C, n, n)).copy(),
        spacing=h,
        resolution=m,
        side=float(side),
        origin=origin,
    )


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    r = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1.0, r, 0.0], [1.0, r, 0.0], [-1.0, -r, 0.0], [1.0, -r, 0.0],
        [0.0, -1.0, r], [0.0, 1.0, r], [0.0, -1.0, -r], [0.0, 1.0, -r],
        [r, 0.0, -1.0], [r, 0.0, 1.0], [-r, 0.0, -1.0], [-r, 0.0, 1.0],
    ])
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def _subdivide(verts: list, faces: np.ndarray) -> np.ndarray:
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(out, dtype=np.int64)


def build_icosphere_mesh(subdivisions: int) -> DomainMesh:
    """Geodesic triangulation of the unit sphere, 10*4^s + 2 nodes."""
    if int(subdivisions) != subdivisions or subdivisions < 0:
        raise MeshError(f"subdivisions must be an integer >= 0, got {subdivisions}")
    base, faces = _icosahedron()
    verts = list(base)
    for _ in range(int(subdivisions)):
        faces = _subdivide(verts, faces)
    nodes = np.array(verts)

    a, b, c = (nodes[faces[:, i]] for i in range(3))
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[outward] = faces[outward][:, [0, 2, 1]]
    a, b, c = (nodes[faces[:, i]] for i in range(3))

    ab, ac = b - a, c - a
    normal = np.cross(ab, ac)
    area2 = np.linalg.norm(normal, axis=1)
    e1 = ab / np.linalg.norm(ab, axis=1, keepdims=True)
    e2 = np.cross(normal / area2[:, None], e1)
    frames = np.stack([e1, e2], axis=1)                       # (C, 2, 3)
    edges = np.einsum("cad,ckd->cka", frames, np.stack([ab, ac], axis=1))  # (C, 2 edges, 2)
    local = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    stencils = np.linalg.solve(edges, np.broadcast_to(local, (len(faces), 2, 3)))

    centroids = a + b + c
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    lengths = np.linalg.norm(nodes[faces[:, 1]] - nodes[faces[:, 0]], axis=1)
    return DomainMesh(
        kind="icosphere2",
        n=2,
        nodes=nodes,
        cells=faces,
        volumes=area2 / 2,
        stencils=stencils,
        centroids=centroids,
        frames=frames,
        spacing=float(lengths.mean()),
        subdivisions=int(subdivisions),
    )


def geodesic_ball_nodes(mesh: DomainMesh, center: int, radius: float) -> np.ndarray:
    if radius < 0:
        raise MeshError(f"radius must be >= 0, got {radius}")
    return np.flatnonzero(mesh.node_distances(center) <= radius)


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetManifold:
    """Round sphere S^k of given radius in R^(k+1), or flat torus R^k / periods."""

    kind: str
    dim: int
    radius: float = 1.0
    periods: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("sphere", "torus"):
            raise TargetError(f"unknown target kind {self.kind!r}")
        if self.dim < 1:
            raise TargetError(f"target dimension must be >= 1, got {self.dim}")
        if self.kind == "sphere" and not self.radius > 0:
            raise TargetError(f"sphere radius must be positive, got {self.radius}")
        if self.kind == "torus":
            if len(self.periods) != self.dim or min(self.periods) <= 0:
                raise TargetError(f"torus needs {self.dim} positive periods, got {self.periods}")

    @classmethod
    def sphere(cls, k: int, radius: float = 1.0) -> "TargetManifold":
        return cls("sphere", k, radius=radius)

    @classmethod
    def flat_torus(cls, periods) -> "TargetManifold":
        periods = tuple(float(p) for p in periods)
        return cls("torus", len(periods), periods=periods)

    @property
    def N(self) -> int:
        return self.dim + 1 if self.kind == "sphere" else self.dim

    @property
    def is_sphere(self) -> bool:
        return self.kind == "sphere"

    def _ambient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.N:
            raise TargetError(f"expected ambient dimension {self.N}, got {x.shape[-1]}")
        return x

    def project(self, x) -> np.ndarray:
        """Nearest-point retraction; rows of a (V, N) array are projected independently."""
        x = self._ambient(x)
        if self.kind == "torus":
            P = np.asarray(self.periods)
            r = np.mod(x, P)
            return np.where(r >= P, r - P, r)
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(norm == 0):
            raise TargetError("cannot project the zero vector onto a sphere")
        on = np.abs(norm - self.radius) <= 8 * np.finfo(float).eps * self.radius
        return np.where(on, x, x * (self.radius / norm))

    def residual(self, x) -> np.ndarray:
        x = self._ambient(x)
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(x, axis=-1) - self.radius)
        P = np.asarray(self.periods)
        below = np.maximum(-x, 0.0)
        above = np.maximum(x - P, 0.0)
        return np.max(below + above, axis=-1)

    def _check_base(self, base) -> np.ndarray:
        base = self._ambient(base)
        worst = float(np.max(self.residual(base)))
        if worst > BASE_POINT_TOL:
            raise TargetError(f"base point off the target by {worst:.3e}")
        return base

    def normal(self, base) -> np.ndarray:
        base = self._check_base(base)
        if self.kind == "torus":
            return np.zeros_like(base)
        return base / np.linalg.norm(base, axis=-1, keepdims=True)

    def tangent_projector(self, base) -> np.ndarray:
        """N x N orthogonal projector onto the tangent space at a single base point."""
        nu = self.normal(base)
        return np.eye(self.N) - np.outer(nu, nu)

    def tangent_project(self, base, v) -> np.ndarray:
        v = self._ambient(v)
        if self.kind == "torus":
            self._check_base(base)
            return v.copy()
        nu = self.normal(base)
        return v - np.sum(v * nu, axis=-1, keepdims=True) * nu

    def second_fundamental_form(self, base, X, Y) -> np.ndarray:
        base = self._check_base(base)
        X, Y = self._ambient(X), self._ambient(Y)
        if self.kind == "torus":
            return np.zeros(self.N)
        nu = base / np.linalg.norm(base)
        for name, v in (("X", X), ("Y", Y)):
            if abs(float(v @ nu)) > BASE_POINT_TOL * max(1.0, float(np.linalg.norm(v))):
                raise TargetError(f"{name} is not tangent at the base point")
        return -float(X @ Y) * nu / self.radius

    def difference(self, a, b) -> np.ndarray:
        """b - a in ambient space; shortest representative on the flat torus."""
        d = self._ambient(b) - self._ambient(a)
        if self.kind == "torus":
            P = np.asarray(self.periods)
            d = d - P * np.round(d / P)
        return d

    def to_dict(self) -> dict:
        if self.kind == "sphere":
            return {"kind": "sphere", "dim": self.dim, "radius": self.radius}
        return {"kind": "torus", "periods": list(self.periods)}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetManifold":
        kind = d.get("kind")
        if kind == "sphere":
            return cls.sphere(int(d["dim"]), float(d.get("radius", 1.0)))
        if kind == "torus":
            return cls.flat_torus(d["periods"])
        raise TargetError(f"unknown target kind {kind!r}")


def project_to_target(target: TargetManifold, x) -> np.ndarray:
    return target.project(x)


def tangent_project(target: TargetManifold, base, v) -> np.ndarray:
    return target.tangent_project(base, v)


def second_fundamental_form(target: TargetManifold, base, X, Y) -> np.ndarray:
    return target.second_fundamental_form(base, X, Y)


# ---------------------------------------------------------------------------
# Map fields
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MapField:
    mesh: DomainMesh
    target: TargetManifold
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.mesh.node_count, self.target.N)
        if self.values.shape != expected:
            raise TargetError(f"field shape {self.values.shape} != {expected}")
        worst = float(np.max(self.target.residual(self.values), initial=0.0))
        if worst > ON_MANIFOLD_TOL * self.target.radius:
            raise TargetError(f"field value off the target by {worst:.3e}")

    @classmethod
    def from_ambient(cls, mesh: DomainMesh, target: TargetManifold, values) -> "MapField":
        return cls(mesh, target, target.project(values))

    @classmethod
    def constant(cls, mesh: DomainMesh, target: TargetManifold, value) -> "MapField":
        point = target.project(np.asarray(value, dtype=float))
        return cls(mesh, target, np.tile(point, (mesh.node_count, 1)))

    def with_values(self, values) -> "MapField":
        return MapField(self.mesh, self.target, values)

    def gradients(self, block: slice = slice(None)) -> np.ndarray:
        return cell_gradients(self, block)

    def to_dict(self) -> dict:
        return {
            "mesh": self.mesh.to_dict(),
            "target": self.target.to_dict(),
            "values": self.values.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MapField":
        try:
            mesh = DomainMesh.from_dict(d["mesh"])
            target = TargetManifold.from_dict(d["target"])
            values = d["values"]
        except KeyError as e:
            raise MeshError(f"field JSON missing field {e.args[0]!r}") from None
        return cls(mesh, target, np.asarray(values, dtype=float))

    @classmethod
    def from_json(cls, raw: str) -> "MapField":
        return cls.from_dict(json.loads(raw))


def cell_gradients(field: MapField, block: slice = slice(None)) -> np.ndarray:
    """(C, n, N) per-cell Jacobians in each cell's local frame."""
    mesh = field.mesh
    cells = mesh.cells[block]
    u = field.values
    diffs = field.target.difference(u[cells[:, :1]], u[cells])   # (C, k, N)
    return np.einsum("cak,ckN->caN", mesh.stencils[block], diffs)


def cell_gradient(mesh: DomainMesh, field: MapField, cell: int) -> np.ndarray:
    if field.mesh is not mesh:
        raise MeshError("field is defined on a different mesh")
    if not 0 <= cell < mesh.cell_count:
        raise MeshError(f"cell {cell} outside 0..{mesh.cell_count - 1}")
    return cell_gradients(field, slice(cell, cell + 1))[0]


# ---------------------------------------------------------------------------
# Degree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegreeResult:
    value: int
    raw: float
    residual: float
    degenerate: bool

    def __int__(self) -> int:
        return self.value


def _triangles(mesh: DomainMesh) -> np.ndarray:
    if mesh.kind == "icosphere2":
        return mesh.cells
    # quad vertices are (00, 01, 10, 11) in (x, y) bits; split counter-clockwise
    return np.concatenate([mesh.cells[:, [0, 2, 3]], mesh.cells[:, [0, 3, 1]]])


def degree(field: MapField) -> DegreeResult:
    """Normalized integral of the pulled-back volume form of S^n."""
    mesh, target = field.mesh, field.target
    if not target.is_sphere or target.dim != mesh.n:
        raise TargetError(f"degree needs an S^{mesh.n} target, got {target.kind} of dim {target.dim}")
    u = field.values / target.radius
    if mesh.n == 2:
        tri = _triangles(mesh)
        a, b, c = u[tri[:, 0]], u[tri[:, 1]], u[tri[:, 2]]
        triple = np.einsum("ij,ij->i", a, np.cross(b, c))
        denom = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) \
            + np.einsum("ij,ij->i", c, a)
        raw = float(np.sum(2.0 * np.arctan2(triple, denom)) / (4 * math.pi))
    else:
        G = cell_gradients(field) / target.radius
        mean = u[mesh.cells].mean(axis=1)
        mean /= np.linalg.norm(mean, axis=1, keepdims=True)
        det = np.linalg.det(np.concatenate([G, mean[:, None, :]], axis=1))
        raw = float(np.sum(mesh.volumes * det) / (2 * math.pi ** 2))
    value = int(round(raw))
    residual = abs(raw - value)
    if residual > DEGREE_RESIDUAL_MAX:
        log.warning("degree %.4f is %.3f from the nearest integer", raw, residual)
    return DegreeResult(value, raw, residual, residual > DEGREE_RESIDUAL_MAX)


# ---------------------------------------------------------------------------
# Explicit maps
# ---------------------------------------------------------------------------

def _inverse_stereographic(y: np.ndarray) -> np.ndarray:
    """R^n -> S^n with 0 -> north pole (last axis +1), infinity -> south pole."""
    sq = np.sum(y * y, axis=1, keepdims=True)
    return np.concatenate([2 * y, 1 - sq], axis=1) / (1 + sq)


def identity_field(mesh: DomainMesh, target: TargetManifold) -> MapField:
    if mesh.kind == "icosphere2" and target.is_sphere and target.dim == 2:
        return MapField.from_ambient(mesh, target, mesh.nodes * target.radius)
    if mesh.is_torus and target.kind == "torus" and target.dim == mesh.n:
        return MapField.from_ambient(mesh, target, mesh.nodes)
    raise TargetError(f"no identity map from {mesh.kind} to {target.kind}^{target.dim}")


def stereographic_bubble(mesh: DomainMesh, target: TargetManifold, degree: int,
                         center: int | None = None, scale: float | None = None) -> MapField:
    """Explicit degree-d map into S^n.

    On the icosphere the map is z -> (z/scale)^d in the stereographic chart from
    the north pole (d = 1, scale = 1 is the identity). On a torus the bubble
    (xi / (scale * (1 - |xi|^2/R^2)))^d, R = side/2, is placed at node `center`
    and equals the south pole outside B_R, which keeps it periodic.
    """
    if not target.is_sphere or target.dim != mesh.n:
        raise TargetError(f"degree maps need an S^{mesh.n} target")
    d = int(degree)
    north = np.zeros(target.N)
    north[-1] = 1.0
    if d == 0:
        return MapField.constant(mesh, target, north)

    if mesh.kind == "icosphere2":
        scale = 1.0 if scale is None else float(scale)
        x = mesh.nodes
        pole = x[:, 2] > 1 - 1e-14
        z = (x[:, 0] + 1j * x[:, 1]) / np.where(pole, 1.0, 1 - x[:, 2])
        w = (z / scale) ** abs(d)
        if d < 0:
            w = np.conj(w)
        sq = np.abs(w) ** 2
        u = np.stack([2 * w.real, 2 * w.imag, sq - 1], axis=1) / (1 + sq)[:, None]
        u[pole] = north
        return MapField.from_ambient(mesh, target, u * target.radius)

    if mesh.n == 3 and abs(d) != 1:
        raise TargetError("torus3 bubbles are available for degree -1, 0, 1 only")
    scale = 0.1 * mesh.side if scale is None else float(scale)
    if not scale > 0:
        raise TargetError(f"bubble scale must be positive, got {scale}")
    if center is None:
        mid = mesh.origin + mesh.side / 2
        center = int(np.argmin(np.linalg.norm(mesh.nodes - mid, axis=1)))
    R = mesh.side / 2
    xi = mesh.displacement(center, mesh.nodes)
    rho2 = np.sum(xi * xi, axis=1) / R ** 2
    inside = rho2 < 1
    u = np.tile(-north, (mesh.node_count, 1))
    y = xi[inside] / (scale * (1 - rho2[inside]))[:, None]
    if mesh.n == 2:
        w = (y[:, 0] + 1j * y[:, 1]) ** abs(d)
        if d < 0:
            w = np.conj(w)
        y = np.stack([w.real, w.imag], axis=1)
    elif d < 0:
        y[:, 0] = -y[:, 0]
    u[inside] = _inverse_stereographic(y)
    return MapField.from_ambient(mesh, target, u * target.radius)
