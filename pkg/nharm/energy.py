"""Discrete energies, their exact gradients and the entropy functional.

All quantities use one-point quadrature: a cell contributes
volume * density(|G_cell|^2), so euclidean_gradient is the exact derivative of
total_energy with respect to the node values.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from nharm.config import CELL_BLOCK, THREADS_ENV
from nharm.inequalities import GrowthParams, ParamsError, density, entropy_density, gpow, weight_of
from nharm.manifolds import DomainMesh, MapField, MeshError, cell_gradients

log = logging.getLogger(__name__)

_threads = 1


def set_threads(count: int | None = None) -> int:
    """Set the worker count; None reads NHARM_THREADS and falls back to 1."""
    global _threads
    if count is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        try:
            count = int(raw) if raw else 1
        except ValueError:
            raise ParamsError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if count < 1:
        raise ParamsError(f"thread count must be >= 1, got {count}")
    _threads = int(count)
    return _threads


def get_threads() -> int:
    return _threads


def blockwise(func, count: int) -> np.ndarray:
    """func(slice) over contiguous blocks of range(count), concatenated in order."""
    if _threads == 1 or count <= CELL_BLOCK:
        return func(slice(0, count))
    blocks = [slice(i, min(i + CELL_BLOCK, count)) for i in range(0, count, CELL_BLOCK)]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        parts = list(pool.map(func, blocks))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EnergyReport:
    total: float
    per_cell: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"total": self.total, "per_cell": self.per_cell.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyReport":
        return cls(total=float(d["total"]), per_cell=np.asarray(d["per_cell"], dtype=float))

    @classmethod
    def from_json(cls, raw: str) -> "EnergyReport":
        return cls.from_dict(json.loads(raw))


@dataclass
class GradientField:
    values: np.ndarray = field(repr=False)
    tangent: bool = False

    def sup_norm(self, weights: np.ndarray | None = None) -> float:
        norms = np.linalg.norm(self.values, axis=1)
        if weights is not None:
            norms = norms / weights
        return float(norms.max(initial=0.0))


def _check(field: MapField, params: GrowthParams) -> None:
    if params.n != field.mesh.n or params.N != field.target.N:
        raise ParamsError(
            f"params (n={params.n}, N={params.N}) do not match the field "
            f"(n={field.mesh.n}, N={field.target.N})"
        )


# ---------------------------------------------------------------------------
# Per-cell quantities
# ---------------------------------------------------------------------------

def gradient_norms(field: MapField) -> np.ndarray:
    """|G|^2 per cell."""
    def block(sl):
        G = cell_gradients(field, sl)
        return np.einsum("caN,caN->c", G, G)
    return blockwise(block, field.mesh.cell_count)


def energy_per_cell(field: MapField, params: GrowthParams) -> np.ndarray:
    _check(field, params)
    mesh = field.mesh

    def block(sl):
        G = cell_gradients(field, sl)
        t = np.einsum("caN,caN->c", G, G)
        return mesh.volumes[sl] * density(t, params.n, params.p, params.delta, params.s)
    return blockwise(block, mesh.cell_count)


def dirichlet_per_cell(field: MapField, n: int | None = None) -> np.ndarray:
    n = field.mesh.n if n is None else n
    return field.mesh.volumes * gpow(gradient_norms(field), n / 2) / n


def total_energy(field: MapField, params: GrowthParams) -> EnergyReport:
    per_cell = energy_per_cell(field, params)
    return EnergyReport(float(per_cell.sum()), per_cell)


def dirichlet_energy(field: MapField, n: int | None = None) -> float:
    """(1/n) sum volume |G|^n; n defaults to the domain dimension."""
    return float(dirichlet_per_cell(field, n).sum())


def p_energy(field: MapField, p: float) -> float:
    return float(np.sum(field.mesh.volumes * gpow(gradient_norms(field), p / 2)) / p)


def entropy(field: MapField, params: GrowthParams) -> float:
    """sum volume (1+(delta+|G|^2)^{n/2})^{p/n} log(1+(delta+|G|^2)^{n/2}), s = 1 always."""
    _check(field, params)
    t = gradient_norms(field)
    return float(np.sum(field.mesh.volumes * entropy_density(t, params.n, params.p, params.delta)))


def _ball_mask(mesh: DomainMesh, center: int, radius: float) -> np.ndarray:
    if radius < 0:
        raise MeshError(f"radius must be >= 0, got {radius}")
    return mesh.cell_distances(center) <= radius


def local_energy(field: MapField, params: GrowthParams, center: int, radius: float) -> float:
    """Energy of the cells whose centroid lies in the closed geodesic ball."""
    per_cell = energy_per_cell(field, params)
    return float(per_cell[_ball_mask(field.mesh, center, radius)].sum())


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def _flux(field: MapField, params: GrowthParams) -> np.ndarray:
    """volume * weight(|G|^2) * G per cell, shape (C, n, N)."""
    mesh = field.mesh

    def block(sl):
        G = cell_gradients(field, sl)
        t = np.einsum("caN,caN->c", G, G)
        w = weight_of(t, params.n, params.p, params.delta, params.s)
        return (mesh.volumes[sl] * w)[:, None, None] * G
    return blockwise(block, mesh.cell_count)


def euclidean_gradient(field: MapField, params: GrowthParams) -> GradientField:
    """Exact gradient of total_energy in the unconstrained node values."""
    _check(field, params)
    mesh = field.mesh
    flux = _flux(field, params)
    B = mesh.gradient_operator
    values = B.T @ flux.reshape(mesh.cell_count * mesh.n, -1)
    return GradientField(np.asarray(values))


def tangent_gradient(field: MapField, params: GrowthParams) -> GradientField:
    g = euclidean_gradient(field, params).values
    if field.target.is_sphere:
        g = field.target.tangent_project(field.values, g)
    return GradientField(g, tangent=True)


def checkerboard_amplitude(field: MapField) -> float:
    """Largest per-node projection of the values onto a mode with zero cell gradients.

    Such a component is invisible to the energy and to its gradient.
    """
    modes = field.mesh.checkerboard_modes
    if modes is None:
        return 0.0
    offsets = field.target.difference(field.values[0], field.values)
    return float(np.linalg.norm(modes @ offsets, axis=1).max() / field.mesh.node_count)


def node_volumes(mesh: DomainMesh) -> np.ndarray:
    """Lumped node measure: every cell shares its volume equally among its vertices."""
    C, k = mesh.cells.shape
    rows = mesh.cells.reshape(-1)
    cols = np.repeat(np.arange(C), k)
    incidence = sparse.csr_matrix((np.ones(C * k), (rows, cols)), shape=(mesh.node_count, C))
    return np.asarray(incidence @ (mesh.volumes / k)).reshape(-1)
