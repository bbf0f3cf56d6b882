"""Surface normals, standoff waypoints, and visit ordering.

A waypoint places the UV emitter at a standoff offset along the estimated
surface normal, with the tool axis (approach) pointing back at the surface
point. Two visit orders are available: a serpentine sweep over the dominant
plane of the points, and an open-path TSP heuristic (nearest neighbor
construction followed by 2-opt).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud

ORDER_ZIGZAG = "zigzag"
ORDER_TSP = "tsp"

# Midpoint of the typical 1-2 inch emitter standoff, in meters.
DEFAULT_STANDOFF = 0.0381


@dataclass(frozen=True)
class PlanningConfig:
    standoff: float = DEFAULT_STANDOFF
    normal_k: int = 30
    ordering: str = ORDER_ZIGZAG

    def __post_init__(self):
        if self.standoff <= 0:
            raise ValueError(f"standoff must be positive, got {self.standoff}")
        if self.normal_k < 3:
            raise ValueError(f"normal_k must be >= 3, got {self.normal_k}")
        if self.ordering not in (ORDER_ZIGZAG, ORDER_TSP):
            raise ValueError(f"unknown ordering {self.ordering!r}")


@dataclass(frozen=True, eq=False)
class Waypoint:
    """Standoff pose: position, unit approach axis aimed at the surface point."""

    position: np.ndarray
    approach: np.ndarray
    surface_point: np.ndarray
    tangent: np.ndarray
    dwell: float | None = None

    def __post_init__(self):
        for name in ("position", "approach", "surface_point", "tangent"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if abs(np.linalg.norm(self.approach) - 1.0) > 1e-9:
            raise ValueError("approach must be a unit vector")


def estimate_normals(cloud: PointCloud, k: int = 30,
                     viewpoint=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Per-point unit normals from the covariance of the k nearest neighbors.

    The neighborhood of each point contains the point itself plus its k - 1
    nearest neighbors; the normal is the eigenvector of the smallest
    covariance eigenvalue, sign-flipped to face ``viewpoint``. Returns
    ``(normals, valid)`` where ``valid`` is False for degenerate
    neighborhoods (rank < 2), whose normals are meaningless and whose points
    must be dropped from waypointing.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError(f"normal estimation needs k >= 3, got {k}")
    if n < k:
        raise ValueError(f"cloud has {n} points, normal estimation needs at least k={k}")
    pts = cloud.points
    viewpoint = np.asarray(viewpoint, dtype=np.float64).reshape(3)

    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k, workers=-1)
    neighbors = pts[idx]
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)

    normals = eigvecs[:, :, 0]
    valid = (eigvals[:, 2] > 0) & (eigvals[:, 1] > 1e-9 * eigvals[:, 2])

    flip = np.einsum("ij,ij->i", normals, viewpoint[None, :] - pts) < 0
    normals = np.where(flip[:, None], -normals, normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals, valid


_WORLD_X = np.array([1.0, 0.0, 0.0])
_WORLD_Y = np.array([0.0, 1.0, 0.0])


def _tangent_for(approach: np.ndarray) -> np.ndarray:
    # Deterministic orientation completion: world x projected onto the
    # tangent plane, falling back to world y when nearly parallel.
    t = _WORLD_X - np.dot(_WORLD_X, approach) * approach
    norm = np.linalg.norm(t)
    if norm < 1e-6:
        t = _WORLD_Y - np.dot(_WORLD_Y, approach) * approach
        norm = np.linalg.norm(t)
    return t / norm


def make_waypoints(points: np.ndarray, normals: np.ndarray, standoff: float) -> list[Waypoint]:
    """Offset each surface point along its normal; approach aims back at it."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if points.shape != normals.shape:
        raise ValueError(f"{points.shape[0]} points vs {normals.shape[0]} normals")
    if points.size and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-9:
        raise ValueError("normals must be unit vectors")
    out = []
    for p, n in zip(points, normals):
        approach = -n
        out.append(Waypoint(p + standoff * n, approach, p, _tangent_for(approach)))
    return out


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    # Make eigenvector signs deterministic: largest-magnitude component positive.
    return -v if v[int(np.argmax(np.abs(v)))] < 0 else v


def _dominant_plane_axes(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two in-plane axes of the dominant plane of a point set.

    Uses the two largest principal axes; when they are indistinguishable
    (isotropic spread, e.g. a square grid) falls back to world-derived axes
    in the plane so the sweep direction stays deterministic.
    """
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / max(len(points), 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = _canonical_sign(eigvecs[:, 0])
    if eigvals[2] - eigvals[1] > 1e-9 * max(eigvals[2], 1e-300):
        return _canonical_sign(eigvecs[:, 2]), _canonical_sign(eigvecs[:, 1])
    a1 = _WORLD_X - np.dot(_WORLD_X, normal) * normal
    if np.linalg.norm(a1) < 1e-6:
        a1 = _WORLD_Y - np.dot(_WORLD_Y, normal) * normal
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(normal, a1)
    return a1, _canonical_sign(a2)


def order_zigzag(waypoints: list[Waypoint], row_width: float = 0.070) -> list[Waypoint]:
    """Serpentine sweep: rows of ``row_width`` along the dominant axis,
    alternating direction along the secondary axis."""
    if not waypoints:
        raise ValueError("cannot order zero waypoints")
    if row_width <= 0:
        raise ValueError(f"row_width must be positive, got {row_width}")
    if len(waypoints) == 1:
        return list(waypoints)
    pts = np.stack([w.surface_point for w in waypoints])
    a1, a2 = _dominant_plane_axes(pts)
    c1 = pts @ a1
    c2 = pts @ a2
    rows = np.floor((c1 - c1.min()) / row_width).astype(np.int64)
    sweep = np.where(rows % 2 == 0, c2, -c2)
    order = np.lexsort((np.arange(len(waypoints)), sweep, rows))
    return [waypoints[i] for i in order]


def path_length(positions: np.ndarray) -> float:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if positions.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(positions, axis=0), axis=1).sum())


def _nearest_neighbor_order(dmat: np.ndarray, start: int) -> list[int]:
    n = dmat.shape[0]
    visited = np.zeros(n, dtype=bool)
    order = [start]
    visited[start] = True
    current = start
    for _ in range(n - 1):
        dists = np.where(visited, np.inf, dmat[current])
        current = int(np.argmin(dists))
        visited[current] = True
        order.append(current)
    return order


def two_opt(order: list[int], dmat: np.ndarray) -> tuple[list[int], list[float]]:
    """Open-path 2-opt with a fixed first node; accepts only improving swaps.

    Returns the improved order and the path-length history (seed first); the
    history is non-increasing by construction.
    """
    order = list(order)
    n = len(order)
    length = float(sum(dmat[order[i], order[i + 1]] for i in range(n - 1)))
    history = [length]
    if n < 3:
        return order, history
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                before = order[i - 1]
                delta = dmat[before, order[j]] - dmat[before, order[i]]
                if j < n - 1:
                    after = order[j + 1]
                    delta += dmat[order[i], after] - dmat[order[j], after]
                if delta < -1e-12:
                    order[i:j + 1] = order[i:j + 1][::-1]
                    length += float(delta)
                    history.append(length)
                    improved = True
    return order, history


def _relocate_pass(order: list[int], dmat: np.ndarray, length: float,
                   history: list[float]) -> tuple[list[int], float, bool]:
    """One sweep of single-node relocations (start stays fixed)."""
    n = len(order)
    improved = False
    for p in range(1, n):
        u = order[p]
        prev_u = order[p - 1]
        if p < n - 1:
            next_u = order[p + 1]
            gain = dmat[prev_u, u] + dmat[u, next_u] - dmat[prev_u, next_u]
        else:
            gain = dmat[prev_u, u]
        rest = order[:p] + order[p + 1:]
        for q in range(1, n):
            if q == p:
                continue
            if q < n - 1:
                a, b = rest[q - 1], rest[q]
                cost = dmat[a, u] + dmat[u, b] - dmat[a, b]
            else:
                cost = dmat[rest[-1], u]
            delta = cost - gain
            if delta < -1e-12:
                rest.insert(q, u)
                order = rest
                length += float(delta)
                history.append(length)
                improved = True
                break
        if improved:
            break
    return order, length, improved


def order_tsp(waypoints: list[Waypoint], base_position=(0.0, 0.0, 0.0)) -> list[Waypoint]:
    """Open-path TSP heuristic starting from the waypoint nearest the base.

    Nearest-neighbor construction seeds a local search of 2-opt reversals
    plus single-node relocations (reversals alone stall in poor local optima
    on small instances); every accepted move shortens the path, so the final
    length never exceeds the seed's.
    """
    if not waypoints:
        raise ValueError("cannot order zero waypoints")
    if len(waypoints) == 1:
        return list(waypoints)
    pos = np.stack([w.position for w in waypoints])
    base = np.asarray(base_position, dtype=np.float64).reshape(3)
    start = int(np.argmin(np.linalg.norm(pos - base, axis=1)))
    diff = pos[:, None, :] - pos[None, :, :]
    dmat = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    order = _nearest_neighbor_order(dmat, start)

    history: list[float] = []
    while True:
        order, sweep_history = two_opt(order, dmat)
        if not history:
            history = sweep_history
        else:
            history.extend(sweep_history[1:])
        order, length, moved = _relocate_pass(order, dmat, history[-1], history)
        if not moved:
            break
    return [waypoints[i] for i in order]
