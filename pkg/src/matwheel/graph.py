"""Periodic neighbor graphs with Gaussian-expanded edge distances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import CrystalStructure
from .exceptions import DegenerateCell
from .utils import check_structures

# pairs closer than this count as the same point and never form an edge
ZERO_DISTANCE = 1e-10


@dataclass(frozen=True)
class NeighborParams:
    cutoff: float = 6.0
    max_neighbors: int = 12
    n_centers: int = 31
    gauss_width: float = 0.5

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be > 0")
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")
        if self.n_centers < 2:
            raise ValueError("n_centers must be >= 2")
        if not self.gauss_width > 0:
            raise ValueError("gauss_width must be > 0")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(0.0, self.cutoff, self.n_centers)


@dataclass(frozen=True, eq=False)
class CrystalGraph:
    """Directed neighbor graph; edge ``k`` runs ``src[k] -> dst[k]``."""

    node_species: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    distances: np.ndarray
    features: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.node_species.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def edges(self):
        return [
            (int(s), int(d), float(r), f)
            for s, d, r, f in zip(self.src, self.dst, self.distances, self.features)
        ]


def perpendicular_widths(lattice: np.ndarray) -> np.ndarray:
    """Distances between opposite cell faces, one per lattice vector."""
    a, b, c = lattice
    volume = abs(float(np.dot(a, np.cross(b, c))))
    areas = np.array([
        np.linalg.norm(np.cross(b, c)),
        np.linalg.norm(np.cross(c, a)),
        np.linalg.norm(np.cross(a, b)),
    ])
    with np.errstate(divide="ignore", invalid="ignore"):
        widths = np.where(areas > 0, volume / areas, 0.0)
    return widths


def image_offsets(n: int) -> np.ndarray:
    """All integer offsets in [-n, n]^3, in lexicographic order."""
    rng = range(-n, n + 1)
    return np.array(list(itertools.product(rng, rng, rng)), dtype=np.float64)


def periodic_neighbors(s: CrystalStructure, p: NeighborParams):
    """Up to ``max_neighbors`` nearest periodic images per atom.

    Returns
    -------
    src, dst : ndarray of int
    distances : ndarray of float
        Grouped by source atom; within a source sorted by
        (distance, image offset, dst index).
    offsets : ndarray of shape (n_edges, 3)
        Integer image offset of each destination.
    """
    widths = perpendicular_widths(s.lattice)
    if np.min(widths) <= 1e-12:
        raise DegenerateCell(f"structure {s.id!r} has a perpendicular cell width of {np.min(widths):.3g}")
    n_img = int(math.ceil(p.cutoff / float(np.min(widths))))
    offsets = image_offsets(n_img)
    n_off = offsets.shape[0]
    frac = s.frac_coords
    n = s.n_atoms

    src_l, dst_l, dist_l, off_l = [], [], [], []
    dst_grid = np.broadcast_to(np.arange(n), (n_off, n))
    off_grid = np.broadcast_to(np.arange(n_off)[:, None], (n_off, n))
    for i in range(n):
        diff = frac[None, :, :] - frac[i] + offsets[:, None, :]
        dist = np.linalg.norm(diff @ s.lattice, axis=-1)
        mask = (dist <= p.cutoff) & (dist > ZERO_DISTANCE)
        d = dist[mask]
        j = dst_grid[mask]
        o = off_grid[mask]
        order = np.lexsort((j, o, d))[: p.max_neighbors]
        src_l.append(np.full(order.shape[0], i, dtype=np.int64))
        dst_l.append(j[order].astype(np.int64))
        dist_l.append(d[order])
        off_l.append(offsets[o[order]])

    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0), np.zeros((0, 3))
    return (
        np.concatenate(src_l),
        np.concatenate(dst_l),
        np.concatenate(dist_l),
        np.concatenate(off_l).astype(np.int64),
    )


def gaussian_expand(d, p: NeighborParams) -> np.ndarray:
    """Expand distance(s) on a Gaussian basis centered evenly on [0, cutoff].

    A scalar gives a vector of length ``n_centers``; an array of shape
    ``(m,)`` gives ``(m, n_centers)``.
    """
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-((d[..., None] - p.centers) ** 2) / p.gauss_width ** 2)


def build_graph(s: CrystalStructure, p: NeighborParams) -> CrystalGraph:
    src, dst, dist, _ = periodic_neighbors(s, p)
    feats = gaussian_expand(dist, p).reshape(-1, p.n_centers)
    return CrystalGraph(np.array(s.species), src, dst, dist, feats)


class GraphFeaturizer(TransformerMixin, BaseEstimator):
    """Turn crystal structures into :class:`CrystalGraph` objects.

    Stateless; ``fit`` only validates parameters.
    """

    def __init__(self, cutoff=6.0, max_neighbors=12, n_centers=31, gauss_width=0.5):
        self.cutoff = cutoff
        self.max_neighbors = max_neighbors
        self.n_centers = n_centers
        self.gauss_width = gauss_width

    def _params(self) -> NeighborParams:
        return NeighborParams(self.cutoff, self.max_neighbors, self.n_centers, self.gauss_width)

    def fit(self, X=None, y=None):
        self.params_ = self._params()
        return self

    def transform(self, X):
        p = getattr(self, "params_", None) or self._params()
        return [build_graph(s, p) for s in check_structures(X)]
