"""Reference simplices: geometry, orientation data, and quadrature.

The 3D reference cell is the unit tetrahedron, whose four faces have all
interior angles below 2*pi/3; the 2D cell is the unit right triangle
(maximal angle pi/2, regularity index 2); the 1D cell is (-1, 1).

Faces carry congruence charts into the plane so that surface differential
operators computed on the planar copy coincide with the traced 3D ones.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from . import orthopoly

MAX_QUAD_DEGREE = 40


class Cell:
    """A d-simplex given by its vertices in d-dimensional coordinates.

    Immutable after construction. `key` identifies the cell for caching.
    """

    def __init__(self, vertices, key):
        self.vertices = np.asarray(vertices, dtype=float)
        self.dim = self.vertices.shape[1]
        if self.vertices.shape[0] != self.dim + 1:
            raise ValueError("simplex needs dim+1 vertices")
        self.key = key
        if self.dim == 1:
            self._v0 = 0.5 * (self.vertices[0, 0] + self.vertices[1, 0])
            self._A = np.array([[0.5 * (self.vertices[1, 0] - self.vertices[0, 0])]])
        else:
            self._v0 = self.vertices[0]
            self._A = (self.vertices[1:] - self.vertices[0]).T
        self._Ainv = np.linalg.inv(self._A)
        self._detA = abs(np.linalg.det(self._A))

    @property
    def measure(self):
        ref = {1: 2.0, 2: 0.5, 3: 1.0 / 6.0}[self.dim]
        return ref * self._detA

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)

    @property
    def inradius(self):
        # measure = (1/d) * inradius * sum of facet measures
        if self.dim == 1:
            return 0.5 * self.measure
        facets = []
        for i in range(self.dim + 1):
            vs = np.delete(self.vertices, i, axis=0)
            if self.dim == 2:
                facets.append(np.linalg.norm(vs[1] - vs[0]))
            else:
                facets.append(
                    0.5 * np.linalg.norm(np.cross(vs[1] - vs[0], vs[2] - vs[0]))
                )
        return self.dim * self.measure / sum(facets)

    def to_reference(self, pts):
        pts = np.asarray(pts)
        if pts.ndim == 1:
            pts = pts[:, None]
        if self.dim == 1:
            return (pts - self._v0) @ self._Ainv.T
        return (pts - self._v0) @ self._Ainv.T

    def from_reference(self, ref_pts):
        ref_pts = np.asarray(ref_pts)
        if ref_pts.ndim == 1:
            ref_pts = ref_pts[:, None]
        return ref_pts @ self._A.T + (
            self._v0 if self.dim > 1 else np.array([self._v0])
        )

    def n_modes(self, degree):
        return orthopoly.n_modes(self.dim, degree)

    def tabulate(self, degree, pts):
        """Orthonormal modal basis values at cell points, (n_modes, n_pts)."""
        ref = self.to_reference(pts)
        return orthopoly.tabulate(self.dim, degree, ref) / np.sqrt(self._detA)

    def tabulate_grad(self, degree, pts):
        ref = self.to_reference(pts)
        g = orthopoly.tabulate_grad(self.dim, degree, ref) / np.sqrt(self._detA)
        return np.einsum("mpk,kl->mpl", g, self._Ainv)

    def __repr__(self):
        return f"Cell({self.key}, dim={self.dim})"


@dataclass(frozen=True)
class QuadratureRule:
    dim: int
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int


@lru_cache(maxsize=None)
def _reference_rule(dim, degree):
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_QUAD_DEGREE:
        raise ValueError(
            f"unsupported degree {degree}: quadrature tables cap at {MAX_QUAD_DEGREE}"
        )
    n = degree // 2 + 1
    xg, wg = leggauss(n)
    if dim == 1:
        return xg[:, None], wg
    u = 0.5 * (xg + 1.0)
    wu = 0.5 * wg
    y1, o1 = roots_jacobi(n, 1, 0)
    v = 0.5 * (y1 + 1.0)
    wv = 0.25 * o1
    if dim == 2:
        U, V = np.meshgrid(u, v, indexing="ij")
        WU, WV = np.meshgrid(wu, wv, indexing="ij")
        pts = np.stack([(U * (1 - V)).ravel(), V.ravel()], axis=1)
        wts = (WU * WV).ravel()
        return pts, wts
    y2, o2 = roots_jacobi(n, 2, 0)
    w_ = 0.5 * (y2 + 1.0)
    ww = 0.125 * o2
    U, V, W = np.meshgrid(u, v, w_, indexing="ij")
    WU, WV, WW = np.meshgrid(wu, wv, ww, indexing="ij")
    pts = np.stack(
        [
            (U * (1 - V) * (1 - W)).ravel(),
            (V * (1 - W)).ravel(),
            W.ravel(),
        ],
        axis=1,
    )
    wts = (WU * WV * WW).ravel()
    return pts, wts


def quadrature(cell, degree):
    """Quadrature rule on `cell` exact for polynomials of total degree `degree`."""
    ref_pts, ref_wts = _reference_rule(cell.dim, degree)
    pts = cell.from_reference(ref_pts)
    scale = cell.measure / {1: 2.0, 2: 0.5, 3: 1.0 / 6.0}[cell.dim]
    return QuadratureRule(cell.dim, pts, ref_wts * scale, degree)


def monomial_integral(cell_name, alpha):
    """Exact integral of x^alpha over a default reference cell, as a Fraction."""
    if cell_name == "edge":
        (a,) = alpha
        return Fraction(0) if a % 2 else Fraction(2, a + 1)
    if cell_name == "tri":
        a, b = alpha
        return Fraction(factorial(a) * factorial(b), factorial(a + b + 2))
    if cell_name == "tet":
        a, b, c = alpha
        return Fraction(
            factorial(a) * factorial(b) * factorial(c), factorial(a + b + c + 3)
        )
    raise ValueError(f"unknown reference cell {cell_name}")


@dataclass(frozen=True)
class Edge:
    index: int
    vertex_ids: tuple
    tangent: np.ndarray
    length: float
    midpoint: np.ndarray
    cell: Cell = field(repr=False)

    def embed(self, s):
        """Map 1D edge coordinates (arc length, centered) to ambient points."""
        s = np.asarray(s, dtype=float).reshape(-1)
        return self.midpoint[None, :] + s[:, None] * self.tangent[None, :]


@dataclass(frozen=True)
class Face:
    index: int
    vertex_ids: tuple
    normal: np.ndarray
    origin: np.ndarray
    frame: np.ndarray  # (3, 2), orthonormal columns, frame[:,0] x frame[:,1] = normal
    cell: Cell = field(repr=False)
    edge_ids: tuple = ()
    edge_signs: tuple = ()  # +1 if the edge tangent runs counterclockwise around normal

    def embed(self, xi):
        """Map planar face coordinates to ambient points."""
        xi = np.asarray(xi, dtype=float)
        return self.origin[None, :] + xi @ self.frame.T

    def project(self, pts):
        return (np.asarray(pts) - self.origin[None, :]) @ self.frame


class ReferenceCell:
    """Reference simplex with oriented edge/face data.

    dim 3: unit tetrahedron; dim 2: unit right triangle; dim 1: (-1, 1).
    """

    def __init__(self, dim, variant="unit"):
        if variant not in ("unit", "biunit_edge"):
            raise ValueError(f"unknown variant {variant}")
        self.dim = dim
        self.variant = variant
        if dim == 1:
            self.vertices = np.array([[-1.0], [1.0]])
            self.cell = Cell(self.vertices, "edge")
            self.edges = ()
            self.faces = ()
            return
        if dim == 2:
            self.vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
            self.cell = Cell(self.vertices, "tri")
            self.faces = ()
            self.edges = self._build_edges([(0, 1), (0, 2), (1, 2)], "tri")
            return
        if dim != 3:
            raise ValueError(f"unsupported dimension {dim}")
        self.vertices = np.array(
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        )
        self.cell = Cell(self.vertices, "tet")
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        self.edges = self._build_edges(pairs, "tet")
        self.faces = self._build_faces(pairs)

    def _build_edges(self, pairs, prefix):
        edges = []
        for k, (i, j) in enumerate(pairs):
            a, b = self.vertices[i], self.vertices[j]
            length = float(np.linalg.norm(b - a))
            cell = Cell(
                np.array([[-0.5 * length], [0.5 * length]]), f"{prefix}.edge{k}"
            )
            edges.append(
                Edge(
                    index=k,
                    vertex_ids=(i, j),
                    tangent=(b - a) / length,
                    length=length,
                    midpoint=0.5 * (a + b),
                    cell=cell,
                )
            )
        return tuple(edges)

    def _build_faces(self, edge_pairs):
        centroid = self.vertices.mean(axis=0)
        faces = []
        for k in range(4):
            ids = tuple(i for i in range(4) if i != k)
            v = self.vertices[list(ids)]
            n = np.cross(v[1] - v[0], v[2] - v[0])
            n /= np.linalg.norm(n)
            if np.dot(n, v[0] - centroid) < 0:
                ids = (ids[0], ids[2], ids[1])
                v = self.vertices[list(ids)]
                n = -n
            e1 = v[1] - v[0]
            e1 /= np.linalg.norm(e1)
            e2 = v[2] - v[0] - np.dot(v[2] - v[0], e1) * e1
            e2 /= np.linalg.norm(e2)
            frame = np.stack([e1, e2], axis=1)
            planar = (v - v[0]) @ frame
            cell = Cell(planar, f"tet.face{k}")
            edge_ids = []
            edge_signs = []
            for a, b in ((ids[0], ids[1]), (ids[1], ids[2]), (ids[2], ids[0])):
                lo, hi = min(a, b), max(a, b)
                edge_ids.append(edge_pairs.index((lo, hi)))
                edge_signs.append(1 if (a, b) == (lo, hi) else -1)
            faces.append(
                Face(
                    index=k,
                    vertex_ids=ids,
                    normal=n,
                    origin=v[0].copy(),
                    frame=frame,
                    cell=cell,
                    edge_ids=tuple(edge_ids),
                    edge_signs=tuple(edge_signs),
                )
            )
        return tuple(faces)

    @property
    def measure(self):
        return self.cell.measure

    def interior_angles(self):
        """Interior angles of the cell (2D) or of each face (3D), in radians."""
        def tri_angles(v):
            out = []
            for i in range(3):
                a = v[(i + 1) % 3] - v[i]
                b = v[(i + 2) % 3] - v[i]
                out.append(
                    float(
                        np.arccos(
                            np.clip(
                                np.dot(a, b)
                                / (np.linalg.norm(a) * np.linalg.norm(b)),
                                -1,
                                1,
                            )
                        )
                    )
                )
            return out

        if self.dim == 2:
            return [tri_angles(self.vertices)]
        if self.dim == 3:
            return [tri_angles(self.vertices[list(f.vertex_ids)]) for f in self.faces]
        return []

    @property
    def max_angle(self):
        angles = self.interior_angles()
        return max(max(a) for a in angles) if angles else 0.0

    @property
    def regularity_index(self):
        """pi / (maximal interior angle); the 2D study range for dual orders."""
        return np.pi / self.max_angle


@lru_cache(maxsize=None)
def make_reference_cell(dim, variant="unit"):
    return ReferenceCell(dim, variant)


def face_chart(refcell, face_id):
    """Congruence chart of a face: the Face object carrying origin/frame/planar cell."""
    if refcell.dim != 3:
        raise ValueError("face charts exist only for the 3D cell")
    if not 0 <= face_id < len(refcell.faces):
        raise ValueError(f"invalid face id {face_id}")
    return refcell.faces[face_id]
