"""Lagrange bases of degree 1..3 on simplices, with global node tables.

Shape functions are built on the principal lattice via the product formula
phi_alpha(lam) = prod_i P_{alpha_i}(ell, lam_i) with
P_m(ell, x) = prod_{k<m} (ell*x - k)/(m - k), which interpolates the
equispaced nodes exactly.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import UnsupportedDegree

SUPPORTED_DEGREES = (1, 2, 3)


def reference_multi_indices(d, ell):
    """Barycentric multi-indices alpha, |alpha| = ell, of the node lattice.

    Order: vertices first (alpha = ell*e_i), then edge nodes grouped by
    local edge, then interior nodes.
    """
    if ell not in SUPPORTED_DEGREES:
        raise UnsupportedDegree(f"degree {ell} not supported")
    all_alpha = [a for a in product(range(ell + 1), repeat=d + 1)
                 if sum(a) == ell]

    def nzero(a):
        return sum(1 for x in a if x > 0)

    vertices = [tuple(ell if i == j else 0 for j in range(d + 1))
                for i in range(d + 1)]
    edges = sorted(a for a in all_alpha if nzero(a) == 2 and a not in vertices)
    interior = sorted(a for a in all_alpha if nzero(a) >= 3)
    return vertices + edges + interior


def _silvester_coeffs(ell, m):
    """Coefficients of P_m(ell, x) as a polynomial in x."""
    c = np.array([1.0])
    for k in range(m):
        c = P.polymul(c, np.array([-k, float(ell)])) / (m - k)
    return c


def shape_values(d, ell, lam):
    """Evaluate all shape functions at barycentric points lam (npts, d+1)."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    alphas = reference_multi_indices(d, ell)
    vals = np.empty((lam.shape[0], len(alphas)))
    pm = {m: _silvester_coeffs(ell, m) for m in range(ell + 1)}
    for a, alpha in enumerate(alphas):
        acc = np.ones(lam.shape[0])
        for i, m in enumerate(alpha):
            if m:
                acc = acc * P.polyval(lam[:, i], pm[m])
        vals[:, a] = acc
    return vals


def shape_bary_gradients(d, ell, lam):
    """Partial derivatives d(phi)/d(lam_i): array (npts, nloc, d+1)."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    alphas = reference_multi_indices(d, ell)
    pm = {m: _silvester_coeffs(ell, m) for m in range(ell + 1)}
    dpm = {m: P.polyder(pm[m]) for m in range(ell + 1)}
    vals = {(i, m): P.polyval(lam[:, i], pm[m])
            for i in range(d + 1) for m in range(ell + 1)}
    dvals = {(i, m): P.polyval(lam[:, i], dpm[m])
             for i in range(d + 1) for m in range(ell + 1)}
    out = np.empty((lam.shape[0], len(alphas), d + 1))
    for a, alpha in enumerate(alphas):
        for i in range(d + 1):
            acc = dvals[(i, alpha[i])].copy()
            for j, m in enumerate(alpha):
                if j != i:
                    acc *= vals[(j, m)]
            out[:, a, i] = acc
    return out


@dataclass
class LagrangeSpace:
    """Global degree-ell nodal space over a mesh.

    ``element_nodes[e, a]`` is the global node id of local node a (ordered
    as in :func:`reference_multi_indices`); ``free_nodes`` excludes nodes
    on gamma and is sorted ascending.
    """

    mesh: object
    ell: int
    node_coords: np.ndarray
    element_nodes: np.ndarray
    free_nodes: np.ndarray
    vertex_node: np.ndarray  # node id of each mesh vertex

    @property
    def num_nodes(self):
        return self.node_coords.shape[0]

    @property
    def num_free(self):
        return len(self.free_nodes)

    def free_index(self):
        """Map node id -> dense column index (or -1)."""
        idx = -np.ones(self.num_nodes, dtype=np.int64)
        idx[self.free_nodes] = np.arange(len(self.free_nodes))
        return idx


def build_lagrange_space(mesh, ell):
    """Assemble the global node table of the degree-ell space."""
    if ell not in SUPPORTED_DEGREES:
        raise UnsupportedDegree(f"degree {ell} not supported")
    d = mesh.dim_element
    alphas = reference_multi_indices(d, ell)
    verts = mesh.vertices

    node_coords = [tuple(p) for p in verts]
    vertex_node = np.arange(mesh.num_vertices, dtype=np.int64)
    edge_nodes = {}
    gamma_nodes = set(mesh.gamma_vertices())

    if d == 2 and ell >= 2:
        for a, b in (tuple(e) for e in mesh.edges()):
            ids = []
            for k in range(1, ell):
                ids.append(len(node_coords))
                node_coords.append(tuple(verts[a] + (verts[b] - verts[a]) * k / ell))
            edge_nodes[(a, b)] = ids
        for f in mesh.gamma_faces:
            gamma_nodes.update(edge_nodes[tuple(sorted(f))])

    element_nodes = np.zeros((mesh.num_elements, len(alphas)), dtype=np.int64)
    for e in range(mesh.num_elements):
        ev = [int(x) for x in mesh.elements[e]]
        for a, alpha in enumerate(alphas):
            support = [i for i, m in enumerate(alpha) if m > 0]
            if len(support) == 1:
                element_nodes[e, a] = ev[support[0]]
            elif len(support) == 2 and d == 2:
                i, j = support
                va, vb = ev[i], ev[j]
                key = (min(va, vb), max(va, vb))
                # lattice distance of the node from the smaller-id endpoint
                steps = alpha[j] if key[0] == va else alpha[i]
                element_nodes[e, a] = edge_nodes[key][steps - 1]
            else:
                # element-interior node (d=2 bubble or any d=1 non-vertex)
                point = tuple(sum(alpha[i] / ell * verts[ev[i]]
                                  for i in range(d + 1)))
                element_nodes[e, a] = len(node_coords)
                node_coords.append(point)

    free = np.array(sorted(set(range(len(node_coords))) - gamma_nodes),
                    dtype=np.int64)
    return LagrangeSpace(mesh, ell, np.asarray(node_coords), element_nodes,
                         free, vertex_node)


def barycentric_gradients(mesh):
    """Constant gradient vectors of the barycentric coordinates per element.

    Returns (ne, d+1, d') with grad(lam_i) for each element; for surfaces
    these are tangential vectors in the panel plane.
    """
    v = mesh.vertices
    t = mesh.elements
    if mesh.dim_element == 1:
        h = (v[t[:, 1], 0] - v[t[:, 0], 0])[:, None]
        g = np.empty((len(t), 2, 1))
        g[:, 0] = -1.0 / h
        g[:, 1] = 1.0 / h
        return g
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    n = np.cross(b - a, c - a)
    two_area = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / two_area
    g = np.empty((len(t), 3, 3))
    g[:, 0] = np.cross(n, c - b) / two_area
    g[:, 1] = np.cross(n, a - c) / two_area
    g[:, 2] = np.cross(n, b - a) / two_area
    return g
