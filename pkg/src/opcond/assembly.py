"""Dense Galerkin assembly of the test operators and opposite-order operators.

1D operators on interval meshes use closed-form antiderivatives of the
logarithmic kernel; surface operators use the panel-pair quadrature rules
from :mod:`opcond.quadrature` (regularized transforms for touching pairs,
distance-graded tensor Gauss for disjoint pairs).

The hypersingular form is reduced to single-layer integrals of surface-curl
densities, so for degree-1 elements the whole matrix derives from the
piecewise-constant single-layer matrix.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import xlogy

from . import quadrature as quad
from .basis import (barycentric_gradients, build_lagrange_space,
                    shape_bary_gradients, shape_values)
from .errors import (CoercivityRisk, InvalidArgument, InvalidMesh,
                     RescaleRequired, UnsupportedConfiguration)

FOUR_PI = 4.0 * np.pi


@dataclass
class DenseOperator:
    """Assembled Galerkin matrix with its dof labels."""

    matrix: np.ndarray
    labels: np.ndarray
    symmetric: bool = True

    @property
    def dim(self):
        return self.matrix.shape[0]

    def to_binary(self, path):
        """8-byte little-endian dimension header, then row-major float64."""
        with open(path, "wb") as f:
            f.write(np.uint64(self.dim).newbyteorder("<").tobytes())
            f.write(self.matrix.astype("<f8").tobytes(order="C"))

    def to_coordinate_text(self, path):
        with open(path, "w") as f:
            for i in range(self.matrix.shape[0]):
                for j in range(self.matrix.shape[1]):
                    f.write(f"{i} {j} {self.matrix[i, j]!r}\n")


def load_binary_operator(path):
    with open(path, "rb") as f:
        n = int(np.frombuffer(f.read(8), dtype="<u8")[0])
        data = np.frombuffer(f.read(8 * n * n), dtype="<f8").reshape(n, n)
    return DenseOperator(data.copy(), np.arange(n))


@dataclass(frozen=True)
class QuadratureProfile:
    """Per-pair-class quadrature orders.

    Touching pairs (identical / shared edge / shared vertex) use the
    regularized transforms with a per-class Gauss order; disjoint pairs use
    tensor Gauss with the order graded down as the centroid separation
    (relative to panel size) grows.  The per-class orders of the ``high``
    profile are chosen so that doubling them moves single-layer entries by
    well under 1e-7 relative (the vertex transform converges much faster
    than the identical-panel one).
    """

    name: str
    coincident_order: int
    edge_order: int
    vertex_order: int
    far_base_order: int

    def touching_order(self, n_shared):
        return {3: self.coincident_order, 2: self.edge_order,
                1: self.vertex_order}[n_shared]

    def far_order(self, ratio):
        if ratio >= 8.0:
            return max(2, self.far_base_order - 2)
        if ratio >= 4.0:
            return max(2, self.far_base_order - 1)
        return self.far_base_order

    def doubled(self):
        return QuadratureProfile(self.name + "_x2", 2 * self.coincident_order,
                                 2 * self.edge_order, 2 * self.vertex_order,
                                 2 * self.far_base_order)


PROFILES = {
    "standard": QuadratureProfile("standard", 5, 5, 5, 4),
    "high": QuadratureProfile("high", 10, 9, 6, 6),
}


# ---------------------------------------------------------------------------
# 1D closed forms for the logarithmic kernel
# ---------------------------------------------------------------------------

def _p1(t):
    return 0.5 * xlogy(t * t, np.abs(t)) - 0.25 * t * t


def _p2(t):
    return xlogy(t ** 3, np.abs(t)) / 3.0 - t ** 3 / 9.0


def _p3(t):
    return 0.25 * xlogy(t ** 4, np.abs(t)) - t ** 4 / 16.0


def _a1(t):
    return xlogy(t, np.abs(t)) - t


def _b1(t):
    return 0.5 * xlogy(t * t, np.abs(t)) - 0.75 * t * t


def _b2(t):
    return 0.5 * _p2(t) - t ** 3 / 12.0


def _c1(x, e):
    t = x - e
    return _p2(t) - t ** 3 / 3.0 + e * (_p1(t) - 0.5 * t * t)


def _c2(x, e):
    t = x - e
    return (_p3(t) - 0.25 * t ** 4 + 2.0 * e * (_p2(t) - t ** 3 / 3.0)
            + e * e * (_p1(t) - 0.5 * t * t))


def _d1(x, e):
    t = x - e
    return 0.5 * _p3(t) - t ** 4 / 16.0 + e * (0.5 * _p2(t) - t ** 3 / 12.0)


def log_moments(a, b, c, d):
    """J_pq = int_a^b int_c^d x^p y^q ln|x-y| dy dx for p, q in {0, 1}.

    All arguments may be arrays (broadcast together).  Returns (J00, J01,
    J10, J11).
    """
    j00 = (_b1(b - c) - _b1(b - d)) - (_b1(a - c) - _b1(a - d))
    j10 = (_c1(b, c) - _c1(b, d)) - (_c1(a, c) - _c1(a, d))
    j01 = j10 - ((_b2(b - c) - _b2(b - d)) - (_b2(a - c) - _b2(a - d)))
    j11 = ((_c2(b, c) - _c2(b, d)) - (_c2(a, c) - _c2(a, d))
           - ((_d1(b, c) - _d1(b, d)) - (_d1(a, c) - _d1(a, d))))
    return j00, j01, j10, j11


def _interval_data(mesh):
    if mesh.dim_element != 1:
        raise InvalidMesh("operator requires a 1D interval mesh")
    x = mesh.vertices[:, 0]
    a = x[mesh.elements[:, 0]]
    b = x[mesh.elements[:, 1]]
    if np.any(b <= a):
        raise InvalidMesh("interval elements must be positively oriented")
    return x, a, b


def assemble_single_layer_1d(mesh, space="PWC0", scale=None):
    """Single layer with kernel -(1/2pi) ln(|x-y|/L) on PWC0 or CPL1.

    The scale L defaults to twice the domain diameter and must exceed the
    diameter (logarithmic capacity condition).
    """
    x, a, b = _interval_data(mesh)
    diam = x.max() - x.min()
    if scale is None:
        scale = 2.0 * diam
    if scale <= diam:
        raise CoercivityRisk(
            f"kernel scale L={scale} must exceed the domain diameter {diam}")
    log_l = np.log(scale)
    two_pi = 2.0 * np.pi

    if space == "PWC0":
        aa, cc = np.meshgrid(a, a, indexing="ij")
        bb, dd = np.meshgrid(b, b, indexing="ij")
        j00, _, _, _ = log_moments(aa, bb, cc, dd)
        lengths = b - a
        mat = (-j00 + log_l * np.outer(lengths, lengths)) / two_pi
        mat = 0.5 * (mat + mat.T)
        return DenseOperator(mat, np.arange(mesh.num_elements))

    if space != "CPL1":
        raise InvalidArgument(f"unknown space {space!r}")

    free = mesh.free_vertices()
    col = -np.ones(mesh.num_vertices, dtype=np.int64)
    col[free] = np.arange(len(free))
    n = len(free)
    mat = np.zeros((n, n))
    h = b - a
    # local hats on element [a, b]: left = (b - x)/h, right = (x - a)/h
    alphas = np.stack([b / h, -a / h], axis=1)
    betas = np.stack([-1.0 / h, 1.0 / h], axis=1)
    ints = np.stack([0.5 * h, 0.5 * h], axis=1)  # integral of each hat piece

    ne = mesh.num_elements
    aa, cc = np.meshgrid(a, a, indexing="ij")
    bb, dd = np.meshgrid(b, b, indexing="ij")
    j00, j01, j10, j11 = log_moments(aa, bb, cc, dd)
    for li in range(2):
        for lj in range(2):
            vi = mesh.elements[:, li]
            vj = mesh.elements[:, lj]
            pair = -(np.outer(alphas[:, li], alphas[:, lj]) * j00
                     + np.outer(alphas[:, li], betas[:, lj]) * j01
                     + np.outer(betas[:, li], alphas[:, lj]) * j10
                     + np.outer(betas[:, li], betas[:, lj]) * j11)
            pair += log_l * np.outer(ints[:, li], ints[:, lj])
            pair /= two_pi
            rows = col[vi]
            cols = col[vj]
            mask = (rows >= 0)[:, None] & (cols >= 0)[None, :]
            np.add.at(mat, (np.broadcast_to(rows[:, None], (ne, ne))[mask],
                            np.broadcast_to(cols[None, :], (ne, ne))[mask]),
                      pair[mask])
    mat = 0.5 * (mat + mat.T)
    return DenseOperator(mat, free)


def differentiation_map(mesh):
    """Sparse map from free-vertex hat coefficients to elementwise slopes."""
    x, a, b = _interval_data(mesh)
    free = mesh.free_vertices()
    col = -np.ones(mesh.num_vertices, dtype=np.int64)
    col[free] = np.arange(len(free))
    h = b - a
    rows, cols, vals = [], [], []
    for e in range(mesh.num_elements):
        i, j = (int(v) for v in mesh.elements[e])
        if col[i] >= 0:
            rows.append(e)
            cols.append(col[i])
            vals.append(-1.0 / h[e])
        if col[j] >= 0:
            rows.append(e)
            cols.append(col[j])
            vals.append(1.0 / h[e])
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(mesh.num_elements, len(free)))


def assemble_hypersingular_1d(mesh, scale=None):
    """Order +1 operator on the open interval via integration by parts.

    Requires gamma on both endpoints; the matrix is the congruence of the
    piecewise-constant single-layer matrix by the differentiation map.
    """
    x, _, _ = _interval_data(mesh)
    gamma = mesh.gamma_vertices()
    left = int(np.argmin(x))
    right = int(np.argmax(x))
    if left not in gamma or right not in gamma:
        raise UnsupportedConfiguration(
            "hypersingular reduction needs vanishing traces at both endpoints")
    v = assemble_single_layer_1d(mesh, "PWC0", scale)
    g = differentiation_map(mesh)
    mat = g.T @ v.matrix @ g
    mat = 0.5 * (mat + np.asarray(mat).T)
    return DenseOperator(np.asarray(mat), mesh.free_vertices())


def assemble_greens_1d(mesh, space="PWC0"):
    """Galerkin matrix of the kernel min(x,y) - xy on piecewise constants.

    Opposite-order operator of order -2; only defined on (0, 1) with both
    endpoints in gamma.
    """
    if space != "PWC0":
        raise InvalidArgument(f"unknown space {space!r}")
    x, a, b = _interval_data(mesh)
    if abs(x.min()) > 1e-14 or abs(x.max() - 1.0) > 1e-14:
        raise RescaleRequired("Green's kernel operator requires the domain (0, 1)")
    gamma = mesh.gamma_vertices()
    if int(np.argmin(x)) not in gamma or int(np.argmax(x)) not in gamma:
        raise UnsupportedConfiguration("Green's kernel requires gamma on both ends")

    ne = mesh.num_elements
    mat = np.empty((ne, ne))
    half_sq = 0.5 * (b * b - a * a)
    for i in range(ne):
        for j in range(ne):
            if b[i] <= a[j] + 1e-15 and i != j:        # i left of j
                m = (b[j] - a[j]) * half_sq[i]
            elif b[j] <= a[i] + 1e-15 and i != j:      # j left of i
                m = (b[i] - a[i]) * half_sq[j]
            else:                                      # identical element
                h = b[i] - a[i]
                m = a[i] * h * h + h ** 3 / 3.0
            mat[i, j] = m - half_sq[i] * half_sq[j]
    mat = 0.5 * (mat + mat.T)
    return DenseOperator(mat, np.arange(ne))


# ---------------------------------------------------------------------------
# Mass and stiffness matrices (any supported degree, d = 1 or 2)
# ---------------------------------------------------------------------------

def _scatter_local(space, local, symmetric_fill=True):
    """Accumulate (ne, nloc, nloc) local matrices into the free-node matrix."""
    idx = space.free_index()
    n = space.num_free
    mat = np.zeros((n, n))
    gnodes = idx[space.element_nodes]  # (ne, nloc), -1 for constrained
    ne, nloc = gnodes.shape
    rows = np.broadcast_to(gnodes[:, :, None], (ne, nloc, nloc))
    cols = np.broadcast_to(gnodes[:, None, :], (ne, nloc, nloc))
    mask = (rows >= 0) & (cols >= 0)
    np.add.at(mat, (rows[mask], cols[mask]), local[mask])
    return mat


def assemble_mass(mesh, ell=1):
    """Exact mass matrix of the degree-ell space (free nodes only)."""
    space = build_lagrange_space(mesh, ell)
    d = mesh.dim_element
    lam, w = quad.simplex_rule(d, ell + 2)
    phi = shape_values(d, ell, lam)
    ref = np.einsum("q,qa,qb->ab", w, phi, phi)
    # int_T phi_a phi_b = d! |T| * ref  (unit-simplex volume is 1/d!)
    factorial = 1.0 if d == 1 else 2.0
    local = (factorial * mesh.element_volumes())[:, None, None] * ref[None, :, :]
    mat = _scatter_local(space, local)
    return DenseOperator(mat, space.free_nodes)


def assemble_stiffness(mesh, ell=1):
    """Exact stiffness matrix of the degree-ell space (free nodes only)."""
    space = build_lagrange_space(mesh, ell)
    d = mesh.dim_element
    lam, w = quad.simplex_rule(d, ell + 2)
    dphi = shape_bary_gradients(d, ell, lam)  # (q, nloc, d+1)
    ref = np.einsum("q,qai,qbj->ijab", w, dphi, dphi)
    grads = barycentric_gradients(mesh)       # (ne, d+1, d')
    gram = np.einsum("eik,ejk->eij", grads, grads)
    factorial = 1.0 if d == 1 else 2.0
    local = factorial * np.einsum("e,eij,ijab->eab",
                                  mesh.element_volumes(), gram, ref)
    mat = _scatter_local(space, local)
    mat = 0.5 * (mat + mat.T)
    return DenseOperator(mat, space.free_nodes)


def load_vector(mesh, ell=1):
    """Exact moments <phi_node, 1> over the free nodes of the degree-ell space."""
    space = build_lagrange_space(mesh, ell)
    d = mesh.dim_element
    lam, w = quad.simplex_rule(d, ell + 2)
    phi = shape_values(d, ell, lam)
    ref = np.einsum("q,qa->a", w, phi)
    factorial = 1.0 if d == 1 else 2.0
    local = (factorial * mesh.element_volumes())[:, None] * ref[None, :]
    idx = space.free_index()
    out = np.zeros(space.num_free)
    gnodes = idx[space.element_nodes]
    mask = gnodes >= 0
    np.add.at(out, gnodes[mask], local[mask])
    return out


# ---------------------------------------------------------------------------
# Surface single layer / hypersingular (d = 2, flat panels in R^3)
# ---------------------------------------------------------------------------

def _surface_data(mesh):
    if mesh.dim_element != 2 or mesh.dim_ambient != 3:
        raise InvalidMesh("operator requires a flat-panel surface mesh in R^3")
    areas = mesh.element_volumes()
    if np.any(areas <= 1e-300):
        raise InvalidMesh("surface mesh contains a degenerate (zero-area) panel")
    v = mesh.vertices
    t = mesh.elements
    corners = v[t]                       # (ne, 3, 3)
    centroids = corners.mean(axis=1)
    diam = mesh.element_diameters()
    return corners, areas, centroids, diam


def _touching_pairs(mesh):
    """Upper-triangular panel pairs sharing at least one vertex."""
    t = mesh.elements
    nv = mesh.num_vertices
    inc = sp.csr_matrix((np.ones(t.size), (np.repeat(np.arange(len(t)), 3),
                                           t.ravel())), shape=(len(t), nv))
    adj = (inc @ inc.T).tocoo()
    mask = adj.row <= adj.col
    return adj.row[mask], adj.col[mask]


_POINT_BUDGET = 2_000_000  # max simultaneous kernel evaluations per chunk


def _pair_kernel(cx, cy, u, v, w, areas_xy):
    """Weighted kernel values for touching pairs.

    cx, cy: permuted corner arrays (np, 3, 3); u, v: rule parameters
    (ns, 2); returns kw (np, ns) with kw = w / (4 pi r) * 4 |Tx| |Ty|.
    """
    dca = cx[:, 0] - cy[:, 0]
    ex = cx[:, 1] - cx[:, 0]
    fx = cx[:, 2] - cx[:, 1]
    ey = cy[:, 1] - cy[:, 0]
    fy = cy[:, 2] - cy[:, 1]
    diff = (dca[:, None, :]
            + u[None, :, 0, None] * ex[:, None, :]
            + u[None, :, 1, None] * fx[:, None, :]
            - v[None, :, 0, None] * ey[:, None, :]
            - v[None, :, 1, None] * fy[:, None, :])
    r = np.sqrt(np.einsum("nsc,nsc->ns", diff, diff))
    return (w[None, :] / (FOUR_PI * r)) * areas_xy[:, None]


class _PanelPairAssembler:
    """Shared machinery: iterate panel pairs, produce local (nloc x nloc)
    kernel moment blocks for given density tables, scatter into a matrix."""

    def __init__(self, mesh, profile, nloc, density_table):
        # density_table(lam) -> (npts, nloc, ncomp) values of the densities
        # in original local numbering at barycentric points lam
        self.mesh = mesh
        self.profile = profile
        self.nloc = nloc
        self.density_table = density_table
        (self.corners, self.areas, self.centroids,
         self.diam) = _surface_data(mesh)

    @staticmethod
    def _perm_bary(u, perm):
        lam_perm = quad.params_to_barycentric(u)
        lam = np.empty_like(lam_perm)
        lam[:, list(perm)] = lam_perm
        return lam

    def touching_blocks(self):
        """Yield (i_idx, j_idx, blocks) for touching pairs, grouped by the
        (class, chart permutation) signature."""
        ti, tj = _touching_pairs(self.mesh)
        groups = {}
        elements = self.mesh.elements
        for i, j in zip(ti, tj):
            ns, px, py = quad.pair_configuration(elements[i], elements[j])
            groups.setdefault((ns, px, py), []).append((i, j))
        rules = {}
        for (ns, px, py), pairs in sorted(groups.items()):
            if ns not in rules:
                n = self.profile.touching_order(ns)
                rules[ns] = {3: quad.coincident_rule, 2: quad.edge_rule,
                             1: quad.vertex_rule}[ns](n)
            u, v, w = rules[ns]
            dx = self.density_table(self._perm_bary(u, px))
            dy = self.density_table(self._perm_bary(v, py))
            pairs = np.asarray(pairs)
            chunk = max(4, _POINT_BUDGET // len(w))
            for start in range(0, len(pairs), chunk):
                ii = pairs[start:start + chunk, 0]
                jj = pairs[start:start + chunk, 1]
                cx = self.corners[ii][:, list(px), :]
                cy = self.corners[jj][:, list(py), :]
                kw = _pair_kernel(cx, cy, u, v, w,
                                  4.0 * self.areas[ii] * self.areas[jj])
                yield ii, jj, self._contract(kw, dx, dy, ii, jj)

    def far_pair_lists(self):
        """Disjoint pairs (upper triangular) grouped by far Gauss order."""
        ti, tj = _touching_pairs(self.mesh)
        ne = self.mesh.num_elements
        touch = sp.coo_matrix((np.ones(len(ti)), (ti, tj)),
                              shape=(ne, ne)).tocsr()
        orders = {}
        block = max(1, int(4e6 // max(ne, 1)))
        for r0 in range(0, ne, block):
            r1 = min(ne, r0 + block)
            rows = np.arange(r0, r1)
            jj, ii = np.meshgrid(np.arange(ne), rows)
            keep = (jj > rows[:, None]) & ~(touch[r0:r1].toarray() > 0)
            ii = ii[keep]
            jj = jj[keep]
            if len(ii) == 0:
                continue
            dist = np.linalg.norm(self.centroids[ii] - self.centroids[jj],
                                  axis=1)
            ratio = dist / np.maximum(self.diam[ii], self.diam[jj])
            nn = np.where(ratio >= 8.0, self.profile.far_order(8.0),
                          np.where(ratio >= 4.0, self.profile.far_order(4.0),
                                   self.profile.far_order(1.0)))
            for n in np.unique(nn):
                sel = nn == n
                orders.setdefault(int(n), []).append(
                    (ii[sel].astype(np.int32), jj[sel].astype(np.int32)))
        return {n: (np.concatenate([p[0] for p in parts]),
                    np.concatenate([p[1] for p in parts]))
                for n, parts in sorted(orders.items())}

    def far_blocks(self):
        for n, (ii, jj) in self.far_pair_lists().items():
            u, wu = quad.tri_rule(n)
            lam = quad.params_to_barycentric(u)
            d = self.density_table(lam)
            q = len(wu)
            chunk = max(64, _POINT_BUDGET // (q * q))
            for s in range(0, len(ii), chunk):
                isel = ii[s:s + chunk]
                jsel = jj[s:s + chunk]
                x = self._cloud(isel, u)
                y = self._cloud(jsel, u)
                diff = x[:, :, None, :] - y[:, None, :, :]
                r = np.sqrt(np.einsum("nqpc,nqpc->nqp", diff, diff))
                kw = (wu[None, :, None] * wu[None, None, :]) / (FOUR_PI * r)
                kw *= (4.0 * self.areas[isel] * self.areas[jsel])[:, None, None]
                yield isel, jsel, self._contract_far(kw, d, isel, jsel)

    def _cloud(self, idx, u):
        c = self.corners[idx]
        return (c[:, 0][:, None, :]
                + u[None, :, 0, None] * (c[:, 1] - c[:, 0])[:, None, :]
                + u[None, :, 1, None] * (c[:, 2] - c[:, 1])[:, None, :])

    def _contract(self, kw, dx, dy, ii, jj):
        # kw: (np, ns); dx, dy: (ns, nloc, ncomp)
        z = np.einsum("sxc,syc->sxy", dx, dy).reshape(kw.shape[1], -1)
        return (kw @ z).reshape(len(ii), self.nloc, self.nloc)

    def _contract_far(self, kw, d, ii, jj):
        # kw: (np, q, q); d: (q, nloc, ncomp)
        t1 = np.einsum("nqp,pyc->nqyc", kw, d)
        return np.einsum("nqyc,qxc->nxy", t1, d)


def assemble_single_layer_3d(mesh, space="PWC0", profile="standard"):
    """Laplace single layer 1/(4 pi r) on PWC0 panels or CPL1 vertices."""
    profile = PROFILES[profile] if isinstance(profile, str) else profile
    if space == "PWC0":
        def density(lam):
            return np.ones((lam.shape[0], 1, 1))
        asm = _PanelPairAssembler(mesh, profile, 1, density)
        ne = mesh.num_elements
        mat = np.zeros((ne, ne))
        for ii, jj, blocks in list(asm.touching_blocks()) + list(asm.far_blocks()):
            vals = blocks[:, 0, 0]
            mat[ii, jj] += vals
            off = ii != jj
            mat[jj[off], ii[off]] += vals[off]
        mat = 0.5 * (mat + mat.T)
        return DenseOperator(mat, np.arange(ne))

    if space != "CPL1":
        raise InvalidArgument(f"unknown space {space!r}")

    def density(lam):
        return lam[:, :, None]  # hats = barycentric coordinates

    asm = _PanelPairAssembler(mesh, profile, 3, density)
    free = mesh.free_vertices()
    col = -np.ones(mesh.num_vertices, dtype=np.int64)
    col[free] = np.arange(len(free))
    n = len(free)
    mat = np.zeros(n * n)
    gv = col[mesh.elements]
    for ii, jj, blocks in list(asm.touching_blocks()) + list(asm.far_blocks()):
        _scatter_pair_blocks(mat, n, gv, ii, jj, blocks)
    mat = mat.reshape(n, n)
    mat = 0.5 * (mat + mat.T)
    return DenseOperator(mat, free)


def _scatter_pair_blocks(flat, n, gdofs, ii, jj, blocks):
    """Accumulate (np, nloc, nloc) blocks at (gdofs[ii], gdofs[jj]), plus the
    transpose for off-diagonal pairs; constrained dofs (-1) are dropped."""
    nloc = blocks.shape[1]
    rows = np.broadcast_to(gdofs[ii][:, :, None], blocks.shape)
    cols = np.broadcast_to(gdofs[jj][:, None, :], blocks.shape)
    mask = (rows >= 0) & (cols >= 0)
    idx = rows[mask] * n + cols[mask]
    flat += np.bincount(idx, weights=blocks[mask], minlength=len(flat))
    off = ii != jj
    if np.any(off):
        b = np.swapaxes(blocks[off], 1, 2)
        rows = np.broadcast_to(gdofs[jj[off]][:, :, None], b.shape)
        cols = np.broadcast_to(gdofs[ii[off]][:, None, :], b.shape)
        mask = (rows >= 0) & (cols >= 0)
        idx = rows[mask] * n + cols[mask]
        flat += np.bincount(idx, weights=b[mask], minlength=len(flat))


def curl_vectors(mesh):
    """Surface curls of the vertex hats: (ne, 3 local, 3 comps) constants.

    curl(hat_k) = n x grad(hat_k) = (opposite edge vector) / (2|T|) with the
    panel's outward normal n; requires consistent mesh orientation.
    """
    grads = barycentric_gradients(mesh)
    v = mesh.vertices
    t = mesh.elements
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    return np.cross(n[:, None, :], grads)


def assemble_hypersingular_3d(mesh, alpha=0.05, ell=1, profile="standard"):
    """Hypersingular operator on the degree-ell space of a closed surface.

    Assembled via the surface-curl reduction; the rank-one
    alpha * <u,1><v,1> stabilization removes the constant kernel.
    """
    if alpha < 0:
        raise InvalidArgument("alpha must be >= 0")
    _assert_closed_surface(mesh)
    profile = PROFILES[profile] if isinstance(profile, str) else profile

    if ell == 1:
        s = assemble_single_layer_3d(mesh, "PWC0", profile)
        rot = curl_vectors(mesh)
        free = mesh.free_vertices()
        col = -np.ones(mesh.num_vertices, dtype=np.int64)
        col[free] = np.arange(len(free))
        n = len(free)
        mat = np.zeros((n, n))
        gv = col[mesh.elements]
        for c in range(3):
            rows = np.repeat(np.arange(mesh.num_elements), 3)
            cols = gv.ravel()
            vals = rot[:, :, c].ravel()
            keep = cols >= 0
            g = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                              shape=(mesh.num_elements, n))
            mat += g.T @ (s.matrix @ g.toarray())
        moments = load_vector(mesh, 1)
        mat += alpha * np.outer(moments, moments)
        mat = 0.5 * (mat + mat.T)
        return DenseOperator(mat, free)

    space = build_lagrange_space(mesh, ell)
    rot = curl_vectors(mesh)               # n x grad(lam_i): (ne, 3, 3)
    nloc = space.element_nodes.shape[1]

    def density(lam):
        # barycentric gradients of the shapes; physical curls are obtained
        # per pair by contracting with rot[e] inside the contractions below
        return shape_bary_gradients(2, ell, lam)

    asm = _PanelPairAssembler(mesh, profile, nloc, density)
    free_idx = space.free_index()
    n = space.num_free
    flat = np.zeros(n * n)
    gn = free_idx[space.element_nodes]

    def contract(kw, dx, dy, ii, jj):
        # kw (np, ns); dx, dy (ns, nloc, 3 bary); rotation dot products
        rr = np.einsum("nic,njc->nij", rot[ii], rot[jj])   # (np, 3, 3)
        blocks = np.zeros((len(ii), nloc, nloc))
        for i in range(3):
            for j in range(3):
                z = np.einsum("sx,sy->sxy", dx[:, :, i], dy[:, :, j])
                m = (kw @ z.reshape(kw.shape[1], -1)).reshape(len(ii), nloc, nloc)
                blocks += rr[:, i, j, None, None] * m
        return blocks

    def contract_far(kw, d, ii, jj):
        rr = np.einsum("nic,njc->nij", rot[ii], rot[jj])
        blocks = np.zeros((len(ii), nloc, nloc))
        for i in range(3):
            for j in range(3):
                t1 = np.einsum("nqp,py->nqy", kw, d[:, :, j])
                m = np.einsum("nqy,qx->nxy", t1, d[:, :, i])
                blocks += rr[:, i, j, None, None] * m
        return blocks

    asm._contract = contract
    asm._contract_far = contract_far
    for ii, jj, blocks in list(asm.touching_blocks()) + list(asm.far_blocks()):
        _scatter_pair_blocks(flat, n, gn, ii, jj, blocks)
    mat = flat.reshape(n, n)
    moments = load_vector(mesh, ell)
    mat += alpha * np.outer(moments, moments)
    mat = 0.5 * (mat + mat.T)
    return DenseOperator(mat, space.free_nodes)


def _assert_closed_surface(mesh):
    if mesh.dim_element != 2:
        raise InvalidMesh("hypersingular operator requires a surface mesh")
    t = mesh.elements
    pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    _, counts = np.unique(pairs, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise UnsupportedConfiguration(
            "hypersingular assembly is implemented for closed surfaces only")
