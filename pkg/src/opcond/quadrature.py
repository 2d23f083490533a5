"""Quadrature rules for panel-pair Galerkin integrals.

Reference triangle convention: That = {(u1, u2): 0 <= u2 <= u1 <= 1} with
the affine chart m(u) = A + u1*(B - A) + u2*(C - B), so the barycentric
coordinates w.r.t. (A, B, C) are (1 - u1, u1 - u2, u2) and the chart
Jacobian is 2|T|.

Touching panel pairs (identical / shared edge / shared vertex) are handled
by regularizing coordinate transforms that pull the 1/r singularity into a
smooth integrand on [0,1]^4; each rule returns parameter points (U, V) on
That x That plus weights, valid for arbitrary integrands:

    int_{That x That} F(u, v) du dv  =  sum_k W_k F(U_k, V_k).

The identical-panel transform decomposes the relative coordinate z = v - u
into the six sectors of the difference hexagon; on each sector the inner
domain is again a (shifted, scaled) copy of That, which gives analytic
integrands with weight xi*(1-xi)^2*sigma.  The shared-edge and
shared-vertex transforms are the standard five- and two-subdomain
relative-coordinate maps.
"""

import numpy as np

_gauss_cache = {}


def gauss01(n):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    if n not in _gauss_cache:
        x, w = np.polynomial.legendre.leggauss(n)
        _gauss_cache[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _gauss_cache[n]


def tri_rule(n):
    """Collapsed n x n tensor rule on That; exact up to degree ~2n-3."""
    x, w = gauss01(n)
    sigma, tau = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    pts = np.stack([sigma.ravel(), (sigma * tau).ravel()], axis=1)
    wts = (ws * wt * sigma).ravel()
    return pts, wts


def simplex_rule(d, n):
    """Rule on the unit simplex in barycentric coordinates.

    Returns (lam (npts, d+1), w) with sum(w) equal to the simplex volume.
    """
    if d == 1:
        x, w = gauss01(n)
        lam = np.stack([1.0 - x, x], axis=1)
        return lam, w
    pts, wts = tri_rule(n)
    lam = np.stack([1.0 - pts[:, 0], pts[:, 0] - pts[:, 1], pts[:, 1]], axis=1)
    return lam, wts


def _tensor4(n):
    x, w = gauss01(n)
    g = np.stack(np.meshgrid(x, x, x, x, indexing="ij"), axis=-1).reshape(-1, 4)
    gw = np.prod(np.stack(np.meshgrid(w, w, w, w, indexing="ij"), axis=-1)
                 .reshape(-1, 4), axis=1)
    return g, gw


def coincident_rule(n):
    """Identical-panel rule: 6 analytic subdomain maps, 6*n^4 points."""
    g, gw = _tensor4(n)
    xi, eta, sig, tau = g.T
    base_w = gw * xi * (1.0 - xi) ** 2 * sig

    u1 = (1.0 - xi) * sig
    u2 = (1.0 - xi) * sig * tau
    maps = [
        # z-sector K1: z = xi*(1, eta)
        (u1, u2, u1 + xi, u2 + xi * eta),
        # K2: z = (xi*eta, xi), inner triangle shifted by (xi*(1-eta), 0)
        (xi * (1.0 - eta) + u1, u2, xi + u1, xi + u2),
        # K3: z = (-xi*(1-eta), xi*eta), inner shifted by (xi, 0)
        (xi + u1, u2, u1 + xi * eta, u2 + xi * eta),
    ]
    U, V, W = [], [], []
    for a1, a2, b1, b2 in maps:
        U.append(np.stack([a1, a2], axis=1))
        V.append(np.stack([b1, b2], axis=1))
        W.append(base_w)
        # mirrored sector: swap roles of u and v
        U.append(np.stack([b1, b2], axis=1))
        V.append(np.stack([a1, a2], axis=1))
        W.append(base_w)
    return np.concatenate(U), np.concatenate(V), np.concatenate(W)


def edge_rule(n):
    """Shared-edge rule; both charts must list the shared edge as (A, B)."""
    g, gw = _tensor4(n)
    xi, e1, e2, e3 = g.T
    terms = [
        ((xi, xi * e1 * e3),
         (xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)),
         xi ** 3 * e1 ** 2),
        ((xi, xi * e1),
         (xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)),
         xi ** 3 * e1 ** 2 * e2),
        ((xi * (1.0 - e1 * e2), xi * e1 * (1.0 - e2)),
         (xi, xi * e1 * e2 * e3),
         xi ** 3 * e1 ** 2 * e2),
        ((xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * (1.0 - e3)),
         (xi, xi * e1),
         xi ** 3 * e1 ** 2 * e2),
        ((xi * (1.0 - e1 * e2 * e3), xi * e1 * (1.0 - e2 * e3)),
         (xi, xi * e1 * e2),
         xi ** 3 * e1 ** 2 * e2),
    ]
    U = np.concatenate([np.stack(t[0], axis=1) for t in terms])
    V = np.concatenate([np.stack(t[1], axis=1) for t in terms])
    W = np.concatenate([gw * t[2] for t in terms])
    return U, V, W


def vertex_rule(n):
    """Shared-vertex rule; both charts must place the shared vertex at A."""
    g, gw = _tensor4(n)
    xi, e1, e2, e3 = g.T
    w = gw * xi ** 3 * e1
    U = np.concatenate([np.stack([xi, xi * e2], axis=1),
                        np.stack([xi * e1, xi * e1 * e2], axis=1)])
    V = np.concatenate([np.stack([xi * e1, xi * e1 * e3], axis=1),
                        np.stack([xi, xi * e3], axis=1)])
    W = np.concatenate([w, w])
    return U, V, W


def params_to_barycentric(u):
    """Barycentric coordinates w.r.t. the chart vertex order (A, B, C)."""
    return np.stack([1.0 - u[:, 0], u[:, 0] - u[:, 1], u[:, 1]], axis=1)


def pair_configuration(tri_x, tri_y):
    """Classify a panel pair and build chart vertex orders.

    Returns (n_shared, perm_x, perm_y): permutations of local indices such
    that shared vertices come first and in the same global order in both
    charts (required by edge_rule / vertex_rule).
    """
    tx = [int(v) for v in tri_x]
    ty = [int(v) for v in tri_y]
    shared = sorted(set(tx) & set(ty))
    if len(shared) == 3:
        return 3, (0, 1, 2), (0, 1, 2)
    if len(shared) == 2:
        a, b = shared
        px = (tx.index(a), tx.index(b))
        py = (ty.index(a), ty.index(b))
        perm_x = px + tuple(i for i in range(3) if i not in px)
        perm_y = py + tuple(i for i in range(3) if i not in py)
        return 2, perm_x, perm_y
    if len(shared) == 1:
        a = shared[0]
        ix, iy = tx.index(a), ty.index(a)
        perm_x = (ix,) + tuple(i for i in range(3) if i != ix)
        perm_y = (iy,) + tuple(i for i in range(3) if i != iy)
        return 1, perm_x, perm_y
    return 0, (0, 1, 2), (0, 1, 2)
