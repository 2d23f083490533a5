"""Conforming simplicial meshes: intervals (d=1) and flat triangle surfaces (d=2).

Element ordering convention for d=2: the refinement edge of a triangle
``(v0, v1, v2)`` is ``(v0, v1)`` and ``v2`` is its newest vertex.  Bisection
inserts the midpoint ``m`` of ``(v0, v1)`` and produces the children
``(v2, v0, m)`` and ``(v1, v2, m)``, which preserves the cyclic orientation
of the parent.  All elements of a closed surface mesh are kept consistently
outward oriented.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidMesh

DEFAULT_K_MAX = 2.0
DEFAULT_RHO_MAX = 10.0


class SimplicialMesh:
    """Conforming partition of an interval or of a flat-panel surface.

    Parameters
    ----------
    dim_element : int
        Simplex dimension d, 1 (segments) or 2 (triangles).
    vertices : (nv, d') float array
        Vertex coordinates; d'=1 for intervals, d'=3 for surfaces.
    elements : (ne, d+1) int array
        Vertex indices per element.  For d=2 the tuple order encodes the
        refinement edge, see module docstring.
    gamma_faces : set
        Essential-boundary faces: vertex ids for d=1, sorted vertex-id
        pairs for d=2.
    generation : (ne,) int array, optional
        Bisection generation per element (0 on freshly built meshes).
    """

    def __init__(self, dim_element, vertices, elements, gamma_faces=None,
                 generation=None):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        elements = np.asarray(elements, dtype=np.int64)
        if dim_element not in (1, 2):
            raise InvalidArgument(f"dim_element must be 1 or 2, got {dim_element}")
        if elements.ndim != 2 or elements.shape[1] != dim_element + 1:
            raise InvalidMesh("element array must have d+1 vertex indices per row")
        self.dim_element = dim_element
        self.dim_ambient = vertices.shape[1]
        self.vertices = vertices
        self.elements = elements
        if gamma_faces is None:
            gamma_faces = frozenset()
        self.gamma_faces = frozenset(gamma_faces)
        if generation is None:
            generation = np.zeros(len(elements), dtype=np.int64)
        self.generation = np.asarray(generation, dtype=np.int64)
        for arr in (self.vertices, self.elements, self.generation):
            arr.flags.writeable = False

    # -- basic queries ----------------------------------------------------

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_elements(self):
        return self.elements.shape[0]

    def element_volumes(self):
        """d-volume per element (lengths for d=1, areas for d=2)."""
        v = self.vertices
        t = self.elements
        if self.dim_element == 1:
            return np.abs(v[t[:, 1], 0] - v[t[:, 0], 0])
        cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def element_sizes(self):
        """h_T = |T|^(1/d) per element."""
        return self.element_volumes() ** (1.0 / self.dim_element)

    def element_diameters(self):
        v = self.vertices
        t = self.elements
        if self.dim_element == 1:
            return self.element_volumes()
        d01 = np.linalg.norm(v[t[:, 1]] - v[t[:, 0]], axis=1)
        d12 = np.linalg.norm(v[t[:, 2]] - v[t[:, 1]], axis=1)
        d20 = np.linalg.norm(v[t[:, 0]] - v[t[:, 2]], axis=1)
        return np.max(np.stack([d01, d12, d20]), axis=0)

    def gamma_vertices(self):
        """Set of vertex ids lying on the essential boundary."""
        out = set()
        for f in self.gamma_faces:
            if self.dim_element == 1:
                out.add(int(f))
            else:
                out.update(int(i) for i in f)
        return out

    def free_vertices(self):
        """Sorted array of vertex ids not on gamma."""
        on_gamma = self.gamma_vertices()
        return np.array([i for i in range(self.num_vertices) if i not in on_gamma],
                        dtype=np.int64)

    def edges(self):
        """Sorted-pair edge array (ne, d) -> unique (n_edges, 2) for d=2."""
        t = self.elements
        if self.dim_element == 1:
            return np.sort(t, axis=1)
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def refinement_edges(self):
        """Per-element refinement edge as a sorted vertex-id pair array."""
        if self.dim_element == 1:
            return np.sort(self.elements, axis=1)
        return np.sort(self.elements[:, :2], axis=1)


@dataclass
class PatchTable:
    """Per-vertex patch data: incident elements, volumes |omega|, sizes h.

    ``patch_volumes`` and ``local_sizes`` are indexed by vertex id and cover
    all vertices; ``free_vertices`` is the sorted id list excluding gamma.
    """

    free_vertices: np.ndarray
    all_vertices: np.ndarray
    vertex_elements: list
    patch_volumes: np.ndarray
    local_sizes: np.ndarray


@dataclass
class RedRefinement:
    """Result of one uniform red refinement with its genealogy.

    ``corner_child[e, k]`` is the child element (in ``mesh``) containing the
    k-th vertex of parent element e; ``parent_of[c]`` maps children back.
    """

    mesh: SimplicialMesh
    parent_of: np.ndarray
    corner_child: np.ndarray
    children_of: list


@dataclass
class ValidationReport:
    conforming: bool
    volumes_positive: bool
    gamma_whole_faces: bool
    shape_ok: bool
    kmesh_ok: bool
    max_shape_ratio: float
    max_kmesh_ratio: float
    messages: list = field(default_factory=list)

    @property
    def passed(self):
        return (self.conforming and self.volumes_positive
                and self.gamma_whole_faces and self.shape_ok and self.kmesh_ok)


# -- construction ----------------------------------------------------------

def build_interval_mesh(n, gamma_spec="both"):
    """Uniform partition of (0, 1) into n elements.

    gamma_spec in {"none", "left", "right", "both"} marks the endpoint(s)
    carrying essential boundary conditions.
    """
    if n < 1:
        raise InvalidArgument(f"element count must be >= 1, got {n}")
    if gamma_spec not in ("none", "left", "right", "both"):
        raise InvalidArgument(f"unknown gamma_spec {gamma_spec!r}")
    x = np.linspace(0.0, 1.0, n + 1)
    elements = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    gamma = set()
    if gamma_spec in ("left", "both"):
        gamma.add(0)
    if gamma_spec in ("right", "both"):
        gamma.add(n)
    return SimplicialMesh(1, x, elements, gamma)


def interval_mesh_from_points(points, gamma_spec="both"):
    """Interval mesh over an increasing coordinate array."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 1 or len(points) < 2 or np.any(np.diff(points) <= 0):
        raise InvalidMesh("points must be strictly increasing with >= 2 entries")
    n = len(points) - 1
    elements = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    gamma = set()
    if gamma_spec in ("left", "both"):
        gamma.add(0)
    if gamma_spec in ("right", "both"):
        gamma.add(n)
    return SimplicialMesh(1, points, elements, gamma)


def _assign_refinement_edges(vertices, elements):
    """Rotate each triangle so its longest edge sits at positions (0, 1).

    Ties are broken by the smallest sorted vertex-id pair, which makes the
    assignment reproducible.  Rotations preserve orientation.
    """
    out = []
    for tri in elements:
        best = None
        for r in range(3):
            a, b = tri[r], tri[(r + 1) % 3]
            length = np.linalg.norm(vertices[a] - vertices[b])
            key = (-length, min(a, b), max(a, b))
            if best is None or key < best[0]:
                best = (key, r)
        r = best[1]
        out.append([tri[r], tri[(r + 1) % 3], tri[(r + 2) % 3]])
    return np.asarray(out, dtype=np.int64)


def build_cube_surface_mesh():
    """Closed triangulation of the unit-cube boundary: 12 triangles, 8 vertices.

    Each face is split along the diagonal out of its lexicographically
    smallest corner; triangles are oriented with outward normals.
    """
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                       dtype=float)
    corners = corners[np.lexsort((corners[:, 2], corners[:, 1], corners[:, 0]))]
    index = {tuple(c): i for i, c in enumerate(corners)}

    triangles = []
    for axis in range(3):
        for val in (0.0, 1.0):
            a1, a2 = [ax for ax in range(3) if ax != axis]
            cycle = []
            for p, q in ((0, 0), (1, 0), (1, 1), (0, 1)):
                c = [0.0, 0.0, 0.0]
                c[axis] = val
                c[a1] = float(p)
                c[a2] = float(q)
                cycle.append(index[tuple(c)])
            e1 = corners[cycle[1]] - corners[cycle[0]]
            e2 = corners[cycle[2]] - corners[cycle[1]]
            normal = np.cross(e1, e2)
            outward = np.zeros(3)
            outward[axis] = 1.0 if val == 1.0 else -1.0
            if np.dot(normal, outward) < 0:
                cycle = [cycle[0]] + cycle[1:][::-1]
            start = cycle.index(min(cycle, key=lambda c: tuple(corners[c])))
            cycle = cycle[start:] + cycle[:start]
            triangles.append([cycle[0], cycle[1], cycle[2]])
            triangles.append([cycle[0], cycle[2], cycle[3]])

    elements = _assign_refinement_edges(corners, np.asarray(triangles))
    return SimplicialMesh(2, corners, elements, set())


# -- refinement ------------------------------------------------------------

def refine_nvb_conforming(mesh, marked):
    """Bisect all marked elements, adding closure bisections for conformity.

    Marked edges are propagated until every element having a marked edge
    also has its refinement edge marked; each element is then split in one
    sweep (2 to 4 children).  New vertices appear only at midpoints of
    marked edges, so the result is conforming.
    """
    marked = set(int(m) for m in marked)
    if not marked.issubset(range(mesh.num_elements)):
        raise InvalidArgument("marked set contains invalid element ids")
    if mesh.dim_element == 1:
        return _refine_interval(mesh, marked)
    if not marked:
        return mesh

    t = mesh.elements
    edge0 = [tuple(sorted((t[e, 0], t[e, 1]))) for e in range(len(t))]
    edge1 = [tuple(sorted((t[e, 1], t[e, 2]))) for e in range(len(t))]
    edge2 = [tuple(sorted((t[e, 2], t[e, 0]))) for e in range(len(t))]

    marked_edges = set(edge0[e] for e in marked)
    changed = True
    while changed:
        changed = False
        for e in range(len(t)):
            if edge0[e] not in marked_edges and (
                    edge1[e] in marked_edges or edge2[e] in marked_edges):
                marked_edges.add(edge0[e])
                changed = True

    vertices = [tuple(p) for p in mesh.vertices]
    midpoint = {}
    for edge in sorted(marked_edges):
        a, b = edge
        midpoint[edge] = len(vertices)
        vertices.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))

    new_elements = []
    new_generation = []

    def emit(tri, gen):
        new_elements.append(tri)
        new_generation.append(gen)

    for e in range(len(t)):
        v0, v1, v2 = (int(x) for x in t[e])
        gen = int(mesh.generation[e])
        has0 = edge0[e] in marked_edges
        has1 = edge1[e] in marked_edges
        has2 = edge2[e] in marked_edges
        if not has0:
            emit([v0, v1, v2], gen)
            continue
        m0 = midpoint[edge0[e]]
        # children of the first bisection; their refinement edges are the
        # original edges edge2 (for child a) and edge1 (for child b)
        child_a = (v2, v0, m0)
        child_b = (v1, v2, m0)
        if has2:
            m2 = midpoint[edge2[e]]
            emit([m0, v2, m2], gen + 2)
            emit([v0, m0, m2], gen + 2)
        else:
            emit(list(child_a), gen + 1)
        if has1:
            m1 = midpoint[edge1[e]]
            emit([m0, v1, m1], gen + 2)
            emit([v2, m0, m1], gen + 2)
        else:
            emit(list(child_b), gen + 1)

    gamma = _split_gamma_edges(mesh.gamma_faces, midpoint)
    return SimplicialMesh(2, np.asarray(vertices), np.asarray(new_elements),
                          gamma, np.asarray(new_generation))


def _split_gamma_edges(gamma_faces, midpoint):
    gamma = set()
    for f in gamma_faces:
        key = tuple(sorted(f))
        if key in midpoint:
            m = midpoint[key]
            gamma.add(tuple(sorted((key[0], m))))
            gamma.add(tuple(sorted((m, key[1]))))
        else:
            gamma.add(key)
    return gamma


def _refine_interval(mesh, marked):
    if not marked:
        return mesh
    vertices = [float(x) for x in mesh.vertices[:, 0]]
    new_elements = []
    new_generation = []
    for e in range(mesh.num_elements):
        i, j = (int(x) for x in mesh.elements[e])
        gen = int(mesh.generation[e])
        if e in marked:
            m = len(vertices)
            vertices.append(0.5 * (vertices[i] + vertices[j]))
            new_elements += [[i, m], [m, j]]
            new_generation += [gen + 1, gen + 1]
        else:
            new_elements.append([i, j])
            new_generation.append(gen)
    return SimplicialMesh(1, np.asarray(vertices), np.asarray(new_elements),
                          mesh.gamma_faces, np.asarray(new_generation))


def refine_uniform_bisection(mesh):
    """Bisect every element at its refinement edge (conforming closure)."""
    return refine_nvb_conforming(mesh, range(mesh.num_elements))


def red_refine(mesh):
    """Split every element into 2^d children, recording the genealogy.

    The child containing the k-th vertex of its parent has volume
    2^-d |T| and is recorded in ``corner_child``.
    """
    if mesh.dim_element == 1:
        vertices = [float(x) for x in mesh.vertices[:, 0]]
        elements = []
        parent_of = []
        corner_child = np.zeros((mesh.num_elements, 2), dtype=np.int64)
        for e in range(mesh.num_elements):
            i, j = (int(x) for x in mesh.elements[e])
            m = len(vertices)
            vertices.append(0.5 * (vertices[i] + vertices[j]))
            corner_child[e] = (len(elements), len(elements) + 1)
            elements += [[i, m], [m, j]]
            parent_of += [e, e]
        gamma = mesh.gamma_faces
        refined = SimplicialMesh(1, np.asarray(vertices), np.asarray(elements),
                                 gamma, np.repeat(mesh.generation, 2) + 1)
        children = [list(corner_child[e]) for e in range(mesh.num_elements)]
        return RedRefinement(refined, np.asarray(parent_of), corner_child, children)

    vertices = [tuple(p) for p in mesh.vertices]
    midpoint = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            midpoint[key] = len(vertices)
            vertices.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
        return midpoint[key]

    elements = []
    parent_of = []
    corner_child = np.zeros((mesh.num_elements, 3), dtype=np.int64)
    children = []
    for e in range(mesh.num_elements):
        v0, v1, v2 = (int(x) for x in mesh.elements[e])
        m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        base = len(elements)
        elements += [[v0, m01, m20], [m01, v1, m12], [m20, m12, v2],
                     [m01, m12, m20]]
        parent_of += [e] * 4
        corner_child[e] = (base, base + 1, base + 2)
        children.append([base, base + 1, base + 2, base + 3])

    gamma = _split_gamma_edges(mesh.gamma_faces, midpoint)
    refined = SimplicialMesh(2, np.asarray(vertices), np.asarray(elements),
                             gamma, np.repeat(mesh.generation, 4) + 1)
    return RedRefinement(refined, np.asarray(parent_of), corner_child, children)


# -- patch data ------------------------------------------------------------

def build_patch_table(mesh):
    """Accumulate patch volumes |omega_nu| and local sizes h_nu.

    Volumes are summed in ascending element-id order so the result is
    bit-reproducible.
    """
    volumes = mesh.element_volumes()
    nv = mesh.num_vertices
    vertex_elements = [[] for _ in range(nv)]
    for e in range(mesh.num_elements):
        for v in mesh.elements[e]:
            vertex_elements[int(v)].append(e)
    patch = np.zeros(nv)
    for v in range(nv):
        for e in vertex_elements[v]:
            patch[v] += volumes[e]
    if np.any(patch <= 0):
        raise InvalidMesh("mesh has a vertex with empty or degenerate patch")
    sizes = patch ** (1.0 / mesh.dim_element)
    return PatchTable(
        free_vertices=mesh.free_vertices(),
        all_vertices=np.arange(nv, dtype=np.int64),
        vertex_elements=[np.asarray(v, dtype=np.int64) for v in vertex_elements],
        patch_volumes=patch,
        local_sizes=sizes,
    )


# -- validation ------------------------------------------------------------

def validate(mesh, rho_max=DEFAULT_RHO_MAX, k_max=DEFAULT_K_MAX):
    """Report-only checks: conformity, positive volumes, gamma structure,
    shape regularity (d=2) and the K-mesh property (d=1)."""
    messages = []
    volumes = mesh.element_volumes()
    volumes_positive = bool(np.all(volumes > 0))
    if not volumes_positive:
        messages.append("element with non-positive volume")

    conforming = True
    gamma_ok = True
    max_shape = 0.0
    max_kmesh = 1.0
    shape_ok = True
    kmesh_ok = True

    if mesh.dim_element == 1:
        order = np.argsort(mesh.vertices[mesh.elements[:, 0], 0])
        t = mesh.elements[order]
        lengths = volumes[order]
        # conforming iff consecutive elements share their endpoint vertex
        for k in range(len(t) - 1):
            if t[k, 1] != t[k + 1, 0]:
                conforming = False
                messages.append(f"elements {order[k]} and {order[k+1]} do not chain")
        if len(lengths) > 1:
            ratios = np.maximum(lengths[1:] / lengths[:-1],
                                lengths[:-1] / lengths[1:])
            max_kmesh = float(np.max(ratios))
            kmesh_ok = bool(max_kmesh <= k_max + 1e-12)
            if not kmesh_ok:
                messages.append(f"K-mesh ratio {max_kmesh:.3g} exceeds {k_max}")
        for f in mesh.gamma_faces:
            if not (0 <= int(f) < mesh.num_vertices):
                gamma_ok = False
    else:
        t = mesh.elements
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        if np.any(counts > 2):
            conforming = False
            messages.append("edge shared by more than two triangles")
        # hanging vertices: vertex strictly inside another element's edge
        used = np.unique(t)
        coords = mesh.vertices
        for (a, b), c in zip(uniq, counts):
            pa, pb = coords[a], coords[b]
            seg = pb - pa
            seg_len2 = float(seg @ seg)
            rel = coords[used] - pa
            s = (rel @ seg) / seg_len2
            dist2 = np.einsum("ij,ij->i", rel, rel) - s * s * seg_len2
            inside = (s > 1e-12) & (s < 1 - 1e-12) & (dist2 < 1e-24 * seg_len2)
            for v in used[inside]:
                if v != a and v != b:
                    conforming = False
                    messages.append(f"vertex {int(v)} hangs on edge ({a}, {b})")
        edge_set = set(map(tuple, uniq))
        for f in mesh.gamma_faces:
            if tuple(sorted(f)) not in edge_set:
                gamma_ok = False
                messages.append(f"gamma face {f} is not a mesh edge")
        v = mesh.vertices
        e01 = np.linalg.norm(v[t[:, 1]] - v[t[:, 0]], axis=1)
        e12 = np.linalg.norm(v[t[:, 2]] - v[t[:, 1]], axis=1)
        e20 = np.linalg.norm(v[t[:, 0]] - v[t[:, 2]], axis=1)
        perimeter = e01 + e12 + e20
        with np.errstate(divide="ignore", invalid="ignore"):
            inradius = 2.0 * volumes / perimeter
            circumradius = e01 * e12 * e20 / (4.0 * volumes)
            ratios = circumradius / inradius
        max_shape = float(np.max(ratios)) if len(ratios) else 0.0
        shape_ok = bool(max_shape <= rho_max + 1e-12)
        if not shape_ok:
            messages.append(f"shape ratio {max_shape:.3g} exceeds {rho_max}")

    if not gamma_ok:
        messages.append("gamma is not a union of whole (d-1)-faces")

    return ValidationReport(conforming, volumes_positive, gamma_ok,
                            shape_ok, kmesh_ok, max_shape, max_kmesh, messages)


# -- serialization ----------------------------------------------------------

def mesh_to_text(mesh):
    """Plain-text serialization with exact (shortest-repr) coordinates."""
    lines = [f"{mesh.dim_element} {mesh.dim_ambient} "
             f"{mesh.num_vertices} {mesh.num_elements}"]
    for p in mesh.vertices:
        lines.append(" ".join(repr(float(x)) for x in p))
    for t in mesh.elements:
        lines.append(" ".join(str(int(i)) for i in t))
    for f in sorted(mesh.gamma_faces if mesh.dim_element == 2
                    else ((g,) for g in mesh.gamma_faces)):
        lines.append(" ".join(str(int(i)) for i in f))
    return "\n".join(lines) + "\n"


def mesh_from_text(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    d, d_amb, nv, ne = (int(x) for x in lines[0].split())
    vertices = np.array([[float(x) for x in ln.split()]
                         for ln in lines[1:1 + nv]])
    if vertices.shape[1] != d_amb:
        raise InvalidMesh("vertex coordinate count does not match header")
    elements = np.array([[int(x) for x in ln.split()]
                         for ln in lines[1 + nv:1 + nv + ne]], dtype=np.int64)
    gamma = set()
    for ln in lines[1 + nv + ne:]:
        ids = tuple(int(x) for x in ln.split())
        gamma.add(ids[0] if d == 1 else tuple(sorted(ids)))
    return SimplicialMesh(d, vertices, elements, gamma)
