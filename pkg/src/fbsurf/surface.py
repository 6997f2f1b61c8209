"""Triangulated images of harmonic maps on a planar model.

The fundamental domain of the reflection group is the part of the model with
``x >= 0``, ``y >= 0`` and ``|z| <= 1`` (one octant of the sphere).  It is
meshed by Delaunay triangulation of boundary-fitted points and then reflected
eight times; vertices are merged with a small tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import DegenerateMesh
from .moduli import inverse_stereo

DEDUP_TOL = 1e-9

# (axes, z -> g(z), orientation reversing)
_ELEMENTS = (
    ((), lambda z: z, False),
    ((1,), lambda z: -np.conj(z), True),
    ((2,), lambda z: np.conj(z), True),
    ((3,), lambda z: z / np.abs(z) ** 2, True),
    ((1, 2), lambda z: -z, False),
    ((1, 3), lambda z: -1 / z, False),
    ((2, 3), lambda z: 1 / z, False),
    ((1, 2, 3), lambda z: -1 / np.conj(z), True),
)


def _holes(model):
    return [c for c in model.circles if not c.outer]


def _in_fundamental(z, tol=1e-12):
    return (z.real >= -tol) & (z.imag >= -tol) & (np.abs(z) <= 1 + tol)


def _outside_holes(model, z, margin=0.0):
    ok = np.ones(z.shape, bool)
    for c in _holes(model):
        ok &= np.abs(z - c.center) >= c.radius * (1 + margin) - 1e-14
    return ok


def _spacing(model, z, h):
    """Target point spacing: ``h`` far from holes, graded down near small holes."""
    sp = np.full(np.shape(z), h, dtype=float)
    for c in _holes(model):
        d = np.abs(np.abs(z - c.center) - c.radius)
        sp = np.minimum(sp, 0.3 * c.radius + 0.5 * d)
    return sp


def _walk(curve, t0, t1, model, h, n_fine=4000):
    """Points along ``curve(t)``, t in [t0, t1], spaced by the target spacing (ends included)."""
    t = np.linspace(t0, t1, n_fine + 1)
    z = curve(t)
    ds = np.abs(np.diff(z))
    sp = _spacing(model, 0.5 * (z[1:] + z[:-1]), h)
    u = np.r_[0, np.cumsum(ds / sp)]
    n = max(2, int(np.ceil(u[-1])))
    return curve(np.interp(np.linspace(0, u[-1], n + 1), u, t))


def _circle(c):
    return lambda t: c.center + c.radius * np.exp(1j * t)


def boundary_pieces(model, h):
    """Boundary of the fundamental region as sampled pieces with exact junctions."""
    g = {c.group: c for c in _holes(model) if c.member == 1}
    inner = [c for c in _holes(model) if abs(c.center) < 1e-14][0]
    s3 = inner.radius
    pieces = []
    x_end, y_end = 1.0, 1.0
    a_lo, a_hi = 0.0, np.pi / 2
    if 1 in g:
        c1 = g[1]
        x_end = c1.center.real - c1.radius
        a_lo = model.p.r[0]
        w = np.exp(1j * a_lo) - c1.center
        pieces.append(_walk(_circle(c1), np.angle(w), np.pi, model, h))
    if 2 in g:
        c2 = g[2]
        y_end = c2.center.imag - c2.radius
        a_hi = np.pi / 2 - model.p.r[1]
        w = np.exp(1j * a_hi) - c2.center
        pieces.append(_walk(_circle(c2), -np.pi / 2, np.angle(w), model, h))
    pieces.append(_walk(lambda t: t + 0j, s3, x_end, model, h))
    pieces.append(_walk(lambda t: 1j * t, s3, y_end, model, h))
    pieces.append(_walk(lambda t: np.exp(1j * t), a_lo, a_hi, model, h))
    pieces.append(_walk(_circle(inner), 0.0, np.pi / 2, model, h))
    return pieces


def fundamental_points(model, h: float):
    """Boundary-fitted point cloud of the fundamental domain with spacing about ``h``."""
    bnd = np.concatenate(boundary_pieces(model, h))
    bnd = np.where(np.abs(bnd.real) < 1e-15, 1j * bnd.imag, bnd)
    bnd = np.where(np.abs(bnd.imag) < 1e-15, bnd.real + 0j, bnd)
    cand = []
    for c in _holes(model):
        rho, k = c.radius, 0
        while k < 200:
            step = min(h, 0.3 * rho)
            rho = rho + step
            if rho > c.radius + 4 * h:
                break
            m = max(16, int(np.ceil(2 * np.pi * rho / step)))
            cand.append(c.center + rho * np.exp(2j * np.pi * (np.arange(m) + 0.5 * (k % 2)) / m))
            k += 1
    gx = np.arange(0, 1 + h, h)
    X, Y = np.meshgrid(gx, gx)
    X = X + 0.5 * h * (np.arange(X.shape[0])[:, None] % 2)
    cand.append((X + 1j * Y).ravel())
    z = np.concatenate(cand)
    z = z[_in_fundamental(z, 0) & _outside_holes(model, z)]
    sp = _spacing(model, z, h)
    # distance to the boundary sample must exceed a fraction of the local spacing
    d, _ = cKDTree(np.c_[bnd.real, bnd.imag]).query(np.c_[z.real, z.imag])
    z, sp = z[d > 0.6 * sp], sp[d > 0.6 * sp]
    order = np.argsort(sp, kind="stable")
    z, sp = z[order], sp[order]
    tree = cKDTree(np.c_[z.real, z.imag])
    drop = np.zeros(z.size, bool)
    for a, b in sorted(tree.query_pairs(0.5 * h)):
        if not drop[a] and not drop[b] and abs(z[a] - z[b]) < 0.5 * min(sp[a], sp[b]):
            drop[b] = True
    bnd_u = np.unique(np.round(bnd, 15))
    return np.concatenate([bnd_u, z[~drop]])


def _on_boundary(model, z, tol=1e-11):
    b = (np.abs(z.real) < tol) | (np.abs(z.imag) < tol) | (np.abs(np.abs(z) - 1) < tol)
    for c in _holes(model):
        b |= np.abs(np.abs(z - c.center) - c.radius) < tol * max(1.0, c.radius)
    return b


def fundamental_mesh(model, h: float):
    """Vertices (complex) and triangles of the fundamental domain."""
    z = fundamental_points(model, h)
    tri = Delaunay(np.c_[z.real, z.imag]).simplices
    zt = z[tri]
    cen = zt.mean(axis=1)
    ok = _in_fundamental(cen, 0) & _outside_holes(model, cen)
    holes = _holes(model)
    on = [np.abs(np.abs(z - c.center) - c.radius) < 1e-11 * max(1.0, c.radius) for c in holes]
    for a, b in ((0, 1), (1, 2), (0, 2)):
        mid = 0.5 * (zt[:, a] + zt[:, b])
        good = _in_fundamental(mid, 1e-9)
        for c, o in zip(holes, on):
            # a short chord between neighbours on the same circle is a boundary edge
            chord = o[tri[:, a]] & o[tri[:, b]] & (np.abs(zt[:, a] - zt[:, b]) < 0.7 * c.radius)
            good &= chord | (np.abs(mid - c.center) >= c.radius)
        ok &= good
    tri = tri[ok]
    # counter-clockwise orientation
    zt = z[tri]
    area = ((zt[:, 1] - zt[:, 0]) * np.conj(zt[:, 2] - zt[:, 0])).imag
    tri[area > 0] = tri[area > 0][:, [0, 2, 1]]
    used = np.unique(tri)
    remap = -np.ones(z.size, int)
    remap[used] = np.arange(used.size)
    return z[used], remap[tri]


def reflect_mesh(z, tri, tol: float = DEDUP_TOL):
    """Full-domain mesh from a fundamental one.

    Returns plane vertices, triangles and for each vertex the group element
    index and the fundamental vertex it came from.
    """
    Z, T, elem, src = [], [], [], []
    off = 0
    for e, (axes, g, rev) in enumerate(_ELEMENTS):
        Z.append(g(z))
        T.append((tri[:, [0, 2, 1]] if rev else tri) + off)
        elem.append(np.full(z.size, e))
        src.append(np.arange(z.size))
        off += z.size
    Z = np.concatenate(Z)
    T = np.concatenate(T)
    elem = np.concatenate(elem)
    src = np.concatenate(src)
    # merge duplicates on the mirror lines (compare on the sphere: bounded coordinates)
    X = inverse_stereo(Z)
    tree = cKDTree(X)
    rep = np.arange(Z.size)
    for a, b in sorted(tree.query_pairs(tol)):
        ra, rb = rep[a], rep[b]
        while rep[ra] != ra:
            ra = rep[ra]
        while rep[rb] != rb:
            rb = rep[rb]
        if ra != rb:
            rep[max(ra, rb)] = min(ra, rb)
    for k in range(Z.size):
        r = k
        while rep[r] != r:
            r = rep[r]
        rep[k] = r
    keep = np.unique(rep)
    index = -np.ones(Z.size, int)
    index[keep] = np.arange(keep.size)
    T = index[rep[T]]
    T = T[(T[:, 0] != T[:, 1]) & (T[:, 1] != T[:, 2]) & (T[:, 0] != T[:, 2])]
    return Z[keep], T, elem[keep], src[keep]


@dataclass
class Topology:
    vertices: int
    edges: int
    faces: int
    euler: int
    boundary_loops: int
    genus: float
    loops: list = field(default_factory=list, repr=False)


def topology(tri) -> Topology:
    """Euler characteristic, boundary loops and genus of a triangle mesh."""
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]]), axis=1)
    uniq, count = np.unique(e, axis=0, return_counts=True)
    if np.any(count > 2):
        raise DegenerateMesh("non-manifold edge (shared by more than two triangles)")
    bnd = uniq[count == 1]
    V = np.unique(tri).size
    chi = V - uniq.shape[0] + tri.shape[0]
    # chain boundary edges into loops
    adj = {}
    for a, b in bnd:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in adj.values()):
        raise DegenerateMesh("boundary vertex with valence != 2")
    seen, loops = set(), []
    for start in adj:
        if start in seen:
            continue
        loop, prev, cur = [start], None, start
        seen.add(start)
        while True:
            nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
            if nxt == start:
                break
            loop.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        loops.append(np.array(loop))
    b = len(loops)
    return Topology(V, uniq.shape[0], tri.shape[0], int(chi), b, (2 - chi - b) / 2, loops)


@dataclass
class SurfaceSample:
    """Mesh of the image of a harmonic map with per-vertex diagnostics."""

    plane: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    attributes: dict = field(default_factory=dict, repr=False)
    topology: Topology | None = None
    residuals: dict = field(default_factory=dict)
    loops: dict = field(default_factory=dict, repr=False)

    def scaled(self, factor: float) -> "SurfaceSample":
        return SurfaceSample(self.plane, self.points * factor, self.triangles, dict(self.attributes),
                             self.topology, dict(self.residuals), dict(self.loops))

    def to_obj(self, path) -> None:
        write_obj(path, self.points, self.triangles)

    def to_ply(self, path) -> None:
        write_ply(path, self.points, self.triangles, self.attributes)


def write_obj(path, points, triangles) -> None:
    with open(path, "w") as fh:
        for p in points:
            fh.write("v " + " ".join(f"{x:.17g}" for x in p[:3]) + "\n")
        for t in triangles:
            fh.write("f {} {} {}\n".format(*(t + 1)))


def write_ply(path, points, triangles, attributes=None) -> None:
    """ASCII PLY; ``points`` may have any number of coordinate channels."""
    attributes = attributes or {}
    dim = points.shape[1]
    names = ["x", "y", "z"] if dim == 3 else [f"c{k}" for k in range(dim)]
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {points.shape[0]}\n")
        for n in names:
            fh.write(f"property double {n}\n")
        for n in attributes:
            fh.write(f"property double {n}\n")
        fh.write(f"element face {triangles.shape[0]}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        cols = [points] + [np.asarray(v, float).reshape(-1, 1) for v in attributes.values()]
        data = np.hstack(cols)
        for row in data:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        for t in triangles:
            fh.write("3 {} {} {}\n".format(*t))


def read_ply_header(path) -> dict:
    """Vertex/face counts and vertex property names of an ASCII PLY file."""
    info = {"properties": []}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts[:2] == ["element", "vertex"]:
                info["vertices"] = int(parts[2])
            elif parts[:2] == ["element", "face"]:
                info["faces"] = int(parts[2])
            elif parts[:1] == ["property"] and parts[1] == "double":
                info["properties"].append(parts[2])
            elif parts[:1] == ["end_header"]:
                break
    return info


def boundary_loop_labels(model, plane, loops):
    """(group, member) of the circle carrying each boundary loop."""
    out = []
    for loop in loops:
        z = plane[loop]
        best, err = None, np.inf
        for c in model.circles:
            d = np.max(np.abs(np.abs(z - c.center) - c.radius))
            if d < err:
                best, err = c, d
        if err > 1e-8 * max(1.0, best.radius):
            raise DegenerateMesh("boundary loop does not lie on a model circle")
        out.append((best.group, best.member))
    return out


@dataclass
class MapSample:
    """A vector harmonic map sampled on the reflected mesh."""

    model: object = field(repr=False)
    z: np.ndarray = field(repr=False)          # fundamental vertices
    tri: np.ndarray = field(repr=False)
    plane: np.ndarray = field(repr=False)      # full-domain vertices
    triangles: np.ndarray = field(repr=False)
    elem: np.ndarray = field(repr=False)
    src: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)     # (n_fundamental, n_components)
    derivs: np.ndarray = field(repr=False)     # complex F' per component
    points: np.ndarray = field(repr=False)     # (n_full, n_components)
    topology: Topology | None = None

    def hopf(self) -> np.ndarray:
        """|sum F'^2| / sum |F'|^2 at the fundamental vertices."""
        return np.abs(np.sum(self.derivs ** 2, axis=1)) / np.sum(np.abs(self.derivs) ** 2, axis=1)

    def energy_density(self) -> np.ndarray:
        return np.sum(np.abs(self.derivs) ** 2, axis=1)

    def full(self, per_vertex: np.ndarray) -> np.ndarray:
        return per_vertex[self.src]


def map_sample(model, components, h: float) -> MapSample:
    """Mesh the model and evaluate ``components`` = [(solution, parity signs), ...].

    Each component is assumed to satisfy ``c o rho_k = s_k c``; the full mesh
    values are obtained from the fundamental ones by these parities.
    """
    z, tri = fundamental_mesh(model, h)
    Z, T, elem, src = reflect_mesh(z, tri)
    top = topology(T)
    vals = np.array([sol.value(z) for sol, _ in components]).T
    der = np.array([sol.dF(z) for sol, _ in components]).T
    signs = np.array([[np.prod([s[a - 1] for a in axes]) for _, s in components]
                      for axes, _, _ in _ELEMENTS])
    points = vals[src] * signs[elem]
    return MapSample(model, z, tri, Z, T, elem, src, vals, der, points, top)


def boundary_vertex_sets(model, z, tol: float = 1e-11):
    """Indices of fundamental vertices on each hole circle, keyed by circle index."""
    out = {}
    for k, c in enumerate(model.circles):
        if c.outer:
            continue
        on = np.abs(np.abs(z - c.center) - c.radius) < tol * max(1.0, c.radius)
        if np.any(on):
            out[k] = np.nonzero(on)[0]
    return out


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(max(da.max(), db.max()))
