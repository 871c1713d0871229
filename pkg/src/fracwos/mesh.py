"""Nested triangle meshes: uniform quadrisection, interpolation, norms.

Each refinement splits every triangle into four through its edge midpoints,
with children of triangle t stored at indices 4t..4t+3 (corner children
first, medial triangle last).  Coarse vertices keep their indices in the
fine level, so restriction is a prefix view and every new vertex is the
exact midpoint of one coarse edge.  Point location walks this quadtree from
the base level, giving O(depth) barycentric lookups that vectorize over
many query points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, unit_ball

_BARY_TOL = 1e-12


class PointOutsideMeshError(ValueError):
    """Raised by point location for queries outside the meshed polygon."""

    def __init__(self, points):
        self.points = np.atleast_2d(points)
        super().__init__(f"{self.points.shape[0]} point(s) outside mesh, "
                         f"first: {tuple(self.points[0])}")


@dataclass
class MeshLevel:
    """One triangulation of the meshed polygon."""

    level: int
    vertices: np.ndarray          # (N, 2)
    triangles: np.ndarray         # (T, 3) vertex indices, counter-clockwise
    mesh_width: float             # longest edge over all triangles
    interior_mask: np.ndarray | None = None   # vertex strictly inside domain
    parent: "MeshLevel | None" = None
    _areas: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def areas(self) -> np.ndarray:
        if self._areas is None:
            self._areas = _signed_areas(self.vertices, self.triangles)
        return self._areas


@dataclass
class FieldVector:
    """Vertex values of a piecewise-linear function on one mesh level."""

    level: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("field values must be a flat vector")
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite field value")


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, FieldVector) else np.asarray(f, dtype=np.float64)


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    tv = vertices[triangles]
    e1 = tv[:, 1] - tv[:, 0]
    e2 = tv[:, 2] - tv[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _max_edge(vertices: np.ndarray, triangles: np.ndarray) -> float:
    tv = vertices[triangles]
    edges = np.roll(tv, -1, axis=1) - tv
    return float(np.hypot(edges[..., 0], edges[..., 1]).max())


def make_base(vertices, triangles, level: int = 1,
              domain: Domain | None = None) -> MeshLevel:
    """Validate and wrap a base triangulation.

    Triangles must be counter-clockwise; duplicate vertices and degenerate
    or inverted triangles are rejected.
    """
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    if v.ndim != 2 or v.shape[1] != 2 or not np.isfinite(v).all():
        raise ValueError("vertices must be a finite (N, 2) array")
    if t.ndim != 2 or t.shape[1] != 3:
        raise ValueError("triangles must be an (T, 3) index array")
    if t.min() < 0 or t.max() >= v.shape[0]:
        raise ValueError("triangle index out of range")
    if np.unique(v.round(decimals=14), axis=0).shape[0] != v.shape[0]:
        raise ValueError("duplicate vertices in base mesh")
    if np.any(_signed_areas(v, t) <= 0.0):
        raise ValueError("inverted or degenerate triangle in base mesh")
    lvl = MeshLevel(level=level, vertices=v, triangles=t,
                    mesh_width=_max_edge(v, t))
    if domain is not None:
        lvl.interior_mask = np.asarray(domain.contains(v))
    return lvl


def square_ball_base(domain: Domain | None = None) -> MeshLevel:
    """The 4-triangle diagonal split of [-1, 1]^2 (level 1)."""
    v = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0],
                  [0.0, 0.0]])
    t = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    return make_base(v, t, level=1, domain=domain or unit_ball())


def refine(level: MeshLevel, domain: Domain | None = None):
    """Quadrisect every triangle; returns (fine level, parent-edge table).

    Row i of the parent table holds the two coarse vertex indices whose
    midpoint is fine vertex i; inherited vertices (i below the coarse count)
    hold [i, i].  Midpoints are deduplicated by parent index pair, never by
    coordinate comparison, so nesting is exact.
    """
    v = level.vertices
    tris = level.triangles
    nc = v.shape[0]
    edge_index: dict[tuple[int, int], int] = {}
    mid_pairs: list[tuple[int, int]] = []

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = edge_index.get(key)
        if idx is None:
            idx = nc + len(mid_pairs)
            edge_index[key] = idx
            mid_pairs.append(key)
        return idx

    new_tris = np.empty((4 * tris.shape[0], 3), dtype=np.int64)
    for k, (a, b, c) in enumerate(tris):
        mab = midpoint(a, b)
        mbc = midpoint(b, c)
        mca = midpoint(c, a)
        new_tris[4 * k + 0] = (a, mab, mca)
        new_tris[4 * k + 1] = (b, mbc, mab)
        new_tris[4 * k + 2] = (c, mca, mbc)
        new_tris[4 * k + 3] = (mab, mbc, mca)

    pairs = np.array(mid_pairs, dtype=np.int64)
    mids = 0.5 * (v[pairs[:, 0]] + v[pairs[:, 1]])
    fine_v = np.vstack([v, mids])
    parents = np.vstack([np.repeat(np.arange(nc, dtype=np.int64)[:, None], 2, axis=1),
                         pairs])
    fine = MeshLevel(level=level.level + 1, vertices=fine_v, triangles=new_tris,
                     mesh_width=_max_edge(fine_v, new_tris), parent=level)
    if domain is not None:
        fine.interior_mask = np.asarray(domain.contains(fine_v))
    return fine, parents


@dataclass
class MeshHierarchy:
    """Nested levels from the base up to the finest, plus parent-edge maps."""

    levels: list[MeshLevel]
    parent_edges: list[np.ndarray]      # transition i: levels[i] -> levels[i+1]
    domain: Domain | None = None
    _norm_masks: dict = field(default_factory=dict, repr=False)

    @property
    def coarsest(self) -> int:
        return self.levels[0].level

    @property
    def finest(self) -> int:
        return self.levels[-1].level

    def level(self, ell: int) -> MeshLevel:
        i = ell - self.coarsest
        if not 0 <= i < len(self.levels):
            raise ValueError(f"level {ell} not in hierarchy "
                             f"[{self.coarsest}, {self.finest}]")
        return self.levels[i]

    def parents(self, fine_ell: int) -> np.ndarray:
        """Parent-edge table of the transition (fine_ell - 1) -> fine_ell."""
        i = fine_ell - self.coarsest
        if not 1 <= i < len(self.levels):
            raise ValueError(f"no transition onto level {fine_ell}")
        return self.parent_edges[i - 1]

    def norm_mask(self, ell: int) -> np.ndarray | None:
        """Triangles whose three vertices lie in the closed domain.

        Error norms use only these, so boundary-straddling interpolation is
        not charged to the solver; the omitted strip has measure O(h).
        """
        if self.domain is None:
            return None
        if ell not in self._norm_masks:
            lvl = self.level(ell)
            inside = np.asarray(self.domain.contains_closed(lvl.vertices))
            self._norm_masks[ell] = inside[lvl.triangles].all(axis=1)
        return self._norm_masks[ell]

    def masked_area(self, ell: int) -> float:
        lvl = self.level(ell)
        mask = self.norm_mask(ell)
        a = lvl.areas()
        return float(a.sum() if mask is None else a[mask].sum())


def build_hierarchy(base: MeshLevel, finest_level: int,
                    domain: Domain | None = None) -> MeshHierarchy:
    """Refine `base` up to `finest_level` (inclusive)."""
    if finest_level < base.level:
        raise ValueError("finest_level must be at least the base level")
    if domain is not None and base.interior_mask is None:
        base.interior_mask = np.asarray(domain.contains(base.vertices))
    levels = [base]
    edges = []
    while levels[-1].level < finest_level:
        fine, parents = refine(levels[-1], domain=domain)
        levels.append(fine)
        edges.append(parents)
    return MeshHierarchy(levels=levels, parent_edges=edges, domain=domain)


def _barycentric(level: MeshLevel, tri_idx: np.ndarray,
                 pts: np.ndarray) -> np.ndarray:
    tv = level.vertices[level.triangles[tri_idx]]        # (P, 3, 2)
    v1, v2, v3 = tv[:, 0], tv[:, 1], tv[:, 2]
    det = ((v2[:, 0] - v1[:, 0]) * (v3[:, 1] - v1[:, 1])
           - (v2[:, 1] - v1[:, 1]) * (v3[:, 0] - v1[:, 0]))
    w1 = ((v2[:, 0] - pts[:, 0]) * (v3[:, 1] - pts[:, 1])
          - (v2[:, 1] - pts[:, 1]) * (v3[:, 0] - pts[:, 0])) / det
    w2 = ((v3[:, 0] - pts[:, 0]) * (v1[:, 1] - pts[:, 1])
          - (v3[:, 1] - pts[:, 1]) * (v1[:, 0] - pts[:, 0])) / det
    w3 = 1.0 - w1 - w2
    return np.column_stack([w1, w2, w3])


def _chain(level: MeshLevel) -> list[MeshLevel]:
    chain = [level]
    while chain[-1].parent is not None:
        chain.append(chain[-1].parent)
    chain.reverse()
    return chain


def locate(level: MeshLevel, p):
    """Containing triangle and barycentric coordinates for query points.

    Accepts one point (shape (2,)) or many (shape (P, 2)); raises
    PointOutsideMeshError when barycentric coordinates fall below -1e-12.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    chain = _chain(level)
    base = chain[0]

    # brute-force the base level (it is small)
    tv = base.vertices[base.triangles]                   # (T, 3, 2)
    v1, v2, v3 = tv[:, 0], tv[:, 1], tv[:, 2]
    det = ((v2[:, 0] - v1[:, 0]) * (v3[:, 1] - v1[:, 1])
           - (v2[:, 1] - v1[:, 1]) * (v3[:, 0] - v1[:, 0]))
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    w1 = ((v2[:, 0] - px) * (v3[:, 1] - py) - (v2[:, 1] - py) * (v3[:, 0] - px)) / det
    w2 = ((v3[:, 0] - px) * (v1[:, 1] - py) - (v3[:, 1] - py) * (v1[:, 0] - px)) / det
    w3 = 1.0 - w1 - w2
    worst = np.minimum(np.minimum(w1, w2), w3)           # (P, T)
    tri = worst.argmax(axis=1)
    scale = max(base.mesh_width, 1.0)
    bad = worst[np.arange(pts.shape[0]), tri] < -_BARY_TOL * scale
    if bad.any():
        raise PointOutsideMeshError(pts[bad])

    for lvl in chain[1:]:
        w = _barycentric(lvl.parent, tri, pts)
        child = np.where(w[:, 0] >= 0.5, 0,
                         np.where(w[:, 1] >= 0.5, 1,
                                  np.where(w[:, 2] >= 0.5, 2, 3)))
        tri = 4 * tri + child

    w = _barycentric(level, tri, pts)
    bad = w.min(axis=1) < -_BARY_TOL
    if bad.any():
        raise PointOutsideMeshError(pts[bad])
    w = np.clip(w, 0.0, None)
    w /= w.sum(axis=1, keepdims=True)
    if single:
        return int(tri[0]), w[0]
    return tri, w


def interpolate(level: MeshLevel, f, p):
    """Piecewise-linear interpolant of vertex values, evaluated at p."""
    vals = _values(f)
    if vals.shape[0] != level.num_vertices:
        raise ValueError("field length does not match mesh level")
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    tri, w = locate(level, np.atleast_2d(pts))
    tri = np.atleast_1d(tri)
    w = np.atleast_2d(w)
    out = np.einsum("pk,pk->p", w, vals[level.triangles[tri]])
    return float(out[0]) if single else out


def l2_norm(level: MeshLevel, f, mask: np.ndarray | None = None) -> float:
    """L2 norm of the piecewise-linear interpolant over (masked) triangles.

    Uses the edge-midpoint cubature Q(phi) = Area/3 sum phi(m_i), which has
    degree of precision two and therefore integrates the square of any
    piecewise-linear function exactly.
    """
    vals = _values(f)
    if vals.shape[0] != level.num_vertices:
        raise ValueError("field length does not match mesh level")
    f3 = vals[level.triangles]                           # (T, 3)
    mid = 0.5 * (f3 + np.roll(f3, -1, axis=1))
    q = level.areas() / 3.0 * (mid * mid).sum(axis=1)
    if mask is not None:
        q = q[mask]
    return float(np.sqrt(max(q.sum(), 0.0)))


def restrict(hier: MeshHierarchy, fine_field: FieldVector) -> FieldVector:
    """Values at inherited vertices (coarse vertices keep their indices)."""
    coarse = hier.level(fine_field.level - 1)
    fine = hier.level(fine_field.level)
    if fine_field.values.shape[0] != fine.num_vertices:
        raise ValueError("field length does not match its level")
    return FieldVector(coarse.level, fine_field.values[:coarse.num_vertices].copy())


def prolong(hier: MeshHierarchy, coarse_field: FieldVector) -> FieldVector:
    """Exact linear prolongation onto the next finer level."""
    fine = hier.level(coarse_field.level + 1)
    parents = hier.parents(fine.level)
    nc = hier.level(coarse_field.level).num_vertices
    if coarse_field.values.shape[0] != nc:
        raise ValueError("field length does not match its level")
    out = np.empty(fine.num_vertices)
    out[:nc] = coarse_field.values
    pa, pb = parents[nc:, 0], parents[nc:, 1]
    out[nc:] = 0.5 * (coarse_field.values[pa] + coarse_field.values[pb])
    return FieldVector(fine.level, out)


def prolong_to(hier: MeshHierarchy, f: FieldVector, ell: int) -> FieldVector:
    while f.level < ell:
        f = prolong(hier, f)
    return f


def midpoint_defect(hier: MeshHierarchy, fine_field: FieldVector) -> FieldVector:
    """Fine field minus the interpolant of its own restriction.

    Zero at inherited vertices; at each midpoint vertex, the value minus the
    average of its two parent values.  For a coupled pair this is exactly
    the fine-minus-coarse correction of the multilevel telescope.
    """
    fine = hier.level(fine_field.level)
    parents = hier.parents(fine_field.level)
    nc = hier.level(fine_field.level - 1).num_vertices
    if fine_field.values.shape[0] != fine.num_vertices:
        raise ValueError("field length does not match its level")
    vals = fine_field.values
    out = np.zeros(fine.num_vertices)
    pa, pb = parents[nc:, 0], parents[nc:, 1]
    out[nc:] = vals[nc:] - 0.5 * (vals[pa] + vals[pb])
    return FieldVector(fine_field.level, out)


def write_field_csv(path, level: MeshLevel, f, alpha: float, seed: int) -> None:
    """Serialize a field: `# level=...` header then vertex_index,x,y,value."""
    vals = _values(f)
    with open(path, "w") as fh:
        fh.write(f"# level={level.level} alpha={float(alpha)!r} seed={seed}\n")
        fh.write("vertex_index,x,y,value\n")
        for i, ((x, y), v) in enumerate(zip(level.vertices, vals)):
            fh.write(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}\n")


def read_field_csv(path):
    """Read a field CSV back; returns (meta dict, vertices (N,2), values)."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("missing field CSV header")
        meta = dict(kv.split("=", 1) for kv in header[1:].split())
        fh.readline()  # column names
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    order = rows[:, 0].argsort()
    rows = rows[order]
    return meta, rows[:, 1:3], rows[:, 3]
