"""Structured quadrilateral meshes on rectangles and an L-shaped panel.

Vertices are numbered lexicographically by (y, x).  Cells store their four
vertex ids counterclockwise starting at the lower-left corner, so local edge
``e`` connects local vertices ``e`` and ``(e + 1) % 4`` (bottom, right, top,
left).  Boundary facets carry a :class:`BoundaryTag` that downstream code
uses to place displacement constraints and traction controls.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

GEOM_TOL = 1e-12

EDGE_VERTICES = ((0, 1), (1, 2), (2, 3), (3, 0))


class BoundaryTag(enum.IntEnum):
    """Roles a boundary facet can play in the model problems."""

    DIRICHLET_BOTTOM = 0
    NEUMANN_TOP = 1
    NEUMANN_LEFT = 2
    FREE = 3


@dataclass(frozen=True)
class Mesh:
    """Conforming quadrilateral mesh with tagged boundary facets.

    Parameters
    ----------
    vertices : ndarray, shape (n_vertices, 2)
        Coordinates, numbered lexicographically by (y, x).
    cells : ndarray, shape (n_cells, 4)
        Vertex ids per cell, counterclockwise from the lower-left corner.
    boundary_facets : ndarray, shape (n_facets, 3)
        Rows ``(cell, local_edge, tag)`` covering the whole boundary.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_areas(self) -> np.ndarray:
        """Shoelace area of every cell (positive for counterclockwise cells)."""
        x = self.vertices[self.cells, 0]
        y = self.vertices[self.cells, 1]
        xn = np.roll(x, -1, axis=1)
        yn = np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * yn - xn * y, axis=1)

    def cell_diameter(self) -> float:
        """Largest vertex-to-vertex distance within any single cell."""
        coords = self.vertices[self.cells]
        best = 0.0
        for a in range(4):
            for b in range(a + 1, 4):
                d = np.linalg.norm(coords[:, a] - coords[:, b], axis=1)
                best = max(best, float(d.max()))
        return best

    def facet_vertex_ids(self) -> np.ndarray:
        """Per boundary facet, the (start, end) vertex ids along the cell edge."""
        cells = self.boundary_facets[:, 0]
        edges = self.boundary_facets[:, 1]
        local = np.asarray(EDGE_VERTICES)[edges]
        return np.stack(
            [self.cells[cells, local[:, 0]], self.cells[cells, local[:, 1]]], axis=1
        )

    def facet_lengths(self) -> np.ndarray:
        ids = self.facet_vertex_ids()
        delta = self.vertices[ids[:, 1]] - self.vertices[ids[:, 0]]
        return np.linalg.norm(delta, axis=1)

    def facets_with_tag(self, tags) -> np.ndarray:
        """Boundary facet rows whose tag is in ``tags`` (a tag or iterable)."""
        if np.ndim(tags) == 0:
            tags = (tags,)
        wanted = np.isin(self.boundary_facets[:, 2], [int(t) for t in tags])
        return self.boundary_facets[wanted]

    def nodes_with_tag(self, tags) -> np.ndarray:
        """Sorted unique vertex ids lying on facets with the given tag(s)."""
        facets = self.facets_with_tag(tags)
        if facets.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        cells = facets[:, 0]
        local = np.asarray(EDGE_VERTICES)[facets[:, 1]]
        ids = np.concatenate(
            [self.cells[cells, local[:, 0]], self.cells[cells, local[:, 1]]]
        )
        return np.unique(ids)


_DEFAULT_SIDE_TAGS = {
    "bottom": BoundaryTag.DIRICHLET_BOTTOM,
    "top": BoundaryTag.NEUMANN_TOP,
    "left": BoundaryTag.FREE,
    "right": BoundaryTag.FREE,
}


def build_rectangle_mesh(
    nx: int,
    ny: int,
    x0: float = 0.0,
    y0: float = 0.0,
    x1: float = 1.0,
    y1: float = 1.0,
    side_tags: dict[str, BoundaryTag] | None = None,
) -> Mesh:
    """Uniform nx-by-ny quadrilateral mesh of the rectangle (x0,x1) x (y0,y1).

    ``side_tags`` maps the sides ``bottom``/``top``/``left``/``right`` to
    boundary tags; by default the bottom is the clamped edge, the top is the
    loaded edge, and the lateral sides are traction free.
    """
    if nx < 1 or ny < 1 or x1 <= x0 or y1 <= y0:
        raise ValueError("rectangle mesh needs nx, ny >= 1 and a nonempty box")
    tags = dict(_DEFAULT_SIDE_TAGS)
    if side_tags:
        unknown = set(side_tags) - set(tags)
        if unknown:
            raise ValueError(f"unknown sides in side_tags: {sorted(unknown)}")
        tags.update(side_tags)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i: int | np.ndarray, j: int | np.ndarray):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii = ii.ravel()
    jj = jj.ravel()
    cells = np.column_stack(
        [vid(ii, jj), vid(ii + 1, jj), vid(ii + 1, jj + 1), vid(ii, jj + 1)]
    ).astype(np.int64)

    def cell_id(i, j):
        return j * nx + i

    facets = []
    for i in range(nx):
        facets.append((cell_id(i, 0), 0, int(tags["bottom"])))
        facets.append((cell_id(i, ny - 1), 2, int(tags["top"])))
    for j in range(ny):
        facets.append((cell_id(nx - 1, j), 1, int(tags["right"])))
        facets.append((cell_id(0, j), 3, int(tags["left"])))
    return Mesh(vertices, cells, np.asarray(facets, dtype=np.int64))


def build_lshape_mesh(
    n: int,
    reentrant_vertical_tag: BoundaryTag = BoundaryTag.FREE,
) -> Mesh:
    """L-shaped panel (0,1)^2 minus the open quadrant (0.5,1) x (0,0.5).

    The panel decomposes into three n-by-n blocks of side 0.5.  The bottom
    edge of the retained lower-left block, [0,0.5] x {0}, is the clamped
    boundary; the full top edge is the loaded boundary; everything else is
    traction free.  The vertical reentrant edge {0.5} x [0,0.5] can be
    retagged through ``reentrant_vertical_tag`` since its role is ambiguous
    in the benchmark geometry.
    """
    if n < 1:
        raise ValueError("block resolution n must be >= 1")
    s = 0.5 / n
    m = 2 * n

    keep_vertex = np.ones((m + 1, m + 1), dtype=bool)
    coords = np.empty((m + 1, m + 1, 2))
    for j in range(m + 1):
        for i in range(m + 1):
            x, y = i * s, j * s
            coords[j, i] = (x, y)
            if x > 0.5 + GEOM_TOL and y < 0.5 - GEOM_TOL:
                keep_vertex[j, i] = False

    new_id = -np.ones((m + 1, m + 1), dtype=np.int64)
    count = 0
    for j in range(m + 1):
        for i in range(m + 1):
            if keep_vertex[j, i]:
                new_id[j, i] = count
                count += 1
    vertices = coords[keep_vertex]

    cells = []
    for j in range(m):
        for i in range(m):
            xc, yc = (i + 0.5) * s, (j + 0.5) * s
            if xc > 0.5 and yc < 0.5:
                continue
            cells.append(
                (new_id[j, i], new_id[j, i + 1], new_id[j + 1, i + 1], new_id[j + 1, i])
            )
    cells = np.asarray(cells, dtype=np.int64)

    edge_use: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for c, cell in enumerate(cells):
        for e, (a, b) in enumerate(EDGE_VERTICES):
            key = tuple(sorted((int(cell[a]), int(cell[b]))))
            edge_use.setdefault(key, []).append((c, e))

    facets = []
    for key, users in edge_use.items():
        if len(users) != 1:
            continue
        c, e = users[0]
        a, b = EDGE_VERTICES[e]
        mid = 0.5 * (vertices[cells[c, a]] + vertices[cells[c, b]])
        facets.append((c, e, int(_classify_lshape_edge(mid, reentrant_vertical_tag))))
    facets.sort()
    return Mesh(vertices, cells, np.asarray(facets, dtype=np.int64))


def _classify_lshape_edge(mid: np.ndarray, reentrant_vertical_tag: BoundaryTag) -> BoundaryTag:
    x, y = float(mid[0]), float(mid[1])
    if abs(y) <= GEOM_TOL:
        return BoundaryTag.DIRICHLET_BOTTOM
    if abs(y - 1.0) <= GEOM_TOL:
        return BoundaryTag.NEUMANN_TOP
    if abs(x) <= GEOM_TOL or abs(x - 1.0) <= GEOM_TOL:
        return BoundaryTag.FREE
    if abs(x - 0.5) <= GEOM_TOL and y < 0.5:
        return reentrant_vertical_tag
    if abs(y - 0.5) <= GEOM_TOL and x > 0.5:
        return BoundaryTag.FREE
    raise ValueError(f"boundary edge at {mid} does not lie on the panel outline")


def nodes_near_segment(
    mesh: Mesh,
    start: tuple[float, float],
    end: tuple[float, float],
    half_width: float,
    tol: float = GEOM_TOL,
    closed_ends: bool = True,
) -> np.ndarray:
    """Vertex ids within ``half_width`` of the line through a segment.

    Membership uses the band test of the experiment definitions: the x
    coordinate must fall in the segment's x-range and the vertical offset
    from the interpolated line must not exceed ``half_width`` (closed,
    with a small tolerance).  With ``closed_ends`` the x-range includes
    its endpoints, which keeps slits attached to boundaries and crack
    tips; without it, nodes sitting exactly on an endpoint mesh line are
    excluded, matching target bands stated on open intervals.  A zero
    half-width selects exactly the nodes on a mesh line.
    """
    x0, y0 = start
    x1, y1 = end
    if abs(x1 - x0) <= tol:
        raise ValueError("segment must have nonzero x extent for the band test")
    xlo, xhi = min(x0, x1), max(x0, x1)
    x = mesh.vertices[:, 0]
    y = mesh.vertices[:, 1]
    line_y = y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    if closed_ends:
        in_range = (x >= xlo - tol) & (x <= xhi + tol)
    else:
        in_range = (x > xlo + tol) & (x < xhi - tol)
    inside = in_range & (np.abs(y - line_y) <= half_width + tol)
    return np.flatnonzero(inside).astype(np.int64)
