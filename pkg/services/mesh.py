"""
Planar polygonal meshes.

Builds validated `PolyMesh` objects from vertex/polygon lists, generates the
uniform triangular and rectangular partitions of the unit square, and reads
and writes the `wgmesh 1` text format:

    wgmesh 1
    v x y            # one per vertex
    p k i1 ... ik    # one per element, counterclockwise, 0-based

Edges and boundary flags are always derived from the element polygons.
Shape regularity is the caller's responsibility and is not checked.
"""
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist

from services.errors import MeshError, MeshParseError, MeshTopologyError

logger = logging.getLogger(__name__)

MESH_HEADER = "wgmesh 1"
AREA_TOLERANCE = 1e-14


@dataclass(frozen=True)
class Element:
    """A counterclockwise simple polygon of the mesh."""
    vertex_ids: Tuple[int, ...]
    edge_ids: Tuple[int, ...]
    centroid: Tuple[float, float]
    diameter: float
    area: float

    @property
    def n_sides(self) -> int:
        return len(self.vertex_ids)


@dataclass(frozen=True)
class Edge:
    """
    A straight mesh edge.

    `endpoint_ids` is ordered lower id first; this is the global orientation
    used to parameterize edge polynomials. `normals[m]` is the outward unit
    normal of `neighbors[m]` on this edge.
    """
    endpoint_ids: Tuple[int, int]
    length: float
    neighbors: Tuple[int, ...]
    normals: Tuple[Tuple[float, float], ...]
    unit_tangent: Tuple[float, float]
    is_boundary: bool

    def normal_for(self, element_id: int) -> np.ndarray:
        """Outward unit normal of `element_id` on this edge."""
        for neighbor, normal in zip(self.neighbors, self.normals):
            if neighbor == element_id:
                return np.array(normal)
        raise MeshError(f"element {element_id} is not a neighbor of edge {self.endpoint_ids}")


def polygon_signed_area(coords: np.ndarray) -> float:
    """Shoelace area, positive for counterclockwise vertex order."""
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(coords: np.ndarray) -> np.ndarray:
    """Area centroid of a simple polygon."""
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(coords: np.ndarray) -> float:
    """Largest distance between two vertices."""
    return float(pdist(coords).max())


def _orientation(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> bool:
    # r is known to be collinear with p-q
    return (min(p[0], q[0]) <= r[0] <= max(p[0], q[0])
            and min(p[1], q[1]) <= r[1] <= max(p[1], q[1]))


def _segments_touch(p1, p2, q1, q2) -> bool:
    d1 = _orientation(q1, q2, p1)
    d2 = _orientation(q1, q2, p2)
    d3 = _orientation(p1, p2, q1)
    d4 = _orientation(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False


def _is_simple(coords: np.ndarray) -> bool:
    m = len(coords)
    if m == 3:
        return True
    for a in range(m):
        p1, p2 = coords[a], coords[(a + 1) % m]
        for b in range(a + 2, m):
            if a == 0 and b == m - 1:
                continue
            if _segments_touch(p1, p2, coords[b], coords[(b + 1) % m]):
                return False
    return True


class PolyMesh:
    """
    Immutable planar polygonal mesh.

    Use `PolyMesh.from_polygons` (or the generators / `load_mesh`) to build
    one; the constructor does not validate.
    """

    def __init__(self, vertices: np.ndarray, elements: Sequence[Element],
                 edges: Sequence[Edge], mesh_size: Optional[float] = None):
        self.vertices = np.array(vertices, dtype=float)
        self.vertices.setflags(write=False)
        self.elements: Tuple[Element, ...] = tuple(elements)
        self.edges: Tuple[Edge, ...] = tuple(edges)
        self.h_max = max(element.diameter for element in self.elements)
        self.mesh_size = mesh_size

    @classmethod
    def from_polygons(cls, vertices, polygons: Sequence[Sequence[int]],
                      mesh_size: Optional[float] = None) -> "PolyMesh":
        """
        Build and validate a mesh from vertex coordinates and counterclockwise polygons.

        Raises:
            MeshTopologyError: bad index, clockwise or zero-area polygon,
                self-intersecting polygon, edge shared by more than two
                elements, or an open boundary.
        """
        coords = np.asarray(vertices, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) == 0:
            raise MeshTopologyError("vertices must be a non-empty (N, 2) array")
        if not np.all(np.isfinite(coords)):
            raise MeshTopologyError("vertex coordinates must be finite")
        if len(polygons) == 0:
            raise MeshTopologyError("mesh has no elements")

        edge_index: Dict[Tuple[int, int], int] = {}
        edge_neighbors: List[List[int]] = []
        edge_normals: List[List[Tuple[float, float]]] = []
        edge_directions: List[List[int]] = []
        elements = []

        for eid, polygon in enumerate(polygons):
            ids = tuple(int(i) for i in polygon)
            if len(ids) < 3:
                raise MeshTopologyError(f"element {eid} has fewer than 3 vertices")
            if len(set(ids)) != len(ids):
                raise MeshTopologyError(f"element {eid} repeats a vertex")
            if min(ids) < 0 or max(ids) >= len(coords):
                raise MeshTopologyError(f"element {eid} references a missing vertex")
            poly = coords[list(ids)]
            area = polygon_signed_area(poly)
            scale = polygon_diameter(poly)
            if abs(area) <= AREA_TOLERANCE * scale * scale:
                raise MeshTopologyError(f"element {eid} has zero area")
            if area < 0:
                raise MeshTopologyError(f"element {eid} is ordered clockwise")
            if not _is_simple(poly):
                raise MeshTopologyError(f"element {eid} is self-intersecting")

            local_edges = []
            for a, b in zip(ids, ids[1:] + ids[:1]):
                key = (a, b) if a < b else (b, a)
                direction = 1 if a < b else -1
                tangent = coords[b] - coords[a]
                tangent = tangent / np.linalg.norm(tangent)
                normal = (float(tangent[1]), float(-tangent[0]))
                if key not in edge_index:
                    edge_index[key] = len(edge_neighbors)
                    edge_neighbors.append([])
                    edge_normals.append([])
                    edge_directions.append([])
                gid = edge_index[key]
                if len(edge_neighbors[gid]) == 2:
                    raise MeshTopologyError(f"edge {key} is shared by more than two elements")
                if edge_directions[gid] and edge_directions[gid][0] == direction:
                    raise MeshTopologyError(f"elements overlap along edge {key}")
                edge_neighbors[gid].append(eid)
                edge_normals[gid].append(normal)
                edge_directions[gid].append(direction)
                local_edges.append(gid)

            elements.append(Element(
                vertex_ids=ids,
                edge_ids=tuple(local_edges),
                centroid=tuple(float(c) for c in polygon_centroid(poly)),
                diameter=scale,
                area=area,
            ))

        edges = []
        boundary_degree = np.zeros(len(coords), dtype=int)
        for key, gid in edge_index.items():
            neighbors = tuple(edge_neighbors[gid])
            normals = tuple(edge_normals[gid])
            n0 = normals[0]
            is_boundary = len(neighbors) == 1
            if is_boundary:
                boundary_degree[list(key)] += 1
            edges.append(Edge(
                endpoint_ids=key,
                length=float(np.linalg.norm(coords[key[1]] - coords[key[0]])),
                neighbors=neighbors,
                normals=normals,
                unit_tangent=(-n0[1], n0[0]),
                is_boundary=is_boundary,
            ))

        if np.any(boundary_degree % 2 == 1):
            bad = int(np.flatnonzero(boundary_degree % 2 == 1)[0])
            raise MeshTopologyError(f"boundary is not closed at vertex {bad} (hanging node?)")

        mesh = cls(coords, elements, edges, mesh_size=mesh_size)
        logger.debug("Built mesh: %d vertices, %d elements, %d edges",
                     mesh.n_vertices, mesh.n_elements, mesh.n_edges)
        return mesh

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def h(self) -> float:
        """Reported mesh size: the nominal 1/n for generated meshes, else h_max."""
        return self.mesh_size if self.mesh_size is not None else self.h_max

    @property
    def boundary_edge_ids(self) -> List[int]:
        return [i for i, edge in enumerate(self.edges) if edge.is_boundary]

    @property
    def interior_edge_ids(self) -> List[int]:
        return [i for i, edge in enumerate(self.edges) if not edge.is_boundary]

    @property
    def total_area(self) -> float:
        return float(sum(element.area for element in self.elements))

    def element_vertices(self, element_id: int) -> np.ndarray:
        """Counterclockwise vertex coordinates of one element."""
        return self.vertices[list(self.elements[element_id].vertex_ids)]

    def edge_points(self, edge_id: int) -> Tuple[np.ndarray, np.ndarray]:
        """Start and end coordinates of an edge in its global orientation."""
        a, b = self.edges[edge_id].endpoint_ids
        return self.vertices[a], self.vertices[b]

    def __repr__(self) -> str:
        return (f"PolyMesh(vertices={self.n_vertices}, elements={self.n_elements}, "
                f"edges={self.n_edges}, h={self.h:.4g})")


def _check_divisions(n: int) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise MeshError(f"number of divisions must be a positive integer, got {n!r}")
    return int(n)


def _grid_vertices(n: int) -> np.ndarray:
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    return np.column_stack([xx.ravel(), yy.ravel()])


def uniform_rectangles(n: int) -> PolyMesh:
    """n x n axis-aligned squares on (0,1)^2, reported with h = 1/n."""
    n = _check_divisions(n)
    vid = lambda i, j: j * (n + 1) + i
    polygons = [
        (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
        for j in range(n) for i in range(n)
    ]
    return PolyMesh.from_polygons(_grid_vertices(n), polygons, mesh_size=1.0 / n)


def uniform_triangles(n: int) -> PolyMesh:
    """
    The n x n square grid with every square cut along its negative-slope
    diagonal (top-left to bottom-right corner), 2n^2 triangles, h = 1/n.
    """
    n = _check_divisions(n)
    vid = lambda i, j: j * (n + 1) + i
    polygons = []
    for j in range(n):
        for i in range(n):
            bl, br = vid(i, j), vid(i + 1, j)
            tl, tr = vid(i, j + 1), vid(i + 1, j + 1)
            polygons.append((bl, br, tl))
            polygons.append((br, tr, tl))
    return PolyMesh.from_polygons(_grid_vertices(n), polygons, mesh_size=1.0 / n)


def load_mesh(source: Union[bytes, bytearray, BinaryIO]) -> PolyMesh:
    """
    Parse a `wgmesh 1` byte stream into a validated mesh.

    Raises:
        MeshParseError: malformed input.
        MeshTopologyError: see `PolyMesh.from_polygons`.
    """
    data = bytes(source) if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MeshParseError(f"mesh is not UTF-8 text: {exc}") from exc

    header_seen = False
    vertices: List[Tuple[float, float]] = []
    polygons: List[Tuple[int, ...]] = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if not header_seen:
            if " ".join(tokens) != MESH_HEADER:
                raise MeshParseError(f"expected header '{MESH_HEADER}'", line_number)
            header_seen = True
            continue
        keyword, args = tokens[0], tokens[1:]
        try:
            if keyword == "v":
                if len(args) != 2:
                    raise MeshParseError("vertex needs exactly 2 coordinates", line_number)
                vertices.append((float(args[0]), float(args[1])))
            elif keyword == "p":
                if not args:
                    raise MeshParseError("polygon needs a vertex count", line_number)
                count = int(args[0])
                if count != len(args) - 1:
                    raise MeshParseError(
                        f"polygon declares {count} vertices but lists {len(args) - 1}", line_number)
                polygons.append(tuple(int(i) for i in args[1:]))
            else:
                raise MeshParseError(f"unknown statement '{keyword}'", line_number)
        except ValueError as exc:
            raise MeshParseError(str(exc), line_number) from exc

    if not header_seen:
        raise MeshParseError("empty mesh file")
    if not vertices or not polygons:
        raise MeshParseError("mesh needs at least one vertex and one polygon")
    return PolyMesh.from_polygons(np.array(vertices), polygons)


def load_mesh_file(path: Union[str, Path]) -> PolyMesh:
    """Read a `wgmesh 1` file from disk."""
    with open(path, "rb") as handle:
        return load_mesh(handle)


def dump_mesh(mesh: PolyMesh) -> bytes:
    """Serialize a mesh to the `wgmesh 1` format (lossless coordinates)."""
    out = io.StringIO()
    out.write(MESH_HEADER + "\n")
    for x, y in mesh.vertices:
        out.write(f"v {float(x)!r} {float(y)!r}\n")
    for element in mesh.elements:
        ids = " ".join(str(i) for i in element.vertex_ids)
        out.write(f"p {element.n_sides} {ids}\n")
    return out.getvalue().encode("utf-8")
