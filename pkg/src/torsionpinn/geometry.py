"""Cross-section domains: containment, sampling, quadrature and point files.

All lengths are in metres.  ``contains`` is a strict-interior test: points on
(or within ``BOUNDARY_TOL`` of) the boundary are *not* contained, because they
feed the boundary loss rather than the residual loss.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GeometryError, PointFileError, PointValidationError

BOUNDARY_TOL = 1e-12


# ---------------------------------------------------------------------------
# polygon primitives
# ---------------------------------------------------------------------------

def shoelace_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True
    return False


def is_simple(vertices: np.ndarray) -> bool:
    n = len(vertices)
    for i in range(n):
        a1, a2 = vertices[i], vertices[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_cross(a1, a2, vertices[j], vertices[(j + 1) % n]):
                return False
    return True


def winding_number(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Winding number of a closed polygon around each point (vectorised)."""
    pts = np.atleast_2d(points)
    px, py = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = vertices[:, 0], vertices[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    is_left = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
    up = (y0 <= py) & (y1 > py) & (is_left > 0)
    down = (y0 > py) & (y1 <= py) & (is_left < 0)
    return up.sum(axis=1) - down.sum(axis=1)


def ray_crossings(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd ray casting (horizontal ray to +x); True means inside."""
    pts = np.atleast_2d(points)
    px, py = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = vertices[:, 0], vertices[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    hits = straddle & (px < x_cross)
    return (hits.sum(axis=1) % 2) == 1


def distance_to_segments(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(points)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(ap * ab, axis=2) / np.sum(ab * ab, axis=1), 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.sqrt(np.sum((pts[:, None, :] - closest) ** 2, axis=2)).min(axis=1)


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

class Domain2D:
    """Base class; subclasses supply containment, boundary and bounding box."""

    kind = "domain"

    def contains(self, p) -> bool | np.ndarray:
        pts = np.asarray(p, dtype=np.float64)
        res = self._contains(np.atleast_2d(pts))
        return bool(res[0]) if pts.ndim == 1 else res

    def _contains(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def area(self) -> float:
        raise NotImplementedError

    @property
    def perimeter(self) -> float:
        raise NotImplementedError

    def boundary_at(self, s: np.ndarray) -> np.ndarray:
        """Boundary points at arc-length fractions ``s`` in [0, 1)."""
        raise NotImplementedError

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def extent(self) -> float:
        lo, hi = self.bbox()
        return float(np.max(hi - lo))

    @property
    def centroid(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Circle(Domain2D):
    center: tuple = (0.0, 0.0)
    radius: float = 0.1
    kind = "circle"

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("circle radius must be positive")

    def _contains(self, pts):
        c = np.asarray(self.center)
        r = np.sqrt(np.sum((pts - c) ** 2, axis=1))
        return r < self.radius - BOUNDARY_TOL

    def bbox(self):
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius

    @property
    def area(self):
        return math.pi * self.radius ** 2

    @property
    def perimeter(self):
        return 2.0 * math.pi * self.radius

    @property
    def centroid(self):
        return np.asarray(self.center, dtype=np.float64)

    def boundary_at(self, s):
        ang = 2.0 * math.pi * np.asarray(s)
        c = np.asarray(self.center)
        return np.column_stack([c[0] + self.radius * np.cos(ang), c[1] + self.radius * np.sin(ang)])

    def boundary_distance(self, pts):
        return np.abs(np.sqrt(np.sum((np.atleast_2d(pts) - np.asarray(self.center)) ** 2, axis=1)) - self.radius)


@dataclass(frozen=True, eq=False)
class Polygon(Domain2D):
    """Simple polygon with counter-clockwise vertices (no repeated closing vertex)."""

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    kind = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if not shoelace_area(v) > 0:
            raise GeometryError("polygon vertices must be counter-clockwise with positive area")
        if not is_simple(v):
            raise GeometryError("polygon edges cross")
        lengths = np.sqrt(np.sum((np.roll(v, -1, axis=0) - v) ** 2, axis=1))
        object.__setattr__(self, "_edge_lengths", lengths)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(lengths)]))

    def _contains(self, pts):
        inside = winding_number(pts, self.vertices) != 0
        if inside.any():
            near = distance_to_segments(pts[inside], self.vertices) <= BOUNDARY_TOL * max(1.0, self.extent)
            idx = np.flatnonzero(inside)
            inside[idx[near]] = False
        return inside

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def area(self):
        return shoelace_area(self.vertices)

    @property
    def perimeter(self):
        return float(self._cum[-1])

    @property
    def centroid(self):
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        cross = x * np.roll(y, -1) - np.roll(x, -1) * y
        a = 0.5 * cross.sum()
        return np.array([np.sum((x + np.roll(x, -1)) * cross), np.sum((y + np.roll(y, -1)) * cross)]) / (6 * a)

    def boundary_at(self, s):
        L = np.mod(np.asarray(s, dtype=np.float64), 1.0) * self.perimeter
        edge = np.clip(np.searchsorted(self._cum, L, side="right") - 1, 0, len(self.vertices) - 1)
        frac = (L - self._cum[edge]) / self._edge_lengths[edge]
        a = self.vertices[edge]
        b = self.vertices[(edge + 1) % len(self.vertices)]
        return a + frac[:, None] * (b - a)

    def boundary_distance(self, pts):
        return distance_to_segments(np.atleast_2d(pts), self.vertices)


def Rectangle(corner_min=(-0.1, -0.1), corner_max=(0.1, 0.1)) -> Polygon:
    (x0, y0), (x1, y1) = corner_min, corner_max
    if not (x1 > x0 and y1 > y0):
        raise GeometryError("rectangle corners must satisfy min < max")
    poly = Polygon(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64))
    object.__setattr__(poly, "kind", "rectangle")
    object.__setattr__(poly, "params", {"corner_min": (x0, y0), "corner_max": (x1, y1)})
    return poly


def EquilateralTriangle(centroid=(0.0, 0.0), side=0.2, orientation=0.0) -> Polygon:
    """Triangle with one vertex at angle ``90deg + orientation`` from the centroid."""
    if not side > 0:
        raise GeometryError("triangle side must be positive")
    R = side / math.sqrt(3.0)
    angs = math.pi / 2 + orientation + np.array([0.0, 2 * math.pi / 3, 4 * math.pi / 3])
    c = np.asarray(centroid, dtype=np.float64)
    v = np.column_stack([c[0] + R * np.cos(angs), c[1] + R * np.sin(angs)])
    poly = Polygon(v)
    object.__setattr__(poly, "kind", "equilateral_triangle")
    object.__setattr__(poly, "params", {"centroid": tuple(c), "side": side, "orientation": orientation})
    return poly


L_SHAPE_VERTICES = np.array([
    [0.0, 0.0], [0.2, 0.0], [0.2, 0.1], [0.12, 0.1], [0.12, 0.2], [0.0, 0.2],
])


def standard_domain(name: str) -> Domain2D:
    """The four case-study cross-sections at 0.2 m scale."""
    if name == "circle":
        return Circle((0.0, 0.0), 0.1)
    if name == "square":
        return Rectangle((-0.1, -0.1), (0.1, 0.1))
    if name == "triangle":
        return EquilateralTriangle((0.0, 0.0), 0.2)
    if name in ("irregular", "l_shape"):
        return Polygon(L_SHAPE_VERTICES.copy())
    raise GeometryError(f"unknown shape {name!r}")


# ---------------------------------------------------------------------------
# sampling and quadrature
# ---------------------------------------------------------------------------

def sample_interior(domain: Domain2D, n: int, seed) -> np.ndarray:
    """Uniform points in the open domain by bounding-box rejection."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not domain.area > 0:
        raise GeometryError("domain has zero area")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = domain.bbox()
    accept_rate = domain.area / float(np.prod(hi - lo))
    out = []
    have = 0
    while have < n:
        m = int(1.2 * (n - have) / accept_rate) + 16
        cand = rng.uniform(lo, hi, size=(m, 2))
        keep = cand[domain.contains(cand)]
        out.append(keep)
        have += keep.shape[0]
    return np.concatenate(out)[:n]


def sample_boundary(domain: Domain2D, n: int, seed) -> np.ndarray:
    """Points uniform in arc length along the boundary."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not domain.perimeter > 0:
        raise GeometryError("domain has zero perimeter")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return domain.boundary_at(rng.uniform(0.0, 1.0, n))


def boundary_grid(domain: Domain2D, spacing: float) -> np.ndarray:
    """Boundary points evenly spaced in arc length (deterministic)."""
    n = max(3, int(math.ceil(domain.perimeter / spacing)))
    return domain.boundary_at(np.arange(n) / n)


def grid_nodes(domain: Domain2D, h: float, anchor=None):
    """Axis-aligned lattice nodes covering the bounding box.

    Returns ``(xs, ys)``; the lattice passes through ``anchor`` (default the
    bounding-box minimum corner) so straight edges land on nodes when aligned.
    """
    lo, hi = domain.bbox()
    anchor = lo if anchor is None else np.asarray(anchor, dtype=np.float64)
    i0 = np.floor((lo - anchor) / h - 1e-9).astype(int)
    i1 = np.ceil((hi - anchor) / h + 1e-9).astype(int)
    xs = anchor[0] + h * np.arange(i0[0], i1[0] + 1)
    ys = anchor[1] + h * np.arange(i0[1], i1[1] + 1)
    return xs, ys


def interior_grid(domain: Domain2D, h: float) -> np.ndarray:
    """Strict-interior lattice nodes with spacing ``h``."""
    xs, ys = grid_nodes(domain, h)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts[domain.contains(pts)]


def integrate_field(domain: Domain2D, f: Callable[[np.ndarray], np.ndarray], h: float) -> float:
    """Midpoint rule over square cells of side ``h`` whose centres lie inside.

    ``f`` takes an ``(n, 2)`` array of points and returns ``n`` values.
    """
    if not h > 0:
        raise ValueError("cell size must be positive")
    lo, hi = domain.bbox()
    if h > float(np.min(hi - lo)):
        raise GeometryError(f"cell size {h} larger than domain extent")
    nx = int(math.ceil((hi[0] - lo[0]) / h))
    ny = int(math.ceil((hi[1] - lo[1]) / h))
    xs = lo[0] + h * (np.arange(nx) + 0.5)
    ys = lo[1] + h * (np.arange(ny) + 0.5)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    centers = np.column_stack([X.ravel(), Y.ravel()])
    centers = centers[domain.contains(centers)]
    if centers.shape[0] == 0:
        return 0.0
    values = np.asarray(f(centers), dtype=np.float64).reshape(-1)
    return float(np.sum(values)) * h * h


# ---------------------------------------------------------------------------
# point sets
# ---------------------------------------------------------------------------

@dataclass
class PointSet:
    interior: np.ndarray
    boundary: np.ndarray
    provenance: str = "sampled"

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=np.float64).reshape(-1, 2)
        self.boundary = np.asarray(self.boundary, dtype=np.float64).reshape(-1, 2)

    def validate(self, domain: Domain2D, tol: float = 1e-9) -> None:
        bad = np.flatnonzero(~domain.contains(self.interior)) if len(self.interior) else []
        if len(bad):
            raise PointValidationError("interior points outside the open domain", bad)
        if len(self.boundary):
            far = np.flatnonzero(domain.boundary_distance(self.boundary) > tol)
            if len(far):
                raise PointValidationError(
                    "boundary points off the boundary curve",
                    [len(self.interior) + int(i) for i in far],
                )


def sampled_points(domain: Domain2D, n_interior: int, n_boundary: int, seed: int) -> PointSet:
    rng = np.random.default_rng(seed)
    return PointSet(sample_interior(domain, n_interior, rng), sample_boundary(domain, n_boundary, rng),
                    f"sampled({seed})")


def grid_points(domain: Domain2D, h: float = 0.005, boundary_spacing: float = 0.0025) -> PointSet:
    """Lattice interior nodes plus evenly spaced boundary points."""
    return PointSet(interior_grid(domain, h), boundary_grid(domain, boundary_spacing), f"grid({h})")


def save_points(points: PointSet, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "x", "y"])
        for kind, arr in (("interior", points.interior), ("boundary", points.boundary)):
            for x, y in arr:
                w.writerow([kind, repr(float(x)), repr(float(y))])
    return path


def load_points(path, domain: Domain2D | None = None) -> PointSet:
    path = Path(path)
    interior, boundary = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["kind", "x", "y"]:
            raise PointFileError("expected header 'kind,x,y'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise PointFileError(f"expected 3 fields, got {len(row)}", line=lineno)
            kind = row[0].strip()
            try:
                xy = (float(row[1]), float(row[2]))
            except ValueError:
                raise PointFileError(f"non-numeric coordinate in {row!r}", line=lineno) from None
            if not all(math.isfinite(v) for v in xy):
                raise PointFileError("non-finite coordinate", line=lineno)
            if kind == "interior":
                interior.append(xy)
            elif kind == "boundary":
                boundary.append(xy)
            else:
                raise PointFileError(f"unknown kind {kind!r}", line=lineno)
    ps = PointSet(np.array(interior), np.array(boundary), f"imported({path})")
    if domain is not None:
        ps.validate(domain)
    return ps


# ---------------------------------------------------------------------------
# domain description files
# ---------------------------------------------------------------------------

def _parse_pair(text: str) -> tuple[float, float]:
    a, b = text.split(",")
    return float(a), float(b)


def parse_domain(text: str) -> Domain2D:
    """Parse the ``key = value`` domain description format."""
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GeometryError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        fields[key] = value
    shape = fields.pop("shape", None)
    allowed = {
        "circle": {"center", "radius"},
        "rectangle": {"corner_min", "corner_max"},
        "equilateral_triangle": {"centroid", "side", "orientation"},
        "polygon": {"vertices"},
    }
    if shape not in allowed:
        raise GeometryError(f"unknown or missing shape {shape!r}")
    unknown = set(fields) - allowed[shape]
    if unknown:
        raise GeometryError(f"unknown keys for {shape}: {sorted(unknown)}")
    try:
        if shape == "circle":
            return Circle(_parse_pair(fields.get("center", "0,0")), float(fields["radius"]))
        if shape == "rectangle":
            return Rectangle(_parse_pair(fields["corner_min"]), _parse_pair(fields["corner_max"]))
        if shape == "equilateral_triangle":
            return EquilateralTriangle(_parse_pair(fields.get("centroid", "0,0")), float(fields["side"]),
                                       math.radians(float(fields.get("orientation", "0"))))
        verts = [_parse_pair(v) for v in fields["vertices"].split(";") if v.strip()]
        return Polygon(np.array(verts))
    except KeyError as exc:
        raise GeometryError(f"missing key {exc.args[0]!r} for {shape}") from None
    except ValueError as exc:
        raise GeometryError(f"bad number in domain file: {exc}") from None


def load_domain(path) -> Domain2D:
    return parse_domain(Path(path).read_text())


def _num(v) -> str:
    return repr(float(v))


def format_domain(domain: Domain2D) -> str:
    if isinstance(domain, Circle):
        return f"shape = circle\ncenter = {_num(domain.center[0])},{_num(domain.center[1])}\nradius = {_num(domain.radius)}\n"
    params = getattr(domain, "params", None)
    if domain.kind == "rectangle" and params:
        (x0, y0), (x1, y1) = params["corner_min"], params["corner_max"]
        return f"shape = rectangle\ncorner_min = {_num(x0)},{_num(y0)}\ncorner_max = {_num(x1)},{_num(y1)}\n"
    if domain.kind == "equilateral_triangle" and params:
        c = params["centroid"]
        return (f"shape = equilateral_triangle\ncentroid = {_num(c[0])},{_num(c[1])}\nside = {_num(params['side'])}\n"
                f"orientation = {_num(math.degrees(params['orientation']))}\n")
    verts = "; ".join(f"{_num(x)},{_num(y)}" for x, y in domain.vertices)
    return f"shape = polygon\nvertices = {verts}\n"


def domain_id(domain: Domain2D) -> str:
    return domain.kind
