"""Scenes as signed distance fields on regular grids.

Obstacles are axis-aligned boxes and spheres; the scene SDF is their
min-union, baked onto a regular grid of nodes. Values are kept in float64 in
memory; the file payload is float32.

Grid file format (.dips), binary with a short ASCII header:

    DIPS1
    dims <nx> <ny> <nz>
    origin <x> <y> <z>
    spacing <h>
    floor <z>
    walkable <0|1>
    <blank line>
    <nx*ny*nz float32 little-endian, x fastest>
    <nx*ny 0/1 bytes, x fastest, present when walkable is 1>

Floats in the header are written with repr() so a load/save round trip is
byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import warnings

import numpy as np

MAGIC = b"DIPS1"
EMPTY_SDF = 1e6
WALK_CLEARANCE = 2.0


class SceneFormatError(Exception):
    """Raised for malformed .dips files; messages name byte offsets."""


@dataclasses.dataclass(frozen=True)
class Box:
    """Axis-aligned box obstacle."""

    center: np.ndarray           # (3,)
    half_extents: np.ndarray     # (3,), all > 0

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_extents, dtype=np.float64)
        if c.shape != (3,) or h.shape != (3,):
            raise ValueError("box center and half_extents must be 3-vectors")
        if np.any(h <= 0):
            raise ValueError("box half_extents must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)

    def sdf(self, points):
        """Exact signed distance, negative inside."""
        q = np.abs(np.asarray(points, dtype=np.float64) - self.center) \
            - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def min_thickness(self):
        return 2.0 * float(np.min(self.half_extents))

    def column_blocked(self, x, y, z_lo, z_hi):
        """Does the box intersect vertical segments at (x, y)? Vectorized."""
        c, h = self.center, self.half_extents
        in_xy = (np.abs(x - c[0]) <= h[0]) & (np.abs(y - c[1]) <= h[1])
        z_olap = (c[2] - h[2] <= z_hi) & (c[2] + h[2] >= z_lo)
        return in_xy & z_olap


@dataclasses.dataclass(frozen=True)
class Sphere:
    """Sphere obstacle."""

    center: np.ndarray           # (3,)
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        if c.shape != (3,):
            raise ValueError("sphere center must be a 3-vector")
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def sdf(self, points):
        d = np.asarray(points, dtype=np.float64) - self.center
        return np.linalg.norm(d, axis=-1) - self.radius

    def min_thickness(self):
        return 2.0 * self.radius

    def column_blocked(self, x, y, z_lo, z_hi):
        c, r = self.center, self.radius
        d2 = (x - c[0]) ** 2 + (y - c[1]) ** 2
        hit = d2 <= r * r
        w = np.sqrt(np.maximum(r * r - d2, 0.0))
        z_olap = (c[2] - w <= z_hi) & (c[2] + w >= z_lo)
        return hit & z_olap


def scene_sdf(obstacles, points):
    """Min-union of obstacle SDFs; empty scenes are far from everything."""
    points = np.asarray(points, dtype=np.float64)
    if not obstacles:
        return np.full(points.shape[:-1], EMPTY_SDF)
    vals = np.stack([ob.sdf(points) for ob in obstacles])
    return np.min(vals, axis=0)


@dataclasses.dataclass(frozen=True)
class SdfGrid:
    """Signed distances sampled on a regular grid of nodes.

    values[ix, iy, iz] is the distance at origin + spacing * (ix, iy, iz).
    walkable[ix, iy] marks columns with standing clearance above the floor.
    """

    origin: np.ndarray           # (3,)
    spacing: float
    values: np.ndarray           # (nx, ny, nz) float64
    floor_height: float = 0.0
    walkable: np.ndarray | None = None   # (nx, ny) bool

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if origin.shape != (3,):
            raise ValueError("origin must be a 3-vector")
        if values.ndim != 3:
            raise ValueError("values must be a 3-d array")
        if min(values.shape) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "floor_height", float(self.floor_height))
        if self.walkable is not None:
            w = np.asarray(self.walkable, dtype=bool)
            if w.shape != values.shape[:2]:
                raise ValueError("walkable must be (nx, ny)")
            object.__setattr__(self, "walkable", w)

    @property
    def dims(self):
        return self.values.shape

    def node_positions(self):
        """(nx, ny, nz, 3) world positions of all nodes."""
        nx, ny, nz = self.dims
        ax = [self.origin[i] + self.spacing * np.arange(n)
              for i, n in enumerate((nx, ny, nz))]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def query(self, points):
        """Trilinear SDF values and in-cell gradients at world points.

        points (..., 3) -> (values (...,), gradients (..., 3)). Points outside
        the grid are clamped to the nearest boundary cell; the returned
        gradient is that cell's trilinear slope at the clamped coordinates.
        """
        p = np.asarray(points, dtype=np.float64)
        u = (p - self.origin) / self.spacing
        dims = np.array(self.dims)
        cell = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
        frac = np.clip(u - cell, 0.0, 1.0)
        ix, iy, iz = cell[..., 0], cell[..., 1], cell[..., 2]
        v = self.values
        c000 = v[ix, iy, iz]
        c100 = v[ix + 1, iy, iz]
        c010 = v[ix, iy + 1, iz]
        c110 = v[ix + 1, iy + 1, iz]
        c001 = v[ix, iy, iz + 1]
        c101 = v[ix + 1, iy, iz + 1]
        c011 = v[ix, iy + 1, iz + 1]
        c111 = v[ix + 1, iy + 1, iz + 1]
        fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        val = ((c000 * gx + c100 * fx) * gy + (c010 * gx + c110 * fx) * fy) * gz \
            + ((c001 * gx + c101 * fx) * gy + (c011 * gx + c111 * fx) * fy) * fz
        dx = ((c100 - c000) * gy + (c110 - c010) * fy) * gz \
            + ((c101 - c001) * gy + (c111 - c011) * fy) * fz
        dy = ((c010 - c000) * gx + (c110 - c100) * fx) * gz \
            + ((c011 - c001) * gx + (c111 - c101) * fx) * fz
        dz = ((c001 - c000) * gx + (c101 - c100) * fx) * gy \
            + ((c011 - c010) * gx + (c111 - c110) * fx) * fy
        grad = np.stack([dx, dy, dz], axis=-1) / self.spacing
        return val, grad

    def walkable_at(self, points):
        """Walkability of the nearest grid column for world points (..., 3)."""
        if self.walkable is None:
            return np.ones(np.asarray(points).shape[:-1], dtype=bool)
        p = np.asarray(points, dtype=np.float64)
        u = (p[..., :2] - self.origin[:2]) / self.spacing
        nxy = np.array(self.dims[:2])
        node = np.clip(np.rint(u).astype(np.int64), 0, nxy - 1)
        return self.walkable[node[..., 0], node[..., 1]]

    def save(self, path):
        header = [
            MAGIC.decode(),
            "dims %d %d %d" % self.dims,
            "origin %s %s %s" % tuple(repr(float(c)) for c in self.origin),
            "spacing %s" % repr(self.spacing),
            "floor %s" % repr(self.floor_height),
            "walkable %d" % (0 if self.walkable is None else 1),
        ]
        blob = ("\n".join(header) + "\n\n").encode("ascii")
        payload = self.values.astype("<f4").ravel(order="F").tobytes()
        blob += payload
        if self.walkable is not None:
            blob += self.walkable.astype(np.uint8).ravel(order="F").tobytes()
        with open(path, "wb") as fh:
            fh.write(blob)


def _header_field(lines, offsets, idx, name, count, conv):
    if idx >= len(lines):
        raise SceneFormatError(f"missing '{name}' line at byte {offsets[-1]}")
    line, off = lines[idx], offsets[idx]
    parts = line.split()
    if not parts or parts[0] != name:
        raise SceneFormatError(f"expected '{name}' line at byte {off}, got {line!r}")
    if len(parts) != count + 1:
        raise SceneFormatError(f"'{name}' line at byte {off} needs {count} values")
    try:
        return [conv(p) for p in parts[1:]]
    except ValueError as exc:
        raise SceneFormatError(f"bad '{name}' value at byte {off}: {exc}") from None


def load_grid(path):
    """Load a .dips grid; raises SceneFormatError on malformed input."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC + b"\n"):
        raise SceneFormatError("bad magic at byte 0: not a DIPS1 file")
    end = blob.find(b"\n\n")
    if end < 0:
        raise SceneFormatError(f"unterminated header (no blank line) in first "
                               f"{len(blob)} bytes")
    try:
        text = blob[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise SceneFormatError(f"non-ascii header at byte {exc.start}") from None
    lines = text.split("\n")
    offsets = []
    pos = 0
    for line in lines:
        offsets.append(pos)
        pos += len(line) + 1
    offsets.append(pos)

    dims = _header_field(lines, offsets, 1, "dims", 3, int)
    origin = _header_field(lines, offsets, 2, "origin", 3, float)
    (spacing,) = _header_field(lines, offsets, 3, "spacing", 1, float)
    (floor,) = _header_field(lines, offsets, 4, "floor", 1, float)
    (has_walk,) = _header_field(lines, offsets, 5, "walkable", 1, int)
    if min(dims) < 2:
        raise SceneFormatError(f"dims line at byte {offsets[1]}: each axis "
                               f"needs at least 2 nodes, got {dims}")

    n = dims[0] * dims[1] * dims[2]
    start = end + 2
    need = 4 * n
    if len(blob) - start < need:
        raise SceneFormatError(f"truncated payload at byte {start}: need {need} "
                               f"bytes, have {len(blob) - start}")
    flat = np.frombuffer(blob, dtype="<f4", count=n, offset=start)
    values = flat.astype(np.float64).reshape(dims, order="F")
    walkable = None
    wstart = start + need
    if has_walk:
        wn = dims[0] * dims[1]
        if len(blob) - wstart < wn:
            raise SceneFormatError(f"truncated walkable block at byte {wstart}: "
                                   f"need {wn} bytes, have {len(blob) - wstart}")
        wflat = np.frombuffer(blob, dtype=np.uint8, count=wn, offset=wstart)
        walkable = wflat.reshape(dims[:2], order="F").astype(bool)
        wstart += wn
    if len(blob) != wstart:
        raise SceneFormatError(f"{len(blob) - wstart} unexpected trailing bytes "
                               f"at byte {wstart}")
    return SdfGrid(origin=np.array(origin), spacing=spacing, values=values,
                   floor_height=floor, walkable=walkable)


def parse_obstacles(entries):
    obstacles = []
    for i, ob in enumerate(entries):
        kind = ob.get("type")
        if kind == "box":
            obstacles.append(Box(center=np.array(ob["center"], dtype=np.float64),
                                 half_extents=np.array(ob["half_extents"],
                                                       dtype=np.float64)))
        elif kind == "sphere":
            obstacles.append(Sphere(center=np.array(ob["center"], dtype=np.float64),
                                    radius=float(ob["radius"])))
        else:
            raise ValueError(f"obstacle {i}: unknown type {kind!r}")
    return obstacles


def bake(obstacles, origin, spacing, dims, floor_height=0.0):
    """Evaluate the analytic min-union SDF on grid nodes in float64.

    Node values equal the analytic SDF exactly (same arithmetic, no
    resampling). Also computes per-column walkability: a column is walkable
    when no obstacle crosses the clearance interval above the floor.
    """
    spacing = float(spacing)
    for ob in obstacles:
        if ob.min_thickness() < 3.0 * spacing:
            warnings.warn(
                f"grid spacing {spacing} is coarse for an obstacle of thickness "
                f"{ob.min_thickness():.3g}; expect poor SDF resolution",
                stacklevel=2)
    grid = SdfGrid(origin=np.asarray(origin, dtype=np.float64), spacing=spacing,
                   values=np.zeros(tuple(dims)), floor_height=floor_height)
    pts = grid.node_positions()
    values = scene_sdf(obstacles, pts.reshape(-1, 3)).reshape(grid.dims)
    xs = grid.origin[0] + spacing * np.arange(dims[0])
    ys = grid.origin[1] + spacing * np.arange(dims[1])
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    blocked = np.zeros(gx.shape, dtype=bool)
    z_lo, z_hi = floor_height, floor_height + WALK_CLEARANCE
    for ob in obstacles:
        blocked |= ob.column_blocked(gx, gy, z_lo, z_hi)
    return SdfGrid(origin=grid.origin, spacing=spacing, values=values,
                   floor_height=floor_height, walkable=~blocked)


def bake_spec(spec):
    """Bake a scene description dict (see load_scene_spec) to an SdfGrid."""
    for key in ("origin", "spacing", "dims"):
        if key not in spec:
            raise ValueError(f"scene spec missing required key {key!r}")
    dims = [int(d) for d in spec["dims"]]
    if len(dims) != 3 or min(dims) < 2:
        raise ValueError(f"scene spec dims must be 3 values >= 2, got {dims}")
    obstacles = parse_obstacles(spec.get("obstacles", []))
    return bake(obstacles, origin=spec["origin"], spacing=float(spec["spacing"]),
                dims=dims, floor_height=float(spec.get("floor", 0.0)))


def load_scene_spec(path):
    """Load a JSON scene description and bake it."""
    with open(path) as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict):
        raise ValueError(f"{path}: scene spec must be a JSON object")
    return bake_spec(spec)


def load_scene_any(path):
    """Load a scene from a baked .dips grid or a JSON description."""
    p = str(path)
    if p.endswith(".json"):
        return load_scene_spec(p)
    return load_grid(p)
