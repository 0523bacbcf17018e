"""Triangle meshes: storage, OBJ I/O, face geometry and controlled corruption."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEGENERATE_AREA_FRAC = 1e-12


class MeshError(ValueError):
    pass


class MeshFormatError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices ``(V, 3)`` float64 and faces ``(F, 3)`` int64, validated on construction."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must have shape (F, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def bbox_diag(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def total_area(self) -> float:
        return float(compute_face_geometry(self).areas.sum())

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces)

    def translate(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces)

    def edge_lengths(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        e = np.concatenate([v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 1]], v[f[:, 0]] - v[f[:, 2]]])
        return np.linalg.norm(e, axis=1)

    def flip_faces(self, mask=None) -> "TriMesh":
        f = self.faces.copy()
        mask = slice(None) if mask is None else np.asarray(mask)
        f[mask] = f[mask][:, ::-1]
        return TriMesh(self.vertices, f)


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    centers: np.ndarray
    normals: np.ndarray  # area-weighted: |n_f| is the face area
    valid_mask: np.ndarray

    @property
    def areas(self) -> np.ndarray:
        return np.linalg.norm(self.normals, axis=1)

    def valid(self) -> "FaceGeometry":
        m = self.valid_mask
        return FaceGeometry(self.centers[m], self.normals[m], m[m])


def compute_face_geometry(mesh: TriMesh) -> FaceGeometry:
    if mesh.n_faces == 0:
        raise MeshError("empty mesh")
    v = mesh.vertices
    f = mesh.faces
    v0, v1, v2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    centers = (v0 + v1 + v2) / 3.0
    normals = 0.5 * np.cross(v1 - v0, v2 - v0)
    areas = np.linalg.norm(normals, axis=1)
    valid = areas >= DEGENERATE_AREA_FRAC * mesh.bbox_diag**2
    valid &= areas > 0
    return FaceGeometry(centers, normals, valid)


# --- OBJ ---------------------------------------------------------------------

def load_obj(path) -> TriMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated, other records skipped."""
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            key = tokens[0]
            if key == "v":
                if len(tokens) < 4:
                    raise MeshFormatError(f"{path}:{lineno}: vertex record needs 3 coordinates")
                try:
                    verts.append([float(t) for t in tokens[1:4]])
                except ValueError as exc:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif key == "f":
                if len(tokens) < 4:
                    raise MeshFormatError(f"{path}:{lineno}: face record needs at least 3 indices")
                try:
                    idx = [int(t.split("/")[0]) for t in tokens[1:]]
                except ValueError as exc:
                    raise MeshFormatError(f"{path}:{lineno}: bad face index") from exc
                if min(idx) <= 0:
                    raise MeshFormatError(f"{path}:{lineno}: face indices must be positive")
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0] - 1, idx[k] - 1, idx[k + 1] - 1))
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and faces.max() >= len(verts):
        raise MeshFormatError(f"{path}: face index exceeds vertex count {len(verts)}")
    return TriMesh(verts, faces)


def save_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- remeshing and corruption ------------------------------------------------


def midpoint_subdivide(mesh: TriMesh) -> TriMesh:
    """Split every face into four through shared edge midpoints."""
    f = mesh.faces
    nv = mesh.n_vertices
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges.sort(axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    nf = len(f)
    ab = nv + inverse[:nf]
    bc = nv + inverse[nf : 2 * nf]
    ca = nv + inverse[2 * nf :]
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([a, ab, ca], 1),
            np.stack([ab, b, bc], 1),
            np.stack([ca, bc, c], 1),
            np.stack([ab, bc, ca], 1),
        ]
    )
    return TriMesh(np.concatenate([mesh.vertices, mids]), new_faces)


@dataclass(frozen=True)
class CorruptionSpec:
    hole_count: int = 0
    hole_radius_frac: float = 0.0
    jitter_sigma_frac: float = 0.0
    drop_face_frac: float = 0.0

    def __post_init__(self):
        for name in ("hole_radius_frac", "jitter_sigma_frac", "drop_face_frac"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise MeshError(f"{name} must lie in [0, 1], got {val}")
        if self.hole_count < 0:
            raise MeshError("hole_count must be nonnegative")

    @property
    def is_identity(self) -> bool:
        return (
            (self.hole_count == 0 or self.hole_radius_frac == 0.0)
            and self.jitter_sigma_frac == 0.0
            and self.drop_face_frac == 0.0
        )


def sample_surface_points(mesh: TriMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    geo = compute_face_geometry(mesh)
    p = geo.areas / geo.areas.sum()
    idx = rng.choice(mesh.n_faces, size=count, p=p)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    tri = mesh.vertices[mesh.faces[idx]]
    return (1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1] + (r1 * r2)[:, None] * tri[:, 2]


def remove_unused_vertices(mesh: TriMesh) -> TriMesh:
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.faces.ravel()] = True
    remap = np.cumsum(used) - 1
    return TriMesh(mesh.vertices[used], remap[mesh.faces])


def corrupt(mesh: TriMesh, spec: CorruptionSpec, seed: int) -> TriMesh:
    """Drop random faces, punch holes, then jitter vertices; a pure function of its arguments."""
    if spec.is_identity:
        return TriMesh(mesh.vertices.copy(), mesh.faces.copy())
    rng = np.random.default_rng(seed)
    diag = mesh.bbox_diag
    keep = np.ones(mesh.n_faces, dtype=bool)
    n_drop = int(round(spec.drop_face_frac * mesh.n_faces))
    if n_drop:
        keep[rng.choice(mesh.n_faces, size=n_drop, replace=False)] = False
    if spec.hole_count and spec.hole_radius_frac > 0:
        centers = compute_face_geometry(mesh).centers
        seeds = sample_surface_points(mesh, spec.hole_count, rng)
        r2 = (spec.hole_radius_frac * diag) ** 2
        for s in seeds:
            keep &= ((centers - s) ** 2).sum(1) > r2
    out = remove_unused_vertices(TriMesh(mesh.vertices, mesh.faces[keep]))
    if out.n_faces == 0:
        raise MeshError("corruption removed every face")
    if spec.jitter_sigma_frac > 0:
        noise = rng.normal(scale=spec.jitter_sigma_frac * diag, size=out.vertices.shape)
        out = out.with_vertices(out.vertices + noise)
    if not compute_face_geometry(out).valid_mask.any():
        raise MeshError("corruption left no valid faces")
    return out


def area_centroid(mesh: TriMesh) -> np.ndarray:
    geo = compute_face_geometry(mesh)
    a = geo.areas
    return (geo.centers * a[:, None]).sum(0) / a.sum()


def center(mesh: TriMesh) -> TriMesh:
    """Translate so the area-weighted centroid of face centers sits at the origin."""
    return mesh.translate(-area_centroid(mesh))


# --- primitives used by tests and fixtures -----------------------------------


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    m = TriMesh(v / np.linalg.norm(v, axis=1, keepdims=True), f)
    for _ in range(subdivisions):
        m = midpoint_subdivide(m)
        m = m.with_vertices(m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True))
    return m.with_vertices(m.vertices * radius)


def tetrahedron() -> TriMesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(v, f)
