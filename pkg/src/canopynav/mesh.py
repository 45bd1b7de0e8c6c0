"""Triangle meshes and ASCII PLY I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, transform_points


class MeshFormatError(ValueError):
    pass


@dataclass
class TriangleMesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def transformed(self, T: Pose) -> "TriangleMesh":
        return TriangleMesh(transform_points(T, self.vertices), self.faces.copy())

    @staticmethod
    def concatenate(meshes: list["TriangleMesh"]) -> "TriangleMesh":
        verts, faces, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + offset)
            offset += m.n_vertices
        if not verts:
            return TriangleMesh()
        return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def write_ply(mesh: TriangleMesh, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        if mesh.n_vertices:
            np.savetxt(fh, mesh.vertices, fmt="%.6f")
        if mesh.n_faces:
            rows = np.hstack([np.full((mesh.n_faces, 1), 3), mesh.faces])
            np.savetxt(fh, rows, fmt="%d")


def read_ply(path: str | Path) -> TriangleMesh:
    """Read the ASCII subset written by :func:`write_ply`."""
    lines = Path(path).read_text(encoding="ascii", errors="strict").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError(f"{path}: missing 'ply' magic")
    n_vert = n_face = None
    try:
        end = lines.index("end_header")
    except ValueError as exc:
        raise MeshFormatError(f"{path}: no end_header") from exc
    for line in lines[1:end]:
        parts = line.split()
        if parts[:1] == ["format"] and parts[1] != "ascii":
            raise MeshFormatError(f"{path}: only ascii PLY is supported")
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
    if n_vert is None or n_face is None:
        raise MeshFormatError(f"{path}: header lacks vertex/face counts")
    body = lines[end + 1:]
    if len(body) < n_vert + n_face:
        raise MeshFormatError(f"{path}: truncated body")
    try:
        verts = np.array(" ".join(body[:n_vert]).split(), dtype=float)
        face_rows = np.array(" ".join(body[n_vert:n_vert + n_face]).split(), dtype=np.int64)
    except ValueError as exc:
        raise MeshFormatError(f"{path}: malformed body ({exc})") from exc
    if verts.size != 3 * n_vert or face_rows.size != 4 * n_face:
        raise MeshFormatError(f"{path}: body does not match header counts")
    face_rows = face_rows.reshape(-1, 4)
    if n_face and np.any(face_rows[:, 0] != 3):
        raise MeshFormatError(f"{path}: non-triangle face")
    faces = face_rows[:, 1:]
    verts = verts.reshape(-1, 3)
    faces = faces.reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= n_vert):
        raise MeshFormatError(f"{path}: face index out of range")
    return TriangleMesh(verts, faces)
