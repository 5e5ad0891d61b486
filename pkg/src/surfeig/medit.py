"""ASCII MEDIT mesh (.mesh) and per-vertex solution (.sol) files.

Layout written here (and accepted back):

    MeshVersionFormatted 2
    Dimension 3
    Vertices
    <count>
    x y z 0          (one line per vertex)
    Triangles
    <count>
    v1 v2 v3 0       (1-based indices)
    End

Solutions carry a single scalar per vertex (``SolAtVertices`` with type
line ``1 1``). Coordinates are printed with 17 significant digits, so a
round trip reproduces doubles exactly.
"""

import numpy as np

from .mesh import SurfaceMesh, _build_mesh, _sphere_params


class MeditParseError(ValueError):
    """Malformed MEDIT file; the message carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def write_medit_mesh(mesh: SurfaceMesh, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("MeshVersionFormatted 2\n")
        fh.write("Dimension 3\n")
        fh.write("Vertices\n")
        fh.write(f"{mesh.num_vertices}\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g} 0\n")
        fh.write("Triangles\n")
        fh.write(f"{mesh.num_triangles}\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"{a} {b} {c} 0\n")
        fh.write("End\n")


def read_medit_mesh(path) -> SurfaceMesh:
    """Parse a MEDIT triangle surface mesh.

    Unknown sections are skipped; Vertices and Triangles are required.
    """
    with open(path) as fh:
        lines = fh.readlines()

    def content(i):
        return lines[i].split("#")[0].strip()

    vertices = None
    triangles = None
    i = 0
    n = len(lines)
    while i < n:
        token = content(i)
        key = token.split()[0].lower() if token else ""
        if key == "end":
            break
        if key in ("vertices", "triangles"):
            if i + 1 >= n or not content(i + 1).isdigit():
                raise MeditParseError(path, i + 2, f"missing {key} count")
            count = int(content(i + 1))
            rows = []
            want = 3
            for j in range(count):
                li = i + 2 + j
                if li >= n:
                    raise MeditParseError(path, n, f"truncated {key} section "
                                                   f"({j} of {count} entries)")
                parts = content(li).split()
                if len(parts) < want:
                    raise MeditParseError(path, li + 1,
                                          f"expected at least {want} fields")
                try:
                    if key == "vertices":
                        rows.append([float(p) for p in parts[:3]])
                    else:
                        rows.append([int(p) for p in parts[:3]])
                except ValueError as exc:
                    raise MeditParseError(path, li + 1, str(exc)) from None
            if key == "vertices":
                vertices = np.array(rows, dtype=float)
            else:
                triangles = np.array(rows, dtype=np.int64) - 1
            i += 2 + count
        else:
            i += 1

    if vertices is None:
        raise MeditParseError(path, len(lines), "no Vertices section")
    if triangles is None:
        raise MeditParseError(path, len(lines), "no Triangles section")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeditParseError(path, len(lines), "triangle index out of range")

    on_sphere = np.allclose(np.linalg.norm(vertices, axis=1), 1.0, atol=1e-9)
    if on_sphere:
        return _build_mesh(vertices, triangles, _sphere_params(vertices), "sphere")
    params = np.zeros((len(vertices), 2))
    return _build_mesh(vertices, triangles, params, "generic")


def write_medit_sol(values, path) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("solution must be a flat per-vertex array")
    if not np.all(np.isfinite(values)):
        raise ValueError("solution contains non-finite values")
    with open(path, "w", newline="\n") as fh:
        fh.write("MeshVersionFormatted 2\n")
        fh.write("Dimension 3\n")
        fh.write("SolAtVertices\n")
        fh.write(f"{len(values)}\n")
        fh.write("1 1\n")
        for v in values:
            fh.write(f"{v:.17g}\n")
        fh.write("End\n")


def read_medit_sol(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.split("#")[0].strip() for ln in fh.readlines()]
    try:
        start = next(i for i, ln in enumerate(lines)
                     if ln.lower().startswith("solatvertices"))
    except StopIteration:
        raise MeditParseError(path, len(lines), "no SolAtVertices section") from None
    if start + 2 >= len(lines) or not lines[start + 1].isdigit():
        raise MeditParseError(path, start + 2, "missing solution count")
    count = int(lines[start + 1])
    vals = []
    for j in range(count):
        li = start + 3 + j
        if li >= len(lines):
            raise MeditParseError(path, len(lines), "truncated solution section")
        try:
            vals.append(float(lines[li].split()[0]))
        except (ValueError, IndexError):
            raise MeditParseError(path, li + 1, "bad solution value") from None
    return np.array(vals)
