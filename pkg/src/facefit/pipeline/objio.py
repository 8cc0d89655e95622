"""Minimal Wavefront OBJ writer/reader for meshes."""
import numpy as np

from ..diff.core import value_of


def export_obj(mesh, path, faces=None):
    """Write ``v`` lines in vertex order (9 significant digits) and 1-based ``f`` lines."""
    verts = np.asarray(value_of(getattr(mesh, "vertices", mesh)), dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 3 or not np.all(np.isfinite(verts)):
        raise ValueError("mesh vertices must be a finite (N, 3) array")
    lines = ["v %.9g %.9g %.9g" % tuple(v) for v in verts]
    if faces is not None:
        lines += ["f %d %d %d" % tuple(f + 1) for f in np.asarray(faces, dtype=np.int64)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)
