"""Reader/writer for standard 3DGS ``.ply`` exports.

On load, log-scales are exponentiated, logit opacities are passed through a
sigmoid and quaternions are normalized, so the returned set holds
post-activation values.
"""

import numpy as np
from plyfile import PlyData, PlyElement

from .core import GaussianSet
from .errors import SchemaError


def _indexed(names, prefix):
    found = [n for n in names if n.startswith(prefix)]
    return sorted(found, key=lambda n: int(n.rsplit("_", 1)[-1]))


def read_ply(path):
    try:
        ply = PlyData.read(str(path))
        vertex = ply["vertex"]
    except (KeyError, ValueError, OSError) as exc:
        raise SchemaError(f"{path}: not a readable PLY vertex file ({exc})") from exc
    names = [p.name for p in vertex.properties]
    required = ["x", "y", "z", "opacity", "f_dc_0", "f_dc_1", "f_dc_2"]
    missing = [n for n in required if n not in names]
    scale_names = _indexed(names, "scale_")
    rot_names = _indexed(names, "rot_")
    if missing or len(scale_names) != 3 or len(rot_names) != 4:
        raise SchemaError(f"{path}: missing Gaussian properties {missing or 'scale/rot'}")

    def col(n):
        return np.asarray(vertex[n], dtype=np.float64)

    mu = np.stack([col("x"), col("y"), col("z")], axis=1)
    s = np.exp(np.stack([col(n) for n in scale_names], axis=1))
    q = np.stack([col(n) for n in rot_names], axis=1)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    q = np.divide(q, norm, out=np.tile([1.0, 0.0, 0.0, 0.0], (len(q), 1)), where=norm > 0)
    alpha = 1.0 / (1.0 + np.exp(-col("opacity")))
    color_names = ["f_dc_0", "f_dc_1", "f_dc_2"] + _indexed(names, "f_rest_")
    c = np.stack([col(n) for n in color_names], axis=1)
    return GaussianSet(mu, s, q, alpha, c)


def write_ply(path, gaussians):
    """Write ``gaussians`` in the 3DGS property layout (pre-activation values)."""
    g = gaussians
    n = len(g)
    n_rest = g.color_dim - 3
    fields = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    fields += [f"f_rest_{i}" for i in range(n_rest)]
    fields += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    data = np.empty(n, dtype=[(f, "f4") for f in fields])
    data["x"], data["y"], data["z"] = g.mu.T
    data["nx"] = data["ny"] = data["nz"] = 0.0
    for i in range(g.color_dim):
        name = f"f_dc_{i}" if i < 3 else f"f_rest_{i - 3}"
        data[name] = g.c[:, i]
    a = np.clip(g.alpha, 1e-7, 1 - 1e-7)
    data["opacity"] = np.log(a / (1 - a))
    for i in range(3):
        data[f"scale_{i}"] = np.log(g.s[:, i])
    for i in range(4):
        data[f"rot_{i}"] = g.q[:, i]
    PlyData([PlyElement.describe(data, "vertex")], text=False, byte_order="<").write(str(path))
