"""Legacy ASCII VTK snapshots of a point cloud.

POLYDATA with one vertex cell per point keeps the files loadable in common
viewers without any library dependency.  Numbers are printed with 9
significant digits; the point-data block order is fixed: p, kind, div_v,
velocity.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud

_FMT = "%.9g"


def _line_of(values) -> str:
    return " ".join(_FMT % v for v in values)


def write_vtk_snapshot(cloud: PointCloud, path):
    if cloud.n == 0:
        raise ValueError("refusing to write an empty cloud")
    n = cloud.n
    lines = [
        "# vtk DataFile Version 3.0",
        "point cloud snapshot",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} double",
    ]
    for x, y in cloud.positions:
        lines.append(_line_of((x, y, 0.0)))
    lines.append(f"VERTICES {n} {2 * n}")
    lines.extend(f"1 {i}" for i in range(n))
    lines.append(f"POINT_DATA {n}")
    lines.append("SCALARS p double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_FMT % v for v in cloud.pressure)
    lines.append("SCALARS kind int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(k)) for k in cloud.kind)
    lines.append("SCALARS div_v double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_FMT % v for v in cloud.divergence)
    lines.append("VECTORS velocity double")
    for vx, vy in cloud.velocity:
        lines.append(_line_of((vx, vy, 0.0)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_snapshot(path) -> dict:
    """Parse a snapshot written by :func:`write_vtk_snapshot`."""
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    it = iter(tokens)

    def skip_to(prefix):
        for line in it:
            if line.startswith(prefix):
                return line
        raise ValueError(f"missing section {prefix!r}")

    head = skip_to("POINTS")
    n = int(head.split()[1])
    pts = np.array([[float(v) for v in next(it).split()] for _ in range(n)])
    out = {"positions": pts[:, :2]}

    skip_to("SCALARS p")
    next(it)  # lookup table
    out["p"] = np.array([float(next(it)) for _ in range(n)])
    skip_to("SCALARS kind")
    next(it)
    out["kind"] = np.array([int(next(it)) for _ in range(n)], dtype=np.int8)
    skip_to("SCALARS div_v")
    next(it)
    out["div_v"] = np.array([float(next(it)) for _ in range(n)])
    skip_to("VECTORS velocity")
    vel = np.array([[float(v) for v in next(it).split()] for _ in range(n)])
    out["velocity"] = vel[:, :2]
    return out
