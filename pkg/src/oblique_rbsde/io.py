"""Readers and writers for the artifact files.

Floats are written with 17 significant digits so that every double survives
a write/read cycle unchanged.  Terminal-level rows carry ``Z = nan`` and zero
increments because the equation has no step there.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .lattice import FULL_TREE, RECOMBINING, Lattice, build_lattice
from .solvers import Solution

SURFACE_HEADER = ("level", "node_index", "w", "mode", "Y", "Z", "dK_plus", "dK_minus")


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_surfaces(path, sol: Solution) -> Path:
    lat = sol.lattice
    m = sol.mode_count
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SURFACE_HEADER)
        for n in range(lat.steps + 1):
            w = lat.states(n)
            terminal = n == lat.steps
            for p in range(lat.node_count(n)):
                for i in range(m):
                    if terminal:
                        z, kp, km = math.nan, 0.0, 0.0
                    else:
                        z, kp, km = sol.Z[n][i, p], sol.dk_plus[n][i, p], sol.dk_minus[n][i, p]
                    out.writerow((n, p, fmt(w[p]), i, fmt(sol.Y[n][i, p]), fmt(z), fmt(kp), fmt(km)))
    return path


def _infer_lattice(levels: dict) -> Lattice:
    N = max(levels)
    if N < 1:
        raise ValueError("surface file needs at least two levels")
    dt = max(abs(w) for w in levels[1]["w"]) ** 2
    kind = RECOMBINING
    if N >= 2 and len(levels[2]["w"]) == 4:
        kind = FULL_TREE
    # w at level 1 is +-sqrt(dt); squaring it loses the last bit of the horizon
    return build_lattice(float(f"{dt * N:.12g}"), N, kind)


def read_surfaces(path, lattice: Lattice | None = None, backend: str = "file") -> Solution:
    """Load a surface file back into a :class:`Solution`.

    Without ``lattice`` the horizon and node layout are inferred from the
    states of the first levels.
    """
    levels: dict = {}
    with Path(path).open(newline="") as fh:
        rows = csv.reader(fh)
        header = tuple(next(rows))
        if header != SURFACE_HEADER:
            raise ValueError(f"unexpected surface header {header}")
        for row in rows:
            n, p, i = int(row[0]), int(row[1]), int(row[3])
            lv = levels.setdefault(n, {"w": {}, "vals": {}})
            lv["w"][p] = float(row[2])
            lv["vals"][(i, p)] = tuple(float(x) for x in row[4:])
    for lv in levels.values():
        lv["w"] = [lv["w"][p] for p in sorted(lv["w"])]
    lat = lattice or _infer_lattice(levels)
    m = 1 + max(i for (i, _) in levels[0]["vals"])
    arrays = []
    for n in range(lat.steps + 1):
        k = lat.node_count(n)
        a = np.empty((4, m, k))
        for (i, p), vals in levels[n]["vals"].items():
            a[:, i, p] = vals
        arrays.append(a)
    N = lat.steps
    return Solution(
        backend, lat,
        tuple(a[0] for a in arrays),
        tuple(a[1] for a in arrays[:N]),
        tuple(a[2] for a in arrays[:N]),
        tuple(a[3] for a in arrays[:N]),
    )


def plain(x):
    """JSON-ready copy of ``x``: arrays become lists, non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(plain(payload), indent=2) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_table(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([v if isinstance(v, (int, str)) else fmt(v) for v in row])
    return path


def read_table(path) -> tuple[list, list]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, [[float(v) for v in r] for r in body]
