"""Field exports and the run manifest.

All files of a run go through one :class:`RunWriter`, which records every
path it writes so the manifest can list them.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import threading
from datetime import datetime, timezone

import numpy as np

from phscond import __version__


def vtk_text(coords: np.ndarray, scalars: dict[str, np.ndarray], title: str = "phscond field") -> str:
    """Legacy VTK POLYDATA: one vertex cell per point plus point scalars."""
    n, d = coords.shape
    xyz = coords if d == 3 else np.column_stack([coords, np.zeros(n)])
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET POLYDATA"]
    lines.append(f"POINTS {n} double")
    lines.extend(f"{x!r} {y!r} {z!r}" for x, y, z in xyz.tolist())
    lines.append(f"VERTICES {n} {2 * n}")
    lines.extend(f"1 {i}" for i in range(n))
    lines.append(f"POINT_DATA {n}")
    for name, vals in scalars.items():
        vals = np.asarray(vals)
        if vals.shape != (n,):
            raise ValueError(f"scalar {name!r} has shape {vals.shape}, expected ({n},)")
        integral = np.issubdtype(vals.dtype, np.integer)
        lines.append(f"SCALARS {name} {'int' if integral else 'double'} 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(str(v) if integral else repr(v) for v in vals.tolist())
    return "\n".join(lines) + "\n"


def field_csv(coords: np.ndarray, scalars: dict[str, np.ndarray]) -> str:
    d = coords.shape[1]
    head = ["x", "y", "z"][:d] + list(scalars)
    cols = [coords[:, k] for k in range(d)] + [np.asarray(v) for v in scalars.values()]
    rows = [",".join(head)]
    for vals in zip(*(c.tolist() for c in cols)):
        rows.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in vals))
    return "\n".join(rows) + "\n"


def versions() -> dict[str, str]:
    import numba
    import scipy

    return {
        "phscond": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


class RunWriter:
    """Writes files below ``root`` and remembers them for the manifest."""

    MANIFEST = "manifest.json"

    def __init__(self, root: str | os.PathLike):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.files: list[str] = []
        self._lock = threading.Lock()

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def write_text(self, name: str, text: str) -> str:
        with self._lock:
            p = self.path(name)
            with open(p, "w", newline="") as fh:
                fh.write(text)
            if name not in self.files:
                self.files.append(name)
            return p

    def register(self, name: str) -> str:
        """Declare a file written by another routine into ``root``."""
        with self._lock:
            if name not in self.files:
                self.files.append(name)
            return self.path(name)

    def manifest(self, command: str, config: dict, seed: int | None) -> str:
        entries = []
        for name in self.files:
            with open(self.path(name), "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            entries.append({"name": name, "sha256": digest})
        entries.append({"name": self.MANIFEST, "sha256": None})
        doc = {
            "command": command,
            "config": config,
            "seed": seed,
            "versions": versions(),
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "files": entries,
        }
        with self._lock:
            p = self.path(self.MANIFEST)
            with open(p, "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True, default=str)
                fh.write("\n")
        return p
