"""Artifact persistence: CSV tables and JSON documents with provenance sidecars.

Every file written through :class:`ArtifactStore` gets a companion
``<name>.json`` recording the configuration hash, the seed, package versions
and a digest of the file itself.  Nothing time-dependent is recorded, so two
identical runs produce identical bytes.
"""

import hashlib
import json
import platform
from importlib import metadata
from pathlib import Path

import numpy as np

from .dynamics import GridTrajectory, TimeGrid

_PACKAGES = ("artifact", "numpy", "scipy", "scikit-learn")


def versions():
    out = {"python": platform.python_version()}
    for name in _PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = None
    return out


def fmt(v):
    """Shortest round-trip text for a float (17 significant digits)."""
    return format(float(v), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    """Deterministic JSON text (sorted keys, non-finite floats as null)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ArtifactStore:
    """Writes artifacts under ``root`` and tags each with a sidecar."""

    def __init__(self, root, config_hash=None, seed=None):
        self.root = Path(root)
        self.config_hash = config_hash
        self.seed = seed
        self.written = []

    def path(self, name):
        return self.root / name

    def exists(self, name):
        return self.path(name).is_file()

    def _sidecar(self, name, meta):
        p = self.path(name)
        doc = {"file": name, "sha256": file_digest(p), "config_hash": self.config_hash,
               "seed": self.seed, "versions": versions()}
        if meta:
            doc["metadata"] = meta
        side = p.with_name(p.name + ".meta.json")
        side.write_text(dumps(doc))

    def _prepare(self, name):
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_table(self, name, header, columns, meta=None):
        """Write columns (equal-length sequences) as CSV.  Strings pass through."""
        p = self._prepare(name)
        cols = [np.asarray(c) for c in columns]
        n = len(cols[0]) if cols else 0
        lines = [",".join(header)]
        for i in range(n):
            lines.append(",".join(c[i] if c.dtype.kind in "US" else fmt(c[i]) for c in cols))
        p.write_text("\n".join(lines) + "\n")
        self._sidecar(name, meta)
        self.written.append(name)
        return p

    def write_array(self, name, header, array, meta=None):
        array = np.atleast_2d(np.asarray(array, dtype=float))
        return self.write_table(name, header, list(array.T), meta)

    def write_trajectory(self, name, traj, meta=None):
        header = ["t"] + [f"x{j + 1}" for j in range(traj.dim)]
        return self.write_array(name, header, np.column_stack([traj.times, traj.states]), meta)

    def write_json(self, name, obj, meta=None):
        p = self._prepare(name)
        p.write_text(dumps(obj))
        self._sidecar(name, meta)
        self.written.append(name)
        return p

    def write_text(self, name, text, meta=None):
        p = self._prepare(name)
        p.write_text(text)
        self._sidecar(name, meta)
        self.written.append(name)
        return p

    def write_with(self, name, writer, meta=None):
        """Let an object's own ``to_csv`` write the file, then add the sidecar."""
        p = self._prepare(name)
        writer(p)
        self._sidecar(name, meta)
        self.written.append(name)
        return p

    def read_json(self, name):
        return json.loads(self.path(name).read_text())

    def read_sidecar(self, name):
        return json.loads(self.path(name + ".meta.json").read_text())


def read_trajectory(path, grid=None):
    """Load a ``t,x1..xd`` CSV back into a :class:`GridTrajectory`.

    ``grid`` (a ``TimeGrid.to_dict`` mapping) restores the exact grid; without
    it the grid is rebuilt from the first and last times.
    """
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    if grid is None:
        grid = {"t_minus": float(t[0]), "t_plus": float(t[-1]), "n": len(t)}
    return GridTrajectory(TimeGrid(**grid), data[:, 1:])
