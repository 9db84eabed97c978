"""Response database file format: CSV rows plus a JSON metadata sidecar."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER = "E11,E22,E12,psi"


class DatabaseError(ValueError):
    pass


@dataclass
class ResponseDatabase:
    """Rows of (E11, E22, E12, psi) with provenance metadata."""

    rows: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.size and self.rows.shape[1] != 4:
            raise DatabaseError(f"rows must have 4 columns, got {self.rows.shape}")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def strains(self) -> np.ndarray:
        return self.rows[:, :3]

    @property
    def energies(self) -> np.ndarray:
        return self.rows[:, 3]

    def validate(self, psi_tol: float = 1e-12):
        """No duplicate strain triplets; psi >= 0; psi(0) = 0 when present."""
        if self.n == 0:
            return
        uniq = np.unique(self.strains.round(14), axis=0)
        if uniq.shape[0] != self.n:
            raise DatabaseError("duplicate strain triplets in database")
        if np.any(self.energies < -psi_tol):
            raise DatabaseError(f"negative energy density (min {self.energies.min()})")
        at_zero = np.all(np.abs(self.strains) < 1e-14, axis=1)
        if np.any(at_zero) and np.any(np.abs(self.energies[at_zero]) > psi_tol):
            raise DatabaseError("psi at zero strain is not zero")

    def save(self, path):
        path = Path(path)
        lines = [HEADER]
        for row in self.rows:
            lines.append(",".join(format(v, ".17g") for v in row))
        path.write_text("\n".join(lines) + "\n")
        side = path.with_suffix(path.suffix + ".meta.json") if path.suffix != ".csv" else path.with_suffix(".meta.json")
        side.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ResponseDatabase":
        path = Path(path)
        lines = path.read_text().strip().splitlines()
        if not lines or lines[0] != HEADER:
            raise DatabaseError(f"{path} is not a response database (bad header)")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]) if len(lines) > 1 else np.zeros((0, 4))
        side = path.with_suffix(".meta.json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        return cls(rows=rows, metadata=meta)


def write_polylines_csv(path, yarns: dict[int, np.ndarray]):
    """Yarn centreline export: one row per sample, yarn_id,s,x,y,z."""
    path = Path(path)
    lines = ["yarn_id,s,x,y,z"]
    for yid in sorted(yarns):
        pts = np.asarray(yarns[yid], dtype=float)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        for s, p in zip(arc, pts):
            lines.append(f"{yid}," + ",".join(format(v, ".17g") for v in (s, *p)))
    path.write_text("\n".join(lines) + "\n")
    return path
