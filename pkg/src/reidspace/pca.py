"""Principal-component basis fitting, projection, and prefix excision.

Fitting runs an SVD of the centered data matrix in float64 (never an
eigendecomposition of the covariance). Components are ordered by
descending explained variance, ties broken by decomposition order, and
signed so that each component's largest-magnitude coordinate is positive
(ties resolved by the lowest index). Singular values at or below
``1e-10 * largest`` are dropped, so the retained rank is
``min(n_rows - 1, dimension)`` at most.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"EMB1"
RANK_CUTOFF = 1e-10
SIGN_CONVENTION = "largest-abs-coordinate-positive-v1"


@dataclass(eq=False)
class PcaBasis:
    """Mean vector, orthonormal component rows, explained variances."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def rank(self) -> int:
        return self.components.shape[0]

    @property
    def dimension(self) -> int:
        return self.components.shape[1]


@dataclass(eq=False)
class ProjectedSet:
    """Rows expressed in a subset of a basis's component coordinates."""

    row_ids: list[str] | None
    coordinates: np.ndarray
    basis: PcaBasis
    retained: tuple[int, ...]


def fit_pca(matrix) -> PcaBasis:
    """Fit a PCA basis to the rows of ``matrix``.

    explained_variance[i] = s_i**2 / (n - 1) for singular value s_i.
    Raises on fewer than 2 rows and on rank 0 (all rows identical).
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("fit_pca expects a 2-D matrix")
    n, d = x.shape
    if n < 2:
        raise ValueError(f"fit_pca needs at least 2 rows, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        raise ValueError("rank 0: all rows are identical")
    rank = int(np.sum(s > RANK_CUTOFF * s[0]))
    if rank == 0:
        raise ValueError("rank 0: all rows are identical")
    components = vt[:rank].copy()
    # sign convention: largest-|coordinate| positive, first index wins ties
    lead = np.argmax(np.abs(components), axis=1)
    flip = components[np.arange(rank), lead] < 0.0
    components[flip] *= -1.0
    explained = (s[:rank] ** 2) / (n - 1)
    return PcaBasis(mean=mean, components=components, explained_variance=explained)


def _check_retain(basis: PcaBasis, retain) -> tuple[int, ...]:
    retain = tuple(int(i) for i in retain)
    if not retain:
        raise ValueError("empty retain set")
    if len(set(retain)) != len(retain) or list(retain) != sorted(retain):
        raise ValueError("retain indices must be strictly increasing and unique")
    if retain[0] < 0 or retain[-1] >= basis.rank:
        raise ValueError(f"retain indices out of range for rank {basis.rank}")
    return retain


def project(basis: PcaBasis, rows, retain=None, row_ids=None) -> ProjectedSet:
    """Center ``rows`` with the basis mean and keep the ``retain`` coordinates.

    ``retain`` defaults to all components. Indices must be a strictly
    increasing subset of ``0..rank-1`` and must not be empty.
    """
    if retain is None:
        retain = range(basis.rank)
    retain = _check_retain(basis, retain)
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.dimension:
        raise ValueError(
            f"rows have dimension {x.shape[-1]}, basis expects {basis.dimension}"
        )
    coords = (x - basis.mean) @ basis.components[list(retain)].T
    return ProjectedSet(
        row_ids=list(row_ids) if row_ids is not None else None,
        coordinates=coords,
        basis=basis,
        retained=retain,
    )


def excise_prefix(basis: PcaBasis, k: int) -> tuple[int, ...]:
    """Retained indices after dropping the k highest-variance components.

    ``k = rank`` yields an empty tuple, which ``project`` rejects.
    """
    k = int(k)
    if k < 0 or k > basis.rank:
        raise ValueError(f"k must be in 0..{basis.rank}, got {k}")
    return tuple(range(k, basis.rank))


# ---------------------------------------------------------------------------
# Serialization: EMB1 layout (mean row, then component rows) + JSON sidecar

def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_basis(basis: PcaBasis, path) -> None:
    path = Path(path)
    rows = np.vstack([basis.mean[None, :], basis.components])
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    meta = {
        "kind": "pca_basis",
        "rank": basis.rank,
        "explained_variance": [float(v) for v in basis.explained_variance],
        "sign_convention": SIGN_CONVENTION,
    }
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, indent=2) + "\n")


def load_basis(path) -> PcaBasis:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an EMB1 file (bad magic)")
        count, dim = struct.unpack("<II", fh.read(8))
        payload = fh.read(count * dim * 4)
    if len(payload) != count * dim * 4 or count < 2:
        raise ValueError(f"{path}: truncated or empty basis")
    rows = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)
    with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("kind") != "pca_basis":
        raise ValueError(f"{path}: sidecar is not a pca_basis descriptor")
    explained = np.asarray(meta["explained_variance"], dtype=np.float64)
    if explained.size != count - 1:
        raise ValueError(f"{path}: sidecar variance count does not match rows")
    return PcaBasis(mean=rows[0], components=rows[1:], explained_variance=explained)
