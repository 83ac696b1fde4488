"""SPD (covariance) and linear-subspace video representations and their metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .descriptor import as_array


class GeometryError(ValueError):
    pass


def _eig_map(C, fn):
    S = 0.5 * (C + C.T)
    w, Q = np.linalg.eigh(S)
    if w[0] <= 0:
        raise GeometryError(f"matrix is not positive definite (min eigenvalue {w[0]:.3e})")
    M = (Q * fn(w)) @ Q.T
    return 0.5 * (M + M.T)


def spd_log(C) -> np.ndarray:
    """Matrix logarithm of a symmetric positive definite matrix."""
    return _eig_map(np.asarray(C, dtype=np.float64), np.log)


def sym_exp(L) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    S = 0.5 * (L + L.T)
    w, Q = np.linalg.eigh(S)
    M = (Q * np.exp(w)) @ Q.T
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class SpdDescriptor:
    C: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        C = np.array(self.C, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise GeometryError(f"SPD descriptor must be square, got {C.shape}")
        C = 0.5 * (C + C.T)
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def d(self) -> int:
        return self.C.shape[0]

    @cached_property
    def log(self) -> np.ndarray:
        L = spd_log(self.C)
        L.setflags(write=False)
        return L

    def to_dict(self) -> dict:
        return {"type": "spd", "d": self.d, "epsilon": self.epsilon,
                "C": self.C.ravel().tolist()}


@dataclass(frozen=True, eq=False)
class SubspaceDescriptor:
    Y: np.ndarray

    def __post_init__(self):
        Y = np.array(self.Y, dtype=np.float64)
        if Y.ndim != 2 or not 1 <= Y.shape[1] <= Y.shape[0]:
            raise GeometryError(f"subspace basis must be d x m with 1 <= m <= d, got {Y.shape}")
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)

    @property
    def d(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @cached_property
    def projector(self) -> np.ndarray:
        P = self.Y @ self.Y.T
        P = 0.5 * (P + P.T)
        P.setflags(write=False)
        return P

    def to_dict(self) -> dict:
        return {"type": "subspace", "d": self.d, "m": self.m, "Y": self.Y.ravel().tolist()}


def descriptor_from_dict(obj: dict):
    if obj["type"] == "spd":
        d = obj["d"]
        return SpdDescriptor(np.reshape(obj["C"], (d, d)), epsilon=obj.get("epsilon", 0.0))
    if obj["type"] == "subspace":
        return SubspaceDescriptor(np.reshape(obj["Y"], (obj["d"], obj["m"])))
    raise GeometryError(f"unknown descriptor type {obj['type']!r}")


def save_descriptor(desc, path) -> None:
    with open(path, "w") as fh:
        json.dump(desc.to_dict(), fh)


def load_descriptor(path):
    with open(path) as fh:
        return descriptor_from_dict(json.load(fh))


def covariance_of(fs, epsilon: float | None = None) -> SpdDescriptor:
    """Biased (1/N) sample covariance plus ``epsilon * I``.

    With ``epsilon=None`` the ridge is ``1e-6 * trace(C) / d`` (falling back
    to 1e-12 for a zero-scatter set) so the result is always positive
    definite.
    """
    F = as_array(fs)
    n, d = F.shape
    if n < 2:
        raise GeometryError(f"covariance needs at least 2 feature vectors, got {n}")
    D = F - F.mean(axis=0)
    C = D.T @ D / n
    C = 0.5 * (C + C.T)
    if epsilon is None:
        epsilon = max(1e-6 * np.trace(C) / d, 1e-12)
    return SpdDescriptor(C + epsilon * np.eye(d), epsilon=float(epsilon))


def _fix_signs(U, tol=1e-12):
    U = U.copy()
    for j in range(U.shape[1]):
        col = U[:, j]
        nz = np.flatnonzero(np.abs(col) > tol * max(1.0, np.abs(col).max()))
        if nz.size and col[nz[0]] < 0:
            U[:, j] = -col
    return U


def subspace_of(fs, m: int) -> SubspaceDescriptor:
    """Leading ``m`` left singular vectors of the d x N feature matrix
    (uncentred), each column signed so its first nonzero entry is positive."""
    F = as_array(fs)
    n, d = F.shape
    if not 1 <= m <= d:
        raise GeometryError(f"subspace order m={m} outside 1..{d}")
    if n < m:
        raise GeometryError(f"need at least m={m} feature vectors, got {n}")
    U, _, _ = np.linalg.svd(F.T, full_matrices=False)
    return SubspaceDescriptor(_fix_signs(U[:, :m]))


def dist_spd(C1: SpdDescriptor, C2: SpdDescriptor) -> float:
    """Log-Euclidean distance ``||log C1 - log C2||_F``."""
    return float(np.linalg.norm(C1.log - C2.log))


def principal_angles(Y1: SubspaceDescriptor, Y2: SubspaceDescriptor) -> np.ndarray:
    """Cosines of the principal angles, descending and clamped to [0, 1]."""
    if Y1.m != Y2.m or Y1.d != Y2.d:
        raise GeometryError(f"subspace shapes differ: {Y1.Y.shape} vs {Y2.Y.shape}")
    s = np.linalg.svd(Y1.Y.T @ Y2.Y, compute_uv=False)
    return np.clip(s, 0.0, 1.0)


def dist_ls(Y1: SubspaceDescriptor, Y2: SubspaceDescriptor) -> float:
    """Projection metric ``sqrt(m - sum cos^2)``.

    Evaluated as ``sqrt(||Y1 Y1^T - Y2 Y2^T||_F^2 / 2)``, the same quantity
    without the cancellation of ``m - sum cos^2`` near zero distance.
    """
    if Y1.m != Y2.m or Y1.d != Y2.d:
        raise GeometryError(f"subspace shapes differ: {Y1.Y.shape} vs {Y2.Y.shape}")
    diff = Y1.projector - Y2.projector
    return float(np.sqrt(np.sum(diff * diff) / 2.0))


def karcher_mean_spd(Cs) -> SpdDescriptor:
    """Log-Euclidean mean ``exp(mean_i log C_i)``."""
    Cs = list(Cs)
    if not Cs:
        raise GeometryError("karcher mean of an empty list")
    L = np.mean([c.log for c in Cs], axis=0)
    return SpdDescriptor(sym_exp(L), epsilon=0.0)
