"""Manifold kernels, Gram assembly and the kernel parameter grids."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .descriptor import FEATURE_DIM
from .geometry import SpdDescriptor, SubspaceDescriptor, dist_spd

FAMILIES = ("spd_rbf", "spd_poly", "ls_rbf", "ls_poly", "linear")
_PARAMS = {
    "spd_rbf": {"gamma_r"},
    "spd_poly": {"gamma_p", "exponent"},
    "ls_rbf": {"gamma_r"},
    "ls_poly": {"gamma_p"},
    "linear": set(),
}
PSD_TOL = 1e-8


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    family: str
    gamma_r: float | None = None
    gamma_p: float | None = None
    exponent: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        given = {k for k in ("gamma_r", "gamma_p", "exponent") if getattr(self, k) is not None}
        if given != _PARAMS[self.family]:
            raise KernelError(
                f"{self.family} takes parameters {sorted(_PARAMS[self.family])}, got {sorted(given)}")
        for k in ("gamma_r", "gamma_p"):
            val = getattr(self, k)
            if val is not None and not val > 0:
                raise KernelError(f"{k} must be positive")
        if self.exponent is not None and (int(self.exponent) != self.exponent or self.exponent < 1):
            raise KernelError("exponent must be a positive integer")

    @property
    def manifold(self) -> str:
        return self.family.split("_")[0]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("family", "gamma_r", "gamma_p", "exponent")
                if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, obj: dict) -> "KernelSpec":
        return cls(**obj)


# -- pairwise kernels --------------------------------------------------------

def _check_spd(*cs):
    for c in cs:
        if not isinstance(c, SpdDescriptor):
            raise KernelError("expected SpdDescriptor inputs")


def _check_ls(Y1, Y2):
    if not (isinstance(Y1, SubspaceDescriptor) and isinstance(Y2, SubspaceDescriptor)):
        raise KernelError("expected SubspaceDescriptor inputs")
    if Y1.Y.shape != Y2.Y.shape:
        raise KernelError(f"subspace shapes differ: {Y1.Y.shape} vs {Y2.Y.shape}")


def k_spd_rbf(C1, C2, gamma_r: float) -> float:
    _check_spd(C1, C2)
    return float(np.exp(-gamma_r * dist_spd(C1, C2) ** 2))


def k_spd_poly(C1, C2, gamma_p: float, exponent: int) -> float:
    _check_spd(C1, C2)
    return float((gamma_p * np.sum(C1.log * C2.log)) ** int(exponent))


def k_ls_rbf(Y1, Y2, gamma_r: float) -> float:
    _check_ls(Y1, Y2)
    diff = Y1.projector - Y2.projector
    return float(np.exp(-gamma_r * np.sum(diff * diff)))


def k_ls_poly(Y1, Y2, gamma_p: float) -> float:
    _check_ls(Y1, Y2)
    M = Y1.Y.T @ Y2.Y
    return float((gamma_p * np.sum(M * M)) ** Y1.m)


def kernel(a, b, spec: KernelSpec) -> float:
    f = spec.family
    if f == "spd_rbf":
        return k_spd_rbf(a, b, spec.gamma_r)
    if f == "spd_poly":
        return k_spd_poly(a, b, spec.gamma_p, spec.exponent)
    if f == "ls_rbf":
        return k_ls_rbf(a, b, spec.gamma_r)
    if f == "ls_poly":
        return k_ls_poly(a, b, spec.gamma_p)
    return float(np.dot(np.ravel(a), np.ravel(b)))


# -- batched evaluation ------------------------------------------------------

def _embed(items, spec: KernelSpec):
    """Flatten items into the Euclidean space the kernel is defined on."""
    items = list(items)
    if not items:
        raise KernelError("no items")
    man = spec.manifold
    if man == "spd":
        if not all(isinstance(x, SpdDescriptor) for x in items):
            raise KernelError(f"{spec.family} needs SpdDescriptor items only")
        return np.stack([x.log.ravel() for x in items]), None
    if man == "ls":
        if not all(isinstance(x, SubspaceDescriptor) for x in items):
            raise KernelError(f"{spec.family} needs SubspaceDescriptor items only")
        shapes = {x.Y.shape for x in items}
        if len(shapes) != 1:
            raise KernelError(f"mixed subspace shapes {sorted(shapes)}")
        return np.stack([x.projector.ravel() for x in items]), items[0].m
    if any(isinstance(x, (SpdDescriptor, SubspaceDescriptor)) for x in items):
        raise KernelError("linear kernel needs plain vectors")
    X = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in items])
    return X, None


def _apply(A, B, spec, m):
    f = spec.family
    if f in ("spd_rbf", "ls_rbf"):
        return np.exp(-spec.gamma_r * cdist(A, B, "sqeuclidean"))
    G = A @ B.T
    if f == "spd_poly":
        return (spec.gamma_p * G) ** int(spec.exponent)
    if f == "ls_poly":
        return (spec.gamma_p * G) ** m
    return G


def cross_kernel(rows, cols, spec: KernelSpec) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(rows[i], cols[j])``."""
    A, ma = _embed(rows, spec)
    B, mb = _embed(cols, spec)
    if A.shape[1] != B.shape[1] or ma != mb:
        raise KernelError("row and column items have incompatible shapes")
    return _apply(A, B, spec, ma)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    K: np.ndarray
    spec: KernelSpec
    psd_shift: float = 0.0

    @property
    def n(self) -> int:
        return self.K.shape[0]


def psd_repair(K: np.ndarray, tol: float = PSD_TOL):
    """Symmetrise ``K`` and shift its diagonal when its spectrum dips below ``-tol``."""
    K = 0.5 * (K + K.T)
    lam_min = float(np.linalg.eigvalsh(K)[0])
    shift = 0.0
    if lam_min < -tol:
        shift = abs(lam_min) + 1e-10
        K = K + shift * np.eye(K.shape[0])
    return K, shift


def build_gram(items, spec: KernelSpec) -> GramMatrix:
    """Symmetric Gram matrix of ``items``, spectrally shifted if indefinite."""
    A, m = _embed(items, spec)
    K, shift = psd_repair(_apply(A, A, spec, m))
    K.setflags(write=False)
    return GramMatrix(K, spec, shift)


# -- persistence -------------------------------------------------------------

_MAGIC = b"GRAM0001"
_HEADER = struct.Struct("<8sQ16sdddd")


def save_gram_binary(gram: GramMatrix, path) -> None:
    s = gram.spec
    nan = float("nan")
    header = _HEADER.pack(_MAGIC, gram.n, s.family.encode().ljust(16, b"\0"),
                          nan if s.gamma_r is None else s.gamma_r,
                          nan if s.gamma_p is None else s.gamma_p,
                          nan if s.exponent is None else float(s.exponent),
                          gram.psd_shift)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(gram.K, dtype="<f8").tobytes())


def load_gram_binary(path) -> GramMatrix:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, n, fam, gr, gp, ex, shift = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise KernelError(f"{path}: not a Gram file")
    K = np.frombuffer(raw, dtype="<f8", count=n * n, offset=_HEADER.size).reshape(n, n).copy()
    opt = lambda x: None if np.isnan(x) else x  # noqa: E731
    spec = KernelSpec(fam.rstrip(b"\0").decode(), gamma_r=opt(gr), gamma_p=opt(gp),
                      exponent=None if np.isnan(ex) else int(ex))
    return GramMatrix(K, spec, shift)


def save_gram_csv(gram: GramMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in gram.K:
            w.writerow([repr(float(x)) for x in row])


# -- parameter grids ---------------------------------------------------------

def gamma_p_grid(d: int = FEATURE_DIM) -> list[float]:
    """``gamma_p = 1/d_p`` for ``d_p = 1..d``."""
    return [1.0 / dp for dp in range(1, d + 1)]


def spd_rbf_gamma_grid(d: int = FEATURE_DIM) -> list[float]:
    return [2.0 ** delta / d for delta in range(-10, 10)]


def ls_rbf_gamma_grid(d: int = FEATURE_DIM) -> list[float]:
    return [2.0 ** delta / d for delta in range(-14, 21, 2)]


def kernel_grid(family: str, d: int = FEATURE_DIM) -> list[KernelSpec]:
    """Every KernelSpec the benchmark grid visits for ``family``.

    Both polynomial families share the ``gamma_p = 1/d_p`` grid; for
    ``spd_poly`` the exponent is tied to ``d_p``.
    """
    if family == "spd_rbf":
        return [KernelSpec("spd_rbf", gamma_r=g) for g in spd_rbf_gamma_grid(d)]
    if family == "ls_rbf":
        return [KernelSpec("ls_rbf", gamma_r=g) for g in ls_rbf_gamma_grid(d)]
    if family == "spd_poly":
        return [KernelSpec("spd_poly", gamma_p=1.0 / dp, exponent=dp) for dp in range(1, d + 1)]
    if family == "ls_poly":
        return [KernelSpec("ls_poly", gamma_p=g) for g in gamma_p_grid(d)]
    if family == "linear":
        return [KernelSpec("linear")]
    raise KernelError(f"unknown kernel family {family!r}")
