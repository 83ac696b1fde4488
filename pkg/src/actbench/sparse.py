"""Kernelised sparse coding and dictionary learning over manifold points.

A point ``X`` is coded against atoms ``D_1..D_K`` by minimising::

    Q(s) = k(X, X) - 2 s^T k_X + s^T K_DD s + lam * ||s||_1

with cyclic coordinate descent.  Dictionaries are learned by alternating
coding with a kernel-space medoid update of the atoms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import SpdDescriptor, descriptor_from_dict, karcher_mean_spd
from .kernels import KernelSpec, _embed, cross_kernel, psd_repair

CD_TOL = 1e-8
CD_MAX_SWEEPS = 10_000


class SparseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelDictionary:
    atoms: tuple
    K_DD: np.ndarray
    spec: KernelSpec
    lam: float
    psd_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if len(self.atoms) < 2:
            raise SparseError("a dictionary needs at least 2 atoms")
        if self.lam < 0:
            raise SparseError("lambda must be non-negative")
        if np.any(np.diag(self.K_DD) <= 0):
            raise SparseError("dictionary Gram has a non-positive diagonal entry")

    @property
    def size(self) -> int:
        return len(self.atoms)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "lambda": self.lam, "psd_shift": self.psd_shift,
                "atoms": [a.to_dict() for a in self.atoms]}

    @classmethod
    def from_dict(cls, obj: dict) -> "KernelDictionary":
        return make_dictionary([descriptor_from_dict(a) for a in obj["atoms"]],
                               KernelSpec.from_dict(obj["spec"]), obj["lambda"])


def make_dictionary(atoms, spec: KernelSpec, lam: float) -> KernelDictionary:
    atoms = list(atoms)
    K, shift = psd_repair(cross_kernel(atoms, atoms, spec))
    return KernelDictionary(atoms, K, spec, float(lam), shift)


def save_dictionary(dictionary: KernelDictionary, path) -> None:
    with open(path, "w") as fh:
        json.dump(dictionary.to_dict(), fh)


def load_dictionary(path) -> KernelDictionary:
    with open(path) as fh:
        return KernelDictionary.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class SparseCode:
    s: np.ndarray
    objective: float
    history: list = field(default_factory=list)


def self_kernel(items, spec: KernelSpec) -> np.ndarray:
    """``k(x, x)`` for each item."""
    A, m = _embed(items, spec)
    f = spec.family
    if f in ("spd_rbf", "ls_rbf"):
        return np.ones(len(A))
    sq = np.sum(A * A, axis=1)
    if f == "spd_poly":
        return (spec.gamma_p * sq) ** int(spec.exponent)
    if f == "ls_poly":
        return (spec.gamma_p * sq) ** m
    return sq


@njit(cache=True)
def _objective(kxx, kx, KDD, lam, s):
    q = kxx + lam * np.sum(np.abs(s))
    for i in range(s.shape[0]):
        q -= 2.0 * s[i] * kx[i]
        for j in range(s.shape[0]):
            q += s[i] * KDD[i, j] * s[j]
    return q


@njit(cache=True)
def _cd_row(kxx, kx, KDD, lam, tol, max_sweeps, hist):
    """One problem; ``hist`` (length 0 or ``max_sweeps + 1``) receives Q per sweep."""
    K = kx.shape[0]
    half = lam / 2.0
    s = np.zeros(K)
    ks = np.zeros(K)  # running KDD @ s
    track = hist.shape[0] > 0
    if track:
        hist[0] = _objective(kxx, kx, KDD, lam, s)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        change = 0.0
        for i in range(K):
            d = KDD[i, i]
            b = kx[i] - (ks[i] - d * s[i])
            new = np.sign(b) * max(abs(b) - half, 0.0) / d
            delta = new - s[i]
            if delta != 0.0:
                s[i] = new
                for j in range(K):
                    ks[j] += delta * KDD[i, j]
                change = max(change, abs(delta))
        if track:
            hist[sweeps] = _objective(kxx, kx, KDD, lam, s)
        if change < tol:
            break
    return s, sweeps


def coordinate_descent(kxx, KX, KDD, lam, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS,
                       track=False):
    """Cyclic coordinate descent, one independent problem per row of ``KX``.

    Returns ``(S, Q)`` and, with ``track=True``, the per-sweep objective of
    every row (the first entry is the objective at ``s = 0``).
    """
    KX = np.ascontiguousarray(np.atleast_2d(np.asarray(KX, dtype=np.float64)))
    kxx = np.broadcast_to(np.asarray(kxx, dtype=np.float64), (KX.shape[0],))
    KDD = np.ascontiguousarray(KDD, dtype=np.float64)
    n, K = KX.shape
    if np.any(np.diag(KDD) <= 0):
        raise SparseError("dictionary Gram has a non-positive diagonal entry")
    S = np.zeros((n, K))
    Q = np.zeros(n)
    histories = [] if track else None
    buf = np.empty(max_sweeps + 1 if track else 0)
    for r in range(n):
        S[r], sweeps = _cd_row(float(kxx[r]), KX[r], KDD, float(lam), float(tol),
                               int(max_sweeps), buf)
        Q[r] = _objective(float(kxx[r]), KX[r], KDD, float(lam), S[r])
        if track:
            histories.append(buf[:sweeps + 1].tolist())
    return (S, Q, histories) if track else (S, Q)


def _check_family(items, dictionary):
    man = dictionary.spec.manifold
    kind = type(dictionary.atoms[0])
    for x in items:
        if man in ("spd", "ls") and not isinstance(x, kind):
            raise SparseError(f"item of type {type(x).__name__} does not match "
                              f"{dictionary.spec.family} dictionary")


def sparse_code(X, dictionary: KernelDictionary, track: bool = False) -> SparseCode:
    _check_family([X], dictionary)
    kX = cross_kernel([X], dictionary.atoms, dictionary.spec)
    kxx = self_kernel([X], dictionary.spec)
    out = coordinate_descent(kxx, kX, dictionary.K_DD, dictionary.lam, track=track)
    hist = out[2][0] if track else []
    return SparseCode(out[0][0], float(out[1][0]), hist)


def encode_dataset(items, dictionary: KernelDictionary) -> np.ndarray:
    """Sparse codes of ``items`` as an ``(n, K)`` matrix."""
    items = list(items)
    _check_family(items, dictionary)
    KX = cross_kernel(items, dictionary.atoms, dictionary.spec)
    S, _ = coordinate_descent(self_kernel(items, dictionary.spec), KX,
                              dictionary.K_DD, dictionary.lam)
    return S


def save_codes_csv(S, path) -> None:
    np.savetxt(path, np.atleast_2d(S), delimiter=",", fmt="%.17g")


# -- dictionary learning -----------------------------------------------------

def kmedoids(D2: np.ndarray, K: int, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic k-medoids on a squared-distance matrix.

    Seeding starts at the global medoid and adds farthest points; then
    alternates assignment and medoid re-selection.  Ties go to the lowest
    index.  Returns ``(medoid_indices, assignment)``.
    """
    medoids = [int(np.argmin(D2.sum(axis=1)))]
    while len(medoids) < K:
        gap = D2[:, medoids].min(axis=1)
        gap[medoids] = -np.inf
        medoids.append(int(np.argmax(gap)))
    medoids = np.array(medoids)
    for _ in range(max_iter):
        assign = np.argmin(D2[:, medoids], axis=1)
        new = medoids.copy()
        for k in range(K):
            members = np.flatnonzero(assign == k)
            if members.size:
                within = D2[np.ix_(members, members)].sum(axis=1)
                new[k] = members[int(np.argmin(within))]
        if np.array_equal(new, medoids):
            break
        medoids = new
    assign = np.argmin(D2[:, medoids], axis=1)
    return medoids, assign


@dataclass
class _State:
    """Kernel values of the current atoms: ``KA[i, j] = k(atom_i, train_j)``."""

    atoms: list
    KA: np.ndarray
    KDD_raw: np.ndarray

    def replaced(self, i, c, train, Ktt):
        atoms = list(self.atoms)
        atoms[i] = train[c]
        KA = self.KA.copy()
        KA[i] = Ktt[c]
        KDD = self.KDD_raw.copy()
        KDD[i, :] = self.KA[:, c]
        KDD[:, i] = self.KA[:, c]
        KDD[i, i] = Ktt[c, c]
        return _State(atoms, KA, KDD)


def _code_subset(state, idx, kxx, lam):
    KDD, _ = psd_repair(state.KDD_raw)
    return coordinate_descent(kxx[idx], state.KA[:, idx].T, KDD, lam)


def learn_dictionary(train, K: int, spec: KernelSpec, lam: float, iters: int = 5,
                     init: str = "kmedoids", history: list | None = None) -> KernelDictionary:
    """Learn a ``K``-atom dictionary from ``train``.

    Atoms start at the k-medoids of the kernel-induced distance, or, with
    ``init="karcher"`` (SPD only), at the log-Euclidean means of those
    clusters.  Each iteration codes every training point, then proposes for
    every atom the training sample that minimises the coding objective of
    the points whose largest-magnitude coefficient selects that atom.  The
    proposal is kept only if the total objective does not increase;
    otherwise learning stops.  Total objectives are appended to ``history``.
    """
    train = list(train)
    n = len(train)
    if K > n:
        raise SparseError(f"dictionary size K={K} exceeds {n} training items")
    if K < 2:
        raise SparseError("dictionary size must be at least 2")
    K0 = cross_kernel(train, train, spec)
    Ktt = 0.5 * (K0 + K0.T)
    kxx = np.diag(Ktt).copy()
    D2 = np.maximum(kxx[:, None] - 2 * Ktt + kxx[None, :], 0.0)
    medoids, assign = kmedoids(D2, K)
    if init == "karcher":
        if not isinstance(train[0], SpdDescriptor):
            raise SparseError("karcher initialisation needs SPD descriptors")
        atoms = [karcher_mean_spd([train[j] for j in np.flatnonzero(assign == k)])
                 for k in range(K)]
        KA = cross_kernel(atoms, train, spec)
        KDD = cross_kernel(atoms, atoms, spec)
        state = _State(atoms, KA, 0.5 * (KDD + KDD.T))
    elif init == "kmedoids":
        state = _State([train[i] for i in medoids], Ktt[medoids].copy(),
                       Ktt[np.ix_(medoids, medoids)].copy())
    else:
        raise SparseError(f"unknown init {init!r}")

    everyone = np.arange(n)
    S, Q = _code_subset(state, everyone, kxx, lam)
    total = float(Q.sum())
    if history is not None:
        history.append(total)
    for _ in range(iters):
        owner = np.where(np.abs(S).max(axis=1) > 0, np.argmax(np.abs(S), axis=1),
                         np.argmax(state.KA, axis=0))
        proposal = state
        changed = False
        for i in range(K):
            members = np.flatnonzero(owner == i)
            if members.size == 0:
                continue
            _, q_now = _code_subset(state, members, kxx, lam)
            best, best_c = float(q_now.sum()), None
            for c in members:
                trial = state.replaced(i, int(c), train, Ktt)
                _, q = _code_subset(trial, members, kxx, lam)
                if float(q.sum()) < best:
                    best, best_c = float(q.sum()), int(c)
            if best_c is not None:
                proposal = proposal.replaced(i, best_c, train, Ktt)
                changed = True
        if not changed:
            break
        S_new, Q_new = _code_subset(proposal, everyone, kxx, lam)
        if float(Q_new.sum()) > total:
            break
        state, S, total = proposal, S_new, float(Q_new.sum())
        if history is not None:
            history.append(total)

    KDD, shift = psd_repair(state.KDD_raw)
    return KernelDictionary(state.atoms, KDD, spec, float(lam), shift)
