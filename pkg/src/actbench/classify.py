"""Nearest-neighbour and SVM classifiers.

SVMs are one-vs-rest C-SVCs without a bias term, trained by dual coordinate
ascent on the hinge-loss dual::

    max_a  sum(a) - 1/2 a^T Q a,   Q_ij = y_i y_j K_ij,   0 <= a_i <= C
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import SpdDescriptor, SubspaceDescriptor, dist_ls, dist_spd
from .kernels import PSD_TOL, GramMatrix

DEFAULT_C = 10.0
KKT_TOL = 1e-4
MAX_EPOCHS = 100_000


class ClassifierError(ValueError):
    pass


def nn_classify(train, query, metric: str):
    """Label of the closest training item; ties go to the lowest index.

    ``train`` is a sequence of ``(descriptor, label)`` pairs.
    """
    train = list(train)
    if not train:
        raise ClassifierError("empty training set")
    if metric == "spd":
        kind, dist = SpdDescriptor, dist_spd
    elif metric == "ls":
        kind, dist = SubspaceDescriptor, dist_ls
    else:
        raise ClassifierError(f"unknown metric {metric!r}")
    if not isinstance(query, kind) or not all(isinstance(x, kind) for x, _ in train):
        raise ClassifierError(f"metric {metric!r} needs {kind.__name__} descriptors")
    d = [dist(x, query) for x, _ in train]
    return train[int(np.argmin(d))][1]


@dataclass(eq=False)
class SvmModel:
    mode: str
    classes: list
    C: float
    alpha: np.ndarray | None = None      # (n_classes, n) precomputed mode
    Y: np.ndarray | None = None          # (n_classes, n) +-1 targets
    w: np.ndarray | None = None          # (n_classes, p) linear mode
    epochs: list | None = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.alpha > 0, axis=0))

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "classes": list(self.classes), "C": self.C}
        if self.alpha is not None:
            out["alpha"] = self.alpha.tolist()
            out["y"] = self.Y.tolist()
        if self.w is not None:
            out["w"] = self.w.tolist()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SvmModel":
        arr = lambda k: None if k not in obj else np.asarray(obj[k], dtype=np.float64)  # noqa: E731
        return cls(obj["mode"], obj["classes"], obj["C"], arr("alpha"), arr("y"), arr("w"))


def save_svm(model: SvmModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_svm(path) -> SvmModel:
    with open(path) as fh:
        return SvmModel.from_dict(json.load(fh))


def _targets(labels):
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ClassifierError("SVM training needs at least two classes")
    Y = np.array([[1.0 if l == c else -1.0 for l in labels] for c in classes])
    return classes, Y


def dual_objective(alpha, y, K) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@njit(cache=True)
def _dual_cd(K, y, C, tol, max_epochs, check_monotone):
    """Binary machine on a precomputed kernel; returns ``(alpha, epochs)``."""
    n = y.shape[0]
    alpha = np.zeros(n)
    f = np.zeros(n)  # f_i = sum_j alpha_j y_j K_ij
    obj = 0.0
    for epoch in range(1, max_epochs + 1):
        viol = 0.0
        for i in range(n):
            G = y[i] * f[i] - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(G, 0.0)
            elif a >= C:
                pg = max(G, 0.0)
            else:
                pg = G
            viol = max(viol, abs(pg))
            if pg == 0.0 or K[i, i] <= 0.0:
                continue
            new = min(max(a - G / K[i, i], 0.0), C)
            delta = new - a
            if delta != 0.0:
                alpha[i] = new
                step = delta * y[i]
                for j in range(n):
                    f[j] += step * K[i, j]
                if check_monotone:
                    cur = 0.0
                    for j in range(n):
                        cur += alpha[j] - 0.5 * alpha[j] * y[j] * f[j]
                    if cur < obj - 1e-10 * max(1.0, abs(obj)):
                        raise AssertionError("dual objective decreased")
                    obj = cur
        if viol < tol:
            return alpha, epoch
    return alpha, max_epochs


@njit(cache=True)
def _linear_cd(X, y, C, tol, max_epochs, check_monotone):
    """Binary machine in the primal: same updates with ``w = sum a_i y_i x_i``."""
    n, p = X.shape
    alpha = np.zeros(n)
    w = np.zeros(p)
    diag = np.zeros(n)
    for i in range(n):
        for k in range(p):
            diag[i] += X[i, k] * X[i, k]
    obj = 0.0
    for epoch in range(1, max_epochs + 1):
        viol = 0.0
        for i in range(n):
            dot = 0.0
            for k in range(p):
                dot += X[i, k] * w[k]
            G = y[i] * dot - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(G, 0.0)
            elif a >= C:
                pg = max(G, 0.0)
            else:
                pg = G
            viol = max(viol, abs(pg))
            if pg == 0.0 or diag[i] <= 0.0:
                continue
            new = min(max(a - G / diag[i], 0.0), C)
            delta = new - a
            if delta != 0.0:
                alpha[i] = new
                step = delta * y[i]
                for k in range(p):
                    w[k] += step * X[i, k]
                if check_monotone:
                    cur = -0.5 * np.dot(w, w)
                    for j in range(n):
                        cur += alpha[j]
                    if cur < obj - 1e-10 * max(1.0, abs(obj)):
                        raise AssertionError("dual objective decreased")
                    obj = cur
        if viol < tol:
            return alpha, w, epoch
    return alpha, w, max_epochs


def svm_train_precomputed(gram, labels, C: float = DEFAULT_C, tol: float = KKT_TOL,
                          max_epochs: int = MAX_EPOCHS, check_monotone: bool = False) -> SvmModel:
    """One-vs-rest machines on a precomputed Gram (GramMatrix or array)."""
    K = gram.K if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != len(labels):
        raise ClassifierError("Gram matrix must be square and match the labels")
    if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
        raise ClassifierError("Gram matrix is not symmetric")
    if float(np.linalg.eigvalsh(0.5 * (K + K.T))[0]) < -PSD_TOL * max(1.0, np.abs(K).max()):
        raise ClassifierError("Gram matrix is indefinite; repair it with build_gram/psd_repair")
    if not np.any(K):
        raise ClassifierError("degenerate Gram matrix (all zeros)")
    C = float(C)
    classes, Y = _targets(labels)
    alphas, epochs = [], []
    for y in Y:
        a, e = _dual_cd(np.ascontiguousarray(K), y, C, float(tol), int(max_epochs),
                        bool(check_monotone))
        alphas.append(a)
        epochs.append(e)
    return SvmModel("precomputed_kernel", classes, C, alpha=np.array(alphas), Y=Y, epochs=epochs)


def decision_values_precomputed(model: SvmModel, k_query) -> np.ndarray:
    k = np.asarray(k_query, dtype=np.float64)
    if k.shape[-1] != model.alpha.shape[1]:
        raise ClassifierError(
            f"kernel row length {k.shape[-1]} != training size {model.alpha.shape[1]}")
    return k @ (model.alpha * model.Y).T


def _argmax_label(model, scores):
    return model.classes[int(np.argmax(scores))]


def svm_predict_precomputed(model: SvmModel, k_query):
    """Class with the largest one-vs-rest score; ties go to the smallest class."""
    return _argmax_label(model, decision_values_precomputed(model, k_query))


def svm_train_linear(X, labels, C: float = DEFAULT_C, tol: float = KKT_TOL,
                     max_epochs: int = MAX_EPOCHS, check_monotone: bool = False) -> SvmModel:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ClassifierError("X must be (n, p) and match the labels")
    if not np.any(X):
        raise ClassifierError("degenerate features: every training vector is zero")
    C = float(C)
    classes, Y = _targets(labels)
    alphas, ws, epochs = [], [], []
    for y in Y:
        a, w, e = _linear_cd(np.ascontiguousarray(X), y, C, float(tol), int(max_epochs),
                             bool(check_monotone))
        alphas.append(a)
        ws.append(w)
        epochs.append(e)
    return SvmModel("linear", classes, C, alpha=np.array(alphas), Y=Y, w=np.array(ws),
                    epochs=epochs)


def decision_values_linear(model: SvmModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.w.shape[1]:
        raise ClassifierError(f"feature length {x.shape[-1]} != model dimension {model.w.shape[1]}")
    return x @ model.w.T


def svm_predict_linear(model: SvmModel, x):
    return _argmax_label(model, decision_values_linear(model, x))
