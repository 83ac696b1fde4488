"""Diagonal-covariance GMMs and Fisher-vector encoding."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .descriptor import as_array

log = logging.getLogger(__name__)

DEFAULT_COMPONENTS = 256
DEFAULT_FV_SAMPLES = 256_000
POWER_RHO = 0.5
EM_TOL = 1e-5
EM_MAX_ITER = 100
VARIANCE_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    floor: np.ndarray | None = None
    seed: int | None = None
    loglik_history: list = field(default_factory=list)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if mu.shape != var.shape or w.shape != (mu.shape[0],):
            raise ModelError("inconsistent GMM parameter shapes")
        if abs(w.sum() - 1.0) > 1e-10 or np.any(w <= 0):
            raise ModelError("GMM weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise ModelError("GMM variances must be positive")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {"K": self.K, "d": self.d, "weights": self.weights.tolist(),
                "means": self.means.tolist(), "variances": self.variances.tolist(),
                "floor": None if self.floor is None else np.asarray(self.floor).tolist(),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, obj: dict) -> "GmmModel":
        floor = obj.get("floor")
        return cls(obj["weights"], obj["means"], obj["variances"],
                   None if floor is None else np.asarray(floor), obj.get("seed"))


def save_gmm(model: GmmModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_gmm(path) -> GmmModel:
    with open(path) as fh:
        return GmmModel.from_dict(json.load(fh))


def component_log_densities(model: GmmModel, X: np.ndarray) -> np.ndarray:
    """``log w_k + log N(x_n | mu_k, diag var_k)`` as an ``(N, K)`` array."""
    inv = 1.0 / model.variances
    # expanded quadratic form; cheaper than broadcasting (N, K, d)
    quad = (X ** 2) @ inv.T - 2.0 * X @ (model.means * inv).T + np.sum(model.means ** 2 * inv, axis=1)
    log_det = np.sum(np.log(model.variances), axis=1)
    return np.log(model.weights) - 0.5 * (model.d * _LOG_2PI + log_det + quad)


def posteriors(model: GmmModel, fs) -> np.ndarray:
    X = as_array(fs)
    L = component_log_densities(model, X)
    return np.exp(L - logsumexp(L, axis=1, keepdims=True))


def gmm_avg_loglik(model: GmmModel, fs) -> float:
    """Mean over features of ``log sum_k w_k N(f | mu_k, sigma_k)``."""
    X = as_array(fs)
    if len(X) == 0:
        raise ModelError("empty feature set")
    return float(np.mean(logsumexp(component_log_densities(model, X), axis=1)))


def kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centres = [X[rng.integers(n)]]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centres.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centres)


def gmm_fit(features, K: int, seed: int = 0, max_iter: int = EM_MAX_ITER, tol: float = EM_TOL,
            floor_scale: float = VARIANCE_FLOOR) -> GmmModel:
    """Fit a diagonal GMM by EM.

    Means start at k-means++ seeds, variances at the global per-dimension
    variance, weights uniform.  Iteration stops when the relative gain in
    average log-likelihood drops below ``tol`` or after ``max_iter`` steps.
    Variances are floored at ``floor_scale`` times the global variance.
    The average log-likelihood is recorded before every M-step and must
    never decrease.
    """
    X = as_array(features)
    n, d = X.shape
    if K < 1 or n < 10 * K:
        raise ModelError(f"need at least 10*K = {10 * K} samples for K={K}, got {n}")
    rng = np.random.default_rng(seed)
    gvar = X.var(axis=0)
    gvar = np.where(gvar > 0, gvar, 1.0)
    floor = floor_scale * gvar
    means = kmeans_pp(X, K, rng)
    variances = np.tile(gvar, (K, 1))
    weights = np.full(K, 1.0 / K)
    tiny = np.finfo(np.float64).tiny
    history = []
    for _ in range(max_iter + 1):
        model = GmmModel(weights, means, variances, floor, seed)
        L = component_log_densities(model, X)
        norm = logsumexp(L, axis=1, keepdims=True)
        ll = float(np.mean(norm))
        if history:
            prev = history[-1]
            if ll < prev - 1e-9 * max(1.0, abs(prev)):
                raise AssertionError(f"EM log-likelihood decreased: {prev!r} -> {ll!r}")
        history.append(ll)
        if len(history) > max_iter or (
                len(history) > 1 and (ll - history[-2]) < tol * abs(history[-2])):
            break
        R = np.exp(L - norm)
        Nk = R.sum(axis=0)
        # components that lost all support keep their parameters at a negligible weight
        Nk_safe = np.maximum(Nk, tiny)
        weights = np.maximum(Nk / n, 1e-300)
        weights = weights / weights.sum()
        means = (R.T @ X) / Nk_safe[:, None]
        variances = (R.T @ (X ** 2)) / Nk_safe[:, None] - means ** 2
        dead = Nk < 1e-12
        if dead.any():
            means[dead] = model.means[dead]
            variances[dead] = model.variances[dead]
        variances = np.maximum(variances, floor)
    return GmmModel(model.weights, model.means, model.variances, floor, seed, history)


def gmm_classify(models, fs, labels=None):
    """Label of the model with the highest average log-likelihood.

    ``models`` is a mapping label -> GmmModel or a sequence (labels are then
    the indices).  Ties go to the smallest label.
    """
    if isinstance(models, dict):
        keys = sorted(models)
        seq = [models[k] for k in keys]
    else:
        seq = list(models)
        keys = list(range(len(seq))) if labels is None else list(labels)
    if len(seq) < 2:
        raise ModelError("need at least two action models")
    scores = np.array([gmm_avg_loglik(m, fs) for m in seq])
    return keys[int(np.argmax(scores))]


def power_normalize(v, rho: float = POWER_RHO) -> np.ndarray:
    if not 0 < rho <= 1:
        raise ModelError("rho must lie in (0, 1]")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.abs(v) ** rho


@dataclass(frozen=True, eq=False)
class FisherVector:
    v: np.ndarray
    normalized: bool


def fisher_encode(dictionary: GmmModel, fs, normalize: bool = True,
                  rho: float = POWER_RHO) -> FisherVector:
    """Mean and standard-deviation deviations from ``dictionary``.

    Layout is all K mean blocks followed by all K sigma blocks, each block
    ``d`` long.  With ``normalize`` the signed power and then the l2
    normalisation are applied; an all-zero vector stays zero.
    """
    X = as_array(fs)
    if len(X) == 0:
        raise ModelError("empty feature set")
    n = len(X)
    gamma = posteriors(dictionary, X)
    sigma = np.sqrt(dictionary.variances)
    w = dictionary.weights
    s0 = gamma.sum(axis=0)
    s1 = gamma.T @ X
    s2 = gamma.T @ (X ** 2)
    mu = dictionary.means
    # sum_n gamma (f - mu) / sigma, and sum_n gamma [((f - mu) / sigma)^2 - 1]
    g_mu = (s1 - s0[:, None] * mu) / sigma
    g_sig = (s2 - 2 * mu * s1 + s0[:, None] * mu ** 2) / dictionary.variances - s0[:, None]
    g_mu /= n * np.sqrt(w)[:, None]
    g_sig /= n * np.sqrt(2 * w)[:, None]
    v = np.concatenate([g_mu.ravel(), g_sig.ravel()])
    if not normalize:
        return FisherVector(v, False)
    v = power_normalize(v, rho)
    norm = np.linalg.norm(v)
    if norm > 0:
        v = v / norm
    return FisherVector(v, True)


_FV_HEADER = struct.Struct("<8sQQ")


def save_fv_binary(vectors, path) -> None:
    V = np.atleast_2d(np.asarray([getattr(v, "v", v) for v in vectors], dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(_FV_HEADER.pack(b"FVROWS01", V.shape[0], V.shape[1]))
        fh.write(V.tobytes())


def load_fv_binary(path) -> np.ndarray:
    raw = open(path, "rb").read()
    magic, count, dim = _FV_HEADER.unpack_from(raw)
    if magic != b"FVROWS01":
        raise ModelError(f"{path}: not a Fisher-vector file")
    return np.frombuffer(raw, dtype="<f8", count=count * dim, offset=_FV_HEADER.size).reshape(count, dim).copy()


def save_fv_csv(vectors, path) -> None:
    V = np.atleast_2d(np.asarray([getattr(v, "v", v) for v in vectors], dtype=np.float64))
    np.savetxt(path, V, delimiter=",", fmt="%.17g")


def sample_features(feature_sets, count: int = DEFAULT_FV_SAMPLES, seed: int = 0) -> np.ndarray:
    """Uniform sample without replacement from the pooled features."""
    X = np.concatenate([as_array(f) for f in feature_sets], axis=0)
    if count >= len(X):
        return X
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(X), size=count, replace=False))
    return X[idx]


def fit_with_fallback(features, K: int, seed: int = 0, **kw) -> GmmModel:
    """``gmm_fit`` with ``K`` reduced to ``len(features) // 10`` when too few samples."""
    n = len(as_array(features))
    k_eff = max(1, min(K, n // 10))
    if k_eff < K:
        log.info("reducing GMM components from %d to %d for %d samples", K, k_eff, n)
    return gmm_fit(features, k_eff, seed=seed, **kw)
