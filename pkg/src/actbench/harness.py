"""Leave-one-out experiment driver for the ten recognition pipelines."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classify, kernels, probmodel, sparse
from .descriptor import DEFAULT_TAU, FEATURE_DIM, HS_ALPHA, HS_ITERATIONS, FeatureSet, extract_features
from .geometry import covariance_of, subspace_of
from .kernels import KernelSpec
from .videoio import DatasetManifest, Perturbation, apply_perturbation, load_video

log = logging.getLogger(__name__)

METHODS = ("nn_spd", "nn_ls", "svm_spd_poly", "svm_spd_rbf", "svm_ls_poly",
           "svm_ls_rbf", "ksr_spd", "ksr_ls", "gmm", "fv")

COMMON_DEFAULTS = {"tau": DEFAULT_TAU, "C": classify.DEFAULT_C}
METHOD_DEFAULTS = {
    "nn_spd": {},
    "nn_ls": {"m": 3},
    "svm_spd_poly": {"gamma_p": 1.0, "exponent": 1},
    "svm_spd_rbf": {"gamma_r": 2.0 ** -6 / FEATURE_DIM},
    "svm_ls_poly": {"m": 3, "gamma_p": 1.0},
    "svm_ls_rbf": {"m": 3, "gamma_r": 1.0 / FEATURE_DIM},
    "ksr_spd": {"kernel": "spd_rbf", "gamma_r": 2.0 ** -6 / FEATURE_DIM, "lam": 0.1,
                "K": None, "iters": 3, "init": "karcher"},
    "ksr_ls": {"m": 3, "kernel": "ls_rbf", "gamma_r": 1.0 / FEATURE_DIM, "lam": 0.1,
               "K": None, "iters": 3, "init": "kmedoids"},
    "gmm": {"components": probmodel.DEFAULT_COMPONENTS},
    "fv": {"components": probmodel.DEFAULT_COMPONENTS, "samples": probmodel.DEFAULT_FV_SAMPLES},
}


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    id: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in METHODS:
            raise HarnessError(f"unknown method {self.id!r}; expected one of {METHODS}")
        allowed = set(COMMON_DEFAULTS) | set(METHOD_DEFAULTS[self.id]) | {"em_max_iter"}
        unknown = set(self.hyperparameters) - allowed
        if unknown:
            raise HarnessError(f"{self.id} does not take hyperparameters {sorted(unknown)}")

    def resolved(self) -> dict:
        hp = dict(COMMON_DEFAULTS)
        hp.update(METHOD_DEFAULTS[self.id])
        hp.update(self.hyperparameters)
        return hp


# -- features ----------------------------------------------------------------

class FeatureCache:
    """Features per (video, tau, perturbation); extraction needs no training data."""

    def __init__(self, alpha: float = HS_ALPHA, n_iter: int = HS_ITERATIONS):
        self.alpha = alpha
        self.n_iter = n_iter
        self._store: dict = {}

    def get(self, path, tau: float, perturbation: Perturbation | None = None) -> FeatureSet:
        key = (str(path), float(tau), None if perturbation is None else perturbation.tag())
        fs = self._store.get(key)
        if fs is None:
            video = load_video(path)
            if perturbation is not None:
                video = apply_perturbation(video, perturbation)
            fs = extract_features(video, tau, self.alpha, self.n_iter)
            self._store[key] = fs
        return fs

    def put(self, path, tau: float, fs: FeatureSet, perturbation: Perturbation | None = None):
        self._store[(str(path), float(tau), None if perturbation is None else perturbation.tag())] = fs

    def __len__(self):
        return len(self._store)


class Sample:
    """One video's features with memoised SPD / subspace descriptors."""

    def __init__(self, key: str, label, features: FeatureSet):
        self.key = key
        self.label = label
        self.features = features
        self._memo: dict = {}

    def spd(self):
        if "spd" not in self._memo:
            self._memo["spd"] = covariance_of(self.features)
        return self._memo["spd"]

    def subspace(self, m: int):
        k = ("ls", m)
        if k not in self._memo:
            self._memo[k] = subspace_of(self.features, m)
        return self._memo[k]

    def descriptor(self, manifold: str, hp: dict):
        return self.spd() if manifold == "spd" else self.subspace(int(hp["m"]))


# -- pipelines ---------------------------------------------------------------

@dataclass
class Fitted:
    model: object
    state: dict              # JSON-serialisable description used for the digest
    info: dict = field(default_factory=dict)

    def digest(self) -> str:
        blob = json.dumps(self.state, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()


def _kernel_spec(family: str, hp: dict) -> KernelSpec:
    if family in ("spd_rbf", "ls_rbf"):
        return KernelSpec(family, gamma_r=float(hp["gamma_r"]))
    if family == "spd_poly":
        return KernelSpec(family, gamma_p=float(hp["gamma_p"]), exponent=int(hp["exponent"]))
    if family == "ls_poly":
        return KernelSpec(family, gamma_p=float(hp["gamma_p"]))
    raise HarnessError(f"unsupported kernel family {family!r}")


class NNPipeline:
    def __init__(self, manifold):
        self.manifold = manifold

    def fit(self, train, hp, seed):
        pairs = [(s.descriptor(self.manifold, hp), s.label) for s in train]
        state = {"metric": self.manifold, "train": [[d.to_dict(), l] for d, l in pairs]}
        return Fitted(pairs, state)

    def predict(self, fitted, sample, hp):
        return classify.nn_classify(fitted.model, sample.descriptor(self.manifold, hp),
                                    self.manifold)


class KernelSvmPipeline:
    def __init__(self, family):
        self.family = family
        self.manifold = family.split("_")[0]

    def fit(self, train, hp, seed):
        spec = _kernel_spec(self.family, hp)
        descs = [s.descriptor(self.manifold, hp) for s in train]
        gram = kernels.build_gram(descs, spec)
        svm = classify.svm_train_precomputed(gram, [s.label for s in train], hp["C"])
        state = {"spec": spec.to_dict(), "psd_shift": gram.psd_shift, "svm": svm.to_dict(),
                 "train": [d.to_dict() for d in descs]}
        return Fitted((spec, descs, svm), state, {"psd_shift": gram.psd_shift})

    def predict(self, fitted, sample, hp):
        spec, descs, svm = fitted.model
        row = kernels.cross_kernel([sample.descriptor(self.manifold, hp)], descs, spec)[0]
        return classify.svm_predict_precomputed(svm, row)


class KsrPipeline:
    def __init__(self, manifold):
        self.manifold = manifold

    def fit(self, train, hp, seed):
        spec = _kernel_spec(hp["kernel"], hp)
        descs = [s.descriptor(self.manifold, hp) for s in train]
        K = hp["K"] if hp["K"] is not None else min(64, len(descs) // 2)
        dictionary = sparse.learn_dictionary(descs, int(K), spec, float(hp["lam"]),
                                             int(hp["iters"]), init=hp["init"])
        codes = sparse.encode_dataset(descs, dictionary)
        svm = classify.svm_train_linear(codes, [s.label for s in train], hp["C"])
        state = {"dictionary": dictionary.to_dict(), "svm": svm.to_dict()}
        return Fitted((dictionary, svm), state, {"psd_shift": dictionary.psd_shift})

    def predict(self, fitted, sample, hp):
        dictionary, svm = fitted.model
        code = sparse.encode_dataset([sample.descriptor(self.manifold, hp)], dictionary)[0]
        return classify.svm_predict_linear(svm, code)


def _em_kwargs(hp):
    return {} if hp.get("em_max_iter") is None else {"max_iter": int(hp["em_max_iter"])}


class GmmPipeline:
    def fit(self, train, hp, seed):
        models = {}
        for i, label in enumerate(sorted({s.label for s in train})):
            X = np.concatenate([s.features.vectors for s in train if s.label == label])
            models[label] = probmodel.fit_with_fallback(X, int(hp["components"]),
                                                        seed=seed + i, **_em_kwargs(hp))
        state = {str(k): m.to_dict() for k, m in models.items()}
        return Fitted(models, state, {"components": {str(k): m.K for k, m in models.items()}})

    def predict(self, fitted, sample, hp):
        return probmodel.gmm_classify(fitted.model, sample.features)


class FvPipeline:
    def fit(self, train, hp, seed):
        X = probmodel.sample_features([s.features for s in train], int(hp["samples"]), seed)
        gmm = probmodel.fit_with_fallback(X, int(hp["components"]), seed=seed, **_em_kwargs(hp))
        V = np.array([probmodel.fisher_encode(gmm, s.features).v for s in train])
        svm = classify.svm_train_linear(V, [s.label for s in train], hp["C"])
        state = {"gmm": gmm.to_dict(), "svm": svm.to_dict()}
        return Fitted((gmm, svm), state, {"components": gmm.K})

    def predict(self, fitted, sample, hp):
        gmm, svm = fitted.model
        return classify.svm_predict_linear(svm, probmodel.fisher_encode(gmm, sample.features).v)


PIPELINES = {
    "nn_spd": NNPipeline("spd"),
    "nn_ls": NNPipeline("ls"),
    "svm_spd_poly": KernelSvmPipeline("spd_poly"),
    "svm_spd_rbf": KernelSvmPipeline("spd_rbf"),
    "svm_ls_poly": KernelSvmPipeline("ls_poly"),
    "svm_ls_rbf": KernelSvmPipeline("ls_rbf"),
    "ksr_spd": KsrPipeline("spd"),
    "ksr_ls": KsrPipeline("ls"),
    "gmm": GmmPipeline(),
    "fv": FvPipeline(),
}


# -- reports -----------------------------------------------------------------

@dataclass
class EvalReport:
    method: str
    hyperparameters: dict
    protocol: str
    seed: int
    labels: list
    folds: list                 # dicts: fold, video, true, pred
    fold_info: list             # dicts: fold, model_digest, psd_shift, ...
    perturbation: dict | None = None

    @property
    def confusion(self) -> np.ndarray:
        idx = {l: i for i, l in enumerate(self.labels)}
        M = np.zeros((len(self.labels), len(self.labels)), dtype=int)
        for row in self.folds:
            M[idx[row["true"]], idx[row["pred"]]] += 1
        return M

    @property
    def accuracy(self) -> float:
        M = self.confusion
        return float(np.trace(M) / M.sum()) if M.sum() else 0.0

    def to_dict(self) -> dict:
        return {"method": self.method, "hyperparameters": self.hyperparameters,
                "protocol": self.protocol, "seed": self.seed, "perturbation": self.perturbation,
                "labels": self.labels, "accuracy": self.accuracy,
                "confusion": self.confusion.tolist(), "folds": self.folds,
                "fold_info": self.fold_info}

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(obj["method"], obj["hyperparameters"], obj["protocol"], obj["seed"],
                   obj["labels"], obj["folds"], obj["fold_info"], obj.get("perturbation"))

    def write(self, path) -> None:
        """Write ``path`` (JSON) and a fold-level CSV next to it."""
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, default=float)
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "video", "true", "pred"])
            for row in self.folds:
                w.writerow([row["fold"], row["video"], row["true"], row["pred"]])


def write_robustness_data(reports, path) -> None:
    """gnuplot-style columns: perturbation value, accuracy."""
    with open(path, "w") as fh:
        fh.write("# kind value accuracy\n")
        for r in reports:
            p = r.perturbation or {"kind": "none", "scale_factor": 1.0, "shift_x": 0.0}
            value = p["scale_factor"] if p["kind"] == "scale" else p["shift_x"]
            fh.write(f"{p['kind']} {value:.6g} {r.accuracy:.6f}\n")


def load_report(path) -> EvalReport:
    with open(path) as fh:
        return EvalReport.from_dict(json.load(fh))


# -- protocols ---------------------------------------------------------------

def make_folds(manifest: DatasetManifest, protocol: str) -> list[list[int]]:
    if protocol == "per_video":
        return [[i] for i in range(len(manifest))]
    if protocol == "per_group":
        if any(e.group is None for e in manifest.entries):
            raise HarnessError("per_group protocol needs a group for every manifest entry")
        groups: dict = {}
        for i, e in enumerate(manifest.entries):
            groups.setdefault(e.group, []).append(i)
        return [groups[g] for g in sorted(groups)]
    raise HarnessError(f"unknown protocol {protocol!r}")


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _samples(manifest, cache, tau):
    out = []
    for e in manifest.entries:
        path = manifest.resolve(e)
        out.append(Sample(str(path), e.label, cache.get(path, tau)))
    return out


def _fit_fold(samples, test_idx, pipeline, hp, seed, fold):
    held = set(test_idx)
    train = [s for i, s in enumerate(samples) if i not in held]
    if len({s.label for s in train}) < 2:
        raise HarnessError(f"fold {fold}: training side has a single class")
    fitted = pipeline.fit(train, hp, fold_seed(seed, fold))
    info = {"fold": fold, "model_digest": fitted.digest()}
    info.update(fitted.info)
    return fitted, info


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def run_loo(manifest: DatasetManifest, method: MethodSpec, protocol: str = "per_video",
            seed: int = 0, cache: FeatureCache | None = None, workers: int = 1) -> EvalReport:
    """Leave-one-out evaluation; every model is fitted on the training side only."""
    return run_robustness(manifest, method, [None], protocol, seed, cache, workers)[0]


def run_robustness(manifest: DatasetManifest, method: MethodSpec, sweep, protocol="per_video",
                   seed: int = 0, cache: FeatureCache | None = None, workers: int = 1):
    """Train once per fold on clean videos, then test under each perturbation.

    ``None`` in ``sweep`` means the unperturbed test video.  Returns one
    report per sweep entry.
    """
    sweep = list(sweep)
    if not sweep:
        raise HarnessError("empty perturbation sweep")
    cache = cache or FeatureCache()
    hp = method.resolved()
    pipeline = PIPELINES[method.id]
    folds = make_folds(manifest, protocol)
    samples = _samples(manifest, cache, hp["tau"])

    def one_fold(args):
        fold, test_idx = args
        fitted, info = _fit_fold(samples, test_idx, pipeline, hp, seed, fold)
        preds = []
        for p in sweep:
            rows = []
            for i in test_idx:
                s = samples[i]
                if p is not None:
                    s = Sample(s.key, s.label, cache.get(s.key, hp["tau"], p))
                rows.append({"fold": fold, "video": manifest.entries[i].path,
                             "true": s.label, "pred": pipeline.predict(fitted, s, hp)})
            preds.append(rows)
        return preds, info

    results = _map(one_fold, list(enumerate(folds)), workers)
    labels = manifest.labels
    reports = []
    for j, p in enumerate(sweep):
        rows = [row for preds, _ in results for row in preds[j]]
        reports.append(EvalReport(method.id, _jsonable(hp), protocol, seed, labels, rows,
                                  [info for _, info in results],
                                  None if p is None else p.to_dict()))
    return reports


def _jsonable(hp):
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in hp.items()}


# -- hyperparameter sweeps ---------------------------------------------------

def expand_grid(grid) -> list[dict]:
    """A dict of lists becomes its cartesian product (key order kept);
    a list of dicts is used as is."""
    if isinstance(grid, dict):
        keys = list(grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    return [dict(g) for g in grid]


def default_grid(method_id: str, d: int = FEATURE_DIM) -> list[dict]:
    """The parameter grid the benchmark iterates for ``method_id``."""
    ms = list(range(1, d + 1))
    if method_id == "nn_ls":
        return [{"m": m} for m in ms]
    if method_id == "svm_spd_poly":
        return [{"gamma_p": s.gamma_p, "exponent": s.exponent} for s in kernels.kernel_grid("spd_poly", d)]
    if method_id == "svm_spd_rbf":
        return [{"gamma_r": g} for g in kernels.spd_rbf_gamma_grid(d)]
    if method_id == "svm_ls_poly":
        return [{"m": m, "gamma_p": g} for m in ms for g in kernels.gamma_p_grid(d)]
    if method_id == "svm_ls_rbf":
        return [{"m": m, "gamma_r": g} for m in ms for g in kernels.ls_rbf_gamma_grid(d)]
    return [{}]


def sweep_hyperparameters(manifest, method_id: str, grid, protocol="per_video", seed=0,
                          cache: FeatureCache | None = None, workers: int = 1):
    """Evaluate every grid point; best by accuracy, ties to the first in grid order.

    Returns ``(best_report, table)`` where ``table`` lists each grid point
    with its accuracy.
    """
    points = expand_grid(grid)
    if not points:
        raise HarnessError("empty hyperparameter grid")
    cache = cache or FeatureCache()
    best, table = None, []
    for hp in points:
        rep = run_loo(manifest, MethodSpec(method_id, hp), protocol, seed, cache, workers)
        table.append({"hyperparameters": hp, "accuracy": rep.accuracy})
        if best is None or rep.accuracy > best.accuracy:
            best = rep
    log.info("best %s accuracy %.4f with %s", method_id, best.accuracy, best.hyperparameters)
    return best, table
