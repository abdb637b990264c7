"""Parallel / non-parallel decision functions and their evaluation."""

import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConvergenceError, FittingError, PartitioningError, UsageError
from .numkit import load_arrays, save_arrays

STEP = 0.005
STEP_WIDTH = 0.01


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_labels(y):
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise FittingError("labels must be a 1-D array of 0/1")
    if y.min() == y.max():
        raise FittingError("need both classes to fit a classifier")
    return y


def _as_2d(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise FittingError("features contain NaN or infinite values")
    return X


# ---------------------------------------------------------------------------
# Threshold
# ---------------------------------------------------------------------------


@dataclass
class ThresholdModel:
    t: float
    accuracy: float
    degenerate: bool = False
    kind: str = "thrs"

    n_features = 1

    def decision(self, sims):
        return (np.asarray(sims, dtype=np.float64).reshape(-1) >= self.t).astype(np.int64)

    def predict_proba(self, X):
        sims = np.asarray(X, dtype=np.float64)
        if sims.ndim == 2:
            if sims.shape[1] != 1:
                raise UsageError(f"threshold model takes 1 feature, got {sims.shape[1]}")
            sims = sims[:, 0]
        return _sigmoid((sims - self.t) / STEP_WIDTH)

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise UsageError(f"threshold model takes 1 feature, got {X.shape[1]}")
            X = X[:, 0]
        return self.decision(X)

    def to_dict(self):
        return {"kind": "thrs", "t": self.t, "accuracy": self.accuracy, "degenerate": self.degenerate}


def threshold_grid(sims, y):
    pos = sims[y == 1]
    neg = sims[y == 0]
    lo_pos = float(pos.min())
    hi_neg = float(neg.max())
    lo, hi = min(lo_pos, hi_neg), max(lo_pos, hi_neg)
    count = int(math.floor((hi - lo) / STEP + 1e-9)) + 1
    return lo + STEP * np.arange(count, dtype=np.float64)


def threshold_fit(sims, y):
    """Scan thresholds between the lowest positive and highest negative similarity."""
    sims = np.asarray(sims, dtype=np.float64).reshape(-1)
    y = _check_labels(y)
    if sims.shape[0] != y.shape[0]:
        raise UsageError("similarities and labels differ in length")
    grid = threshold_grid(sims, y)
    correct = _kernels.threshold_correct(np.sort(sims[y == 1]), np.sort(sims[y == 0]), grid)
    k = int(np.argmax(correct))
    acc = float(correct[k]) / len(y)
    degenerate = acc <= 0.5
    if degenerate:
        warnings.warn(f"best threshold accuracy is only {acc:.3f}; classes look inverted", RuntimeWarning)
    return ThresholdModel(float(grid[k]), acc, degenerate)


# ---------------------------------------------------------------------------
# Gradient boosting on binomial deviance
# ---------------------------------------------------------------------------


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            rows = np.nonzero(inner)[0]
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def to_dict(self, k=0):
        if self.feature[k] < 0:
            return {"value": float(self.value[k])}
        return {"feature": int(self.feature[k]), "threshold": float(self.threshold[k]),
                "left": self.to_dict(self.left[k]), "right": self.to_dict(self.right[k])}

    @classmethod
    def from_dict(cls, d):
        feature, threshold, left, right, value = [], [], [], [], []

        def add(node):
            k = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "value" in node:
                value[k] = float(node["value"])
            else:
                feature[k] = int(node["feature"])
                threshold[k] = float(node["threshold"])
                left[k] = add(node["left"])
                right[k] = add(node["right"])
            return k

        add(d)
        return cls(np.asarray(feature), np.asarray(threshold), np.asarray(left),
                   np.asarray(right), np.asarray(value))


def fit_tree(X, residual, hess, depth, min_leaf=1):
    """Least-squares tree on ``residual``; leaves take one Newton step."""
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, level):
        k = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        f, thr, gain = (-1, 0.0, 0.0)
        if level < depth and idx.shape[0] >= 2 * min_leaf:
            f, thr, gain = _kernels.best_split(X, residual, idx, min_leaf)
        if f < 0 or gain <= 1e-12:
            num = residual[idx].sum()
            den = hess[idx].sum()
            value[k] = float(num / den) if den > 1e-12 else 0.0
            return k
        mask = X[idx, f] <= thr
        feature[k] = int(f)
        threshold[k] = float(thr)
        left[k] = grow(idx[mask], level + 1)
        right[k] = grow(idx[~mask], level + 1)
        return k

    grow(np.arange(X.shape[0], dtype=np.int64), 0)
    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold), np.asarray(left, dtype=np.int64),
                np.asarray(right, dtype=np.int64), np.asarray(value))


def deviance(y, F):
    """Mean binomial deviance, 2 * mean(log(1 + e^F) - y F)."""
    return float(2.0 * np.mean(np.logaddexp(0.0, F) - y * F))


@dataclass
class GbModel:
    f0: float
    shrinkage: float
    trees: list = field(default_factory=list)
    n_features: int = 0
    train_deviance: list = field(default_factory=list)
    kind: str = "gb"

    def raw(self, X):
        X = _as_2d(X)
        if X.shape[1] != self.n_features:
            raise UsageError(f"model expects {self.n_features} features, got {X.shape[1]}")
        F = np.full(X.shape[0], self.f0)
        for tree in self.trees:
            F += self.shrinkage * tree.apply(X)
        return F

    def predict_proba(self, X):
        return _sigmoid(self.raw(X))

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def to_dict(self):
        return {"kind": "gb", "f0": self.f0, "shrinkage": self.shrinkage, "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}


def gb_fit(X, y, rounds=100, depth=3, shrinkage=0.1, seed=0, min_leaf=1):
    X = _as_2d(X)
    y = _check_labels(y)
    if not 0 < shrinkage <= 1:
        raise FittingError("shrinkage must lie in (0, 1]")
    yf = y.astype(np.float64)
    p0 = yf.mean()
    f0 = math.log(p0 / (1.0 - p0))
    F = np.full(len(y), f0)
    model = GbModel(f0, shrinkage, [], X.shape[1], [deviance(yf, F)])
    for _ in range(rounds):
        p = _sigmoid(F)
        residual = yf - p
        hess = p * (1.0 - p)
        tree = fit_tree(X, residual, hess, depth, min_leaf)
        model.trees.append(tree)
        F = F + shrinkage * tree.apply(X)
        model.train_deviance.append(deviance(yf, F))
    return model


# ---------------------------------------------------------------------------
# RBF SVM with Platt scaling
# ---------------------------------------------------------------------------


def rbf_kernel(A, B, gamma):
    sa = np.sum(A * A, axis=1)
    sb = np.sum(B * B, axis=1)
    d2 = np.maximum(sa[:, None] + sb[None, :] - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * d2)


def platt_fit(f, y, max_iter=100):
    """Sigmoid calibration P(y=1|f) = 1 / (1 + exp(A f + B)), Newton with backtracking."""
    f = np.asarray(f, dtype=np.float64)
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y == 1, hi, lo)
    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    sigma = 1e-12

    def objective(A, B):
        fApB = f * A + B
        return float(np.sum(np.where(fApB >= 0, t * fApB + np.log1p(np.exp(-np.abs(fApB))),
                                     (t - 1.0) * fApB + np.log1p(np.exp(-np.abs(fApB))))))

    fval = objective(A, B)
    for _ in range(max_iter):
        fApB = f * A + B
        p = np.where(fApB >= 0, np.exp(-np.abs(fApB)) / (1.0 + np.exp(-np.abs(fApB))),
                     1.0 / (1.0 + np.exp(-np.abs(fApB))))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    return float(A), float(B)


@dataclass
class SvmModel:
    support: np.ndarray
    coef: np.ndarray
    bias: float
    gamma: float
    platt: tuple
    mean: np.ndarray
    scale: np.ndarray
    C: float = 1.0
    iterations: int = 0
    kind: str = "svm"

    @property
    def n_features(self):
        return self.mean.shape[0]

    def _standardize(self, X):
        X = _as_2d(X)
        if X.shape[1] != self.n_features:
            raise UsageError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def decision_function(self, X):
        Z = self._standardize(X)
        if self.support.shape[0] == 0:
            return np.full(Z.shape[0], self.bias)
        return rbf_kernel(Z, self.support, self.gamma) @ self.coef + self.bias

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)

    def predict_proba(self, X):
        A, B = self.platt
        return _sigmoid(-(A * self.decision_function(X) + B))

    def save(self, path):
        arrays = {"support": self.support, "coef": self.coef, "mean": self.mean, "scale": self.scale}
        meta = {"kind": "svm", "bias": self.bias, "gamma": self.gamma, "platt": list(self.platt),
                "C": self.C, "iterations": self.iterations}
        save_arrays(path, arrays, precision="f64", meta=meta)

    @classmethod
    def load(cls, path):
        arrays, header = load_arrays(path)
        m = header["meta"]
        return cls(arrays["support"], arrays["coef"], m["bias"], m["gamma"], tuple(m["platt"]),
                   arrays["mean"], arrays["scale"], m["C"], m["iterations"])


def svm_fit(X, y, C=1.0, gamma=None, seed=0, tol=1e-3, max_iter=None):
    """Standardise, solve the dual by SMO, then calibrate with Platt scaling.

    ``gamma`` defaults to 1 / (n_features * variance) of the standardised data.
    The solver is deterministic, so ``seed`` only matters for API symmetry.
    """
    X = _as_2d(X)
    y = _check_labels(y)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Z = (X - mean) / scale
    if gamma is None:
        var = Z.var()
        gamma = 1.0 / (Z.shape[1] * var) if var > 1e-12 else 1.0
    ys = np.where(y == 1, 1.0, -1.0)
    K = rbf_kernel(Z, Z, gamma)
    max_iter = max_iter or max(100_000, 100 * len(y))
    alpha, rho, it, converged = _kernels.smo_solve(K, ys, float(C), float(tol), int(max_iter))
    if not converged:
        raise ConvergenceError("SMO did not reach the KKT tolerance", it)
    sv = alpha > 0
    coef = alpha[sv] * ys[sv]
    bias = -float(rho)
    dec = K[:, sv] @ coef + bias
    platt = platt_fit(dec, y)
    return SvmModel(Z[sv].copy(), coef, bias, float(gamma), platt, mean, scale, float(C), int(it))


# ---------------------------------------------------------------------------
# Soft voting
# ---------------------------------------------------------------------------


@dataclass
class EnsembleModel:
    members: list
    kind: str = "ens"

    @property
    def n_features(self):
        return self.members[0].n_features

    def predict_proba(self, X):
        probs = [m.predict_proba(X) for m in self.members]
        return np.mean(probs, axis=0)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def predict_proba(model, x):
    return model.predict_proba(x)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def prf1(pred, gold):
    pred = np.asarray(pred).astype(np.int64).reshape(-1)
    gold = np.asarray(gold).astype(np.int64).reshape(-1)
    if pred.shape != gold.shape:
        raise UsageError(f"predictions ({pred.shape[0]}) and gold ({gold.shape[0]}) differ in length")
    tp = int(np.sum((pred == 1) & (gold == 1)))
    fp = int(np.sum((pred == 1) & (gold == 0)))
    fn = int(np.sum((pred == 0) & (gold == 1)))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def accuracy(pred, gold):
    pred = np.asarray(pred).reshape(-1)
    gold = np.asarray(gold).reshape(-1)
    return float(np.mean(pred == gold))


def stratified_folds(y, k, seed):
    y = np.asarray(y, dtype=np.int64)
    if k < 2:
        raise PartitioningError("k must be at least 2")
    if k > len(y):
        raise PartitioningError(f"k={k} exceeds the {len(y)} available rows")
    rng = np.random.Generator(np.random.PCG64(seed))
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for label in np.unique(y):
        members = np.nonzero(y == label)[0]
        if len(members) < 2:
            raise PartitioningError(f"class {label} has {len(members)} row(s); stratification needs 2")
        members = members[rng.permutation(len(members))]
        fold[members] = (offset + np.arange(len(members))) % k
        offset += len(members)
    return fold


def kfold_cv(X, y, k, fit_fn, seed=0):
    """Stratified k-fold; ``fit_fn(X, y)`` returns a model with ``predict``."""
    X = _as_2d(X)
    y = np.asarray(y, dtype=np.int64)
    fold = stratified_folds(y, k, seed)
    folds = []
    for f in range(k):
        test = fold == f
        model = fit_fn(X[~test], y[~test])
        pred = model.predict(X[test])
        p, r, f1 = prf1(pred, y[test])
        folds.append({"fold": f, "n": int(test.sum()), "accuracy": accuracy(pred, y[test]),
                      "P": p, "R": r, "F1": f1})
    mean = {key: float(np.mean([fd[key] for fd in folds])) for key in ("accuracy", "P", "R", "F1")}
    return {"folds": folds, "mean": mean, "assignment": fold}


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def model_to_json(model):
    if model.kind == "thrs":
        return model.to_dict()
    if model.kind == "gb":
        return model.to_dict()
    if model.kind == "ens":
        return {"kind": "ens", "members": [model_to_json(m) for m in model.members]}
    raise UsageError(f"{model.kind} models are stored in the binary container")


def model_from_json(d, svm_loader=None):
    kind = d["kind"]
    if kind == "thrs":
        return ThresholdModel(float(d["t"]), float(d["accuracy"]), bool(d.get("degenerate", False)))
    if kind == "gb":
        return GbModel(float(d["f0"]), float(d["shrinkage"]), [Tree.from_dict(t) for t in d["trees"]],
                       int(d["n_features"]))
    if kind == "svm":
        if svm_loader is None:
            raise UsageError("svm member needs a loader for its binary container")
        return svm_loader(d["path"])
    if kind == "ens":
        return EnsembleModel([model_from_json(m, svm_loader) for m in d["members"]])
    raise UsageError(f"unknown model kind {kind!r}")


def save_model(model, path):
    """JSON for thrs/gb/ens, BTF1 container for svm (ensemble members alongside)."""
    if model.kind == "svm":
        model.save(path)
        return
    doc = model_to_json(model) if model.kind != "ens" else _ens_doc(model, path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _ens_doc(model, path):
    members = []
    for k, m in enumerate(model.members):
        if m.kind == "svm":
            sv_path = f"{path}.member{k}.btf"
            m.save(sv_path)
            # relative, so a run directory can be moved or compared byte for byte
            members.append({"kind": "svm", "path": os.path.basename(sv_path)})
        else:
            members.append(model_to_json(m))
    return {"kind": "ens", "members": members}


def load_model(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"BTF1":
        return SvmModel.load(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh), lambda p: SvmModel.load(os.path.join(base, p)))
