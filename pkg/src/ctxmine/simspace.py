"""Sentence embeddings from context vectors and the statistics built on them."""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (EmptyInputError, ParameterError, UndefinedSimilarityError, UsageError)

CATEGORIES = ("trad", "semrel", "unrel", "tagpair")


@dataclass
class SentenceEmbedding:
    vector: np.ndarray
    sentence_id: str = ""
    language: str = ""
    tag: str = None
    checkpoint: str = ""


def sentence_embedding(ctx, pooling="sum", sentence_id="", checkpoint=""):
    """Column-wise sum of the context rows (``pooling='mean'`` divides by length)."""
    rows = getattr(ctx, "rows", ctx)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyInputError("cannot embed an empty context matrix")
    if pooling == "sum":
        vec = rows.sum(axis=0)
    elif pooling == "mean":
        vec = rows.mean(axis=0)
    else:
        raise ParameterError(f"unknown pooling {pooling!r}")
    return SentenceEmbedding(vec, sentence_id, getattr(ctx, "source_lang", ""), getattr(ctx, "tag", None), checkpoint)


def _vec(x):
    return np.asarray(getattr(x, "vector", x), dtype=np.float64)


def cosine(a, b):
    a, b = _vec(a), _vec(b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedSimilarityError("cosine undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class SimStats:
    mean: float
    std: float
    count: int
    category: str

    def to_dict(self):
        return {"category": self.category, "mean": self.mean, "std": self.std, "count": self.count}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def stats_from_values(sims, category):
    sims = np.asarray(sims, dtype=np.float64)
    if sims.shape[0] < 2:
        raise EmptyInputError("need at least two similarities for statistics")
    if category not in CATEGORIES:
        raise UsageError(f"unknown category {category!r}")
    return SimStats(float(sims.mean()), float(sims.std()), int(sims.shape[0]), category)


def sim_stats(pairs, category):
    """Mean and population standard deviation of pairwise cosines."""
    return stats_from_values([cosine(a, b) for a, b in pairs], category)


def delta_tr_ur(trad, unrel):
    if trad.category != "trad" or unrel.category != "unrel":
        raise UsageError(f"expected trad and unrel statistics, got {trad.category} and {unrel.category}")
    return trad.mean - unrel.mean, math.sqrt(trad.std ** 2 + unrel.std ** 2)


def tag_pair_similarity(model, sentence, lang, tags, pooling="sum"):
    li, lj = tags
    a = sentence_embedding(model.extract_context(sentence, lang, li), pooling)
    b = sentence_embedding(model.extract_context(sentence, lang, lj), pooling)
    return cosine(a, b)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise UsageError("pearson needs two equal-length 1-D sequences")
    if x.shape[0] < 2:
        raise UsageError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise UndefinedSimilarityError("correlation undefined for a constant sequence")
    return float(np.clip(dx @ dy / (sx * sy), -1.0, 1.0))


# ---------------------------------------------------------------------------
# 2-D projections
# ---------------------------------------------------------------------------


def pca_2d(X):
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = np.zeros((2, X.shape[1]))
    comps[: min(2, vt.shape[0])] = vt[:2]
    for k in range(2):
        j = int(np.argmax(np.abs(comps[k])))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    return Xc @ comps.T


def _binary_search_p(D, perplexity, tol=1e-5, max_tries=50):
    n = D.shape[0]
    P = np.zeros((n, n))
    target = math.log(perplexity)
    for i in range(n):
        beta = 1.0
        lo, hi = -np.inf, np.inf
        d = np.delete(D[i], i)
        d = d - d.min()
        for _ in range(max_tries):
            w = np.exp(-d * beta)
            s = w.sum()
            H = math.log(s) + beta * float(d @ w) / s
            diff = H - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -np.inf else (beta + lo) / 2
        P[i, np.arange(n) != i] = w / s
    return P


def tsne(X, perplexity=None, n_iter=1000, seed=0, exaggeration=4.0, exaggeration_iters=100,
         learning_rate=200.0, return_history=False):
    """Exact O(n^2) t-SNE.

    After the exaggeration phase a step is only accepted when it lowers the
    KL objective; rejected steps halve the learning rate and reset momentum.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise ParameterError("t-SNE needs at least 3 points")
    limit = (n - 1) / 3.0
    if perplexity is None:
        perplexity = min(30.0, limit)
    if perplexity > limit or perplexity <= 0:
        raise ParameterError(f"perplexity {perplexity} outside (0, {limit:.3f}] for {n} points")
    sq = np.sum(X * X, axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    P = _binary_search_p(D, perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)
    rng = np.random.Generator(np.random.PCG64(seed))
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = []
    lr = learning_rate
    kl = None
    for it in range(n_iter):
        early = it < exaggeration_iters
        Pe = P * exaggeration if early else P
        grad, kl_now = _kernels.tsne_grad(Y, Pe)
        if not early:
            if kl is not None and kl_now > kl:
                # reject the previous step
                Y = Y_prev
                velocity[:] = 0.0
                gains[:] = 1.0
                lr *= 0.5
                grad, kl_now = _kernels.tsne_grad(Y, P)
            kl = kl_now
            history.append(kl)
        momentum = 0.5 if it < 250 else 0.8
        same = np.sign(grad) == np.sign(velocity)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        Y_prev = Y.copy()
        velocity = momentum * velocity - lr * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
    if not early:
        _, final = _kernels.tsne_grad(Y, P)
        if final > kl:
            Y = Y_prev
        else:
            history.append(final)
    if return_history:
        return Y, history
    return Y


def project_2d(embeddings, method="pca", perplexity=None, seed=0, n_iter=1000):
    X = np.stack([_vec(e) for e in embeddings])
    if X.shape[0] < 3:
        raise ParameterError("projection needs at least 3 embeddings")
    if method == "pca":
        return pca_2d(X)
    if method == "tsne":
        return tsne(X, perplexity, n_iter=n_iter, seed=seed)
    raise ParameterError(f"unknown projection method {method!r}")


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_embeddings(embs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in embs:
            vals = ",".join(repr(float(v)) for v in e.vector)
            fh.write(f"{e.sentence_id}\t{e.language}\t{e.tag or ''}\t{vals}\n")


def read_embeddings(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            sid, lang, tag, vals = line.rstrip("\n").split("\t")
            vec = np.asarray([float(v) for v in vals.split(",")], dtype=np.float64)
            out.append(SentenceEmbedding(vec, sid, lang, tag or None))
    return out


def write_projection(ids, points, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, (x, y) in zip(ids, points):
            fh.write(f"{sid}\t{float(x)!r}\t{float(y)!r}\n")
