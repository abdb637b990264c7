"""Surface similarity features for candidate sentence pairs."""

import math
from collections import Counter
from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import EvaluationError, FittingError
from .textproc import normalize_for_surface, tokenize

NGRAM_ORDERS = (2, 3, 4, 5)
PREFIX_LEN = 4
MIN_PAIRS = 100


def _cosine_counts(a, b):
    if not a or not b:
        return 0.0
    if len(a) > len(b):
        a, b = b, a
    dot = sum(c * b[k] for k, c in a.items() if k in b)
    if dot == 0:
        return 0.0
    na = math.sqrt(sum(c * c for c in a.values()))
    nb = math.sqrt(sum(c * c for c in b.values()))
    return min(1.0, dot / (na * nb))


def ngram_profile(text, orders=NGRAM_ORDERS):
    s = normalize_for_surface(text).replace(" ", "")
    prof = Counter()
    for n in orders:
        for i in range(len(s) - n + 1):
            prof[s[i:i + n]] += 1
    return prof


def char_ngram_similarity(s, t):
    return _cosine_counts(ngram_profile(s), ngram_profile(t))


def cognate_profile(tokens):
    prof = Counter()
    for tok in tokens:
        tok = normalize_for_surface(tok)
        if not tok:
            continue
        alpha = tok.isalpha()
        if alpha and len(tok) < PREFIX_LEN:
            continue
        prof[tok[:PREFIX_LEN] if alpha else tok] += 1
    return prof


def pseudo_cognate_similarity(s, t):
    """Cosine of 4-character prefix counts after dropping short alphabetic tokens.

    Arguments are token lists, :class:`TokenSeq` objects or raw strings.
    """
    return _cosine_counts(cognate_profile(_tokens(s)), cognate_profile(_tokens(t)))


def _tokens(x):
    if isinstance(x, str):
        return tokenize(x).tokens
    return getattr(x, "tokens", x)


def _chars(text):
    return len(text.replace("\n", ""))


def count_features(s, t):
    return len(tokenize(s).tokens), len(tokenize(t).tokens), _chars(s), _chars(t)


@dataclass(frozen=True)
class LengthModel:
    mu: float
    sigma: float
    pair: tuple = ("", "")

    def to_dict(self):
        return {"mu": self.mu, "sigma": self.sigma, "pair": list(self.pair)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mu"]), float(d["sigma"]), tuple(d.get("pair", ("", ""))))


def fit_length_model(pairs, pair=("", "")):
    pairs = list(pairs)
    if len(pairs) < MIN_PAIRS:
        raise FittingError(f"length model needs at least {MIN_PAIRS} pairs, got {len(pairs)}")
    ratios = []
    for k, (s, t) in enumerate(pairs):
        n = _chars(s)
        if n == 0:
            raise FittingError(f"zero-length source sentence at pair {k}")
        ratios.append(_chars(t) / n)
    ratios = np.asarray(ratios, dtype=np.float64)
    mu = float(ratios.mean())
    sigma = float(ratios.std())
    if not sigma > 1e-12:
        raise FittingError("degenerate length model: all length ratios are identical")
    return LengthModel(mu, sigma, tuple(pair))


def length_factor(model, s, t):
    n = _chars(s)
    if n == 0:
        raise EvaluationError("length factor undefined for an empty source sentence")
    z = (_chars(t) / n - model.mu) / model.sigma
    return math.exp(-0.5 * z * z)


@dataclass(frozen=True)
class PairFeatures:
    ngram_cos: float
    cognate_cos: float
    src_tokens: int
    tgt_tokens: int
    src_chars: int
    tgt_chars: int
    length_factor: float
    ctx_cos: float = None

    @property
    def scenario(self):
        return "comp" if self.ctx_cos is None else "all"

    def as_vector(self):
        vals = astuple(self)
        return np.asarray(vals if self.ctx_cos is not None else vals[:-1], dtype=np.float64)


COMP_COLUMNS = tuple(f.name for f in fields(PairFeatures))[:-1]
ALL_COLUMNS = COMP_COLUMNS + ("ctx_cos",)


def assemble(pair, length_model, ctx_cos=None):
    s, t = pair
    counts = count_features(s, t)
    return PairFeatures(
        char_ngram_similarity(s, t),
        pseudo_cognate_similarity(s, t),
        *counts,
        length_factor(length_model, s, t),
        None if ctx_cos is None else float(ctx_cos),
    )


def write_features(rows, path, ids=None, labels=None):
    """TSV dump. ``rows`` are PairFeatures of a single scenario."""
    rows = list(rows)
    cols = ALL_COLUMNS if rows and rows[0].ctx_cos is not None else COMP_COLUMNS
    head = ["src_id", "tgt_id", "label", *cols]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(head) + "\n")
        for k, r in enumerate(rows):
            src_id, tgt_id = ids[k] if ids is not None else ("", "")
            label = "" if labels is None else str(labels[k])
            vals = [repr(float(v)) if isinstance(v, float) else str(v) for v in astuple(r)[: len(cols)]]
            fh.write("\t".join([src_id, tgt_id, label, *vals]) + "\n")


def read_features(path):
    """Returns (ids, labels, matrix, columns)."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().rstrip("\n").split("\t")
        cols = head[3:]
        ids, labels, rows = [], [], []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ids.append((parts[0], parts[1]))
            labels.append(int(parts[2]) if parts[2] != "" else -1)
            rows.append([float(v) for v in parts[3:]])
    return ids, np.asarray(labels, dtype=np.int64), np.asarray(rows, dtype=np.float64).reshape(len(rows), len(cols)), cols
