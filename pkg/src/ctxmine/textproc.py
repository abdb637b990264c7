"""Tokenisation, surface normalisation, BPE and vocabularies."""

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigurationError, ParseError, VocabularyError

PAD = "<pad>"
UNK = "<unk>"
EOS = "<eos>"
CONTINUATION = "@@"
MAX_LEN = 50

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass
class TokenSeq:
    tokens: list
    language: str = ""
    tag: str = None

    def __len__(self):
        return len(self.tokens)


def tag_token(lang):
    return f"<2{lang}>"


def tokenize(text, language=""):
    """Split on whitespace and peel punctuation off into separate tokens."""
    return TokenSeq(_TOKEN_RE.findall(text), language)


def normalize_for_surface(text):
    decomposed = unicodedata.normalize("NFD", text)
    kept = []
    for ch in decomposed:
        cat = unicodedata.category(ch)
        if cat == "Mn" or cat.startswith("P"):
            continue
        kept.append(ch)
    out = unicodedata.normalize("NFC", "".join(kept)).lower()
    return " ".join(out.split())


# ---------------------------------------------------------------------------
# BPE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BpeModel:
    merges: tuple = ()

    @property
    def num_merges(self):
        return len(self.merges)

    def ranks(self):
        return {pair: i for i, pair in enumerate(self.merges)}


def _merge_word(symbols, pair, joined):
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_learn(corpus, num_merges):
    """Greedy merge learning over word-internal symbol pairs.

    Words end at their last character, so no merge ever crosses or absorbs the
    word boundary. Ties go to the lexicographically smallest pair.
    """
    counts = Counter()
    for seq in corpus:
        tokens = seq.tokens if isinstance(seq, TokenSeq) else seq
        counts.update(tokens)
    words = {tuple(w): c for w, c in counts.items() if w}
    merges = []
    while len(merges) < num_merges:
        pairs = Counter()
        for symbols, c in words.items():
            for a, b in zip(symbols, symbols[1:]):
                pairs[a, b] += c
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        joined = best[0] + best[1]
        merged = {}
        for symbols, c in words.items():
            if best[0] in symbols:
                symbols = _merge_word(symbols, best, joined)
            merged[symbols] = merged.get(symbols, 0) + c
        words = merged
    return BpeModel(tuple(merges))


def segment_token(model, token, ranks=None):
    """Split one token into subword units; all but the last carry ``@@``."""
    if not token:
        return []
    ranks = model.ranks() if ranks is None else ranks
    symbols = tuple(token)
    while len(symbols) > 1:
        candidates = [(ranks[p], p) for p in zip(symbols, symbols[1:]) if p in ranks]
        if not candidates:
            break
        _, pair = min(candidates)
        symbols = _merge_word(symbols, pair, pair[0] + pair[1])
    units = list(symbols)
    return [u + CONTINUATION for u in units[:-1]] + units[-1:]


def bpe_apply(model, seq):
    ranks = model.ranks()
    out = []
    for tok in seq.tokens:
        out.extend(segment_token(model, tok, ranks))
    return TokenSeq(out, seq.language, seq.tag)


def desegment_units(units):
    """Inverse of :func:`segment_token` for the units of a single token."""
    if not units:
        return ""
    body = [u[: -len(CONTINUATION)] for u in units[:-1]]
    return "".join(body) + units[-1]


def desegment(tokens):
    """Rejoin a flat stream of subword units into words."""
    words = []
    current = []
    for u in tokens:
        current.append(u)
        if not u.endswith(CONTINUATION):
            words.append(desegment_units(current))
            current = []
    if current:
        words.append("".join(u[: -len(CONTINUATION)] for u in current))
    return words


def write_bpe(model, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in model.merges:
            fh.write(f"{a} {b}\n")


def read_bpe(path):
    merges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise ParseError("expected two space-separated symbols", path, lineno)
            merges.append((parts[0], parts[1]))
    return BpeModel(tuple(merges))


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """Token/id bijection. Reserved tokens and language tags take the lowest ids."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:3] != [PAD, UNK, EOS]:
            raise ConfigurationError("vocabulary must start with <pad>, <unk>, <eos>")
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("vocabulary contains duplicate tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        self.languages = [t[2:-1] for t in tokens if t.startswith("<2") and t.endswith(">")]

    @classmethod
    def build(cls, corpus, languages, max_size=None):
        """Most frequent units first, ties broken alphabetically."""
        reserved = [PAD, UNK, EOS] + [tag_token(l) for l in sorted(languages)]
        counts = Counter()
        for seq in corpus:
            counts.update(seq.tokens if isinstance(seq, TokenSeq) else seq)
        for r in reserved:
            counts.pop(r, None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        room = None if max_size is None else max_size - len(reserved)
        if room is not None and room < 0:
            raise ConfigurationError(f"max vocabulary size {max_size} below reserved count {len(reserved)}")
        ranked = ranked if room is None else ranked[:room]
        return cls(reserved + [t for t, _ in ranked])

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return 1

    @property
    def eos_id(self):
        return 2

    def tag_id(self, lang):
        tok = tag_token(lang)
        if tok not in self.stoi:
            raise ConfigurationError(f"unknown target language {lang!r}; known: {self.languages}")
        return self.stoi[tok]

    def id(self, token):
        return self.stoi.get(token, self.unk_id)

    def token(self, idx):
        if not 0 <= idx < len(self.itos):
            raise VocabularyError(f"id {idx} outside vocabulary of size {len(self.itos)}")
        return self.itos[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self.itos:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def encode(vocab, seq, target_lang=None):
    ids = []
    if target_lang is not None:
        ids.append(vocab.tag_id(target_lang))
    tokens = seq.tokens if isinstance(seq, TokenSeq) else seq
    ids.extend(vocab.id(t) for t in tokens)
    ids.append(vocab.eos_id)
    return ids


def decode(vocab, ids):
    """Map ids back to tokens, dropping tags, padding and the final <eos>."""
    out = []
    for i in ids:
        tok = vocab.token(i)
        if tok == EOS:
            break
        if tok == PAD or (tok.startswith("<2") and tok.endswith(">")):
            continue
        out.append(tok)
    return out
