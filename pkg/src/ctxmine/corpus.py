"""BUCC-style corpora, balanced pair sets, splits and a synthetic language family."""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrityError, ParseError, SamplingError

# Disjoint letter sets so different synthetic languages never share a character.
_ALPHABETS = ("bcdfg", "hjklm", "npqrs", "tvwxz", "aeiou")


@dataclass
class MonoCorpus:
    language: str
    records: list = field(default_factory=list)

    def __post_init__(self):
        self._index = {}
        for k, (sid, _) in enumerate(self.records):
            if sid in self._index:
                raise ParseError(f"duplicate sentence id {sid!r}")
            self._index[sid] = k

    def __len__(self):
        return len(self.records)

    def __contains__(self, sid):
        return sid in self._index

    def text(self, sid):
        return self.records[self._index[sid]][1]

    @property
    def ids(self):
        return [sid for sid, _ in self.records]


@dataclass
class GoldPairs:
    pairs: list = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.pairs)) != len(self.pairs):
            raise IntegrityError("duplicate gold pair")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass(frozen=True)
class LabeledPair:
    src_id: str
    tgt_id: str
    label: int


# ---------------------------------------------------------------------------
# BUCC format
# ---------------------------------------------------------------------------


def _read_tsv(path, ncols):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != ncols or not all(parts[:1]):
                raise ParseError(f"expected {ncols} tab-separated fields", path, lineno)
            rows.append((lineno, parts))
    return rows


def read_mono(path, language=None):
    records = []
    seen = set()
    for lineno, (sid, text) in _read_tsv(path, 2):
        if sid in seen:
            raise ParseError(f"duplicate sentence id {sid!r}", path, lineno)
        seen.add(sid)
        records.append((sid, text))
    if language is None:
        language = records[0][0].split("-", 1)[0] if records else ""
    return MonoCorpus(language, records)


def read_gold(path):
    return GoldPairs([(a, b) for _, (a, b) in _read_tsv(path, 2)])


def read_bucc(src_path, tgt_path, gold_path=None):
    src = read_mono(src_path)
    tgt = read_mono(tgt_path)
    gold = None
    if gold_path is not None:
        gold = read_gold(gold_path)
        check_gold(gold, src, tgt)
    return (src, tgt), gold


def check_gold(gold, src, tgt):
    for a, b in gold:
        if a not in src:
            raise IntegrityError(f"gold id {a!r} not found in {src.language} corpus")
        if b not in tgt:
            raise IntegrityError(f"gold id {b!r} not found in {tgt.language} corpus")


def write_mono(corpus, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, text in corpus.records:
            fh.write(f"{sid}\t{text}\n")


def write_gold(gold, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in gold:
            fh.write(f"{a}\t{b}\n")


def write_bucc(corpora, gold, src_path, tgt_path, gold_path=None):
    write_mono(corpora[0], src_path)
    write_mono(corpora[1], tgt_path)
    if gold is not None and gold_path is not None:
        write_gold(gold, gold_path)


def write_pairs(pairs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("src_id\ttgt_id\tlabel\n")
        for p in pairs:
            fh.write(f"{p.src_id}\t{p.tgt_id}\t{p.label}\n")


def read_pairs(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["src_id", "tgt_id"]:
            raise ParseError("pair file must start with a src_id/tgt_id header", path, 1)
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                raise ParseError("expected at least two fields", path, lineno)
            label = int(parts[2]) if len(parts) > 2 and parts[2] != "" else -1
            out.append(LabeledPair(parts[0], parts[1], label))
    return out


# ---------------------------------------------------------------------------
# Pair sets and splits
# ---------------------------------------------------------------------------


def build_balanced(gold, corpora, seed):
    """Gold pairs plus as many uniformly drawn non-gold cross pairs."""
    src, tgt = corpora
    check_gold(gold, src, tgt)
    gold_set = set(gold.pairs)
    n_pos = len(gold_set)
    available = len(src) * len(tgt) - n_pos
    if available < n_pos:
        raise SamplingError(f"only {available} non-gold cross pairs for {n_pos} negatives")
    rng = np.random.Generator(np.random.PCG64(seed))
    src_ids, tgt_ids = src.ids, tgt.ids
    negatives = []
    taken = set()
    # rejection sampling while dense enough, otherwise enumerate
    if available >= 4 * n_pos:
        while len(negatives) < n_pos:
            i = int(rng.integers(len(src_ids)))
            j = int(rng.integers(len(tgt_ids)))
            key = (src_ids[i], tgt_ids[j])
            if key in gold_set or key in taken:
                continue
            taken.add(key)
            negatives.append(key)
    else:
        pool = [(a, b) for a in src_ids for b in tgt_ids if (a, b) not in gold_set]
        picks = rng.choice(len(pool), size=n_pos, replace=False)
        negatives = [pool[k] for k in picks]
    out = [LabeledPair(a, b, 1) for a, b in gold.pairs]
    out += [LabeledPair(a, b, 0) for a, b in negatives]
    return out


def _largest_remainder(n, fractions):
    raw = [n * f for f in fractions]
    sizes = [int(np.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def split(pairs, fractions=(0.875, 0.10, 0.025), seed=0):
    """Stratified, seeded, disjoint split into len(fractions) parts."""
    fractions = [float(f) for f in fractions]
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigurationError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    sizes = _largest_remainder(len(pairs), fractions)
    if any(s == 0 for s in sizes):
        raise ConfigurationError(f"split fractions {fractions} leave an empty part (sizes {sizes})")
    rng = np.random.Generator(np.random.PCG64(seed))
    by_label = {}
    for k, p in enumerate(pairs):
        by_label.setdefault(p.label, []).append(k)
    keyed = []
    for label in sorted(by_label):
        members = by_label[label]
        perm = rng.permutation(len(members))
        for rank, pos in enumerate(perm):
            keyed.append(((rank + 0.5) / len(members), label, members[pos]))
    keyed.sort()
    ordered = [pairs[k] for _, _, k in keyed]
    parts = []
    start = 0
    for s in sizes:
        parts.append(ordered[start:start + s])
        start += s
    return tuple(parts)


# ---------------------------------------------------------------------------
# Synthetic languages
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    languages: tuple = ("de", "en", "es", "fr")
    concept_vocab: int = 200
    min_len: int = 4
    max_len: int = 10
    reorder_window: int = 2
    semrel_overlap: float = 0.5
    n_sentences: int = 1000
    seed: int = 7

    def validate(self):
        if len(self.languages) < 2:
            raise ConfigurationError("synthetic corpus needs at least two languages")
        if len(self.languages) > len(_ALPHABETS):
            raise ConfigurationError(f"at most {len(_ALPHABETS)} synthetic languages")
        if len(set(self.languages)) != len(self.languages):
            raise ConfigurationError("duplicate language code")
        if not 0 < self.concept_vocab <= 5 ** 4:
            raise ConfigurationError("concept_vocab must be in 1..625")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError("need 1 <= min_len <= max_len")
        if self.max_len > 50:
            raise ConfigurationError("sentence length above the NMT maximum of 50")
        if self.max_len > self.concept_vocab // 2:
            raise ConfigurationError("concept_vocab too small for max_len")
        if self.reorder_window < 1:
            raise ConfigurationError("reorder_window must be >= 1")
        if not 0.0 <= self.semrel_overlap <= 1.0:
            raise ConfigurationError("semrel_overlap must lie in [0, 1]")
        if self.n_sentences < 1:
            raise ConfigurationError("n_sentences must be >= 1")
        return self


class SynthLanguage:
    """Renders concept ids as words of one synthetic language."""

    def __init__(self, code, index, window, seed):
        self.code = code
        self.alphabet = _ALPHABETS[index]
        self.window = window
        rng = np.random.Generator(np.random.PCG64([seed, index]))
        self.order = list(rng.permutation(window)) if index > 0 else list(range(window))
        # per-concept padding so translations differ in character length
        self.padding = rng.integers(0, 3, size=5 ** 4)

    def word(self, concept):
        digits = []
        k = int(concept)
        for _ in range(4):
            digits.append(self.alphabet[k % 5])
            k //= 5
        stem = "".join(reversed(digits))
        return stem + self.alphabet[int(concept) % 5] * int(self.padding[int(concept)])

    def reorder(self, concepts):
        out = []
        w = self.window
        for start in range(0, len(concepts), w):
            chunk = concepts[start:start + w]
            # rank of each slot among those that exist in a short final chunk
            slots = [s for s in self.order if s < len(chunk)]
            out.extend(chunk[s] for s in slots)
        return out

    def render(self, concepts):
        return " ".join(self.word(c) for c in self.reorder(concepts))


@dataclass
class SynthCorpus:
    spec: SynthSpec
    concepts: list
    semrel_concepts: list
    corpora: dict
    semrel: dict

    def gold(self, src, tgt):
        return GoldPairs([(sid_a, sid_b) for (sid_a, _), (sid_b, _) in
                          zip(self.corpora[src].records, self.corpora[tgt].records)])

    def semrel_pairs(self, src, tgt):
        """(source id, semantically related target-language text) pairs."""
        return [(sid, text) for (sid, _), (_, text) in
                zip(self.corpora[src].records, self.semrel[tgt].records)]


def sentence_id(lang, k, prefix=""):
    return f"{lang}-{prefix}{k + 1:06d}"


def _related(rng, concepts, overlap, vocab):
    n = len(concepts)
    keep = int(round(overlap * n))
    kept_pos = set(int(p) for p in rng.permutation(n)[:keep])
    banned = set(concepts)
    fresh_pool = [c for c in range(vocab) if c not in banned]
    fresh = rng.permutation(len(fresh_pool))
    out = []
    f = 0
    for pos, c in enumerate(concepts):
        if pos in kept_pos:
            out.append(c)
        else:
            out.append(fresh_pool[int(fresh[f])])
            f += 1
    return out


def generate_synthetic(spec, id_prefix="", sample_seed=None):
    """Sample sentences for every language of ``spec``.

    The languages themselves (word forms, word order) always derive from
    ``spec.seed``; ``sample_seed`` only changes which sentences are drawn, so
    fresh corpora stay in the same languages.
    """
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed if sample_seed is None else [spec.seed, sample_seed]))
    langs = [SynthLanguage(code, k, spec.reorder_window, spec.seed) for k, code in enumerate(spec.languages)]
    concepts = []
    related = []
    for _ in range(spec.n_sentences):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        seq = [int(c) for c in rng.choice(spec.concept_vocab, size=n, replace=False)]
        concepts.append(seq)
        related.append(_related(rng, seq, spec.semrel_overlap, spec.concept_vocab))
    corpora = {}
    semrel = {}
    for lang in langs:
        corpora[lang.code] = MonoCorpus(lang.code, [
            (sentence_id(lang.code, k, id_prefix), lang.render(c)) for k, c in enumerate(concepts)])
        semrel[lang.code] = MonoCorpus(lang.code, [
            (sentence_id(lang.code, k, id_prefix + "s"), lang.render(c)) for k, c in enumerate(related)])
    return SynthCorpus(spec, concepts, related, corpora, semrel)


def synth_language(spec, code):
    index = list(spec.languages).index(code)
    return SynthLanguage(code, index, spec.reorder_window, spec.seed)


def comparable_corpus(spec, src, tgt, n_parallel, n_noise, seed):
    """Two monolingual corpora sharing ``n_parallel`` translations among noise.

    Ids are assigned after shuffling so position carries no alignment signal.
    """
    base = SynthSpec(**{**spec.__dict__, "n_sentences": n_parallel + 2 * n_noise})
    synth = generate_synthetic(base, sample_seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    s_recs = synth.corpora[src].records
    t_recs = synth.corpora[tgt].records
    src_rows = [(k, s_recs[k][1]) for k in range(n_parallel)]
    src_rows += [(n_parallel + k, s_recs[n_parallel + k][1]) for k in range(n_noise)]
    tgt_rows = [(k, t_recs[k][1]) for k in range(n_parallel)]
    tgt_rows += [(n_parallel + n_noise + k, t_recs[n_parallel + n_noise + k][1]) for k in range(n_noise)]
    src_perm = rng.permutation(len(src_rows))
    tgt_perm = rng.permutation(len(tgt_rows))
    src_map, tgt_map = {}, {}
    src_records, tgt_records = [], []
    for new, old in enumerate(src_perm):
        key, text = src_rows[old]
        sid = sentence_id(src, new)
        src_map[key] = sid
        src_records.append((sid, text))
    for new, old in enumerate(tgt_perm):
        key, text = tgt_rows[old]
        sid = sentence_id(tgt, new)
        tgt_map[key] = sid
        tgt_records.append((sid, text))
    gold = GoldPairs(sorted((src_map[k], tgt_map[k]) for k in range(n_parallel)))
    return (MonoCorpus(src, src_records), MonoCorpus(tgt, tgt_records)), gold


def write_synthetic(synth, directory):
    """Per-language BUCC mono files plus gold and semrel files for every pair."""
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for lang, corpus in synth.corpora.items():
        p = os.path.join(directory, f"{lang}.txt")
        write_mono(corpus, p)
        paths[lang] = p
        write_mono(synth.semrel[lang], os.path.join(directory, f"{lang}.semrel.txt"))
    langs = list(synth.corpora)
    for a in langs:
        for b in langs:
            if a != b:
                write_gold(synth.gold(a, b), os.path.join(directory, f"{a}-{b}.gold"))
    return paths
