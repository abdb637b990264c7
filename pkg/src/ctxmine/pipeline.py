"""Glue between the stages: synthetic setup, held-out similarity sets and pair features."""

import numpy as np

from .corpus import SynthSpec, generate_synthetic
from .errors import ConfigurationError, EmptyInputError
from .features import assemble
from .nmt import NmtModel
from .simspace import SentenceEmbedding, cosine, delta_tr_ur, stats_from_values
from .textproc import BpeModel, Vocabulary, bpe_apply, bpe_learn, tokenize


def translation_records(synth, languages=None):
    """Every directed (src_text, tgt_text, tgt_lang) record of a synthetic corpus."""
    langs = list(languages or synth.spec.languages)
    recs = []
    n = len(synth.concepts)
    for k in range(n):
        for a in langs:
            for b in langs:
                if a != b:
                    recs.append((synth.corpora[a].records[k][1], synth.corpora[b].records[k][1], b))
    return recs


def learn_subwords(texts, languages, merges, max_vocab=None):
    """BPE plus vocabulary. With ``max_vocab`` the merge list is cut to the
    longest prefix whose vocabulary still fits, so no unit maps to <unk>."""
    seqs = [tokenize(t) for t in texts]
    full = bpe_learn(seqs, merges)

    def build(k):
        bpe = BpeModel(full.merges[:k])
        return bpe, Vocabulary.build([bpe_apply(bpe, s) for s in seqs], languages)

    bpe, vocab = build(len(full.merges))
    if max_vocab is None or len(vocab) <= max_vocab:
        return bpe, vocab
    lo, hi = 0, len(full.merges)
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        cand = build(mid)
        if len(cand[1]) <= max_vocab:
            best, lo = cand, mid + 1
        else:
            hi = mid - 1
    if best is None:
        raise ConfigurationError(f"even unmerged characters need more than {max_vocab} vocabulary entries")
    return best


def build_model(synth, embed=64, hidden=64, seed=1, merges=10000, max_vocab=None, init_scale=0.08):
    texts = [t for lang in synth.spec.languages for _, t in synth.corpora[lang].records]
    bpe, vocab = learn_subwords(texts, synth.spec.languages, merges, max_vocab)
    return NmtModel(vocab, bpe, embed=embed, hidden=hidden, seed=seed, init_scale=init_scale)


def embed_texts(model, texts, langs, tags, pooling="sum", ids=None):
    """Sentence embeddings for many texts in one batched encoder pass."""
    if not texts:
        raise EmptyInputError("no sentences to embed")
    rows = model.extract_many(texts, tags)
    out = []
    for k, r in enumerate(rows):
        vec = r.astype(np.float64).sum(axis=0) if pooling == "sum" else r.astype(np.float64).mean(axis=0)
        sid = ids[k] if ids is not None else ""
        out.append(SentenceEmbedding(vec, sid, langs[k], tags[k]))
    return out


def derangement(n, seed):
    """A seeded permutation with no fixed point, used to build unrelated pairs."""
    if n < 2:
        raise ConfigurationError("need at least two items to shuffle into unrelated pairs")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.roll(perm, -1)
    return out


def heldout_triples(spec, src, tgt, n, seed):
    """(src_text, translation, related sentence) built from fresh concept sequences."""
    fresh = SynthSpec(**{**spec.__dict__, "n_sentences": n})
    synth = generate_synthetic(fresh, id_prefix="h", sample_seed=seed)
    s = synth.corpora[src].records
    t = synth.corpora[tgt].records
    r = synth.semrel[tgt].records
    return [(s[k][1], t[k][1], r[k][1]) for k in range(n)]


def similarity_report(model, triples, src, tgt, third=None, seed=0, pooling="sum"):
    """trad/semrel/unrel statistics, their gaps and the tag-pair similarity.

    The source side is tagged with the target language and every target-side
    sentence with the source language.
    """
    n = len(triples)
    srcs = [a for a, _, _ in triples]
    trads = [b for _, b, _ in triples]
    rels = [c for _, _, c in triples]
    e_src = embed_texts(model, srcs, [src] * n, [tgt] * n, pooling)
    e_trad = embed_texts(model, trads, [tgt] * n, [src] * n, pooling)
    e_rel = embed_texts(model, rels, [tgt] * n, [src] * n, pooling)
    shuffle = derangement(n, seed)
    stats = {
        "trad": stats_from_values([cosine(e_src[k], e_trad[k]) for k in range(n)], "trad"),
        "semrel": stats_from_values([cosine(e_src[k], e_rel[k]) for k in range(n)], "semrel"),
        "unrel": stats_from_values([cosine(e_src[k], e_trad[shuffle[k]]) for k in range(n)], "unrel"),
    }
    report = {k: v.to_dict() for k, v in stats.items()}
    delta, sigma = delta_tr_ur(stats["trad"], stats["unrel"])
    report["delta_tr_ur"] = {"delta": delta, "sigma": sigma}
    for a, b in (("trad", "semrel"), ("semrel", "unrel")):
        gap = stats[a].mean - stats[b].mean
        report[f"gap_{a}_{b}"] = {"gap": gap, "sigma": float(np.hypot(stats[a].std, stats[b].std))}
    if third is not None:
        e_third = embed_texts(model, srcs, [src] * n, [third] * n, pooling)
        tp = stats_from_values([cosine(e_src[k], e_third[k]) for k in range(n)], "tagpair")
        report["tagpair"] = {**tp.to_dict(), "tags": [tgt, third]}
    return report


def ctx_cosines(model, pairs, src_corpus, tgt_corpus, pooling="sum"):
    """Embedding cosine per labeled pair, each side tagged with the other's language."""
    s_ids = sorted({p.src_id for p in pairs})
    t_ids = sorted({p.tgt_id for p in pairs})
    sl, tl = src_corpus.language, tgt_corpus.language
    es = embed_texts(model, [src_corpus.text(i) for i in s_ids], [sl] * len(s_ids), [tl] * len(s_ids), pooling)
    et = embed_texts(model, [tgt_corpus.text(i) for i in t_ids], [tl] * len(t_ids), [sl] * len(t_ids), pooling)
    s_map = dict(zip(s_ids, es))
    t_map = dict(zip(t_ids, et))
    return np.array([cosine(s_map[p.src_id], t_map[p.tgt_id]) for p in pairs])


def pair_features(pairs, src_corpus, tgt_corpus, length_model, ctx=None):
    rows = []
    for k, p in enumerate(pairs):
        c = None if ctx is None else float(ctx[k])
        rows.append(assemble((src_corpus.text(p.src_id), tgt_corpus.text(p.tgt_id)), length_model, c))
    return rows


def scenario_matrix(rows, scenario, ctx=None):
    if scenario == "ctx":
        return np.asarray(ctx, dtype=np.float64).reshape(-1, 1)
    X = np.stack([r.as_vector() for r in rows])
    if scenario == "comp":
        return X[:, :7]
    if scenario == "all":
        return X
    raise ConfigurationError(f"unknown scenario {scenario!r}; expected ctx, comp or all")
