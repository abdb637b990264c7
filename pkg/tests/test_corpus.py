import pytest

from ctxmine.corpus import (GoldPairs, LabeledPair, MonoCorpus, SynthSpec, build_balanced, comparable_corpus,
                            generate_synthetic, read_bucc, read_mono, read_pairs, split, synth_language,
                            write_bucc, write_pairs, write_synthetic)
from ctxmine.errors import ConfigurationError, IntegrityError, ParseError, SamplingError
from ctxmine.features import char_ngram_similarity


def _corpora(n):
    src = MonoCorpus("en", [(f"en-{k}", f"s{k}") for k in range(n)])
    tgt = MonoCorpus("es", [(f"es-{k}", f"t{k}") for k in range(n)])
    return src, tgt


def test_read_bucc_and_integrity(tmp_path):
    (tmp_path / "s.txt").write_text("en-1\tHello\nen-2\tWorld\n", encoding="utf-8")
    (tmp_path / "t.txt").write_text("es-1\tHola\n", encoding="utf-8")
    (tmp_path / "g.txt").write_text("en-1\tes-1\n", encoding="utf-8")
    (src, tgt), gold = read_bucc(tmp_path / "s.txt", tmp_path / "t.txt", tmp_path / "g.txt")
    assert src.text("en-2") == "World" and len(tgt) == 1 and gold.pairs == [("en-1", "es-1")]
    (tmp_path / "g.txt").write_text("en-9\tes-1\n", encoding="utf-8")
    with pytest.raises(IntegrityError):
        read_bucc(tmp_path / "s.txt", tmp_path / "t.txt", tmp_path / "g.txt")


def test_read_mono_rejects_duplicates_and_bad_lines(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("a\tx\na\ty\n", encoding="utf-8")
    with pytest.raises(ParseError):
        read_mono(p)
    p.write_text("a x\n", encoding="utf-8")
    with pytest.raises(ParseError):
        read_mono(p)


def test_build_balanced_counts_and_labels():
    src, tgt = _corpora(30)
    gold = GoldPairs([(f"en-{k}", f"es-{k}") for k in range(10)])
    pairs = build_balanced(gold, (src, tgt), seed=3)
    pos = [p for p in pairs if p.label == 1]
    neg = [p for p in pairs if p.label == 0]
    assert len(pos) == len(neg) == 10
    gold_set = set(gold.pairs)
    assert all((p.src_id, p.tgt_id) not in gold_set for p in neg)
    assert len({(p.src_id, p.tgt_id) for p in neg}) == 10
    assert build_balanced(gold, (src, tgt), seed=3) == pairs


def test_build_balanced_dense_and_exhausted():
    src, tgt = _corpora(2)
    gold = GoldPairs([("en-0", "es-0"), ("en-1", "es-1")])
    pairs = build_balanced(gold, (src, tgt), seed=0)
    assert {(p.src_id, p.tgt_id) for p in pairs if p.label == 0} == {("en-0", "es-1"), ("en-1", "es-0")}
    src1, tgt1 = _corpora(1)
    with pytest.raises(SamplingError):
        build_balanced(GoldPairs([("en-0", "es-0")]), (src1, tgt1), seed=0)


def test_split_sizes_stratified_disjoint():
    pairs = [LabeledPair(f"s{k}", f"t{k}", k % 2) for k in range(4000)]
    a, b, c = split(pairs, (0.875, 0.10, 0.025), seed=1)
    assert (len(a), len(b), len(c)) == (3500, 400, 100)
    for part in (a, b, c):
        assert sum(p.label for p in part) == len(part) // 2
    assert len(set(a) | set(b) | set(c)) == 4000
    assert split(pairs, (0.875, 0.10, 0.025), seed=1) == (a, b, c)


def test_split_rejects_empty_part():
    pairs = [LabeledPair(f"s{k}", f"t{k}", k % 2) for k in range(10)]
    with pytest.raises(ConfigurationError):
        split(pairs, (0.875, 0.10, 0.025), seed=0)


def test_pairs_roundtrip(tmp_path):
    pairs = [LabeledPair("a", "b", 1), LabeledPair("c", "d", 0)]
    write_pairs(pairs, tmp_path / "p.tsv")
    assert read_pairs(tmp_path / "p.tsv") == pairs


def test_synthetic_languages():
    spec = SynthSpec(n_sentences=50)
    synth = generate_synthetic(spec)
    en = synth_language(spec, "en")
    de = synth_language(spec, "de")
    assert en.word(0) != de.word(0)
    assert not set(en.alphabet) & set(de.alphabet)
    assert de.reorder([1, 2, 3, 4]) == [1, 2, 3, 4]
    for k, concepts in enumerate(synth.concepts):
        assert synth.corpora["en"].records[k][1].split() == [en.word(c) for c in en.reorder(concepts)]
        assert spec.min_len <= len(concepts) <= spec.max_len
        related = synth.semrel_concepts[k]
        shared = sum(a == b for a, b in zip(concepts, related))
        assert shared == round(0.5 * len(concepts))
    assert len(synth.gold("en", "es")) == 50


def test_synthetic_is_deterministic(tmp_path):
    spec = SynthSpec(n_sentences=20)
    write_synthetic(generate_synthetic(spec), tmp_path / "a")
    write_synthetic(generate_synthetic(spec), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_synthetic_spec_validation():
    with pytest.raises(ConfigurationError):
        SynthSpec(languages=("en",)).validate()
    with pytest.raises(ConfigurationError):
        SynthSpec(semrel_overlap=1.5).validate()


def test_comparable_corpus_gold_points_at_translations():
    spec = SynthSpec()
    (src, tgt), gold = comparable_corpus(spec, "en", "es", n_parallel=30, n_noise=20, seed=5)
    assert len(src) == len(tgt) == 50 and len(gold) == 30
    en, es = synth_language(spec, "en"), synth_language(spec, "es")
    inv_en = {en.word(c): c for c in range(spec.concept_vocab)}
    inv_es = {es.word(c): c for c in range(spec.concept_vocab)}
    for a, b in gold:
        ca = sorted(inv_en[w] for w in src.text(a).split())
        cb = sorted(inv_es[w] for w in tgt.text(b).split())
        assert ca == cb


def test_split_small_example_and_degenerate_fractions():
    pairs = [LabeledPair(f"s{k}", f"t{k}", k % 2) for k in range(40)]
    assert [len(p) for p in split(pairs, (0.875, 0.10, 0.025), seed=2)] == [35, 4, 1]
    with pytest.raises(ConfigurationError):
        split(pairs, (1.0, 0.0, 0.0), seed=2)


def test_bucc_write_read_is_byte_stable(tmp_path):
    synth = generate_synthetic(SynthSpec(n_sentences=15))
    paths = write_synthetic(synth, tmp_path / "a")
    (src, tgt), gold = read_bucc(paths["en"], paths["es"], tmp_path / "a" / "en-es.gold")
    write_bucc((src, tgt), gold, tmp_path / "s.txt", tmp_path / "t.txt", tmp_path / "g.txt")
    assert (tmp_path / "s.txt").read_bytes() == (tmp_path / "a" / "en.txt").read_bytes()
    assert (tmp_path / "t.txt").read_bytes() == (tmp_path / "a" / "es.txt").read_bytes()
    assert (tmp_path / "g.txt").read_bytes() == (tmp_path / "a" / "en-es.gold").read_bytes()


def test_window_one_is_pure_relabeling():
    spec = SynthSpec(n_sentences=10, reorder_window=1)
    synth = generate_synthetic(spec)
    for lang in spec.languages:
        L = synth_language(spec, lang)
        for k, concepts in enumerate(synth.concepts):
            assert synth.corpora[lang].records[k][1] == " ".join(L.word(c) for c in concepts)


def test_translations_are_windowed_permutations():
    spec = SynthSpec(n_sentences=30)
    synth = generate_synthetic(spec)
    es = synth_language(spec, "es")
    inv = {es.word(c): c for c in range(spec.concept_vocab)}
    w = spec.reorder_window
    for k, concepts in enumerate(synth.concepts):
        rendered = [inv[t] for t in synth.corpora["es"].records[k][1].split()]
        for start in range(0, len(concepts), w):
            assert sorted(rendered[start:start + w]) == sorted(concepts[start:start + w])


def test_semrel_overlap_boundaries():
    full = generate_synthetic(SynthSpec(n_sentences=20, semrel_overlap=1.0))
    assert [t for _, t in full.semrel["es"].records] == [t for _, t in full.corpora["es"].records]
    none = generate_synthetic(SynthSpec(n_sentences=20, semrel_overlap=0.0))
    for (_, a), (_, b) in zip(none.corpora["en"].records, none.semrel["en"].records):
        assert not set(a.split()) & set(b.split())
    # across languages the alphabets are disjoint, so surface similarity is exactly zero
    for (_, a), (_, b) in zip(none.corpora["en"].records, none.semrel["es"].records):
        assert char_ngram_similarity(a, b) == 0.0
