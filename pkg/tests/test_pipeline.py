import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxmine import config
from ctxmine.corpus import SynthSpec, generate_synthetic
from ctxmine.errors import ConfigurationError
from ctxmine.pipeline import (build_model, derangement, heldout_triples, learn_subwords, similarity_report,
                              translation_records)
from ctxmine.textproc import bpe_apply, tokenize


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2 ** 32 - 1))
def test_derangement_has_no_fixed_point(n, seed):
    p = derangement(n, seed)
    assert sorted(p.tolist()) == list(range(n))
    assert np.all(p != np.arange(n))


def test_derangement_needs_two():
    with pytest.raises(ConfigurationError):
        derangement(1, 0)


def test_vocab_cap_keeps_every_unit_known():
    synth = generate_synthetic(SynthSpec(n_sentences=200))
    texts = [t for lang in synth.spec.languages for _, t in synth.corpora[lang].records]
    _, full = learn_subwords(texts, synth.spec.languages, 10000)
    bpe, vocab = learn_subwords(texts, synth.spec.languages, 10000, max_vocab=300)
    assert len(vocab) <= 300 < len(full)
    units = {u for t in texts for u in bpe_apply(bpe, tokenize(t)).tokens}
    assert units <= set(vocab.itos)
    # the bare characters alone overflow a tiny cap
    with pytest.raises(ConfigurationError):
        learn_subwords(texts, synth.spec.languages, 10000, max_vocab=5)


def test_translation_records_cover_every_direction():
    synth = generate_synthetic(SynthSpec(n_sentences=3))
    recs = translation_records(synth)
    assert len(recs) == 3 * 4 * 3
    assert {r[2] for r in recs} == set(synth.spec.languages)


def test_similarity_report_shape():
    spec = SynthSpec(n_sentences=30, concept_vocab=30)
    synth = generate_synthetic(spec)
    with config.using_precision("f64"):
        m = build_model(synth, 6, 6, seed=2, merges=30)
        triples = heldout_triples(spec, "en", "es", 12, seed=4)
        rep = similarity_report(m, triples, "en", "es", third="fr", seed=1)
    for key in ("trad", "semrel", "unrel", "tagpair"):
        assert rep[key]["count"] == 12 and -1 <= rep[key]["mean"] <= 1
    assert rep["delta_tr_ur"]["delta"] == pytest.approx(rep["trad"]["mean"] - rep["unrel"]["mean"], abs=1e-15)
    assert rep["gap_trad_semrel"]["sigma"] == pytest.approx(np.hypot(rep["trad"]["std"], rep["semrel"]["std"]))
    assert heldout_triples(spec, "en", "es", 12, seed=4) == triples
