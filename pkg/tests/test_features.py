import math
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxmine.errors import EvaluationError, FittingError
from ctxmine.features import (ALL_COLUMNS, COMP_COLUMNS, LengthModel, assemble, char_ngram_similarity,
                              count_features, fit_length_model, length_factor, pseudo_cognate_similarity,
                              read_features, write_features)


def _brute_ngram_cos(s, t):
    """Independent enumeration: list every 2..5-gram, count by scanning, dot explicitly."""
    def grams(x):
        x = "".join(ch for ch in x.lower() if ch.isalnum())
        return [x[i:i + n] for n in range(2, 6) for i in range(len(x) - n + 1)]

    gs, gt = grams(s), grams(t)
    keys = sorted(set(gs) | set(gt))
    vs = [gs.count(k) for k in keys]
    vt = [gt.count(k) for k in keys]
    dot = sum(a * b for a, b in zip(vs, vt))
    ns = math.sqrt(sum(a * a for a in vs))
    nt = math.sqrt(sum(b * b for b in vt))
    return dot / (ns * nt) if ns and nt else 0.0


def test_ngram_examples():
    assert char_ngram_similarity("parallel text", "parallel text") == pytest.approx(1.0)
    assert char_ngram_similarity("aaaa", "bbbb") == 0.0
    # shared {ab, bc, abc} out of six grams per side
    assert _brute_ngram_cos("abcd", "abce") == pytest.approx(0.5)
    assert char_ngram_similarity("abcd", "abce") == pytest.approx(0.5, abs=1e-15)


def test_ngram_ignores_spaces_and_case():
    assert char_ngram_similarity("Data Base", "database") == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcdeé ", max_size=15), st.text(alphabet="abcdeé ", max_size=15))
def test_ngram_matches_brute_force_and_is_symmetric(s, t):
    got = char_ngram_similarity(s, t)
    assert 0.0 <= got <= 1.0
    assert got == pytest.approx(char_ngram_similarity(t, s), abs=1e-12)
    oracle = _brute_ngram_cos(s.replace("é", "e"), t.replace("é", "e"))
    assert got == pytest.approx(oracle, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcxyz", min_size=2, max_size=20))
def test_ngram_self_similarity(s):
    assert char_ngram_similarity(s, s) == pytest.approx(1.0)


def test_cognate_examples():
    assert pseudo_cognate_similarity(["parallel", "text"], ["paralelo", "texto"]) == pytest.approx(1.0)
    assert pseudo_cognate_similarity(["the", "a", "of"], ["the", "a", "of"]) == 0.0
    assert pseudo_cognate_similarity(["2017"], ["2017"]) == pytest.approx(1.0)


def test_cognate_keeps_short_non_alphabetic_tokens():
    assert pseudo_cognate_similarity(["g7"], ["g7"]) == pytest.approx(1.0)
    assert pseudo_cognate_similarity(["word"], ["words"]) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["para", "parallel", "the", "2017", "texto", "x1"]), max_size=6),
       st.lists(st.sampled_from(["para", "parallel", "the", "2017", "texto", "x1"]), max_size=6))
def test_cognate_symmetric_and_bounded(a, b):
    v = pseudo_cognate_similarity(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(pseudo_cognate_similarity(b, a), abs=1e-12)


def test_count_examples():
    assert count_features("a b", "xyz") == (2, 1, 3, 3)
    assert count_features("", "") == (0, 0, 0, 0)
    assert count_features("a\nb", "c") == (2, 1, 2, 1)
    # order of the arguments matters
    assert count_features("xyz", "a b") != count_features("a b", "xyz")


def test_length_model_fitting():
    pairs = [("aaaaaaaaaa", "a" * 9), ("aaaaaaaaaa", "a" * 11)] * 100
    model = fit_length_model(pairs)
    assert model.mu == pytest.approx(1.0)
    assert model.sigma == pytest.approx(0.1)
    assert fit_length_model(pairs) == model
    with pytest.raises(FittingError):
        fit_length_model([("ab", "cd")] * 100)
    with pytest.raises(FittingError):
        fit_length_model(pairs[:99])
    with pytest.raises(FittingError):
        fit_length_model([("", "x")] + pairs)


def test_length_factor_closed_forms():
    model = LengthModel(1.0, 0.1)
    assert length_factor(model, "a" * 10, "a" * 10) == pytest.approx(1.0)
    assert length_factor(model, "a" * 10, "a" * 11) == pytest.approx(math.exp(-0.5))
    assert length_factor(model, "a" * 10, "a" * 13) == pytest.approx(math.exp(-4.5))
    assert length_factor(model, "a" * 10, "a" * 11) != length_factor(model, "a" * 11, "a" * 10)
    with pytest.raises(EvaluationError):
        length_factor(model, "", "abc")


def test_assemble_scenarios():
    model = LengthModel(1.0, 0.2)
    pair = ("Parallel texts matter.", "Parallel texts matter.")
    comp = assemble(pair, model)
    assert comp.ctx_cos is None and comp.scenario == "comp"
    assert len(comp.as_vector()) == 7 == len(COMP_COLUMNS)
    full = assemble(pair, model, ctx_cos=0.8)
    assert len(full.as_vector()) == 8 == len(ALL_COLUMNS)
    assert comp.ngram_cos == pytest.approx(1.0)
    assert comp.cognate_cos == pytest.approx(1.0)
    assert comp.length_factor == pytest.approx(1.0)
    assert assemble(pair, model) == comp


def test_feature_tsv_roundtrip(tmp_path):
    model = LengthModel(1.0, 0.2)
    rows = [assemble(("abc def", "abd deg"), model, 0.5), assemble(("x", "y"), model, -0.1)]
    path = tmp_path / "f.tsv"
    write_features(rows, path, ids=[("a", "b"), ("c", "d")], labels=[1, 0])
    ids, labels, X, cols = read_features(path)
    assert cols == list(ALL_COLUMNS)
    assert ids == [("a", "b"), ("c", "d")]
    assert labels.tolist() == [1, 0]
    assert X[0].tolist() == rows[0].as_vector().tolist()
