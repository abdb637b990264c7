import math

import numpy as np
import pytest

from ctxmine import config
from ctxmine.errors import DivergenceError, VocabularyError
from ctxmine.nmt import NmtModel, TrainConfig, batch_loss, prepare_pairs, save_checkpoint, train, train_batch
from ctxmine.textproc import TokenSeq, Vocabulary


@pytest.fixture(autouse=True)
def _f64():
    with config.using_precision("f64"):
        yield


def _vocab(words=("a", "b", "c", "d", "e"), langs=("en", "es", "fr")):
    return Vocabulary.build([TokenSeq(list(words))], list(langs))


def _model(d=4, e=3, seed=0, **kw):
    return NmtModel(_vocab(**kw), embed=e, hidden=d, seed=seed)


def test_context_shape_and_zero_weights():
    m = _model()
    ctx = m.encode_source([5, 6, 7])
    assert ctx.rows.shape == (3, 8)
    for p in m.param_list():
        p.value[...] = 0.0
    np.testing.assert_array_equal(m.encode_source([5]).rows, np.zeros((1, 8)))


def test_out_of_range_id():
    m = _model()
    with pytest.raises(VocabularyError):
        m.encode_source([len(m.vocab)])


def test_reversal_with_tied_encoders():
    m = _model(seed=3)
    for part in ("W", "U", "Uh"):
        m.params[f"enc_b_{part}"].value[...] = m[f"enc_f_{part}"]
    ids = [5, 7, 6, 4, 2]
    a = m.encode_source(ids).rows
    b = m.encode_source(ids[::-1]).rows
    d = m.hidden
    swapped = np.hstack([a[:, d:], a[:, :d]])[::-1]
    np.testing.assert_allclose(b, swapped, atol=1e-14)


def test_attention_examples():
    m = _model(seed=1)
    z = np.full(m.hidden, 0.1)
    ctx = m.encode_source([5])
    alpha, q = m.attention_step(z, ctx)
    assert alpha.tolist() == [1.0]
    np.testing.assert_allclose(q, ctx.rows[0], atol=1e-15)

    ctx = m.encode_source([5, 6, 7])
    ctx.rows[:] = ctx.rows[0]
    alpha, q = m.attention_step(z, ctx)
    np.testing.assert_allclose(alpha, 1 / 3, atol=1e-15)
    np.testing.assert_allclose(q, ctx.rows[0], atol=1e-14)

    ctx = m.encode_source([5, 6, 7, 4])
    m.params["att_v"].value[...] = 0.0
    alpha, _ = m.attention_step(z, ctx)
    np.testing.assert_allclose(alpha, 0.25, atol=1e-15)


def test_attention_weights_are_a_distribution():
    m = _model(seed=2)
    m.params["att_v"].value[...] *= 40
    ctx = m.encode_source([5, 6, 7, 8, 9, 2])
    rng = np.random.default_rng(0)
    for _ in range(20):
        alpha, _ = m.attention_step(rng.uniform(-1, 1, m.hidden), ctx)
        assert abs(alpha.sum() - 1.0) < 1e-12
        assert np.all(alpha > 0)


def test_decoder_step_distribution():
    m = _model(seed=4)
    ctx = m.encode_source([5, 6, 2])
    z0 = m.initial_state(ctx)
    z1, dist = m.decoder_step(z0, m.vocab.eos_id, ctx)
    assert dist.shape == (len(m.vocab),)
    assert abs(dist.sum() - 1.0) < 1e-12
    z2, dist2 = m.decoder_step(z0, m.vocab.eos_id, ctx)
    assert z1.tobytes() == z2.tobytes() and dist.tobytes() == dist2.tobytes()
    m.params["Wo"].value[...] = 0.0
    _, dist = m.decoder_step(z0, 5, ctx)
    np.testing.assert_allclose(dist, 1 / len(m.vocab), atol=1e-15)


def test_initial_loss_near_log_vocab():
    words = [f"w{k}" for k in range(60)]
    m = NmtModel(_vocab(words), embed=8, hidden=8, seed=0)
    V = len(m.vocab)
    rng = np.random.default_rng(0)
    batch = [(list(rng.integers(3, V, 6)) + [2], list(rng.integers(3, V, 5)) + [2]) for _ in range(8)]
    loss = batch_loss(m, batch)
    assert abs(loss - math.log(V)) < 0.1 * math.log(V)


def _single_pair(m):
    return [(m.source_ids("a b c", "es"), m.target_ids("c d e"))]


def test_memorises_a_single_pair():
    m = _model(d=8, e=8, seed=5)
    batch = _single_pair(m)
    cfg = TrainConfig(batch_size=1)
    for _ in range(400):
        loss = train_batch(m, batch, cfg)
    assert batch_loss(m, batch) < 0.1
    assert m.translate("a b c", "es") == ["c", "d", "e"]


def test_training_loss_mostly_decreases():
    m = _model(d=8, e=8, seed=6)
    rng = np.random.default_rng(1)
    batch = [(list(rng.integers(3, 10, 4)) + [2], list(rng.integers(3, 10, 4)) + [2]) for _ in range(6)]
    cfg = TrainConfig(batch_size=6)
    losses = [train_batch(m, batch, cfg) for _ in range(51)]
    drops = sum(b <= a for a, b in zip(losses, losses[1:]))
    assert drops >= 45


def test_training_is_deterministic():
    def run():
        m = _model(d=6, e=5, seed=7)
        recs = [("a b", "c d", "es"), ("b c", "d e", "fr"), ("c a", "e e", "es")]
        pairs = prepare_pairs(m, recs)
        return train(m, pairs, TrainConfig(batch_size=2, epochs=3, seed=9)), m

    h1, m1 = run()
    h2, m2 = run()
    assert h1 == h2
    assert all(m1[n].tobytes() == m2[n].tobytes() for n in m1.PARAM_NAMES)


def test_greedy_bounds():
    m = _model(seed=8)
    ids = m.source_ids("a b", "es")
    assert m.greedy_translate(ids, 0) == []
    assert len(m.greedy_translate(ids, 3)) <= 3


def test_extract_context_rows_and_tags():
    m = _model(seed=9)
    a = m.extract_context("a b c", "en", "es")
    assert len(a) == 3 + 2
    assert m.extract_context("a b c", "en", "es").rows.tobytes() == a.rows.tobytes()
    b = m.extract_context("a b c", "en", "fr")
    assert not np.array_equal(a.rows, b.rows)
    many = m.extract_many(["a b c", "d"], ["es", "fr"])
    np.testing.assert_allclose(many[0], a.rows, atol=1e-14)


def test_zero_shot_tag_is_accepted():
    m = _model(d=6, e=5, seed=10)
    pairs = prepare_pairs(m, [("a b", "c d", "es"), ("b c", "d e", "fr")])
    train(m, pairs, TrainConfig(batch_size=2, epochs=2))
    # "en" never served as a target during training
    assert len(m.extract_context("c d", "es", "en")) == 4
    assert isinstance(m.translate("a b", "en", max_len=4), list)


def test_save_load_bit_identical(tmp_path):
    m = _model(seed=11)
    train(m, prepare_pairs(m, [("a b", "c d", "es")]), TrainConfig(batch_size=1, epochs=2))
    m.save(tmp_path / "m.btf")
    back = NmtModel.load(tmp_path / "m.btf")
    assert back.vocab.itos == m.vocab.itos
    ids = m.source_ids("a c", "fr")
    assert back.encode_source(ids).rows.tobytes() == m.encode_source(ids).rows.tobytes()
    back.save(tmp_path / "m2.btf")
    assert (tmp_path / "m.btf").read_bytes() == (tmp_path / "m2.btf").read_bytes()


def test_checkpoint_naming(tmp_path):
    m = _model(seed=12)
    m.step = 7
    path = save_checkpoint(m, tmp_path, TrainConfig())
    assert path.endswith("ckpt-7.btf")
    assert (tmp_path / "ckpt-7.json").exists()


def test_divergence_reports_step():
    m = _model(seed=13)
    m.params["Wo"].value[0, 0] = np.nan
    m.step = 4
    with pytest.raises(DivergenceError) as info:
        train_batch(m, _single_pair(m))
    assert info.value.step == 4


def test_gradients_match_central_differences():
    # step 1e-3 keeps loss roundoff well below the O(h^2) truncation error
    m = NmtModel(_vocab(("a", "b", "c", "d", "e", "f", "g")), embed=4, hidden=4, seed=14, init_scale=0.5)
    batch = [(m.source_ids("a b c", "es"), m.target_ids("d e")), (m.source_ids("f g", "fr"), m.target_ids("a"))]
    params = m.param_list()
    for p in params:
        p.zero_grad()
    batch_loss(m, batch, backward=True)
    h = 1e-3
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = batch_loss(m, batch)
            flat[k] = old - h
            down = batch_loss(m, batch)
            flat[k] = old
            num = (up - down) / (2 * h)
            assert abs(analytic[k] - num) <= 1e-6 + 1e-4 * abs(num), (p.name, k)
