"""Attentional GRU encoder-decoder with hand-written backpropagation.

Shapes follow batch-major convention: ``B`` sentences, ``n`` source positions,
``m`` target positions, ``e`` embedding size, ``d`` hidden size. A context row
is ``[backward_state, forward_state]`` of width ``2d``.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import config
from .errors import ConfigurationError, DimensionError, DivergenceError, VocabularyError
from .numkit import Param, Rng, adadelta_step, clip_global_norm, load_arrays, save_arrays
from .textproc import MAX_LEN, BpeModel, Vocabulary, encode, decode, segment_token, tokenize

log = logging.getLogger(__name__)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-6
    clip_norm: float = 1.0
    epochs: int = 1
    max_steps: int = 0
    seed: int = 1234
    checkpoint_every: int = 0
    max_len: int = MAX_LEN
    embed: int = 64
    hidden: int = 64
    init_scale: float = 0.08
    target_loss: float = 0.0

    def validate(self):
        for name in ("batch_size", "lr", "rho", "eps", "epochs", "max_len", "embed", "hidden", "init_scale"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"TrainConfig.{name} must be positive")
        if not self.rho < 1:
            raise ConfigurationError("TrainConfig.rho must be below 1")
        return self


@dataclass
class ContextMatrix:
    rows: np.ndarray
    ids: list
    source_lang: str = ""
    tag: str = None

    def __len__(self):
        return self.rows.shape[0]


class _Segmenter:
    def __init__(self, bpe):
        self.bpe = bpe
        self.ranks = bpe.ranks()
        self.cache = {}

    def __call__(self, tokens):
        out = []
        for tok in tokens:
            units = self.cache.get(tok)
            if units is None:
                units = segment_token(self.bpe, tok, self.ranks)
                self.cache[tok] = units
            out.extend(units)
        return out


class NmtModel:
    """Parameters plus the bound vocabulary and BPE model."""

    PARAM_NAMES = (
        "Wx", "Wy",
        "enc_f_W", "enc_f_U", "enc_f_Uh",
        "enc_b_W", "enc_b_U", "enc_b_Uh",
        "W_init",
        "att_W", "att_U", "att_v",
        "dec_W", "dec_U", "dec_Uh",
        "Wp1", "Wp2", "Wp3", "Wo",
    )

    def __init__(self, vocab, bpe=None, embed=64, hidden=64, seed=1234, init_scale=0.08, max_len=MAX_LEN):
        self.vocab = vocab
        self.bpe = bpe or BpeModel()
        self.embed = int(embed)
        self.hidden = int(hidden)
        self.seed = int(seed)
        self.max_len = int(max_len)
        self._segment = _Segmenter(self.bpe)
        V, e, d = len(vocab), self.embed, self.hidden
        shapes = {
            "Wx": (V, e), "Wy": (V, e),
            "enc_f_W": (e, 3 * d), "enc_f_U": (d, 2 * d), "enc_f_Uh": (d, d),
            "enc_b_W": (e, 3 * d), "enc_b_U": (d, 2 * d), "enc_b_Uh": (d, d),
            "W_init": (2 * d, d),
            "att_W": (d, d), "att_U": (2 * d, d), "att_v": (d, 1),
            "dec_W": (e + 2 * d, 3 * d), "dec_U": (d, 2 * d), "dec_Uh": (d, d),
            "Wp1": (d, e), "Wp2": (e, e), "Wp3": (2 * d, e), "Wo": (e, V),
        }
        rng = Rng(seed)
        self.params = {name: Param(name, rng.draw(shapes[name], init_scale)) for name in self.PARAM_NAMES}
        self.step = 0

    # -- convenience --------------------------------------------------------

    def __getitem__(self, name):
        return self.params[name].value

    def param_list(self):
        return [self.params[n] for n in self.PARAM_NAMES]

    @property
    def dtype(self):
        return self.params["Wx"].value.dtype

    def check_ids(self, ids):
        V = len(self.vocab)
        for i in np.asarray(ids).ravel():
            if not 0 <= int(i) < V:
                raise VocabularyError(f"token id {int(i)} outside vocabulary of size {V}")

    def source_ids(self, text, target_lang, truncate=True):
        units = self._segment(tokenize(text).tokens)
        if truncate:
            units = units[: self.max_len]
        return encode(self.vocab, units, target_lang)

    def target_ids(self, text):
        return encode(self.vocab, self._segment(tokenize(text).tokens))

    # -- encoder ------------------------------------------------------------

    def _gru_fwd(self, prefix, x, h, m):
        d = self.hidden
        W, U, Uh = self[prefix + "W"], self[prefix + "U"], self[prefix + "Uh"]
        gx = x @ W
        gh = h @ U
        z = _sig(gx[:, :d] + gh[:, :d])
        r = _sig(gx[:, d:2 * d] + gh[:, d:])
        rh = r * h
        c = np.tanh(gx[:, 2 * d:] + rh @ Uh)
        hn = h + z * (c - h)
        out = m * hn + (1.0 - m) * h
        return out, (x, h, z, r, rh, c, m)

    def _gru_bwd(self, prefix, dout, cache):
        x, h, z, r, rh, c, m = cache
        W, U, Uh = self[prefix + "W"], self[prefix + "U"], self[prefix + "Uh"]
        gW, gU, gUh = (self.params[prefix + k].grad for k in ("W", "U", "Uh"))
        dhn = m * dout
        dh = (1.0 - m) * dout + dhn * (1.0 - z)
        dz = dhn * (c - h)
        dac = dhn * z * (1.0 - c * c)
        drh = dac @ Uh.T
        gUh += rh.T @ dac
        dr = drh * h
        dh += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dgh = np.concatenate([daz, dar], axis=1)
        dgx = np.concatenate([dgh, dac], axis=1)
        gW += x.T @ dgx
        gU += h.T @ dgh
        dh += dgh @ U.T
        return dgx @ W.T, dh

    def _encode_batch(self, src, smask):
        B, n = src.shape
        d = self.hidden
        dt = self.dtype
        R = self["Wx"][src]
        m = smask.astype(dt)[:, :, None]
        hf = np.zeros((B, n, d), dtype=dt)
        hb = np.zeros((B, n, d), dtype=dt)
        cf, cb = [None] * n, [None] * n
        h = np.zeros((B, d), dtype=dt)
        for i in range(n):
            h, cf[i] = self._gru_fwd("enc_f_", R[:, i], h, m[:, i])
            hf[:, i] = h
        h = np.zeros((B, d), dtype=dt)
        for i in range(n - 1, -1, -1):
            h, cb[i] = self._gru_fwd("enc_b_", R[:, i], h, m[:, i])
            hb[:, i] = h
        H = np.concatenate([hb, hf], axis=2) * m
        return H, (src, m, cf, cb)

    def _encode_bwd(self, dH, cache):
        src, m, cf, cb = cache
        B, n = src.shape
        d = self.hidden
        dH = dH * m
        dR = np.zeros((B, n, self.embed), dtype=self.dtype)
        dh = np.zeros((B, d), dtype=self.dtype)
        for i in range(n - 1, -1, -1):
            dx, dh = self._gru_bwd("enc_f_", dH[:, i, d:] + dh, cf[i])
            dR[:, i] += dx
        dh = np.zeros((B, d), dtype=self.dtype)
        for i in range(n):
            dx, dh = self._gru_bwd("enc_b_", dH[:, i, :d] + dh, cb[i])
            dR[:, i] += dx
        np.add.at(self.params["Wx"].grad, src, dR)

    # -- decoder ------------------------------------------------------------

    def _init_state(self, H, smask):
        lengths = smask.sum(axis=1, keepdims=True).astype(self.dtype)
        hbar = H.sum(axis=1) / lengths
        return np.tanh(hbar @ self["W_init"]), (hbar, lengths)

    def _attend(self, z_prev, H, HU, smask):
        pre = np.tanh(HU + (z_prev @ self["att_W"])[:, None, :])
        scores = (pre @ self["att_v"])[:, :, 0]
        scores = np.where(smask, scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        ex = np.exp(scores)
        alpha = ex / ex.sum(axis=1, keepdims=True)
        q = np.einsum("bn,bnk->bk", alpha, H)
        return alpha, q, pre

    def _dec_step(self, z_prev, y_prev, H, HU, smask, tm):
        t = self["Wy"][y_prev]
        alpha, q, pre = self._attend(z_prev, H, HU, smask)
        x = np.concatenate([t, q], axis=1)
        z, gcache = self._gru_fwd("dec_", x, z_prev, tm)
        p = np.tanh(z @ self["Wp1"] + t @ self["Wp2"] + q @ self["Wp3"])
        logits = p @ self["Wo"]
        return z, logits, (y_prev, t, alpha, q, pre, gcache, p, z_prev)

    def loss_and_grad(self, src, smask, tin, tout, tmask, backward=True):
        """Mean token cross-entropy of a padded batch; accumulates grads if asked."""
        H, ecache = self._encode_batch(src, smask)
        HU = H @ self["att_U"]
        z, icache = self._init_state(H, smask)
        tmf = tmask.astype(self.dtype)
        ntok = float(tmask.sum())
        m = tin.shape[1]
        steps = []
        loss = 0.0
        for j in range(m):
            z, logits, sc = self._dec_step(z, tin[:, j], H, HU, smask, tmf[:, j:j + 1])
            logits = logits - logits.max(axis=1, keepdims=True)
            ex = np.exp(logits)
            probs = ex / ex.sum(axis=1, keepdims=True)
            gold = probs[np.arange(len(tout)), tout[:, j]]
            loss -= float(np.sum(np.log(gold) * tmf[:, j]))
            steps.append((sc, probs, z))
        loss /= ntok
        if backward:
            self._backward(steps, H, HU, smask, tout, tmf, ntok, ecache, icache)
        return loss

    def _backward(self, steps, H, HU, smask, tout, tmf, ntok, ecache, icache):
        g = {k: self.params[k].grad for k in self.PARAM_NAMES}
        B = H.shape[0]
        d = self.hidden
        e = self.embed
        dH = np.zeros_like(H)
        dHU = np.zeros_like(HU)
        dz = np.zeros((B, d), dtype=self.dtype)
        rows = np.arange(B)
        for j in range(len(steps) - 1, -1, -1):
            (y_prev, t, alpha, q, pre, gcache, p, z_prev), probs, z = steps[j]
            dlog = probs.copy()
            dlog[rows, tout[:, j]] -= 1.0
            dlog *= tmf[:, j:j + 1] / ntok
            g["Wo"] += p.T @ dlog
            dpa = (dlog @ self["Wo"].T) * (1.0 - p * p)
            g["Wp1"] += z.T @ dpa
            g["Wp2"] += t.T @ dpa
            g["Wp3"] += q.T @ dpa
            dz = dz + dpa @ self["Wp1"].T
            dt = dpa @ self["Wp2"].T
            dq = dpa @ self["Wp3"].T
            dx, dz = self._gru_bwd("dec_", dz, gcache)
            dt += dx[:, :e]
            dq += dx[:, e:]
            np.add.at(g["Wy"], y_prev, dt)
            # attention
            dH += alpha[:, :, None] * dq[:, None, :]
            dalpha = np.einsum("bk,bnk->bn", dq, H)
            dscore = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
            g["att_v"] += np.einsum("bna,bn->a", pre, dscore)[:, None]
            dpre = dscore[:, :, None] * self["att_v"][:, 0][None, None, :] * (1.0 - pre * pre)
            dza = dpre.sum(axis=1)
            g["att_W"] += z_prev.T @ dza
            dz += dza @ self["att_W"].T
            dHU += dpre
        g["att_U"] += np.einsum("bnk,bna->ka", H, dHU)
        dH += dHU @ self["att_U"].T
        hbar, lengths = icache
        z0 = steps[0][0][7]
        da = dz * (1.0 - z0 * z0)
        g["W_init"] += hbar.T @ da
        dH += ((da @ self["W_init"].T) / lengths)[:, None, :]
        self._encode_bwd(dH, ecache)

    # -- single-sentence API -----------------------------------------------

    def _single(self, ids):
        ids = list(ids)
        if not ids:
            raise DimensionError("empty source sequence")
        self.check_ids(ids)
        src = np.asarray([ids], dtype=np.int64)
        return src, np.ones_like(src, dtype=bool)

    def encode_source(self, ids, source_lang="", tag=None):
        src, smask = self._single(ids)
        H, _ = self._encode_batch(src, smask)
        return ContextMatrix(H[0], list(ids), source_lang, tag)

    def initial_state(self, ctx):
        H = ctx.rows[None]
        z0, _ = self._init_state(H, np.ones(H.shape[:2], dtype=bool))
        return z0[0]

    def attention_step(self, z_prev, ctx):
        H = ctx.rows[None]
        HU = H @ self["att_U"]
        alpha, q, _ = self._attend(np.asarray(z_prev, dtype=self.dtype)[None], H, HU, np.ones(H.shape[:2], dtype=bool))
        return alpha[0], q[0]

    def decoder_step(self, z_prev, y_prev_id, ctx):
        self.check_ids([y_prev_id])
        H = ctx.rows[None]
        HU = H @ self["att_U"]
        smask = np.ones(H.shape[:2], dtype=bool)
        tm = np.ones((1, 1), dtype=self.dtype)
        z, logits, _ = self._dec_step(np.asarray(z_prev, dtype=self.dtype)[None], np.asarray([y_prev_id]), H, HU, smask, tm)
        logits = logits - logits.max(axis=1, keepdims=True)
        ex = np.exp(logits)
        return z[0], (ex / ex.sum(axis=1, keepdims=True))[0]

    def greedy_translate(self, source_ids, max_len):
        if max_len <= 0:
            return []
        ctx = self.encode_source(source_ids)
        z = self.initial_state(ctx)
        y = self.vocab.eos_id
        out = []
        for _ in range(max_len):
            z, dist = self.decoder_step(z, y, ctx)
            y = int(np.argmax(dist))
            if y == self.vocab.eos_id:
                break
            out.append(self.vocab.token(y))
        return out

    def translate(self, text, target_lang, max_len=None):
        ids = self.source_ids(text, target_lang)
        return self.greedy_translate(ids, max_len or self.max_len)

    def extract_context(self, text, source_lang, target_tag):
        ids = self.source_ids(text, target_tag)
        return self.encode_source(ids, source_lang, target_tag)

    def extract_many(self, texts, target_tags, batch_size=256):
        """Context matrices for many sentences, batched through the encoder."""
        out = [None] * len(texts)
        all_ids = [self.source_ids(t, tag) for t, tag in zip(texts, target_tags)]
        for start in range(0, len(texts), batch_size):
            chunk = all_ids[start:start + batch_size]
            src, smask = pad_batch(chunk)
            H, _ = self._encode_batch(src, smask)
            for k, ids in enumerate(chunk):
                out[start + k] = H[k, : len(ids)]
        return out

    # -- serialisation ------------------------------------------------------

    def save(self, path, extra_meta=None):
        meta = {
            "embed": self.embed, "hidden": self.hidden, "max_len": self.max_len, "step": self.step,
            "vocab": self.vocab.itos, "bpe": [list(p) for p in self.bpe.merges],
        }
        meta.update(extra_meta or {})
        arrays = {n: self.params[n].value for n in self.PARAM_NAMES}
        for n in self.PARAM_NAMES:
            arrays[n + ".acc_grad"] = self.params[n].acc_grad
            arrays[n + ".acc_delta"] = self.params[n].acc_delta
        save_arrays(path, arrays, precision="f32" if self.dtype == np.float32 else "f64", seed=self.seed, meta=meta)

    @classmethod
    def load(cls, path):
        arrays, header = load_arrays(path)
        meta = header["meta"]
        prec = header["precision"]
        if prec != config.precision():
            log.info("loading %s checkpoint under %s precision", prec, config.precision())
        vocab = Vocabulary(meta["vocab"])
        bpe = BpeModel(tuple(tuple(p) for p in meta["bpe"]))
        model = cls.__new__(cls)
        model.vocab = vocab
        model.bpe = bpe
        model.embed = meta["embed"]
        model.hidden = meta["hidden"]
        model.max_len = meta["max_len"]
        model.seed = header["seed"]
        model.step = meta.get("step", 0)
        model._segment = _Segmenter(bpe)
        model.params = {}
        for n in cls.PARAM_NAMES:
            p = Param(n, arrays[n])
            p.acc_grad[...] = arrays[n + ".acc_grad"]
            p.acc_delta[...] = arrays[n + ".acc_delta"]
            model.params[n] = p
        return model


# ---------------------------------------------------------------------------
# Batching and training
# ---------------------------------------------------------------------------


def pad_batch(seqs, pad_id=0):
    n = max(len(s) for s in seqs)
    arr = np.full((len(seqs), n), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for k, s in enumerate(seqs):
        arr[k, : len(s)] = s
        mask[k, : len(s)] = True
    return arr, mask


def make_batch(pairs, eos_id):
    """``pairs`` of (source ids incl. tag and <eos>, target ids incl. <eos>)."""
    src, smask = pad_batch([p[0] for p in pairs])
    tout, tmask = pad_batch([p[1] for p in pairs])
    tin = np.zeros_like(tout)
    tin[:, 0] = eos_id
    tin[:, 1:] = tout[:, :-1]
    return src, smask, tin, tout, tmask


def batch_loss(model, batch, backward=False):
    if not batch:
        raise ConfigurationError("empty batch")
    for s, t in batch:
        model.check_ids(s)
        model.check_ids(t)
    return model.loss_and_grad(*make_batch(batch, model.vocab.eos_id), backward=backward)


def train_batch(model, batch, cfg=None):
    """One teacher-forced update; returns the batch loss before the update."""
    cfg = cfg or TrainConfig()
    if not batch:
        raise ConfigurationError("empty batch")
    if any(len(s) > cfg.max_len + 2 or len(t) > cfg.max_len + 1 for s, t in batch):
        raise ConfigurationError(f"batch contains a sentence longer than {cfg.max_len} tokens")
    params = model.param_list()
    for p in params:
        p.zero_grad()
    loss = batch_loss(model, batch, backward=True)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite training loss", model.step)
    try:
        clip_global_norm(params, cfg.clip_norm)
        for p in params:
            adadelta_step(p, cfg.rho, cfg.eps, cfg.lr)
    except DivergenceError as exc:
        raise DivergenceError(str(exc), model.step) from exc
    model.step += 1
    return loss


def prepare_pairs(model, records, max_len=MAX_LEN):
    """Turn (src_text, tgt_text, tgt_lang) records into id pairs, dropping long ones."""
    out = []
    for src_text, tgt_text, tgt_lang in records:
        src = model.source_ids(src_text, tgt_lang, truncate=False)
        tgt = model.target_ids(tgt_text)
        if len(src) - 2 > max_len or len(tgt) - 1 > max_len:
            continue
        out.append((src, tgt))
    return out


def train(model, pairs, cfg, checkpoint_dir=None, on_step=None, fingerprint=None):
    """Epoch loop with seeded shuffling; returns the per-step loss history."""
    cfg.validate()
    rng = Rng(cfg.seed)
    history = []
    done = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[k] for k in order[start:start + cfg.batch_size]]
            loss = train_batch(model, batch, cfg)
            history.append(loss)
            if on_step is not None:
                on_step(model.step, loss)
            if checkpoint_dir and cfg.checkpoint_every and model.step % cfg.checkpoint_every == 0:
                save_checkpoint(model, checkpoint_dir, cfg, fingerprint)
            if cfg.max_steps and model.step >= cfg.max_steps:
                done = True
                break
        if cfg.target_loss and epoch_mean(history, len(pairs), cfg.batch_size) < cfg.target_loss:
            done = True
        if done:
            break
    return history


def epoch_mean(history, n_pairs, batch_size):
    per_epoch = max(1, -(-n_pairs // batch_size))
    tail = history[-per_epoch:]
    return float(np.mean(tail)) if tail else float("inf")


def save_checkpoint(model, directory, cfg, fingerprint=None):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"ckpt-{model.step}.btf")
    model.save(path)
    sidecar = {"train_config": asdict(cfg), "step": model.step, "corpus": fingerprint or {}}
    with open(path[:-4] + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
