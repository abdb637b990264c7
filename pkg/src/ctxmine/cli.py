"""Command-line driver: ``ctxmine <subcommand> [--config PATH] [flags]``.

Every subcommand reads its inputs from, and writes its outputs to, the run
directory given by ``--out`` (or ``out`` in the config), so stages can be
re-run independently. Exit codes: 0 success, 1 validation error, 2 runtime
error.
"""

import argparse
import copy
import glob
import json
import logging
import os
import re
import sys
from dataclasses import asdict, fields

import numpy as np

from . import config as numconf
from .classify import (EnsembleModel, gb_fit, kfold_cv, load_model, prf1, save_model, svm_fit, threshold_fit)
from .corpus import (SynthSpec, build_balanced, comparable_corpus, generate_synthetic, read_bucc, read_mono,
                     read_pairs, split, write_bucc, write_pairs, write_synthetic)
from .errors import (ConfigurationError, CtxmineError, IntegrityError, ParameterError, ParseError, UsageError,
                     VocabularyError)
from .features import LengthModel, fit_length_model, read_features, write_features
from .nmt import NmtModel, TrainConfig, epoch_mean, prepare_pairs, train
from .pipeline import ctx_cosines, embed_texts, heldout_triples, learn_subwords, pair_features, similarity_report
from .simspace import cosine, pearson, project_2d, read_embeddings, write_embeddings, write_projection
from .textproc import Vocabulary, read_bpe, write_bpe

log = logging.getLogger("ctxmine")

VALIDATION_ERRORS = (ConfigurationError, UsageError, ParseError, IntegrityError, ParameterError,
                     VocabularyError, FileNotFoundError)
SCENARIOS = ("ctx", "comp", "all")
MODELS = ("thrs", "gb", "svm", "ens")

DEFAULTS = {
    "out": "run",
    "seed": 1234,
    "synth": {"n_sentences": 2000, "seed": 7},
    "pair": ["de", "en"],
    "third": None,
    "mining": {"n_parallel": 2000, "n_noise": 1000, "seed": 11, "fractions": [0.875, 0.10, 0.025]},
    "heldout": {"n": 500, "seed": 99},
    "corpus": None,
    "bpe": {"merges": 10000, "max_vocab": 512},
    "train": {"batch_size": 16, "epochs": 40, "target_loss": 1.0, "checkpoint_every": 1500},
    "pooling": "sum",
    "scenario": "all",
    "model": "gb",
    "classifier": {"rounds": 100, "depth": 3, "shrinkage": 0.1, "C": 1.0, "gamma": None, "cv_folds": 10},
    "projection": {"method": "pca", "perplexity": None, "n_iter": 1000},
    "graded": None,
}


class Run:
    """Resolved configuration plus the file layout of one run directory."""

    def __init__(self, cfg, seed_flag=None):
        self.cfg = cfg
        self.out = cfg["out"]
        self.seed_flag = seed_flag

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    def seed(self, section=None):
        if self.seed_flag is not None:
            return self.seed_flag
        sect = self.cfg.get(section) if section else None
        if isinstance(sect, dict) and sect.get("seed") is not None:
            return int(sect["seed"])
        return int(self.cfg["seed"])

    @property
    def languages(self):
        return list(self.synth_spec().languages)

    def synth_spec(self):
        opts = dict(self.cfg["synth"])
        opts["seed"] = self.seed("synth")
        known = {f.name for f in fields(SynthSpec)}
        unknown = set(opts) - known
        if unknown:
            raise ConfigurationError(f"unknown synth option(s): {sorted(unknown)}")
        if "languages" in opts:
            opts["languages"] = tuple(opts["languages"])
        return SynthSpec(**opts).validate()

    @property
    def pair(self):
        src, tgt = self.cfg["pair"]
        return src, tgt

    def third(self):
        if self.cfg.get("third"):
            return self.cfg["third"]
        rest = [l for l in self.languages if l not in self.pair]
        return rest[0] if rest else None


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", args.config, exc.lineno) from exc
        if not isinstance(user, dict):
            raise ConfigurationError(f"config {args.config} must hold a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for flag in ("out", "scenario", "model"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigurationError(f"scenario must be one of {SCENARIOS}, got {cfg['scenario']!r}")
    if cfg["model"] not in MODELS:
        raise ConfigurationError(f"model must be one of {MODELS}, got {cfg['model']!r}")
    return Run(cfg, args.seed)


def _write_json(path, doc):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(path, stage_hint):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} not found; run `ctxmine {stage_hint}` first")
    return path


# ---------------------------------------------------------------------------
# Corpus access
# ---------------------------------------------------------------------------


def training_corpora(run):
    """Per-language corpora in aligned order, read back from the run directory."""
    out = {}
    for lang in run.languages:
        out[lang] = read_mono(_require(run.path("corpus", f"{lang}.txt"), "synth"), lang)
    n = {len(c) for c in out.values()}
    if len(n) != 1:
        raise IntegrityError("training corpora differ in length; they must be line-aligned")
    return out


def mining_corpora(run):
    """The comparable corpus pair with gold, from the config or the synth output."""
    src, tgt = run.pair
    spec = run.cfg.get("corpus")
    if spec:
        (s, t), gold = read_bucc(spec["src"], spec["tgt"], spec.get("gold"))
    else:
        gold_path = run.path("mining", f"{src}-{tgt}.gold")
        (s, t), gold = read_bucc(_require(run.path("mining", f"{src}.txt"), "synth"),
                                 _require(run.path("mining", f"{tgt}.txt"), "synth"),
                                 gold_path if os.path.exists(gold_path) else None)
    s.language, t.language = src, tgt
    return s, t, gold


def load_nmt(run, checkpoint=None):
    path = checkpoint or run.path("model.btf")
    return NmtModel.load(_require(path, "train"))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(run, args):
    spec = run.synth_spec()
    synth = generate_synthetic(spec)
    write_synthetic(synth, run.path("corpus"))
    src, tgt = run.pair
    if src not in spec.languages or tgt not in spec.languages or src == tgt:
        raise ConfigurationError(f"pair {run.pair} must name two distinct languages of {spec.languages}")
    m = run.cfg["mining"]
    (s, t), gold = comparable_corpus(spec, src, tgt, int(m["n_parallel"]), int(m["n_noise"]), run.seed("mining"))
    os.makedirs(run.path("mining"), exist_ok=True)
    write_bucc((s, t), gold, run.path("mining", f"{src}.txt"), run.path("mining", f"{tgt}.txt"),
               run.path("mining", f"{src}-{tgt}.gold"))
    h = run.cfg["heldout"]
    triples = heldout_triples(spec, src, tgt, int(h["n"]), run.seed("heldout"))
    with open(run.path("heldout.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{src}\t{tgt}\t{tgt}.semrel\n")
        for a, b, c in triples:
            fh.write(f"{a}\t{b}\t{c}\n")
    report = {"languages": list(spec.languages), "sentences": spec.n_sentences, "seed": spec.seed,
              "mining": {"src": len(s), "tgt": len(t), "gold": len(gold)}, "heldout": len(triples)}
    _write_json(run.path("synth.json"), report)
    return report


def cmd_bpe(run, args):
    corpora = training_corpora(run)
    texts = [t for lang in run.languages for _, t in corpora[lang].records]
    b = run.cfg["bpe"]
    bpe, vocab = learn_subwords(texts, run.languages, int(b["merges"]), b.get("max_vocab"))
    write_bpe(bpe, run.path("bpe.txt"))
    vocab.save(run.path("vocab.txt"))
    report = {"merges": len(bpe.merges), "vocab": len(vocab)}
    _write_json(run.path("bpe.json"), report)
    return report


def _train_config(run):
    opts = {k: v for k, v in run.cfg["train"].items()}
    opts["seed"] = run.seed("train")
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(opts) - known
    if unknown:
        raise ConfigurationError(f"unknown train option(s): {sorted(unknown)}")
    return TrainConfig(**opts).validate()


def cmd_train(run, args):
    cfg = _train_config(run)
    corpora = training_corpora(run)
    bpe = read_bpe(_require(run.path("bpe.txt"), "bpe"))
    vocab = Vocabulary.load(_require(run.path("vocab.txt"), "bpe"))
    if args.checkpoint:
        model = NmtModel.load(args.checkpoint)
    else:
        model = NmtModel(vocab, bpe, embed=cfg.embed, hidden=cfg.hidden, seed=cfg.seed, init_scale=cfg.init_scale,
                         max_len=cfg.max_len)
    langs = run.languages
    n = len(corpora[langs[0]])
    recs = [(corpora[a].records[k][1], corpora[b].records[k][1], b)
            for k in range(n) for a in langs for b in langs if a != b]
    pairs = prepare_pairs(model, recs, cfg.max_len)
    fingerprint = {"languages": langs, "sentences": n, "pairs": len(pairs)}
    history = train(model, pairs, cfg, checkpoint_dir=run.path("checkpoints"), fingerprint=fingerprint)
    model.save(run.path("model.btf"))
    report = {"steps": model.step, "pairs": len(pairs), "final_epoch_loss": epoch_mean(history, len(pairs),
              cfg.batch_size), "train_config": asdict(cfg), "precision": numconf.precision()}
    _write_json(run.path("train.json"), report)
    return report


def cmd_embed(run, args):
    model = load_nmt(run, args.checkpoint)
    s, t, _ = mining_corpora(run)
    pooling = run.cfg["pooling"]
    embs = embed_texts(model, [x for _, x in s.records], [s.language] * len(s), [t.language] * len(s),
                       pooling, ids=s.ids)
    embs += embed_texts(model, [x for _, x in t.records], [t.language] * len(t), [s.language] * len(t),
                        pooling, ids=t.ids)
    write_embeddings(embs, run.path("embeddings.tsv"))
    return {"embeddings": len(embs)}


def _checkpoints(run, args):
    if args.checkpoint and os.path.isdir(args.checkpoint):
        found = glob.glob(os.path.join(args.checkpoint, "ckpt-*.btf"))
        if not found:
            raise FileNotFoundError(f"no ckpt-<step>.btf files in {args.checkpoint}")
        return sorted(found, key=lambda p: int(re.search(r"ckpt-(\d+)\.btf$", p).group(1)))
    return [args.checkpoint or _require(run.path("model.btf"), "train")]


def _read_heldout(run):
    rows = []
    with open(_require(run.path("heldout.tsv"), "synth"), encoding="utf-8") as fh:
        fh.readline()
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ParseError("expected three tab-separated sentences", run.path("heldout.tsv"), lineno)
            rows.append(tuple(parts))
    return rows


def _graded_pearson(run, model):
    """Correlation of embedding cosines with graded scores (TSV: s1, lang1, s2, lang2, score)."""
    path = run.cfg.get("graded")
    if not path:
        return None
    a, b, gold = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise ParseError("expected s1, lang1, s2, lang2, score", path, lineno)
            a.append((parts[0], parts[1], parts[3]))
            b.append((parts[2], parts[3], parts[1]))
            gold.append(float(parts[4]))
    pooling = run.cfg["pooling"]
    ea = embed_texts(model, [x[0] for x in a], [x[1] for x in a], [x[2] for x in a], pooling)
    eb = embed_texts(model, [x[0] for x in b], [x[1] for x in b], [x[2] for x in b], pooling)
    pred = [cosine(u, v) for u, v in zip(ea, eb)]
    return pearson(pred, gold)


def cmd_stats(run, args):
    triples = _read_heldout(run)
    src, tgt = run.pair
    rows = []
    for path in _checkpoints(run, args):
        model = NmtModel.load(path)
        rep = similarity_report(model, triples, src, tgt, third=run.third(), seed=run.seed("heldout"),
                                pooling=run.cfg["pooling"])
        rep["checkpoint"] = os.path.basename(path)
        rep["step"] = model.step
        r = _graded_pearson(run, model)
        if r is not None:
            rep["pearson"] = r
        rows.append(rep)
    _write_json(run.path("stats.json"), {"pair": [src, tgt], "rows": rows})
    with open(run.path("stats.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("checkpoint\tstep\ttrad\tsemrel\tunrel\tdelta_tr_ur\tsigma\n")
        for r in rows:
            fh.write(f"{r['checkpoint']}\t{r['step']}\t{r['trad']['mean']:.4f}\t{r['semrel']['mean']:.4f}\t"
                     f"{r['unrel']['mean']:.4f}\t{r['delta_tr_ur']['delta']:.4f}\t{r['delta_tr_ur']['sigma']:.4f}\n")
    return {"rows": len(rows)}


def cmd_project(run, args):
    embs = read_embeddings(_require(run.path("embeddings.tsv"), "embed"))
    p = run.cfg["projection"]
    pts = project_2d(embs, p["method"], p.get("perplexity"), seed=run.seed("projection"), n_iter=int(p["n_iter"]))
    write_projection([e.sentence_id for e in embs], pts, run.path("projection.tsv"))
    return {"points": len(embs), "method": p["method"]}


SPLITS = ("train", "ens", "heldout")


def cmd_features(run, args):
    s, t, gold = mining_corpora(run)
    model = None
    if args.checkpoint or os.path.exists(run.path("model.btf")):
        model = load_nmt(run, args.checkpoint)
    os.makedirs(run.path("features"), exist_ok=True)
    candidates = (run.cfg.get("corpus") or {}).get("pairs")
    if gold is None:
        # unlabeled candidates only: features for mining with a previously fitted length model
        if not candidates:
            raise UsageError("without gold pairs a candidate pair file (corpus.pairs) is required")
        lm_path = _require(run.path("features", "features.json"), "features on a labeled run")
        with open(lm_path, encoding="utf-8") as fh:
            lm = json.load(fh)["length_model"]
        length_model = LengthModel(lm["mu"], lm["sigma"], (s.language, t.language))
        part = read_pairs(candidates)
        ctx = ctx_cosines(model, part, s, t, run.cfg["pooling"]) if model is not None else None
        write_features(pair_features(part, s, t, length_model, ctx), run.path("features", "heldout.tsv"),
                       ids=[(p.src_id, p.tgt_id) for p in part], labels=["" if p.label < 0 else p.label for p in part])
        return {"sizes": {"heldout": len(part)}, "ctx": model is not None, "labeled": False}
    pairs = build_balanced(gold, (s, t), run.seed("mining"))
    parts = split(pairs, run.cfg["mining"]["fractions"], run.seed("mining"))
    length_model = fit_length_model([(s.text(p.src_id), t.text(p.tgt_id)) for p in parts[0] if p.label == 1],
                                    (s.language, t.language))
    for name, part in zip(SPLITS, parts):
        write_pairs(part, run.path("features", f"{name}.pairs.tsv"))
        ctx = ctx_cosines(model, part, s, t, run.cfg["pooling"]) if model is not None else None
        rows = pair_features(part, s, t, length_model, ctx)
        write_features(rows, run.path("features", f"{name}.tsv"), ids=[(p.src_id, p.tgt_id) for p in part],
                       labels=[p.label for p in part])
    report = {"sizes": {n: len(p) for n, p in zip(SPLITS, parts)}, "ctx": model is not None,
              "length_model": {"mu": length_model.mu, "sigma": length_model.sigma}}
    _write_json(run.path("features", "features.json"), report)
    return report


def _scenario_data(run, name, scenario):
    ids, y, X, cols = read_features(_require(run.path("features", f"{name}.tsv"), "features"))
    if scenario in ("ctx", "all") and "ctx_cos" not in cols:
        raise UsageError(f"scenario {scenario} needs ctx_cos; rerun `features` with a trained model")
    if scenario == "ctx":
        return ids, y, X[:, cols.index("ctx_cos")].reshape(-1, 1)
    if scenario == "comp":
        return ids, y, X[:, :7]
    return ids, y, X


def _fitter(run, kind, scenario):
    c = run.cfg["classifier"]
    seed = run.seed("classifier")
    if kind == "thrs":
        if scenario != "ctx":
            raise ConfigurationError("the threshold model only applies to the ctx scenario")
        return lambda X, y: threshold_fit(X[:, 0], y)

    def gb(X, y):
        return gb_fit(X, y, int(c["rounds"]), int(c["depth"]), float(c["shrinkage"]), seed)

    def svm(X, y):
        return svm_fit(X, y, float(c["C"]), c.get("gamma"), seed)

    if kind == "gb":
        return gb
    if kind == "svm":
        return svm
    return lambda X, y: EnsembleModel([svm(X, y), gb(X, y)])


def _model_path(run, scenario, kind):
    ext = "btf" if kind == "svm" else "json"
    return run.path("models", f"{scenario}-{kind}.{ext}")


def cmd_fit(run, args):
    scenario, kind = run.cfg["scenario"], run.cfg["model"]
    fit = _fitter(run, kind, scenario)
    _, y, X = _scenario_data(run, "train", scenario)
    model = fit(X, y)
    os.makedirs(run.path("models"), exist_ok=True)
    save_model(model, _model_path(run, scenario, kind))
    report = {"scenario": scenario, "model": kind, "n": int(len(y))}
    folds = int(run.cfg["classifier"].get("cv_folds") or 0)
    if folds >= 2:
        cv = kfold_cv(X, y, folds, fit, seed=run.seed("classifier"))
        report["folds"] = cv["folds"]
        report["cv_mean"] = cv["mean"]
    _write_json(run.path("models", f"{scenario}-{kind}.fit.json"), report)
    return report


def cmd_mine(run, args):
    scenario, kind = run.cfg["scenario"], run.cfg["model"]
    model = load_model(_require(_model_path(run, scenario, kind), "fit"))
    ids, y, X = _scenario_data(run, "heldout", scenario)
    prob = model.predict_proba(X)
    pred = model.predict(X)
    os.makedirs(run.path("predictions"), exist_ok=True)
    with open(run.path("predictions", f"{scenario}-{kind}.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("src_id\ttgt_id\tlabel\tprob\tpred\n")
        for (a, b), lab, pr, pd in zip(ids, y, prob, pred):
            fh.write(f"{a}\t{b}\t{'' if lab < 0 else lab}\t{float(pr)!r}\t{int(pd)}\n")
    return {"scenario": scenario, "model": kind, "pairs": len(ids), "positives": int(np.sum(pred))}


def _read_predictions(path):
    gold, pred = [], []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            gold.append(int(parts[2]) if parts[2] != "" else -1)
            pred.append(int(parts[4]))
    return gold, pred


def cmd_eval(run, args):
    files = sorted(glob.glob(run.path("predictions", "*.tsv")))
    if args.scenario or args.model:
        files = [f for f in files if os.path.basename(f) == f"{run.cfg['scenario']}-{run.cfg['model']}.tsv"]
    if not files:
        raise FileNotFoundError(f"no predictions under {run.path('predictions')}; run `ctxmine mine` first")
    rows = []
    for path in files:
        gold, pred = _read_predictions(path)
        if any(g < 0 for g in gold):
            raise UsageError(f"gold labels are withheld in {path}; evaluation needs them")
        scenario, kind = os.path.basename(path)[:-4].split("-", 1)
        p, r, f1 = prf1(pred, gold)
        row = {"scenario": scenario, "model": kind, "P": p, "R": r, "F1": f1, "n": len(gold), "folds": []}
        fit_report = _model_path(run, scenario, kind).rsplit(".", 1)[0] + ".fit.json"
        if os.path.exists(fit_report):
            with open(fit_report, encoding="utf-8") as fh:
                row["folds"] = json.load(fh).get("folds", [])
        rows.append(row)
    _write_json(run.path("eval.json"), {"rows": rows})
    with open(run.path("eval.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scenario\tmodel\tP\tR\tF1\n")
        for r in rows:
            fh.write(f"{r['scenario']}\t{r['model']}\t{100 * r['P']:.1f}\t{100 * r['R']:.1f}\t{100 * r['F1']:.1f}\n")
    return {"rows": len(rows)}


COMMANDS = {
    "synth": (cmd_synth, "generate the synthetic training, comparable and held-out corpora"),
    "bpe": (cmd_bpe, "learn BPE merges and the vocabulary"),
    "train": (cmd_train, "train the multilingual NMT model with checkpoints"),
    "embed": (cmd_embed, "dump sentence embeddings of the comparable corpus"),
    "stats": (cmd_stats, "trad/semrel/unrel similarity statistics per checkpoint"),
    "project": (cmd_project, "2-D projection of the dumped embeddings"),
    "features": (cmd_features, "balanced pairs, splits and feature tables"),
    "fit": (cmd_fit, "fit the classifier for one scenario"),
    "mine": (cmd_mine, "classify the held-out pairs"),
    "eval": (cmd_eval, "precision, recall and F1 per scenario and model"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ctxmine", description="Parallel sentence mining with NMT context vectors.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, help="seed for every stochastic step of this stage")
        p.add_argument("--checkpoint", help="model file, or a directory of ckpt-<step>.btf files for stats")
        p.add_argument("--scenario", choices=SCENARIOS)
        p.add_argument("--model", choices=MODELS)
        p.add_argument("--out", help="run directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    stage = args.command
    try:
        run = load_config(args)
        os.makedirs(run.out, exist_ok=True)
        report = COMMANDS[stage][0](run, args)
    except VALIDATION_ERRORS as exc:
        print(f"ctxmine {stage}: validation error: {exc}", file=sys.stderr)
        return 1
    except (CtxmineError, OSError, ValueError, ArithmeticError) as exc:
        print(f"ctxmine {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
