"""``bayeslm`` command-line entry point.

Subcommands: prep, train, nas-search, ppl, interp, rescore, snr, gradcheck.
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bayes import BayesPosition, init_prior_from_checkpoint
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, dump_config, resolve_config
from .core.optim import NumericalError, SgdState
from .core.rng import RngStream
from .corpus import (ArpaParseError, CorpusError, Vocabulary, build_vocab, encode_batches,
                     read_arpa, read_corpus, synthetic_splits, train_ngram, write_arpa,
                     write_corpus)
from .evaluation import (NBestError, NeuralScorer, NgramScorer, UniformScorer, acoustic_best,
                         em_fit_weights, perplexity, read_nbest, rescore_nbest, results_wer,
                         snr_report, synthetic_nbest, write_nbest, write_snr_table)
from .gp import GpPosition, make_gp
from .gradsuite import run_suite
from .latent import LatentSite, add_latent_layers
from .nas import (SuperNet, extract_topN, instantiate_selection, report_arch_weights,
                  search_space, train_supernet, write_arch_report, write_selections)
from .nnlm.models import build_model
from .nnlm.train import RegularizerSpec, TrainConfig, batch_perplexity, train

log = logging.getLogger("bayeslm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class DataError(Exception):
    """Missing or malformed input data."""


# -- helpers -------------------------------------------------------------------------------


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_sentences(path, key):
    try:
        sents = read_corpus(path)
    except OSError as exc:
        raise DataError(f"{key}: cannot read {path}: {exc}") from None
    if not sents:
        raise DataError(f"{key}: corpus {path} is empty")
    return sents


def load_corpora(cfg):
    """Train/dev/test sentence lists from files, or the seeded synthetic grammar."""
    data = cfg["data"]
    synth = None
    out = {}
    for split in ("train", "dev", "test"):
        if data[split]:
            out[split] = _read_sentences(data[split], f"data.{split}")
        else:
            if synth is None:
                synth = synthetic_splits(**data["synthetic"])
            out[split] = synth[split]
    return out


def load_vocab(cfg, corpora):
    if cfg["data"]["vocab"]:
        try:
            return Vocabulary.load(cfg["data"]["vocab"])
        except (OSError, ValueError) as exc:
            raise DataError(f"data.vocab: {exc}") from None
    return build_vocab(corpora["train"], cfg["data"]["min_count"])


def _model_kwargs(cfg):
    m = cfg["model"]
    keys = (("num_layers", "embed_dim", "hidden_dim", "dropout", "init_range")
            if m["kind"] == "lstm" else
            ("num_layers", "model_dim", "ffn_dim", "dropout", "init_range"))
    return {k: m[k] for k in keys}


def _load_ckpt(path, key):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise DataError(f"{key}: {exc}") from None


def _base_model(cfg, vocab, init_from, key):
    if init_from:
        ck = _load_ckpt(init_from, key)
        if ck.vocab is not None and ck.vocab != vocab:
            raise DataError(f"{key}: checkpoint vocabulary differs from the run vocabulary")
        if ck.model.kind != cfg["model"]["kind"]:
            raise ConfigError(f"model.kind: {cfg['model']['kind']!r} but {key} holds a "
                              f"{ck.model.kind} model")
        return ck.model
    return build_model(cfg["model"]["kind"], len(vocab), seed=cfg["seed"], **_model_kwargs(cfg))


def _positions(cfg, variant, texts, key):
    kind = cfg["model"]["kind"]
    cls = {"bayes": BayesPosition, "gp": GpPosition, "latent": LatentSite}[variant]
    try:
        return [cls.parse(kind, t) for t in texts]
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _sgd(cfg, variational=False):
    # variational models use bayes.lr and bayes.clip_norm; the summed latent KL
    # diverges at the baseline rate without clipping
    t, b = cfg["train"], cfg["bayes"]
    lr, clip = (b["lr"], b["clip_norm"]) if variational else (t["lr"], t["clip_norm"])
    return SgdState(lr, clip, t["halving_patience"], t["lr_floor"])


def _train_config(cfg, epochs):
    b, t = cfg["bayes"], cfg["train"]
    return TrainConfig(epochs=epochs, num_samples=b["num_samples"], kl_scale=b["kl_scale"],
                       latent_kl_scale=b["latent_kl_scale"], dropout=cfg["model"]["dropout"],
                       shuffle=t["shuffle"], keep_best=t["keep_best"])


def _regularizer(cfg):
    t = cfg["train"]
    ref = None
    if t["regularizer"] == "map":
        ref = _load_ckpt(t["map_reference"], "train.map_reference").model.arrays()
    return RegularizerSpec(t["regularizer"], t["reg_strength"], ref)


def _write_log(path, history):
    lines = ["epoch\tlr\ttrain_loss_per_token\tdev_ppl\thalved"]
    lines += [f"{e.epoch}\t{e.lr!r}\t{e.train_loss!r}\t{e.dev_ppl!r}\t{int(e.halved)}"
              for e in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fit(model, cfg, corpora, vocab, sgd, epochs, rng_name):
    bs = cfg["data"]["batch_size"]
    tb = encode_batches(corpora["train"], vocab, bs)
    db = encode_batches(corpora["dev"], vocab, bs)
    result = train(model, tb, sgd, _regularizer(cfg), db, _train_config(cfg, epochs),
                   RngStream(cfg["seed"]).child(rng_name))
    test_ppl = batch_perplexity(model, encode_batches(corpora["test"], vocab, bs))
    return result, test_ppl


# -- subcommands ---------------------------------------------------------------------------


def cmd_prep(cfg, out):
    corpora = load_corpora(cfg)
    vocab = load_vocab(cfg, corpora)
    for split, sents in corpora.items():
        write_corpus(out / f"{split}.txt", sents)
    vocab.save(out / "vocab.txt")
    ngram = train_ngram(corpora["train"], cfg["data"]["ngram_order"], vocab)
    write_arpa(out / "ngram.arpa", ngram)
    bs = cfg["data"]["batch_size"]
    _write_json(out / "prep.json", {
        "sentences": {k: len(v) for k, v in corpora.items()},
        "tokens": {k: sum(len(s) + 1 for s in v) for k, v in corpora.items()},
        "vocab_size": len(vocab),
        "train_batches": len(encode_batches(corpora["train"], vocab, bs)),
        "ngram_counts": ngram.counts(),
        "ngram_dev_ppl": perplexity(NgramScorer(ngram, vocab), corpora["dev"]),
    })


def cmd_train(cfg, out):
    corpora = load_corpora(cfg)
    vocab = load_vocab(cfg, corpora)
    b = cfg["bayes"]
    variant = b["variant"]
    if variant != "none" and not b["positions"]:
        raise ConfigError("bayes.positions: at least one position is needed for variant "
                          f"{variant!r}")
    model = _base_model(cfg, vocab, b["init_from"], "bayes.init_from")
    if variant == "bayes":
        model = init_prior_from_checkpoint(model, _positions(cfg, "bayes", b["positions"],
                                                             "bayes.positions"),
                                           b["prior_sigma"], init_ratio=b["init_ratio"])
    elif variant == "gp":
        model = make_gp(model, _positions(cfg, "gp", b["positions"], "bayes.positions"),
                        b["prior_sigma"], lambda_prior_sigma=b["lambda_prior_sigma"],
                        init_ratio=b["init_ratio"])
    elif variant == "latent":
        model = add_latent_layers(model, _positions(cfg, "latent", b["positions"],
                                                    "bayes.positions"), b["latent_spread"])
    result, test_ppl = _fit(model, cfg, corpora, vocab, _sgd(cfg, variant != "none"),
                            cfg["train"]["epochs"], "train")
    save_checkpoint(out / "model.ckpt", model, vocab, {"variant": variant})
    _write_log(out / "train_log.tsv", result.history)
    _write_json(out / "metrics.json", {
        "variant": variant, "dev_ppl": result.best_dev_ppl, "test_ppl": test_ppl,
        "epochs_run": len(result.history), "free_parameters": model.free_parameters(),
    })


def cmd_nas_search(cfg, out):
    corpora = load_corpora(cfg)
    vocab = load_vocab(cfg, corpora)
    n = cfg["nas"]
    base = _base_model(cfg, vocab, n["init_from"], "nas.init_from")
    if n["locations"]:
        locs = _positions(cfg, n["variant"], n["locations"], "nas.locations")
    else:
        locs = search_space(base.kind, base.config.num_layers, n["variant"])
    try:
        sn = SuperNet(base, locs, cfg["bayes"]["prior_sigma"], cfg["bayes"]["init_ratio"])
    except ValueError as exc:
        raise ConfigError(f"nas.locations: {exc}") from None
    bs = cfg["data"]["batch_size"]
    tb = encode_batches(corpora["train"], vocab, bs)
    db = encode_batches(corpora["dev"], vocab, bs)
    res = train_supernet(sn, tb, SgdState(n["lr"], cfg["train"]["clip_norm"]),
                         RngStream(cfg["seed"]).child("nas"), db, _train_config(cfg, n["epochs"]))
    save_checkpoint(out / "supernet.ckpt", sn.model, vocab,
                    {"locations": sn.labels, "variant": n["variant"]})
    _write_log(out / "supernet_log.tsv", res.history)
    write_arch_report(report_arch_weights(sn), out / "arch_weights.tsv",
                      out / "arch_weights.plot.tsv")
    selections = extract_topN(sn, n["top_n"])
    write_selections(selections, out / "selections.tsv")
    summary = {"supernet_dev_ppl": res.best_dev_ppl, "top1": selections[0].selected}
    if n["instantiate"] != "none":
        top = selections[0]
        if n["instantiate"] == "finetune":
            model = instantiate_selection(sn, top)
        else:
            chosen = [loc for loc, b in zip(sn.locations, top.bayes) if b]
            maker = make_gp if n["variant"] == "gp" else init_prior_from_checkpoint
            model = maker(base, chosen, cfg["bayes"]["prior_sigma"])
        result, test_ppl = _fit(model, cfg, corpora, vocab,
                                _sgd(cfg, True), n["finetune_epochs"],
                                "nas-finetune")
        save_checkpoint(out / "selected.ckpt", model, vocab, {"selection": top.selected})
        summary.update({"selected_dev_ppl": result.best_dev_ppl, "selected_test_ppl": test_ppl})
    _write_json(out / "nas.json", summary)


def _scorer(comp, vocab):
    kind = comp["kind"]
    if kind == "uniform":
        return UniformScorer(vocab)
    if kind == "ngram":
        try:
            return NgramScorer(read_arpa(comp["path"]), vocab)
        except OSError as exc:
            raise DataError(f"eval.components: cannot read {comp['path']}: {exc}") from None
    ck = _load_ckpt(comp["path"], "eval.components")
    if ck.vocab is not None and ck.vocab != vocab:
        raise DataError(f"eval.components: {comp['path']} was trained on another vocabulary")
    return NeuralScorer(ck.model, vocab)


def _eval_vocab(cfg, corpora):
    """Vocabulary of the evaluated checkpoint when there is one, else the data vocabulary."""
    paths = [cfg["eval"]["checkpoint"]] + [c.get("path") for c in cfg["eval"]["components"]
                                           if c["kind"] == "neural"]
    for p in paths:
        if p:
            ck = _load_ckpt(p, "eval")
            if ck.vocab is not None:
                return ck.vocab
    return load_vocab(cfg, corpora)


def _mixture(cfg, corpora, vocab):
    comps = cfg["eval"]["components"]
    if not comps:
        raise ConfigError("eval.components: at least one component is required")
    scorers = [_scorer(c, vocab) for c in comps]
    if len(scorers) == 1:
        return scorers[0], [1.0], []
    mix = em_fit_weights(scorers, corpora["dev"], cfg["eval"]["em_max_iters"],
                         cfg["eval"]["em_tol"])
    return mix, mix.weights.tolist(), mix.em_history


def cmd_ppl(cfg, out):
    corpora = load_corpora(cfg)
    if not cfg["eval"]["checkpoint"]:
        raise ConfigError("eval.checkpoint: required for ppl")
    ck = _load_ckpt(cfg["eval"]["checkpoint"], "eval.checkpoint")
    vocab = ck.vocab or load_vocab(cfg, corpora)
    sents = (_read_sentences(cfg["eval"]["corpus"], "eval.corpus") if cfg["eval"]["corpus"]
             else corpora["test"])
    scorer = NeuralScorer(ck.model, vocab)
    _write_json(out / "ppl.json", {"ppl": perplexity(scorer, sents),
                                   "sentences": len(sents),
                                   "tokens": sum(len(s) + 1 for s in sents)})


def cmd_interp(cfg, out):
    corpora = load_corpora(cfg)
    vocab = _eval_vocab(cfg, corpora)
    comps = cfg["eval"]["components"]
    if len(comps) < 2:
        raise ConfigError("eval.components: interpolation needs at least two components")
    mix, weights, history = _mixture(cfg, corpora, vocab)
    _write_json(out / "interp.json", {
        "components": comps, "weights": weights, "em_loglik_history": history,
        "component_dev_ppl": [perplexity(c, corpora["dev"]) for c in mix.components],
        "mixture_dev_ppl": perplexity(mix, corpora["dev"]),
        "mixture_test_ppl": perplexity(mix, corpora["test"]),
    })


def cmd_rescore(cfg, out):
    corpora = load_corpora(cfg)
    vocab = _eval_vocab(cfg, corpora)
    r = cfg["rescore"]
    if r["nbest"]:
        if not r["references"]:
            raise ConfigError("rescore.references: required when rescore.nbest is set")
        try:
            lists = read_nbest(r["nbest"], r["references"])
        except OSError as exc:
            raise DataError(f"rescore: {exc}") from None
    else:
        words = [t for t in vocab.tokens[3:]]
        lists = synthetic_nbest(corpora["test"], words, r["synthetic_n"], r["synthetic_seed"])
        write_nbest(lists, out / "nbest.txt", out / "references.txt")
    scorer, weights, _ = _mixture(cfg, corpora, vocab)
    best = rescore_nbest(lists, scorer, r["lm_scale"], r["insertion_penalty"])
    base = acoustic_best(lists)
    lines = ["utt_id\thyp_index\tscore\twords"]
    lines += [f"{b.utt_id}\t{b.index}\t{b.score!r}\t{' '.join(b.words)}" for b in best]
    (out / "rescored.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    def summary(res):
        w = results_wer(lists, res)
        return {"wer": w.rate, "substitutions": w.substitutions, "insertions": w.insertions,
                "deletions": w.deletions, "reference_words": w.ref_length}

    _write_json(out / "wer.json", {"acoustic_1best": summary(base), "rescored": summary(best),
                                   "weights": weights, "lm_scale": r["lm_scale"],
                                   "insertion_penalty": r["insertion_penalty"],
                                   "utterances": len(best)})


def cmd_snr(cfg, out):
    if not cfg["eval"]["checkpoint"]:
        raise ConfigError("eval.checkpoint: required for snr")
    ck = _load_ckpt(cfg["eval"]["checkpoint"], "eval.checkpoint")
    try:
        report = snr_report(ck.model)
    except ValueError as exc:
        raise DataError(f"eval.checkpoint: {exc}") from None
    write_snr_table(report, out / "snr.tsv")
    _write_json(out / "snr.json", {"medians": report.medians,
                                   "overall_median": report.overall_median})


def cmd_gradcheck(cfg, out):
    g = cfg["gradcheck"]
    entries = run_suite(g["seed"])
    lines = ["check\ttensor\trel_error\tchecked\tpassed"]
    lines += [f"{e.check}\t{e.tensor}\t{e.rel_error!r}\t{e.checked}\t{int(e.passed(g['tolerance']))}"
              for e in entries]
    (out / "gradcheck.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    failed = [e for e in entries if not e.passed(g["tolerance"])]
    if failed:
        worst = max(failed, key=lambda e: e.rel_error)
        raise NumericalError(f"{len(failed)} gradient checks failed; worst {worst.check}/"
                             f"{worst.tensor} rel. error {worst.rel_error:.3e}")
    print(f"all {len(entries)} gradient checks passed")


COMMANDS = {
    "prep": cmd_prep, "train": cmd_train, "nas-search": cmd_nas_search, "ppl": cmd_ppl,
    "interp": cmd_interp, "rescore": cmd_rescore, "snr": cmd_snr, "gradcheck": cmd_gradcheck,
}


def build_parser():
    p = argparse.ArgumentParser(prog="bayeslm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key, e.g. train.lr=0.02")
    p.add_argument("--output-dir", help="directory for all outputs (overrides output_dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.output_dir:
            overrides.append(f"output_dir={args.output_dir}")
        cfg = resolve_config(args.config, overrides)
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out / "config.resolved.yaml")
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorpusError, ArpaParseError, NBestError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
