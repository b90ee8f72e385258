"""Command-line entry point: ``slilasr <verb> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
import argparse
import json
import os
import sys

from . import ablation as abl
from .asr import MissingCodeError, AsrModel, asr_train, evaluate_asr, utterance_codes
from .checkpoint import load_asr, load_lid, model_hash, save_asr, save_lid
from .config import ConfigError, RunConfig
from .corpus import CorpusSplit, build_design, corpus_paths, generate_corpus, read_corpus, write_corpus
from .gradcheck import format_report, run_suite
from .lid import LidModel, lid_train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="slilasr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--config", help="TOML run configuration (built-in defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", help=out_help)
        p.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        return p

    common(sub.add_parser("corpus-gen", help="generate the synthetic corpus"),
           "output directory for train/dev/test.feat")
    common(sub.add_parser("train-lid", help="train the stage-one language identifier"),
           "checkpoint path (default [lid].checkpoint)")
    p = common(sub.add_parser("train-asr", help="train the stage-two recogniser"),
               "checkpoint path (default [asr].checkpoint)")
    p.add_argument("--lid", help="stage-one checkpoint (default [lid].checkpoint)")
    p.add_argument("--oracle-codes", action="store_true", help="condition on true language labels")
    p = common(sub.add_parser("evaluate", help="CER report for a trained recogniser"),
               "also write the report as JSON to this path")
    p.add_argument("--asr", help="stage-two checkpoint (default [asr].checkpoint)")
    p.add_argument("--lid", help="stage-one checkpoint (default [lid].checkpoint)")
    p.add_argument("--split", choices=("dev", "test"), help="split to score (default [eval].split)")
    p.add_argument("--oracle-codes", action="store_true", help="condition on true language labels")
    common(sub.add_parser("ablate", help="train and score every conditioning variant over seeds"),
           "report path prefix (default [eval].report)")
    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--out", help="also write the report to this path")
    p.add_argument("--overwrite", action="store_true")
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _load_config(args, *sections):
    cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
    cfg.require(*sections)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _check_writable(paths, overwrite):
    if overwrite:
        return
    for p in paths:
        if os.path.exists(p):
            raise FileExistsError(f"{p} exists; pass --overwrite to replace it")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def load_corpus(cfg):
    """Feature files from ``[corpus].path`` if set, else the generated corpus."""
    ccfg = cfg.corpus_config()
    path = cfg["corpus"]["path"]
    if not path:
        return generate_corpus(ccfg)
    missing = [p for p in corpus_paths(path).values() if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError(f"corpus file(s) missing: {', '.join(missing)}")
    splits = read_corpus(path)
    design = build_design(ccfg)
    for name, utts in splits.items():
        for i, u in enumerate(utts):
            if u.features.shape[1] != ccfg.n_features:
                raise ConfigError(f"{name}.feat has {u.features.shape[1]} features per frame, "
                                  f"config says {ccfg.n_features}")
            if any(t < 2 or t >= len(design.vocab) for t in u.tokens):
                raise ConfigError(f"{name}.feat utterance {i} uses tokens outside the vocabulary")
    return CorpusSplit(splits["train"], splits["dev"], splits["test"], ccfg.seed, design)


def _jsonl_logger(lines):
    return lambda rec: lines.append(json.dumps(rec, sort_keys=True))


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def cmd_corpus_gen(args):
    cfg = _load_config(args, "corpus")
    out = args.out or cfg["corpus"]["path"] or "corpus"
    corpus = generate_corpus(cfg.corpus_config())
    write_corpus(out, corpus, overwrite=args.overwrite)
    counts = corpus.counts()
    print(f"wrote {out}: " + ", ".join(f"{s} {sum(c.values())}" for s, c in counts.items()))


def cmd_train_lid(args):
    cfg = _load_config(args, "corpus", "lid")
    out = args.out or cfg["lid"]["checkpoint"]
    log_path = out + ".log"
    _check_writable([out, log_path], args.overwrite)
    corpus = load_corpus(cfg)
    model = LidModel(cfg.lid_config())
    lines = []
    history = lid_train(model, corpus.train, corpus.dev, log=_jsonl_logger(lines))
    best = next(r for r in history if r["best"])
    lines.append(json.dumps({"best_epoch": best["epoch"], "dev_acc": best["dev_acc"],
                             "dev_ce": best["dev_ce"]}, sort_keys=True))
    save_lid(out, model, overwrite=True)
    _write_text(log_path, "\n".join(lines) + "\n")
    print(f"best epoch {best['epoch']}: dev accuracy {best['dev_acc']:.4f}; wrote {out}")


def _maybe_lid(path, needed):
    if not needed:
        return None
    if not path or not os.path.exists(path):
        raise MissingCodeError(
            f"this conditioning mode needs a stage-one checkpoint; none found at {path!r}")
    return load_lid(path)


def cmd_train_asr(args):
    cfg = _load_config(args, "corpus", "asr")
    acfg = cfg.asr_config()
    out = args.out or cfg["asr"]["checkpoint"]
    log_path = out + ".log"
    _check_writable([out, log_path], args.overwrite)
    needs_lid = acfg.conditioning.needs_code and not args.oracle_codes
    lid = _maybe_lid(args.lid or cfg["lid"]["checkpoint"], needs_lid)
    lid_hash = model_hash(lid) if lid is not None else None
    corpus = load_corpus(cfg)
    model = AsrModel(acfg)
    lines = []
    history = asr_train(model, corpus.train, corpus.dev, lid, acfg,
                        oracle_codes=args.oracle_codes, log=_jsonl_logger(lines))
    if lid is not None and model_hash(lid) != lid_hash:
        raise RuntimeError("stage-one parameters changed during stage-two training")
    best = next(r for r in history if r["best"])
    lines.append(json.dumps({"best_epoch": best["epoch"], "dev_cer": best["dev_cer"]},
                            sort_keys=True))
    save_asr(out, model, corpus.design.vocab.tokens, lid_hash, overwrite=True)
    _write_text(log_path, "\n".join(lines) + "\n")
    print(f"best epoch {best['epoch']}: dev CER {100 * best['dev_cer']:.2f}%; wrote {out}")


def format_cer_report(split, report):
    d = report.to_dict()
    lines = [f"split {split}: CER {100 * d['cer']:.2f}% "
             f"({sum(d['edits'].values())} edits / {sum(d['tokens'].values())} tokens)"]
    for lang in d["per_language"]:
        lines.append(f"  {lang:<6} CER {100 * d['per_language'][lang]:6.2f}%  "
                     f"{d['edits'][lang]:5d} edits / {d['tokens'][lang]:5d} tokens, "
                     f"{d['utterances'][lang]} utterances")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args):
    cfg = _load_config(args, "corpus")
    split = args.split or cfg["eval"]["split"]
    if args.out:
        _check_writable([args.out], args.overwrite)
    asr_path = args.asr or cfg["asr"]["checkpoint"]
    model, vocab, extra = load_asr(asr_path)
    corpus = load_corpus(cfg)
    if list(vocab) != list(corpus.design.vocab.tokens):
        raise ConfigError(f"vocabulary mismatch: checkpoint has {vocab}, "
                          f"corpus has {corpus.design.vocab.tokens}")
    needs_lid = model.config.conditioning.needs_code and not args.oracle_codes
    lid = _maybe_lid(args.lid or cfg["lid"]["checkpoint"], needs_lid)
    if lid is not None and extra.get("lid_hash") and model_hash(lid) != extra["lid_hash"]:
        raise RuntimeError("stale stage-one checkpoint: it is not the one this recogniser "
                           "was trained with")
    utts = corpus.split(split)
    report = evaluate_asr(model, utts, utterance_codes(model, utts, lid, args.oracle_codes))
    print(format_cer_report(split, report), end="")
    if args.out:
        _write_text(args.out, json.dumps({"split": split, **report.to_dict()},
                                         sort_keys=True, indent=2) + "\n")


def cmd_ablate(args):
    cfg = _load_config(args, "corpus", "lid", "asr")
    prefix = args.out or cfg["eval"]["report"]
    paths = {k: f"{prefix}.{k}" for k in ("tsv", "txt", "runs.tsv", "timing.tsv")}
    _check_writable(paths.values(), args.overwrite)
    corpus = load_corpus(cfg)
    result = abl.run_ablation(cfg, corpus, cfg["eval"]["configs"], cfg["eval"]["seeds"],
                              log=lambda m: print(m, flush=True))
    _write_text(paths["tsv"], abl.format_tsv(result))
    _write_text(paths["runs.tsv"], abl.format_runs_tsv(result))
    _write_text(paths["timing.tsv"], abl.format_timing_tsv(result))
    table = abl.format_table(result)
    _write_text(paths["txt"], table)
    print(table, end="")


def cmd_gradcheck(args):
    if args.out:
        _check_writable([args.out], args.overwrite)
    results = run_suite(instances=args.instances, seed=args.seed)
    text = format_report(results) + "\n"
    print(text, end="")
    if args.out:
        _write_text(args.out, text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {
    "corpus-gen": cmd_corpus_gen,
    "train-lid": cmd_train_lid,
    "train-asr": cmd_train_asr,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        code = COMMANDS[args.verb](args)
    except (ConfigError, FileExistsError, FileNotFoundError, MissingCodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
