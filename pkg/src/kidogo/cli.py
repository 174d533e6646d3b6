"""Single command-line entry point wiring every module.

Subcommands cover the whole pipeline: tok (train/encode/decode), corpus
(clean/dedup/stats/pack), instruct build, train, generate, eval run, bench
attention, carbon. Every run echoes its resolved configuration to the error
stream so outputs are reproducible from the log alone.

Exit codes: 0 success, 1 user or configuration error, 2 data error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

log = logging.getLogger("kidogo")

MODEL_CONFIG_ENV = "KIDOGO_MODEL_CONFIG"
TRAIN_CONFIG_ENV = "KIDOGO_TRAIN_CONFIG"


class Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; user errors are exit 1 here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> Parser:
    parser = Parser(prog="kidogo",
                    description="small multilingual language model toolkit")
    parser.add_argument("--seed", type=int, default=0,
                        help="global random seed")
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on module-internal parallelism")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=Parser)

    # tok ---------------------------------------------------------------
    tok_p = sub.add_parser("tok", help="tokenizer operations")
    tok_sub = tok_p.add_subparsers(dest="action", required=True,
                                   parser_class=Parser)
    t_train = tok_sub.add_parser("train", help="train a BPE tokenizer")
    t_train.add_argument("--input", required=True,
                         help="directory of UTF-8 text files (recursive)")
    t_train.add_argument("--vocab-size", type=int, required=True)
    t_train.add_argument("--out", required=True, help="output .bpe file")
    t_train.set_defaults(func=cmd_tok_train)
    t_enc = tok_sub.add_parser("encode", help="text to token ids")
    t_enc.add_argument("--model", required=True)
    t_enc.add_argument("--text", help="literal text (default: read stdin)")
    t_enc.add_argument("--input", help="file to encode")
    t_enc.add_argument("--out", help="write ids here instead of stdout")
    t_enc.set_defaults(func=cmd_tok_encode)
    t_dec = tok_sub.add_parser("decode", help="token ids to text")
    t_dec.add_argument("--model", required=True)
    t_dec.add_argument("--ids", help="space-separated ids (default: stdin)")
    t_dec.add_argument("--out")
    t_dec.set_defaults(func=cmd_tok_decode)

    # corpus ------------------------------------------------------------
    corpus_p = sub.add_parser("corpus", help="monolingual corpus pipeline")
    corpus_sub = corpus_p.add_subparsers(dest="action", required=True,
                                         parser_class=Parser)
    for name, fn in (("clean", cmd_corpus_clean), ("dedup", cmd_corpus_dedup)):
        p = corpus_sub.add_parser(name)
        p.add_argument("--input", required=True,
                       help="directory-per-language input root")
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)
    c_stats = corpus_sub.add_parser("stats")
    c_stats.add_argument("--input", required=True)
    c_stats.add_argument("--tokenizer", required=True)
    c_stats.add_argument("--out", help="also write the table to this file")
    c_stats.set_defaults(func=cmd_corpus_stats)
    c_pack = corpus_sub.add_parser("pack")
    c_pack.add_argument("--input", required=True)
    c_pack.add_argument("--tokenizer", required=True)
    c_pack.add_argument("--seq-len", type=int, required=True)
    c_pack.add_argument("--out", required=True, help="shard output directory")
    c_pack.set_defaults(func=cmd_corpus_pack)

    # instruct ----------------------------------------------------------
    ins_p = sub.add_parser("instruct", help="instruction dataset builder")
    ins_sub = ins_p.add_subparsers(dest="action", required=True,
                                   parser_class=Parser)
    i_build = ins_sub.add_parser("build")
    i_build.add_argument("--task", required=True,
                         choices=["mt", "sentiment", "topic", "ner", "pos", "qa"])
    i_build.add_argument("--lang", required=True,
                         choices=["hau", "yor", "swa", "zul", "xho"])
    i_build.add_argument("--mode", default="native",
                         choices=["native", "english", "multiple"])
    i_build.add_argument("--input", required=True,
                         help="tsv (mt), csv (sentiment/topic), conll "
                              "(ner/pos) or jsonl (qa) source file")
    i_build.add_argument("--out", required=True, help="output .jsonl")
    i_build.add_argument("--ratios", default="0.8,0.1,0.1",
                         help="train,dev,test split ratios")
    i_build.set_defaults(func=cmd_instruct_build)

    # train / generate ----------------------------------------------------
    tr = sub.add_parser("train", help="pretrain on packed shards")
    tr.add_argument("--model-config",
                    default=os.environ.get(MODEL_CONFIG_ENV),
                    help=f"key=value file (or ${MODEL_CONFIG_ENV})")
    tr.add_argument("--train-config",
                    default=os.environ.get(TRAIN_CONFIG_ENV),
                    help=f"key=value file (or ${TRAIN_CONFIG_ENV})")
    tr.add_argument("--data", required=True, help="directory of .shard files")
    tr.add_argument("--out", required=True, help="run directory")
    tr.add_argument("--resume", help="checkpoint to resume from")
    tr.set_defaults(func=cmd_train)

    gen = sub.add_parser("generate", help="greedy continuation of a prompt")
    gen.add_argument("--model", required=True, help="checkpoint file")
    gen.add_argument("--tokenizer", required=True)
    gen.add_argument("--prompt", required=True)
    gen.add_argument("--max-new-tokens", type=int, default=64)
    gen.set_defaults(func=cmd_generate)

    # eval ----------------------------------------------------------------
    ev_p = sub.add_parser("eval", help="zero-shot evaluation")
    ev_sub = ev_p.add_subparsers(dest="action", required=True,
                                 parser_class=Parser)
    e_run = ev_sub.add_parser("run")
    e_run.add_argument("--task", required=True,
                       choices=["mt", "sentiment", "topic", "choices"])
    e_run.add_argument("--mode", default="native",
                       choices=["native", "english", "multiple"])
    e_run.add_argument("--model", required=True, help="checkpoint file")
    e_run.add_argument("--tokenizer", required=True)
    e_run.add_argument("--data", required=True,
                       help="records .jsonl (or choices .jsonl)")
    e_run.add_argument("--direction", choices=["to_eng", "from_eng"],
                       help="mt only, needed for multiple mode")
    e_run.add_argument("--max-new-tokens", type=int, default=64)
    e_run.add_argument("--name", default=None, help="model name in the report")
    e_run.add_argument("--out", help="write the report CSV here")
    e_run.set_defaults(func=cmd_eval_run)

    # bench / carbon -------------------------------------------------------
    bench_p = sub.add_parser("bench", help="micro-benchmarks")
    bench_sub = bench_p.add_subparsers(dest="action", required=True,
                                       parser_class=Parser)
    b_attn = bench_sub.add_parser("attention")
    b_attn.add_argument("--seq", type=int, required=True)
    b_attn.add_argument("--tile", type=int, default=64)
    b_attn.add_argument("--heads", type=int, default=4)
    b_attn.add_argument("--head-dim", type=int, default=64)
    b_attn.add_argument("--repeats", type=int, default=3)
    b_attn.set_defaults(func=cmd_bench_attention)

    carbon_p = sub.add_parser("carbon", help="training footprint estimate")
    carbon_p.add_argument("--gpus", type=float, required=True)
    carbon_p.add_argument("--hours", type=float, required=True)
    carbon_p.add_argument("--power-kw", type=float, required=True)
    carbon_p.add_argument("--pue", type=float, default=1.0)
    carbon_p.add_argument("--intensity", type=float, required=True,
                          help="grid intensity in kgCO2e per kWh")
    carbon_p.set_defaults(func=cmd_carbon)
    return parser


# --- command implementations ---------------------------------------------


def _iter_text_files(root):
    for dirpath, _, files in os.walk(root):
        for fname in sorted(files):
            if fname.endswith(".txt"):
                yield os.path.join(dirpath, fname)


def cmd_tok_train(args):
    from . import tokenizer as tok

    def docs():
        for path in _iter_text_files(args.input):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if line:
                        yield line

    model = tok.train_bpe(docs(), args.vocab_size)
    tok.save(model, args.out)
    log.info("trained tokenizer: vocab_size=%d merges=%d -> %s",
             model.vocab_size, len(model.merges), args.out)
    return 0


def cmd_tok_encode(args):
    from . import tokenizer as tok
    model = tok.load(args.model)
    if args.text is not None:
        text = args.text
    elif args.input:
        with open(args.input, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = sys.stdin.read()
    ids = tok.encode(model, text)
    out = " ".join(str(i) for i in ids)
    _write_or_print(out, args.out)
    return 0


def cmd_tok_decode(args):
    from . import tokenizer as tok
    model = tok.load(args.model)
    raw = args.ids if args.ids is not None else sys.stdin.read()
    ids = [int(x) for x in raw.split()]
    _write_or_print(tok.decode(model, ids), args.out)
    return 0


def _write_or_print(text, path):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _clean_stream(root):
    from . import corpus
    for doc in corpus.read_language_dir(root):
        cleaned = corpus.clean(doc)
        if cleaned is not None:
            yield cleaned


def _write_language_dir(docs, out_root, fname):
    os.makedirs(out_root, exist_ok=True)
    handles = {}
    counts = {}
    try:
        for doc in docs:
            if doc.language not in handles:
                lang_dir = os.path.join(out_root, doc.language)
                os.makedirs(lang_dir, exist_ok=True)
                handles[doc.language] = open(os.path.join(lang_dir, fname),
                                             "w", encoding="utf-8")
            handles[doc.language].write(doc.text + "\n")
            counts[doc.language] = counts.get(doc.language, 0) + 1
    finally:
        for fh in handles.values():
            fh.close()
    return counts


def cmd_corpus_clean(args):
    counts = _write_language_dir(_clean_stream(args.input), args.out,
                                 "clean.txt")
    log.info("kept documents per language: %s", counts)
    return 0


def cmd_corpus_dedup(args):
    from . import corpus
    counts = _write_language_dir(corpus.dedup(_clean_stream(args.input)),
                                 args.out, "dedup.txt")
    log.info("unique documents per language: %s", counts)
    return 0


def cmd_corpus_stats(args):
    from . import corpus, tokenizer as tok
    model = tok.load(args.tokenizer)
    stats = corpus.compute_stats(_clean_stream(args.input), model)
    table = stats.render_table()
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    return 0


def cmd_corpus_pack(args):
    from . import corpus, tokenizer as tok
    model = tok.load(args.tokenizer)
    os.makedirs(args.out, exist_ok=True)
    by_lang: dict[str, list] = {}
    for doc in _clean_stream(args.input):
        by_lang.setdefault(doc.language, []).append(
            tok.encode(model, doc.text))
    for lang, streams in sorted(by_lang.items()):
        ids, mask = corpus.pack(streams, args.seq_len)
        path = os.path.join(args.out, f"{lang}.shard")
        corpus.save_shard(path, ids, mask)
        log.info("%s: %d rows of %d -> %s", lang, ids.shape[0], args.seq_len,
                 path)
    return 0


def cmd_instruct_build(args):
    from . import instruct as ins
    ratios = tuple(float(x) for x in args.ratios.split(","))
    if args.task == "mt":
        records = ins.build_mt(ins.read_mt_tsv(args.input), args.lang,
                               args.mode, seed=args.seed)
    elif args.task in ("sentiment", "topic"):
        records = ins.build_classification(
            args.task, ins.read_labeled_csv(args.input), args.lang,
            args.mode, seed=args.seed)
    elif args.task in ("ner", "pos"):
        records = ins.build_tagging(args.task, ins.read_conll(args.input),
                                    args.lang, args.mode, seed=args.seed)
    else:
        records = ins.build_qa(ins.read_qa_jsonl(args.input), args.lang,
                               args.mode, seed=args.seed)
    records, counts = ins.merge_and_split(records, ratios, seed=args.seed)
    ins.write_jsonl(records, args.out)
    print(ins.render_counts_table(counts))
    log.info("wrote %d records -> %s", len(records), args.out)
    return 0


def cmd_train(args):
    from . import corpus, trainer
    from .model import ModelConfig
    if not args.model_config or not args.train_config:
        raise_user_error("--model-config and --train-config are required "
                         f"(or set ${MODEL_CONFIG_ENV}/${TRAIN_CONFIG_ENV})")
    model_cfg = ModelConfig.from_file(args.model_config)
    train_cfg = trainer.TrainConfig.from_file(args.train_config)
    ids, mask = corpus.load_shard_dir(args.data)
    result = trainer.train(model_cfg, train_cfg, ids, mask, out_dir=args.out,
                           resume_from=args.resume)
    final_step, final_loss, _ = result.trace[-1]
    print(f"final step {final_step}: loss {final_loss:.4f}")
    log.info("checkpoints: %s", result.checkpoints)
    return 0


def raise_user_error(message):
    from .errors import ConfigInvalid
    raise ConfigInvalid(message)


def _load_lm(ckpt_path, tokenizer_path):
    from . import tokenizer as tok
    from .checkpoint import load_checkpoint
    from .evalharness import TransformerLM
    params, _, _ = load_checkpoint(ckpt_path)
    return TransformerLM(params, tok.load(tokenizer_path))


def cmd_generate(args):
    from .evalharness import GenerationParams, generate
    lm = _load_lm(args.model, args.tokenizer)
    out = generate(lm, args.prompt,
                   GenerationParams(max_new_tokens=args.max_new_tokens))
    print(out)
    return 0


def cmd_eval_run(args):
    import csv as csv_mod

    from . import evalharness as ev, instruct as ins
    lm = _load_lm(args.model, args.tokenizer)
    name = args.name or os.path.basename(args.model)
    if args.task == "choices":
        task = ev.EvalTask(kind="multiple_choice", task="qa",
                           prompt_mode=args.mode)
        rows = ev.read_choices_jsonl(args.data)
    elif args.task == "mt":
        task = ev.EvalTask(kind="generation", task="mt",
                           prompt_mode=args.mode, direction=args.direction)
        rows = _records_for_task(args.data, "mt")
    else:
        task = ev.EvalTask(kind="classification", task=args.task,
                           prompt_mode=args.mode)
        rows = _records_for_task(args.data, args.task)
    reports = ev.evaluate(lm, task, rows, seed=args.seed, model_name=name,
                          gen_params=ev.GenerationParams(
                              max_new_tokens=args.max_new_tokens))
    for report in reports:
        print(report.render_table())
        print()
    if args.out:
        langs = reports[0].ordered_languages()
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv_mod.writer(fh)
            writer.writerow(["model", "metric"] + langs + ["AVG"])
            for report in reports:
                writer.writerow(
                    [report.model_name, report.metric]
                    + [f"{report.scores[l]:.6f}" for l in langs]
                    + [f"{report.average:.6f}"])
        log.info("report csv -> %s", args.out)
    return 0


def _records_for_task(path, task):
    from . import instruct as ins
    from .errors import CorpusMismatch
    records = ins.read_jsonl(path)
    mismatched = [r.task for r in records if r.task != task]
    if mismatched:
        raise CorpusMismatch(
            f"dataset {path} contains task {mismatched[0]!r} records but the "
            f"evaluation task is {task!r}")
    return records


def cmd_bench_attention(args):
    from . import attention
    rows = attention.benchmark(seq=args.seq, tile_size=args.tile,
                               n_heads=args.heads, head_dim=args.head_dim,
                               repeats=args.repeats, seed=args.seed)
    width = max(len(r["impl"]) for r in rows)
    print(f"{'impl':<{width}}  {'ms':>10}  {'score-buffer bytes':>18}")
    for r in rows:
        print(f"{r['impl']:<{width}}  {r['ms']:>10.3f}  "
              f"{r['score_buffer_bytes']:>18,}")
    if not attention.HAVE_COMPILED:
        log.info("compiled kernel unavailable; numpy fallback only")
    return 0


def cmd_carbon(args):
    from .trainer import CarbonQuery, energy_kwh, estimate_carbon
    query = CarbonQuery(gpu_count=args.gpus, wall_hours=args.hours,
                        device_power_kw=args.power_kw, pue=args.pue,
                        grid_intensity=args.intensity)
    kg = estimate_carbon(query)
    print(f"energy: {energy_kwh(query):.4f} kWh")
    print(f"emissions: {kg:.4f} kgCO2e")
    return 0


# --- entry point ----------------------------------------------------------


def main(argv=None) -> int:
    from .errors import KidogoError
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("resolved configuration: %s", resolved)
    np.random.seed(args.seed)
    try:
        return args.func(args) or 0
    except KidogoError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
