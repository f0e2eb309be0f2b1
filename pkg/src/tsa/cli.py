"""``tsa`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
Diagnostics go to stderr; results go to stdout or the ``--out`` files.
"""

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import fields, replace

from . import data as D
from .encoder import EncoderConfig
from .errors import ConfigError, CorruptCheckpoint, DataError, SpanLost, TSAError, VersionMismatch
from .experiments import (
    REPORT_FORMATS,
    BenchmarkReport,
    SyntheticConfig,
    VariantResult,
    generate_synthetic,
    render_report,
    run_benchmark,
)
from .metrics import cohens_kappa, divergent_subset, evaluate, load_predictions
from .models import ModelVariant, build_model, predict_batch
from .tokenizer import Vocabulary, build_vocab
from .training import (
    TrainConfig,
    config_defaults,
    load_checkpoint,
    load_train_config,
    parse_key_values,
    save_checkpoint,
    train,
)

log = logging.getLogger("tsa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
VARIANT_NAMES = [v.value for v in ModelVariant]
SYNTH_KEYS = ("n_examples", "divergence_rate", "vocab_size", "min_length", "max_length",
              "noise_rate", "shared_cues")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def records_jsonl(records):
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)


def require_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")


def parse_ratios(text):
    try:
        parts = [float(x) for x in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three fractions, got {text!r}")
        return D.SplitSpec(*parts)
    except ValueError as exc:
        raise UsageError(f"--ratios: {exc}") from None


def load_encoder_overrides(path):
    defaults = {f.name: f.default for f in fields(EncoderConfig) if f.name != "vocab_size"}
    if path is None:
        return {}
    require_file(path)
    with open(path, encoding="utf-8") as fh:
        return parse_key_values(fh.read(), defaults)


def load_benchmark_config(path):
    """TrainConfig keys plus synthetic-corpus keys; ``seed`` drives both."""
    defaults = config_defaults(TrainConfig)
    synth_defaults = config_defaults(SyntheticConfig)
    defaults.update({k: synth_defaults[k] for k in SYNTH_KEYS})
    values = {}
    if path is not None:
        require_file(path)
        with open(path, encoding="utf-8") as fh:
            values = parse_key_values(fh.read(), defaults)
    synth = {k: values.pop(k) for k in SYNTH_KEYS if k in values}
    train_cfg = TrainConfig(**values)
    try:
        synth_cfg = SyntheticConfig(seed=train_cfg.seed, **synth)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return train_cfg, synth_cfg


def report_from_dict(obj):
    return BenchmarkReport(
        results=[VariantResult(**r) for r in obj["results"]],
        seeds=obj["seeds"],
        config_digest=obj["config_digest"],
    )


# ---------------------------------------------------------------- subcommands


def cmd_preprocess(args):
    require_file(args.input)
    records = D.load_dataset(args.input)
    kept = []
    for rec in records:
        clean, offsets = D.preprocess(rec.text)
        try:
            start, end = D.remap_span(rec, offsets)
        except SpanLost as exc:
            log.warning("rejected: %s", exc)
            continue
        kept.append(replace(rec, text=clean, target=clean[start:end],
                            target_start=start, target_end=end))
    log.info("kept %d of %d records", len(kept), len(records))
    text = records_jsonl(kept)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_split(args):
    spec = parse_ratios(args.ratios)
    spec = replace(spec, seed=args.seed)
    require_file(args.input)
    records = D.load_dataset(args.input)
    parts = D.stratified_split(records, spec, args.stratify)
    for name, part in zip(("train", "test", "val"), parts):
        path = os.path.join(args.out_dir, f"{args.prefix}{name}.jsonl")
        write_atomic(path, records_jsonl(part))
        print(json.dumps({"subset": name, "path": path, "n": len(part),
                          "class_counts": D.class_distribution(part, args.stratify)}))
    return EXIT_OK


def cmd_build_vocab(args):
    for path in args.input:
        require_file(path)
    corpus = []
    for path in args.input:
        for rec in D.load_dataset(path):
            corpus.append(D.preprocess(rec.text)[0])
    vocab = build_vocab(corpus, args.size)
    write_atomic(args.out, "\n".join(vocab.tokens) + "\n")
    print(json.dumps({"path": args.out, "size": len(vocab)}))
    return EXIT_OK


def cmd_train(args):
    variant = ModelVariant.parse(args.variant)
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    overrides = load_encoder_overrides(args.encoder_config)
    for path in (args.train, args.val):
        require_file(path)
    if args.vocab:
        require_file(args.vocab)
    train_set = D.load_dataset(args.train)
    val_set = D.load_dataset(args.val)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = build_vocab([D.clean_record(r)[0] for r in train_set], args.vocab_size)
    overrides.setdefault("seed", cfg.seed)
    config = EncoderConfig(vocab_size=len(vocab), **overrides)
    model = build_model(variant, config, vocab)
    model, history = train(model, train_set, val_set, cfg)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    tmp = args.out + ".partial"
    save_checkpoint(model, tmp)
    os.replace(tmp, args.out)
    print(json.dumps({"checkpoint": args.out, "variant": variant.value, "history": history}))
    return EXIT_OK


def _load_model(path):
    require_file(path)
    model = load_checkpoint(path)
    if model.vocab is None:
        raise CorruptCheckpoint(f"{path}: checkpoint carries no vocabulary")
    return model


def cmd_eval(args):
    if args.pred_file:
        if args.ckpt or args.test:
            raise UsageError("--pred-file cannot be combined with --ckpt/--test")
        if args.subset != "full":
            raise UsageError("--pred-file carries no sentence labels; only --subset full works")
        require_file(args.pred_file)
        _, gold, pred = load_predictions(args.pred_file)
        report = evaluate(gold, pred, "full")
    else:
        if not (args.ckpt and args.test):
            raise UsageError("eval needs --ckpt and --test (or --pred-file)")
        require_file(args.test)
        model = _load_model(args.ckpt)
        records = D.load_dataset(args.test)
        if args.subset == "divergent":
            records = divergent_subset(records)
        examples = [model.encode_record(r, label_kind=args.labels) for r in records]
        pred = predict_batch(model, examples).argmax(axis=1)
        report = evaluate([ex.label for ex in examples], pred, args.subset)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        write_atomic(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args):
    require_file(args.input)
    model = _load_model(args.ckpt)
    records = D.load_dataset(args.input)
    examples = [model.encode_record(r, label_kind="targeted") for r in records]
    probs = predict_batch(model, examples)
    lines = []
    for rec, p in zip(records, probs):
        pred = D.SentimentLabel(int(p.argmax()))
        lines.append(json.dumps({
            "id": rec.id,
            "gold": str(rec.targeted_sentiment),
            "pred": str(pred),
            "probs": [float(x) for x in p],
        }, ensure_ascii=False) + "\n")
    text = "".join(lines)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _read_labels(path):
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key, value = str(obj["id"]), D.SentimentLabel.parse(obj["label"])
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise D.ParseError(lineno, f"{path}: {exc}") from None
            if key in labels:
                raise D.ParseError(lineno, f"{path}: duplicate id {key!r}")
            labels[key] = value
    return labels


def cmd_agreement(args):
    require_file(args.a)
    require_file(args.b)
    a, b = _read_labels(args.a), _read_labels(args.b)
    if set(a) != set(b):
        raise DataError(f"label files cover different ids ({len(set(a) ^ set(b))} unmatched)")
    ids = sorted(a)
    kappa = cohens_kappa([a[i] for i in ids], [b[i] for i in ids])
    observed = sum(a[i] == b[i] for i in ids) / len(ids)
    print(json.dumps({"kappa": kappa, "observed_agreement": observed, "n": len(ids)}))
    return EXIT_OK


def cmd_synth(args):
    try:
        cfg = SyntheticConfig(n_examples=args.n, divergence_rate=args.divergence,
                              vocab_size=args.vocab_size, min_length=args.min_length,
                              max_length=args.max_length, seed=args.seed,
                              shared_cues=args.shared_cues)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = records_jsonl(generate_synthetic(cfg))
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_benchmark(args):
    try:
        variants = list(ModelVariant) if args.variants == "all" else \
            [ModelVariant.parse(v) for v in args.variants.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_cfg, synth_cfg = load_benchmark_config(args.config)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
        synth_cfg = replace(synth_cfg, seed=args.seed)
    records = generate_synthetic(synth_cfg)
    train_set, test_set, val_set = D.stratified_split(
        records, D.SplitSpec(seed=synth_cfg.seed), "targeted")
    report = run_benchmark((train_set, val_set, test_set), variants, train_cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    write_atomic(os.path.join(args.out_dir, "report.md"), render_report(report, "markdown"))
    write_atomic(os.path.join(args.out_dir, "report.csv"), render_report(report, "csv"))
    write_atomic(os.path.join(args.out_dir, "results.json"),
                 json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(render_report(report, "markdown"))
    failed = [r.variant for r in report.results if r.error]
    if failed:
        log.error("variants failed: %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args):
    require_file(args.input)
    with open(args.input, encoding="utf-8") as fh:
        try:
            report = report_from_dict(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{args.input}: not a benchmark results file ({exc})") from None
    text = render_report(report, args.format)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = _Parser(prog="tsa", description="Targeted sentiment analysis toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="clean tweets and remap target spans")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="stratified train/test/val split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ratios", default="0.65,0.20,0.15", help="train,test,val fractions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratify", choices=D.LABEL_KINDS, default="targeted")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--prefix", default="", help="file name prefix for the three outputs")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("build-vocab", help="build a subword vocabulary from datasets")
    p.add_argument("--in", dest="input", required=True, nargs="+")
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--variant", required=True, choices=VARIANT_NAMES)
    p.add_argument("--config", help="training config file (key = value)")
    p.add_argument("--encoder-config", help="encoder config file (key = value)")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--vocab", help="vocabulary file; built from --train when omitted")
    p.add_argument("--vocab-size", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a prediction file")
    p.add_argument("--ckpt")
    p.add_argument("--test")
    p.add_argument("--pred-file", help="JSONL with id/gold/pred to score offline")
    p.add_argument("--subset", choices=("full", "divergent"), default="full")
    p.add_argument("--labels", choices=D.LABEL_KINDS, default="targeted")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predictions for a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("agreement", help="Cohen's kappa between two label files")
    p.add_argument("--a", required=True, help="JSONL with id and label")
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--divergence", type=float, default=0.3)
    p.add_argument("--vocab-size", type=int, default=200, help="number of filler words")
    p.add_argument("--min-length", type=int, default=6)
    p.add_argument("--max-length", type=int, default=12)
    p.add_argument("--shared-cues", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("benchmark", help="train and score all variants on synthetic data")
    p.add_argument("--config", help="TrainConfig keys plus synthetic corpus keys")
    p.add_argument("--variants", default="all", help="comma-separated variant names or 'all'")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="render benchmark results as a table")
    p.add_argument("--in", dest="input", required=True, help="results.json from benchmark")
    p.add_argument("--format", choices=REPORT_FORMATS, default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorruptCheckpoint, VersionMismatch, OSError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TSAError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())
