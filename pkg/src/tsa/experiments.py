"""Synthetic targeted-sentiment corpus, benchmark runner and result tables."""

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import LABELS, SentimentLabel, LabeledRecord, clean_record
from .encoder import EncoderConfig
from .metrics import confusion_matrix, divergent_subset, macro_f1
from .models import PAPER_NAMES, ModelVariant, build_model, predict_batch
from .tokenizer import build_vocab
from .training import TrainConfig, train

log = logging.getLogger(__name__)

TARGETS = ("whatsapp", "cocacola", "turkcell", "netflix", "spotify", "trendyol")
# words describing the target; one sits right after it and sets the targeted label
CUES = {
    SentimentLabel.POSITIVE: ("harika", "güzel", "süper", "mükemmel"),
    SentimentLabel.NEGATIVE: ("çöktü", "berbat", "rezalet", "kötü"),
    SentimentLabel.NEUTRAL: ("normal", "sıradan", "standart", "olağan"),
}
# the writer's own mood; sets the sentence label
MOOD_CUES = {
    SentimentLabel.POSITIVE: ("rahatladım", "sevindim", "mutluyum", "keyiflendim"),
    SentimentLabel.NEGATIVE: ("üzüldüm", "sinirlendim", "bıktım", "yoruldum"),
    SentimentLabel.NEUTRAL: ("bakalım", "neyse", "bilmem", "öylesine"),
}
CUE_CLASS = {
    word: label for table in (CUES, MOOD_CUES) for label, words in table.items() for word in words
}
# class mix of the targeted labels: positive, negative, neutral
TARGET_MIX = (0.19, 0.58, 0.23)

_CONSONANTS = "bcdfgklmnprstvyz"
_VOWELS = "aeıioöuü"


@dataclass(frozen=True)
class SyntheticConfig:
    n_examples: int = 3000
    divergence_rate: float = 0.3
    vocab_size: int = 200
    min_length: int = 6
    max_length: int = 12
    seed: int = 0
    noise_rate: float = 0.2
    shared_cues: bool = False

    def __post_init__(self):
        if self.n_examples < 1:
            raise ValueError("n_examples must be positive")
        if not 0.0 <= self.divergence_rate <= 1.0:
            raise ValueError("divergence_rate must lie in [0, 1]")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if not 5 <= self.min_length <= self.max_length:
            raise ValueError("need 5 <= min_length <= max_length")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")


def filler_lexicon(size, seed=0):
    """``size`` distinct pseudo-words built from Turkish-looking syllables."""
    rng = np.random.default_rng(seed)
    reserved = set(TARGETS) | set(CUE_CLASS)
    words, seen = [], set()
    while len(words) < size:
        n_syll = int(rng.integers(2, 4))
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(n_syll)
        )
        if word not in seen and word not in reserved:
            seen.add(word)
            words.append(word)
    return words


def generate_synthetic(cfg):
    """Generate records whose two labels are carried by two cue words.

    The word right after the target describes it and sets the targeted
    label; a mood word at least two words away sets the sentence label.
    With probability ``divergence_rate`` the two cues belong to different
    classes.  With ``shared_cues`` both cues come from the same word list,
    so only their position tells them apart.  Some records carry a mention,
    a URL or a hashtagged target, which preprocessing removes again.
    """
    global_cues = CUES if cfg.shared_cues else MOOD_CUES
    rng = np.random.default_rng(cfg.seed)
    fillers = filler_lexicon(cfg.vocab_size)
    records = []
    for n in range(cfg.n_examples):
        length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        targeted = SentimentLabel(int(rng.choice(3, p=TARGET_MIX)))
        if rng.random() < cfg.divergence_rate:
            others = [c for c in LABELS if c != targeted]
            sentence = others[int(rng.integers(2))]
        else:
            sentence = targeted
        p = int(rng.integers(0, length - 1))
        slots = [q for q in range(length) if q not in (p - 1, p, p + 1, p + 2)]
        q = slots[int(rng.integers(len(slots)))]

        words = [fillers[int(rng.integers(len(fillers)))] for _ in range(length)]
        target = TARGETS[int(rng.integers(len(TARGETS)))]
        if rng.random() < cfg.noise_rate:
            target = "#" + target
        words[p] = target
        words[p + 1] = CUES[targeted][int(rng.integers(4))]
        words[q] = global_cues[sentence][int(rng.integers(4))]
        if rng.random() < cfg.noise_rate:
            words.insert(0, f"@user{int(rng.integers(1000))}")
            p += 1
        if rng.random() < cfg.noise_rate:
            words.append(f"http://t.co/{int(rng.integers(16**6)):06x}")

        start = sum(len(w) + 1 for w in words[:p])
        records.append(LabeledRecord(
            id=f"syn-{cfg.seed}-{n:05d}",
            text=" ".join(words),
            target=target,
            target_start=start,
            target_end=start + len(target),
            sentence_sentiment=sentence,
            targeted_sentiment=targeted,
        ))
    return records


def oracle_labels(record):
    """Read both labels straight off the cue words: ``(sentence, targeted)``."""
    clean, (start, end) = clean_record(record)
    words = clean.split()
    target_idx = clean[:start].count(" ")
    local = target_idx + 1
    cues = [i for i, w in enumerate(words) if w in CUE_CLASS]
    (other,) = [i for i in cues if i != local]
    return CUE_CLASS[words[other]], CUE_CLASS[words[local]]


# ---------------------------------------------------------------- benchmark


@dataclass
class VariantResult:
    variant: str
    f1_full: float | None
    f1_divergent: float | None
    n_test: int
    n_divergent: int
    epochs: int = 0
    error: str | None = None


@dataclass
class BenchmarkReport:
    results: list
    seeds: dict
    config_digest: str
    histories: dict = field(default_factory=dict)

    def result(self, variant):
        name = ModelVariant.parse(variant).value
        for r in self.results:
            if r.variant == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {
            "config_digest": self.config_digest,
            "seeds": self.seeds,
            "results": [asdict(r) for r in self.results],
        }


def config_digest(*configs):
    payload = json.dumps([asdict(c) for c in configs], sort_keys=True, default=list)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def targeted_f1(model, records):
    examples = [model.encode_record(r, label_kind="targeted") for r in records]
    pred = predict_batch(model, examples).argmax(axis=1)
    return macro_f1(confusion_matrix([ex.label for ex in examples], pred))


def run_benchmark(data, variants, train_cfg, encoder_cfg=None, vocab=None, vocab_size=1000):
    """Train every variant from scratch and score it on targeted labels.

    ``data`` is ``(train, val, test)``.  Each variant learns from its own
    label source (sentence labels for the baseline) but all are scored
    against targeted labels on the full test set and on its divergent
    subset.  A variant that fails is reported with its error.
    """
    train_set, val_set, test_set = data
    if vocab is None:
        vocab = build_vocab([clean_record(r)[0] for r in train_set], vocab_size)
    if encoder_cfg is None:
        encoder_cfg = EncoderConfig(vocab_size=len(vocab), seed=train_cfg.seed)
    divergent = divergent_subset(test_set)
    results, histories = [], {}
    for variant in variants:
        variant = ModelVariant.parse(variant)
        log.info("training %s", variant.value)
        try:
            model = build_model(variant, encoder_cfg, vocab)
            model, history = train(model, train_set, val_set, train_cfg)
            full = targeted_f1(model, test_set)
            div = targeted_f1(model, divergent) if divergent else None
            results.append(VariantResult(variant.value, full, div, len(test_set), len(divergent),
                                         epochs=len(history)))
            histories[variant.value] = history
        except Exception as exc:  # a failed variant is reported, not fatal
            log.exception("variant %s failed", variant.value)
            results.append(VariantResult(variant.value, None, None, len(test_set), len(divergent),
                                         error=f"{type(exc).__name__}: {exc}"))
    return BenchmarkReport(
        results=results,
        seeds={"train": train_cfg.seed, "encoder": encoder_cfg.seed},
        config_digest=config_digest(train_cfg, encoder_cfg),
        histories=histories,
    )


# ---------------------------------------------------------------- reports

REPORT_FORMATS = ("markdown", "csv")


def _cell(value):
    return "failed" if value is None else f"{value:.3f}"


def render_report(report, fmt="markdown"):
    if fmt == "markdown":
        lines = ["| Model | F1 (full) | F1 (divergent) |", "|---|---|---|"]
        for r in report.results:
            name = PAPER_NAMES[ModelVariant.parse(r.variant)]
            lines.append(f"| {name} | {_cell(r.f1_full)} | {_cell(r.f1_divergent)} |")
        lines += [
            "",
            f"Macro-F1 against targeted labels; divergent subset n={report.results[0].n_divergent} "
            f"of {report.results[0].n_test} test records. "
            f"Seeds {json.dumps(report.seeds, sort_keys=True)}, config {report.config_digest}.",
        ]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "f1_full", "f1_divergent"])
        for r in report.results:
            writer.writerow([
                r.variant,
                "" if r.f1_full is None else repr(r.f1_full),
                "" if r.f1_divergent is None else repr(r.f1_divergent),
            ])
        return buf.getvalue()
    raise ValueError(f"report format must be one of {REPORT_FORMATS}, got {fmt!r}")


def emit_report(report, path, fmt="markdown"):
    text = render_report(report, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_csv_report(path):
    """Parse a CSV report back into ``{variant: (f1_full, f1_divergent)}``."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["model"]] = tuple(
                float(row[k]) if row[k] else None for k in ("f1_full", "f1_divergent")
            )
    return out
