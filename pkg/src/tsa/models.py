"""Classification heads and the five model variants wired on the encoder."""

import enum
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .data import SentimentLabel, clean_record
from .encoder import Parameters, encode_batch, init_array, parameter_shapes
from .errors import NotMarked, RangeOutOfBounds
from .tokenizer import encode

NUM_CLASSES = 3


class ModelVariant(enum.Enum):
    BASELINE_SENTENCE = "baseline"
    T_BERT = "t-bert"
    T_BERT_MARKED = "t-bert-marked"
    T_BERT_MARKED_TS = "t-bert-marked-ts"
    T_BERT_MARKED_MP = "t-bert-marked-mp"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(name)
        except ValueError:
            try:
                return cls[str(name).upper().replace("-", "_")]
            except KeyError:
                choices = ", ".join(v.value for v in cls)
                raise ValueError(f"unknown variant {name!r}; choose from {choices}") from None

    def __str__(self):
        return self.value


class HeadKind(enum.Enum):
    CLS = "cls"
    MARKER = "marker"
    MAXPOOL = "maxpool"


@dataclass(frozen=True)
class Wiring:
    marked: bool
    head: HeadKind
    label_kind: str


WIRING = {
    ModelVariant.BASELINE_SENTENCE: Wiring(False, HeadKind.CLS, "sentence"),
    ModelVariant.T_BERT: Wiring(False, HeadKind.CLS, "targeted"),
    ModelVariant.T_BERT_MARKED: Wiring(True, HeadKind.CLS, "targeted"),
    ModelVariant.T_BERT_MARKED_TS: Wiring(True, HeadKind.MARKER, "targeted"),
    ModelVariant.T_BERT_MARKED_MP: Wiring(True, HeadKind.MAXPOOL, "targeted"),
}

PAPER_NAMES = {
    ModelVariant.BASELINE_SENTENCE: "Baseline",
    ModelVariant.T_BERT: "T-BERT",
    ModelVariant.T_BERT_MARKED: "T-BERT-marked",
    ModelVariant.T_BERT_MARKED_TS: "T-BERT-marked-TS",
    ModelVariant.T_BERT_MARKED_MP: "T-BERT-marked-MP",
}


@dataclass
class ClassifierHead:
    weight: ag.Tensor  # (hidden, 3)
    bias: ag.Tensor  # (3,)

    def __call__(self, h):
        return ag.linear(h, self.weight, self.bias)


def _row(hidden, pos):
    picked = ag.select_rows(ag.reshape(hidden, (1,) + hidden.shape), [pos])
    return ag.reshape(picked, (hidden.shape[1],))


def cls_head(hidden, head):
    """Logits from the first ([CLS]) row of a (T, H) hidden-state tensor."""
    return head(_row(hidden, 0))


def marker_head(hidden, first_marker_pos, head):
    """Logits from the row of the opening [TAR] marker."""
    if first_marker_pos is None:
        raise NotMarked("marker head needs an example encoded with [TAR] markers")
    if not 0 <= first_marker_pos < hidden.shape[0]:
        raise RangeOutOfBounds(f"marker position {first_marker_pos} outside {hidden.shape[0]} rows")
    return head(_row(hidden, first_marker_pos))


def maxpool_head(hidden, target_range, head):
    """Logits from the elementwise max over the target rows (markers included)."""
    return head(ag.masked_max_pool(hidden, target_range))


class Model:
    """Encoder, classifier head and vocabulary for one variant."""

    def __init__(self, variant, config, params, vocab=None):
        self.variant = ModelVariant.parse(variant)
        self.config = config
        self.params = params
        self.vocab = vocab

    @property
    def wiring(self):
        return WIRING[self.variant]

    @property
    def marked(self):
        return self.wiring.marked

    @property
    def label_kind(self):
        return self.wiring.label_kind

    @property
    def head(self):
        return ClassifierHead(self.params["head.weight"], self.params["head.bias"])

    def encode_record(self, record, label_kind=None):
        """Preprocess and encode ``record``, labelled with ``label_kind`` (default: own)."""
        if self.vocab is None:
            raise ValueError("model has no vocabulary attached")
        clean, span = clean_record(record)
        label = record.label(label_kind or self.label_kind)
        return encode(clean, span, self.vocab, self.config.max_len, self.marked, int(label))

    def logits(self, ids, mask, firsts, lasts, train_mode=False, rng=None):
        """Batched logits (B, 3); ``firsts``/``lasts`` are the target ranges."""
        hidden = encode_batch(ids, mask, self.params, self.config, train_mode, rng)
        kind = self.wiring.head
        if kind is HeadKind.CLS:
            pooled = ag.select_rows(hidden, np.zeros(len(ids), dtype=np.int64))
        elif kind is HeadKind.MARKER:
            pooled = ag.select_rows(hidden, firsts)
        else:
            pooled = ag.span_max_pool(hidden, firsts, lasts)
        return self.head(pooled)

    def example_logits(self, example):
        """Logits (3,) for one encoded example, via the single-example heads."""
        hidden = encode_batch(example.ids[None, :], example.attention_mask[None, :],
                              self.params, self.config)
        hidden = ag.reshape(hidden, hidden.shape[1:])
        kind = self.wiring.head
        if kind is HeadKind.CLS:
            return cls_head(hidden, self.head)
        if kind is HeadKind.MARKER:
            return marker_head(hidden, example.first_marker_pos, self.head)
        return maxpool_head(hidden, example.target_range, self.head)


def head_parameter_shapes(config):
    return [("head.weight", (config.hidden_size, NUM_CLASSES)), ("head.bias", (NUM_CLASSES,))]


def model_parameter_shapes(config):
    return parameter_shapes(config) + head_parameter_shapes(config)


def build_model(variant, config, vocab=None):
    """Initialise a model; encoder and head weights are drawn from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    arrays = OrderedDict(
        (name, init_array(rng, name, shape)) for name, shape in model_parameter_shapes(config)
    )
    return Model(variant, config, Parameters(arrays), vocab)


def softmax_probs(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_label(probs):
    """Index of the largest probability, ties to the lowest class index."""
    return SentimentLabel(int(np.argmax(probs)))


def predict(model, record):
    """Return ``(label, probs)`` for a raw record."""
    example = model.encode_record(record)
    probs = softmax_probs(model.example_logits(example).data)
    return argmax_label(probs), probs


def predict_batch(model, examples, batch_size=256):
    """Probabilities (N, 3) for a list of encoded examples, in eval mode."""
    out = []
    for lo in range(0, len(examples), batch_size):
        batch = collate(examples[lo:lo + batch_size])
        out.append(softmax_probs(model.logits(*batch[:4]).data))
    return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))


def collate(examples):
    """Stack examples into arrays trimmed to the longest non-pad length.

    Dropping trailing all-pad columns leaves every non-pad hidden state
    unchanged because pad keys receive zero attention.
    """
    length = max(ex.length for ex in examples)
    ids = np.stack([ex.ids[:length] for ex in examples])
    mask = np.stack([ex.attention_mask[:length] for ex in examples])
    firsts = np.array([ex.target_range[0] for ex in examples], dtype=np.int64)
    lasts = np.array([ex.target_range[1] for ex in examples], dtype=np.int64)
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return ids, mask, firsts, lasts, labels
