"""Class-weighted training with AdamW, warmup/decay schedule and early stopping."""

import json
import logging
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import autograd as ag
from .encoder import EncoderConfig, Parameters
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    EmptyClass,
    NonFiniteLoss,
    ShapeMismatch,
    VersionMismatch,
)
from .metrics import confusion_matrix, macro_f1
from .models import Model, model_parameter_shapes, predict_batch
from .tokenizer import Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 24
    base_lr: float = 1e-3
    weight_decay: float = 0.1
    warmup_steps: int = 300
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.base_lr < 0:
            raise ConfigError("base_lr must be >= 0")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("betas must be two numbers in [0, 1)")


# ---------------------------------------------------------------- config files


def _coerce(value, default):
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.split(","))
    if isinstance(default, bool):
        if value.lower() not in ("true", "false", "1", "0"):
            raise ValueError(value)
        return value.lower() in ("true", "1")
    if isinstance(default, int):
        number = float(value)
        if not number.is_integer():
            raise ValueError(value)
        return int(number)
    return float(value)


def parse_key_values(text, defaults):
    """Parse ``key = value`` lines against ``defaults``; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _coerce(value, defaults[key])
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key!r}") from None
    return values


def config_defaults(cls):
    return {f.name: f.default for f in fields(cls)}


def load_train_config(path):
    with open(path, encoding="utf-8") as fh:
        return TrainConfig(**parse_key_values(fh.read(), config_defaults(TrainConfig)))


def format_config(cfg):
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- loss weights and schedule


def class_weights(counts):
    """Weights ``N / (K * n_c)``: inversely proportional to class frequency."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise EmptyClass(f"every class needs at least one example, got counts {counts.tolist()}")
    return counts.sum() / (len(counts) * counts)


def lr_schedule(step, cfg, total_steps):
    """Linear warmup to ``base_lr`` over ``warmup_steps``, then linear decay to 0."""
    if step >= total_steps:
        return 0.0
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    return cfg.base_lr * (total_steps - step) / (total_steps - cfg.warmup_steps)


# ---------------------------------------------------------------- AdamW


def decays(name, shape):
    """Weight matrices are decayed; biases and layer-norm gains/shifts are not."""
    return len(shape) >= 2


def parameter_groups(params):
    """Split parameter names into (decayed, exempt)."""
    decayed, exempt = [], []
    for name, t in params.items():
        (decayed if decays(name, t.shape) else exempt).append(name)
    return decayed, exempt


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params, grads, state, lr, cfg, decay=None):
    """One AdamW update of the arrays in ``params`` (updated in place).

    ``decay`` is the set of names receiving weight decay; by default every
    array with two or more dimensions.
    """
    beta1, beta2 = cfg.betas
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {theta.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        decayed = decays(name, theta.shape) if decay is None else name in decay
        if decayed and cfg.weight_decay:
            update = update + cfg.weight_decay * theta
        theta -= lr * update
    return params, state


# ---------------------------------------------------------------- training loop


@dataclass
class EncodedSet:
    ids: np.ndarray
    mask: np.ndarray
    firsts: np.ndarray
    lasts: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_examples(cls, examples):
        return cls(
            ids=np.stack([ex.ids for ex in examples]),
            mask=np.stack([ex.attention_mask for ex in examples]),
            firsts=np.array([ex.target_range[0] for ex in examples], dtype=np.int64),
            lasts=np.array([ex.target_range[1] for ex in examples], dtype=np.int64),
            labels=np.array([ex.label for ex in examples], dtype=np.int64),
            lengths=np.array([ex.length for ex in examples], dtype=np.int64),
        )

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        width = int(self.lengths[idx].max())
        return (self.ids[idx, :width], self.mask[idx, :width], self.firsts[idx],
                self.lasts[idx], self.labels[idx])


def evaluate_model(model, examples):
    """Macro-F1 of ``model`` on encoded examples against their stored labels."""
    probs = predict_batch(model, examples)
    pred = probs.argmax(axis=1)
    return macro_f1(confusion_matrix([ex.label for ex in examples], pred))


def train(model, train_set, val_set, cfg, progress=None):
    """Train ``model`` in place and return ``(model, history)``.

    Labels come from the model's own label source.  After every epoch the
    validation macro-F1 is measured; the best parameters are restored at
    the end, and training stops once ``cfg.patience`` epochs pass without
    improvement.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    train_examples = [model.encode_record(r) for r in train_set]
    val_examples = [model.encode_record(r) for r in val_set]
    data = EncodedSet.from_examples(train_examples)
    weights = class_weights(np.bincount(data.labels, minlength=3))

    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(data) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.max_epochs
    state = OptimizerState()
    arrays = {name: t.data for name, t in model.params.items()}

    history = []
    best_f1, best_state, stale, step = -1.0, None, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(data))
        losses = []
        for lo in range(0, len(data), cfg.batch_size):
            ids, mask, firsts, lasts, labels = data.batch(order[lo:lo + cfg.batch_size])
            model.params.zero_grad()
            logits = model.logits(ids, mask, firsts, lasts, train_mode=True, rng=rng)
            loss = ag.weighted_cross_entropy(logits, labels, weights)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"epoch {epoch}, step {step}: loss is {loss.item()}")
            ag.backward(loss)
            step += 1
            grads = {name: t.grad for name, t in model.params.items() if t.grad is not None}
            adamw_step(arrays, grads, state, lr_schedule(step, cfg, total_steps), cfg)
            losses.append(loss.item())
        val_f1 = evaluate_model(model, val_examples)
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "val_macro_f1": val_f1}
        history.append(record)
        log.info("epoch %d loss %.4f val macro-F1 %.4f", epoch, record["loss"], val_f1)
        if progress is not None:
            progress(record)
        if val_f1 > best_f1:
            best_f1, best_state, stale = val_f1, model.params.state(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.load_state(best_state)
    return model, history


# ---------------------------------------------------------------- checkpoints

MAGIC = b"TSACKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sBI")


def save_checkpoint(model, path):
    """Write header (magic, version, JSON config) then little-endian float64 weights.

    Layout: 8-byte magic, 1-byte format version, 4-byte little-endian header
    length, UTF-8 JSON header, then every parameter in header order as
    row-major float64.
    """
    params = [(name, t.data) for name, t in model.params.items()]
    header = {
        "variant": model.variant.value,
        "encoder_config": model.config.to_dict(),
        "vocab": list(model.vocab.tokens) if model.vocab is not None else None,
        "parameters": [[name, list(arr.shape)] for name, arr in params],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in params:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise CorruptCheckpoint(f"{path}: file too short")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        config = EncoderConfig(**header["encoder_config"])
        specs = [(name, tuple(shape)) for name, shape in header["parameters"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: bad header ({exc})") from None
    if specs != model_parameter_shapes(config):
        raise CorruptCheckpoint(f"{path}: parameter layout does not match its config")
    offset = start + hlen
    expected = sum(int(np.prod(shape)) for _, shape in specs) * 8
    if len(raw) - offset != expected:
        raise CorruptCheckpoint(f"{path}: payload is {len(raw) - offset} bytes, expected {expected}")
    arrays = {}
    for name, shape in specs:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += n * 8
    vocab = Vocabulary(header["vocab"]) if header.get("vocab") else None
    return Model(header["variant"], config, Parameters(arrays), vocab)
