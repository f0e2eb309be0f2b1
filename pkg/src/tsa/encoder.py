"""BERT-style transformer encoder built on :mod:`tsa.autograd`."""

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .errors import IdOutOfRange

INIT_STD = 0.02
# standard deviation of a unit normal truncated at +-2
_TRUNC2_STD = 0.8796256610342398
LN_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_size: int = 128
    max_len: int = 48
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the five special tokens")
        if self.hidden_size < 1 or self.num_layers < 1 or self.num_heads < 1 or self.ffn_size < 1:
            raise ValueError("encoder sizes must be positive")
        if self.hidden_size % self.num_heads:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.max_len < 4:
            raise ValueError("max_len must be at least 4")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


def parameter_shapes(config):
    """Parameter names and shapes in checkpoint order."""
    h, f = config.hidden_size, config.ffn_size
    shapes = [
        ("embeddings.token", (config.vocab_size, h)),
        ("embeddings.position", (config.max_len, h)),
    ]
    for i in range(config.num_layers):
        p = f"layers.{i}."
        for proj in ("query", "key", "value", "output"):
            shapes += [(p + f"attention.{proj}.weight", (h, h)), (p + f"attention.{proj}.bias", (h,))]
        shapes += [
            (p + "attention_norm.gamma", (h,)),
            (p + "attention_norm.beta", (h,)),
            (p + "ffn.in.weight", (h, f)),
            (p + "ffn.in.bias", (f,)),
            (p + "ffn.out.weight", (f, h)),
            (p + "ffn.out.bias", (h,)),
            (p + "ffn_norm.gamma", (h,)),
            (p + "ffn_norm.beta", (h,)),
        ]
    return shapes


def truncated_normal(rng, shape, std=INIT_STD):
    """Normal draws cut at two standard deviations, rescaled to keep ``std``."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * (std / _TRUNC2_STD)


def init_array(rng, name, shape):
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".bias", ".beta")):
        return np.zeros(shape)
    return truncated_normal(rng, shape)


class Parameters:
    """Ordered collection of named trainable tensors."""

    def __init__(self, arrays):
        self._tensors = OrderedDict(
            (name, ag.Tensor(np.array(arr, dtype=np.float64), requires_grad=True, name=name))
            for name, arr in arrays.items()
        )

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self):
        for t in self:
            t.grad = None

    def state(self):
        """Copies of all parameter arrays, keyed by name."""
        return OrderedDict((n, t.data.copy()) for n, t in self._tensors.items())

    def load_state(self, state):
        for name, t in self._tensors.items():
            arr = state[name]
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = np.array(arr, dtype=np.float64)


def init_params(config):
    """Fresh encoder parameters; identical for identical ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    return Parameters(
        OrderedDict((name, init_array(rng, name, shape)) for name, shape in parameter_shapes(config))
    )


def _split_heads(x, num_heads):
    b, t, h = x.shape
    x = ag.reshape(x, (b, t, num_heads, h // num_heads))
    return ag.transpose(x, (0, 2, 1, 3))


def encode_batch(ids, mask, params, config, train_mode=False, rng=None, attention_log=None):
    """Hidden states of shape (B, T, hidden) for id/mask arrays of shape (B, T).

    ``T`` may be shorter than ``config.max_len``.  When ``attention_log`` is
    a list, each layer appends its attention probabilities (B, heads, T, T).
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask)
    b, t = ids.shape
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= config.vocab_size:
        raise IdOutOfRange(f"token ids must lie in [0, {config.vocab_size})")
    if t > config.max_len:
        raise IdOutOfRange(f"sequence length {t} exceeds max_len {config.max_len}")
    rate = config.dropout_rate if train_mode else 0.0
    if rate and rng is None:
        rng = np.random.default_rng(config.seed)

    x = ag.embedding(params["embeddings.token"], ids)
    x = ag.add(x, ag.embedding(params["embeddings.position"], np.arange(t)))
    bias = np.where(mask.astype(bool), 0.0, -np.inf)[:, None, None, :]
    nh = config.num_heads
    scale = 1.0 / np.sqrt(config.hidden_size // nh)

    for i in range(config.num_layers):
        p = f"layers.{i}."
        q = _split_heads(ag.linear(x, params[p + "attention.query.weight"], params[p + "attention.query.bias"]), nh)
        k = _split_heads(ag.linear(x, params[p + "attention.key.weight"], params[p + "attention.key.bias"]), nh)
        v = _split_heads(ag.linear(x, params[p + "attention.value.weight"], params[p + "attention.value.bias"]), nh)
        scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), scale)
        probs = ag.softmax(ag.add(scores, bias), axis=-1)
        if attention_log is not None:
            attention_log.append(probs.data)
        probs = ag.dropout(probs, rate, rng)
        ctx = ag.transpose(ag.matmul(probs, v), (0, 2, 1, 3))
        ctx = ag.reshape(ctx, (b, t, config.hidden_size))
        attn = ag.linear(ctx, params[p + "attention.output.weight"], params[p + "attention.output.bias"])
        x = ag.layer_norm(ag.add(x, attn), params[p + "attention_norm.gamma"],
                          params[p + "attention_norm.beta"], LN_EPS)

        hidden = ag.gelu(ag.linear(x, params[p + "ffn.in.weight"], params[p + "ffn.in.bias"]))
        hidden = ag.dropout(hidden, rate, rng)
        ffn = ag.linear(hidden, params[p + "ffn.out.weight"], params[p + "ffn.out.bias"])
        x = ag.layer_norm(ag.add(x, ffn), params[p + "ffn_norm.gamma"],
                          params[p + "ffn_norm.beta"], LN_EPS)
    return x


def encoder_forward(example, params, config, train_mode=False, rng=None):
    """Hidden states (max_len, hidden) for a single encoded example."""
    out = encode_batch(example.ids[None, :], example.attention_mask[None, :], params, config,
                       train_mode=train_mode, rng=rng)
    return ag.reshape(out, out.shape[1:])
