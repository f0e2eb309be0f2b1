"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from tsa import autograd as ag
from tsa.data import LabeledRecord, SentimentLabel

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def central_difference(f, x, h=1e-5):
    """Numerical gradient of the scalar function ``f`` at array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def make_record(text, target, sentence="positive", targeted=None, rid="r", start=None):
    start = text.index(target) if start is None else start
    return LabeledRecord(
        id=rid,
        text=text,
        target=target,
        target_start=start,
        target_end=start + len(target),
        sentence_sentiment=SentimentLabel.parse(sentence),
        targeted_sentiment=SentimentLabel.parse(targeted or sentence),
    )


# ---------------------------------------------------------------- gradient probes
#
# Each case returns (inputs, forward) where ``inputs`` are leaf tensors and
# ``forward()`` rebuilds the graph from their current data.  A random linear
# readout turns any output into a scalar loss.


def _leaf(rng, *shape, scale=1.0):
    return ag.Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _distinct(rng, *shape):
    # well separated values keep max-pool away from ties
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(np.float64) * 0.5 + rng.uniform(0, 0.1, n)
    return ag.Tensor(vals.reshape(shape), requires_grad=True)


def _case_add(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    return [a, b], lambda: a + b


def _case_sub(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 3, 1)
    return [a, b], lambda: a - b


def _case_mul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 1, 4)
    return [a, b], lambda: a * b


def _case_neg(rng):
    a = _leaf(rng, 5)
    return [a], lambda: -a


def _case_gelu(rng):
    a = _leaf(rng, 4, 4, scale=2.0)
    return [a], lambda: ag.gelu(a)


def _case_dropout(rng):
    a = _leaf(rng, 6, 5)
    seed = int(rng.integers(1 << 30))
    return [a], lambda: ag.dropout(a, 0.3, np.random.default_rng(seed))


def _case_reshape(rng):
    a = _leaf(rng, 2, 6)
    return [a], lambda: ag.reshape(a, (3, 4))


def _case_transpose(rng):
    a = _leaf(rng, 2, 3, 4)
    return [a], lambda: ag.transpose(a, (1, 2, 0))


def _case_matmul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5)
    return [a, b], lambda: ag.matmul(a, b)


def _case_matmul_batched(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 3)
    return [a, b], lambda: ag.matmul(a, b)


def _case_linear(rng):
    x, w, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    return [x, w, b], lambda: ag.linear(x, w, b)


def _case_softmax(rng):
    a = _leaf(rng, 3, 5, scale=2.0)
    return [a], lambda: ag.softmax(a, axis=-1)


def _case_layer_norm(rng):
    x, g, b = _leaf(rng, 4, 6), _leaf(rng, 6), _leaf(rng, 6)
    return [x, g, b], lambda: ag.layer_norm(x, g, b)


def _case_embedding(rng):
    w = _leaf(rng, 7, 4)
    ids = rng.integers(0, 7, size=(2, 5))
    return [w], lambda: ag.embedding(w, ids)


def _case_select_rows(rng):
    h = _leaf(rng, 3, 5, 4)
    pos = rng.integers(0, 5, size=3)
    return [h], lambda: ag.select_rows(h, pos)


def _case_masked_max_pool(rng):
    h = _distinct(rng, 6, 5)
    first = int(rng.integers(0, 4))
    last = int(rng.integers(first, 6))
    return [h], lambda: ag.masked_max_pool(h, (first, last))


def _case_span_max_pool(rng):
    h = _distinct(rng, 2, 5, 4)
    firsts = rng.integers(0, 3, size=2)
    lasts = firsts + rng.integers(0, 3, size=2)
    return [h], lambda: ag.span_max_pool(h, firsts, lasts)


def _case_sum_all(rng):
    a = _leaf(rng, 3, 4)
    return [a], lambda: ag.sum_all(a)


def _case_mean_all(rng):
    a = _leaf(rng, 3, 4)
    return [a], lambda: ag.mean_all(a)


def _case_cross_entropy(rng):
    z = _leaf(rng, 3, scale=2.0)
    gold = int(rng.integers(3))
    w = rng.uniform(0.5, 2.0, 3)
    return [z], lambda: ag.weighted_cross_entropy(z, gold, w)


def _case_cross_entropy_batched(rng):
    z = _leaf(rng, 5, 3, scale=2.0)
    gold = rng.integers(0, 3, size=5)
    w = rng.uniform(0.5, 2.0, 3)
    return [z], lambda: ag.weighted_cross_entropy(z, gold, w)


OP_CASES = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "neg": _case_neg,
    "gelu": _case_gelu,
    "dropout": _case_dropout,
    "reshape": _case_reshape,
    "transpose": _case_transpose,
    "matmul": _case_matmul,
    "matmul_batched": _case_matmul_batched,
    "linear": _case_linear,
    "softmax": _case_softmax,
    "layer_norm": _case_layer_norm,
    "embedding": _case_embedding,
    "select_rows": _case_select_rows,
    "masked_max_pool": _case_masked_max_pool,
    "span_max_pool": _case_span_max_pool,
    "sum_all": _case_sum_all,
    "mean_all": _case_mean_all,
    "weighted_cross_entropy": _case_cross_entropy,
    "weighted_cross_entropy_batched": _case_cross_entropy_batched,
}


def gradient_check(inputs, forward, rng):
    """Worst relative error between backprop and central differences over ``inputs``."""
    readout = rng.normal(size=forward().shape)

    def scalar():
        return float((forward().data * readout).sum())

    for t in inputs:
        t.zero_grad()
    ag.backward(ag.sum_all(ag.mul(forward(), readout)))
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = central_difference(scalar, t.data)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def op_gradient_errors(name, probes=20, seed=0):
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(probes):
        inputs, forward = OP_CASES[name](rng)
        errors.append(gradient_check(inputs, forward, rng))
    return errors


# ---------------------------------------------------------------- encoding invariants

_ALPHABET = list("abcçdegğıioöprsştuüz") + ["q"]  # "q" never reaches the vocabulary


def random_word(rng, alphabet=_ALPHABET):
    return "".join(rng.choice(alphabet, size=int(rng.integers(1, 7))))


def random_encoding_case(rng, vocab):
    """A random cleaned text, target span and max_len that fits the target."""
    from tsa.tokenizer import tokenize

    words = [random_word(rng) for _ in range(int(rng.integers(1, 25)))]
    first = int(rng.integers(len(words)))
    last = min(len(words), first + int(rng.integers(1, 4)))
    text = " ".join(words)
    start = sum(len(w) + 1 for w in words[:first])
    end = start + len(" ".join(words[first:last]))
    marked = bool(rng.integers(2))
    need = len(tokenize(text[start:end], vocab)) + 2 + (2 if marked else 0)
    max_len = need + int(rng.integers(0, 20))
    return text, (start, end), max_len, marked


def encoding_violations(ex, text, span, vocab, max_len, marked):
    """Every broken EncodedExample invariant, as a list of messages."""
    from tsa.tokenizer import CLS_ID, PAD_ID, SEP_ID, TAR_ID, detokenize, tokenize

    bad = []
    ids, mask = ex.ids, ex.attention_mask
    if ids.shape != (max_len,) or mask.shape != (max_len,):
        bad.append("length")
        return bad
    if not np.array_equal(mask == 1, ids != PAD_ID) or not set(np.unique(mask)) <= {0, 1}:
        bad.append("mask/pad")
    n = int(mask.sum())
    if n and not np.all(mask[:n] == 1):
        bad.append("padding not trailing")
    if ids[0] != CLS_ID or ids[n - 1] != SEP_ID:
        bad.append("cls/sep")
    n_markers = int((ids == TAR_ID).sum())
    first, last = ex.target_range
    if not 0 < first <= last < n - 1:
        bad.append("range bounds")
        return bad
    if marked:
        if n_markers != 2 or ids[first] != TAR_ID or ids[last] != TAR_ID:
            bad.append("markers")
        if ex.first_marker_pos != first:
            bad.append("first marker")
        inner = ids[first + 1:last]
    else:
        if n_markers != 0 or ex.first_marker_pos is not None:
            bad.append("markers")
        inner = ids[first:last + 1]
    want = tokenize(text[span[0]:span[1]], vocab)
    got = [vocab.token(int(i)) for i in inner]
    if got != want or detokenize(got) != detokenize(want):
        bad.append("target round trip")
    # kept context is a contiguous window of the full tokenization
    left = tokenize(text[:span[0]], vocab)
    right = tokenize(text[span[1]:], vocab)
    kept_left = [vocab.token(int(i)) for i in ids[1:first]]
    kept_right = [vocab.token(int(i)) for i in ids[last + 1:n - 1]]
    if kept_left != left[len(left) - len(kept_left):] or kept_right != right[:len(kept_right)]:
        bad.append("context window")
    return bad


# ---------------------------------------------------------------- whole-model gradients


def tiny_model(variant, seed=0, dropout=0.1, scale=0.5):
    """A 2-layer, hidden-8 model with weights large enough for clear gradients."""
    from tsa.encoder import EncoderConfig
    from tsa.models import build_model

    cfg = EncoderConfig(vocab_size=20, hidden_size=8, num_layers=2, num_heads=2, ffn_size=16,
                        max_len=9, dropout_rate=dropout, seed=seed)
    model = build_model(variant, cfg)
    rng = np.random.default_rng(seed + 1000)
    for _, t in model.params.items():
        t.data = t.data + rng.normal(0.0, scale, t.shape)
    return model


def tiny_batch(model, rng, batch=3):
    """Random ids with pads, marker positions consistent with the model's wiring."""
    from tsa.tokenizer import CLS_ID, PAD_ID, SEP_ID, TAR_ID

    t = model.config.max_len
    ids = np.full((batch, t), PAD_ID)
    firsts, lasts = [], []
    for b in range(batch):
        n = int(rng.integers(6, t + 1))
        row = rng.integers(5, model.config.vocab_size, size=n)
        row[0], row[-1] = CLS_ID, SEP_ID
        # markers at first and last with at least one token between them
        first = int(rng.integers(1, n - 3))
        last = int(rng.integers(first + 2, n - 1))
        if model.marked:
            row[first], row[last] = TAR_ID, TAR_ID
        ids[b, :n] = row
        firsts.append(first)
        lasts.append(last)
    mask = (ids != PAD_ID).astype(np.int64)
    gold = rng.integers(0, 3, size=batch)
    return ids, mask, np.array(firsts), np.array(lasts), gold


def model_gradient_error(variant, seed=0, probes=None):
    """Relative error of backprop against central differences for a full model loss.

    ``probes`` random parameter coordinates are checked; ``None`` checks all.
    """
    model = tiny_model(variant, seed)
    rng = np.random.default_rng(seed)
    ids, mask, firsts, lasts, gold = tiny_batch(model, rng)
    weights = rng.uniform(0.5, 2.0, 3)
    dropout_seed = int(rng.integers(1 << 30))

    def loss():
        logits = model.logits(ids, mask, firsts, lasts, train_mode=True,
                              rng=np.random.default_rng(dropout_seed))
        return ag.weighted_cross_entropy(logits, gold, weights)

    model.params.zero_grad()
    ag.backward(loss())
    coords = [(name, i) for name, t in model.params.items() for i in range(t.size)]
    if probes is not None:
        pick = rng.choice(len(coords), size=min(probes, len(coords)), replace=False)
        coords = [coords[i] for i in sorted(pick)]
    analytic, numeric = [], []
    for name, i in coords:
        t = model.params[name]
        flat = t.data.reshape(-1)
        analytic.append(0.0 if t.grad is None else t.grad.reshape(-1)[i])
        old = flat[i]
        flat[i] = old + 1e-5
        up = loss().item()
        flat[i] = old - 1e-5
        down = loss().item()
        flat[i] = old
        numeric.append((up - down) / 2e-5)
    return relative_error(analytic, numeric), len(coords)


# ---------------------------------------------------------------- metric oracles


def brute_macro_f1(gold, pred, classes=(0, 1, 2)):
    """Macro-F1 straight from the label vectors, without a confusion matrix."""
    scores = []
    for c in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return sum(scores) / len(scores)


def brute_kappa(a, b, classes=(0, 1, 2)):
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    p_e = sum((list(a).count(c) / n) * (list(b).count(c) / n) for c in classes)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1 - p_e)
