"""WordPiece-style vocabulary, tokenization and target-aware encoding."""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import SizeTooSmall, TargetTooLong

PAD, UNK, CLS, SEP, TAR = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[TAR]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, TAR)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, TAR_ID = range(5)
CONTINUATION = "##"


class Vocabulary:
    """Bijective token <-> id table with the five special tokens at ids 0-4."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise ValueError(f"first five tokens must be {SPECIAL_TOKENS}, got {tokens[:5]}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid token {tok!r} at id {i}")
            index[tok] = i
        self.tokens = tuple(tokens)
        self._index = index

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token):
        return self._index.get(token, UNK_ID)

    def token(self, idx):
        return self.tokens[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def build_vocab(corpus, size):
    """Build a vocabulary of at most ``size`` entries from whitespace words.

    Every corpus character is always kept, as a word-initial piece and,
    where it occurs inside a word, as a ``##`` piece, so no corpus word
    tokenizes to ``[UNK]``.  The remaining slots go to whole words and
    ``##`` suffix pieces ranked by corpus frequency, ties broken by first
    appearance.
    """
    words = Counter()
    for text in corpus:
        words.update(text.split())
    chars = []
    seen = set()
    for word in words:
        for i, ch in enumerate(word):
            for piece in (ch, CONTINUATION + ch) if i else (ch,):
                if piece not in seen:
                    seen.add(piece)
                    chars.append(piece)
    if size < len(SPECIAL_TOKENS) + len(chars):
        raise SizeTooSmall(
            f"size {size} cannot hold {len(SPECIAL_TOKENS)} special tokens "
            f"and {len(chars)} character pieces"
        )
    tokens = list(SPECIAL_TOKENS) + chars
    taken = set(tokens)
    pieces = Counter()
    first_seen = {}
    for word, count in words.items():
        for cand in [word] + [CONTINUATION + word[i:] for i in range(1, len(word))]:
            pieces[cand] += count
            first_seen.setdefault(cand, len(first_seen))
    ranked = sorted(pieces, key=lambda p: (-pieces[p], first_seen[p]))
    for piece in ranked:
        if len(tokens) >= size:
            break
        if piece not in taken:
            tokens.append(piece)
            taken.add(piece)
    return Vocabulary(tokens)


def tokenize_word(word, vocab):
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        while end > start:
            cand = word[start:end] if start == 0 else CONTINUATION + word[start:end]
            # text never yields special ids, even if it spells one out
            if cand in vocab and cand not in SPECIAL_TOKENS:
                pieces.append(cand)
                break
            end -= 1
        else:
            return [UNK]
        start = end
    return pieces


def tokenize(text, vocab):
    """Greedy longest-match subword tokenization of each whitespace word."""
    out = []
    for word in text.split():
        out.extend(tokenize_word(word, vocab))
    return out


def detokenize(tokens):
    """Join subword pieces back into words, dropping special tokens."""
    words = []
    for tok in tokens:
        if tok in SPECIAL_TOKENS and tok != UNK:
            continue
        if tok.startswith(CONTINUATION) and words:
            words[-1] += tok[len(CONTINUATION):]
        else:
            words.append(tok)
    return " ".join(words)


@dataclass(frozen=True)
class EncodedExample:
    ids: np.ndarray
    attention_mask: np.ndarray
    target_range: tuple
    first_marker_pos: int | None
    marked: bool
    label: int

    @property
    def length(self):
        """Number of non-pad positions."""
        return int(self.attention_mask.sum())


def encode(text, span, vocab, max_len, marked, label=0):
    """Encode cleaned ``text`` with its target ``span`` into a fixed-length example.

    Layout: ``[CLS] left [TAR] target [TAR] right [SEP] [PAD]...`` (markers
    only when ``marked``).  Left, target and right are tokenized separately.
    When the sequence is too long, context is cut symmetrically around the
    target; target tokens are never dropped.
    """
    start, end = span
    target_tokens = tokenize(text[start:end], vocab)
    if not target_tokens:
        raise TargetTooLong(f"target {text[start:end]!r} produces no tokens")
    n_markers = 2 if marked else 0
    core = len(target_tokens) + n_markers + 2
    if core > max_len:
        raise TargetTooLong(
            f"target needs {core} positions with specials, max_len is {max_len}"
        )
    left = tokenize(text[:start], vocab)
    right = tokenize(text[end:], vocab)
    keep_left, keep_right = _context_window(len(left), len(right), max_len - core)
    left = left[len(left) - keep_left:]
    right = right[:keep_right]

    block = [TAR] + target_tokens + [TAR] if marked else target_tokens
    tokens = [CLS] + left + block + right + [SEP]
    first = 1 + len(left)
    last = first + len(block) - 1

    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[:len(tokens)] = [TAR_ID if t == TAR else vocab.id(t) for t in tokens]
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:len(tokens)] = 1
    return EncodedExample(
        ids=ids,
        attention_mask=mask,
        target_range=(first, last),
        first_marker_pos=first if marked else None,
        marked=marked,
        label=int(label),
    )


def _context_window(n_left, n_right, budget):
    """How many left/right context tokens fit in ``budget``, centred on the target."""
    if n_left + n_right <= budget:
        return n_left, n_right
    half = budget // 2
    keep_left = min(n_left, half)
    keep_right = min(n_right, budget - keep_left)
    keep_left = min(n_left, budget - keep_right)
    return keep_left, keep_right
