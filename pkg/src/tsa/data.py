"""Labelled records, tweet cleaning with offset tracking, JSONL I/O and splitting."""

import enum
import json
import math
import re
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateSplit, InvariantViolation, ParseError, SpanLost


class SentimentLabel(enum.IntEnum):
    POSITIVE = 0
    NEGATIVE = 1
    NEUTRAL = 2

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            try:
                return cls(int(value))
            except ValueError:
                raise ValueError(f"unknown sentiment label {value!r}") from None
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown sentiment label {value!r}") from None

    def __str__(self):
        return self.name.lower()


LABELS = tuple(SentimentLabel)
LABEL_KINDS = ("sentence", "targeted")


@dataclass(frozen=True)
class LabeledRecord:
    id: str
    text: str
    target: str
    target_start: int
    target_end: int
    sentence_sentiment: SentimentLabel
    targeted_sentiment: SentimentLabel

    def __post_init__(self):
        check_record(self)

    def label(self, kind):
        if kind == "sentence":
            return self.sentence_sentiment
        if kind == "targeted":
            return self.targeted_sentiment
        raise ValueError(f"label kind must be one of {LABEL_KINDS}, got {kind!r}")

    @property
    def divergent(self):
        return self.sentence_sentiment != self.targeted_sentiment

    def to_json(self):
        d = asdict(self)
        d["sentence_sentiment"] = str(self.sentence_sentiment)
        d["targeted_sentiment"] = str(self.targeted_sentiment)
        return d


def check_record(rec, line=None):
    """Raise :class:`InvariantViolation` if ``rec`` breaks a record invariant."""
    if not isinstance(rec.id, str):
        raise InvariantViolation(line, "id", "must be a string")
    if not isinstance(rec.text, str):
        raise InvariantViolation(line, "text", "must be a string")
    if not isinstance(rec.target, str):
        raise InvariantViolation(line, "target", "must be a string")
    for name in ("target_start", "target_end"):
        value = getattr(rec, name)
        if not isinstance(value, int) or isinstance(value, bool):
            raise InvariantViolation(line, name, "must be an integer")
    if not 0 <= rec.target_start < rec.target_end:
        raise InvariantViolation(line, "target_start", "need 0 <= target_start < target_end")
    if rec.target_end > len(rec.text):
        raise InvariantViolation(line, "target_end", f"exceeds text length {len(rec.text)}")
    if rec.text[rec.target_start:rec.target_end] != rec.target:
        raise InvariantViolation(line, "target", "does not match text slice")
    for name in ("sentence_sentiment", "targeted_sentiment"):
        if not isinstance(getattr(rec, name), SentimentLabel):
            raise InvariantViolation(line, name, "must be a SentimentLabel")


def record_from_json(obj, line=None):
    required = ("id", "text", "target", "target_start", "target_end",
                "sentence_sentiment", "targeted_sentiment")
    if not isinstance(obj, dict):
        raise ParseError(line, "expected a JSON object")
    for key in required:
        if key not in obj:
            raise InvariantViolation(line, key, "missing")
    labels = {}
    for key in ("sentence_sentiment", "targeted_sentiment"):
        try:
            labels[key] = SentimentLabel.parse(obj[key])
        except ValueError as exc:
            raise InvariantViolation(line, key, str(exc)) from None
    fields = {k: obj[k] for k in required[:5]}
    try:
        return LabeledRecord(**fields, **labels)
    except InvariantViolation as exc:
        raise InvariantViolation(line, exc.field, exc.detail) from None


def load_dataset(path):
    """Read a JSONL file into validated records; blank lines are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, exc.msg) from None
            records.append(record_from_json(obj, lineno))
    return records


def save_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------- preprocessing

_URL_PREFIXES = ("http://", "https://", "www.")
_TOKEN = re.compile(r"\S+")


def _dropped(token):
    return token.startswith("@") or token.lower().startswith(_URL_PREFIXES)


def preprocess(raw):
    """Clean a tweet and map every clean character back to the raw text.

    URL and @-mention tokens are removed, ``#`` characters are stripped
    (the hashtag word stays) and whitespace is collapsed to single spaces.
    Returns ``(clean, offsets)`` where ``offsets[i]`` is the raw index that
    produced ``clean[i]``.  A space joining two kept tokens maps to the
    whitespace right after the earlier token.
    """
    pieces = []
    for m in _TOKEN.finditer(raw):
        token = m.group()
        if _dropped(token):
            continue
        kept = [(ch, m.start() + i) for i, ch in enumerate(token) if ch != "#"]
        if not kept or _dropped("".join(ch for ch, _ in kept)):
            continue
        pieces.append((kept, m.end()))
    chars, offsets = [], []
    for n, (kept, _) in enumerate(pieces):
        if n:
            chars.append(" ")
            offsets.append(pieces[n - 1][1])
        for ch, pos in kept:
            chars.append(ch)
            offsets.append(pos)
    return "".join(chars), offsets


def remap_span(record, offsets):
    """Locate the record's target in the cleaned text described by ``offsets``.

    Raises :class:`SpanLost` when preprocessing removed or altered the target.
    """
    raw = record.text
    # a clean position is a joining space exactly when its raw source is whitespace
    inside = [
        i for i, pos in enumerate(offsets)
        if record.target_start <= pos < record.target_end and not raw[pos].isspace()
    ]
    expected = preprocess(record.target)[0]
    if not inside or not expected:
        raise SpanLost(f"record {record.id!r}: target {record.target!r} removed by preprocessing")
    start, end = inside[0], inside[-1] + 1
    got = "".join(" " if raw[p].isspace() else raw[p] for p in offsets[start:end])
    if got != expected:
        raise SpanLost(f"record {record.id!r}: target {record.target!r} became {got!r}")
    return start, end


def clean_record(record):
    """Return ``(clean_text, (start, end))`` for a record."""
    clean, offsets = preprocess(record.text)
    return clean, remap_span(record, offsets)


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.65
    test_frac: float = 0.20
    val_frac: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fracs = self.fractions
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ValueError(f"every split fraction must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")

    @property
    def fractions(self):
        return (self.train_frac, self.test_frac, self.val_frac)


def apportion(n, fractions):
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier slot."""
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def class_distribution(records, label_kind="targeted"):
    counts = [0, 0, 0]
    for rec in records:
        counts[rec.label(label_kind)] += 1
    return tuple(counts)


def stratified_split(records, spec, label_kind="targeted"):
    """Split into (train, test, val), preserving per-class proportions.

    Each class is shuffled with a generator seeded by ``spec.seed`` and cut
    into largest-remainder shares; subsets keep the input order.
    """
    rng = np.random.default_rng(spec.seed)
    by_class = {label: [] for label in LABELS}
    for i, rec in enumerate(records):
        by_class[rec.label(label_kind)].append(i)
    if any(not members for members in by_class.values()):
        raise DegenerateSplit("every class needs at least one record")
    assigned = ([], [], [])
    for label in LABELS:
        members = np.asarray(by_class[label])
        members = members[rng.permutation(len(members))]
        lo = 0
        for subset, count in zip(assigned, apportion(len(members), spec.fractions)):
            subset.extend(members[lo:lo + count].tolist())
            lo += count
    if any(not subset for subset in assigned):
        raise DegenerateSplit(
            f"split of {len(records)} records leaves an empty subset "
            f"(sizes {[len(s) for s in assigned]})"
        )
    return tuple([records[i] for i in sorted(subset)] for subset in assigned)
